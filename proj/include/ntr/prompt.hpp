#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ntr/corpus.hpp"

namespace ntr {

inline constexpr std::string_view kPromptPlaceholder = "{prompt_content}";

class PromptTemplate {
 public:
  // Throws Error(configuration) unless `body` contains the placeholder exactly once.
  PromptTemplate(std::string template_id, std::string body);

  // Built-in templates "v0" through "v6"; v0 is the one used for training.
  static PromptTemplate builtin(std::string_view template_id);
  static std::vector<std::string> builtin_ids();

  const std::string& id() const { return id_; }
  const std::string& body() const { return body_; }

 private:
  std::string id_;
  std::string body_;
};

struct Utf8Decode {
  std::string text;   // valid UTF-8
  bool lossy = false; // true when any byte was replaced by U+FFFD
};

// Each byte that does not begin a well-formed UTF-8 sequence is replaced by
// one U+FFFD; well-formed input is returned unchanged.
Utf8Decode decode_utf8_lossy(std::string_view bytes);

struct RenderedPrompt {
  std::string text;
  bool lossy = false;
};

RenderedPrompt render_prompt(const NextTokenInstance& instance, const PromptTemplate& tmpl);

}  // namespace ntr
