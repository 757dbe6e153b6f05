#include "ntr/prompt.hpp"

#include <array>
#include <utility>

#include "ntr/error.hpp"

namespace ntr {

namespace {

constexpr std::string_view kNote =
    R"tmpl((note: the token may begin with a space, e.g., \boxed{ para} or \boxed{ =}; do not use \text{}))tmpl";

std::string v0() {
  return R"tmpl(Complete the given text under '### Context' by predicting the next token, and wrap it in '\boxed{}'. Please reason step by step to find the most probable next token as the final answer, and enclose it in \boxed{} )tmpl" +
         std::string(kNote) + ".\n### Context\n{prompt_content}";
}

std::string v1() {
  return R"tmpl(Complete the given text under ### Context by predicting the next token, and wrap it in \\boxed{}. Please reason step by step to find the most probable next token as the final prediction, and enclose it in \boxed{} )tmpl" +
         std::string(kNote) + ".\n### Context\n```{prompt_content}```.";
}

std::string v2() {
  return R"tmpl(You are a helpful assistant, good at predicting the next token for a given context.
Now, please complete the given text under ### Context by predicting the next token, and wrap it in \\boxed{}. Please reason step by step to find the most probable next token, and enclose it in \boxed{} (note: the token may begin with a space, e.g., \boxed{ para} or \boxed{ +=}; do not use \text{}).
### Context
```{prompt_content}```.)tmpl";
}

std::string v3() {
  return R"tmpl(Complete the given text under ### Context by predicting the next token, list multiple potential tokens and select the most probable one as the final answer. Wrap your final answer in \boxed{} )tmpl" +
         std::string(kNote) + ".\n### Context\n```{prompt_content}```";
}

std::string v4() {
  return R"tmpl(Complete the given text under ### Context by predicting the next token, and wrap it in \boxed{}. Please reason step by step to find the most probable next token as the final answer, and enclose it in \boxed{}.
Some examples:
### Context

```...(some omitted)...Matching calculations with 1990 valid combinations indicates the minimum value of \( b \) that fits all pre-requisites and restrictions for triangle formation and symmetry generates the efficient outcome:

\[
\boxed{1991^2}
\]

In```
The next token is \boxed{ this}
### Context

```...Thus $2^{A}=\left(2^{a}\right)^{2}\left(2^{3}\right)=```
The next token is \boxed{9}
### Context

```..., numerical exploration shows```
The next token is \boxed{:
}
Now, the context is:
### Context

```{prompt_content}```.)tmpl";
}

std::string v5() {
  return R"tmpl(Complete the given text under ### Context by predicting the next token, and wrap it in \boxed{}. Please reason step by step to find the most probable next token as the final answer, and enclose it in \boxed{} )tmpl" +
         std::string(kNote) + ".\n### Context\n```{prompt_content}```.";
}

std::string v6() {
  return R"tmpl(Complete the given text wrapped in ``` and ``` by predicting the next token, list multiple potential tokens and select the most probable one as the final prediction. Wrap your final prediction in \boxed{} )tmpl" +
         std::string(kNote) +
         ".\nThe context is: ```{prompt_content}```, now please predict the next token.";
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t count = 0;
  for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

// Length of the well-formed UTF-8 sequence starting at `i`, or 0.
std::size_t utf8_sequence_length(std::string_view s, std::size_t i) {
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  const auto in = [](unsigned char b, unsigned char lo, unsigned char hi) { return b >= lo && b <= hi; };
  const std::size_t left = s.size() - i;
  const unsigned char b0 = byte(i);
  if (b0 <= 0x7F) return 1;
  if (in(b0, 0xC2, 0xDF)) {
    return left >= 2 && in(byte(i + 1), 0x80, 0xBF) ? 2 : 0;
  }
  if (in(b0, 0xE0, 0xEF)) {
    if (left < 3) return 0;
    const unsigned char lo = b0 == 0xE0 ? 0xA0 : 0x80;
    const unsigned char hi = b0 == 0xED ? 0x9F : 0xBF;
    return in(byte(i + 1), lo, hi) && in(byte(i + 2), 0x80, 0xBF) ? 3 : 0;
  }
  if (in(b0, 0xF0, 0xF4)) {
    if (left < 4) return 0;
    const unsigned char lo = b0 == 0xF0 ? 0x90 : 0x80;
    const unsigned char hi = b0 == 0xF4 ? 0x8F : 0xBF;
    return in(byte(i + 1), lo, hi) && in(byte(i + 2), 0x80, 0xBF) && in(byte(i + 3), 0x80, 0xBF)
               ? 4
               : 0;
  }
  return 0;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string template_id, std::string body)
    : id_(std::move(template_id)), body_(std::move(body)) {
  if (count_occurrences(body_, kPromptPlaceholder) != 1) {
    throw Error(ErrorCode::configuration,
                "template '" + id_ + "' must contain {prompt_content} exactly once");
  }
}

PromptTemplate PromptTemplate::builtin(std::string_view template_id) {
  static const std::array<std::pair<std::string_view, std::string (*)()>, 7> table{{
      {"v0", v0}, {"v1", v1}, {"v2", v2}, {"v3", v3}, {"v4", v4}, {"v5", v5}, {"v6", v6},
  }};
  for (const auto& [id, make] : table) {
    if (id == template_id) {
      return PromptTemplate(std::string(id), make());
    }
  }
  throw Error(ErrorCode::configuration, "unknown prompt template '" + std::string(template_id) + "'");
}

std::vector<std::string> PromptTemplate::builtin_ids() {
  return {"v0", "v1", "v2", "v3", "v4", "v5", "v6"};
}

Utf8Decode decode_utf8_lossy(std::string_view bytes) {
  Utf8Decode out;
  out.text.reserve(bytes.size());
  std::size_t i = 0;
  while (i < bytes.size()) {
    const std::size_t n = utf8_sequence_length(bytes, i);
    if (n == 0) {
      out.text += "\xEF\xBF\xBD";
      out.lossy = true;
      ++i;
    } else {
      out.text.append(bytes.substr(i, n));
      i += n;
    }
  }
  return out;
}

RenderedPrompt render_prompt(const NextTokenInstance& instance, const PromptTemplate& tmpl) {
  auto decoded = decode_utf8_lossy(instance.context_bytes);
  const auto& body = tmpl.body();
  const auto pos = body.find(kPromptPlaceholder);
  RenderedPrompt out;
  out.text.reserve(body.size() + decoded.text.size());
  out.text.append(body, 0, pos);
  out.text += decoded.text;
  out.text.append(body, pos + kPromptPlaceholder.size());
  out.lossy = decoded.lossy;
  return out;
}

}  // namespace ntr
