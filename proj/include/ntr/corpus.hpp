#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ntr/codec.hpp"

namespace ntr {

using TokenId = std::int32_t;

struct Document {
  std::string doc_id;
  Bytes text;
};

// Half-open byte range [begin, end) into the document text.
struct TokenSpan {
  TokenId token_id = 0;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const TokenSpan&) const = default;
};

struct TokenizedDocument {
  std::string doc_id;
  Bytes text;
  std::vector<TokenSpan> tokens;

  std::string_view token_bytes(std::size_t index) const {
    const auto& span = tokens.at(index);
    return std::string_view(text).substr(span.begin, span.size());
  }
};

/// Deterministic segmentation of bytes into vocabulary tokens with byte spans.
///
/// `encode` receives the owning document id so that tokenizations supplied
/// from outside (which are keyed by document) can be looked up; in-tree
/// tokenizers ignore it. Encoding a prefix of a document that ends on a token
/// boundary must reproduce the leading tokens of the full encoding.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::vector<TokenSpan> encode(std::string_view doc_id, std::string_view bytes) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual Bytes token_bytes(TokenId id) const = 0;
  // "byte", "vocab:<path>" or "external:<path>"; stored in checkpoints.
  virtual std::string spec() const = 0;
};

class ByteTokenizer final : public Tokenizer {
 public:
  std::vector<TokenSpan> encode(std::string_view doc_id, std::string_view bytes) const override;
  std::size_t vocab_size() const override { return 256; }
  Bytes token_bytes(TokenId id) const override;
  std::string spec() const override { return "byte"; }
};

// Greedy longest-match over a fixed vocabulary. Token ids are vocabulary
// indices. Bytes not covered by any entry are a structural error.
class VocabTokenizer final : public Tokenizer {
 public:
  explicit VocabTokenizer(std::vector<Bytes> vocabulary, std::string source = {});

  // JSON array of strings; id = array index.
  static VocabTokenizer from_file(const std::string& path);

  std::vector<TokenSpan> encode(std::string_view doc_id, std::string_view bytes) const override;
  std::size_t vocab_size() const override { return vocabulary_.size(); }
  Bytes token_bytes(TokenId id) const override;
  std::string spec() const override;

  const std::vector<Bytes>& vocabulary() const { return vocabulary_; }

 private:
  std::vector<Bytes> vocabulary_;
  std::map<Bytes, TokenId> lookup_;
  std::size_t max_len_ = 0;
  std::string source_;
};

// Tokenizations produced elsewhere, one JSON Lines record per document:
// {"doc_id", "token_ids": [...], "byte_spans": [[start, end), ...]}.
class ExternalTokenization final : public Tokenizer {
 public:
  static ExternalTokenization from_file(const std::string& path);

  void add(std::string doc_id, std::vector<TokenSpan> spans);

  // Returns the stored spans for `doc_id` that cover `bytes` exactly, which
  // must be a token-aligned prefix of the document.
  std::vector<TokenSpan> encode(std::string_view doc_id, std::string_view bytes) const override;
  std::size_t vocab_size() const override { return vocab_size_; }
  Bytes token_bytes(TokenId id) const override;
  std::string spec() const override { return "external:" + source_; }

  // Learns byte strings for ids from a document's spans.
  void observe(std::string_view text, const std::vector<TokenSpan>& spans);

 private:
  std::map<std::string, std::vector<TokenSpan>, std::less<>> docs_;
  std::map<TokenId, Bytes> id_bytes_;
  std::size_t vocab_size_ = 0;
  std::string source_;
};

// "byte", "vocab:<file>" or "external:<file>".
std::unique_ptr<Tokenizer> make_tokenizer(const std::string& spec);

// Checks contiguity, coverage and non-empty spans; throws Error(structural)
// naming the first offending span.
void validate_spans(const std::vector<TokenSpan>& spans, std::size_t text_size);

TokenizedDocument tokenize(const Document& document, const Tokenizer& tokenizer);

// Every regular file under `dir` (sorted by relative path) is one document.
std::vector<Document> load_corpus_dir(const std::string& dir);

struct NextTokenInstance {
  std::string doc_id;
  std::size_t t = 0;  // 1-based index of the target token
  Bytes context_bytes;
  Bytes completion_bytes;
  std::vector<std::size_t> boundaries;  // cumulative completion token lengths
  std::optional<double> entropy;
  std::vector<std::string> splits;

  bool operator==(const NextTokenInstance&) const = default;
};

struct PositionFilter {
  std::size_t stride = 1;                    // keep t with (t - first) % stride == 0
  std::size_t first = 1;
  std::optional<std::vector<std::size_t>> explicit_positions;
};

inline constexpr std::size_t kDefaultHorizonTokens = 8;

std::vector<NextTokenInstance> extract_instances(const TokenizedDocument& doc,
                                                 std::size_t horizon_tokens = kDefaultHorizonTokens,
                                                 const PositionFilter& positions = {});

}  // namespace ntr
