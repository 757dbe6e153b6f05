#include "ntr/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ntr/error.hpp"

namespace ntr {

namespace fs = std::filesystem;

std::vector<TokenSpan> ByteTokenizer::encode(std::string_view, std::string_view bytes) const {
  std::vector<TokenSpan> spans;
  spans.reserve(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    spans.push_back({static_cast<TokenId>(static_cast<unsigned char>(bytes[i])), i, i + 1});
  }
  return spans;
}

Bytes ByteTokenizer::token_bytes(TokenId id) const {
  if (id < 0 || id > 255) {
    throw Error(ErrorCode::configuration, "byte token id out of range: " + std::to_string(id));
  }
  return Bytes(1, static_cast<char>(id));
}

VocabTokenizer::VocabTokenizer(std::vector<Bytes> vocabulary, std::string source)
    : vocabulary_(std::move(vocabulary)), source_(std::move(source)) {
  if (vocabulary_.empty()) {
    throw Error(ErrorCode::configuration, "vocabulary is empty");
  }
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    const auto& entry = vocabulary_[i];
    if (entry.empty()) {
      throw Error(ErrorCode::configuration, "vocabulary entry " + std::to_string(i) + " is empty");
    }
    if (!lookup_.emplace(entry, static_cast<TokenId>(i)).second) {
      throw Error(ErrorCode::configuration, "duplicate vocabulary entry " + std::to_string(i));
    }
    max_len_ = std::max(max_len_, entry.size());
  }
}

VocabTokenizer VocabTokenizer::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::io, "cannot open vocabulary file " + path);
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, path + ": " + e.what());
  }
  if (!doc.is_array()) {
    throw Error(ErrorCode::parse, path + ": expected a JSON array of token strings");
  }
  std::vector<Bytes> vocab;
  for (const auto& entry : doc) {
    vocab.push_back(entry.get<std::string>());
  }
  return VocabTokenizer(std::move(vocab), path);
}

std::vector<TokenSpan> VocabTokenizer::encode(std::string_view, std::string_view bytes) const {
  std::vector<TokenSpan> spans;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t longest = std::min(max_len_, bytes.size() - pos);
    bool matched = false;
    for (std::size_t len = longest; len >= 1; --len) {
      auto it = lookup_.find(Bytes(bytes.substr(pos, len)));
      if (it != lookup_.end()) {
        spans.push_back({it->second, pos, pos + len});
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      throw Error(ErrorCode::structural,
                  "no vocabulary entry matches byte at offset " + std::to_string(pos));
    }
  }
  return spans;
}

Bytes VocabTokenizer::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocabulary_.size()) {
    throw Error(ErrorCode::configuration, "token id out of range: " + std::to_string(id));
  }
  return vocabulary_[static_cast<std::size_t>(id)];
}

std::string VocabTokenizer::spec() const {
  return "vocab:" + source_;
}

ExternalTokenization ExternalTokenization::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::io, "cannot open tokenization file " + path);
  }
  ExternalTokenization result;
  result.source_ = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      const auto ids = rec.at("token_ids").get<std::vector<TokenId>>();
      const auto ranges = rec.at("byte_spans").get<std::vector<std::vector<std::size_t>>>();
      if (ids.size() != ranges.size()) {
        throw Error(ErrorCode::structural, "token_ids and byte_spans differ in length");
      }
      std::vector<TokenSpan> spans;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ranges[i].size() != 2) {
          throw Error(ErrorCode::structural, "byte span " + std::to_string(i) + " is not a pair");
        }
        spans.push_back({ids[i], ranges[i][0], ranges[i][1]});
      }
      result.add(rec.at("doc_id").get<std::string>(), std::move(spans));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return result;
}

void ExternalTokenization::add(std::string doc_id, std::vector<TokenSpan> spans) {
  for (const auto& s : spans) {
    if (s.token_id < 0) {
      throw Error(ErrorCode::structural, "negative token id in " + doc_id);
    }
    vocab_size_ = std::max(vocab_size_, static_cast<std::size_t>(s.token_id) + 1);
  }
  docs_[std::move(doc_id)] = std::move(spans);
}

std::vector<TokenSpan> ExternalTokenization::encode(std::string_view doc_id,
                                                    std::string_view bytes) const {
  auto it = docs_.find(doc_id);
  if (it == docs_.end()) {
    throw Error(ErrorCode::dependency, "no external tokenization for document '" +
                                           std::string(doc_id) + "'");
  }
  std::vector<TokenSpan> spans;
  for (const auto& s : it->second) {
    if (s.end > bytes.size()) break;
    spans.push_back(s);
  }
  const std::size_t covered = spans.empty() ? 0 : spans.back().end;
  if (covered != bytes.size()) {
    throw Error(ErrorCode::structural, "external tokenization of '" + std::string(doc_id) +
                                           "' has no token boundary at byte " +
                                           std::to_string(bytes.size()));
  }
  return spans;
}

void ExternalTokenization::observe(std::string_view text, const std::vector<TokenSpan>& spans) {
  for (const auto& s : spans) {
    if (s.end <= text.size()) {
      id_bytes_.try_emplace(s.token_id, Bytes(text.substr(s.begin, s.size())));
    }
  }
}

Bytes ExternalTokenization::token_bytes(TokenId id) const {
  auto it = id_bytes_.find(id);
  if (it == id_bytes_.end()) {
    throw Error(ErrorCode::configuration,
                "byte string of external token " + std::to_string(id) + " is unknown");
  }
  return it->second;
}

std::unique_ptr<Tokenizer> make_tokenizer(const std::string& spec) {
  if (spec == "byte") {
    return std::make_unique<ByteTokenizer>();
  }
  if (spec.rfind("vocab:", 0) == 0) {
    return std::make_unique<VocabTokenizer>(VocabTokenizer::from_file(spec.substr(6)));
  }
  if (spec.rfind("external:", 0) == 0) {
    return std::make_unique<ExternalTokenization>(ExternalTokenization::from_file(spec.substr(9)));
  }
  throw Error(ErrorCode::configuration, "unknown tokenizer '" + spec + "'");
}

void validate_spans(const std::vector<TokenSpan>& spans, std::size_t text_size) {
  std::size_t expected = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    if (s.begin != expected || s.end <= s.begin || s.end > text_size) {
      std::ostringstream msg;
      msg << "span " << i << " [" << s.begin << "," << s.end << ") ";
      if (s.begin < expected) {
        msg << "overlaps previous span ending at " << expected;
      } else if (s.begin > expected) {
        msg << "leaves a gap after byte " << expected;
      } else if (s.end <= s.begin) {
        msg << "is empty";
      } else {
        msg << "runs past end of text (" << text_size << " bytes)";
      }
      throw Error(ErrorCode::structural, msg.str());
    }
    expected = s.end;
  }
  if (expected != text_size) {
    throw Error(ErrorCode::structural, "spans cover " + std::to_string(expected) + " of " +
                                           std::to_string(text_size) + " bytes");
  }
}

TokenizedDocument tokenize(const Document& document, const Tokenizer& tokenizer) {
  if (document.doc_id.empty()) {
    throw Error(ErrorCode::structural, "document id is empty");
  }
  if (document.text.empty()) {
    throw Error(ErrorCode::structural, "document '" + document.doc_id + "' is empty");
  }
  TokenizedDocument out{document.doc_id, document.text,
                        tokenizer.encode(document.doc_id, document.text)};
  validate_spans(out.tokens, out.text.size());
  return out;
}

std::vector<Document> load_corpus_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorCode::dependency, "corpus directory not found: " + dir);
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<Document> docs;
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    Bytes text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.empty()) continue;
    docs.push_back({fs::relative(path, dir).generic_string(), std::move(text)});
  }
  if (docs.empty()) {
    throw Error(ErrorCode::empty_corpus, "no non-empty documents under " + dir);
  }
  return docs;
}

std::vector<NextTokenInstance> extract_instances(const TokenizedDocument& doc,
                                                 std::size_t horizon_tokens,
                                                 const PositionFilter& positions) {
  if (horizon_tokens == 0) {
    throw Error(ErrorCode::configuration, "horizon must be at least one token");
  }
  const std::size_t T = doc.tokens.size();
  std::vector<std::size_t> selected;
  if (positions.explicit_positions) {
    selected = *positions.explicit_positions;
    for (std::size_t t : selected) {
      if (t == 0) {
        throw Error(ErrorCode::invalid_position, "position 0 has no defined context (positions are 1-based)");
      }
      if (t > T) {
        throw Error(ErrorCode::invalid_position, "position " + std::to_string(t) +
                                                     " exceeds document length " + std::to_string(T));
      }
    }
  } else {
    if (positions.first == 0) {
      throw Error(ErrorCode::invalid_position, "position 0 has no defined context (positions are 1-based)");
    }
    const std::size_t stride = std::max<std::size_t>(positions.stride, 1);
    for (std::size_t t = positions.first; t <= T; t += stride) {
      selected.push_back(t);
    }
  }

  std::vector<NextTokenInstance> out;
  out.reserve(selected.size());
  for (std::size_t t : selected) {
    const std::size_t first = t - 1;
    const std::size_t last = std::min(T, t + horizon_tokens - 1);  // 1-based, inclusive
    const std::size_t start = doc.tokens[first].begin;
    NextTokenInstance inst;
    inst.doc_id = doc.doc_id;
    inst.t = t;
    inst.context_bytes = doc.text.substr(0, start);
    inst.completion_bytes = doc.text.substr(start, doc.tokens[last - 1].end - start);
    for (std::size_t i = first; i < last; ++i) {
      inst.boundaries.push_back(doc.tokens[i].end - start);
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace ntr
