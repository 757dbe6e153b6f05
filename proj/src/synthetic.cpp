#include "ntr/synthetic.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ntr/error.hpp"
#include "ntr/jsonl.hpp"
#include "ntr/policy.hpp"

namespace ntr {

TokenId RuleCorpus::next(TokenId prev2, TokenId prev1) const {
  const auto v = vocabulary.size();
  return table.at(static_cast<std::size_t>(prev2) * v + static_cast<std::size_t>(prev1));
}

RuleCorpus make_rule_corpus(const RuleCorpusConfig& config) {
  if (config.vocab_size < 2 || config.vocab_size > 26) {
    throw Error(ErrorCode::configuration, "rule corpus vocabulary must have 2..26 tokens");
  }
  if (config.min_length < 3 || config.max_length < config.min_length || config.documents == 0) {
    throw Error(ErrorCode::configuration, "rule corpus needs documents of at least 3 tokens");
  }
  RuleCorpus corpus;
  for (std::size_t i = 0; i < config.vocab_size; ++i) {
    corpus.vocabulary.emplace_back(1, static_cast<char>('a' + i));
  }
  const auto v = static_cast<TokenId>(config.vocab_size);
  Rng table_rng(derive_seed(config.seed, "rule-table"));
  std::uniform_int_distribution<TokenId> token(0, v - 1);
  corpus.table.resize(config.vocab_size * config.vocab_size);
  for (auto& entry : corpus.table) entry = token(table_rng);

  std::uniform_int_distribution<std::size_t> length(config.min_length, config.max_length);
  for (std::size_t d = 0; d < config.documents; ++d) {
    Rng rng(derive_seed(config.seed, "rule-doc", d));
    const auto n = length(rng);
    std::vector<TokenId> ids{token(rng), token(rng)};
    while (ids.size() < n) ids.push_back(corpus.next(ids[ids.size() - 2], ids.back()));
    Document doc;
    char name[32];
    std::snprintf(name, sizeof name, "doc%06zu.txt", d);
    doc.doc_id = name;
    for (auto id : ids) doc.text += corpus.vocabulary[static_cast<std::size_t>(id)];
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

void write_rule_corpus(const RuleCorpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root / "docs");
  for (const auto& doc : corpus.documents) {
    std::ofstream out(root / "docs" / doc.doc_id, std::ios::binary);
    out << doc.text;
    if (!out) throw Error(ErrorCode::io, "cannot write " + (root / "docs" / doc.doc_id).string());
  }
  OrderedJson vocab = OrderedJson::array();
  for (const auto& t : corpus.vocabulary) vocab.push_back(t);
  write_json((root / "vocab.json").string(), vocab);
}

}  // namespace ntr
