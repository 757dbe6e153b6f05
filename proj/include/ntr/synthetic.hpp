#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ntr/corpus.hpp"

namespace ntr {

/// Corpus where every token after the first two is a fixed function of the
/// previous two. The rule table is drawn once from `seed`; each document
/// starts from two uniformly random tokens.
struct RuleCorpusConfig {
  std::size_t vocab_size = 8;  // tokens are "a", "b", ...
  std::size_t documents = 1000;
  std::size_t min_length = 10;
  std::size_t max_length = 12;
  std::uint64_t seed = 0;
};

struct RuleCorpus {
  std::vector<Bytes> vocabulary;
  std::vector<TokenId> table;  // table[prev2 * V + prev1]
  std::vector<Document> documents;

  TokenId next(TokenId prev2, TokenId prev1) const;
};

RuleCorpus make_rule_corpus(const RuleCorpusConfig& config);

// One file per document plus vocab.json (JSON array) under `dir`'s parent
// layout: <dir>/docs/<doc_id>, <dir>/vocab.json.
void write_rule_corpus(const RuleCorpus& corpus, const std::string& dir);

}  // namespace ntr
