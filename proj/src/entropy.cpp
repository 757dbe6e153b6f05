#include "ntr/entropy.hpp"

#include <algorithm>
#include <numeric>

#include "ntr/error.hpp"
#include "ntr/jsonl.hpp"

namespace ntr {

void validate_distribution(const NextTokenDistribution& dist) {
  if (dist.entries.empty()) {
    throw Error(ErrorCode::invalid_distribution, "distribution has no entries");
  }
  double total = 0.0;
  for (const auto& [id, p] : dist.entries) {
    if (!(p > 0.0) || p > 1.0 || !std::isfinite(p)) {
      throw Error(ErrorCode::invalid_distribution,
                  "probability of token " + std::to_string(id) + " outside (0, 1]");
    }
    total += p;
  }
  if (total > 1.0 + 1e-9) {
    throw Error(ErrorCode::invalid_distribution, "probabilities sum above 1");
  }
}

double top_k_entropy(const NextTokenDistribution& dist, std::size_t top_k, EntropyMode mode) {
  if (top_k == 0) {
    throw Error(ErrorCode::configuration, "top_k must be at least 1");
  }
  validate_distribution(dist);
  std::vector<double> probs;
  probs.reserve(dist.entries.size());
  for (const auto& entry : dist.entries) probs.push_back(entry.second);
  const std::size_t k = std::min(top_k, probs.size());
  std::partial_sort(probs.begin(), probs.begin() + static_cast<std::ptrdiff_t>(k), probs.end(),
                    std::greater<>());
  Eigen::VectorXd kept = Eigen::Map<const Eigen::VectorXd>(probs.data(), static_cast<Eigen::Index>(k));
  if (mode == EntropyMode::renormalized) {
    kept /= kept.sum();
  }
  return std::max(0.0, entropy_nats(kept));
}

std::vector<std::string> DifficultyConfig::diagnostics() const {
  std::vector<std::string> out;
  if (top_k == 0) out.emplace_back("top_k must be at least 1");
  if (!(easy < medium && medium < hard)) {
    out.emplace_back("difficulty thresholds must be strictly increasing (easy < medium < hard)");
  }
  if (!std::isfinite(easy) || !std::isfinite(medium) || !std::isfinite(hard)) {
    out.emplace_back("difficulty thresholds must be finite");
  }
  return out;
}

std::vector<std::string> assign_difficulty(double entropy, const DifficultyConfig& config) {
  std::vector<std::string> tags;
  if (entropy > config.easy) tags.push_back(kSplitEasy);
  if (entropy > config.medium) tags.push_back(kSplitMedium);
  if (entropy > config.hard) tags.push_back(kSplitHard);
  return tags;
}

std::vector<NextTokenInstance> filter_positions(std::span<const NextTokenInstance> instances,
                                                std::span<const std::optional<double>> entropies,
                                                double threshold) {
  if (entropies.size() != instances.size()) {
    throw Error(ErrorCode::incomplete_scoring, std::to_string(instances.size()) + " instances but " +
                                                   std::to_string(entropies.size()) + " scores");
  }
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    if (!entropies[i]) {
      throw Error(ErrorCode::incomplete_scoring, "no entropy for " + instances[i].doc_id + " t=" +
                                                     std::to_string(instances[i].t));
    }
  }
  std::vector<NextTokenInstance> kept;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (*entropies[i] > threshold) kept.push_back(instances[i]);
  }
  return kept;
}

std::vector<NextTokenInstance> filter_positions(std::span<const NextTokenInstance> instances,
                                                double threshold) {
  std::vector<std::optional<double>> entropies;
  entropies.reserve(instances.size());
  for (const auto& inst : instances) entropies.push_back(inst.entropy);
  return filter_positions(instances, entropies, threshold);
}

void attach_scores(std::vector<NextTokenInstance>& instances,
                   std::span<const NextTokenDistribution> scores, const DifficultyConfig& config,
                   EntropyMode mode) {
  std::map<std::pair<std::string_view, std::size_t>, const NextTokenDistribution*> index;
  for (const auto& s : scores) index[{s.doc_id, s.t}] = &s;
  for (auto& inst : instances) {
    auto it = index.find({inst.doc_id, inst.t});
    if (it == index.end()) {
      throw Error(ErrorCode::incomplete_scoring,
                  "no score for " + inst.doc_id + " t=" + std::to_string(inst.t));
    }
    const double h = top_k_entropy(*it->second, config.top_k, mode);
    inst.entropy = h;
    inst.splits = assign_difficulty(h, config);
  }
}

NgramProxy::NgramProxy(std::size_t order, double smoothing, std::size_t vocab_size)
    : order_(order), smoothing_(smoothing), vocab_size_(vocab_size) {
  if (order == 0) throw Error(ErrorCode::configuration, "n-gram order must be at least 1");
  if (!(smoothing > 0.0)) throw Error(ErrorCode::configuration, "smoothing must be positive");
  if (vocab_size == 0) throw Error(ErrorCode::configuration, "vocabulary is empty");
}

std::vector<TokenId> NgramProxy::key(std::span<const TokenId> history) const {
  constexpr TokenId kStart = -1;
  std::vector<TokenId> k(order_, kStart);
  const std::size_t n = std::min(order_, history.size());
  std::copy(history.end() - static_cast<std::ptrdiff_t>(n), history.end(),
            k.end() - static_cast<std::ptrdiff_t>(n));
  return k;
}

void NgramProxy::fit(std::span<const std::vector<TokenId>> documents) {
  std::size_t total_tokens = 0;
  for (const auto& doc : documents) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      if (doc[i] < 0 || static_cast<std::size_t>(doc[i]) >= vocab_size_) {
        throw Error(ErrorCode::configuration, "token id outside the proxy vocabulary");
      }
      const auto k = key(std::span(doc).first(i));
      counts_[k][doc[i]] += 1.0;
      totals_[k] += 1.0;
    }
    total_tokens += doc.size();
  }
  if (total_tokens == 0) {
    throw Error(ErrorCode::empty_corpus, "n-gram proxy fitted on an empty corpus");
  }
}

Eigen::VectorXd NgramProxy::distribution(std::span<const TokenId> history) const {
  const auto n = static_cast<Eigen::Index>(vocab_size_);
  const auto k = key(history);
  auto total_it = totals_.find(k);
  if (total_it == totals_.end()) {
    return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(vocab_size_));
  }
  const double denom = total_it->second + smoothing_ * static_cast<double>(vocab_size_);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(n, smoothing_ / denom);
  for (const auto& [id, c] : counts_.at(k)) {
    p(id) = (c + smoothing_) / denom;
  }
  return p;
}

NextTokenDistribution to_distribution(std::string doc_id, std::size_t t, const Eigen::VectorXd& probs,
                                      std::size_t keep) {
  std::vector<TokenId> order(static_cast<std::size_t>(probs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](TokenId a, TokenId b) { return probs(a) > probs(b); });
  const std::size_t n = keep == 0 ? order.size() : std::min(keep, order.size());
  NextTokenDistribution dist{std::move(doc_id), t, {}};
  dist.entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (probs(order[i]) > 0.0) dist.entries.emplace_back(order[i], probs(order[i]));
  }
  return dist;
}

std::vector<NextTokenDistribution> ngram_proxy_score(std::span<const TokenizedDocument> corpus,
                                                     std::size_t order, double smoothing,
                                                     std::size_t vocab_size, std::size_t keep) {
  if (corpus.empty()) {
    throw Error(ErrorCode::empty_corpus, "cannot score an empty corpus");
  }
  std::vector<std::vector<TokenId>> sequences;
  sequences.reserve(corpus.size());
  for (const auto& doc : corpus) {
    std::vector<TokenId> ids;
    ids.reserve(doc.tokens.size());
    for (const auto& s : doc.tokens) ids.push_back(s.token_id);
    sequences.push_back(std::move(ids));
  }
  NgramProxy proxy(order, smoothing, vocab_size);
  proxy.fit(sequences);

  std::vector<std::size_t> by_id(corpus.size());
  std::iota(by_id.begin(), by_id.end(), 0);
  std::stable_sort(by_id.begin(), by_id.end(),
                   [&](std::size_t a, std::size_t b) { return corpus[a].doc_id < corpus[b].doc_id; });

  std::vector<NextTokenDistribution> out;
  for (std::size_t d : by_id) {
    const auto& ids = sequences[d];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.push_back(to_distribution(corpus[d].doc_id, i + 1,
                                    proxy.distribution(std::span(ids).first(i)), keep));
    }
  }
  return out;
}

void write_scores(const std::string& path, std::span<const NextTokenDistribution> scores) {
  std::vector<OrderedJson> records;
  records.reserve(scores.size());
  for (const auto& s : scores) {
    OrderedJson j;
    j["doc_id"] = s.doc_id;
    j["t"] = s.t;
    OrderedJson top = OrderedJson::array();
    for (const auto& [id, p] : s.entries) top.push_back(OrderedJson::array({id, p}));
    j["top"] = std::move(top);
    records.push_back(std::move(j));
  }
  write_jsonl(path, records);
}

std::vector<NextTokenDistribution> read_scores(const std::string& path) {
  std::vector<NextTokenDistribution> out;
  read_jsonl(path, [&](const nlohmann::json& rec, std::size_t) {
    NextTokenDistribution d;
    d.doc_id = rec.at("doc_id").get<std::string>();
    d.t = rec.at("t").get<std::size_t>();
    for (const auto& e : rec.at("top")) {
      d.entries.emplace_back(e.at(0).get<TokenId>(), e.at(1).get<double>());
    }
    std::stable_sort(d.entries.begin(), d.entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    out.push_back(std::move(d));
  });
  return out;
}

}  // namespace ntr
