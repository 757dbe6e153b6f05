#include "ntr/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "ntr/codec.hpp"
#include "ntr/error.hpp"
#include "ntr/instance_io.hpp"

namespace ntr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config IO

namespace {

toml::array to_array(const std::vector<std::size_t>& v) {
  toml::array a;
  for (auto x : v) a.push_back(static_cast<std::int64_t>(x));
  return a;
}

toml::array to_array(const std::vector<double>& v) {
  toml::array a;
  for (auto x : v) a.push_back(x);
  return a;
}

toml::array to_array(const std::vector<std::string>& v) {
  toml::array a;
  for (const auto& x : v) a.push_back(x);
  return a;
}

std::string mode_name(EntropyMode m) { return m == EntropyMode::renormalized ? "renormalized" : "truncated"; }

EntropyMode parse_entropy_mode(std::string_view s) {
  if (s == "renormalized") return EntropyMode::renormalized;
  if (s == "truncated") return EntropyMode::truncated;
  throw Error(ErrorCode::configuration, "unknown entropy mode '" + std::string(s) + "'");
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adamw"; }

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adamw") return OptimizerKind::adamw;
  throw Error(ErrorCode::configuration, "unknown optimizer '" + std::string(s) + "'");
}

toml::table ingest_table(const IngestConfig& c) {
  return toml::table{{"corpus_dir", c.corpus_dir},
                     {"tokenizer", c.tokenizer},
                     {"horizon", static_cast<std::int64_t>(c.horizon)},
                     {"stride", static_cast<std::int64_t>(c.stride)},
                     {"first", static_cast<std::int64_t>(c.first)}};
}

toml::table score_table(const ScoreConfig& c) {
  return toml::table{{"proxy", c.proxy},
                     {"smoothing", c.smoothing},
                     {"keep", static_cast<std::int64_t>(c.keep)}};
}

toml::table filter_table(const FilterConfig& c) {
  return toml::table{{"threshold", c.threshold},
                     {"top_k", static_cast<std::int64_t>(c.difficulty.top_k)},
                     {"easy", c.difficulty.easy},
                     {"medium", c.difficulty.medium},
                     {"hard", c.difficulty.hard},
                     {"entropy_mode", mode_name(c.mode)},
                     {"holdout_fraction", c.holdout_fraction}};
}

toml::table train_table(const TrainStageConfig& c) {
  const auto& t = c.train;
  toml::table tbl{{"algorithm", c.algorithm},
                  {"batch_size", static_cast<std::int64_t>(t.batch_size)},
                  {"group_size", static_cast<std::int64_t>(t.group_size)},
                  {"learning_rate", t.learning_rate},
                  {"clip_epsilon", t.clip_epsilon},
                  {"kl_coefficient", t.kl_coefficient},
                  {"entropy_coefficient", t.entropy_coefficient},
                  {"temperature", t.temperature},
                  {"dynamic_sampling_start_step", static_cast<std::int64_t>(t.dynamic_sampling_start_step)},
                  {"total_steps", static_cast<std::int64_t>(t.total_steps)},
                  {"advantage_epsilon", t.advantage_epsilon},
                  {"max_response_tokens", static_cast<std::int64_t>(t.max_response_tokens)},
                  {"optimizer", optimizer_name(t.optimizer)},
                  {"adam_beta1", t.adam.beta1},
                  {"adam_beta2", t.adam.beta2},
                  {"adam_epsilon", t.adam.epsilon},
                  {"weight_decay", t.adam.weight_decay},
                  {"reward", to_string(t.reward.variant)},
                  {"fallback_reward", t.reward.fallback_reward},
                  {"checkpoint_steps", to_array(t.checkpoint_steps)},
                  {"policy_order", static_cast<std::int64_t>(c.policy_order)},
                  {"emit_end", c.emit_end},
                  {"rollout_keep", static_cast<std::int64_t>(c.rollout_keep)}};
  if (c.separator) tbl.insert("separator", *c.separator);
  if (c.probe_steps) tbl.insert("probe_steps", to_array(*c.probe_steps));
  return tbl;
}

toml::table eval_table(const EvalStageConfig& c) {
  toml::table tbl{{"mode", to_string(c.options.mode)},
                  {"temperature", c.options.temperature},
                  {"max_response_tokens", static_cast<std::int64_t>(c.options.max_response_tokens)}};
  if (c.checkpoint) tbl.insert("checkpoint", *c.checkpoint);
  if (c.thresholds) tbl.insert("thresholds", to_array(*c.thresholds));
  return tbl;
}

toml::table fit_table(const FitConfig& c) {
  toml::table tbl{{"alpha_min", c.options.alpha_min},
                  {"alpha_max", c.options.alpha_max},
                  {"grid_points", static_cast<std::int64_t>(c.options.grid_points)}};
  if (c.flops_per_token) tbl.insert("flops_per_token", *c.flops_per_token);
  if (c.steps) tbl.insert("steps", to_array(*c.steps));
  return tbl;
}

toml::table patterns_table(const PatternsConfig& c) {
  toml::table tbl;
  if (c.responses) tbl.insert("responses", *c.responses);
  if (c.keywords) tbl.insert("keywords", *c.keywords);
  return tbl;
}

std::string toml_text(const toml::table& tbl) {
  std::ostringstream os;
  os << tbl;
  return os.str();
}

// Strict reader over one TOML table: unknown keys and wrong types are
// configuration errors naming the section.
class Section {
 public:
  Section(const toml::table* tbl, std::string name) : tbl_(tbl), name_(std::move(name)) {}

  template <typename T>
  void read(const char* key, T& out) {
    used_.insert(key);
    if (!tbl_) return;
    const auto* node = tbl_->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      out = require(node->value<bool>(), key, "a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      out = require(node->value<std::string>(), key, "a string");
    } else if constexpr (std::is_same_v<T, double>) {
      out = require(node->value<double>(), key, "a number");
    } else if constexpr (std::is_same_v<T, std::size_t>) {
      const auto v = require(node->value<std::int64_t>(), key, "an integer");
      if (v < 0) fail(key, "must be non-negative");
      out = static_cast<std::size_t>(v);
    }
  }

  void read(const char* key, std::optional<std::string>& out) {
    used_.insert(key);
    if (!tbl_) return;
    if (const auto* node = tbl_->get(key)) out = require(node->value<std::string>(), key, "a string");
  }

  template <typename T>
  void read_list(const char* key, std::optional<std::vector<T>>& out) {
    used_.insert(key);
    if (!tbl_) return;
    const auto* node = tbl_->get(key);
    if (!node) return;
    const auto* arr = node->as_array();
    if (!arr) fail(key, "must be an array");
    std::vector<T> v;
    for (const auto& e : *arr) {
      if constexpr (std::is_same_v<T, double>) {
        v.push_back(require(e.value<double>(), key, "an array of numbers"));
      } else if constexpr (std::is_same_v<T, std::string>) {
        v.push_back(require(e.value<std::string>(), key, "an array of strings"));
      } else {
        const auto x = require(e.value<std::int64_t>(), key, "an array of integers");
        if (x < 0) fail(key, "entries must be non-negative");
        v.push_back(static_cast<T>(x));
      }
    }
    out = std::move(v);
  }

  void allow(const std::string& key) { used_.insert(key); }

  void finish() const {
    if (!tbl_) return;
    for (const auto& [k, v] : *tbl_) {
      if (!used_.contains(std::string(k.str()))) {
        throw Error(ErrorCode::configuration, "unknown key '" + std::string(k.str()) + "' in [" + name_ + "]");
      }
    }
  }

 private:
  template <typename T>
  T require(std::optional<T> v, const char* key, const char* what) const {
    if (!v) fail(key, std::string("must be ") + what);
    return *v;
  }
  [[noreturn]] void fail(const char* key, const std::string& msg) const {
    throw Error(ErrorCode::configuration, name_ + "." + key + " " + msg);
  }

  const toml::table* tbl_;
  std::string name_;
  std::set<std::string> used_;
};

}  // namespace

std::string config_to_toml(const RunConfig& c) {
  if (c.seed > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
    throw Error(ErrorCode::configuration, "seed must fit in a signed 64-bit integer");
  }
  toml::table root{{"seed", static_cast<std::int64_t>(c.seed)},
                   {"run_dir", c.run_dir},
                   {"stages", to_array(c.stages)},
                   {"ingest", ingest_table(c.ingest)},
                   {"score", score_table(c.score)},
                   {"filter", filter_table(c.filter)},
                   {"train", train_table(c.train)},
                   {"eval", eval_table(c.eval)},
                   {"fit", fit_table(c.fit)},
                   {"patterns", patterns_table(c.patterns)}};
  return toml_text(root);
}

RunConfig config_from_toml(std::string_view text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config line " << e.source().begin.line << ": " << e.description();
    throw Error(ErrorCode::parse, os.str());
  }
  RunConfig c;
  const std::set<std::string> sections = {"ingest", "score", "filter", "train", "eval", "fit", "patterns"};
  {
    Section top(&root, "top level");
    std::size_t seed = 0;
    top.read("seed", seed);
    c.seed = seed;
    top.read("run_dir", c.run_dir);
    std::optional<std::vector<std::string>> stages;
    top.read_list("stages", stages);
    if (stages) c.stages = *stages;
    for (const auto& s : sections) top.allow(s);
    top.finish();
  }
  auto section = [&](const char* name) {
    const auto* node = root.get(name);
    if (node && !node->is_table()) throw Error(ErrorCode::configuration, std::string("[") + name + "] must be a table");
    return Section(node ? node->as_table() : nullptr, name);
  };

  {
    auto s = section("ingest");
    s.read("corpus_dir", c.ingest.corpus_dir);
    s.read("tokenizer", c.ingest.tokenizer);
    s.read("horizon", c.ingest.horizon);
    s.read("stride", c.ingest.stride);
    s.read("first", c.ingest.first);
    s.finish();
  }
  {
    auto s = section("score");
    s.read("proxy", c.score.proxy);
    s.read("smoothing", c.score.smoothing);
    s.read("keep", c.score.keep);
    s.finish();
  }
  {
    auto s = section("filter");
    s.read("threshold", c.filter.threshold);
    s.read("top_k", c.filter.difficulty.top_k);
    s.read("easy", c.filter.difficulty.easy);
    s.read("medium", c.filter.difficulty.medium);
    s.read("hard", c.filter.difficulty.hard);
    std::string mode = mode_name(c.filter.mode);
    s.read("entropy_mode", mode);
    c.filter.mode = parse_entropy_mode(mode);
    s.read("holdout_fraction", c.filter.holdout_fraction);
    s.finish();
  }
  {
    auto s = section("train");
    auto& t = c.train.train;
    s.read("algorithm", c.train.algorithm);
    s.read("batch_size", t.batch_size);
    s.read("group_size", t.group_size);
    s.read("learning_rate", t.learning_rate);
    s.read("clip_epsilon", t.clip_epsilon);
    s.read("kl_coefficient", t.kl_coefficient);
    s.read("entropy_coefficient", t.entropy_coefficient);
    s.read("temperature", t.temperature);
    s.read("dynamic_sampling_start_step", t.dynamic_sampling_start_step);
    s.read("total_steps", t.total_steps);
    s.read("advantage_epsilon", t.advantage_epsilon);
    s.read("max_response_tokens", t.max_response_tokens);
    std::string opt = optimizer_name(t.optimizer);
    s.read("optimizer", opt);
    t.optimizer = parse_optimizer(opt);
    s.read("adam_beta1", t.adam.beta1);
    s.read("adam_beta2", t.adam.beta2);
    s.read("adam_epsilon", t.adam.epsilon);
    s.read("weight_decay", t.adam.weight_decay);
    std::string reward = to_string(t.reward.variant);
    s.read("reward", reward);
    t.reward.variant = parse_reward_variant(reward);
    s.read("fallback_reward", t.reward.fallback_reward);
    std::optional<std::vector<std::size_t>> checkpoints;
    s.read_list("checkpoint_steps", checkpoints);
    if (checkpoints) t.checkpoint_steps = *checkpoints;
    s.read("policy_order", c.train.policy_order);
    s.read("emit_end", c.train.emit_end);
    s.read("separator", c.train.separator);
    s.read_list("probe_steps", c.train.probe_steps);
    s.read("rollout_keep", c.train.rollout_keep);
    s.finish();
  }
  {
    auto s = section("eval");
    std::string mode = to_string(c.eval.options.mode);
    s.read("mode", mode);
    c.eval.options.mode = parse_eval_mode(mode);
    s.read("temperature", c.eval.options.temperature);
    s.read("max_response_tokens", c.eval.options.max_response_tokens);
    s.read("checkpoint", c.eval.checkpoint);
    s.read_list("thresholds", c.eval.thresholds);
    s.finish();
  }
  {
    auto s = section("fit");
    {
      double f = 0.0;
      bool present = false;
      if (const auto* t = root.get("fit"); t && t->as_table() && t->as_table()->contains("flops_per_token")) {
        present = true;
      }
      s.read("flops_per_token", f);
      if (present) c.fit.flops_per_token = f;
    }
    s.read("alpha_min", c.fit.options.alpha_min);
    s.read("alpha_max", c.fit.options.alpha_max);
    s.read("grid_points", c.fit.options.grid_points);
    s.read_list("steps", c.fit.steps);
    s.finish();
  }
  {
    auto s = section("patterns");
    s.read("responses", c.patterns.responses);
    s.read("keywords", c.patterns.keywords);
    s.finish();
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::dependency, "config file not found: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return config_from_toml(os.str());
}

std::vector<std::string> validate_config(const RunConfig& c) {
  std::vector<std::string> out;
  auto add = [&](const std::string& section, const std::string& msg) { out.push_back(section + ": " + msg); };

  std::set<std::string> seen;
  for (const auto& s : c.stages) {
    if (std::find(kStageOrder.begin(), kStageOrder.end(), s) == kStageOrder.end()) {
      add("stages", "unknown stage '" + s + "'");
    }
    if (!seen.insert(s).second) add("stages", "stage '" + s + "' listed twice");
  }
  if (c.run_dir.empty()) add("run_dir", "must not be empty");

  if (c.ingest.corpus_dir.empty()) add("ingest", "corpus_dir must not be empty");
  if (c.ingest.horizon == 0) add("ingest", "horizon must be at least 1");
  if (c.ingest.stride == 0) add("ingest", "stride must be at least 1");
  if (c.ingest.first == 0) add("ingest", "first position is 1-based");
  if (!(c.ingest.tokenizer == "byte" || c.ingest.tokenizer.starts_with("vocab:") ||
        c.ingest.tokenizer.starts_with("external:"))) {
    add("ingest", "tokenizer must be byte, vocab:<file> or external:<file>");
  }

  if (c.score.proxy.starts_with("ngram:")) {
    std::size_t order = 0;
    const auto digits = std::string_view(c.score.proxy).substr(6);
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), order);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) add("score", "ngram proxy order must be an integer");
    if (c.ingest.tokenizer.starts_with("external:")) {
      add("score", "ngram proxy needs an in-tree tokenizer to rebuild documents");
    }
  } else if (!c.score.proxy.starts_with("external:")) {
    add("score", "proxy must be ngram:<order> or external:<file>");
  }
  if (!(c.score.smoothing > 0.0) || !std::isfinite(c.score.smoothing)) add("score", "smoothing must be positive");
  if (c.score.keep != 0 && c.score.keep < c.filter.difficulty.top_k) {
    add("filter", "top_k exceeds the entries kept by score.keep");
  }

  for (const auto& d : c.filter.difficulty.diagnostics()) add("filter", d);
  if (!std::isfinite(c.filter.threshold)) add("filter", "threshold must be finite");
  if (!(c.filter.holdout_fraction >= 0.0 && c.filter.holdout_fraction < 1.0)) {
    add("filter", "holdout_fraction must be in [0, 1)");
  }

  if (c.train.algorithm != "grpo" && c.train.algorithm != "ntp") add("train", "algorithm must be grpo or ntp");
  if (c.train.algorithm == "grpo") {
    for (const auto& d : c.train.train.diagnostics()) add("train", d);
  } else if (c.train.train.batch_size == 0) {
    add("train", "batch size must be at least 1");
  }
  if (c.train.policy_order == 0) add("train", "policy_order must be at least 1");
  if (c.train.separator && c.train.separator->empty()) add("train", "separator must not be empty");
  if (!c.train.emit_end && c.train.separator) {
    add("train", "a separator needs emit_end so the answer can be terminated");
  }

  if (!(c.eval.options.temperature > 0.0)) add("eval", "temperature must be positive");
  if (c.eval.options.max_response_tokens == 0) add("eval", "max_response_tokens must be at least 1");
  if (c.eval.thresholds) {
    const auto& t = *c.eval.thresholds;
    const auto& d = c.filter.difficulty;
    if (t.size() != 3 || t[0] != d.easy || t[1] != d.medium || t[2] != d.hard) {
      add("eval", "split thresholds do not match the scoring thresholds in [filter]");
    }
  }

  if (c.fit.flops_per_token && !(*c.fit.flops_per_token > 0.0)) add("fit", "flops_per_token must be positive");
  if (c.fit.options.grid_points < 3) add("fit", "grid_points must be at least 3");
  if (!(c.fit.options.alpha_min > 0.0 && c.fit.options.alpha_max > c.fit.options.alpha_min)) {
    add("fit", "alpha range must satisfy 0 < alpha_min < alpha_max");
  }
  if (seen.contains("fit")) {
    std::set<std::size_t> probes;
    if (c.train.probe_steps) {
      probes.insert(c.train.probe_steps->begin(), c.train.probe_steps->end());
    } else {
      probes.insert(c.train.train.checkpoint_steps.begin(), c.train.train.checkpoint_steps.end());
    }
    std::erase_if(probes, [&](std::size_t s) { return s == 0 || s > c.train.train.total_steps; });
    if (probes.size() < 4) add("fit", "fewer than 4 probe steps within train.total_steps");
  }
  if (seen.contains("patterns") && c.train.algorithm == "ntp" && !c.patterns.responses) {
    add("patterns", "ntp training writes no rollouts; set patterns.responses");
  }
  return out;
}

// ---------------------------------------------------------------- stages

std::vector<NextTokenInstance> ingest_corpus(const IngestConfig& config, const Tokenizer& tokenizer) {
  const auto docs = load_corpus_dir(config.corpus_dir);
  PositionFilter positions;
  positions.stride = config.stride;
  positions.first = config.first;
  std::vector<NextTokenInstance> out;
  for (const auto& doc : docs) {
    const auto tokenized = tokenize(doc, tokenizer);
    if (tokenized.tokens.size() < config.first) continue;
    auto insts = extract_instances(tokenized, config.horizon, positions);
    out.insert(out.end(), std::make_move_iterator(insts.begin()), std::make_move_iterator(insts.end()));
  }
  if (out.empty()) throw Error(ErrorCode::empty_corpus, "no instances extracted from " + config.corpus_dir);
  return out;
}

std::vector<Document> reconstruct_documents(std::span<const NextTokenInstance> instances) {
  std::map<std::string, Bytes> longest;
  for (const auto& inst : instances) {
    auto& text = longest[inst.doc_id];
    const auto size = inst.context_bytes.size() + inst.completion_bytes.size();
    if (size > text.size()) text = inst.context_bytes + inst.completion_bytes;
  }
  std::vector<Document> docs;
  for (auto& [id, text] : longest) docs.push_back({id, std::move(text)});
  return docs;
}

std::vector<NextTokenDistribution> score_instances(std::span<const NextTokenInstance> instances,
                                                   const Tokenizer& tokenizer, const ScoreConfig& config) {
  using Key = std::pair<std::string, std::size_t>;
  std::map<Key, NextTokenDistribution> by_key;
  if (config.proxy.starts_with("external:")) {
    for (auto& d : read_scores(config.proxy.substr(9))) {
      Key k{d.doc_id, d.t};
      by_key.emplace(std::move(k), std::move(d));
    }
  } else if (config.proxy.starts_with("ngram:")) {
    const auto order = static_cast<std::size_t>(std::stoul(config.proxy.substr(6)));
    std::vector<TokenizedDocument> corpus;
    for (const auto& doc : reconstruct_documents(instances)) corpus.push_back(tokenize(doc, tokenizer));
    for (auto& d : ngram_proxy_score(corpus, order, config.smoothing, tokenizer.vocab_size(), config.keep)) {
      Key k{d.doc_id, d.t};
      by_key.emplace(std::move(k), std::move(d));
    }
  } else {
    throw Error(ErrorCode::configuration, "unknown proxy '" + config.proxy + "'");
  }
  std::vector<NextTokenDistribution> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    auto it = by_key.find({inst.doc_id, inst.t});
    if (it == by_key.end()) {
      throw Error(ErrorCode::incomplete_scoring,
                  "no distribution for " + inst.doc_id + " t=" + std::to_string(inst.t));
    }
    auto d = it->second;
    if (config.keep != 0 && d.entries.size() > config.keep) d.entries.resize(config.keep);
    out.push_back(std::move(d));
  }
  return out;
}

FilterOutput filter_instances(std::vector<NextTokenInstance> instances,
                              std::span<const NextTokenDistribution> scores, const FilterConfig& config,
                              std::uint64_t seed) {
  attach_scores(instances, scores, config.difficulty, config.mode);
  FilterOutput out;
  out.kept = filter_positions(instances, config.threshold);
  for (const auto& inst : out.kept) {
    const double u = static_cast<double>(derive_seed(seed, "holdout:" + inst.doc_id) >> 11) * 0x1.0p-53;
    (u < config.holdout_fraction ? out.heldout : out.train).push_back(inst);
  }
  return out;
}

std::vector<Bytes> policy_vocabulary(Tokenizer& tokenizer, std::span<const NextTokenInstance> instances) {
  if (auto* external = dynamic_cast<ExternalTokenization*>(&tokenizer)) {
    for (const auto& doc : reconstruct_documents(instances)) {
      external->observe(doc.text, external->encode(doc.doc_id, doc.text));
    }
  }
  std::vector<Bytes> vocab(tokenizer.vocab_size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    try {
      vocab[i] = tokenizer.token_bytes(static_cast<TokenId>(i));
    } catch (const Error&) {
      vocab[i].clear();
    }
  }
  return vocab;
}

namespace {

std::string step_name(const char* prefix, std::size_t step, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%06zu%s", prefix, step, ext);
  return buf;
}

std::optional<TokenId> find_token(const std::vector<Bytes>& vocab, const std::string& bytes) {
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i] == bytes) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}

}  // namespace

TrainStageOutput run_training(const TrainStageConfig& config, Tokenizer& tokenizer,
                              std::span<const NextTokenInstance> train,
                              std::span<const NextTokenInstance> probe_instances, const std::string& out_dir,
                              const EvalOptions& probe_options) {
  if (train.empty()) throw Error(ErrorCode::empty_corpus, "no training instances");
  ToyPolicyConfig pc;
  pc.vocabulary = policy_vocabulary(tokenizer, train);
  pc.order = config.policy_order;
  pc.temperature = config.train.temperature;
  pc.emit_end = config.emit_end;
  pc.max_response_tokens = config.train.max_response_tokens;
  if (config.separator) {
    pc.separator = find_token(pc.vocabulary, *config.separator);
    if (!pc.separator) {
      throw Error(ErrorCode::configuration, "separator is not a token of the vocabulary");
    }
  }
  ToyPolicy policy(pc);
  NextTokenEnv env(tokenizer, config.train.reward);

  const fs::path root(out_dir);
  fs::create_directories(root / "checkpoints");
  fs::create_directories(root / "rollouts");
  fs::create_directories(root / "reports");

  TrainStageOutput out;
  const auto& cfg = config.train;
  std::set<std::size_t> checkpoint_steps;
  for (auto s : cfg.checkpoint_steps) {
    if (s >= 1 && s <= cfg.total_steps) checkpoint_steps.insert(s);
  }
  const auto probe_set = probe_instances.empty() ? train : probe_instances;

  TrainHooks hooks;
  hooks.probe = [&](const ToyPolicy& p, std::size_t) {
    EvalOptions o = probe_options;
    o.seed = derive_seed(cfg.seed, "probe");
    const auto report = evaluate_accuracy(p, env, probe_set, o);
    return report.at(kSplitAll).accuracy.value_or(0.0);
  };
  hooks.probe_steps = config.probe_steps ? *config.probe_steps
                                         : std::vector<std::size_t>(checkpoint_steps.begin(), checkpoint_steps.end());
  hooks.on_checkpoint = [&](const ToyPolicy& p, std::size_t step) {
    if (!checkpoint_steps.contains(step)) return;
    const auto path = (root / "checkpoints" / step_name("step_", step, ".json")).string();
    write_json(path, p.to_json(step, tokenizer.spec()));
    out.checkpoints.push_back(path);
  };
  hooks.on_rollouts = [&](std::span<const RolloutGroup> groups, std::size_t step) {
    if (!checkpoint_steps.contains(step) && step != cfg.total_steps) return;
    const auto n = std::min(groups.size(), config.rollout_keep);
    const auto path = (root / "rollouts" / step_name("step_", step, ".jsonl")).string();
    write_rollouts(path, groups.first(n));
    out.rollouts.push_back(path);
  };

  TrainResult result = config.algorithm == "ntp" ? train_ntp(policy, env, train, cfg, hooks)
                                                 : train_grpo(policy, env, train, cfg, hooks);
  const auto final_path = (root / "checkpoints" / "final.json").string();
  write_json(final_path, policy.to_json(cfg.total_steps, tokenizer.spec()));
  out.checkpoints.push_back(final_path);
  write_train_log((root / "reports" / "train_log.jsonl").string(), result.log);
  out.log = std::move(result.log);
  return out;
}

double default_flops_per_token(const std::string& checkpoint_path) {
  return 6.0 * ToyPolicy::from_json(read_json(checkpoint_path)).parameter_count();
}

EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                               std::span<const NextTokenInstance> instances, const EvalOptions& options,
                               const RewardSpec& reward) {
  const auto doc = read_json(checkpoint_path);
  const auto policy = ToyPolicy::from_json(doc);
  auto tokenizer = make_tokenizer(doc.at("tokenizer").get<std::string>());
  NextTokenEnv env(*tokenizer, reward);
  return evaluate_accuracy(policy, env, instances, options);
}

// ---------------------------------------------------------------- pipeline

std::string hash_directory(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::dependency, "directory not found: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir).generic_string());
  }
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& f : files) listing += f + '\0' + sha256_file((fs::path(dir) / f).string()) + '\n';
  return sha256_hex(listing);
}

namespace {

// Train logs carry wall-clock times; their digest ignores them so that
// manifests of identical runs agree.
std::string digest(const fs::path& path) {
  if (fs::is_directory(path)) return hash_directory(path.string());
  if (path.filename() == "train_log.jsonl") {
    auto log = read_train_log(path.string());
    std::string text;
    for (auto& r : log) {
      r.wall_time = 0.0;
      text += log_record_to_json(r).dump() + '\n';
    }
    return sha256_hex(text);
  }
  return sha256_file(path.string());
}

struct Stage {
  std::string name;
  std::vector<std::string> inputs;   // run-relative or external paths
  std::vector<std::string> outputs;  // run-relative
  std::string settings;              // TOML of what the stage reads from the config
  std::function<void()> run;
};

std::string tokenizer_file(const std::string& spec) {
  const auto colon = spec.find(':');
  return colon == std::string::npos ? std::string() : spec.substr(colon + 1);
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config) {
  if (const auto diags = validate_config(config); !diags.empty()) {
    throw Error(ErrorCode::configuration, "config: " + diags.front());
  }
  const fs::path root(config.run_dir);
  for (const char* d : {"instances", "scores", "rollouts", "checkpoints", "reports"}) {
    fs::create_directories(root / d);
  }
  auto abs = [&](const std::string& rel) { return (root / rel).string(); };
  const std::string tok = config.ingest.tokenizer;
  const std::string tok_file = tokenizer_file(tok);
  auto with_tok = [&](std::vector<std::string> v) {
    if (!tok_file.empty()) v.push_back(tok_file);
    return v;
  };
  const std::string seed_line = "seed = " + std::to_string(config.seed) + "\ntokenizer = \"" + tok + "\"\n";

  TrainConfig train_cfg = config.train.train;
  train_cfg.seed = derive_seed(config.seed, "train");
  EvalOptions eval_opts = config.eval.options;
  eval_opts.seed = derive_seed(config.seed, "eval");

  std::set<std::size_t> ckpt;
  for (auto s : train_cfg.checkpoint_steps) {
    if (s >= 1 && s <= train_cfg.total_steps) ckpt.insert(s);
  }
  std::vector<std::string> train_outputs;
  for (auto s : ckpt) train_outputs.push_back("checkpoints/" + step_name("step_", s, ".json"));
  train_outputs.push_back("checkpoints/final.json");
  std::set<std::size_t> rollout_steps = ckpt;
  rollout_steps.insert(train_cfg.total_steps);
  if (config.train.algorithm == "grpo") {
    for (auto s : rollout_steps) train_outputs.push_back("rollouts/" + step_name("step_", s, ".jsonl"));
  }
  train_outputs.push_back("reports/train_log.jsonl");
  const std::string last_rollouts = "rollouts/" + step_name("step_", train_cfg.total_steps, ".jsonl");
  const std::string checkpoint = config.eval.checkpoint.value_or("checkpoints/final.json");
  const std::string responses = config.patterns.responses.value_or(last_rollouts);

  auto load = [&](const std::string& rel) { return read_instances(abs(rel)); };
  auto resolve = [&](const std::string& p) {
    return fs::path(p).is_absolute() || !fs::exists(root / p) ? p : abs(p);
  };

  std::vector<Stage> stages;
  stages.push_back({"ingest", with_tok({config.ingest.corpus_dir}), {"instances/all.jsonl"},
                    seed_line + toml_text(ingest_table(config.ingest)), [&] {
                      auto tokenizer = make_tokenizer(tok);
                      write_instances(abs("instances/all.jsonl"), ingest_corpus(config.ingest, *tokenizer));
                    }});
  {
    auto inputs = with_tok({"instances/all.jsonl"});
    if (config.score.proxy.starts_with("external:")) inputs.push_back(config.score.proxy.substr(9));
    stages.push_back({"score", inputs, {"scores/scores.jsonl"}, seed_line + toml_text(score_table(config.score)),
                      [&] {
                        auto tokenizer = make_tokenizer(tok);
                        write_scores(abs("scores/scores.jsonl"),
                                     score_instances(load("instances/all.jsonl"), *tokenizer, config.score));
                      }});
  }
  stages.push_back({"filter",
                    {"instances/all.jsonl", "scores/scores.jsonl"},
                    {"instances/filtered.jsonl", "instances/train.jsonl", "instances/heldout.jsonl"},
                    seed_line + toml_text(filter_table(config.filter)),
                    [&] {
                      const auto out = filter_instances(load("instances/all.jsonl"),
                                                        read_scores(abs("scores/scores.jsonl")), config.filter,
                                                        config.seed);
                      write_instances(abs("instances/filtered.jsonl"), out.kept);
                      write_instances(abs("instances/train.jsonl"), out.train);
                      write_instances(abs("instances/heldout.jsonl"), out.heldout);
                    }});
  stages.push_back({"train", with_tok({"instances/train.jsonl", "instances/heldout.jsonl"}), train_outputs,
                    seed_line + toml_text(train_table(config.train)) + toml_text(eval_table(config.eval)), [&] {
                      auto tokenizer = make_tokenizer(tok);
                      auto probe_cfg = config.train;
                      probe_cfg.train = train_cfg;
                      run_training(probe_cfg, *tokenizer, load("instances/train.jsonl"),
                                   load("instances/heldout.jsonl"), config.run_dir, eval_opts);
                    }});
  stages.push_back({"eval", {"instances/heldout.jsonl", "instances/filtered.jsonl", checkpoint},
                    {"reports/eval.json"}, seed_line + toml_text(eval_table(config.eval)), [&] {
                      auto insts = load("instances/heldout.jsonl");
                      if (insts.empty()) insts = load("instances/filtered.jsonl");
                      auto report = evaluate_checkpoint(resolve(checkpoint), insts, eval_opts,
                                                        config.train.train.reward);
                      report.group_size = 1;
                      write_json(abs("reports/eval.json"), report_to_json(report));
                    }});
  {
    std::vector<std::string> inputs{"reports/train_log.jsonl"};
    if (!config.fit.flops_per_token) inputs.push_back("checkpoints/final.json");
    stages.push_back({"fit", inputs, {"reports/scaling_points.jsonl", "reports/scaling_fit.json"},
                    seed_line + toml_text(fit_table(config.fit)), [&] {
                      const auto log = read_train_log(abs("reports/train_log.jsonl"));
                      const double fpt = config.fit.flops_per_token
                                             ? *config.fit.flops_per_token
                                             : default_flops_per_token(abs("checkpoints/final.json"));
                      const auto points = steps_to_compute(log, fpt, config.fit.steps);
                      write_points(abs("reports/scaling_points.jsonl"), points);
                      write_json(abs("reports/scaling_fit.json"), fit_to_json(fit_power_law(points, config.fit.options)));
                    }});
  }
  {
    std::vector<std::string> inputs{responses};
    if (config.patterns.keywords) inputs.push_back(*config.patterns.keywords);
    stages.push_back({"patterns", inputs, {"reports/patterns.json"},
                      seed_line + toml_text(patterns_table(config.patterns)), [&] {
                        const auto table = config.patterns.keywords ? KeywordTable::from_file(*config.patterns.keywords)
                                                                    : KeywordTable::defaults();
                        const auto texts = read_responses(resolve(responses));
                        write_json(abs("reports/patterns.json"), profile_to_json(count_patterns(texts, table)));
                      }});
  }

  const auto manifest_path = root / "manifest.json";
  nlohmann::json manifest;
  manifest["format"] = "ntr-gym-run";
  manifest["version"] = kVersion;
  manifest["seed"] = config.seed;
  manifest["config_sha256"] = sha256_hex(config_to_toml(config));
  nlohmann::json recorded = nlohmann::json::object();
  if (fs::exists(manifest_path)) {
    try {
      const auto previous = read_json(manifest_path.string());
      if (previous.contains("stages")) recorded = previous.at("stages");
    } catch (const Error&) {
      // unreadable manifest: every stage reruns
    }
  }
  auto write_manifest = [&] {
    manifest["stages"] = recorded;
    write_json(manifest_path.string(), OrderedJson(manifest));
  };

  auto input_path = [&](const std::string& p) {
    const fs::path in_run = root / p;
    return fs::path(p).is_absolute() ? fs::path(p) : (fs::exists(in_run) ? in_run : fs::path(p));
  };

  PipelineResult result;
  const std::set<std::string> requested(config.stages.begin(), config.stages.end());
  for (const auto& stage : stages) {
    if (!requested.contains(stage.name)) continue;
    nlohmann::json inputs = nlohmann::json::object();
    for (const auto& p : stage.inputs) {
      const auto path = input_path(p);
      if (!fs::exists(path)) {
        recorded[stage.name] = nlohmann::json{{"status", "incomplete"}, {"error", "missing input " + p}};
        write_manifest();
        throw Error(ErrorCode::dependency, "stage " + stage.name + ": missing input " + path.string());
      }
      inputs[p] = digest(path);
    }
    const auto settings_hash = sha256_hex(stage.settings);

    if (recorded.contains(stage.name)) {
      const auto& prev = recorded[stage.name];
      bool same = prev.value("status", "") == "complete" && prev.value("settings_sha256", "") == settings_hash &&
                  prev.contains("inputs") && prev["inputs"] == inputs && prev.contains("outputs");
      if (same) {
        for (const auto& o : stage.outputs) {
          const auto path = root / o;
          if (!prev["outputs"].contains(o) || !fs::exists(path) || prev["outputs"][o] != digest(path)) {
            same = false;
            break;
          }
        }
      }
      if (same) {
        result.stages.push_back({stage.name, "skipped"});
        continue;
      }
    }

    nlohmann::json entry;
    entry["status"] = "incomplete";
    entry["settings_sha256"] = settings_hash;
    entry["inputs"] = inputs;
    try {
      stage.run();
    } catch (const std::exception& e) {
      const auto* err = dynamic_cast<const Error*>(&e);
      entry["error"] = e.what();
      nlohmann::json outputs = nlohmann::json::object();
      for (const auto& o : stage.outputs) {
        if (fs::exists(root / o)) outputs[o] = digest(root / o);
      }
      entry["outputs"] = outputs;
      recorded[stage.name] = entry;
      write_manifest();
      throw Error(err ? err->code() : ErrorCode::io,
                  "stage " + stage.name + ": " + (err ? err->detail() : std::string(e.what())));
    }
    nlohmann::json outputs = nlohmann::json::object();
    for (const auto& o : stage.outputs) {
      if (!fs::exists(root / o)) {
        throw Error(ErrorCode::io, "stage " + stage.name + ": expected output " + o + " was not written");
      }
      outputs[o] = digest(root / o);
    }
    entry["status"] = "complete";
    entry["outputs"] = outputs;
    recorded[stage.name] = entry;
    write_manifest();
    result.stages.push_back({stage.name, "complete"});
  }
  write_manifest();
  return result;
}

}  // namespace ntr
