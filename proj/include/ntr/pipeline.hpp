#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntr/corpus.hpp"
#include "ntr/entropy.hpp"
#include "ntr/eval.hpp"
#include "ntr/grpo.hpp"
#include "ntr/patterns.hpp"
#include "ntr/scaling.hpp"

namespace ntr {

inline constexpr const char* kVersion = "0.1.0";

inline const std::vector<std::string> kStageOrder = {"ingest", "score",   "filter",  "train",
                                                     "eval",   "fit",     "patterns"};

struct IngestConfig {
  std::string corpus_dir = "corpus";
  std::string tokenizer = "byte";
  std::size_t horizon = kDefaultHorizonTokens;
  std::size_t stride = 1;
  std::size_t first = 1;
};

struct ScoreConfig {
  std::string proxy = "ngram:2";  // or external:<file>
  double smoothing = 1.0;
  std::size_t keep = 16;          // entries written per position; 0 keeps all
};

struct FilterConfig {
  double threshold = 0.5;
  DifficultyConfig difficulty;
  EntropyMode mode = EntropyMode::renormalized;
  double holdout_fraction = 0.2;  // documents held out for evaluation
};

struct TrainStageConfig {
  std::string algorithm = "grpo";  // or ntp
  TrainConfig train;
  std::size_t policy_order = 2;
  bool emit_end = true;
  std::optional<std::string> separator;  // token bytes
  std::optional<std::vector<std::size_t>> probe_steps;  // defaults to checkpoint steps
  std::size_t rollout_keep = 16;  // groups written per checkpoint step
};

struct EvalStageConfig {
  EvalOptions options;
  std::optional<std::string> checkpoint;  // defaults to the run's final checkpoint
  // Thresholds the report's split names are read against; must match filter.
  std::optional<std::vector<double>> thresholds;
};

struct FitConfig {
  // Unset: 6 x parameter count of the trained policy.
  std::optional<double> flops_per_token;
  std::optional<std::vector<std::size_t>> steps;
  FitOptions options;
};

struct PatternsConfig {
  std::optional<std::string> responses;  // defaults to the run's rollouts
  std::optional<std::string> keywords;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string run_dir = "run";
  std::vector<std::string> stages = kStageOrder;
  IngestConfig ingest;
  ScoreConfig score;
  FilterConfig filter;
  TrainStageConfig train;
  EvalStageConfig eval;
  FitConfig fit;
  PatternsConfig patterns;
};

std::string config_to_toml(const RunConfig& config);
RunConfig config_from_toml(std::string_view text);
RunConfig load_config(const std::string& path);

// Schema and cross-stage checks; never throws.
std::vector<std::string> validate_config(const RunConfig& config);

// ---- stage functions, shared by the CLI subcommands and run_pipeline ----

std::vector<NextTokenInstance> ingest_corpus(const IngestConfig& config, const Tokenizer& tokenizer);

// Document prefixes recovered from instances: for each document the longest
// context + completion. Ordered by doc_id.
std::vector<Document> reconstruct_documents(std::span<const NextTokenInstance> instances);

// Distribution for every instance, ordered like `instances`.
std::vector<NextTokenDistribution> score_instances(std::span<const NextTokenInstance> instances,
                                                   const Tokenizer& tokenizer, const ScoreConfig& config);

struct FilterOutput {
  std::vector<NextTokenInstance> kept;
  std::vector<NextTokenInstance> train;
  std::vector<NextTokenInstance> heldout;
};

// Attaches entropy and splits, keeps entropy > threshold, then assigns whole
// documents to the held-out set by a seeded hash of the doc id.
FilterOutput filter_instances(std::vector<NextTokenInstance> instances,
                              std::span<const NextTokenDistribution> scores, const FilterConfig& config,
                              std::uint64_t seed);

// Token byte strings for a policy over `tokenizer`'s vocabulary. External
// tokenizations learn them from the instance texts; unknown ids get "".
std::vector<Bytes> policy_vocabulary(Tokenizer& tokenizer, std::span<const NextTokenInstance> instances);

struct TrainStageOutput {
  std::vector<TrainLogRecord> log;
  std::vector<std::string> checkpoints;  // paths written, final last
  std::vector<std::string> rollouts;
};

// Writes <out>/checkpoints/step_NNNNNN.json, <out>/checkpoints/final.json,
// <out>/rollouts/step_NNNNNN.jsonl and <out>/reports/train_log.jsonl. The
// probe is reasoning-mode accuracy on `probe_instances` (train set if empty).
TrainStageOutput run_training(const TrainStageConfig& config, Tokenizer& tokenizer,
                              std::span<const NextTokenInstance> train,
                              std::span<const NextTokenInstance> probe_instances, const std::string& out_dir,
                              const EvalOptions& probe_options);

// 6 x parameter count of the policy stored in a checkpoint.
double default_flops_per_token(const std::string& checkpoint_path);

EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                               std::span<const NextTokenInstance> instances, const EvalOptions& options,
                               const RewardSpec& reward = {});

// ---- orchestration ----

struct StageRecord {
  std::string name;
  std::string status;  // complete, incomplete, skipped
};

struct PipelineResult {
  std::vector<StageRecord> stages;
};

/// Runs the configured stages in dependency order under `config.run_dir`:
/// instances/, scores/, rollouts/, checkpoints/, reports/, manifest.json.
/// A stage whose recorded inputs, outputs and settings are unchanged is
/// skipped. On failure the stage is marked incomplete in the manifest and the
/// error is rethrown with the stage name.
PipelineResult run_pipeline(const RunConfig& config);

// Stable digest of a directory tree (relative paths and file hashes).
std::string hash_directory(const std::string& dir);

}  // namespace ntr
