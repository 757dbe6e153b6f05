// ntr-gym: command-line front end for the next-token reasoning pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ntr/error.hpp"
#include "ntr/instance_io.hpp"
#include "ntr/pipeline.hpp"
#include "ntr/synthetic.hpp"
#include "ntr/verify.hpp"

namespace fs = std::filesystem;

namespace {

template <typename T>
void set_if(const std::optional<T>& value, T& target) {
  if (value) target = *value;
}

std::string in_run(const ntr::RunConfig& c, const std::string& rel) { return (fs::path(c.run_dir) / rel).string(); }

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

ntr::RunConfig base_config(const Globals& g) {
  ntr::RunConfig c = g.config ? ntr::load_config(*g.config) : ntr::RunConfig{};
  set_if(g.seed, c.seed);
  set_if(g.out_dir, c.run_dir);
  return c;
}

void print_diagnostics(const std::string& stage, const std::vector<std::string>& diags) {
  for (const auto& d : diags) std::cerr << "ntr-gym " << stage << ": " << d << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Next-token reasoning gym"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "TOML run configuration");
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--out-dir", g.out_dir, "Run directory");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Extract next-token instances from a corpus directory");
  std::optional<std::string> ingest_corpus, ingest_tokenizer, ingest_out;
  std::optional<std::size_t> ingest_horizon, ingest_stride, ingest_first;
  ingest->add_option("--corpus", ingest_corpus);
  ingest->add_option("--tokenizer", ingest_tokenizer, "byte | vocab:<file> | external:<file>");
  ingest->add_option("--horizon", ingest_horizon);
  ingest->add_option("--stride", ingest_stride);
  ingest->add_option("--first", ingest_first);
  ingest->add_option("--out", ingest_out);

  // score
  auto* score = app.add_subcommand("score", "Score instances with a next-token distribution proxy");
  std::optional<std::string> score_instances, score_tokenizer, score_proxy, score_out;
  std::optional<double> score_smoothing;
  std::optional<std::size_t> score_topk;
  score->add_option("--instances", score_instances);
  score->add_option("--tokenizer", score_tokenizer);
  score->add_option("--proxy", score_proxy, "ngram:<order> | external:<file>");
  score->add_option("--smoothing", score_smoothing);
  score->add_option("--topk", score_topk, "Entries kept per position");
  score->add_option("--out", score_out);

  // filter
  auto* filter = app.add_subcommand("filter", "Attach entropies and keep hard positions");
  std::optional<std::string> filter_instances_path, filter_scores, filter_out, filter_train_out,
      filter_heldout_out, filter_mode;
  std::optional<double> filter_threshold, filter_easy, filter_medium, filter_hard, filter_holdout;
  std::optional<std::size_t> filter_topk;
  filter->add_option("--instances", filter_instances_path);
  filter->add_option("--scores", filter_scores);
  filter->add_option("--threshold", filter_threshold);
  filter->add_option("--top-k", filter_topk);
  filter->add_option("--easy", filter_easy);
  filter->add_option("--medium", filter_medium);
  filter->add_option("--hard", filter_hard);
  filter->add_option("--entropy-mode", filter_mode, "renormalized | truncated");
  filter->add_option("--holdout-fraction", filter_holdout);
  filter->add_option("--out", filter_out);
  filter->add_option("--train-out", filter_train_out);
  filter->add_option("--heldout-out", filter_heldout_out);

  // train
  auto* train = app.add_subcommand("train", "Train the toy policy with GRPO or next-token prediction");
  std::optional<std::string> train_instances, train_probe, train_tokenizer, train_reward, train_algorithm,
      train_optimizer, train_separator;
  std::optional<std::size_t> train_g, train_batch, train_steps, train_max_tokens, train_ds_start, train_order;
  std::optional<double> train_lr, train_temperature, train_clip, train_fallback;
  std::optional<std::vector<std::size_t>> train_checkpoints, train_probe_steps;
  std::optional<bool> train_emit_end;
  train->add_option("--instances", train_instances);
  train->add_option("--probe-instances", train_probe, "Instances for the accuracy probe");
  train->add_option("--tokenizer", train_tokenizer);
  train->add_option("--algorithm", train_algorithm, "grpo | ntp");
  train->add_option("--reward", train_reward, "prefix | first | dense | cond-dense");
  train->add_option("--fallback-reward", train_fallback);
  train->add_option("--G", train_g, "Group size");
  train->add_option("--batch", train_batch);
  train->add_option("--steps", train_steps);
  train->add_option("--lr", train_lr);
  train->add_option("--temperature", train_temperature);
  train->add_option("--clip", train_clip);
  train->add_option("--max-tokens", train_max_tokens);
  train->add_option("--ds-start", train_ds_start, "First step of dynamic sampling");
  train->add_option("--optimizer", train_optimizer, "sgd | adamw");
  train->add_option("--policy-order", train_order);
  train->add_option("--separator", train_separator);
  train->add_option("--emit-end", train_emit_end);
  train->add_option("--checkpoint-steps", train_checkpoints)->delimiter(',');
  train->add_option("--probe-steps", train_probe_steps)->delimiter(',');

  // eval
  auto* eval = app.add_subcommand("eval", "Per-split next-token accuracy of a checkpoint");
  std::optional<std::string> eval_instances, eval_checkpoint, eval_mode, eval_reward, eval_out;
  std::optional<double> eval_temperature;
  std::optional<std::size_t> eval_max_tokens;
  eval->add_option("--instances", eval_instances);
  eval->add_option("--checkpoint", eval_checkpoint);
  eval->add_option("--mode", eval_mode, "greedy | reasoning");
  eval->add_option("--reward", eval_reward);
  eval->add_option("--temperature", eval_temperature);
  eval->add_option("--max-tokens", eval_max_tokens);
  eval->add_option("--out", eval_out);

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a power law to (compute, accuracy) points");
  std::optional<std::string> fit_points, fit_log, fit_checkpoint, fit_out;
  std::optional<double> fit_flops;
  std::optional<std::vector<std::size_t>> fit_steps;
  fit->add_option("--points", fit_points);
  fit->add_option("--train-log", fit_log, "Derive points from a training log");
  fit->add_option("--flops-per-token", fit_flops);
  fit->add_option("--checkpoint", fit_checkpoint, "Policy whose size sets the default flops per token");
  fit->add_option("--steps", fit_steps)->delimiter(',');
  fit->add_option("--out", fit_out);

  // patterns
  auto* patterns = app.add_subcommand("patterns", "Reasoning-pattern keyword profile of responses");
  std::optional<std::string> patterns_responses, patterns_keywords, patterns_out;
  patterns->add_option("--responses", patterns_responses);
  patterns->add_option("--keywords", patterns_keywords);
  patterns->add_option("--out", patterns_out);

  // verify
  auto* verify = app.add_subcommand("verify", "Score predictions against instances");
  std::optional<std::string> verify_instances, verify_predictions, verify_requests_path, verify_reward, verify_out;
  std::optional<double> verify_fallback;
  verify->add_option("--instances", verify_instances);
  verify->add_option("--predictions", verify_predictions, "Line-paired with --instances");
  verify->add_option("--requests", verify_requests_path, "Self-contained request file");
  verify->add_option("--reward", verify_reward);
  verify->add_option("--fallback-reward", verify_fallback);
  verify->add_option("--out", verify_out);

  // run
  auto* run = app.add_subcommand("run", "Run the configured pipeline stages");
  std::optional<std::vector<std::string>> run_stages;
  std::optional<std::string> run_corpus;
  run->add_option("--stages", run_stages)->delimiter(',');
  run->add_option("--corpus", run_corpus);

  // synth
  auto* synth = app.add_subcommand("synth", "Write the synthetic rule corpus");
  std::optional<std::size_t> synth_docs, synth_vocab;
  std::string synth_out = "synthetic";
  synth->add_option("--documents", synth_docs);
  synth->add_option("--vocab-size", synth_vocab);
  synth->add_option("--out", synth_out);

  // validate
  auto* validate = app.add_subcommand("validate", "Check a configuration and print diagnostics");

  CLI11_PARSE(app, argc, argv);

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    ntr::RunConfig c = base_config(g);
    if (*ingest) {
      set_if(ingest_corpus, c.ingest.corpus_dir);
      set_if(ingest_tokenizer, c.ingest.tokenizer);
      set_if(ingest_horizon, c.ingest.horizon);
      set_if(ingest_stride, c.ingest.stride);
      set_if(ingest_first, c.ingest.first);
      const auto out = ingest_out.value_or(in_run(c, "instances/all.jsonl"));
      auto tokenizer = ntr::make_tokenizer(c.ingest.tokenizer);
      const auto instances = ntr::ingest_corpus(c.ingest, *tokenizer);
      ntr::write_instances(out, instances);
      std::cout << "wrote " << instances.size() << " instances to " << out << '\n';
    } else if (*score) {
      set_if(score_tokenizer, c.ingest.tokenizer);
      set_if(score_proxy, c.score.proxy);
      set_if(score_smoothing, c.score.smoothing);
      set_if(score_topk, c.score.keep);
      const auto instances = ntr::read_instances(score_instances.value_or(in_run(c, "instances/all.jsonl")));
      auto tokenizer = ntr::make_tokenizer(c.ingest.tokenizer);
      const auto out = score_out.value_or(in_run(c, "scores/scores.jsonl"));
      const auto scores = ntr::score_instances(instances, *tokenizer, c.score);
      ntr::write_scores(out, scores);
      std::cout << "wrote " << scores.size() << " distributions to " << out << '\n';
    } else if (*filter) {
      set_if(filter_threshold, c.filter.threshold);
      set_if(filter_topk, c.filter.difficulty.top_k);
      set_if(filter_easy, c.filter.difficulty.easy);
      set_if(filter_medium, c.filter.difficulty.medium);
      set_if(filter_hard, c.filter.difficulty.hard);
      set_if(filter_holdout, c.filter.holdout_fraction);
      if (filter_mode) {
        c.filter.mode = *filter_mode == "truncated" ? ntr::EntropyMode::truncated : ntr::EntropyMode::renormalized;
        if (*filter_mode != "truncated" && *filter_mode != "renormalized") {
          throw ntr::Error(ntr::ErrorCode::configuration, "unknown entropy mode '" + *filter_mode + "'");
        }
      }
      if (const auto d = c.filter.difficulty.diagnostics(); !d.empty()) {
        throw ntr::Error(ntr::ErrorCode::configuration, d.front());
      }
      auto instances = ntr::read_instances(filter_instances_path.value_or(in_run(c, "instances/all.jsonl")));
      const auto scores = ntr::read_scores(filter_scores.value_or(in_run(c, "scores/scores.jsonl")));
      const auto result = ntr::filter_instances(std::move(instances), scores, c.filter, c.seed);
      const auto out = filter_out.value_or(in_run(c, "instances/filtered.jsonl"));
      ntr::write_instances(out, result.kept);
      ntr::write_instances(filter_train_out.value_or(in_run(c, "instances/train.jsonl")), result.train);
      ntr::write_instances(filter_heldout_out.value_or(in_run(c, "instances/heldout.jsonl")), result.heldout);
      std::cout << "kept " << result.kept.size() << " instances (" << result.train.size() << " train, "
                << result.heldout.size() << " held out)\n";
    } else if (*train) {
      auto& t = c.train;
      set_if(train_tokenizer, c.ingest.tokenizer);
      set_if(train_algorithm, t.algorithm);
      if (train_reward) t.train.reward.variant = ntr::parse_reward_variant(*train_reward);
      set_if(train_fallback, t.train.reward.fallback_reward);
      set_if(train_g, t.train.group_size);
      set_if(train_batch, t.train.batch_size);
      set_if(train_steps, t.train.total_steps);
      set_if(train_lr, t.train.learning_rate);
      set_if(train_temperature, t.train.temperature);
      set_if(train_clip, t.train.clip_epsilon);
      set_if(train_max_tokens, t.train.max_response_tokens);
      set_if(train_ds_start, t.train.dynamic_sampling_start_step);
      if (train_optimizer) {
        if (*train_optimizer != "sgd" && *train_optimizer != "adamw") {
          throw ntr::Error(ntr::ErrorCode::configuration, "unknown optimizer '" + *train_optimizer + "'");
        }
        t.train.optimizer = *train_optimizer == "sgd" ? ntr::OptimizerKind::sgd : ntr::OptimizerKind::adamw;
      }
      set_if(train_order, t.policy_order);
      if (train_separator) t.separator = *train_separator;
      set_if(train_emit_end, t.emit_end);
      set_if(train_checkpoints, t.train.checkpoint_steps);
      if (train_probe_steps) t.probe_steps = *train_probe_steps;
      t.train.seed = ntr::derive_seed(c.seed, "train");
      if (t.algorithm == "grpo") {
        if (const auto d = t.train.diagnostics(); !d.empty()) {
          print_diagnostics(stage, d);
          return 2;
        }
      }
      const auto instances = ntr::read_instances(train_instances.value_or(in_run(c, "instances/train.jsonl")));
      std::vector<ntr::NextTokenInstance> probe;
      const auto heldout = in_run(c, "instances/heldout.jsonl");
      if (train_probe) {
        probe = ntr::read_instances(*train_probe);
      } else if (!train_instances && fs::exists(heldout)) {
        probe = ntr::read_instances(heldout);
      }
      auto tokenizer = ntr::make_tokenizer(c.ingest.tokenizer);
      // probe with the response budget the policy is trained under
      auto options = c.eval.options;
      options.max_response_tokens = t.train.max_response_tokens;
      const auto out = ntr::run_training(t, *tokenizer, instances, probe, c.run_dir, options);
      const auto& last = out.log.back();
      std::cout << "trained " << last.step << " steps; final probe accuracy " << last.accuracy_on_eval_probe
                << "; checkpoint " << out.checkpoints.back() << '\n';
    } else if (*eval) {
      if (eval_mode) c.eval.options.mode = ntr::parse_eval_mode(*eval_mode);
      if (eval_reward) c.train.train.reward.variant = ntr::parse_reward_variant(*eval_reward);
      set_if(eval_temperature, c.eval.options.temperature);
      set_if(eval_max_tokens, c.eval.options.max_response_tokens);
      auto options = c.eval.options;
      options.seed = ntr::derive_seed(c.seed, "eval");
      const auto instances = ntr::read_instances(eval_instances.value_or(in_run(c, "instances/heldout.jsonl")));
      const auto checkpoint =
          eval_checkpoint.value_or(c.eval.checkpoint.value_or(in_run(c, "checkpoints/final.json")));
      const auto report = ntr::evaluate_checkpoint(checkpoint, instances, options, c.train.train.reward);
      const auto out = eval_out.value_or(in_run(c, "reports/eval.json"));
      ntr::write_json(out, ntr::report_to_json(report));
      const auto& all = report.at(ntr::kSplitAll);
      std::cout << "accuracy " << all.accuracy.value_or(0.0) << " over " << all.count << " instances\n";
    } else if (*fit) {
      if (fit_flops) c.fit.flops_per_token = *fit_flops;
      if (fit_steps) c.fit.steps = *fit_steps;
      std::vector<ntr::ScalingPoint> points;
      if (fit_points) {
        points = ntr::read_points(*fit_points);
      } else {
        const auto log = ntr::read_train_log(fit_log.value_or(in_run(c, "reports/train_log.jsonl")));
        const double fpt =
            c.fit.flops_per_token
                ? *c.fit.flops_per_token
                : ntr::default_flops_per_token(fit_checkpoint.value_or(in_run(c, "checkpoints/final.json")));
        points = ntr::steps_to_compute(log, fpt, c.fit.steps);
      }
      const auto result = ntr::fit_power_law(points, c.fit.options);
      const auto out = fit_out.value_or(in_run(c, "reports/scaling_fit.json"));
      ntr::write_json(out, ntr::fit_to_json(result));
      std::cout << "A=" << result.a << " alpha=" << result.alpha << " P*=" << result.p_star
                << " R^2=" << result.r_squared << '\n';
    } else if (*patterns) {
      if (patterns_keywords) c.patterns.keywords = *patterns_keywords;
      if (patterns_responses) c.patterns.responses = *patterns_responses;
      if (!c.patterns.responses) {
        throw ntr::Error(ntr::ErrorCode::configuration, "--responses is required");
      }
      const auto table =
          c.patterns.keywords ? ntr::KeywordTable::from_file(*c.patterns.keywords) : ntr::KeywordTable::defaults();
      const auto profile = ntr::count_patterns(ntr::read_responses(*c.patterns.responses), table);
      const auto out = patterns_out.value_or(in_run(c, "reports/patterns.json"));
      ntr::write_json(out, ntr::profile_to_json(profile));
      std::cout << "profiled " << profile.total << " responses\n";
    } else if (*verify) {
      ntr::RewardSpec spec = c.train.train.reward;
      if (verify_reward) spec.variant = ntr::parse_reward_variant(*verify_reward);
      set_if(verify_fallback, spec.fallback_reward);
      std::vector<ntr::VerifyRequest> requests;
      if (verify_requests_path) {
        ntr::read_jsonl(*verify_requests_path, [&](const nlohmann::json& j, std::size_t) {
          requests.push_back(ntr::request_from_json(j));
        });
      } else {
        if (!verify_instances || !verify_predictions) {
          throw ntr::Error(ntr::ErrorCode::configuration, "give --requests, or --instances with --predictions");
        }
        const auto instances = ntr::read_instances(*verify_instances);
        std::size_t n = 0;
        ntr::read_jsonl(*verify_predictions, [&](const nlohmann::json& j, std::size_t line) {
          if (n >= instances.size()) {
            throw ntr::Error(ntr::ErrorCode::structural,
                             "more predictions than instances at line " + std::to_string(line));
          }
          requests.push_back(ntr::request_from_instance(instances[n++], j));
        });
        if (n != instances.size()) {
          throw ntr::Error(ntr::ErrorCode::structural, "predictions and instances differ in length");
        }
      }
      const auto responses = ntr::verify_requests(requests, spec);
      std::vector<ntr::OrderedJson> records;
      for (const auto& r : responses) records.push_back(ntr::response_to_json(r));
      const auto out = verify_out.value_or(in_run(c, "reports/verify.jsonl"));
      ntr::write_jsonl(out, records);
      std::cout << "verified " << records.size() << " predictions\n";
    } else if (*run) {
      if (run_stages) c.stages = *run_stages;
      set_if(run_corpus, c.ingest.corpus_dir);
      if (const auto d = ntr::validate_config(c); !d.empty()) {
        print_diagnostics(stage, d);
        return 2;
      }
      const auto result = ntr::run_pipeline(c);
      for (const auto& s : result.stages) std::cout << s.name << ": " << s.status << '\n';
    } else if (*synth) {
      ntr::RuleCorpusConfig sc;
      sc.seed = c.seed;
      set_if(synth_docs, sc.documents);
      set_if(synth_vocab, sc.vocab_size);
      ntr::write_rule_corpus(ntr::make_rule_corpus(sc), synth_out);
      std::cout << "wrote " << sc.documents << " documents to " << synth_out << "/docs\n";
    } else if (*validate) {
      const auto d = ntr::validate_config(c);
      print_diagnostics(stage, d);
      if (!d.empty()) return 2;
      std::cout << ntr::config_to_toml(c);
    }
  } catch (const ntr::Error& e) {
    std::cerr << "ntr-gym " << stage << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ntr-gym " << stage << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
