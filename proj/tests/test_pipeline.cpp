#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "ntr/pipeline.hpp"
#include "ntr/synthetic.hpp"
#include "ntr/verify.hpp"
#include "support.hpp"

using namespace ntr;
namespace fs = std::filesystem;

namespace {

// Small rule corpus and a config that runs every stage in a second or two.
RunConfig small_run(const fs::path& dir) {
  RuleCorpusConfig rc;
  rc.documents = 60;
  rc.seed = 4;
  write_rule_corpus(make_rule_corpus(rc), (dir / "corpus").string());

  RunConfig c;
  c.seed = 11;
  c.run_dir = (dir / "run").string();
  c.ingest.corpus_dir = (dir / "corpus" / "docs").string();
  c.ingest.tokenizer = "vocab:" + (dir / "corpus" / "vocab.json").string();
  c.ingest.horizon = 4;
  c.ingest.first = 3;
  c.score.proxy = "ngram:1";
  c.train.train.total_steps = 20;
  c.train.train.batch_size = 8;
  c.train.train.group_size = 4;
  c.train.train.max_response_tokens = 2;
  c.train.train.checkpoint_steps = {5, 10, 15, 20};
  c.train.emit_end = false;
  c.eval.options.max_response_tokens = 2;
  return c;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = test::slurp(e.path());
  }
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(NTR_GYM) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config round trip and validation") {
  CHECK(validate_config(RunConfig{}).empty());

  RunConfig c;
  c.seed = 123456789012345ULL;
  c.stages = {"ingest", "score"};
  c.ingest.tokenizer = "vocab:v.json";
  c.filter.threshold = 1.25;
  c.filter.mode = EntropyMode::truncated;
  c.train.train.reward.variant = RewardVariant::conditional_dense;
  c.train.train.reward.fallback_reward = 0.01;
  c.train.train.optimizer = OptimizerKind::adamw;
  c.train.separator = ";";
  c.train.probe_steps = std::vector<std::size_t>{1, 2, 3};
  c.eval.options.mode = EvalMode::greedy;
  c.eval.thresholds = std::vector<double>{0.5, 1.0, 1.5};
  c.fit.flops_per_token = 6e3;
  c.patterns.responses = "r.jsonl";
  const auto text = config_to_toml(c);
  const auto back = config_from_toml(text);
  CHECK(config_to_toml(back) == text);
  CHECK(back.seed == c.seed);
  CHECK(back.train.separator == ";");
  CHECK(back.filter.mode == EntropyMode::truncated);
  CHECK(back.fit.flops_per_token == 6e3);

  CHECK(test::code_of([] { config_from_toml("[ingest]\nbogus = 1\n"); }) == ErrorCode::configuration);
  CHECK(test::code_of([] { config_from_toml("[ingest\n"); }) == ErrorCode::parse);

  RunConfig bad;
  bad.filter.difficulty.medium = 0.4;
  auto d = validate_config(bad);
  REQUIRE_FALSE(d.empty());
  CHECK(d.front().starts_with("filter:"));

  bad = RunConfig{};
  bad.train.train.group_size = 1;
  d = validate_config(bad);
  REQUIRE(d.size() == 1);
  CHECK(d.front().find("advantages need two rewards") != std::string::npos);

  bad = RunConfig{};
  bad.eval.thresholds = std::vector<double>{0.5, 1.2, 1.5};
  CHECK(validate_config(bad).size() == 1);
  bad = RunConfig{};
  bad.stages = {"ingest", "ingest", "launch"};
  CHECK(validate_config(bad).size() == 2);
}

TEST_CASE("pipeline smoke run, determinism and stage isolation") {
  const auto dir = test::scratch("pipeline");
  const auto config = small_run(dir);
  const fs::path run(config.run_dir);

  const auto first = run_pipeline(config);
  REQUIRE(first.stages.size() == kStageOrder.size());
  for (const auto& s : first.stages) CHECK(s.status == "complete");
  for (const char* f : {"instances/all.jsonl", "instances/filtered.jsonl", "instances/train.jsonl",
                        "instances/heldout.jsonl", "scores/scores.jsonl", "checkpoints/final.json",
                        "checkpoints/step_000010.json", "rollouts/step_000020.jsonl", "reports/eval.json",
                        "reports/train_log.jsonl", "reports/scaling_points.jsonl", "reports/scaling_fit.json",
                        "reports/patterns.json", "manifest.json"}) {
    CHECK_MESSAGE(fs::exists(run / f), std::string(f));
  }
  const auto manifest = nlohmann::json::parse(test::slurp(run / "manifest.json"));
  for (const auto& s : kStageOrder) CHECK(manifest["stages"][s]["status"] == "complete");

  // Fresh rerun into the same directory: everything byte-identical except the
  // wall-clock column of the training log.
  const auto a = snapshot(run);
  fs::remove_all(run);
  run_pipeline(config);
  const auto b = snapshot(run);
  REQUIRE(a.size() == b.size());
  for (const auto& [name, bytes] : a) {
    if (name == "reports/train_log.jsonl") continue;
    CHECK_MESSAGE(b.at(name) == bytes, name);
  }
  auto strip = [](const std::string& text) {
    std::string out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      auto j = nlohmann::json::parse(line);
      j.erase("wall_time");
      out += j.dump() + "\n";
    }
    return out;
  };
  CHECK(strip(a.at("reports/train_log.jsonl")) == strip(b.at("reports/train_log.jsonl")));

  // Unchanged rerun skips everything.
  for (const auto& s : run_pipeline(config).stages) CHECK(s.status == "skipped");

  // Deleting a downstream artifact regenerates only its stage.
  fs::remove(run / "reports/eval.json");
  for (const auto& s : run_pipeline(config).stages) {
    CHECK_MESSAGE(s.status == (s.name == "eval" ? "complete" : "skipped"), s.name);
  }
  CHECK(test::slurp(run / "reports/eval.json") == a.at("reports/eval.json"));

  // Missing train input.
  fs::remove(run / "instances/train.jsonl");
  auto only_train = config;
  only_train.stages = {"train"};
  try {
    run_pipeline(only_train);
    FAIL("expected a dependency error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::dependency);
    CHECK(std::string(e.what()).find("instances/train.jsonl") != std::string::npos);
    CHECK(std::string(e.what()).find("stage train") != std::string::npos);
  }
  const auto after = nlohmann::json::parse(test::slurp(run / "manifest.json"));
  CHECK(after["stages"]["train"]["status"] == "incomplete");
}

TEST_CASE("verify requests") {
  RewardSpec spec;
  nlohmann::json ok = {{"context_b64", base64_encode("x")},
                       {"completion_b64", base64_encode(" the cat")},
                       {"boundaries", {4, 8}},
                       {"prediction_raw", "hmm</think>\\boxed{ the}"}};
  nlohmann::json miss = ok;
  miss["prediction_raw"] = "no marker";
  nlohmann::json broken = ok;
  broken["boundaries"] = {9};
  const std::vector<VerifyRequest> reqs{request_from_json(ok), request_from_json(miss), request_from_json(broken),
                                        request_from_json(nlohmann::json::object())};
  const auto out = verify_requests(reqs, spec);
  REQUIRE(out.size() == 4);
  CHECK(out[0].reward == 1.0);
  CHECK(out[0].matched_boundary == 4);
  CHECK(out[1].reward == 0.0);
  CHECK_FALSE(out[1].error.has_value());
  CHECK(out[2].error.has_value());
  CHECK(out[3].error.has_value());
  CHECK(response_to_json(out[0])["reward"] == 1.0);
}

TEST_CASE("command line") {
  const auto dir = test::scratch("cli");
  const auto d = dir.string();
  CHECK(run_cli("--seed 3 synth --documents 40 --out " + d + "/corpus") == 0);
  CHECK(fs::exists(dir / "corpus" / "vocab.json"));
  const auto tok = " --tokenizer vocab:" + d + "/corpus/vocab.json";
  CHECK(run_cli("--out-dir " + d + "/run ingest --corpus " + d + "/corpus/docs --first 3" + tok) == 0);
  CHECK(run_cli("--out-dir " + d + "/run score --proxy ngram:1" + tok) == 0);
  CHECK(run_cli("--out-dir " + d + "/run filter") == 0);
  CHECK(run_cli("--out-dir " + d + "/run train --steps 8 --batch 4 --G 4 --checkpoint-steps 2,4,6,8 --emit-end false"
                " --max-tokens 1" + tok) == 0);
  CHECK(run_cli("--out-dir " + d + "/run eval") == 0);
  CHECK(run_cli("--out-dir " + d + "/run fit") == 0);
  CHECK(run_cli("--out-dir " + d + "/run patterns --responses " + d + "/run/rollouts/step_000008.jsonl") == 0);
  for (const char* f : {"instances/all.jsonl", "scores/scores.jsonl", "instances/train.jsonl",
                        "checkpoints/final.json", "reports/eval.json", "reports/scaling_fit.json",
                        "reports/patterns.json"}) {
    CHECK_MESSAGE(fs::exists(dir / "run" / f), std::string(f));
  }

  CHECK(run_cli("--out-dir " + d + "/run train --G 1" + tok) == 2);
  CHECK(run_cli("--out-dir " + d + "/nowhere train" + tok) == 1);
  CHECK(run_cli("--out-dir " + d + "/run fit --points " + d + "/missing.jsonl") == 1);
  CHECK(run_cli("bogus-command") != 0);

  test::spit(dir / "bad.toml", "seed = 1\n[train]\ngroup_size = 1\n");
  CHECK(run_cli("--config " + d + "/bad.toml validate") == 2);
  test::spit(dir / "good.toml", "seed = 1\n");
  CHECK(run_cli("--config " + d + "/good.toml validate") == 0);

  test::spit(dir / "req.jsonl", "{\"context_b64\":\"\",\"completion_b64\":\"" + base64_encode("ab") +
                                    "\",\"boundaries\":[1,2],\"prediction_raw\":\"</think>\\\\boxed{a}\"}\n");
  CHECK(run_cli("--out-dir " + d + "/run verify --requests " + d + "/req.jsonl --out " + d + "/v.jsonl") == 0);
  const auto v = nlohmann::json::parse(test::slurp(dir / "v.jsonl"));
  CHECK(v["reward"] == 1.0);
}
