#include <doctest.h>

#include <cctype>

#include "ntr/patterns.hpp"
#include "support.hpp"

using namespace ntr;

namespace {

using Groups = std::vector<std::string>;

}  // namespace

TEST_CASE("default table") {
  const auto t = KeywordTable::defaults();
  REQUIRE(t.groups.size() == 6);
  for (const auto* g : kPatternGroups) CHECK(t.groups.contains(g));
  CHECK(t.groups.at("transition") == Groups{"alternatively", "think differently"});
  CHECK(t.groups.at("breakdown") == Groups{"break down", "break this down"});
  CHECK(t.groups.at("hypothesis") == Groups{"probably", "something like"});
  CHECK(t.groups.at("reflection").size() == 5);
  CHECK(t.groups.at("divergent_thinking").size() == 7);
  CHECK(t.groups.at("deduction").size() == 6);
}

TEST_CASE("keyword examples") {
  const auto t = KeywordTable::defaults();
  CHECK(matched_groups("Alternatively, it could be", t) == Groups{"transition"});
  CHECK(matched_groups("Wait, perhaps it is probably x", t) == Groups{"reflection", "hypothesis"});
  CHECK(matched_groups("hello world", t).empty());
  CHECK(matched_groups("LOGICALLY we conclude", t) == Groups{"deduction"});
  // Plain substring: "neither" contains "either".
  CHECK(matched_groups("neither", t) == Groups{"divergent_thinking"});
}

TEST_CASE("worked case response") {
  const auto text = test::slurp(test::fixture("case1_response.txt"));
  REQUIRE_FALSE(text.empty());
  // Hand scan: "Alternatively", "Wait", "probably", "or something" / "either".
  const auto got = matched_groups(text, KeywordTable::defaults());
  CHECK(got == Groups{"transition", "reflection", "hypothesis", "divergent_thinking"});
}

TEST_CASE("profile over a small corpus") {
  const std::vector<std::string> responses{
      "Wait, let me break this down. Probably 4.",
      "alternatively, or something",
      "the answer is 3",
  };
  const auto profile = count_patterns(responses, KeywordTable::defaults());
  CHECK(profile.total == 3);
  CHECK(profile.proportion("reflection") == doctest::Approx(1.0 / 3));
  CHECK(profile.proportion("breakdown") == doctest::Approx(1.0 / 3));
  CHECK(profile.proportion("hypothesis") == doctest::Approx(1.0 / 3));
  CHECK(profile.proportion("transition") == doctest::Approx(1.0 / 3));
  CHECK(profile.proportion("divergent_thinking") == doctest::Approx(1.0 / 3));
  CHECK(profile.proportion("deduction") == 0.0);

  const auto j = profile_to_json(profile);
  CHECK(j["total"] == 3);
  CHECK(j["groups"]["reflection"]["matched"] == 1);
  CHECK(j["groups"]["deduction"]["proportion"] == 0.0);

  CHECK(test::code_of([] { count_patterns({}, KeywordTable::defaults()); }) == ErrorCode::insufficient_data);
}

TEST_CASE("profile properties") {
  std::mt19937_64 rng(3);
  const std::vector<std::string> words{"wait", "Either", "so", "finally", "x", "BREAK DOWN", "the", "maybe"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::vector<std::string> corpus(300);
  for (auto& r : corpus) {
    for (int i = 0; i < 6; ++i) r += words[pick(rng)] + " ";
  }
  const auto table = KeywordTable::defaults();
  const auto base = count_patterns(corpus, table);

  auto upper = corpus;
  std::bernoulli_distribution coin(0.5);
  for (auto& r : upper) {
    for (auto& c : r) {
      if (coin(rng)) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
  }
  CHECK(count_patterns(upper, table).matched == base.matched);
  CHECK(count_patterns(corpus, table).matched == base.matched);

  for (const auto* g : kPatternGroups) {
    auto bigger = table;
    bigger.groups[g].push_back("maybe");
    REQUIRE(count_patterns(corpus, bigger).matched[g] >= base.matched.at(g));
    CHECK(base.matched.at(g) <= base.total);
  }
}

TEST_CASE("keyword overrides") {
  const auto t = KeywordTable::with_overrides(nlohmann::json{{"deduction", {"therefore"}}});
  CHECK(t.groups.at("deduction") == Groups{"therefore"});
  CHECK(t.groups.at("transition") == KeywordTable::defaults().groups.at("transition"));
  CHECK(test::code_of([] { KeywordTable::with_overrides(nlohmann::json{{"other", {"x"}}}); }) ==
        ErrorCode::configuration);
  CHECK(test::code_of([] { KeywordTable::with_overrides(nlohmann::json{{"deduction", {""}}}); }) ==
        ErrorCode::configuration);
  CHECK(test::code_of([] { KeywordTable::with_overrides(nlohmann::json::array()); }) ==
        ErrorCode::configuration);
}

TEST_CASE("response files") {
  const auto dir = test::scratch("patterns");
  test::spit(dir / "r.jsonl",
             "{\"response\":\"wait\"}\n"
             "{\"raw_text\":\"probably\"}\n"
             "{\"doc_id\":\"d\",\"t\":1,\"responses\":[{\"raw_text\":\"a\"},{\"raw_text\":\"b\"}]}\n");
  CHECK(read_responses((dir / "r.jsonl").string()) == Groups{"wait", "probably", "a", "b"});
}
