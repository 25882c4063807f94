#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <map>
#include <random>
#include <set>

#include "memsum/errors.hpp"
#include "memsum/experiments.hpp"
#include "memsum/oracle.hpp"
#include "reference.hpp"

using namespace memsum;

namespace {

double r12_of(const Document& doc, const std::vector<std::size_t>& order) {
  std::vector<TokenList> ex;
  for (auto i : order) ex.push_back(doc.sentences[i]);
  return reference::mean_r12(ex, doc.gold_summary);
}

OracleConfig unbounded(std::size_t b) {
  OracleConfig c;
  c.branching = b;
  c.beam_cap = OracleConfig::kUnbounded;
  return c;
}

}  // namespace

TEST_CASE("incremental scorer agrees with the naive mean of R1 and R2") {
  const auto docs = random_small_documents(30, 8, 5);
  std::mt19937_64 rng(1);
  for (const auto& doc : docs) {
    R12Scorer scorer(doc);
    auto state = scorer.empty_state();
    CHECK(scorer.score(state) == 0.0);
    std::vector<std::size_t> order(doc.sentences.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> prefix;
    for (auto i : order) {
      const double predicted = scorer.score_with(state, i);
      scorer.append(state, i);
      prefix.push_back(i);
      CHECK(scorer.score(state) == doctest::Approx(predicted).epsilon(1e-12));
      CHECK(std::abs(scorer.score(state) - r12_of(doc, prefix)) < 1e-12);
    }
  }
}

TEST_CASE("branching factor one reproduces the greedy oracle") {
  for (const auto& doc : random_small_documents(40, 8, 11)) {
    const auto set = build_episode_set(doc, unbounded(1));
    const auto greedy = greedy_oracle_summary(doc, 7);
    REQUIRE(set.size() <= 1);
    if (set.empty()) {
      CHECK(greedy.indices.empty());
    } else {
      CHECK(set.front() == greedy);
    }
  }
}

TEST_CASE("branching search dominates single sentences and greedy") {
  for (const auto& doc : random_small_documents(60, 8, 12)) {
    const auto set = build_episode_set(doc, unbounded(2));
    REQUIRE_FALSE(set.empty());
    double best = 0.0;
    for (const auto& e : set) best = std::max(best, r12_of(doc, e.indices));
    double single = 0.0;
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) single = std::max(single, r12_of(doc, {i}));
    const auto greedy = greedy_oracle_summary(doc, 7);
    CHECK(best >= single - 1e-12);
    CHECK(best >= r12_of(doc, greedy.indices) - 1e-12);
  }
}

TEST_CASE("episodes are well formed") {
  OracleConfig cfg;
  cfg.branching = 3;
  cfg.max_sentences = 4;
  for (const auto& doc : random_small_documents(30, 8, 13)) {
    const auto set = build_episode_set(doc, cfg);
    std::set<std::vector<std::size_t>> keys;
    for (std::size_t k = 0; k < set.size(); ++k) {
      const auto& e = set[k];
      CHECK_FALSE(e.indices.empty());
      CHECK(e.indices.size() <= cfg.max_sentences);
      auto key = e.indices;
      std::sort(key.begin(), key.end());
      CHECK(std::adjacent_find(key.begin(), key.end()) == key.end());
      CHECK(keys.insert(key).second);
      std::vector<TokenList> ex;
      for (auto i : e.indices) ex.push_back(doc.sentences[i]);
      CHECK(std::abs(e.reward - reference::eq1(ex, doc.gold_summary)) < 1e-12);
      if (k > 0) CHECK(set[k - 1].reward >= e.reward);
      // Every prefix strictly improves mean(R1, R2).
      for (std::size_t t = 1; t < e.indices.size(); ++t) {
        std::vector<std::size_t> a(e.indices.begin(), e.indices.begin() + t);
        std::vector<std::size_t> b(e.indices.begin(), e.indices.begin() + t + 1);
        CHECK(r12_of(doc, b) > r12_of(doc, a));
      }
    }
  }
}

TEST_CASE("beam cap bounds the search and keeps the best single sentence") {
  OracleConfig capped;
  capped.branching = 2;
  capped.beam_cap = 2;
  for (const auto& doc : random_small_documents(20, 8, 14)) {
    const auto set = build_episode_set(doc, capped);
    const auto full = build_episode_set(doc, unbounded(2));
    CHECK(set.size() <= full.size());
    CHECK(set.size() <= capped.beam_cap * capped.max_sentences);
    double best = 0.0, single = 0.0;
    for (const auto& e : set) best = std::max(best, r12_of(doc, e.indices));
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) single = std::max(single, r12_of(doc, {i}));
    CHECK(best >= single - 1e-12);
  }
  OracleConfig bad;
  bad.branching = 3;
  bad.beam_cap = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("greedy oracle on a hand-built document") {
  const auto doc = make_document("d", {"alpha beta gamma", "delta epsilon", "alpha beta"}, {"alpha beta gamma"});
  const auto e = greedy_oracle_summary(doc, 7);
  CHECK(e.indices == std::vector<std::size_t>{0});
  CHECK(e.reward == doctest::Approx(1.0));
  const auto none = greedy_oracle_summary(make_document("n", {"x y"}, {"z w"}), 7);
  CHECK(none.indices.empty());
  CHECK(none.reward == 0.0);
}

TEST_CASE("oracle rejects empty inputs") {
  Document empty;
  CHECK_THROWS_AS(build_episode_set(empty, OracleConfig()), std::invalid_argument);
  auto no_gold = make_document("g", {"a b"}, {});
  CHECK_THROWS_AS(greedy_oracle_summary(no_gold, 3), std::invalid_argument);
  OracleConfig bad;
  bad.branching = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("training episodes are sampled uniformly and shuffled") {
  const std::vector<Episode> eps{{{0, 1, 2}, 0.5}, {{3, 4}, 0.4}, {{5}, 0.3}};
  std::mt19937_64 rng(3);
  std::map<double, int> counts;
  std::map<std::vector<std::size_t>, int> orders;
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) {
    const auto e = sample_training_episode(eps, rng);
    counts[e.reward]++;
    if (e.reward == 0.5) {
      orders[e.indices]++;
      auto sorted = e.indices;
      std::sort(sorted.begin(), sorted.end());
      CHECK(sorted == eps[0].indices);
    }
  }
  for (const auto& [r, n] : counts) CHECK(std::abs(n / double(draws) - 1.0 / 3.0) < 0.02);
  CHECK(orders.size() == 6);
  for (const auto& [o, n] : orders) CHECK(std::abs(n / double(counts[0.5]) - 1.0 / 6.0) < 0.03);
  CHECK_THROWS(sample_training_episode({}, rng));
}

TEST_CASE("out-of-range episodes are dropped") {
  const std::vector<Episode> eps{{{0, 4}, 0.5}, {{1, 2}, 0.4}, {{5}, 0.3}};
  const auto kept = drop_out_of_range(eps, 5);
  REQUIRE(kept.size() == 2);
  CHECK(kept[1].indices == std::vector<std::size_t>{1, 2});
}

TEST_CASE("episode cache round trip") {
  const auto path = std::filesystem::temp_directory_path() / "memsum_episode_cache_test.jsonl";
  const std::vector<EpisodeCacheRecord> recs{{"a", {{{2, 0}, 0.25}, {{1}, 0.125}}}, {"b", {}}};
  write_episode_cache(path, recs);
  const auto back = read_episode_cache(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "a");
  CHECK(back[0].episodes == recs[0].episodes);
  CHECK(back[1].episodes.empty());
  {
    std::ofstream out(path, std::ios::app);
    out << "{not json\n";
  }
  CHECK_THROWS_AS(read_episode_cache(path), FormatError);
  std::filesystem::remove(path);
}
