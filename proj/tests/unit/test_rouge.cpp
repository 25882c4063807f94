#include <doctest.h>

#include <random>

#include "memsum/corpus.hpp"
#include "memsum/rouge.hpp"
#include "../support/reference.hpp"

using namespace memsum;

namespace {
TokenList toks(const char* s) { return tokenize(s); }
}  // namespace

TEST_CASE("rouge-n hand counts") {
  CHECK(rouge_n(toks("the cat sat"), toks("the cat"), 1).f1 == doctest::Approx(0.8));
  CHECK(rouge_n(toks("a b c d"), toks("a b c e"), 2).f1 == doctest::Approx(2.0 / 3.0));
  CHECK(rouge_n(toks("x y z"), toks("x y z"), 2).f1 == doctest::Approx(1.0));
  CHECK(rouge_n(toks("x y z"), toks("x y z"), 3).f1 == doctest::Approx(1.0));
  CHECK_THROWS_AS(rouge_n(toks("a"), toks("a"), 0), std::invalid_argument);
}

TEST_CASE("rouge-n clips repeated n-grams") {
  const auto s = rouge_n(toks("the the the"), toks("the cat"), 1);
  CHECK(s.precision == doctest::Approx(1.0 / 3.0));
  CHECK(s.recall == doctest::Approx(0.5));
}

TEST_CASE("rouge-l hand counts") {
  CHECK(rouge_l(toks("a c b"), toks("a b c")).f1 == doctest::Approx(2.0 / 3.0));
  CHECK(rouge_l(toks("a b"), toks("a b")).f1 == doctest::Approx(1.0));
  CHECK(rouge_l(toks("a b"), toks("c d")).f1 == 0.0);
}

TEST_CASE("scores ignore tokens without letters or digits") {
  CHECK(rouge_n(toks("the cat ."), toks("the cat"), 1).f1 == doctest::Approx(1.0));
  CHECK(rouge_l(toks(", ."), toks("a")).f1 == 0.0);
}

TEST_CASE("empty sides score zero") {
  CHECK(rouge_n({}, toks("a b"), 1).f1 == 0.0);
  CHECK(rouge_n(toks("a"), toks("a b"), 2).f1 == 0.0);
  CHECK(rouge_l({}, {}).f1 == 0.0);
}

TEST_CASE("episode reward") {
  const std::vector<TokenList> gold{toks("the cat")};
  CHECK(episode_reward(gold, gold).value == doctest::Approx(1.0));
  CHECK(episode_reward({}, gold).value == 0.0);
  // R1 = 0.8, R2 = 2/3 (one shared bigram of two vs one), RL = 0.8.
  const auto r = episode_reward(std::vector<TokenList>{toks("the cat sat")}, gold);
  CHECK(r.rouge1 == doctest::Approx(0.8));
  CHECK(r.rouge2 == doctest::Approx(2.0 / 3.0));
  CHECK(r.rouge_l == doctest::Approx(0.8));
  CHECK(r.value == doctest::Approx((0.8 + 2.0 / 3.0 + 0.8) / 3.0));
}

TEST_CASE("episode reward honours extraction order") {
  const std::vector<TokenList> gold{toks("a b c d")};
  const std::vector<TokenList> forward{toks("a b"), toks("c d")};
  const std::vector<TokenList> backward{toks("c d"), toks("a b")};
  CHECK(episode_reward(forward, gold).value > episode_reward(backward, gold).value);
  CHECK(episode_reward(forward, gold).rouge1 == doctest::Approx(episode_reward(backward, gold).rouge1));
}

TEST_CASE("mean r12 gain") {
  const std::vector<TokenList> gold{toks("the cat sat on the mat")};
  CHECK(mean_r12_gain({}, gold[0], gold) == doctest::Approx(1.0));
  const std::vector<TokenList> current{gold[0]};
  CHECK(mean_r12_gain(current, toks("the cat"), gold) <= 0.0);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<TokenList> cur{reference::random_tokens(rng, 10), reference::random_tokens(rng, 10)};
    const auto cand = reference::random_tokens(rng, 10);
    const std::vector<TokenList> g{reference::random_tokens(rng, 12)};
    auto with = cur;
    with.push_back(cand);
    CHECK(mean_r12_gain(cur, cand, g) ==
          doctest::Approx(reference::mean_r12(with, g) - reference::mean_r12(cur, g)).epsilon(1e-12));
  }
}

TEST_CASE("symmetry and bounds on random pairs") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto a = reference::random_tokens(rng, 20);
    const auto b = reference::random_tokens(rng, 20);
    for (int n : {1, 2}) {
      const auto ab = rouge_n(a, b, n), ba = rouge_n(b, a, n);
      CHECK(ab.f1 == doctest::Approx(ba.f1));
      CHECK(ab.precision == doctest::Approx(ba.recall));
      CHECK(ab.f1 >= 0.0);
      CHECK(ab.f1 <= 1.0);
    }
    CHECK(rouge_l(a, b).f1 == doctest::Approx(rouge_l(b, a).f1));
    CHECK(lcs_length(a, b) <= std::min(a.size(), b.size()));
  }
}

TEST_CASE("porter stemmer and stemming option") {
  CHECK(porter_stem("caresses") == "caress");
  CHECK(porter_stem("ponies") == "poni");
  CHECK(porter_stem("running") == "run");
  CHECK(porter_stem("relational") == "relat");
  CHECK(porter_stem("hopeful") == "hope");
  RougeOptions stem{true};
  CHECK(rouge_n(toks("cats running"), toks("cat runs"), 1, stem).f1 == doctest::Approx(1.0));
  CHECK(rouge_n(toks("cats running"), toks("cat runs"), 1).f1 == 0.0);
}
