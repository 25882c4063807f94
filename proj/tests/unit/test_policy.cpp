#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "memsum/experiments.hpp"
#include "memsum/policy.hpp"
#include "grad_cases.hpp"

using namespace memsum;
using ad::Graph;
using ad::Var;

namespace {

struct Fixture {
  std::vector<Document> docs;
  Vocabulary vocab;
  EmbeddingTable emb;
  CorpusConfig corpus;

  explicit Fixture(std::size_t dim = 8) {
    SyntheticCorpusConfig sc;
    sc.documents = 12;
    sc.sentences = 7;
    sc.seed = 4;
    docs = synthetic_corpus(sc);
    corpus.max_sentence_tokens = 12;
    corpus.max_document_sentences = 7;
    vocab = build_vocabulary(docs, 1, corpus);
    emb = random_embedding_table(vocab, dim, 2);
    for (auto& v : emb.matrix.values()) v *= 20.0;
  }
  EncodedDocument encode(std::size_t i) const { return encode_document(docs[i], vocab, corpus); }
};

ExtractionState random_state(std::mt19937_64& rng, std::size_t n, std::size_t extracted) {
  auto st = ExtractionState::initial(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k < extracted; ++k) st.select(order[k]);
  return st;
}

std::vector<double> flat(const ad::Matrix<double>& m) { return {m.values().begin(), m.values().end()}; }

}  // namespace

TEST_CASE("variant names round trip") {
  for (auto v : {Variant::full, Variant::no_lse, Variant::no_gce, Variant::no_ehe, Variant::gru_ehe,
                 Variant::no_auto_stop, Variant::stop_sentence}) {
    CHECK(parse_variant(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("bogus"), std::invalid_argument);
}

TEST_CASE("config validation") {
  PolicyConfig c = gradcases::small_policy();
  CHECK_NOTHROW(c.validate());
  c.dim = 7;
  CHECK_THROWS(c.validate());
  c = gradcases::small_policy();
  c.heads = 3;
  CHECK_THROWS(c.validate());
  c = gradcases::small_policy();
  c.dropout = 1.0;
  CHECK_THROWS(c.validate());
  c = gradcases::small_policy(Variant::no_auto_stop);
  c.fixed_k = 0;
  CHECK_THROWS(c.validate());
  Fixture f;
  CHECK_THROWS_AS(Policy<double>(gradcases::small_policy(), random_embedding_table(f.vocab, 6)),
                  std::invalid_argument);
}

TEST_CASE("extraction state bookkeeping") {
  auto st = ExtractionState::initial(4);
  st.select(2);
  st.select(0);
  CHECK(st.step() == 2);
  CHECK(st.remaining == std::vector<std::size_t>{1, 3});
  CHECK(st.extracted_set() == std::vector<std::size_t>{0, 2});
  CHECK_FALSE(st.is_remaining(2));
  CHECK_THROWS_AS(st.select(2), std::invalid_argument);
}

TEST_CASE("action distribution sums to one over random parameter draws") {
  Fixture f;
  std::mt19937_64 rng(8);
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    Policy<double> policy(gradcases::small_policy(), f.emb, draw);
    const auto enc = f.encode(draw % f.docs.size());
    Graph<double> g(false);
    const auto states = policy.encode(g, enc);
    const auto st = random_state(rng, states.sentences, draw % states.sentences);
    const auto out = policy.step(g, states, st);
    const auto dist = policy.distribution(g, out);
    CHECK(std::abs(dist.total_mass() - 1.0) <= 1e-6);
    CHECK(dist.remaining == st.remaining);
    for (double u : dist.scores) CHECK((u > 0.0 && u < 1.0));

    // log pi agrees with the plain-value distribution.
    const auto norm = dist.normalized();
    double mass = 0.0;
    for (std::size_t k = 0; k < st.remaining.size(); ++k) {
      const double lp = g.item(policy.action_log_prob(g, out, Action::select(st.remaining[k])));
      CHECK(std::exp(lp) == doctest::Approx((1.0 - dist.p_stop) * norm[k]).epsilon(1e-9));
      mass += std::exp(lp);
    }
    const double stop = g.item(policy.action_log_prob(g, out, Action::stop_action()));
    CHECK(std::exp(stop) == doctest::Approx(dist.p_stop / st.remaining.size()).epsilon(1e-9));
    CHECK(mass + dist.p_stop == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("selecting an extracted sentence is rejected") {
  Fixture f;
  Policy<double> policy(gradcases::small_policy(), f.emb, 1);
  Graph<double> g(false);
  const auto states = policy.encode(g, f.encode(0));
  auto st = ExtractionState::initial(states.sentences);
  st.select(1);
  const auto out = policy.step(g, states, st);
  CHECK_THROWS_AS(policy.action_log_prob(g, out, Action::select(1)), std::invalid_argument);

  Policy<double> no_stop(gradcases::small_policy(Variant::no_ehe), f.emb, 1);
  Graph<double> g2(false);
  const auto s2 = no_stop.encode(g2, f.encode(0));
  const auto o2 = no_stop.step(g2, s2, ExtractionState::initial(s2.sentences));
  CHECK_FALSE(o2.stop_logit.valid());
  CHECK_THROWS(no_stop.action_log_prob(g2, o2, Action::stop_action()));
  CHECK(no_stop.distribution(g2, o2).p_stop == 0.0);
}

TEST_CASE("history embeddings ignore the order of extraction") {
  Fixture f;
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    Policy<double> policy(gradcases::small_policy(), f.emb, trial);
    Graph<double> g(false);
    const auto states = policy.encode(g, f.encode(trial % f.docs.size()));
    const std::size_t k = 2 + trial % 4;
    auto st = random_state(rng, states.sentences, k);
    const auto base = flat(g.value(policy.encode_history(g, states, st)));
    auto permuted = st;
    std::shuffle(permuted.extracted.begin(), permuted.extracted.end(), rng);
    std::reverse(permuted.extracted.begin(), permuted.extracted.end());
    CHECK(flat(g.value(policy.encode_history(g, states, permuted))) == base);
  }
}

TEST_CASE("history is zero before any extraction and for no_ehe") {
  Fixture f;
  for (auto v : {Variant::full, Variant::no_ehe, Variant::gru_ehe}) {
    Policy<double> policy(gradcases::small_policy(v), f.emb, 3);
    Graph<double> g(false);
    const auto states = policy.encode(g, f.encode(1));
    const auto h = g.value(policy.encode_history(g, states, ExtractionState::initial(states.sentences)));
    CHECK(std::all_of(h.values().begin(), h.values().end(), [](double x) { return x == 0.0; }));
  }
  Policy<double> policy(gradcases::small_policy(Variant::no_ehe), f.emb, 3);
  Graph<double> g(false);
  const auto states = policy.encode(g, f.encode(1));
  auto st = ExtractionState::initial(states.sentences);
  st.select(0);
  const auto h = g.value(policy.encode_history(g, states, st));
  CHECK(std::all_of(h.values().begin(), h.values().end(), [](double x) { return x == 0.0; }));
}

TEST_CASE("padding never leaks into the outputs") {
  Fixture f;
  Policy<double> policy(gradcases::small_policy(), f.emb, 6);
  CorpusConfig wide = f.corpus;
  wide.max_sentence_tokens = 30;
  wide.max_document_sentences = 20;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto tight = encode_document(f.docs[i], f.vocab, f.corpus);
    const auto loose = encode_document(f.docs[i], f.vocab, wide);
    Graph<double> g(false);
    const auto a = policy.encode(g, tight);
    const auto b = policy.encode(g, loose);
    CHECK(flat(g.value(a.local)) == flat(g.value(b.local)));
    CHECK(flat(g.value(a.global)) == flat(g.value(b.global)));
    auto st = ExtractionState::initial(a.sentences);
    st.select(3);
    CHECK(flat(g.value(policy.step(g, a, st).scores)) == flat(g.value(policy.step(g, b, st).scores)));
  }
}

TEST_CASE("local embeddings depend only on the sentence itself") {
  Fixture f;
  for (auto v : {Variant::full, Variant::no_lse}) {
    Policy<double> policy(gradcases::small_policy(v), f.emb, 7);
    const Document& doc = f.docs[2];
    Graph<double> g(false);
    const auto full = g.value(policy.encode_local(g, encode_document(doc, f.vocab, f.corpus)));
    for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
      Document single = doc;
      single.sentences = {doc.sentences[s]};
      single.raw_sentences = {doc.raw_sentences[s]};
      const auto alone = g.value(policy.encode_local(g, encode_document(single, f.vocab, f.corpus)));
      for (std::size_t c = 0; c < alone.cols(); ++c) CHECK(alone(0, c) == doctest::Approx(full(s, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("pooling a single row reduces to the value and output projections") {
  Fixture f;
  Policy<double> policy(gradcases::small_policy(), f.emb, 9);
  std::mt19937_64 rng(2);
  Graph<double> g(false);
  auto x = g.constant(gradcases::random_matrix(rng, 1, 8));
  const auto pooled = g.value(policy.pool(g, "lse.pool", x));
  auto& store = policy.parameters();
  Var value = g.add(g.matmul(x, g.parameter(store.get("lse.pool.value.weight"))),
                    g.parameter(store.get("lse.pool.value.bias")));
  Var expect = g.add(g.matmul(value, g.parameter(store.get("lse.pool.out.weight"))),
                     g.parameter(store.get("lse.pool.out.bias")));
  CHECK(flat(pooled) == flat(g.value(expect)));
  CHECK_THROWS(policy.pool(g, "lse.pool", g.zeros(0, 8)));
}

TEST_CASE("pooling is invariant to row order") {
  Fixture f;
  Policy<double> policy(gradcases::small_policy(), f.emb, 9);
  std::mt19937_64 rng(3);
  Graph<double> g(false);
  auto m = gradcases::random_matrix(rng, 5, 8);
  const auto a = flat(g.value(policy.pool(g, "lse.pool", g.constant(m))));
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  const auto b = flat(g.value(policy.pool(g, "lse.pool", g.gather_rows(g.constant(m), perm))));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("stop sentence variant appends a learned row") {
  Fixture f;
  Policy<double> policy(gradcases::small_policy(Variant::stop_sentence), f.emb, 2);
  Graph<double> g(false);
  const auto enc = f.encode(0);
  const auto states = policy.encode(g, enc);
  CHECK(states.sentences == enc.valid_sentences() + 1);
  REQUIRE(states.stop_sentence.has_value());
  CHECK(*states.stop_sentence == enc.valid_sentences());
}

TEST_CASE("float and double policies agree closely") {
  Fixture f;
  Policy<double> pd(gradcases::small_policy(), f.emb, 5);
  Policy<float> pf(gradcases::small_policy(), f.emb, 5);
  const auto enc = f.encode(3);
  Graph<double> gd(false);
  Graph<float> gf(false);
  auto sd = pd.encode(gd, enc);
  auto sf = pf.encode(gf, enc);
  auto st = ExtractionState::initial(sd.sentences);
  st.select(2);
  const auto dd = pd.distribution(gd, pd.step(gd, sd, st));
  const auto df = pf.distribution(gf, pf.step(gf, sf, st));
  CHECK(df.p_stop == doctest::Approx(dd.p_stop).epsilon(1e-3));
  for (std::size_t i = 0; i < dd.scores.size(); ++i) CHECK(df.scores[i] == doctest::Approx(dd.scores[i]).epsilon(1e-3));
}
