// Acceptance report: one PASS/FAIL line per criterion.
// Exit status is 0 once every criterion has been evaluated; --strict makes
// any FAIL line a non-zero exit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "memsum/autodiff/gradient_check.hpp"
#include "memsum/evalsvc_http.hpp"
#include "memsum/experiments.hpp"
#include "memsum/inference.hpp"
#include "memsum/oracle.hpp"
#include "memsum/training.hpp"
#include "grad_cases.hpp"
#include "reference.hpp"

using namespace memsum;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++g_failures;
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

// ROUGE against the naive reference implementations.
void rouge_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto a = reference::random_tokens(rng, 20);
    const auto b = reference::random_tokens(rng, 20);
    worst = std::max(worst, std::abs(rouge_n(a, b, 1).f1 - reference::rouge_n(a, b, 1).f));
    worst = std::max(worst, std::abs(rouge_n(a, b, 2).f1 - reference::rouge_n(a, b, 2).f));
    worst = std::max(worst, std::abs(rouge_l(a, b).f1 - reference::rouge_l(a, b).f));
  }
  const double secs = seconds_since(t0);
  report(worst < 1e-9 && secs < 5.0, "rouge_equivalence",
         "max |df1| " + sci(worst) + " over 200 pairs in " + fmt(secs, 3) + " s");
}

// Central-difference checks on every op, pooling, encoder and the episode loss.
void gradient_fidelity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_case;
  std::size_t cases = 0;
  for (auto& c : gradcases::op_catalog()) {
    const auto r = ad::gradient_check(c.builder, *c.store);
    ++cases;
    if (r.coordinates_checked == 0 || r.max_relative_error > worst) {
      worst = r.coordinates_checked == 0 ? 1.0 : r.max_relative_error;
      worst_case = c.name;
    }
  }
  for (auto& c : gradcases::model_catalog()) {
    const auto r = ad::gradient_check(c.builder, *c.store, 1e-4, 400);
    ++cases;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_case = c.name + " (" + r.worst_parameter + ")";
    }
  }
  const double secs = seconds_since(t0);
  report(worst < 1e-4 && secs < 120.0, "gradient_fidelity",
         std::to_string(cases) + " cases, max relative error " + sci(worst) + " at " + worst_case +
             ", " + fmt(secs, 1) + " s");
}

struct SmallFixture {
  std::vector<Document> docs;
  Vocabulary vocab;
  EmbeddingTable emb;
  CorpusConfig corpus;

  SmallFixture() {
    SyntheticCorpusConfig sc;
    sc.documents = 20;
    sc.sentences = 8;
    sc.seed = 9;
    docs = synthetic_corpus(sc);
    vocab = build_vocabulary(docs, 1, corpus);
    emb = random_embedding_table(vocab, gradcases::small_policy().dim, 4);
    for (auto& v : emb.matrix.values()) v *= 20.0;
  }
};

ExtractionState random_state(std::mt19937_64& rng, std::size_t n, std::size_t extracted) {
  auto st = ExtractionState::initial(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k < extracted; ++k) st.select(order[k]);
  return st;
}

// (1 - p_stop) * sum(normalized) + p_stop == 1.
void normalization(const SmallFixture& f) {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    Policy<double> policy(gradcases::small_policy(), f.emb, 1000 + draw);
    ad::Graph<double> g(false);
    const auto states = policy.encode(g, encode_document(f.docs[draw % f.docs.size()], f.vocab, f.corpus));
    const auto st = random_state(rng, states.sentences, draw % states.sentences);
    const auto dist = policy.distribution(g, policy.step(g, states, st));
    const auto norm = dist.normalized();
    const double sum = std::accumulate(norm.begin(), norm.end(), 0.0);
    worst = std::max(worst, std::abs((1.0 - dist.p_stop) * sum + dist.p_stop - 1.0));
  }
  report(worst <= 1e-6, "normalization", "max deviation from 1 over 100 draws: " + sci(worst));
}

// Permuting the extracted set leaves every history embedding unchanged.
void ehe_order_invariance(const SmallFixture& f) {
  std::mt19937_64 rng(31);
  std::size_t equal = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Policy<double> policy(gradcases::small_policy(), f.emb, 500 + trial);
    ad::Graph<double> g(false);
    const auto states = policy.encode(g, encode_document(f.docs[trial % f.docs.size()], f.vocab, f.corpus));
    const auto st = random_state(rng, states.sentences, 2 + trial % 4);
    const auto base = g.value(policy.encode_history(g, states, st));
    auto permuted = st;
    do {
      std::shuffle(permuted.extracted.begin(), permuted.extracted.end(), rng);
    } while (permuted.extracted == st.extracted);
    const auto other = g.value(policy.encode_history(g, states, permuted));
    equal += std::equal(base.values().begin(), base.values().end(), other.values().begin(), other.values().end());
  }
  report(equal == 50, "ehe_order_invariance", std::to_string(equal) + "/50 states bitwise identical");
}

double r12_of(const Document& doc, const std::vector<std::size_t>& order) {
  std::vector<TokenList> ex;
  for (auto i : order) ex.push_back(doc.sentences[i]);
  return reference::mean_r12(ex, doc.gold_summary);
}

void oracle_quality() {
  const auto docs = random_small_documents(100, 8, 404);
  OracleConfig oc;
  oc.branching = 2;
  oc.beam_cap = OracleConfig::kUnbounded;
  std::size_t dominates = 0, close = 0;
  double min_ratio = 1.0;
  for (const auto& doc : docs) {
    double best = 0.0;
    for (const auto& e : build_episode_set(doc, oc)) best = std::max(best, r12_of(doc, e.indices));
    double single = 0.0;
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) single = std::max(single, r12_of(doc, {i}));
    const double greedy = r12_of(doc, greedy_oracle_summary(doc, 7).indices);
    dominates += best >= single - 1e-12 && best >= greedy - 1e-12;
    const double optimum = reference::best_subset_r12(doc.sentences, doc.gold_summary, 3);
    const double ratio = optimum > 0.0 ? greedy / optimum : 1.0;
    min_ratio = std::min(min_ratio, ratio);
    close += ratio >= 0.85;
  }
  report(dominates == 100 && close >= 95, "oracle_quality",
         "B=2 dominates single and greedy on " + std::to_string(dominates) + "/100; greedy >= 85% of size<=3 optimum on " +
             std::to_string(close) + "/100 (min ratio " + fmt(min_ratio, 3) + ")");
}

// Toy corpus split and the models trained on it.
struct Split {
  std::vector<Document> train, valid, test;
};

Split split(const std::vector<Document>& docs) {
  return {{docs.begin(), docs.begin() + 160}, {docs.begin() + 160, docs.begin() + 180}, {docs.begin() + 180, docs.end()}};
}

struct ToySetup {
  std::vector<Document> corpus;
  Split plain, redundant;
  Vocabulary vocab;
  EmbeddingTable emb;
  CorpusConfig cc;
  PolicyConfig pc;
  TrainerConfig tc;
  OracleConfig oc;
  std::size_t nmax = 5;

  ToySetup() {
    SyntheticCorpusConfig sc;
    sc.seed = 1;
    corpus = synthetic_corpus(sc);
    plain = split(corpus);
    redundant = split(make_redundant_dataset(corpus));
    vocab = build_vocabulary(plain.train, 1, cc);
    emb = random_embedding_table(vocab, 32, 3);
    for (auto& v : emb.matrix.values()) v *= 10.0;
    pc.dim = 32;
    pc.heads = 4;
    pc.pooling_heads = 4;
    pc.ff_dim = 64;
    pc.lse_layers = 1;
    pc.gce_layers = 1;
    tc.max_steps = 1000;
    tc.batch_size = 8;
    tc.validation_interval = 50;
    tc.patience = 100;
    tc.sweep_validation = true;
    tc.validation.max_sentences = nmax;
    tc.threads = 1;
    oc.max_sentences = nmax;
  }
};

struct Trained {
  std::unique_ptr<Policy<float>> policy;
  double p_star = 1.0;
  EvaluationReport test;
  double secs = 0.0;
  std::size_t steps = 0;
};

Trained train_model(const ToySetup& s, const Split& data, const std::string& variant) {
  const auto t0 = Clock::now();
  std::vector<std::vector<Episode>> sets;
  for (const auto& d : data.train) sets.push_back(build_episode_set(d, s.oc));
  const auto examples = prepare_examples(data.train, sets, s.vocab, s.cc);
  Trained out;
  out.policy = build_variant<float>(parse_variant_spec(variant), s.pc, s.emb, 5);
  ad::AdamState<float> adam;
  const auto stats = train<float>(*out.policy, adam, examples, data.valid, s.vocab, s.cc, s.tc);
  out.steps = stats.steps.size();
  const auto sweep =
      sweep_threshold(*out.policy, data.valid, s.vocab, s.cc, default_threshold_grid(), s.nmax, 1);
  out.p_star = sweep.best_threshold;
  InferenceConfig ic;
  ic.p_thres = out.p_star;
  ic.max_sentences = s.nmax;
  out.test = evaluate_dataset(*out.policy, data.test, s.vocab, s.cc, ic, 1);
  out.secs = seconds_since(t0);
  std::cerr << "trained " << variant << " for " << out.steps << " steps in " << fmt(out.secs, 1)
            << " s; test reward " << fmt(out.test.reward) << ", length " << fmt(out.test.mean_sentences, 2)
            << ", p* " << fmt(out.p_star, 1) << '\n';
  return out;
}

double mean_duplicates(const EvaluationReport& r, const std::vector<Document>& docs) {
  double dup = 0.0;
  for (std::size_t i = 0; i < docs.size(); ++i) dup += duplicate_percentage(r.results[i].indices, docs[i]);
  return dup / static_cast<double>(docs.size());
}

void toy_training(const ToySetup& s, const Trained& m) {
  double greedy = 0.0;
  for (const auto& d : s.plain.test) greedy += greedy_oracle_summary(d, s.nmax).reward;
  greedy /= static_cast<double>(s.plain.test.size());
  const double ratio = m.test.reward / greedy;
  const double len = m.test.mean_sentences;
  const bool pass = ratio >= 0.8 && std::abs(len - 3.0) <= 1.0 && m.steps <= 2000 && m.secs < 1800.0;
  report(pass, "toy_training",
         "test reward " + fmt(m.test.reward) + " = " + fmt(ratio, 3) + " x greedy " + fmt(greedy) + "; length " +
             fmt(len, 2) + " at p* " + fmt(m.p_star, 1) + "; " + std::to_string(m.steps) + " steps in " +
             fmt(m.secs, 1) + " s");
}

void redundancy(const ToySetup& s, const Trained& plain, const Trained& full, const Trained& no_ehe) {
  const double dup_full = mean_duplicates(full.test, s.redundant.test);
  const double dup_no_ehe = mean_duplicates(no_ehe.test, s.redundant.test);
  const double drop = plain.test.reward - full.test.reward;
  report(dup_full <= 5.0 && dup_no_ehe >= 20.0 && drop <= 0.03, "redundancy_avoidance",
         "duplicates full " + fmt(dup_full, 1) + "%, no_ehe " + fmt(dup_no_ehe, 1) + "%; full reward " +
             fmt(full.test.reward) + " vs " + fmt(plain.test.reward) + " non-redundant (drop " + fmt(drop) + ")");
}

void stopping_monotonicity(const ToySetup& s, const Trained& m) {
  SyntheticCorpusConfig sc;
  sc.documents = 50;
  sc.seed = 2;
  const auto docs = synthetic_corpus(sc);
  std::size_t monotone = 0;
  std::vector<double> mean_len(10, 0.0);
  for (const auto& d : docs) {
    const auto enc = encode_document(d, s.vocab, s.cc);
    std::size_t prev = 0;
    bool ok = true;
    for (int k = 1; k <= 10; ++k) {
      InferenceConfig ic;
      ic.p_thres = k / 10.0;
      ic.max_sentences = s.nmax;
      const std::size_t len = extract_summary(*m.policy, d, enc, ic).indices.size();
      ok = ok && len >= prev;
      prev = len;
      mean_len[k - 1] += static_cast<double>(len) / 50.0;
    }
    monotone += ok;
  }
  std::string lens;
  for (double l : mean_len) lens += (lens.empty() ? "" : " ") + fmt(l, 2);
  report(monotone == 50, "stopping_monotonicity",
         std::to_string(monotone) + "/50 documents non-decreasing; mean length over p 0.1..1.0: " + lens);
}

void score_trace_check(const ToySetup& s, const Trained& m) {
  std::size_t low = 0, n = 0;
  double ratio_sum = 0.0;
  for (const auto& d : s.redundant.test) {
    InferenceConfig ic;
    ic.p_thres = 1.0;
    ic.max_sentences = 2;
    const auto tr = score_trace(*m.policy, d, encode_document(d, s.vocab, s.cc), ic);
    if (tr.chosen.empty() || tr.scores.size() < 2) continue;
    const std::size_t a = tr.chosen[0];
    const std::size_t replica = a % 2 == 0 ? a + 1 : a - 1;
    const double s0 = *tr.scores[0][a];
    const double s1 = tr.scores[1][replica].value_or(0.0);
    ++n;
    low += s1 < 0.1 * s0;
    ratio_sum += s1 / s0;
  }
  const double share = n ? static_cast<double>(low) / static_cast<double>(n) : 0.0;
  report(share >= 0.9, "score_trace",
         std::to_string(low) + "/" + std::to_string(n) + " documents with replica score < 0.1x (mean ratio " +
             fmt(n ? ratio_sum / static_cast<double>(n) : 0.0, 3) + ")");
}

void checkpoint_round_trip(const ToySetup& s, const Trained& m) {
  const auto dir = std::filesystem::temp_directory_path() / "memsum_acceptance_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint<float>(dir, *m.policy, nullptr, s.vocab, s.cc);
  const auto loaded = load_checkpoint<float>(dir);
  SyntheticCorpusConfig sc;
  sc.documents = 50;
  sc.seed = 3;
  std::size_t same = 0;
  for (const auto& d : synthetic_corpus(sc)) {
    InferenceConfig ic;
    ic.p_thres = m.p_star;
    ic.max_sentences = s.nmax;
    const auto a = extract_summary(*m.policy, d, encode_document(d, s.vocab, s.cc), ic).indices;
    const auto b =
        extract_summary(*loaded.policy, d, encode_document(d, loaded.vocab, loaded.corpus), ic).indices;
    same += a == b;
  }
  std::filesystem::remove_all(dir);
  report(same == 50, "checkpoint_round_trip", std::to_string(same) + "/50 documents with identical indices");
}

void report_format(const ToySetup& s, const Trained& m) {
  const auto& r = m.test;
  bool ok = r.documents == s.plain.test.size() && r.results.size() == r.documents;
  double r1 = 0.0, r2 = 0.0, rl = 0.0;
  for (const auto& res : r.results) {
    ok = ok && res.reward.has_value();
    if (!res.reward) continue;
    r1 += res.reward->rouge1;
    r2 += res.reward->rouge2;
    rl += res.reward->rouge_l;
  }
  const double n = static_cast<double>(r.results.size());
  ok = ok && std::abs(r1 / n - r.rouge1) < 1e-12 && std::abs(r2 / n - r.rouge2) < 1e-12 &&
       std::abs(rl / n - r.rouge_l) < 1e-12 && std::abs((r.rouge1 + r.rouge2 + r.rouge_l) / 3.0 - r.reward) < 1e-12;

  const auto path = std::filesystem::temp_directory_path() / "memsum_acceptance_results.jsonl";
  write_results(path, r.results);
  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    ok = ok && j.contains("id") && j.contains("indices") && j.contains("summary") && j.contains("rouge");
    ++lines;
  }
  std::filesystem::remove(path);
  ok = ok && lines == r.results.size();
  report(ok, "report_format",
         "R-1 " + fmt(100 * r.rouge1, 2) + " R-2 " + fmt(100 * r.rouge2, 2) + " R-L " + fmt(100 * r.rouge_l, 2) +
             " reward " + fmt(r.reward) + " sentences " + fmt(r.mean_sentences, 2) + " words " +
             fmt(r.mean_words, 1) + "; " + std::to_string(lines) +
             " result lines (full-corpus numbers are not reproduced at this scale)");
}

// The evaluation service exercised over HTTP with no UI assets present.
void primary_without_secondary(const ToySetup& s) {
  evalsvc::EvalStore store;
  std::vector<Document> docs(s.plain.test.begin(), s.plain.test.begin() + 6);
  evalsvc::EvalServer server(store, s.vocab, s.emb, docs);
  const int port = server.bind("127.0.0.1", 0);
  std::thread thread([&] { server.serve(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  json x = json::array(), y = json::array();
  for (const auto& d : docs) {
    x.push_back({{"id", d.id}, {"summary", {d.raw_sentences[0]}}});
    y.push_back({{"id", d.id}, {"summary", {d.raw_sentences[1]}}});
  }
  bool ok = true;
  const json body = {{"seed", 1}, {"model_x", {{"name", "x"}, {"outputs", x}}}, {"model_y", {{"name", "y"}, {"outputs", y}}}};
  auto created = cli.Post("/session", body.dump(), "application/json");
  ok = ok && created && created->status == 201;
  std::string sid = ok ? json::parse(created->body).at("session").get<std::string>() : "";
  std::size_t ranked = 0;
  while (ok) {
    auto next = cli.Get("/session/" + sid + "/next?evaluator=e");
    ok = next && next->status == 200;
    if (!ok) break;
    const auto j = json::parse(next->body);
    if (j.at("done").get<bool>()) break;
    json ranks = json::object();
    for (const char* c : evalsvc::kCriteria) ranks[c] = {{"a", 1}, {"b", 2}};
    auto sub = cli.Post("/session/" + sid + "/ranking",
                        json{{"pair_id", j.at("pair").at("pair_id")}, {"evaluator", "e"}, {"ranks", ranks}}.dump(),
                        "application/json");
    ok = sub && sub->status == 200;
    ++ranked;
  }
  auto agg = cli.Get("/session/" + sid + "/aggregate");
  ok = ok && agg && agg->status == 200 && json::parse(agg->body).at("records") == docs.size();
  server.stop();
  thread.join();
  report(ok && ranked == docs.size(), "primary_without_secondary",
         "suite built without a UI target; evaluation API round trip over HTTP ranked " + std::to_string(ranked) +
             " pairs");
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::strcmp(argv[1], "--strict") == 0;
  const auto t0 = Clock::now();

  rouge_equivalence();
  gradient_fidelity();
  const SmallFixture small;
  normalization(small);
  ehe_order_invariance(small);
  oracle_quality();

  const ToySetup toy;
  const auto plain = train_model(toy, toy.plain, "full");
  toy_training(toy, plain);
  const auto red_full = train_model(toy, toy.redundant, "full");
  const auto red_no_ehe = train_model(toy, toy.redundant, "no_ehe");
  redundancy(toy, plain, red_full, red_no_ehe);
  stopping_monotonicity(toy, plain);
  score_trace_check(toy, red_full);
  checkpoint_round_trip(toy, plain);
  report_format(toy, plain);
  primary_without_secondary(toy);

  std::cout << "summary: " << g_failures << " FAIL, total " << fmt(seconds_since(t0), 1) << " s" << std::endl;
  return strict && g_failures > 0 ? 1 : 0;
}
