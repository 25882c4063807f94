#include "memsum/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace memsum {

void VariantSpec::validate() const {
  if (variant == Variant::no_auto_stop && fixed_k == 0) throw std::invalid_argument("no_auto_stop needs K >= 1");
}

VariantSpec parse_variant_spec(std::string_view text) {
  VariantSpec spec;
  const auto colon = text.find(':');
  spec.variant = parse_variant(text.substr(0, colon));
  if (colon != std::string_view::npos) {
    if (spec.variant != Variant::no_auto_stop) throw std::invalid_argument("only no_auto_stop takes a count");
    spec.fixed_k = std::stoul(std::string(text.substr(colon + 1)));
  }
  spec.validate();
  return spec;
}

template <typename T>
std::unique_ptr<Policy<T>> build_variant(const VariantSpec& spec, PolicyConfig config,
                                         const EmbeddingTable& embeddings, std::uint64_t seed) {
  spec.validate();
  config.variant = spec.variant;
  config.fixed_k = spec.fixed_k;
  return std::make_unique<Policy<T>>(config, embeddings, seed);
}

std::vector<Document> make_redundant_dataset(std::span<const Document> docs) {
  std::vector<Document> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    Document r = d;
    r.sentences.clear();
    r.raw_sentences.clear();
    for (std::size_t i = 0; i < d.sentences.size(); ++i) {
      for (int copy = 0; copy < 2; ++copy) {
        r.sentences.push_back(d.sentences[i]);
        r.raw_sentences.push_back(i < d.raw_sentences.size() ? d.raw_sentences[i] : std::string{});
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

double duplicate_percentage(std::span<const std::size_t> indices, const Document& doc) {
  for (auto i : indices) {
    if (i >= doc.sentences.size()) throw std::out_of_range("sentence index out of range");
  }
  if (indices.empty()) return 0.0;
  std::size_t duplicates = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (doc.sentences.at(indices[i]) == doc.sentences.at(indices[j])) {
        ++duplicates;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(duplicates) / static_cast<double>(indices.size());
}

template <typename T>
SummaryResult trigram_blocking_filter(const Policy<T>& policy, const Document& doc, const EncodedDocument& encoded,
                                      InferenceConfig config) {
  config.block_trigrams = true;
  return extract_summary(policy, doc, encoded, config);
}

SummaryResult lead_baseline(const Document& doc, std::size_t k) {
  if (k == 0) throw std::invalid_argument("lead baseline needs K >= 1");
  SummaryResult r;
  r.id = doc.id;
  std::vector<TokenList> extracted;
  for (std::size_t i = 0; i < std::min(k, doc.sentences.size()); ++i) {
    r.indices.push_back(i);
    extracted.push_back(doc.sentences[i]);
    r.sentences.push_back(i < doc.raw_sentences.size() ? doc.raw_sentences[i] : std::string{});
  }
  if (!doc.gold_summary.empty()) r.reward = episode_reward(extracted, doc.gold_summary);
  return r;
}

template <typename T>
ScoreTrace score_trace(const Policy<T>& policy, const Document& doc, const EncodedDocument& encoded,
                       const InferenceConfig& config) {
  ScoreTrace trace;
  trace.sentences = encoded.valid_sentences();
  auto observer = [&](const ExtractionState&, const ActionDistribution& dist) {
    std::vector<std::optional<double>> row(trace.sentences);
    for (std::size_t k = 0; k < dist.remaining.size(); ++k) {
      if (dist.remaining[k] < trace.sentences) row[dist.remaining[k]] = dist.scores[k];
    }
    trace.scores.push_back(std::move(row));
    trace.p_stop.push_back(dist.p_stop);
  };
  trace.chosen = extract_summary(policy, doc, encoded, config, observer).indices;
  return trace;
}

void write_score_trace_csv(std::ostream& os, const ScoreTrace& trace) {
  os << "step,p_stop";
  for (std::size_t i = 0; i < trace.sentences; ++i) os << ',' << i;
  os << '\n';
  for (std::size_t t = 0; t < trace.scores.size(); ++t) {
    os << t << ',' << trace.p_stop[t];
    for (const auto& v : trace.scores[t]) {
      os << ',';
      if (v) {
        os << *v;
      } else {
        os << 'X';
      }
    }
    os << '\n';
  }
}

WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs) {
  WilcoxonResult r;
  std::vector<double> diffs;
  for (const auto& [a, b] : pairs) {
    if (a != b) diffs.push_back(a - b);
  }
  r.n = diffs.size();
  r.degenerate = r.n < 6;
  if (r.n == 0) return r;

  std::vector<std::size_t> order(r.n);
  for (std::size_t i = 0; i < r.n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(diffs[x]) < std::abs(diffs[y]); });
  // Ranks doubled so tied averages stay integral.
  std::vector<std::size_t> rank2(r.n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < r.n;) {
    std::size_t j = i;
    while (j + 1 < r.n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const std::size_t avg2 = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = avg2;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  std::size_t w_plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < r.n; ++i) {
    total2 += rank2[i];
    if (diffs[i] > 0) w_plus2 += rank2[i];
  }
  r.w_plus = static_cast<double>(w_plus2) / 2.0;
  r.w_minus = static_cast<double>(total2 - w_plus2) / 2.0;
  r.statistic = std::min(r.w_plus, r.w_minus);

  if (r.n <= 50) {
    r.exact = true;
    // Null distribution of the doubled W+ over all 2^n sign assignments.
    std::vector<double> dist(total2 + 1, 0.0);
    dist[0] = 1.0;
    std::size_t reach = 0;
    for (std::size_t i = 0; i < r.n; ++i) {
      reach += rank2[i];
      for (std::size_t s = reach; s >= rank2[i]; --s) dist[s] += dist[s - rank2[i]];
    }
    const double all = std::pow(2.0, static_cast<double>(r.n));
    double lower = 0.0, upper = 0.0;
    for (std::size_t s = 0; s <= total2; ++s) {
      if (s <= w_plus2) lower += dist[s];
      if (s >= w_plus2) upper += dist[s];
    }
    r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
  } else {
    const double n = static_cast<double>(r.n);
    const double mean = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    const double z = var > 0.0 ? std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var) : 0.0;
    r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return r;
}

namespace {

std::string join(const TokenList& tokens) {
  std::string s;
  for (const auto& t : tokens) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

Document assemble(std::string id, std::vector<TokenList> sentences, std::vector<TokenList> gold) {
  Document d;
  d.id = std::move(id);
  for (auto& s : sentences) d.raw_sentences.push_back(join(s));
  for (auto& s : gold) d.raw_summary.push_back(join(s));
  d.sentences = std::move(sentences);
  d.gold_summary = std::move(gold);
  return d;
}

}  // namespace

std::vector<Document> synthetic_corpus(const SyntheticCorpusConfig& config) {
  if (config.planted > config.sentences) throw std::invalid_argument("more planted than total sentences");
  if (config.min_tokens < 2 || config.min_tokens > config.max_tokens) throw std::invalid_argument("bad token range");
  constexpr std::size_t kFiller = 60, kKey = 90;
  std::mt19937_64 rng(config.seed);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto filler = [&] { return "w" + std::to_string(pick(kFiller)); };

  std::vector<Document> docs;
  for (std::size_t d = 0; d < config.documents; ++d) {
    std::vector<std::size_t> positions(config.sentences);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    std::shuffle(positions.begin(), positions.end(), rng);
    positions.resize(config.planted);
    std::sort(positions.begin(), positions.end());

    std::vector<std::size_t> keys(kKey);
    for (std::size_t i = 0; i < kKey; ++i) keys[i] = i;
    std::shuffle(keys.begin(), keys.end(), rng);
    std::size_t next_key = 0;

    std::vector<TokenList> sentences(config.sentences);
    std::vector<TokenList> gold;
    for (std::size_t s = 0; s < config.sentences; ++s) {
      const std::size_t len = config.min_tokens + pick(config.max_tokens - config.min_tokens + 1);
      const bool planted = std::binary_search(positions.begin(), positions.end(), s);
      for (std::size_t t = 0; t < len; ++t) {
        if (planted && (t % 4 != 3) && next_key < kKey) {
          sentences[s].push_back("key" + std::to_string(keys[next_key++]));
        } else {
          sentences[s].push_back(filler());
        }
      }
      if (planted) {
        TokenList g = sentences[s];
        g[pick(g.size())] = filler();
        gold.push_back(std::move(g));
      }
    }
    docs.push_back(assemble("syn-" + std::to_string(d), std::move(sentences), std::move(gold)));
  }
  return docs;
}

std::vector<Document> random_small_documents(std::size_t count, std::size_t max_sentences, std::uint64_t seed) {
  if (max_sentences < 2) throw std::invalid_argument("random_small_documents needs at least two sentences");
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  std::vector<Document> docs;
  for (std::size_t d = 0; d < count; ++d) {
    const std::size_t n = pick(2, max_sentences);
    std::vector<TokenList> sentences(n);
    for (auto& s : sentences) {
      const std::size_t len = pick(4, 9);
      for (std::size_t t = 0; t < len; ++t) s.push_back("t" + std::to_string(pick(0, 24)));
    }
    // Gold: fragments of a few sentences plus some unrelated words.
    std::vector<TokenList> gold(pick(1, 3));
    for (auto& g : gold) {
      const auto& src = sentences[pick(0, n - 1)];
      const std::size_t start = pick(0, src.size() - 2);
      const std::size_t len = pick(2, src.size() - start);
      g.assign(src.begin() + static_cast<std::ptrdiff_t>(start),
               src.begin() + static_cast<std::ptrdiff_t>(start + len));
      for (std::size_t extra = pick(0, 2); extra > 0; --extra) g.push_back("t" + std::to_string(pick(0, 24)));
    }
    docs.push_back(assemble("small-" + std::to_string(d), std::move(sentences), std::move(gold)));
  }
  return docs;
}

#define MEMSUM_INSTANTIATE(T)                                                                                  \
  template std::unique_ptr<Policy<T>> build_variant<T>(const VariantSpec&, PolicyConfig, const EmbeddingTable&, \
                                                       std::uint64_t);                                         \
  template SummaryResult trigram_blocking_filter<T>(const Policy<T>&, const Document&, const EncodedDocument&,  \
                                                    InferenceConfig);                                          \
  template ScoreTrace score_trace<T>(const Policy<T>&, const Document&, const EncodedDocument&,                \
                                     const InferenceConfig&);
MEMSUM_INSTANTIATE(float)
MEMSUM_INSTANTIATE(double)
#undef MEMSUM_INSTANTIATE

}  // namespace memsum
