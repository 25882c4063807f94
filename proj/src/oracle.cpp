#include "memsum/oracle.hpp"

#include <algorithm>
#include <cassert>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "memsum/errors.hpp"

namespace memsum {

using nlohmann::json;

void OracleConfig::validate() const {
  if (branching < 1) throw std::invalid_argument("oracle: branching must be at least 1");
  if (max_sentences < 1) throw std::invalid_argument("oracle: max_sentences must be at least 1");
  if (beam_cap < branching) throw std::invalid_argument("oracle: beam_cap must be at least branching");
}

namespace {

std::uint64_t bigram_key(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

}  // namespace

R12Scorer::R12Scorer(const Document& doc, const RougeOptions& opts) {
  std::unordered_map<std::string, std::uint32_t> ids;
  auto intern = [&](const TokenList& tokens) {
    std::vector<std::uint32_t> out;
    for (auto& t : filter_tokens(tokens, opts)) {
      auto [it, _] = ids.try_emplace(std::move(t), static_cast<std::uint32_t>(ids.size()));
      out.push_back(it->second);
    }
    return out;
  };
  std::vector<std::uint32_t> gold;
  for (const auto& s : doc.gold_summary) {
    auto g = intern(s);
    gold.insert(gold.end(), g.begin(), g.end());
  }
  for (const auto& s : doc.sentences) sentences_.push_back(intern(s));
  gold_unigrams_.assign(ids.size(), 0);
  for (auto id : gold) ++gold_unigrams_[id];
  gold_unigram_total_ = gold.size();
  for (std::size_t i = 1; i < gold.size(); ++i) {
    ++gold_bigrams_[bigram_key(gold[i - 1], gold[i])];
    ++gold_bigram_total_;
  }
}

R12Scorer::State R12Scorer::empty_state() const {
  State s;
  s.unigrams.assign(gold_unigrams_.size(), 0);
  return s;
}

double R12Scorer::combine(std::size_t o1, std::size_t c1, std::size_t o2, std::size_t c2) const {
  const double r1 = RougeScore::from_counts(o1, c1, gold_unigram_total_).f1;
  const double r2 = RougeScore::from_counts(o2, c2, gold_bigram_total_).f1;
  return 0.5 * (r1 + r2);
}

double R12Scorer::score(const State& s) const {
  return combine(s.unigram_overlap, s.unigram_total, s.bigram_overlap, s.bigram_total);
}

double R12Scorer::score_with(const State& s, std::size_t sentence) const {
  const auto& tokens = sentences_.at(sentence);
  std::size_t o1 = s.unigram_overlap, o2 = s.bigram_overlap;
  std::unordered_map<std::uint32_t, std::uint32_t> extra_uni;
  std::unordered_map<std::uint64_t, std::uint32_t> extra_bi;
  std::int64_t prev = s.last_token;
  std::size_t new_bigrams = 0;
  for (auto id : tokens) {
    auto& eu = extra_uni[id];
    if (s.unigrams[id] + eu < gold_unigrams_[id]) ++o1;
    ++eu;
    if (prev >= 0) {
      const auto key = bigram_key(static_cast<std::uint32_t>(prev), id);
      ++new_bigrams;
      if (auto g = gold_bigrams_.find(key); g != gold_bigrams_.end()) {
        auto it = s.bigrams.find(key);
        const std::uint32_t have = it == s.bigrams.end() ? 0 : it->second;
        auto& eb = extra_bi[key];
        if (have + eb < g->second) ++o2;
        ++eb;
      }
    }
    prev = id;
  }
  return combine(o1, s.unigram_total + tokens.size(), o2, s.bigram_total + new_bigrams);
}

void R12Scorer::append(State& s, std::size_t sentence) const {
  for (auto id : sentences_.at(sentence)) {
    if (s.unigrams[id] < gold_unigrams_[id]) ++s.unigram_overlap;
    ++s.unigrams[id];
    ++s.unigram_total;
    if (s.last_token >= 0) {
      const auto key = bigram_key(static_cast<std::uint32_t>(s.last_token), id);
      auto& have = s.bigrams[key];
      if (auto g = gold_bigrams_.find(key); g != gold_bigrams_.end() && have < g->second) {
        ++s.bigram_overlap;
      }
      ++have;
      ++s.bigram_total;
    }
    s.last_token = id;
  }
  s.order.push_back(sentence);
}

namespace {

void require_document(const Document& doc) {
  if (doc.sentences.empty()) throw std::invalid_argument("oracle: document has no sentences");
  if (doc.gold_summary.empty()) throw std::invalid_argument("oracle: document has no gold summary");
}

struct Candidate {
  std::size_t sentence;
  double gain;
};

// Sentences whose addition improves the score by more than min_gain, best first.
std::vector<Candidate> ranked_candidates(const R12Scorer& scorer, const R12Scorer::State& state,
                                         double min_gain) {
  const double base = scorer.score(state);
  std::vector<std::uint8_t> used(scorer.sentence_count(), 0);
  for (auto i : state.order) used[i] = 1;
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < scorer.sentence_count(); ++i) {
    if (used[i]) continue;
    const double gain = scorer.score_with(state, i) - base;
    if (gain > min_gain) out.push_back({i, gain});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Candidate& a, const Candidate& b) { return a.gain > b.gain; });
  return out;
}

Episode finish(const Document& doc, std::vector<std::size_t> order, const RougeOptions& opts) {
  std::vector<TokenList> extracted;
  extracted.reserve(order.size());
  for (auto i : order) extracted.push_back(doc.sentences[i]);
  Episode e;
  e.reward = episode_reward(extracted, doc.gold_summary, opts).value;
  e.indices = std::move(order);
  return e;
}

std::vector<std::size_t> sorted_key(const std::vector<std::size_t>& order) {
  auto key = order;
  std::sort(key.begin(), key.end());
  return key;
}

}  // namespace

std::vector<Episode> build_episode_set(const Document& doc, const OracleConfig& config,
                                       const RougeOptions& opts) {
  require_document(doc);
  config.validate();
  const R12Scorer scorer(doc, opts);

  std::vector<R12Scorer::State> frontier{scorer.empty_state()};
  std::vector<Episode> episodes;
  while (!frontier.empty()) {
    std::vector<R12Scorer::State> next;
    std::set<std::vector<std::size_t>> seen;
    for (const auto& partial : frontier) {
      if (partial.order.size() >= config.max_sentences) {
        episodes.push_back(finish(doc, partial.order, opts));
        continue;
      }
      auto candidates = ranked_candidates(scorer, partial, config.min_gain);
      if (candidates.empty()) {
        if (!partial.order.empty()) episodes.push_back(finish(doc, partial.order, opts));
        continue;
      }
      if (candidates.size() > config.branching) candidates.resize(config.branching);
      for (const auto& c : candidates) {
        auto child = partial;
        scorer.append(child, c.sentence);
        assert(scorer.score(child) > scorer.score(partial));
        if (seen.insert(sorted_key(child.order)).second) next.push_back(std::move(child));
      }
    }
    if (next.size() > config.beam_cap) {
      std::vector<std::pair<double, std::size_t>> ranked;
      ranked.reserve(next.size());
      for (std::size_t i = 0; i < next.size(); ++i) ranked.emplace_back(scorer.score(next[i]), i);
      std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return sorted_key(next[a.second].order) < sorted_key(next[b.second].order);
      });
      std::vector<R12Scorer::State> kept;
      kept.reserve(config.beam_cap);
      for (std::size_t i = 0; i < config.beam_cap; ++i) kept.push_back(std::move(next[ranked[i].second]));
      next = std::move(kept);
    }
    frontier = std::move(next);
  }
  std::stable_sort(episodes.begin(), episodes.end(), [](const Episode& a, const Episode& b) {
    if (a.reward != b.reward) return a.reward > b.reward;
    return a.indices < b.indices;
  });
  return episodes;
}

Episode greedy_oracle_summary(const Document& doc, std::size_t max_sentences,
                              const RougeOptions& opts) {
  require_document(doc);
  if (max_sentences < 1) throw std::invalid_argument("oracle: max_sentences must be at least 1");
  const R12Scorer scorer(doc, opts);
  auto state = scorer.empty_state();
  while (state.order.size() < max_sentences) {
    const double base = scorer.score(state);
    std::size_t best = scorer.sentence_count();
    double best_gain = 0.0;
    for (std::size_t i = 0; i < scorer.sentence_count(); ++i) {
      if (std::find(state.order.begin(), state.order.end(), i) != state.order.end()) continue;
      const double gain = scorer.score_with(state, i) - base;
      if (gain > best_gain) {
        best_gain = gain;
        best = i;
      }
    }
    if (best == scorer.sentence_count()) break;
    scorer.append(state, best);
  }
  if (state.order.empty()) return Episode{};
  return finish(doc, state.order, opts);
}

Episode sample_training_episode(std::span<const Episode> episodes, std::mt19937_64& rng) {
  if (episodes.empty()) throw std::invalid_argument("sample_training_episode: empty episode set");
  std::uniform_int_distribution<std::size_t> pick(0, episodes.size() - 1);
  Episode e = episodes[pick(rng)];
  std::shuffle(e.indices.begin(), e.indices.end(), rng);
  return e;
}

std::vector<Episode> drop_out_of_range(std::vector<Episode> episodes, std::size_t valid_sentences) {
  std::erase_if(episodes, [&](const Episode& e) {
    return std::any_of(e.indices.begin(), e.indices.end(),
                       [&](std::size_t i) { return i >= valid_sentences; });
  });
  return episodes;
}

void write_episode_cache(const std::filesystem::path& path,
                         std::span<const EpisodeCacheRecord> records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write episode cache " + path.string());
  for (const auto& r : records) {
    json eps = json::array();
    for (const auto& e : r.episodes) eps.push_back({{"indices", e.indices}, {"reward", e.reward}});
    out << json{{"id", r.id}, {"episodes", eps}}.dump() << '\n';
  }
}

std::vector<EpisodeCacheRecord> read_episode_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open episode cache " + path.string());
  std::vector<EpisodeCacheRecord> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = json::parse(line);
      EpisodeCacheRecord r;
      r.id = rec.at("id").is_string() ? rec.at("id").get<std::string>()
                                      : std::to_string(rec.at("id").get<long long>());
      for (const auto& e : rec.at("episodes")) {
        r.episodes.push_back({e.at("indices").get<std::vector<std::size_t>>(), e.at("reward").get<double>()});
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(std::string("bad episode cache record: ") + e.what(), line_number);
    }
  }
  return out;
}

}  // namespace memsum
