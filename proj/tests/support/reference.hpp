#pragma once

// Independent, deliberately naive implementations used as test oracles.

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace reference {

using Tokens = std::vector<std::string>;

inline Tokens keep_alnum(const Tokens& in) {
  Tokens out;
  for (const auto& t : in) {
    std::string lower;
    bool has = false;
    for (char c : t) {
      lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      has = has || std::isalnum(static_cast<unsigned char>(c));
    }
    if (has) out.push_back(lower);
  }
  return out;
}

inline double f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

struct Prf {
  double p = 0, r = 0, f = 0;
};

/// N-gram multiset overlap via std::map counting.
inline Prf rouge_n(const Tokens& cand_raw, const Tokens& ref_raw, int n) {
  const Tokens cand = keep_alnum(cand_raw), ref = keep_alnum(ref_raw);
  std::map<Tokens, int> c, r;
  int ct = 0, rt = 0;
  for (int i = 0; i + n <= static_cast<int>(cand.size()); ++i, ++ct) c[Tokens(cand.begin() + i, cand.begin() + i + n)]++;
  for (int i = 0; i + n <= static_cast<int>(ref.size()); ++i, ++rt) r[Tokens(ref.begin() + i, ref.begin() + i + n)]++;
  if (ct == 0 || rt == 0) return {};
  int overlap = 0;
  for (const auto& [k, v] : c) {
    auto it = r.find(k);
    if (it != r.end()) overlap += std::min(v, it->second);
  }
  Prf out{static_cast<double>(overlap) / ct, static_cast<double>(overlap) / rt, 0};
  out.f = f1(out.p, out.r);
  return out;
}

/// Full quadratic LCS table.
inline std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

inline Prf rouge_l(const Tokens& cand_raw, const Tokens& ref_raw) {
  const Tokens cand = keep_alnum(cand_raw), ref = keep_alnum(ref_raw);
  if (cand.empty() || ref.empty()) return {};
  const double l = static_cast<double>(lcs(cand, ref));
  Prf out{l / cand.size(), l / ref.size(), 0};
  out.f = f1(out.p, out.r);
  return out;
}

inline Tokens concat(const std::vector<Tokens>& parts) {
  Tokens out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline double mean_r12(const std::vector<Tokens>& extracted, const std::vector<Tokens>& gold) {
  const Tokens c = concat(extracted), g = concat(gold);
  return (rouge_n(c, g, 1).f + rouge_n(c, g, 2).f) / 2.0;
}

inline double eq1(const std::vector<Tokens>& extracted, const std::vector<Tokens>& gold) {
  const Tokens c = concat(extracted), g = concat(gold);
  return (rouge_n(c, g, 1).f + rouge_n(c, g, 2).f + rouge_l(c, g).f) / 3.0;
}

/// Best mean(R1, R2) over every subset of at most `max_size` sentences, in
/// ascending index order.
inline double best_subset_r12(const std::vector<Tokens>& sentences, const std::vector<Tokens>& gold,
                              std::size_t max_size) {
  double best = 0.0;
  std::vector<std::size_t> pick;
  std::function<void(std::size_t)> rec = [&](std::size_t start) {
    if (!pick.empty()) {
      std::vector<Tokens> ex;
      for (auto i : pick) ex.push_back(sentences[i]);
      best = std::max(best, mean_r12(ex, gold));
    }
    if (pick.size() == max_size) return;
    for (std::size_t i = start; i < sentences.size(); ++i) {
      pick.push_back(i);
      rec(i + 1);
      pick.pop_back();
    }
  };
  rec(0);
  return best;
}

/// Random token list over a small alphabet, including punctuation tokens.
inline Tokens random_tokens(std::mt19937_64& rng, std::size_t max_len, int alphabet = 8) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> word(0, alphabet - 1);
  std::uniform_int_distribution<int> punct(0, 9);
  Tokens out(len(rng));
  for (auto& t : out) t = punct(rng) == 0 ? std::string(",") : "w" + std::to_string(word(rng));
  return out;
}

}  // namespace reference
