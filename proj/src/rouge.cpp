#include "memsum/rouge.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <unordered_map>

namespace memsum {

RougeScore RougeScore::from_counts(std::size_t overlap, std::size_t candidate_total,
                                   std::size_t reference_total) {
  RougeScore s;
  if (candidate_total == 0 || reference_total == 0) return s;
  s.precision = static_cast<double>(overlap) / static_cast<double>(candidate_total);
  s.recall = static_cast<double>(overlap) / static_cast<double>(reference_total);
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

TokenList filter_tokens(std::span<const std::string> tokens, const RougeOptions& opts) {
  TokenList out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    const bool has_alnum = std::any_of(t.begin(), t.end(), [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) != 0;
    });
    if (!has_alnum) continue;
    std::string lower = t;
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (opts.stem && lower.size() > 3) lower = porter_stem(lower);
    out.push_back(std::move(lower));
  }
  return out;
}

namespace {

std::string ngram_key(std::span<const std::string> tokens, std::size_t start, int n) {
  std::string key = tokens[start];
  for (int i = 1; i < n; ++i) {
    key.push_back('\x1f');
    key += tokens[start + static_cast<std::size_t>(i)];
  }
  return key;
}

std::unordered_map<std::string, std::size_t> ngram_counts(std::span<const std::string> tokens, int n,
                                                          std::size_t& total) {
  std::unordered_map<std::string, std::size_t> counts;
  total = 0;
  if (tokens.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    ++counts[ngram_key(tokens, i, n)];
    ++total;
  }
  return counts;
}

}  // namespace

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   int n, const RougeOptions& opts) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be at least 1");
  const auto cand = filter_tokens(candidate, opts);
  const auto ref = filter_tokens(reference, opts);
  std::size_t cand_total = 0, ref_total = 0;
  const auto cand_counts = ngram_counts(cand, n, cand_total);
  const auto ref_counts = ngram_counts(ref, n, ref_total);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand_counts) {
    if (auto it = ref_counts.find(gram); it != ref_counts.end()) overlap += std::min(count, it->second);
  }
  return RougeScore::from_counts(overlap, cand_total, ref_total);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference,
                   const RougeOptions& opts) {
  const auto cand = filter_tokens(candidate, opts);
  const auto ref = filter_tokens(reference, opts);
  return RougeScore::from_counts(lcs_length(cand, ref), cand.size(), ref.size());
}

TokenList concatenate(std::span<const TokenList> sentences) {
  TokenList out;
  for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

Reward episode_reward(std::span<const TokenList> extracted, std::span<const TokenList> gold,
                      const RougeOptions& opts) {
  Reward r;
  if (extracted.empty()) return r;
  const auto cand = concatenate(extracted);
  const auto ref = concatenate(gold);
  r.rouge1 = rouge_n(cand, ref, 1, opts).f1;
  r.rouge2 = rouge_n(cand, ref, 2, opts).f1;
  r.rouge_l = rouge_l(cand, ref, opts).f1;
  r.value = (r.rouge1 + r.rouge2 + r.rouge_l) / 3.0;
  return r;
}

double mean_r12_gain(std::span<const TokenList> current, const TokenList& candidate,
                     std::span<const TokenList> gold, const RougeOptions& opts) {
  const auto ref = concatenate(gold);
  const auto before = concatenate(current);
  auto after = before;
  after.insert(after.end(), candidate.begin(), candidate.end());
  auto mean12 = [&](const TokenList& c) {
    return 0.5 * (rouge_n(c, ref, 1, opts).f1 + rouge_n(c, ref, 2, opts).f1);
  };
  return mean12(after) - mean12(before);
}

}  // namespace memsum
