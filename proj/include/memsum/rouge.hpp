#pragma once

#include <span>
#include <string>
#include <vector>

#include "memsum/corpus.hpp"

namespace memsum {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  static RougeScore from_counts(std::size_t overlap, std::size_t candidate_total,
                                std::size_t reference_total);
};

/// Reward: mean of the ROUGE-1, ROUGE-2 and ROUGE-L F1 scores.
struct Reward {
  double value = 0.0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rouge_l = 0.0;
};

struct RougeOptions {
  bool stem = false;  // Porter-stem tokens longer than three characters
};

/// Lowercases and keeps only tokens containing at least one letter or digit.
TokenList filter_tokens(std::span<const std::string> tokens, const RougeOptions& opts = {});

std::string porter_stem(const std::string& word);

/// Clipped n-gram overlap ROUGE-N. Throws std::invalid_argument for n < 1.
RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   int n, const RougeOptions& opts = {});

/// LCS-based ROUGE-L over the whole token sequences.
RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference,
                   const RougeOptions& opts = {});

/// Length of the longest common subsequence (rolling-row DP).
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// Concatenates sentences in the given order.
TokenList concatenate(std::span<const TokenList> sentences);

/// Reward of an extraction against the gold summary, candidate text taken in
/// extraction order.
Reward episode_reward(std::span<const TokenList> extracted, std::span<const TokenList> gold,
                      const RougeOptions& opts = {});

/// mean(R1, R2) of current+candidate minus mean(R1, R2) of current.
double mean_r12_gain(std::span<const TokenList> current, const TokenList& candidate,
                     std::span<const TokenList> gold, const RougeOptions& opts = {});

}  // namespace memsum
