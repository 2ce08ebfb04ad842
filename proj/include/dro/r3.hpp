#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dro/certainty.hpp"

namespace dro {

// Per-reference-token statistics across the G traces of a certainty matrix.
// sigma is the population standard deviation of each logp column; weights are
// the linear-in-sigma token weights normalized to sum to |y|; reflective holds
// the 0-based indices of the selected reasoning-reflective positions.
struct ReflectionStats {
  std::vector<double> sigma;
  std::vector<double> mean;
  std::vector<double> weights;
  std::vector<int> reflective;
};

enum class RewardVariant { vanilla, weighted, propagated, masked };

std::string variant_name(RewardVariant v);
RewardVariant variant_from_name(const std::string& s);

struct RewardVector {
  std::vector<double> r;
  RewardVariant variant = RewardVariant::vanilla;
};

// Column mean and population standard deviation (divide by G). G >= 2.
ReflectionStats token_std(const CertaintyMatrix& matrix);

// w_j = n * (sigma_j + floor) / sum_m (sigma_m + floor); uniform weights when
// the denominator vanishes.
std::vector<double> reflective_weights(std::span<const double> sigma, double floor);

// The ceil(quantile * n) positions with the largest sigma, ties broken by
// lower index; zero-sigma positions are never selected. Returns sorted
// 0-based indices.
std::vector<int> select_reflective(std::span<const double> sigma, double quantile);

// token_std + reflective_weights + select_reflective in one call.
ReflectionStats reflection_stats(const CertaintyMatrix& matrix, double sigma_floor,
                                 double quantile);

// sum_j logp[j]
double vanilla_aggregate(const CertaintyRow& row);

RewardVector vanilla_reward(const CertaintyMatrix& matrix);

// r_i = sum_j w_j * logp_i[j]
RewardVector weighted_reward(const CertaintyMatrix& matrix, const ReflectionStats& stats);

// p + (1 - p) * (1 - exp(-gamma * d)); strictly increasing in d, in [p, 1).
double propagation_factor(double p, int distance, double gamma);

// r_i = sum_j w_j * (logp_i[j] + sum_{k in reflective, k < j} log P_k(j))
// with P_k(j) the propagation factor at p = exp(logp_i[k]), d = j - k.
RewardVector propagated_reward(const CertaintyMatrix& matrix, const ReflectionStats& stats,
                               double gamma);

// r_i = sum_j w_j * (logp_i[j] - baseline[j])
RewardVector masked_reward(const CertaintyMatrix& matrix, const CertaintyRow& baseline,
                           const ReflectionStats& stats);

// Constructed two-trace instance on which the vanilla aggregate and the
// sigma-weighted reward order the traces differently, with the weighted
// ordering matching the planted better trace. Found by seeded brute-force
// search over small integer logp grids.
struct RankingInstance {
  CertaintyMatrix matrix;      // 2 x n, n >= 10
  int better_trace = 0;        // planted index
  std::vector<int> planted_columns;  // the high-sigma columns (0-based)
  double vanilla_a = 0, vanilla_b = 0;
  double weighted_a = 0, weighted_b = 0;
};

RankingInstance make_ranking_instance(std::uint64_t seed);

}  // namespace dro
