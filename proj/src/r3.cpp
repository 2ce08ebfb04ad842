#include "dro/r3.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dro/kernels.hpp"
#include "dro/rng.hpp"

namespace dro {

std::string variant_name(RewardVariant v) {
  switch (v) {
    case RewardVariant::vanilla: return "vanilla";
    case RewardVariant::weighted: return "weighted";
    case RewardVariant::propagated: return "propagated";
    case RewardVariant::masked: return "masked";
  }
  return "unknown";
}

RewardVariant variant_from_name(const std::string& s) {
  if (s == "vanilla") return RewardVariant::vanilla;
  if (s == "weighted") return RewardVariant::weighted;
  if (s == "propagated") return RewardVariant::propagated;
  if (s == "masked") return RewardVariant::masked;
  fail("unknown reward variant: " + s);
}

namespace {

void check_matrix(const CertaintyMatrix& m) {
  if (m.rows.empty()) fail("certainty matrix has no rows");
  for (const auto& row : m.rows) {
    if (static_cast<int>(row.logp.size()) != m.reference_len)
      fail("certainty matrix rows have inconsistent lengths");
  }
}

}  // namespace

ReflectionStats token_std(const CertaintyMatrix& matrix) {
  check_matrix(matrix);
  if (matrix.group_size < 2 || matrix.rows.size() < 2)
    fail("reflection statistics need at least two traces");
  const std::size_t n = static_cast<std::size_t>(matrix.reference_len);
  const double g = static_cast<double>(matrix.rows.size());
  ReflectionStats stats;
  stats.mean.assign(n, 0.0);
  stats.sigma.assign(n, 0.0);
  for (const auto& row : matrix.rows)
    for (std::size_t j = 0; j < n; ++j) stats.mean[j] += row.logp[j];
  for (std::size_t j = 0; j < n; ++j) stats.mean[j] /= g;
  for (const auto& row : matrix.rows) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row.logp[j] - stats.mean[j];
      stats.sigma[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < n; ++j) stats.sigma[j] = std::sqrt(stats.sigma[j] / g);
  return stats;
}

std::vector<double> reflective_weights(std::span<const double> sigma, double floor) {
  if (floor < 0.0) fail("reflective_weights: floor must be >= 0");
  double total = 0.0;
  for (double s : sigma) {
    if (s < 0.0) fail("reflective_weights: negative sigma");
    total += s + floor;
  }
  const std::size_t n = sigma.size();
  std::vector<double> w(n, 1.0);
  if (total <= 0.0) return w;  // all-zero sigma, no floor: uniform fallback
  const double scale = static_cast<double>(n) / total;
  for (std::size_t j = 0; j < n; ++j) w[j] = (sigma[j] + floor) * scale;
  return w;
}

std::vector<int> select_reflective(std::span<const double> sigma, double quantile) {
  if (sigma.empty()) fail("select_reflective: empty sigma");
  if (quantile <= 0.0 || quantile > 1.0)
    fail("select_reflective: quantile must be in (0, 1]");
  const std::size_t n = sigma.size();
  const std::size_t quota = static_cast<std::size_t>(
      std::ceil(quantile * static_cast<double>(n)));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (sigma[static_cast<std::size_t>(a)] != sigma[static_cast<std::size_t>(b)])
      return sigma[static_cast<std::size_t>(a)] > sigma[static_cast<std::size_t>(b)];
    return a < b;
  });
  std::vector<int> picked;
  for (std::size_t i = 0; i < quota && i < n; ++i) {
    if (sigma[static_cast<std::size_t>(order[i])] <= 0.0) break;  // never select flat columns
    picked.push_back(order[i]);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

ReflectionStats reflection_stats(const CertaintyMatrix& matrix, double sigma_floor,
                                 double quantile) {
  ReflectionStats stats = token_std(matrix);
  stats.weights = reflective_weights(stats.sigma, sigma_floor);
  stats.reflective = select_reflective(stats.sigma, quantile);
  return stats;
}

double vanilla_aggregate(const CertaintyRow& row) {
  if (row.logp.empty()) fail("vanilla_aggregate: empty row");
  double s = 0.0;
  for (double v : row.logp) s += v;
  return s;
}

RewardVector vanilla_reward(const CertaintyMatrix& matrix) {
  check_matrix(matrix);
  RewardVector out;
  out.variant = RewardVariant::vanilla;
  out.r.reserve(matrix.rows.size());
  for (const auto& row : matrix.rows) out.r.push_back(vanilla_aggregate(row));
  return out;
}

RewardVector weighted_reward(const CertaintyMatrix& matrix, const ReflectionStats& stats) {
  check_matrix(matrix);
  if (static_cast<int>(stats.weights.size()) != matrix.reference_len)
    fail("weighted_reward: weights length does not match reference length");
  RewardVector out;
  out.variant = RewardVariant::weighted;
  out.r.reserve(matrix.rows.size());
  for (const auto& row : matrix.rows)
    out.r.push_back(kernels::dot(stats.weights, row.logp));
  return out;
}

double propagation_factor(double p, int distance, double gamma) {
  if (p < 0.0 || p > 1.0) fail("propagation_factor: p must be in [0, 1]");
  if (distance < 1) fail("propagation_factor: distance must be >= 1");
  if (gamma <= 0.0) fail("propagation_factor: gamma must be > 0");
  return p + (1.0 - p) * (1.0 - std::exp(-gamma * static_cast<double>(distance)));
}

RewardVector propagated_reward(const CertaintyMatrix& matrix, const ReflectionStats& stats,
                               double gamma) {
  check_matrix(matrix);
  if (static_cast<int>(stats.weights.size()) != matrix.reference_len)
    fail("propagated_reward: weights length does not match reference length");
  if (gamma <= 0.0) fail("propagated_reward: gamma must be > 0");
  const std::size_t n = static_cast<std::size_t>(matrix.reference_len);
  RewardVector out;
  out.variant = RewardVariant::propagated;
  out.r.reserve(matrix.rows.size());
  for (const auto& row : matrix.rows) {
    double r = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double corrected = row.logp[j];
      for (int k : stats.reflective) {
        if (static_cast<std::size_t>(k) >= j) break;  // reflective is sorted
        const double p = std::exp(row.logp[static_cast<std::size_t>(k)]);
        corrected += std::log(
            propagation_factor(p, static_cast<int>(j) - k, gamma));
      }
      r += stats.weights[j] * corrected;
    }
    out.r.push_back(r);
  }
  return out;
}

RewardVector masked_reward(const CertaintyMatrix& matrix, const CertaintyRow& baseline,
                           const ReflectionStats& stats) {
  check_matrix(matrix);
  if (static_cast<int>(baseline.logp.size()) != matrix.reference_len)
    fail("masked_reward: baseline length does not match reference length");
  if (static_cast<int>(stats.weights.size()) != matrix.reference_len)
    fail("masked_reward: weights length does not match reference length");
  const std::size_t n = static_cast<std::size_t>(matrix.reference_len);
  RewardVector out;
  out.variant = RewardVariant::masked;
  out.r.reserve(matrix.rows.size());
  for (const auto& row : matrix.rows) {
    double r = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      r += stats.weights[j] * (row.logp[j] - baseline.logp[j]);
    out.r.push_back(r);
  }
  return out;
}

RankingInstance make_ranking_instance(std::uint64_t seed) {
  // Search over small half-nat grids: trace A (the better one) gives up a
  // little log-probability on many flat columns but is ahead on a few
  // high-variation columns. The per-column deficits dominate the plain sum
  // (vanilla prefers B) while the sigma weights concentrate on the planted
  // columns (weighted prefers A).
  RngStream rng = substream(seed, {hash_label("ranking_instance")});
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const int n = 10 + static_cast<int>(rng.below(7));        // 10..16 tokens
    const int n_hi = 2 + static_cast<int>(rng.below(2));      // 2..3 planted columns
    std::vector<int> cols(static_cast<std::size_t>(n));
    std::iota(cols.begin(), cols.end(), 0);
    for (int i = n - 1; i > 0; --i)
      std::swap(cols[static_cast<std::size_t>(i)],
                cols[rng.below(static_cast<std::uint64_t>(i + 1))]);
    std::vector<int> planted(cols.begin(), cols.begin() + n_hi);
    std::sort(planted.begin(), planted.end());

    CertaintyMatrix m;
    m.reference_len = n;
    m.group_size = 2;
    m.rows.resize(2);
    m.rows[0].logp.assign(static_cast<std::size_t>(n), 0.0);
    m.rows[1].logp.assign(static_cast<std::size_t>(n), 0.0);
    m.rows[0].rank.assign(static_cast<std::size_t>(n), 1);
    m.rows[1].rank.assign(static_cast<std::size_t>(n), 1);

    for (int j = 0; j < n; ++j) {
      const bool hi = std::binary_search(planted.begin(), planted.end(), j);
      const std::size_t js = static_cast<std::size_t>(j);
      if (hi) {
        // reflective column: lower probability overall, A clearly ahead
        const double a = -0.5 * static_cast<double>(2 + rng.below(2));    // -1.0..-1.5
        const double gap = 0.5 * static_cast<double>(2 + rng.below(2));   // 1.0..1.5
        m.rows[0].logp[js] = a;
        m.rows[1].logp[js] = a - gap;
      } else {
        // flat column: both near-certain, B slightly ahead
        const double base = -0.5 * static_cast<double>(rng.below(2));
        m.rows[0].logp[js] = base - 0.5;
        m.rows[1].logp[js] = base;
      }
    }

    const double va = vanilla_aggregate(m.rows[0]);
    const double vb = vanilla_aggregate(m.rows[1]);
    // quantile chosen so the selection quota equals the planted count
    const double quantile =
        (static_cast<double>(n_hi) - 0.25) / static_cast<double>(n);
    ReflectionStats stats = reflection_stats(m, 0.0, quantile);
    if (stats.reflective != planted) continue;
    RewardVector w = weighted_reward(m, stats);
    if (!(vb > va) || !(w.r[0] > w.r[1])) continue;

    RankingInstance inst;
    inst.matrix = std::move(m);
    inst.better_trace = 0;
    inst.planted_columns = planted;
    inst.vanilla_a = va;
    inst.vanilla_b = vb;
    inst.weighted_a = w.r[0];
    inst.weighted_b = w.r[1];
    return inst;
  }
  fail("make_ranking_instance: search failed for seed " + std::to_string(seed));
}

}  // namespace dro
