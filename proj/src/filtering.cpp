#include "dro/filtering.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <json.hpp>

#include "dro/r3.hpp"

namespace dro {

using nlohmann::json;

std::string task_status_name(TaskStatus s) {
  switch (s) {
    case TaskStatus::active: return "active";
    case TaskStatus::dropped_difficult: return "dropped_difficult";
    case TaskStatus::dropped_low_variation: return "dropped_low_variation";
    case TaskStatus::carried_forward: return "carried_forward";
  }
  return "unknown";
}

double difficulty_score(const CertaintyRow& row, double rho) {
  if (row.rank.empty()) fail("difficulty_score: empty row");
  if (rho <= 0.0 || rho > 1.0) fail("difficulty_score: rho must be in (0, 1]");
  const std::size_t n = row.rank.size();
  const std::size_t take = static_cast<std::size_t>(
      std::ceil(rho * static_cast<double>(n)));
  std::vector<int> ranks(row.rank);
  std::nth_element(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(take - 1),
                   ranks.end(), std::greater<int>());
  double sum = 0.0;
  for (std::size_t i = 0; i < take; ++i) sum += static_cast<double>(ranks[i]);
  return sum / static_cast<double>(take);
}

bool difficulty_filter(std::span<const double> scores, double rank_threshold_k) {
  if (scores.empty()) fail("difficulty_filter: no scores");
  double best = scores[0];
  for (double s : scores) best = std::min(best, s);
  return best <= rank_threshold_k;
}

std::vector<std::string> variation_filter(
    const std::vector<std::pair<std::string, double>>& pool, double cut_fraction) {
  if (pool.empty()) fail("variation_filter: empty pool");
  if (cut_fraction < 0.0 || cut_fraction >= 1.0)
    fail("variation_filter: cut_fraction must be in [0, 1)");
  const std::size_t n = pool.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pool[a].second != pool[b].second) return pool[a].second > pool[b].second;
    return pool[a].first < pool[b].first;
  });
  const std::size_t drop = static_cast<std::size_t>(
      std::floor(cut_fraction * static_cast<double>(n)));
  std::unordered_set<std::string> dropped;
  for (std::size_t i = n - drop; i < n; ++i) dropped.insert(pool[order[i]].first);
  std::vector<std::string> kept;
  kept.reserve(n - drop);
  for (const auto& [id, sigma] : pool) {
    if (!dropped.count(id)) kept.push_back(id);
  }
  return kept;
}

std::vector<std::string> refresh_dataset(std::span<const std::string> previous_active,
                                         std::span<const std::string> kept,
                                         double carry_forward, RngStream& rng) {
  if (carry_forward < 0.0 || carry_forward >= 1.0)
    fail("refresh_dataset: carry_forward must be in [0, 1)");
  std::vector<std::string> active(kept.begin(), kept.end());
  std::unordered_set<std::string> seen(kept.begin(), kept.end());
  const std::size_t want = static_cast<std::size_t>(
      std::ceil(carry_forward * static_cast<double>(previous_active.size())));
  if (want > 0 && !previous_active.empty()) {
    std::vector<std::string> prev(previous_active.begin(), previous_active.end());
    for (std::size_t i = prev.size(); i > 1; --i)
      std::swap(prev[i - 1], prev[rng.below(i)]);
    for (std::size_t i = 0; i < want && i < prev.size(); ++i) {
      if (seen.insert(prev[i]).second) active.push_back(prev[i]);
    }
  }
  return active;
}

std::string filter_report_line(const FilterReportRecord& rec) {
  json j;
  j["round"] = rec.round;
  j["task_id"] = rec.task_id;
  j["min_difficulty"] = rec.min_difficulty;
  j["max_sigma"] = rec.max_sigma;
  j["verdict"] = rec.verdict;
  return j.dump();
}

FilterRoundResult run_filter_round(const PolicySnapshot& policy, const Vocabulary& vocab,
                                   std::vector<TaskPoolEntry>& pool,
                                   std::span<const std::string> previous_active,
                                   const TrainConfig& config, int round,
                                   std::uint64_t root_seed) {
  if (pool.empty()) fail("run_filter_round: empty pool");

  std::vector<std::pair<std::string, double>> stage2_pool;
  std::unordered_set<std::string> stage1_kept;

  for (TaskPoolEntry& entry : pool) {
    std::vector<std::vector<TokenId>> traces;
    traces.reserve(static_cast<std::size_t>(config.filter_traces));
    for (int i = 0; i < config.filter_traces; ++i) {
      RngStream stream = substream(
          root_seed, {hash_label("filter"), static_cast<std::uint64_t>(round),
                      hash_label(entry.task.id), static_cast<std::uint64_t>(i)});
      SampleResult sample = sample_output(policy, entry.task.prompt, config.temperature,
                                          config.top_p, config.max_len, stream);
      traces.push_back(split_output(sample.raw, vocab).reasoning);
    }
    const CertaintyMatrix matrix =
        build_certainty_matrix(policy, entry.task.prompt, traces, entry.task.reference);

    std::vector<double> scores;
    scores.reserve(matrix.rows.size());
    for (const auto& row : matrix.rows) scores.push_back(difficulty_score(row, config.rho));
    double min_difficulty = scores[0];
    for (double s : scores) min_difficulty = std::min(min_difficulty, s);

    const ReflectionStats stats = token_std(matrix);
    double max_sigma = 0.0;
    for (double s : stats.sigma) max_sigma = std::max(max_sigma, s);

    entry.last_stats = TaskFilterStats{min_difficulty, max_sigma};
    if (difficulty_filter(scores, config.rank_threshold_k)) {
      stage1_kept.insert(entry.task.id);
      stage2_pool.emplace_back(entry.task.id, max_sigma);
    }
  }

  std::vector<std::string> kept;
  if (!stage2_pool.empty()) kept = variation_filter(stage2_pool, config.variation_cut);
  std::unordered_set<std::string> kept_set(kept.begin(), kept.end());

  RngStream carry_rng = substream(
      root_seed, {hash_label("carry_forward"), static_cast<std::uint64_t>(round)});
  std::vector<std::string> active =
      refresh_dataset(previous_active, kept, config.carry_forward, carry_rng);
  std::unordered_set<std::string> active_set(active.begin(), active.end());

  FilterRoundResult result;
  result.active = std::move(active);
  result.records.reserve(pool.size());
  for (TaskPoolEntry& entry : pool) {
    const std::string& id = entry.task.id;
    TaskStatus status;
    if (kept_set.count(id)) {
      status = TaskStatus::active;
    } else if (active_set.count(id)) {
      status = TaskStatus::carried_forward;
    } else if (!stage1_kept.count(id)) {
      status = TaskStatus::dropped_difficult;
    } else {
      status = TaskStatus::dropped_low_variation;
    }
    entry.status = status;
    FilterReportRecord rec;
    rec.round = round;
    rec.task_id = id;
    rec.min_difficulty = entry.last_stats->min_difficulty;
    rec.max_sigma = entry.last_stats->max_sigma;
    rec.verdict = task_status_name(status);
    result.records.push_back(std::move(rec));
  }
  return result;
}

}  // namespace dro
