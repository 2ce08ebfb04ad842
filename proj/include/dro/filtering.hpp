#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dro/certainty.hpp"
#include "dro/core.hpp"
#include "dro/grpo.hpp"
#include "dro/policy.hpp"

namespace dro {

enum class TaskStatus { active, dropped_difficult, dropped_low_variation, carried_forward };

std::string task_status_name(TaskStatus s);

struct TaskFilterStats {
  double min_difficulty = 0.0;  // min over traces of the bottom-rho rank average
  double max_sigma = 0.0;       // max per-token logp standard deviation
};

struct TaskPoolEntry {
  Task task;
  TaskStatus status = TaskStatus::active;
  std::optional<TaskFilterStats> last_stats;
};

// Mean of the ceil(rho * |y|) largest rank values in the row: how hard the
// least predictable reference tokens are under this trace.
double difficulty_score(const CertaintyRow& row, double rho);

// Keep iff at least one trace renders the reference predictable within the
// top-k threshold.
bool difficulty_filter(std::span<const double> scores, double rank_threshold_k);

// Sort descending by max sigma (ties by ascending task id), drop the bottom
// cut fraction, return the survivors in original pool order.
std::vector<std::string> variation_filter(
    const std::vector<std::pair<std::string, double>>& pool, double cut_fraction);

// Union of the kept tasks with a seeded uniform sample of
// ceil(carry_forward * |previous_active|) tasks from the previous active set.
std::vector<std::string> refresh_dataset(std::span<const std::string> previous_active,
                                         std::span<const std::string> kept,
                                         double carry_forward, RngStream& rng);

// {"round": int, "task_id": str, "min_difficulty": float,
//  "max_sigma": float, "verdict": str}
struct FilterReportRecord {
  int round = 0;
  std::string task_id;
  double min_difficulty = 0.0;
  double max_sigma = 0.0;
  std::string verdict;
};

std::string filter_report_line(const FilterReportRecord& rec);

struct FilterRoundResult {
  std::vector<std::string> active;
  std::vector<FilterReportRecord> records;
};

// One full round over the pool: sample filter_traces reasoning traces per
// task with the given policy, score the reference, apply stage 1 then stage 2,
// and carry forward from previous_active. Pure in (policy, pool, config,
// seed); entry statuses and last_stats are updated in place.
FilterRoundResult run_filter_round(const PolicySnapshot& policy, const Vocabulary& vocab,
                                   std::vector<TaskPoolEntry>& pool,
                                   std::span<const std::string> previous_active,
                                   const TrainConfig& config, int round,
                                   std::uint64_t root_seed);

}  // namespace dro
