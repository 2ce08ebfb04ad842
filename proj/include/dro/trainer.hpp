#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dro/certainty.hpp"
#include "dro/core.hpp"
#include "dro/filtering.hpp"
#include "dro/grpo.hpp"
#include "dro/policy.hpp"
#include "dro/tasks.hpp"

namespace dro {

// One JSON line per step:
// {"step", "mean_r3", "std_r3", "mean_len_reasoning", "mean_len_outcome",
//  "kl", "objective", "clip_frac"}
struct StepMetrics {
  int step = 0;
  double mean_r3 = 0.0;
  double std_r3 = 0.0;
  double mean_len_reasoning = 0.0;
  double mean_len_outcome = 0.0;
  double kl = 0.0;
  double objective = 0.0;
  double clip_frac = 0.0;

  std::string to_json_line() const;
};

struct RunState {
  TrainConfig config;
  Vocabulary vocab;
  std::vector<TaskPoolEntry> pool;
  std::unordered_map<std::string, std::size_t> pool_index;

  PolicySnapshot actor;
  PolicySnapshot old_actor;
  PolicySnapshot reference;  // frozen at initialization
  PolicySnapshot reward;
  BaselineCache baseline_cache;

  std::vector<std::string> active;
  int step = 0;          // completed training steps
  int filter_rounds = 0;
  long long task_steps = 0;

  // deterministic epoch cycling over the active set
  std::vector<std::string> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
};

// Builds the initial snapshot per config.init_mode: "fresh" draws
// init_policy(seed); "copy_competent" builds the outcome-competent copy
// policy for config.family_seed (the pretrained-model stand-in).
PolicySnapshot make_initial_policy(const TrainConfig& config, const Vocabulary& vocab);

std::vector<TaskPoolEntry> make_pool(std::vector<Task> tasks);

RunState init_run_state(const TrainConfig& config, const Vocabulary& vocab,
                        std::vector<TaskPoolEntry> pool, const PolicySnapshot& initial);

// True when the schedule calls for a filter round before the next step.
bool filter_round_due(const RunState& state);
// Runs it: samples with the current actor, updates the active set and pool
// statuses. Fails if every task is removed.
FilterRoundResult run_scheduled_filter(RunState& state);

// One training step over the next batch: rollout groups from the actor,
// certainty under the reward policy with the reference substituted for the
// sampled outcome, reward mixing, one gradient update. Refreshes the reward
// snapshot per reward_policy_mode at the start of the step.
StepMetrics train_step(RunState& state);

struct RunResult {
  PolicySnapshot actor;
  PolicySnapshot reference;
  std::vector<std::string> final_active;
  long long task_steps = 0;
  std::vector<StepMetrics> metrics;
  std::vector<FilterReportRecord> filter_reports;
};

RunResult run_training(const TrainConfig& config, const Vocabulary& vocab,
                       std::vector<TaskPoolEntry> pool);
RunResult run_training(const TrainConfig& config, const Vocabulary& vocab,
                       std::vector<TaskPoolEntry> pool, const PolicySnapshot& initial);

std::string metrics_to_jsonl(std::span<const StepMetrics> metrics);
std::string reports_to_jsonl(std::span<const FilterReportRecord> reports);

// Checkpoint: {"role", "version", "params": [...], "vocab": {...},
//              "config": {...}}
std::string checkpoint_to_json(const PolicySnapshot& policy, const Vocabulary& vocab,
                               const TrainConfig& config);
struct Checkpoint {
  PolicySnapshot policy;
  Vocabulary vocab;
  TrainConfig config;
};
Checkpoint load_checkpoint(const std::string& path);
void save_checkpoint(const std::string& path, const PolicySnapshot& policy,
                     const Vocabulary& vocab, const TrainConfig& config);

}  // namespace dro
