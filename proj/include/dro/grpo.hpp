#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dro/core.hpp"
#include "dro/policy.hpp"
#include "dro/r3.hpp"

namespace dro {

enum class RewardPolicyMode { static_ref, synced, lagged };

std::string reward_policy_mode_name(RewardPolicyMode m);
RewardPolicyMode reward_policy_mode_from_name(const std::string& s);

// Every knob of the training loop. Defaults follow the reported training
// setup where one exists (group size 16, epsilon_high 0.2, KL weight 0.001,
// temperature 1.0, top-p 0.95, 10% carry-forward); the rest are project
// choices, echoed verbatim into config_echo.json on every run.
struct TrainConfig {
  int group_size = 16;
  double epsilon_low = 0.2;
  double epsilon_high = 0.2;
  double beta_kl = 0.001;
  double beta_len = 0.5;
  double lambda_mix = 0.9;
  double gamma = 0.5;
  double quantile = 0.1;
  double sigma_floor = 0.0;
  double epsilon_std = 1e-8;
  double temperature = 1.0;
  double top_p = 0.95;
  int max_len = 64;
  std::string variant = "masked";
  std::string reward_policy_mode = "synced";
  int lag_steps = 4;
  bool length_normalize_loss = false;
  double learning_rate = 0.05;
  int batch_size = 16;
  int total_steps = 200;
  bool filter_enabled = true;
  int filter_interval = 8;
  int filter_traces = 16;
  double rho = 0.1;
  double rank_threshold_k = 5.0;
  double variation_cut = 0.25;
  double carry_forward = 0.10;
  std::string init_mode = "fresh";  // "fresh" | "copy_competent"
  std::uint64_t family_seed = 0;
  std::uint64_t seed = 0;

  void validate() const;
  RewardVariant reward_variant() const { return variant_from_name(variant); }
  RewardPolicyMode mode() const { return reward_policy_mode_from_name(reward_policy_mode); }

  // Strict JSON round-trip: unknown keys are rejected, missing keys take the
  // defaults above.
  static TrainConfig from_json_text(const std::string& text, const std::string& where);
  static TrainConfig load(const std::string& path);
  std::string to_json_text() const;
};

// A_i = (r_i - mean) / max(std, epsilon_std), population std; all zero when
// the spread is below epsilon_std.
std::vector<double> group_advantage(std::span<const double> rewards, double epsilon_std);

// 1 - beta * | |y| - |y_hat| | / |y| ; unclamped.
double length_penalty(int outcome_len, int reference_len, double beta_len);

// lambda * z(r3) + (1 - lambda) * len_pen, with r3 standardized within the
// group first so the two terms share a scale.
RewardVector mix_rewards(const RewardVector& r3, std::span<const double> len_pen,
                         double lambda_mix, double epsilon_std);

// ratio_t = exp(new_logp_t - old_logp_t)
std::vector<double> token_ratio_terms(std::span<const double> new_logp,
                                      std::span<const double> old_logp);

// term_t = min(ratio_t * A, clip(ratio_t, 1 - eps_low, 1 + eps_high) * A)
std::vector<double> clipped_surrogate(std::span<const double> ratios, double advantage,
                                      double epsilon_low, double epsilon_high);

// mean over tokens of exp(d) - d - 1 with d = ref_logp - policy_logp;
// nonnegative, zero iff the two match everywhere.
double kl_term(std::span<const double> policy_logp, std::span<const double> ref_logp);

// One prompt with its G sampled outputs and everything the objective needs.
struct GroupSample {
  Prompt prompt;
  ReferenceOutcome reference;
  std::vector<SampledOutput> outputs;
  std::vector<std::vector<TokenId>> raw;        // as emitted, incl. THINK_END/EOS
  std::vector<std::vector<double>> old_logp;    // under the sampling policy
  std::vector<std::vector<double>> ref_logp;    // under the frozen reference
  RewardVector rewards;                         // after mixing
  std::vector<double> advantages;
};

struct ObjectiveResult {
  double objective = 0.0;
  std::vector<double> grad;   // d objective / d policy logits
  double kl = 0.0;            // mean per-output KL over unmasked outputs
  double clip_frac = 0.0;     // fraction of unmasked tokens hitting a clip bound
  int token_count = 0;        // unmasked tokens entering the sum
};

// Clipped surrogate with KL regularization over one group; truncated outputs
// are masked out entirely. The gradient is exact for the tabular policy.
ObjectiveResult grpo_objective(const GroupSample& group, const PolicySnapshot& policy,
                               const TrainConfig& config);

// Objective only (used by the finite-difference check).
double grpo_objective_value(const GroupSample& group, const PolicySnapshot& policy,
                            const TrainConfig& config);

struct GradCheckReport {
  double max_rel_err = 0.0;
  int seeds = 0;
  int params_checked = 0;
};

// Central finite differences (step 1e-5) against the analytic gradient on
// seeded tiny instances: vocab 5, G = 2, outputs of length <= 4, with the
// sampling / live / reference snapshots all distinct so the clip and KL paths
// are exercised.
GradCheckReport gradient_check(int seeds, std::uint64_t root_seed = 2024);

}  // namespace dro
