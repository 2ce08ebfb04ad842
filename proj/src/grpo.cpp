#include "dro/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "dro/kernels.hpp"

namespace dro {

using nlohmann::json;

std::string reward_policy_mode_name(RewardPolicyMode m) {
  switch (m) {
    case RewardPolicyMode::static_ref: return "static_ref";
    case RewardPolicyMode::synced: return "synced";
    case RewardPolicyMode::lagged: return "lagged";
  }
  return "unknown";
}

RewardPolicyMode reward_policy_mode_from_name(const std::string& s) {
  if (s == "static_ref") return RewardPolicyMode::static_ref;
  if (s == "synced") return RewardPolicyMode::synced;
  if (s == "lagged") return RewardPolicyMode::lagged;
  fail("unknown reward policy mode: " + s);
}

void TrainConfig::validate() const {
  if (group_size < 2) fail("config: group_size must be >= 2");
  if (epsilon_low <= 0.0 || epsilon_high <= 0.0)
    fail("config: clip bounds must be positive");
  if (lambda_mix < 0.0 || lambda_mix > 1.0) fail("config: lambda_mix must be in [0, 1]");
  if (gamma <= 0.0) fail("config: gamma must be > 0");
  if (quantile <= 0.0 || quantile > 1.0) fail("config: quantile must be in (0, 1]");
  if (sigma_floor < 0.0) fail("config: sigma_floor must be >= 0");
  if (temperature <= 0.0) fail("config: temperature must be > 0");
  if (top_p <= 0.0 || top_p > 1.0) fail("config: top_p must be in (0, 1]");
  if (max_len < 1) fail("config: max_len must be >= 1");
  if (batch_size < 1) fail("config: batch_size must be >= 1");
  if (total_steps < 0) fail("config: total_steps must be >= 0");
  if (filter_interval < 1) fail("config: filter_interval must be >= 1");
  if (filter_traces < 1) fail("config: filter_traces must be >= 1");
  if (rho <= 0.0 || rho > 1.0) fail("config: rho must be in (0, 1]");
  if (variation_cut < 0.0 || variation_cut >= 1.0)
    fail("config: variation_cut must be in [0, 1)");
  if (carry_forward < 0.0 || carry_forward >= 1.0)
    fail("config: carry_forward must be in [0, 1)");
  if (lag_steps < 1) fail("config: lag_steps must be >= 1");
  if (init_mode != "fresh" && init_mode != "copy_competent")
    fail("config: init_mode must be 'fresh' or 'copy_competent'");
  (void)reward_variant();
  (void)mode();
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const char* const kConfigKeys[] = {
    "group_size", "epsilon_low", "epsilon_high", "beta_kl", "beta_len",
    "lambda_mix", "gamma", "quantile", "sigma_floor", "epsilon_std",
    "temperature", "top_p", "max_len", "variant", "reward_policy_mode",
    "lag_steps", "length_normalize_loss", "learning_rate", "batch_size",
    "total_steps", "filter_enabled", "filter_interval", "filter_traces",
    "rho", "rank_threshold_k", "variation_cut", "carry_forward",
    "init_mode", "family_seed", "seed"};

}  // namespace

TrainConfig TrainConfig::from_json_text(const std::string& text, const std::string& where) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(where + ": malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) fail(where + ": config must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : kConfigKeys) known = known || item.key() == k;
    if (!known) fail(where + ": unknown config key '" + item.key() + "'");
  }
  TrainConfig c;
  read_field(j, "group_size", c.group_size);
  read_field(j, "epsilon_low", c.epsilon_low);
  read_field(j, "epsilon_high", c.epsilon_high);
  read_field(j, "beta_kl", c.beta_kl);
  read_field(j, "beta_len", c.beta_len);
  read_field(j, "lambda_mix", c.lambda_mix);
  read_field(j, "gamma", c.gamma);
  read_field(j, "quantile", c.quantile);
  read_field(j, "sigma_floor", c.sigma_floor);
  read_field(j, "epsilon_std", c.epsilon_std);
  read_field(j, "temperature", c.temperature);
  read_field(j, "top_p", c.top_p);
  read_field(j, "max_len", c.max_len);
  read_field(j, "variant", c.variant);
  read_field(j, "reward_policy_mode", c.reward_policy_mode);
  read_field(j, "lag_steps", c.lag_steps);
  read_field(j, "length_normalize_loss", c.length_normalize_loss);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "total_steps", c.total_steps);
  read_field(j, "filter_enabled", c.filter_enabled);
  read_field(j, "filter_interval", c.filter_interval);
  read_field(j, "filter_traces", c.filter_traces);
  read_field(j, "rho", c.rho);
  read_field(j, "rank_threshold_k", c.rank_threshold_k);
  read_field(j, "variation_cut", c.variation_cut);
  read_field(j, "carry_forward", c.carry_forward);
  read_field(j, "init_mode", c.init_mode);
  read_field(j, "family_seed", c.family_seed);
  read_field(j, "seed", c.seed);
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text, path);
}

std::string TrainConfig::to_json_text() const {
  json j;
  j["group_size"] = group_size;
  j["epsilon_low"] = epsilon_low;
  j["epsilon_high"] = epsilon_high;
  j["beta_kl"] = beta_kl;
  j["beta_len"] = beta_len;
  j["lambda_mix"] = lambda_mix;
  j["gamma"] = gamma;
  j["quantile"] = quantile;
  j["sigma_floor"] = sigma_floor;
  j["epsilon_std"] = epsilon_std;
  j["temperature"] = temperature;
  j["top_p"] = top_p;
  j["max_len"] = max_len;
  j["variant"] = variant;
  j["reward_policy_mode"] = reward_policy_mode;
  j["lag_steps"] = lag_steps;
  j["length_normalize_loss"] = length_normalize_loss;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["total_steps"] = total_steps;
  j["filter_enabled"] = filter_enabled;
  j["filter_interval"] = filter_interval;
  j["filter_traces"] = filter_traces;
  j["rho"] = rho;
  j["rank_threshold_k"] = rank_threshold_k;
  j["variation_cut"] = variation_cut;
  j["carry_forward"] = carry_forward;
  j["init_mode"] = init_mode;
  j["family_seed"] = family_seed;
  j["seed"] = seed;
  return j.dump(2);
}

std::vector<double> group_advantage(std::span<const double> rewards, double epsilon_std) {
  if (rewards.size() < 2) fail("group_advantage: need at least two rewards");
  const double g = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= g;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std_dev = std::sqrt(var / g);
  std::vector<double> adv(rewards.size(), 0.0);
  if (std_dev < epsilon_std) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / std_dev;
  return adv;
}

double length_penalty(int outcome_len, int reference_len, double beta_len) {
  if (reference_len < 1) fail("length_penalty: reference length must be >= 1");
  const double diff = std::abs(static_cast<double>(reference_len) -
                               static_cast<double>(outcome_len));
  return 1.0 - beta_len * diff / static_cast<double>(reference_len);
}

RewardVector mix_rewards(const RewardVector& r3, std::span<const double> len_pen,
                         double lambda_mix, double epsilon_std) {
  if (r3.r.size() != len_pen.size()) fail("mix_rewards: length mismatch");
  if (lambda_mix < 0.0 || lambda_mix > 1.0)
    fail("mix_rewards: lambda_mix must be in [0, 1]");
  std::vector<double> z = group_advantage(r3.r, epsilon_std);
  RewardVector out;
  out.variant = r3.variant;
  out.r.resize(r3.r.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    out.r[i] = lambda_mix * z[i] + (1.0 - lambda_mix) * len_pen[i];
  return out;
}

std::vector<double> token_ratio_terms(std::span<const double> new_logp,
                                      std::span<const double> old_logp) {
  if (new_logp.size() != old_logp.size()) fail("token_ratio_terms: length mismatch");
  std::vector<double> out(new_logp.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = std::exp(new_logp[t] - old_logp[t]);
  return out;
}

std::vector<double> clipped_surrogate(std::span<const double> ratios, double advantage,
                                      double epsilon_low, double epsilon_high) {
  if (epsilon_low <= 0.0 || epsilon_high <= 0.0)
    fail("clipped_surrogate: clip bounds must be positive");
  std::vector<double> out(ratios.size());
  const double lo = 1.0 - epsilon_low;
  const double hi = 1.0 + epsilon_high;
  for (std::size_t t = 0; t < ratios.size(); ++t) {
    const double clipped = std::clamp(ratios[t], lo, hi);
    out[t] = std::min(ratios[t] * advantage, clipped * advantage);
  }
  return out;
}

double kl_term(std::span<const double> policy_logp, std::span<const double> ref_logp) {
  if (policy_logp.size() != ref_logp.size()) fail("kl_term: length mismatch");
  if (policy_logp.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t t = 0; t < policy_logp.size(); ++t) {
    const double d = ref_logp[t] - policy_logp[t];
    s += std::exp(d) - d - 1.0;
  }
  return s / static_cast<double>(policy_logp.size());
}

namespace {

struct GroupCheck {
  std::size_t usable_tokens = 0;
};

GroupCheck check_group(const GroupSample& group) {
  const std::size_t g = group.raw.size();
  if (g == 0) fail("grpo_objective: empty group");
  if (group.outputs.size() != g || group.old_logp.size() != g ||
      group.ref_logp.size() != g || group.advantages.size() != g)
    fail("grpo_objective: group arrays have inconsistent sizes");
  GroupCheck res;
  for (std::size_t i = 0; i < g; ++i) {
    if (group.old_logp[i].size() != group.raw[i].size() ||
        group.ref_logp[i].size() != group.raw[i].size())
      fail("grpo_objective: per-token arrays do not match raw lengths");
    if (!group.outputs[i].truncated) res.usable_tokens += group.raw[i].size();
  }
  if (res.usable_tokens == 0) fail("no optimizable tokens in group");
  return res;
}

}  // namespace

ObjectiveResult grpo_objective(const GroupSample& group, const PolicySnapshot& policy,
                               const TrainConfig& config) {
  check_group(group);
  const std::size_t g = group.raw.size();
  const double inv_g = 1.0 / static_cast<double>(g);
  const double lo = 1.0 - config.epsilon_low;
  const double hi = 1.0 + config.epsilon_high;

  ObjectiveResult res;
  res.grad.assign(policy.logits.size(), 0.0);

  std::vector<double> probs(static_cast<std::size_t>(policy.vocab_size));
  static thread_local std::vector<double> masked;
  double clipped_tokens = 0.0;
  int kl_outputs = 0;

  for (std::size_t i = 0; i < g; ++i) {
    if (group.outputs[i].truncated) continue;  // masked out of the loss
    const auto& raw = group.raw[i];
    const double adv = group.advantages[i];
    const double t_count = static_cast<double>(raw.size());
    const double norm = config.length_normalize_loss ? 1.0 / t_count : 1.0;

    ContextCursor cur(policy);
    cur.feed(group.prompt.tokens);

    double surrogate = 0.0;
    double kl_sum = 0.0;
    for (std::size_t t = 0; t < raw.size(); ++t) {
      const ContextKey key = cur.key();
      const TokenId tok = raw[t];
      if (!token_allowed(policy, key, tok))
        fail("grpo_objective: sampled token outside the sampling support");

      const auto row = policy.row(key.zone, key.slot0, key.slot1);
      masked.assign(row.begin(), row.end());
      if (key.zone == PolicySnapshot::kZoneOutcome)
        masked[static_cast<std::size_t>(policy.think_end)] = -1e30;
      const double m = kernels::reduce_max(masked);
      const double lse = m + std::log(kernels::sum_exp(masked, m));
      const double new_lp = masked[static_cast<std::size_t>(tok)] - lse;

      const double ratio = std::exp(new_lp - group.old_logp[i][t]);
      const double clipped = std::clamp(ratio, lo, hi);
      surrogate += std::min(ratio * adv, clipped * adv);
      if (ratio < lo || ratio > hi) clipped_tokens += 1.0;

      const double d_ref = group.ref_logp[i][t] - new_lp;
      kl_sum += std::exp(d_ref) - d_ref - 1.0;

      // d term / d new_lp: the unclipped branch is active unless the clip
      // bound on the relevant side binds.
      double gate;
      if (adv >= 0.0) {
        gate = ratio <= hi ? 1.0 : 0.0;
      } else {
        gate = ratio >= lo ? 1.0 : 0.0;
      }
      const double d_surr = gate * adv * ratio;
      const double d_kl = 1.0 - std::exp(d_ref);  // d kl_token / d new_lp
      const double coeff =
          inv_g * (norm * d_surr - config.beta_kl * d_kl / t_count);

      // d new_lp / d logits[v] = delta(v == tok) - softmax_masked(row)[v]
      kernels::softmax(masked, probs);
      auto grad_row = std::span<double>(
          res.grad.data() + policy.row_offset(key.zone, key.slot0, key.slot1),
          static_cast<std::size_t>(policy.vocab_size));
      kernels::axpy(-coeff, probs, grad_row);
      grad_row[static_cast<std::size_t>(tok)] += coeff;

      cur.feed(tok);
    }

    const double kl_i = kl_sum / t_count;
    res.objective += inv_g * (norm * surrogate - config.beta_kl * kl_i);
    res.kl += kl_i;
    ++kl_outputs;
    res.token_count += static_cast<int>(raw.size());
  }

  if (kl_outputs > 0) res.kl /= static_cast<double>(kl_outputs);
  if (res.token_count > 0)
    res.clip_frac = clipped_tokens / static_cast<double>(res.token_count);
  return res;
}

double grpo_objective_value(const GroupSample& group, const PolicySnapshot& policy,
                            const TrainConfig& config) {
  check_group(group);
  const std::size_t g = group.raw.size();
  const double inv_g = 1.0 / static_cast<double>(g);
  const double lo = 1.0 - config.epsilon_low;
  const double hi = 1.0 + config.epsilon_high;
  double objective = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    if (group.outputs[i].truncated) continue;
    const auto& raw = group.raw[i];
    const double adv = group.advantages[i];
    const double t_count = static_cast<double>(raw.size());
    const double norm = config.length_normalize_loss ? 1.0 / t_count : 1.0;
    const std::vector<double> new_lp = sampled_logp(policy, group.prompt, raw);
    double surrogate = 0.0;
    double kl_sum = 0.0;
    for (std::size_t t = 0; t < raw.size(); ++t) {
      const double ratio = std::exp(new_lp[t] - group.old_logp[i][t]);
      const double clipped = std::clamp(ratio, lo, hi);
      surrogate += std::min(ratio * adv, clipped * adv);
      const double d_ref = group.ref_logp[i][t] - new_lp[t];
      kl_sum += std::exp(d_ref) - d_ref - 1.0;
    }
    objective += inv_g * (norm * surrogate - config.beta_kl * kl_sum / t_count);
  }
  return objective;
}

GradCheckReport gradient_check(int seeds, std::uint64_t root_seed) {
  if (seeds < 1) fail("gradient_check: need at least one seed");
  const Vocabulary vocab = Vocabulary::tiny();
  GradCheckReport report;
  report.seeds = seeds;

  for (int s = 0; s < seeds; ++s) {
    RngStream rng = substream(root_seed, {hash_label("gradcheck"), static_cast<std::uint64_t>(s)});

    PolicySnapshot live = init_policy(vocab, rng.next());
    // widen the live policy so ratios leave the clip window
    for (double& x : live.logits) x *= 60.0;
    const PolicySnapshot sampler = init_policy(vocab, rng.next());
    const PolicySnapshot reference = init_policy(vocab, rng.next());

    TrainConfig config;
    config.group_size = 2;
    config.epsilon_low = 0.1;   // tight bounds so random ratios clip
    config.epsilon_high = 0.1;
    config.beta_kl = 0.05;
    config.length_normalize_loss = (s % 2) == 1;

    GroupSample group;
    group.prompt.tokens = {0};
    group.reference.tokens = {0};
    for (int i = 0; i < 2; ++i) {
      const int len = 1 + static_cast<int>(rng.below(4));
      std::vector<TokenId> raw;
      ContextCursor cur(live);
      cur.feed(group.prompt.tokens);
      for (int t = 0; t < len; ++t) {
        TokenId tok;
        do {
          tok = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab.size())));
        } while (!token_allowed(live, cur.key(), tok) || tok == vocab.eos);
        raw.push_back(tok);
        cur.feed(tok);
      }
      group.raw.push_back(raw);
      SampledOutput out = split_output(raw, vocab);
      out.truncated = false;  // keep every token in the loss
      group.outputs.push_back(out);
      group.old_logp.push_back(sampled_logp(sampler, group.prompt, raw));
      group.ref_logp.push_back(sampled_logp(reference, group.prompt, raw));
    }
    group.rewards.r = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    group.advantages = group_advantage(group.rewards.r, 1e-8);

    const ObjectiveResult analytic = grpo_objective(group, live, config);

    const double h = 1e-5;
    double grad_scale = 0.0;
    for (double gv : analytic.grad) grad_scale = std::max(grad_scale, std::abs(gv));

    PolicySnapshot probe = live;
    for (std::size_t k = 0; k < probe.logits.size(); ++k) {
      const double saved = probe.logits[k];
      probe.logits[k] = saved + h;
      const double up = grpo_objective_value(group, probe, config);
      probe.logits[k] = saved - h;
      const double down = grpo_objective_value(group, probe, config);
      probe.logits[k] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic.grad[k];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-6 * std::max(1.0, grad_scale)});
      if (denom > 0.0)
        report.max_rel_err = std::max(report.max_rel_err, std::abs(a - fd) / denom);
      ++report.params_checked;
    }
  }
  return report;
}

}  // namespace dro
