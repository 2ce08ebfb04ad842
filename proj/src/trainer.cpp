#include "dro/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dro/kernels.hpp"
#include "dro/r3.hpp"

namespace dro {

using nlohmann::json;

std::string StepMetrics::to_json_line() const {
  json j;
  j["step"] = step;
  j["mean_r3"] = mean_r3;
  j["std_r3"] = std_r3;
  j["mean_len_reasoning"] = mean_len_reasoning;
  j["mean_len_outcome"] = mean_len_outcome;
  j["kl"] = kl;
  j["objective"] = objective;
  j["clip_frac"] = clip_frac;
  return j.dump();
}

PolicySnapshot make_initial_policy(const TrainConfig& config, const Vocabulary& vocab) {
  if (config.init_mode == "copy_competent") {
    const TaskFamily family = TaskFamily::make(vocab, config.family_seed);
    return make_copy_policy(vocab, family, CopyPolicyParams{}, config.seed);
  }
  return init_policy(vocab, config.seed);
}

std::vector<TaskPoolEntry> make_pool(std::vector<Task> tasks) {
  std::vector<TaskPoolEntry> pool;
  pool.reserve(tasks.size());
  for (Task& t : tasks) {
    TaskPoolEntry e;
    e.task = std::move(t);
    pool.push_back(std::move(e));
  }
  return pool;
}

namespace {

void reshuffle_order(RunState& state) {
  state.order = state.active;
  RngStream rng = substream(state.config.seed,
                            {hash_label("batch_order"), state.epoch});
  for (std::size_t i = state.order.size(); i > 1; --i)
    std::swap(state.order[i - 1], state.order[rng.below(i)]);
  state.cursor = 0;
  ++state.epoch;
}

void set_active(RunState& state, std::vector<std::string> active) {
  state.active = std::move(active);
  reshuffle_order(state);
}

std::vector<const TaskPoolEntry*> next_batch(RunState& state) {
  const std::size_t want = std::min<std::size_t>(
      static_cast<std::size_t>(state.config.batch_size), state.active.size());
  std::vector<const TaskPoolEntry*> batch;
  batch.reserve(want);
  while (batch.size() < want) {
    if (state.cursor >= state.order.size()) reshuffle_order(state);
    const std::string& id = state.order[state.cursor++];
    batch.push_back(&state.pool[state.pool_index.at(id)]);
  }
  return batch;
}

}  // namespace

RunState init_run_state(const TrainConfig& config, const Vocabulary& vocab,
                        std::vector<TaskPoolEntry> pool, const PolicySnapshot& initial) {
  config.validate();
  if (pool.empty()) fail("init_run_state: empty task pool");
  RunState state;
  state.config = config;
  state.vocab = vocab;
  state.pool = std::move(pool);
  for (std::size_t i = 0; i < state.pool.size(); ++i) {
    if (!state.pool_index.emplace(state.pool[i].task.id, i).second)
      fail("init_run_state: duplicate task id '" + state.pool[i].task.id + "'");
  }
  state.actor = initial;
  state.actor.role = Role::actor;
  state.old_actor = state.actor;
  state.old_actor.role = Role::old_policy;
  state.reference = initial;
  state.reference.role = Role::reference;
  state.reward = initial;
  state.reward.role = Role::reward;

  std::vector<std::string> all;
  all.reserve(state.pool.size());
  for (const auto& e : state.pool) all.push_back(e.task.id);
  set_active(state, std::move(all));
  return state;
}

bool filter_round_due(const RunState& state) {
  if (!state.config.filter_enabled) return false;
  return state.step % state.config.filter_interval == 0 &&
         state.filter_rounds == state.step / state.config.filter_interval;
}

FilterRoundResult run_scheduled_filter(RunState& state) {
  FilterRoundResult round =
      run_filter_round(state.actor, state.vocab, state.pool, state.active,
                       state.config, state.filter_rounds, state.config.seed);
  ++state.filter_rounds;
  if (round.active.empty()) fail("filter removed all tasks; relax thresholds");
  set_active(state, round.active);
  return round;
}

StepMetrics train_step(RunState& state) {
  const TrainConfig& cfg = state.config;
  const int step_no = state.step + 1;

  // reward snapshot per mode, fixed for the whole step
  switch (cfg.mode()) {
    case RewardPolicyMode::static_ref:
      break;  // stays at the initialization snapshot
    case RewardPolicyMode::synced:
      state.reward = state.actor;
      state.reward.role = Role::reward;
      break;
    case RewardPolicyMode::lagged:
      if ((step_no - 1) % cfg.lag_steps == 0) {
        state.reward = state.actor;
        state.reward.role = Role::reward;
      }
      break;
  }

  const std::vector<const TaskPoolEntry*> batch = next_batch(state);
  if (batch.empty()) fail("train_step: no active tasks");

  std::vector<double> grad(state.actor.param_count(), 0.0);
  StepMetrics metrics;
  metrics.step = step_no;

  double r3_sum = 0.0, r3_sq = 0.0;
  long long r3_count = 0;
  double len_r_sum = 0.0, len_o_sum = 0.0;
  long long out_count = 0;
  double kl_sum = 0.0, obj_sum = 0.0, clip_sum = 0.0;
  int obj_count = 0;

  const MaskedTrace masked_trace;  // empty stand-in

  for (const TaskPoolEntry* entry : batch) {
    const Task& task = entry->task;
    GroupSample group;
    group.prompt = task.prompt;
    group.reference = task.reference;

    std::vector<std::vector<TokenId>> traces;
    traces.reserve(static_cast<std::size_t>(cfg.group_size));
    for (int i = 0; i < cfg.group_size; ++i) {
      RngStream stream = substream(
          cfg.seed, {hash_label("rollout"), static_cast<std::uint64_t>(step_no),
                     hash_label(task.id), static_cast<std::uint64_t>(i)});
      SampleResult sample = sample_output(state.actor, task.prompt, cfg.temperature,
                                          cfg.top_p, cfg.max_len, stream);
      SampledOutput split = split_output(sample.raw, state.vocab);
      split.truncated = sample.truncated;
      traces.push_back(split.reasoning);
      len_r_sum += static_cast<double>(split.reasoning.size());
      len_o_sum += static_cast<double>(split.outcome.size());
      ++out_count;
      group.ref_logp.push_back(sampled_logp(state.reference, task.prompt, sample.raw));
      group.raw.push_back(std::move(sample.raw));
      group.old_logp.push_back(std::move(sample.logp));
      group.outputs.push_back(std::move(split));
    }

    const CertaintyMatrix matrix =
        build_certainty_matrix(state.reward, task.prompt, traces, task.reference);
    const ReflectionStats stats =
        reflection_stats(matrix, cfg.sigma_floor, cfg.quantile);

    RewardVector r3;
    switch (cfg.reward_variant()) {
      case RewardVariant::vanilla:
        r3 = vanilla_reward(matrix);
        break;
      case RewardVariant::weighted:
        r3 = weighted_reward(matrix, stats);
        break;
      case RewardVariant::propagated:
        r3 = propagated_reward(matrix, stats, cfg.gamma);
        break;
      case RewardVariant::masked: {
        const CertaintyRow& baseline = state.baseline_cache.get(
            state.reward, task.id, task.prompt, masked_trace, task.reference);
        r3 = masked_reward(matrix, baseline, stats);
        break;
      }
    }
    for (double r : r3.r) {
      r3_sum += r;
      r3_sq += r * r;
      ++r3_count;
    }

    std::vector<double> len_pen;
    len_pen.reserve(group.outputs.size());
    for (const SampledOutput& out : group.outputs) {
      len_pen.push_back(length_penalty(static_cast<int>(out.outcome.size()),
                                       static_cast<int>(task.reference.tokens.size()),
                                       cfg.beta_len));
    }
    group.rewards = mix_rewards(r3, len_pen, cfg.lambda_mix, cfg.epsilon_std);
    group.advantages = group_advantage(group.rewards.r, cfg.epsilon_std);

    const bool any_unmasked = std::any_of(
        group.outputs.begin(), group.outputs.end(),
        [](const SampledOutput& o) { return !o.truncated; });
    if (!any_unmasked) continue;  // nothing to optimize for this task

    ObjectiveResult res = grpo_objective(group, state.actor, cfg);
    kernels::axpy(1.0, res.grad, grad);
    kl_sum += res.kl;
    obj_sum += res.objective;
    clip_sum += res.clip_frac;
    ++obj_count;
  }

  // average the accumulated gradients over the batch, matching the
  // expectation over prompts in the objective
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= scale;

  state.old_actor = state.actor;
  state.old_actor.role = Role::old_policy;
  state.actor = apply_gradient(state.actor, grad, cfg.learning_rate);

  state.task_steps += static_cast<long long>(batch.size());
  state.step = step_no;

  if (r3_count > 0) {
    metrics.mean_r3 = r3_sum / static_cast<double>(r3_count);
    metrics.std_r3 = std::sqrt(std::max(
        0.0, r3_sq / static_cast<double>(r3_count) - metrics.mean_r3 * metrics.mean_r3));
  }
  if (out_count > 0) {
    metrics.mean_len_reasoning = len_r_sum / static_cast<double>(out_count);
    metrics.mean_len_outcome = len_o_sum / static_cast<double>(out_count);
  }
  if (obj_count > 0) {
    metrics.kl = kl_sum / static_cast<double>(obj_count);
    metrics.objective = obj_sum / static_cast<double>(obj_count);
    metrics.clip_frac = clip_sum / static_cast<double>(obj_count);
  }
  return metrics;
}

RunResult run_training(const TrainConfig& config, const Vocabulary& vocab,
                       std::vector<TaskPoolEntry> pool) {
  return run_training(config, vocab, std::move(pool),
                      make_initial_policy(config, vocab));
}

RunResult run_training(const TrainConfig& config, const Vocabulary& vocab,
                       std::vector<TaskPoolEntry> pool, const PolicySnapshot& initial) {
  RunState state = init_run_state(config, vocab, std::move(pool), initial);
  RunResult result;
  for (int step = 1; step <= config.total_steps; ++step) {
    if (filter_round_due(state)) {
      FilterRoundResult round = run_scheduled_filter(state);
      result.filter_reports.insert(result.filter_reports.end(),
                                   round.records.begin(), round.records.end());
    }
    result.metrics.push_back(train_step(state));
  }
  result.actor = state.actor;
  result.reference = state.reference;
  result.final_active = state.active;
  result.task_steps = state.task_steps;
  return result;
}

std::string metrics_to_jsonl(std::span<const StepMetrics> metrics) {
  std::string out;
  for (const StepMetrics& m : metrics) {
    out += m.to_json_line();
    out += "\n";
  }
  return out;
}

std::string reports_to_jsonl(std::span<const FilterReportRecord> reports) {
  std::string out;
  for (const FilterReportRecord& r : reports) {
    out += filter_report_line(r);
    out += "\n";
  }
  return out;
}

std::string checkpoint_to_json(const PolicySnapshot& policy, const Vocabulary& vocab,
                               const TrainConfig& config) {
  json j;
  j["role"] = role_name(policy.role);
  j["version"] = policy.version;
  j["params"] = policy.logits;
  json v;
  v["symbols"] = vocab.symbols;
  v["bos"] = vocab.bos;
  v["eos"] = vocab.eos;
  v["think_end"] = vocab.think_end;
  v["pad"] = vocab.pad;
  j["vocab"] = v;
  j["config"] = json::parse(config.to_json_text());
  return j.dump();
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(path + ": malformed JSON (" + std::string(e.what()) + ")");
  }
  Checkpoint ck;
  try {
    ck.vocab.symbols = j.at("vocab").at("symbols").get<std::vector<std::string>>();
    ck.vocab.bos = j.at("vocab").at("bos").get<TokenId>();
    ck.vocab.eos = j.at("vocab").at("eos").get<TokenId>();
    ck.vocab.think_end = j.at("vocab").at("think_end").get<TokenId>();
    ck.vocab.pad = j.at("vocab").at("pad").get<TokenId>();
    ck.vocab.validate();
    ck.config = TrainConfig::from_json_text(j.at("config").dump(), path + "#config");
    ck.policy.vocab_size = ck.vocab.size();
    ck.policy.bos = ck.vocab.bos;
    ck.policy.eos = ck.vocab.eos;
    ck.policy.think_end = ck.vocab.think_end;
    ck.policy.role = role_from_name(j.at("role").get<std::string>());
    ck.policy.version = j.at("version").get<std::uint64_t>();
    ck.policy.logits = j.at("params").get<std::vector<double>>();
  } catch (const json::exception& e) {
    fail(path + ": bad checkpoint (" + e.what() + ")");
  }
  const std::size_t v = static_cast<std::size_t>(ck.policy.vocab_size);
  if (ck.policy.logits.size() != 2 * v * v * v)
    fail(path + ": parameter count does not match the vocabulary size");
  return ck;
}

void save_checkpoint(const std::string& path, const PolicySnapshot& policy,
                     const Vocabulary& vocab, const TrainConfig& config) {
  std::ofstream out(path);
  if (!out) fail("cannot write checkpoint: " + path);
  out << checkpoint_to_json(policy, vocab, config) << "\n";
}

}  // namespace dro
