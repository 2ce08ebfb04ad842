#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "dro/tasks.hpp"
#include "dro/trainer.hpp"

using namespace dro;

namespace {

std::vector<TaskPoolEntry> small_pool(const Vocabulary& vocab, const TaskFamily& family,
                                      int count, std::uint64_t seed0) {
  std::vector<TaskPoolEntry> pool;
  for (int i = 0; i < count; ++i) {
    SyntheticTask st =
        gen_task(TaskKind::copy_edit, vocab, family, seed0 + static_cast<std::uint64_t>(i));
    st.task.id = "t" + std::to_string(i);
    pool.push_back(TaskPoolEntry{st.task, TaskStatus::active, std::nullopt});
  }
  return pool;
}

TrainConfig small_config() {
  TrainConfig c;
  c.group_size = 4;
  c.batch_size = 4;
  c.total_steps = 3;
  c.max_len = 80;
  c.filter_enabled = false;
  c.init_mode = "copy_competent";
  c.family_seed = 7;
  c.seed = 1;
  return c;
}

}  // namespace

TEST_CASE("learning rate zero leaves the actor unchanged but emits metrics") {
  const Vocabulary vocab = Vocabulary::standard();
  const TaskFamily family = TaskFamily::make(vocab, 7);
  TrainConfig config = small_config();
  config.learning_rate = 0.0;
  config.total_steps = 2;

  const PolicySnapshot initial = make_initial_policy(config, vocab);
  const RunResult result =
      run_training(config, vocab, small_pool(vocab, family, 6, 100), initial);
  CHECK(result.metrics.size() == 2);
  CHECK(result.actor.logits == initial.logits);
  CHECK(result.actor.version == 2);  // updates applied, all zero
  for (const StepMetrics& m : result.metrics) CHECK(m.step >= 1);
}

TEST_CASE("degenerate group: deterministic policy, zero advantages, zero gradient") {
  const Vocabulary vocab = Vocabulary::tiny();
  PolicySnapshot det = init_policy(vocab, 3);
  for (double& x : det.logits) x = 0.0;
  // always emit: x, THINK_END, x, EOS
  for (TokenId s0 = 0; s0 < 5; ++s0)
    for (TokenId s1 = 0; s1 < 5; ++s1) {
      auto r = det.row(PolicySnapshot::kZoneReasoning, s0, s1);
      r[static_cast<std::size_t>(s1 == 0 ? vocab.think_end : 0)] = 40.0;
      auto o = det.row(PolicySnapshot::kZoneOutcome, s0, s1);
      o[static_cast<std::size_t>(s1 == vocab.think_end ? 0 : vocab.eos)] = 40.0;
    }

  TrainConfig config;
  config.group_size = 4;
  config.batch_size = 1;
  config.total_steps = 1;
  config.max_len = 8;
  config.filter_enabled = false;
  config.beta_kl = 0.0;  // so the degenerate group implies a zero update
  config.learning_rate = 0.5;

  Task task;
  task.id = "d0";
  task.prompt.tokens = {0};
  task.reference.tokens = {0};
  std::vector<TaskPoolEntry> pool = {TaskPoolEntry{task, TaskStatus::active, std::nullopt}};

  const RunResult result = run_training(config, vocab, pool, det);
  CHECK(result.actor.logits == det.logits);
  CHECK(result.metrics[0].std_r3 == doctest::Approx(0.0));
}

TEST_CASE("byte-identical reruns: metrics, reports, checkpoint") {
  const Vocabulary vocab = Vocabulary::standard();
  const TaskFamily family = TaskFamily::make(vocab, 7);
  TrainConfig config = small_config();
  config.filter_enabled = true;
  config.filter_interval = 2;
  config.total_steps = 4;
  config.rank_threshold_k = 40.0;  // lenient so tasks survive

  const auto pool = small_pool(vocab, family, 8, 300);
  const RunResult a = run_training(config, vocab, pool);
  const RunResult b = run_training(config, vocab, pool);
  CHECK(metrics_to_jsonl(a.metrics) == metrics_to_jsonl(b.metrics));
  CHECK(reports_to_jsonl(a.filter_reports) == reports_to_jsonl(b.filter_reports));
  CHECK(checkpoint_to_json(a.actor, vocab, config) ==
        checkpoint_to_json(b.actor, vocab, config));
  CHECK(a.task_steps == b.task_steps);
}

TEST_CASE("reward policy modes: static_ref is constant, synced tracks the actor") {
  const Vocabulary vocab = Vocabulary::standard();
  const TaskFamily family = TaskFamily::make(vocab, 7);

  auto make_state = [&](const std::string& mode) {
    TrainConfig config = small_config();
    config.reward_policy_mode = mode;
    config.total_steps = 3;
    config.learning_rate = 1.0;  // make sure the actor moves
    return init_run_state(config, vocab, small_pool(vocab, family, 4, 500),
                          make_initial_policy(config, vocab));
  };

  // static_ref: the scoring snapshot never leaves the initialization, so a
  // fixed (prompt, traces, reference) matrix is identical across steps
  RunState stat = make_state("static_ref");
  const SyntheticTask probe = gen_task(TaskKind::copy_edit, vocab, family, 999);
  const std::vector<std::vector<TokenId>> traces = {{10}, {11}};
  std::vector<CertaintyMatrix> per_step;
  for (int s = 0; s < 3; ++s) {
    train_step(stat);
    CHECK(stat.reward.logits == stat.reference.logits);
    per_step.push_back(build_certainty_matrix(stat.reward, probe.task.prompt, traces,
                                              probe.task.reference));
  }
  CHECK(per_step[0].rows[0].logp == per_step[1].rows[0].logp);
  CHECK(per_step[1].rows[0].logp == per_step[2].rows[0].logp);

  // synced: the scoring snapshot equals the actor at each step's start
  RunState syn = make_state("synced");
  for (int s = 0; s < 3; ++s) {
    train_step(syn);
    CHECK(syn.reward.logits == syn.old_actor.logits);
  }
  CHECK(syn.reward.logits != syn.reference.logits);

  // lagged: refreshed only at the lag boundary
  RunState lag = make_state("lagged");
  lag.config.lag_steps = 2;
  train_step(lag);
  const std::vector<double> lag_snapshot = lag.reward.logits;
  train_step(lag);
  CHECK(lag.reward.logits == lag_snapshot);  // step 2 keeps the step-1 snapshot
  train_step(lag);
  CHECK(lag.reward.logits != lag_snapshot);  // step 3 refreshes
}

TEST_CASE("filter cadence: one initial round when the interval exceeds total steps") {
  const Vocabulary vocab = Vocabulary::standard();
  const TaskFamily family = TaskFamily::make(vocab, 7);
  TrainConfig config = small_config();
  config.filter_enabled = true;
  config.filter_interval = 50;
  config.total_steps = 4;
  config.rank_threshold_k = 40.0;

  const RunResult result = run_training(config, vocab, small_pool(vocab, family, 5, 900));
  std::set<int> rounds;
  for (const auto& rec : result.filter_reports) rounds.insert(rec.round);
  CHECK(rounds == std::set<int>{0});
}

TEST_CASE("filter that removes everything raises the documented error") {
  const Vocabulary vocab = Vocabulary::standard();
  const TaskFamily family = TaskFamily::make(vocab, 7);
  TrainConfig config = small_config();
  config.filter_enabled = true;
  config.rank_threshold_k = 0.0;  // nothing passes stage 1
  config.carry_forward = 0.0;

  CHECK_THROWS_WITH_AS(
      run_training(config, vocab, small_pool(vocab, family, 4, 1200)),
      doctest::Contains("relax thresholds"), Error);
}

TEST_CASE("every reward variant drives a step") {
  const Vocabulary vocab = Vocabulary::standard();
  const TaskFamily family = TaskFamily::make(vocab, 7);
  for (const char* variant : {"vanilla", "weighted", "propagated", "masked"}) {
    TrainConfig config = small_config();
    config.variant = variant;
    config.total_steps = 2;
    const RunResult result =
        run_training(config, vocab, small_pool(vocab, family, 4, 700));
    CHECK(result.metrics.size() == 2);
    CHECK(std::isfinite(result.metrics.back().mean_r3));
  }
}

TEST_CASE("checkpoint save/load round-trip") {
  const Vocabulary vocab = Vocabulary::standard();
  const TrainConfig config = small_config();
  const PolicySnapshot p = make_initial_policy(config, vocab);
  const std::string path = "trainer_test_ckpt.json";
  save_checkpoint(path, p, vocab, config);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.policy.logits == p.logits);
  CHECK(ck.policy.version == p.version);
  CHECK(ck.vocab.symbols == vocab.symbols);
  CHECK(ck.config.family_seed == config.family_seed);
  std::remove(path.c_str());
}

TEST_CASE("short training run raises the masked reward") {
  const Vocabulary vocab = Vocabulary::standard();
  const TaskFamily family = TaskFamily::make(vocab, 7);
  TrainConfig config = small_config();
  config.group_size = 8;
  config.batch_size = 8;
  config.total_steps = 60;
  config.learning_rate = 30.0;
  config.epsilon_std = 0.05;
  config.sigma_floor = 0.25;
  config.seed = 5;

  const RunResult result = run_training(config, vocab, small_pool(vocab, family, 8, 2000));
  REQUIRE(result.metrics.size() == 60);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 10; ++i) {
    early += result.metrics[static_cast<std::size_t>(i)].mean_r3;
    late += result.metrics[result.metrics.size() - 1 - static_cast<std::size_t>(i)].mean_r3;
  }
  CHECK(late > early);
}
