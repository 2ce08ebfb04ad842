// Acceptance suite: eight checks, one pass/fail line each, exit code is the
// number of hard failures. Check 6 is comparative and prints FLAGGED instead
// of FAIL when the expected separation does not materialize; its run
// artifacts are preserved under acceptance_artifacts/.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dro/filtering.hpp"
#include "dro/grpo.hpp"
#include "dro/kernels.hpp"
#include "dro/r3.hpp"
#include "dro/rng.hpp"
#include "dro/tasks.hpp"
#include "dro/trainer.hpp"

using namespace dro;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int criterion, bool pass, const std::string& detail, double elapsed,
            double budget_s, bool soft = false) {
  const bool in_budget = elapsed <= budget_s;
  const char* tag = pass && in_budget ? "PASS" : (soft ? "FLAGGED" : "FAIL");
  if (!(pass && in_budget) && !soft) ++g_failures;
  std::printf("criterion %d: %s - %s [%.2fs, budget %.0fs]\n", criterion, tag,
              detail.c_str(), elapsed, budget_s);
  std::fflush(stdout);
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// ---------------------------------------------------------------- criterion 1
void criterion1_formula_fidelity() {
  const auto t0 = Clock::now();
  RngStream rng{101};
  double worst = 0.0;

  for (int i = 0; i < 1000; ++i) {
    const double p = rng.uniform();
    const int d = 1 + static_cast<int>(rng.below(50));
    const double gamma = rng.uniform(0.01, 3.0);
    const long double want =
        static_cast<long double>(p) +
        (1.0L - static_cast<long double>(p)) *
            (1.0L - expl(-static_cast<long double>(gamma) * d));
    worst = std::max(worst, rel_err(propagation_factor(p, d, gamma),
                                    static_cast<double>(want)));
  }
  for (int i = 0; i < 1000; ++i) {
    const int out_len = static_cast<int>(rng.below(300));
    const int ref_len = 1 + static_cast<int>(rng.below(200));
    const double beta = rng.uniform(0.0, 2.0);
    const long double want =
        1.0L - static_cast<long double>(beta) *
                   fabsl(static_cast<long double>(ref_len) - out_len) / ref_len;
    worst = std::max(worst, rel_err(length_penalty(out_len, ref_len, beta),
                                    static_cast<double>(want)));
  }
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(64);
    std::vector<double> pol(n), ref(n);
    for (std::size_t t = 0; t < n; ++t) {
      pol[t] = rng.uniform(-8.0, 0.0);
      ref[t] = rng.uniform(-8.0, 0.0);
    }
    long double acc = 0.0L;
    for (std::size_t t = 0; t < n; ++t) {
      const long double dd = static_cast<long double>(ref[t]) - pol[t];
      acc += expl(dd) - dd - 1.0L;
    }
    worst = std::max(worst, rel_err(kl_term(pol, ref),
                                    static_cast<double>(acc / static_cast<long double>(n))));
  }
  for (int i = 0; i < 1000; ++i) {
    const std::size_t g = 2 + rng.below(31);
    std::vector<double> r(g);
    for (double& x : r) x = rng.uniform(-10.0, 10.0);
    long double mean = 0.0L;
    for (double x : r) mean += x;
    mean /= static_cast<long double>(g);
    long double var = 0.0L;
    for (double x : r) var += (x - mean) * (x - mean);
    const long double sd = sqrtl(var / static_cast<long double>(g));
    const std::vector<double> adv = group_advantage(r, 1e-8);
    for (std::size_t k = 0; k < g; ++k) {
      const long double want = sd < 1e-8L ? 0.0L : (r[k] - mean) / sd;
      worst = std::max(worst, rel_err(adv[k], static_cast<double>(want)));
    }
  }

  char buf[128];
  std::snprintf(buf, sizeof buf, "max relative error %.3g (budget 1e-10), 4x1000 inputs",
                worst);
  report(1, worst < 1e-10, buf, seconds_since(t0), 5.0);
}

// ---------------------------------------------------------------- criterion 2
void criterion2_reduction_identities() {
  const auto t0 = Clock::now();
  RngStream rng{202};
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int g = 2 + static_cast<int>(rng.below(7));
    const int n = 1 + static_cast<int>(rng.below(24));
    CertaintyMatrix m;
    m.group_size = g;
    m.reference_len = n;
    for (int i = 0; i < g; ++i) {
      CertaintyRow row;
      for (int j = 0; j < n; ++j) row.logp.push_back(rng.uniform(-8.0, 0.0));
      row.rank.assign(static_cast<std::size_t>(n), 1);
      m.rows.push_back(std::move(row));
    }
    ReflectionStats uniform;
    uniform.sigma.assign(static_cast<std::size_t>(n), 0.0);
    uniform.weights.assign(static_cast<std::size_t>(n), 1.0);
    CertaintyRow zero_baseline;
    zero_baseline.logp.assign(static_cast<std::size_t>(n), 0.0);

    const RewardVector w = weighted_reward(m, uniform);
    const RewardVector p = propagated_reward(m, uniform, 0.5);
    const RewardVector k = masked_reward(m, zero_baseline, uniform);
    for (int i = 0; i < g; ++i) {
      const double v = vanilla_aggregate(m.rows[static_cast<std::size_t>(i)]);
      worst = std::max(worst, std::abs(w.r[static_cast<std::size_t>(i)] - v));
      worst = std::max(worst, std::abs(p.r[static_cast<std::size_t>(i)] - v));
      worst = std::max(worst, std::abs(k.r[static_cast<std::size_t>(i)] - v));
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof buf,
                "max deviation from vanilla %.3g (budget 1e-9), 100 matrices", worst);
  report(2, worst < 1e-9, buf, seconds_since(t0), 5.0);
}

// ---------------------------------------------------------------- criterion 3
void criterion3_ranking_phenomenon() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail = "20 constructed instances: vanilla prefers the worse trace, "
                       "weighted recovers the planted one";
  for (std::uint64_t seed = 0; seed < 20 && ok; ++seed) {
    try {
      const RankingInstance inst = make_ranking_instance(seed);
      ok = ok && inst.matrix.reference_len >= 10;
      ok = ok && static_cast<int>(inst.planted_columns.size()) <= 3;
      ok = ok && inst.vanilla_b > inst.vanilla_a;
      ok = ok && inst.weighted_a > inst.weighted_b;
      ok = ok && inst.better_trace == 0;
      if (!ok) detail = "instance " + std::to_string(seed) + " violated a property";
    } catch (const Error& e) {
      ok = false;
      detail = e.what();
    }
  }
  report(3, ok, detail, seconds_since(t0), 30.0);
}

// ---------------------------------------------------------------- criterion 4
void criterion4_gradient() {
  const auto t0 = Clock::now();
  const GradCheckReport r = gradient_check(10);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "analytic vs central differences: max rel err %.3g over %d params, "
                "10 instances (budget 1e-4)",
                r.max_rel_err, r.params_checked);
  report(4, r.max_rel_err < 1e-4, buf, seconds_since(t0), 60.0);
}

// ------------------------------------------------------- criteria 5-8 support
struct LearningSetup {
  Vocabulary vocab = Vocabulary::standard();
  TaskFamily family;
  std::vector<TaskPoolEntry> train_pool;
  std::vector<Task> held_out;

  LearningSetup() : family(TaskFamily::make(vocab, 7)) {
    for (int i = 0; i < 200; ++i) {
      SyntheticTask st = gen_task(TaskKind::copy_edit, vocab, family,
                                  1000 + static_cast<std::uint64_t>(i));
      st.task.id = "train_" + std::to_string(i);
      train_pool.push_back(TaskPoolEntry{st.task, TaskStatus::active, std::nullopt});
    }
    for (int i = 0; i < 100; ++i) {
      SyntheticTask st = gen_task(TaskKind::copy_edit, vocab, family,
                                  9000 + static_cast<std::uint64_t>(i));
      st.task.id = "held_" + std::to_string(i);
      held_out.push_back(st.task);
    }
  }

  TrainConfig base_config() const {
    TrainConfig c;
    c.group_size = 8;
    c.batch_size = 16;
    c.total_steps = 200;
    c.variant = "masked";
    c.filter_enabled = false;
    c.learning_rate = 30.0;  // tabular-logit scale
    c.max_len = 64;
    c.epsilon_std = 0.05;    // near-tied groups carry no usable signal
    c.sigma_floor = 0.25;    // regularizes G=8 sigma estimates
    c.init_mode = "copy_competent";
    c.family_seed = 7;
    c.seed = 12;
    return c;
  }
};

struct CurvePoint {
  int step;
  double accuracy;
};

struct TrackedRun {
  std::vector<CurvePoint> curve;
  std::vector<StepMetrics> metrics;
  double final_accuracy = 0.0;
};

TrackedRun run_with_eval(const LearningSetup& setup, const TrainConfig& config,
                         int eval_every) {
  RunState state = init_run_state(config, setup.vocab, setup.train_pool,
                                  make_initial_policy(config, setup.vocab));
  TrackedRun out;
  for (int step = 1; step <= config.total_steps; ++step) {
    if (filter_round_due(state)) run_scheduled_filter(state);
    out.metrics.push_back(train_step(state));
    if (step % eval_every == 0 || step == config.total_steps) {
      out.curve.push_back({step, eval_exact_match(state.actor, setup.vocab,
                                                  setup.held_out, config.max_len)});
    }
  }
  out.final_accuracy = out.curve.back().accuracy;
  return out;
}

int steps_to_reach(const TrackedRun& run, double threshold) {
  for (const CurvePoint& p : run.curve)
    if (p.accuracy >= threshold) return p.step;
  return -1;
}

void dump_curve(const std::string& path, const TrackedRun& run) {
  std::ofstream out(path);
  for (const CurvePoint& p : run.curve)
    out << p.step << "\t" << p.accuracy << "\n";
}

// ---------------------------------------------------------------- criterion 5
double g_c5_threshold = 0.10;  // shared with criterion 6

void criterion5_end_to_end(const LearningSetup& setup) {
  const auto t0 = Clock::now();
  const TrainConfig config = setup.base_config();

  const PolicySnapshot initial = make_initial_policy(config, setup.vocab);
  const double acc0 =
      eval_exact_match(initial, setup.vocab, setup.held_out, config.max_len);

  const TrackedRun run = run_with_eval(setup, config, 200);
  const double target = std::max(2.0 * acc0, 0.10);
  g_c5_threshold = target;

  const double r3_first = run.metrics.front().mean_r3;
  const double r3_last = run.metrics.back().mean_r3;
  const bool pass = run.final_accuracy >= target && r3_last > r3_first;

  char buf[220];
  std::snprintf(buf, sizeof buf,
                "held-out exact match %.3f -> %.3f (target >= %.3f), "
                "mean R3 step1 %.3f -> step200 %.3f",
                acc0, run.final_accuracy, target, r3_first, r3_last);
  report(5, pass, buf, seconds_since(t0), 600.0);
}

// ---------------------------------------------------------------- criterion 6
void criterion6_variant_separation(const LearningSetup& setup) {
  const auto t0 = Clock::now();
  TrainConfig weighted_cfg = setup.base_config();
  weighted_cfg.variant = "weighted";
  TrainConfig vanilla_cfg = setup.base_config();
  vanilla_cfg.variant = "vanilla";

  const TrackedRun weighted = run_with_eval(setup, weighted_cfg, 1);
  const TrackedRun vanilla = run_with_eval(setup, vanilla_cfg, 1);

  const double threshold = g_c5_threshold;
  const int sw = steps_to_reach(weighted, threshold);
  const int sv = steps_to_reach(vanilla, threshold);
  const bool pass = sw > 0 && (sv < 0 || sw < sv);

  char buf[220];
  std::snprintf(buf, sizeof buf,
                "steps to %.3f exact match: weighted %d, vanilla %d%s", threshold, sw, sv,
                pass ? "" : " (artifacts in acceptance_artifacts/)");
  if (!pass) {
    std::filesystem::create_directories("acceptance_artifacts");
    dump_curve("acceptance_artifacts/criterion6_weighted.tsv", weighted);
    dump_curve("acceptance_artifacts/criterion6_vanilla.tsv", vanilla);
  }
  report(6, pass, buf, seconds_since(t0), 600.0, /*soft=*/true);
}

// ---------------------------------------------------------------- criterion 7
void criterion7_filtering(const LearningSetup& setup) {
  const auto t0 = Clock::now();

  std::vector<TaskPoolEntry> pool;
  for (int i = 0; i < 475; ++i) {
    SyntheticTask st = gen_task(TaskKind::copy_edit, setup.vocab, setup.family,
                                2000 + static_cast<std::uint64_t>(i));
    st.task.id = "pool_copy_" + std::to_string(i);
    pool.push_back(TaskPoolEntry{st.task, TaskStatus::active, std::nullopt});
  }
  for (int i = 0; i < 25; ++i) {
    SyntheticTask st = gen_task(TaskKind::arithmetic_chain, setup.vocab, setup.family,
                                3000 + static_cast<std::uint64_t>(i));
    st.task.id = "pool_arith_" + std::to_string(i);
    pool.push_back(TaskPoolEntry{st.task, TaskStatus::active, std::nullopt});
  }

  TrainConfig config = setup.base_config();
  config.batch_size = 500;  // every active task, every step
  config.total_steps = 48;
  config.seed = 21;
  config.filter_enabled = true;  // defaults: interval 8, N 16, rho 0.1, k 5, cut 0.25

  TrainConfig off = config;
  off.filter_enabled = false;

  const RunResult filtered = run_training(config, setup.vocab, pool);
  const RunResult unfiltered = run_training(off, setup.vocab, pool);

  const double reduction =
      1.0 - static_cast<double>(filtered.task_steps) /
                static_cast<double>(unfiltered.task_steps);
  const double r3_f = filtered.metrics.back().mean_r3;
  const double r3_u = unfiltered.metrics.back().mean_r3;
  const double r3_gap = std::abs(r3_f - r3_u) / std::max(std::abs(r3_f), std::abs(r3_u));
  const bool pass = reduction >= 0.20 && r3_gap <= 0.10;

  char buf[220];
  std::snprintf(buf, sizeof buf,
                "task-steps %lld vs %lld (%.1f%% fewer, need >= 20%%), final mean R3 "
                "%.3f vs %.3f (gap %.1f%%, cap 10%%)",
                filtered.task_steps, unfiltered.task_steps, 100.0 * reduction, r3_f, r3_u,
                100.0 * r3_gap);
  report(7, pass, buf, seconds_since(t0), 1200.0);
}

// ---------------------------------------------------------------- criterion 8
void criterion8_determinism(const LearningSetup& setup) {
  const auto t0 = Clock::now();
  TrainConfig config = setup.base_config();
  config.total_steps = 12;
  config.batch_size = 8;
  config.filter_enabled = true;
  config.filter_interval = 4;
  config.rank_threshold_k = 40.0;
  config.seed = 31;

  std::vector<TaskPoolEntry> pool(setup.train_pool.begin(), setup.train_pool.begin() + 40);
  const RunResult a = run_training(config, setup.vocab, pool);
  const RunResult b = run_training(config, setup.vocab, pool);

  const std::string ma = metrics_to_jsonl(a.metrics);
  const std::string mb = metrics_to_jsonl(b.metrics);
  const std::string ra = reports_to_jsonl(a.filter_reports);
  const std::string rb = reports_to_jsonl(b.filter_reports);
  const std::string ca = checkpoint_to_json(a.actor, setup.vocab, config);
  const std::string cb = checkpoint_to_json(b.actor, setup.vocab, config);

  const bool pass = ma == mb && ra == rb && ca == cb;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "paired runs: metrics %zu bytes, reports %zu bytes, checkpoint %zu "
                "bytes, all byte-identical: %s",
                ma.size(), ra.size(), ca.size(), pass ? "yes" : "NO");
  report(8, pass, buf, seconds_since(t0), 300.0);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  std::printf("kernel backend: %s\n",
              kernels::active_backend() == kernels::Backend::avx2 ? "avx2" : "scalar");

  criterion1_formula_fidelity();
  criterion2_reduction_identities();
  criterion3_ranking_phenomenon();
  criterion4_gradient();

  LearningSetup setup;
  criterion5_end_to_end(setup);
  criterion6_variant_separation(setup);
  criterion7_filtering(setup);
  criterion8_determinism(setup);

  std::printf("acceptance total: %.1fs, hard failures: %d\n", seconds_since(t0),
              g_failures);
  return g_failures;
}
