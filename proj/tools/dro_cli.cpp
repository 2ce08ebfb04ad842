// Command-line surface for the DRO toy training stack:
//   train         run a full training loop from a config file
//   score         certainty dumps + reward variants for given traces
//   filter        two-stage filtering verdicts from certainty dumps
//   gen-tasks     synthetic task pools (copy_edit / arithmetic_chain)
//   demo-ranking  constructed instance where the vanilla and weighted
//                 rewards order two traces differently
//   gradcheck     finite-difference check of the objective gradient
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "dro/certainty.hpp"
#include "dro/core.hpp"
#include "dro/filtering.hpp"
#include "dro/grpo.hpp"
#include "dro/policy.hpp"
#include "dro/r3.hpp"
#include "dro/tasks.hpp"
#include "dro/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

dro::Vocabulary load_vocab_or_standard(const std::string& path) {
  if (path.empty()) return dro::Vocabulary::standard();
  return dro::load_vocabulary_json(path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) dro::fail("cannot write " + path);
  out << text;
}

struct TraceRecord {
  std::string task_id;
  int trace_id = 0;
  std::vector<dro::TokenId> tokens;
};

std::vector<TraceRecord> load_traces_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) dro::fail("cannot open trace file: " + path);
  std::vector<TraceRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      dro::fail(where + ": malformed JSON (" + e.what() + ")");
    }
    TraceRecord rec;
    try {
      rec.task_id = j.at("task_id").get<std::string>();
      rec.trace_id = j.at("trace_id").get<int>();
      rec.tokens = j.at("tokens").get<std::vector<dro::TokenId>>();
    } catch (const json::exception& e) {
      dro::fail(where + ": bad record (" + e.what() + ")");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

int cmd_train(const std::string& config_path, const std::string& tasks_path,
              const std::string& out_dir, const std::string& vocab_path,
              const std::string& init_path) {
  const dro::TrainConfig config = dro::TrainConfig::load(config_path);
  const dro::Vocabulary vocab = load_vocab_or_standard(vocab_path);
  std::vector<dro::Task> tasks = dro::load_tasks_jsonl(tasks_path, vocab);
  if (tasks.empty()) dro::fail(tasks_path + ": no tasks");

  dro::PolicySnapshot initial =
      init_path.empty() ? dro::make_initial_policy(config, vocab)
                        : dro::load_checkpoint(init_path).policy;

  fs::create_directories(out_dir);
  write_text(out_dir + "/config_echo.json", config.to_json_text() + "\n");

  dro::RunResult result =
      dro::run_training(config, vocab, dro::make_pool(std::move(tasks)), initial);

  write_text(out_dir + "/metrics.jsonl", dro::metrics_to_jsonl(result.metrics));
  write_text(out_dir + "/filter_reports.jsonl",
             dro::reports_to_jsonl(result.filter_reports));
  dro::save_checkpoint(out_dir + "/checkpoint.json", result.actor, vocab, config);

  std::cout << "steps=" << result.metrics.size() << " task_steps=" << result.task_steps
            << " active=" << result.final_active.size();
  if (!result.metrics.empty())
    std::cout << " final_mean_r3=" << result.metrics.back().mean_r3;
  std::cout << "\n";
  return 0;
}

int cmd_score(const std::string& tasks_path, const std::string& traces_path,
              const std::string& checkpoint_path, const std::string& out_dir,
              const std::string& variant, const std::string& config_path) {
  dro::Checkpoint ck = dro::load_checkpoint(checkpoint_path);
  const dro::TrainConfig config =
      config_path.empty() ? ck.config : dro::TrainConfig::load(config_path);
  const std::vector<dro::Task> tasks = dro::load_tasks_jsonl(tasks_path, ck.vocab);
  std::map<std::string, const dro::Task*> by_id;
  for (const dro::Task& t : tasks) by_id[t.id] = &t;

  const std::vector<TraceRecord> traces = load_traces_jsonl(traces_path);
  // group traces per task, preserving file order of tasks and traces
  std::vector<std::string> task_order;
  std::map<std::string, std::vector<const TraceRecord*>> grouped;
  for (const TraceRecord& tr : traces) {
    if (!by_id.count(tr.task_id))
      dro::fail(traces_path + ": unknown task id '" + tr.task_id + "'");
    if (!grouped.count(tr.task_id)) task_order.push_back(tr.task_id);
    grouped[tr.task_id].push_back(&tr);
  }
  if (task_order.empty()) dro::fail(traces_path + ": no traces");

  std::vector<std::string> variants;
  if (variant == "all") {
    variants = {"vanilla", "weighted", "propagated", "masked"};
  } else {
    variants = {variant};
  }

  fs::create_directories(out_dir);
  std::ofstream cert(out_dir + "/certainty.jsonl", std::ios::binary | std::ios::trunc);
  std::ofstream rewards(out_dir + "/rewards.jsonl", std::ios::binary | std::ios::trunc);
  if (!cert || !rewards) dro::fail("cannot write outputs under " + out_dir);

  for (const std::string& id : task_order) {
    const dro::Task& task = *by_id.at(id);
    std::vector<std::vector<dro::TokenId>> reasoning;
    for (const TraceRecord* tr : grouped[id]) reasoning.push_back(tr->tokens);

    const dro::CertaintyMatrix matrix =
        dro::build_certainty_matrix(ck.policy, task.prompt, reasoning, task.reference);
    for (std::size_t i = 0; i < matrix.rows.size(); ++i) {
      dro::CertaintyDumpRecord rec;
      rec.task_id = id;
      rec.trace_id = grouped[id][i]->trace_id;
      rec.row = matrix.rows[i];
      dro::append_certainty_dump(cert, rec);
    }

    const bool needs_stats =
        std::any_of(variants.begin(), variants.end(),
                    [](const std::string& v) { return v != "vanilla"; });
    dro::ReflectionStats stats;
    if (needs_stats) {
      if (matrix.group_size < 2)
        dro::fail("task '" + id + "': variant '" + variants.front() +
                  "' needs at least two traces");
      stats = dro::reflection_stats(matrix, config.sigma_floor, config.quantile);
    }

    for (const std::string& v : variants) {
      dro::RewardVector r;
      if (v == "vanilla") {
        r = dro::vanilla_reward(matrix);
      } else if (v == "weighted") {
        r = dro::weighted_reward(matrix, stats);
      } else if (v == "propagated") {
        r = dro::propagated_reward(matrix, stats, config.gamma);
      } else {
        const dro::CertaintyRow baseline = dro::masked_baseline(
            ck.policy, task.prompt, dro::MaskedTrace{}, task.reference);
        r = dro::masked_reward(matrix, baseline, stats);
      }
      json line;
      line["task_id"] = id;
      line["variant"] = v;
      line["r"] = r.r;
      rewards << line.dump() << "\n";
    }
  }
  std::cout << "scored " << task_order.size() << " tasks\n";
  return 0;
}

int cmd_filter(const std::string& dumps_path, const std::string& out_dir, int round,
               std::uint64_t seed, const std::string& config_path) {
  dro::TrainConfig config;
  if (!config_path.empty()) config = dro::TrainConfig::load(config_path);

  const std::vector<dro::CertaintyDumpRecord> dumps = dro::load_certainty_dump(dumps_path);
  if (dumps.empty()) dro::fail(dumps_path + ": no records");
  std::vector<std::string> task_order;
  std::map<std::string, std::vector<const dro::CertaintyDumpRecord*>> grouped;
  for (const auto& rec : dumps) {
    if (!grouped.count(rec.task_id)) task_order.push_back(rec.task_id);
    grouped[rec.task_id].push_back(&rec);
  }

  std::vector<dro::FilterReportRecord> records;
  std::vector<std::pair<std::string, double>> stage2_pool;
  std::map<std::string, dro::TaskFilterStats> stats_by_id;
  std::vector<std::string> stage1_kept;
  for (const std::string& id : task_order) {
    const auto& rows = grouped[id];
    const std::size_t len = rows.front()->row.logp.size();
    for (const auto* r : rows) {
      if (r->row.logp.size() != len)
        dro::fail(dumps_path + ": task '" + id + "' has rows of differing lengths");
    }
    if (rows.size() < 2)
      dro::fail(dumps_path + ": task '" + id + "' needs at least two traces");

    dro::CertaintyMatrix matrix;
    matrix.reference_len = static_cast<int>(len);
    matrix.group_size = static_cast<int>(rows.size());
    for (const auto* r : rows) matrix.rows.push_back(r->row);

    std::vector<double> scores;
    for (const auto& row : matrix.rows)
      scores.push_back(dro::difficulty_score(row, config.rho));
    double min_difficulty = scores[0];
    for (double s : scores) min_difficulty = std::min(min_difficulty, s);
    const dro::ReflectionStats st = dro::token_std(matrix);
    double max_sigma = 0.0;
    for (double s : st.sigma) max_sigma = std::max(max_sigma, s);
    stats_by_id[id] = dro::TaskFilterStats{min_difficulty, max_sigma};
    if (dro::difficulty_filter(scores, config.rank_threshold_k)) {
      stage1_kept.push_back(id);
      stage2_pool.emplace_back(id, max_sigma);
    }
  }

  std::vector<std::string> kept;
  if (!stage2_pool.empty()) kept = dro::variation_filter(stage2_pool, config.variation_cut);
  std::set<std::string> kept_set(kept.begin(), kept.end());
  std::set<std::string> stage1_set(stage1_kept.begin(), stage1_kept.end());

  dro::RngStream carry_rng = dro::substream(
      seed, {dro::hash_label("carry_forward"), static_cast<std::uint64_t>(round)});
  std::vector<std::string> active =
      dro::refresh_dataset(task_order, kept, config.carry_forward, carry_rng);
  std::set<std::string> active_set(active.begin(), active.end());

  for (const std::string& id : task_order) {
    dro::FilterReportRecord rec;
    rec.round = round;
    rec.task_id = id;
    rec.min_difficulty = stats_by_id[id].min_difficulty;
    rec.max_sigma = stats_by_id[id].max_sigma;
    if (kept_set.count(id)) {
      rec.verdict = "active";
    } else if (active_set.count(id)) {
      rec.verdict = "carried_forward";
    } else if (!stage1_set.count(id)) {
      rec.verdict = "dropped_difficult";
    } else {
      rec.verdict = "dropped_low_variation";
    }
    records.push_back(std::move(rec));
  }

  fs::create_directories(out_dir);
  std::string report;
  for (const auto& rec : records) report += dro::filter_report_line(rec) + "\n";
  write_text(out_dir + "/filter_report.jsonl", report);
  json active_json;
  active_json["active"] = active;
  write_text(out_dir + "/active.json", active_json.dump(2) + "\n");
  std::cout << "kept " << active.size() << " of " << task_order.size() << " tasks\n";
  return 0;
}

int cmd_gen_tasks(const std::string& kind_name, int count, std::uint64_t seed,
                  std::uint64_t family_seed, int edits, int base_len,
                  const std::string& out_path, const std::string& vocab_out) {
  const dro::Vocabulary vocab = dro::Vocabulary::standard();
  const dro::TaskFamily family = dro::TaskFamily::make(vocab, family_seed);
  dro::TaskKind kind;
  if (kind_name == "copy_edit") {
    kind = dro::TaskKind::copy_edit;
  } else if (kind_name == "arithmetic_chain") {
    kind = dro::TaskKind::arithmetic_chain;
  } else {
    dro::fail("unknown task kind: " + kind_name);
  }
  dro::GenKnobs knobs;
  knobs.edits_min = knobs.edits_max = edits;
  knobs.base_len_min = knobs.base_len_max = base_len;

  std::vector<dro::Task> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    dro::SyntheticTask st = dro::gen_task(
        kind, vocab, family, dro::mix_u64(seed, static_cast<std::uint64_t>(i)), knobs);
    st.task.id = kind_name + "_" + std::to_string(i);
    tasks.push_back(std::move(st.task));
  }
  dro::save_tasks_jsonl(out_path, tasks);
  if (!vocab_out.empty()) dro::save_vocabulary_json(vocab_out, vocab);
  std::cout << "wrote " << tasks.size() << " tasks to " << out_path << "\n";
  return 0;
}

int cmd_demo_ranking(std::uint64_t seed) {
  const dro::RankingInstance inst = dro::make_ranking_instance(seed);
  std::cout << "constructed instance (seed " << seed << "): " << inst.matrix.reference_len
            << " reference tokens, high-sigma columns:";
  for (int c : inst.planted_columns) std::cout << " " << (c + 1);
  std::cout << "\n\n";
  const char* names[2] = {"A", "B"};
  for (int i = 0; i < 2; ++i) {
    std::cout << "trace " << names[i] << " logp:";
    for (double v : inst.matrix.rows[static_cast<std::size_t>(i)].logp) {
      std::cout << " " << v;
    }
    std::cout << "\n";
  }
  std::cout << "\nvanilla aggregate: A=" << inst.vanilla_a << "  B=" << inst.vanilla_b
            << "  ->  " << (inst.vanilla_b > inst.vanilla_a ? "B > A" : "A > B") << "\n";
  std::cout << "sigma-weighted:    A=" << inst.weighted_a << "  B=" << inst.weighted_b
            << "  ->  " << (inst.weighted_a > inst.weighted_b ? "A > B" : "B > A") << "\n";
  std::cout << "\nplanted better trace: " << names[inst.better_trace] << "\n";
  return 0;
}

int cmd_gradcheck(int seeds, std::uint64_t root_seed) {
  const dro::GradCheckReport report = dro::gradient_check(seeds, root_seed);
  std::cout << "gradcheck: max relative error " << report.max_rel_err << " over "
            << report.params_checked << " parameters (" << report.seeds << " seeds)\n";
  if (report.max_rel_err < 1e-4) return 0;
  std::cout << "gradcheck FAILED (budget 1e-4)\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale reasoning-reflection reward training stack"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run a training loop from a config file");
  std::string train_config, train_tasks, train_out, train_vocab, train_init;
  train->add_option("--config", train_config, "run config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--tasks", train_tasks, "task pool JSONL")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--vocab", train_vocab, "vocabulary JSON (default: built-in)")->check(CLI::ExistingFile);
  train->add_option("--init", train_init, "initial policy checkpoint (overrides init_mode)")->check(CLI::ExistingFile);

  // score
  auto* score = app.add_subcommand("score", "certainty dumps + reward variants for traces");
  std::string score_tasks, score_traces, score_ckpt, score_out, score_config;
  std::string score_variant = "all";
  score->add_option("--tasks", score_tasks, "task pool JSONL")->required()->check(CLI::ExistingFile);
  score->add_option("--traces", score_traces, "trace JSONL {task_id, trace_id, tokens}")
      ->required()
      ->check(CLI::ExistingFile);
  score->add_option("--checkpoint", score_ckpt, "policy checkpoint JSON")->required()->check(CLI::ExistingFile);
  score->add_option("--out", score_out, "output directory")->required();
  score->add_option("--variant", score_variant, "all|vanilla|weighted|propagated|masked")
      ->check(CLI::IsMember({"all", "vanilla", "weighted", "propagated", "masked"}));
  score->add_option("--config", score_config, "config for reward knobs (default: checkpoint's)")->check(CLI::ExistingFile);

  // filter
  auto* filter = app.add_subcommand("filter", "two-stage verdicts from certainty dumps");
  std::string filter_dumps, filter_out, filter_config;
  int filter_round = 0;
  std::uint64_t filter_seed = 0;
  filter->add_option("--dumps", filter_dumps, "certainty dump JSONL")->required()->check(CLI::ExistingFile);
  filter->add_option("--out", filter_out, "output directory")->required();
  filter->add_option("--round", filter_round, "round number [0]");
  filter->add_option("--seed", filter_seed, "carry-forward sampling seed [0]");
  filter->add_option("--config", filter_config, "config for thresholds (default: defaults)")->check(CLI::ExistingFile);

  // gen-tasks
  auto* gen = app.add_subcommand("gen-tasks", "generate a synthetic task pool");
  std::string gen_kind = "copy_edit", gen_out, gen_vocab_out;
  int gen_count = 100, gen_edits = 1, gen_base_len = 24;
  std::uint64_t gen_seed = 0, gen_family_seed = 0;
  gen->add_option("--kind", gen_kind, "copy_edit|arithmetic_chain [copy_edit]")
      ->check(CLI::IsMember({"copy_edit", "arithmetic_chain"}));
  gen->add_option("--count", gen_count, "number of tasks [100]");
  gen->add_option("--seed", gen_seed, "instance seed [0]");
  gen->add_option("--family-seed", gen_family_seed, "glyph family seed [0]");
  gen->add_option("--edits", gen_edits, "edited glyphs per task [1]");
  gen->add_option("--base-len", gen_base_len, "base sequence length [24]");
  gen->add_option("--out", gen_out, "output task JSONL")->required();
  gen->add_option("--vocab-out", gen_vocab_out, "also write the vocabulary JSON here");

  // demo-ranking
  auto* demo = app.add_subcommand(
      "demo-ranking", "instance where vanilla and weighted rewards disagree");
  std::uint64_t demo_seed = 0;
  demo->add_option("--seed", demo_seed, "construction seed [0]");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  int gc_seeds = 10;
  std::uint64_t gc_root = 2024;
  gc->add_option("--seeds", gc_seeds, "number of seeded instances [10]");
  gc->add_option("--seed", gc_root, "root seed [2024]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(train_config, train_tasks, train_out, train_vocab, train_init);
    if (*score)
      return cmd_score(score_tasks, score_traces, score_ckpt, score_out, score_variant,
                       score_config);
    if (*filter)
      return cmd_filter(filter_dumps, filter_out, filter_round, filter_seed, filter_config);
    if (*gen)
      return cmd_gen_tasks(gen_kind, gen_count, gen_seed, gen_family_seed, gen_edits,
                           gen_base_len, gen_out, gen_vocab_out);
    if (*demo) return cmd_demo_ranking(demo_seed);
    if (*gc) return cmd_gradcheck(gc_seeds, gc_root);
  } catch (const dro::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
