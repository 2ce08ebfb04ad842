#pragma once

#include <cstdint>
#include <vector>

#include "dro/core.hpp"
#include "dro/policy.hpp"

namespace dro {

// Glyph machinery shared by the copy-edit task generator and the competent
// copy policy. A seeded single-cycle successor permutation F runs over the
// lowercase block; each lowercase glyph has an uppercase "edited" dual.
// Copy-edit references are F-walks with the instructed glyphs replaced by
// their duals, so every unedited token is predictable from the walk rule
// alone while the edited ones depend on what the reasoning trace concluded.
struct TaskFamily {
  std::vector<TokenId> lower;        // the 24 lowercase glyph ids, a..x
  std::vector<TokenId> upper;        // parallel duals, A..X
  std::vector<TokenId> digits;       // 0..9
  TokenId sep = -1;                  // '#'
  TokenId plus = -1;                 // '+'
  TokenId equals = -1;               // '='
  std::vector<TokenId> next_lower;   // F over lowercase, indexed by alphabet pos
  std::vector<int> lower_pos;        // vocab id -> alphabet pos, -1 otherwise
  std::vector<int> upper_pos;        // vocab id -> alphabet pos, -1 otherwise

  static TaskFamily make(const Vocabulary& vocab, std::uint64_t family_seed);

  bool is_lower(TokenId t) const;
  bool is_upper(TokenId t) const;
  TokenId dual(TokenId lower_glyph) const;
  // A..X map back to a..x; everything else passes through.
  TokenId undual(TokenId t) const;
  TokenId successor(TokenId lower_glyph) const;  // F
};

enum class TaskKind { copy_edit, arithmetic_chain };

struct GenKnobs {
  int edits_min = 1;
  int edits_max = 1;
  int base_len_min = 24;
  int base_len_max = 24;
};

struct SyntheticTask {
  TaskKind kind = TaskKind::copy_edit;
  Task task;
  // Diagnostics only; never enters a reward.
  std::vector<TokenId> gold_reasoning;
};

// copy_edit: base = F-walk of base_len glyphs from a random start; the
// instruction block "# g2 .. ge s" names the glyphs to replace by their
// duals (the walk start s always among them); reference = base with those
// occurrences dualized. arithmetic_chain: prompt encodes 2-4 single-digit
// additions mod 10; reference is the final digit; gold_reasoning lists the
// intermediate sums.
SyntheticTask gen_task(TaskKind kind, const Vocabulary& vocab, const TaskFamily& family,
                       std::uint64_t seed, const GenKnobs& knobs = {});

struct CopyPolicyParams {
  double sharpness = 7.0;    // logit mass on the rule's target
  double dual_bonus = 1.0;   // prior mass on edited forms
  double eos_hazard = 1.0;   // generic stopping tendency in the outcome zone
  double think_bonus = 0.0;  // delimiter tendency in the reasoning zone
  double noise = 2.0;        // per-logit jitter
};

// A policy that already writes outcomes competently: it opens with the edited
// form of the trace's closing glyph, continues the family walk from any glyph
// (mapping edited duals back), and stops when the walk returns to the carried
// glyph. Its reasoning rows are noise - learning to conclude cleanly, instead
// of burying the instruction under junk, is what training has to add.
PolicySnapshot make_copy_policy(const Vocabulary& vocab, const TaskFamily& family,
                                const CopyPolicyParams& params, std::uint64_t seed);

// Fraction of tasks whose greedy-decoded outcome equals the reference.
double eval_exact_match(const PolicySnapshot& policy, const Vocabulary& vocab,
                        std::span<const Task> tasks, int max_len);

}  // namespace dro
