#include "dro/tasks.hpp"

#include <algorithm>
#include <unordered_set>

#include "dro/rng.hpp"

namespace dro {

namespace {

TokenId find_symbol(const Vocabulary& vocab, const std::string& s) {
  for (std::size_t i = 0; i < vocab.symbols.size(); ++i)
    if (vocab.symbols[i] == s) return static_cast<TokenId>(i);
  fail("vocabulary lacks required symbol '" + s + "'");
}

}  // namespace

TaskFamily TaskFamily::make(const Vocabulary& vocab, std::uint64_t family_seed) {
  TaskFamily f;
  for (char c = 'a'; c <= 'x'; ++c)
    f.lower.push_back(find_symbol(vocab, std::string(1, c)));
  for (char c = 'A'; c <= 'X'; ++c)
    f.upper.push_back(find_symbol(vocab, std::string(1, c)));
  for (char c = '0'; c <= '9'; ++c)
    f.digits.push_back(find_symbol(vocab, std::string(1, c)));
  f.sep = find_symbol(vocab, "#");
  f.plus = find_symbol(vocab, "+");
  f.equals = find_symbol(vocab, "=");

  f.lower_pos.assign(static_cast<std::size_t>(vocab.size()), -1);
  f.upper_pos.assign(static_cast<std::size_t>(vocab.size()), -1);
  for (std::size_t i = 0; i < f.lower.size(); ++i) {
    f.lower_pos[static_cast<std::size_t>(f.lower[i])] = static_cast<int>(i);
    f.upper_pos[static_cast<std::size_t>(f.upper[i])] = static_cast<int>(i);
  }

  // seeded single cycle over the alphabet positions
  const std::size_t m = f.lower.size();
  std::vector<int> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = static_cast<int>(i);
  RngStream rng = substream(family_seed, {hash_label("task_family")});
  for (std::size_t i = m - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(i + 1)]);
  f.next_lower.assign(m, -1);
  for (std::size_t i = 0; i < m; ++i) {
    const int from = order[i];
    const int to = order[(i + 1) % m];
    f.next_lower[static_cast<std::size_t>(from)] = f.lower[static_cast<std::size_t>(to)];
  }
  return f;
}

bool TaskFamily::is_lower(TokenId t) const {
  return t >= 0 && static_cast<std::size_t>(t) < lower_pos.size() &&
         lower_pos[static_cast<std::size_t>(t)] >= 0;
}

bool TaskFamily::is_upper(TokenId t) const {
  return t >= 0 && static_cast<std::size_t>(t) < upper_pos.size() &&
         upper_pos[static_cast<std::size_t>(t)] >= 0;
}

TokenId TaskFamily::dual(TokenId lower_glyph) const {
  const int pos = lower_pos[static_cast<std::size_t>(lower_glyph)];
  if (pos < 0) fail("dual: not a lowercase glyph");
  return upper[static_cast<std::size_t>(pos)];
}

TokenId TaskFamily::undual(TokenId t) const {
  if (is_upper(t)) return lower[static_cast<std::size_t>(upper_pos[static_cast<std::size_t>(t)])];
  return t;
}

TokenId TaskFamily::successor(TokenId lower_glyph) const {
  const int pos = lower_pos[static_cast<std::size_t>(lower_glyph)];
  if (pos < 0) fail("successor: not a lowercase glyph");
  return next_lower[static_cast<std::size_t>(pos)];
}

SyntheticTask gen_task(TaskKind kind, [[maybe_unused]] const Vocabulary& vocab,
                       const TaskFamily& family, std::uint64_t seed,
                       const GenKnobs& knobs) {
  RngStream rng = substream(seed, {hash_label("gen_task"), static_cast<std::uint64_t>(kind)});
  SyntheticTask st;
  st.kind = kind;

  if (kind == TaskKind::copy_edit) {
    if (knobs.base_len_min < 1 || knobs.base_len_max < knobs.base_len_min)
      fail("gen_task: bad base length range");
    if (knobs.edits_min < 0 || knobs.edits_max < knobs.edits_min)
      fail("gen_task: bad edit range");
    const std::size_t m = family.lower.size();
    const int len = knobs.base_len_min +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(
                        knobs.base_len_max - knobs.base_len_min + 1)));
    if (static_cast<std::size_t>(len) > m)
      fail("gen_task: base length exceeds the glyph cycle");
    int edits = knobs.edits_min +
                static_cast<int>(rng.below(static_cast<std::uint64_t>(
                    knobs.edits_max - knobs.edits_min + 1)));

    std::vector<TokenId> base;
    base.reserve(static_cast<std::size_t>(len));
    TokenId g = family.lower[rng.below(m)];
    for (int i = 0; i < len; ++i) {
      base.push_back(g);
      g = family.successor(g);
    }

    // the walk start is always edited; extras come from later positions
    std::vector<TokenId> edit_glyphs;
    if (edits > 0) {
      std::vector<TokenId> pool(base.begin() + 1, base.end());
      for (std::size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[rng.below(i)]);
      for (TokenId extra : pool) {
        if (static_cast<int>(edit_glyphs.size()) >= edits - 1) break;
        edit_glyphs.push_back(extra);
      }
      edit_glyphs.push_back(base.front());
    }

    std::unordered_set<TokenId> edit_set(edit_glyphs.begin(), edit_glyphs.end());
    st.task.reference.tokens.reserve(base.size());
    for (TokenId b : base)
      st.task.reference.tokens.push_back(edit_set.count(b) ? family.dual(b) : b);

    st.task.prompt.tokens = base;
    st.task.prompt.tokens.push_back(family.sep);
    for (TokenId e : edit_glyphs) st.task.prompt.tokens.push_back(e);

    for (TokenId e : edit_glyphs) st.gold_reasoning.push_back(family.dual(e));
    st.task.id = "copy_" + std::to_string(seed);
    return st;
  }

  // arithmetic_chain: 2-4 additions over single digits, mod 10
  const int addends = 3 + static_cast<int>(rng.below(3));
  std::vector<int> ds;
  for (int i = 0; i < addends; ++i) ds.push_back(static_cast<int>(rng.below(10)));
  for (int i = 0; i < addends; ++i) {
    st.task.prompt.tokens.push_back(family.digits[static_cast<std::size_t>(ds[static_cast<std::size_t>(i)])]);
    if (i + 1 < addends) st.task.prompt.tokens.push_back(family.plus);
  }
  st.task.prompt.tokens.push_back(family.equals);
  int acc = ds[0];
  for (int i = 1; i < addends; ++i) {
    acc = (acc + ds[static_cast<std::size_t>(i)]) % 10;
    st.gold_reasoning.push_back(family.digits[static_cast<std::size_t>(acc)]);
  }
  st.task.reference.tokens = {family.digits[static_cast<std::size_t>(acc)]};
  st.task.id = "arith_" + std::to_string(seed);
  return st;
}

PolicySnapshot make_copy_policy(const Vocabulary& vocab, const TaskFamily& family,
                                const CopyPolicyParams& params, std::uint64_t seed) {
  PolicySnapshot p = init_policy(vocab, seed);
  RngStream rng = substream(seed, {hash_label("copy_policy")});
  for (double& x : p.logits) x = params.noise * rng.uniform(-1.0, 1.0);

  const int v = p.vocab_size;
  for (TokenId s0 = 0; s0 < v; ++s0) {
    for (TokenId s1 = 0; s1 < v; ++s1) {
      auto reason = p.row(PolicySnapshot::kZoneReasoning, s0, s1);
      reason[static_cast<std::size_t>(vocab.think_end)] += params.think_bonus;

      auto out = p.row(PolicySnapshot::kZoneOutcome, s0, s1);
      out[static_cast<std::size_t>(vocab.eos)] += params.eos_hazard;
      const TokenId carry = s0;
      const TokenId prev = s1;
      const bool carry_glyph = family.is_lower(carry) || family.is_upper(carry);
      if (prev == vocab.think_end) {
        // outcomes open with the edited form of the carried glyph; any
        // edited dual is a plausible opener in general
        if (carry_glyph)
          out[static_cast<std::size_t>(family.dual(family.undual(carry)))] +=
              params.sharpness;
        for (TokenId d : family.upper) out[static_cast<std::size_t>(d)] += params.dual_bonus;
      } else {
        const TokenId u = family.undual(prev);
        if (family.is_lower(u)) {
          const TokenId t = family.successor(u);
          if (carry_glyph && family.undual(carry) == t) {
            // the walk is back at the carried glyph: the revision is complete
            out[static_cast<std::size_t>(vocab.eos)] += params.sharpness;
          } else {
            out[static_cast<std::size_t>(t)] += params.sharpness;
            out[static_cast<std::size_t>(family.dual(t))] += params.dual_bonus;
          }
        }
      }
    }
  }
  p.version = 0;
  p.role = Role::reference;
  return p;
}

double eval_exact_match(const PolicySnapshot& policy, const Vocabulary& vocab,
                        std::span<const Task> tasks, int max_len) {
  if (tasks.empty()) fail("eval_exact_match: no tasks");
  int hits = 0;
  for (const Task& t : tasks) {
    const std::vector<TokenId> raw = greedy_decode(policy, t.prompt, max_len);
    const SampledOutput out = split_output(raw, vocab);
    if (!out.truncated && out.outcome == t.reference.tokens) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(tasks.size());
}

}  // namespace dro
