#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dro/core.hpp"
#include "dro/rng.hpp"

namespace dro {

enum class Role { actor, old_policy, reference, reward };

std::string role_name(Role r);
Role role_from_name(const std::string& s);

// Tabular autoregressive policy. A context maps to a logit row through a key
// (zone, slot0, slot1):
//   reasoning zone (before THINK_END): slot0/slot1 are the last two tokens,
//     BOS-padded on the left.
//   outcome zone (after THINK_END): slot1 is the last token and slot0 is
//     pinned to the token that immediately preceded THINK_END - the trace's
//     closing token. The reasoning trace conditions every outcome position
//     through that carried token, which is what makes outcome certainty
//     reasoning-dependent for this model class.
// The table is dense: 2 * V^2 rows of V logits.
struct PolicySnapshot {
  int vocab_size = 0;
  TokenId bos = -1;
  TokenId eos = -1;
  TokenId think_end = -1;
  Role role = Role::reference;
  std::uint64_t version = 0;
  std::vector<double> logits;

  static constexpr int kZoneReasoning = 0;
  static constexpr int kZoneOutcome = 1;

  std::size_t param_count() const { return logits.size(); }
  std::size_t row_offset(int zone, TokenId slot0, TokenId slot1) const {
    const std::size_t v = static_cast<std::size_t>(vocab_size);
    return ((static_cast<std::size_t>(zone) * v + static_cast<std::size_t>(slot0)) * v +
            static_cast<std::size_t>(slot1)) *
           v;
  }
  std::span<const double> row(int zone, TokenId s0, TokenId s1) const {
    return {logits.data() + row_offset(zone, s0, s1),
            static_cast<std::size_t>(vocab_size)};
  }
  std::span<double> row(int zone, TokenId s0, TokenId s1) {
    return {logits.data() + row_offset(zone, s0, s1),
            static_cast<std::size_t>(vocab_size)};
  }
};

struct ContextKey {
  int zone = PolicySnapshot::kZoneReasoning;
  TokenId slot0 = -1;
  TokenId slot1 = -1;
};

// Incremental walker over a token context; avoids rescanning on every step.
struct ContextCursor {
  TokenId bos, think_end;
  int zone = PolicySnapshot::kZoneReasoning;
  TokenId prev2, prev1;
  TokenId carry;  // token preceding the first THINK_END

  explicit ContextCursor(const PolicySnapshot& p)
      : bos(p.bos), think_end(p.think_end), prev2(p.bos), prev1(p.bos), carry(p.bos) {}

  void feed(TokenId t) {
    if (t == think_end && zone == PolicySnapshot::kZoneReasoning) {
      carry = prev1;
      zone = PolicySnapshot::kZoneOutcome;
    }
    prev2 = prev1;
    prev1 = t;
  }
  void feed(std::span<const TokenId> ts) {
    for (TokenId t : ts) feed(t);
  }
  ContextKey key() const {
    if (zone == PolicySnapshot::kZoneOutcome) return {zone, carry, prev1};
    return {zone, prev2, prev1};
  }
};

ContextKey context_key(const PolicySnapshot& policy, std::span<const TokenId> context);

// Fresh policy: logits i.i.d. uniform on [-0.01, 0.01], deterministic per seed.
PolicySnapshot init_policy(const Vocabulary& vocab, std::uint64_t seed);

// Full softmax over the vocabulary for the given context (BOS-padded).
std::vector<double> next_token_distribution(const PolicySnapshot& policy,
                                            std::span<const TokenId> context);

// log softmax(row)[token] over the whole vocabulary.
double token_logp_full(const PolicySnapshot& policy, const ContextKey& key, TokenId token);

// Sampling support. THINK_END is excluded from the support once the output
// has entered the outcome zone, so a sampled output contains at most one
// delimiter; the log-probabilities below are taken over that same support.
bool token_allowed(const PolicySnapshot& policy, const ContextKey& key, TokenId token);
double token_logp_sampling(const PolicySnapshot& policy, const ContextKey& key,
                           TokenId token);

struct SampleResult {
  std::vector<TokenId> raw;      // includes THINK_END / EOS as emitted
  std::vector<double> logp;      // per-token log-prob under the sampling support
  bool truncated = false;
};

// Nucleus sampling: logits / temperature, smallest prefix of the
// descending-probability ordering with cumulative mass >= top_p (ties by
// ascending token id), renormalize, draw. Stops at EOS or max_len.
SampleResult sample_output(const PolicySnapshot& policy, const Prompt& prompt,
                           double temperature, double top_p, int max_len,
                           RngStream& rng);

// Teacher-forced per-token log-probs of `raw` continuing `prompt`, on the
// sampling support. Matches sample_output's recorded logp bit-for-bit when
// applied to the same snapshot.
std::vector<double> sampled_logp(const PolicySnapshot& policy, const Prompt& prompt,
                                 std::span<const TokenId> raw);

std::vector<TokenId> greedy_decode(const PolicySnapshot& policy, const Prompt& prompt,
                                   int max_len);

// Ascent step: params' = params + learning_rate * gradient. Returns a new
// snapshot with the version bumped.
PolicySnapshot apply_gradient(const PolicySnapshot& policy,
                              std::span<const double> gradient, double learning_rate);

}  // namespace dro
