#include "dro/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dro/kernels.hpp"

namespace dro {

std::string role_name(Role r) {
  switch (r) {
    case Role::actor: return "actor";
    case Role::old_policy: return "old";
    case Role::reference: return "reference";
    case Role::reward: return "reward";
  }
  return "unknown";
}

Role role_from_name(const std::string& s) {
  if (s == "actor") return Role::actor;
  if (s == "old") return Role::old_policy;
  if (s == "reference") return Role::reference;
  if (s == "reward") return Role::reward;
  fail("unknown policy role: " + s);
}

ContextKey context_key(const PolicySnapshot& policy, std::span<const TokenId> context) {
  ContextCursor cur(policy);
  cur.feed(context);
  return cur.key();
}

PolicySnapshot init_policy(const Vocabulary& vocab, std::uint64_t seed) {
  vocab.validate();
  PolicySnapshot p;
  p.vocab_size = vocab.size();
  p.bos = vocab.bos;
  p.eos = vocab.eos;
  p.think_end = vocab.think_end;
  p.role = Role::reference;
  p.version = 0;
  const std::size_t v = static_cast<std::size_t>(p.vocab_size);
  p.logits.resize(2 * v * v * v);
  RngStream rng = substream(seed, {hash_label("init_policy")});
  for (double& x : p.logits) x = rng.uniform(-0.01, 0.01);
  return p;
}

std::vector<double> next_token_distribution(const PolicySnapshot& policy,
                                            std::span<const TokenId> context) {
  const ContextKey key = context_key(policy, context);
  std::vector<double> probs(static_cast<std::size_t>(policy.vocab_size));
  kernels::softmax(policy.row(key.zone, key.slot0, key.slot1), probs);
  return probs;
}

double token_logp_full(const PolicySnapshot& policy, const ContextKey& key,
                       TokenId token) {
  const auto row = policy.row(key.zone, key.slot0, key.slot1);
  return row[static_cast<std::size_t>(token)] - kernels::log_sum_exp(row);
}

bool token_allowed(const PolicySnapshot& policy, const ContextKey& key, TokenId token) {
  return !(key.zone == PolicySnapshot::kZoneOutcome && token == policy.think_end);
}

namespace {

// Row with disallowed entries pushed to -inf-like values, reused per call.
void masked_row(const PolicySnapshot& policy, const ContextKey& key,
                std::vector<double>& scratch) {
  const auto row = policy.row(key.zone, key.slot0, key.slot1);
  scratch.assign(row.begin(), row.end());
  if (key.zone == PolicySnapshot::kZoneOutcome)
    scratch[static_cast<std::size_t>(policy.think_end)] = -1e30;
}

}  // namespace

double token_logp_sampling(const PolicySnapshot& policy, const ContextKey& key,
                           TokenId token) {
  if (!token_allowed(policy, key, token))
    fail("token_logp_sampling: token outside the sampling support");
  static thread_local std::vector<double> scratch;
  masked_row(policy, key, scratch);
  return scratch[static_cast<std::size_t>(token)] - kernels::log_sum_exp(scratch);
}

SampleResult sample_output(const PolicySnapshot& policy, const Prompt& prompt,
                           double temperature, double top_p, int max_len,
                           RngStream& rng) {
  if (temperature <= 0.0) fail("sample_output: temperature must be > 0");
  if (top_p <= 0.0 || top_p > 1.0) fail("sample_output: top_p must be in (0, 1]");
  if (max_len < 1) fail("sample_output: max_len must be >= 1");

  SampleResult res;
  res.truncated = true;
  ContextCursor cur(policy);
  cur.feed(prompt.tokens);

  const std::size_t v = static_cast<std::size_t>(policy.vocab_size);
  std::vector<double> row, scaled, probs;
  std::vector<int> order(v);

  for (int step = 0; step < max_len; ++step) {
    const ContextKey key = cur.key();
    masked_row(policy, key, row);

    scaled.resize(v);
    for (std::size_t i = 0; i < v; ++i) scaled[i] = row[i] / temperature;
    probs.resize(v);
    kernels::softmax(scaled, probs);

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (probs[static_cast<std::size_t>(a)] != probs[static_cast<std::size_t>(b)])
        return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
      return a < b;
    });

    // nucleus: smallest prefix with cumulative mass >= top_p
    std::size_t keep = v;
    double cum = 0.0;
    for (std::size_t i = 0; i < v; ++i) {
      cum += probs[static_cast<std::size_t>(order[i])];
      if (cum >= top_p) {
        keep = i + 1;
        break;
      }
    }
    double mass = 0.0;
    for (std::size_t i = 0; i < keep; ++i) mass += probs[static_cast<std::size_t>(order[i])];

    double u = rng.uniform() * mass;
    TokenId chosen = order[keep - 1];
    for (std::size_t i = 0; i < keep; ++i) {
      const double p = probs[static_cast<std::size_t>(order[i])];
      if (u < p) {
        chosen = order[i];
        break;
      }
      u -= p;
    }

    res.raw.push_back(chosen);
    res.logp.push_back(row[static_cast<std::size_t>(chosen)] - kernels::log_sum_exp(row));
    if (chosen == policy.eos) {
      res.truncated = false;
      break;
    }
    cur.feed(chosen);
  }
  return res;
}

std::vector<double> sampled_logp(const PolicySnapshot& policy, const Prompt& prompt,
                                 std::span<const TokenId> raw) {
  std::vector<double> out;
  out.reserve(raw.size());
  ContextCursor cur(policy);
  cur.feed(prompt.tokens);
  static thread_local std::vector<double> scratch;
  for (TokenId t : raw) {
    const ContextKey key = cur.key();
    if (!token_allowed(policy, key, t))
      fail("sampled_logp: sequence contains a token outside the sampling support");
    masked_row(policy, key, scratch);
    out.push_back(scratch[static_cast<std::size_t>(t)] - kernels::log_sum_exp(scratch));
    cur.feed(t);
  }
  return out;
}

std::vector<TokenId> greedy_decode(const PolicySnapshot& policy, const Prompt& prompt,
                                   int max_len) {
  std::vector<TokenId> raw;
  ContextCursor cur(policy);
  cur.feed(prompt.tokens);
  std::vector<double> row;
  for (int step = 0; step < max_len; ++step) {
    masked_row(policy, cur.key(), row);
    TokenId best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
      if (row[i] > row[static_cast<std::size_t>(best)]) best = static_cast<TokenId>(i);
    }
    raw.push_back(best);
    if (best == policy.eos) break;
    cur.feed(best);
  }
  return raw;
}

PolicySnapshot apply_gradient(const PolicySnapshot& policy,
                              std::span<const double> gradient, double learning_rate) {
  if (gradient.size() != policy.logits.size())
    fail("apply_gradient: gradient shape mismatch (" + std::to_string(gradient.size()) +
         " vs " + std::to_string(policy.logits.size()) + ")");
  PolicySnapshot next = policy;
  next.role = Role::actor;
  next.version = policy.version + 1;
  kernels::axpy(learning_rate, gradient, next.logits);
  return next;
}

}  // namespace dro
