#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dro/grpo.hpp"
#include "dro/rng.hpp"

using namespace dro;

TEST_CASE("group_advantage: standardization and guards") {
  std::vector<double> eq = {1.5, 1.5, 1.5};
  for (double a : group_advantage(eq, 1e-8)) CHECK(a == doctest::Approx(0.0));

  std::vector<double> two = {0.0, 1.0};
  const std::vector<double> adv = group_advantage(two, 1e-8);
  CHECK(adv[0] == doctest::Approx(-1.0));
  CHECK(adv[1] == doctest::Approx(1.0));

  std::vector<double> one = {3.0};
  CHECK_THROWS_AS(group_advantage(one, 1e-8), Error);

  // affine invariance and exact standardization
  RngStream rng{3};
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t g = 2 + rng.below(14);
    std::vector<double> r(g);
    for (double& x : r) x = rng.uniform(-5.0, 5.0);
    const double a = rng.uniform(0.1, 3.0), b = rng.uniform(-4.0, 4.0);
    std::vector<double> scaled(g);
    for (std::size_t i = 0; i < g; ++i) scaled[i] = a * r[i] + b;

    const std::vector<double> adv1 = group_advantage(r, 1e-8);
    const std::vector<double> adv2 = group_advantage(scaled, 1e-8);
    double mean = 0.0, var = 0.0;
    for (double x : adv1) mean += x;
    mean /= static_cast<double>(g);
    for (double x : adv1) var += (x - mean) * (x - mean);
    var /= static_cast<double>(g);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t i = 0; i < g; ++i)
      CHECK(adv1[i] == doctest::Approx(adv2[i]).epsilon(1e-7));
  }
}

TEST_CASE("length_penalty") {
  CHECK(length_penalty(24, 24, 0.9) == doctest::Approx(1.0));
  CHECK(length_penalty(3, 24, 0.0) == doctest::Approx(1.0));
  CHECK(length_penalty(50, 100, 1.0) == doctest::Approx(0.5));
  CHECK(length_penalty(300, 100, 1.0) == doctest::Approx(-1.0));  // unclamped
  CHECK_THROWS_AS(length_penalty(5, 0, 0.5), Error);
}

TEST_CASE("mix_rewards") {
  RewardVector r3;
  r3.variant = RewardVariant::masked;
  r3.r = {0.0, 0.0};
  std::vector<double> len = {1.0, 0.5};
  const RewardVector half = mix_rewards(r3, len, 0.5, 1e-8);
  CHECK(half.r[0] == doctest::Approx(0.5));   // z of a constant vector is 0
  CHECK(half.r[1] == doctest::Approx(0.25));

  RewardVector spread;
  spread.r = {-3.0, 5.0, 1.0};
  std::vector<double> len3 = {0.2, 0.9, 0.4};
  const RewardVector only_r3 = mix_rewards(spread, len3, 1.0, 1e-8);
  std::vector<int> idx(3);
  std::iota(idx.begin(), idx.end(), 0);
  auto by = [](const std::vector<double>& v) {
    return [&v](int a, int b) { return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)]; };
  };
  std::vector<int> a = idx, b = idx;
  std::sort(a.begin(), a.end(), by(spread.r));
  std::sort(b.begin(), b.end(), by(only_r3.r));
  CHECK(a == b);

  const RewardVector only_len = mix_rewards(spread, len3, 0.0, 1e-8);
  CHECK(only_len.r[0] == doctest::Approx(0.2));
  CHECK(only_len.r[1] == doctest::Approx(0.9));

  std::vector<double> bad = {1.0};
  CHECK_THROWS_AS(mix_rewards(spread, bad, 0.5, 1e-8), Error);
}

TEST_CASE("token_ratio_terms") {
  std::vector<double> same = {-1.0, -2.0};
  const std::vector<double> ones = token_ratio_terms(same, same);
  CHECK(ones[0] == doctest::Approx(1.0));
  CHECK(ones[1] == doctest::Approx(1.0));

  std::vector<double> neu = {-1.0 + std::log(2.0), -2.0};
  const std::vector<double> r = token_ratio_terms(neu, same);
  CHECK(r[0] == doctest::Approx(2.0).epsilon(1e-12));

  RngStream rng{8};
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + rng.below(16);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(-6.0, 0.0);
      b[i] = rng.uniform(-6.0, 0.0);
    }
    const std::vector<double> ratios = token_ratio_terms(a, b);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(ratios[i] == doctest::Approx(std::exp(a[i] - b[i])).epsilon(1e-12));
  }
}

TEST_CASE("clipped_surrogate: exact cases and monotonicity") {
  std::vector<double> one = {1.0};
  CHECK(clipped_surrogate(one, 0.7, 0.2, 0.2)[0] == doctest::Approx(0.7));

  std::vector<double> high = {1.0 + 0.2 + 0.5};
  CHECK(clipped_surrogate(high, 2.0, 0.2, 0.2)[0] == doctest::Approx(1.2 * 2.0));

  std::vector<double> low = {0.5};
  CHECK(clipped_surrogate(low, -1.0, 0.2, 0.2)[0] == doctest::Approx(-0.8));

  // nondecreasing in ratio for positive advantage, constant above 1+eps_high
  double prev = -1e30;
  for (double ratio = 0.0; ratio < 2.0; ratio += 0.01) {
    std::vector<double> r = {ratio};
    const double term = clipped_surrogate(r, 1.3, 0.2, 0.3)[0];
    CHECK(term >= prev - 1e-12);
    if (ratio > 1.3) CHECK(term == doctest::Approx(1.3 * 1.3));
    prev = term;
  }
  // mirrored for negative advantage below 1-eps_low
  for (double ratio = 0.0; ratio < 0.8; ratio += 0.01) {
    std::vector<double> r = {ratio};
    CHECK(clipped_surrogate(r, -2.0, 0.2, 0.3)[0] == doctest::Approx(-1.6));
  }
}

TEST_CASE("kl_term: zero at equality, nonnegative, closed form") {
  std::vector<double> p = {-1.0, -2.0, -0.5};
  CHECK(kl_term(p, p) == doctest::Approx(0.0));

  std::vector<double> ref(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) ref[i] = p[i] + std::log(2.0);
  CHECK(kl_term(p, ref) == doctest::Approx(2.0 - std::log(2.0) - 1.0).epsilon(1e-12));

  RngStream rng{77};
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(-5.0, 0.0);
      b[i] = rng.uniform(-5.0, 0.0);
    }
    CHECK(kl_term(a, b) >= 0.0);
  }
}

namespace {

GroupSample tiny_group(const Vocabulary& vocab, const PolicySnapshot& sampler,
                       const PolicySnapshot& reference, std::uint64_t seed,
                       double adv0, double adv1) {
  GroupSample group;
  group.prompt.tokens = {0};
  group.reference.tokens = {0};
  RngStream rng{seed};
  for (int i = 0; i < 2; ++i) {
    const int len = 2 + static_cast<int>(rng.below(3));
    std::vector<TokenId> raw;
    ContextCursor cur(sampler);
    cur.feed(group.prompt.tokens);
    for (int t = 0; t < len; ++t) {
      TokenId tok;
      do {
        tok = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab.size())));
      } while (!token_allowed(sampler, cur.key(), tok) || tok == vocab.eos);
      raw.push_back(tok);
      cur.feed(tok);
    }
    group.raw.push_back(raw);
    SampledOutput out = split_output(raw, vocab);
    out.truncated = false;
    group.outputs.push_back(out);
    group.old_logp.push_back(sampled_logp(sampler, group.prompt, raw));
    group.ref_logp.push_back(sampled_logp(reference, group.prompt, raw));
  }
  group.rewards.r = {adv0, adv1};
  group.advantages = {adv0, adv1};
  return group;
}

}  // namespace

TEST_CASE("grpo_objective: degenerate group and on-policy identity") {
  const Vocabulary vocab = Vocabulary::tiny();
  const PolicySnapshot policy = init_policy(vocab, 1);
  TrainConfig config;
  config.beta_kl = 0.0;

  GroupSample zero = tiny_group(vocab, policy, policy, 11, 0.0, 0.0);
  const ObjectiveResult res = grpo_objective(zero, policy, config);
  CHECK(res.objective == doctest::Approx(0.0));
  for (double g : res.grad) CHECK(g == doctest::Approx(0.0));

  // first update, new == old: objective reduces to mean_i A_i * |o_i| and the
  // clip fraction is zero
  GroupSample live = tiny_group(vocab, policy, policy, 13, -1.0, 1.0);
  const ObjectiveResult on = grpo_objective(live, policy, config);
  const double want = 0.5 * (-1.0 * static_cast<double>(live.raw[0].size()) +
                             1.0 * static_cast<double>(live.raw[1].size()));
  CHECK(on.objective == doctest::Approx(want).epsilon(1e-12));
  CHECK(on.clip_frac == doctest::Approx(0.0));
  CHECK(on.kl == doctest::Approx(0.0));
}

TEST_CASE("grpo_objective: truncated outputs are masked, empty mask is an error") {
  const Vocabulary vocab = Vocabulary::tiny();
  const PolicySnapshot policy = init_policy(vocab, 2);
  TrainConfig config;

  GroupSample group = tiny_group(vocab, policy, policy, 17, 1.0, -1.0);
  group.outputs[1].truncated = true;
  const ObjectiveResult res = grpo_objective(group, policy, config);
  CHECK(res.token_count == static_cast<int>(group.raw[0].size()));

  group.outputs[0].truncated = true;
  CHECK_THROWS_WITH_AS(grpo_objective(group, policy, config),
                       doctest::Contains("no optimizable tokens"), Error);
}

TEST_CASE("analytic gradient matches finite differences (3 quick seeds)") {
  const GradCheckReport report = gradient_check(3);
  CHECK(report.max_rel_err < 1e-4);
  CHECK(report.params_checked == 3 * 250);
}

TEST_CASE("config round-trip rejects unknown keys") {
  TrainConfig c;
  c.learning_rate = 0.25;
  c.variant = "weighted";
  const std::string text = c.to_json_text();
  const TrainConfig back = TrainConfig::from_json_text(text, "test");
  CHECK(back.learning_rate == doctest::Approx(0.25));
  CHECK(back.variant == "weighted");
  CHECK_THROWS_WITH_AS(TrainConfig::from_json_text(R"({"lr": 1})", "test"),
                       doctest::Contains("unknown config key"), Error);
  CHECK_THROWS_AS(TrainConfig::from_json_text(R"({"group_size": 1})", "test"), Error);
}
