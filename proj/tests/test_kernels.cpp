#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dro/kernels.hpp"
#include "dro/rng.hpp"

using namespace dro;
namespace k = dro::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, RngStream& rng, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

struct BackendGuard {
  ~BackendGuard() { k::reset_backend(); }
};

}  // namespace

TEST_CASE("log_sum_exp and softmax match long-double evaluation") {
  RngStream rng{42};
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.below(80);
    std::vector<double> x = random_vec(n, rng, -40.0, 30.0);

    long double m = x[0];
    for (double v : x) m = std::max<long double>(m, v);
    long double s = 0.0L;
    for (double v : x) s += expl(static_cast<long double>(v) - m);
    const double want_lse = static_cast<double>(m + logl(s));
    CHECK(k::log_sum_exp(x) == doctest::Approx(want_lse).epsilon(1e-12));

    std::vector<double> probs(n);
    k::softmax(x, probs);
    double total = 0.0;
    for (double p : probs) {
      CHECK(p >= 0.0);
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 0; i < n; ++i) {
      const double want = static_cast<double>(expl(static_cast<long double>(x[i]) - m) / s);
      CHECK(probs[i] == doctest::Approx(want).epsilon(1e-11));
    }
  }
}

TEST_CASE("count_rank matches a naive sort-based oracle") {
  RngStream rng{7};
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> x = random_vec(n, rng, -3.0, 3.0);
    if (rep % 3 == 0 && n >= 4) {
      x[1] = x[0];  // force ties
      x[3] = x[0];
    }
    for (std::size_t t = 0; t < n; ++t) {
      int greater = 0, tied_before = 0;
      for (std::size_t v = 0; v < n; ++v) {
        if (x[v] > x[t]) ++greater;
        if (v < t && x[v] == x[t]) ++tied_before;
      }
      CHECK(k::count_rank(x, static_cast<int>(t)) == 1 + greater + tied_before);
    }
  }
}

TEST_CASE("scalar and AVX2 backends agree") {
  if (!k::backend_supported(k::Backend::avx2)) return;  // nothing to compare
  BackendGuard guard;
  RngStream rng{2024};
  for (std::size_t n : {std::size_t{0}, std::size_t{1}, std::size_t{3}, std::size_t{4},
                        std::size_t{5}, std::size_t{8}, std::size_t{13}, std::size_t{64},
                        std::size_t{65}, std::size_t{257}}) {
    std::vector<double> a = random_vec(n, rng, -60.0, 25.0);
    std::vector<double> b = random_vec(n, rng, -2.0, 2.0);

    REQUIRE(k::set_backend(k::Backend::scalar));
    const double max_s = k::reduce_max(a);
    const double se_s = n ? k::sum_exp(a, max_s) : 0.0;
    const double dot_s = k::dot(a, b);
    std::vector<double> soft_s(n), axpy_s = b;
    if (n) k::softmax(a, soft_s);
    k::axpy(0.7, a, axpy_s);
    std::vector<int> rank_s;
    for (std::size_t t = 0; t < n; ++t) rank_s.push_back(k::count_rank(a, static_cast<int>(t)));

    REQUIRE(k::set_backend(k::Backend::avx2));
    CHECK(k::reduce_max(a) == max_s);  // max is exact in both
    if (n) {
      CHECK(k::sum_exp(a, max_s) == doctest::Approx(se_s).epsilon(5e-14));
      std::vector<double> soft_v(n);
      k::softmax(a, soft_v);
      for (std::size_t i = 0; i < n; ++i)
        CHECK(soft_v[i] == doctest::Approx(soft_s[i]).epsilon(1e-12));
    }
    CHECK(k::dot(a, b) == doctest::Approx(dot_s).epsilon(1e-13));
    std::vector<double> axpy_v = b;
    k::axpy(0.7, a, axpy_v);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(axpy_v[i] == doctest::Approx(axpy_s[i]).epsilon(1e-13));
    for (std::size_t t = 0; t < n; ++t)
      CHECK(k::count_rank(a, static_cast<int>(t)) == rank_s[t]);
  }
}

TEST_CASE("backend selection is sticky and reversible") {
  BackendGuard guard;
  REQUIRE(k::set_backend(k::Backend::scalar));
  CHECK(k::active_backend() == k::Backend::scalar);
  k::reset_backend();
  if (k::backend_supported(k::Backend::avx2))
    CHECK(k::active_backend() == k::Backend::avx2);
}
