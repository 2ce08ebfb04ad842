#include "dro/kernels.hpp"

#include <cmath>
#include <limits>

#include "dro/error.hpp"

namespace dro::kernels {

namespace scalar {

double reduce_max(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = v > m ? v : m;
  return m;
}

double sum_exp(std::span<const double> x, double shift) {
  double s = 0.0;
  for (double v : x) s += std::exp(v - shift);
  return s;
}

void exp_shifted(std::span<const double> x, double shift, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i] - shift);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

int count_rank(std::span<const double> x, int target) {
  const double t = x[static_cast<std::size_t>(target)];
  int greater = 0;
  for (double v : x) greater += v > t ? 1 : 0;
  int tied_before = 0;
  for (int v = 0; v < target; ++v)
    tied_before += x[static_cast<std::size_t>(v)] == t ? 1 : 0;
  return 1 + greater + tied_before;
}

}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define DRO_HAVE_AVX2_SOURCES 1
namespace avx2 {
double reduce_max(std::span<const double> x);
double sum_exp(std::span<const double> x, double shift);
void exp_shifted(std::span<const double> x, double shift, std::span<double> out);
double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
int count_rank(std::span<const double> x, int target);
}  // namespace avx2
#else
#define DRO_HAVE_AVX2_SOURCES 0
#endif

namespace {

bool cpu_has_avx2() {
#if DRO_HAVE_AVX2_SOURCES && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect_backend() {
  return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend g_backend = detect_backend();

}  // namespace

Backend active_backend() { return g_backend; }

bool backend_supported(Backend b) {
  return b == Backend::scalar || (b == Backend::avx2 && cpu_has_avx2());
}

bool set_backend(Backend b) {
  if (!backend_supported(b)) return false;
  g_backend = b;
  return true;
}

void reset_backend() { g_backend = detect_backend(); }

double reduce_max(std::span<const double> x) {
#if DRO_HAVE_AVX2_SOURCES
  if (g_backend == Backend::avx2) return avx2::reduce_max(x);
#endif
  return scalar::reduce_max(x);
}

double sum_exp(std::span<const double> x, double shift) {
#if DRO_HAVE_AVX2_SOURCES
  if (g_backend == Backend::avx2) return avx2::sum_exp(x, shift);
#endif
  return scalar::sum_exp(x, shift);
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) fail("log_sum_exp: empty input");
  const double m = reduce_max(x);
  return m + std::log(sum_exp(x, m));
}

void softmax(std::span<const double> x, std::span<double> out) {
  if (x.size() != out.size()) fail("softmax: size mismatch");
  if (x.empty()) return;
  const double m = reduce_max(x);
#if DRO_HAVE_AVX2_SOURCES
  if (g_backend == Backend::avx2) {
    avx2::exp_shifted(x, m, out);
  } else {
    scalar::exp_shifted(x, m, out);
  }
#else
  scalar::exp_shifted(x, m, out);
#endif
  double total = 0.0;
  for (double v : out) total += v;
  const double inv = 1.0 / total;
  for (double& v : out) v *= inv;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail("dot: size mismatch");
#if DRO_HAVE_AVX2_SOURCES
  if (g_backend == Backend::avx2) return avx2::dot(a, b);
#endif
  return scalar::dot(a, b);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) fail("axpy: size mismatch");
#if DRO_HAVE_AVX2_SOURCES
  if (g_backend == Backend::avx2) {
    avx2::axpy(alpha, x, y);
    return;
  }
#endif
  scalar::axpy(alpha, x, y);
}

int count_rank(std::span<const double> x, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= x.size())
    fail("count_rank: target index out of range");
#if DRO_HAVE_AVX2_SOURCES
  if (g_backend == Backend::avx2) return avx2::count_rank(x, target);
#endif
  return scalar::count_rank(x, target);
}

}  // namespace dro::kernels
