// AVX2 variants of the dense kernels. Compiled with -mavx2 -mfma and reached
// only through the runtime dispatch in kernels.cpp, so the rest of the build
// stays baseline-x86-64.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

namespace dro::kernels::avx2 {

namespace {

// exp(x) for 4 doubles: Cody-Waite range reduction x = n*ln2 + r with
// |r| <= ln2/2, degree-13 Taylor polynomial in r, 2^n via exponent bits.
// Inputs are clamped to [-708, 708]; callers only pass shifted logits
// (x - max <= 0), so the clamp never changes a value that matters.
inline __m256d exp4(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d lo = _mm256_set1_pd(-708.0);
  const __m256d hi = _mm256_set1_pd(708.0);

  x = _mm256_min_pd(_mm256_max_pd(x, lo), hi);

  __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                              _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, c1, x);
  r = _mm256_fnmadd_pd(n, c2, r);

  const double inv_fact[14] = {
      1.0,
      1.0,
      5.0e-1,
      1.6666666666666666667e-1,
      4.1666666666666666667e-2,
      8.3333333333333333333e-3,
      1.3888888888888888889e-3,
      1.9841269841269841270e-4,
      2.4801587301587301587e-5,
      2.7557319223985890653e-6,
      2.7557319223985890653e-7,
      2.5052108385441718775e-8,
      2.0876756987868098979e-9,
      1.6059043836821614599e-10,
  };
  __m256d p = _mm256_set1_pd(inv_fact[13]);
  for (int k = 12; k >= 0; --k)
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(inv_fact[k]));

  // scale by 2^n
  __m128i ni = _mm256_cvtpd_epi32(n);
  __m256i ne = _mm256_cvtepi32_epi64(ni);
  ne = _mm256_add_epi64(ne, _mm256_set1_epi64x(1023));
  ne = _mm256_slli_epi64(ne, 52);
  return _mm256_mul_pd(p, _mm256_castsi256_pd(ne));
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

inline double hmax(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_max_pd(lo, hi);
  double a = _mm_cvtsd_f64(lo);
  double b = _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
  return a > b ? a : b;
}

}  // namespace

double reduce_max(std::span<const double> x) {
  std::size_t i = 0;
  double m = -std::numeric_limits<double>::infinity();
  if (x.size() >= 4) {
    __m256d acc = _mm256_loadu_pd(x.data());
    for (i = 4; i + 4 <= x.size(); i += 4)
      acc = _mm256_max_pd(acc, _mm256_loadu_pd(x.data() + i));
    m = hmax(acc);
  }
  for (; i < x.size(); ++i) m = x[i] > m ? x[i] : m;
  return m;
}

double sum_exp(std::span<const double> x, double shift) {
  const __m256d sh = _mm256_set1_pd(shift);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= x.size(); i += 4) {
    __m256d v = _mm256_sub_pd(_mm256_loadu_pd(x.data() + i), sh);
    acc = _mm256_add_pd(acc, exp4(v));
  }
  double s = hsum(acc);
  for (; i < x.size(); ++i) {
    // keep the tail on the same exp path as the vector body
    __m256d v = _mm256_set1_pd(x[i] - shift);
    s += _mm_cvtsd_f64(_mm256_castpd256_pd128(exp4(v)));
  }
  return s;
}

void exp_shifted(std::span<const double> x, double shift,
                 std::span<double> out) {
  const __m256d sh = _mm256_set1_pd(shift);
  std::size_t i = 0;
  for (; i + 4 <= x.size(); i += 4) {
    __m256d v = _mm256_sub_pd(_mm256_loadu_pd(x.data() + i), sh);
    _mm256_storeu_pd(out.data() + i, exp4(v));
  }
  for (; i < x.size(); ++i) {
    __m256d v = _mm256_set1_pd(x[i] - shift);
    out[i] = _mm_cvtsd_f64(_mm256_castpd256_pd128(exp4(v)));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= a.size(); i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a.data() + i),
                          _mm256_loadu_pd(b.data() + i), acc);
  }
  double s = hsum(acc);
  for (; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= x.size(); i += 4) {
    __m256d v = _mm256_fmadd_pd(a, _mm256_loadu_pd(x.data() + i),
                                _mm256_loadu_pd(y.data() + i));
    _mm256_storeu_pd(y.data() + i, v);
  }
  for (; i < x.size(); ++i) y[i] += alpha * x[i];
}

int count_rank(std::span<const double> x, int target) {
  const double t = x[static_cast<std::size_t>(target)];
  const __m256d tv = _mm256_set1_pd(t);
  int greater = 0;
  std::size_t i = 0;
  for (; i + 4 <= x.size(); i += 4) {
    __m256d v = _mm256_loadu_pd(x.data() + i);
    __m256d gt = _mm256_cmp_pd(v, tv, _CMP_GT_OQ);
    greater += __builtin_popcount(
        static_cast<unsigned>(_mm256_movemask_pd(gt)));
  }
  for (; i < x.size(); ++i) greater += x[i] > t ? 1 : 0;
  int tied_before = 0;
  for (int v = 0; v < target; ++v)
    tied_before += x[static_cast<std::size_t>(v)] == t ? 1 : 0;
  return 1 + greater + tied_before;
}

}  // namespace dro::kernels::avx2

#endif  // x86_64
