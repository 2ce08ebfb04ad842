#pragma once

#include <cstddef>
#include <span>

namespace dro::kernels {

// Dense double-precision primitives behind the scoring and gradient loops.
// Each kernel has a scalar reference implementation and an AVX2 variant;
// the backend is chosen once at startup from CPUID and can be overridden
// for testing. Within one backend results are bit-reproducible.
enum class Backend { scalar, avx2 };

Backend active_backend();
bool backend_supported(Backend b);
// Returns false (and leaves the backend unchanged) if unsupported on this CPU.
bool set_backend(Backend b);
void reset_backend();  // back to auto-detection

// max over x; -inf for empty input
double reduce_max(std::span<const double> x);

// sum of exp(x[i] - shift)
double sum_exp(std::span<const double> x, double shift);

double log_sum_exp(std::span<const double> x);

// out[i] = exp(x[i] - max) / sum, out.size() == x.size()
void softmax(std::span<const double> x, std::span<double> out);

double dot(std::span<const double> a, std::span<const double> b);

// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// 1-based rank of element `target` when x is sorted descending,
// ties broken by ascending index.
int count_rank(std::span<const double> x, int target);

}  // namespace dro::kernels
