#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace feddrop {

using Rng = std::mt19937_64;

// Purpose tags keep independent random streams apart even when the
// remaining keys coincide.
enum class StreamTag : std::uint64_t {
  kInit = 1,
  kMappingPerClient = 2,
  kMappingPerRound = 3,
  kClientSampling = 4,
  kClientTraining = 5,
  kData = 6,
  kSubModel = 7,
  kCentral = 8,
};

// Builds a generator from (seed, tag, keys...) through std::seed_seq, whose
// mixing algorithm is fixed by the standard. Streams are therefore
// reproducible across platforms and independent of call order.
Rng make_stream(std::uint64_t seed, StreamTag tag,
                std::initializer_list<std::uint64_t> keys = {});

// The distributions below are written out rather than taken from <random>
// because the standard leaves the std:: distribution algorithms
// implementation-defined.

// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

// Uniform integer in [0, n). n must be positive.
std::size_t uniform_index(Rng& rng, std::size_t n);

double uniform_real(Rng& rng, double lo, double hi);

double standard_normal(Rng& rng);

// Gamma(shape, 1) via Marsaglia-Tsang. Returned in log space so that tiny
// shapes do not underflow to zero.
double log_gamma_variate(Rng& rng, double shape);

std::vector<double> dirichlet(Rng& rng, double alpha, std::size_t k);

// k distinct indices from [0, n), sorted ascending. Requires k <= n.
std::vector<std::size_t> sample_sorted_subset(Rng& rng, std::size_t n,
                                              std::size_t k);

// k distinct indices from [0, n) in draw order.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                    std::size_t k);

void shuffle(Rng& rng, std::vector<std::size_t>& values);

}  // namespace feddrop
