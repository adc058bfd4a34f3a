#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "feddrop/nn.hpp"

namespace feddrop {

// Blocks ordered from most to least ambient. A block is ambient when
// resetting it to its initial values barely hurts the trained model.
struct AmbientRanking {
  std::vector<std::size_t> order;       // block indices, most ambient first
  std::vector<double> degradation;      // by block index: reset error - trained error
  double trained_error = 0.0;
};

// Ties in degradation go to the lower block index.
AmbientRanking ambient_rank(const ParamTree& trained, const ParamTree& init, const Batch& eval,
                            std::size_t threads = 1);

// Block at ambient rank n gets base_rate + extra[n]; ranks past the end of
// `extra` get base_rate alone.
std::vector<double> assign_rates(double base_rate, const std::vector<double>& extra,
                                 const AmbientRanking& ranking);
std::vector<double> assign_rates(double base_rate, const std::vector<double>& extra,
                                 const std::vector<std::size_t>& order);

struct SubModelReport {
  std::size_t samples = 0;
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> errors;  // by sample index
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
};

// Shrinks the trained model with `samples` independent uniform mappings
// and evaluates each sub-model as is, without further training. Sample i
// draws its mapping from stream (seed, i).
SubModelReport sample_submodels(const ParamTree& trained, double rate, std::size_t samples,
                                std::uint64_t seed, const Batch& eval, std::size_t threads = 1);

}  // namespace feddrop
