#include "feddrop/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "feddrop/errors.hpp"
#include "feddrop/mapping.hpp"
#include "feddrop/parallel.hpp"
#include "feddrop/random.hpp"

namespace feddrop {

AmbientRanking ambient_rank(const ParamTree& trained, const ParamTree& init, const Batch& eval,
                            std::size_t threads) {
  require_same_shape(trained, init, "ambient_rank");
  AmbientRanking ranking;
  ranking.trained_error = evaluate(trained, eval).error;
  const std::size_t blocks = trained.blocks.size();
  ranking.degradation.assign(blocks, 0.0);
  parallel_for(blocks, threads, [&](std::size_t b) {
    ParamTree reset = trained;
    reset.blocks[b] = init.blocks[b];
    ranking.degradation[b] = evaluate(reset, eval).error - ranking.trained_error;
  });
  ranking.order.resize(blocks);
  std::iota(ranking.order.begin(), ranking.order.end(), std::size_t{0});
  std::stable_sort(ranking.order.begin(), ranking.order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return ranking.degradation[a] < ranking.degradation[b];
                   });
  return ranking;
}

std::vector<double> assign_rates(double base_rate, const std::vector<double>& extra,
                                 const std::vector<std::size_t>& order) {
  std::vector<double> rates(order.size(), base_rate);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const std::size_t block = order[rank];
    if (block >= rates.size()) throw ConfigError("ranking is not a permutation of blocks");
    if (rank < extra.size()) rates[block] = base_rate + extra[rank];
  }
  for (double rate : rates) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError("assigned dropout rate " + std::to_string(rate) + " outside [0, 1)");
    }
  }
  return rates;
}

std::vector<double> assign_rates(double base_rate, const std::vector<double>& extra,
                                 const AmbientRanking& ranking) {
  return assign_rates(base_rate, extra, ranking.order);
}

SubModelReport sample_submodels(const ParamTree& trained, double rate, std::size_t samples,
                                std::uint64_t seed, const Batch& eval, std::size_t threads) {
  if (samples == 0) throw ConfigError("need at least one sub-model sample");
  const Architecture arch = architecture_of(trained);
  const std::vector<double> rates(arch.num_blocks, rate);
  kept_count(arch.hidden_dim, rate);  // validates the rate

  SubModelReport report;
  report.samples = samples;
  report.rate = rate;
  report.seed = seed;
  report.errors.assign(samples, 0.0);
  parallel_for(samples, threads, [&](std::size_t i) {
    Rng rng = make_stream(seed, StreamTag::kSubModel, {i});
    const DropoutMapping mapping = sample_mapping(arch, rates, rng);
    report.errors[i] = evaluate(shrink(trained, mapping), eval).error;
  });

  const double n = static_cast<double>(samples);
  // Mean shifted by the first sample keeps identical errors exactly equal
  // to their mean, so the spread of identical sub-models is exactly 0.
  const double anchor = report.errors.front();
  double shifted = 0.0;
  for (double e : report.errors) shifted += e - anchor;
  report.mean = anchor + shifted / n;
  double spread = 0.0;
  for (double e : report.errors) spread += (e - report.mean) * (e - report.mean);
  report.stddev = std::sqrt(spread / n);
  return report;
}

}  // namespace feddrop
