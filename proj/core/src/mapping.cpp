#include "feddrop/mapping.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "feddrop/errors.hpp"

namespace feddrop {

namespace {

constexpr std::uint64_t kMaxSlot = std::numeric_limits<std::uint64_t>::max();

void check_congruent(const ParamTree& params, const DropoutMapping& mapping) {
  if (mapping.kept.size() != params.blocks.size()) {
    throw MappingError("mapping covers " + std::to_string(mapping.kept.size()) +
                       " blocks, model has " +
                       std::to_string(params.blocks.size()));
  }
}

// Smallest-denominator fraction p/q within 1e-12 of x, via continued
// fraction convergents.
std::pair<std::uint64_t, std::uint64_t> rational_approx(double x) {
  std::uint64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double rest = x;
  for (int i = 0; i < 40; ++i) {
    const double whole = std::floor(rest);
    const auto a = static_cast<std::uint64_t>(whole);
    const std::uint64_t p2 = a * p1 + p0;
    const std::uint64_t q2 = a * q1 + q0;
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    if (std::abs(static_cast<double>(p1) / static_cast<double>(q1) - x) < 1e-12 ||
        q1 > 100000) {
      break;
    }
    const double frac = rest - whole;
    if (frac < 1e-15) break;
    rest = 1.0 / frac;
  }
  return {p1, q1};
}

}  // namespace

std::string_view to_string(Scheme scheme) {
  return scheme == Scheme::kPerRound ? "PR" : "PCPR";
}

Scheme parse_scheme(std::string_view text) {
  if (text == "PCPR" || text == "pcpr") return Scheme::kPerClientPerRound;
  if (text == "PR" || text == "pr") return Scheme::kPerRound;
  throw ConfigError("unknown dropout scheme '" + std::string(text) +
                    "' (expected PCPR or PR)");
}

std::size_t kept_count(std::size_t hidden_dim, double rate) {
  if (hidden_dim == 0) throw ConfigError("hidden_dim must be >= 1");
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate " + std::to_string(rate) +
                      " outside [0, 1)");
  }
  const double kept = std::round((1.0 - rate) * static_cast<double>(hidden_dim));
  return std::max<std::size_t>(1, static_cast<std::size_t>(kept));
}

DropoutConfig DropoutConfig::uniform(double rate, std::size_t num_blocks,
                                     Scheme scheme, std::uint64_t seed) {
  return {std::vector<double>(num_blocks, rate), scheme, seed};
}

void DropoutConfig::validate(std::size_t num_blocks) const {
  if (rates.size() != num_blocks) {
    throw ConfigError("dropout config has " + std::to_string(rates.size()) +
                      " rates for " + std::to_string(num_blocks) + " blocks");
  }
  for (double rate : rates) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError("dropout rate " + std::to_string(rate) +
                        " outside [0, 1)");
    }
  }
}

DropoutMapping DropoutMapping::full(const Architecture& arch) {
  DropoutMapping mapping;
  mapping.kept.resize(arch.num_blocks);
  for (auto& kept : mapping.kept) {
    kept.resize(arch.hidden_dim);
    for (std::size_t i = 0; i < kept.size(); ++i) kept[i] = i;
  }
  return mapping;
}

void DropoutMapping::validate(const Architecture& arch) const {
  if (kept.size() != arch.num_blocks) {
    throw MappingError("mapping block count " + std::to_string(kept.size()) +
                       " != " + std::to_string(arch.num_blocks));
  }
  for (std::size_t b = 0; b < kept.size(); ++b) {
    const auto& units = kept[b];
    if (units.empty()) {
      throw MappingError("block " + std::to_string(b) + " keeps no units");
    }
    for (std::size_t i = 0; i < units.size(); ++i) {
      if (units[i] >= arch.hidden_dim) {
        throw MappingError("block " + std::to_string(b) + ": index " +
                           std::to_string(units[i]) + " out of range");
      }
      if (i > 0 && units[i] <= units[i - 1]) {
        throw MappingError("block " + std::to_string(b) +
                           ": indices not strictly increasing");
      }
    }
  }
}

DropoutMapping sample_mapping(const Architecture& arch,
                              const std::vector<double>& rates, Rng& rng) {
  if (rates.size() != arch.num_blocks) {
    throw ConfigError("rates length does not match block count");
  }
  DropoutMapping mapping;
  mapping.kept.reserve(arch.num_blocks);
  for (double rate : rates) {
    const std::size_t keep = kept_count(arch.hidden_dim, rate);
    if (keep == arch.hidden_dim) {
      std::vector<std::size_t> all(keep);
      for (std::size_t i = 0; i < keep; ++i) all[i] = i;
      mapping.kept.push_back(std::move(all));
    } else {
      mapping.kept.push_back(sample_sorted_subset(rng, arch.hidden_dim, keep));
    }
  }
  return mapping;
}

MappingSet generate_mappings(const DropoutConfig& config, std::size_t clients,
                             std::size_t round, const Architecture& arch) {
  if (clients == 0) throw ConfigError("clients per round must be >= 1");
  config.validate(arch.num_blocks);
  MappingSet set;
  set.round = round;
  set.mappings.reserve(clients);
  if (config.scheme == Scheme::kPerRound) {
    Rng rng = make_stream(config.seed, StreamTag::kMappingPerRound,
                          {round, kMaxSlot});
    set.mappings.assign(clients, sample_mapping(arch, config.rates, rng));
  } else {
    for (std::size_t k = 0; k < clients; ++k) {
      Rng rng = make_stream(config.seed, StreamTag::kMappingPerClient, {round, k});
      set.mappings.push_back(sample_mapping(arch, config.rates, rng));
    }
  }
  return set;
}

ParamTree shrink(const ParamTree& params, const DropoutMapping& mapping) {
  check_congruent(params, mapping);
  ParamTree sub;
  sub.input_w = params.input_w;
  sub.input_b = params.input_b;
  sub.output_w = params.output_w;
  sub.output_b = params.output_b;
  sub.blocks.reserve(params.blocks.size());
  const std::size_t model = params.model_dim();
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const auto& src = params.blocks[b];
    const auto& kept = mapping.kept[b];
    const std::size_t hidden = src.hidden();
    FFBlock dst;
    dst.w1 = Matrix(model, kept.size());
    dst.b1.resize(kept.size());
    dst.w2 = Matrix(kept.size(), model);
    dst.b2 = src.b2;
    for (std::size_t j = 0; j < kept.size(); ++j) {
      const std::size_t unit = kept[j];
      if (unit >= hidden) {
        throw MappingError("block " + std::to_string(b) + ": index " +
                           std::to_string(unit) + " >= hidden width " +
                           std::to_string(hidden));
      }
      for (std::size_t r = 0; r < model; ++r) dst.w1(r, j) = src.w1(r, unit);
      dst.b1[j] = src.b1[unit];
      const auto from = src.w2.row(unit);
      std::copy(from.begin(), from.end(), dst.w2.row(j).begin());
    }
    sub.blocks.push_back(std::move(dst));
  }
  return sub;
}

Expanded expand(const ParamTree& sub, const DropoutMapping& mapping,
                const Architecture& full_arch) {
  mapping.validate(full_arch);
  Expanded out{zeros(full_arch), zeros(full_arch)};
  const std::size_t model = full_arch.model_dim;
  const auto mismatch = [](const std::string& what) {
    throw ShapeError("expand: " + what + " does not match shrunk shape");
  };
  if (sub.input_w.rows != full_arch.input_dim || sub.input_w.cols != model ||
      sub.input_b.size() != model)
    mismatch("input projection");
  if (sub.output_w.rows != model || sub.output_w.cols != full_arch.num_classes ||
      sub.output_b.size() != full_arch.num_classes)
    mismatch("output projection");
  if (sub.blocks.size() != full_arch.num_blocks) mismatch("block count");

  out.values.input_w = sub.input_w;
  out.values.input_b = sub.input_b;
  out.values.output_w = sub.output_w;
  out.values.output_b = sub.output_b;
  for (auto& v : out.mask.input_w.values) v = 1.0;
  for (auto& v : out.mask.input_b) v = 1.0;
  for (auto& v : out.mask.output_w.values) v = 1.0;
  for (auto& v : out.mask.output_b) v = 1.0;

  for (std::size_t b = 0; b < full_arch.num_blocks; ++b) {
    const auto& src = sub.blocks[b];
    const auto& kept = mapping.kept[b];
    if (src.w1.rows != model || src.w1.cols != kept.size() ||
        src.b1.size() != kept.size() || src.w2.rows != kept.size() ||
        src.w2.cols != model || src.b2.size() != model) {
      mismatch("block " + std::to_string(b));
    }
    auto& dst = out.values.blocks[b];
    auto& cover = out.mask.blocks[b];
    dst.b2 = src.b2;
    std::fill(cover.b2.begin(), cover.b2.end(), 1.0);
    for (std::size_t j = 0; j < kept.size(); ++j) {
      const std::size_t unit = kept[j];
      for (std::size_t r = 0; r < model; ++r) {
        dst.w1(r, unit) = src.w1(r, j);
        cover.w1(r, unit) = 1.0;
      }
      dst.b1[unit] = src.b1[j];
      cover.b1[unit] = 1.0;
      for (std::size_t c = 0; c < model; ++c) {
        dst.w2(unit, c) = src.w2(j, c);
        cover.w2(unit, c) = 1.0;
      }
    }
  }
  return out;
}

std::size_t droppable_param_count(const Architecture& arch) {
  return arch.num_blocks * arch.hidden_dim * (2 * arch.model_dim + 1);
}

double ff_share(const Architecture& arch) {
  return static_cast<double>(droppable_param_count(arch)) /
         static_cast<double>(param_count(arch));
}

std::size_t shrunk_param_count(const Architecture& arch,
                               const std::vector<double>& rates) {
  arch.validate();
  if (rates.size() != arch.num_blocks) {
    throw ConfigError("rates length does not match block count");
  }
  std::size_t dropped = 0;
  for (double rate : rates) {
    dropped += (arch.hidden_dim - kept_count(arch.hidden_dim, rate)) *
               (2 * arch.model_dim + 1);
  }
  return param_count(arch) - dropped;
}

double size_reduction(const Architecture& arch, const std::vector<double>& rates) {
  const std::size_t full = param_count(arch);
  const std::size_t dropped = full - shrunk_param_count(arch, rates);
  return static_cast<double>(dropped) / static_cast<double>(full);
}

Architecture make_table3_arch(double ff_fraction, std::size_t total_params_target) {
  if (!(ff_fraction > 0.0 && ff_fraction < 1.0)) {
    throw ConfigError("ff_fraction must lie in (0, 1)");
  }
  if (total_params_target == 0) throw ConfigError("total_params_target must be >= 1");
  const auto [num, den] = rational_approx(ff_fraction);
  const double target = static_cast<double>(total_params_target);

  struct Candidate {
    Architecture arch;
    bool exact = false;
    double share_error = 0.0;
    double size_error = 0.0;
  };
  std::optional<Candidate> best;
  const auto better = [](const Candidate& a, const Candidate& b) {
    if (a.exact != b.exact) return a.exact;
    if (!a.exact && a.share_error != b.share_error) return a.share_error < b.share_error;
    return a.size_error < b.size_error;
  };

  for (std::size_t blocks = 1; blocks <= 8; ++blocks) {
    for (std::size_t model = 4; model <= 64; ++model) {
      for (std::size_t hidden = 10; hidden <= 400; hidden += 10) {
        const std::size_t droppable = blocks * hidden * (2 * model + 1);
        const std::size_t b2_params = blocks * model;
        for (std::size_t classes = 2; classes <= 16; ++classes) {
          const std::size_t output = classes * (model + 1);
          // Exempt params needed for droppable / total == ff_fraction.
          const double total_needed = static_cast<double>(droppable) / ff_fraction;
          const double input_needed =
              total_needed - static_cast<double>(droppable + b2_params + output);
          // input projection = model * (input_dim + 1)
          const double input_dim_real = input_needed / static_cast<double>(model) - 1.0;
          if (input_dim_real < 1.0) continue;
          const auto input_dim = static_cast<std::size_t>(std::floor(input_dim_real));
          Architecture arch{input_dim, model, hidden, blocks, classes};
          const std::size_t total = param_count(arch);
          Candidate cand{arch, droppable * den == total * num,
                         std::abs(ff_share(arch) - ff_fraction),
                         std::abs(static_cast<double>(total) - target) / target};
          if (!best || better(cand, *best)) best = cand;
        }
      }
    }
  }
  if (!best || best->share_error > 0.01 * ff_fraction) {
    throw ConfigError("no toy architecture reaches feedforward share " +
                      std::to_string(ff_fraction));
  }
  return best->arch;
}

}  // namespace feddrop
