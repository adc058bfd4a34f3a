#pragma once

// Federated dropout mechanics: which hidden units each client keeps, how a
// full model is cut down to a client sub-model, and how sub-model updates
// are scattered back into full-model coordinates.

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "feddrop/nn.hpp"
#include "feddrop/random.hpp"

namespace feddrop {

enum class Scheme {
  kPerClientPerRound,  // PCPR: every client draws its own mapping
  kPerRound,           // PR: one mapping per round, shared by all clients
};

std::string_view to_string(Scheme scheme);
Scheme parse_scheme(std::string_view text);

// Units kept out of `hidden_dim` at dropout `rate`:
// max(1, round((1 - rate) * hidden_dim)), ties away from zero.
std::size_t kept_count(std::size_t hidden_dim, double rate);

struct DropoutConfig {
  std::vector<double> rates;  // one per FF block, each in [0, 1)
  Scheme scheme = Scheme::kPerClientPerRound;
  std::uint64_t seed = 0;

  static DropoutConfig uniform(double rate, std::size_t num_blocks,
                               Scheme scheme = Scheme::kPerClientPerRound,
                               std::uint64_t seed = 0);

  void validate(std::size_t num_blocks) const;
  bool operator==(const DropoutConfig&) const = default;
};

// Kept hidden-unit indices per FF block, strictly increasing.
struct DropoutMapping {
  std::vector<std::vector<std::size_t>> kept;

  static DropoutMapping full(const Architecture& arch);

  // Throws MappingError unless every block's indices are strictly
  // increasing, non-empty, and below hidden_dim.
  void validate(const Architecture& arch) const;

  bool operator==(const DropoutMapping&) const = default;
};

struct MappingSet {
  std::vector<DropoutMapping> mappings;  // one per client slot in the round
  std::size_t round = 0;
};

// Draws kept indices uniformly without replacement for every block.
DropoutMapping sample_mapping(const Architecture& arch,
                              const std::vector<double>& rates, Rng& rng);

// PCPR: slot k draws from stream (seed, round, k).
// PR: one draw from stream (seed, round), replicated to all K slots.
MappingSet generate_mappings(const DropoutConfig& config, std::size_t clients,
                             std::size_t round, const Architecture& arch);

// Keeps columns of w1, entries of b1, and rows of w2 at the kept indices.
// Projections, b2, and the residual path are copied unchanged.
ParamTree shrink(const ParamTree& params, const DropoutMapping& mapping);

struct Expanded {
  ParamTree values;  // full shape; zero off the kept coordinates
  ParamTree mask;    // full shape; 1.0 exactly where `values` was written
};

Expanded expand(const ParamTree& sub, const DropoutMapping& mapping,
                const Architecture& full_arch);

// Shape of shrink(arch, mapping) without touching any values.
std::size_t shrunk_param_count(const Architecture& arch,
                               const std::vector<double>& rates);

// 1 - count(shrunk) / count(full), evaluated as dropped / full in exact
// integer arithmetic before the final division.
double size_reduction(const Architecture& arch, const std::vector<double>& rates);

// Parameters inside hidden-unit slices (w1, b1, w2 of every block). These
// are the only ones dropout can remove.
std::size_t droppable_param_count(const Architecture& arch);

// droppable / total.
double ff_share(const Architecture& arch);

// Toy architecture whose droppable feedforward share matches `ff_fraction`
// (exactly when an integer solution exists near the size target), used to
// reproduce client-size accounting for models with a given composition.
// Hidden widths are multiples of 10 so decimal rates keep whole units.
Architecture make_table3_arch(double ff_fraction,
                              std::size_t total_params_target = 100000);

}  // namespace feddrop
