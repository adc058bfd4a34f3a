#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "feddrop/nn.hpp"

namespace feddrop {

struct Example {
  std::vector<double> features;
  std::size_t label = 0;
  std::size_t domain = 0;

  bool operator==(const Example&) const = default;
};

struct ClientData {
  std::size_t id = 0;
  std::size_t domain = 0;
  std::vector<Example> examples;

  bool operator==(const ClientData&) const = default;
};

// Class-conditional Gaussian mixtures. Each class owns `modes_per_class`
// centers drawn from N(0, I); every domain adds a fixed offset of norm
// `domain_shift`; features are center + offset + noise_std * N(0, I).
// Client c belongs to domain c % num_domains and draws its class mix from
// Dirichlet(class_skew).
struct GeneratorConfig {
  std::size_t num_domains = 3;
  std::size_t num_clients = 240;
  std::size_t examples_per_client = 40;
  std::size_t eval_examples_per_domain = 1200;
  std::size_t input_dim = 12;
  std::size_t num_classes = 6;
  std::size_t modes_per_class = 4;
  double class_skew = 0.5;  // Dirichlet concentration
  double domain_shift = 1.5;
  double noise_std = 0.8;
  std::uint64_t seed = 20221;

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

struct FederatedDataset {
  GeneratorConfig config;  // echo of the generator settings
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<ClientData> clients;
  std::vector<std::vector<Example>> eval_sets;  // indexed by domain

  std::size_t num_domains() const { return eval_sets.size(); }

  // Checks client non-emptiness, per-domain coverage, and label/feature
  // bounds. Throws DataError.
  void validate() const;

  bool operator==(const FederatedDataset&) const = default;
};

FederatedDataset generate(const GeneratorConfig& config);

struct HoldoutSplit {
  std::vector<ClientData> pretrain_clients;  // every client outside the holdout domain
  std::vector<ClientData> adapt_clients;     // holdout-domain clients
  std::vector<Example> holdout_eval;
  std::vector<Example> seen_eval;            // eval sets of the other domains, concatenated
};

HoldoutSplit split_holdout(const FederatedDataset& dataset, std::size_t holdout_domain);

// Concatenation of every domain's eval set, in domain order.
std::vector<Example> all_eval(const FederatedDataset& dataset);

Batch to_batch(std::span<const Example> examples);
Batch gather(std::span<const Example> examples, std::span<const std::size_t> indices);

// Per-class fraction of a client's labels.
std::vector<double> class_histogram(std::span<const Example> examples,
                                    std::size_t num_classes);

// Record file:
//   feddrop-dataset 1
//   input_dim <n>
//   num_classes <n>
//   num_domains <n>
//   [clients]
//   <domain>,<client id>,<label>,<f_1>,...,<f_n>
//   [eval <domain>]
//   <domain>,-1,<label>,<f_1>,...,<f_n>
// Doubles are written in shortest round-trip form.
void write_dataset(std::ostream& out, const FederatedDataset& dataset);
void write_dataset(const std::filesystem::path& path, const FederatedDataset& dataset);
FederatedDataset read_dataset(std::istream& in);
FederatedDataset read_dataset(const std::filesystem::path& path);

}  // namespace feddrop
