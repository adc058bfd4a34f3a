#pragma once

// Federated training with federated dropout. Each round:
//   1. sample K clients and K dropout mappings
//   2. shrink the server model to each client's sub-model
//   3. run local SGD; delta = initial - final
//   4. expand the deltas back to full shape and average them per coordinate
//   5. feed the averaged delta to the server optimizer as a gradient
// With every rate at 0 and server SGD(lr = 1) this is exactly FedAvg.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "feddrop/data.hpp"
#include "feddrop/mapping.hpp"
#include "feddrop/nn.hpp"

namespace feddrop {

enum class ServerOptimizer { kSgd, kAdam };

struct ServerOptimizerConfig {
  ServerOptimizer kind = ServerOptimizer::kAdam;
  AdamHyper hyper;  // lr is shared by both kinds; betas/epsilon apply to Adam

  static ServerOptimizerConfig sgd(double lr) {
    return {ServerOptimizer::kSgd, AdamHyper{.lr = lr}};
  }
  static ServerOptimizerConfig adam(AdamHyper hyper = {}) {
    return {ServerOptimizer::kAdam, hyper};
  }
};

// How the expanded client deltas are combined.
enum class Aggregation {
  kCoverageMean,  // divide each coordinate by the number of clients covering it
  kClientMean,    // divide every coordinate by the number of clients
};

std::string_view to_string(Aggregation rule);
Aggregation parse_aggregation(std::string_view text);
std::string_view to_string(ServerOptimizer kind);
ServerOptimizer parse_server_optimizer(std::string_view text);

struct FederatedConfig {
  std::size_t rounds = 100;
  std::size_t clients_per_round = 128;
  double client_lr = 0.1;
  std::size_t local_steps = 4;
  std::size_t batch_size = 10;
  // Uniform per-client contribution: every sampled client trains on this
  // many of its examples per round (fewer only if it owns fewer).
  std::size_t examples_per_round = 20;
  ServerOptimizerConfig server;
  DropoutConfig dropout;
  Aggregation aggregation = Aggregation::kCoverageMean;
  std::uint64_t seed = 0;

  void validate(std::size_t num_blocks) const;
};

struct ExecutionOptions {
  std::size_t threads = 1;
};

struct ServerState {
  ParamTree params;
  ServerOptimizerConfig optimizer;
  std::optional<AdamState> adam;  // present iff optimizer is Adam

  static ServerState start(ParamTree params, const ServerOptimizerConfig& optimizer);
};

struct ClientUpdateResult {
  std::size_t slot = 0;       // position k within the round
  std::size_t client_id = 0;
  ParamTree delta;            // sub-model shaped, initial - final
  double train_loss = 0.0;    // mean minibatch loss over local steps
};

struct RoundRecord {
  std::size_t round = 0;
  double eval_error = 0.0;
  double eval_loss = 0.0;
  double train_loss = 0.0;  // mean over participating clients
  std::vector<std::size_t> client_param_counts;  // by slot
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;

  // Per-client sub-model size; the mean when slots differ.
  std::size_t client_params() const;
};

constexpr std::uint64_t kBytesPerParam = 8;

// Local minibatch SGD on a sub-model. Minibatches walk a shuffled order
// of `data`, reshuffling when fewer than batch_size examples remain;
// batch_size >= data.size() means full-batch steps. Returns nullopt when
// the client has no data (the client is skipped for the round).
std::optional<ClientUpdateResult> client_update(std::size_t slot, std::size_t client_id,
                                                const ParamTree& sub_params,
                                                std::span<const Example> data,
                                                double client_lr, std::size_t local_steps,
                                                std::size_t batch_size, Rng& stream);

// Expands each delta with its slot's mapping and averages per coordinate.
// Summation runs in ascending slot order. Coordinates no client covers are 0.
Gradients aggregate(std::span<const ClientUpdateResult> results, const MappingSet& mappings,
                    const Architecture& arch,
                    Aggregation rule = Aggregation::kCoverageMean);

// Treats the pseudo-gradient as a gradient for the server optimizer.
ServerState server_update(ServerState state, const Gradients& pseudo_grad);

// Slot k's training stream and uniform data subsample.
Rng client_stream(std::uint64_t seed, std::size_t round, std::size_t slot);
std::vector<Example> round_subsample(const ClientData& client, std::size_t examples_per_round,
                                     Rng& stream);

// Clients of the round, in slot order.
std::vector<std::size_t> sample_clients(std::uint64_t seed, std::size_t round,
                                        std::size_t population, std::size_t k);

struct RoundOutput {
  RoundRecord record;
  MappingSet mappings;
};

// One round on `clients`, evaluated on `eval`. Rounds are numbered from 1.
RoundOutput run_round(ServerState& state, const FederatedConfig& config,
                      std::span<const ClientData> clients, const Batch& eval, std::size_t round,
                      const ExecutionOptions& exec = {});

struct TrainResult {
  ParamTree final_params;
  ParamTree init_params;  // snapshot of the starting point
  std::vector<RoundRecord> history;
  MappingSet last_mappings;
};

using RoundSink = std::function<void(const RoundRecord&)>;

TrainResult train(const FederatedConfig& config, std::span<const ClientData> clients,
                  std::span<const Example> eval, const ParamTree& initial,
                  const ExecutionOptions& exec = {}, const RoundSink& sink = {});

// Centralized Adam training used for the pre-adaptation baseline.
struct CentralConfig {
  std::size_t steps = 1500;
  std::size_t batch_size = 32;
  AdamHyper optimizer{.lr = 3e-3};
  std::uint64_t seed = 0;

  void validate() const;
};

ParamTree central_train(ParamTree params, std::span<const ClientData> clients,
                        const CentralConfig& config);

struct AdaptationResult {
  ParamTree baseline;
  ParamTree adapted;
  EvalResult baseline_holdout;
  EvalResult baseline_seen;
  EvalResult adapted_holdout;
  EvalResult adapted_seen;
  std::vector<RoundRecord> history;  // evaluated on the holdout domain
};

// Phase 1 trains centrally on every client outside `holdout_domain`;
// phase 2 fine-tunes federatedly on the holdout-domain clients only.
AdaptationResult domain_adapt(const CentralConfig& pretrain, const FederatedConfig& adapt,
                              const FederatedDataset& dataset, std::size_t holdout_domain,
                              const ParamTree& initial, const ExecutionOptions& exec = {},
                              const RoundSink& sink = {});

}  // namespace feddrop
