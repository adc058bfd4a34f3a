#include "feddrop/fedsim.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "feddrop/errors.hpp"
#include "feddrop/parallel.hpp"

namespace feddrop {

std::string_view to_string(Aggregation rule) {
  return rule == Aggregation::kClientMean ? "client_mean" : "coverage_mean";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "coverage_mean") return Aggregation::kCoverageMean;
  if (text == "client_mean") return Aggregation::kClientMean;
  throw ConfigError("unknown aggregation '" + std::string(text) +
                    "' (expected coverage_mean or client_mean)");
}

std::string_view to_string(ServerOptimizer kind) {
  return kind == ServerOptimizer::kSgd ? "sgd" : "adam";
}

ServerOptimizer parse_server_optimizer(std::string_view text) {
  if (text == "sgd") return ServerOptimizer::kSgd;
  if (text == "adam") return ServerOptimizer::kAdam;
  throw ConfigError("unknown server optimizer '" + std::string(text) +
                    "' (expected sgd or adam)");
}

void FederatedConfig::validate(std::size_t num_blocks) const {
  if (clients_per_round == 0) throw ConfigError("clients_per_round must be >= 1");
  if (local_steps == 0) throw ConfigError("local_steps must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (examples_per_round == 0) throw ConfigError("examples_per_round must be >= 1");
  if (!(client_lr > 0.0)) throw ConfigError("client_lr must be > 0");
  if (!(server.hyper.lr > 0.0)) throw ConfigError("server lr must be > 0");
  if (server.kind == ServerOptimizer::kAdam) {
    const auto& h = server.hyper;
    if (!(h.beta1 >= 0.0 && h.beta1 < 1.0 && h.beta2 >= 0.0 && h.beta2 < 1.0))
      throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(h.epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  }
  dropout.validate(num_blocks);
}

ServerState ServerState::start(ParamTree params, const ServerOptimizerConfig& optimizer) {
  ServerState state;
  state.optimizer = optimizer;
  if (optimizer.kind == ServerOptimizer::kAdam) {
    state.adam = AdamState::fresh(params, optimizer.hyper);
  }
  state.params = std::move(params);
  return state;
}

std::size_t RoundRecord::client_params() const {
  if (client_param_counts.empty()) return 0;
  const std::size_t total =
      std::accumulate(client_param_counts.begin(), client_param_counts.end(), std::size_t{0});
  return total / client_param_counts.size();
}

std::optional<ClientUpdateResult> client_update(std::size_t slot, std::size_t client_id,
                                                const ParamTree& sub_params,
                                                std::span<const Example> data,
                                                double client_lr, std::size_t local_steps,
                                                std::size_t batch_size, Rng& stream) {
  if (data.empty()) return std::nullopt;
  ParamTree params = sub_params;
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool full_batch = batch_size >= n;
  const Batch whole = full_batch ? to_batch(data) : Batch{};
  std::size_t cursor = n;  // forces a shuffle before the first minibatch

  double loss_total = 0.0;
  for (std::size_t step = 0; step < local_steps; ++step) {
    LossAndGrads lg;
    if (full_batch) {
      lg = loss_and_grads(params, whole);
    } else {
      if (cursor + batch_size > n) {
        shuffle(stream, order);
        cursor = 0;
      }
      const Batch batch =
          gather(data, std::span<const std::size_t>(order).subspan(cursor, batch_size));
      cursor += batch_size;
      lg = loss_and_grads(params, batch);
    }
    loss_total += lg.loss;
    params = sgd_step(std::move(params), lg.grads, client_lr);
  }

  ClientUpdateResult result;
  result.slot = slot;
  result.client_id = client_id;
  result.train_loss = loss_total / static_cast<double>(local_steps);
  // delta = initial - final
  result.delta = sub_params;
  auto out = arrays(result.delta);
  auto fin = arrays(params);
  for (std::size_t a = 0; a < out.size(); ++a)
    for (std::size_t i = 0; i < out[a].size(); ++i) out[a][i] -= fin[a][i];
  return result;
}

Gradients aggregate(std::span<const ClientUpdateResult> results, const MappingSet& mappings,
                    const Architecture& arch, Aggregation rule) {
  if (results.empty()) throw RoundError("no client updates to aggregate");
  ParamTree sums = zeros(arch);
  ParamTree counts = zeros(arch);
  auto sum_arrays = arrays(sums);
  auto count_arrays = arrays(counts);

  std::vector<const ClientUpdateResult*> ordered;
  ordered.reserve(results.size());
  for (const auto& r : results) ordered.push_back(&r);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto* a, const auto* b) { return a->slot < b->slot; });

  for (const auto* result : ordered) {
    if (result->slot >= mappings.mappings.size()) {
      throw RoundError("client slot " + std::to_string(result->slot) +
                       " has no mapping in this round");
    }
    const Expanded expanded = expand(result->delta, mappings.mappings[result->slot], arch);
    const auto values = arrays(expanded.values);
    const auto mask = arrays(expanded.mask);
    for (std::size_t a = 0; a < sum_arrays.size(); ++a) {
      for (std::size_t i = 0; i < sum_arrays[a].size(); ++i) {
        sum_arrays[a][i] += values[a][i];
        count_arrays[a][i] += mask[a][i];
      }
    }
  }

  const double clients = static_cast<double>(results.size());
  for (std::size_t a = 0; a < sum_arrays.size(); ++a) {
    for (std::size_t i = 0; i < sum_arrays[a].size(); ++i) {
      const double covered = count_arrays[a][i];
      if (covered == 0.0) {
        sum_arrays[a][i] = 0.0;
      } else {
        sum_arrays[a][i] /= rule == Aggregation::kCoverageMean ? covered : clients;
      }
    }
  }
  return sums;
}

ServerState server_update(ServerState state, const Gradients& pseudo_grad) {
  if (state.optimizer.kind == ServerOptimizer::kSgd) {
    state.params = sgd_step(std::move(state.params), pseudo_grad, state.optimizer.hyper.lr);
    return state;
  }
  if (!state.adam) state.adam = AdamState::fresh(state.params, state.optimizer.hyper);
  auto [params, adam] = adam_step(std::move(*state.adam), std::move(state.params), pseudo_grad);
  state.params = std::move(params);
  state.adam = std::move(adam);
  return state;
}

Rng client_stream(std::uint64_t seed, std::size_t round, std::size_t slot) {
  return make_stream(seed, StreamTag::kClientTraining, {round, slot});
}

std::vector<Example> round_subsample(const ClientData& client, std::size_t examples_per_round,
                                     Rng& stream) {
  const std::size_t n = client.examples.size();
  const std::size_t take = std::min(n, examples_per_round);
  std::vector<Example> out;
  out.reserve(take);
  for (auto i : sample_without_replacement(stream, n, take)) out.push_back(client.examples[i]);
  return out;
}

std::vector<std::size_t> sample_clients(std::uint64_t seed, std::size_t round,
                                        std::size_t population, std::size_t k) {
  Rng rng = make_stream(seed, StreamTag::kClientSampling, {round});
  return sample_without_replacement(rng, population, k);
}

RoundOutput run_round(ServerState& state, const FederatedConfig& config,
                      std::span<const ClientData> clients, const Batch& eval, std::size_t round,
                      const ExecutionOptions& exec) {
  const Architecture arch = architecture_of(state.params);
  config.validate(arch.num_blocks);
  const std::size_t k = config.clients_per_round;
  if (clients.size() < k) {
    throw ConfigError("round needs " + std::to_string(k) + " clients but only " +
                      std::to_string(clients.size()) + " are available");
  }

  RoundOutput out;
  out.mappings = generate_mappings(config.dropout, k, round, arch);
  const auto chosen = sample_clients(config.seed, round, clients.size(), k);

  std::vector<std::optional<ClientUpdateResult>> slots(k);
  std::vector<std::size_t> sub_counts(k, 0);
  parallel_for(k, exec.threads, [&](std::size_t slot) {
    const ClientData& client = clients[chosen[slot]];
    const ParamTree sub = shrink(state.params, out.mappings.mappings[slot]);
    sub_counts[slot] = param_count(sub);
    Rng stream = client_stream(config.seed, round, slot);
    const auto data = round_subsample(client, config.examples_per_round, stream);
    slots[slot] = client_update(slot, client.id, sub, data, config.client_lr,
                                config.local_steps, config.batch_size, stream);
  });

  std::vector<ClientUpdateResult> results;
  results.reserve(k);
  auto& rec = out.record;
  rec.round = round;
  double loss_total = 0.0;
  for (std::size_t slot = 0; slot < k; ++slot) {
    if (!slots[slot]) continue;
    loss_total += slots[slot]->train_loss;
    rec.client_param_counts.push_back(sub_counts[slot]);
    rec.bytes_down += kBytesPerParam * sub_counts[slot];
    results.push_back(std::move(*slots[slot]));
  }
  if (results.empty()) throw RoundError("every sampled client was skipped");
  rec.bytes_up = rec.bytes_down;
  rec.train_loss = loss_total / static_cast<double>(results.size());

  const Gradients pseudo = aggregate(results, out.mappings, arch, config.aggregation);
  state = server_update(std::move(state), pseudo);

  const EvalResult ev = evaluate(state.params, eval);
  rec.eval_error = ev.error;
  rec.eval_loss = ev.loss;
  return out;
}

TrainResult train(const FederatedConfig& config, std::span<const ClientData> clients,
                  std::span<const Example> eval, const ParamTree& initial,
                  const ExecutionOptions& exec, const RoundSink& sink) {
  const Architecture arch = architecture_of(initial);
  config.validate(arch.num_blocks);
  if (eval.empty()) throw DataError("evaluation set is empty");
  const Batch eval_batch = to_batch(eval);

  TrainResult result;
  result.init_params = initial;
  ServerState state = ServerState::start(initial, config.server);
  result.history.reserve(config.rounds);
  for (std::size_t round = 1; round <= config.rounds; ++round) {
    RoundOutput out = run_round(state, config, clients, eval_batch, round, exec);
    if (sink) sink(out.record);
    result.history.push_back(std::move(out.record));
    result.last_mappings = std::move(out.mappings);
  }
  result.final_params = std::move(state.params);
  return result;
}

void CentralConfig::validate() const {
  if (batch_size == 0) throw ConfigError("central batch_size must be >= 1");
  if (!(optimizer.lr > 0.0)) throw ConfigError("central lr must be > 0");
}

ParamTree central_train(ParamTree params, std::span<const ClientData> clients,
                        const CentralConfig& config) {
  config.validate();
  std::vector<Example> pool;
  for (const auto& client : clients)
    pool.insert(pool.end(), client.examples.begin(), client.examples.end());
  if (pool.empty()) throw DataError("no examples for centralized training");

  Rng rng = make_stream(config.seed, StreamTag::kCentral);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch_size = std::min(config.batch_size, pool.size());
  std::size_t cursor = pool.size();
  AdamState adam = AdamState::fresh(params, config.optimizer);
  for (std::size_t step = 0; step < config.steps; ++step) {
    if (cursor + batch_size > pool.size()) {
      shuffle(rng, order);
      cursor = 0;
    }
    const Batch batch =
        gather(pool, std::span<const std::size_t>(order).subspan(cursor, batch_size));
    cursor += batch_size;
    auto lg = loss_and_grads(params, batch);
    auto stepped = adam_step(std::move(adam), std::move(params), lg.grads);
    params = std::move(stepped.params);
    adam = std::move(stepped.state);
  }
  return params;
}

AdaptationResult domain_adapt(const CentralConfig& pretrain, const FederatedConfig& adapt,
                              const FederatedDataset& dataset, std::size_t holdout_domain,
                              const ParamTree& initial, const ExecutionOptions& exec,
                              const RoundSink& sink) {
  if (dataset.num_domains() < 2) {
    throw ConfigError("domain adaptation needs at least two domains");
  }
  const HoldoutSplit split = split_holdout(dataset, holdout_domain);
  if (split.adapt_clients.empty()) throw ConfigError("holdout domain has no clients");
  if (split.holdout_eval.empty()) throw ConfigError("holdout domain has no eval set");

  AdaptationResult result;
  result.baseline = central_train(initial, split.pretrain_clients, pretrain);
  const Batch holdout = to_batch(split.holdout_eval);
  const Batch seen = to_batch(split.seen_eval);
  result.baseline_holdout = evaluate(result.baseline, holdout);
  result.baseline_seen = evaluate(result.baseline, seen);

  TrainResult tuned = train(adapt, split.adapt_clients, split.holdout_eval, result.baseline,
                            exec, sink);
  result.adapted = std::move(tuned.final_params);
  result.history = std::move(tuned.history);
  result.adapted_holdout = evaluate(result.adapted, holdout);
  result.adapted_seen = evaluate(result.adapted, seen);
  return result;
}

}  // namespace feddrop
