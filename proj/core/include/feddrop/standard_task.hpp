#pragma once

// The frozen desk-scale task every calibrated threshold in the test suite
// refers to. Changing any value here invalidates those thresholds.

#include "feddrop/data.hpp"
#include "feddrop/fedsim.hpp"
#include "feddrop/nn.hpp"

namespace feddrop::standard {

// 3 domains x 80 clients x 40 examples, 12 features, 6 classes with 4
// Gaussian modes each, Dirichlet(0.5) client skew, seed 20221.
inline GeneratorConfig generator() {
  GeneratorConfig cfg;
  cfg.num_domains = 3;
  cfg.num_clients = 240;
  cfg.examples_per_client = 40;
  cfg.eval_examples_per_domain = 1200;
  cfg.input_dim = 12;
  cfg.num_classes = 6;
  cfg.modes_per_class = 4;
  cfg.class_skew = 0.5;
  cfg.domain_shift = 1.5;
  cfg.noise_std = 0.8;
  cfg.seed = 20221;
  return cfg;
}

inline Architecture architecture() { return {12, 24, 32, 3, 6}; }

inline FederatedConfig federated(double rate = 0.0, std::uint64_t seed = 1,
                                 Scheme scheme = Scheme::kPerClientPerRound) {
  FederatedConfig cfg;
  cfg.rounds = 100;
  cfg.clients_per_round = 32;
  cfg.client_lr = 0.1;
  cfg.local_steps = 4;
  cfg.batch_size = 10;
  cfg.examples_per_round = 20;
  cfg.server = ServerOptimizerConfig::adam();
  cfg.dropout = DropoutConfig::uniform(rate, architecture().num_blocks, scheme, seed);
  cfg.seed = seed;
  return cfg;
}

inline CentralConfig central(std::uint64_t seed = 1) {
  CentralConfig cfg;
  cfg.steps = 1500;
  cfg.batch_size = 32;
  cfg.optimizer = AdamHyper{.lr = 3e-3};
  cfg.seed = seed;
  return cfg;
}

// Domain held out for adaptation experiments.
inline constexpr std::size_t kHoldoutDomain = 2;

}  // namespace feddrop::standard
