#include "run_config.hpp"

#include <fstream>
#include <set>
#include <string>

#include "feddrop/errors.hpp"

namespace feddrop::cli {
namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
}

void reject_unknown(const json& j, const std::string& where, const std::set<std::string>& known) {
  require_object(j, where);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const std::string name = where + "." + key;
  if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) throw ConfigError(name + " must be a number");
    out = v.get<double>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw ConfigError(name + " must be a non-negative integer");
    }
    out = v.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(name + " must be a string");
    out = v.get<std::string>();
  } else {
    static_assert(std::is_same_v<T, std::vector<double>>);
    if (!v.is_array()) throw ConfigError(name + " must be an array of numbers");
    out.clear();
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError(name + " must be an array of numbers");
      out.push_back(x.get<double>());
    }
  }
}

void parse_generator(const json& j, GeneratorConfig& g) {
  const std::string w = "generator";
  reject_unknown(j, w,
                 {"num_domains", "num_clients", "examples_per_client", "eval_examples_per_domain",
                  "input_dim", "num_classes", "modes_per_class", "class_skew", "domain_shift",
                  "noise_std", "seed"});
  read(j, "num_domains", g.num_domains, w);
  read(j, "num_clients", g.num_clients, w);
  read(j, "examples_per_client", g.examples_per_client, w);
  read(j, "eval_examples_per_domain", g.eval_examples_per_domain, w);
  read(j, "input_dim", g.input_dim, w);
  read(j, "num_classes", g.num_classes, w);
  read(j, "modes_per_class", g.modes_per_class, w);
  read(j, "class_skew", g.class_skew, w);
  read(j, "domain_shift", g.domain_shift, w);
  read(j, "noise_std", g.noise_std, w);
  read(j, "seed", g.seed, w);
}

void parse_architecture(const json& j, ArchitectureSpec& a) {
  const std::string w = "architecture";
  reject_unknown(j, w, {"model_dim", "hidden_dim", "num_blocks", "ff_fraction", "total_params"});
  read(j, "model_dim", a.model_dim, w);
  read(j, "hidden_dim", a.hidden_dim, w);
  read(j, "num_blocks", a.num_blocks, w);
  read(j, "total_params", a.total_params, w);
  if (j.contains("ff_fraction")) {
    double f = 0.0;
    read(j, "ff_fraction", f, w);
    a.ff_fraction = f;
    if (j.contains("model_dim") || j.contains("hidden_dim") || j.contains("num_blocks")) {
      throw ConfigError("architecture: give either ff_fraction or explicit dimensions, not both");
    }
  }
}

void parse_server(const json& j, ServerOptimizerConfig& s) {
  const std::string w = "federated.server";
  reject_unknown(j, w, {"kind", "lr", "beta1", "beta2", "epsilon"});
  if (j.contains("kind")) {
    std::string kind;
    read(j, "kind", kind, w);
    s.kind = parse_server_optimizer(kind);
  }
  read(j, "lr", s.hyper.lr, w);
  read(j, "beta1", s.hyper.beta1, w);
  read(j, "beta2", s.hyper.beta2, w);
  read(j, "epsilon", s.hyper.epsilon, w);
}

void parse_dropout(const json& j, RunConfig& config) {
  const std::string w = "federated.dropout";
  reject_unknown(j, w, {"rates", "scheme"});
  auto& d = config.federated.dropout;
  if (j.contains("rates")) {
    if (j.at("rates").is_number()) {
      d.rates = {j.at("rates").get<double>()};
      config.rates_explicit = false;
    } else {
      read(j, "rates", d.rates, w);
      config.rates_explicit = true;
    }
  }
  if (j.contains("scheme")) {
    std::string scheme;
    read(j, "scheme", scheme, w);
    d.scheme = parse_scheme(scheme);
  }
}

void parse_federated(const json& j, RunConfig& config) {
  const std::string w = "federated";
  reject_unknown(j, w,
                 {"rounds", "clients_per_round", "client_lr", "local_steps", "batch_size",
                  "examples_per_round", "server", "dropout", "aggregation"});
  auto& f = config.federated;
  read(j, "rounds", f.rounds, w);
  read(j, "clients_per_round", f.clients_per_round, w);
  read(j, "client_lr", f.client_lr, w);
  read(j, "local_steps", f.local_steps, w);
  read(j, "batch_size", f.batch_size, w);
  read(j, "examples_per_round", f.examples_per_round, w);
  if (j.contains("server")) parse_server(j.at("server"), f.server);
  if (j.contains("dropout")) parse_dropout(j.at("dropout"), config);
  if (j.contains("aggregation")) {
    std::string rule;
    read(j, "aggregation", rule, w);
    f.aggregation = parse_aggregation(rule);
  }
}

void parse_central(const json& j, CentralConfig& c) {
  const std::string w = "central";
  reject_unknown(j, w, {"steps", "batch_size", "lr", "beta1", "beta2", "epsilon"});
  read(j, "steps", c.steps, w);
  read(j, "batch_size", c.batch_size, w);
  read(j, "lr", c.optimizer.lr, w);
  read(j, "beta1", c.optimizer.beta1, w);
  read(j, "beta2", c.optimizer.beta2, w);
  read(j, "epsilon", c.optimizer.epsilon, w);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig config;
  config.generator = standard::generator();
  const Architecture arch = standard::architecture();
  config.architecture.model_dim = arch.model_dim;
  config.architecture.hidden_dim = arch.hidden_dim;
  config.architecture.num_blocks = arch.num_blocks;
  config.federated = standard::federated();
  config.federated.dropout.rates = {0.0};
  config.central = standard::central();
  apply_seed(config, config.seed);
  return config;
}

RunConfig parse_run_config(const json& doc) {
  reject_unknown(doc, "config",
                 {"seed", "generator", "dataset_path", "architecture", "federated", "central",
                  "holdout_domain", "target_error", "checkpoint", "ablate", "submodels",
                  "size_report"});
  RunConfig config = RunConfig::defaults();
  read(doc, "seed", config.seed, "config");
  if (doc.contains("generator")) parse_generator(doc.at("generator"), config.generator);
  if (doc.contains("dataset_path")) {
    std::string path;
    read(doc, "dataset_path", path, "config");
    config.dataset_path = path;
  }
  if (doc.contains("architecture")) parse_architecture(doc.at("architecture"), config.architecture);
  if (doc.contains("federated")) parse_federated(doc.at("federated"), config);
  if (doc.contains("central")) parse_central(doc.at("central"), config.central);
  read(doc, "holdout_domain", config.holdout_domain, "config");
  read(doc, "target_error", config.target_error, "config");
  if (doc.contains("checkpoint")) {
    std::string path;
    read(doc, "checkpoint", path, "config");
    config.checkpoint = path;
  }
  if (doc.contains("ablate")) {
    const json& a = doc.at("ablate");
    reject_unknown(a, "ablate", {"base_rate", "extra"});
    read(a, "base_rate", config.ablate.base_rate, "ablate");
    read(a, "extra", config.ablate.extra, "ablate");
  }
  if (doc.contains("submodels")) {
    const json& s = doc.at("submodels");
    reject_unknown(s, "submodels", {"samples", "rate"});
    read(s, "samples", config.submodels.samples, "submodels");
    read(s, "rate", config.submodels.rate, "submodels");
  }
  if (doc.contains("size_report")) {
    const json& s = doc.at("size_report");
    reject_unknown(s, "size_report", {"rates"});
    read(s, "rates", config.size_report_rates, "size_report");
  }
  apply_seed(config, config.seed);
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

void apply_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.federated.seed = seed;
  config.federated.dropout.seed = seed;
  config.central.seed = seed;
}

Architecture resolve_architecture(const RunConfig& config, std::size_t input_dim,
                                  std::size_t num_classes) {
  const auto& spec = config.architecture;
  Architecture arch;
  if (spec.ff_fraction) {
    arch = make_table3_arch(*spec.ff_fraction, spec.total_params);
    if (arch.input_dim != input_dim || arch.num_classes != num_classes) {
      throw ConfigError("data dimensions do not match the ff_fraction architecture");
    }
  } else {
    arch = {input_dim, spec.model_dim, spec.hidden_dim, spec.num_blocks, num_classes};
  }
  arch.validate();
  return arch;
}

DropoutConfig resolve_dropout(const RunConfig& config, std::size_t num_blocks) {
  DropoutConfig d = config.federated.dropout;
  if (!config.rates_explicit) {
    const double rate = d.rates.empty() ? 0.0 : d.rates.front();
    d.rates.assign(num_blocks, rate);
  }
  d.validate(num_blocks);
  return d;
}

}  // namespace feddrop::cli
