#include "commands.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>

#include "feddrop/errors.hpp"
#include "json.hpp"

namespace feddrop::cli {
namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string());
  }
}

void write_json(const fs::path& path, const Json& doc) {
  std::ofstream out(path, std::ios::binary);
  out << doc.dump(2) << '\n';
  out.close();
  if (!out) throw IoError("cannot write " + path.string());
}

Json architecture_json(const Architecture& arch) {
  return Json{{"input_dim", arch.input_dim},
              {"model_dim", arch.model_dim},
              {"hidden_dim", arch.hidden_dim},
              {"num_blocks", arch.num_blocks},
              {"num_classes", arch.num_classes}};
}

Json dropout_json(const DropoutConfig& d) {
  return Json{{"rates", d.rates}, {"scheme", std::string(to_string(d.scheme))}, {"seed", d.seed}};
}

Json server_json(const ServerOptimizerConfig& s) {
  Json j{{"kind", std::string(to_string(s.kind))}, {"lr", s.hyper.lr}};
  if (s.kind == ServerOptimizer::kAdam) {
    j["beta1"] = s.hyper.beta1;
    j["beta2"] = s.hyper.beta2;
    j["epsilon"] = s.hyper.epsilon;
  }
  return j;
}

Json mappings_json(const MappingSet& set) {
  Json slots = Json::array();
  for (const auto& m : set.mappings) slots.push_back(m.kept);
  return slots;
}

// Resolved model and federated settings for a run on `dataset`.
struct Setup {
  Architecture arch;
  FederatedConfig federated;
};

Setup resolve(const RunConfig& config, const FederatedDataset& dataset) {
  Setup s;
  s.arch = resolve_architecture(config, dataset.input_dim, dataset.num_classes);
  s.federated = config.federated;
  s.federated.dropout = resolve_dropout(config, s.arch.num_blocks);
  s.federated.validate(s.arch.num_blocks);
  return s;
}

Json history_summary(const std::vector<RoundRecord>& history, double target) {
  Json j;
  if (history.empty()) {
    j["final_error"] = nullptr;
    j["best_error"] = nullptr;
    j["best_round"] = nullptr;
  } else {
    const RoundRecord* best = &history.front();
    for (const auto& r : history)
      if (r.eval_error < best->eval_error) best = &r;
    j["final_error"] = history.back().eval_error;
    j["final_loss"] = history.back().eval_loss;
    j["best_error"] = best->eval_error;
    j["best_round"] = best->round;
  }
  j["target_error"] = target;
  std::optional<std::size_t> hit;
  for (const auto& r : history) {
    if (r.eval_error <= target) {
      hit = r.round;
      break;
    }
  }
  j["rounds_to_target"] = hit ? Json(*hit) : Json(nullptr);
  std::uint64_t up = 0;
  std::uint64_t down = 0;
  for (const auto& r : history) {
    up += r.bytes_up;
    down += r.bytes_down;
  }
  j["total_bytes_up"] = up;
  j["total_bytes_down"] = down;
  return j;
}

Json run_header(const char* experiment, const RunConfig& config, const Setup& s) {
  const std::size_t full = param_count(s.arch);
  Json j;
  j["experiment"] = experiment;
  j["seed"] = config.seed;
  j["architecture"] = architecture_json(s.arch);
  j["full_params"] = full;
  j["client_params"] = shrunk_param_count(s.arch, s.federated.dropout.rates);
  j["size_reduction"] = size_reduction(s.arch, s.federated.dropout.rates);
  j["dropout"] = dropout_json(s.federated.dropout);
  j["aggregation"] = std::string(to_string(s.federated.aggregation));
  j["server"] = server_json(s.federated.server);
  j["rounds"] = s.federated.rounds;
  j["clients_per_round"] = s.federated.clients_per_round;
  return j;
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const fs::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write " + path.string());
    write_metrics_header(out_);
  }
  void operator()(const RoundRecord& record) {
    write_metrics_row(out_, record);
    out_.flush();
  }
  void finish() {
    out_.close();
    if (!out_) throw IoError("cannot write " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

Checkpoint load_checkpoint(const RunConfig& config) {
  if (!config.checkpoint) throw ConfigError("this command needs \"checkpoint\" in the config");
  return read_checkpoint(*config.checkpoint);
}

void require_matching(const ParamTree& params, const FederatedDataset& dataset) {
  if (params.input_dim() != dataset.input_dim || params.num_classes() != dataset.num_classes) {
    throw ConfigError("checkpoint dimensions do not match the dataset");
  }
}

}  // namespace

FederatedDataset load_dataset(const RunConfig& config) {
  if (config.dataset_path) return read_dataset(*config.dataset_path);
  GeneratorConfig gen = config.generator;
  if (config.architecture.ff_fraction) {
    const Architecture arch =
        make_table3_arch(*config.architecture.ff_fraction, config.architecture.total_params);
    gen.input_dim = arch.input_dim;
    gen.num_classes = arch.num_classes;
  }
  return generate(gen);
}

void write_metrics_header(std::ostream& out) {
  out << "round,eval_error,eval_loss,train_loss,client_params,bytes_up,bytes_down\n";
}

void write_metrics_row(std::ostream& out, const RoundRecord& r) {
  out << r.round << ',' << format_double(r.eval_error) << ',' << format_double(r.eval_loss) << ','
      << format_double(r.train_loss) << ',' << r.client_params() << ',' << r.bytes_up << ','
      << r.bytes_down << '\n';
}

void cmd_generate_data(const Invocation& run, std::ostream& log) {
  prepare_out_dir(run.out_dir);
  const FederatedDataset dataset = load_dataset(run.config);
  const fs::path path = run.out_dir / kDatasetFile;
  write_dataset(path, dataset);
  std::size_t records = 0;
  for (const auto& c : dataset.clients) records += c.examples.size();
  std::size_t eval = 0;
  for (const auto& e : dataset.eval_sets) eval += e.size();
  log << "wrote " << path.string() << ": " << dataset.clients.size() << " clients, " << records
      << " client records, " << dataset.num_domains() << " domains, " << eval
      << " eval records\n";
}

void cmd_train(const Invocation& run, std::ostream& log) {
  prepare_out_dir(run.out_dir);
  const RunConfig& config = run.config;
  const FederatedDataset dataset = load_dataset(config);
  const Setup s = resolve(config, dataset);
  const ParamTree initial = init_params(s.arch, config.seed);

  MetricsWriter metrics(run.out_dir / kMetricsFile);
  const TrainResult result = train(s.federated, dataset.clients, all_eval(dataset), initial,
                                   {.threads = run.threads},
                                   [&](const RoundRecord& r) { metrics(r); });
  metrics.finish();

  Json summary = run_header("train", config, s);
  summary.update(history_summary(result.history, config.target_error));
  summary["final_mappings"] = mappings_json(result.last_mappings);
  write_json(run.out_dir / kSummaryFile, summary);
  write_checkpoint(run.out_dir / kCheckpointFile, {result.final_params, result.init_params});

  log << "trained " << result.history.size() << " rounds";
  if (!result.history.empty()) log << ", final error " << result.history.back().eval_error;
  log << ", size reduction " << summary["size_reduction"].get<double>() << '\n';
}

void cmd_adapt(const Invocation& run, std::ostream& log) {
  prepare_out_dir(run.out_dir);
  const RunConfig& config = run.config;
  const FederatedDataset dataset = load_dataset(config);
  const Setup s = resolve(config, dataset);
  const ParamTree initial = init_params(s.arch, config.seed);

  MetricsWriter metrics(run.out_dir / kMetricsFile);
  const AdaptationResult result =
      domain_adapt(config.central, s.federated, dataset, config.holdout_domain, initial,
                   {.threads = run.threads}, [&](const RoundRecord& r) { metrics(r); });
  metrics.finish();

  Json summary = run_header("adapt", config, s);
  summary["holdout_domain"] = config.holdout_domain;
  summary["central"] = Json{{"steps", config.central.steps},
                            {"batch_size", config.central.batch_size},
                            {"lr", config.central.optimizer.lr}};
  summary.update(history_summary(result.history, config.target_error));
  summary["final_error"] = result.adapted_holdout.error;
  summary["baseline_holdout_error"] = result.baseline_holdout.error;
  summary["baseline_seen_error"] = result.baseline_seen.error;
  summary["adapted_holdout_error"] = result.adapted_holdout.error;
  summary["adapted_seen_error"] = result.adapted_seen.error;
  write_json(run.out_dir / kSummaryFile, summary);
  write_checkpoint(run.out_dir / kCheckpointFile, {result.adapted, initial});

  log << "held-out domain " << config.holdout_domain << ": baseline error "
      << result.baseline_holdout.error << ", adapted error " << result.adapted_holdout.error
      << '\n';
}

void cmd_ablate(const Invocation& run, std::ostream& log) {
  prepare_out_dir(run.out_dir);
  const RunConfig& config = run.config;
  const Checkpoint ckpt = load_checkpoint(config);
  if (!ckpt.init) throw ConfigError("checkpoint has no init snapshot to reset blocks to");
  const FederatedDataset dataset = load_dataset(config);
  require_matching(ckpt.params, dataset);
  const Architecture arch = architecture_of(ckpt.params);

  const AmbientRanking ranking =
      ambient_rank(ckpt.params, *ckpt.init, to_batch(all_eval(dataset)), run.threads);
  const std::vector<double> rates =
      assign_rates(config.ablate.base_rate, config.ablate.extra, ranking);
  const std::vector<double> flat(arch.num_blocks, config.ablate.base_rate);

  Json blocks = Json::array();
  for (std::size_t b = 0; b < arch.num_blocks; ++b)
    blocks.push_back(Json{{"block", b}, {"degradation", ranking.degradation[b]}});
  Json report;
  report["experiment"] = "ablate";
  report["architecture"] = architecture_json(arch);
  report["trained_error"] = ranking.trained_error;
  report["blocks"] = blocks;
  report["order"] = ranking.order;
  report["base_rate"] = config.ablate.base_rate;
  report["extra"] = config.ablate.extra;
  report["rates"] = rates;
  report["size_reduction"] = size_reduction(arch, rates);
  report["flat_size_reduction"] = size_reduction(arch, flat);
  write_json(run.out_dir / kAblateFile, report);

  log << "most ambient block " << ranking.order.front() << "; rates";
  for (double r : rates) log << ' ' << r;
  log << '\n';
}

void cmd_submodels(const Invocation& run, std::ostream& log) {
  prepare_out_dir(run.out_dir);
  const RunConfig& config = run.config;
  const Checkpoint ckpt = load_checkpoint(config);
  const FederatedDataset dataset = load_dataset(config);
  require_matching(ckpt.params, dataset);
  const Batch eval = to_batch(all_eval(dataset));

  const SubModelReport r = sample_submodels(ckpt.params, config.submodels.rate,
                                            config.submodels.samples, config.seed, eval,
                                            run.threads);
  Json report;
  report["experiment"] = "submodels";
  report["architecture"] = architecture_json(architecture_of(ckpt.params));
  report["full_error"] = evaluate(ckpt.params, eval).error;
  report["samples"] = r.samples;
  report["rate"] = r.rate;
  report["seed"] = r.seed;
  report["mean"] = r.mean;
  report["std"] = r.stddev;
  report["errors"] = r.errors;
  write_json(run.out_dir / kSubModelsFile, report);

  log << r.samples << " sub-models at rate " << r.rate << ": mean error " << r.mean << ", std "
      << r.stddev << '\n';
}

void cmd_size_report(const Invocation& run, std::ostream& log) {
  prepare_out_dir(run.out_dir);
  const RunConfig& config = run.config;
  Architecture arch;
  if (config.architecture.ff_fraction) {
    arch = make_table3_arch(*config.architecture.ff_fraction, config.architecture.total_params);
  } else {
    arch = resolve_architecture(config, config.generator.input_dim, config.generator.num_classes);
  }
  Json rows = Json::array();
  log << "rate  size_reduction  client_params\n";
  for (double rate : config.size_report_rates) {
    const std::vector<double> rates(arch.num_blocks, rate);
    const double reduction = size_reduction(arch, rates);
    const std::size_t client = shrunk_param_count(arch, rates);
    rows.push_back(Json{{"rate", rate}, {"size_reduction", reduction}, {"client_params", client}});
    log << rate << "  " << reduction << "  " << client << '\n';
  }
  Json report;
  report["experiment"] = "size-report";
  report["architecture"] = architecture_json(arch);
  report["full_params"] = param_count(arch);
  report["ff_share"] = ff_share(arch);
  report["rows"] = rows;
  write_json(run.out_dir / kSizeReportFile, report);
}

}  // namespace feddrop::cli
