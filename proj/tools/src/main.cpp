#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"
#include "feddrop/errors.hpp"
#include "feddrop/parallel.hpp"

int main(int argc, char** argv) {
  using namespace feddrop::cli;

  CLI::App app{"Federated dropout experiments on synthetic federated data"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "feddrop-out";
  std::uint64_t seed = 0;
  auto* config_opt = app.add_option("--config", config_path, "JSON experiment config")
                         ->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", seed, "Overrides the config seed");
  config_opt->configurable(false);

  struct Command {
    const char* name;
    const char* help;
    void (*run)(const Invocation&, std::ostream&);
  };
  const Command commands[] = {
      {"generate-data", "Write the synthetic dataset record file", cmd_generate_data},
      {"train", "Federated training from scratch", cmd_train},
      {"adapt", "Centralized pretraining, then federated adaptation to a held-out domain", cmd_adapt},
      {"ablate", "Rank blocks by ambience and assign per-block dropout rates", cmd_ablate},
      {"submodels", "Evaluate random sub-models of a checkpoint", cmd_submodels},
      {"size-report", "Size reduction of uniform dropout rates", cmd_size_report},
  };
  for (const auto& c : commands) {
    app.add_subcommand(c.name, c.help)->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    Invocation run;
    run.config = config_opt->count() ? load_run_config(config_path) : RunConfig::defaults();
    run.out_dir = out_dir;
    run.threads = feddrop::default_threads();
    const std::string chosen = app.get_subcommands().front()->get_name();
    if (*seed_opt) {
      if (chosen == "generate-data") {
        run.config.generator.seed = seed;
      } else {
        apply_seed(run.config, seed);
      }
    }
    for (const auto& c : commands) {
      if (chosen == c.name) c.run(run, std::cout);
    }
  } catch (const feddrop::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
