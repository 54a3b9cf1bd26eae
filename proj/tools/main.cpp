#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "gaitstage/errors.hpp"
#include "log.hpp"
#include "run_config.hpp"

using namespace gaitstage;
using namespace gaitstage::cli;

int main(int argc, char** argv) {
  CLI::App app{"Hybrid ConvNet-Transformer staging of Parkinson's disease from VGRF gait"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "JSON run configuration")->required(false);
  app.add_option("--set", overrides, "override a config field by dotted key (key.path=value)");

  auto* ingest = app.add_subcommand("ingest", "parse, label, normalize and segment all walks");
  auto* crossval = app.add_subcommand("crossval", "subject-level k-fold cross-validation");
  auto* ablate = app.add_subcommand("ablate", "cross-validate variants A, B, C, D and full");
  auto* predict = app.add_subcommand("predict", "stage a single walk with a trained model");
  for (auto* sub : {ingest, crossval, ablate, predict}) sub->fallthrough();

  std::string checkpoint_path, walk_path;
  predict->add_option("--checkpoint", checkpoint_path, "model checkpoint file")->required();
  predict->add_option("--walk", walk_path, "walk file to classify")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig config = load_run_config(config_path, overrides);
    const Logger log(config.verbosity);
    if (ingest->parsed()) return cmd_ingest(config, log);
    if (crossval->parsed()) return cmd_crossval(config, log);
    if (ablate->parsed()) return cmd_ablate(config, log);
    if (predict->parsed()) return cmd_predict(config, log, checkpoint_path, walk_path);
    std::fprintf(stderr, "no command given\n");
    return 1;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 4;
  } catch (const PreconditionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
}
