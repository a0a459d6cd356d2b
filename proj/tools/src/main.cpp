#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "app/commands.hpp"
#include "app/run_config.hpp"
#include "propfault/error.hpp"

namespace {

namespace fs = std::filesystem;
using namespace propfault;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  bool quiet = false;
};

app::RunConfig resolve_config(const Globals& g) {
  app::RunConfig config = g.config_path.empty() ? app::RunConfig{} : app::load_run_config(g.config_path);
  if (g.seed) config.seed = *g.seed;
  return config;
}

// One line on stderr, "error[<class>]: <message>", for scripts to match on.
int fail(const char* error_class, const std::string& message) {
  std::fprintf(stderr, "error[%s]: %s\n", error_class, message.c_str());
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Propeller fault diagnosis: bench traces, rotor models, simulated flights and a fault classifier."};
  cli.require_subcommand(1);
  cli.fallthrough();

  Globals g;
  // Accepted before or after the subcommand, and listed in every --help.
  auto add_globals = [&g](CLI::App* app) {
    app->add_option("--config", g.config_path, "INI run configuration; keys left out keep their defaults")
        ->check(CLI::ExistingFile);
    app->add_option("--seed", g.seed, "Override [run] seed");
    app->add_option("--out", g.out, "Output directory for every stage")->capture_default_str();
    app->add_flag("-q,--quiet", g.quiet, "Only log warnings and errors");
  };
  add_globals(&cli);

  auto* gen_loadcell = cli.add_subcommand("gen-loadcell", "Write synthetic bench traces for Normal, Bent and Cracked");
  auto* train_prop = cli.add_subcommand("train-prop", "Train the three rotor regressors and report held-out error");
  auto* gen_flights = cli.add_subcommand("gen-flights", "Fly one mission per fault label and write the dataset");
  auto* train_clf = cli.add_subcommand("train-clf", "Train the fault classifier on the dataset's training split");
  bool resume = false;
  train_clf->add_flag("--resume", resume, "Continue from the saved training state");
  auto* eval = cli.add_subcommand("eval", "Score a classifier on a dataset and write report, confusion and per-label CSVs");
  std::string model_path;
  eval->add_option("--model", model_path, "Classifier checkpoint (default: the one under --out)")
      ->check(CLI::ExistingFile);
  auto* calibrate = cli.add_subcommand("calibrate", "Estimate motor unbalance from a hover log");
  std::string hover_log;
  std::string write_config;
  calibrate->add_option("--log", hover_log, "Hover flight log (CSV with its .meta file)")->required();
  calibrate->add_option("--write-config", write_config, "Where to write the calibrated configuration (default: <out>/calibrated.ini)");
  auto* pipeline = cli.add_subcommand("pipeline", "gen-loadcell, train-prop, gen-flights, train-clf and eval in order");

  for (CLI::App* sub : {gen_loadcell, train_prop, gen_flights, train_clf, eval, calibrate, pipeline}) add_globals(sub);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  auto logger = spdlog::stderr_color_mt("propfault");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(g.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    const app::RunConfig config = resolve_config(g);
    const fs::path out = g.out;
    if (*gen_loadcell) {
      app::cmd_gen_loadcell(config, out);
    } else if (*train_prop) {
      app::cmd_train_prop(config, out);
    } else if (*gen_flights) {
      app::cmd_gen_flights(config, out);
    } else if (*train_clf) {
      app::cmd_train_clf(config, out, resume);
    } else if (*eval) {
      app::cmd_eval(config, out, model_path.empty() ? std::nullopt : std::optional<fs::path>(model_path));
    } else if (*calibrate) {
      app::cmd_calibrate(config, hover_log, write_config.empty() ? out / "calibrated.ini" : fs::path(write_config));
    } else if (*pipeline) {
      app::cmd_pipeline(config, out);
    }
  } catch (const Error& e) {
    return fail(e.error_class(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
