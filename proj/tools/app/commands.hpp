#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "app/run_config.hpp"
#include "propfault/classifier.hpp"
#include "propfault/propeller.hpp"

namespace propfault::app {

namespace fs = std::filesystem;

// Stage outputs live under one output directory, laid out by RunConfig paths.
struct Layout {
  fs::path root;
  const RunConfig* config;

  fs::path loadcell(prop::PropellerCondition c) const;
  fs::path regressor(prop::PropellerCondition c) const;
  fs::path regressor_report() const;
  fs::path dataset_manifest() const;
  fs::path dataset_logs() const;
  fs::path model() const;           // best classifier weights
  fs::path training_state() const;  // resumable state
  fs::path training_curve() const;
  fs::path reports() const;
};

struct RegressorSummary {
  prop::PropellerCondition condition;
  prop::ErrorPct error;
  prop::RegressorTrainingReport training;
};

void cmd_gen_loadcell(const RunConfig& config, const fs::path& out);
std::vector<RegressorSummary> cmd_train_prop(const RunConfig& config, const fs::path& out);
data::DatasetManifest cmd_gen_flights(const RunConfig& config, const fs::path& out);
// With resume set, continues from the saved training state.
clf::TrainingState cmd_train_clf(const RunConfig& config, const fs::path& out, bool resume = false);
// model defaults to the trained classifier under out.
clf::EvalReport cmd_eval(const RunConfig& config, const fs::path& out, const std::optional<fs::path>& model = {});
// Estimates the unbalance profile from a hover log and writes the updated
// configuration to write_to.
calib::UnbalanceProfile cmd_calibrate(const RunConfig& config, const fs::path& hover_log, const fs::path& write_to);
// gen-loadcell, train-prop, gen-flights, train-clf, eval.
clf::EvalReport cmd_pipeline(const RunConfig& config, const fs::path& out);

// Propeller models for the flights: loaded regressors or the closed form.
data::ModelBank load_models(const RunConfig& config, const fs::path& out);

}  // namespace propfault::app
