#include "app/commands.hpp"

#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <spdlog/spdlog.h>

#include "propfault/calibration.hpp"
#include "propfault/datagen.hpp"
#include "propfault/error.hpp"
#include "propfault/nn/checkpoint.hpp"

namespace propfault::app {

namespace {

using prop::PropellerCondition;

constexpr PropellerCondition kConditions[] = {PropellerCondition::Normal, PropellerCondition::Bent,
                                              PropellerCondition::Cracked};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void require_file(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw IoError("missing '" + path.string() + "'; " + hint);
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string title_case(const std::string& s) {
  std::string out = s;
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace

fs::path Layout::loadcell(PropellerCondition c) const {
  return root / config->loadcell_dir / (prop::to_string(c) + ".csv");
}
fs::path Layout::regressor(PropellerCondition c) const {
  return root / config->models_dir / (prop::to_string(c) + ".ckpt");
}
fs::path Layout::regressor_report() const { return root / config->reports_dir / "regressors.txt"; }
fs::path Layout::dataset_manifest() const { return root / config->dataset_dir / "manifest.txt"; }
fs::path Layout::dataset_logs() const { return root / config->dataset_dir / "logs"; }
fs::path Layout::model() const { return root / config->classifier_dir / "model.ckpt"; }
fs::path Layout::training_state() const { return root / config->classifier_dir / "state.ckpt"; }
fs::path Layout::training_curve() const { return root / config->classifier_dir / "curve.csv"; }
fs::path Layout::reports() const { return root / config->reports_dir; }

void cmd_gen_loadcell(const RunConfig& config, const fs::path& out) {
  const Layout layout{out, &config};
  ensure_dir(out / config.loadcell_dir);
  std::ostringstream meta;
  meta << "seed=" << config.seed << '\n'
       << "period=" << nn::format_double(config.degradation.period) << '\n'
       << "duration=" << nn::format_double(config.degradation.duration) << '\n'
       << "ramp_period=" << nn::format_double(config.degradation.ramp_period) << '\n';
  for (PropellerCondition c : kConditions) {
    const auto trace = prop::synth_loadcell_trace(c, config.degradation, derive_seed(config.seed, "loadcell/" + prop::to_string(c)));
    prop::write_loadcell_csv(trace, layout.loadcell(c));
    meta << prop::to_string(c) << ".rows=" << trace.size() << '\n';
    spdlog::info("loadcell {}: {} rows -> {}", prop::to_string(c), trace.size(), layout.loadcell(c).string());
  }
  write_text(out / config.loadcell_dir / "metadata.txt", meta.str());
}

std::vector<RegressorSummary> cmd_train_prop(const RunConfig& config, const fs::path& out) {
  const Layout layout{out, &config};
  std::vector<RegressorSummary> summaries;
  std::ostringstream report;
  std::ostringstream table;
  table << "condition,thrust_error_pct,torque_error_pct,epochs,best_epoch,best_validation_mse\n";
  report << "Propeller models: mean relative error on the held-out tail of each trace\n";
  for (PropellerCondition c : kConditions) {
    const fs::path trace_path = layout.loadcell(c);
    require_file(trace_path, "run gen-loadcell first");
    const auto trace = prop::read_loadcell_csv(trace_path, c);
    RegressorSummary s{c, {}, {}};
    const auto regressor =
        prop::train_regressor(trace, config.regressor, derive_seed(config.seed, "regressor/" + prop::to_string(c)), &s.training);
    ensure_dir(layout.regressor(c).parent_path());
    regressor.save(layout.regressor(c));
    s.error = prop::eval_error(regressor, trace, config.regressor.train_fraction);
    spdlog::info("regressor {}: thrust {}%, torque {}% after {} epochs", prop::to_string(c), percent(s.error.thrust),
                 percent(s.error.torque), s.training.epochs_run);

    report << title_case(prop::to_string(c)) << ": thrust error " << percent(s.error.thrust) << "%, torque error "
           << percent(s.error.torque) << "%\n";
    table << prop::to_string(c) << ',' << percent(s.error.thrust) << ',' << percent(s.error.torque) << ','
          << s.training.epochs_run << ',' << s.training.best_epoch << ','
          << nn::format_double(s.training.best_validation_mse) << '\n';

    std::ostringstream curve;
    curve << "epoch,train_mse,validation_mse\n";
    for (std::size_t e = 0; e < s.training.train_mse.size(); ++e) {
      curve << e + 1 << ',' << nn::format_double(s.training.train_mse[e]) << ','
            << nn::format_double(s.training.validation_mse[e]) << '\n';
    }
    write_text(out / config.models_dir / (prop::to_string(c) + "_curve.csv"), curve.str());
    summaries.push_back(std::move(s));
  }
  write_text(layout.regressor_report(), report.str());
  write_text(layout.reports() / "regressors.csv", table.str());
  return summaries;
}

data::ModelBank load_models(const RunConfig& config, const fs::path& out) {
  if (config.models == ModelSource::Analytic) return data::ModelBank::analytic(config.degradation);
  const Layout layout{out, &config};
  std::shared_ptr<const prop::PropellerModel> slots[3];
  for (std::size_t i = 0; i < 3; ++i) {
    const fs::path path = layout.regressor(kConditions[i]);
    require_file(path, "run train-prop first or set [mission] propeller_models = analytic");
    auto regressor = std::make_shared<const prop::PropellerRegressor>(prop::PropellerRegressor::load(path));
    if (regressor->condition() != kConditions[i]) {
      throw InvalidArgument("'" + path.string() + "' holds a " + prop::to_string(regressor->condition()) + " model");
    }
    slots[i] = std::make_shared<prop::LearnedPropeller>(std::move(regressor));
  }
  return {slots[0], slots[1], slots[2]};
}

data::DatasetManifest cmd_gen_flights(const RunConfig& config, const fs::path& out) {
  const Layout layout{out, &config};
  const data::ModelBank models = load_models(config, out);
  data::MissionSetup setup;
  setup.params = config.flown_airframe();
  setup.gains = config.controller;
  setup.profile = config.unbalance;
  setup.mission = config.mission;
  setup.waypoints = config.resolved_waypoints();
  setup.waypoint_set = config.waypoint_set_name();

  ensure_dir(layout.dataset_logs());
  data::DatasetManifest manifest;
  std::vector<data::FlightLog> logs;
  for (int label : config.resolved_labels()) {
    for (std::size_t k = 0; k < config.missions_per_label; ++k) {
      const std::string id = std::to_string(label) + "/" + std::to_string(k);
      const auto scenario = data::draw_scenario(label, derive_seed(config.seed, "scenario/" + id));
      const auto seed = derive_seed(config.seed, "mission/" + setup.waypoint_set + "/" + id);
      data::FlightLog log = data::run_mission(scenario, setup, models, seed);
      char name[64];
      std::snprintf(name, sizeof name, "logs/label_%02d_%zu.csv", label, k);
      data::write_flight_log(log, out / config.dataset_dir / name);
      if (log.truncated) {
        spdlog::warn("label {} flight {} truncated after {} records: {}", label, k, log.records.size(),
                     log.truncation_reason);
      }
      spdlog::info("flight label {:2d} [{}]: {} records", label, scenario.code(), log.records.size());
      manifest.log_files.push_back(name);
      manifest.log_labels.push_back(label);
      manifest.log_records.push_back(log.records.size());
      manifest.log_truncated.push_back(log.truncated);
      logs.push_back(std::move(log));
    }
  }

  const data::WindowDataset windows = data::window_dataset(logs, config.window, config.hop);
  for (const std::string& w : windows.warnings()) spdlog::warn("{}", w);
  manifest.window = config.window;
  manifest.hop = config.hop;
  manifest.split_mode = config.split_mode;
  manifest.split_ratio = config.split_ratio;
  manifest.split_seed = derive_seed(config.seed, "split");
  const data::Split split = data::split_dataset(windows, config.split_ratio, config.split_mode, manifest.split_seed);
  manifest.train_count = split.train.size();
  manifest.test_count = split.test.size();
  manifest.normalization = data::compute_normalization(windows, split.train);
  manifest.params_hash = data::mission_params_hash(setup.params, setup.gains, setup.profile, setup.mission,
                                                   setup.waypoints);
  data::write_manifest(manifest, layout.dataset_manifest());
  spdlog::info("dataset: {} logs, {} train / {} test windows", logs.size(), manifest.train_count, manifest.test_count);
  return manifest;
}

clf::TrainingState cmd_train_clf(const RunConfig& config, const fs::path& out, bool resume) {
  const Layout layout{out, &config};
  require_file(layout.dataset_manifest(), "run gen-flights first");
  const data::LoadedDataset dataset = data::load_dataset(layout.dataset_manifest());

  std::vector<data::WindowRef> refs = dataset.split.train;
  if (config.shuffle_labels) {
    refs = clf::shuffle_labels(std::move(refs), data::kLabelCount, derive_seed(config.seed, "null-labels"));
  }
  const clf::WindowSource source(dataset.windows, std::move(refs), dataset.manifest.normalization);

  clf::TrainingState state;
  if (resume) {
    require_file(layout.training_state(), "nothing to resume");
    state = clf::TrainingState::from_checkpoint(nn::load_checkpoint(layout.training_state()));
    if (state.model.config().height != dataset.manifest.window) {
      throw InvalidArgument("saved training state does not match the dataset window");
    }
  } else {
    clf::CnnConfig shape = config.cnn;
    shape.height = dataset.manifest.window;
    clf::CnnModel model = clf::build_cnn(shape, derive_seed(config.seed, "cnn-init"));
    model.normalization = dataset.manifest.normalization;
    state = clf::start_training(std::move(model), config.classifier);
  }

  clf::train_classifier(state, source, config.classifier, derive_seed(config.seed, "cnn-train"),
                        [](const clf::EpochMetrics& m) {
                          spdlog::info("epoch {}: loss {:.4f} acc {:.2f}% | val loss {:.4f} acc {:.2f}%", m.epoch,
                                       m.train_loss, m.train_accuracy, m.validation_loss, m.validation_accuracy);
                        });
  ensure_dir(out / config.classifier_dir);
  state.best.save(layout.model());
  nn::save_checkpoint(state.to_checkpoint(), layout.training_state());

  std::ostringstream curve;
  curve << "epoch,train_loss,train_accuracy,validation_loss,validation_accuracy\n";
  for (const clf::EpochMetrics& m : state.curve) {
    curve << m.epoch << ',' << nn::format_double(m.train_loss) << ',' << nn::format_double(m.train_accuracy) << ','
          << nn::format_double(m.validation_loss) << ',' << nn::format_double(m.validation_accuracy) << '\n';
  }
  write_text(layout.training_curve(), curve.str());
  if (state.curve.empty()) {
    spdlog::info("no epochs run; saved the initial weights");
  } else {
    spdlog::info("best validation accuracy {:.2f}% at epoch {}", state.best_accuracy, state.best_epoch);
  }
  return state;
}

clf::EvalReport cmd_eval(const RunConfig& config, const fs::path& out, const std::optional<fs::path>& model_path) {
  const Layout layout{out, &config};
  const fs::path mpath = model_path.value_or(layout.model());
  require_file(mpath, "run train-clf first or pass --model");
  require_file(layout.dataset_manifest(), "run gen-flights first");
  const clf::CnnModel model = clf::CnnModel::load(mpath);
  const data::LoadedDataset dataset = data::load_dataset(layout.dataset_manifest());
  if (model.config().width != data::kChannels || model.config().height != dataset.manifest.window) {
    throw InvalidArgument("channel-schema mismatch: model expects " + std::to_string(model.config().height) + "x" +
                          std::to_string(model.config().width) + " windows, dataset provides " +
                          std::to_string(dataset.manifest.window) + "x" + std::to_string(data::kChannels));
  }
  const bool test_only = config.eval_subset == EvalSubset::Test;
  const clf::WindowSource source(dataset.windows, test_only ? dataset.split.test : dataset.windows.windows(),
                                 model.normalization);
  const clf::EvalReport report = clf::evaluate(model, source);
  const std::string title = "Classifier evaluation on " + config.dataset_dir + " (" +
                            (test_only ? "held-out test windows" : "all windows") + ")";
  clf::write_eval_report(report, layout.reports(), config.report_stem(), title);
  spdlog::info("{}: accuracy {:.2f}%, precision {:.2f}%, recall {:.2f}% over {} windows", config.report_stem(),
               report.accuracy(), report.precision(), report.recall(), report.total());
  return report;
}

calib::UnbalanceProfile cmd_calibrate(const RunConfig& config, const fs::path& hover_log, const fs::path& write_to) {
  require_file(hover_log, "expected a flight log written by gen-flights");
  const data::FlightLog log = data::read_flight_log(hover_log);
  const auto samples = data::hover_samples(log);
  const calib::SampleRange range = calib::find_hover_segment(samples, log.period);
  const std::span<const calib::HoverSample> segment(samples.data() + range.begin, range.end - range.begin);
  const calib::UnbalanceProfile profile = calib::estimate_unbalance(segment, log.period);
  RunConfig updated = config;
  updated.unbalance = profile;
  updated.validate();
  write_text(write_to, render_run_config(updated));
  spdlog::info("hover segment records [{}, {}): ratios {:.4f} {:.4f} {:.4f} {:.4f}, omega_max {:.1f}", range.begin,
               range.end, profile.ratio[0], profile.ratio[1], profile.ratio[2], profile.ratio[3], profile.omega_max);
  return profile;
}

clf::EvalReport cmd_pipeline(const RunConfig& config, const fs::path& out) {
  // Wall time per stage goes to the log only, so reruns stay byte-identical.
  auto timed = [](const char* stage, auto&& body) {
    const auto start = std::chrono::steady_clock::now();
    auto result = body();
    const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
    spdlog::info("stage {} took {:.1f} s", stage, took.count());
    return result;
  };
  timed("gen-loadcell", [&] { cmd_gen_loadcell(config, out); return 0; });
  timed("train-prop", [&] { return cmd_train_prop(config, out); });
  timed("gen-flights", [&] { return cmd_gen_flights(config, out); });
  timed("train-clf", [&] { return cmd_train_clf(config, out); });
  return timed("eval", [&] { return cmd_eval(config, out); });
}

}  // namespace propfault::app
