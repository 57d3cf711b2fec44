#pragma once

#include <glob.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "tsgan/tsgan.hpp"

namespace tsgan::cli {

struct SettingSpec {
  const char* key;
  const char* default_value;
  const char* help;
};

inline const std::vector<SettingSpec>& setting_specs() {
  static const std::vector<SettingSpec> specs{
      {"epochs", "20", "training epochs"},
      {"batch_size", "64", "minibatch size"},
      {"lr", "0.001", "Adam learning rate"},
      {"beta1", "0.5", "Adam first-moment decay"},
      {"beta2", "0.999", "Adam second-moment decay"},
      {"latent_dim", "64", "latent vector size"},
      {"subsample_len", "12000", "subsample length in samples"},
      {"pipeline_mode", "raw", "network input: raw or features"},
      {"feature_window", "250", "samples per feature window"},
      {"base_channels", "16", "channels of the first conv stage"},
      {"n_down", "4", "number of stride-2 stages"},
      {"leaky_slope", "0.2", "leaky ReLU slope"},
      {"w_fraud", "1", "fraud loss weight"},
      {"w_apparent", "50", "apparent loss weight"},
      {"w_latent", "1", "latent loss weight"},
      {"seed", "0", "random seed"},
      {"train_fraction", "0.8", "share of normal subsamples used for training"},
      {"csv_column", "0", "CSV column name or zero-based index"},
      {"reconstructions", "2", "reconstruction pairs written by eval"},
      {"samples", "120000", "samples per synthetic signal"},
      {"count", "1", "number of synthetic signals"},
      {"fault_rate", "0", "impulse rate in Hz, 0 for normal signals"},
      {"impulse_amplitude", "1", "impulse amplitude"},
      {"noise_std", "0.1", "Gaussian noise standard deviation"},
      {"sample_rate", "12000", "sample rate in Hz"},
      {"carriers", "29.95,149.75", "carrier frequencies in Hz"},
      {"carrier_amplitude", "1", "amplitude of each carrier"},
      {"impulse_decay", "0.02", "impulse decay time constant in seconds"},
      {"resonance_hz", "3000", "impulse ringing frequency in Hz"},
      {"axis", "latent_dim", "sweep axis: latent_dim or subsample_len"},
      {"values", "16,32,64,128", "sweep values"},
      {"parallel", "1", "sweep points run concurrently"},
  };
  return specs;
}

inline const SettingSpec* find_setting(const std::string& key) {
  for (const auto& s : setting_specs())
    if (key == s.key) return &s;
  return nullptr;
}

/// Parses flat `key = value` text. Blank lines and `#` comments are skipped.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(trimmed).substr(0, eq));
    const std::string value = detail::trim(std::string_view(trimmed).substr(eq + 1));
    if (!find_setting(key)) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!out.emplace(key, value).second)
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
  }
  return out;
}

/// Resolved settings. Precedence: command-line flag, then config file, then
/// built-in default.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& s : setting_specs()) values_[s.key] = s.default_value;
  }

  void merge(const std::map<std::string, std::string>& entries) {
    for (const auto& [key, value] : entries) set(key, value);
  }

  void merge_file(const std::filesystem::path& path) { merge(parse_config_text(detail::read_file(path))); }

  void set(const std::string& key, const std::string& value) {
    if (!find_setting(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = value;
  }

  const std::string& text(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
    return it->second;
  }

  std::size_t size(const std::string& key) const {
    const std::string& v = text(key);
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
      throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
  }

  double real(const std::string& key) const { return parse_real(key, text(key)); }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : detail::split_csv_record(text(key))) out.push_back(parse_real(key, detail::trim(item)));
    return out;
  }

  std::vector<std::size_t> sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : detail::split_csv_record(text(key))) {
      const std::string v = detail::trim(item);
      std::size_t n = 0;
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
      if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
        throw ConfigError(key + ": expected a list of non-negative integers, got '" + text(key) + "'");
      out.push_back(n);
    }
    return out;
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.epochs = size("epochs");
    c.batch_size = size("batch_size");
    c.lr = static_cast<float>(real("lr"));
    c.beta1 = static_cast<float>(real("beta1"));
    c.beta2 = static_cast<float>(real("beta2"));
    c.latent_dim = size("latent_dim");
    c.subsample_len = size("subsample_len");
    c.pipeline_mode = parse_pipeline_mode(text("pipeline_mode"));
    c.feature_window = size("feature_window");
    c.base_channels = size("base_channels");
    c.n_down = size("n_down");
    c.leaky_slope = static_cast<float>(real("leaky_slope"));
    c.loss_weights.fraud = static_cast<float>(real("w_fraud"));
    c.loss_weights.apparent = static_cast<float>(real("w_apparent"));
    c.loss_weights.latent = static_cast<float>(real("w_latent"));
    c.seed = size("seed");
    return c;
  }

  SynthSpec synth_spec() const {
    SynthSpec s;
    s.duration_samples = size("samples");
    s.sample_rate_hz = real("sample_rate");
    s.carrier_freqs_hz = reals("carriers");
    s.carrier_amplitude = real("carrier_amplitude");
    s.noise_std = real("noise_std");
    s.impulse_rate_hz = real("fault_rate");
    s.impulse_amplitude = real("impulse_amplitude");
    s.impulse_decay_s = real("impulse_decay");
    s.resonance_hz = real("resonance_hz");
    s.seed = size("seed");
    return s;
  }

 private:
  static double parse_real(const std::string& key, const std::string& v) {
    double out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out))
      throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
  }

  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Data helpers
// ---------------------------------------------------------------------------

/// Sorted matches of one shell pattern; an empty list if nothing matches.
inline std::vector<std::filesystem::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::filesystem::path> out;
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw IoError("cannot expand '" + pattern + "'");
  return out;
}

inline std::vector<std::filesystem::path> expand_globs(const std::vector<std::string>& patterns, const char* what) {
  if (patterns.empty()) throw UsageError(std::string("no ") + what + " data given");
  std::vector<std::filesystem::path> out;
  for (const auto& p : patterns) {
    auto matches = expand_glob(p);
    if (matches.empty()) throw IoError(std::string("no files match ") + what + " glob '" + p + "'");
    out.insert(out.end(), matches.begin(), matches.end());
  }
  return out;
}

/// Non-overlapping subsamples of every file, in file order.
inline std::vector<Subsample> load_subsamples(const std::vector<std::filesystem::path>& paths, Label label,
                                              std::size_t length, const std::string& csv_column) {
  std::vector<Subsample> out;
  for (const auto& path : paths) {
    TimeSeries ts = load_series(path, csv_column);
    ts.source = path.string();
    ts.label = label;
    auto windows = subsample(ts, length, length);
    out.insert(out.end(), std::make_move_iterator(windows.begin()), std::make_move_iterator(windows.end()));
  }
  return out;
}

inline std::filesystem::path holdout_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".holdout.f32";
}

inline std::filesystem::path report_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".report.csv";
}

inline void write_output(const std::string& target, const std::string& content, std::ostream& out) {
  if (target.empty() || target == "-")
    out << content;
  else
    write_text_file(target, content);
}

inline std::string summary_line(const EvalReport& r) {
  return "auc=" + format_number(r.auc) + " accuracy=" + format_number(r.accuracy) +
         " threshold=" + format_number(r.threshold) + " n_normal=" + std::to_string(r.n_normal) +
         " n_fault=" + std::to_string(r.n_fault);
}

struct SweepRow {
  std::size_t value = 0;
  double auc = 0;
  double accuracy = 0;
};

/// Trains and evaluates one sweep point from scratch.
inline SweepRow sweep_point(const RunConfig& config, const std::string& axis, std::size_t value,
                            const std::vector<std::filesystem::path>& normal_files,
                            const std::vector<std::filesystem::path>& fault_files) {
  TrainConfig tc = config.train_config();
  if (axis == "latent_dim")
    tc.latent_dim = value;
  else
    tc.subsample_len = value;
  const std::string column = config.text("csv_column");
  auto normals = load_subsamples(normal_files, Label::normal, tc.subsample_len, column);
  const auto faults = load_subsamples(fault_files, Label::fault, tc.subsample_len, column);
  const auto split = split_train_test(std::move(normals), config.real("train_fraction"), tc.seed);
  const TrainResult trained = train(tc, split.train);
  const EvalReport report = evaluate(trained.state, split.test, faults, 0);
  return {value, report.auc, report.accuracy};
}

inline std::vector<SweepRow> run_sweep(const RunConfig& config, const std::vector<std::filesystem::path>& normal_files,
                                       const std::vector<std::filesystem::path>& fault_files) {
  const std::string axis = config.text("axis");
  if (axis != "latent_dim" && axis != "subsample_len")
    throw ConfigError("axis: expected latent_dim or subsample_len, got '" + axis + "'");
  const auto values = config.sizes("values");
  if (values.empty()) throw UsageError("sweep: no values given");
  const std::size_t workers = std::clamp<std::size_t>(config.size("parallel"), 1, values.size());

  std::vector<SweepRow> rows(values.size());
  std::vector<std::exception_ptr> errors(values.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < values.size(); i = next++) {
      try {
        rows[i] = sweep_point(config, axis, values[i], normal_files, fault_files);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "value,auc,accuracy\n";
  for (const auto& r : rows)
    out += std::to_string(r.value) + ',' + format_number(r.auc) + ',' + format_number(r.accuracy) + '\n';
  return out;
}

inline std::string features_csv(const std::vector<std::filesystem::path>& paths, std::size_t window,
                                 const std::string& csv_column) {
  if (window == 0) throw UsageError("feature_window must be positive");
  std::string out;
  for (std::size_t i = 0; i < FeatureVector::size; ++i) {
    if (i) out += ',';
    out += FeatureVector::names[i];
  }
  out += '\n';
  for (const auto& path : paths) {
    const TimeSeries ts = load_series(path, csv_column);
    for (std::size_t start = 0; start + window <= ts.values.size(); start += window) {
      const auto row = extract_features(std::span<const float>(ts.values).subspan(start, window)).to_array();
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += format_number(row[i]);
      }
      out += '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

/// Flags bound to settings of one subcommand.
class SettingFlags {
 public:
  void add(CLI::App* app, const std::vector<std::string>& keys) {
    for (const auto& key : keys) {
      const SettingSpec* spec = find_setting(key);
      auto slot = std::make_unique<std::string>();
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      CLI::Option* opt = app->add_option(flag, *slot, std::string(spec->help) + " (key " + key + ")")
                             ->default_str(spec->default_value)
                             ->type_name("VALUE");
      bound_.push_back({key, opt, std::move(slot)});
    }
  }

  /// Defaults, then the config file if given, then explicit flags.
  RunConfig resolve(const std::string& config_file) const {
    RunConfig config;
    if (!config_file.empty()) config.merge_file(config_file);
    for (const auto& b : bound_)
      if (b.option->count() > 0) config.set(b.key, *b.value);
    return config;
  }

 private:
  struct Bound {
    std::string key;
    CLI::Option* option;
    std::unique_ptr<std::string> value;
  };
  std::vector<Bound> bound_;
};

inline const std::vector<std::string>& train_keys() {
  static const std::vector<std::string> keys{
      "epochs",        "batch_size", "lr",          "beta1",   "beta2",      "latent_dim",
      "subsample_len", "pipeline_mode", "feature_window", "base_channels", "n_down", "leaky_slope",
      "w_fraud",       "w_apparent", "w_latent",    "seed",    "train_fraction", "csv_column"};
  return keys;
}

inline int exit_code_for(const Error& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return 1;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  return 2;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"GAN-based anomaly detection for time series", "tsgan"};
  app.require_subcommand(1, 1);

  std::string config_file;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "flat key = value settings file");
  };

  // synth
  SettingFlags synth_flags;
  std::string out_dir = ".", prefix = "synth";
  CLI::App* synth_cmd = app.add_subcommand("synth", "write synthetic vibration signals as f32 files");
  add_config(synth_cmd);
  synth_flags.add(synth_cmd, {"samples", "count", "fault_rate", "impulse_amplitude", "noise_std", "sample_rate",
                              "carriers", "carrier_amplitude", "impulse_decay", "resonance_hz", "seed"});
  synth_cmd->add_option("--out-dir", out_dir, "output directory")->capture_default_str();
  synth_cmd->add_option("--prefix", prefix, "file name prefix")->capture_default_str();

  // features
  SettingFlags feature_flags;
  std::vector<std::string> inputs;
  std::string out_file = "-";
  CLI::App* features_cmd = app.add_subcommand("features", "dump per-window feature vectors as CSV");
  add_config(features_cmd);
  feature_flags.add(features_cmd, {"feature_window", "csv_column"});
  features_cmd->add_option("inputs", inputs, "input files or glob patterns")->required();
  features_cmd->add_option("--out", out_file, "output CSV, - for stdout")->capture_default_str();

  // train
  SettingFlags train_flags;
  std::string checkpoint = "model.ckpt";
  CLI::App* train_cmd = app.add_subcommand("train", "train on normal data and write a checkpoint");
  add_config(train_cmd);
  train_flags.add(train_cmd, train_keys());
  train_cmd->add_option("--data", inputs, "normal data files or glob patterns")->required();
  train_cmd->add_option("--out", checkpoint, "checkpoint path")->capture_default_str();

  // score
  SettingFlags score_flags;
  CLI::App* score_cmd = app.add_subcommand("score", "score subsamples with a trained checkpoint");
  add_config(score_cmd);
  score_flags.add(score_cmd, {"csv_column"});
  score_cmd->add_option("--checkpoint", checkpoint, "checkpoint path")->capture_default_str();
  score_cmd->add_option("inputs", inputs, "input files or glob patterns")->required();
  score_cmd->add_option("--out", out_file, "output CSV, - for stdout")->capture_default_str();

  // eval
  SettingFlags eval_flags;
  std::vector<std::string> normal_globs, fault_globs;
  std::string eval_dir = "eval";
  CLI::App* eval_cmd = app.add_subcommand("eval", "score labeled data and write an evaluation report");
  add_config(eval_cmd);
  eval_flags.add(eval_cmd, {"reconstructions", "csv_column"});
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint path")->capture_default_str();
  eval_cmd->add_option("--normal", normal_globs, "normal data files or glob patterns")->required();
  eval_cmd->add_option("--fault", fault_globs, "fault data files or glob patterns")->required();
  eval_cmd->add_option("--out-dir", eval_dir, "report directory")->capture_default_str();

  // sweep
  SettingFlags sweep_flags;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "retrain and evaluate over one hyperparameter axis");
  add_config(sweep_cmd);
  auto sweep_keys = train_keys();
  sweep_keys.insert(sweep_keys.end(), {"axis", "values", "parallel"});
  sweep_flags.add(sweep_cmd, sweep_keys);
  sweep_cmd->add_option("--normal", normal_globs, "normal data files or glob patterns")->required();
  sweep_cmd->add_option("--fault", fault_globs, "fault data files or glob patterns")->required();
  sweep_cmd->add_option("--out", out_file, "output CSV, - for stdout")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  try {
    if (synth_cmd->parsed()) {
      const RunConfig config = synth_flags.resolve(config_file);
      const SynthSpec base = config.synth_spec();
      const std::size_t count = config.size("count");
      if (count == 0) throw UsageError("count must be positive");
      std::filesystem::create_directories(out_dir);
      for (std::size_t i = 0; i < count; ++i) {
        SynthSpec spec = base;
        spec.seed = base.seed + i;
        const TimeSeries ts = synth(spec);
        char index[32];
        std::snprintf(index, sizeof(index), "%03zu", i);
        const auto path = std::filesystem::path(out_dir) / (prefix + "_" + label_name(ts.label) + "_" + index + ".f32");
        write_f32_binary(path, ts.values);
        out << path.string() << '\n';
      }
    } else if (features_cmd->parsed()) {
      const RunConfig config = feature_flags.resolve(config_file);
      write_output(out_file,
                   features_csv(expand_globs(inputs, "input"), config.size("feature_window"), config.text("csv_column")),
                   out);
    } else if (train_cmd->parsed()) {
      const RunConfig config = train_flags.resolve(config_file);
      TrainConfig tc = config.train_config();
      auto normals = load_subsamples(expand_globs(inputs, "normal"), Label::normal, tc.subsample_len,
                                     config.text("csv_column"));
      const auto split = split_train_test(std::move(normals), config.real("train_fraction"), tc.seed);
      const std::size_t n_batches = split.train.size() / std::min(tc.batch_size, split.train.size());
      tc.checkpoint_path = checkpoint;
      const TrainResult result = train(tc, split.train, [&](std::size_t epoch, std::size_t batch, const ModelState&) {
        if (batch == n_batches) err << "epoch " << epoch << '/' << tc.epochs << " done\n";
      });
      write_text_file(report_path(checkpoint), train_report_csv(result.report));
      std::vector<float> held;
      for (const auto& s : split.test) held.insert(held.end(), s.values.begin(), s.values.end());
      if (!held.empty()) write_f32_binary(holdout_path(checkpoint), held);
      const auto& last = result.report.epochs.back();
      out << "trained on " << split.train.size() << " subsamples, held out " << split.test.size()
          << "; final l_a=" << format_number(last.l_apparent) << " l_l=" << format_number(last.l_latent)
          << "; wrote " << checkpoint << '\n';
    } else if (score_cmd->parsed()) {
      const RunConfig config = score_flags.resolve(config_file);
      const ModelState state = load_checkpoint(checkpoint);
      const auto samples = load_subsamples(expand_globs(inputs, "input"), Label::unlabeled,
                                           state.pipeline.subsample_len, config.text("csv_column"));
      std::string csv = "id,raw_score,l_apparent,l_latent\n";
      for (const auto& s : score_dataset(state, samples))
        csv += csv_field(s.id) + ',' + format_number(s.score) + ',' + format_number(s.l_apparent) + ',' +
               format_number(s.l_latent) + '\n';
      write_output(out_file, csv, out);
    } else if (eval_cmd->parsed()) {
      const RunConfig config = eval_flags.resolve(config_file);
      const auto normal_files = expand_globs(normal_globs, "normal");
      const auto fault_files = expand_globs(fault_globs, "fault");
      const ModelState state = load_checkpoint(checkpoint);
      const std::size_t len = state.pipeline.subsample_len;
      const std::string column = config.text("csv_column");
      const auto normals = load_subsamples(normal_files, Label::normal, len, column);
      const auto faults = load_subsamples(fault_files, Label::fault, len, column);
      const EvalReport report = evaluate(state, normals, faults, config.size("reconstructions"));
      emit_report(report, eval_dir);
      out << summary_line(report) << '\n';
    } else if (sweep_cmd->parsed()) {
      const RunConfig config = sweep_flags.resolve(config_file);
      const auto rows = run_sweep(config, expand_globs(normal_globs, "normal"), expand_globs(fault_globs, "fault"));
      write_output(out_file, sweep_csv(rows), out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace tsgan::cli
