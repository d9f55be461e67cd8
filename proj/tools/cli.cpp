// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include "varkit/binary_io.hpp"
#include "varkit/config.hpp"
#include "varkit/error.hpp"
#include "varkit/synth.hpp"
#include "varkit/training.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

namespace varkit::cli {

namespace fs = std::filesystem;

namespace {

// Environment problems (unwritable output and the like), reported as runtime
// failures rather than bad input.
struct OutputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config;
  std::string profile;
  std::string data_dir;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> epochs;
  std::string device_budget;
};

void add_config_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--profile", f.profile, "Base profile")->check(CLI::IsMember(profile_names()));
  cmd->add_option("--seed", f.seed, "Random seed (overrides the config)");
}

// Defaults < profile < config file < flags.
RunConfig resolve_config(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? profile_config(f.profile.empty() ? "synth" : f.profile) : load_config(f.config, f.profile);
  if (f.seed) c.seed = *f.seed;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (!f.data_dir.empty()) c.data.data_dir = f.data_dir;
  if (!f.out.empty()) c.data.out_dir = f.out;
  return c;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw OutputError("cannot create output directory " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".varkit_write_probe";
  {
    std::ofstream p(probe);
    if (!p) throw OutputError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

VideoManifest load_manifest(const std::string& data_dir) {
  if (data_dir.empty()) throw ConfigError("no data directory given (--data-dir or data.data_dir)");
  return read_manifest(data_dir);
}

std::string summary_line(const EvaluationReport& r) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << "auc=" << r.auc << " mauc=" << r.mauc << " ap=" << r.ap
    << " map=" << r.map_score << " frames=" << r.frames;
  return s.str();
}

bool has_evaluable_test_split(const VideoManifest& m) {
  const auto test = m.split(Split::kTest);
  if (test.empty()) return false;
  bool any_anomalous = false;
  bool any_normal = false;
  for (const auto* e : test) (e->anomalous() ? any_anomalous : any_normal) = true;
  return any_anomalous && any_normal;
}

int cmd_synth(const CommonFlags& f, std::ostream& out) {
  RunConfig c = resolve_config(f);
  if (c.data.out_dir.empty()) throw ConfigError("synth: no output directory given (--out)");
  c.synth.validate();
  ensure_dir(c.data.out_dir);
  SynthDataset ds = synthesize_dataset(c.synth, c.seed);
  write_dataset(ds, c.data.out_dir);
  out << "wrote " << ds.manifest.videos.size() << " videos to " << c.data.out_dir << '\n';
  return kExitOk;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> lines;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

int cmd_train(const CommonFlags& f, const std::string& resume, std::ostream& out) {
  RunConfig c = resolve_config(f);
  c.validate();
  if (c.data.out_dir.empty()) throw ConfigError("train: no output directory given (--out)");
  if (!f.device_budget.empty()) out << "note: --device-budget is advisory; running on one CPU thread\n";
  const VideoManifest manifest = load_manifest(c.data.data_dir);
  std::vector<const VideoEntry*> all;
  for (const auto& v : manifest.videos) all.push_back(&v);
  const FrameFeatureStore store(manifest, all, c.encoder.feature_dim);

  TrainState state;
  if (resume.empty()) {
    state = initialize(c, manifest, store);
  } else {
    state = load_checkpoint(resume);
    // Only the schedule length may change on resume.
    RunConfig expected = state.config;
    expected.train.epochs = c.train.epochs;
    expected.data = c.data;
    if (!(expected == c)) throw ConfigError("train: --resume checkpoint was trained with a different configuration");
    state.config = c;
  }
  const fs::path out_dir = c.data.out_dir;
  ensure_dir(out_dir);
  const TrainingSet data = build_training_set(state.model, manifest, store);

  std::vector<std::string> log_lines{log_header()};
  if (!resume.empty() && fs::exists(out_dir / "train_log.csv")) {
    const auto previous = read_lines(out_dir / "train_log.csv");
    for (std::size_t i = 1; i < previous.size(); ++i) {
      const auto comma = previous[i].find(',');
      const auto comma2 = previous[i].find(',', comma + 1);
      if (comma == std::string::npos || comma2 == std::string::npos) continue;
      if (std::stoll(previous[i].substr(comma + 1, comma2 - comma - 1)) < state.step) log_lines.push_back(previous[i]);
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  double epoch_sum = 0.0;
  std::int64_t epoch_n = 0;
  FitOptions opts;
  opts.checkpoint_dir = out_dir / "checkpoints";
  opts.on_step = [&](const LogRow& row) {
    log_lines.push_back(format_log_row(row));
    epoch_sum += row.report.total;
    ++epoch_n;
  };
  opts.on_epoch = [&](const TrainState& s) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "epoch " << s.epoch << "/" << s.config.train.epochs << " mean_loss=" << std::setprecision(6)
        << (epoch_n > 0 ? epoch_sum / static_cast<double>(epoch_n) : 0.0) << " elapsed=" << std::setprecision(3)
        << secs << "s\n";
    epoch_sum = 0.0;
    epoch_n = 0;
  };
  fit(state, data, opts);

  std::string log_text;
  for (const auto& l : log_lines) log_text += l + "\n";
  io::write_text_atomic(out_dir / "train_log.csv", log_text);
  io::write_text_atomic(out_dir / "config.json", to_json_string(state.config));
  save_checkpoint(state, out_dir / "checkpoint.vkc");
  out << "checkpoint: " << (out_dir / "checkpoint.vkc").string() << '\n';

  if (has_evaluable_test_split(manifest)) {
    const EvaluationReport r = evaluate(state.model, state.config.bag, manifest, store);
    io::write_text_atomic(out_dir / "eval_report.txt", r.to_text());
    out << "test: " << summary_line(r) << '\n';
  }
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out_path,
             std::ostream& out) {
  const TrainState state = load_checkpoint(checkpoint);
  const VideoManifest manifest = load_manifest(data_dir.empty() ? state.config.data.data_dir : data_dir);
  const FrameFeatureStore store(manifest, manifest.split(Split::kTest), state.config.encoder.feature_dim);
  const EvaluationReport r = evaluate(state.model, state.config.bag, manifest, store);
  if (!out_path.empty()) {
    ensure_parent(out_path);
    io::write_text_atomic(out_path, r.to_text());
  } else {
    out << r.to_text();
  }
  out << summary_line(r) << '\n';
  return kExitOk;
}

std::string csv_name(std::string s) {
  for (auto& ch : s) {
    if (ch == ' ' || ch == ',') ch = '_';
  }
  return s;
}

int cmd_predict(const std::string& checkpoint, const std::string& data_dir, const std::string& video,
                const std::string& out_path, std::ostream& out) {
  const TrainState state = load_checkpoint(checkpoint);
  const VideoManifest manifest = load_manifest(data_dir.empty() ? state.config.data.data_dir : data_dir);
  std::vector<const VideoEntry*> entries;
  if (video.empty() || video == "all") {
    for (const auto& v : manifest.videos) entries.push_back(&v);
  } else {
    const VideoEntry* e = manifest.find(video);
    if (e == nullptr) throw DataError("predict: unknown video_id '" + video + "'");
    entries.push_back(e);
  }
  const FrameFeatureStore store(manifest, entries, state.config.encoder.feature_dim);
  const auto& classes = state.model.class_names;

  std::ostringstream csv;
  csv << std::setprecision(9) << "video_id,frame_index,p_A,p_N";
  for (const auto& c : classes) csv << ",p_joint_" << csv_name(c);
  csv << ",predicted_class\n";
  std::size_t records = 0;
  for (const auto* e : entries) {
    const ScoreGrid g = score_video(state.model, state.config.bag, store.get(e->video_id));
    for (ag::Index i = 0; i < g.p_anomaly.rows(); ++i) {
      csv << e->video_id << ',' << i << ',' << g.p_anomaly(i, 0) << ',' << g.p_normal(i, 0);
      for (ag::Index c = 0; c < g.p_joint.cols(); ++c) csv << ',' << g.p_joint(i, c);
      const auto pred = predicted_class(g, i);
      csv << ',' << (pred ? classes[static_cast<std::size_t>(*pred)] : std::string(kNormalClassName)) << '\n';
      ++records;
    }
  }
  if (out_path.empty()) {
    out << csv.str();
  } else {
    ensure_parent(out_path);
    io::write_text_atomic(out_path, csv.str());
    out << "wrote " << records << " frame records to " << out_path << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"varkit: weakly supervised video anomaly recognition on precomputed frame features", "varkit"};
  app.require_subcommand(1);

  CommonFlags synth_f;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with planted anomalies");
  add_config_flags(synth, synth_f);
  synth->add_option("--out", synth_f.out, "Output dataset directory")->required();

  CommonFlags train_f;
  std::string resume;
  auto* train = app.add_subcommand("train", "Train on a dataset directory");
  add_config_flags(train, train_f);
  train->add_option("--data-dir", train_f.data_dir, "Dataset directory with manifest.csv");
  train->add_option("--out", train_f.out, "Output directory for checkpoints and logs");
  train->add_option("--epochs", train_f.epochs, "Override the number of epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--device-budget", train_f.device_budget, "Advisory compute budget");
  train->add_option("--resume", resume, "Continue from a checkpoint written by an earlier run");

  std::string eval_ckpt, eval_data, eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data-dir", eval_data, "Dataset directory (defaults to the one used for training)");
  eval->add_option("--out", eval_out, "Report path (stdout when omitted)");

  std::string pred_ckpt, pred_data, pred_video, pred_out;
  auto* predict = app.add_subcommand("predict", "Export per-frame probabilities");
  predict->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
  predict->add_option("--data-dir", pred_data, "Dataset directory (defaults to the one used for training)");
  predict->add_option("--video", pred_video, "A video_id, or 'all'")->default_val("all");
  predict->add_option("--out", pred_out, "CSV path (stdout when omitted)");

  std::vector<const char*> argv{"varkit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_f, out);
    if (train->parsed()) return cmd_train(train_f, resume, out);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_out, out);
    if (predict->parsed()) return cmd_predict(pred_ckpt, pred_data, pred_video, pred_out, out);
  } catch (const OutputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::invalid_argument& e) {  // ConfigError, ShapeError
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitInvalid;
}

}  // namespace varkit::cli
