// SPDX-License-Identifier: Apache-2.0

#include "varkit/training.hpp"

#include "varkit/binary_io.hpp"
#include "varkit/data.hpp"
#include "varkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace varkit {

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& config) {
  if (total_steps <= 0) return 0.0;
  step = std::clamp<std::int64_t>(step, 0, total_steps);
  const auto warmup = static_cast<std::int64_t>(std::llround(config.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return config.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return 0.5 * config.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<NamedParameter> Model::trainable() const {
  std::vector<NamedParameter> out = bank.parameters();
  for (auto& p : text.parameters()) out.push_back(p);
  for (const auto& p : temporal.parameters()) out.push_back({"temporal." + p.name, p.var});
  return out;
}

DirectionBank Model::directions() const { return compute_directions(bank, text, prototype); }

double AdamW::step(std::vector<NamedParameter>& params, double lr) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.var.grad().size() > 0) sq += p.var.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double clip = config_.clip_norm > 0.0 && norm > config_.clip_norm ? config_.clip_norm / (norm + 1e-6) : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& p : params) {
    ag::Matrix& w = p.var.mutable_value();
    const ag::Matrix g = p.var.grad().size() > 0 ? ag::Matrix(p.var.grad() * clip) : ag::Matrix::Zero(w.rows(), w.cols());
    auto& m = m_[p.name];
    auto& v = v_[p.name];
    if (m.size() == 0) {
      m = ag::Matrix::Zero(w.rows(), w.cols());
      v = ag::Matrix::Zero(w.rows(), w.cols());
    }
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseAbs2();
    w *= 1.0 - lr * config_.weight_decay;
    w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.eps);
  }
  return norm;
}

void AdamW::restore(std::int64_t t, std::map<std::string, ag::Matrix> m, std::map<std::string, ag::Matrix> v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Model make_model(const RunConfig& config, std::vector<std::string> class_names, NormalityPrototype prototype) {
  Model m;
  const std::size_t d = config.encoder.feature_dim;
  if (prototype.dim() != d) {
    throw ShapeError("prototype dim " + std::to_string(prototype.dim()) + " != encoder.feature_dim " + std::to_string(d));
  }
  m.class_names = std::move(class_names);
  m.bank = init_context_bank(config.encoder, m.class_names, derive_seed(config.seed, 1));
  m.text = ToyTextEncoder(config.encoder.resolved_token_dim(), d, config.encoder.encoder_seed);
  m.prototype = std::move(prototype);
  m.normalizer =
      ProjectionNormalizer::create(m.class_names.size(), config.selector.bn_eps, config.selector.bn_momentum);
  m.temporal = TemporalModel(config.axial, config.axial.input_dim(d, m.class_names.size()), config.bag.segments,
                             config.bag.frames, derive_seed(config.seed, 2));
  return m;
}

}  // namespace

TrainState initialize(const RunConfig& config, const VideoManifest& manifest, const FrameFeatureStore& store) {
  config.validate();
  const auto classes = manifest.training_classes();
  if (classes.empty()) throw DataError("training split has no anomalous videos");
  PrototypeAccumulator acc;
  for (const auto* e : manifest.split(Split::kTrain)) {
    if (!e->anomalous()) acc.add_rows(store.get(e->video_id));
  }
  TrainState s;
  s.config = config;
  s.model = make_model(config, classes, acc.finish());
  s.optimizer = AdamW(config.train.optimizer);
  s.rng.seed(derive_seed(config.seed, 3));
  std::size_t n_normal = 0;
  std::size_t n_anomalous = 0;
  for (const auto* e : manifest.split(Split::kTrain)) ++(e->anomalous() ? n_anomalous : n_normal);
  if (n_normal > 0) {
    const auto half = static_cast<std::size_t>(config.bag.batch / 2);
    const auto per_epoch = static_cast<std::int64_t>((std::max(n_normal, n_anomalous) + half - 1) / half);
    s.total_steps = per_epoch * config.train.epochs;
  }
  return s;
}

TrainingSet build_training_set(const Model& model, const VideoManifest& manifest, const FrameFeatureStore& store) {
  TrainingSet set;
  for (const auto* e : manifest.split(Split::kTrain)) {
    TrainingVideo v;
    v.video_id = e->video_id;
    v.anomalous = e->anomalous();
    if (v.anomalous) {
      const auto it = std::find(model.class_names.begin(), model.class_names.end(), e->class_name);
      if (it == model.class_names.end()) throw DataError("video '" + e->video_id + "': class not in the model");
      v.class_index = static_cast<std::size_t>(it - model.class_names.begin());
    }
    v.features = recenter_rows(store.get(e->video_id), model.prototype);
    (v.anomalous ? set.anomalous : set.normal).push_back(set.videos.size());
    set.videos.push_back(std::move(v));
  }
  if (set.normal.empty() || set.anomalous.empty()) {
    throw DataError("training split needs both normal and anomalous videos");
  }
  return set;
}

std::vector<std::vector<StepVideo>> draw_epoch(TrainState& state, const TrainingSet& data) {
  const BalancedBatcher batcher(data.normal, data.anomalous, state.config.bag.batch);
  std::vector<std::vector<StepVideo>> out;
  for (const auto& batch : batcher.epoch(state.rng)) {
    std::vector<StepVideo> videos;
    for (const auto* group : {&batch.normal, &batch.anomalous}) {
      for (std::size_t i : *group) {
        videos.push_back({i, make_training_bag(data.videos[i].features, state.config.bag, state.rng).features});
      }
    }
    out.push_back(std::move(videos));
  }
  return out;
}

std::int64_t total_steps(const RunConfig& config, const TrainingSet& data) {
  const BalancedBatcher batcher(data.normal, data.anomalous, config.bag.batch);
  return batcher.batches_per_epoch() * config.train.epochs;
}

namespace {

std::vector<double> column_values(const ag::Matrix& m, ag::Index row0, ag::Index rows, ag::Index col) {
  std::vector<double> out(static_cast<std::size_t>(rows));
  for (ag::Index r = 0; r < rows; ++r) out[static_cast<std::size_t>(r)] = m(row0 + r, col);
  return out;
}

// Cells of every frame of the listed segments of bag `b`, in segment order.
std::vector<ag::Cell> frame_cells(const std::vector<std::int64_t>& segments, ag::Index b, ag::Index s_count,
                                  ag::Index f_count, ag::Index col) {
  std::vector<ag::Cell> cells;
  for (auto s : segments) {
    for (ag::Index f = 0; f < f_count; ++f) cells.push_back({(b * s_count + s) * f_count + f, col});
  }
  return cells;
}

std::vector<ag::Cell> segment_cells(const std::vector<std::int64_t>& segments, ag::Index b, ag::Index s_count,
                                    const std::vector<ag::Index>& cols) {
  std::vector<ag::Cell> cells;
  for (std::size_t i = 0; i < segments.size(); ++i) cells.push_back({b * s_count + segments[i], cols[i]});
  return cells;
}

}  // namespace

LossReport train_step(TrainState& state, const TrainingSet& data, const std::vector<StepVideo>& batch,
                      StepTrace* trace) {
  const RunConfig& cfg = state.config;
  Model& model = state.model;
  const ag::Index s_count = cfg.bag.segments;
  const ag::Index f_count = cfg.bag.frames;
  const ag::Index k = cfg.bag.k;
  const auto n = static_cast<ag::Index>(batch.size());
  const ag::Index per_bag = s_count * f_count;
  if (n == 0) throw ConfigError("train_step: empty batch");

  std::vector<NamedParameter> params = model.trainable();
  for (auto& p : params) p.var.zero_grad();

  ag::Matrix stacked(n * per_bag, static_cast<ag::Index>(cfg.encoder.feature_dim));
  for (ag::Index b = 0; b < n; ++b) {
    const auto& bag = batch[static_cast<std::size_t>(b)].bag;
    if (bag.rows() != per_bag || bag.cols() != stacked.cols()) throw ShapeError("train_step: bag shape mismatch");
    stacked.middleRows(b * per_bag, per_bag) = bag;
  }
  const ag::Var x(std::move(stacked));

  // The normalizer only commits its running statistics once the step succeeds.
  ProjectionNormalizer normalizer = model.normalizer;
  const DirectionBank dirs = model.directions();
  const ag::Var frame_lik = selector_frame(x, dirs, normalizer, Mode::kTrain);
  const ag::Var seg_lik = selector_segment(frame_lik, f_count);
  const ag::Var p_a = model.temporal.forward(build_temporal_input(x, frame_lik, cfg.axial), n, true, &state.rng);
  const ScoreVars scores = aggregate(p_a, frame_lik);

  if (trace != nullptr) *trace = StepTrace{};
  LossTerms terms;
  const ag::Matrix& seg_values = seg_lik.value();
  for (ag::Index b = 0; b < n; ++b) {
    const TrainingVideo& video = data.videos.at(batch[static_cast<std::size_t>(b)].video);
    Selection sel;
    std::vector<ag::Index> top_cols;
    if (video.anomalous) {
      const auto c = static_cast<ag::Index>(video.class_index);
      const auto mask = random_mask(s_count, cfg.selector.mask_ratio, k, state.rng);
      sel = select_segments(column_values(seg_values, b * s_count, s_count, c), k, mask);
      const std::vector<ag::Index> cols(static_cast<std::size_t>(k), c);
      top_cols = cols;
      const auto top_seg = segment_cells(sel.top, b, s_count, cols);
      const auto bottom_seg = segment_cells(sel.bottom, b, s_count, cols);
      const auto top_frames = frame_cells(sel.top, b, s_count, f_count, c);
      const auto bottom_frames = frame_cells(sel.bottom, b, s_count, f_count, 0);
      terms.add(LossTerm::kAnomalousDir, loss_anomalous_dir(ag::gather(seg_lik, top_seg), f_count));
      terms.add(LossTerm::kAnomalousTop, loss_anomalous_top(ag::gather(scores.p_joint, top_frames), k, f_count));
      terms.add(LossTerm::kAnomalousBottom,
                loss_anomalous_bottom(ag::gather(scores.p_normal, bottom_frames), k, f_count));
      terms.add(LossTerm::kAnomalousBottomDir, loss_anomalous_bottom_dir(ag::gather(seg_lik, bottom_seg), f_count));
      const ag::Var video_pa = ag::slice_rows(p_a, b * per_bag, per_bag);
      terms.add(LossTerm::kSparsity, loss_sparsity(video_pa));
      terms.add(LossTerm::kSmoothness, loss_smoothness(video_pa, cfg.losses.smoothness_form));
    } else {
      // No class label: rank segments by their most-offending direction.
      std::vector<double> best(static_cast<std::size_t>(s_count));
      std::vector<ag::Index> best_col(static_cast<std::size_t>(s_count));
      for (ag::Index s = 0; s < s_count; ++s) {
        ag::Index arg = 0;
        const double v = seg_values.row(b * s_count + s).maxCoeff(&arg);
        best[static_cast<std::size_t>(s)] = v;
        best_col[static_cast<std::size_t>(s)] = arg;
      }
      sel = select_segments(best, k);
      for (auto s : sel.top) top_cols.push_back(best_col[static_cast<std::size_t>(s)]);
      terms.add(LossTerm::kNormalDir, loss_normal_dir(ag::slice_rows(seg_lik, b * s_count, s_count), f_count));
      terms.add(LossTerm::kNormalTop,
                loss_normal_top(ag::gather(scores.p_normal, frame_cells(sel.top, b, s_count, f_count, 0)), k, f_count));
      terms.add(LossTerm::kNormalTopDir,
                loss_normal_top_dir(ag::gather(seg_lik, segment_cells(sel.top, b, s_count, top_cols)), f_count));
    }
    if (trace != nullptr) {
      trace->selections.push_back(std::move(sel));
      trace->selected_class.push_back(static_cast<std::size_t>(top_cols.empty() ? 0 : top_cols.front()));
    }
  }

  const TotalLoss total = total_loss(terms, cfg.losses);
  ag::backward(total.total);
  const double lr = lr_at(state.step, state.total_steps, cfg.train);
  const double norm = state.optimizer.step(params, lr);
  model.normalizer = normalizer;
  ++state.step;
  if (trace != nullptr) {
    trace->lr = lr;
    trace->grad_norm = norm;
  }
  return total.report;
}

std::string log_header() {
  std::string h = "epoch,step,lr";
  for (std::size_t t = 0; t < kNumLossTerms; ++t) h += "," + std::string(loss_term_name(static_cast<LossTerm>(t)));
  return h + ",total";
}

std::string format_log_row(const LogRow& row) {
  std::ostringstream out;
  out.precision(17);
  out << row.epoch << ',' << row.step << ',' << row.lr;
  for (double v : row.report.terms) out << ',' << v;
  out << ',' << row.report.total;
  return out.str();
}

std::vector<LogRow> fit(TrainState& state, const TrainingSet& data, const FitOptions& options) {
  state.config.validate();
  state.total_steps = total_steps(state.config, data);
  std::vector<LogRow> log;
  const auto every = state.config.train.checkpoint_every;
  while (state.epoch < state.config.train.epochs) {
    const auto batches = draw_epoch(state, data);
    for (const auto& batch : batches) {
      LogRow row;
      row.epoch = state.epoch;
      row.step = state.step;
      row.lr = lr_at(state.step, state.total_steps, state.config.train);
      row.report = train_step(state, data, batch);
      if (options.on_step) options.on_step(row);
      log.push_back(row);
    }
    ++state.epoch;
    if (!options.checkpoint_dir.empty() && every > 0 && state.epoch % every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%04lld.vkc", static_cast<long long>(state.epoch));
      save_checkpoint(state, options.checkpoint_dir / name);
    }
    if (options.on_epoch) options.on_epoch(state);
  }
  return log;
}

namespace {

constexpr const char* kCheckpointFormat = "varkit-checkpoint-1";

std::string join_lines(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += s + "\n";
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  io::RecordFile f;
  f.put_bytes("format", kCheckpointFormat);
  f.put_bytes("config", to_json_string(state.config));
  f.put_bytes("class_names", join_lines(state.model.class_names));
  f.put_matrix("prototype.mean", ag::Matrix(state.model.prototype.mean));
  f.put_i64("prototype.n_frames", {static_cast<std::int64_t>(state.model.prototype.n_frames)});
  f.put_matrix("normalizer.running_mean", ag::Matrix(state.model.normalizer.running_mean));
  f.put_matrix("normalizer.running_var", ag::Matrix(state.model.normalizer.running_var));
  f.put_matrix("text.mixing", state.model.text.mixing());
  for (std::size_t c = 0; c < state.model.bank.class_tokens.size(); ++c) {
    f.put_matrix("class_tokens." + std::to_string(c), state.model.bank.class_tokens[c]);
  }
  for (const auto& p : state.model.trainable()) f.put_matrix("param/" + p.name, p.var.value());
  for (const auto& [name, m] : state.optimizer.first_moments()) f.put_matrix("adam.m/" + name, m);
  for (const auto& [name, v] : state.optimizer.second_moments()) f.put_matrix("adam.v/" + name, v);
  f.put_i64("state", {state.step, state.epoch, state.total_steps, state.optimizer.steps()});
  std::ostringstream rng;
  rng << state.rng;
  f.put_bytes("rng", rng.str());
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  f.save(path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const io::RecordFile f = io::RecordFile::load(path);
  try {
    if (!f.contains("format") || f.get_bytes("format") != kCheckpointFormat) {
      throw DataError("not a varkit checkpoint");
    }
    TrainState s;
    s.config = parse_config(f.get_bytes("config"), RunConfig{});
    NormalityPrototype proto;
    proto.mean = f.get_matrix("prototype.mean").row(0);
    proto.n_frames = static_cast<std::size_t>(f.get_i64("prototype.n_frames").at(0));
    s.model = make_model(s.config, split_lines(f.get_bytes("class_names")), std::move(proto));
    s.model.normalizer.running_mean = f.get_matrix("normalizer.running_mean").row(0);
    s.model.normalizer.running_var = f.get_matrix("normalizer.running_var").row(0);
    const ag::Matrix proj = f.get_matrix("param/text.projection");
    const ag::Matrix bias = f.get_matrix("param/text.projection_bias");
    s.model.text = ToyTextEncoder(f.get_matrix("text.mixing"), proj, bias);
    for (std::size_t c = 0; c < s.model.bank.class_tokens.size(); ++c) {
      s.model.bank.class_tokens[c] = f.get_matrix("class_tokens." + std::to_string(c));
    }
    std::map<std::string, ag::Matrix> m;
    std::map<std::string, ag::Matrix> v;
    for (auto& p : s.model.trainable()) {
      const ag::Matrix value = f.get_matrix("param/" + p.name);
      if (value.rows() != p.var.rows() || value.cols() != p.var.cols()) {
        throw DataError("checkpoint parameter '" + p.name + "' has the wrong shape");
      }
      p.var.mutable_value() = value;
      if (f.contains("adam.m/" + p.name)) {
        m[p.name] = f.get_matrix("adam.m/" + p.name);
        v[p.name] = f.get_matrix("adam.v/" + p.name);
      }
    }
    const auto st = f.get_i64("state");
    if (st.size() != 4) throw DataError("checkpoint state record is malformed");
    s.step = st[0];
    s.epoch = st[1];
    s.total_steps = st[2];
    s.optimizer = AdamW(s.config.train.optimizer);
    s.optimizer.restore(st[3], std::move(m), std::move(v));
    std::istringstream rng(f.get_bytes("rng"));
    rng >> s.rng;
    if (!rng) throw DataError("checkpoint rng state is malformed");
    return s;
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const std::exception& e) {
    throw DataError(path.string() + ": incompatible checkpoint: " + e.what());
  }
}

ScoreGrid score_video(const Model& model, const BagSpec& spec, const ag::Matrix& raw_features) {
  const InferencePlan plan = make_inference_plan(raw_features.rows(), spec);
  const ag::Matrix x = recenter_rows(raw_features, model.prototype);
  const ag::Index per_bag = spec.frames_per_bag();
  ag::Matrix stacked(plan.passes * per_bag, x.cols());
  for (std::int64_t j = 0; j < plan.passes; ++j) {
    const auto& idx = plan.padded_indices[static_cast<std::size_t>(j)];
    for (ag::Index r = 0; r < per_bag; ++r) {
      stacked.row(j * per_bag + r) = x.row(plan.source_frame(idx[static_cast<std::size_t>(r)]));
    }
  }
  const ag::Var xv(std::move(stacked));
  ProjectionNormalizer normalizer = model.normalizer;
  const ag::Var lik = selector_frame(xv, model.directions(), normalizer, Mode::kEval);
  const ag::Var p_a = model.temporal.forward(build_temporal_input(xv, lik, model.temporal.config()), plan.passes);
  const ScoreGrid padded = aggregate(p_a.value(), lik.value());

  const ag::Index n = raw_features.rows();
  const ag::Index c = padded.p_joint.cols();
  ScoreGrid out{ag::Matrix(n, 1), ag::Matrix(n, 1), ag::Matrix(n, c), ag::Matrix(n, c)};
  for (std::int64_t j = 0; j < plan.passes; ++j) {
    const auto& idx = plan.padded_indices[static_cast<std::size_t>(j)];
    for (ag::Index r = 0; r < per_bag; ++r) {
      const std::int64_t p = idx[static_cast<std::size_t>(r)];
      if (p >= n) continue;  // loop-padding copy
      const ag::Index src = j * per_bag + r;
      out.p_anomaly.row(p) = padded.p_anomaly.row(src);
      out.p_normal.row(p) = padded.p_normal.row(src);
      out.p_cond.row(p) = padded.p_cond.row(src);
      out.p_joint.row(p) = padded.p_joint.row(src);
    }
  }
  return out;
}

EvaluationReport evaluate(const FrameScorer& scorer, const std::vector<std::string>& class_names,
                          const VideoManifest& manifest, const FrameFeatureStore& store) {
  const auto videos = manifest.split(Split::kTest);
  if (videos.empty()) throw DataError("evaluate: the manifest has no test split");
  std::vector<double> p_a;
  std::vector<int> gt;
  std::vector<ag::Matrix> joints;
  ag::Index rows = 0;
  for (const auto* e : videos) {
    if (e->anomalous() && e->gt_intervals.empty()) {
      throw DataError("evaluate: anomalous test video '" + e->video_id + "' has no ground-truth intervals");
    }
    const ScoreGrid grid = scorer(*e, store.get(e->video_id));
    if (grid.p_anomaly.rows() != e->frame_count || grid.p_joint.rows() != e->frame_count ||
        grid.p_joint.cols() != static_cast<ag::Index>(class_names.size())) {
      throw ShapeError("evaluate: scores for '" + e->video_id + "' do not match its frames and classes");
    }
    const auto labels = frame_labels(*e, class_names);
    gt.insert(gt.end(), labels.begin(), labels.end());
    for (ag::Index i = 0; i < grid.p_anomaly.rows(); ++i) p_a.push_back(grid.p_anomaly(i, 0));
    rows += grid.p_joint.rows();
    joints.push_back(grid.p_joint);
  }
  ag::Matrix joint(rows, static_cast<ag::Index>(class_names.size()));
  ag::Index r = 0;
  for (const auto& m : joints) {
    joint.middleRows(r, m.rows()) = m;
    r += m.rows();
  }
  return var_report(joint, p_a, gt, class_names);
}

EvaluationReport evaluate(const Model& model, const BagSpec& spec, const VideoManifest& manifest,
                          const FrameFeatureStore& store) {
  const FrameScorer scorer = [&](const VideoEntry&, const ag::Matrix& raw) { return score_video(model, spec, raw); };
  return evaluate(scorer, model.class_names, manifest, store);
}

}  // namespace varkit
