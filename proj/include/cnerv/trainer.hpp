#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cnerv/bitstream.hpp"
#include "cnerv/config.hpp"
#include "cnerv/io.hpp"
#include "cnerv/log.hpp"
#include "cnerv/metrics.hpp"
#include "cnerv/model.hpp"

namespace cnerv {

struct Split {
  std::vector<Index> seen;
  std::vector<Index> unseen;
  std::vector<Index> index_of;  // frame id -> temporal index fed to the index baseline

  bool is_unseen(Index frame) const { return std::binary_search(unseen.begin(), unseen.end(), frame); }
};

/// Frames with id % period == phase are unseen. Shuffling permutes only the frame -> index map.
inline Split split(Index n, const SplitSpec& spec) {
  spec.validate();
  if (n < std::max<Index>(spec.period, 1)) {
    throw Error("split: " + std::to_string(n) + " frames is fewer than the holdout period " +
                std::to_string(spec.period));
  }
  Split s;
  for (Index i = 0; i < n; ++i) (spec.period > 0 && i % spec.period == spec.phase ? s.unseen : s.seen).push_back(i);
  s.index_of.resize(static_cast<std::size_t>(n));
  std::iota(s.index_of.begin(), s.index_of.end(), Index{0});
  if (spec.shuffle) {
    std::mt19937_64 rng(spec.seed);
    // Fisher-Yates with an explicit draw so the permutation does not depend on the standard library.
    for (Index i = n - 1; i > 0; --i) {
      const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(s.index_of[static_cast<std::size_t>(i)], s.index_of[static_cast<std::size_t>(j)]);
    }
  }
  return s;
}

/// Linear warmup over the first `warmup` fraction of steps, then cosine decay to zero.
inline double learning_rate(const OptimConfig& cfg, Index step, Index total) {
  if (total <= 0) return cfg.lr;
  const auto warm = static_cast<Index>(std::ceil(cfg.warmup * static_cast<double>(total)));
  if (step < warm) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const Index span = std::max<Index>(1, total - warm);
  const double progress = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(span));
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename Scalar>
struct AdamMoments {
  std::vector<typename Tensor<Scalar>::Vector> m;
  std::vector<typename Tensor<Scalar>::Vector> v;
  Index t = 0;

  void reset(const ModelParams<Scalar>& params) {
    m.clear();
    v.clear();
    for (const auto& [name, p] : params.tensors) {
      m.push_back(Tensor<Scalar>::Vector::Zero(p.size()));
      v.push_back(Tensor<Scalar>::Vector::Zero(p.size()));
    }
    t = 0;
  }
};

/// One Adam update from the accumulated gradients. Masked entries stay at zero.
template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, AdamMoments<Scalar>& moments, const OptimConfig& cfg, double lr,
               const std::map<std::string, std::vector<bool>>* masks = nullptr) {
  ++moments.t;
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, static_cast<double>(moments.t)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, static_cast<double>(moments.t)));
  const Scalar eps = static_cast<Scalar>(cfg.eps), step = static_cast<Scalar>(lr);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& [name, p] = params.tensors[i];
    const auto& g = p.grad();
    auto& m = moments.m[i];
    auto& v = moments.v[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    if (lr != 0.0) {
      p.mutable_data().array() -= step * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
    if (masks) {
      if (auto it = masks->find(name); it != masks->end()) {
        for (Index k = 0; k < p.size(); ++k)
          if (!it->second[static_cast<std::size_t>(k)]) p.mutable_data()[k] = Scalar(0);
      }
    }
  }
}

struct HistoryRow {
  Index step = 0;
  std::string split;  // "seen" or "unseen"
  Index frame_id = 0;
  double psnr = 0;
  double ms_ssim = 0;
  double loss = 0;
};

struct EvalSummary {
  Index epoch = 0;
  Index step = 0;
  double seen_psnr = 0;    // mean over seen frames
  double unseen_psnr = 0;  // mean over unseen frames; NaN when there are none
  double train_loss = 0;   // mean training loss over the epoch
};

template <typename Scalar>
struct TrainState {
  Index step = 0;
  Index epoch = 0;
  Index schedule_step = 0;  // position within the current learning-rate schedule
  Index schedule_total = 0;
  ModelParams<Scalar> params;
  AdamMoments<Scalar> moments;
  std::mt19937_64 rng;
  double best_seen = -std::numeric_limits<double>::infinity();
  double best_unseen = -std::numeric_limits<double>::infinity();
  std::vector<HistoryRow> history;
  std::vector<EvalSummary> summaries;
};

struct FrameEval {
  Index frame_id = 0;
  double psnr = 0;
  double ms_ssim = 0;
  double loss = 0;
};

struct EncodedFrame {
  Index frame_id = 0;
  Tensor<double> latent;  // (L, M, N)
  double psnr = 0;
  double seconds = 0;  // wall clock of the encoder pass
};

struct InterpolationResult {
  Index frame_id = 0;
  double interp_psnr = 0;  // decoded from 0.5 (z_{t-1} + z_{t+1})
  double true_psnr = 0;    // decoded from z_t
  double pixel_psnr = 0;   // 0.5 (frame_{t-1} + frame_{t+1})
  Tensor<double> decoded;
};

/// Seen-frame optimization with per-epoch evaluation on both splits.
template <typename Scalar>
class Trainer {
 public:
  using T = Tensor<Scalar>;

  Trainer(RunConfig run, const FrameDataset& data) : run_(std::move(run)), data_(data) {
    run_.validate();
    const Shape expect{run_.model.C, run_.model.H, run_.model.W};
    if (data_.size() == 0) throw Error("trainer: empty dataset");
    if (data_.frame_shape() != expect) {
      throw ShapeError("trainer: frames are " + shape_str(data_.frame_shape()) + " but the model expects " +
                       shape_str(expect));
    }
    split_ = split(data_.size(), run_.split);
    for (const auto& f : data_.frames) targets_.push_back(f.image.template cast<Scalar>());
    if (run_.model.kind == ModelKind::kCnerv) {
      for (const auto& t : targets_) raw_.push_back(raw_embedding(t, run_.model.cae));
    }
    state_.params = init_params<Scalar>(run_.model, run_.model.seed);
    state_.params.set_requires_grad(true);
    state_.moments.reset(state_.params);
    state_.rng.seed(run_.optim.seed);
    state_.schedule_total = run_.optim.epochs * static_cast<Index>(split_.seen.size());
  }

  const RunConfig& run() const { return run_; }
  const Split& frame_split() const { return split_; }
  const FrameDataset& data() const { return data_; }
  TrainState<Scalar>& state() { return state_; }
  const TrainState<Scalar>& state() const { return state_; }
  ModelParams<Scalar>& params() { return state_.params; }

  void set_masks(std::map<std::string, std::vector<bool>> masks) { masks_ = std::move(masks); }
  void set_epoch_callback(std::function<void(const EvalSummary&)> cb) { on_epoch_ = std::move(cb); }

  /// Model output for frame `id` under the current parameters (no gradient recording).
  T predict(Index id) const { return forward(id); }

  /// Decoder output for an explicit latent (CNeRV only).
  T decode_latent(const T& latent) const {
    require_cnerv("decode_latent");
    return cnerv_forward(latent, run_.model, state_.params);
  }

  T latent(Index id) const {
    require_cnerv("latent");
    return reduce_embedding(raw_.at(static_cast<std::size_t>(id)), state_.params);
  }

  /// Trains until `epochs` epochs (in total, counting resumed ones) have been completed.
  void train_until(Index epochs) {
    while (state_.epoch < epochs) run_epoch();
  }
  void train() { train_until(run_.optim.epochs); }

  /// One pass over the seen frames in a per-epoch shuffled order.
  void run_epoch() {
    std::vector<Index> order = split_.seen;
    for (Index i = static_cast<Index>(order.size()) - 1; i > 0; --i) {
      const auto j = static_cast<Index>(state_.rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    double loss_sum = 0;
    for (Index id : order) loss_sum += train_step(id);
    ++state_.epoch;
    if (state_.epoch % run_.optim.eval_every == 0 || state_.epoch == run_.optim.epochs) {
      auto summary = evaluate_all();
      summary.train_loss = loss_sum / static_cast<double>(order.size());
      if (on_epoch_) on_epoch_(summary);
    }
  }

  /// One optimizer step on frame `id`; returns the loss before the update.
  double train_step(Index id) {
    double value = 0;
    try {
      GradTape<Scalar> tape;
      state_.params.zero_grad();
      const T out = forward(id);
      const T l = loss(out, targets_[static_cast<std::size_t>(id)], run_.loss);
      value = static_cast<double>(l.item());
      if (!std::isfinite(value)) throw NumericalError("loss is not finite");
      tape.backward(l);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at step " + std::to_string(state_.step) + " (epoch " +
                           std::to_string(state_.epoch) + ", frame " + std::to_string(id) + "): " + e.what());
    }
    const double lr = learning_rate(run_.optim, state_.schedule_step, state_.schedule_total);
    adam_step(state_.params, state_.moments, run_.optim, lr, masks_.empty() ? nullptr : &masks_);
    ++state_.step;
    ++state_.schedule_step;
    return value;
  }

  FrameEval evaluate_frame(Index id) const {
    const auto& target = targets_[static_cast<std::size_t>(id)];
    const T out = forward(id);
    const T clamped = clamp01(out);
    return {id, psnr(clamped, target), ms_ssim(clamped, target, run_.loss).value,
            static_cast<double>(loss(out, target, run_.loss).item())};
  }

  /// Evaluates every frame, appends history rows, and updates the best PSNRs.
  EvalSummary evaluate_all() {
    EvalSummary s;
    s.epoch = state_.epoch;
    s.step = state_.step;
    s.seen_psnr = mean_psnr(split_.seen, "seen");
    s.unseen_psnr = split_.unseen.empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : mean_psnr(split_.unseen, "unseen");
    state_.best_seen = std::max(state_.best_seen, s.seen_psnr);
    if (!std::isnan(s.unseen_psnr)) state_.best_unseen = std::max(state_.best_unseen, s.unseen_psnr);
    state_.summaries.push_back(s);
    return s;
  }

  /// Restarts the learning-rate schedule and optimizer moments for `epochs` further epochs.
  void begin_finetune(Index epochs) {
    state_.moments.reset(state_.params);
    state_.schedule_step = 0;
    state_.schedule_total = epochs * static_cast<Index>(split_.seen.size());
  }

  /// Encodes frames with the frozen single-layer encoder and decodes them in one pass each.
  std::vector<EncodedFrame> encode_frames(const std::vector<Index>& ids) const {
    if (run_.model.kind != ModelKind::kCnerv) {
      throw Error("NeRV requires fine-tuning to encode unseen frames");
    }
    std::vector<EncodedFrame> out;
    for (Index id : ids) {
      const auto& target = targets_.at(static_cast<std::size_t>(id));
      const auto t0 = std::chrono::steady_clock::now();
      const auto grid = cnerv_encode(target, run_.model, state_.params, id);
      const auto t1 = std::chrono::steady_clock::now();
      const T decoded = clamp01(cnerv_forward(grid.values, run_.model, state_.params));
      EncodedFrame e;
      e.frame_id = id;
      e.latent = grid.values.template cast<double>();
      e.psnr = psnr(decoded, target);
      e.seconds = std::chrono::duration<double>(t1 - t0).count();
      log_info("encoded frame " + std::to_string(id) + " in " + std::to_string(e.seconds * 1e3) + " ms, PSNR " +
               std::to_string(e.psnr));
      out.push_back(std::move(e));
    }
    return out;
  }
  std::vector<EncodedFrame> encode_unseen() const { return encode_frames(split_.unseen); }

  /// Unseen frames whose two temporal neighbours are both seen.
  std::vector<Index> interpolation_candidates() const {
    std::vector<Index> out;
    for (Index t : split_.unseen)
      if (interpolation_eligible(t)) out.push_back(t);
    return out;
  }

  InterpolationResult interpolate(Index t) const {
    require_cnerv("interpolate");
    if (!interpolation_eligible(t)) {
      throw Error("interpolate: frame " + std::to_string(t) + " needs seen neighbours " + std::to_string(t - 1) +
                  " and " + std::to_string(t + 1));
    }
    const auto& target = targets_[static_cast<std::size_t>(t)];
    const T prev = latent(t - 1), next = latent(t + 1);
    const T mid(prev.shape(), (prev.data() + next.data()) * Scalar(0.5));
    InterpolationResult r;
    r.frame_id = t;
    const T decoded = clamp01(decode_latent(mid));
    r.interp_psnr = psnr(decoded, target);
    r.true_psnr = psnr(clamp01(decode_latent(latent(t))), target);
    const auto& a = targets_[static_cast<std::size_t>(t - 1)];
    const auto& b = targets_[static_cast<std::size_t>(t + 1)];
    r.pixel_psnr = psnr(T(a.shape(), (a.data() + b.data()) * Scalar(0.5)), target);
    r.decoded = decoded.template cast<double>();
    return r;
  }

  void write_history_csv(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    f << "step,split,frame_id,psnr,ms_ssim,loss\n" << std::setprecision(10);
    for (const auto& r : state_.history)
      f << r.step << ',' << r.split << ',' << r.frame_id << ',' << r.psnr << ',' << r.ms_ssim << ',' << r.loss << '\n';
  }

  Container checkpoint() const {
    Container c;
    c.meta = {{"type", "checkpoint"},
              {"scalar", sizeof(Scalar) == 4 ? "f32" : "f64"},
              {"run", to_json(run_)},
              {"step", state_.step},
              {"epoch", state_.epoch},
              {"schedule_step", state_.schedule_step},
              {"schedule_total", state_.schedule_total},
              {"adam_t", state_.moments.t},
              {"rng", rng_string()},
              {"best_seen", std::bit_cast<std::uint64_t>(state_.best_seen)},
              {"best_unseen", std::bit_cast<std::uint64_t>(state_.best_unseen)}};
    c.manifest_digest = data_.digest();
    c.split_digest = split_digest(run_.split);
    for (std::size_t i = 0; i < state_.params.tensors.size(); ++i) {
      const auto& [name, p] = state_.params.tensors[i];
      c.tensors.push_back(raw_record(name, p));
      c.tensors.push_back(raw_record("adam.m." + name, T(p.shape(), state_.moments.m[i])));
      c.tensors.push_back(raw_record("adam.v." + name, T(p.shape(), state_.moments.v[i])));
    }
    for (const auto& [name, mask] : masks_) {
      std::vector<double> ones(mask.size(), 1.0);
      auto r = quantized_record("mask." + name, Shape{static_cast<Index>(mask.size())}, ones, 1, mask);
      c.tensors.push_back(std::move(r));
    }
    return c;
  }

  void save_checkpoint(const std::filesystem::path& path) const { write_file_atomic(path, serialize(checkpoint())); }

  /// Restores a checkpoint written by a trainer over the same data and split.
  void restore(const Container& c) {
    if (c.meta.value("type", "") != "checkpoint") throw FormatError("container is not a training checkpoint");
    if (c.meta.at("scalar") != (sizeof(Scalar) == 4 ? "f32" : "f64")) {
      throw FormatError("checkpoint scalar type does not match this trainer");
    }
    if (c.manifest_digest != data_.digest()) throw FormatError("checkpoint was trained on a different frame set");
    if (c.split_digest != split_digest(run_.split)) throw FormatError("checkpoint uses a different split");
    std::map<std::string, const TensorRecord*> by_name;
    for (const auto& r : c.tensors) by_name[r.name] = &r;
    auto fetch = [&](const std::string& name, const Shape& shape) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("checkpoint is missing tensor " + name);
      if (it->second->shape != shape) throw FormatError("checkpoint tensor " + name + " has the wrong shape");
      return record_tensor<Scalar>(*it->second);
    };
    for (std::size_t i = 0; i < state_.params.tensors.size(); ++i) {
      auto& [name, p] = state_.params.tensors[i];
      p.mutable_data() = fetch(name, p.shape()).data();
      state_.moments.m[i] = fetch("adam.m." + name, p.shape()).data();
      state_.moments.v[i] = fetch("adam.v." + name, p.shape()).data();
    }
    masks_.clear();
    for (const auto& r : c.tensors) {
      if (r.name.rfind("mask.", 0) == 0) masks_[r.name.substr(5)] = r.mask.empty() ? std::vector<bool>(
                                                                          static_cast<std::size_t>(shape_size(r.shape)), true)
                                                                                    : r.mask;
    }
    state_.step = c.meta.at("step").get<Index>();
    state_.epoch = c.meta.at("epoch").get<Index>();
    state_.schedule_step = c.meta.at("schedule_step").get<Index>();
    state_.schedule_total = c.meta.at("schedule_total").get<Index>();
    state_.moments.t = c.meta.at("adam_t").get<Index>();
    std::istringstream rng_in(c.meta.at("rng").get<std::string>());
    rng_in >> state_.rng;
    state_.best_seen = std::bit_cast<double>(c.meta.at("best_seen").get<std::uint64_t>());
    state_.best_unseen = std::bit_cast<double>(c.meta.at("best_unseen").get<std::uint64_t>());
  }

  void load_checkpoint(const std::filesystem::path& path) { restore(parse_container(read_file(path))); }

  /// Sets parameters from outside (for example after dequantization); gradients stay enabled.
  void set_params(const ModelParams<Scalar>& params) {
    for (auto& [name, p] : state_.params.tensors) {
      const auto& src = params.at(name);
      if (src.shape() != p.shape()) throw ShapeError("set_params: shape mismatch for " + name);
      p.mutable_data() = src.data();
    }
  }

 private:
  void require_cnerv(const char* op) const {
    if (run_.model.kind != ModelKind::kCnerv) throw Error(std::string(op) + " requires a CNeRV model");
  }

  bool interpolation_eligible(Index t) const {
    return split_.is_unseen(t) && t >= 1 && t + 1 < data_.size() && !split_.is_unseen(t - 1) &&
           !split_.is_unseen(t + 1);
  }

  T forward(Index id) const {
    if (run_.model.kind == ModelKind::kCnerv) {
      return cnerv_forward(reduce_embedding(raw_.at(static_cast<std::size_t>(id)), state_.params), run_.model,
                           state_.params);
    }
    return nerv_forward(frame_time(split_.index_of.at(static_cast<std::size_t>(id)), data_.size()), run_.model,
                        state_.params);
  }

  double mean_psnr(const std::vector<Index>& ids, const char* label) {
    double acc = 0;
    for (Index id : ids) {
      const auto e = evaluate_frame(id);
      state_.history.push_back({state_.step, label, id, e.psnr, e.ms_ssim, e.loss});
      acc += e.psnr;
    }
    return acc / static_cast<double>(ids.size());
  }

  std::string rng_string() const {
    std::ostringstream out;
    out << state_.rng;
    return out.str();
  }

  RunConfig run_;
  const FrameDataset& data_;
  Split split_;
  std::vector<T> targets_;
  std::vector<T> raw_;
  TrainState<Scalar> state_;
  std::map<std::string, std::vector<bool>> masks_;
  std::function<void(const EvalSummary&)> on_epoch_;
};

/// Box-downsample by `factor`, then bicubic upsample back to the source size.
inline Tensor<double> bicubic_baseline(const Tensor<double>& image, Index factor) {
  return clamp01(resize_bicubic(box_downsample(image, factor), image.dim(1), image.dim(2)));
}

}  // namespace cnerv
