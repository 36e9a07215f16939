// Command-line front end: training, coding, metrics and analysis over frame directories.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cnerv/analysis.hpp"
#include "cnerv/compress.hpp"
#include "cnerv/config.hpp"
#include "cnerv/io.hpp"
#include "cnerv/log.hpp"
#include "cnerv/trainer.hpp"

namespace fs = std::filesystem;
using namespace cnerv;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::optional<Index> split_period;
  std::optional<Index> split_phase;
  bool shuffle_index = false;
  std::optional<int> bits_model;
  std::optional<int> bits_embed;
  std::optional<double> prune_ratio;
  std::optional<std::string> model;
  bool quiet = false;
};

struct DataFlags {
  std::string frames;
  std::string synth;
  std::optional<Index> epochs;
};

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

fs::path out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

/// Merges the config document, the chosen model kind and the flag overrides.
RunConfig resolve_run(const Common& c, const DataFlags* data = nullptr) {
  json doc = json::object();
  if (!c.config.empty()) {
    std::ifstream f(c.config);
    if (!f) throw ConfigError("cannot open config " + c.config);
    try {
      doc = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("config " + c.config + " is not valid JSON: " + e.what());
    }
  }
  const bool has_model = doc.is_object() && doc.contains("model");
  RunConfig run = run_config_from_json(doc);
  if (c.model) {
    const auto kind = model_kind_from_string(*c.model);
    if (!has_model) {
      run.model = kind == ModelKind::kNerv ? toy_nerv_config() : toy_cnerv_config();
    } else if (doc["model"].contains("kind") && run.model.kind != kind) {
      throw UsageError("--model " + *c.model + " conflicts with model.kind in " + c.config);
    }
    run.model.kind = kind;
  }
  if (c.seed) {
    run.model.seed = *c.seed;
    run.optim.seed = *c.seed;
    run.split.seed = *c.seed;
    run.data.seed = *c.seed;
  }
  if (c.split_period) run.split.period = *c.split_period;
  if (c.split_phase) {
    if (run.split.period == 0) throw UsageError("--split-phase has no effect when the split period is 0");
    run.split.phase = *c.split_phase;
  }
  if (c.shuffle_index) {
    if (run.model.kind != ModelKind::kNerv) throw UsageError("--shuffle-index applies only to --model nerv");
    run.split.shuffle = true;
  }
  if (c.bits_model) run.compression.bits_model = *c.bits_model;
  if (c.bits_embed) run.compression.bits_embed = *c.bits_embed;
  if (c.prune_ratio) run.compression.prune_ratio = *c.prune_ratio;
  if (data) {
    if (!data->frames.empty()) run.data.frames_dir = data->frames;
    if (!data->synth.empty()) {
      run.data.frames_dir.clear();
      run.data.synth_kind = data->synth;
    }
    if (data->epochs) run.optim.epochs = *data->epochs;
  }
  run.validate();
  return run;
}

void reject_run_flags(const Common& c) {
  std::vector<std::string> given;
  if (!c.config.empty()) given.push_back("--config");
  if (c.model) given.push_back("--model");
  if (c.seed) given.push_back("--seed");
  if (c.split_period) given.push_back("--split-period");
  if (c.split_phase) given.push_back("--split-phase");
  if (c.shuffle_index) given.push_back("--shuffle-index");
  if (!given.empty()) {
    throw UsageError(given.front() + " conflicts with --checkpoint, which fixes the run configuration");
  }
}

FrameDataset make_dataset(const RunConfig& run) {
  FrameDataset data = run.data.frames_dir.empty()
                          ? synth_toy_video(toy_kind_from_string(run.data.synth_kind), run.data.frames,
                                            run.data.height, run.data.width, run.data.seed)
                          : load_frames(run.data.frames_dir);
  const auto shape = data.frame_shape();
  const Index crop_h = run.data.crop_h > 0 ? run.data.crop_h : shape[1];
  const Index crop_w = run.data.crop_w > 0 ? run.data.crop_w : shape[2];
  if (crop_h != shape[1] || crop_w != shape[2] || run.data.downsample != 1) {
    data = preprocess(data, crop_h, crop_w, run.data.downsample);
  }
  return data;
}

void log_config(const RunConfig& run) { log_info("resolved config: " + to_json(run).dump()); }

/// A trained model restored from a checkpoint together with the data it was trained on.
struct Restored {
  RunConfig run;
  std::unique_ptr<FrameDataset> data;
  std::unique_ptr<Trainer<float>> trainer;
};

Restored restore_checkpoint(const std::string& path, const Common& c) {
  reject_run_flags(c);
  const auto container = parse_container(read_file(path));
  if (container.meta.value("type", "") != "checkpoint") throw FormatError(path + " is not a training checkpoint");
  Restored r;
  r.run = run_config_from_json(container.meta.at("run"));
  if (c.bits_model) r.run.compression.bits_model = *c.bits_model;
  if (c.bits_embed) r.run.compression.bits_embed = *c.bits_embed;
  if (c.prune_ratio) r.run.compression.prune_ratio = *c.prune_ratio;
  r.run.validate();
  log_config(r.run);
  r.data = std::make_unique<FrameDataset>(make_dataset(r.run));
  r.trainer = std::make_unique<Trainer<float>>(r.run, *r.data);
  r.trainer->restore(container);
  return r;
}

std::vector<Index> all_frames(Index n) {
  std::vector<Index> ids(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  return ids;
}

// ---------------------------------------------------------------------------

int cmd_train(const Common& c, const DataFlags& d) {
  const RunConfig run = resolve_run(c, &d);
  log_config(run);
  write_text(out_path(c, "config.json"), to_json(run).dump(2) + "\n");
  const auto data = make_dataset(run);
  Trainer<float> trainer(run, data);
  std::ostringstream epochs;
  epochs << "epoch,step,seen_psnr,unseen_psnr,train_loss\n";
  trainer.set_epoch_callback([&](const EvalSummary& s) {
    epochs << s.epoch << ',' << s.step << ',' << fmt(s.seen_psnr) << ',' << fmt(s.unseen_psnr) << ','
           << fmt(s.train_loss) << '\n';
    log_info("epoch " + std::to_string(s.epoch) + " seen " + fmt(s.seen_psnr) + " dB, unseen " +
             fmt(s.unseen_psnr) + " dB, loss " + fmt(s.train_loss));
  });
  trainer.train();
  trainer.save_checkpoint(out_path(c, "checkpoint.ckpt"));
  trainer.write_history_csv(out_path(c, "history.csv"));
  write_text(out_path(c, "epochs.csv"), epochs.str());
  const auto& s = trainer.state();
  std::cout << "trained " << to_string(run.model.kind) << " (" << param_count(run.model) << " params) for "
            << s.epoch << " epochs; best seen " << fmt(s.best_seen) << " dB, best unseen " << fmt(s.best_unseen)
            << " dB\n";
  return 0;
}

int cmd_encode(const Common& c, const std::string& ckpt, bool all) {
  auto r = restore_checkpoint(ckpt, c);
  const auto ids = all ? all_frames(r.data->size()) : r.trainer->frame_split().unseen;
  const auto frames = r.trainer->encode_frames(ids);
  const auto params = r.trainer->params().cast<double>();
  ArtifactInput in;
  in.model = r.run.model;
  in.bits_embed = r.run.compression.bits_embed;
  in.manifest_digest = r.data->digest();
  in.split_digest = split_digest(r.run.split);
  in.model_digest = model_digest(r.run.model, params);
  std::ostringstream csv;
  csv << "frame_id,psnr,psnr_quantized,encode_ms\n";
  for (const auto& f : frames) {
    in.embeddings.emplace_back(static_cast<std::uint32_t>(f.frame_id), f.latent);
    const auto decoded = clamp01(cnerv_forward(quantize_latent(f.latent, in.bits_embed), r.run.model, params));
    const double pq = psnr(decoded, r.data->frames[static_cast<std::size_t>(f.frame_id)].image);
    csv << f.frame_id << ',' << fmt(f.psnr) << ',' << fmt(pq) << ',' << fmt(f.seconds * 1e3) << '\n';
  }
  const auto container = build_artifact(in);
  const auto bytes = serialize(container);
  write_file_atomic(out_path(c, "embeddings.cnrv"), bytes);
  write_text(out_path(c, "encode.csv"), csv.str());
  const auto sizes = artifact_sizes(container, r.run.model.H, r.run.model.W);
  std::cout << "encoded " << frames.size() << " frames into " << bytes.size() << " bytes ("
            << fmt(sizes.bpp_embedding) << " bpp)\n";
  return 0;
}

int cmd_compress(const Common& c, const std::string& ckpt) {
  auto r = restore_checkpoint(ckpt, c);
  auto& t = *r.trainer;
  const auto& comp = r.run.compression;
  MaskMap masks;
  if (comp.prune_ratio > 0) {
    auto pruned = t.params().cast<double>();
    masks = prune(pruned, comp.prune_ratio);
    t.set_params(pruned.cast<float>());
    if (comp.finetune_epochs > 0) {
      t.set_masks(masks);
      t.begin_finetune(comp.finetune_epochs);
      t.train_until(t.state().epoch + comp.finetune_epochs);
    }
    t.save_checkpoint(out_path(c, "pruned.ckpt"));
  }
  const auto params = t.params().cast<double>();
  ArtifactInput in;
  in.model = r.run.model;
  in.params = &params;
  in.masks = masks;
  in.bits_model = comp.bits_model;
  in.bits_embed = comp.bits_embed;
  in.manifest_digest = r.data->digest();
  in.split_digest = split_digest(r.run.split);
  in.model_digest = model_digest(r.run.model, params);
  const auto& split = t.frame_split();
  in.extra = {{"frames", r.data->size()}, {"index_of", split.index_of}};
  if (r.run.model.kind == ModelKind::kCnerv) {
    for (Index id = 0; id < r.data->size(); ++id) {
      in.embeddings.emplace_back(static_cast<std::uint32_t>(id), t.latent(id).cast<double>());
    }
  }
  const auto container = build_artifact(in);
  const auto bytes = serialize(container);
  write_file_atomic(out_path(c, "model.cnrv"), bytes);

  // Quality of the decoded artifact, split by seen and unseen frames.
  const auto decoded = decode_artifact(container);
  double seen = 0, unseen = 0;
  for (Index id = 0; id < r.data->size(); ++id) {
    Tensor<double> out;
    if (r.run.model.kind == ModelKind::kCnerv) {
      out = cnerv_forward(decoded.embeddings[static_cast<std::size_t>(id)].second, decoded.model, decoded.params);
    } else {
      out = nerv_forward(frame_time(split.index_of[static_cast<std::size_t>(id)], r.data->size()), decoded.model,
                         decoded.params);
    }
    const double p = psnr(clamp01(out), r.data->frames[static_cast<std::size_t>(id)].image);
    (split.is_unseen(id) ? unseen : seen) += p;
  }
  seen /= static_cast<double>(split.seen.size());
  unseen = split.unseen.empty() ? std::nan("") : unseen / static_cast<double>(split.unseen.size());
  const auto sizes = artifact_sizes(container, r.run.model.H, r.run.model.W);
  std::ostringstream csv;
  csv << "model,params,bits_model,bits_embed,prune_ratio,total_bytes,model_bytes,embedding_bytes,frames,bpp_total,"
         "bpp_embedding,seen_psnr,unseen_psnr\n"
      << to_string(r.run.model.kind) << ',' << param_count(r.run.model) << ',' << comp.bits_model << ','
      << comp.bits_embed << ',' << fmt(comp.prune_ratio) << ',' << sizes.total_bytes << ',' << sizes.model_bytes
      << ',' << sizes.embedding_bytes << ',' << r.data->size() << ','
      << fmt(bits_per_pixel(sizes.total_bytes, r.data->size(), r.run.model.H, r.run.model.W)) << ','
      << fmt(sizes.bpp_embedding) << ',' << fmt(seen) << ',' << fmt(unseen) << '\n';
  write_text(out_path(c, "compress.csv"), csv.str());
  std::cout << csv.str();
  return 0;
}

DecodedArtifact load_artifact(const std::string& path) { return decode_artifact(parse_container(read_file(path))); }

int cmd_decompress(const Common& c, const std::string& artifact) {
  const auto d = load_artifact(artifact);
  Container raw;
  raw.meta = {{"type", "decompressed"}, {"model", to_json(d.model)}, {"source", d.meta}};
  raw.manifest_digest = d.manifest_digest;
  raw.split_digest = d.split_digest;
  raw.model_digest = d.model_digest;
  std::ostringstream csv;
  csv << "kind,name,shape,count\n";
  auto shape_of = [](const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
  };
  for (const auto& [name, t] : d.params.tensors) {
    raw.tensors.push_back(raw_record(name, t));
    csv << "param," << name << ',' << shape_of(t.shape()) << ',' << t.size() << '\n';
  }
  for (const auto& [id, z] : d.embeddings) {
    raw.embeddings.push_back({id, raw_record("z", z)});
    csv << "embedding," << id << ',' << shape_of(z.shape()) << ',' << z.size() << '\n';
  }
  write_file_atomic(out_path(c, "decompressed.cnrv"), serialize(raw));
  write_text(out_path(c, "decompress.csv"), csv.str());
  std::cout << "decompressed " << d.params.tensors.size() << " tensors and " << d.embeddings.size()
            << " embeddings\n";
  return 0;
}

int cmd_decode(const Common& c, const std::string& artifact, const std::string& embeddings_path) {
  const auto model = load_artifact(artifact);
  if (!model.has_model) throw Error(artifact + " holds no model parameters");
  auto embeddings = model.embeddings;
  if (!embeddings_path.empty()) {
    const auto e = load_artifact(embeddings_path);
    if (e.model_digest != model.model_digest) {
      throw Error("refusing to decode: " + embeddings_path + " was encoded by a different model than " + artifact);
    }
    if (e.manifest_digest != model.manifest_digest) {
      throw Error("refusing to decode: " + embeddings_path + " and " + artifact + " come from different frame sets");
    }
    embeddings = e.embeddings;
  }
  std::size_t written = 0;
  char name[32];
  if (model.model.kind == ModelKind::kCnerv) {
    for (const auto& [id, z] : embeddings) {
      std::snprintf(name, sizeof(name), "frame_%05u.png", id);
      write_image(out_path(c, name), clamp01(cnerv_forward(z, model.model, model.params)));
      ++written;
    }
  } else {
    if (!embeddings_path.empty()) throw UsageError("--embeddings applies only to CNeRV artifacts");
    const auto extra = model.meta.at("extra");
    const Index n = extra.at("frames").get<Index>();
    const auto index_of = extra.at("index_of").get<std::vector<Index>>();
    for (Index id = 0; id < n; ++id) {
      std::snprintf(name, sizeof(name), "frame_%05lld.png", static_cast<long long>(id));
      const double t = frame_time(index_of.at(static_cast<std::size_t>(id)), n);
      write_image(out_path(c, name), clamp01(nerv_forward(t, model.model, model.params)));
      ++written;
    }
  }
  std::cout << "decoded " << written << " frames to " << c.out_dir << "\n";
  return 0;
}

int cmd_metrics(const Common& c, const std::string& pred, const std::string& ref) {
  const auto a = load_frames(pred), b = load_frames(ref);
  if (a.size() != b.size()) {
    throw Error("metrics: " + pred + " has " + std::to_string(a.size()) + " frames, " + ref + " has " +
                std::to_string(b.size()));
  }
  std::ostringstream csv;
  csv << "frame_id,psnr,ms_ssim\n";
  double mse_sum = 0, ssim_sum = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const auto& x = a.frames[static_cast<std::size_t>(i)].image;
    const auto& y = b.frames[static_cast<std::size_t>(i)].image;
    const double m = mse(x, y), s = ms_ssim(x, y).value;
    mse_sum += m;
    ssim_sum += s;
    csv << i << ',' << fmt(psnr_from_mse(m)) << ',' << fmt(s) << '\n';
  }
  csv << "mean," << fmt(psnr_from_mse(mse_sum / static_cast<double>(a.size()))) << ','
      << fmt(ssim_sum / static_cast<double>(a.size())) << '\n';
  write_text(out_path(c, "metrics.csv"), csv.str());
  std::cout << csv.str();
  return 0;
}

EmbeddingMatrix embedding_matrix(const Restored& r) {
  const Index n = r.data->size();
  const auto& split = r.trainer->frame_split();
  EmbeddingMatrix e;
  for (Index id = 0; id < n; ++id) {
    Eigen::VectorXd row;
    if (r.run.model.kind == ModelKind::kCnerv) {
      row = r.trainer->latent(id).data().cast<double>();
    } else {
      row = positional_encoding<double>(frame_time(split.index_of[static_cast<std::size_t>(id)], n), r.run.model.pos)
                .data();
    }
    if (id == 0) e.values.resize(n, row.size());
    e.values.row(id) = row.transpose();
    e.labels.push_back(split.is_unseen(id) ? SplitLabel::kUnseen : SplitLabel::kSeen);
  }
  return e;
}

int cmd_analyze(const Common& c, const std::vector<std::string>& ckpts) {
  std::ostringstream csv;
  csv << "index,checkpoint,model,rows,cols,uniformity,neighbor_distance,normalized_distance\n";
  std::vector<Eigen::MatrixXd> mats;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < ckpts.size(); ++k) {
    const auto r = restore_checkpoint(ckpts[k], c);
    const auto e = embedding_matrix(r);
    const auto stem = "embeddings_" + std::to_string(k);
    write_embedding_table(out_path(c, stem + ".cemb"), e);
    write_embedding_csv(out_path(c, stem + ".csv"), e);
    csv << k << ',' << ckpts[k] << ',' << to_string(r.run.model.kind) << ',' << e.values.rows() << ','
        << e.values.cols() << ',' << fmt(uniformity(e, r.run.analysis)) << ',' << fmt(neighbor_distance(e)) << ','
        << fmt(normalized_distance(e)) << '\n';
    mats.push_back(e.values);
    names.push_back(std::to_string(k) + ":" + to_string(r.run.model.kind));
  }
  write_text(out_path(c, "analysis.csv"), csv.str());
  if (mats.size() > 1) write_cka_csv(out_path(c, "cka.csv"), names, cka_grid(mats));
  std::cout << csv.str();
  return 0;
}

int cmd_interpolate(const Common& c, const std::string& ckpt) {
  const auto r = restore_checkpoint(ckpt, c);
  const auto candidates = r.trainer->interpolation_candidates();
  if (candidates.empty()) throw Error("interpolate: no unseen frame has two seen neighbours");
  std::ostringstream csv;
  csv << "frame_id,interp_psnr,true_psnr,pixel_psnr\n";
  char name[40];
  for (Index t : candidates) {
    const auto res = r.trainer->interpolate(t);
    csv << t << ',' << fmt(res.interp_psnr) << ',' << fmt(res.true_psnr) << ',' << fmt(res.pixel_psnr) << '\n';
    std::snprintf(name, sizeof(name), "interp_%05lld.png", static_cast<long long>(t));
    write_image(out_path(c, name), res.decoded);
  }
  write_text(out_path(c, "interpolate.csv"), csv.str());
  std::cout << csv.str();
  return 0;
}

int cmd_sweep(const Common& c, const DataFlags& d) {
  const RunConfig base = resolve_run(c, &d);
  if (base.model.kind != ModelKind::kCnerv) throw UsageError("sweep covers CNeRV embedding knobs; use --model cnerv");
  log_config(base);
  write_text(out_path(c, "config.json"), to_json(base).dump(2) + "\n");
  const auto data = make_dataset(base);
  const auto& s = base.sweep;
  const std::vector<double> bs = s.b.empty() ? std::vector<double>{base.model.cae.b} : s.b;
  const std::vector<Index> pqs = s.pq.empty() ? std::vector<Index>{base.model.cae.P} : s.pq;
  const auto grids = s.grid.empty() ? std::vector<std::pair<Index, Index>>{{base.model.cae.M, base.model.cae.N}} : s.grid;
  const std::vector<Index> Ls = s.L.empty() ? std::vector<Index>{base.model.L} : s.L;
  const std::vector<int> bits = s.bits_embed.empty() ? std::vector<int>{base.compression.bits_embed} : s.bits_embed;

  std::ostringstream csv;
  csv << "b,P,Q,M,N,L,bits_embed,params,seen_psnr,unseen_psnr,coded_unseen_psnr,bpp_embedding\n";
  for (double b : bs)
    for (Index pq : pqs)
      for (const auto& [m, n] : grids)
        for (Index L : Ls) {
          RunConfig run = base;
          run.model.cae.b = b;
          run.model.cae.P = pq;
          run.model.cae.Q = pq;
          run.model.cae.M = m;
          run.model.cae.N = n;
          run.model.L = L;
          run.validate();
          log_info("sweep cell b=" + fmt(b) + " P=Q=" + std::to_string(pq) + " grid=" + std::to_string(m) + "x" +
                   std::to_string(n) + " L=" + std::to_string(L));
          Trainer<float> t(run, data);
          t.train();
          const auto summary = t.evaluate_all();
          const auto qparams = quantize_params(t.params().cast<double>(), run.compression.bits_model);
          const auto& unseen = t.frame_split().unseen;
          for (int bit : bits) {
            ArtifactInput in;
            in.model = run.model;
            in.bits_embed = bit;
            double coded = 0;
            for (Index id : unseen) {
              const auto z = t.latent(id).cast<double>();
              in.embeddings.emplace_back(static_cast<std::uint32_t>(id), z);
              const auto out = clamp01(cnerv_forward(quantize_latent(z, bit), run.model, qparams));
              coded += psnr(out, data.frames[static_cast<std::size_t>(id)].image);
            }
            coded = unseen.empty() ? std::nan("") : coded / static_cast<double>(unseen.size());
            const auto sizes = artifact_sizes(build_artifact(in), run.model.H, run.model.W);
            csv << fmt(b) << ',' << pq << ',' << pq << ',' << m << ',' << n << ',' << L << ',' << bit << ','
                << param_count(run.model) << ',' << fmt(summary.seen_psnr) << ',' << fmt(summary.unseen_psnr) << ','
                << fmt(coded) << ',' << fmt(sizes.bpp_embedding) << '\n';
          }
        }
  write_text(out_path(c, "sweep.csv"), csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CNeRV and NeRV video representations: train, code, evaluate and analyze"};
  app.require_subcommand(1);
  Common c;
  app.add_option("--config", c.config, "JSON run-config document")->check(CLI::ExistingFile);
  app.add_option("--seed", c.seed, "seed for model init, optimizer, split shuffle and synthetic data");
  app.add_option("--out-dir", c.out_dir, "directory for reports and outputs");
  app.add_option("--split-period", c.split_period, "hold out one frame in every N (0: no holdout)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--split-phase", c.split_phase, "residue of the held-out frames")->check(CLI::NonNegativeNumber);
  app.add_flag("--shuffle-index", c.shuffle_index, "permute the frame-to-index assignment (NeRV only)");
  app.add_option("--bits-model", c.bits_model, "quantization bits for model parameters")->check(CLI::Range(1, 32));
  app.add_option("--bits-embed", c.bits_embed, "quantization bits for embeddings")->check(CLI::Range(1, 32));
  app.add_option("--prune-ratio", c.prune_ratio, "fraction of weights pruned by magnitude")
      ->check(CLI::Range(0.0, 0.999999));
  app.add_option("--model", c.model, "model kind")->check(CLI::IsMember({"cnerv", "nerv"}));
  app.add_flag("--quiet", c.quiet, "only log warnings and errors");

  DataFlags data;
  auto add_data = [&](CLI::App* sub) {
    auto* frames = sub->add_option("--frames", data.frames, "directory of numbered PNG/PPM frames")
                       ->check(CLI::ExistingDirectory);
    auto* synth = sub->add_option("--synth", data.synth, "synthesize a toy video")
                      ->check(CLI::IsMember({"moving-gradient", "bouncing-rect", "static"}));
    frames->excludes(synth);
    sub->add_option("--epochs", data.epochs, "training epochs")->check(CLI::NonNegativeNumber);
  };

  std::string ckpt, artifact, embeddings, pred, ref;
  std::vector<std::string> ckpts;
  bool all = false;

  auto* train = app.add_subcommand("train", "fit a model on the seen frames");
  add_data(train);
  auto* encode = app.add_subcommand("encode", "embed frames with the trained encoder");
  encode->add_option("--checkpoint", ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
  encode->add_flag("--all", all, "encode every frame instead of the unseen split");
  auto* decode = app.add_subcommand("decode", "reconstruct frames from a compressed artifact");
  decode->add_option("--artifact", artifact, "compressed model artifact")->required()->check(CLI::ExistingFile);
  decode->add_option("--embeddings", embeddings, "embeddings artifact from encode")->check(CLI::ExistingFile);
  auto* compress = app.add_subcommand("compress", "prune, quantize and entropy-code a trained model");
  compress->add_option("--checkpoint", ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
  auto* decompress = app.add_subcommand("decompress", "expand an artifact into raw tensors");
  decompress->add_option("--artifact", artifact, "compressed artifact")->required()->check(CLI::ExistingFile);
  auto* metrics = app.add_subcommand("metrics", "PSNR and MS-SSIM between two frame directories");
  metrics->add_option("--pred", pred, "predicted frames")->required()->check(CLI::ExistingDirectory);
  metrics->add_option("--ref", ref, "reference frames")->required()->check(CLI::ExistingDirectory);
  auto* analyze = app.add_subcommand("analyze", "embedding uniformity, distances and CKA");
  analyze->add_option("--checkpoint", ckpts, "training checkpoints")->required()->check(CLI::ExistingFile);
  auto* interpolate = app.add_subcommand("interpolate", "decode averaged neighbour embeddings");
  interpolate->add_option("--checkpoint", ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
  auto* sweep = app.add_subcommand("sweep", "train over a grid of embedding settings");
  add_data(sweep);
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (c.quiet) log_level() = LogLevel::kWarn;

  try {
    if (*train) return cmd_train(c, data);
    if (*encode) return cmd_encode(c, ckpt, all);
    if (*decode) return cmd_decode(c, artifact, embeddings);
    if (*compress) return cmd_compress(c, ckpt);
    if (*decompress) return cmd_decompress(c, artifact);
    if (*metrics) return cmd_metrics(c, pred, ref);
    if (*analyze) return cmd_analyze(c, ckpts);
    if (*interpolate) return cmd_interpolate(c, ckpt);
    if (*sweep) return cmd_sweep(c, data);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for more information.\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
