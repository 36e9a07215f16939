#include "cnerv/config.hpp"

#include <fstream>
#include <set>

#include "cnerv/bytes.hpp"

namespace cnerv {

using nlohmann::json;

namespace {

// Reads optional keys from one JSON object and rejects any key it was not asked about.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const std::string& key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!known_.count(key)) throw ConfigError("unknown config key " + path_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

}  // namespace

json to_json(const ModelConfig& c) {
  return json{{"kind", to_string(c.kind)},
              {"C", c.C},
              {"H", c.H},
              {"W", c.W},
              {"L", c.L},
              {"cae", {{"b", c.cae.b}, {"P", c.cae.P}, {"Q", c.cae.Q}, {"M", c.cae.M}, {"N", c.cae.N}, {"area_normalize", c.cae.area_normalize}}},
              {"pos", {{"b", c.pos.b}, {"l", c.pos.l}}},
              {"d", c.d},
              {"feat_h", c.feat_h},
              {"feat_w", c.feat_w},
              {"upscales", c.upscales},
              {"nerv_hidden", c.nerv_hidden},
              {"min_channels", c.min_channels},
              {"seed", c.seed}};
}

namespace {

void read_model(const json& j, ModelConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  std::string kind = to_string(c.kind);
  r.get("kind", kind);
  c.kind = model_kind_from_string(kind);
  r.get("C", c.C);
  r.get("H", c.H);
  r.get("W", c.W);
  r.get("L", c.L);
  if (const json* cae = r.child("cae")) {
    ObjectReader rc(*cae, r.path("cae"));
    rc.get("b", c.cae.b);
    rc.get("P", c.cae.P);
    rc.get("Q", c.cae.Q);
    rc.get("M", c.cae.M);
    rc.get("N", c.cae.N);
    rc.get("area_normalize", c.cae.area_normalize);
    rc.finish();
  }
  if (const json* pos = r.child("pos")) {
    ObjectReader rp(*pos, r.path("pos"));
    rp.get("b", c.pos.b);
    rp.get("l", c.pos.l);
    rp.finish();
  }
  r.get("d", c.d);
  r.get("feat_h", c.feat_h);
  r.get("feat_w", c.feat_w);
  r.get("upscales", c.upscales);
  r.get("nerv_hidden", c.nerv_hidden);
  r.get("min_channels", c.min_channels);
  r.get("seed", c.seed);
  r.finish();
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  read_model(j, c, "model");
  c.validate();
  return c;
}

json to_json(const SplitSpec& s) {
  return json{{"period", s.period}, {"phase", s.phase}, {"shuffle", s.shuffle}, {"seed", s.seed}};
}

SplitSpec split_spec_from_json(const json& j) {
  SplitSpec s;
  ObjectReader r(j, "split");
  r.get("period", s.period);
  r.get("phase", s.phase);
  r.get("shuffle", s.shuffle);
  r.get("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

std::uint64_t split_digest(const SplitSpec& spec) { return fnv1a64(to_json(spec).dump()); }

json to_json(const RunConfig& c) {
  json sweep_grid = json::array();
  for (const auto& [m, n] : c.sweep.grid) sweep_grid.push_back({m, n});
  return json{
      {"model", to_json(c.model)},
      {"loss", {{"alpha", c.loss.alpha}, {"window", c.loss.window}, {"sigma", c.loss.sigma}, {"c1", c.loss.c1}, {"c2", c.loss.c2}}},
      {"split", to_json(c.split)},
      {"optim",
       {{"lr", c.optim.lr},
        {"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2},
        {"eps", c.optim.eps},
        {"warmup", c.optim.warmup},
        {"epochs", c.optim.epochs},
        {"eval_every", c.optim.eval_every},
        {"seed", c.optim.seed}}},
      {"compression",
       {{"bits_model", c.compression.bits_model},
        {"bits_embed", c.compression.bits_embed},
        {"prune_ratio", c.compression.prune_ratio},
        {"finetune_epochs", c.compression.finetune_epochs}}},
      {"data",
       {{"frames_dir", c.data.frames_dir},
        {"synth_kind", c.data.synth_kind},
        {"frames", c.data.frames},
        {"height", c.data.height},
        {"width", c.data.width},
        {"seed", c.data.seed},
        {"crop_h", c.data.crop_h},
        {"crop_w", c.data.crop_w},
        {"downsample", c.data.downsample}}},
      {"analysis",
       {{"temperature", c.analysis.temperature},
        {"normalize", c.analysis.normalize},
        {"norm_difference", c.analysis.norm_difference}}},
      {"sweep",
       {{"b", c.sweep.b}, {"pq", c.sweep.pq}, {"grid", sweep_grid}, {"L", c.sweep.L}, {"bits_embed", c.sweep.bits_embed}}}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "config");
  if (const json* m = r.child("model")) read_model(*m, c.model, "model");
  if (const json* l = r.child("loss")) {
    ObjectReader rl(*l, "loss");
    rl.get("alpha", c.loss.alpha);
    rl.get("window", c.loss.window);
    rl.get("sigma", c.loss.sigma);
    rl.get("c1", c.loss.c1);
    rl.get("c2", c.loss.c2);
    rl.finish();
  }
  if (const json* s = r.child("split")) c.split = split_spec_from_json(*s);
  if (const json* o = r.child("optim")) {
    ObjectReader ro(*o, "optim");
    ro.get("lr", c.optim.lr);
    ro.get("beta1", c.optim.beta1);
    ro.get("beta2", c.optim.beta2);
    ro.get("eps", c.optim.eps);
    ro.get("warmup", c.optim.warmup);
    ro.get("epochs", c.optim.epochs);
    ro.get("eval_every", c.optim.eval_every);
    ro.get("seed", c.optim.seed);
    ro.finish();
  }
  if (const json* cc = r.child("compression")) {
    ObjectReader rc(*cc, "compression");
    rc.get("bits_model", c.compression.bits_model);
    rc.get("bits_embed", c.compression.bits_embed);
    rc.get("prune_ratio", c.compression.prune_ratio);
    rc.get("finetune_epochs", c.compression.finetune_epochs);
    rc.finish();
  }
  if (const json* d = r.child("data")) {
    ObjectReader rd(*d, "data");
    rd.get("frames_dir", c.data.frames_dir);
    rd.get("synth_kind", c.data.synth_kind);
    rd.get("frames", c.data.frames);
    rd.get("height", c.data.height);
    rd.get("width", c.data.width);
    rd.get("seed", c.data.seed);
    rd.get("crop_h", c.data.crop_h);
    rd.get("crop_w", c.data.crop_w);
    rd.get("downsample", c.data.downsample);
    rd.finish();
  }
  if (const json* a = r.child("analysis")) {
    ObjectReader ra(*a, "analysis");
    ra.get("temperature", c.analysis.temperature);
    ra.get("normalize", c.analysis.normalize);
    ra.get("norm_difference", c.analysis.norm_difference);
    ra.finish();
  }
  if (const json* s = r.child("sweep")) {
    ObjectReader rs(*s, "sweep");
    rs.get("b", c.sweep.b);
    rs.get("pq", c.sweep.pq);
    std::vector<std::vector<Index>> grid;
    rs.get("grid", grid);
    for (const auto& g : grid) {
      if (g.size() != 2) throw ConfigError("sweep.grid entries must be [M, N] pairs");
      c.sweep.grid.emplace_back(g[0], g[1]);
    }
    rs.get("L", c.sweep.L);
    rs.get("bits_embed", c.sweep.bits_embed);
    rs.finish();
  }
  r.finish();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  split.validate();
  optim.validate();
  compression.validate();
  if (data.frames_dir.empty() && (data.frames < 1 || data.height < 1 || data.width < 1)) {
    throw ConfigError("data: synthetic frames, height and width must be positive");
  }
  if (data.downsample < 1) throw ConfigError("data.downsample must be >= 1");
  if (!(analysis.temperature > 0)) throw ConfigError("analysis.temperature must be positive");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

ModelConfig toy_cnerv_config() {
  ModelConfig c;
  c.kind = ModelKind::kCnerv;
  c.C = 3;
  c.H = 32;
  c.W = 64;
  c.L = 16;
  c.cae = CAEConfig{1.15, 15, 15, 2, 4, true};
  c.d = 32;
  c.feat_h = 8;
  c.feat_w = 16;
  c.upscales = {2, 2};
  return c;
}

ModelConfig toy_nerv_config() {
  ModelConfig c;
  c.kind = ModelKind::kNerv;
  c.C = 3;
  c.H = 32;
  c.W = 64;
  c.pos = PositionalConfig{1.25, 240};
  c.d = 16;
  c.feat_h = 4;
  c.feat_w = 8;
  c.upscales = {2, 2, 2};
  c.nerv_hidden = 256;
  return c;
}

}  // namespace cnerv
