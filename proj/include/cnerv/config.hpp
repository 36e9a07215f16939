#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cnerv/analysis.hpp"
#include "cnerv/metrics.hpp"
#include "cnerv/model.hpp"

namespace cnerv {

/// Seen/unseen partition: frames with index % period == phase are unseen. Period 0 disables the holdout.
struct SplitSpec {
  Index period = 5;
  Index phase = 4;
  bool shuffle = false;  // permute the frame -> index assignment (index baseline only)
  std::uint64_t seed = 0;

  void validate() const {
    if (period < 0) throw ConfigError("split.period must be >= 0");
    if (period > 0 && (phase < 0 || phase >= period)) throw ConfigError("split.phase must lie in [0, period)");
  }
};

struct OptimConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup = 0.1;  // fraction of total steps
  Index epochs = 100;
  Index eval_every = 1;  // epochs between evaluations
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr >= 0)) throw ConfigError("optim.lr must be >= 0");
    if (!(warmup >= 0 && warmup < 1)) throw ConfigError("optim.warmup must lie in [0,1)");
    if (epochs < 0) throw ConfigError("optim.epochs must be >= 0");
    if (eval_every < 1) throw ConfigError("optim.eval_every must be >= 1");
  }
};

struct CompressionConfig {
  int bits_model = 8;
  int bits_embed = 6;
  double prune_ratio = 0.0;
  Index finetune_epochs = 0;

  void validate() const {
    if (bits_model < 1 || bits_model > 32) throw ConfigError("compression.bits_model must lie in 1..32");
    if (bits_embed < 1 || bits_embed > 32) throw ConfigError("compression.bits_embed must lie in 1..32");
    if (!(prune_ratio >= 0 && prune_ratio < 1)) throw ConfigError("compression.prune_ratio must lie in [0,1)");
  }
};

struct DataConfig {
  std::string frames_dir;  // empty: synthesize
  std::string synth_kind = "bouncing-rect";
  Index frames = 16;
  Index height = 32;
  Index width = 64;
  std::uint64_t seed = 0;
  Index crop_h = 0;  // 0: no crop
  Index crop_w = 0;
  Index downsample = 1;
};

struct SweepConfig {
  std::vector<double> b;
  std::vector<Index> pq;
  std::vector<std::pair<Index, Index>> grid;
  std::vector<Index> L;
  std::vector<int> bits_embed;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  SplitSpec split;
  OptimConfig optim;
  CompressionConfig compression;
  DataConfig data;
  UniformityConfig analysis;
  SweepConfig sweep;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SplitSpec& spec);
SplitSpec split_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
/// Unknown keys anywhere in the document are rejected with ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Stable digest of a split specification.
std::uint64_t split_digest(const SplitSpec& spec);

/// Toy-scale CNeRV default: 2x4 grid, L = 16, 4x4 cubes, two x2 NeRV blocks.
ModelConfig toy_cnerv_config();
/// Toy-scale index baseline: (16, 4, 8) feature map, three x2 NeRV blocks, 256-wide MLP.
ModelConfig toy_nerv_config();

}  // namespace cnerv
