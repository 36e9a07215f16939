// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "cnerv/analysis.hpp"
#include "cnerv/bitstream.hpp"
#include "cnerv/compress.hpp"
#include "cnerv/entropy.hpp"
#include "cnerv/metrics.hpp"
#include "cnerv/trainer.hpp"
#include "support/oracles.hpp"

using namespace cnerv;
using cnerv::testing::gradcheck;
using cnerv::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int id, const std::string& title, Outcome& o, Clock::time_point start) {
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("[%s] criterion %2d  %-34s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, title.c_str(),
              o.detail.str().c_str(), secs);
  std::fflush(stdout);
}

template <typename F>
void run(int id, const std::string& title, F&& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.require(false, std::string("exception: ") + e.what());
  }
  report(id, title, o, start);
}

// Small CNeRV for end-to-end gradient checks: 16x32 frames, 2x4 grid of 8x8 blocks.
ModelConfig tiny_cnerv() {
  ModelConfig c;
  c.C = 3;
  c.H = 16;
  c.W = 32;
  c.L = 4;
  c.cae = CAEConfig{1.15, 5, 5, 2, 4, true};
  c.d = 6;
  c.feat_h = 4;
  c.feat_w = 8;
  c.upscales = {2, 2};
  c.min_channels = 4;
  return c;
}

void criterion1(Outcome& o) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<Index> dim(2, 6);
  double worst = 0;
  int checks = 0;
  auto check = [&](const char* name, auto f, std::vector<Tensor<double>> in, Index coords = -1) {
    const auto r = gradcheck(f, std::move(in), rng, coords);
    worst = std::max(worst, r.max_rel_error);
    ++checks;
    if (!(r.max_rel_error < 1e-4)) o.require(false, std::string(name) + " rel err " + std::to_string(r.max_rel_error));
  };
  for (int rep = 0; rep < 3; ++rep) {
    const Index c = dim(rng), h = dim(rng) * 2, w = dim(rng) * 2, co = dim(rng);
    for (Index k : {1, 3}) {
      for (Index stride : {1, 2}) {
        check("conv2d", [&](const auto& v) { return conv2d(v[0], v[1], v[2], stride); },
              {random_tensor({c, h, w}, rng), random_tensor({co, c, k, k}, rng), random_tensor({co}, rng)});
      }
    }
    check("depth_to_space", [](const auto& v) { return depth_to_space(v[0], 2, 3); },
          {random_tensor({c * 6, h, w}, rng)});
    check("space_to_depth", [](const auto& v) { return space_to_depth(v[0], 2, 2); }, {random_tensor({c, h, w}, rng)});
    check("pixel_shuffle", [](const auto& v) { return pixel_shuffle(v[0], 2); }, {random_tensor({c * 4, h, w}, rng)});
    check("gelu", [](const auto& v) { return gelu(v[0]); }, {random_tensor({c, h, w}, rng, -3, 3)});
    check("linear", [](const auto& v) { return linear(v[0], v[1], v[2]); },
          {random_tensor({h}, rng), random_tensor({w, h}, rng), random_tensor({w}, rng)});
    check("add", [](const auto& v) { return add(v[0], v[1]); }, {random_tensor({c, h}, rng), random_tensor({c, h}, rng)});
    check("sub", [](const auto& v) { return sub(v[0], v[1]); }, {random_tensor({c, h}, rng), random_tensor({1}, rng)});
    check("mul", [](const auto& v) { return mul(v[0], v[1]); }, {random_tensor({c, h}, rng), random_tensor({c, h}, rng)});
    check("div", [](const auto& v) { return div(v[0], v[1]); },
          {random_tensor({c, h}, rng), random_tensor({c, h}, rng, 0.5, 2.0)});
    check("affine", [](const auto& v) { return affine(v[0], 1.7, -0.3); }, {random_tensor({c, w}, rng)});
    check("abs", [](const auto& v) { return abs(v[0]); }, {random_tensor({c, w}, rng)});
    check("sum", [](const auto& v) { return sum(v[0]); }, {random_tensor({c, h, w}, rng)});
    check("mean", [](const auto& v) { return mean(v[0]); }, {random_tensor({c, h, w}, rng)});
    check("reshape", [&](const auto& v) { return reshape(v[0], {h, c * w}); }, {random_tensor({c, h, w}, rng)});
    check("concat", [](const auto& v) { return concat(std::vector<Tensor<double>>{v[0], v[1]}, 0); },
          {random_tensor({c, h, w}, rng), random_tensor({2, h, w}, rng)});
    check("separable_filter_valid",
          [](const auto& v) { return separable_filter_valid(v[0], std::vector<double>{0.25, 0.5, 0.25}); },
          {random_tensor({c, h + 3, w + 3}, rng)});
    check("avg_pool2", [](const auto& v) { return avg_pool2(v[0]); }, {random_tensor({c, h, w}, rng)});
    LossConfig lc;
    lc.window = 5;
    check("ssim", [&](const auto& v) { return ssim(v[0], v[1], lc); },
          {random_tensor({c, h + 6, w + 6}, rng, 0, 1), random_tensor({c, h + 6, w + 6}, rng, 0, 1)});
  }
  // Full CNeRV forward with the training objective, every parameter tensor.
  for (int rep = 0; rep < 2; ++rep) {
    const auto cfg = tiny_cnerv();
    auto params = init_params<double>(cfg, 7 + static_cast<std::uint64_t>(rep));
    std::vector<Tensor<double>> inputs;
    for (auto& [name, t] : params.tensors) inputs.push_back(t);
    const auto image = random_tensor({cfg.C, cfg.H, cfg.W}, rng, 0, 1);
    const auto target = random_tensor({cfg.C, cfg.H, cfg.W}, rng, 0, 1);
    check(
        "cnerv_forward+loss",
        [&](const auto& v) {
          ModelParams<double> p;
          for (std::size_t i = 0; i < params.tensors.size(); ++i) p.tensors.emplace_back(params.tensors[i].first, v[i]);
          return loss(cnerv_forward(cnerv_encode(image, cfg, p).values, cfg, p), target);
        },
        inputs, 25);
  }
  o.detail << checks << " checks, max rel err " << worst;
  o.require(checks >= 20, "fewer than 20 shapes");
}

void criterion2(Outcome& o) {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<Index> dim(1, 12), freq(1, 15), ch(1, 3);
  std::uniform_real_distribution<double> bdist(1.01, 1.6);
  double worst_cae = 0;
  for (int i = 0; i < 50; ++i) {
    CAEConfig cfg{bdist(rng), freq(rng), freq(rng), 1, 1};
    const auto block = random_tensor({ch(rng), dim(rng), dim(rng)}, rng, 0, 1);
    const auto fast = content_adaptive_embedding(block, cfg);
    const auto slow = testing::cae_quadruple_loop(block, cfg.b, cfg.P, cfg.Q);
    worst_cae = std::max(worst_cae, (fast.data() - slow.data()).cwiseAbs().maxCoeff());
  }
  double worst_conv = 0;
  for (int i = 0; i < 50; ++i) {
    const Index k = i % 2 == 0 ? 3 : 1, stride = 1 + i % 3 / 2;
    const Index c = ch(rng) + 1, co = ch(rng) + 1, h = dim(rng) + 2, w = dim(rng) + 2;
    const auto x = random_tensor({c, h, w}, rng), wt = random_tensor({co, c, k, k}, rng), b = random_tensor({co}, rng);
    const auto fast = conv2d(x, wt, b, stride);
    const auto slow = testing::conv2d_loops(x, wt, b, stride, k / 2);
    worst_conv = std::max(worst_conv, (fast.data() - slow.data()).cwiseAbs().maxCoeff());
  }
  o.detail << "embedding max |diff| " << worst_cae << ", conv2d max |diff| " << worst_conv;
  o.require(worst_cae <= 1e-12, "embedding oracle");
  o.require(worst_conv <= 1e-12, "conv2d oracle");
}

double ulp(double x) {
  x = std::abs(x);
  return std::nextafter(x, std::numeric_limits<double>::infinity()) - x;
}

void criterion3(Outcome& o) {
  {
    const std::vector<double> mu{0, 0.3, 1};
    const auto q = quantize_values(mu, 1, {3});
    const auto back = dequantize_values(q);
    o.require(q.scale == 0.5 && back == std::vector<double>{0, 0.5, 1}, "hand case [0,0.3,1]@1");
  }
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<Index> len(1, 200);
  std::uniform_real_distribution<double> span(-50, 50);
  double worst_ratio = 0;
  int tensors = 0;
  for (int bit = 1; bit <= 16; ++bit) {
    for (int t = 0; t < 100; ++t) {
      const double a = span(rng), b = span(rng);
      const auto x = random_tensor({len(rng)}, rng, std::min(a, b), std::max(a, b));
      std::vector<double> v(x.data().data(), x.data().data() + x.size());
      const auto q = quantize_values(v, bit, x.shape());
      const auto back = dequantize_values(q);
      const double mx = *std::max_element(v.begin(), v.end());
      const double slack = 4 * std::max({ulp(q.mu_min), ulp(mx), ulp(q.scale * std::ldexp(1.0, bit))});
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double err = std::abs(v[i] - back[i]);
        const double bound = q.scale / 2 + slack;
        if (err > bound) o.require(false, "bit " + std::to_string(bit) + " err " + std::to_string(err));
        if (q.scale > 0) worst_ratio = std::max(worst_ratio, err / (q.scale / 2));
      }
      ++tensors;
    }
  }
  o.detail << tensors << " tensors, max err / (s/2) = " << worst_ratio;
}

void criterion4(Outcome& o) {
  std::mt19937_64 rng(404);
  int streams = 0;
  auto roundtrip = [&](const std::vector<std::uint64_t>& codes, int bit) {
    ++streams;
    const auto bytes = entropy_encode(codes, bit);
    if (entropy_decode(bytes) != codes) o.require(false, "huffman stream " + std::to_string(streams));
  };
  std::uniform_int_distribution<int> bits(1, 16);
  std::uniform_int_distribution<std::size_t> len(0, 2000);
  for (int i = 0; i < 800; ++i) {
    const int bit = bits(rng);
    std::uniform_int_distribution<std::uint64_t> sym(0, std::uint64_t{1} << bit);
    std::vector<std::uint64_t> codes(len(rng));
    for (auto& c : codes) c = sym(rng);
    roundtrip(codes, bit);
  }
  for (int i = 0; i < 100; ++i) {  // single distinct symbol, including the empty stream
    roundtrip(std::vector<std::uint64_t>(static_cast<std::size_t>(i * 7), static_cast<std::uint64_t>(i % 3)), 2);
  }
  std::bernoulli_distribution skew(0.9);
  for (int i = 0; i < 100; ++i) {  // two symbols, 90/10
    std::vector<std::uint64_t> codes(1 + len(rng));
    for (auto& c : codes) c = skew(rng) ? 3 : 200;
    roundtrip(codes, 8);
  }
  // Container: model tensors, masks, embeddings; encode -> parse -> encode.
  const auto cfg = toy_cnerv_config();
  auto params = init_params<double>(cfg, 5);
  auto masks = prune(params, 0.3);
  ArtifactInput in;
  in.model = cfg;
  in.params = &params;
  in.masks = masks;
  for (std::uint32_t f = 0; f < 4; ++f) in.embeddings.emplace_back(f, random_tensor({cfg.L, cfg.M(), cfg.N()}, rng));
  in.manifest_digest = 11;
  in.split_digest = 22;
  in.model_digest = model_digest(cfg, params);
  const auto first = serialize(build_artifact(in));
  const auto second = serialize(parse_container(first));
  Container raw;
  raw.tensors.push_back(raw_record("w", random_tensor({3, 4}, rng)));
  raw.tensors.push_back(raw_record("f", random_tensor({5}, rng).cast<float>()));
  const auto raw_first = serialize(raw);
  o.require(first == second, "artifact container not byte-identical");
  o.require(serialize(parse_container(raw_first)) == raw_first, "raw container not byte-identical");
  o.detail << streams << " streams exact, container " << first.size() << " bytes byte-identical";
}

// Shared toy runs for criteria 5 and 7-11.
struct ToyRuns {
  FrameDataset video;
  RunConfig cnerv_run, nerv_run;
  std::optional<Trainer<float>> cnerv, nerv, nerv_shuffled;
};

constexpr Index kToyEpochs = 150;

ToyRuns& toy() {
  static ToyRuns runs = [] {
    ToyRuns r;
    r.video = synth_toy_video(ToyKind::kBouncingRect, 16, 32, 64, 0);
    r.nerv_run.model = toy_nerv_config();
    r.nerv_run.optim.epochs = kToyEpochs;
    r.cnerv_run = r.nerv_run;
    r.cnerv_run.model = match_param_budget(toy_cnerv_config(), param_count(r.nerv_run.model));
    return r;
  }();
  return runs;
}

Trainer<float>& trained(std::optional<Trainer<float>>& slot, const RunConfig& run) {
  if (!slot) {
    slot.emplace(run, toy().video);
    slot->train();
  }
  return *slot;
}

void criterion5(Outcome& o) {
  auto& t = toy();
  const double budget = relative_budget_gap(t.cnerv_run.model, t.nerv_run.model);
  auto& c = trained(t.cnerv, t.cnerv_run).state().summaries.back();
  auto& n = trained(t.nerv, t.nerv_run).state().summaries.back();
  o.detail << "params " << param_count(t.cnerv_run.model) << " vs " << param_count(t.nerv_run.model) << " (gap "
           << budget * 100 << "%), unseen " << c.unseen_psnr << " vs " << n.unseen_psnr << " dB, seen-unseen gap "
           << c.seen_psnr - c.unseen_psnr << " vs " << n.seen_psnr - n.unseen_psnr;
  o.require(budget <= 0.05, "parameter budgets differ by more than 5%");
  o.require(c.unseen_psnr >= n.unseen_psnr + 3.0, "unseen margin < 3 dB");
  o.require(c.seen_psnr - c.unseen_psnr < n.seen_psnr - n.unseen_psnr, "CNeRV gap not smaller");
}

void criterion6(Outcome& o) {
  auto video = synth_toy_video(ToyKind::kBouncingRect, 1, 32, 64, 0);
  RunConfig run;
  run.model = toy_cnerv_config();
  run.split.period = 0;
  run.optim.epochs = 2000;
  run.optim.eval_every = 2000;
  Trainer<float> tr(run, video);
  tr.train();
  const double seen = tr.state().summaries.back().seen_psnr;
  o.detail << "seen PSNR " << seen << " dB after " << tr.state().step << " steps";
  o.require(tr.state().step <= 2000, "step budget");
  o.require(seen > 35.0, "seen PSNR <= 35 dB");
}

void criterion7(Outcome& o) {
  auto& t = toy();
  auto& tr = trained(t.cnerv, t.cnerv_run);
  const auto original = tr.params().clone();
  tr.set_params(quantize_params(original, 8));
  auto curve = [&](int bits) {
    double acc = 0;
    for (const auto& f : t.video.frames) {
      const auto z = quantize_latent(tr.latent(f.id), bits);
      acc += psnr(clamp01(tr.decode_latent(z)), f.image.cast<float>());
    }
    return acc / static_cast<double>(t.video.size());
  };
  const double p32 = curve(32), p6 = curve(6), p1 = curve(1);
  tr.set_params(original);
  o.detail << "bits_model 8: embed 32-bit " << p32 << ", 6-bit " << p6 << ", 1-bit " << p1 << " dB";
  o.require(std::abs(p32 - p6) <= 0.5, "6-bit not within 0.5 dB of 32-bit");
  o.require(p1 < p6, "1-bit not below 6-bit");
}

void criterion8(Outcome& o) {
  auto& t = toy();
  const auto& s = trained(t.cnerv, t.cnerv_run).state().summaries;
  const std::size_t half = s.size() / 2;
  double running = -std::numeric_limits<double>::infinity(), worst_drop = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    running = std::max(running, s[i].unseen_psnr);
    if (i >= half) worst_drop = std::max(worst_drop, running - s[i].unseen_psnr);
  }
  o.detail << s.size() << " evals; worst unseen drop " << worst_drop << " dB; seen " << s[half].seen_psnr << " -> "
           << s.back().seen_psnr;
  o.require(worst_drop <= 1.0, "unseen PSNR dropped > 1 dB below running max");
  o.require(s.back().seen_psnr > s[half].seen_psnr, "seen PSNR did not increase");
}

void criterion9(Outcome& o) {
  std::mt19937_64 rng(909);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(12, 6);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd::Random(6, 6));
  const Eigen::MatrixXd q = qr.householderQ();
  const double self = linear_cka(x, x), orth = linear_cka(x, x * q), scaled = linear_cka(x, 3.0 * x);
  o.require(std::abs(self - 1) <= 1e-9 && std::abs(orth - 1) <= 1e-9 && std::abs(scaled - 1) <= 1e-9, "CKA invariances");
  EmbeddingMatrix same{Eigen::MatrixXd::Ones(5, 4), std::vector<SplitLabel>(5, SplitLabel::kSeen)};
  Eigen::MatrixXd anti(2, 3);
  anti << 1, 0, 0, -1, 0, 0;
  EmbeddingMatrix pair{anti, std::vector<SplitLabel>(2, SplitLabel::kSeen)};
  const double u_same = uniformity(same, {}), u_anti = uniformity(pair, {});
  o.require(u_same == 0.0, "uniformity of identical rows");
  o.require(std::abs(u_anti + 8.0) <= 1e-12, "uniformity of antipodal pair");

  auto& t = toy();
  auto& c = trained(t.cnerv, t.cnerv_run);
  const Index n = t.video.size();
  EmbeddingMatrix ce, ne;
  ce.values.resize(n, t.cnerv_run.model.L * t.cnerv_run.model.M() * t.cnerv_run.model.N());
  ne.values.resize(n, 2 * t.nerv_run.model.pos.l);
  for (Index i = 0; i < n; ++i) {
    const auto label = c.frame_split().is_unseen(i) ? SplitLabel::kUnseen : SplitLabel::kSeen;
    ce.values.row(i) = c.latent(i).data().cast<double>().transpose();
    ne.values.row(i) = positional_encoding<double>(frame_time(i, n), t.nerv_run.model.pos).data().transpose();
    ce.labels.push_back(label);
    ne.labels.push_back(label);
  }
  const double dc = normalized_distance(ce), dn = normalized_distance(ne);
  o.detail << "CKA " << self << "/" << orth << "/" << scaled << ", uniformity " << u_same << "/" << u_anti
           << ", normalized distance CNeRV " << dc << " vs NeRV " << dn;
  o.require(dc < dn, "normalized distance direction");
}

void criterion10(Outcome& o) {
  auto& t = toy();
  auto& tr = trained(t.cnerv, t.cnerv_run);
  const auto ids = tr.interpolation_candidates();
  o.require(!ids.empty(), "no eligible unseen frames");
  int emitted = 0;
  for (Index id : ids) {
    const auto r = tr.interpolate(id);
    if (std::isfinite(r.interp_psnr) && std::isfinite(r.true_psnr) && std::isfinite(r.pixel_psnr)) ++emitted;
    o.detail << " f" << id << " interp/true/pixel " << r.interp_psnr << "/" << r.true_psnr << "/" << r.pixel_psnr << ";";
  }
  o.require(emitted == static_cast<int>(ids.size()), "missing PSNR values");
  const auto still = synth_toy_video(ToyKind::kStatic, 16, 32, 64, 0);
  Trainer<float> st(t.cnerv_run, still);
  st.set_params(tr.params());
  bool exact = true;
  for (Index id : st.interpolation_candidates()) {
    const auto r = st.interpolate(id);
    exact = exact && r.interp_psnr == r.true_psnr;
  }
  o.detail << " static video exact: " << (exact ? "yes" : "no");
  o.require(exact, "static video interpolated != true-embedding PSNR");
}

void criterion11(Outcome& o) {
  auto& t = toy();
  RunConfig shuffled = t.nerv_run;
  shuffled.split.shuffle = true;
  shuffled.split.seed = 1234;
  const double seq = trained(t.nerv, t.nerv_run).state().summaries.back().seen_psnr;
  const double shuf = trained(t.nerv_shuffled, shuffled).state().summaries.back().seen_psnr;
  o.detail << "NeRV seen PSNR sequential " << seq << " vs shuffled " << shuf << " dB";
  o.require(std::abs(seq - shuf) <= 1.5, "shuffled seen PSNR differs by more than 1.5 dB");
}

}  // namespace

int main() {
  log_level() = LogLevel::kWarn;
  run(1, "gradient correctness", criterion1);
  run(2, "oracle equivalence", criterion2);
  run(3, "quantization bound", criterion3);
  run(4, "codec losslessness", criterion4);
  run(5, "generalization-gap direction", criterion5);
  run(6, "overfit sanity", criterion6);
  run(7, "embedding quantization curve", criterion7);
  run(8, "stability of generalization", criterion8);
  run(9, "analysis suite", criterion9);
  run(10, "interpolation harness", criterion10);
  run(11, "shuffled-index experiment", criterion11);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
