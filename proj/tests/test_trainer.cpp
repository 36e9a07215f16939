#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cnerv/config.hpp"
#include "cnerv/io.hpp"
#include "cnerv/log.hpp"
#include "cnerv/trainer.hpp"

using namespace cnerv;

namespace {

RunConfig toy_run(ModelKind kind, Index epochs) {
  RunConfig run;
  run.model = kind == ModelKind::kCnerv ? toy_cnerv_config() : toy_nerv_config();
  run.optim.epochs = epochs;
  return run;
}

const FrameDataset& toy_video() {
  static const FrameDataset data = synth_toy_video(ToyKind::kBouncingRect, 16, 32, 64, 0);
  return data;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cnerv_trainer_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

struct QuietLog {
  LogLevel saved = log_level();
  QuietLog() { log_level() = LogLevel::kWarn; }
  ~QuietLog() { log_level() = saved; }
};

}  // namespace

TEST_CASE("split residue rule") {
  const auto s = split(10, SplitSpec{5, 4});
  CHECK(s.unseen == std::vector<Index>{4, 9});
  CHECK(s.seen == std::vector<Index>{0, 1, 2, 3, 5, 6, 7, 8});
  CHECK(split(7, SplitSpec{7, 3}).unseen == std::vector<Index>{3});
  const auto big = split(5032, SplitSpec{});
  CHECK(big.unseen.size() == 1006);
  CHECK(std::abs(static_cast<double>(big.unseen.size()) / 5032.0 - 0.2) < 1e-3);
  CHECK(split(4, SplitSpec{0, 0}).unseen.empty());
  CHECK_THROWS(split(4, SplitSpec{5, 4}));
  CHECK_THROWS_AS(split(10, SplitSpec{5, 5}), ConfigError);
}

TEST_CASE("split is a deterministic partition") {
  for (Index n : {5, 16, 37}) {
    for (bool shuffle : {false, true}) {
      const SplitSpec spec{5, 2, shuffle, 99};
      const auto a = split(n, spec), b = split(n, spec);
      CHECK(a.seen == b.seen);
      CHECK(a.unseen == b.unseen);
      CHECK(a.index_of == b.index_of);
      std::set<Index> all(a.seen.begin(), a.seen.end());
      for (Index u : a.unseen) CHECK(all.insert(u).second);
      CHECK(static_cast<Index>(all.size()) == n);
      auto idx = a.index_of;
      std::sort(idx.begin(), idx.end());
      for (Index i = 0; i < n; ++i) CHECK(idx[static_cast<std::size_t>(i)] == i);
      CHECK(a.unseen == split(n, SplitSpec{5, 2}).unseen);
    }
  }
  CHECK(split(16, SplitSpec{5, 4, true, 1}).index_of != split(16, SplitSpec{5, 4, true, 2}).index_of);
}

TEST_CASE("learning-rate schedule") {
  OptimConfig cfg;
  const Index total = 100;
  CHECK(learning_rate(cfg, 0, total) == doctest::Approx(cfg.lr / 10));
  CHECK(learning_rate(cfg, 9, total) == doctest::Approx(cfg.lr));
  CHECK(learning_rate(cfg, 10, total) == doctest::Approx(cfg.lr));
  CHECK(learning_rate(cfg, 55, total) == doctest::Approx(cfg.lr / 2));
  CHECK(learning_rate(cfg, 100, total) == doctest::Approx(0.0));
  for (Index s = 10; s < total; ++s) CHECK(learning_rate(cfg, s + 1, total) <= learning_rate(cfg, s, total));
}

TEST_CASE("Adam with zero gradient leaves parameters unchanged") {
  auto params = init_params<double>(toy_cnerv_config(), 1);
  const auto before = params.clone();
  params.set_requires_grad(true);
  AdamMoments<double> m;
  m.reset(params);
  for (int i = 0; i < 5; ++i) adam_step(params, m, OptimConfig{}, 1e-3);
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    CHECK(params.tensors[i].second.data() == before.tensors[i].second.data());
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  QuietLog quiet;
  auto run = toy_run(ModelKind::kCnerv, 3);
  run.optim.lr = 0;
  Trainer<float> t(run, toy_video());
  const auto before = t.params().clone();
  t.train();
  CHECK(t.state().step == 3 * 13);
  for (std::size_t i = 0; i < before.tensors.size(); ++i)
    CHECK(t.params().tensors[i].second.data() == before.tensors[i].second.data());
}

TEST_CASE("divergence names the step") {
  QuietLog quiet;
  Trainer<float> t(toy_run(ModelKind::kCnerv, 2), toy_video());
  t.train_step(0);
  t.params().at("decoder.head.bias").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(t.train_step(1), doctest::Contains("diverged at step 1"), NumericalError);
}

TEST_CASE("training loss is non-increasing over most 200-step windows") {
  QuietLog quiet;
  Trainer<float> t(toy_run(ModelKind::kCnerv, 80), toy_video());
  std::vector<double> losses;
  const Index seen = static_cast<Index>(t.frame_split().seen.size());
  while (t.state().epoch < 80) {
    // per-step losses are on different frames, so compare one-epoch averages at the window ends
    std::vector<Index> order = t.frame_split().seen;
    for (Index id : order) losses.push_back(t.train_step(id));
    ++t.state().epoch;
  }
  Index windows = 0, ok = 0;
  auto avg = [&](std::size_t from) {
    double s = 0;
    for (Index k = 0; k < seen; ++k) s += losses[from + static_cast<std::size_t>(k)];
    return s / static_cast<double>(seen);
  };
  for (std::size_t s = 0; s + 200 <= losses.size(); s += static_cast<std::size_t>(seen)) {
    ++windows;
    if (avg(s + 200 - static_cast<std::size_t>(seen)) <= avg(s)) ++ok;
  }
  CHECK(windows > 50);
  CHECK(static_cast<double>(ok) >= 0.9 * static_cast<double>(windows));
}

TEST_CASE("resumed training reproduces the run bitwise") {
  QuietLog quiet;
  const auto run = toy_run(ModelKind::kCnerv, 6);
  const auto path = scratch("resume.ckpt");
  Trainer<float> a(run, toy_video());
  a.train_until(3);
  a.save_checkpoint(path);
  a.train_until(6);

  Trainer<float> b(run, toy_video());
  b.load_checkpoint(path);
  CHECK(b.state().epoch == 3);
  const auto rows_before = b.state().history.size();
  b.train_until(6);
  for (std::size_t i = 0; i < a.params().tensors.size(); ++i)
    CHECK(a.params().tensors[i].second.data() == b.params().tensors[i].second.data());
  const auto& ha = a.state().history;
  const auto& hb = b.state().history;
  REQUIRE(ha.size() >= hb.size() - rows_before);
  const auto offset = ha.size() - (hb.size() - rows_before);
  for (std::size_t i = rows_before; i < hb.size(); ++i) {
    const auto& x = ha[offset + i - rows_before];
    CHECK(x.step == hb[i].step);
    CHECK(x.frame_id == hb[i].frame_id);
    CHECK(x.psnr == hb[i].psnr);
    CHECK(x.loss == hb[i].loss);
  }

  const auto other = synth_toy_video(ToyKind::kBouncingRect, 16, 32, 64, 1);
  Trainer<float> c(run, other);
  CHECK_THROWS_AS(c.load_checkpoint(path), FormatError);
  auto moved = run;
  moved.split.phase = 3;
  Trainer<float> d(moved, toy_video());
  CHECK_THROWS_AS(d.load_checkpoint(path), FormatError);
}

TEST_CASE("history CSV") {
  QuietLog quiet;
  Trainer<float> t(toy_run(ModelKind::kCnerv, 1), toy_video());
  t.train();
  const auto path = scratch("history.csv");
  t.write_history_csv(path);
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header == "step,split,frame_id,psnr,ms_ssim,loss");
  Index rows = 0;
  for (std::string line; std::getline(f, line);) ++rows;
  CHECK(rows == 16);
}

TEST_CASE("encoding unseen frames") {
  QuietLog quiet;
  Trainer<float> nerv(toy_run(ModelKind::kNerv, 1), toy_video());
  CHECK_THROWS_WITH(nerv.encode_unseen(), "NeRV requires fine-tuning to encode unseen frames");

  const auto still = synth_toy_video(ToyKind::kStatic, 10, 32, 64, 0);
  Trainer<float> t(toy_run(ModelKind::kCnerv, 2), still);
  t.train();
  const auto enc = t.encode_frames({3, 4});
  CHECK(enc[0].latent.data() == enc[1].latent.data());
  CHECK(enc[0].psnr == enc[1].psnr);
  CHECK(std::isfinite(enc[1].psnr));
}

TEST_CASE("encode cost does not depend on the training-set size") {
  QuietLog quiet;
  const auto small = synth_toy_video(ToyKind::kBouncingRect, 5, 32, 64, 0);
  const auto large = synth_toy_video(ToyKind::kBouncingRect, 40, 32, 64, 0);
  Trainer<float> a(toy_run(ModelKind::kCnerv, 1), small), b(toy_run(ModelKind::kCnerv, 1), large);
  auto median_seconds = [](const Trainer<float>& t) {
    std::vector<double> s;
    for (int rep = 0; rep < 21; ++rep) {
      double total = 0;
      for (const auto& e : t.encode_frames(std::vector<Index>(20, 4))) total += e.seconds;
      s.push_back(total);
    }
    std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2), s.end());
    return s[s.size() / 2];
  };
  median_seconds(a);  // warm caches
  const double ta = median_seconds(a), tb = median_seconds(b);
  MESSAGE("20 encodes: median " << ta * 1e3 << " ms vs " << tb * 1e3 << " ms");
  CHECK(std::abs(ta - tb) / std::max(ta, tb) < 0.10);
}

TEST_CASE("embedding interpolation") {
  QuietLog quiet;
  const auto still = synth_toy_video(ToyKind::kStatic, 10, 32, 64, 0);
  Trainer<float> t(toy_run(ModelKind::kCnerv, 2), still);
  t.train();
  CHECK(t.interpolation_candidates() == std::vector<Index>{4});
  const auto r = t.interpolate(4);
  CHECK(r.interp_psnr == r.true_psnr);
  CHECK(std::isinf(r.pixel_psnr));
  CHECK_THROWS(t.interpolate(3));
  CHECK_THROWS(t.interpolate(9));
}

TEST_CASE("unseen frames beat a bicubic baseline with a 4x8 grid") {
  QuietLog quiet;
  auto run = toy_run(ModelKind::kCnerv, 100);
  run.model.cae.M = 4;
  run.model.cae.N = 8;
  run.model.feat_h = 8;
  run.model.feat_w = 16;
  Trainer<float> t(run, toy_video());
  t.train();
  double encoded = 0, baseline = 0;
  const auto frames = t.encode_unseen();
  for (const auto& e : frames) {
    encoded += e.psnr;
    const auto& img = toy_video().frames[static_cast<std::size_t>(e.frame_id)].image;
    baseline += psnr(bicubic_baseline(img, 8), img);
  }
  encoded /= static_cast<double>(frames.size());
  baseline /= static_cast<double>(frames.size());
  MESSAGE("unseen " << encoded << " dB vs bicubic x8 " << baseline << " dB");
  CHECK(std::isfinite(encoded));
  CHECK(encoded > baseline);
}
