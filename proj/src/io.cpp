#include "cnerv/io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>

#include "cnerv/bytes.hpp"

namespace cnerv {

namespace fs = std::filesystem;

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

Tensor<double> from_interleaved(const std::vector<std::uint8_t>& px, Index c, Index h, Index w) {
  Eigen::VectorXd v(c * h * w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < c; ++ch) v[(ch * h + y) * w + x] = px[static_cast<std::size_t>((y * w + x) * c + ch)] / 255.0;
  return Tensor<double>({c, h, w}, std::move(v));
}

std::vector<std::uint8_t> to_interleaved(const Tensor<double>& img) {
  const Index c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(c * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < c; ++ch) px[static_cast<std::size_t>((y * w + x) * c + ch)] = to_byte(img.data()[(ch * h + y) * w + x]);
  return px;
}

// Binary PGM (P5) / PPM (P6), maxval 255.
Tensor<double> read_pnm(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (f.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(f, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t.push_back(ch);
      }
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw FormatError("undecodable image (expected binary P5/P6): " + path.string());
  Index w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw FormatError("undecodable image header: " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw FormatError("unsupported PNM geometry or depth: " + path.string());
  const Index c = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w * h * c));
  f.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (f.gcount() != static_cast<std::streamsize>(px.size())) throw FormatError("truncated image: " + path.string());
  return from_interleaved(px, c, h, w);
}

void write_pnm(const fs::path& path, const Tensor<double>& img) {
  const Index c = img.dim(0);
  if (c != 1 && c != 3) throw Error("PNM output needs 1 or 3 channels");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << (c == 3 ? "P6" : "P5") << '\n' << img.dim(2) << ' ' << img.dim(1) << "\n255\n";
  const auto px = to_interleaved(img);
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

Tensor<double> read_png(const fs::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw FormatError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) {
    throw FormatError("undecodable image (bad PNG signature): " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng initialization failed");
  }
  std::vector<std::uint8_t> px;
  Index w = 0, h = 0, c = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("undecodable PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  png_read_update_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  c = png_get_channels(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  px.resize(rowbytes * static_cast<std::size_t>(h));
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (Index y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = px.data() + static_cast<std::size_t>(y) * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (c != 1 && c != 3) throw FormatError("unsupported PNG channel layout: " + path.string());
  return from_interleaved(px, c, h, w);
}

void write_png(const fs::path& path, const Tensor<double>& img) {
  const Index c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (c != 1 && c != 3) throw Error("PNG output needs 1 or 3 channels");
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialization failed");
  }
  auto px = to_interleaved(img);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < h; ++y) png_write_row(png, px.data() + y * w * c);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

bool is_image(const fs::path& p) {
  const auto e = lower_ext(p);
  return e == ".png" || e == ".ppm" || e == ".pgm";
}

// Numeric value of the last digit run in the stem, or -1.
long long stem_number(const fs::path& p) {
  const std::string s = p.stem().string();
  long long value = -1;
  std::size_t i = s.size();
  while (i > 0 && !std::isdigit(static_cast<unsigned char>(s[i - 1]))) --i;
  std::size_t j = i;
  while (j > 0 && std::isdigit(static_cast<unsigned char>(s[j - 1]))) --j;
  if (j < i) value = std::stoll(s.substr(j, std::min<std::size_t>(i - j, 18)));
  return value;
}

}  // namespace

Tensor<double> read_image(const fs::path& path) {
  const auto e = lower_ext(path);
  if (e == ".png") return read_png(path);
  if (e == ".ppm" || e == ".pgm") return read_pnm(path);
  throw FormatError("unsupported image extension: " + path.string());
}

void write_image(const fs::path& path, const Tensor<double>& image) {
  if (image.rank() != 3) throw ShapeError("write_image: expected (C,H,W)");
  const auto e = lower_ext(path);
  if (e == ".png") return write_png(path, image);
  if (e == ".ppm" || e == ".pgm") return write_pnm(path, image);
  throw Error("unsupported image extension: " + path.string());
}

std::uint64_t FrameDataset::digest() const {
  std::uint64_t h = fnv1a64(manifest);
  for (const auto& f : frames) {
    std::vector<std::uint8_t> px(static_cast<std::size_t>(f.image.size()));
    for (Index i = 0; i < f.image.size(); ++i) px[static_cast<std::size_t>(i)] = to_byte(f.image.data()[i]);
    h = fnv1a64(px, h);
  }
  return h;
}

FrameDataset load_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("frame directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_image(entry.path())) files.push_back(entry.path());
  if (files.empty()) throw Error("no PNG/PPM frames in " + dir.string());
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const auto na = stem_number(a), nb = stem_number(b);
    if (na != nb) return na < nb;
    return a.filename().string() < b.filename().string();
  });
  FrameDataset data;
  std::ostringstream manifest;
  manifest << "frames " << files.size() << '\n';
  for (const auto& p : files) {
    Frame f;
    f.id = static_cast<Index>(data.frames.size());
    f.path = p;
    f.image = read_image(p);
    if (!data.frames.empty() && f.image.shape() != data.frames.front().image.shape()) {
      throw ShapeError("frame " + p.string() + " has shape " + shape_str(f.image.shape()) + ", expected " +
                       shape_str(data.frames.front().image.shape()));
    }
    manifest << f.id << ' ' << p.filename().string() << '\n';
    data.frames.push_back(std::move(f));
  }
  data.manifest = manifest.str();
  return data;
}

void write_frames(const fs::path& dir, const std::vector<Tensor<double>>& frames, const std::string& extension) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05zu", i);
    write_image(dir / (std::string(name) + extension), frames[i]);
  }
}

Tensor<double> center_crop(const Tensor<double>& image, Index crop_h, Index crop_w) {
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (crop_h < 1 || crop_w < 1 || crop_h > h || crop_w > w) {
    throw ShapeError("center_crop: crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) + " invalid for " +
                     shape_str(image.shape()));
  }
  const Index y0 = (h - crop_h) / 2, x0 = (w - crop_w) / 2;
  Eigen::VectorXd out(c * crop_h * crop_w);
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < crop_h; ++y)
      out.segment((ch * crop_h + y) * crop_w, crop_w) = image.data().segment((ch * h + y0 + y) * w + x0, crop_w);
  return Tensor<double>({c, crop_h, crop_w}, std::move(out));
}

Tensor<double> box_downsample(const Tensor<double>& image, Index factor) {
  if (factor < 1) throw ShapeError("box_downsample: factor must be >= 1");
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h % factor != 0 || w % factor != 0) {
    throw ShapeError("box_downsample: " + shape_str(image.shape()) + " not divisible by " + std::to_string(factor));
  }
  if (factor == 1) return image.detach();
  const Index oh = h / factor, ow = w / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(c * oh * ow);
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) out[(ch * oh + y / factor) * ow + x / factor] += image.data()[(ch * h + y) * w + x] * inv;
  return Tensor<double>({c, oh, ow}, std::move(out));
}

FrameDataset preprocess(const FrameDataset& data, Index crop_h, Index crop_w, Index factor) {
  FrameDataset out;
  std::ostringstream manifest;
  manifest << data.manifest << "preprocess crop " << crop_h << 'x' << crop_w << " factor " << factor << '\n';
  out.manifest = manifest.str();
  for (const auto& f : data.frames) {
    Frame g;
    g.id = f.id;
    g.path = f.path;
    g.image = box_downsample(center_crop(f.image, crop_h, crop_w), factor);
    out.frames.push_back(std::move(g));
  }
  return out;
}

namespace {

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
  if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
  return 0;
}

}  // namespace

Tensor<double> resize_bicubic(const Tensor<double>& image, Index height, Index width) {
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  Eigen::VectorXd out(c * height * width);
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < height; ++y) {
      const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
      const auto iy = static_cast<Index>(std::floor(fy));
      for (Index x = 0; x < width; ++x) {
        const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
        const auto ix = static_cast<Index>(std::floor(fx));
        double acc = 0;
        for (Index m = -1; m <= 2; ++m) {
          const double wy = cubic_weight(fy - static_cast<double>(iy + m));
          const Index yy = std::clamp<Index>(iy + m, 0, h - 1);
          for (Index n = -1; n <= 2; ++n) {
            const double wx = cubic_weight(fx - static_cast<double>(ix + n));
            const Index xx = std::clamp<Index>(ix + n, 0, w - 1);
            acc += wy * wx * image.data()[(ch * h + yy) * w + xx];
          }
        }
        out[(ch * height + y) * width + x] = acc;
      }
    }
  return Tensor<double>({c, height, width}, std::move(out));
}

ToyKind toy_kind_from_string(const std::string& s) {
  if (s == "moving-gradient") return ToyKind::kMovingGradient;
  if (s == "bouncing-rect") return ToyKind::kBouncingRect;
  if (s == "static") return ToyKind::kStatic;
  throw ConfigError("unknown synthetic video kind '" + s + "' (moving-gradient, bouncing-rect, static)");
}

std::string to_string(ToyKind kind) {
  switch (kind) {
    case ToyKind::kMovingGradient: return "moving-gradient";
    case ToyKind::kBouncingRect: return "bouncing-rect";
    case ToyKind::kStatic: return "static";
  }
  return "?";
}

BouncingRectGeometry bouncing_rect_geometry(Index height, Index width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BouncingRectGeometry g;
  g.rect_h = std::max<Index>(2, height * 3 / 8);
  g.rect_w = std::max<Index>(2, width / 4);
  g.vy = std::max<Index>(1, height / 16) + static_cast<Index>(rng() % 2);
  g.vx = std::max<Index>(1, width / 24) + static_cast<Index>(rng() % 2);
  return g;
}

namespace {

// Position along one axis of a point bouncing between 0 and span with velocity v.
Index bounce(Index start, Index v, Index t, Index span) {
  if (span <= 0) return 0;
  const Index period = 2 * span;
  Index p = (start + v * t) % period;
  if (p < 0) p += period;
  return p <= span ? p : period - p;
}

Tensor<double> bouncing_rect_frame(Index t, Index h, Index w, const BouncingRectGeometry& g, Index y0, Index x0) {
  Eigen::VectorXd v(3 * h * w);
  const Index ry = bounce(y0, g.vy, t, h - g.rect_h);
  const Index rx = bounce(x0, g.vx, t, w - g.rect_w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const double s = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
      double r = 0.15 + 0.6 * u, gr = 0.2 + 0.5 * s, b = 0.55 - 0.3 * u * s;
      if (y >= ry && y < ry + g.rect_h && x >= rx && x < rx + g.rect_w) {
        r = 0.95;
        gr = 0.85;
        b = 0.1;
      }
      v[(0 * h + y) * w + x] = r;
      v[(1 * h + y) * w + x] = gr;
      v[(2 * h + y) * w + x] = b;
    }
  return Tensor<double>({3, h, w}, std::move(v));
}

Tensor<double> moving_gradient_frame(Index t, Index h, Index w, double fx, double fy, double speed) {
  Eigen::VectorXd v(3 * h * w);
  for (Index ch = 0; ch < 3; ++ch)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
        const double s = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
        const double phase = 2 * std::numbers::pi * (fx * u + fy * s) - speed * static_cast<double>(t) +
                             2.0 * static_cast<double>(ch);
        v[(ch * h + y) * w + x] = 0.5 + 0.4 * std::sin(phase);
      }
  return Tensor<double>({3, h, w}, std::move(v));
}

}  // namespace

FrameDataset synth_toy_video(ToyKind kind, Index n, Index height, Index width, std::uint64_t seed) {
  if (n < 1 || height < 1 || width < 1) throw ConfigError("synth_toy_video: n, height, width must be positive");
  FrameDataset data;
  std::ostringstream manifest;
  manifest << "synth " << to_string(kind) << ' ' << n << ' ' << height << 'x' << width << " seed " << seed << '\n';
  data.manifest = manifest.str();
  std::mt19937_64 rng(seed);
  const auto geom = bouncing_rect_geometry(height, width, seed);
  const Index y0 = static_cast<Index>(rng() % static_cast<std::uint64_t>(std::max<Index>(1, height - geom.rect_h)));
  const Index x0 = static_cast<Index>(rng() % static_cast<std::uint64_t>(std::max<Index>(1, width - geom.rect_w)));
  const double fx = 1.0 + static_cast<double>(rng() % 3);
  const double fy = 0.5 + static_cast<double>(rng() % 2);
  const double speed = 0.25 + 0.05 * static_cast<double>(rng() % 4);
  for (Index t = 0; t < n; ++t) {
    Frame f;
    f.id = t;
    switch (kind) {
      case ToyKind::kBouncingRect: f.image = bouncing_rect_frame(t, height, width, geom, y0, x0); break;
      case ToyKind::kStatic: f.image = bouncing_rect_frame(0, height, width, geom, y0, x0); break;
      case ToyKind::kMovingGradient: f.image = moving_gradient_frame(t, height, width, fx, fy, speed); break;
    }
    data.frames.push_back(std::move(f));
  }
  return data;
}

}  // namespace cnerv
