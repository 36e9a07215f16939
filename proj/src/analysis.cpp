#include "cnerv/analysis.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "cnerv/bitstream.hpp"
#include "cnerv/bytes.hpp"
#include "cnerv/error.hpp"

namespace cnerv {

namespace {

void require_rows(const EmbeddingMatrix& e, const char* op) {
  if (e.rows() < 2) throw Error(std::string(op) + ": need at least 2 rows");
}

Eigen::MatrixXd prepared(const EmbeddingMatrix& e, bool normalize) {
  return normalize ? normalize_rows(e.values) : e.values;
}

}  // namespace

EmbeddingMatrix EmbeddingMatrix::select(SplitLabel label) const {
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) keep.push_back(static_cast<Eigen::Index>(i));
  EmbeddingMatrix out;
  out.values.resize(static_cast<Eigen::Index>(keep.size()), values.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(keep[i]);
    out.labels.push_back(label);
  }
  return out;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0) out.row(i) /= n;
  }
  return out;
}

double uniformity(const EmbeddingMatrix& e, const UniformityConfig& cfg) {
  require_rows(e, "uniformity");
  if (!(cfg.temperature > 0)) throw Error("uniformity: temperature must be positive");
  const Eigen::MatrixXd f = prepared(e, cfg.normalize);
  const Eigen::Index n = f.rows();
  // log-mean-exp over pairs, shifted by the largest exponent for stability
  std::vector<double> expo;
  expo.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double d2;
      if (cfg.norm_difference) {
        const double diff = f.row(i).norm() - f.row(j).norm();
        d2 = diff * diff;
      } else {
        d2 = (f.row(i) - f.row(j)).squaredNorm();
      }
      expo.push_back(-cfg.temperature * d2);
    }
  }
  double top = expo.front();
  for (double v : expo) top = std::max(top, v);
  double acc = 0;
  for (double v : expo) acc += std::exp(v - top);
  return top + std::log(acc / static_cast<double>(expo.size()));
}

double neighbor_distance(const EmbeddingMatrix& e) {
  require_rows(e, "neighbor_distance");
  const Eigen::MatrixXd f = normalize_rows(e.values);
  double acc = 0;
  for (Eigen::Index i = 0; i + 1 < f.rows(); ++i) acc += (f.row(i) - f.row(i + 1)).norm();
  return acc / static_cast<double>(f.rows() - 1);
}

double mean_pairwise_distance(const EmbeddingMatrix& e) {
  require_rows(e, "mean_pairwise_distance");
  const Eigen::MatrixXd f = normalize_rows(e.values);
  double acc = 0;
  std::size_t pairs = 0;
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (Eigen::Index j = i + 1; j < f.rows(); ++j) {
      acc += (f.row(i) - f.row(j)).norm();
      ++pairs;
    }
  return acc / static_cast<double>(pairs);
}

double normalized_distance(const EmbeddingMatrix& e) {
  const double denom = mean_pairwise_distance(e);
  if (denom == 0.0) return 0.0;
  return neighbor_distance(e) / denom;
}

double hsic(const Eigen::MatrixXd& k, const Eigen::MatrixXd& l) {
  const Eigen::Index n = k.rows();
  if (n < 2 || k.cols() != n || l.rows() != n || l.cols() != n) throw Error("hsic: Gram matrices must be n x n, n >= 2");
  const Eigen::MatrixXd h =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  const double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  return (k * h * l * h).trace() / denom;
}

double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) throw Error("linear_cka: row counts differ");
  const Eigen::MatrixXd k = x * x.transpose();
  const Eigen::MatrixXd l = y * y.transpose();
  const double kk = hsic(k, k), ll = hsic(l, l);
  if (!(kk > 0) || !(ll > 0)) throw Error("linear_cka: undefined for zero-variance input");
  return hsic(k, l) / std::sqrt(kk * ll);
}

Eigen::MatrixXd cka_grid(const std::vector<Eigen::MatrixXd>& matrices) {
  const auto n = static_cast<Eigen::Index>(matrices.size());
  Eigen::MatrixXd grid(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    grid(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      grid(i, j) = grid(j, i) =
          linear_cka(matrices[static_cast<std::size_t>(i)], matrices[static_cast<std::size_t>(j)]);
    }
  }
  return grid;
}

void write_embedding_table(const std::filesystem::path& path, const EmbeddingMatrix& e) {
  if (static_cast<Eigen::Index>(e.labels.size()) != e.rows()) throw Error("embedding table: label count mismatch");
  ByteWriter out;
  out.str("CEMB");
  out.u32(1);
  out.u64(static_cast<std::uint64_t>(e.values.rows()));
  out.u64(static_cast<std::uint64_t>(e.values.cols()));
  for (auto label : e.labels) out.u8(static_cast<std::uint8_t>(label));
  for (Eigen::Index i = 0; i < e.values.rows(); ++i)
    for (Eigen::Index j = 0; j < e.values.cols(); ++j) out.f64(e.values(i, j));
  out.u32(crc32(out.buffer()));
  write_file_atomic(path, out.buffer());
}

EmbeddingMatrix read_embedding_table(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 28) throw FormatError("embedding table too short: " + path.string());
  const auto body = std::span<const std::uint8_t>(bytes).first(bytes.size() - 4);
  ByteReader tail(std::span<const std::uint8_t>(bytes).last(4));
  ByteReader in(body);
  if (in.str(4) != "CEMB") throw FormatError("not an embedding table: " + path.string());
  if (tail.u32() != crc32(body)) throw ChecksumError("embedding table CRC32 mismatch: " + path.string());
  if (in.u32() != 1) throw FormatError("unsupported embedding table version");
  const auto rows = static_cast<Eigen::Index>(in.u64());
  const auto cols = static_cast<Eigen::Index>(in.u64());
  if (static_cast<std::uint64_t>(in.remaining()) != static_cast<std::uint64_t>(rows) * (1 + 8 * static_cast<std::uint64_t>(cols))) {
    throw FormatError("embedding table size mismatch: " + path.string());
  }
  EmbeddingMatrix e;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto label = in.u8();
    if (label > 1) throw FormatError("invalid split label");
    e.labels.push_back(static_cast<SplitLabel>(label));
  }
  e.values.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) e.values(i, j) = in.f64();
  return e;
}

void write_embedding_csv(const std::filesystem::path& path, const EmbeddingMatrix& e) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "frame,split";
  for (Eigen::Index j = 0; j < e.values.cols(); ++j) f << ",v" << j;
  f << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < e.values.rows(); ++i) {
    f << i << ',' << (e.labels[static_cast<std::size_t>(i)] == SplitLabel::kSeen ? "seen" : "unseen");
    for (Eigen::Index j = 0; j < e.values.cols(); ++j) f << ',' << e.values(i, j);
    f << '\n';
  }
}

void write_cka_csv(const std::filesystem::path& path, const std::vector<std::string>& names, const Eigen::MatrixXd& grid) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "method";
  for (const auto& n : names) f << ',' << n;
  f << '\n' << std::setprecision(12);
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    f << names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < grid.cols(); ++j) f << ',' << grid(i, j);
    f << '\n';
  }
}

}  // namespace cnerv
