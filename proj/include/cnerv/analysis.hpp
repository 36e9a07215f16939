#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cnerv {

enum class SplitLabel : std::uint8_t { kSeen = 0, kUnseen = 1 };

/// One row per frame, in temporal order.
struct EmbeddingMatrix {
  Eigen::MatrixXd values;
  std::vector<SplitLabel> labels;

  Eigen::Index rows() const { return values.rows(); }
  EmbeddingMatrix select(SplitLabel label) const;
};

struct UniformityConfig {
  double temperature = 2.0;
  bool normalize = true;
  /// Use exp(-t (||f(x)|| - ||f(y)||)^2), the difference of row norms, instead of the
  /// squared distance between rows.
  bool norm_difference = false;
};

/// Rows scaled to unit L2 norm; zero rows stay zero.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& x);

/// log of the mean over distinct pairs of exp(-t * ||f(x) - f(y)||^2).
double uniformity(const EmbeddingMatrix& e, const UniformityConfig& cfg = {});

/// Mean L2 distance between consecutive rows of the normalized matrix.
double neighbor_distance(const EmbeddingMatrix& e);
/// Mean L2 distance over all distinct pairs of normalized rows.
double mean_pairwise_distance(const EmbeddingMatrix& e);
/// neighbor_distance / mean_pairwise_distance; 0 when the denominator is 0.
double normalized_distance(const EmbeddingMatrix& e);

/// tr(K H L H) / (n - 1)^2 with H the centering matrix.
double hsic(const Eigen::MatrixXd& gram_k, const Eigen::MatrixXd& gram_l);
/// Linear CKA of two row-aligned embedding matrices.
double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);
/// Symmetric grid of pairwise CKA values.
Eigen::MatrixXd cka_grid(const std::vector<Eigen::MatrixXd>& matrices);

// Binary table: "CEMB" | u32 version | u64 rows | u64 cols | rows x u8 label | rows*cols f64 (row-major) | u32 crc32
void write_embedding_table(const std::filesystem::path& path, const EmbeddingMatrix& e);
EmbeddingMatrix read_embedding_table(const std::filesystem::path& path);
void write_embedding_csv(const std::filesystem::path& path, const EmbeddingMatrix& e);
void write_cka_csv(const std::filesystem::path& path, const std::vector<std::string>& names, const Eigen::MatrixXd& grid);

}  // namespace cnerv
