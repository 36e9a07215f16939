#include <doctest.h>

#include <filesystem>
#include <random>

#include "cnerv/analysis.hpp"
#include "cnerv/error.hpp"
#include "support/oracles.hpp"

using namespace cnerv;

namespace {

EmbeddingMatrix matrix(const Eigen::MatrixXd& v) {
  return {v, std::vector<SplitLabel>(static_cast<std::size_t>(v.rows()), SplitLabel::kSeen)};
}

Eigen::MatrixXd random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
}

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(r, c);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  return a;
}

}  // namespace

TEST_CASE("uniformity") {
  CHECK(uniformity(matrix(Eigen::MatrixXd::Ones(4, 3))) == 0.0);
  Eigen::MatrixXd anti(2, 3);
  anti << 1, 0, 0, -1, 0, 0;
  CHECK(uniformity(matrix(anti)) == doctest::Approx(-8.0).epsilon(1e-15));
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    const auto x = gaussian(10, 8, rng);
    CHECK(std::abs(uniformity(matrix(x)) - testing::uniformity_loops(x, 2.0)) <= 1e-12);
    CHECK(uniformity(matrix(x)) < 0);
  }
  CHECK_THROWS(uniformity(matrix(Eigen::MatrixXd::Ones(1, 3))));
  CHECK_THROWS(uniformity(matrix(anti), UniformityConfig{0.0}));
  UniformityConfig typeset;
  typeset.norm_difference = true;
  CHECK(uniformity(matrix(gaussian(6, 4, rng)), typeset) == doctest::Approx(0.0));
}

TEST_CASE("neighbour and normalized distance") {
  CHECK(neighbor_distance(matrix(Eigen::MatrixXd::Ones(5, 2))) == 0.0);
  CHECK(normalized_distance(matrix(Eigen::MatrixXd::Ones(5, 2))) == 0.0);
  Eigen::MatrixXd alt(6, 2);
  for (int i = 0; i < 6; ++i) alt.row(i) = i % 2 ? Eigen::RowVector2d(0, 1) : Eigen::RowVector2d(1, 0);
  const double uv = std::sqrt(2.0);
  CHECK(neighbor_distance(matrix(alt)) == doctest::Approx(uv).epsilon(1e-15));
  // 9 of the 15 pairs straddle u and v
  CHECK(mean_pairwise_distance(matrix(alt)) == doctest::Approx(uv * 9 / 15).epsilon(1e-15));
  CHECK(normalized_distance(matrix(alt)) == doctest::Approx(15.0 / 9).epsilon(1e-15));
  CHECK_THROWS(neighbor_distance(matrix(Eigen::MatrixXd::Ones(1, 2))));
}

TEST_CASE("linear CKA") {
  std::mt19937_64 rng(2);
  const auto x = gaussian(12, 5, rng);
  CHECK(linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(linear_cka(x, 3.0 * x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(linear_cka(x, x * random_orthogonal(5, rng)) - 1.0) <= 1e-9);
  for (int rep = 0; rep < 20; ++rep) {
    const auto a = gaussian(12, 4, rng), b = gaussian(12, 7, rng);
    const double c = linear_cka(a, b);
    CHECK(c >= 0);
    CHECK(c <= 1);
    CHECK(std::abs(c - linear_cka(b, a)) <= 1e-12);
    CHECK(std::abs(c - linear_cka(2.5 * a, b * random_orthogonal(7, rng))) <= 1e-9);
  }
  CHECK_THROWS(linear_cka(Eigen::MatrixXd::Ones(5, 3), x.topRows(5)));
  CHECK_THROWS(linear_cka(x, x.topRows(5)));
}

TEST_CASE("HSIC is the biased estimator") {
  std::mt19937_64 rng(3);
  const auto x = gaussian(6, 3, rng), y = gaussian(6, 2, rng);
  const Eigen::MatrixXd k = x * x.transpose(), l = y * y.transpose();
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(6, 6) - Eigen::MatrixXd::Constant(6, 6, 1.0 / 6);
  CHECK(hsic(k, l) == doctest::Approx((k * h * l * h).trace() / 25.0).epsilon(1e-12));
}

TEST_CASE("CKA grid is deterministic and symmetric") {
  std::mt19937_64 rng(4);
  const std::vector<Eigen::MatrixXd> mats{gaussian(8, 3, rng), gaussian(8, 5, rng), gaussian(8, 2, rng)};
  const auto a = cka_grid(mats), b = cka_grid(mats);
  CHECK(a == b);
  CHECK((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  for (int i = 0; i < 3; ++i) CHECK(a(i, i) == doctest::Approx(1.0));
}

TEST_CASE("embedding table round trip") {
  std::mt19937_64 rng(5);
  EmbeddingMatrix e{gaussian(5, 4, rng), {SplitLabel::kSeen, SplitLabel::kSeen, SplitLabel::kUnseen,
                                          SplitLabel::kSeen, SplitLabel::kUnseen}};
  const auto path = std::filesystem::temp_directory_path() / "cnerv_table.cemb";
  write_embedding_table(path, e);
  const auto back = read_embedding_table(path);
  CHECK(back.values == e.values);
  CHECK(back.labels == e.labels);
  CHECK(e.select(SplitLabel::kUnseen).rows() == 2);
  CHECK(e.select(SplitLabel::kUnseen).values.row(1) == e.values.row(4));
}
