#pragma once

#include "hgn/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

namespace hgn {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Half-open node index range [begin, end) holding one closed contour.
struct OrganRange {
  Index begin = 0;
  Index end = 0;
  Index size() const { return end - begin; }
  friend bool operator==(const OrganRange&, const OrganRange&) = default;
};

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration on a fixed pseudo-random start vector.
template <typename Derived>
typename Derived::Scalar largest_eigenvalue(const Eigen::MatrixBase<Derived>& sym,
                                            typename Derived::Scalar tol = 1e-9,
                                            int max_iterations = 10000) {
  using Scalar = typename Derived::Scalar;
  const Index n = sym.rows();
  std::mt19937_64 gen(0x5eedULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v(n);
  for (Index i = 0; i < n; ++i) v[i] = Scalar(unit(gen));
  v.normalize();
  Scalar lambda = v.dot(sym * v);
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w = sym * v;
    const Scalar norm = w.norm();
    if (norm == Scalar(0)) return Scalar(0);
    v = w / norm;
    const Scalar next = v.dot(sym * v);
    const bool done = std::abs(next - lambda) <= tol * std::max(Scalar(1), std::abs(next));
    lambda = next;
    if (done) break;
  }
  return lambda;
}

template <typename Scalar>
struct Laplacian {
  DenseMatrix<Scalar> laplacian;
  DenseMatrix<Scalar> scaled;  // 2 L / lambda_max - I
  Scalar lambda_max;
};

/// L = D - A and its rescaling to spectrum [-1, 1] for the Chebyshev basis.
template <typename Derived>
Laplacian<typename Derived::Scalar> build_laplacian(const Eigen::MatrixBase<Derived>& adjacency) {
  using Scalar = typename Derived::Scalar;
  if (adjacency.rows() != adjacency.cols() || adjacency.rows() == 0)
    throw std::invalid_argument("build_laplacian: adjacency must be square and nonempty");
  if ((adjacency.array() == Scalar(0)).all())
    throw std::invalid_argument("build_laplacian: adjacency has no edges");
  Laplacian<Scalar> out;
  out.laplacian = -adjacency;
  out.laplacian.diagonal() = adjacency.rowwise().sum();
  out.lambda_max = largest_eigenvalue(out.laplacian);
  const Index n = adjacency.rows();
  out.scaled = (Scalar(2) / out.lambda_max) * out.laplacian -
               DenseMatrix<Scalar>::Identity(n, n);
  return out;
}

/// Adjacency of disjoint closed cycles, one per organ range.
Eigen::MatrixXd cycle_adjacency(const std::vector<OrganRange>& organs);

/// Fixed fine-to-coarse pairing for one resolution step. pool averages each
/// group; unpool copies coarse node i to fine node 2i and places fine node 2i+1
/// at the midpoint of coarse i and its successor on the coarse cycle.
struct PoolingPlan {
  Index fine_nodes = 0;
  Index coarse_nodes = 0;
  std::vector<OrganRange> fine_organs;
  std::vector<OrganRange> coarse_organs;
  std::vector<std::vector<Index>> groups;  // coarse node -> fine nodes
  std::shared_ptr<const SparseMatrixd> pool;    // coarse x fine
  std::shared_ptr<const SparseMatrixd> unpool;  // fine x coarse
};

/// num_levels resolution levels including the finest, so num_levels - 1 plans.
std::vector<PoolingPlan> build_pooling_plan(const std::vector<OrganRange>& organs, int num_levels);

struct GraphLevel {
  Index num_nodes = 0;
  std::vector<OrganRange> organs;
  Eigen::MatrixXd adjacency;
  double lambda_max = 0.0;
  std::shared_ptr<const SparseMatrixd> laplacian_scaled;
};

/// Node set, contour adjacency and the precomputed resolution hierarchy. Shared
/// by every sample; immutable once built.
class GraphTopology {
 public:
  static GraphTopology from_organ_sizes(const std::vector<Index>& organ_sizes, int num_levels = 2);

  Index num_nodes() const { return levels_.front().num_nodes; }
  const std::vector<OrganRange>& organs() const { return levels_.front().organs; }
  const Eigen::MatrixXd& adjacency() const { return levels_.front().adjacency; }
  const std::vector<GraphLevel>& levels() const { return levels_; }
  const GraphLevel& level(std::size_t k) const { return levels_.at(k); }
  const std::vector<PoolingPlan>& plans() const { return plans_; }

 private:
  std::vector<GraphLevel> levels_;
  std::vector<PoolingPlan> plans_;
};

inline constexpr Index kRightLungPoints = 44;
inline constexpr Index kLeftLungPoints = 50;
inline constexpr Index kHeartPoints = 26;
inline constexpr Index kLandmarkCount = kRightLungPoints + kLeftLungPoints + kHeartPoints;

/// Right lung, left lung, heart contours; two resolution levels.
const GraphTopology& chest_topology();

/// sum_k T_k(L~) X theta_k + bias with T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2}.
/// theta is [K, in, out]; bias is [out].
Tensor chebyshev_conv(const Tensor& x, std::shared_ptr<const SparseMatrixd> laplacian_scaled,
                      const Tensor& theta, const Tensor& bias);

Tensor pool(const Tensor& x, const PoolingPlan& plan);
Tensor unpool(const Tensor& x, const PoolingPlan& plan);

/// Pooling of plain node feature matrices (e.g. coarse regression targets).
template <typename Derived>
DenseMatrix<typename Derived::Scalar> pool(const Eigen::MatrixBase<Derived>& x,
                                           const PoolingPlan& plan) {
  if (x.rows() != plan.fine_nodes) throw std::invalid_argument("pool: row count mismatch");
  return (plan.pool->template cast<typename Derived::Scalar>() * x.derived()).eval();
}

}  // namespace hgn
