#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace hgn {

/// Point distribution model over vectorized landmark sets
/// rho = [x0, y0, x1, y1, ...]. components holds one orthonormal mode per row.
template <typename Scalar>
struct PcaModel {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Vector mean;
  Matrix components;          // k x D
  Vector explained_variance;  // k, non-increasing
  Vector singular_values;     // all singular values of the centered data

  Eigen::Index num_components() const { return components.rows(); }
};

/// Numerical rank of a set of singular values sorted in decreasing order.
template <typename Derived>
Eigen::Index numerical_rank(const Eigen::MatrixBase<Derived>& singular_values, Eigen::Index rows,
                            Eigen::Index cols) {
  using Scalar = typename Derived::Scalar;
  if (singular_values.size() == 0) return 0;
  const Scalar tol = static_cast<Scalar>(std::max(rows, cols)) *
                     std::numeric_limits<Scalar>::epsilon() * singular_values(0);
  return (singular_values.array() > tol).count();
}

template <typename Derived>
PcaModel<typename Derived::Scalar> pca_fit(const Eigen::MatrixBase<Derived>& rho,
                                           Eigen::Index num_components) {
  using Scalar = typename Derived::Scalar;
  using Model = PcaModel<Scalar>;
  const Eigen::Index n = rho.rows();
  if (num_components < 1 || n < num_components)
    throw std::invalid_argument("pca_fit: need 1 <= num_components <= samples, got " +
                                std::to_string(num_components) + " with " + std::to_string(n) +
                                " samples");
  Model model;
  model.mean = rho.colwise().mean().transpose();
  const typename Model::Matrix centered = rho.rowwise() - model.mean.transpose();
  Eigen::JacobiSVD<typename Model::Matrix> svd(centered, Eigen::ComputeThinV);
  model.singular_values = svd.singularValues();
  const Eigen::Index rank = numerical_rank(model.singular_values, n, rho.cols());
  if (num_components > rank)
    throw std::invalid_argument("pca_fit: " + std::to_string(num_components) +
                                " components requested but data rank is " + std::to_string(rank));
  model.components = svd.matrixV().leftCols(num_components).transpose();
  const Scalar dof = static_cast<Scalar>(std::max<Eigen::Index>(n - 1, 1));
  model.explained_variance = model.singular_values.head(num_components).array().square() / dof;
  return model;
}

template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pca_project(const PcaModel<Scalar>& model,
                                                     const Eigen::MatrixBase<Derived>& rho) {
  return model.components * (rho - model.mean);
}

template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pca_decode(const PcaModel<Scalar>& model,
                                                    const Eigen::MatrixBase<Derived>& coeffs) {
  if (coeffs.size() != model.num_components())
    throw std::invalid_argument("pca_decode: coefficient count mismatch");
  return model.mean + model.components.transpose() * coeffs;
}

}  // namespace hgn
