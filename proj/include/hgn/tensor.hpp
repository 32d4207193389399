#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace hgn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrixXd>;
using SparseMatrixd = Eigen::SparseMatrix<double>;

Index shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Handle to a node of a Tape. Cheap to copy; the tape owns the storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  Tape& tape() const;
  int id() const { return id_; }

  const Shape& shape() const;
  Index rank() const { return static_cast<Index>(shape().size()); }
  Index dim(Index axis) const { return shape().at(static_cast<std::size_t>(axis)); }
  Index size() const;

  const Eigen::VectorXd& value() const;
  /// Row-major 2D view. Rank-1 tensors are viewed as a single row.
  ConstRowMap matrix() const;
  double item() const;

  /// Gradient from the last backward sweep; zeros when the node was not reached.
  Eigen::VectorXd grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only computation record. Node i only ever references inputs < i, so
/// append order is a valid topological order.
class Tape {
 public:
  using Backward = std::function<void(const Eigen::VectorXd& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Shape shape, Eigen::VectorXd value, std::string name = "leaf");
  Tensor scalar(double value) { return leaf({}, Eigen::VectorXd::Constant(1, value), "const"); }

  Tensor record(std::string op, std::vector<int> inputs, Shape shape, Eigen::VectorXd value,
                Backward backward);

  /// Reverse sweep from a scalar root. Clears previous gradients first, so
  /// repeated calls from the same root produce identical results.
  void backward(const Tensor& root);

  void accumulate(int id, const Eigen::Ref<const Eigen::VectorXd>& grad);

  std::size_t size() const { return nodes_.size(); }
  const std::string& op(int id) const { return node(id).op; }
  const std::vector<int>& inputs(int id) const { return node(id).inputs; }
  const Shape& shape(int id) const { return node(id).shape; }
  const Eigen::VectorXd& value(int id) const { return node(id).value; }
  Eigen::VectorXd grad(int id) const;

  /// Negates the backward rule of the named ops. Used to self-test the
  /// gradient checker; never set during training.
  void flip_backward_sign(std::set<std::string> ops) { flipped_ = std::move(ops); }

 private:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    Shape shape;
    Eigen::VectorXd value;
    Eigen::VectorXd grad;
    Backward backward;
  };

  const Node& node(int id) const;

  std::vector<Node> nodes_;
  std::set<std::string> flipped_;
};

// Elementwise and reductions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor relu(const Tensor& x);

// Dense linear algebra. matmul: [m,k]x[k,n]; affine: x[r,in]*W[in,out] + b[out].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Constant sparse operator applied on the left: [r',r] x X[r,f].
Tensor sparse_matmul(std::shared_ptr<const SparseMatrixd> op, const Tensor& x);

/// Layer normalization. For x[r,f] each row is normalized and gamma/beta have
/// length f. For x[n,c,h,w] each sample is normalized over (c,h,w) and
/// gamma/beta are per channel. Zero-variance rows normalize to exactly 0.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Image ops, NCHW.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride = 1,
              int padding = 0);
Tensor maxpool2d(const Tensor& input, int window);

/// Samples a 3x3 grid (spacing one feature pixel) of bilinear values around
/// each center and averages it. featmap is [c,h,w] or [1,c,h,w]; centers is
/// [m,2] holding normalized (x,y) in [0,1]^2. Returns [m,c]. Sample points are
/// clamped to the pixel-center range.
Tensor bilinear_roi_pool(const Tensor& featmap, const Tensor& centers);

// Variational latent.
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, std::mt19937_64& rng,
                      bool sample = true);
Tensor kl_divergence(const Tensor& mu, const Tensor& logvar);
Tensor mse(const Tensor& pred, const Tensor& target);

}  // namespace hgn
