#include "hgn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hgn {

namespace {

using RowMap = Eigen::Map<RowMatrixXd>;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_same_tape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.valid() && b.valid(), std::string(op) + ": invalid tensor");
  require(&a.tape() == &b.tape(), std::string(op) + ": tensors live on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_same_tape(a, b, op);
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

// Row-major (rows, cols) view of a tensor: rank 1 is a row, rank >= 2 folds
// trailing axes into columns.
std::pair<Index, Index> as_matrix(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  Index cols = 1;
  for (std::size_t i = 1; i < s.size(); ++i) cols *= s[i];
  return {s[0], cols};
}

ConstRowMap view(const Eigen::VectorXd& v, Index rows, Index cols) {
  return ConstRowMap(v.data(), rows, cols);
}

}  // namespace

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor / Tape

Tape& Tensor::tape() const {
  if (!tape_) throw std::logic_error("tensor is not attached to a tape");
  return *tape_;
}
const Shape& Tensor::shape() const { return tape().shape(id_); }
Index Tensor::size() const { return value().size(); }
const Eigen::VectorXd& Tensor::value() const { return tape().value(id_); }
ConstRowMap Tensor::matrix() const {
  auto [r, c] = as_matrix(shape());
  return view(value(), r, c);
}
double Tensor::item() const {
  require(size() == 1, "item(): tensor has " + std::to_string(size()) + " elements");
  return value()[0];
}
Eigen::VectorXd Tensor::grad() const { return tape().grad(id_); }

const Tape::Node& Tape::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw std::out_of_range("tape node " + std::to_string(id) + " does not exist");
  return nodes_[static_cast<std::size_t>(id)];
}

Tensor Tape::leaf(Shape shape, Eigen::VectorXd value, std::string name) {
  return record(std::move(name), {}, std::move(shape), std::move(value), nullptr);
}

Tensor Tape::record(std::string op, std::vector<int> inputs, Shape shape, Eigen::VectorXd value,
                    Backward backward) {
  require(shape_size(shape) == value.size(),
          op + ": value length " + std::to_string(value.size()) + " does not match shape " +
              shape_str(shape));
  const int id = static_cast<int>(nodes_.size());
  for (int in : inputs) require(in >= 0 && in < id, op + ": input node is not older than output");
  nodes_.push_back({std::move(op), std::move(inputs), std::move(shape), std::move(value),
                    Eigen::VectorXd(), std::move(backward)});
  return Tensor(this, id);
}

void Tape::accumulate(int id, const Eigen::Ref<const Eigen::VectorXd>& grad) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.size() == 0)
    n.grad = grad;
  else
    n.grad += grad;
}

Eigen::VectorXd Tape::grad(int id) const {
  const Node& n = node(id);
  if (n.grad.size() == 0) return Eigen::VectorXd::Zero(n.value.size());
  return n.grad;
}

void Tape::backward(const Tensor& root) {
  require(root.valid() && &root.tape() == this, "backward: root does not belong to this tape");
  require(root.size() == 1, "backward: root must be scalar, got shape " + shape_str(root.shape()));
  for (Node& n : nodes_) n.grad.resize(0);
  nodes_[static_cast<std::size_t>(root.id())].grad = Eigen::VectorXd::Ones(1);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || n.grad.size() == 0) continue;
    // Copy: the callback may accumulate into other nodes, never into itself.
    const Eigen::VectorXd g = flipped_.count(n.op) ? Eigen::VectorXd(-n.grad) : n.grad;
    n.backward(g);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tape* t = &a.tape();
  const int ia = a.id(), ib = b.id();
  return t->record("add", {ia, ib}, a.shape(), a.value() + b.value(),
                   [t, ia, ib](const Eigen::VectorXd& g) {
                     t->accumulate(ia, g);
                     t->accumulate(ib, g);
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tape* t = &a.tape();
  const int ia = a.id(), ib = b.id();
  return t->record("sub", {ia, ib}, a.shape(), a.value() - b.value(),
                   [t, ia, ib](const Eigen::VectorXd& g) {
                     t->accumulate(ia, g);
                     t->accumulate(ib, -g);
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tape* t = &a.tape();
  const int ia = a.id(), ib = b.id();
  return t->record("mul", {ia, ib}, a.shape(), a.value().cwiseProduct(b.value()),
                   [t, ia, ib](const Eigen::VectorXd& g) {
                     t->accumulate(ia, g.cwiseProduct(t->value(ib)));
                     t->accumulate(ib, g.cwiseProduct(t->value(ia)));
                   });
}

Tensor scale(const Tensor& a, double factor) {
  Tape* t = &a.tape();
  const int ia = a.id();
  return t->record("scale", {ia}, a.shape(), a.value() * factor,
                   [t, ia, factor](const Eigen::VectorXd& g) { t->accumulate(ia, g * factor); });
}

Tensor sum(const Tensor& a) {
  Tape* t = &a.tape();
  const int ia = a.id();
  const Index n = a.size();
  return t->record("sum", {ia}, {}, Eigen::VectorXd::Constant(1, a.value().sum()),
                   [t, ia, n](const Eigen::VectorXd& g) {
                     t->accumulate(ia, Eigen::VectorXd::Constant(n, g[0]));
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_size(shape) == a.size(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tape* t = &a.tape();
  const int ia = a.id();
  return t->record("reshape", {ia}, std::move(shape), a.value(),
                   [t, ia](const Eigen::VectorXd& g) { t->accumulate(ia, g); });
}

Tensor relu(const Tensor& x) {
  Tape* t = &x.tape();
  const int ix = x.id();
  return t->record("relu", {ix}, x.shape(), x.value().cwiseMax(0.0),
                   [t, ix](const Eigen::VectorXd& g) {
                     const Eigen::VectorXd& v = t->value(ix);
                     t->accumulate(ix, (v.array() > 0.0).select(g, 0.0));
                   });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b, "matmul");
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  Eigen::VectorXd out(m * n);
  RowMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  Tape* t = &a.tape();
  const int ia = a.id(), ib = b.id();
  return t->record("matmul", {ia, ib}, {m, n}, std::move(out),
                   [t, ia, ib, m, k, n](const Eigen::VectorXd& g) {
                     ConstRowMap gm(g.data(), m, n);
                     Eigen::VectorXd ga(m * k), gb(k * n);
                     RowMap(ga.data(), m, k).noalias() =
                         gm * view(t->value(ib), k, n).transpose();
                     RowMap(gb.data(), k, n).noalias() =
                         view(t->value(ia), m, k).transpose() * gm;
                     t->accumulate(ia, ga);
                     t->accumulate(ib, gb);
                   });
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_same_tape(x, weight, "affine");
  require_same_tape(x, bias, "affine");
  require(weight.rank() == 2, "affine: weight must be rank 2");
  const auto [r, in] = as_matrix(x.shape());
  const Index out_f = weight.dim(1);
  require(weight.dim(0) == in, "affine: input has " + std::to_string(in) +
                                   " features, weight expects " + std::to_string(weight.dim(0)));
  require(bias.size() == out_f, "affine: bias length does not match output features");
  Eigen::VectorXd out(r * out_f);
  RowMap om(out.data(), r, out_f);
  om.noalias() = view(x.value(), r, in) * weight.matrix();
  om.rowwise() += bias.value().transpose();
  Tape* t = &x.tape();
  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  const Shape shape = x.rank() == 1 ? Shape{out_f} : Shape{r, out_f};
  return t->record("affine", {ix, iw, ib}, shape, std::move(out),
                   [t, ix, iw, ib, r, in, out_f](const Eigen::VectorXd& g) {
                     ConstRowMap gm(g.data(), r, out_f);
                     Eigen::VectorXd gx(r * in), gw(in * out_f);
                     RowMap(gx.data(), r, in).noalias() =
                         gm * view(t->value(iw), in, out_f).transpose();
                     RowMap(gw.data(), in, out_f).noalias() =
                         view(t->value(ix), r, in).transpose() * gm;
                     t->accumulate(ix, gx);
                     t->accumulate(iw, gw);
                     t->accumulate(ib, gm.colwise().sum().transpose());
                   });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b, "concat_cols");
  require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
          "concat_cols: need rank-2 tensors with equal row counts, got " + shape_str(a.shape()) +
              " and " + shape_str(b.shape()));
  const Index r = a.dim(0), fa = a.dim(1), fb = b.dim(1);
  Eigen::VectorXd out(r * (fa + fb));
  RowMap om(out.data(), r, fa + fb);
  om.leftCols(fa) = a.matrix();
  om.rightCols(fb) = b.matrix();
  Tape* t = &a.tape();
  const int ia = a.id(), ib = b.id();
  return t->record("concat_cols", {ia, ib}, {r, fa + fb}, std::move(out),
                   [t, ia, ib, r, fa, fb](const Eigen::VectorXd& g) {
                     ConstRowMap gm(g.data(), r, fa + fb);
                     Eigen::VectorXd ga(r * fa), gb(r * fb);
                     RowMap(ga.data(), r, fa) = gm.leftCols(fa);
                     RowMap(gb.data(), r, fb) = gm.rightCols(fb);
                     t->accumulate(ia, ga);
                     t->accumulate(ib, gb);
                   });
}

Tensor sparse_matmul(std::shared_ptr<const SparseMatrixd> op, const Tensor& x) {
  require(op != nullptr, "sparse_matmul: null operator");
  const auto [r, f] = as_matrix(x.shape());
  require(op->cols() == r, "sparse_matmul: operator has " + std::to_string(op->cols()) +
                               " columns, input has " + std::to_string(r) + " rows");
  const Index rout = op->rows();
  Eigen::VectorXd out(rout * f);
  RowMap(out.data(), rout, f).noalias() = (*op) * view(x.value(), r, f);
  Tape* t = &x.tape();
  const int ix = x.id();
  return t->record("sparse_matmul", {ix}, {rout, f}, std::move(out),
                   [t, ix, op, r, f, rout](const Eigen::VectorXd& g) {
                     Eigen::VectorXd gx(r * f);
                     RowMap(gx.data(), r, f).noalias() =
                         op->transpose() * ConstRowMap(g.data(), rout, f);
                     t->accumulate(ix, gx);
                   });
}

// ---------------------------------------------------------------------------
// Layer norm

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_same_tape(x, gamma, "layer_norm");
  require_same_tape(x, beta, "layer_norm");
  require(eps > 0.0, "layer_norm: eps must be positive");
  Index groups = 0, group_len = 0, param_len = 0, inner = 1;
  if (x.rank() == 4) {
    groups = x.dim(0);
    param_len = x.dim(1);
    inner = x.dim(2) * x.dim(3);
    group_len = param_len * inner;
  } else if (x.rank() == 2 || x.rank() == 1) {
    std::tie(groups, group_len) = as_matrix(x.shape());
    param_len = group_len;
  } else {
    throw std::invalid_argument("layer_norm: unsupported rank " + std::to_string(x.rank()));
  }
  require(gamma.size() == param_len && beta.size() == param_len,
          "layer_norm: gamma/beta must have " + std::to_string(param_len) + " elements");

  const Eigen::VectorXd& xv = x.value();
  const Eigen::VectorXd& gv = gamma.value();
  const Eigen::VectorXd& bv = beta.value();
  Eigen::VectorXd xhat(xv.size()), inv_std(groups), out(xv.size());
  for (Index n = 0; n < groups; ++n) {
    auto seg = xv.segment(n * group_len, group_len);
    const double mean = seg.mean();
    const double var = (seg.array() - mean).square().mean();
    inv_std[n] = 1.0 / std::sqrt(var + eps);
    const bool constant = seg.maxCoeff() == seg.minCoeff();
    for (Index i = 0; i < group_len; ++i) {
      const Index k = n * group_len + i;
      const Index p = i / inner;
      xhat[k] = constant ? 0.0 : (xv[k] - mean) * inv_std[n];
      out[k] = xhat[k] * gv[p] + bv[p];
    }
  }

  Tape* t = &x.tape();
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t->record(
      "layer_norm", {ix, ig, ib}, x.shape(), std::move(out),
      [t, ix, ig, ib, groups, group_len, param_len, inner, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](const Eigen::VectorXd& g) {
        const Eigen::VectorXd& gv = t->value(ig);
        Eigen::VectorXd gx(g.size()), gg = Eigen::VectorXd::Zero(param_len),
                                      gb = Eigen::VectorXd::Zero(param_len);
        Eigen::VectorXd dxhat(group_len);
        for (Index n = 0; n < groups; ++n) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (Index i = 0; i < group_len; ++i) {
            const Index k = n * group_len + i;
            const Index p = i / inner;
            gg[p] += g[k] * xhat[k];
            gb[p] += g[k];
            dxhat[i] = g[k] * gv[p];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xhat[k];
          }
          mean_d /= static_cast<double>(group_len);
          mean_dx /= static_cast<double>(group_len);
          for (Index i = 0; i < group_len; ++i) {
            const Index k = n * group_len + i;
            gx[k] = inv_std[n] * (dxhat[i] - mean_d - xhat[k] * mean_dx);
          }
        }
        t->accumulate(ix, gx);
        t->accumulate(ig, gg);
        t->accumulate(ib, gb);
      });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  Index channels, height, width, kh, kw, out_h, out_w;
  int stride, padding;
  Index patch() const { return channels * kh * kw; }
  Index pixels() const { return out_h * out_w; }
};

void im2col(const double* img, const ConvGeometry& g, RowMatrixXd& cols) {
  cols.resize(g.patch(), g.pixels());
  for (Index c = 0; c < g.channels; ++c) {
    const double* plane = img + c * g.height * g.width;
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        double* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + i;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + iy * g.width;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + j;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const RowMatrixXd& cols, const ConvGeometry& g, double* img) {
  for (Index c = 0; c < g.channels; ++c) {
    double* plane = img + c * g.height * g.width;
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        const double* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + i;
          if (iy < 0 || iy >= g.height) continue;
          double* dst = plane + iy * g.width;
          const double* src = row + oy * g.out_w;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + j;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding) {
  require_same_tape(input, kernel, "conv2d");
  require_same_tape(input, bias, "conv2d");
  require(input.rank() == 4 && kernel.rank() == 4, "conv2d: input and kernel must be rank 4");
  require(stride >= 1 && padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
  const Index batch = input.dim(0), filters = kernel.dim(0);
  ConvGeometry geo{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3),
                   0,            0,            stride,       padding};
  require(kernel.dim(1) == geo.channels,
          "conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " channels, input has " +
              std::to_string(geo.channels));
  require(geo.kh <= geo.height + 2 * padding && geo.kw <= geo.width + 2 * padding,
          "conv2d: kernel larger than padded input");
  require(bias.size() == filters, "conv2d: bias length does not match filter count");
  geo.out_h = (geo.height + 2 * padding - geo.kh) / stride + 1;
  geo.out_w = (geo.width + 2 * padding - geo.kw) / stride + 1;

  const Index in_len = geo.channels * geo.height * geo.width;
  const Index out_len = filters * geo.pixels();
  ConstRowMap kmat(kernel.value().data(), filters, geo.patch());
  auto cols = std::make_shared<std::vector<RowMatrixXd>>(static_cast<std::size_t>(batch));
  Eigen::VectorXd out(batch * out_len);
  for (Index n = 0; n < batch; ++n) {
    RowMatrixXd& c = (*cols)[static_cast<std::size_t>(n)];
    im2col(input.value().data() + n * in_len, geo, c);
    RowMap om(out.data() + n * out_len, filters, geo.pixels());
    om.noalias() = kmat * c;
    om.colwise() += bias.value();
  }

  Tape* t = &input.tape();
  const int ii = input.id(), ik = kernel.id(), ib = bias.id();
  return t->record(
      "conv2d", {ii, ik, ib}, {batch, filters, geo.out_h, geo.out_w}, std::move(out),
      [t, ii, ik, ib, geo, batch, filters, in_len, out_len, cols](const Eigen::VectorXd& g) {
        ConstRowMap kmat(t->value(ik).data(), filters, geo.patch());
        Eigen::VectorXd gi = Eigen::VectorXd::Zero(batch * in_len);
        RowMatrixXd gk = RowMatrixXd::Zero(filters, geo.patch());
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(filters);
        RowMatrixXd dcols;
        for (Index n = 0; n < batch; ++n) {
          ConstRowMap gm(g.data() + n * out_len, filters, geo.pixels());
          const RowMatrixXd& c = (*cols)[static_cast<std::size_t>(n)];
          gk.noalias() += gm * c.transpose();
          gb += gm.rowwise().sum();
          dcols.noalias() = kmat.transpose() * gm;
          col2im(dcols, geo, gi.data() + n * in_len);
        }
        t->accumulate(ii, gi);
        t->accumulate(ik, Eigen::Map<const Eigen::VectorXd>(gk.data(), gk.size()));
        t->accumulate(ib, gb);
      });
}

Tensor maxpool2d(const Tensor& input, int window) {
  require(input.rank() == 4, "maxpool2d: input must be rank 4");
  require(window >= 1, "maxpool2d: window must be >= 1");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h % window == 0 && w % window == 0,
          "maxpool2d: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
              " not divisible by window " + std::to_string(window));
  const Index oh = h / window, ow = w / window;
  const Eigen::VectorXd& x = input.value();
  Eigen::VectorXd out(n * c * oh * ow);
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  Index k = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    const Index base = plane * h * w;
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox, ++k) {
        Index best = base + oy * window * w + ox * window;
        for (Index dy = 0; dy < window; ++dy)
          for (Index dx = 0; dx < window; ++dx) {
            const Index idx = base + (oy * window + dy) * w + ox * window + dx;
            if (x[idx] > x[best]) best = idx;  // strict: first occurrence wins ties
          }
        out[k] = x[best];
        argmax[static_cast<std::size_t>(k)] = best;
      }
    }
  }
  Tape* t = &input.tape();
  const int ii = input.id();
  const Index in_size = input.size();
  return t->record("maxpool2d", {ii}, {n, c, oh, ow}, std::move(out),
                   [t, ii, in_size, argmax = std::move(argmax)](const Eigen::VectorXd& g) {
                     Eigen::VectorXd gi = Eigen::VectorXd::Zero(in_size);
                     for (std::size_t j = 0; j < argmax.size(); ++j)
                       gi[argmax[j]] += g[static_cast<Index>(j)];
                     t->accumulate(ii, gi);
                   });
}

// ---------------------------------------------------------------------------
// Bilinear RoI pooling

namespace {

struct AxisSample {
  Index lo, hi;
  double frac;
  bool moves;  // false when clamped: position no longer depends on the center
};

AxisSample axis_sample(double pos, Index extent) {
  const double hi_limit = static_cast<double>(extent - 1);
  AxisSample s{0, 0, 0.0, true};
  if (pos < 0.0 || pos > hi_limit) s.moves = false;
  const double p = std::clamp(pos, 0.0, hi_limit);
  if (extent == 1) {
    s.moves = false;
    return s;
  }
  s.lo = std::min(static_cast<Index>(std::floor(p)), extent - 2);
  s.hi = s.lo + 1;
  s.frac = p - static_cast<double>(s.lo);
  return s;
}

}  // namespace

Tensor bilinear_roi_pool(const Tensor& featmap, const Tensor& centers) {
  require_same_tape(featmap, centers, "bilinear_roi_pool");
  require(featmap.rank() == 3 || (featmap.rank() == 4 && featmap.dim(0) == 1),
          "bilinear_roi_pool: featmap must be [c,h,w] or [1,c,h,w]");
  const Index off = featmap.rank() == 4 ? 1 : 0;
  const Index c = featmap.dim(off), h = featmap.dim(off + 1), w = featmap.dim(off + 2);
  require(c > 0 && h > 0 && w > 0, "bilinear_roi_pool: empty feature map");
  require(centers.rank() == 2 && centers.dim(1) == 2, "bilinear_roi_pool: centers must be [m,2]");
  const Index m = centers.dim(0);
  require(centers.value().allFinite(), "bilinear_roi_pool: non-finite center");

  const Eigen::VectorXd& f = featmap.value();
  const Eigen::VectorXd& ctr = centers.value();
  const Index plane = h * w;
  constexpr double kInv = 1.0 / 9.0;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m * c);
  for (Index i = 0; i < m; ++i) {
    const double cx = ctr[2 * i] * static_cast<double>(w) - 0.5;
    const double cy = ctr[2 * i + 1] * static_cast<double>(h) - 0.5;
    for (int dy = -1; dy <= 1; ++dy) {
      const AxisSample sy = axis_sample(cy + dy, h);
      for (int dx = -1; dx <= 1; ++dx) {
        const AxisSample sx = axis_sample(cx + dx, w);
        const double w00 = (1 - sy.frac) * (1 - sx.frac), w01 = (1 - sy.frac) * sx.frac;
        const double w10 = sy.frac * (1 - sx.frac), w11 = sy.frac * sx.frac;
        for (Index ch = 0; ch < c; ++ch) {
          const double* p = f.data() + ch * plane;
          out[i * c + ch] += kInv * (w00 * p[sy.lo * w + sx.lo] + w01 * p[sy.lo * w + sx.hi] +
                                     w10 * p[sy.hi * w + sx.lo] + w11 * p[sy.hi * w + sx.hi]);
        }
      }
    }
  }

  Tape* t = &featmap.tape();
  const int iff = featmap.id(), ic = centers.id();
  const Index fsize = featmap.size();
  return t->record(
      "bilinear_roi_pool", {iff, ic}, {m, c}, std::move(out),
      [t, iff, ic, fsize, c, h, w, m, plane](const Eigen::VectorXd& g) {
        const Eigen::VectorXd& f = t->value(iff);
        const Eigen::VectorXd& ctr = t->value(ic);
        Eigen::VectorXd gf = Eigen::VectorXd::Zero(fsize);
        Eigen::VectorXd gc = Eigen::VectorXd::Zero(2 * m);
        for (Index i = 0; i < m; ++i) {
          const double cx = ctr[2 * i] * static_cast<double>(w) - 0.5;
          const double cy = ctr[2 * i + 1] * static_cast<double>(h) - 0.5;
          for (int dy = -1; dy <= 1; ++dy) {
            const AxisSample sy = axis_sample(cy + dy, h);
            for (int dx = -1; dx <= 1; ++dx) {
              const AxisSample sx = axis_sample(cx + dx, w);
              const double w00 = (1 - sy.frac) * (1 - sx.frac), w01 = (1 - sy.frac) * sx.frac;
              const double w10 = sy.frac * (1 - sx.frac), w11 = sy.frac * sx.frac;
              double dfx = 0.0, dfy = 0.0;
              for (Index ch = 0; ch < c; ++ch) {
                const double go = g[i * c + ch] * kInv;
                const Index base = ch * plane;
                const double f00 = f[base + sy.lo * w + sx.lo], f01 = f[base + sy.lo * w + sx.hi];
                const double f10 = f[base + sy.hi * w + sx.lo], f11 = f[base + sy.hi * w + sx.hi];
                gf[base + sy.lo * w + sx.lo] += go * w00;
                gf[base + sy.lo * w + sx.hi] += go * w01;
                gf[base + sy.hi * w + sx.lo] += go * w10;
                gf[base + sy.hi * w + sx.hi] += go * w11;
                dfx += go * ((1 - sy.frac) * (f01 - f00) + sy.frac * (f11 - f10));
                dfy += go * ((1 - sx.frac) * (f10 - f00) + sx.frac * (f11 - f01));
              }
              if (sx.moves) gc[2 * i] += dfx * static_cast<double>(w);
              if (sy.moves) gc[2 * i + 1] += dfy * static_cast<double>(h);
            }
          }
        }
        t->accumulate(iff, gf);
        t->accumulate(ic, gc);
      });
}

// ---------------------------------------------------------------------------
// Variational latent and losses

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, std::mt19937_64& rng, bool sample) {
  require_same_shape(mu, logvar, "reparameterize");
  if (!sample) return mu;
  require(logvar.value().allFinite(), "reparameterize: non-finite logvar");
  const Index d = mu.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd eps(d);
  for (Index i = 0; i < d; ++i) eps[i] = normal(rng);
  const Eigen::VectorXd sigma = (logvar.value() * 0.5).array().exp().matrix();
  Eigen::VectorXd z = mu.value() + sigma.cwiseProduct(eps);
  Tape* t = &mu.tape();
  const int im = mu.id(), il = logvar.id();
  return t->record("reparameterize", {im, il}, mu.shape(), std::move(z),
                   [t, im, il, sigma, eps](const Eigen::VectorXd& g) {
                     t->accumulate(im, g);
                     t->accumulate(il, 0.5 * g.cwiseProduct(sigma).cwiseProduct(eps));
                   });
}

Tensor kl_divergence(const Tensor& mu, const Tensor& logvar) {
  require_same_shape(mu, logvar, "kl_divergence");
  const Eigen::ArrayXd m = mu.value().array(), lv = logvar.value().array();
  const double kl = -0.5 * (1.0 + lv - m.square() - lv.exp()).sum();
  Tape* t = &mu.tape();
  const int im = mu.id(), il = logvar.id();
  return t->record("kl_divergence", {im, il}, {}, Eigen::VectorXd::Constant(1, kl),
                   [t, im, il](const Eigen::VectorXd& g) {
                     t->accumulate(im, g[0] * t->value(im));
                     t->accumulate(il, (0.5 * g[0]) *
                                           (t->value(il).array().exp() - 1.0).matrix());
                   });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  const Index n = pred.size();
  require(n > 0, "mse: empty tensors");
  const double loss = (pred.value() - target.value()).squaredNorm() / static_cast<double>(n);
  Tape* t = &pred.tape();
  const int ip = pred.id(), it = target.id();
  return t->record("mse", {ip, it}, {}, Eigen::VectorXd::Constant(1, loss),
                   [t, ip, it, n](const Eigen::VectorXd& g) {
                     const Eigen::VectorXd d =
                         (2.0 * g[0] / static_cast<double>(n)) * (t->value(ip) - t->value(it));
                     t->accumulate(ip, d);
                     t->accumulate(it, -d);
                   });
}

}  // namespace hgn
