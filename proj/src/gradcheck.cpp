#include "hgn/gradcheck.hpp"

#include "hgn/graph.hpp"

#include <algorithm>
#include <cmath>

namespace hgn {

namespace {

// Scalar root <out, r> with a fixed random probe r, recorded directly so the
// checker does not depend on the ops it is checking.
Tensor probe(const Tensor& out, const Eigen::VectorXd& r) {
  Tape* t = &out.tape();
  const int io = out.id();
  return t->record("probe", {io}, {}, Eigen::VectorXd::Constant(1, out.value().dot(r)),
                   [t, io, r](const Eigen::VectorXd& g) { t->accumulate(io, g[0] * r); });
}

double evaluate(const GradBuilder& build, const std::vector<GradInput>& inputs,
                const Eigen::VectorXd& r) {
  Tape tape;
  std::vector<Tensor> leaves;
  for (const GradInput& in : inputs) leaves.push_back(tape.leaf(in.shape, in.value));
  return build(tape, leaves).value().dot(r);
}

Eigen::VectorXd uniform(std::mt19937_64& rng, Index n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

Index pick(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

GradInput rand_input(std::mt19937_64& rng, Shape shape) {
  const Index n = shape_size(shape);
  return {std::move(shape), uniform(rng, n)};
}

struct Case {
  std::string name;
  double tolerance;
  // Draws inputs for one trial and returns the builder that consumes them.
  std::function<std::pair<GradBuilder, std::vector<GradInput>>(std::mt19937_64&)> make;
};

// Centers of the ROI grid placed strictly between pixel centers so that the
// piecewise-bilinear map is smooth under the finite-difference step.
Eigen::VectorXd roi_centers(std::mt19937_64& rng, Index m, Index h, Index w) {
  Eigen::VectorXd c(2 * m);
  std::uniform_real_distribution<double> frac(0.1, 0.9);
  for (Index i = 0; i < m; ++i) {
    const double px = static_cast<double>(pick(rng, 1, w - 3)) + frac(rng);
    const double py = static_cast<double>(pick(rng, 1, h - 3)) + frac(rng);
    c[2 * i] = (px + 0.5) / static_cast<double>(w);
    c[2 * i + 1] = (py + 0.5) / static_cast<double>(h);
  }
  return c;
}

std::shared_ptr<const SparseMatrixd> random_sparse(std::mt19937_64& rng, Index rows, Index cols) {
  std::vector<Eigen::Triplet<double>> trips;
  std::bernoulli_distribution keep(0.4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      if (keep(rng)) trips.emplace_back(static_cast<int>(i), static_cast<int>(j), u(rng));
  auto m = std::make_shared<SparseMatrixd>(rows, cols);
  m->setFromTriplets(trips.begin(), trips.end());
  return m;
}

std::vector<Case> cases() {
  using Inputs = std::vector<GradInput>;
  using Made = std::pair<GradBuilder, Inputs>;
  auto binary = [](auto op) {
    return [op](std::mt19937_64& rng) -> Made {
      const Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
      return {[op](Tape&, const std::vector<Tensor>& x) { return op(x[0], x[1]); },
              {rand_input(rng, s), rand_input(rng, s)}};
    };
  };

  std::vector<Case> out;
  out.push_back({"add", 1e-4, binary([](const Tensor& a, const Tensor& b) { return add(a, b); })});
  out.push_back({"sub", 1e-4, binary([](const Tensor& a, const Tensor& b) { return sub(a, b); })});
  out.push_back({"mul", 1e-4, binary([](const Tensor& a, const Tensor& b) { return mul(a, b); })});
  out.push_back({"scale", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const double f = uniform(rng, 1)[0] * 3.0;
                   return {[f](Tape&, const std::vector<Tensor>& x) { return scale(x[0], f); },
                           {rand_input(rng, {pick(rng, 1, 4), pick(rng, 1, 4)})}};
                 }});
  out.push_back({"sum", 1e-4, [](std::mt19937_64& rng) -> Made {
                   return {[](Tape&, const std::vector<Tensor>& x) { return sum(x[0]); },
                           {rand_input(rng, {pick(rng, 1, 4), pick(rng, 1, 4)})}};
                 }});
  out.push_back({"reshape", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index r = pick(rng, 1, 4), c = pick(rng, 1, 4);
                   return {[r, c](Tape&, const std::vector<Tensor>& x) {
                             return reshape(x[0], {c, r});
                           },
                           {rand_input(rng, {r, c})}};
                 }});
  out.push_back({"relu", 1e-4, [](std::mt19937_64& rng) -> Made {
                   return {[](Tape&, const std::vector<Tensor>& x) { return relu(x[0]); },
                           {rand_input(rng, {pick(rng, 1, 5), pick(rng, 1, 5)})}};
                 }});
  out.push_back({"matmul", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
                   return {[](Tape&, const std::vector<Tensor>& x) { return matmul(x[0], x[1]); },
                           {rand_input(rng, {m, k}), rand_input(rng, {k, n})}};
                 }});
  out.push_back({"affine", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index r = pick(rng, 1, 4), in = pick(rng, 1, 5), o = pick(rng, 1, 4);
                   return {[](Tape&, const std::vector<Tensor>& x) {
                             return affine(x[0], x[1], x[2]);
                           },
                           {rand_input(rng, {r, in}), rand_input(rng, {in, o}),
                            rand_input(rng, {o})}};
                 }});
  out.push_back({"concat_cols", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index r = pick(rng, 1, 4);
                   return {[](Tape&, const std::vector<Tensor>& x) {
                             return concat_cols(x[0], x[1]);
                           },
                           {rand_input(rng, {r, pick(rng, 1, 4)}),
                            rand_input(rng, {r, pick(rng, 1, 4)})}};
                 }});
  out.push_back({"sparse_matmul", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index r = pick(rng, 1, 6), c = pick(rng, 1, 6), f = pick(rng, 1, 3);
                   auto op = random_sparse(rng, r, c);
                   return {[op](Tape&, const std::vector<Tensor>& x) {
                             return sparse_matmul(op, x[0]);
                           },
                           {rand_input(rng, {c, f})}};
                 }});
  out.push_back({"layer_norm[rows]", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index r = pick(rng, 1, 4), f = pick(rng, 2, 6);
                   return {[](Tape&, const std::vector<Tensor>& x) {
                             return layer_norm(x[0], x[1], x[2]);
                           },
                           {rand_input(rng, {r, f}), rand_input(rng, {f}), rand_input(rng, {f})}};
                 }});
  out.push_back({"layer_norm[nchw]", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index n = pick(rng, 1, 2), c = pick(rng, 1, 3), h = pick(rng, 1, 3),
                               w = pick(rng, 2, 3);
                   return {[](Tape&, const std::vector<Tensor>& x) {
                             return layer_norm(x[0], x[1], x[2]);
                           },
                           {rand_input(rng, {n, c, h, w}), rand_input(rng, {c}),
                            rand_input(rng, {c})}};
                 }});
  out.push_back({"conv2d", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index n = pick(rng, 1, 2), c = pick(rng, 1, 2), f = pick(rng, 1, 3);
                   const Index k = pick(rng, 1, 3);
                   const int stride = static_cast<int>(pick(rng, 1, 2));
                   const int pad = static_cast<int>(pick(rng, 0, 1));
                   const Index h = pick(rng, k, 6), w = pick(rng, k, 6);
                   return {[stride, pad](Tape&, const std::vector<Tensor>& x) {
                             return conv2d(x[0], x[1], x[2], stride, pad);
                           },
                           {rand_input(rng, {n, c, h, w}), rand_input(rng, {f, c, k, k}),
                            rand_input(rng, {f})}};
                 }});
  out.push_back({"maxpool2d", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index h = 2 * pick(rng, 1, 3), w = 2 * pick(rng, 1, 3);
                   return {[](Tape&, const std::vector<Tensor>& x) { return maxpool2d(x[0], 2); },
                           {rand_input(rng, {1, pick(rng, 1, 2), h, w})}};
                 }});
  out.push_back({"bilinear_roi_pool[features]", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index c = pick(rng, 1, 3), h = pick(rng, 4, 7), w = pick(rng, 4, 7),
                               m = pick(rng, 1, 4);
                   GradInput centers{{m, 2}, uniform(rng, 2 * m, 0.0, 1.0), false};
                   return {[](Tape&, const std::vector<Tensor>& x) {
                             return bilinear_roi_pool(x[0], x[1]);
                           },
                           {rand_input(rng, {1, c, h, w}), centers}};
                 }});
  out.push_back({"bilinear_roi_pool[coords]", 1e-3, [](std::mt19937_64& rng) -> Made {
                   const Index c = pick(rng, 1, 3), h = pick(rng, 5, 8), w = pick(rng, 5, 8),
                               m = pick(rng, 1, 4);
                   GradInput feat = rand_input(rng, {1, c, h, w});
                   feat.check = false;
                   return {[](Tape&, const std::vector<Tensor>& x) {
                             return bilinear_roi_pool(x[0], x[1]);
                           },
                           {feat, GradInput{{m, 2}, roi_centers(rng, m, h, w)}}};
                 }});
  out.push_back({"reparameterize", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index d = pick(rng, 1, 6);
                   const auto noise_seed = rng();
                   return {[noise_seed](Tape&, const std::vector<Tensor>& x) {
                             std::mt19937_64 noise(noise_seed);
                             return reparameterize(x[0], x[1], noise);
                           },
                           {rand_input(rng, {1, d}), rand_input(rng, {1, d})}};
                 }});
  out.push_back({"kl_divergence", 1e-6, [](std::mt19937_64& rng) -> Made {
                   const Index d = pick(rng, 1, 6);
                   return {[](Tape&, const std::vector<Tensor>& x) {
                             return kl_divergence(x[0], x[1]);
                           },
                           {rand_input(rng, {1, d}), rand_input(rng, {1, d})}};
                 }});
  out.push_back({"mse", 1e-4, binary([](const Tensor& a, const Tensor& b) { return mse(a, b); })});
  out.push_back({"chebyshev_conv", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index n = pick(rng, 3, 12), in = pick(rng, 1, 3), o = pick(rng, 1, 3);
                   const Index k = pick(rng, 1, 4);
                   auto lap = GraphTopology::from_organ_sizes({n}, 1).level(0).laplacian_scaled;
                   return {[lap](Tape&, const std::vector<Tensor>& x) {
                             return chebyshev_conv(x[0], lap, x[1], x[2]);
                           },
                           {rand_input(rng, {n, in}), rand_input(rng, {k, in, o}),
                            rand_input(rng, {o})}};
                 }});
  out.push_back({"graph_pool", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index n = pick(rng, 4, 12);
                   auto plan = build_pooling_plan({{0, n}}, 2).front();
                   return {[plan](Tape&, const std::vector<Tensor>& x) { return pool(x[0], plan); },
                           {rand_input(rng, {n, 2})}};
                 }});
  out.push_back({"graph_unpool", 1e-4, [](std::mt19937_64& rng) -> Made {
                   const Index n = pick(rng, 4, 12);
                   auto plan = build_pooling_plan({{0, n}}, 2).front();
                   return {[plan](Tape&, const std::vector<Tensor>& x) {
                             return unpool(x[0], plan);
                           },
                           {rand_input(rng, {plan.coarse_nodes, 2})}};
                 }});
  return out;
}

}  // namespace

double gradient_relative_error(const GradBuilder& build, const std::vector<GradInput>& inputs,
                               std::uint64_t probe_seed, double h,
                               const std::set<std::string>& flipped) {
  Tape tape;
  tape.flip_backward_sign(flipped);
  std::vector<Tensor> leaves;
  for (const GradInput& in : inputs) leaves.push_back(tape.leaf(in.shape, in.value));
  const Tensor out = build(tape, leaves);
  std::mt19937_64 prng(probe_seed);
  const Eigen::VectorXd r = uniform(prng, out.size());
  tape.backward(probe(out, r));

  double worst = 0.0;
  std::vector<GradInput> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].check) continue;
    const Eigen::VectorXd analytic = leaves[i].grad();
    Eigen::VectorXd numeric(analytic.size());
    for (Index j = 0; j < numeric.size(); ++j) {
      const double v = inputs[i].value[j];
      work[i].value[j] = v + h;
      const double fp = evaluate(build, work, r);
      work[i].value[j] = v - h;
      const double fm = evaluate(build, work, r);
      work[i].value[j] = v;
      numeric[j] = (fp - fm) / (2.0 * h);
    }
    const double denom = std::max({analytic.norm(), numeric.norm(), 1e-6});
    worst = std::max(worst, (analytic - numeric).norm() / denom);
  }
  return worst;
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options) {
  std::vector<GradcheckResult> results;
  std::mt19937_64 rng(options.seed);
  for (const Case& c : cases()) {
    GradcheckResult res{c.name, options.trials, 0.0, c.tolerance};
    for (int t = 0; t < options.trials; ++t) {
      auto [build, inputs] = c.make(rng);
      res.max_rel_error = std::max(
          res.max_rel_error, gradient_relative_error(build, inputs, rng(), 1e-5, options.flipped));
    }
    results.push_back(res);
  }
  return results;
}

}  // namespace hgn
