#include "hgn/graph.hpp"

#include <string>

namespace hgn {

namespace {

using RowMap = Eigen::Map<RowMatrixXd>;

std::shared_ptr<const SparseMatrixd> to_sparse(const Eigen::MatrixXd& dense) {
  auto sp = std::make_shared<SparseMatrixd>(dense.sparseView());
  sp->makeCompressed();
  return sp;
}

GraphLevel make_level(std::vector<OrganRange> organs) {
  GraphLevel level;
  level.organs = std::move(organs);
  level.num_nodes = level.organs.empty() ? 0 : level.organs.back().end;
  level.adjacency = cycle_adjacency(level.organs);
  const Laplacian<double> lap = build_laplacian(level.adjacency);
  level.lambda_max = lap.lambda_max;
  level.laplacian_scaled = to_sparse(lap.scaled);
  return level;
}

}  // namespace

Eigen::MatrixXd cycle_adjacency(const std::vector<OrganRange>& organs) {
  const Index n = organs.empty() ? 0 : organs.back().end;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (const OrganRange& r : organs) {
    if (r.size() < 2) continue;
    for (Index i = r.begin; i < r.end; ++i) {
      const Index j = (i + 1 < r.end) ? i + 1 : r.begin;
      a(i, j) = 1.0;
      a(j, i) = 1.0;
    }
  }
  return a;
}

std::vector<PoolingPlan> build_pooling_plan(const std::vector<OrganRange>& organs, int num_levels) {
  if (num_levels < 1) throw std::invalid_argument("build_pooling_plan: num_levels must be >= 1");
  for (const OrganRange& r : organs)
    if (r.size() < (num_levels > 1 ? 4 : 3))
      throw std::invalid_argument("build_pooling_plan: organ cycle of " +
                                  std::to_string(r.size()) + " nodes is too short to pool");

  std::vector<PoolingPlan> plans;
  std::vector<OrganRange> fine = organs;
  for (int level = 1; level < num_levels; ++level) {
    PoolingPlan plan;
    plan.fine_organs = fine;
    plan.fine_nodes = fine.empty() ? 0 : fine.back().end;
    Index next = 0;
    for (const OrganRange& r : fine) {
      const Index coarse_size = (r.size() + 1) / 2;
      if (coarse_size < 2)
        throw std::invalid_argument("build_pooling_plan: " + std::to_string(num_levels) +
                                    " levels reduce a cycle below 2 nodes");
      plan.coarse_organs.push_back({next, next + coarse_size});
      for (Index i = r.begin; i < r.end; i += 2) {
        std::vector<Index> group{i};
        if (i + 1 < r.end) group.push_back(i + 1);
        plan.groups.push_back(std::move(group));
      }
      next += coarse_size;
    }
    plan.coarse_nodes = next;

    Eigen::MatrixXd pool_m = Eigen::MatrixXd::Zero(plan.coarse_nodes, plan.fine_nodes);
    for (std::size_t c = 0; c < plan.groups.size(); ++c)
      for (Index f : plan.groups[c])
        pool_m(static_cast<Index>(c), f) = 1.0 / static_cast<double>(plan.groups[c].size());

    Eigen::MatrixXd unpool_m = Eigen::MatrixXd::Zero(plan.fine_nodes, plan.coarse_nodes);
    for (std::size_t o = 0; o < fine.size(); ++o) {
      const OrganRange& fr = fine[o];
      const OrganRange& cr = plan.coarse_organs[o];
      for (Index local = 0; local < fr.size(); ++local) {
        const Index f = fr.begin + local;
        const Index c = cr.begin + local / 2;
        if (local % 2 == 0) {
          unpool_m(f, c) = 1.0;
        } else {
          const Index succ = (c + 1 < cr.end) ? c + 1 : cr.begin;
          unpool_m(f, c) += 0.5;
          unpool_m(f, succ) += 0.5;
        }
      }
    }
    plan.pool = to_sparse(pool_m);
    plan.unpool = to_sparse(unpool_m);
    fine = plan.coarse_organs;
    plans.push_back(std::move(plan));
  }
  return plans;
}

GraphTopology GraphTopology::from_organ_sizes(const std::vector<Index>& organ_sizes,
                                              int num_levels) {
  std::vector<OrganRange> organs;
  Index next = 0;
  for (Index s : organ_sizes) {
    organs.push_back({next, next + s});
    next += s;
  }
  GraphTopology topo;
  topo.plans_ = build_pooling_plan(organs, num_levels);
  topo.levels_.push_back(make_level(organs));
  for (const PoolingPlan& plan : topo.plans_) topo.levels_.push_back(make_level(plan.coarse_organs));
  return topo;
}

const GraphTopology& chest_topology() {
  static const GraphTopology topo =
      GraphTopology::from_organ_sizes({kRightLungPoints, kLeftLungPoints, kHeartPoints}, 2);
  return topo;
}

Tensor chebyshev_conv(const Tensor& x, std::shared_ptr<const SparseMatrixd> laplacian_scaled,
                      const Tensor& theta, const Tensor& bias) {
  if (!laplacian_scaled) throw std::invalid_argument("chebyshev_conv: null Laplacian");
  if (&x.tape() != &theta.tape() || &x.tape() != &bias.tape())
    throw std::invalid_argument("chebyshev_conv: tensors live on different tapes");
  if (x.rank() != 2 || theta.rank() != 3)
    throw std::invalid_argument("chebyshev_conv: x must be [m,in] and theta [K,in,out]");
  const Index m = x.dim(0), in = x.dim(1);
  const Index order = theta.dim(0), out_f = theta.dim(2);
  if (order < 1) throw std::invalid_argument("chebyshev_conv: order K must be >= 1");
  if (laplacian_scaled->rows() != m)
    throw std::invalid_argument("chebyshev_conv: graph has " +
                                std::to_string(laplacian_scaled->rows()) + " nodes, features have " +
                                std::to_string(m) + " rows");
  if (theta.dim(1) != in)
    throw std::invalid_argument("chebyshev_conv: theta expects " + std::to_string(theta.dim(1)) +
                                " input features, got " + std::to_string(in));
  if (bias.size() != out_f) throw std::invalid_argument("chebyshev_conv: bias length mismatch");

  const SparseMatrixd& lap = *laplacian_scaled;
  auto basis = std::make_shared<std::vector<RowMatrixXd>>();
  basis->reserve(static_cast<std::size_t>(order));
  basis->push_back(x.matrix());
  if (order > 1) basis->push_back(lap * (*basis)[0]);
  for (Index k = 2; k < order; ++k) {
    const auto& prev = (*basis)[static_cast<std::size_t>(k - 1)];
    const auto& prev2 = (*basis)[static_cast<std::size_t>(k - 2)];
    basis->push_back(2.0 * (lap * prev) - prev2);
  }

  const double* th = theta.value().data();
  Eigen::VectorXd out(m * out_f);
  RowMap om(out.data(), m, out_f);
  om.setZero();
  for (Index k = 0; k < order; ++k)
    om.noalias() += (*basis)[static_cast<std::size_t>(k)] * ConstRowMap(th + k * in * out_f, in, out_f);
  om.rowwise() += bias.value().transpose();

  Tape* t = &x.tape();
  const int ix = x.id(), it = theta.id(), ib = bias.id();
  return t->record(
      "chebyshev_conv", {ix, it, ib}, {m, out_f}, std::move(out),
      [t, ix, it, ib, laplacian_scaled, basis, m, in, out_f, order](const Eigen::VectorXd& g) {
        const SparseMatrixd& lap = *laplacian_scaled;
        ConstRowMap gm(g.data(), m, out_f);
        const double* th = t->value(it).data();
        Eigen::VectorXd gtheta(order * in * out_f);
        for (Index k = 0; k < order; ++k)
          RowMap(gtheta.data() + k * in * out_f, in, out_f).noalias() =
              (*basis)[static_cast<std::size_t>(k)].transpose() * gm;

        // sum_k T_k(L) (G theta_k^T) via Clenshaw; T_k(L) is symmetric.
        auto coeff = [&](Index k) -> RowMatrixXd {
          return gm * ConstRowMap(th + k * in * out_f, in, out_f).transpose();
        };
        RowMatrixXd b1 = RowMatrixXd::Zero(m, in), b2 = RowMatrixXd::Zero(m, in);
        for (Index k = order - 1; k >= 1; --k) {
          RowMatrixXd bk = coeff(k) + 2.0 * (lap * b1) - b2;
          b2 = std::move(b1);
          b1 = std::move(bk);
        }
        RowMatrixXd gx = coeff(0) + lap * b1 - b2;

        t->accumulate(ix, Eigen::Map<const Eigen::VectorXd>(gx.data(), gx.size()));
        t->accumulate(it, gtheta);
        t->accumulate(ib, gm.colwise().sum().transpose());
      });
}

Tensor pool(const Tensor& x, const PoolingPlan& plan) {
  if (x.rank() != 2 || x.dim(0) != plan.fine_nodes)
    throw std::invalid_argument("pool: expected " + std::to_string(plan.fine_nodes) +
                                " rows, got shape " + shape_str(x.shape()));
  return sparse_matmul(plan.pool, x);
}

Tensor unpool(const Tensor& x, const PoolingPlan& plan) {
  if (x.rank() != 2 || x.dim(0) != plan.coarse_nodes)
    throw std::invalid_argument("unpool: expected " + std::to_string(plan.coarse_nodes) +
                                " rows, got shape " + shape_str(x.shape()));
  return sparse_matmul(plan.unpool, x);
}

}  // namespace hgn
