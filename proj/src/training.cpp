#include "hgn/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

namespace hgn {

namespace {

std::mt19937_64 sample_rng(std::uint64_t seed, int epoch, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

Tensor constant_like(Tape& tape, const Eigen::MatrixXd& m) {
  RowMatrixXd rm = m;
  return tape.leaf({m.rows(), m.cols()}, Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size()),
                   "target");
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (epochs < 1) fail("epochs must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (kl_weight < 0.0) fail("kl_weight must be non-negative");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) fail("lr_decay_factor must be in (0,1]");
  if (lr_decay_every < 1) fail("lr_decay_every must be positive");
  if (ds_weight < 0.0) fail("ds_weight must be non-negative");
  if (threads < 1) fail("threads must be positive");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  return cfg.lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

LossBreakdown loss_total(const ForwardOutputs& outputs, const Eigen::MatrixXd& target,
                         const Eigen::MatrixXd& target_coarse, const TrainConfig& cfg,
                         double image_size) {
  Tape& tape = outputs.positions.tape();
  auto pixel_mse = [&](const Tensor& pred, const Eigen::MatrixXd& truth) {
    if (pred.rank() != 2 || pred.dim(0) != truth.rows() || pred.dim(1) != truth.cols())
      throw std::invalid_argument("loss_total: prediction " + shape_str(pred.shape()) +
                                  " does not match target rows " + std::to_string(truth.rows()));
    return mse(scale(pred, image_size), constant_like(tape, truth * image_size));
  };

  LossBreakdown out;
  Tensor total = pixel_mse(outputs.positions, target);
  out.mse = total.item();
  if (outputs.ds_coarse || outputs.ds_fine) {
    Tensor ds = tape.scalar(0.0);
    if (outputs.ds_coarse) ds = add(ds, pixel_mse(*outputs.ds_coarse, target_coarse));
    if (outputs.ds_fine) ds = add(ds, pixel_mse(*outputs.ds_fine, target));
    out.ds = ds.item();
    total = add(total, scale(ds, cfg.ds_weight));
  }
  if (outputs.mu && outputs.logvar) {
    const Tensor kl = kl_divergence(*outputs.mu, *outputs.logvar);
    out.kl = kl.item();
    total = add(total, scale(kl, cfg.kl_weight));
  }
  out.total = total;
  return out;
}

void adam_step(ModelParams& params, const GradientMap& grads, AdamState& state, double lr,
               double weight_decay) {
  for (const auto& [name, g] : grads)
    if (!g.allFinite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto git = grads.find(name);
    const Eigen::VectorXd g =
        git == grads.end() ? Eigen::VectorXd::Zero(p.value.size()) : git->second;
    if (g.size() != p.value.size())
      throw std::invalid_argument("adam_step: gradient shape mismatch for '" + name + "'");
    Eigen::VectorXd& m = state.first[name];
    Eigen::VectorXd& v = state.second[name];
    if (m.size() == 0) {
      m = Eigen::VectorXd::Zero(g.size());
      v = Eigen::VectorXd::Zero(g.size());
    }
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    const Eigen::ArrayXd step =
        (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps);
    p.value = (p.value.array() - lr * step - lr * weight_decay * p.value.array()).matrix();
  }
}

std::string format_log_row(const LogRow& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.epoch << ',' << r.lr << ',' << r.loss_total << ','
     << r.loss_mse << ',' << r.loss_ds << ',' << r.loss_kl << ',' << r.val_loss;
  return os.str();
}

Targets make_targets(const Sample& sample, const GraphTopology& topology) {
  Targets t;
  t.fine = normalize_landmarks(sample.landmarks, static_cast<double>(sample.image.cols()),
                               static_cast<double>(sample.image.rows()));
  t.coarse = pool(t.fine, topology.plans().front());
  return t;
}

ModelParams initial_params(const Network& net, const std::vector<Sample>& train_set,
                           std::uint64_t seed) {
  if (net.kind != ModelKind::kPca) return init_params(net.kind, net.config, *net.topology, seed);
  if (net.config.pca_components < 1)
    throw std::invalid_argument("PCA model needs pca_components >= 1");
  Eigen::MatrixXd rho(static_cast<Index>(train_set.size()), 2 * net.topology->num_nodes());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const Eigen::MatrixXd t = make_targets(train_set[i], *net.topology).fine;
    RowMatrixXd rm = t;
    rho.row(static_cast<Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rm.data(), rm.size());
  }
  const PcaModel<double> pca = pca_fit(rho, net.config.pca_components);
  return init_params(net.kind, net.config, *net.topology, seed, &pca);
}

SampleGradient sample_gradient(const Sample& sample, const ModelParams& params, const Network& net,
                               const TrainConfig& cfg, std::mt19937_64& rng, Mode mode) {
  Tape tape;
  const BoundParams bound(tape, params);
  const ForwardOutputs out = forward(image_tensor(tape, sample.image), bound, net, rng, mode);
  const Targets targets = make_targets(sample, *net.topology);
  const LossBreakdown loss =
      loss_total(out, targets.fine, targets.coarse, cfg, static_cast<double>(net.config.image_size));
  SampleGradient res;
  res.total = loss.total.item();
  res.mse = loss.mse;
  res.ds = loss.ds;
  res.kl = loss.kl;
  if (!std::isfinite(res.total)) return res;
  tape.backward(loss.total);
  for (const auto& [name, t] : bound.tensors())
    if (params.at(name).trainable) res.grads.emplace(name, t.grad());
  return res;
}

double evaluate_loss(const std::vector<Sample>& samples, const ModelParams& params,
                     const Network& net, const TrainConfig& cfg) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const Sample& s : samples) {
    Tape tape;
    std::mt19937_64 rng(0);
    const BoundParams bound(tape, params);
    const ForwardOutputs out = forward(image_tensor(tape, s.image), bound, net, rng, Mode::kInfer);
    const Targets t = make_targets(s, *net.topology);
    total += loss_total(out, t.fine, t.coarse, cfg, static_cast<double>(net.config.image_size))
                 .total.item();
  }
  return total / static_cast<double>(samples.size());
}

TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const Network& net, const TrainConfig& cfg, ModelParams params,
                  const TrainCallbacks& callbacks) {
  cfg.validate();
  net.config.validate(*net.topology);
  if (train_set.empty()) throw std::invalid_argument("train: empty training split");
  if (val_set.empty()) throw std::invalid_argument("train: empty validation split");

  std::mt19937_64 shuffle_rng(cfg.seed);
  AdamState state;
  TrainResult result;
  result.best.kind = net.kind;
  result.best.config = net.config;
  result.last.kind = net.kind;
  result.last.config = net.config;
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LogRow row;
    row.epoch = epoch;
    row.lr = lr;

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t members = end - start;
      std::vector<SampleGradient> results(members);
      auto work = [&](std::size_t j) {
        const std::size_t idx = order[start + j];
        std::mt19937_64 rng = sample_rng(cfg.seed, epoch, idx);
        if (cfg.augment) {
          const Sample aug = augment(train_set[idx], draw_augmentation(rng), rng);
          results[j] = sample_gradient(aug, params, net, cfg, rng, Mode::kTrain);
        } else {
          results[j] = sample_gradient(train_set[idx], params, net, cfg, rng, Mode::kTrain);
        }
      };
      const std::size_t workers = std::min<std::size_t>(members, static_cast<std::size_t>(cfg.threads));
      if (workers <= 1) {
        for (std::size_t j = 0; j < members; ++j) work(j);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
          pool.emplace_back([&, w] {
            for (std::size_t j = w; j < members; j += workers) work(j);
          });
        for (std::thread& t : pool) t.join();
      }

      GradientMap mean_grad;
      const double inv = 1.0 / static_cast<double>(members);
      for (const SampleGradient& r : results) {
        if (!std::isfinite(r.total))
          throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                             ": non-finite loss");
        row.loss_total += r.total;
        row.loss_mse += r.mse;
        row.loss_ds += r.ds;
        row.loss_kl += r.kl;
        for (const auto& [name, g] : r.grads) {
          auto [it, inserted] = mean_grad.try_emplace(name, g * inv);
          if (!inserted) it->second += g * inv;
        }
      }
      adam_step(params, mean_grad, state, lr, cfg.weight_decay);
    }

    const double n = static_cast<double>(train_set.size());
    row.loss_total /= n;
    row.loss_mse /= n;
    row.loss_ds /= n;
    row.loss_kl /= n;
    row.val_loss = evaluate_loss(val_set, params, net, cfg);
    if (!std::isfinite(row.val_loss))
      throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                         ": non-finite validation loss");
    result.log.push_back(row);
    if (callbacks.on_epoch) callbacks.on_epoch(row);
    if (row.val_loss < best_val) {
      best_val = row.val_loss;
      result.best.params = params;
      result.best.epoch = epoch;
      result.best.val_loss = row.val_loss;
      if (callbacks.on_best) callbacks.on_best(result.best);
    }
  }
  result.last.params = std::move(params);
  result.last.epoch = cfg.epochs - 1;
  result.last.val_loss = result.log.back().val_loss;
  return result;
}

// --- JSON -------------------------------------------------------------------

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys,
                    const char* what) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw std::invalid_argument(std::string(what) + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void to_json(nlohmann::json& j, const HybridGNetConfig& c) {
  j = {{"image_size", c.image_size},           {"encoder_channels", c.encoder_channels},
       {"latent_nodes", c.latent_nodes},       {"latent_features", c.latent_features},
       {"hidden_features", c.hidden_features}, {"cheb_order", c.cheb_order},
       {"igsc_levels", c.igsc_levels},         {"ds_enabled", c.ds_enabled},
       {"fc_hidden", c.fc_hidden},             {"pca_components", c.pca_components}};
}

void from_json(const nlohmann::json& j, HybridGNetConfig& c) {
  reject_unknown(j,
                 {"image_size", "encoder_channels", "latent_nodes", "latent_features",
                  "hidden_features", "cheb_order", "igsc_levels", "ds_enabled", "fc_hidden",
                  "pca_components"},
                 "model config");
  read_opt(j, "image_size", c.image_size);
  read_opt(j, "encoder_channels", c.encoder_channels);
  read_opt(j, "latent_nodes", c.latent_nodes);
  read_opt(j, "latent_features", c.latent_features);
  read_opt(j, "hidden_features", c.hidden_features);
  read_opt(j, "cheb_order", c.cheb_order);
  read_opt(j, "igsc_levels", c.igsc_levels);
  read_opt(j, "ds_enabled", c.ds_enabled);
  read_opt(j, "fc_hidden", c.fc_hidden);
  read_opt(j, "pca_components", c.pca_components);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"lr", c.lr},
       {"batch_size", c.batch_size},
       {"weight_decay", c.weight_decay},
       {"kl_weight", c.kl_weight},
       {"lr_decay_factor", c.lr_decay_factor},
       {"lr_decay_every", c.lr_decay_every},
       {"seed", c.seed},
       {"ds_weight", c.ds_weight},
       {"augment", c.augment},
       {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"epochs", "lr", "batch_size", "weight_decay", "kl_weight", "lr_decay_factor",
                  "lr_decay_every", "seed", "ds_weight", "augment", "threads"},
                 "train config");
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "lr", c.lr);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "kl_weight", c.kl_weight);
  read_opt(j, "lr_decay_factor", c.lr_decay_factor);
  read_opt(j, "lr_decay_every", c.lr_decay_every);
  read_opt(j, "seed", c.seed);
  read_opt(j, "ds_weight", c.ds_weight);
  read_opt(j, "augment", c.augment);
  read_opt(j, "threads", c.threads);
}

}  // namespace hgn
