#pragma once

#include "hgn/data.hpp"
#include "hgn/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgn {

struct TrainConfig {
  int epochs = 3000;
  double lr = 1e-4;
  int batch_size = 4;
  double weight_decay = 1e-5;
  double kl_weight = 1e-5;
  double lr_decay_factor = 0.9;
  int lr_decay_every = 100;
  std::uint64_t seed = 0;
  double ds_weight = 1.0;
  bool augment = true;
  int threads = 1;  // batch members evaluated concurrently

  void validate() const;
};

/// Numeric failure during training (NaN loss or gradient).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// lr * factor^floor(epoch / decay_every)
double lr_at(int epoch, const TrainConfig& cfg);

struct LossBreakdown {
  Tensor total;
  double mse = 0.0;  // final positions, pixel units squared
  double ds = 0.0;   // coarse + fine intermediate positions
  double kl = 0.0;
};

/// total = mse(final) + ds_weight * (mse(ds_coarse) + mse(ds_fine)) + kl_weight * KL,
/// with positions scaled from normalized coordinates to pixels by image_size.
LossBreakdown loss_total(const ForwardOutputs& outputs, const Eigen::MatrixXd& target,
                         const Eigen::MatrixXd& target_coarse, const TrainConfig& cfg,
                         double image_size);

using GradientMap = std::map<std::string, Eigen::VectorXd>;

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Eigen::VectorXd> first;
  std::map<std::string, Eigen::VectorXd> second;
};

/// Adam with decoupled weight decay on every trainable parameter. Throws
/// NumericError naming the first parameter with a non-finite gradient.
void adam_step(ModelParams& params, const GradientMap& grads, AdamState& state, double lr,
               double weight_decay);

struct Checkpoint {
  ModelKind kind = ModelKind::kHybrid;
  HybridGNetConfig config;
  ModelParams params;
  int epoch = 0;
  double val_loss = 0.0;
};

/// Writes manifest.json and params.bin (little-endian f32, parameters in name order).
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct LogRow {
  int epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_mse = 0.0;
  double loss_ds = 0.0;
  double loss_kl = 0.0;
  double val_loss = 0.0;
};

inline constexpr const char* kLogHeader = "epoch,lr,loss_total,loss_mse,loss_ds,loss_kl,val_loss";
std::string format_log_row(const LogRow& row);

struct TrainCallbacks {
  std::function<void(const LogRow&)> on_epoch;
  std::function<void(const Checkpoint&)> on_best;
};

struct TrainResult {
  Checkpoint best;   // lowest validation loss
  Checkpoint last;   // parameters after the final epoch
  std::vector<LogRow> log;
};

/// Normalized targets for one sample: final resolution and pooled coarse level.
struct Targets {
  Eigen::MatrixXd fine;
  Eigen::MatrixXd coarse;
};
Targets make_targets(const Sample& sample, const GraphTopology& topology);

/// Initial parameters; fits the PCA basis on the training landmarks for the PCA kind.
ModelParams initial_params(const Network& net, const std::vector<Sample>& train_set,
                           std::uint64_t seed);

/// Loss and parameter gradients of one sample.
struct SampleGradient {
  GradientMap grads;
  double total = 0.0, mse = 0.0, ds = 0.0, kl = 0.0;
};
SampleGradient sample_gradient(const Sample& sample, const ModelParams& params, const Network& net,
                               const TrainConfig& cfg, std::mt19937_64& rng, Mode mode);

/// Mean total loss with z = mu over a set of samples.
double evaluate_loss(const std::vector<Sample>& samples, const ModelParams& params,
                     const Network& net, const TrainConfig& cfg);

TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const Network& net, const TrainConfig& cfg, ModelParams params,
                  const TrainCallbacks& callbacks = {});

// JSON mapping of the configuration structs. Unknown keys are rejected.
void to_json(nlohmann::json& j, const HybridGNetConfig& c);
void from_json(const nlohmann::json& j, HybridGNetConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace hgn
