#pragma once

#include "hgn/graph.hpp"
#include "hgn/pca.hpp"
#include "hgn/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace hgn {

enum class ModelKind { kHybrid, kPca, kFc };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct HybridGNetConfig {
  int image_size = 128;
  std::vector<int> encoder_channels{8, 16, 32, 64, 128, 128};
  int latent_nodes = 60;     // node count of the coarsest graph level
  int latent_features = 8;   // per-node width of the reshaped latent code
  int hidden_features = 32;  // width of every hidden graph layer
  int cheb_order = 6;
  std::vector<int> igsc_levels{6, 5};  // encoder blocks sampled by the coarse/fine IGSC
  bool ds_enabled = true;
  int fc_hidden = 256;
  int pca_components = 0;

  Index latent_size() const { return Index{latent_nodes} * latent_features; }
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate(const GraphTopology& topology) const;
};

struct Parameter {
  Shape shape;
  Eigen::VectorXd value;
  bool trainable = true;
};

/// Ordered by name, which is also the serialization order.
using ModelParams = std::map<std::string, Parameter>;

Index parameter_count(const ModelParams& params, const std::string& prefix = "");

/// Kaiming-uniform (fan-in) weights, zero biases and norm offsets, unit norm scales.
ModelParams init_params(ModelKind kind, const HybridGNetConfig& config,
                        const GraphTopology& topology, std::uint64_t seed,
                        const PcaModel<double>* pca = nullptr);

/// Parameters mirrored onto a tape as leaves.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ModelParams& params);
  Tensor operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return leaves_.count(name) != 0; }
  const std::map<std::string, Tensor>& tensors() const { return leaves_; }

 private:
  std::map<std::string, Tensor> leaves_;
};

struct EncoderOutputs {
  Tensor features;                 // flattened final map, [1, d]
  std::optional<Tensor> mu;        // variational kinds only
  std::optional<Tensor> logvar;
  std::optional<Tensor> coefficients;  // PCA kind only
  std::vector<Tensor> skip_maps;   // output of block k at index k-1, [1,c,h,w]
};

struct ForwardOutputs {
  std::optional<Tensor> mu;
  std::optional<Tensor> logvar;
  Tensor positions;                 // [M,2], normalized coordinates
  std::optional<Tensor> ds_coarse;  // [M/2,2]
  std::optional<Tensor> ds_fine;    // [M,2]
};

enum class Mode { kTrain, kInfer };

/// image is [1,1,S,S].
EncoderOutputs encode(const Tensor& image, const BoundParams& params,
                      const HybridGNetConfig& config, ModelKind kind);

ForwardOutputs decode(const Tensor& z, const std::vector<Tensor>& skip_maps,
                      const BoundParams& params, const HybridGNetConfig& config,
                      const GraphTopology& topology);

/// Two affine+relu layers then an affine map to 2M outputs, reshaped [M,2].
Tensor fc_decode(const Tensor& z, const BoundParams& params, const HybridGNetConfig& config,
                 Index num_nodes);

/// Network definition bound to a graph topology.
struct Network {
  ModelKind kind = ModelKind::kHybrid;
  HybridGNetConfig config;
  const GraphTopology* topology = &chest_topology();
};

ForwardOutputs forward(Tape& tape, const Eigen::MatrixXd& image, const ModelParams& params,
                       const Network& net, std::mt19937_64& rng, Mode mode);

/// Overload for callers that already bound the parameters on the tape.
ForwardOutputs forward(const Tensor& image, const BoundParams& params, const Network& net,
                       std::mt19937_64& rng, Mode mode);

/// Plain inference: normalized [M,2] positions with z = mu.
Eigen::MatrixXd predict(const Eigen::MatrixXd& image, const ModelParams& params,
                        const Network& net);

Tensor image_tensor(Tape& tape, const Eigen::MatrixXd& image);

/// Parameter count of a dense convolutional decoder mirroring the encoder and
/// emitting a 3-class mask at full resolution.
Index mirrored_conv_decoder_parameter_count(const HybridGNetConfig& config);

}  // namespace hgn
