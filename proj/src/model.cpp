#include "hgn/model.hpp"

#include <cmath>
#include <stdexcept>

namespace hgn {

namespace {

constexpr int kEncoderBlocks = 6;

std::string block_name(int k) { return "enc.b" + std::to_string(k); }

Index encoder_feature_size(const HybridGNetConfig& config) {
  const Index side = config.image_size >> kEncoderBlocks;
  return Index{config.encoder_channels.back()} * side * side;
}

class ParamBuilder {
 public:
  ParamBuilder(ModelParams& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  void kaiming(const std::string& name, Shape shape, Index fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Eigen::VectorXd v(shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng_);
    params_[name] = {std::move(shape), std::move(v), true};
  }
  void constant(const std::string& name, Shape shape, double value) {
    const Index n = shape_size(shape);
    params_[name] = {std::move(shape), Eigen::VectorXd::Constant(n, value), true};
  }
  void fixed(const std::string& name, Shape shape, Eigen::VectorXd value) {
    params_[name] = {std::move(shape), std::move(value), false};
  }

  void conv(const std::string& name, Index out, Index in, Index k) {
    kaiming(name + ".w", {out, in, k, k}, in * k * k);
    constant(name + ".b", {out}, 0.0);
  }
  void norm(const std::string& name, Index width) {
    constant(name + ".gamma", {width}, 1.0);
    constant(name + ".beta", {width}, 0.0);
  }
  void dense(const std::string& name, Index in, Index out) {
    kaiming(name + ".w", {in, out}, in);
    constant(name + ".b", {out}, 0.0);
  }
  void cheb(const std::string& name, Index order, Index in, Index out) {
    kaiming(name + ".theta", {order, in, out}, order * in);
    constant(name + ".bias", {out}, 0.0);
  }

 private:
  ModelParams& params_;
  std::mt19937_64 rng_;
};

Tensor cheb_layer(const Tensor& x, const GraphLevel& level, const BoundParams& p,
                  const std::string& name, bool norm_relu) {
  Tensor y = chebyshev_conv(x, level.laplacian_scaled, p[name + ".theta"], p[name + ".bias"]);
  if (!norm_relu) return y;
  return relu(layer_norm(y, p[name + ".ln.gamma"], p[name + ".ln.beta"]));
}

Tensor igsc(const Tensor& x, const Tensor& positions, const Tensor& skip_map, const BoundParams& p,
            const std::string& name) {
  const Tensor sampled = bilinear_roi_pool(skip_map, positions);
  return affine(concat_cols(x, sampled), p[name + ".w"], p[name + ".b"]);
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kHybrid: return "hybrid";
    case ModelKind::kPca: return "pca";
    case ModelKind::kFc: return "fc";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "hybrid") return ModelKind::kHybrid;
  if (name == "pca") return ModelKind::kPca;
  if (name == "fc") return ModelKind::kFc;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

void HybridGNetConfig::validate(const GraphTopology& topology) const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (encoder_channels.size() != kEncoderBlocks) fail("encoder_channels must list 6 widths");
  for (int c : encoder_channels)
    if (c < 1) fail("encoder channel widths must be positive");
  if (image_size < (1 << kEncoderBlocks) || image_size % (1 << kEncoderBlocks) != 0)
    fail("image_size must be a positive multiple of 64");
  if (cheb_order < 1) fail("cheb_order must be >= 1");
  if (latent_features < 1 || hidden_features < 1 || fc_hidden < 1)
    fail("feature widths must be positive");
  if (topology.levels().size() < 2) fail("topology needs a coarse level");
  if (latent_nodes != topology.level(1).num_nodes)
    fail("latent_nodes " + std::to_string(latent_nodes) + " does not match coarse graph size " +
         std::to_string(topology.level(1).num_nodes));
  if (igsc_levels.size() > 2) fail("at most two IGSC levels are supported");
  for (int l : igsc_levels)
    if (l < 1 || l > kEncoderBlocks) fail("IGSC level " + std::to_string(l) + " out of range");
  if (!igsc_levels.empty() && !ds_enabled) fail("IGSC needs deep-supervision position heads");
  if (pca_components < 0) fail("pca_components must be >= 0");
}

Index parameter_count(const ModelParams& params, const std::string& prefix) {
  Index n = 0;
  for (const auto& [name, p] : params)
    if (name.compare(0, prefix.size(), prefix) == 0) n += p.value.size();
  return n;
}

ModelParams init_params(ModelKind kind, const HybridGNetConfig& config,
                        const GraphTopology& topology, std::uint64_t seed,
                        const PcaModel<double>* pca) {
  config.validate(topology);
  ModelParams params;
  ParamBuilder b(params, seed);

  Index in = 1;
  for (int k = 1; k <= kEncoderBlocks; ++k) {
    const Index out = config.encoder_channels[static_cast<std::size_t>(k - 1)];
    const std::string n = block_name(k);
    b.conv(n + ".conv1", out, in, 3);
    b.norm(n + ".ln1", out);
    b.conv(n + ".conv2", out, out, 3);
    b.norm(n + ".ln2", out);
    if (in != out) b.conv(n + ".proj", out, in, 1);
    in = out;
  }
  const Index feat = encoder_feature_size(config);
  const Index nodes = topology.num_nodes();

  if (kind == ModelKind::kPca) {
    if (pca == nullptr) throw std::invalid_argument("init_params: PCA kind needs a fitted PCA model");
    if (pca->mean.size() != 2 * nodes)
      throw std::invalid_argument("init_params: PCA model dimension does not match topology");
    const Index k = pca->num_components();
    b.dense("pca.head", feat, k);
    b.fixed("pca.mean", {1, 2 * nodes}, pca->mean);
    RowMatrixXd comps = pca->components;
    b.fixed("pca.components", {k, 2 * nodes},
            Eigen::Map<const Eigen::VectorXd>(comps.data(), comps.size()));
    return params;
  }

  const Index latent = config.latent_size();
  b.dense("enc.mu", feat, latent);
  b.dense("enc.logvar", feat, latent);

  if (kind == ModelKind::kFc) {
    b.dense("fc.l1", latent, config.fc_hidden);
    b.dense("fc.l2", config.fc_hidden, config.fc_hidden);
    b.dense("fc.out", config.fc_hidden, 2 * nodes);
    return params;
  }

  const Index order = config.cheb_order, h = config.hidden_features;
  for (int l = 1; l <= 5; ++l) {
    const std::string n = "dec.g" + std::to_string(l);
    b.cheb(n, order, l == 1 ? config.latent_features : h, h);
    b.norm(n + ".ln", h);
  }
  b.cheb("dec.g6", order, h, 2);
  if (config.ds_enabled) {
    b.cheb("dec.ds_coarse", order, h, 2);
    b.cheb("dec.ds_fine", order, h, 2);
  }
  const char* igsc_names[] = {"dec.igsc_coarse", "dec.igsc_fine"};
  for (std::size_t s = 0; s < config.igsc_levels.size(); ++s) {
    const Index c = config.encoder_channels[static_cast<std::size_t>(config.igsc_levels[s] - 1)];
    b.dense(igsc_names[s], h + c, h);
  }
  return params;
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params) {
  for (const auto& [name, p] : params) leaves_.emplace(name, tape.leaf(p.shape, p.value, name));
}

Tensor BoundParams::operator[](const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw std::invalid_argument("missing model parameter '" + name + "'");
  return it->second;
}

Tensor image_tensor(Tape& tape, const Eigen::MatrixXd& image) {
  RowMatrixXd rm = image;
  return tape.leaf({1, 1, image.rows(), image.cols()},
                   Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size()), "image");
}

EncoderOutputs encode(const Tensor& image, const BoundParams& p, const HybridGNetConfig& config,
                      ModelKind kind) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 1 ||
      image.dim(2) != config.image_size || image.dim(3) != config.image_size)
    throw std::invalid_argument("encode: expected a [1,1," + std::to_string(config.image_size) +
                                "," + std::to_string(config.image_size) + "] image, got " +
                                shape_str(image.shape()));
  EncoderOutputs out;
  Tensor x = image;
  for (int k = 1; k <= kEncoderBlocks; ++k) {
    const std::string n = block_name(k);
    Tensor h = conv2d(x, p[n + ".conv1.w"], p[n + ".conv1.b"], 1, 1);
    h = relu(layer_norm(h, p[n + ".ln1.gamma"], p[n + ".ln1.beta"]));
    h = conv2d(h, p[n + ".conv2.w"], p[n + ".conv2.b"], 1, 1);
    h = layer_norm(h, p[n + ".ln2.gamma"], p[n + ".ln2.beta"]);
    const Tensor skip = p.contains(n + ".proj.w")
                            ? conv2d(x, p[n + ".proj.w"], p[n + ".proj.b"], 1, 0)
                            : x;
    x = maxpool2d(relu(add(h, skip)), 2);
    out.skip_maps.push_back(x);
  }
  out.features = reshape(x, {1, x.size()});
  if (kind == ModelKind::kPca) {
    out.coefficients = affine(out.features, p["pca.head.w"], p["pca.head.b"]);
  } else {
    out.mu = reshape(affine(out.features, p["enc.mu.w"], p["enc.mu.b"]), {config.latent_size()});
    out.logvar =
        reshape(affine(out.features, p["enc.logvar.w"], p["enc.logvar.b"]), {config.latent_size()});
  }
  return out;
}

ForwardOutputs decode(const Tensor& z, const std::vector<Tensor>& skip_maps, const BoundParams& p,
                      const HybridGNetConfig& config, const GraphTopology& topology) {
  if (z.size() != config.latent_size())
    throw std::invalid_argument("decode: latent code has " + std::to_string(z.size()) +
                                " elements, expected " + std::to_string(config.latent_size()));
  const GraphLevel& fine = topology.level(0);
  const GraphLevel& coarse = topology.level(1);
  auto skip = [&](std::size_t stage) -> const Tensor& {
    const auto level = static_cast<std::size_t>(config.igsc_levels.at(stage));
    if (level > skip_maps.size()) throw std::invalid_argument("decode: missing encoder skip map");
    return skip_maps[level - 1];
  };

  ForwardOutputs out;
  Tensor x = reshape(z, {config.latent_nodes, config.latent_features});
  x = cheb_layer(x, coarse, p, "dec.g1", true);
  x = cheb_layer(x, coarse, p, "dec.g2", true);
  if (config.ds_enabled) out.ds_coarse = cheb_layer(x, coarse, p, "dec.ds_coarse", false);
  if (!config.igsc_levels.empty()) x = igsc(x, *out.ds_coarse, skip(0), p, "dec.igsc_coarse");
  x = cheb_layer(x, coarse, p, "dec.g3", true);

  x = unpool(x, topology.plans().front());
  x = cheb_layer(x, fine, p, "dec.g4", true);
  x = cheb_layer(x, fine, p, "dec.g5", true);
  if (config.ds_enabled) out.ds_fine = cheb_layer(x, fine, p, "dec.ds_fine", false);
  if (config.igsc_levels.size() > 1) x = igsc(x, *out.ds_fine, skip(1), p, "dec.igsc_fine");
  out.positions = cheb_layer(x, fine, p, "dec.g6", false);
  return out;
}

Tensor fc_decode(const Tensor& z, const BoundParams& p, const HybridGNetConfig& config,
                 Index num_nodes) {
  if (z.size() != config.latent_size())
    throw std::invalid_argument("fc_decode: latent code has " + std::to_string(z.size()) +
                                " elements, expected " + std::to_string(config.latent_size()));
  Tensor h = reshape(z, {1, z.size()});
  h = relu(affine(h, p["fc.l1.w"], p["fc.l1.b"]));
  h = relu(affine(h, p["fc.l2.w"], p["fc.l2.b"]));
  h = affine(h, p["fc.out.w"], p["fc.out.b"]);
  if (h.size() != 2 * num_nodes) throw std::invalid_argument("fc_decode: output size mismatch");
  return reshape(h, {num_nodes, 2});
}

ForwardOutputs forward(const Tensor& image, const BoundParams& params, const Network& net,
                       std::mt19937_64& rng, Mode mode) {
  const EncoderOutputs enc = encode(image, params, net.config, net.kind);
  const Index nodes = net.topology->num_nodes();
  if (net.kind == ModelKind::kPca) {
    const Tensor rho = add(matmul(*enc.coefficients, params["pca.components"]), params["pca.mean"]);
    ForwardOutputs out;
    out.positions = reshape(rho, {nodes, 2});
    return out;
  }
  const Tensor z = reparameterize(*enc.mu, *enc.logvar, rng, mode == Mode::kTrain);
  ForwardOutputs out;
  if (net.kind == ModelKind::kFc)
    out.positions = fc_decode(z, params, net.config, nodes);
  else
    out = decode(z, enc.skip_maps, params, net.config, *net.topology);
  out.mu = enc.mu;
  out.logvar = enc.logvar;
  return out;
}

ForwardOutputs forward(Tape& tape, const Eigen::MatrixXd& image, const ModelParams& params,
                       const Network& net, std::mt19937_64& rng, Mode mode) {
  const BoundParams bound(tape, params);
  return forward(image_tensor(tape, image), bound, net, rng, mode);
}

Eigen::MatrixXd predict(const Eigen::MatrixXd& image, const ModelParams& params,
                        const Network& net) {
  Tape tape;
  std::mt19937_64 rng(0);
  const ForwardOutputs out = forward(tape, image, params, net, rng, Mode::kInfer);
  return out.positions.matrix();
}

Index mirrored_conv_decoder_parameter_count(const HybridGNetConfig& config) {
  const auto& ch = config.encoder_channels;
  const Index feat = encoder_feature_size(config);
  Index count = config.latent_size() * feat + feat;
  for (int k = kEncoderBlocks; k >= 1; --k) {
    const Index in = ch[static_cast<std::size_t>(k - 1)];
    const Index out = k > 1 ? ch[static_cast<std::size_t>(k - 2)] : ch[0];
    count += 9 * in * out + out + 2 * out;
    count += 9 * out * out + out + 2 * out;
    if (in != out) count += in * out + out;
  }
  count += 3 * ch[0] + 3;
  return count;
}

}  // namespace hgn
