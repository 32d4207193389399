#include "hgn/cli.hpp"

#include "hgn/gradcheck.hpp"
#include "hgn/metrics.hpp"
#include "hgn/training.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace hgn {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::string config_path;
  std::string data;
  std::string out;
  std::string variant = "hybrid";
  bool mask_input = false;
  int pca_components = 0;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> batch_size;
};

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::vector<double> occlusion_fracs;
  std::string report;
  bool mask_input = false;
  std::uint64_t seed = 0;
};

struct InferOptions {
  std::string checkpoint;
  std::string image;
  std::string out;
  bool ctr = false;
};

struct SynthOptions {
  int count = 10;
  std::string out;
  std::uint64_t seed = 0;
  int size = 128;
};

struct GradcheckCliOptions {
  std::uint64_t seed = 0;
  int trials = 20;
  std::vector<std::string> flip;
};

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
}

// Model and training settings after applying the config file, the variant,
// HGN_SEED and the command-line overrides, in that order.
struct RunConfig {
  std::string variant;
  bool mask_input = false;
  std::string data;
  Network net;
  TrainConfig train;
};

nlohmann::json to_json(const RunConfig& rc) {
  return {{"variant", rc.variant},
          {"mask_input", rc.mask_input},
          {"data", rc.data},
          {"model", rc.net.config},
          {"train", rc.train}};
}

RunConfig resolve_run_config(const TrainOptions& opt) {
  RunConfig rc;
  rc.variant = opt.variant;
  rc.mask_input = opt.mask_input;
  rc.data = opt.data;
  bool decay_given = false;
  if (!opt.config_path.empty()) {
    const nlohmann::json j = read_json(opt.config_path);
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    for (const auto& [key, value] : j.items())
      if (key != "model" && key != "train") throw UsageError("config: unknown key '" + key + "'");
    if (j.contains("model")) j.at("model").get_to(rc.net.config);
    if (j.contains("train")) {
      j.at("train").get_to(rc.train);
      decay_given = j.at("train").contains("lr_decay_every");
    }
  }

  HybridGNetConfig& mc = rc.net.config;
  if (opt.variant == "hybrid") {
    rc.net.kind = ModelKind::kHybrid;
  } else if (opt.variant == "hybrid-noigsc") {
    rc.net.kind = ModelKind::kHybrid;
    mc.igsc_levels.clear();
    mc.ds_enabled = false;
  } else if (opt.variant == "hybrid-1igsc") {
    rc.net.kind = ModelKind::kHybrid;
    mc.igsc_levels = {6};
    mc.ds_enabled = true;
  } else if (opt.variant == "pca") {
    rc.net.kind = ModelKind::kPca;
  } else if (opt.variant == "fc") {
    rc.net.kind = ModelKind::kFc;
  } else {
    throw UsageError("unknown model '" + opt.variant + "'");
  }
  if (opt.pca_components > 0) mc.pca_components = opt.pca_components;
  if (rc.net.kind == ModelKind::kPca && mc.pca_components < 1)
    throw UsageError("--model pca requires --pca-components k");

  if (!decay_given)
    rc.train.lr_decay_every =
        rc.net.kind == ModelKind::kHybrid && !mc.igsc_levels.empty() ? 100 : 50;
  if (const char* env = std::getenv("HGN_SEED")) {
    try {
      rc.train.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("HGN_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  if (opt.seed) rc.train.seed = *opt.seed;
  if (opt.epochs) rc.train.epochs = *opt.epochs;
  if (opt.lr) rc.train.lr = *opt.lr;
  if (opt.threads) rc.train.threads = *opt.threads;
  if (opt.batch_size) rc.train.batch_size = *opt.batch_size;

  mc.validate(*rc.net.topology);
  rc.train.validate();
  return rc;
}

std::vector<Sample> as_mask_input(std::vector<Sample> samples, const GraphTopology& topology) {
  for (Sample& s : samples) {
    if (!s.mask) s.mask = rasterize(s.landmarks, s.image.rows(), s.image.cols(), topology);
    s = mask_to_input(s);
  }
  return samples;
}

int cmd_train(const TrainOptions& opt, std::ostream& out) {
  const RunConfig rc = resolve_run_config(opt);
  const Manifest manifest = load_manifest(rc.data);
  const int size = rc.net.config.image_size;
  std::vector<Sample> train_set = load_split(manifest, Split::kTrain, size);
  std::vector<Sample> val_set = load_split(manifest, Split::kVal, size);
  if (train_set.empty() || val_set.empty())
    throw UsageError("dataset needs nonempty train and val splits");
  if (rc.mask_input) {
    train_set = as_mask_input(std::move(train_set), *rc.net.topology);
    val_set = as_mask_input(std::move(val_set), *rc.net.topology);
  }

  const fs::path run = opt.out;
  fs::create_directories(run / "checkpoints");
  fs::create_directories(run / "reports");
  {
    std::ofstream cfg(run / "config.json");
    cfg << to_json(rc).dump(2) << '\n';
  }
  std::ofstream log(run / "log.csv");
  if (!log) throw UsageError("cannot write to run directory " + run.string());
  log << kLogHeader << '\n';

  TrainCallbacks callbacks;
  callbacks.on_epoch = [&](const LogRow& row) {
    log << format_log_row(row) << '\n';
    log.flush();
  };
  callbacks.on_best = [&](const Checkpoint& best) { save_checkpoint(run / "checkpoints" / "best", best); };

  const ModelParams init = initial_params(rc.net, train_set, rc.train.seed);
  const TrainResult result = train(train_set, val_set, rc.net, rc.train, init, callbacks);
  save_checkpoint(run / "checkpoints" / "last", result.last);
  out << "best epoch " << result.best.epoch << " val_loss " << result.best.val_loss << '\n';
  return kExitOk;
}

Eigen::MatrixXd prepare_image(const Eigen::MatrixXd& image, int size) {
  if (image.rows() == size && image.cols() == size) return image;
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) = static_cast<double>(size) / static_cast<double>(image.cols());
  m(1, 1) = static_cast<double>(size) / static_cast<double>(image.rows());
  return warp_image(image, m, size, size);
}

Checkpoint load_checkpoint_checked(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.json"))
    throw UsageError("checkpoint not found: " + dir);
  Checkpoint ckpt = load_checkpoint(dir);
  ckpt.config.validate(chest_topology());
  PcaModel<double> shape_only;
  const Index dims = 2 * chest_topology().num_nodes();
  shape_only.mean = Eigen::VectorXd::Zero(dims);
  shape_only.components = Eigen::MatrixXd::Zero(ckpt.config.pca_components, dims);
  const ModelParams expected = init_params(ckpt.kind, ckpt.config, chest_topology(), 0,
                                           ckpt.kind == ModelKind::kPca ? &shape_only : nullptr);
  for (const auto& [name, p] : expected) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end() || it->second.shape != p.shape)
      throw UsageError("checkpoint does not match the model topology at parameter '" + name + "'");
  }
  return ckpt;
}

Predictor make_predictor(const Checkpoint& ckpt) {
  Network net{ckpt.kind, ckpt.config, &chest_topology()};
  return [params = ckpt.params, net](const Eigen::MatrixXd& image) {
    const double size = static_cast<double>(net.config.image_size);
    return denormalize_landmarks(predict(image, params, net), size, size);
  };
}

int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint_checked(opt.checkpoint);
  const Manifest manifest = load_manifest(opt.data);
  Split split;
  try {
    split = parse_split(opt.split);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  std::vector<Sample> samples = load_split(manifest, split, ckpt.config.image_size);
  if (samples.empty()) throw UsageError("split '" + opt.split + "' is empty");
  if (opt.mask_input) samples = as_mask_input(std::move(samples), chest_topology());

  fs::path report = opt.report;
  if (report.empty()) {
    const fs::path ck = fs::absolute(opt.checkpoint).lexically_normal();
    const fs::path parent = ck.has_filename() ? ck.parent_path() : ck.parent_path().parent_path();
    const fs::path base = parent.filename() == "checkpoints" ? parent.parent_path() / "reports" : parent;
    report = base / ("metrics_" + opt.split + ".csv");
  }
  if (report.has_parent_path()) fs::create_directories(report.parent_path());

  const Predictor predictor = make_predictor(ckpt);
  const MetricReport rep = evaluate(predictor, samples);
  write_metric_report(report, rep);
  out << std::setprecision(6) << "samples " << rep.rows.size() << " rmse_px "
      << std::sqrt(rep.mean.mse) << " dice_lungs " << rep.mean.dice_lungs << " dice_heart "
      << rep.mean.dice_heart << " hd_lungs_mm " << rep.mean.hd_lungs << " hd_heart_mm "
      << rep.mean.hd_heart << '\n';
  out << "report " << report.string() << '\n';

  if (!opt.occlusion_fracs.empty()) {
    for (double f : opt.occlusion_fracs)
      if (!(f >= 0.0 && f <= 1.0)) throw UsageError("occlusion fractions must lie in [0,1]");
    const auto rows = occlusion_sweep(predictor, samples, opt.occlusion_fracs, opt.seed);
    fs::path occ = report;
    occ.replace_filename(report.stem().string() + "_occlusion.csv");
    write_occlusion_report(occ, rows);
    for (const OcclusionRow& r : rows)
      out << "occlusion " << r.frac << " dice " << r.dice_mean << " hd_mm " << r.hd_mean << '\n';
    out << "report " << occ.string() << '\n';
  }
  return kExitOk;
}

int cmd_infer(const InferOptions& opt, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint_checked(opt.checkpoint);
  Eigen::MatrixXd image;
  try {
    image = read_pgm(opt.image);
  } catch (const LoadError& e) {
    throw UsageError(e.what());
  }
  const Network net{ckpt.kind, ckpt.config, &chest_topology()};
  const Eigen::MatrixXd pos = predict(prepare_image(image, ckpt.config.image_size), ckpt.params, net);
  const Landmarks lm = denormalize_landmarks(pos, static_cast<double>(image.cols()),
                                             static_cast<double>(image.rows()));
  write_landmarks(opt.out, lm);
  if (opt.ctr) {
    const double ctr = compute_ctr(lm);
    out << std::setprecision(6) << "ctr " << ctr << ' '
        << (ctr_is_normal(ctr) ? "normal" : "abnormal") << '\n';
  }
  return kExitOk;
}

int cmd_synth(const SynthOptions& opt, std::ostream& out) {
  if (opt.count < 1) throw UsageError("--count must be positive");
  if (opt.size < 64 || opt.size % 64 != 0) throw UsageError("--size must be a multiple of 64");
  const fs::path root = opt.out;
  std::error_code ec;
  for (const char* sub : {"images", "landmarks", "masks"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw UsageError("cannot create " + (root / sub).string() + ": " + ec.message());
  }
  const SplitCounts counts = split_counts(static_cast<std::size_t>(opt.count));
  std::mt19937_64 rng(opt.seed);
  nlohmann::json manifest = nlohmann::json::array();
  for (int i = 0; i < opt.count; ++i) {
    const Sample s = synthesize_phantom(rng, opt.size);
    std::ostringstream id;
    id << "phantom_" << std::setw(4) << std::setfill('0') << i;
    const std::string img = "images/" + id.str() + ".pgm";
    const std::string lm = "landmarks/" + id.str() + ".txt";
    const std::string mask = "masks/" + id.str() + ".pgm";
    write_pgm(root / img, s.image, 65535);
    write_landmarks(root / lm, s.landmarks);
    write_label_pgm(root / mask, rasterize(s.landmarks, s.image.rows(), s.image.cols()));
    const auto idx = static_cast<std::size_t>(i);
    const Split split = idx < counts.train                ? Split::kTrain
                        : idx < counts.train + counts.val ? Split::kVal
                                                          : Split::kTest;
    manifest.push_back({{"id", id.str()},
                        {"image", img},
                        {"landmarks", lm},
                        {"mask", mask},
                        {"spacing_mm", s.spacing_mm},
                        {"split", to_string(split)}});
  }
  std::ofstream mf(root / "manifest.json");
  mf << manifest.dump(2) << '\n';
  if (!mf) throw UsageError("cannot write " + (root / "manifest.json").string());
  out << "wrote " << opt.count << " samples (" << counts.train << " train, " << counts.val
      << " val, " << counts.test << " test) to " << root.string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const GradcheckCliOptions& opt, std::ostream& out) {
  GradcheckOptions go;
  go.seed = opt.seed;
  go.trials = opt.trials;
  go.flipped.insert(opt.flip.begin(), opt.flip.end());
  bool ok = true;
  out << std::left << std::setw(30) << "op" << std::setw(14) << "max_rel_err" << std::setw(10)
      << "tol" << "result\n";
  for (const GradcheckResult& r : run_gradcheck(go)) {
    ok = ok && r.passed();
    std::ostringstream err, tol;
    err << std::scientific << std::setprecision(3) << r.max_rel_error;
    tol << std::scientific << std::setprecision(0) << r.tolerance;
    out << std::setw(30) << r.name << std::setw(14) << err.str() << std::setw(10) << tol.str()
        << (r.passed() ? "PASS" : "FAIL") << '\n';
  }
  out << (ok ? "all ops passed\n" : "gradient check FAILED\n");
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HybridGNet landmark segmentation"};
  app.name("hgn");
  app.require_subcommand(1);

  TrainOptions topt;
  auto* train_cmd = app.add_subcommand("train", "Train a model variant on a manifest dataset");
  train_cmd->add_option("--config", topt.config_path, "JSON file with 'model' and 'train' sections");
  train_cmd->add_option("--data", topt.data, "Dataset manifest")->required();
  train_cmd->add_option("--out", topt.out, "Run directory")->required();
  train_cmd->add_option("--model", topt.variant, "hybrid|hybrid-noigsc|hybrid-1igsc|pca|fc")
      ->check(CLI::IsMember({"hybrid", "hybrid-noigsc", "hybrid-1igsc", "pca", "fc"}));
  train_cmd->add_flag("--mask-input", topt.mask_input, "Use dense label masks as network input");
  train_cmd->add_option("--pca-components", topt.pca_components, "Number of PCA modes");
  train_cmd->add_option("--epochs", topt.epochs);
  train_cmd->add_option("--lr", topt.lr);
  train_cmd->add_option("--seed", topt.seed);
  train_cmd->add_option("--threads", topt.threads);
  train_cmd->add_option("--batch-size", topt.batch_size);

  EvalOptions eopt;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", eopt.checkpoint)->required();
  eval_cmd->add_option("--data", eopt.data)->required();
  eval_cmd->add_option("--split", eopt.split, "train|val|test");
  eval_cmd->add_option("--occlusion-fracs", eopt.occlusion_fracs)->delimiter(',');
  eval_cmd->add_option("--report", eopt.report, "Metric CSV path");
  eval_cmd->add_flag("--mask-input", eopt.mask_input);
  eval_cmd->add_option("--seed", eopt.seed, "Occlusion box seed");

  InferOptions iopt;
  auto* infer_cmd = app.add_subcommand("infer", "Predict landmarks for one image");
  infer_cmd->add_option("--checkpoint", iopt.checkpoint)->required();
  infer_cmd->add_option("--image", iopt.image, "PGM image")->required();
  infer_cmd->add_option("--out", iopt.out, "Landmark file")->required();
  infer_cmd->add_flag("--ctr", iopt.ctr, "Print the cardiothoracic ratio");

  SynthOptions sopt;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic phantom dataset");
  synth_cmd->add_option("--count", sopt.count);
  synth_cmd->add_option("--out", sopt.out)->required();
  synth_cmd->add_option("--seed", sopt.seed);
  synth_cmd->add_option("--size", sopt.size);

  GradcheckCliOptions gopt;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op");
  grad_cmd->add_option("--seed", gopt.seed);
  grad_cmd->add_option("--trials", gopt.trials);
  grad_cmd->add_option("--flip", gopt.flip, "Negate the backward rule of an op (checker self-test)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(topt, out);
    if (eval_cmd->parsed()) return cmd_eval(eopt, out);
    if (infer_cmd->parsed()) return cmd_infer(iopt, out);
    if (synth_cmd->parsed()) return cmd_synth(sopt, out);
    if (grad_cmd->parsed()) return cmd_gradcheck(gopt, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace hgn
