#include "hgn/training.hpp"

#include <cstring>
#include <fstream>

namespace hgn {

namespace {

constexpr const char* kFormat = "hgn-checkpoint-1";

void put_f32(std::vector<char>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

float get_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b)
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["kind"] = to_string(ckpt.kind);
  manifest["model_config"] = ckpt.config;
  manifest["epoch"] = ckpt.epoch;
  manifest["val_loss"] = ckpt.val_loss;
  manifest["params"] = nlohmann::json::array();

  std::vector<char> blob;
  for (const auto& [name, p] : ckpt.params) {
    manifest["params"].push_back({{"name", name},
                                  {"shape", p.shape},
                                  {"offset", blob.size()},
                                  {"trainable", p.trainable}});
    for (Index i = 0; i < p.value.size(); ++i) put_f32(blob, static_cast<float>(p.value[i]));
  }

  std::ofstream bin(dir / "params.bin", std::ios::binary);
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream js(dir / "manifest.json");
  js << manifest.dump(2) << '\n';
  if (!bin || !js) throw std::runtime_error("failed writing checkpoint to " + dir.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream js(dir / "manifest.json");
  if (!js) throw LoadError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kFormat)
    throw LoadError("unsupported checkpoint format in " + dir.string());

  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw LoadError("cannot open " + (dir / "params.bin").string());
  const std::vector<char> blob((std::istreambuf_iterator<char>(bin)),
                               std::istreambuf_iterator<char>());

  Checkpoint ckpt;
  try {
    ckpt.kind = parse_model_kind(manifest.at("kind").get<std::string>());
    ckpt.config = manifest.at("model_config").get<HybridGNetConfig>();
    ckpt.epoch = manifest.at("epoch").get<int>();
    ckpt.val_loss = manifest.at("val_loss").get<double>();
    for (const auto& entry : manifest.at("params")) {
      Parameter p;
      p.shape = entry.at("shape").get<Shape>();
      p.trainable = entry.at("trainable").get<bool>();
      const auto offset = entry.at("offset").get<std::size_t>();
      Index n = 1;
      for (Index d : p.shape) n *= d;
      const std::string name = entry.at("name").get<std::string>();
      if (offset + 4 * static_cast<std::size_t>(n) > blob.size())
        throw LoadError("params.bin too short for parameter '" + name + "'");
      p.value.resize(n);
      for (Index i = 0; i < n; ++i) p.value[i] = get_f32(blob.data() + offset + 4 * i);
      ckpt.params.emplace(name, std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  return ckpt;
}

}  // namespace hgn
