#include "bpnet/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "bpnet/error.hpp"
#include "json.hpp"

namespace bpnet {

using nlohmann::json;

void PipelineConfig::validate() const {
  auto fail = [](const std::string& what) { throw DataError("config: " + what); };
  if (scales == 0) fail("scales must be >= 1");
  if (scales > 12) fail("scales must be <= 12");
  if (widths.size() != scales) {
    fail("widths has " + std::to_string(widths.size()) + " entries for " + std::to_string(scales) +
         " scales");
  }
  for (std::size_t c : widths)
    if (c == 0) fail("widths must be positive");
  if (n_neighbors == 0) fail("n_neighbors must be >= 1");
  if (image_channels == 0) fail("image_channels must be >= 1");
  if (mlp_hidden == 0) fail("mlp_hidden must be >= 1");
  if (kernels.empty()) fail("kernels must not be empty");
  for (std::size_t k : kernels)
    if (k < 3 || k % 2 == 0) fail("kernel sizes must be odd and >= 3");
  if (!loss_weights.empty() && loss_weights.size() != scales) fail("loss_weights needs one entry per scale");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0) || !(clip_norm > 0.0)) fail("lr, weight_decay >= 0 and clip_norm > 0");
  if (units != "m" && units != "mm") fail("units must be m or mm");
  if (height == 0 || width == 0) fail("height and width must be positive");
  intrinsics.validate();
}

std::vector<double> PipelineConfig::lambdas() const {
  if (!loss_weights.empty()) return loss_weights;
  std::vector<double> out(scales);
  for (std::size_t s = 0; s < scales; ++s) out[s] = std::ldexp(1.0, -2 * static_cast<int>(s));
  return out;
}

std::size_t PipelineConfig::required_multiple() const {
  return pad_multiple() << (stages.mf ? unet_depth : 0);
}

AdamWSettings PipelineConfig::optimizer() const {
  AdamWSettings s;
  s.lr = lr;
  s.weight_decay = weight_decay;
  return s;
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig config_from_json_text(const std::string& text) {
  PipelineConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  static const char* known[] = {"scales", "n_neighbors", "widths", "image_channels", "mlp_hidden",
                                "unet_depth", "kernels", "stages", "ablation", "propagation",
                                "normalize_offsets", "loss_weights", "bn", "lr", "weight_decay",
                                "clip_norm", "steps", "sparse_points", "hflip", "seed",
                                "intrinsics", "height", "width", "units", "paths"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known)) {
      throw DataError("config: unknown key '" + it.key() + "'");
    }
  }
  try {
    read(j, "scales", c.scales);
    read(j, "n_neighbors", c.n_neighbors);
    read(j, "widths", c.widths);
    read(j, "image_channels", c.image_channels);
    read(j, "mlp_hidden", c.mlp_hidden);
    read(j, "unet_depth", c.unet_depth);
    read(j, "kernels", c.kernels);
    if (j.contains("stages")) {
      const json& s = j.at("stages");
      read(s, "pre", c.stages.pre);
      read(s, "mf", c.stages.mf);
      read(s, "post", c.stages.post);
    }
    if (j.contains("ablation")) c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
    if (j.contains("propagation")) {
      const auto p = j.at("propagation").get<std::string>();
      if (p == "learned") c.propagation = Propagation::learned;
      else if (p == "nearest") c.propagation = Propagation::nearest;
      else throw DataError("config: propagation must be learned or nearest");
    }
    read(j, "normalize_offsets", c.normalize_offsets);
    read(j, "loss_weights", c.loss_weights);
    if (j.contains("bn")) {
      read(j.at("bn"), "momentum", c.norm.momentum);
      read(j.at("bn"), "eps", c.norm.eps);
    }
    read(j, "lr", c.lr);
    read(j, "weight_decay", c.weight_decay);
    read(j, "clip_norm", c.clip_norm);
    read(j, "steps", c.steps);
    read(j, "sparse_points", c.sparse_points);
    read(j, "hflip", c.hflip);
    read(j, "seed", c.seed);
    if (j.contains("intrinsics")) {
      const json& k = j.at("intrinsics");
      read(k, "fx", c.intrinsics.fx);
      read(k, "fy", c.intrinsics.fy);
      read(k, "cx", c.intrinsics.cx);
      read(k, "cy", c.intrinsics.cy);
    }
    read(j, "height", c.height);
    read(j, "width", c.width);
    read(j, "units", c.units);
    if (j.contains("paths")) {
      if (j.at("paths").contains("data_dir")) c.data_dir = j.at("paths").at("data_dir").get<std::string>();
      if (j.at("paths").contains("output_dir")) c.output_dir = j.at("paths").at("output_dir").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json_text(const PipelineConfig& c) {
  json j;
  j["scales"] = c.scales;
  j["n_neighbors"] = c.n_neighbors;
  j["widths"] = c.widths;
  j["image_channels"] = c.image_channels;
  j["mlp_hidden"] = c.mlp_hidden;
  j["unet_depth"] = c.unet_depth;
  j["kernels"] = c.kernels;
  j["stages"] = {{"pre", c.stages.pre}, {"mf", c.stages.mf}, {"post", c.stages.post}};
  j["ablation"] = to_string(c.ablation);
  j["propagation"] = c.propagation == Propagation::learned ? "learned" : "nearest";
  j["normalize_offsets"] = c.normalize_offsets;
  j["loss_weights"] = c.lambdas();
  j["bn"] = {{"momentum", c.norm.momentum}, {"eps", c.norm.eps}};
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["clip_norm"] = c.clip_norm;
  j["steps"] = c.steps;
  j["sparse_points"] = c.sparse_points;
  j["hflip"] = c.hflip;
  j["seed"] = c.seed;
  j["intrinsics"] = {{"fx", c.intrinsics.fx}, {"fy", c.intrinsics.fy},
                     {"cx", c.intrinsics.cx}, {"cy", c.intrinsics.cy}};
  j["height"] = c.height;
  j["width"] = c.width;
  j["units"] = c.units;
  j["paths"] = {{"data_dir", c.data_dir.string()}, {"output_dir", c.output_dir.string()}};
  return j.dump(2);
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

PipelineConfig resolve_config(const std::string& flag_path) {
  if (!flag_path.empty()) return load_config(flag_path);
  if (const char* env = std::getenv("BPDEPTH_CONFIG"); env && *env) return load_config(env);
  return PipelineConfig{};
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(master);
  h = mix(h ^ a);
  h = mix(h ^ b);
  return mix(h ^ c);
}

}  // namespace bpnet
