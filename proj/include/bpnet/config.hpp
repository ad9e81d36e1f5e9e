#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bpnet/bp_module.hpp"
#include "bpnet/geometry.hpp"
#include "bpnet/nn.hpp"
#include "bpnet/optim.hpp"

namespace bpnet {

struct StageToggles {
  bool pre = true;
  bool mf = true;
  bool post = true;
  friend bool operator==(const StageToggles&, const StageToggles&) = default;
};

enum class Propagation { learned, nearest };

struct PipelineConfig {
  std::size_t scales = 3;
  std::size_t n_neighbors = 4;
  std::vector<std::size_t> widths{8, 16, 32};   // image feature channels per scale
  std::size_t image_channels = 3;
  std::size_t mlp_hidden = 32;
  std::size_t unet_depth = 2;
  std::vector<std::size_t> kernels{3, 5, 7};
  StageToggles stages;
  AblationMode ablation = AblationMode::full;
  Propagation propagation = Propagation::learned;  // nearest: N = 1 stub, no MLP
  bool normalize_offsets = true;
  std::vector<double> loss_weights;  // empty: λ_s = 4^-s
  NormSettings norm;

  double lr = 1e-3;
  double weight_decay = 0.05;
  double clip_norm = 0.1;
  std::size_t steps = 500;
  std::size_t sparse_points = 50;
  bool hflip = false;  // random horizontal flips during training
  std::uint64_t seed = 0;

  CameraIntrinsics intrinsics{32.0, 32.0, 15.5, 15.5};
  std::size_t height = 32;  // synthetic scene extents
  std::size_t width = 32;
  std::string units = "m";  // metric output: m or mm

  std::filesystem::path data_dir;
  std::filesystem::path output_dir;

  // Throws DataError describing the first inconsistency.
  void validate() const;
  std::vector<double> lambdas() const;
  std::size_t pad_multiple() const { return std::size_t{1} << (scales - 1); }
  // Smallest extent multiple every stage accepts: 2^(S−1+unet_depth) when
  // fusion is on, else 2^(S−1).
  std::size_t required_multiple() const;
  AdamWSettings optimizer() const;
};

PipelineConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path);

// --config if given, else $BPDEPTH_CONFIG, else defaults.
PipelineConfig resolve_config(const std::string& flag_path);

// splitmix64 over the mixed inputs; used for per-step and per-cell seeds.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

}  // namespace bpnet
