#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bpnet/grid.hpp"
#include "bpnet/sparse_depth.hpp"
#include "bpnet/tensor.hpp"

namespace bpnet {

// PFM: "Pf" (1 channel) or "PF" (3 channels), scale −1.0 (little-endian),
// float32 scanlines stored bottom row first. Values round through float32.
void write_pfm(const std::filesystem::path& path, const Tensor& image);  // C×H×W or H×W
Tensor read_pfm(const std::filesystem::path& path);                      // always C×H×W
void write_pfm(const std::filesystem::path& path, const Grid& grid);
Grid read_pfm_grid(const std::filesystem::path& path);

// 8-bit binary PGM preview; finite values are mapped linearly from
// [min, max] to [0, 255], a constant map becomes all zeros.
void write_pgm(const std::filesystem::path& path, const Grid& grid);

// CSV "x,y,depth_m" with header; every row must lie inside height×width and
// have positive depth. Duplicate pixels are rejected.
SparseDepthMap read_sparse_csv(const std::filesystem::path& path, std::size_t height,
                               std::size_t width);
void write_sparse_csv(const std::filesystem::path& path, const SparseDepthMap& map);

// "step,loss" rows; %.17g so curves round-trip exactly.
void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses);
std::string loss_csv_text(std::span<const double> losses);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace bpnet
