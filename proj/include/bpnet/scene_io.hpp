#pragma once

#include <filesystem>
#include <vector>

#include "bpnet/pipeline.hpp"

namespace bpnet {

// A scene directory holds image.pfm (3 channels), depth.pfm, intrinsics.json
// ({"fx","fy","cx","cy"}), a depth.pgm preview and, optionally, sparse.csv.
void write_scene(const std::filesystem::path& dir, const Scene& scene,
                 const SparseDepthMap* sparse = nullptr);
Scene read_scene(const std::filesystem::path& dir);

// root itself when it is a scene directory, else its scene subdirectories in
// name order. Throws DataError when there are none.
std::vector<std::filesystem::path> scene_dirs(const std::filesystem::path& root);
std::vector<Scene> load_scenes(const std::filesystem::path& root);

CameraIntrinsics read_intrinsics(const std::filesystem::path& path);
void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& intr);

}  // namespace bpnet
