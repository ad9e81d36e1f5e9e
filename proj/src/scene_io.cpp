#include "bpnet/scene_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "bpnet/error.hpp"
#include "bpnet/io.hpp"
#include "json.hpp"

namespace bpnet {

using nlohmann::json;

void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& intr) {
  json j{{"fx", intr.fx}, {"fy", intr.fy}, {"cx", intr.cx}, {"cy", intr.cy}};
  write_text(path, j.dump(2) + "\n");
}

CameraIntrinsics read_intrinsics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    const json j = json::parse(ss.str());
    CameraIntrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                       j.at("cy").get<double>()};
    k.validate();
    return k;
  } catch (const json::exception& e) {
    throw DataError("intrinsics " + path.string() + ": " + e.what());
  }
}

void write_scene(const std::filesystem::path& dir, const Scene& scene, const SparseDepthMap* sparse) {
  std::filesystem::create_directories(dir);
  write_pfm(dir / "image.pfm", scene.image);
  write_pfm(dir / "depth.pfm", scene.depth);
  write_pgm(dir / "depth.pgm", scene.depth);
  write_intrinsics(dir / "intrinsics.json", scene.intrinsics);
  if (sparse) write_sparse_csv(dir / "sparse.csv", *sparse);
}

Scene read_scene(const std::filesystem::path& dir) {
  Scene s;
  s.image = read_pfm(dir / "image.pfm");
  s.depth = read_pfm_grid(dir / "depth.pfm");
  s.intrinsics = read_intrinsics(dir / "intrinsics.json");
  if (s.image.dim(1) != s.depth.height || s.image.dim(2) != s.depth.width) {
    throw DataError("scene " + dir.string() + ": image and depth extents differ");
  }
  return s;
}

std::vector<std::filesystem::path> scene_dirs(const std::filesystem::path& root) {
  if (std::filesystem::exists(root / "image.pfm")) return {root};
  if (!std::filesystem::is_directory(root)) throw DataError("no scene directory at " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() && std::filesystem::exists(e.path() / "image.pfm")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("no scenes under " + root.string());
  return dirs;
}

std::vector<Scene> load_scenes(const std::filesystem::path& root) {
  std::vector<Scene> scenes;
  for (const auto& d : scene_dirs(root)) scenes.push_back(read_scene(d));
  return scenes;
}

}  // namespace bpnet
