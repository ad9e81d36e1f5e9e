#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "bpnet/nn.hpp"

namespace bpnet {

// Binary layout, all integers little-endian:
//   "BPNETCKPT1"
//   repeated until EOF:
//     u32 name_len, name bytes, u32 rank, u64 extents[rank], f64 payload[numel]
inline constexpr char kCheckpointMagic[] = "BPNETCKPT1";

void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store);
void load_checkpoint(const std::filesystem::path& path, ParameterStore& store);

}  // namespace bpnet
