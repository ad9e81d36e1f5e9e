#include "bpnet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace bpnet {

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
bool get_le(std::istream& is, T& value) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return true;
}

}  // namespace

void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write(kCheckpointMagic, kMagicLen);
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
    for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw DataError("failed writing checkpoint");
}

std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kCheckpointMagic, kMagicLen) != 0) {
    throw DataError("not a checkpoint: bad magic");
  }
  std::vector<NamedTensor> out;
  std::uint32_t name_len = 0;
  while (get_le(is, name_len)) {
    if (name_len > 4096) throw DataError("checkpoint record name too long");
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!is.read(name.data(), name_len) || !get_le(is, rank) || rank > 8) {
      throw DataError("truncated checkpoint record");
    }
    Shape shape(rank);
    for (auto& e : shape) {
      std::uint64_t v = 0;
      if (!get_le(is, v)) throw DataError("truncated checkpoint record '" + name + "'");
      e = static_cast<std::size_t>(v);
    }
    std::vector<double> values(numel(shape));
    for (double& v : values) {
      std::uint64_t bits = 0;
      if (!get_le(is, bits)) throw DataError("truncated payload for '" + name + "'");
      v = std::bit_cast<double>(bits);
    }
    out.push_back({std::move(name), Tensor::from(shape, std::move(values))});
  }
  if (!is.eof()) throw DataError("checkpoint read error");
  if (is.gcount() != 0) throw DataError("truncated checkpoint record header");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, store.state());
}

void load_checkpoint(const std::filesystem::path& path, ParameterStore& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  store.load_state(read_checkpoint(is));
}

}  // namespace bpnet
