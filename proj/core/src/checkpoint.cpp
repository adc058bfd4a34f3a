#include "feddrop/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "feddrop/errors.hpp"

namespace feddrop {

namespace {

constexpr std::array<char, 8> kMagic{'F', 'D', 'R', 'O', 'P', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kHasInit = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw IoError("checkpoint truncated");
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

void put_tree(std::ostream& out, const ParamTree& tree) {
  for (auto span : arrays(tree))
    for (double v : span) put_le(out, std::bit_cast<std::uint64_t>(v));
}

void get_tree(std::istream& in, ParamTree& tree) {
  for (auto span : arrays(tree))
    for (double& v : span) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  const Architecture arch = architecture_of(checkpoint.params);
  if (checkpoint.init) require_same_shape(checkpoint.params, *checkpoint.init, "checkpoint init");
  out.write(kMagic.data(), kMagic.size());
  put_le(out, kVersion);
  put_le(out, checkpoint.init ? kHasInit : std::uint32_t{0});
  for (std::uint64_t dim : {arch.input_dim, arch.model_dim, arch.hidden_dim, arch.num_blocks,
                            arch.num_classes}) {
    put_le(out, dim);
  }
  put_le(out, static_cast<std::uint64_t>(param_count(arch)));
  put_tree(out, checkpoint.params);
  if (checkpoint.init) put_tree(out, *checkpoint.init);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, checkpoint);
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw IoError("not a feddrop checkpoint");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto flags = get_le<std::uint32_t>(in);
  if (flags & ~kHasInit) throw IoError("unknown checkpoint flags");
  Architecture arch;
  arch.input_dim = get_le<std::uint64_t>(in);
  arch.model_dim = get_le<std::uint64_t>(in);
  arch.hidden_dim = get_le<std::uint64_t>(in);
  arch.num_blocks = get_le<std::uint64_t>(in);
  arch.num_classes = get_le<std::uint64_t>(in);
  try {
    arch.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  // Refuse absurd headers before allocating.
  if (arch.model_dim > (1u << 20) || arch.hidden_dim > (1u << 20) ||
      arch.input_dim > (1u << 20) || arch.num_blocks > (1u << 16) ||
      arch.num_classes > (1u << 20)) {
    throw IoError("corrupt checkpoint header: implausible dimensions");
  }
  const auto count = get_le<std::uint64_t>(in);
  if (count != param_count(arch)) throw IoError("checkpoint parameter count does not match header");

  Checkpoint checkpoint;
  checkpoint.params = zeros(arch);
  get_tree(in, checkpoint.params);
  if (flags & kHasInit) {
    checkpoint.init = zeros(arch);
    get_tree(in, *checkpoint.init);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint");
  return checkpoint;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace feddrop
