#pragma once

// Checkpoint layout, all integers and floats little-endian:
//
//   offset  size  field
//   0       8     magic "FDROPCKP"
//   8       4     version (uint32, = 1)
//   12      4     flags (uint32, bit 0: init snapshot present)
//   16      40    input_dim, model_dim, hidden_dim, num_blocks, num_classes (uint64 each)
//   56      8     parameter count P (uint64)
//   64      8*P   trained parameters, float64
//   ...     8*P   init snapshot, float64 (only if flag bit 0)
//
// Parameters are flattened in declaration order: input_w (row-major),
// input_b, then per block w1, b1, w2, b2, then output_w, output_b.

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "feddrop/nn.hpp"

namespace feddrop {

struct Checkpoint {
  ParamTree params;
  std::optional<ParamTree> init;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

// Throws IoError on truncated or corrupt input.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace feddrop
