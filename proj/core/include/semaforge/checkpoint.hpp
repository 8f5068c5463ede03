#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semaforge/nn.hpp"

namespace semaforge {

// Binary tensor container, all integers and floats little-endian:
//
//   magic    4 bytes  "SFCK"
//   version  u32      1
//   count    u64      number of tensors
//   per tensor:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u64 x rank
//     data     f64 x product(dims)
//
// The hyperparameters travel in a JSON sidecar next to the file
// (<file>.json), written by the caller.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);

// Raw read: names, shapes and values as stored.
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

// Copies stored values into the given tensors, matched by name. Every
// target must be present with an identical shape (FormatError otherwise);
// extra stored tensors are an error too.
void load_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& into);

// Bytes that save_checkpoint would write; used for equality checks.
std::string serialize_tensors(const std::vector<NamedTensor>& tensors);

}  // namespace semaforge
