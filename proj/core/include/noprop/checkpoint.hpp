#pragma once

#include <string>

#include "noprop/model.hpp"

namespace noprop {

// "NPRP" binary container: versioned header, config snapshot, named tensor
// table (little-endian payloads), schedule state and a trailing CRC-32.
// Round trips are bit-exact, including optimizer moments and step counts.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

std::uint32_t crc32(const unsigned char* data, std::size_t len);

}  // namespace noprop
