#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "ddtr/layers.hpp"

namespace ddtr {

inline constexpr std::uint32_t kWeightsVersion = 1;

class WeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout: "DDTR", u32 version, u32 entry count, then per entry u32 name
/// length, name bytes, u32 rank, u64 extents, u64 byte offset into the
/// payload; the payload follows as little-endian f64 values.
void save_weights(const ParameterSet& params, const std::filesystem::path& file);

/// Loads into an existing parameter set. Names, order and shapes must match.
void load_weights(ParameterSet& params, const std::filesystem::path& file);

}  // namespace ddtr
