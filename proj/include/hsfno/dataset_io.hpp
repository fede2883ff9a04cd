#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsfno/dpde_solvers.hpp"

namespace hsfno {

inline constexpr std::uint16_t kDatasetVersion = 1;

/// HSFD layout: "HSFD", u16 version, u64 header length, JSON header, then one
/// payload per trajectory (initial history, saved slices, times, S field if
/// any; all f64 LE) each followed by its CRC32.
std::vector<std::uint8_t> encode_dataset(const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> decode_dataset(std::span<const std::uint8_t> bytes);

void write_dataset(const std::string& path, const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> read_dataset(const std::string& path);

}  // namespace hsfno
