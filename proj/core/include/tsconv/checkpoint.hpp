#pragma once

#include <filesystem>

#include "tsconv/config.hpp"
#include "tsconv/model.hpp"

namespace tsconv {

// <prefix>.bin holds the raw little-endian doubles of every parameter in
// order; <prefix>.manifest lists "name w,h,f offset count crc32" per
// parameter; <prefix>.cfg stores the run configuration.
void save_checkpoint(const std::filesystem::path& prefix, const TsConvModel& model,
                     const RunConfig& config);

// Loads parameters into `model`; any name, shape, size or checksum mismatch
// throws ManifestError.
void load_parameters(const std::filesystem::path& prefix, TsConvModel& model);

// Rebuilds config and model from a checkpoint.
struct LoadedCheckpoint {
  RunConfig config;
  TsConvModel model;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& prefix);

std::uint32_t crc32_of(const double* data, std::size_t count);

}  // namespace tsconv
