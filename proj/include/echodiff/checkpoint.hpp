// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "echodiff/config.hpp"
#include "echodiff/training.hpp"

namespace echodiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[9] = "ECHODIFF";

/// A checkpoint file is: the 8-byte magic, a little-endian u32 format
/// version, a little-endian u64 metadata length, a JSON metadata block
/// (config text + fingerprint, schedule parameters, step counters, parameter
/// layout), then raw little-endian float32 blocks in declaration order:
/// generator parameters, discriminator parameters, generator optimizer first
/// and second moments, discriminator optimizer first and second moments.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const RunConfig& config);

struct LoadedCheckpoint {
    RunConfig config;
    NoiseSchedule schedule;
    std::unique_ptr<TrainState> state;
    std::string fingerprint;
};

/// Restores a checkpoint. When `expected_fingerprint` is given and differs
/// from the stored one, the load is rejected unless `allow_mismatch` is set.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::string* expected_fingerprint = nullptr, bool allow_mismatch = false);

}  // namespace echodiff
