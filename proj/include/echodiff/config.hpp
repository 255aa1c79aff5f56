// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "echodiff/models.hpp"
#include "echodiff/schedule.hpp"
#include "echodiff/training.hpp"

namespace echodiff {

/// Every tunable of the pipeline plus the seed, serialized as a flat
/// `key = value` text document. Unknown keys are rejected; missing keys take
/// the documented defaults and are echoed back by canonical_text().
struct RunConfig {
    std::uint64_t seed = 1;
    int image_side = 64;
    int schedule_total_steps = 1000;
    int schedule_span = 250;
    double schedule_beta_min = 1e-4;
    double schedule_beta_max = 0.02;
    double schedule_variance_floor_scale = 1e-4;
    double schedule_variance_ceiling_scale = 1.0;
    int model_z_dim = 8;
    bool model_onehot_mask = false;
    int train_epochs = 500;
    int train_batch_size = 8;
    double train_lr_g = 1.6e-4;
    double train_lr_d = 1.6e-4;
    double train_adam_beta1 = 0.5;
    double train_adam_beta2 = 0.9;
    double train_lambda_rec = 50.0;
    double train_val_fraction = 0.10;
    std::string train_adv_loss = "least_squares";  // or "logistic"
    double metrics_max_value = 255.0;

    /// Parses a config document; messages cite 1-based line numbers.
    static RunConfig parse_text(const std::string& text, const std::string& origin);
    static RunConfig parse_file(const std::filesystem::path& path);

    /// Applies one `key=value` override (the CLI --set flag).
    void apply_override(const std::string& assignment);

    void validate() const;

    /// Sorted `key = value` lines with canonical value formatting; parsing
    /// the result reproduces this config exactly.
    std::string canonical_text() const;

    /// Stable 64-bit hash of the canonical text, as 16 hex digits.
    std::string fingerprint() const;

    NoiseSchedule make_noise_schedule() const;
    ModelConfig model_config() const;
    TrainConfig train_config() const;
};

}  // namespace echodiff
