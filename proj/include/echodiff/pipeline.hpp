// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "echodiff/config.hpp"
#include "echodiff/metrics.hpp"

namespace echodiff {

/// Prepares an output directory; refuses a non-empty one unless force is
/// set. On failure inside the run_* helpers a FAILED marker file holding the
/// error text is left in the directory.
void prepare_output_dir(const std::filesystem::path& out, bool force);

/// Writes a phantom dataset; returns the manifest path.
std::filesystem::path run_phantom(const std::filesystem::path& out, int n, const std::string& style,
                                  std::uint64_t seed, int side, bool force);

/// Trains on a dataset directory; writes config_resolved.txt, steps.log and
/// the rolling checkpoint.bin under `out`. Returns the checkpoint path.
std::filesystem::path run_train(const RunConfig& cfg, const std::filesystem::path& data,
                                const std::filesystem::path& out, bool force);

struct TranslateOutcome {
    std::filesystem::path manifest;
    int samples = 0;
    std::int64_t generator_calls = 0;  // summed over samples
};

/// Translates every sample of a dataset with the checkpointed model, guided
/// by each sample's encoded mask; writes the synthetic dataset under `out`.
TranslateOutcome run_translate(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                               const std::filesystem::path& out, std::uint64_t seed,
                               const std::optional<std::string>& session_fingerprint, bool allow_mismatch,
                               bool force);

/// Evaluates generated against reference (plus optional paired ground truth
/// and pre-translation source); writes report.csv and report.json.
MetricsReport run_evaluate(const std::filesystem::path& generated, const std::filesystem::path& reference,
                           const std::optional<std::filesystem::path>& ground_truth,
                           const std::optional<std::filesystem::path>& source, const std::filesystem::path& out,
                           const RunConfig& cfg, bool force);

}  // namespace echodiff
