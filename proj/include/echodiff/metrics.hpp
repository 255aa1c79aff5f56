// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "echodiff/data.hpp"

namespace echodiff {

/// Single-channel image on the 0-255 display scale; the scale every metric
/// in this module is defined on.
struct DisplayImage {
    int h = 0;
    int w = 0;
    std::vector<double> pix;
};

DisplayImage to_display(const Image& img);

/// Mean squared error, pixel by pixel.
double mse(const DisplayImage& a, const DisplayImage& b);

/// Peak signal-to-noise ratio in dB; empty exactly when mse(a, b) == 0.
std::optional<double> psnr(const DisplayImage& a, const DisplayImage& b, double max_value = 255.0);

/// Mean structural similarity over sliding 11x11 Gaussian windows
/// (sigma 1.5, C1 = (0.01 max)^2, C2 = (0.03 max)^2); symmetric in (a, b).
double ssim(const DisplayImage& a, const DisplayImage& b, double max_value = 255.0);

inline constexpr const char* kFeatureExtractorId = "builtin83-v1";
inline constexpr int kFeatureDim = 83;

/// Deterministic hand-crafted embedding: 8x8 area-mean downsample (64),
/// 16-bin intensity histogram mass (16), and gradient-magnitude mean,
/// standard deviation, and max (3).
std::vector<double> extract_features(const DisplayImage& img);

/// Gaussian fit of a feature cloud: sample count, mean, and unbiased
/// covariance (row-major d x d). Covariance shrinkage (+1e-6 I) is applied
/// when n < d + 1 and flagged.
struct FeatureStats {
    int n = 0;
    std::vector<double> mu;
    std::vector<double> sigma;
    bool shrinkage_applied = false;

    int dim() const { return static_cast<int>(mu.size()); }
};

FeatureStats compute_feature_stats(const std::vector<std::vector<double>>& features);

/// Principal square root of a symmetric PSD matrix (row-major d x d) via
/// eigendecomposition, negative eigenvalues clipped at zero.
std::vector<double> matrix_sqrt_psd(const std::vector<double>& s, int d);

/// Frechet distance between two Gaussian fits:
/// |mu_A - mu_B|^2 + tr(S_A + S_B - 2 (S_A^1/2 S_B S_A^1/2)^1/2), >= 0.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

struct MetricRow {
    std::string id;
    double mse = 0.0;
    std::optional<double> psnr_db;
    double ssim = 0.0;
};

struct MetricAggregate {
    double mean = 0.0;
    double stddev = 0.0;  // unbiased; 0 when fewer than two values
    int count = 0;
};

/// The evaluation output: per-image rows when ground truth is available,
/// dataset-level Frechet scores always, plus provenance metadata.
struct MetricsReport {
    std::vector<MetricRow> rows;
    std::optional<MetricAggregate> mse_agg;
    std::optional<MetricAggregate> psnr_agg;
    std::optional<MetricAggregate> ssim_agg;
    double fid = 0.0;                  // FID(generated, reference)
    std::optional<double> fid_source;  // FID(source, reference) when a source set is given
    std::string extractor_id = kFeatureExtractorId;
    std::string generated_name, reference_name, ground_truth_name, source_name;
    std::string config_fingerprint;
    bool shrinkage_generated = false;
    bool shrinkage_reference = false;
    bool shrinkage_source = false;
};

/// Computes the report for a generated dataset against a reference
/// distribution; paired per-image metrics require matching ids.
MetricsReport evaluate_translation(const Dataset& generated, const Dataset& reference,
                                   const Dataset* ground_truth = nullptr, const Dataset* source = nullptr);

/// Byte-exact serializations (grammar documented in docs/FORMATS.md).
std::string report_to_csv(const MetricsReport& r);
std::string report_to_json(const MetricsReport& r);

}  // namespace echodiff
