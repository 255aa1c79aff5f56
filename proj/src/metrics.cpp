// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "echodiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <Eigen/Dense>

#include "echodiff/errors.hpp"
#include "json.hpp"

namespace echodiff {

namespace {

void check_same_size(const char* op, const DisplayImage& a, const DisplayImage& b) {
    if (a.h != b.h || a.w != b.w) {
        throw UsageError(std::string(op) + ": shape mismatch between [" + std::to_string(a.h) + "," +
                         std::to_string(a.w) + "] and [" + std::to_string(b.h) + "," + std::to_string(b.w) + "]");
    }
}

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

DisplayImage to_display(const Image& img) {
    DisplayImage d;
    d.h = img.h;
    d.w = img.w;
    d.pix.resize(img.pix.size());
    for (std::size_t i = 0; i < img.pix.size(); ++i) {
        d.pix[i] = (static_cast<double>(img.pix[i]) + 1.0) * 127.5;
    }
    return d;
}

double mse(const DisplayImage& a, const DisplayImage& b) {
    check_same_size("mse", a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.pix.size(); ++i) {
        const double d = a.pix[i] - b.pix[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.pix.size());
}

std::optional<double> psnr(const DisplayImage& a, const DisplayImage& b, double max_value) {
    if (!(max_value > 0.0)) throw UsageError("psnr: max_value must be positive");
    const double err = mse(a, b);
    if (err == 0.0) return std::nullopt;
    return 10.0 * std::log10(max_value * max_value / err);
}

double ssim(const DisplayImage& a, const DisplayImage& b, double max_value) {
    check_same_size("ssim", a, b);
    constexpr int kWin = 11;
    if (a.h < kWin || a.w < kWin) {
        throw UsageError("ssim: image [" + std::to_string(a.h) + "," + std::to_string(a.w) +
                         "] smaller than the 11x11 window");
    }
    // Normalized 11x11 Gaussian window, sigma 1.5.
    double win[kWin][kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        for (int j = 0; j < kWin; ++j) {
            const double dy = i - 5, dx = j - 5;
            win[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            wsum += win[i][j];
        }
    }
    for (auto& row : win) {
        for (auto& v : row) v /= wsum;
    }

    const double c1 = (0.01 * max_value) * (0.01 * max_value);
    const double c2 = (0.03 * max_value) * (0.03 * max_value);
    double total = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y + kWin <= a.h; ++y) {
        for (int x = 0; x + kWin <= a.w; ++x) {
            double ma = 0, mb = 0;
            for (int i = 0; i < kWin; ++i) {
                const std::size_t row = static_cast<std::size_t>(y + i) * a.w + x;
                for (int j = 0; j < kWin; ++j) {
                    ma += win[i][j] * a.pix[row + j];
                    mb += win[i][j] * b.pix[row + j];
                }
            }
            double va = 0, vb = 0, cov = 0;
            for (int i = 0; i < kWin; ++i) {
                const std::size_t row = static_cast<std::size_t>(y + i) * a.w + x;
                for (int j = 0; j < kWin; ++j) {
                    const double da = a.pix[row + j] - ma;
                    const double db = b.pix[row + j] - mb;
                    va += win[i][j] * da * da;
                    vb += win[i][j] * db * db;
                    cov += win[i][j] * da * db;
                }
            }
            const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

std::vector<double> extract_features(const DisplayImage& img) {
    std::vector<double> f;
    f.reserve(kFeatureDim);
    // 8x8 area means.
    for (int by = 0; by < 8; ++by) {
        const int y0 = by * img.h / 8, y1 = (by + 1) * img.h / 8;
        for (int bx = 0; bx < 8; ++bx) {
            const int x0 = bx * img.w / 8, x1 = (bx + 1) * img.w / 8;
            double acc = 0.0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) acc += img.pix[static_cast<std::size_t>(y) * img.w + x];
            }
            f.push_back(acc / (static_cast<double>(y1 - y0) * (x1 - x0)));
        }
    }
    // 16-bin intensity histogram mass.
    double hist[16] = {};
    for (double v : img.pix) {
        const int bin = std::clamp(static_cast<int>(v / 16.0), 0, 15);
        hist[bin] += 1.0;
    }
    for (double h : hist) f.push_back(h / static_cast<double>(img.pix.size()));
    // Gradient magnitude statistics over forward differences.
    double gsum = 0.0, gsq = 0.0, gmax = 0.0;
    const std::int64_t gh = img.h - 1, gw = img.w - 1;
    for (int y = 0; y < gh; ++y) {
        for (int x = 0; x < gw; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * img.w + x;
            const double gx = img.pix[i + 1] - img.pix[i];
            const double gy = img.pix[i + img.w] - img.pix[i];
            const double m = std::sqrt(gx * gx + gy * gy);
            gsum += m;
            gsq += m * m;
            gmax = std::max(gmax, m);
        }
    }
    const double ng = static_cast<double>(gh * gw);
    const double gmean = gsum / ng;
    f.push_back(gmean);
    f.push_back(std::sqrt(std::max(0.0, gsq / ng - gmean * gmean)));
    f.push_back(gmax);
    return f;
}

FeatureStats compute_feature_stats(const std::vector<std::vector<double>>& features) {
    if (features.size() < 2) {
        throw DataError("feature stats: need at least 2 samples for a covariance, got " +
                        std::to_string(features.size()));
    }
    const int d = static_cast<int>(features[0].size());
    for (const auto& f : features) {
        if (static_cast<int>(f.size()) != d) throw DataError("feature stats: inconsistent feature dimensions");
    }
    FeatureStats st;
    st.n = static_cast<int>(features.size());
    st.mu.assign(static_cast<std::size_t>(d), 0.0);
    for (const auto& f : features) {
        for (int i = 0; i < d; ++i) st.mu[static_cast<std::size_t>(i)] += f[static_cast<std::size_t>(i)];
    }
    for (auto& v : st.mu) v /= st.n;
    st.sigma.assign(static_cast<std::size_t>(d) * d, 0.0);
    for (const auto& f : features) {
        for (int i = 0; i < d; ++i) {
            const double di = f[static_cast<std::size_t>(i)] - st.mu[static_cast<std::size_t>(i)];
            for (int j = i; j < d; ++j) {
                const double dj = f[static_cast<std::size_t>(j)] - st.mu[static_cast<std::size_t>(j)];
                st.sigma[static_cast<std::size_t>(i) * d + j] += di * dj;
            }
        }
    }
    for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j) {
            const double v = st.sigma[static_cast<std::size_t>(i) * d + j] / (st.n - 1);
            st.sigma[static_cast<std::size_t>(i) * d + j] = v;
            st.sigma[static_cast<std::size_t>(j) * d + i] = v;
        }
    }
    if (st.n < d + 1) {
        for (int i = 0; i < d; ++i) st.sigma[static_cast<std::size_t>(i) * d + i] += 1e-6;
        st.shrinkage_applied = true;
    }
    return st;
}

namespace {

Eigen::MatrixXd to_matrix(const std::vector<double>& s, int d) {
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) m(i, j) = s[static_cast<std::size_t>(i) * d + j];
    }
    return m;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& s, const char* who) {
    const double scale = std::max(1.0, s.trace());
    const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-9 * scale) {
        throw NumericError(std::string(who) + ": matrix is not symmetric (max asymmetry " + std::to_string(asym) +
                           ")");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
    if (eig.info() != Eigen::Success) {
        throw NumericError(std::string(who) + ": eigendecomposition failed");
    }
    if (eig.eigenvalues().minCoeff() < -1e-6 * scale) {
        throw NumericError(std::string(who) + ": matrix is not PSD within tolerance (min eigenvalue " +
                           std::to_string(eig.eigenvalues().minCoeff()) + ")");
    }
    Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

std::vector<double> matrix_sqrt_psd(const std::vector<double>& s, int d) {
    if (static_cast<int>(s.size()) != d * d) throw UsageError("matrix_sqrt_psd: size does not match dimension");
    const Eigen::MatrixXd r = sqrt_psd(to_matrix(s, d), "matrix_sqrt_psd");
    std::vector<double> out(static_cast<std::size_t>(d) * d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] = r(i, j);
    }
    return out;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim() != b.dim()) {
        throw UsageError("frechet_distance: dimension mismatch between " + std::to_string(a.dim()) + " and " +
                         std::to_string(b.dim()));
    }
    const int d = a.dim();
    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        const double dv = a.mu[static_cast<std::size_t>(i)] - b.mu[static_cast<std::size_t>(i)];
        mean_term += dv * dv;
    }
    const Eigen::MatrixXd sa = to_matrix(a.sigma, d);
    const Eigen::MatrixXd sb = to_matrix(b.sigma, d);
    const Eigen::MatrixXd ra = sqrt_psd(sa, "frechet_distance");
    Eigen::MatrixXd inner = ra * sb * ra;
    inner = 0.5 * (inner + inner.transpose());  // symmetrize rounding noise
    const Eigen::MatrixXd cross = sqrt_psd(inner, "frechet_distance");
    const double value = mean_term + sa.trace() + sb.trace() - 2.0 * cross.trace();
    return std::max(0.0, value);
}

namespace {

MetricAggregate aggregate(const std::vector<double>& values) {
    MetricAggregate agg;
    agg.count = static_cast<int>(values.size());
    if (values.empty()) return agg;
    double sum = 0.0;
    for (double v : values) sum += v;
    agg.mean = sum / agg.count;
    if (agg.count >= 2) {
        double sq = 0.0;
        for (double v : values) sq += (v - agg.mean) * (v - agg.mean);
        agg.stddev = std::sqrt(sq / (agg.count - 1));
    }
    return agg;
}

FeatureStats dataset_stats(const Dataset& ds) {
    std::vector<std::vector<double>> features;
    features.reserve(ds.samples.size());
    for (const auto& s : ds.samples) features.push_back(extract_features(to_display(s.image)));
    return compute_feature_stats(features);
}

}  // namespace

MetricsReport evaluate_translation(const Dataset& generated, const Dataset& reference, const Dataset* ground_truth,
                                   const Dataset* source) {
    MetricsReport report;
    report.generated_name = generated.domain_tag;
    report.reference_name = reference.domain_tag;

    if (ground_truth != nullptr) {
        report.ground_truth_name = ground_truth->domain_tag;
        if (ground_truth->samples.size() != generated.samples.size()) {
            throw DataError("evaluate: paired metrics need equal counts, got " +
                            std::to_string(generated.samples.size()) + " generated vs " +
                            std::to_string(ground_truth->samples.size()) + " ground-truth");
        }
        std::map<std::string, const GuidedSample*> by_id;
        for (const auto& s : ground_truth->samples) by_id[s.id] = &s;
        std::vector<std::string> missing;
        for (const auto& s : generated.samples) {
            if (!by_id.count(s.id)) missing.push_back(s.id);
        }
        if (!missing.empty()) {
            std::string list;
            for (std::size_t i = 0; i < missing.size() && i < 8; ++i) list += (i ? ", " : "") + missing[i];
            throw DataError("evaluate: ids missing from ground truth: " + list);
        }
        std::vector<double> mses, psnrs, ssims;
        for (const auto& s : generated.samples) {
            const auto da = to_display(s.image);
            const auto db = to_display(by_id[s.id]->image);
            MetricRow row;
            row.id = s.id;
            row.mse = mse(da, db);
            row.psnr_db = psnr(da, db);
            row.ssim = ssim(da, db);
            mses.push_back(row.mse);
            if (row.psnr_db) psnrs.push_back(*row.psnr_db);
            ssims.push_back(row.ssim);
            report.rows.push_back(std::move(row));
        }
        report.mse_agg = aggregate(mses);
        report.psnr_agg = aggregate(psnrs);
        report.ssim_agg = aggregate(ssims);
    }

    const FeatureStats gen_stats = dataset_stats(generated);
    const FeatureStats ref_stats = dataset_stats(reference);
    report.fid = frechet_distance(gen_stats, ref_stats);
    report.shrinkage_generated = gen_stats.shrinkage_applied;
    report.shrinkage_reference = ref_stats.shrinkage_applied;
    if (source != nullptr) {
        report.source_name = source->domain_tag;
        const FeatureStats src_stats = dataset_stats(*source);
        report.fid_source = frechet_distance(src_stats, ref_stats);
        report.shrinkage_source = src_stats.shrinkage_applied;
    }
    return report;
}

std::string report_to_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << "id,mse,psnr_db,ssim\n";
    for (const auto& row : r.rows) {
        os << row.id << ',' << g17(row.mse) << ',' << (row.psnr_db ? g17(*row.psnr_db) : "") << ','
           << g17(row.ssim) << '\n';
    }
    if (!r.rows.empty()) {
        os << "mean," << g17(r.mse_agg->mean) << ',' << (r.psnr_agg->count ? g17(r.psnr_agg->mean) : "") << ','
           << g17(r.ssim_agg->mean) << '\n';
        os << "stddev," << g17(r.mse_agg->stddev) << ',' << (r.psnr_agg->count ? g17(r.psnr_agg->stddev) : "")
           << ',' << g17(r.ssim_agg->stddev) << '\n';
    }
    os << "fid," << g17(r.fid) << '\n';
    if (r.fid_source) os << "fid_source," << g17(*r.fid_source) << '\n';
    os << "shrinkage," << (r.shrinkage_generated || r.shrinkage_reference || r.shrinkage_source ? 1 : 0) << '\n';
    os << "extractor," << r.extractor_id << '\n';
    if (!r.config_fingerprint.empty()) os << "fingerprint," << r.config_fingerprint << '\n';
    return os.str();
}

std::string report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["metadata"]["extractor"] = r.extractor_id;
    j["metadata"]["generated"] = r.generated_name;
    j["metadata"]["reference"] = r.reference_name;
    if (!r.ground_truth_name.empty()) j["metadata"]["ground_truth"] = r.ground_truth_name;
    if (!r.source_name.empty()) j["metadata"]["source"] = r.source_name;
    if (!r.config_fingerprint.empty()) j["metadata"]["config_fingerprint"] = r.config_fingerprint;
    j["metadata"]["covariance_shrinkage"] = {{"generated", r.shrinkage_generated},
                                             {"reference", r.shrinkage_reference},
                                             {"source", r.shrinkage_source}};
    j["rows"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json jr;
        jr["id"] = row.id;
        jr["mse"] = row.mse;
        jr["psnr_db"] = row.psnr_db ? nlohmann::json(*row.psnr_db) : nlohmann::json(nullptr);
        jr["ssim"] = row.ssim;
        j["rows"].push_back(std::move(jr));
    }
    auto agg_json = [](const std::optional<MetricAggregate>& a) -> nlohmann::json {
        if (!a || a->count == 0) return nullptr;
        return {{"mean", a->mean}, {"stddev", a->stddev}, {"count", a->count}};
    };
    j["aggregate"]["mse"] = agg_json(r.mse_agg);
    j["aggregate"]["psnr_db"] = agg_json(r.psnr_agg);
    j["aggregate"]["ssim"] = agg_json(r.ssim_agg);
    j["fid"] = r.fid;
    if (r.fid_source) j["fid_source"] = *r.fid_source;
    return j.dump(2) + "\n";
}

}  // namespace echodiff
