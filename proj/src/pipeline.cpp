// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "echodiff/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "echodiff/checkpoint.hpp"
#include "echodiff/sampling.hpp"

namespace echodiff {

namespace fs = std::filesystem;

namespace {

void write_failure_marker(const fs::path& out, const std::string& message) {
    std::error_code ec;
    if (!fs::exists(out, ec)) return;
    std::ofstream f(out / "FAILED", std::ios::binary);
    f << message << "\n";
}

/// Runs `body` and leaves a FAILED marker in `out` if it throws.
template <typename Fn>
auto with_failure_marker(const fs::path& out, Fn&& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        write_failure_marker(out, e.what());
        throw;
    }
}

std::string fmt9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

Dataset load_resized(const fs::path& root, int side) {
    Dataset ds = load_dataset(root);
    if (!ds.samples.empty() && (ds.samples[0].image.h != side || ds.samples[0].image.w != side)) {
        for (auto& s : ds.samples) {
            s.image = resize(s.image, side);
            s.mask = resize(s.mask, side);
        }
    }
    return ds;
}

}  // namespace

void prepare_output_dir(const fs::path& out, bool force) {
    if (fs::exists(out) && !fs::is_directory(out)) {
        throw UsageError("output path " + out.string() + " exists and is not a directory");
    }
    if (fs::exists(out) && !fs::is_empty(out) && !force) {
        throw UsageError("output directory " + out.string() + " is not empty (use --force to overwrite)");
    }
    fs::create_directories(out);
}

fs::path run_phantom(const fs::path& out, int n, const std::string& style, std::uint64_t seed, int side,
                     bool force) {
    prepare_output_dir(out, force);
    return with_failure_marker(out, [&] {
        Dataset ds = generate_phantoms(n, side, style, seed);
        write_dataset(ds, out);
        return out / "manifest.tsv";
    });
}

fs::path run_train(const RunConfig& cfg, const fs::path& data, const fs::path& out, bool force) {
    cfg.validate();
    prepare_output_dir(out, force);
    return with_failure_marker(out, [&] {
        Dataset ds = load_resized(data, cfg.image_side);

        {
            std::ofstream f(out / "config_resolved.txt", std::ios::binary);
            if (!f) throw DataError("train: cannot write config_resolved.txt under " + out.string());
            f << cfg.canonical_text();
        }

        std::ofstream log(out / "steps.log", std::ios::binary);
        if (!log) throw DataError("train: cannot write steps.log under " + out.string());
        const fs::path ckpt_path = out / "checkpoint.bin";

        TrainHooks hooks;
        hooks.on_step = [&log](const StepReport& r) {
            log << "step " << r.step << " d_loss " << fmt9(r.d_loss) << " g_adv " << fmt9(r.g_adv_loss) << " g_rec "
                << fmt9(r.g_rec_loss) << "\n";
        };
        hooks.on_epoch = [&log](const EpochSummary& e) {
            log << "epoch " << e.epoch << " val_rec " << fmt9(e.val_rec_loss) << "\n";
        };
        hooks.on_checkpoint = [&](const TrainState& st, int) { save_checkpoint(ckpt_path, st, cfg); };

        auto state = train(ds, cfg.train_config(), hooks);
        save_checkpoint(ckpt_path, *state, cfg);
        return ckpt_path;
    });
}

TranslateOutcome run_translate(const fs::path& checkpoint, const fs::path& data, const fs::path& out,
                               std::uint64_t seed, const std::optional<std::string>& session_fingerprint,
                               bool allow_mismatch, bool force) {
    prepare_output_dir(out, force);
    return with_failure_marker(out, [&] {
        LoadedCheckpoint lc =
            load_checkpoint(checkpoint, session_fingerprint ? &*session_fingerprint : nullptr, allow_mismatch);
        const int side = lc.config.image_side;
        Dataset ds = load_resized(data, side);

        Dataset translated;
        translated.domain_tag = ds.domain_tag + "-translated";
        translated.provenance = "translated from " + data.string();
        translated.samples.resize(ds.samples.size());

        TranslateOutcome outcome;
        outcome.samples = static_cast<int>(ds.samples.size());
        std::int64_t calls = 0;
#pragma omp parallel for schedule(static) reduction(+ : calls)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(ds.samples.size()); ++i) {
            const auto& src = ds.samples[static_cast<std::size_t>(i)];
            const auto guide = guide_to_tensor(src.mask, lc.config.model_onehot_mask);
            const auto result = reverse_sample(lc.state->gen, guide, derive_seed(seed, src.id), lc.schedule);
            GuidedSample sample;
            sample.id = src.id;
            sample.mask = src.mask;
            sample.domain_tag = translated.domain_tag;
            sample.image = tensor_to_image(result.image);
            translated.samples[static_cast<std::size_t>(i)] = std::move(sample);
            calls += result.generator_calls;
        }
        outcome.generator_calls = calls;
        write_dataset(translated, out);
        outcome.manifest = out / "manifest.tsv";
        return outcome;
    });
}

MetricsReport run_evaluate(const fs::path& generated, const fs::path& reference,
                           const std::optional<fs::path>& ground_truth, const std::optional<fs::path>& source,
                           const fs::path& out, const RunConfig& cfg, bool force) {
    prepare_output_dir(out, force);
    return with_failure_marker(out, [&] {
        Dataset gen = load_dataset(generated);
        Dataset ref = load_dataset(reference);
        std::optional<Dataset> gt, src;
        if (ground_truth) gt = load_dataset(*ground_truth);
        if (source) src = load_dataset(*source);

        MetricsReport report =
            evaluate_translation(gen, ref, gt ? &*gt : nullptr, src ? &*src : nullptr);
        report.config_fingerprint = cfg.fingerprint();

        {
            std::ofstream f(out / "report.csv", std::ios::binary);
            if (!f) throw DataError("evaluate: cannot write report.csv under " + out.string());
            f << report_to_csv(report);
        }
        {
            std::ofstream f(out / "report.json", std::ios::binary);
            if (!f) throw DataError("evaluate: cannot write report.json under " + out.string());
            f << report_to_json(report);
        }
        return report;
    });
}

}  // namespace echodiff
