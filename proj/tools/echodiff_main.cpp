// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "echodiff/pipeline.hpp"

namespace {

echodiff::RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    echodiff::RunConfig cfg;
    if (!path.empty()) cfg = echodiff::RunConfig::parse_file(path);
    for (const auto& o : overrides) cfg.apply_override(o);
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"echodiff: adversarial denoising-diffusion domain translation for sector-scan images"};
    app.require_subcommand(1);

    // phantom
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom dataset");
    std::string ph_out, ph_style = "a";
    int ph_n = 200, ph_side = 64;
    std::uint64_t ph_seed = 1;
    bool ph_force = false;
    phantom->add_option("--out", ph_out, "Output dataset directory")->required();
    phantom->add_option("--n", ph_n, "Number of samples")->capture_default_str();
    phantom->add_option("--style", ph_style, "Phantom style (a or b)")->capture_default_str();
    phantom->add_option("--seed", ph_seed, "Generation seed")->capture_default_str();
    phantom->add_option("--side", ph_side, "Image side length")->capture_default_str();
    phantom->add_flag("--force", ph_force, "Overwrite a non-empty output directory");
    phantom->callback([&] {
        const auto manifest = echodiff::run_phantom(ph_out, ph_n, ph_style, ph_seed, ph_side, ph_force);
        std::cout << manifest.string() << "\n";
    });

    // train
    auto* train = app.add_subcommand("train", "Train the adversarial diffusion model on a dataset");
    std::string tr_config, tr_data, tr_out;
    std::vector<std::string> tr_set;
    bool tr_force = false;
    train->add_option("--config", tr_config, "Config file (missing keys take documented defaults)");
    train->add_option("--data", tr_data, "Training dataset directory")->required();
    train->add_option("--out", tr_out, "Output directory for checkpoint and logs")->required();
    train->add_option("--set", tr_set, "Override a config key (key=value); repeatable");
    train->add_flag("--force", tr_force, "Overwrite a non-empty output directory");
    train->callback([&] {
        const auto cfg = load_config(tr_config, tr_set);
        const auto ckpt = echodiff::run_train(cfg, tr_data, tr_out, tr_force);
        std::cout << ckpt.string() << "\n";
    });

    // translate
    auto* translate = app.add_subcommand("translate", "Run domain translation over a dataset");
    std::string ts_ckpt, ts_data, ts_out, ts_config;
    std::vector<std::string> ts_set;
    std::uint64_t ts_seed = 1;
    bool ts_force = false, ts_allow_mismatch = false;
    translate->add_option("--checkpoint", ts_ckpt, "Trained checkpoint file")->required();
    translate->add_option("--data", ts_data, "Input dataset directory")->required();
    translate->add_option("--out", ts_out, "Output dataset directory")->required();
    translate->add_option("--seed", ts_seed, "Sampling seed")->capture_default_str();
    translate->add_option("--config", ts_config, "Session config; its fingerprint must match the checkpoint");
    translate->add_option("--set", ts_set, "Override a config key (key=value); repeatable");
    translate->add_flag("--allow-fingerprint-mismatch", ts_allow_mismatch,
                        "Proceed even if the session config fingerprint differs");
    translate->add_flag("--force", ts_force, "Overwrite a non-empty output directory");
    translate->callback([&] {
        std::optional<std::string> fingerprint;
        if (!ts_config.empty() || !ts_set.empty()) {
            fingerprint = load_config(ts_config, ts_set).fingerprint();
        }
        const auto outcome =
            echodiff::run_translate(ts_ckpt, ts_data, ts_out, ts_seed, fingerprint, ts_allow_mismatch, ts_force);
        std::cout << outcome.manifest.string() << "\n";
        std::cout << "samples " << outcome.samples << " generator_calls " << outcome.generator_calls << "\n";
    });

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Compute image-quality metrics and Frechet scores");
    std::string ev_gen, ev_ref, ev_gt, ev_src, ev_out, ev_config;
    std::vector<std::string> ev_set;
    bool ev_force = false;
    evaluate->add_option("--generated", ev_gen, "Generated dataset directory")->required();
    evaluate->add_option("--reference", ev_ref, "Reference (target-domain) dataset directory")->required();
    evaluate->add_option("--ground-truth", ev_gt, "Paired ground-truth dataset for per-image metrics");
    evaluate->add_option("--source", ev_src, "Pre-translation source dataset for the before/after pair");
    evaluate->add_option("--out", ev_out, "Output directory for report files")->required();
    evaluate->add_option("--config", ev_config, "Config file stamped into the report");
    evaluate->add_option("--set", ev_set, "Override a config key (key=value); repeatable");
    evaluate->add_flag("--force", ev_force, "Overwrite a non-empty output directory");
    evaluate->callback([&] {
        const auto cfg = load_config(ev_config, ev_set);
        std::optional<std::filesystem::path> gt, src;
        if (!ev_gt.empty()) gt = ev_gt;
        if (!ev_src.empty()) src = ev_src;
        const auto report = echodiff::run_evaluate(ev_gen, ev_ref, gt, src, ev_out, cfg, ev_force);
        std::cout << "fid " << report.fid << "\n";
        if (report.fid_source) std::cout << "fid_source " << *report.fid_source << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const echodiff::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
