// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "echodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace echodiff {

namespace {

void append_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void append_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

void append_floats(std::string& out, const std::vector<float>& v) {
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
}

void append_tensor(std::string& out, const Tensor<float>& t) {
    out.append(reinterpret_cast<const char*>(t.data().data()), t.data().size() * sizeof(float));
}

class Reader {
public:
    Reader(const std::string& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

    void raw(void* dst, std::size_t n) {
        if (pos_ + n > buf_.size()) {
            throw CheckpointCorruptError("checkpoint " + path_ + ": truncated file");
        }
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::uint32_t u32() {
        std::uint32_t v = 0;
        raw(&v, 4);
        return v;
    }

    std::uint64_t u64() {
        std::uint64_t v = 0;
        raw(&v, 8);
        return v;
    }

    std::string bytes(std::size_t n) {
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

    void floats_into(std::span<float> dst) { raw(dst.data(), dst.size() * sizeof(float)); }
    void floats_into(std::vector<float>& dst) { raw(dst.data(), dst.size() * sizeof(float)); }

    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

nlohmann::json param_counts(std::vector<Tensor<float>*> params) {
    auto arr = nlohmann::json::array();
    for (auto* p : params) arr.push_back(p->numel());
    return arr;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const RunConfig& config) {
    auto& st = const_cast<TrainState&>(state);  // parameter access only; nothing is mutated
    nlohmann::json meta;
    meta["dtype"] = "float32";
    meta["config_fingerprint"] = config.fingerprint();
    meta["config_text"] = config.canonical_text();
    meta["step_counter"] = st.step_count;
    meta["opt_g_steps"] = st.opt_g.step_count();
    meta["opt_d_steps"] = st.opt_d.step_count();
    meta["schedule"] = {{"total_steps", config.schedule_total_steps},
                        {"span", config.schedule_span},
                        {"beta_min", config.schedule_beta_min},
                        {"beta_max", config.schedule_beta_max},
                        {"variance_floor_scale", config.schedule_variance_floor_scale},
                        {"variance_ceiling_scale", config.schedule_variance_ceiling_scale}};
    meta["generator_param_counts"] = param_counts(st.gen.parameters());
    meta["discriminator_param_counts"] = param_counts(st.disc.parameters());
    const std::string meta_text = meta.dump();

    std::string out;
    out.append(kCheckpointMagic, 8);
    append_u32(out, kCheckpointVersion);
    append_u64(out, meta_text.size());
    out.append(meta_text);
    for (auto* p : st.gen.parameters()) append_tensor(out, *p);
    for (auto* p : st.disc.parameters()) append_tensor(out, *p);
    for (const auto& m : st.opt_g.first_moments()) append_floats(out, m);
    for (const auto& v : st.opt_g.second_moments()) append_floats(out, v);
    for (const auto& m : st.opt_d.first_moments()) append_floats(out, m);
    for (const auto& v : st.opt_d.second_moments()) append_floats(out, v);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_checkpoint: cannot open " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("save_checkpoint: short write to " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::string* expected_fingerprint,
                                 bool allow_mismatch) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_checkpoint: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(buf, path.string());

    const std::string magic = r.bytes(8);
    if (magic != std::string(kCheckpointMagic, 8)) {
        throw CheckpointCorruptError("checkpoint " + path.string() + ": bad magic, not an ECHODIFF file");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError("checkpoint " + path.string() + ": format version " + std::to_string(version) +
                                     ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    const std::uint64_t meta_len = r.u64();
    if (meta_len > r.remaining()) {
        throw CheckpointCorruptError("checkpoint " + path.string() + ": truncated metadata block");
    }
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(r.bytes(meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointCorruptError("checkpoint " + path.string() + ": unreadable metadata (" + e.what() + ")");
    }

    LoadedCheckpoint out;
    try {
        out.fingerprint = meta.at("config_fingerprint").get<std::string>();
        out.config = RunConfig::parse_text(meta.at("config_text").get<std::string>(), "checkpoint-config");
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointCorruptError("checkpoint " + path.string() + ": incomplete metadata (" + e.what() + ")");
    }
    if (out.config.fingerprint() != out.fingerprint) {
        throw CheckpointCorruptError("checkpoint " + path.string() +
                                     ": stored fingerprint does not match the embedded config");
    }
    if (expected_fingerprint && *expected_fingerprint != out.fingerprint && !allow_mismatch) {
        throw FingerprintMismatchError("checkpoint " + path.string() + ": config fingerprint " + out.fingerprint +
                                       " does not match the session config fingerprint " + *expected_fingerprint);
    }
    out.schedule = out.config.make_noise_schedule();

    out.state = std::make_unique<TrainState>(out.config.train_config());
    auto& st = *out.state;
    st.step_count = meta.value("step_counter", std::int64_t(0));
    st.opt_g.set_step_count(meta.value("opt_g_steps", std::int64_t(0)));
    st.opt_d.set_step_count(meta.value("opt_d_steps", std::int64_t(0)));

    auto check_counts = [&](const char* key, std::vector<Tensor<float>*> params) {
        const auto& counts = meta.at(key);
        if (counts.size() != params.size()) {
            throw CheckpointCorruptError("checkpoint " + path.string() + ": parameter layout mismatch for " + key);
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (counts[i].get<std::int64_t>() != params[i]->numel()) {
                throw CheckpointCorruptError("checkpoint " + path.string() + ": parameter size mismatch for " + key);
            }
        }
    };
    try {
        check_counts("generator_param_counts", st.gen.parameters());
        check_counts("discriminator_param_counts", st.disc.parameters());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointCorruptError("checkpoint " + path.string() + ": incomplete metadata (" + e.what() + ")");
    }

    for (auto* p : st.gen.parameters()) r.floats_into(p->mutable_data());
    for (auto* p : st.disc.parameters()) r.floats_into(p->mutable_data());
    for (auto& m : st.opt_g.first_moments()) r.floats_into(m);
    for (auto& v : st.opt_g.second_moments()) r.floats_into(v);
    for (auto& m : st.opt_d.first_moments()) r.floats_into(m);
    for (auto& v : st.opt_d.second_moments()) r.floats_into(v);
    if (r.remaining() != 0) {
        throw CheckpointCorruptError("checkpoint " + path.string() + ": " + std::to_string(r.remaining()) +
                                     " unexpected trailing bytes");
    }
    return out;
}

}  // namespace echodiff
