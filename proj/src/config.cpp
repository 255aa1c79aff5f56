// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "echodiff/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "echodiff/errors.hpp"
#include "echodiff/rng.hpp"

namespace echodiff {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

long long parse_int(const std::string& v, const std::string& where) {
    std::size_t pos = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected an integer, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError(where + ": expected an integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& v, const std::string& where) {
    std::size_t pos = 0;
    double out = 0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected a number, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError(where + ": expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(where + ": expected true or false, got '" + v + "'");
}

struct KeyEntry {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, KeyEntry>& key_table() {
    static const std::map<std::string, KeyEntry> table = {
        {"seed",
         {[](RunConfig& c, const std::string& v, const std::string& w) {
              c.seed = static_cast<std::uint64_t>(parse_int(v, w));
          },
          [](const RunConfig& c) { return std::to_string(c.seed); }}},
        {"image.side",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.image_side = (int)parse_int(v, w); },
          [](const RunConfig& c) { return std::to_string(c.image_side); }}},
        {"schedule.total_steps",
         {[](RunConfig& c, const std::string& v, const std::string& w) {
              c.schedule_total_steps = (int)parse_int(v, w);
          },
          [](const RunConfig& c) { return std::to_string(c.schedule_total_steps); }}},
        {"schedule.span",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.schedule_span = (int)parse_int(v, w); },
          [](const RunConfig& c) { return std::to_string(c.schedule_span); }}},
        {"schedule.beta_min",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.schedule_beta_min = parse_double(v, w); },
          [](const RunConfig& c) { return fmt_double(c.schedule_beta_min); }}},
        {"schedule.beta_max",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.schedule_beta_max = parse_double(v, w); },
          [](const RunConfig& c) { return fmt_double(c.schedule_beta_max); }}},
        {"schedule.variance_floor_scale",
         {[](RunConfig& c, const std::string& v, const std::string& w) {
              c.schedule_variance_floor_scale = parse_double(v, w);
          },
          [](const RunConfig& c) { return fmt_double(c.schedule_variance_floor_scale); }}},
        {"schedule.variance_ceiling_scale",
         {[](RunConfig& c, const std::string& v, const std::string& w) {
              c.schedule_variance_ceiling_scale = parse_double(v, w);
          },
          [](const RunConfig& c) { return fmt_double(c.schedule_variance_ceiling_scale); }}},
        {"model.z_dim",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.model_z_dim = (int)parse_int(v, w); },
          [](const RunConfig& c) { return std::to_string(c.model_z_dim); }}},
        {"model.onehot_mask",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.model_onehot_mask = parse_bool(v, w); },
          [](const RunConfig& c) { return c.model_onehot_mask ? "true" : "false"; }}},
        {"train.epochs",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.train_epochs = (int)parse_int(v, w); },
          [](const RunConfig& c) { return std::to_string(c.train_epochs); }}},
        {"train.batch_size",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.train_batch_size = (int)parse_int(v, w); },
          [](const RunConfig& c) { return std::to_string(c.train_batch_size); }}},
        {"train.lr_g",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.train_lr_g = parse_double(v, w); },
          [](const RunConfig& c) { return fmt_double(c.train_lr_g); }}},
        {"train.lr_d",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.train_lr_d = parse_double(v, w); },
          [](const RunConfig& c) { return fmt_double(c.train_lr_d); }}},
        {"train.adam_beta1",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.train_adam_beta1 = parse_double(v, w); },
          [](const RunConfig& c) { return fmt_double(c.train_adam_beta1); }}},
        {"train.adam_beta2",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.train_adam_beta2 = parse_double(v, w); },
          [](const RunConfig& c) { return fmt_double(c.train_adam_beta2); }}},
        {"train.lambda_rec",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.train_lambda_rec = parse_double(v, w); },
          [](const RunConfig& c) { return fmt_double(c.train_lambda_rec); }}},
        {"train.val_fraction",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.train_val_fraction = parse_double(v, w); },
          [](const RunConfig& c) { return fmt_double(c.train_val_fraction); }}},
        {"train.adv_loss",
         {[](RunConfig& c, const std::string& v, const std::string& w) {
              if (v != "least_squares" && v != "logistic") {
                  throw ConfigError(w + ": train.adv_loss must be least_squares or logistic, got '" + v + "'");
              }
              c.train_adv_loss = v;
          },
          [](const RunConfig& c) { return c.train_adv_loss; }}},
        {"metrics.max_value",
         {[](RunConfig& c, const std::string& v, const std::string& w) { c.metrics_max_value = parse_double(v, w); },
          [](const RunConfig& c) { return fmt_double(c.metrics_max_value); }}},
    };
    return table;
}

void apply_assignment(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
    const auto& table = key_table();
    const auto it = table.find(key);
    if (it == table.end()) {
        throw ConfigError(where + ": unknown key '" + key + "'");
    }
    it->second.set(cfg, value, where);
}

}  // namespace

RunConfig RunConfig::parse_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
        }
        apply_assignment(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::parse_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_text(buf.str(), path.filename().string());
}

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--set: expected key=value, got '" + assignment + "'");
    }
    apply_assignment(*this, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), "--set " + assignment);
    validate();
}

void RunConfig::validate() const {
    if (image_side < 16) throw ConfigError("config: image.side must be >= 16");
    if (image_side % 8 != 0) throw ConfigError("config: image.side must be a multiple of 8");
    if (model_z_dim < 1) throw ConfigError("config: model.z_dim must be >= 1");
    if (schedule_total_steps < 1 || schedule_span < 1 || schedule_total_steps % schedule_span != 0) {
        throw ConfigError("config: schedule.span must divide schedule.total_steps");
    }
    if (!(schedule_beta_min > 0.0 && schedule_beta_min <= schedule_beta_max && schedule_beta_max < 1.0)) {
        throw ConfigError("config: need 0 < schedule.beta_min <= schedule.beta_max < 1");
    }
    if (!(schedule_variance_floor_scale > 0.0 &&
          schedule_variance_floor_scale <= schedule_variance_ceiling_scale)) {
        throw ConfigError("config: need 0 < schedule.variance_floor_scale <= schedule.variance_ceiling_scale");
    }
    if (!(train_val_fraction > 0.0 && train_val_fraction < 1.0)) {
        throw ConfigError("config: train.val_fraction must be in (0,1)");
    }
    if (train_epochs < 0 || train_batch_size < 1) {
        throw ConfigError("config: train.epochs must be >= 0 and train.batch_size >= 1");
    }
    if (!(metrics_max_value > 0.0)) throw ConfigError("config: metrics.max_value must be positive");
}

std::string RunConfig::canonical_text() const {
    std::ostringstream os;
    for (const auto& [key, entry] : key_table()) {
        os << key << " = " << entry.get(*this) << "\n";
    }
    return os.str();
}

std::string RunConfig::fingerprint() const {
    const std::uint64_t h = fnv1a(canonical_text());
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

NoiseSchedule RunConfig::make_noise_schedule() const {
    return make_schedule(schedule_total_steps, schedule_span, schedule_beta_min, schedule_beta_max,
                         schedule_variance_floor_scale, schedule_variance_ceiling_scale);
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.side = image_side;
    m.z_dim = model_z_dim;
    m.total_steps = schedule_total_steps;
    m.onehot_mask = model_onehot_mask;
    m.seed = seed;
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.epochs = train_epochs;
    t.batch_size = train_batch_size;
    t.lr_g = train_lr_g;
    t.lr_d = train_lr_d;
    t.adam_beta1 = train_adam_beta1;
    t.adam_beta2 = train_adam_beta2;
    t.lambda_rec = train_lambda_rec;
    t.val_fraction = train_val_fraction;
    t.seed = seed;
    t.side = image_side;
    t.z_dim = model_z_dim;
    t.onehot_mask = model_onehot_mask;
    t.logistic_adv_loss = train_adv_loss == "logistic";
    t.total_steps = schedule_total_steps;
    t.span = schedule_span;
    t.beta_min = schedule_beta_min;
    t.beta_max = schedule_beta_max;
    t.variance_floor_scale = schedule_variance_floor_scale;
    t.variance_ceiling_scale = schedule_variance_ceiling_scale;
    return t;
}

}  // namespace echodiff
