#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaptgot/error.hpp"
#include "adaptgot/io.hpp"
#include "adaptgot/moe.hpp"

namespace adaptgot {

/// Every tunable of the pipeline. Defaults are the desk-scale defaults.
struct RunConfig {
    std::uint64_t seed = 42;

    // sampling
    std::size_t k = 5;
    double gamma = 1e-6;
    double bandwidth_km = 0.5;
    std::size_t density_pool_mult = 4;
    bool literal_sign_sampling = false;
    bool materialize_distance = false;
    std::int64_t cooccur_window_secs = -1;  // < 0: whole history

    // representation
    std::size_t d_model = 32;
    std::size_t d_txt = 256;
    std::uint64_t text_salt = 0;
    std::size_t encoder_hidden = 32;
    double s_scale_km = 10.0;

    // attention
    std::size_t heads = 2;
    std::size_t d_k = 16;
    double dropout = 0.1;
    double layernorm_eps = 1e-12;
    bool plain_attention = false;

    // mixture of experts
    std::size_t experts_kept = 2;
    std::string fusion_activation = "sigmoid";
    bool gate_on_zfinal = false;

    // pretraining
    double mask_ratio = 0.2;
    std::size_t decoder_hidden = 64;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 100;
    std::size_t batch_size = 0;  // 0: full graph per step
    std::size_t checkpoint_every = 0;

    // evaluation
    double probe_lambda = 0.5;

    // optional inputs
    std::string lexicon;
    std::string text_embeddings;

    void validate() const {
        const auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
        if (k < 1) fail("k must be >= 1");
        if (!(gamma > 0.0)) fail("gamma must be > 0");
        if (!(bandwidth_km > 0.0)) fail("bandwidth_km must be > 0");
        if (density_pool_mult < 1) fail("density_pool_mult must be >= 1");
        if (heads < 1 || d_k < 1 || heads * d_k != d_model) fail("heads * d_k must equal d_model");
        if (d_txt < 1 || encoder_hidden < 1 || decoder_hidden < 1) fail("dimensions must be >= 1");
        if (!(s_scale_km > 0.0)) fail("s_scale_km must be > 0");
        if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
        if (!(layernorm_eps > 0.0)) fail("layernorm_eps must be > 0");
        if (experts_kept < 1 || experts_kept > 4) fail("experts_kept must be in [1, 4]");
        parse_fusion_activation(fusion_activation);
        if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must be in (0, 1)");
        if (!(lr >= 0.0)) fail("lr must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
        if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
        if (!(probe_lambda >= 0.0 && probe_lambda <= 1.0)) fail("probe_lambda must be in [0, 1]");
    }

    /// Sets one key from its textual value. Unknown keys are rejected.
    void set(const std::string& key, const std::string& value);

    /// `key=value` lines, sorted by key; round-trips through parse_config.
    std::string to_lock_string() const;
};

namespace detail {

struct ConfigField {
    const char* name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
        try {
            std::size_t used = 0;
            out = static_cast<T>(std::stod(v, &used));
            if (used != v.size()) throw std::invalid_argument(v);
        } catch (const std::exception&) {
            throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
        }
    } else {
        const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size())
            throw ValidationError("config: '" + key + "' expects an integer, got '" + v + "'");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("config: '" + key + "' expects true/false, got '" + v + "'");
}

#define ADAPTGOT_NUM_FIELD(field)                                                                              \
    ConfigField {                                                                                              \
        #field, [](RunConfig& c, const std::string& v) { c.field = parse_number<decltype(c.field)>(#field, v); }, \
            [](const RunConfig& c) {                                                                           \
                if constexpr (std::is_floating_point_v<decltype(c.field)>) return io::format_exact(c.field);   \
                else return std::to_string(c.field);                                                           \
            }                                                                                                  \
    }
#define ADAPTGOT_BOOL_FIELD(field)                                                                  \
    ConfigField {                                                                                   \
        #field, [](RunConfig& c, const std::string& v) { c.field = parse_bool(#field, v); },        \
            [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }              \
    }
#define ADAPTGOT_STR_FIELD(field)                                                       \
    ConfigField {                                                                       \
        #field, [](RunConfig& c, const std::string& v) { c.field = v; },                \
            [](const RunConfig& c) { return c.field; }                                  \
    }

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = {
        ADAPTGOT_NUM_FIELD(adam_eps),          ADAPTGOT_NUM_FIELD(bandwidth_km),
        ADAPTGOT_NUM_FIELD(batch_size),        ADAPTGOT_NUM_FIELD(beta1),
        ADAPTGOT_NUM_FIELD(beta2),             ADAPTGOT_NUM_FIELD(checkpoint_every),
        ADAPTGOT_NUM_FIELD(cooccur_window_secs), ADAPTGOT_NUM_FIELD(d_k),
        ADAPTGOT_NUM_FIELD(d_model),           ADAPTGOT_NUM_FIELD(d_txt),
        ADAPTGOT_NUM_FIELD(decoder_hidden),    ADAPTGOT_NUM_FIELD(density_pool_mult),
        ADAPTGOT_NUM_FIELD(dropout),           ADAPTGOT_NUM_FIELD(encoder_hidden),
        ADAPTGOT_NUM_FIELD(epochs),            ADAPTGOT_NUM_FIELD(experts_kept),
        ADAPTGOT_STR_FIELD(fusion_activation), ADAPTGOT_NUM_FIELD(gamma),
        ADAPTGOT_BOOL_FIELD(gate_on_zfinal),   ADAPTGOT_NUM_FIELD(heads),
        ADAPTGOT_NUM_FIELD(k),                 ADAPTGOT_NUM_FIELD(layernorm_eps),
        ADAPTGOT_STR_FIELD(lexicon),           ADAPTGOT_BOOL_FIELD(literal_sign_sampling),
        ADAPTGOT_NUM_FIELD(lr),                ADAPTGOT_NUM_FIELD(mask_ratio),
        ADAPTGOT_BOOL_FIELD(materialize_distance), ADAPTGOT_BOOL_FIELD(plain_attention),
        ADAPTGOT_NUM_FIELD(probe_lambda),      ADAPTGOT_NUM_FIELD(s_scale_km),
        ADAPTGOT_NUM_FIELD(seed),              ADAPTGOT_NUM_FIELD(text_salt),
        ADAPTGOT_STR_FIELD(text_embeddings),
    };
    return fields;
}

#undef ADAPTGOT_NUM_FIELD
#undef ADAPTGOT_BOOL_FIELD
#undef ADAPTGOT_STR_FIELD

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : detail::config_fields())
        if (key == f.name) {
            f.set(*this, value);
            return;
        }
    throw ValidationError("config: unknown key '" + key + "'");
}

inline std::string RunConfig::to_lock_string() const {
    std::string out;
    for (const auto& f : detail::config_fields()) out += std::string(f.name) + "=" + f.get(*this) + "\n";
    return out;
}

/// Applies `key=value` lines (with '#' comments) or a flat JSON object onto `base`.
inline RunConfig parse_config(const std::string& content, RunConfig base = {}) {
    const auto body = detail::trim(content);
    if (!body.empty() && body.front() == '{') {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::parse_error&) {
            throw ValidationError("config: malformed JSON");
        }
        for (const auto& [key, v] : j.items()) {
            if (v.is_string())
                base.set(key, v.get<std::string>());
            else if (v.is_boolean())
                base.set(key, v.get<bool>() ? "true" : "false");
            else if (v.is_number_integer())
                base.set(key, std::to_string(v.get<std::int64_t>()));
            else if (v.is_number())
                base.set(key, io::format_exact(v.get<double>()));
            else
                throw ValidationError("config: unsupported value for '" + key + "'");
        }
    } else {
        std::istringstream in(content);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ValidationError("config line " + std::to_string(n) + ": expected key=value");
            base.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        }
    }
    base.validate();
    return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
    if (!std::filesystem::exists(path)) throw IoError("no such config file: " + path.string());
    return parse_config(io::read_file(path), std::move(base));
}

}  // namespace adaptgot
