#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kbdm/classifier.hpp"
#include "kbdm/codebook.hpp"
#include "kbdm/diffusion.hpp"
#include "kbdm/dynmask.hpp"
#include "kbdm/synthdata.hpp"

namespace kbdm {

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key " + key + ": expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
    }
    if (pos != v.size())
        throw ConfigError("config key " + key + ": trailing characters in '" + v + "'");
    return d;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long long n = 0;
    try {
        n = std::stoll(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
    }
    if (pos != v.size())
        throw ConfigError("config key " + key + ": trailing characters in '" + v + "'");
    return n;
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
    long long n = parse_int(key, v);
    if (n < 0) throw ConfigError("config key " + key + ": must be nonnegative");
    return static_cast<std::size_t>(n);
}

}  // namespace detail

/// Everything an end-to-end run needs: module defaults plus the adapter
/// ablation switches.
struct ExperimentConfig {
    std::uint64_t seed = 7;
    bool use_kb = true;
    bool use_dm = true;
    bool use_dc = false;
    MaskMode mask_mode = MaskMode::multiplicative;
    Fusion fusion = Fusion::mean;

    CorpusConfig corpus;

    std::size_t patch = 4;
    std::size_t kb_entries = 32;
    std::size_t kb_dim = 16;
    CodebookTrainConfig codebook_train;

    std::size_t classifier_hidden = 128;
    std::size_t text_dim = 32;
    ClassifierTrainConfig classifier_train;

    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::size_t attn_dim = 32;
    std::size_t head_hidden = 64;
    std::size_t gate_hidden = 32;
    std::size_t temb_dim = 32;
    std::size_t pos_dim = 16;
    DiffusionTrainConfig diffusion_train;

    int sample_steps = 50;
    double cfg_scale = 1.0;

    double pck_threshold = 2.0;
    int eval_count = 64;
    std::vector<std::uint64_t> ablation_seeds = {7, 8, 9};

    std::size_t grid_side() const { return kImageSize / patch; }
    std::size_t token_count() const { return grid_side() * grid_side(); }

    DenoiserConfig denoiser_config() const {
        DenoiserConfig d;
        d.latent_dim = patch * patch;
        d.temb_dim = temb_dim;
        d.kb_dim = kb_dim;
        d.attn_dim = attn_dim;
        d.head_hidden = head_hidden;
        d.gate_hidden = gate_hidden;
        d.pos_dim = pos_dim;
        d.grid_h = grid_side();
        d.grid_w = grid_side();
        return d;
    }

    NoiseSchedule schedule() const { return make_schedule(timesteps, beta_start, beta_end); }

    void validate() const {
        if (use_dc && !use_kb)
            throw ConfigError("dc=true requires kb=true (prompt decomposition is a "
                              "knowledge-base query mode)");
        if (patch == 0 || kImageSize % patch != 0)
            throw ConfigError("patch must divide the image size " + std::to_string(kImageSize));
        if (diffusion_train.prompt_dropout < 0.0 || diffusion_train.prompt_dropout > 1.0)
            throw ConfigError("diffusion.prompt_dropout must lie in [0,1]");
        if (sample_steps < 1 || sample_steps > timesteps)
            throw ConfigError("sample.steps must lie in [1, diffusion.timesteps]");
        if (kb_entries < 2) throw ConfigError("kb.entries must be >= 2");
        if (eval_count < 1) throw ConfigError("eval.count must be >= 1");
        if (ablation_seeds.empty()) throw ConfigError("ablation.seeds must not be empty");
        make_schedule(timesteps, beta_start, beta_end);  // range checks
    }
};

inline void set_config_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_int;
    using detail::parse_size;
    if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "kb") c.use_kb = parse_bool(key, value);
    else if (key == "dm") c.use_dm = parse_bool(key, value);
    else if (key == "dc") c.use_dc = parse_bool(key, value);
    else if (key == "mask_mode") c.mask_mode = parse_mask_mode(value);
    else if (key == "fusion") c.fusion = parse_fusion(value);
    else if (key == "corpus.count") c.corpus.count = static_cast<int>(parse_int(key, value));
    else if (key == "corpus.jitter_px") c.corpus.jitter_px = static_cast<int>(parse_int(key, value));
    else if (key == "corpus.archetypes") c.corpus.archetype_names = detail::split_list(value);
    else if (key == "corpus.orientations") c.corpus.orientation_names = detail::split_list(value);
    else if (key == "corpus.scales") {
        c.corpus.scales.clear();
        for (const std::string& s : detail::split_list(value))
            c.corpus.scales.push_back(parse_double(key, s));
    } else if (key == "patch") c.patch = parse_size(key, value);
    else if (key == "kb.entries") c.kb_entries = parse_size(key, value);
    else if (key == "kb.dim") c.kb_dim = parse_size(key, value);
    else if (key == "codebook.epochs") c.codebook_train.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "codebook.lr") c.codebook_train.lr = parse_double(key, value);
    else if (key == "codebook.weight_decay") c.codebook_train.weight_decay = parse_double(key, value);
    else if (key == "codebook.batch") c.codebook_train.batch = static_cast<int>(parse_int(key, value));
    else if (key == "classifier.hidden") c.classifier_hidden = parse_size(key, value);
    else if (key == "classifier.text_dim") c.text_dim = parse_size(key, value);
    else if (key == "classifier.epochs") c.classifier_train.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "classifier.lr") c.classifier_train.lr = parse_double(key, value);
    else if (key == "classifier.weight_decay") c.classifier_train.weight_decay = parse_double(key, value);
    else if (key == "classifier.batch") c.classifier_train.batch = static_cast<int>(parse_int(key, value));
    else if (key == "diffusion.timesteps") c.timesteps = static_cast<int>(parse_int(key, value));
    else if (key == "diffusion.beta_start") c.beta_start = parse_double(key, value);
    else if (key == "diffusion.beta_end") c.beta_end = parse_double(key, value);
    else if (key == "diffusion.epochs") c.diffusion_train.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "diffusion.lr") c.diffusion_train.lr = parse_double(key, value);
    else if (key == "diffusion.batch") c.diffusion_train.batch = static_cast<int>(parse_int(key, value));
    else if (key == "diffusion.prompt_dropout") c.diffusion_train.prompt_dropout = parse_double(key, value);
    else if (key == "diffusion.attn_dim") c.attn_dim = parse_size(key, value);
    else if (key == "diffusion.head_hidden") c.head_hidden = parse_size(key, value);
    else if (key == "diffusion.gate_hidden") c.gate_hidden = parse_size(key, value);
    else if (key == "diffusion.temb_dim") c.temb_dim = parse_size(key, value);
    else if (key == "diffusion.pos_dim") c.pos_dim = parse_size(key, value);
    else if (key == "sample.steps") c.sample_steps = static_cast<int>(parse_int(key, value));
    else if (key == "sample.cfg") c.cfg_scale = parse_double(key, value);
    else if (key == "eval.threshold_px") c.pck_threshold = parse_double(key, value);
    else if (key == "eval.count") c.eval_count = static_cast<int>(parse_int(key, value));
    else if (key == "ablation.seeds") {
        c.ablation_seeds.clear();
        for (const std::string& s : detail::split_list(value))
            c.ablation_seeds.push_back(static_cast<std::uint64_t>(parse_int(key, s)));
    } else {
        throw ConfigError("unknown config key: " + key);
    }
}

// Line-based `key = value` format; `#` starts a comment; unknown keys reject
// the file.
inline void apply_config_text(ExperimentConfig& c, std::istream& is, const std::string& origin) {
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        try {
            set_config_key(c, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config file: " + path);
    ExperimentConfig c;
    apply_config_text(c, is, path);
    return c;
}

}  // namespace kbdm
