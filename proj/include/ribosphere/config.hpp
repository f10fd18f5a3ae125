#pragma once

// Run configuration: a flat key=value text file ('#' comments) mirroring the
// published training configuration, plus data paths, seeding and sampler
// settings. CLI flags override file values; the canonical serialization is
// hashed into every run manifest.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ribosphere/encoder.hpp"
#include "ribosphere/flow.hpp"
#include "ribosphere/fsq.hpp"
#include "ribosphere/invfold.hpp"
#include "ribosphere/structure.hpp"

namespace ribosphere {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // model
    std::string atoms = "A11";
    int enc_layers = 2;
    int enc_dim = 256;
    int dec_layers = 8;
    int dec_dim = 512;
    int heads = 8;
    int pair_dim = 64;
    int window = 8; // encoder sliding window; 0 = none
    int dist_bins = 64;
    double dist_max = 40.0;
    int relpos_clip = 32;
    int mlp_factor = 4;
    std::string fsq_levels = "7,5,5,5,5";
    double dec_dist_max = 8.0; // decoder pair bins live in normalized units
    int time_freqs = 128;

    // training
    double lr = 3e-4;
    int steps = 2000;
    int accum = 8;
    double weight_decay = 0.0;
    double cond_drop = 0.1;
    bool augment_rotations = true;
    int log_every = 10;
    int ckpt_every = 500;
    double split_train = 0.9, split_val = 0.05, split_test = 0.05;

    // sampler
    int sample_steps = 50;
    double guidance = 0.0;
    double eta = 0.0;
    double gamma = 0.0;
    std::string noise_schedule = "constant";
    double terminal_det_from = 0.9;

    // inverse folding
    int inv_ds = 128;
    int inv_blocks = 3;
    int inv_heads = 4;
    int inv_prior_dim = 4;
    int inv_relpos_clip = 16;
    int inv_rel_dim = 16;
    double inv_lr = 1e-3;
    int inv_steps = 2000;
    double label_smoothing = 0.1;
    int sweep_samples = 16;
    std::string sweep_temperatures = "0.1,0.3,0.5,0.7,1.0";

    // run
    uint64_t seed = 1;
    int threads = 1;

    AtomSetTag atom_set() const { return atom_set_from_name(atoms); }

    FsqConfig fsq() const { return FsqConfig::from_string(fsq_levels); }

    EncoderConfig encoder() const {
        EncoderConfig e;
        e.layers = enc_layers;
        e.dim = enc_dim;
        e.heads = heads;
        e.pair_dim = pair_dim;
        e.window = window;
        e.dist_bins = dist_bins;
        e.dist_max = dist_max;
        e.relpos_clip = relpos_clip;
        e.mlp_factor = mlp_factor;
        e.atoms = atom_set_size(atom_set());
        return e;
    }

    VectorFieldConfig decoder() const {
        VectorFieldConfig d;
        d.layers = dec_layers;
        d.dim = dec_dim;
        d.heads = heads;
        d.pair_dim = pair_dim;
        d.dist_bins = dist_bins;
        d.dist_max = dec_dist_max;
        d.relpos_clip = relpos_clip;
        d.mlp_factor = mlp_factor;
        d.window = 0;
        d.atoms = atom_set_size(atom_set());
        d.cond_dim = fsq().dim();
        d.time_freqs = time_freqs;
        return d;
    }

    SamplerConfig sampler() const {
        SamplerConfig s;
        s.steps = sample_steps;
        s.guidance = guidance;
        s.eta = eta;
        s.gamma = gamma;
        s.noise_schedule = noise_schedule;
        s.terminal_deterministic_from = terminal_det_from;
        return s;
    }

    InvFoldConfig invfold() const {
        InvFoldConfig c;
        c.d_s = inv_ds;
        c.blocks = inv_blocks;
        c.heads = inv_heads;
        c.cond_dim = fsq().dim();
        c.prior_dim = inv_prior_dim;
        c.relpos_clip = inv_relpos_clip;
        c.rel_dim = inv_rel_dim;
        return c;
    }

    std::vector<double> temperatures() const {
        std::vector<double> out;
        std::istringstream is(sweep_temperatures);
        std::string tok;
        while (std::getline(is, tok, ','))
            if (!tok.empty()) out.push_back(std::stod(tok));
        return out;
    }

    // Validates every nested config so bad values fail before any run starts.
    void validate() const {
        encoder().validate();
        decoder().validate();
        fsq().validate();
        sampler().validate();
        invfold().validate();
        if (lr <= 0.0 || inv_lr <= 0.0) throw ConfigError("config: learning rate must be > 0");
        if (steps < 1 || accum < 1) throw ConfigError("config: steps and accum must be >= 1");
        if (cond_drop < 0.0 || cond_drop > 1.0)
            throw ConfigError("config: cond_drop must be in [0,1]");
        if (std::fabs(split_train + split_val + split_test - 1.0) > 1e-9)
            throw ConfigError("config: split fractions must sum to 1");
        if (threads < 1) throw ConfigError("config: threads must be >= 1");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw ConfigError("config: label_smoothing must be in [0,1)");
        if (temperatures().empty()) throw ConfigError("config: empty temperature list");
    }

    std::string serialize() const;
    static RunConfig from_kv(const std::map<std::string, std::string>& kv);
};

namespace detail_config {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
    std::istringstream is(v);
    T out;
    if (!(is >> out)) throw ConfigError("config: bad value for " + key + ": '" + v + "'");
    return out;
}

} // namespace detail_config

inline std::string RunConfig::serialize() const {
    std::ostringstream os;
    os << "atoms = " << atoms << "\n";
    os << "enc_layers = " << enc_layers << "\n";
    os << "enc_dim = " << enc_dim << "\n";
    os << "dec_layers = " << dec_layers << "\n";
    os << "dec_dim = " << dec_dim << "\n";
    os << "heads = " << heads << "\n";
    os << "pair_dim = " << pair_dim << "\n";
    os << "window = " << window << "\n";
    os << "dist_bins = " << dist_bins << "\n";
    os << "dist_max = " << dist_max << "\n";
    os << "relpos_clip = " << relpos_clip << "\n";
    os << "mlp_factor = " << mlp_factor << "\n";
    os << "fsq_levels = " << fsq_levels << "\n";
    os << "dec_dist_max = " << dec_dist_max << "\n";
    os << "time_freqs = " << time_freqs << "\n";
    os << "lr = " << lr << "\n";
    os << "steps = " << steps << "\n";
    os << "accum = " << accum << "\n";
    os << "weight_decay = " << weight_decay << "\n";
    os << "cond_drop = " << cond_drop << "\n";
    os << "augment_rotations = " << (augment_rotations ? "true" : "false") << "\n";
    os << "log_every = " << log_every << "\n";
    os << "ckpt_every = " << ckpt_every << "\n";
    os << "split_train = " << split_train << "\n";
    os << "split_val = " << split_val << "\n";
    os << "split_test = " << split_test << "\n";
    os << "sample_steps = " << sample_steps << "\n";
    os << "guidance = " << guidance << "\n";
    os << "eta = " << eta << "\n";
    os << "gamma = " << gamma << "\n";
    os << "noise_schedule = " << noise_schedule << "\n";
    os << "terminal_det_from = " << terminal_det_from << "\n";
    os << "inv_ds = " << inv_ds << "\n";
    os << "inv_blocks = " << inv_blocks << "\n";
    os << "inv_heads = " << inv_heads << "\n";
    os << "inv_prior_dim = " << inv_prior_dim << "\n";
    os << "inv_relpos_clip = " << inv_relpos_clip << "\n";
    os << "inv_rel_dim = " << inv_rel_dim << "\n";
    os << "inv_lr = " << inv_lr << "\n";
    os << "inv_steps = " << inv_steps << "\n";
    os << "label_smoothing = " << label_smoothing << "\n";
    os << "sweep_samples = " << sweep_samples << "\n";
    os << "sweep_temperatures = " << sweep_temperatures << "\n";
    os << "seed = " << seed << "\n";
    os << "threads = " << threads << "\n";
    return os.str();
}

inline RunConfig RunConfig::from_kv(const std::map<std::string, std::string>& kv) {
    using namespace detail_config;
    RunConfig c;
    for (const auto& [key, v] : kv) {
        if (key == "atoms") c.atoms = v;
        else if (key == "enc_layers") c.enc_layers = parse_num<int>(v, key);
        else if (key == "enc_dim") c.enc_dim = parse_num<int>(v, key);
        else if (key == "dec_layers") c.dec_layers = parse_num<int>(v, key);
        else if (key == "dec_dim") c.dec_dim = parse_num<int>(v, key);
        else if (key == "heads") c.heads = parse_num<int>(v, key);
        else if (key == "pair_dim") c.pair_dim = parse_num<int>(v, key);
        else if (key == "window") c.window = parse_num<int>(v, key);
        else if (key == "dist_bins") c.dist_bins = parse_num<int>(v, key);
        else if (key == "dist_max") c.dist_max = parse_num<double>(v, key);
        else if (key == "relpos_clip") c.relpos_clip = parse_num<int>(v, key);
        else if (key == "mlp_factor") c.mlp_factor = parse_num<int>(v, key);
        else if (key == "fsq_levels") c.fsq_levels = v;
        else if (key == "dec_dist_max") c.dec_dist_max = parse_num<double>(v, key);
        else if (key == "time_freqs") c.time_freqs = parse_num<int>(v, key);
        else if (key == "lr") c.lr = parse_num<double>(v, key);
        else if (key == "steps") c.steps = parse_num<int>(v, key);
        else if (key == "accum") c.accum = parse_num<int>(v, key);
        else if (key == "weight_decay") c.weight_decay = parse_num<double>(v, key);
        else if (key == "cond_drop") c.cond_drop = parse_num<double>(v, key);
        else if (key == "augment_rotations") c.augment_rotations = parse_bool(v, key);
        else if (key == "log_every") c.log_every = parse_num<int>(v, key);
        else if (key == "ckpt_every") c.ckpt_every = parse_num<int>(v, key);
        else if (key == "split_train") c.split_train = parse_num<double>(v, key);
        else if (key == "split_val") c.split_val = parse_num<double>(v, key);
        else if (key == "split_test") c.split_test = parse_num<double>(v, key);
        else if (key == "sample_steps") c.sample_steps = parse_num<int>(v, key);
        else if (key == "guidance") c.guidance = parse_num<double>(v, key);
        else if (key == "eta") c.eta = parse_num<double>(v, key);
        else if (key == "gamma") c.gamma = parse_num<double>(v, key);
        else if (key == "noise_schedule") c.noise_schedule = v;
        else if (key == "terminal_det_from") c.terminal_det_from = parse_num<double>(v, key);
        else if (key == "inv_ds") c.inv_ds = parse_num<int>(v, key);
        else if (key == "inv_blocks") c.inv_blocks = parse_num<int>(v, key);
        else if (key == "inv_heads") c.inv_heads = parse_num<int>(v, key);
        else if (key == "inv_prior_dim") c.inv_prior_dim = parse_num<int>(v, key);
        else if (key == "inv_relpos_clip") c.inv_relpos_clip = parse_num<int>(v, key);
        else if (key == "inv_rel_dim") c.inv_rel_dim = parse_num<int>(v, key);
        else if (key == "inv_lr") c.inv_lr = parse_num<double>(v, key);
        else if (key == "inv_steps") c.inv_steps = parse_num<int>(v, key);
        else if (key == "label_smoothing") c.label_smoothing = parse_num<double>(v, key);
        else if (key == "sweep_samples") c.sweep_samples = parse_num<int>(v, key);
        else if (key == "sweep_temperatures") c.sweep_temperatures = v;
        else if (key == "seed") c.seed = parse_num<uint64_t>(v, key);
        else if (key == "threads") c.threads = parse_num<int>(v, key);
        else throw ConfigError("config: unknown key '" + key + "'");
    }
    return c;
}

inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw ConfigError("config: malformed line " + std::to_string(line_no));
            continue;
        }
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            size_t e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return RunConfig::from_kv(parse_kv_text(ss.str()));
}

inline uint64_t fnv1a64_str(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace ribosphere
