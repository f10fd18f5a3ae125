#pragma once

// Conditional flow-matching decoder over atomic coordinates, restricted to
// the zero center-of-mass subspace: vector-field transformer, training loss,
// deterministic Euler sampler, classifier-free guidance, analytic
// vector-field-to-score conversion and an Euler-Maruyama SDE sampler.
//
// Convention (matching the interpolation x_t = t*data + (1-t)*noise): t=0 is
// pure noise, t=1 is data; sampling integrates t from 0 to 1.

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ribosphere/encoder.hpp"
#include "ribosphere/tensor.hpp"

namespace ribosphere {

struct FlowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Sampler configuration
// ---------------------------------------------------------------------------

struct SamplerConfig {
    int steps = 50;           // N
    double guidance = 0.0;    // g
    double eta = 0.0;         // score gradient scaling
    double gamma = 0.0;       // noise intensity; 0 reduces the SDE to the ODE
    std::string noise_schedule = "constant"; // g(t)
    double terminal_deterministic_from = 0.9;

    void validate() const {
        if (steps < 1) throw FlowError("sampler: steps must be >= 1");
        if (gamma < 0.0) throw FlowError("sampler: gamma must be >= 0");
        if (guidance < 0.0) throw FlowError("sampler: guidance must be >= 0");
        if (noise_schedule != "constant" && noise_schedule != "linear")
            throw FlowError("sampler: unknown noise schedule '" + noise_schedule + "'");
    }
};

// Named noise schedule g(t) on [0, 1).
inline double noise_schedule_value(const std::string& name, double t) {
    if (name == "constant") return 1.0;
    if (name == "linear") return 1.0 - t;
    throw FlowError("unknown noise schedule '" + name + "'");
}

// ---------------------------------------------------------------------------
// Zero-CoM helpers on raw coordinate arrays (flat, length n_atoms*3)
// ---------------------------------------------------------------------------

inline void project_zero_com(std::vector<double>& x, const std::vector<uint8_t>& mask) {
    size_t n = mask.size();
    double m[3] = {0, 0, 0};
    int64_t live = 0;
    for (size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        ++live;
        for (int c = 0; c < 3; ++c) m[c] += x[i * 3 + c];
    }
    if (live == 0) throw FlowError("zero-CoM projection: all atoms masked");
    for (double& v : m) v /= static_cast<double>(live);
    for (size_t i = 0; i < n; ++i) {
        if (!mask[i]) {
            for (int c = 0; c < 3; ++c) x[i * 3 + c] = 0.0;
            continue;
        }
        for (int c = 0; c < 3; ++c) x[i * 3 + c] -= m[c];
    }
}

inline std::array<double, 3> center_of_mass(const std::vector<double>& x,
                                            const std::vector<uint8_t>& mask) {
    std::array<double, 3> m{0, 0, 0};
    int64_t live = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        ++live;
        for (int c = 0; c < 3; ++c) m[c] += x[i * 3 + c];
    }
    for (double& v : m) v /= std::max<int64_t>(live, 1);
    return m;
}

// i.i.d. standard normal coordinates with the per-axis mean removed.
inline std::vector<double> sample_noise_zero_com(int L, int A, Rng& rng,
                                                 const std::vector<uint8_t>* mask = nullptr) {
    std::vector<uint8_t> full;
    if (!mask) {
        full.assign(static_cast<size_t>(L) * A, 1);
        mask = &full;
    }
    std::vector<double> x(static_cast<size_t>(L) * A * 3, 0.0);
    for (size_t i = 0; i < mask->size(); ++i) {
        if (!(*mask)[i]) continue;
        for (int c = 0; c < 3; ++c) x[i * 3 + c] = rng.normal();
    }
    project_zero_com(x, *mask);
    return x;
}

// x_t = t*x1 + (1-t)*x0; exact at the endpoints and closed in the zero-CoM
// subspace.
inline std::vector<double> interpolate(const std::vector<double>& x1,
                                       const std::vector<double>& x0, double t) {
    if (x1.size() != x0.size()) throw FlowError("interpolate: shape mismatch");
    std::vector<double> out(x1.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = t * x1[i] + (1.0 - t) * x0[i];
    return out;
}

// CFG: v_cond + g * (v_cond - v_uncond).
inline std::vector<double> cfg_field(const std::vector<double>& v_cond,
                                     const std::vector<double>& v_uncond, double g) {
    if (v_cond.size() != v_uncond.size()) throw FlowError("cfg_field: shape mismatch");
    if (g == 0.0) return v_cond;
    std::vector<double> out(v_cond.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = v_cond[i] + g * (v_cond[i] - v_uncond[i]);
    return out;
}

// Analytic vector-field-to-score conversion s = (t*v - x_t) / (1 - t).
// Valid strictly before the terminal time; callers switch to deterministic
// dynamics near t = 1.
inline std::vector<double> vf_to_score(const std::vector<double>& v, const std::vector<double>& x,
                                       double t) {
    if (v.size() != x.size()) throw FlowError("vf_to_score: shape mismatch");
    if (!(t < 1.0 - 1e-9))
        throw FlowError("vf_to_score: t >= 1 is the terminal regime; conversion undefined");
    double inv = 1.0 / (1.0 - t);
    std::vector<double> s(v.size());
    for (size_t i = 0; i < s.size(); ++i) s[i] = (t * v[i] - x[i]) * inv;
    return s;
}

// ---------------------------------------------------------------------------
// Samplers, generic over the field so analytic test harnesses can drive them
// ---------------------------------------------------------------------------

// field(x, t) -> drift vector of the same shape.
using FieldFn = std::function<std::vector<double>(const std::vector<double>&, double)>;

namespace detail_flow {
inline void check_com(const std::vector<double>& x, const std::vector<uint8_t>& mask) {
    auto com = center_of_mass(x, mask);
    for (double c : com)
        if (std::fabs(c) > 1e-6) throw FlowError("zero-CoM invariant violated during sampling");
}
} // namespace detail_flow

// N uniform Euler steps from x0 at t=0 to t=1, re-projecting onto the
// zero-CoM subspace after every update.
inline std::vector<double> euler_sample(const FieldFn& field, std::vector<double> x,
                                        const std::vector<uint8_t>& mask, int steps) {
    if (steps < 1) throw FlowError("euler_sample: steps must be >= 1");
    double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        double t = static_cast<double>(k) / steps;
        auto v = field(x, t);
        for (size_t i = 0; i < x.size(); ++i) x[i] += v[i] * dt;
        project_zero_com(x, mask);
        detail_flow::check_com(x, mask);
    }
    return x;
}

// score(x, t, v) -> score vector; when absent, sde_sample derives the score
// from the field via the analytic conversion.
using ScoreFn =
    std::function<std::vector<double>(const std::vector<double>&, double, const std::vector<double>&)>;

// Euler-Maruyama discretization of
//   dx = v dt + g(t) * eta * s dt + sqrt(2 g(t) gamma) dW,
// with Brownian increments sampled zero-CoM. From
// `terminal_deterministic_from` onward the score and noise terms are forced
// off and the dynamics are the plain guided ODE; with eta = gamma = 0 the
// trajectory is bitwise identical to euler_sample.
inline std::vector<double> sde_sample(const FieldFn& field, std::vector<double> x,
                                      const std::vector<uint8_t>& mask, const SamplerConfig& cfg,
                                      Rng& rng, const ScoreFn& score = nullptr) {
    cfg.validate();
    double dt = 1.0 / cfg.steps;
    for (int k = 0; k < cfg.steps; ++k) {
        double t = static_cast<double>(k) / cfg.steps;
        bool terminal = t >= cfg.terminal_deterministic_from;
        auto v = field(x, t);
        if (!terminal && cfg.eta != 0.0) {
            double gt = noise_schedule_value(cfg.noise_schedule, t);
            auto s = score ? score(x, t, v) : vf_to_score(v, x, t);
            for (size_t i = 0; i < x.size(); ++i) x[i] += (v[i] + gt * cfg.eta * s[i]) * dt;
        } else {
            for (size_t i = 0; i < x.size(); ++i) x[i] += v[i] * dt;
        }
        if (!terminal && cfg.gamma != 0.0) {
            double gt = noise_schedule_value(cfg.noise_schedule, t);
            double amp = std::sqrt(2.0 * gt * cfg.gamma * dt);
            for (size_t i = 0; i < mask.size(); ++i) {
                if (!mask[i]) continue;
                for (int c = 0; c < 3; ++c) x[i * 3 + c] += amp * rng.normal();
            }
        }
        project_zero_com(x, mask);
        detail_flow::check_com(x, mask);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Vector field network: conditional transformer over residues
// ---------------------------------------------------------------------------

struct VectorFieldConfig {
    int layers = 8;
    int dim = 512;
    int heads = 8;
    int pair_dim = 64;
    int dist_bins = 64;
    double dist_max = 8.0; // normalized coordinate units, not Angstrom
    int relpos_clip = 32;
    int mlp_factor = 4;
    int window = 0; // full attention by default
    int atoms = 11;
    int cond_dim = 5;     // FSQ latent dimension m
    int time_freqs = 128; // sinusoidal frequencies (sin+cos pairs)

    void validate() const {
        if (layers < 1 || dim < 1 || heads < 1 || dim % heads != 0)
            throw TensorError("vector field net: bad layers/dim/heads");
        if (time_freqs < 1 || cond_dim < 1 || atoms < 1)
            throw TensorError("vector field net: bad config");
    }
};

// Sinusoidal embedding of scalar time: [sin(w_k t), cos(w_k t)] for
// geometrically spaced frequencies w_k in [1, 1e4].
inline std::vector<double> time_embedding(double t, int freqs) {
    std::vector<double> e(static_cast<size_t>(freqs) * 2);
    for (int k = 0; k < freqs; ++k) {
        double w = std::pow(10000.0, static_cast<double>(k) / std::max(freqs - 1, 1));
        e[2 * k] = std::sin(w * t);
        e[2 * k + 1] = std::cos(w * t);
    }
    return e;
}

struct VectorFieldNet {
    VectorFieldConfig cfg;
    TensorPtr w_in, b_in;           // atoms*3 -> dim
    TensorPtr w_time, b_time;       // 2*time_freqs -> dim
    TensorPtr w_cond, b_cond;       // cond_dim -> dim
    TensorPtr null_cond;            // learned null conditioning embedding (dim)
    TensorPtr dist_table, pos_table;
    TensorPtr ln_pair_g, ln_pair_b, w_p1, b_p1, w_p2, b_p2;
    std::vector<AttentionBlock> blocks;
    TensorPtr ln_out_g, ln_out_b;
    TensorPtr w_out, b_out; // dim -> atoms*3, zero-initialized

    void build(ParamStore& ps, const std::string& prefix, const VectorFieldConfig& config,
               Rng& rng) {
        cfg = config;
        cfg.validate();
        int d = cfg.dim, p = cfg.pair_dim;
        w_in = ps.create(prefix + "in.w", {cfg.atoms * 3, d}, Init::NormalScaled, rng);
        b_in = ps.create(prefix + "in.b", {d}, Init::Zeros, rng);
        w_time = ps.create(prefix + "time.w", {cfg.time_freqs * 2, d}, Init::NormalScaled, rng);
        b_time = ps.create(prefix + "time.b", {d}, Init::Zeros, rng);
        w_cond = ps.create(prefix + "cond.w", {cfg.cond_dim, d}, Init::NormalScaled, rng);
        b_cond = ps.create(prefix + "cond.b", {d}, Init::Zeros, rng);
        null_cond = ps.create(prefix + "cond.null", {d}, Init::Normal, rng, 0.3);
        dist_table = ps.create(prefix + "pair.dist", {cfg.dist_bins, p}, Init::Normal, rng, 0.3);
        pos_table =
            ps.create(prefix + "pair.pos", {2 * cfg.relpos_clip + 1, p}, Init::Normal, rng, 0.3);
        ln_pair_g = ps.create(prefix + "pair.ln.g", {p}, Init::Ones, rng);
        ln_pair_b = ps.create(prefix + "pair.ln.b", {p}, Init::Zeros, rng);
        w_p1 = ps.create(prefix + "pair.w1", {p, p}, Init::NormalScaled, rng);
        b_p1 = ps.create(prefix + "pair.b1", {p}, Init::Zeros, rng);
        w_p2 = ps.create(prefix + "pair.w2", {p, p}, Init::NormalScaled, rng);
        b_p2 = ps.create(prefix + "pair.b2", {p}, Init::Zeros, rng);
        blocks.resize(cfg.layers);
        for (int l = 0; l < cfg.layers; ++l)
            blocks[l].build(ps, prefix + "layer" + std::to_string(l) + ".", d, cfg.heads, p,
                            cfg.mlp_factor, rng);
        ln_out_g = ps.create(prefix + "out.ln.g", {d}, Init::Ones, rng);
        ln_out_b = ps.create(prefix + "out.ln.b", {d}, Init::Zeros, rng);
        // Zero-initialized head: the initial field is identically zero, so
        // the initial flow loss equals E||x1 - x0||^2.
        w_out = ps.create(prefix + "out.w", {d, cfg.atoms * 3}, Init::Zeros, rng);
        b_out = ps.create(prefix + "out.b", {cfg.atoms * 3}, Init::Zeros, rng);
    }

    // Pair features from current noisy C4'-representative coordinates.
    TensorPtr pair_features(const std::vector<double>& x_t, int L, int rep_atom) const {
        int A = cfg.atoms;
        std::vector<int> dist_idx(static_cast<size_t>(L) * L);
        std::vector<int> pos_idx(static_cast<size_t>(L) * L);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j) {
                const double* pi = x_t.data() + (static_cast<size_t>(i) * A + rep_atom) * 3;
                const double* pj = x_t.data() + (static_cast<size_t>(j) * A + rep_atom) * 3;
                double dx = pi[0] - pj[0], dy = pi[1] - pj[1], dz = pi[2] - pj[2];
                double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                dist_idx[static_cast<size_t>(i) * L + j] =
                    distance_bin(dist, cfg.dist_bins, cfg.dist_max);
                pos_idx[static_cast<size_t>(i) * L + j] =
                    std::clamp(j - i, -cfg.relpos_clip, cfg.relpos_clip) + cfg.relpos_clip;
            }
        auto e = add(gather_rows(dist_table, dist_idx), gather_rows(pos_table, pos_idx));
        auto n = layernorm(e, ln_pair_g, ln_pair_b);
        return linear(tanh_op(linear(n, w_p1, b_p1)), w_p2, b_p2);
    }

    // cond: L x cond_dim quantized latents, or nullptr for null conditioning.
    // Returns the predicted field, re-projected onto the zero-CoM subspace.
    TensorPtr forward(const std::vector<double>& x_t, double t, const TensorPtr& cond,
                      const std::vector<uint8_t>& atom_mask, int L, int rep_atom) const {
        int A = cfg.atoms;
        if (static_cast<int64_t>(x_t.size()) != static_cast<int64_t>(L) * A * 3)
            throw TensorError("vector field net: x_t size mismatch");
        auto x = make_tensor({L, A * 3}, x_t);
        auto h = linear(x, w_in, b_in);

        auto temb = make_tensor({1, cfg.time_freqs * 2}, time_embedding(t, cfg.time_freqs));
        auto tvec = reshape(linear(temb, w_time, b_time), {cfg.dim});
        h = add_rowvec(h, tvec);

        TensorPtr cemb;
        if (cond) {
            cemb = linear(cond, w_cond, b_cond); // L x dim
            h = add(h, cemb);
        } else {
            h = add_rowvec(h, null_cond);
        }

        auto pair = pair_features(x_t, L, rep_atom);
        auto mask = cfg.window > 0 && L > 1 ? window_mask(L, cfg.window) : nullptr;
        for (const auto& blk : blocks) h = blk.forward(h, pair, mask);
        auto out = linear(layernorm(h, ln_out_g, ln_out_b), w_out, b_out); // L x A*3
        return com_project(out, atom_mask);
    }
};

// ---------------------------------------------------------------------------
// Flow-matching loss
// ---------------------------------------------------------------------------

struct FlowBatchItem {
    std::vector<double> x1;        // normalized, centered data coords (L*A*3)
    TensorPtr cond;                // L x cond_dim quantized latents
    std::vector<uint8_t> atom_mask; // L*A
    int L = 0;
    int rep_atom = 0;
};

// Predicted-field provider: x_t, t, conditioned? -> L x (A*3) tensor. The
// indirection lets tests drive the loss with analytic fields.
using NetFn = std::function<TensorPtr(const std::vector<double>&, double, bool)>;

// || v(x_t, t, c) - (x1 - x0) ||^2 averaged over unmasked atom coordinates,
// at an explicit (t, x0, conditioning) draw.
inline TensorPtr flow_loss_at(const NetFn& net_fn, const FlowBatchItem& item, double t,
                              const std::vector<double>& x0, bool drop_cond) {
    if (item.L < 1) throw FlowError("flow_loss: empty item");
    if (x0.size() != item.x1.size()) throw FlowError("flow_loss: x0/x1 shape mismatch");
    auto x_t = interpolate(item.x1, x0, t);
    auto v = net_fn(x_t, t, !drop_cond);

    std::vector<double> target(item.x1.size());
    for (size_t i = 0; i < target.size(); ++i) target[i] = item.x1[i] - x0[i];
    auto tgt = make_tensor(v->shape, std::move(target));

    std::vector<double> mask_d(item.x1.size(), 0.0);
    int64_t live = 0;
    for (size_t i = 0; i < item.atom_mask.size(); ++i)
        if (item.atom_mask[i]) {
            ++live;
            for (int c = 0; c < 3; ++c) mask_d[i * 3 + c] = 1.0;
        }
    if (live == 0) throw FlowError("flow_loss: all atoms masked");
    auto m = make_tensor(v->shape, std::move(mask_d));

    auto diff = mul(sub(v, tgt), m);
    return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(live * 3));
}

// Training form: t ~ U[0,1), x0 zero-CoM noise, conditioning replaced by the
// learned null embedding for the whole structure with prob cond_drop_prob.
inline TensorPtr flow_loss(const VectorFieldNet& net, const FlowBatchItem& item,
                           double cond_drop_prob, Rng& rng) {
    double t = rng.uniform();
    auto x0 = sample_noise_zero_com(item.L, net.cfg.atoms, rng, &item.atom_mask);
    bool drop = rng.uniform() < cond_drop_prob;
    auto net_fn = [&](const std::vector<double>& x_t, double tt, bool conditioned) {
        return net.forward(x_t, tt, conditioned ? item.cond : nullptr, item.atom_mask, item.L,
                           item.rep_atom);
    };
    return flow_loss_at(net_fn, item, t, x0, drop);
}

} // namespace ribosphere
