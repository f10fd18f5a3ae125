#pragma once

// Geometric transformer encoder: flattened-coordinate embedding per
// nucleotide, pair features from bucketed C4'-C4' distances plus truncated
// relative positions, and pair-biased multi-head self-attention with an
// optional sliding window. Output is one continuous latent per nucleotide.

#include <cmath>
#include <string>
#include <vector>

#include "ribosphere/tensor.hpp"

namespace ribosphere {

struct EncoderConfig {
    int layers = 2;
    int dim = 256; // d
    int heads = 8;
    int pair_dim = 64;
    int window = 8; // 0 = full attention
    int dist_bins = 64;
    double dist_max = 40.0; // Angstrom
    int relpos_clip = 32;
    int mlp_factor = 4;
    int atoms = 11; // A; input width per residue is atoms*3

    int head_dim() const { return dim / heads; }

    void validate() const {
        if (layers < 1) throw TensorError("encoder: layers must be >= 1");
        if (dim < 1 || heads < 1 || dim % heads != 0)
            throw TensorError("encoder: dim must be divisible by heads");
        if (window < 0) throw TensorError("encoder: window must be >= 0 (0 = none)");
        if (dist_bins < 1 || dist_max <= 0.0) throw TensorError("encoder: bad distance binning");
        if (relpos_clip < 0 || pair_dim < 1 || mlp_factor < 1 || atoms < 1)
            throw TensorError("encoder: bad config");
    }
};

// Distance -> uniform bin over [0, dist_max) with overflow clamped into the
// last bin.
inline int distance_bin(double d, int bins, double dist_max) {
    int b = static_cast<int>(std::floor(d / (dist_max / bins)));
    return std::min(std::max(b, 0), bins - 1);
}

// Additive attention mask: 0 inside the window band, -1e30 outside, so the
// post-softmax weight outside the band underflows to exactly 0.
inline TensorPtr window_mask(int L, int window) {
    std::vector<double> m(static_cast<size_t>(L) * L, 0.0);
    if (window > 0)
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
                if (std::abs(i - j) > window) m[static_cast<size_t>(i) * L + j] = -1e30;
    return make_tensor({L, L}, std::move(m));
}

// One pre-LN attention block plus MLP, both residual. Shared by the encoder
// and the flow decoder.
struct AttentionBlock {
    int dim = 0, heads = 0, mlp_factor = 4;
    TensorPtr ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, w_bias;
    TensorPtr ln2_g, ln2_b, w_m1, b_m1, w_m2, b_m2;

    void build(ParamStore& ps, const std::string& prefix, int d, int n_heads, int pair_dim,
               int factor, Rng& rng) {
        dim = d;
        heads = n_heads;
        mlp_factor = factor;
        ln1_g = ps.create(prefix + "ln1.g", {d}, Init::Ones, rng);
        ln1_b = ps.create(prefix + "ln1.b", {d}, Init::Zeros, rng);
        wq = ps.create(prefix + "wq", {d, d}, Init::NormalScaled, rng);
        bq = ps.create(prefix + "bq", {d}, Init::Zeros, rng);
        wk = ps.create(prefix + "wk", {d, d}, Init::NormalScaled, rng);
        bk = ps.create(prefix + "bk", {d}, Init::Zeros, rng);
        wv = ps.create(prefix + "wv", {d, d}, Init::NormalScaled, rng);
        bv = ps.create(prefix + "bv", {d}, Init::Zeros, rng);
        wo = ps.create(prefix + "wo", {d, d}, Init::NormalScaled, rng);
        bo = ps.create(prefix + "bo", {d}, Init::Zeros, rng);
        w_bias = ps.create(prefix + "w_bias", {pair_dim, n_heads}, Init::NormalScaled, rng);
        ln2_g = ps.create(prefix + "ln2.g", {d}, Init::Ones, rng);
        ln2_b = ps.create(prefix + "ln2.b", {d}, Init::Zeros, rng);
        w_m1 = ps.create(prefix + "mlp.w1", {d, d * factor}, Init::NormalScaled, rng);
        b_m1 = ps.create(prefix + "mlp.b1", {d * factor}, Init::Zeros, rng);
        w_m2 = ps.create(prefix + "mlp.w2", {d * factor, d}, Init::NormalScaled, rng);
        b_m2 = ps.create(prefix + "mlp.b2", {d, }, Init::Zeros, rng);
    }

    // h: L x dim, pair: (L*L) x pair_dim, mask: L x L additive (may be null).
    TensorPtr forward(const TensorPtr& h, const TensorPtr& pair, const TensorPtr& mask) const {
        int L = h->shape[0];
        int dk = dim / heads;
        auto x = layernorm(h, ln1_g, ln1_b);
        auto q = linear(x, wq, bq);
        auto k = linear(x, wk, bk);
        auto v = linear(x, wv, bv);
        // pair features projected to one scalar bias per head per (i,j)
        auto bias_all = matmul(pair, w_bias); // (L*L) x heads
        std::vector<TensorPtr> head_outs(heads);
        double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
        for (int hd = 0; hd < heads; ++hd) {
            auto qh = slice_cols(q, hd * dk, dk);
            auto kh = slice_cols(k, hd * dk, dk);
            auto vh = slice_cols(v, hd * dk, dk);
            auto scores = scale(matmul_nt(qh, kh), inv_sqrt_dk);
            auto bias_h = reshape(slice_cols(bias_all, hd, 1), {L, L});
            scores = add(scores, bias_h);
            if (mask) scores = add(scores, mask);
            auto attn = softmax(scores);
            head_outs[hd] = matmul(attn, vh);
        }
        auto attn_out = linear(concat_cols(head_outs), wo, bo);
        auto h1 = add(h, attn_out);
        auto y = layernorm(h1, ln2_g, ln2_b);
        auto m = linear(tanh_op(linear(y, w_m1, b_m1)), w_m2, b_m2);
        return add(h1, m);
    }
};

struct Encoder {
    EncoderConfig cfg;
    TensorPtr w_in1, b_in1, w_in2, b_in2;               // per-nucleotide embed MLP
    TensorPtr dist_table, pos_table;                    // pair embeddings
    TensorPtr ln_pair_g, ln_pair_b, w_p1, b_p1, w_p2, b_p2; // pair MLP
    std::vector<AttentionBlock> blocks;
    TensorPtr ln_out_g, ln_out_b;

    void build(ParamStore& ps, const std::string& prefix, const EncoderConfig& config, Rng& rng) {
        cfg = config;
        cfg.validate();
        int d = cfg.dim, in = cfg.atoms * 3, p = cfg.pair_dim;
        w_in1 = ps.create(prefix + "in.w1", {in, d}, Init::NormalScaled, rng);
        b_in1 = ps.create(prefix + "in.b1", {d}, Init::Zeros, rng);
        w_in2 = ps.create(prefix + "in.w2", {d, d}, Init::NormalScaled, rng);
        b_in2 = ps.create(prefix + "in.b2", {d}, Init::Zeros, rng);
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
    }

    // Pair features from representative-atom coordinates (one Vec3-ish triple
    // per residue, flat length 3L). Rigid-transform invariant by construction.
    TensorPtr pair_features(const std::vector<double>& rep_coords, int L) const {
        std::vector<int> dist_idx(static_cast<size_t>(L) * L);
        std::vector<int> pos_idx(static_cast<size_t>(L) * L);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j) {
                double dx = rep_coords[3 * i] - rep_coords[3 * j];
                double dy = rep_coords[3 * i + 1] - rep_coords[3 * j + 1];
                double dz = rep_coords[3 * i + 2] - rep_coords[3 * j + 2];
                double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                dist_idx[static_cast<size_t>(i) * L + j] =
                    distance_bin(dist, cfg.dist_bins, cfg.dist_max);
                int rp = std::clamp(j - i, -cfg.relpos_clip, cfg.relpos_clip) + cfg.relpos_clip;
                pos_idx[static_cast<size_t>(i) * L + j] = rp;
            }
        auto e = add(gather_rows(dist_table, dist_idx), gather_rows(pos_table, pos_idx));
        auto n = layernorm(e, ln_pair_g, ln_pair_b);
        return linear(tanh_op(linear(n, w_p1, b_p1)), w_p2, b_p2);
    }

    // coords: flat L*atoms*3, already mean-centered with masked slots zeroed.
    TensorPtr embed(const std::vector<double>& coords, int L) const {
        auto x = make_tensor({L, cfg.atoms * 3}, coords);
        return linear(tanh_op(linear(x, w_in1, b_in1)), w_in2, b_in2);
    }

    TensorPtr forward(const std::vector<double>& coords, const std::vector<double>& rep_coords,
                      int L) const {
        if (static_cast<int64_t>(coords.size()) != static_cast<int64_t>(L) * cfg.atoms * 3)
            throw TensorError("encoder: coords size does not match configured atom set");
        auto h = embed(coords, L);
        auto pair = pair_features(rep_coords, L);
        auto mask = cfg.window > 0 && L > 1 ? window_mask(L, cfg.window) : nullptr;
        for (const auto& blk : blocks) h = blk.forward(h, pair, mask);
        return layernorm(h, ln_out_g, ln_out_b);
    }
};

} // namespace ribosphere
