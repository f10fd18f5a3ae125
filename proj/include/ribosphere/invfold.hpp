#pragma once

// Structure-conditioned sequence design: local backbone frames, the dual-path
// scalar/vector geometry adapter, a causal decoder over scalar features with
// vector-channel exchange, label-smoothed cross-entropy, temperature sampling
// and the recovery-diversity sweep.
//
// Scalar-path values are rotation/translation-invariant (they only ever see
// conditioning features and vector norms); vector-path values are built from
// v_local by channel means, scalar gating and causal aggregation, so they
// rotate with the input.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ribosphere/encoder.hpp"
#include "ribosphere/geom.hpp"
#include "ribosphere/metrics.hpp"
#include "ribosphere/structure.hpp"
#include "ribosphere/tensor.hpp"

namespace ribosphere {

struct InvFoldError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Local frames and direction channels
// ---------------------------------------------------------------------------

constexpr int kVLocalChannels = 16;

struct LocalGeometry {
    // per residue: 16 direction channels, flat L x (16*3)
    std::vector<double> v_local;
    std::vector<uint8_t> frame_mask; // 0 where the frame was degenerate
    int length = 0;
};

// Gram-Schmidt orthonormal frame per residue from (C4'->C3', C4'->C5') of the
// B6 atom subset, plus unit direction vectors to sequential neighbours and
// along intra-residue bonds. Channels of masked/degenerate slots are zero.
inline LocalGeometry local_frames(const RnaStructure& s, const WarnFn& warn = nullptr) {
    if (s.atom_set != AtomSetTag::B6 && s.atom_set != AtomSetTag::A10 &&
        s.atom_set != AtomSetTag::A11)
        throw InvFoldError("local_frames: atom set must contain the B6 backbone atoms");

    auto names = atom_set_names(s.atom_set, 'A');
    auto find_atom = [&](const char* nm) {
        for (int a = 0; a < s.atoms(); ++a)
            if (names[a] == nm) return a;
        throw InvFoldError(std::string("local_frames: atom ") + nm + " not in set");
    };
    const int iP = find_atom("P"), iC5 = find_atom("C5'"), iC4 = find_atom("C4'"),
              iC3 = find_atom("C3'"), iO5 = find_atom("O5'"), iO3 = find_atom("O3'");

    int L = s.length();
    LocalGeometry g;
    g.length = L;
    g.v_local.assign(static_cast<size_t>(L) * kVLocalChannels * 3, 0.0);
    g.frame_mask.assign(L, 1);

    auto have = [&](int res, int a) { return s.present(res, a); };
    auto unit_between = [&](int ri, int ai, int rj, int aj) -> Vec3 {
        if (!have(ri, ai) || !have(rj, aj)) return {0, 0, 0};
        return normalized(s.atom_vec(rj, aj) - s.atom_vec(ri, ai));
    };

    for (int i = 0; i < L; ++i) {
        Vec3 e1{0, 0, 0}, e2{0, 0, 0}, e3{0, 0, 0};
        if (have(i, iC4) && have(i, iC3) && have(i, iC5)) {
            Vec3 a = s.atom_vec(i, iC3) - s.atom_vec(i, iC4);
            Vec3 b = s.atom_vec(i, iC5) - s.atom_vec(i, iC4);
            e1 = normalized(a);
            Vec3 b_perp = b - e1 * dot(b, e1);
            if (norm(b_perp) < 1e-8) {
                g.frame_mask[i] = 0;
                if (warn)
                    warn("local_frames: degenerate (collinear) backbone at residue " +
                         std::to_string(i) + " of " + s.id);
                e1 = {0, 0, 0};
            } else {
                e2 = normalized(b_perp);
                e3 = cross(e1, e2);
            }
        } else {
            g.frame_mask[i] = 0;
        }

        Vec3 ch[kVLocalChannels];
        ch[0] = e1;
        ch[1] = e2;
        ch[2] = e3;
        ch[3] = i + 1 < L ? unit_between(i, iC4, i + 1, iC4) : Vec3{0, 0, 0};
        ch[4] = i > 0 ? unit_between(i, iC4, i - 1, iC4) : Vec3{0, 0, 0};
        ch[5] = i + 1 < L ? unit_between(i, iP, i + 1, iP) : Vec3{0, 0, 0};
        ch[6] = i > 0 ? unit_between(i, iP, i - 1, iP) : Vec3{0, 0, 0};
        ch[7] = unit_between(i, iC4, i, iP);
        ch[8] = unit_between(i, iC4, i, iC5);
        ch[9] = unit_between(i, iC4, i, iC3);
        ch[10] = unit_between(i, iC4, i, iO5);
        ch[11] = unit_between(i, iC4, i, iO3);
        ch[12] = i + 1 < L ? unit_between(i, iO3, i + 1, iP) : Vec3{0, 0, 0};
        ch[13] = i > 0 ? unit_between(i, iP, i - 1, iO3) : Vec3{0, 0, 0};
        ch[14] = unit_between(i, iC5, i, iO5);
        ch[15] = unit_between(i, iC3, i, iO3);

        for (int k = 0; k < kVLocalChannels; ++k)
            for (int c = 0; c < 3; ++c)
                g.v_local[(static_cast<size_t>(i) * kVLocalChannels + k) * 3 + c] = ch[k][c];
    }
    return g;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct InvFoldConfig {
    int d_s = 128;
    int K = kVLocalChannels;
    int blocks = 3;
    int heads = 4;
    int cond_dim = 5;  // FSQ latent dim m
    int prior_dim = 4; // secondary-structure / base-pair priors; zero-filled when absent
    int relpos_clip = 16;
    int rel_dim = 16; // width of the relative-position embedding behind S
    int mlp_factor = 2;

    int input_dim() const { return cond_dim + prior_dim; }

    void validate() const {
        if (K != kVLocalChannels)
            throw InvFoldError("invfold: K must equal the v_local channel count (16)");
        if (d_s < 1 || blocks < 1 || heads < 1 || d_s % heads != 0)
            throw InvFoldError("invfold: bad d_s/blocks/heads");
        if (cond_dim < 1 || prior_dim < 0 || relpos_clip < 0 || rel_dim < 1)
            throw InvFoldError("invfold: bad config");
    }
};

// Causal multiplicative mask (1 for j <= i) and causal additive mask.
inline TensorPtr causal_keep_mask(int L) {
    std::vector<double> m(static_cast<size_t>(L) * L, 0.0);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j <= i; ++j) m[static_cast<size_t>(i) * L + j] = 1.0;
    return make_tensor({L, L}, std::move(m));
}

inline TensorPtr causal_additive_mask(int L) {
    std::vector<double> m(static_cast<size_t>(L) * L, 0.0);
    for (int i = 0; i < L; ++i)
        for (int j = i + 1; j < L; ++j) m[static_cast<size_t>(i) * L + j] = -1e30;
    return make_tensor({L, L}, std::move(m));
}

// ---------------------------------------------------------------------------
// Geometry adapter (dual scalar/vector paths with causal pair aggregation)
// ---------------------------------------------------------------------------

struct GeoNodes {
    TensorPtr node_s; // L x d_s, invariant
    TensorPtr node_v; // L x (K*3), equivariant
};

struct GeometryAdapter {
    InvFoldConfig cfg;
    TensorPtr w_s, b_s;     // input -> d_s
    TensorPtr w_v, b_v;     // input -> K (vector gate)
    TensorPtr w_s2v, b_s2v; // d_s -> K
    TensorPtr w_v2s, b_v2s; // K (channel norms) -> d_s
    TensorPtr rel_table;    // (2*clip+1) x rel_dim
    TensorPtr w_r1, b_r1, w_r2, b_r2; // rel MLP -> scalar relation S

    void build(ParamStore& ps, const std::string& prefix, const InvFoldConfig& config, Rng& rng) {
        cfg = config;
        cfg.validate();
        int in = cfg.input_dim(), ds = cfg.d_s, K = cfg.K, r = cfg.rel_dim;
        w_s = ps.create(prefix + "w_s", {in, ds}, Init::NormalScaled, rng);
        b_s = ps.create(prefix + "b_s", {ds}, Init::Zeros, rng);
        w_v = ps.create(prefix + "w_v", {in, K}, Init::NormalScaled, rng);
        b_v = ps.create(prefix + "b_v", {K}, Init::Zeros, rng);
        w_s2v = ps.create(prefix + "w_s2v", {ds, K}, Init::NormalScaled, rng);
        b_s2v = ps.create(prefix + "b_s2v", {K}, Init::Zeros, rng);
        w_v2s = ps.create(prefix + "w_v2s", {K, ds}, Init::NormalScaled, rng);
        b_v2s = ps.create(prefix + "b_v2s", {ds}, Init::Zeros, rng);
        rel_table = ps.create(prefix + "rel.table", {2 * cfg.relpos_clip + 1, r}, Init::Normal,
                              rng, 0.3);
        w_r1 = ps.create(prefix + "rel.w1", {r, r}, Init::NormalScaled, rng);
        b_r1 = ps.create(prefix + "rel.b1", {r}, Init::Zeros, rng);
        w_r2 = ps.create(prefix + "rel.w2", {r, 1}, Init::NormalScaled, rng);
        b_r2 = ps.create(prefix + "rel.b2", {1}, Init::Zeros, rng);
    }

    // Pairwise relation matrix S from truncated relative positions.
    TensorPtr relation_matrix(int L) const {
        std::vector<int> idx(static_cast<size_t>(L) * L);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
                idx[static_cast<size_t>(i) * L + j] =
                    std::clamp(j - i, -cfg.relpos_clip, cfg.relpos_clip) + cfg.relpos_clip;
        auto e = gather_rows(rel_table, idx);
        auto h = linear(tanh_op(linear(e, w_r1, b_r1)), w_r2, b_r2); // (L*L) x 1
        return reshape(h, {L, L});
    }

    // cond: L x input_dim (invariant features), v_local: L x (K*3) constants.
    GeoNodes forward(const TensorPtr& cond, const TensorPtr& v_local, int L) const {
        // node_s = W_s c, v_gate = tanh(W_v c)
        auto node_s = linear(cond, w_s, b_s);
        auto v_gate = tanh_op(linear(cond, w_v, b_v));
        // v_weight = v_gate + W_s2v(node_s)
        auto v_weight = add(v_gate, linear(node_s, w_s2v, b_s2v));
        // node_v = v_weight (.) mean_V(v_local)
        auto node_v = rowwise_outer(v_weight, mean_channels(v_local, cfg.K));
        // v_pair = sum_j (sigma(S) (.) M)_ij v_local^j, then node_v += mean_V(v_pair)
        auto s_rel = mul(sigmoid_op(relation_matrix(L)), causal_keep_mask(L));
        auto v_pair = matmul(s_rel, v_local);
        std::vector<double> ones_d(static_cast<size_t>(L) * cfg.K, 1.0);
        auto ones_gate = make_tensor({L, cfg.K}, std::move(ones_d));
        node_v = add(node_v, rowwise_outer(ones_gate, mean_channels(v_pair, cfg.K)));
        // node_s += W_v2s(node_v) through rotation-invariant channel norms
        node_s = add(node_s, linear(channel_norms(node_v, cfg.K), w_v2s, b_v2s));
        return {node_s, node_v};
    }
};

// ---------------------------------------------------------------------------
// Autoregressive decoder
// ---------------------------------------------------------------------------

inline int base_index(char b) {
    switch (b) {
    case 'A': return 0;
    case 'U': return 1;
    case 'C': return 2;
    case 'G': return 3;
    }
    throw InvFoldError(std::string("unknown base '") + b + "'");
}

inline char index_base(int i) {
    static const char bases[4] = {'A', 'U', 'C', 'G'};
    if (i < 0 || i > 3) throw InvFoldError("base index out of range");
    return bases[i];
}

struct InvFoldModel {
    InvFoldConfig cfg;
    GeometryAdapter adapter;
    TensorPtr seq_table; // 5 x d_s (A,U,C,G + BOS row 4)
    struct Block {
        AttentionBlock attn;
        TensorPtr w_gate, b_gate; // d_s -> K
        TensorPtr w_vs, b_vs;     // K -> d_s
    };
    std::vector<Block> blocks;
    TensorPtr pair_rel; // shared relpos table for the attention bias
    TensorPtr ln_head_g, ln_head_b, w_head, b_head; // d_s -> 4

    void build(ParamStore& ps, const std::string& prefix, const InvFoldConfig& config, Rng& rng) {
        cfg = config;
        cfg.validate();
        adapter.build(ps, prefix + "adapter.", cfg, rng);
        seq_table = ps.create(prefix + "seq.table", {5, cfg.d_s}, Init::Normal, rng, 0.3);
        pair_rel = ps.create(prefix + "pair.rel", {2 * cfg.relpos_clip + 1, cfg.rel_dim},
                             Init::Normal, rng, 0.3);
        blocks.resize(cfg.blocks);
        for (int b = 0; b < cfg.blocks; ++b) {
            auto bp = prefix + "block" + std::to_string(b) + ".";
            blocks[b].attn.build(ps, bp, cfg.d_s, cfg.heads, cfg.rel_dim, cfg.mlp_factor, rng);
            blocks[b].w_gate = ps.create(bp + "w_gate", {cfg.d_s, cfg.K}, Init::NormalScaled, rng);
            blocks[b].b_gate = ps.create(bp + "b_gate", {cfg.K}, Init::Zeros, rng);
            blocks[b].w_vs = ps.create(bp + "w_vs", {cfg.K, cfg.d_s}, Init::NormalScaled, rng);
            blocks[b].b_vs = ps.create(bp + "b_vs", {cfg.d_s}, Init::Zeros, rng);
        }
        ln_head_g = ps.create(prefix + "head.ln.g", {cfg.d_s}, Init::Ones, rng);
        ln_head_b = ps.create(prefix + "head.ln.b", {cfg.d_s}, Init::Zeros, rng);
        w_head = ps.create(prefix + "head.w", {cfg.d_s, 4}, Init::NormalScaled, rng);
        b_head = ps.create(prefix + "head.b", {4}, Init::Zeros, rng);
    }

    TensorPtr pair_bias_features(int L) const {
        std::vector<int> idx(static_cast<size_t>(L) * L);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
                idx[static_cast<size_t>(i) * L + j] =
                    std::clamp(j - i, -cfg.relpos_clip, cfg.relpos_clip) + cfg.relpos_clip;
        return gather_rows(pair_rel, idx);
    }

    // Teacher-forced logits: prev_tokens[i] conditions position i (row 4 of
    // the embedding table is the begin-of-sequence token).
    TensorPtr logits(const GeoNodes& geo, const std::vector<int>& prev_tokens, int L) const {
        if (static_cast<int>(prev_tokens.size()) != L)
            throw InvFoldError("invfold: prev token length mismatch");
        auto h = add(geo.node_s, gather_rows(seq_table, prev_tokens));
        auto v = geo.node_v;
        auto pair = pair_bias_features(L);
        auto mask = causal_additive_mask(L);
        for (const auto& blk : blocks) {
            h = blk.attn.forward(h, pair, mask);
            auto gate = tanh_op(linear(h, blk.w_gate, blk.b_gate));
            v = add(v, rowwise_outer(gate, mean_channels(v, cfg.K)));
            h = add(h, linear(channel_norms(v, cfg.K), blk.w_vs, blk.b_vs));
        }
        return linear(layernorm(h, ln_head_g, ln_head_b), w_head, b_head);
    }

    std::vector<int> shifted_tokens(const std::string& sequence) const {
        std::vector<int> prev(sequence.size());
        prev[0] = 4; // BOS
        for (size_t i = 1; i < sequence.size(); ++i) prev[i] = base_index(sequence[i - 1]);
        return prev;
    }

    // 5' to 3' generation. temperature <= 0 means argmax; otherwise logits
    // are divided by T before the softmax draw.
    std::string decode_autoregressive(const GeoNodes& geo, int L, double temperature,
                                      Rng& rng) const {
        std::vector<int> prev(L, 4);
        std::string out;
        out.reserve(L);
        for (int i = 0; i < L; ++i) {
            auto lg = logits(geo, prev, L);
            int choice;
            if (temperature <= 0.0) {
                choice = 0;
                double best = lg->data[static_cast<size_t>(i) * 4];
                for (int c = 1; c < 4; ++c) {
                    double v = lg->data[static_cast<size_t>(i) * 4 + c];
                    if (v > best) {
                        best = v;
                        choice = c;
                    }
                }
            } else {
                double mx = -1e300;
                double p[4];
                for (int c = 0; c < 4; ++c) {
                    p[c] = lg->data[static_cast<size_t>(i) * 4 + c] / temperature;
                    mx = std::max(mx, p[c]);
                }
                double z = 0;
                for (int c = 0; c < 4; ++c) {
                    p[c] = std::exp(p[c] - mx);
                    z += p[c];
                }
                double u = rng.uniform() * z;
                choice = 3;
                double acc = 0;
                for (int c = 0; c < 4; ++c) {
                    acc += p[c];
                    if (u < acc) {
                        choice = c;
                        break;
                    }
                }
            }
            out.push_back(index_base(choice));
            if (i + 1 < L) prev[i + 1] = choice;
        }
        return out;
    }

    // Argmax sequence under teacher forcing (for recovery during training).
    std::string argmax_teacher_forced(const GeoNodes& geo, const std::string& native) const {
        int L = static_cast<int>(native.size());
        auto lg = logits(geo, shifted_tokens(native), L);
        std::string out;
        out.reserve(L);
        for (int i = 0; i < L; ++i) {
            int choice = 0;
            double best = lg->data[static_cast<size_t>(i) * 4];
            for (int c = 1; c < 4; ++c) {
                double v = lg->data[static_cast<size_t>(i) * 4 + c];
                if (v > best) {
                    best = v;
                    choice = c;
                }
            }
            out.push_back(index_base(choice));
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Label-smoothed cross entropy
// ---------------------------------------------------------------------------

struct CeResult {
    TensorPtr total; // summed over positions (the paper's form)
    double per_position;
};

// -sum_i [(1-eps) log p(y_i) + eps/4 sum_{s'} log p(s')]
inline CeResult label_smooth_ce(const TensorPtr& logits, const std::string& targets,
                                double eps = 0.1) {
    int L = logits->rows();
    if (logits->cols() != 4) throw InvFoldError("label_smooth_ce: expected 4-way logits");
    if (static_cast<int>(targets.size()) != L)
        throw InvFoldError("label_smooth_ce: target length mismatch");
    auto lsm = log_softmax(logits);
    std::vector<double> w(static_cast<size_t>(L) * 4, eps / 4.0);
    for (int i = 0; i < L; ++i) w[static_cast<size_t>(i) * 4 + base_index(targets[i])] += 1.0 - eps;
    auto wt = make_tensor({L, 4}, std::move(w));
    auto total = scale(sum(mul(lsm, wt)), -1.0);
    return {total, total->scalar() / static_cast<double>(L)};
}

// ---------------------------------------------------------------------------
// Recovery-diversity sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    double temperature = 0.0;
    double recovery_mean = 0.0; // mean over samples and structures
    double recovery_best = 0.0; // best-of-n per structure, averaged
    double diversity = 0.0;     // 3-mer diversity per structure, averaged
};

struct SweepInput {
    std::string native_sequence;
    GeoNodes geo;
    int L = 0;
};

inline std::vector<SweepRow> tradeoff_sweep(const InvFoldModel& model,
                                            const std::vector<SweepInput>& structures,
                                            const std::vector<double>& temperatures, int samples,
                                            Rng& rng) {
    if (structures.empty()) throw InvFoldError("tradeoff_sweep: empty structure set");
    std::vector<SweepRow> rows;
    for (double T : temperatures) {
        SweepRow row;
        row.temperature = T;
        double div_sum = 0.0;
        int div_count = 0;
        for (const auto& st : structures) {
            std::vector<std::string> seqs;
            double best = 0.0, mean_acc = 0.0;
            for (int k = 0; k < samples; ++k) {
                auto seq = model.decode_autoregressive(st.geo, st.L, T, rng);
                double rec = recovery(seq, st.native_sequence);
                best = std::max(best, rec);
                mean_acc += rec;
                seqs.push_back(std::move(seq));
            }
            row.recovery_mean += mean_acc / samples;
            row.recovery_best += best;
            if (st.L >= 3 && samples >= 2) {
                auto d = diversity_3mer(seqs);
                div_sum += d.value;
                ++div_count;
            }
        }
        row.recovery_mean /= static_cast<double>(structures.size());
        row.recovery_best /= static_cast<double>(structures.size());
        row.diversity = div_count ? div_sum / div_count : 0.0;
        rows.push_back(row);
    }
    return rows;
}

} // namespace ribosphere
