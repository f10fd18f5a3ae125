#pragma once

// The full autoencoder: encoder -> FSQ -> flow decoder, with checkpointing
// that embeds the run config and training state, tokenization and
// token-conditioned reconstruction.
//
// The encoder operates on raw centered coordinates in Angstrom; the flow
// decoder lives in normalized units (coordinates divided by a corpus scale
// factor computed at training time and stored in the checkpoint).

#include <iomanip>
#include <memory>
#include <string>
#include <vector>

#include "ribosphere/checkpoint.hpp"
#include "ribosphere/config.hpp"
#include "ribosphere/encoder.hpp"
#include "ribosphere/flow.hpp"
#include "ribosphere/fsq.hpp"
#include "ribosphere/structure.hpp"

namespace ribosphere {

// Per-structure inputs for the encoder path.
struct EncoderInputs {
    std::vector<double> coords;     // centered, masked slots zeroed
    std::vector<double> rep_coords; // C4' per residue (masked -> 0)
    std::vector<uint8_t> atom_mask;
    int L = 0;
};

inline EncoderInputs encoder_inputs(const RnaStructure& centered) {
    EncoderInputs in;
    in.L = centered.length();
    in.coords = centered.coords;
    in.atom_mask = centered.mask;
    int c4 = c4_index(centered.atom_set);
    in.rep_coords.assign(static_cast<size_t>(in.L) * 3, 0.0);
    for (int i = 0; i < in.L; ++i)
        if (centered.present(i, c4))
            for (int c = 0; c < 3; ++c) in.rep_coords[3 * i + c] = centered.atom(i, c4)[c];
    return in;
}

struct RiboSphereModel {
    RunConfig cfg;
    ParamStore params;
    Encoder encoder;
    Fsq fsq;
    VectorFieldNet decoder;
    double data_scale = 1.0;

    static RiboSphereModel create(const RunConfig& cfg) {
        cfg.validate();
        RiboSphereModel m;
        m.cfg = cfg;
        Rng rng(cfg.seed ^ 0x5eed5eedULL);
        m.encoder.build(m.params, "encoder.", cfg.encoder(), rng);
        m.fsq.build(m.params, "fsq.", cfg.fsq(), cfg.enc_dim, rng);
        m.decoder.build(m.params, "decoder.", cfg.decoder(), rng);
        return m;
    }

    // --- checkpoint ---

    void save(const std::string& path, const std::map<std::string, std::string>& state = {}) const {
        std::ostringstream meta;
        meta << "format=ribosphere-model\n";
        meta << "scale=" << std::setprecision(17) << data_scale << "\n";
        for (const auto& [k, v] : state) meta << k << "=" << v << "\n";
        meta << "[config]\n" << cfg.serialize();
        save_checkpoint(path, meta.str(), params.entries());
    }

    static RiboSphereModel load(const std::string& path,
                                std::map<std::string, std::string>* state = nullptr) {
        auto ck = load_checkpoint(path);
        auto split = ck.meta.find("[config]\n");
        if (split == std::string::npos)
            throw CheckpointError("checkpoint: missing embedded config in " + path);
        auto head = ck.meta.substr(0, split);
        auto cfg_text = ck.meta.substr(split + 9);
        auto kv = parse_meta(head);
        if (state) *state = kv;
        RiboSphereModel m = create(RunConfig::from_kv(parse_kv_text(cfg_text)));
        restore_params(ck, m.params);
        m.data_scale = std::stod(kv.at("scale"));
        return m;
    }

    // --- inference paths (no tape active: pure value computation) ---

    // Encode a centered structure to continuous latents.
    TensorPtr encode(const RnaStructure& centered) const {
        auto in = encoder_inputs(centered);
        return encoder.forward(in.coords, in.rep_coords, in.L);
    }

    TokenSequence tokenize(const RnaStructure& structure) const {
        auto centered = mean_center(structure);
        auto latents = encode(centered);
        auto quantized = fsq.quantize(latents);
        TokenSequence t;
        t.id = structure.id;
        t.levels = fsq.cfg;
        t.quantized = quantized->data;
        t.indices = fsq.indices_from_quantized(quantized->data, centered.length());
        return t;
    }

    // The guided field used by both samplers, in normalized coordinates.
    FieldFn make_field(const TokenSequence& tokens, const std::vector<uint8_t>& atom_mask,
                       double guidance) const {
        int L = tokens.length();
        auto cond = make_tensor({L, fsq.cfg.dim()}, tokens.quantized);
        int rep = c4_index(cfg.atom_set());
        return [this, cond, atom_mask, L, rep, guidance](const std::vector<double>& x, double t) {
            auto vc = decoder.forward(x, t, cond, atom_mask, L, rep);
            if (guidance == 0.0) return vc->data;
            auto vu = decoder.forward(x, t, nullptr, atom_mask, L, rep);
            return cfg_field(vc->data, vu->data, guidance);
        };
    }

    // Sample coordinates for a token sequence. The sequence argument supplies
    // base identities for the output structure (tokens alone do not carry
    // them); pass an empty string for a poly-A placeholder.
    RnaStructure reconstruct_from_tokens(const TokenSequence& tokens, std::string sequence,
                                         const SamplerConfig& sampler, Rng& rng) const {
        int L = tokens.length();
        if (L < 1) throw FlowError("reconstruct: empty token sequence");
        if (sequence.empty()) sequence = std::string(L, 'A');
        if (static_cast<int>(sequence.size()) != L)
            throw FlowError("reconstruct: sequence length does not match tokens");
        int A = atom_set_size(cfg.atom_set());
        std::vector<uint8_t> atom_mask(static_cast<size_t>(L) * A, 1);

        auto field = make_field(tokens, atom_mask, sampler.guidance);
        auto x0 = sample_noise_zero_com(L, A, rng, &atom_mask);
        std::vector<double> x;
        if (sampler.eta == 0.0 && sampler.gamma == 0.0)
            x = euler_sample(field, x0, atom_mask, sampler.steps);
        else
            x = sde_sample(field, x0, atom_mask, sampler, rng);

        RnaStructure out;
        out.id = tokens.id;
        out.chain_id = "A";
        out.sequence = std::move(sequence);
        out.atom_set = cfg.atom_set();
        out.mask = atom_mask;
        out.coords.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i) out.coords[i] = x[i] * data_scale;
        return out;
    }

    // encode -> quantize -> sample; keeps the input's id/sequence/mask.
    RnaStructure reconstruct(const RnaStructure& structure, const SamplerConfig& sampler,
                             Rng& rng) const {
        auto tokens = tokenize(structure);
        auto out = reconstruct_from_tokens(tokens, structure.sequence, sampler, rng);
        out.mask = structure.mask; // reconstruction reports the same coverage
        for (size_t i = 0; i < out.mask.size(); ++i)
            if (!out.mask[i])
                for (int c = 0; c < 3; ++c) out.coords[i * 3 + c] = 0.0;
        return out;
    }
};

// Per-coordinate RMS of centered training coordinates; the normalization
// constant for the flow decoder.
inline double compute_corpus_scale(const std::vector<RnaStructure>& train) {
    double sum = 0.0;
    int64_t n = 0;
    for (const auto& s : train) {
        auto c = mean_center(s);
        for (int i = 0; i < c.length(); ++i)
            for (int a = 0; a < c.atoms(); ++a) {
                if (!c.present(i, a)) continue;
                const double* p = c.atom(i, a);
                sum += p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                n += 3;
            }
    }
    if (n == 0) throw StructureError("corpus scale: no unmasked atoms");
    double scale = std::sqrt(sum / static_cast<double>(n));
    return scale > 1e-9 ? scale : 1.0;
}

} // namespace ribosphere
