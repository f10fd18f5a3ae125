#pragma once

// Training loops. Single-threaded; every stochastic choice (structure pick,
// rotation augmentation, flow time, noise, conditioning dropout) comes from
// one training Rng whose state is checkpointed, so a resumed run replays the
// exact trajectory of an uninterrupted one.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "ribosphere/invfold.hpp"
#include "ribosphere/model.hpp"

namespace ribosphere {

struct TrainLogRow {
    int64_t step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    double extra = 0.0; // invfold: teacher-forced recovery
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    int64_t final_step = 0;
    double final_loss = 0.0;
};

inline void append_log_file(const std::string& path, const std::vector<TrainLogRow>& rows,
                            bool with_extra, bool truncate) {
    namespace fs = std::filesystem;
    bool fresh = truncate || !fs::exists(path);
    std::ofstream os(path, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) os << "step\tloss\tgrad_norm\tlr" << (with_extra ? "\trecovery" : "") << "\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
        os << r.step << "\t" << r.loss << "\t" << r.grad_norm << "\t" << r.lr;
        if (with_extra) os << "\t" << r.extra;
        os << "\n";
    }
}

// ---------------------------------------------------------------------------
// Autoencoder (encoder + FSQ + flow decoder) training
// ---------------------------------------------------------------------------

// Full checkpoint including optimizer state, so runs resume bitwise.
inline void save_train_checkpoint(const std::string& path, const RiboSphereModel& model,
                                  AdamW& opt, const Rng& train_rng, int64_t step) {
    std::ostringstream meta;
    meta << "format=ribosphere-model\n";
    meta << "scale=" << std::setprecision(17) << model.data_scale << "\n";
    meta << "step=" << step << "\n";
    meta << "rng_state=" << train_rng.state() << "\n";
    meta << "[config]\n" << model.cfg.serialize();

    auto entries = model.params.entries();
    const size_t n_model = entries.size();
    for (size_t i = 0; i < n_model && i < opt.num_params(); ++i) {
        std::string name = entries[i].first;
        std::vector<int> shape = entries[i].second->shape;
        entries.emplace_back("opt.m." + name, make_tensor(shape, opt.moment_m(i)));
        entries.emplace_back("opt.v." + name, make_tensor(shape, opt.moment_v(i)));
    }
    save_checkpoint(path, meta.str(), entries);
}

// Restores optimizer moments recorded by save_train_checkpoint, if present.
inline void restore_opt_state(const Checkpoint& ck, const ParamStore& params, AdamW& opt,
                              int64_t step) {
    const auto& entries = params.entries();
    for (size_t i = 0; i < opt.num_params(); ++i) {
        auto m_it = ck.tensors.find("opt.m." + entries[i].first);
        auto v_it = ck.tensors.find("opt.v." + entries[i].first);
        if (m_it == ck.tensors.end() || v_it == ck.tensors.end())
            throw CheckpointError("checkpoint: missing optimizer state for " + entries[i].first);
        opt.moment_m(i) = m_it->second.data;
        opt.moment_v(i) = v_it->second.data;
    }
    opt.set_step_count(step);
}

struct AutoencoderTrainer {
    RiboSphereModel& model;
    const std::vector<RnaStructure>& train_set;
    std::string out_dir;

    // Runs up to cfg.steps optimizer steps. When resume_path is set, weights,
    // optimizer state, step counter and rng state come from the checkpoint.
    TrainResult run(const std::string& resume_path = "") {
        namespace fs = std::filesystem;
        if (train_set.empty()) throw ConfigError("train: corpus is empty");
        const RunConfig& cfg = model.cfg;
        fs::create_directories(out_dir);

        AdamWConfig oc;
        oc.lr = cfg.lr;
        oc.weight_decay = cfg.weight_decay;
        AdamW opt(model.params.all_params(), oc);

        int64_t start_step = 0;
        Rng rng(cfg.seed);
        if (!resume_path.empty()) {
            auto ck = load_checkpoint(resume_path);
            restore_params(ck, model.params);
            auto kv = parse_meta(ck.meta.substr(0, ck.meta.find("[config]\n")));
            model.data_scale = std::stod(kv.at("scale"));
            start_step = std::stoll(kv.at("step"));
            rng.set_state(std::stoull(kv.at("rng_state")));
            restore_opt_state(ck, model.params, opt, start_step);
        } else {
            model.data_scale = compute_corpus_scale(train_set);
        }

        int rep = c4_index(cfg.atom_set());
        TrainResult result;
        result.final_step = start_step;
        opt.zero_grad();
        for (int64_t step = start_step + 1; step <= cfg.steps; ++step) {
            double loss_acc = 0.0;
            for (int micro = 0; micro < cfg.accum; ++micro) {
                size_t pick = rng.below(train_set.size());
                RnaStructure s = mean_center(train_set[pick]);
                if (cfg.augment_rotations) s = random_rotation(s, rng);

                FlowBatchItem item;
                item.L = s.length();
                item.rep_atom = rep;
                item.atom_mask = s.mask;
                item.x1.resize(s.coords.size());
                for (size_t i = 0; i < s.coords.size(); ++i)
                    item.x1[i] = s.coords[i] / model.data_scale;

                Tape tape;
                Tape::Scope scope(tape);
                auto in = encoder_inputs(s);
                auto latents = model.encoder.forward(in.coords, in.rep_coords, in.L);
                item.cond = model.fsq.quantize(latents);
                auto loss = scale(flow_loss(model.decoder, item, cfg.cond_drop, rng),
                                  1.0 / cfg.accum);
                loss_acc += loss->scalar() * cfg.accum;
                tape.backward(loss);
            }
            double gnorm = opt.grad_norm();
            opt.step();
            opt.zero_grad();

            if (step % cfg.log_every == 0 || step == cfg.steps || step == start_step + 1)
                result.log.push_back({step, loss_acc / cfg.accum, gnorm, cfg.lr, 0.0});
            if (cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0 && step != cfg.steps)
                save_train_checkpoint(out_dir + "/ckpt_" + std::to_string(step) + ".rscp", model,
                                      opt, rng, step);
            result.final_step = step;
            result.final_loss = loss_acc / cfg.accum;
        }
        save_train_checkpoint(out_dir + "/model.rscp", model, opt, rng, result.final_step);
        append_log_file(out_dir + "/log.tsv", result.log, false, resume_path.empty());
        return result;
    }
};

// ---------------------------------------------------------------------------
// Inverse-folding training on a frozen tokenizer
// ---------------------------------------------------------------------------

struct InvFoldSample {
    std::string id;
    std::string sequence;
    TensorPtr cond;    // L x (m + prior_dim), constant
    TensorPtr v_local; // L x (K*3), constant
    int L = 0;
};

// Conditioning features: quantized FSQ latents from the frozen tokenizer
// concatenated with zero-filled secondary-structure priors.
inline InvFoldSample make_invfold_sample(const RiboSphereModel& frozen, const InvFoldConfig& icfg,
                                         const RnaStructure& s) {
    InvFoldSample out;
    out.id = s.id;
    out.sequence = s.sequence;
    out.L = s.length();
    auto tokens = frozen.tokenize(s);
    int m = frozen.fsq.cfg.dim();
    std::vector<double> cond(static_cast<size_t>(out.L) * icfg.input_dim(), 0.0);
    for (int i = 0; i < out.L; ++i)
        for (int j = 0; j < m; ++j)
            cond[static_cast<size_t>(i) * icfg.input_dim() + j] =
                tokens.quantized[static_cast<size_t>(i) * m + j];
    out.cond = make_tensor({out.L, icfg.input_dim()}, std::move(cond));
    auto geo = local_frames(mean_center(s));
    out.v_local = make_tensor({out.L, kVLocalChannels * 3}, geo.v_local);
    return out;
}

struct InvFoldTrainer {
    InvFoldModel& model;
    ParamStore& inv_params;
    std::vector<InvFoldSample> samples;
    double lr = 1e-3;
    int steps = 2000;
    double label_eps = 0.1;
    int eval_every = 50;
    double stop_recovery = 0.0; // early stop threshold; 0 disables

    double teacher_forced_recovery() const {
        double acc = 0.0;
        for (const auto& s : samples) {
            auto geo = model.adapter.forward(s.cond, s.v_local, s.L);
            acc += recovery(model.argmax_teacher_forced(geo, s.sequence), s.sequence);
        }
        return acc / static_cast<double>(samples.size());
    }

    TrainResult run(Rng& rng) {
        if (samples.empty()) throw ConfigError("invfold train: empty structure set");
        AdamWConfig oc;
        oc.lr = lr;
        AdamW opt(inv_params.all_params(), oc);
        TrainResult result;
        opt.zero_grad();
        for (int64_t step = 1; step <= steps; ++step) {
            const auto& s = samples[rng.below(samples.size())];
            double loss_val;
            {
                Tape tape;
                Tape::Scope scope(tape);
                auto geo = model.adapter.forward(s.cond, s.v_local, s.L);
                auto lg = model.logits(geo, model.shifted_tokens(s.sequence), s.L);
                auto ce = label_smooth_ce(lg, s.sequence, label_eps);
                loss_val = ce.total->scalar() / s.L;
                tape.backward(ce.total);
            }
            double gnorm = opt.grad_norm();
            opt.step();
            opt.zero_grad();
            result.final_step = step;
            result.final_loss = loss_val;

            if (step % eval_every == 0 || step == steps) {
                double rec = teacher_forced_recovery();
                result.log.push_back({step, loss_val, gnorm, lr, rec});
                if (stop_recovery > 0.0 && rec > stop_recovery) break;
            }
        }
        return result;
    }
};

} // namespace ribosphere
