// ribosphere command-line driver.
//
// Subcommands: ingest, train, tokenize, reconstruct, evaluate, analyze,
// invfold-train, invfold-sample, sweep. Every command writes a manifest
// (version, seed, config hash, inputs) into its output directory and never
// mutates its inputs. Exit codes: 0 success, 1 validation error, 2 runtime
// error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ribosphere/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ribosphere;

namespace {

void warn_to_stderr(const std::string& m) { std::cerr << "warning: " << m << "\n"; }

RunConfig load_run_config(const std::string& config_path,
                          const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot open config file: " + config_path);
        std::stringstream ss;
        ss << is.rdbuf();
        kv = parse_kv_text(ss.str());
    }
    for (const auto& [k, v] : overrides) kv[k] = v;
    auto cfg = RunConfig::from_kv(kv);
    cfg.validate();
    return cfg;
}

std::string slurp_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw PipelineError("cannot open file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Options shared by every command.
struct CommonOpts {
    std::string config;
    std::string out = "out";
    std::optional<uint64_t> seed;
    std::optional<int> threads;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "key=value config file");
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--seed", seed, "seed override");
        cmd->add_option("--threads", threads, "worker threads for fan-out stages");
    }

    RunConfig config_with(std::map<std::string, std::string> extra = {}) const {
        if (seed) extra["seed"] = std::to_string(*seed);
        if (threads) extra["threads"] = std::to_string(*threads);
        return load_run_config(config, extra);
    }
};

// --- ingest -----------------------------------------------------------------

struct IngestOpts {
    CommonOpts common;
    std::vector<std::string> pdb_paths;
    int synth = 0;
    int len_min = 20, len_max = 40;
    double twist = 32.7, rise = 2.81;
    std::string atoms = "A10";
};

int cmd_ingest(const IngestOpts& o) {
    RunConfig cfg = o.common.config_with({{"atoms", o.atoms}});
    std::vector<RnaStructure> corpus;

    for (const auto& path : o.pdb_paths) {
        std::vector<std::string> files;
        if (fs::is_directory(path)) {
            for (const auto& e : fs::directory_iterator(path))
                if (e.path().extension() == ".pdb") files.push_back(e.path().string());
            std::sort(files.begin(), files.end());
        } else {
            files.push_back(path);
        }
        for (const auto& f : files) {
            auto parsed =
                parse_pdb(slurp_file(f), cfg.atom_set(), fs::path(f).stem().string(), warn_to_stderr);
            for (auto& s : parsed) corpus.push_back(std::move(s));
        }
    }
    if (o.synth > 0) {
        if (o.len_min < 4 || o.len_max < o.len_min)
            throw ConfigError("ingest: bad synthetic length range");
        Rng rng(cfg.seed);
        for (int i = 0; i < o.synth; ++i) {
            int len = o.len_min + static_cast<int>(rng.below(o.len_max - o.len_min + 1));
            auto s = synth_helix(len, o.twist, o.rise, rng, cfg.atom_set());
            s.id = "synth" + std::to_string(i);
            corpus.push_back(std::move(s));
        }
    }
    if (corpus.empty()) throw ConfigError("ingest: nothing to ingest (use --pdb and/or --synth)");

    save_corpus(o.common.out, corpus);
    write_manifest(o.common.out, "ingest", cfg,
                   {{"structures", std::to_string(corpus.size())}});
    std::cout << "ingested " << corpus.size() << " structures into " << o.common.out << "\n";
    return 0;
}

// --- train -------------------------------------------------------------------

struct TrainOpts {
    CommonOpts common;
    std::string corpus;
    std::string resume;
    std::optional<int> steps;
    std::optional<double> lr;
};

int cmd_train(const TrainOpts& o) {
    std::map<std::string, std::string> extra;
    if (o.steps) extra["steps"] = std::to_string(*o.steps);
    if (o.lr) extra["lr"] = std::to_string(*o.lr);
    RunConfig cfg = o.common.config_with(extra);

    auto corpus = load_corpus(o.corpus, warn_to_stderr);
    std::vector<std::string> ids;
    for (const auto& s : corpus) ids.push_back(s.id);
    auto split = split_dataset(ids, cfg.split_train, cfg.split_val, cfg.split_test, cfg.seed);
    std::vector<RnaStructure> train_set;
    for (size_t i : split.train) train_set.push_back(corpus[i]);
    if (train_set.empty()) throw ConfigError("train: empty training split");

    RiboSphereModel model = RiboSphereModel::create(cfg);
    write_manifest(o.common.out, "train", cfg,
                   {{"corpus", o.corpus},
                    {"train_structures", std::to_string(train_set.size())},
                    {"resume", o.resume.empty() ? "none" : o.resume}});
    AutoencoderTrainer trainer{model, train_set, o.common.out};
    auto res = trainer.run(o.resume);
    std::cout << "trained to step " << res.final_step << ", final flow loss " << res.final_loss
              << "\ncheckpoint: " << o.common.out << "/model.rscp\n";
    return 0;
}

// --- tokenize ----------------------------------------------------------------

struct TokenizeOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string corpus;
};

int cmd_tokenize(const TokenizeOpts& o) {
    auto model = RiboSphereModel::load(o.checkpoint);
    RunConfig cfg = model.cfg;
    if (o.common.seed) cfg.seed = *o.common.seed;
    if (o.common.threads) cfg.threads = *o.common.threads;

    auto corpus = load_corpus(o.corpus, warn_to_stderr);
    auto tokens = tokenize_corpus(model, corpus, cfg.threads);
    fs::create_directories(o.common.out);
    write_tokens_file(o.common.out + "/tokens.tsv", tokens);
    write_manifest(o.common.out, "tokenize", cfg,
                   {{"checkpoint", o.checkpoint}, {"corpus", o.corpus}});
    double util = utilization(tokens, model.fsq.cfg);
    std::cout << "tokenized " << tokens.size() << " structures; codebook "
              << model.fsq.cfg.codebook_size() << ", utilization " << std::fixed
              << std::setprecision(1) << util * 100.0 << "%\n";
    return 0;
}

// --- reconstruct ---------------------------------------------------------------

struct ReconstructOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string tokens;
    std::string ref; // optional corpus supplying sequences by id
    std::optional<int> steps;
    std::optional<double> guidance, eta, gamma;
};

int cmd_reconstruct(const ReconstructOpts& o) {
    auto model = RiboSphereModel::load(o.checkpoint);
    RunConfig cfg = model.cfg;
    if (o.common.seed) cfg.seed = *o.common.seed;
    if (o.common.threads) cfg.threads = *o.common.threads;
    if (o.steps) cfg.sample_steps = *o.steps;
    if (o.guidance) cfg.guidance = *o.guidance;
    if (o.eta) cfg.eta = *o.eta;
    if (o.gamma) cfg.gamma = *o.gamma;
    cfg.sampler().validate();

    auto tokens = read_tokens_file(o.tokens);
    std::vector<std::string> sequences(tokens.size());
    if (!o.ref.empty()) {
        auto ref = load_corpus(o.ref, warn_to_stderr);
        std::map<std::string, const RnaStructure*> by_id;
        for (const auto& s : ref) by_id[s.id] = &s;
        for (size_t i = 0; i < tokens.size(); ++i) {
            auto it = by_id.find(tokens[i].id);
            if (it != by_id.end()) sequences[i] = it->second->sequence;
        }
    }
    auto recon = reconstruct_corpus(model, tokens, sequences, cfg.sampler(), cfg.seed, cfg.threads);
    save_corpus(o.common.out, recon);
    write_manifest(o.common.out, "reconstruct", cfg,
                   {{"checkpoint", o.checkpoint}, {"tokens", o.tokens}});
    std::cout << "reconstructed " << recon.size() << " structures into " << o.common.out << "\n";
    return 0;
}

// --- evaluate -------------------------------------------------------------------

struct EvaluateOpts {
    CommonOpts common;
    std::string pred;
    std::string ref;
    std::string scores; // optional score\tlabel file -> AUROC
};

int cmd_evaluate(const EvaluateOpts& o) {
    RunConfig cfg = o.common.config_with();
    fs::create_directories(o.common.out);

    if (!o.scores.empty()) {
        std::ifstream is(o.scores);
        if (!is) throw PipelineError("cannot open scores file: " + o.scores);
        std::vector<double> scores;
        std::vector<int> labels;
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            double s;
            int l;
            if (!(ls >> s >> l)) throw PipelineError("scores file: malformed line '" + line + "'");
            scores.push_back(s);
            labels.push_back(l);
        }
        double a = auroc(scores, labels);
        std::ofstream os(o.common.out + "/auroc.txt", std::ios::trunc);
        os << std::setprecision(10) << a << "\n";
        std::cout << "AUROC " << std::setprecision(6) << a << " over " << scores.size()
                  << " pairs\n";
        return 0;
    }

    if (o.pred.empty() || o.ref.empty())
        throw ConfigError("evaluate: --pred and --ref are required (or use --scores)");
    auto pred = load_corpus(o.pred, warn_to_stderr);
    auto ref = load_corpus(o.ref, warn_to_stderr);
    std::map<std::string, const RnaStructure*> by_id;
    for (const auto& s : ref) by_id[s.id] = &s;
    std::vector<RnaStructure> matched_ref;
    for (const auto& p : pred) {
        auto it = by_id.find(p.id);
        if (it == by_id.end()) throw PipelineError("evaluate: no reference for id " + p.id);
        matched_ref.push_back(*it->second);
    }

    std::vector<std::vector<double>> per_res_lddt;
    auto report = evaluate_corpus(pred, matched_ref, cfg.threads, &per_res_lddt);
    {
        std::ofstream os(o.common.out + "/metrics.tsv", std::ios::trunc);
        write_metrics_tsv(os, report);
    }
    {
        std::ofstream os(o.common.out + "/metrics.json", std::ios::trunc);
        write_metrics_json(os, report);
    }
    // predictions re-emitted with per-residue lDDT in the B-factor column
    fs::create_directories(o.common.out + "/lddt_pdb");
    for (size_t i = 0; i < pred.size(); ++i) {
        std::ofstream os(o.common.out + "/lddt_pdb/" + pred[i].id + ".pdb", std::ios::trunc);
        os << write_pdb(pred[i], &per_res_lddt[i]);
    }
    write_manifest(o.common.out, "evaluate", cfg, {{"pred", o.pred}, {"ref", o.ref}});
    std::cout << "evaluated " << report.rows.size() << " structures: mean RMSD(all) "
              << std::setprecision(4) << report.aggregate.rmsd_all << " A, TM "
              << report.aggregate.tm << ", lDDT " << report.aggregate.lddt_score << "\n";
    return 0;
}

// --- analyze ---------------------------------------------------------------------

struct AnalyzeOpts2 {
    CommonOpts common;
    std::string tokens;
    std::string corpus;
    std::string dotbracket;
    std::string ngrams = "5,7";
    int top_k = 20;
};

int cmd_analyze(const AnalyzeOpts2& o) {
    RunConfig cfg = o.common.config_with();
    auto tokens = read_tokens_file(o.tokens);
    auto corpus = load_corpus(o.corpus, warn_to_stderr);
    std::map<std::string, size_t> by_id;
    for (size_t i = 0; i < corpus.size(); ++i) by_id[corpus[i].id] = i;
    std::vector<RnaStructure> matched;
    for (const auto& t : tokens) {
        auto it = by_id.find(t.id);
        if (it == by_id.end()) throw PipelineError("analyze: no structure for token id " + t.id);
        if (corpus[it->second].length() != t.length())
            throw PipelineError("analyze: token/structure length mismatch for " + t.id);
        matched.push_back(corpus[it->second]);
    }

    AnalyzeOptions opt;
    opt.ngram_sizes.clear();
    std::istringstream ns(o.ngrams);
    std::string tok;
    while (std::getline(ns, tok, ',')) opt.ngram_sizes.push_back(std::stoi(tok));
    opt.top_k = o.top_k;
    opt.dot_bracket_path = o.dotbracket;

    int64_t codebook = tokens.empty() ? 0 : tokens[0].levels.codebook_size();
    run_analysis(tokens, matched, opt, codebook, o.common.out, warn_to_stderr);
    write_manifest(o.common.out, "analyze", cfg, {{"tokens", o.tokens}, {"corpus", o.corpus}});
    std::cout << "analysis written to " << o.common.out << "\n";
    return 0;
}

// --- invfold ---------------------------------------------------------------------

struct InvFoldTrainOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string corpus;
    std::optional<int> steps;
    std::optional<double> lr;
    double stop_recovery = 0.0;
};

void save_invfold_checkpoint(const std::string& path, const RunConfig& cfg,
                             const ParamStore& inv_params) {
    std::ostringstream meta;
    meta << "format=ribosphere-invfold\n";
    meta << "[config]\n" << cfg.serialize();
    save_checkpoint(path, meta.str(), inv_params.entries());
}

std::pair<RunConfig, Checkpoint> load_invfold_checkpoint(const std::string& path) {
    auto ck = load_checkpoint(path);
    auto split = ck.meta.find("[config]\n");
    if (split == std::string::npos)
        throw CheckpointError("invfold checkpoint: missing embedded config in " + path);
    auto cfg = RunConfig::from_kv(parse_kv_text(ck.meta.substr(split + 9)));
    return {cfg, std::move(ck)};
}

int cmd_invfold_train(const InvFoldTrainOpts& o) {
    auto model = RiboSphereModel::load(o.checkpoint);
    RunConfig cfg = model.cfg;
    if (o.common.seed) cfg.seed = *o.common.seed;
    if (o.steps) cfg.inv_steps = *o.steps;
    if (o.lr) cfg.inv_lr = *o.lr;

    model.params.set_trainable(false); // frozen tokenizer: no gradients ever
    auto corpus = load_corpus(o.corpus, warn_to_stderr);

    ParamStore inv_params;
    InvFoldModel inv;
    Rng build_rng(cfg.seed ^ 0x1f01dULL);
    inv.build(inv_params, "invfold.", cfg.invfold(), build_rng);

    InvFoldTrainer trainer{inv, inv_params};
    for (const auto& s : corpus)
        trainer.samples.push_back(make_invfold_sample(model, cfg.invfold(), s));
    trainer.lr = cfg.inv_lr;
    trainer.steps = cfg.inv_steps;
    trainer.label_eps = cfg.label_smoothing;
    trainer.stop_recovery = o.stop_recovery;
    Rng rng(cfg.seed ^ 0x72a17ULL);
    auto res = trainer.run(rng);

    fs::create_directories(o.common.out);
    save_invfold_checkpoint(o.common.out + "/invfold.rscp", cfg, inv_params);
    append_log_file(o.common.out + "/log.tsv", res.log, true, true);
    write_manifest(o.common.out, "invfold-train", cfg,
                   {{"checkpoint", o.checkpoint}, {"corpus", o.corpus}});
    double rec = res.log.empty() ? 0.0 : res.log.back().extra;
    std::cout << "invfold trained " << res.final_step << " steps, teacher-forced recovery "
              << std::setprecision(4) << rec << "\n";
    return 0;
}

struct InvFoldSampleOpts {
    CommonOpts common;
    std::string checkpoint; // tokenizer
    std::string invfold;    // adapter/decoder weights
    std::string corpus;
    double temperature = 1.0;
    int samples = 16;
};

int cmd_invfold_sample(const InvFoldSampleOpts& o) {
    auto model = RiboSphereModel::load(o.checkpoint);
    model.params.set_trainable(false);
    auto [cfg, ck] = load_invfold_checkpoint(o.invfold);
    if (o.common.seed) cfg.seed = *o.common.seed;

    ParamStore inv_params;
    InvFoldModel inv;
    Rng build_rng(cfg.seed ^ 0x1f01dULL);
    inv.build(inv_params, "invfold.", cfg.invfold(), build_rng);
    restore_params(ck, inv_params);

    auto corpus = load_corpus(o.corpus, warn_to_stderr);
    fs::create_directories(o.common.out);
    std::ofstream fasta(o.common.out + "/designs.fasta", std::ios::trunc);
    Rng rng(cfg.seed ^ 0x5a3e11ULL);
    for (const auto& s : corpus) {
        auto sample = make_invfold_sample(model, cfg.invfold(), s);
        auto geo = inv.adapter.forward(sample.cond, sample.v_local, sample.L);
        for (int k = 0; k < o.samples; ++k) {
            auto seq = inv.decode_autoregressive(geo, sample.L, o.temperature, rng);
            fasta << ">" << s.id << "|T=" << o.temperature << "|sample=" << k << "\n"
                  << seq << "\n";
        }
    }
    write_manifest(o.common.out, "invfold-sample", cfg,
                   {{"checkpoint", o.checkpoint}, {"invfold", o.invfold}, {"corpus", o.corpus}});
    std::cout << "wrote " << o.common.out << "/designs.fasta\n";
    return 0;
}

struct SweepOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string invfold;
    std::string corpus;
};

int cmd_sweep(const SweepOpts& o) {
    auto model = RiboSphereModel::load(o.checkpoint);
    model.params.set_trainable(false);
    auto [cfg, ck] = load_invfold_checkpoint(o.invfold);
    if (o.common.seed) cfg.seed = *o.common.seed;

    ParamStore inv_params;
    InvFoldModel inv;
    Rng build_rng(cfg.seed ^ 0x1f01dULL);
    inv.build(inv_params, "invfold.", cfg.invfold(), build_rng);
    restore_params(ck, inv_params);

    auto corpus = load_corpus(o.corpus, warn_to_stderr);
    std::vector<SweepInput> inputs;
    for (const auto& s : corpus) {
        auto sample = make_invfold_sample(model, cfg.invfold(), s);
        SweepInput in;
        in.native_sequence = sample.sequence;
        in.L = sample.L;
        in.geo = inv.adapter.forward(sample.cond, sample.v_local, sample.L);
        inputs.push_back(std::move(in));
    }
    Rng rng(cfg.seed ^ 0x53eebULL);
    auto rows = tradeoff_sweep(inv, inputs, cfg.temperatures(), cfg.sweep_samples, rng);

    fs::create_directories(o.common.out);
    std::ofstream os(o.common.out + "/sweep.tsv", std::ios::trunc);
    os << "temperature\trecovery_mean\trecovery_best\tdiversity\n" << std::setprecision(10);
    for (const auto& r : rows)
        os << r.temperature << "\t" << r.recovery_mean << "\t" << r.recovery_best << "\t"
           << r.diversity << "\n";
    write_manifest(o.common.out, "sweep", cfg,
                   {{"checkpoint", o.checkpoint}, {"invfold", o.invfold}, {"corpus", o.corpus}});
    std::cout << "sweep over " << rows.size() << " temperatures written to " << o.common.out
              << "/sweep.tsv\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ribosphere: discrete geometric RNA structure representation pipeline"};
    app.require_subcommand(1);

    IngestOpts ingest_o;
    auto* ingest = app.add_subcommand("ingest", "build a corpus from PDB files and/or synthetic helices");
    ingest_o.common.attach(ingest);
    ingest->add_option("--pdb", ingest_o.pdb_paths, "PDB files or directories");
    ingest->add_option("--synth", ingest_o.synth, "number of synthetic helices");
    ingest->add_option("--len-min", ingest_o.len_min, "min synthetic length");
    ingest->add_option("--len-max", ingest_o.len_max, "max synthetic length");
    ingest->add_option("--twist", ingest_o.twist, "helical twist (deg/residue)");
    ingest->add_option("--rise", ingest_o.rise, "helical rise (A/residue)");
    ingest->add_option("--atoms", ingest_o.atoms, "atom set: A1|A10|A11|B6");

    TrainOpts train_o;
    auto* train = app.add_subcommand("train", "train the encoder/FSQ/flow-decoder autoencoder");
    train_o.common.attach(train);
    train->add_option("--corpus", train_o.corpus, "corpus directory")->required();
    train->add_option("--resume", train_o.resume, "checkpoint to resume from");
    train->add_option("--steps", train_o.steps, "optimizer steps override");
    train->add_option("--lr", train_o.lr, "learning rate override");

    TokenizeOpts tok_o;
    auto* tok = app.add_subcommand("tokenize", "encode structures into discrete tokens");
    tok_o.common.attach(tok);
    tok->add_option("--checkpoint", tok_o.checkpoint, "model checkpoint")->required();
    tok->add_option("--corpus", tok_o.corpus, "corpus directory")->required();

    ReconstructOpts rec_o;
    auto* rec = app.add_subcommand("reconstruct", "sample coordinates from token files");
    rec_o.common.attach(rec);
    rec->add_option("--checkpoint", rec_o.checkpoint, "model checkpoint")->required();
    rec->add_option("--tokens", rec_o.tokens, "token file")->required();
    rec->add_option("--ref", rec_o.ref, "reference corpus supplying sequences by id");
    rec->add_option("--steps", rec_o.steps, "sampler integration steps");
    rec->add_option("--guidance", rec_o.guidance, "classifier-free guidance weight");
    rec->add_option("--eta", rec_o.eta, "score scaling (SDE sampler)");
    rec->add_option("--gamma", rec_o.gamma, "noise intensity (SDE sampler)");

    EvaluateOpts eval_o;
    auto* eval = app.add_subcommand("evaluate", "score predictions against references");
    eval_o.common.attach(eval);
    eval->add_option("--pred", eval_o.pred, "predicted corpus directory");
    eval->add_option("--ref", eval_o.ref, "reference corpus directory");
    eval->add_option("--scores", eval_o.scores, "score/label file: AUROC mode");

    AnalyzeOpts2 ana_o;
    auto* ana = app.add_subcommand("analyze", "codebook n-gram and motif analysis");
    ana_o.common.attach(ana);
    ana->add_option("--tokens", ana_o.tokens, "token file")->required();
    ana->add_option("--corpus", ana_o.corpus, "corpus directory")->required();
    ana->add_option("--dotbracket", ana_o.dotbracket, "id<TAB>dot-bracket file");
    ana->add_option("--ngrams", ana_o.ngrams, "comma-separated n-gram sizes");
    ana->add_option("--top-k", ana_o.top_k, "rows per n-gram table");

    InvFoldTrainOpts ift_o;
    auto* ift = app.add_subcommand("invfold-train", "train the inverse-folding adapter/decoder");
    ift_o.common.attach(ift);
    ift->add_option("--checkpoint", ift_o.checkpoint, "frozen tokenizer checkpoint")->required();
    ift->add_option("--corpus", ift_o.corpus, "corpus directory")->required();
    ift->add_option("--steps", ift_o.steps, "training steps override");
    ift->add_option("--lr", ift_o.lr, "learning rate override");
    ift->add_option("--stop-recovery", ift_o.stop_recovery,
                    "early-stop once teacher-forced recovery exceeds this");

    InvFoldSampleOpts ifs_o;
    auto* ifs = app.add_subcommand("invfold-sample", "design sequences for backbones");
    ifs_o.common.attach(ifs);
    ifs->add_option("--checkpoint", ifs_o.checkpoint, "frozen tokenizer checkpoint")->required();
    ifs->add_option("--invfold", ifs_o.invfold, "invfold checkpoint")->required();
    ifs->add_option("--corpus", ifs_o.corpus, "corpus directory")->required();
    ifs->add_option("--temperature", ifs_o.temperature, "sampling temperature (<= 0: argmax)");
    ifs->add_option("--samples", ifs_o.samples, "sequences per structure");

    SweepOpts sweep_o;
    auto* sweep = app.add_subcommand("sweep", "recovery-diversity temperature sweep");
    sweep_o.common.attach(sweep);
    sweep->add_option("--checkpoint", sweep_o.checkpoint, "frozen tokenizer checkpoint")->required();
    sweep->add_option("--invfold", sweep_o.invfold, "invfold checkpoint")->required();
    sweep->add_option("--corpus", sweep_o.corpus, "corpus directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*ingest) return cmd_ingest(ingest_o);
        if (*train) return cmd_train(train_o);
        if (*tok) return cmd_tokenize(tok_o);
        if (*rec) return cmd_reconstruct(rec_o);
        if (*eval) return cmd_evaluate(eval_o);
        if (*ana) return cmd_analyze(ana_o);
        if (*ift) return cmd_invfold_train(ift_o);
        if (*ifs) return cmd_invfold_sample(ifs_o);
        if (*sweep) return cmd_sweep(sweep_o);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
