#pragma once

// End-to-end drivers shared by the CLI and the acceptance suite: corpus
// ingest/load, threaded tokenize/reconstruct/evaluate fan-out, the codebook
// analysis report and run manifests. Worker outputs are slotted by input
// index and per-item rngs are derived from (seed, index), so results are
// byte-identical regardless of thread count.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ribosphere/codebook.hpp"
#include "ribosphere/metrics.hpp"
#include "ribosphere/model.hpp"
#include "ribosphere/train.hpp"
#include "ribosphere/version.hpp"

namespace ribosphere {

namespace fs = std::filesystem;

struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Parallel map with deterministic output order
// ---------------------------------------------------------------------------

template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
    threads = std::max(1, threads);
    if (threads == 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Per-item rng independent of thread scheduling.
inline Rng item_rng(uint64_t seed, size_t index) {
    Rng mix(seed ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
    mix.next_u64();
    return mix;
}

// ---------------------------------------------------------------------------
// Corpus directory: index.tsv + one PDB per structure
// ---------------------------------------------------------------------------

inline void save_corpus(const std::string& dir, const std::vector<RnaStructure>& structures) {
    fs::create_directories(dir);
    std::ofstream idx(dir + "/index.tsv", std::ios::trunc);
    if (!idx) throw PipelineError("cannot write corpus index in " + dir);
    idx << "id\tfile\tlength\tatoms\n";
    for (const auto& s : structures) {
        std::string file = s.id + ".pdb";
        std::ofstream os(dir + "/" + file, std::ios::trunc);
        os << write_pdb(s);
        idx << s.id << "\t" << file << "\t" << s.length() << "\t" << atom_set_name(s.atom_set)
            << "\n";
    }
}

inline std::vector<RnaStructure> load_corpus(const std::string& dir, const WarnFn& warn = nullptr) {
    std::ifstream idx(dir + "/index.tsv");
    if (!idx) throw PipelineError("corpus index not found: " + dir + "/index.tsv");
    std::string line;
    std::getline(idx, line); // header
    std::vector<RnaStructure> out;
    while (std::getline(idx, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, file, len, atoms;
        if (!std::getline(ls, id, '\t') || !std::getline(ls, file, '\t') ||
            !std::getline(ls, len, '\t') || !std::getline(ls, atoms))
            throw PipelineError("corpus index: malformed row '" + line + "'");
        std::ifstream ps(dir + "/" + file);
        if (!ps) throw PipelineError("corpus file missing: " + file);
        std::stringstream buf;
        buf << ps.rdbuf();
        auto parsed = parse_pdb(buf.str(), atom_set_from_name(atoms), id, warn);
        if (parsed.size() != 1)
            throw PipelineError("corpus file " + file + " holds " +
                                std::to_string(parsed.size()) + " structures, expected 1");
        parsed[0].id = id; // index id wins over derived chain naming
        out.push_back(std::move(parsed[0]));
    }
    if (out.empty()) throw PipelineError("corpus is empty: " + dir);
    return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline void write_manifest(const std::string& out_dir, const std::string& command,
                           const RunConfig& cfg,
                           const std::vector<std::pair<std::string, std::string>>& inputs) {
    fs::create_directories(out_dir);
    std::string cfg_text = cfg.serialize();
    {
        std::ofstream os(out_dir + "/config_used.cfg", std::ios::trunc);
        os << cfg_text;
    }
    std::ofstream os(out_dir + "/manifest.txt", std::ios::trunc);
    os << "command=" << command << "\n";
    os << "version=" << kVersion << "\n";
    os << "seed=" << cfg.seed << "\n";
    os << "config_hash=" << std::hex << fnv1a64_str(cfg_text) << std::dec << "\n";
    for (const auto& [k, v] : inputs) os << k << "=" << v << "\n";
}

// ---------------------------------------------------------------------------
// Tokenize / reconstruct / evaluate drivers
// ---------------------------------------------------------------------------

inline std::vector<TokenSequence> tokenize_corpus(const RiboSphereModel& model,
                                                  const std::vector<RnaStructure>& structures,
                                                  int threads) {
    std::vector<TokenSequence> tokens(structures.size());
    parallel_for(structures.size(), threads,
                 [&](size_t i) { tokens[i] = model.tokenize(structures[i]); });
    return tokens;
}

inline std::vector<RnaStructure> reconstruct_corpus(const RiboSphereModel& model,
                                                    const std::vector<TokenSequence>& tokens,
                                                    const std::vector<std::string>& sequences,
                                                    const SamplerConfig& sampler, uint64_t seed,
                                                    int threads) {
    std::vector<RnaStructure> out(tokens.size());
    parallel_for(tokens.size(), threads, [&](size_t i) {
        Rng rng = item_rng(seed, i);
        out[i] = model.reconstruct_from_tokens(
            tokens[i], i < sequences.size() ? sequences[i] : std::string(), sampler, rng);
    });
    return out;
}

struct EvaluationReport {
    std::vector<MetricsRow> rows;
    MetricsRow aggregate; // mean over structures
};

inline EvaluationReport evaluate_corpus(const std::vector<RnaStructure>& pred,
                                        const std::vector<RnaStructure>& ref, int threads,
                                        std::vector<std::vector<double>>* per_residue_lddt = nullptr) {
    if (pred.size() != ref.size()) throw PipelineError("evaluate: pred/ref count mismatch");
    if (pred.empty()) throw PipelineError("evaluate: empty input");
    EvaluationReport rep;
    rep.rows.resize(pred.size());
    if (per_residue_lddt) per_residue_lddt->resize(pred.size());
    parallel_for(pred.size(), threads, [&](size_t i) {
        if (pred[i].id != ref[i].id)
            throw PipelineError("evaluate: id mismatch at row " + std::to_string(i) + ": " +
                                pred[i].id + " vs " + ref[i].id);
        rep.rows[i] =
            evaluate_pair(pred[i], ref[i], per_residue_lddt ? &(*per_residue_lddt)[i] : nullptr);
    });
    rep.aggregate.id = "MEAN";
    for (const auto& r : rep.rows) {
        rep.aggregate.length += r.length;
        rep.aggregate.rmsd_all += r.rmsd_all;
        rep.aggregate.rmsd_c4 += r.rmsd_c4;
        rep.aggregate.tm += r.tm;
        rep.aggregate.lddt_score += r.lddt_score;
    }
    double n = static_cast<double>(rep.rows.size());
    rep.aggregate.length = static_cast<int>(rep.aggregate.length / n);
    rep.aggregate.rmsd_all /= n;
    rep.aggregate.rmsd_c4 /= n;
    rep.aggregate.tm /= n;
    rep.aggregate.lddt_score /= n;
    return rep;
}

// Fixed, documented columns. The same numbers also go to metrics.json.
inline void write_metrics_tsv(std::ostream& os, const EvaluationReport& rep) {
    os << "id\tlength\trmsd_all\trmsd_c4\ttm_score\tlddt\n";
    os << std::setprecision(10);
    for (const auto& r : rep.rows)
        os << r.id << "\t" << r.length << "\t" << r.rmsd_all << "\t" << r.rmsd_c4 << "\t" << r.tm
           << "\t" << r.lddt_score << "\n";
    const auto& a = rep.aggregate;
    os << a.id << "\t" << a.length << "\t" << a.rmsd_all << "\t" << a.rmsd_c4 << "\t" << a.tm
       << "\t" << a.lddt_score << "\n";
}

inline void write_metrics_json(std::ostream& os, const EvaluationReport& rep) {
    nlohmann::json j;
    auto row_json = [](const MetricsRow& r) {
        return nlohmann::json{{"id", r.id},
                              {"length", r.length},
                              {"rmsd_all", r.rmsd_all},
                              {"rmsd_c4", r.rmsd_c4},
                              {"tm_score", r.tm},
                              {"lddt", r.lddt_score}};
    };
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rep.rows) j["rows"].push_back(row_json(r));
    j["mean"] = row_json(rep.aggregate);
    os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Codebook analysis driver
// ---------------------------------------------------------------------------

struct AnalyzeOptions {
    std::vector<int> ngram_sizes = {5, 7};
    int top_k = 20;
    int max_instance_pdbs = 3; // per n, bundles written for visual inspection
    std::string dot_bracket_path; // optional id<TAB>dotbracket file
};

inline std::map<std::string, std::string> read_dot_bracket_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw PipelineError("cannot open dot-bracket file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw PipelineError("dot-bracket file: malformed line '" + line + "'");
        out[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return out;
}

inline Points c4_span(const RnaStructure& s, int start, int n) {
    Points p;
    int c4 = c4_index(s.atom_set);
    for (int i = start; i < start + n; ++i) p.push_back(s.atom_vec(i, c4));
    return p;
}

// Ranked n-gram table with geometric consistency, motif divergence tables and
// instance coordinate bundles.
inline void run_analysis(const std::vector<TokenSequence>& tokens,
                         const std::vector<RnaStructure>& structures, const AnalyzeOptions& opt,
                         int64_t codebook_size, const std::string& out_dir,
                         const WarnFn& warn = nullptr) {
    if (tokens.size() != structures.size())
        throw PipelineError("analyze: token/structure count mismatch");
    fs::create_directories(out_dir);

    // --- n-gram mining + consistency ---
    std::ofstream ng(out_dir + "/ngrams.tsv", std::ios::trunc);
    ng << "n\trank\tngram\tcount\tinstances\tmean_pairwise_rmsd\n";
    ng << std::setprecision(10);
    for (int n : opt.ngram_sizes) {
        std::vector<NgramStat> stats;
        try {
            stats = mine_ngrams(tokens, n);
        } catch (const AnalysisError& e) {
            if (warn) warn(std::string("analyze: ") + e.what());
            continue;
        }
        int rank = 0;
        for (const auto& st : stats) {
            if (rank >= opt.top_k) break;
            ++rank;
            double mean_rmsd = 0.0;
            if (st.instances.size() >= 2) {
                std::vector<Points> traces;
                for (const auto& inst : st.instances)
                    traces.push_back(c4_span(structures[inst.structure_index], inst.start, n));
                mean_rmsd = ngram_consistency(traces).mean_rmsd;
            }
            std::ostringstream key;
            for (size_t i = 0; i < st.ngram.size(); ++i) key << (i ? "-" : "") << st.ngram[i];
            ng << n << "\t" << rank << "\t" << key.str() << "\t" << st.count << "\t"
               << st.instances.size() << "\t" << mean_rmsd << "\n";

            // instance bundle as multi-model PDB for the top few
            if (rank <= opt.max_instance_pdbs && st.instances.size() >= 2) {
                std::ofstream pdb(out_dir + "/ngram_" + std::to_string(n) + "_rank" +
                                      std::to_string(rank) + ".pdb",
                                  std::ios::trunc);
                int model_no = 1;
                for (const auto& inst : st.instances) {
                    const auto& s = structures[inst.structure_index];
                    RnaStructure span;
                    span.id = s.id;
                    span.chain_id = s.chain_id;
                    span.atom_set = s.atom_set;
                    span.sequence = s.sequence.substr(inst.start, n);
                    int A = s.atoms();
                    span.coords.assign(s.coords.begin() + static_cast<size_t>(inst.start) * A * 3,
                                       s.coords.begin() +
                                           static_cast<size_t>(inst.start + n) * A * 3);
                    span.mask.assign(s.mask.begin() + static_cast<size_t>(inst.start) * A,
                                     s.mask.begin() + static_cast<size_t>(inst.start + n) * A);
                    pdb << write_pdb(span, nullptr, model_no++);
                }
            }
        }
    }

    // --- motif-conditioned token distributions ---
    std::map<std::string, std::string> db;
    bool heuristic = opt.dot_bracket_path.empty();
    if (!heuristic) db = read_dot_bracket_file(opt.dot_bracket_path);

    std::map<MotifClass, std::vector<int64_t>> motif_tokens;
    std::vector<int64_t> background;
    for (size_t si = 0; si < structures.size(); ++si) {
        const auto& s = structures[si];
        std::vector<std::pair<int, int>> pairs;
        if (heuristic) {
            pairs = heuristic_base_pairs(s);
        } else {
            auto it = db.find(s.id);
            if (it == db.end()) {
                if (warn) warn("analyze: no dot-bracket entry for " + s.id + ", skipping");
                continue;
            }
            if (static_cast<int>(it->second.size()) != s.length())
                throw PipelineError("analyze: dot-bracket length mismatch for " + s.id);
            pairs = parse_dot_bracket(it->second);
        }
        for (const auto& ann : annotate_motifs(s.length(), pairs, s.id)) {
            auto& sink =
                ann.cls == MotifClass::Background ? background : motif_tokens[ann.cls];
            for (auto& [a, b] : ann.segments)
                for (int r = a; r <= b; ++r) sink.push_back(tokens[si].indices[r]);
        }
    }

    std::ofstream md(out_dir + "/motif_divergence.tsv", std::ios::trunc);
    md << "# annotation source: " << (heuristic ? "heuristic (distance window)" : "dot-bracket file")
       << "\n";
    md << "motif\ttokens\tkl_vs_background_nats\tjs_divergence\tjs_distance\n";
    md << std::setprecision(10);
    std::vector<std::pair<std::string, std::vector<int64_t>*>> motif_list;
    for (auto& [cls, toks] : motif_tokens)
        motif_list.emplace_back(motif_class_name(cls), &toks);
    for (auto& [name, toks] : motif_list) {
        if (toks->empty()) continue;
        double kl = motif_kl(*toks, background, codebook_size);
        double js = motif_js(*toks, background, codebook_size);
        md << name << "\t" << toks->size() << "\t" << kl << "\t" << js << "\t" << std::sqrt(js)
           << "\n";
    }
    md << "background\t" << background.size() << "\t0\t0\t0\n";

    // pairwise motif JS matrix
    std::ofstream jm(out_dir + "/js_matrix.tsv", std::ios::trunc);
    jm << std::setprecision(10);
    jm << "motif";
    for (auto& [name, _] : motif_list) jm << "\t" << name;
    jm << "\n";
    for (auto& [ra, ta] : motif_list) {
        jm << ra;
        for (auto& [rb, tb] : motif_list)
            jm << "\t" << (ta->empty() || tb->empty() ? 0.0 : motif_js(*ta, *tb, codebook_size));
        jm << "\n";
    }
}

} // namespace ribosphere
