#pragma once

// Codebook interpretability tooling: frequent token n-gram mining, geometric
// consistency of n-gram instances, motif-conditioned token distribution
// divergences, and loop-motif annotation from secondary structure.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ribosphere/fsq.hpp"
#include "ribosphere/metrics.hpp"
#include "ribosphere/structure.hpp"

namespace ribosphere {

struct AnalysisError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// N-gram mining
// ---------------------------------------------------------------------------

struct NgramInstance {
    size_t structure_index = 0; // into the token corpus
    int start = 0;
};

struct NgramStat {
    std::vector<int64_t> ngram;
    int64_t count = 0;
    std::vector<NgramInstance> instances;
};

// Exact sliding-window counts over the corpus, ranked by (count desc, ngram
// lexicographic asc). Deterministic.
inline std::vector<NgramStat> mine_ngrams(const std::vector<TokenSequence>& corpus, int n) {
    if (n < 1) throw AnalysisError("mine_ngrams: n must be >= 1");
    if (corpus.empty()) throw AnalysisError("mine_ngrams: empty corpus");
    std::map<std::vector<int64_t>, NgramStat> table;
    bool any = false;
    for (size_t s = 0; s < corpus.size(); ++s) {
        const auto& idx = corpus[s].indices;
        if (static_cast<int>(idx.size()) < n) continue;
        any = true;
        for (int i = 0; i + n <= static_cast<int>(idx.size()); ++i) {
            std::vector<int64_t> key(idx.begin() + i, idx.begin() + i + n);
            auto& stat = table[key];
            if (stat.ngram.empty()) stat.ngram = key;
            ++stat.count;
            stat.instances.push_back({s, i});
        }
    }
    if (!any) throw AnalysisError("mine_ngrams: n exceeds every sequence length");
    std::vector<NgramStat> out;
    out.reserve(table.size());
    for (auto& [k, v] : table) out.push_back(std::move(v));
    std::sort(out.begin(), out.end(), [](const NgramStat& a, const NgramStat& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.ngram < b.ngram;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Geometric consistency of n-gram instances
// ---------------------------------------------------------------------------

struct ConsistencyResult {
    double mean_rmsd = 0.0;
    std::vector<std::vector<double>> pair_matrix; // upper triangle filled, symmetric
};

// Kabsch-aligned RMSD over the C4' traces of all unordered instance pairs.
inline ConsistencyResult ngram_consistency(const std::vector<Points>& instance_traces) {
    size_t n = instance_traces.size();
    if (n < 2) throw AnalysisError("ngram_consistency: need at least 2 instances");
    for (const auto& t : instance_traces)
        if (t.size() != instance_traces[0].size())
            throw AnalysisError("ngram_consistency: instances of unequal length");
    ConsistencyResult r;
    r.pair_matrix.assign(n, std::vector<double>(n, 0.0));
    double sum = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            double v = rmsd(instance_traces[i], instance_traces[j], true);
            r.pair_matrix[i][j] = r.pair_matrix[j][i] = v;
            sum += v;
            ++pairs;
        }
    r.mean_rmsd = sum / static_cast<double>(pairs);
    return r;
}

// ---------------------------------------------------------------------------
// Distribution divergences
// ---------------------------------------------------------------------------

// KL(p || q) in nats over a shared support; both must be normalized and q
// strictly positive wherever p is.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw AnalysisError("kl_divergence: support mismatch");
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) throw AnalysisError("kl_divergence: q has zero mass where p > 0");
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

// Jensen-Shannon divergence (base e, bounded by ln 2).
inline double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw AnalysisError("js_divergence: support mismatch");
    if (p.empty()) throw AnalysisError("js_divergence: empty inputs");
    std::vector<double> m(p.size());
    for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
    double js = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m[i]);
        if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m[i]);
    }
    return js;
}

inline double js_distance(const std::vector<double>& p, const std::vector<double>& q) {
    return std::sqrt(js_divergence(p, q));
}

// Laplace-smoothed distribution over the full code space from raw counts.
inline std::vector<double> smoothed_distribution(const std::vector<int64_t>& token_ids,
                                                 int64_t codebook_size, double alpha = 1.0) {
    if (codebook_size < 1) throw AnalysisError("smoothed_distribution: empty code space");
    std::vector<double> d(codebook_size, alpha);
    for (int64_t t : token_ids) {
        if (t < 0 || t >= codebook_size)
            throw AnalysisError("smoothed_distribution: token outside the code space");
        d[t] += 1.0;
    }
    double total = alpha * static_cast<double>(codebook_size) +
                   static_cast<double>(token_ids.size());
    for (auto& v : d) v /= total;
    return d;
}

// KL(motif || background) in nats with additive smoothing alpha = 1.
inline double motif_kl(const std::vector<int64_t>& motif_tokens,
                       const std::vector<int64_t>& background_tokens, int64_t codebook_size,
                       double alpha = 1.0) {
    if (motif_tokens.empty()) throw AnalysisError("motif_kl: empty motif token set");
    auto p = smoothed_distribution(motif_tokens, codebook_size, alpha);
    auto q = smoothed_distribution(background_tokens, codebook_size, alpha);
    return kl_divergence(p, q);
}

inline double motif_js(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                       int64_t codebook_size, double alpha = 1.0) {
    auto p = smoothed_distribution(a, codebook_size, alpha);
    auto q = smoothed_distribution(b, codebook_size, alpha);
    return js_divergence(p, q);
}

// ---------------------------------------------------------------------------
// Motif annotation from secondary structure
// ---------------------------------------------------------------------------

enum class MotifClass { HL, IL, J3, Background };

inline const char* motif_class_name(MotifClass c) {
    switch (c) {
    case MotifClass::HL: return "HL";
    case MotifClass::IL: return "IL";
    case MotifClass::J3: return "J3";
    case MotifClass::Background: return "background";
    }
    return "?";
}

struct MotifAnnotation {
    std::string structure_id;
    MotifClass cls = MotifClass::Background;
    // One motif instance may span several strands (IL and J3 do); each
    // segment is a closed residue range [first, last].
    std::vector<std::pair<int, int>> segments;

    int size() const {
        int s = 0;
        for (auto& [a, b] : segments) s += b - a + 1;
        return s;
    }
};

// Dot-bracket string -> base-pair list. Round brackets only; other letters
// are treated as unpaired.
inline std::vector<std::pair<int, int>> parse_dot_bracket(const std::string& db) {
    std::vector<std::pair<int, int>> pairs;
    std::vector<int> stack;
    for (int i = 0; i < static_cast<int>(db.size()); ++i) {
        if (db[i] == '(')
            stack.push_back(i);
        else if (db[i] == ')') {
            if (stack.empty())
                throw AnalysisError("dot-bracket: unbalanced ')' at position " + std::to_string(i));
            pairs.emplace_back(stack.back(), i);
            stack.pop_back();
        }
    }
    if (!stack.empty()) throw AnalysisError("dot-bracket: unbalanced '('");
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

// Loop classification by the standard nesting decomposition. For each helix
// closing pair, the loop it closes is collected with its inner branches:
// 0 branches -> hairpin, 1 -> internal loop (bulges included), 2 -> three-way
// junction. Larger multiloops, exterior residues and stems are background.
inline std::vector<MotifAnnotation> annotate_motifs(int L,
                                                    const std::vector<std::pair<int, int>>& pairs,
                                                    const std::string& structure_id = "") {
    std::vector<int> partner(L, -1);
    for (auto& [i, j] : pairs) {
        if (i < 0 || j >= L || i >= j)
            throw AnalysisError("annotate_motifs: pair (" + std::to_string(i) + "," +
                                std::to_string(j) + ") out of bounds");
        if (partner[i] != -1 || partner[j] != -1)
            throw AnalysisError("annotate_motifs: residue paired twice");
        partner[i] = j;
        partner[j] = i;
    }

    std::vector<MotifAnnotation> out;
    std::vector<bool> in_motif(L, false);

    // A pair (i,j) closes a loop when it is the innermost pair enclosing the
    // region: walk i+1..j-1 skipping over inner helices.
    for (auto& [i, j] : pairs) {
        // skip pairs that merely stack inside a helix: (i+1, j-1) paired
        // together means (i,j) closes no loop of its own
        if (i + 1 < L && partner[i + 1] == j - 1) continue;

        std::vector<std::pair<int, int>> segments;
        int branches = 0;
        int k = i + 1;
        int seg_start = -1;
        bool crossing = false;
        while (k < j) {
            if (partner[k] == -1) {
                if (seg_start < 0) seg_start = k;
                ++k;
            } else {
                if (partner[k] < i || partner[k] > j) { // pseudoknot crossing
                    crossing = true;
                    break;
                }
                if (seg_start >= 0) {
                    segments.emplace_back(seg_start, k - 1);
                    seg_start = -1;
                }
                ++branches;
                k = partner[k] + 1; // jump over the inner helix
            }
        }
        if (crossing) continue; // crossing pairs are left unclassified
        if (seg_start >= 0) segments.emplace_back(seg_start, j - 1);

        MotifClass cls;
        if (branches == 0)
            cls = MotifClass::HL;
        else if (branches == 1)
            cls = MotifClass::IL;
        else if (branches == 2)
            cls = MotifClass::J3;
        else
            continue; // higher-order junctions stay background

        if (segments.empty()) continue; // no unpaired residue in the loop
        MotifAnnotation ann;
        ann.structure_id = structure_id;
        ann.cls = cls;
        ann.segments = segments;
        for (auto& [a, b] : segments)
            for (int r = a; r <= b; ++r) in_motif[r] = true;
        out.push_back(std::move(ann));
    }

    // Everything not covered by a classified loop is background (stems,
    // exterior, big multiloops).
    MotifAnnotation bg;
    bg.structure_id = structure_id;
    bg.cls = MotifClass::Background;
    int run = -1;
    for (int r = 0; r < L; ++r) {
        if (!in_motif[r]) {
            if (run < 0) run = r;
        } else if (run >= 0) {
            bg.segments.emplace_back(run, r - 1);
            run = -1;
        }
    }
    if (run >= 0) bg.segments.emplace_back(run, L - 1);
    if (!bg.segments.empty()) out.push_back(std::move(bg));
    return out;
}

// Fallback secondary-structure heuristic when no dot-bracket file is given:
// pair residues whose C1' (or C4') anchors sit in the Watson-Crick distance
// window, greedily by closeness to the ideal 10.4 A, keeping only nested
// (non-crossing) pairs separated by at least 3 residues. Output produced
// this way is labeled "heuristic" by callers.
inline std::vector<std::pair<int, int>> heuristic_base_pairs(const RnaStructure& s,
                                                             double ideal = 10.4,
                                                             double tol = 1.2) {
    int L = s.length();
    auto names = atom_set_names(s.atom_set, 'A');
    int anchor = c4_index(s.atom_set);
    for (int a = 0; a < s.atoms(); ++a)
        if (names[a] == "C1'") anchor = a;

    struct Cand {
        double err;
        int i, j;
    };
    std::vector<Cand> cands;
    for (int i = 0; i < L; ++i)
        for (int j = i + 4; j < L; ++j) {
            if (!s.present(i, anchor) || !s.present(j, anchor)) continue;
            double d = norm(s.atom_vec(i, anchor) - s.atom_vec(j, anchor));
            if (std::fabs(d - ideal) <= tol) cands.push_back({std::fabs(d - ideal), i, j});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.err != b.err) return a.err < b.err;
        return std::tie(a.i, a.j) < std::tie(b.i, b.j);
    });
    std::vector<int> partner(L, -1);
    std::vector<std::pair<int, int>> pairs;
    for (const auto& c : cands) {
        if (partner[c.i] != -1 || partner[c.j] != -1) continue;
        bool crossing = false;
        for (auto& [a, b] : pairs)
            if ((a < c.i && c.i < b && b < c.j) || (c.i < a && a < c.j && c.j < b)) {
                crossing = true;
                break;
            }
        if (crossing) continue;
        partner[c.i] = c.j;
        partner[c.j] = c.i;
        pairs.emplace_back(c.i, c.j);
    }
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

} // namespace ribosphere
