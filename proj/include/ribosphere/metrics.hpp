#pragma once

// Structure comparison metrics: Kabsch superposition, RMSD, TM-score, lDDT,
// sequence recovery, 3-mer diversity and AUROC. All functions are pure and
// operate on plain double arrays; nothing here touches the tensor core.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ribosphere/geom.hpp"
#include "ribosphere/structure.hpp"

namespace ribosphere {

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Points = std::vector<Vec3>;

struct Alignment {
    Mat3 rotation = mat3_identity();
    Vec3 translation{0, 0, 0};

    Vec3 apply(const Vec3& v) const { return mat3_apply(rotation, v) + translation; }
};

// ---------------------------------------------------------------------------
// Kabsch (quaternion formulation, always returns a proper rotation)
// ---------------------------------------------------------------------------

namespace detail_metrics {

inline Vec3 points_centroid(const Points& p) {
    Vec3 c{0, 0, 0};
    for (const auto& v : p) c = c + v;
    return c * (1.0 / static_cast<double>(p.size()));
}

// Second-largest eigenvalue of the 3x3 covariance; used to detect collinear
// (rank < 2) configurations for which the optimal rotation is ill-defined.
inline double second_spread(const Points& p) {
    Vec3 c = points_centroid(p);
    std::array<double, 9> cov{};
    for (const auto& v : p) {
        Vec3 d = v - c;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) cov[3 * i + j] += d[i] * d[j];
    }
    std::array<double, 3> evals;
    std::array<double, 9> evecs;
    jacobi_eigen_sym<3>(cov, evals, evecs);
    return evals[1]; // ascending order -> middle eigenvalue
}

} // namespace detail_metrics

// Least-squares superposition of `mobile` onto `reference` over paired
// indices. Horn's quaternion method: the rotation maximizing the paired dot
// products is the top eigenvector of a 4x4 symmetric matrix, and is proper
// (det +1) by construction, which handles the mirror-image trap correctly.
inline Alignment kabsch_align(const Points& mobile, const Points& reference) {
    if (mobile.size() != reference.size())
        throw MetricError("kabsch_align: point count mismatch");
    size_t n = mobile.size();
    if (n < 3) throw MetricError("kabsch_align: need at least 3 points");

    Vec3 cm = detail_metrics::points_centroid(mobile);
    Vec3 cr = detail_metrics::points_centroid(reference);

    double spread_m = detail_metrics::second_spread(mobile);
    double spread_r = detail_metrics::second_spread(reference);
    double scale = 0.0;
    for (size_t i = 0; i < n; ++i) scale += dot(mobile[i] - cm, mobile[i] - cm);
    if (spread_m <= 1e-12 * std::max(scale, 1.0) || spread_r <= 1e-12 * std::max(scale, 1.0))
        throw MetricError("kabsch_align: degenerate (collinear, rank < 2) configuration");

    // Cross-covariance S = sum mobile_i' (x) reference_i'
    std::array<double, 9> S{};
    for (size_t i = 0; i < n; ++i) {
        Vec3 a = mobile[i] - cm, b = reference[i] - cr;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) S[3 * r + c] += a[r] * b[c];
    }
    const double Sxx = S[0], Sxy = S[1], Sxz = S[2];
    const double Syx = S[3], Syy = S[4], Syz = S[5];
    const double Szx = S[6], Szy = S[7], Szz = S[8];

    std::array<double, 16> K = {
        Sxx + Syy + Szz, Syz - Szy,        Szx - Sxz,        Sxy - Syx,
        Syz - Szy,       Sxx - Syy - Szz,  Sxy + Syx,        Szx + Sxz,
        Szx - Sxz,       Sxy + Syx,        -Sxx + Syy - Szz, Syz + Szy,
        Sxy - Syx,       Szx + Sxz,        Syz + Szy,        -Sxx - Syy + Szz};

    std::array<double, 4> evals;
    std::array<double, 16> evecs;
    jacobi_eigen_sym<4>(K, evals, evecs);
    // Largest eigenvalue is last (ascending); eigenvector is its column.
    double qw = evecs[0 * 4 + 3], qx = evecs[1 * 4 + 3], qy = evecs[2 * 4 + 3],
           qz = evecs[3 * 4 + 3];
    double qn = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    Alignment al;
    al.rotation = rotation_from_quaternion(qw / qn, qx / qn, qy / qn, qz / qn);
    al.translation = cr - mat3_apply(al.rotation, cm);
    return al;
}

// ---------------------------------------------------------------------------
// RMSD
// ---------------------------------------------------------------------------

inline double rmsd(const Points& a, const Points& b, bool align) {
    if (a.size() != b.size()) throw MetricError("rmsd: point count mismatch");
    if (a.empty()) throw MetricError("rmsd: empty input");
    Points aa = a;
    if (align) {
        Alignment al = kabsch_align(a, b);
        for (auto& p : aa) p = al.apply(p);
    }
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += dot(aa[i] - b[i], aa[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// TM-score
// ---------------------------------------------------------------------------

inline double tm_d0(int L) {
    double raw = 1.24 * std::cbrt(std::max(static_cast<double>(L) - 15.0, 0.0)) - 1.8;
    return std::max(raw, 0.5); // formula is non-positive for L <= 18
}

// TM-score over index-paired residues (C4' traces). The superposition search
// fits contiguous fragments of lengths L, L/2 and L/4 at every start offset,
// always scoring over all L residues, and keeps the best score.
inline double tm_score_points(const Points& pred, const Points& ref) {
    if (pred.size() != ref.size()) throw MetricError("tm_score: length mismatch");
    int L = static_cast<int>(pred.size());
    if (L < 3) throw MetricError("tm_score: need at least 3 residues");
    double d0 = tm_d0(L);
    double d0sq = d0 * d0;

    auto score_with = [&](const Alignment& al) {
        double s = 0.0;
        for (int i = 0; i < L; ++i) {
            Vec3 p = al.apply(pred[i]);
            double dsq = dot(p - ref[i], p - ref[i]);
            s += d0sq / (d0sq + dsq);
        }
        return s / L;
    };

    double best = 0.0;
    for (int frag : {L, L / 2, L / 4}) {
        if (frag < 3) continue;
        for (int start = 0; start + frag <= L; ++start) {
            Points pf(pred.begin() + start, pred.begin() + start + frag);
            Points rf(ref.begin() + start, ref.begin() + start + frag);
            try {
                Alignment al = kabsch_align(pf, rf);
                best = std::max(best, score_with(al));
            } catch (const MetricError&) {
                // degenerate fragment: skip this candidate
            }
        }
    }
    if (best == 0.0) throw MetricError("tm_score: no valid superposition candidate");
    return best;
}

// C4' extraction honoring masks in both structures.
inline Points c4_trace_paired(const RnaStructure& a, const RnaStructure& b, bool first) {
    if (a.length() != b.length()) throw MetricError("paired trace: length mismatch");
    int c4a = c4_index(a.atom_set), c4b = c4_index(b.atom_set);
    Points out;
    for (int i = 0; i < a.length(); ++i)
        if (a.present(i, c4a) && b.present(i, c4b))
            out.push_back(first ? a.atom_vec(i, c4a) : b.atom_vec(i, c4b));
    return out;
}

inline double tm_score(const RnaStructure& pred, const RnaStructure& ref) {
    return tm_score_points(c4_trace_paired(pred, ref, true), c4_trace_paired(pred, ref, false));
}

// ---------------------------------------------------------------------------
// lDDT
// ---------------------------------------------------------------------------

// Superposition-free local distance test over atom pairs from different
// residues whose reference distance is below `cutoff`. Intra-residue pairs
// are excluded; the inclusion radius is taken from the reference only, which
// makes the metric asymmetric by definition.
inline double lddt(const RnaStructure& pred, const RnaStructure& ref, double cutoff = 15.0,
                   const std::vector<double>& thresholds = {0.5, 1.0, 2.0, 4.0},
                   std::vector<double>* per_residue = nullptr) {
    if (pred.length() != ref.length() || pred.atoms() != ref.atoms())
        throw MetricError("lddt: shape mismatch");
    int L = ref.length(), A = ref.atoms();
    std::vector<double> res_score(L, 0.0);
    std::vector<int64_t> res_count(L, 0);
    int64_t n_pairs = 0;
    double total = 0.0;
    for (int i = 0; i < L; ++i)
        for (int ai = 0; ai < A; ++ai) {
            if (!ref.present(i, ai) || !pred.present(i, ai)) continue;
            for (int j = i + 1; j < L; ++j)
                for (int aj = 0; aj < A; ++aj) {
                    if (!ref.present(j, aj) || !pred.present(j, aj)) continue;
                    double dr = norm(ref.atom_vec(i, ai) - ref.atom_vec(j, aj));
                    if (dr >= cutoff) continue;
                    double dp = norm(pred.atom_vec(i, ai) - pred.atom_vec(j, aj));
                    double dev = std::fabs(dp - dr);
                    double frac = 0.0;
                    for (double t : thresholds)
                        if (dev < t) frac += 1.0;
                    frac /= static_cast<double>(thresholds.size());
                    total += frac;
                    ++n_pairs;
                    res_score[i] += frac;
                    res_score[j] += frac;
                    ++res_count[i];
                    ++res_count[j];
                }
        }
    if (n_pairs == 0) throw MetricError("lddt: no qualifying atom pairs under cutoff");
    if (per_residue) {
        per_residue->assign(L, 0.0);
        for (int i = 0; i < L; ++i)
            (*per_residue)[i] = res_count[i] ? res_score[i] / res_count[i] : 0.0;
    }
    return total / static_cast<double>(n_pairs);
}

// ---------------------------------------------------------------------------
// Sequence recovery
// ---------------------------------------------------------------------------

inline double recovery(const std::string& pred_seq, const std::string& true_seq) {
    if (pred_seq.size() != true_seq.size()) throw MetricError("recovery: length mismatch");
    if (pred_seq.empty()) throw MetricError("recovery: empty sequences");
    int hits = 0;
    for (size_t i = 0; i < pred_seq.size(); ++i)
        if (pred_seq[i] == true_seq[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred_seq.size());
}

// ---------------------------------------------------------------------------
// 3-mer diversity
// ---------------------------------------------------------------------------

inline int nucleotide_index(char c) {
    switch (c) {
    case 'A': return 0;
    case 'U': return 1;
    case 'C': return 2;
    case 'G': return 3;
    }
    throw MetricError(std::string("unknown nucleotide '") + c + "'");
}

// Normalized 64-dim frequency vector over overlapping 3-mers.
inline std::array<double, 64> kmer3_freq(const std::string& seq) {
    if (seq.size() < 3) throw MetricError("3-mer frequency: sequence shorter than 3");
    std::array<double, 64> v{};
    for (size_t i = 0; i + 2 < seq.size(); ++i) {
        int idx = 16 * nucleotide_index(seq[i]) + 4 * nucleotide_index(seq[i + 1]) +
                  nucleotide_index(seq[i + 2]);
        v[idx] += 1.0;
    }
    double inv = 1.0 / static_cast<double>(seq.size() - 2);
    for (auto& x : v) x *= inv;
    return v;
}

inline double pearson64(const std::array<double, 64>& a, const std::array<double, 64>& b,
                        bool* defined) {
    double ma = 0, mb = 0;
    for (int i = 0; i < 64; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= 64;
    mb /= 64;
    double sab = 0, saa = 0, sbb = 0;
    for (int i = 0; i < 64; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) {
        *defined = false;
        return 0.0;
    }
    *defined = true;
    return sab / std::sqrt(saa * sbb);
}

struct DiversityResult {
    double value = 0.0;
    int pairs_used = 0;
    int pairs_skipped = 0; // zero-variance frequency vectors
};

// Div = 1 - mean Pearson correlation over all unordered sequence pairs.
inline DiversityResult diversity_3mer(const std::vector<std::string>& seqs,
                                      const WarnFn& warn = nullptr) {
    if (seqs.size() < 2) throw MetricError("diversity_3mer: need at least 2 sequences");
    std::vector<std::array<double, 64>> freqs;
    freqs.reserve(seqs.size());
    for (const auto& s : seqs) freqs.push_back(kmer3_freq(s));
    DiversityResult r;
    double sum = 0.0;
    for (size_t i = 0; i < freqs.size(); ++i)
        for (size_t j = i + 1; j < freqs.size(); ++j) {
            bool defined = true;
            double rho = pearson64(freqs[i], freqs[j], &defined);
            if (!defined) {
                ++r.pairs_skipped;
                if (warn)
                    warn("diversity_3mer: constant 3-mer vector, skipping pair (" +
                         std::to_string(i) + "," + std::to_string(j) + ")");
                continue;
            }
            sum += rho;
            ++r.pairs_used;
        }
    if (r.pairs_used == 0) throw MetricError("diversity_3mer: no pairs with defined correlation");
    r.value = 1.0 - sum / static_cast<double>(r.pairs_used);
    return r;
}

// ---------------------------------------------------------------------------
// AUROC
// ---------------------------------------------------------------------------

// Rank-based (Mann-Whitney) AUROC with midranks for ties; equivalent to
// trapezoidal integration of the ROC curve.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw MetricError("auroc: size mismatch");
    size_t n = scores.size();
    int64_t n_pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw MetricError("auroc: labels must be 0/1");
        n_pos += l;
    }
    int64_t n_neg = static_cast<int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw MetricError("auroc: need both classes present");

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    std::vector<double> rank(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (size_t k = 0; k < n; ++k)
        if (labels[k] == 1) rank_sum_pos += rank[k];
    double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Structure-level report row
// ---------------------------------------------------------------------------

struct MetricsRow {
    std::string id;
    int length = 0;
    double rmsd_all = 0.0; // Kabsch-aligned, all atoms of the set
    double rmsd_c4 = 0.0;  // Kabsch-aligned, C4' only
    double tm = 0.0;
    double lddt_score = 0.0;
};

// All unmasked atoms paired by (residue, atom) index.
inline Points all_atom_points_paired(const RnaStructure& a, const RnaStructure& b, bool first) {
    if (a.length() != b.length() || a.atoms() != b.atoms())
        throw MetricError("paired atoms: shape mismatch");
    Points out;
    for (int i = 0; i < a.length(); ++i)
        for (int at = 0; at < a.atoms(); ++at)
            if (a.present(i, at) && b.present(i, at))
                out.push_back(first ? a.atom_vec(i, at) : b.atom_vec(i, at));
    return out;
}

inline MetricsRow evaluate_pair(const RnaStructure& pred, const RnaStructure& ref,
                                std::vector<double>* per_residue_lddt = nullptr) {
    MetricsRow row;
    row.id = ref.id;
    row.length = ref.length();
    row.rmsd_all = rmsd(all_atom_points_paired(pred, ref, true),
                        all_atom_points_paired(pred, ref, false), true);
    row.rmsd_c4 = rmsd(c4_trace_paired(pred, ref, true), c4_trace_paired(pred, ref, false), true);
    row.tm = tm_score(pred, ref);
    row.lddt_score = lddt(pred, ref, 15.0, {0.5, 1.0, 2.0, 4.0}, per_residue_lddt);
    return row;
}

} // namespace ribosphere
