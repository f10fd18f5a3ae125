#pragma once

// RNA structure container, PDB-subset parsing/writing, coordinate transforms,
// a synthetic helix generator and a deterministic hash-based corpus split.
//
// Only ATOM / MODEL / ENDMDL / TER records are consumed. Residues other than
// A, U, C, G are dropped with a warning; missing atoms are masked, never
// imputed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ribosphere/geom.hpp"
#include "ribosphere/rng.hpp"

namespace ribosphere {

struct StructureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Atom sets
// ---------------------------------------------------------------------------

enum class AtomSetTag { A1, A10, A11, B6 };

inline const char* atom_set_name(AtomSetTag t) {
    switch (t) {
    case AtomSetTag::A1: return "A1";
    case AtomSetTag::A10: return "A10";
    case AtomSetTag::A11: return "A11";
    case AtomSetTag::B6: return "B6";
    }
    return "?";
}

inline AtomSetTag atom_set_from_name(const std::string& s) {
    if (s == "A1") return AtomSetTag::A1;
    if (s == "A10") return AtomSetTag::A10;
    if (s == "A11") return AtomSetTag::A11;
    if (s == "B6") return AtomSetTag::B6;
    throw StructureError("unknown atom set '" + s + "' (expected A1|A10|A11|B6)");
}

inline int atom_set_size(AtomSetTag t) {
    switch (t) {
    case AtomSetTag::A1: return 1;
    case AtomSetTag::A10: return 10;
    case AtomSetTag::A11: return 11;
    case AtomSetTag::B6: return 6;
    }
    return 0;
}

// Ordered atom names for one residue. The A11 base anchor is N9 for purines
// (A, G) and N1 for pyrimidines (C, U).
inline std::vector<std::string> atom_set_names(AtomSetTag t, char base) {
    switch (t) {
    case AtomSetTag::A1: return {"C4'"};
    case AtomSetTag::A10:
        return {"P", "C5'", "C4'", "C3'", "C2'", "C1'", "O5'", "O4'", "O3'", "O2'"};
    case AtomSetTag::A11: {
        auto v = atom_set_names(AtomSetTag::A10, base);
        v.push_back((base == 'A' || base == 'G') ? "N9" : "N1");
        return v;
    }
    case AtomSetTag::B6: return {"P", "C5'", "C4'", "C3'", "O5'", "O3'"};
    }
    return {};
}

// Index of the C4' atom within a set (same for every base).
inline int c4_index(AtomSetTag t) {
    switch (t) {
    case AtomSetTag::A1: return 0;
    case AtomSetTag::A10: return 2;
    case AtomSetTag::A11: return 2;
    case AtomSetTag::B6: return 2;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// RnaStructure
// ---------------------------------------------------------------------------

struct RnaStructure {
    std::string id;
    std::string chain_id;
    std::string sequence;        // over {A,U,C,G}, length L
    AtomSetTag atom_set = AtomSetTag::A10;
    std::vector<double> coords;  // L*A*3, Angstrom; masked slots are 0
    std::vector<uint8_t> mask;   // L*A, 1 = atom present

    int length() const { return static_cast<int>(sequence.size()); }
    int atoms() const { return atom_set_size(atom_set); }

    double* atom(int res, int a) { return coords.data() + (static_cast<size_t>(res) * atoms() + a) * 3; }
    const double* atom(int res, int a) const {
        return coords.data() + (static_cast<size_t>(res) * atoms() + a) * 3;
    }
    bool present(int res, int a) const { return mask[static_cast<size_t>(res) * atoms() + a] != 0; }

    Vec3 atom_vec(int res, int a) const {
        const double* p = atom(res, a);
        return {p[0], p[1], p[2]};
    }

    void validate() const {
        int L = length(), A = atoms();
        if (L < 1) throw StructureError("structure " + id + ": empty sequence");
        if (coords.size() != static_cast<size_t>(L) * A * 3 ||
            mask.size() != static_cast<size_t>(L) * A)
            throw StructureError("structure " + id + ": coords/mask size mismatch");
        for (double v : coords)
            if (!std::isfinite(v)) throw StructureError("structure " + id + ": non-finite coordinate");
    }
};

// Masked-aware centroid over present atoms.
inline Vec3 centroid(const RnaStructure& s) {
    Vec3 c{0, 0, 0};
    int64_t n = 0;
    int L = s.length(), A = s.atoms();
    for (int i = 0; i < L; ++i)
        for (int a = 0; a < A; ++a) {
            if (!s.present(i, a)) continue;
            const double* p = s.atom(i, a);
            c[0] += p[0];
            c[1] += p[1];
            c[2] += p[2];
            ++n;
        }
    if (n == 0) throw StructureError("structure " + s.id + ": all atoms masked");
    return c * (1.0 / static_cast<double>(n));
}

inline RnaStructure mean_center(const RnaStructure& s) {
    Vec3 c = centroid(s);
    RnaStructure out = s;
    int L = s.length(), A = s.atoms();
    for (int i = 0; i < L; ++i)
        for (int a = 0; a < A; ++a) {
            if (!s.present(i, a)) continue;
            double* p = out.atom(i, a);
            p[0] -= c[0];
            p[1] -= c[1];
            p[2] -= c[2];
        }
    return out;
}

inline RnaStructure apply_rotation(const RnaStructure& s, const Mat3& r) {
    RnaStructure out = s;
    int L = s.length(), A = s.atoms();
    for (int i = 0; i < L; ++i)
        for (int a = 0; a < A; ++a) {
            if (!s.present(i, a)) continue;
            Vec3 v = mat3_apply(r, s.atom_vec(i, a));
            double* p = out.atom(i, a);
            p[0] = v[0];
            p[1] = v[1];
            p[2] = v[2];
        }
    return out;
}

// Rotation drawn uniformly from SO(3); expects a centered structure.
inline RnaStructure random_rotation(const RnaStructure& s, Rng& rng) {
    return apply_rotation(s, random_rotation_matrix(rng));
}

// ---------------------------------------------------------------------------
// PDB parsing
// ---------------------------------------------------------------------------

namespace detail_pdb {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Primed atom names: both C4' and C4* are accepted.
inline std::string normalize_atom_name(std::string name) {
    name = trim(name);
    for (char& c : name)
        if (c == '*') c = '\'';
    return name;
}

// Residue name -> base letter, or 0 for anything that is not a plain RNA base.
inline char base_from_resname(const std::string& resname) {
    std::string r = trim(resname);
    if (r == "A" || r == "RA") return 'A';
    if (r == "U" || r == "RU") return 'U';
    if (r == "C" || r == "RC") return 'C';
    if (r == "G" || r == "RG") return 'G';
    return 0;
}

inline double parse_coord(const std::string& line, size_t pos, int line_no) {
    if (line.size() < pos + 8)
        throw StructureError("PDB line " + std::to_string(line_no) + ": truncated coordinate field");
    std::string f = trim(line.substr(pos, 8));
    size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(f, &used);
    } catch (...) {
        throw StructureError("PDB line " + std::to_string(line_no) + ": malformed coordinate '" + f +
                             "'");
    }
    if (used != f.size() || !std::isfinite(v))
        throw StructureError("PDB line " + std::to_string(line_no) + ": malformed coordinate '" + f +
                             "'");
    return v;
}

struct RawResidue {
    char base = 0;
    std::string res_key; // resSeq + insertion code
    std::map<std::string, Vec3> atoms;
};

struct RawChain {
    std::string chain_id;
    std::vector<RawResidue> residues; // file order
    std::map<std::string, size_t> index;
};

} // namespace detail_pdb

using WarnFn = std::function<void(const std::string&)>;

// Parse all RNA chains from PDB text. Each chain of each MODEL becomes one
// RnaStructure; multi-model ids get an `_m<k>` suffix on a shared prefix.
inline std::vector<RnaStructure> parse_pdb(const std::string& text, AtomSetTag atom_set,
                                           const std::string& name = "pdb",
                                           const WarnFn& warn = nullptr) {
    using namespace detail_pdb;
    auto emit_warn = [&](const std::string& m) {
        if (warn) warn(m);
    };

    struct ModelBlock {
        int model_no;
        std::vector<RawChain> chains;
    };
    std::vector<ModelBlock> models;
    models.push_back({0, {}});
    bool saw_model_record = false;

    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    std::map<std::string, int> dropped_resnames;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.rfind("MODEL", 0) == 0) {
            int mno = models.back().model_no + 1;
            {
                std::istringstream ms(line.substr(5));
                int parsed;
                if (ms >> parsed) mno = parsed;
            }
            if (saw_model_record || !models.back().chains.empty())
                models.push_back({mno, {}});
            else
                models.back().model_no = mno;
            saw_model_record = true;
            continue;
        }
        if (line.rfind("ENDMDL", 0) == 0 || line.rfind("TER", 0) == 0) continue;
        if (line.rfind("ATOM", 0) != 0) continue; // HETATM, waters, everything else skipped
        if (line.size() < 54)
            throw StructureError("PDB line " + std::to_string(line_no) + ": ATOM record too short");

        std::string atom_name = normalize_atom_name(line.substr(12, 4));
        char alt_loc = line[16];
        std::string res_name = line.substr(17, 3);
        std::string chain_id = trim(line.substr(21, 1));
        std::string res_key = trim(line.substr(22, 5)); // resSeq + iCode
        char base = base_from_resname(res_name);
        if (base == 0) {
            ++dropped_resnames[trim(res_name)];
            continue;
        }
        if (alt_loc != ' ' && alt_loc != 'A') continue; // keep first altloc only

        Vec3 xyz{parse_coord(line, 30, line_no), parse_coord(line, 38, line_no),
                 parse_coord(line, 46, line_no)};

        auto& chains = models.back().chains;
        RawChain* chain = nullptr;
        for (auto& c : chains)
            if (c.chain_id == chain_id) chain = &c;
        if (!chain) {
            chains.push_back({chain_id, {}, {}});
            chain = &chains.back();
        }
        auto it = chain->index.find(res_key);
        if (it == chain->index.end()) {
            chain->index[res_key] = chain->residues.size();
            chain->residues.push_back({base, res_key, {}});
            it = chain->index.find(res_key);
        }
        RawResidue& res = chain->residues[it->second];
        if (res.base != base)
            throw StructureError("PDB line " + std::to_string(line_no) +
                                 ": conflicting residue name for residue " + res_key);
        if (res.atoms.count(atom_name))
            throw StructureError("PDB line " + std::to_string(line_no) + ": duplicate atom " +
                                 atom_name + " in residue " + res_key);
        res.atoms[atom_name] = xyz;
    }

    for (const auto& [rn, cnt] : dropped_resnames)
        emit_warn("dropped " + std::to_string(cnt) + " atoms of non-standard residue '" + rn + "'");

    std::vector<RnaStructure> out;
    int A = atom_set_size(atom_set);
    bool multi_model = models.size() > 1;
    for (const auto& model : models) {
        for (const auto& chain : model.chains) {
            if (chain.residues.empty()) continue;
            RnaStructure s;
            s.chain_id = chain.chain_id.empty() ? "A" : chain.chain_id;
            s.id = name + "_" + s.chain_id + (multi_model ? "_m" + std::to_string(model.model_no) : "");
            s.atom_set = atom_set;
            int L = static_cast<int>(chain.residues.size());
            s.sequence.reserve(L);
            s.coords.assign(static_cast<size_t>(L) * A * 3, 0.0);
            s.mask.assign(static_cast<size_t>(L) * A, 0);
            for (int i = 0; i < L; ++i) {
                const RawResidue& res = chain.residues[i];
                s.sequence.push_back(res.base);
                auto names = atom_set_names(atom_set, res.base);
                for (int a = 0; a < A; ++a) {
                    auto it = res.atoms.find(names[a]);
                    if (it == res.atoms.end()) continue;
                    double* p = s.coords.data() + (static_cast<size_t>(i) * A + a) * 3;
                    p[0] = it->second[0];
                    p[1] = it->second[1];
                    p[2] = it->second[2];
                    s.mask[static_cast<size_t>(i) * A + a] = 1;
                }
            }
            s.validate();
            out.push_back(std::move(s));
        }
    }
    if (out.empty()) throw StructureError("no RNA chains found in input '" + name + "'");
    return out;
}

// ---------------------------------------------------------------------------
// PDB writing (occupancy fixed at 1.00; B-factor column carries per-residue
// lDDT when provided)
// ---------------------------------------------------------------------------

inline std::string write_pdb(const RnaStructure& s,
                             const std::vector<double>* per_residue_bfactor = nullptr,
                             int model_no = 0) {
    std::ostringstream os;
    os << std::fixed;
    if (model_no > 0) os << "MODEL " << std::setw(8) << model_no << "\n";
    int serial = 1;
    int L = s.length(), A = s.atoms();
    for (int i = 0; i < L; ++i) {
        char base = s.sequence[i];
        auto names = atom_set_names(s.atom_set, base);
        for (int a = 0; a < A; ++a) {
            if (!s.present(i, a)) continue;
            const double* p = s.atom(i, a);
            double bf = per_residue_bfactor && i < static_cast<int>(per_residue_bfactor->size())
                            ? (*per_residue_bfactor)[i]
                            : 0.0;
            std::string an = names[a];
            // Atom name column: names shorter than 4 chars start at column 14.
            std::string an_field = an.size() >= 4 ? an.substr(0, 4) : " " + an;
            os << "ATOM  " << std::setw(5) << serial++ << " " << std::left << std::setw(4)
               << an_field << std::right << " " << std::setw(3) << std::string(1, base) << " "
               << (s.chain_id.empty() ? "A" : s.chain_id.substr(0, 1)) << std::setw(4) << (i + 1)
               << "    " << std::setw(8) << std::setprecision(3) << p[0] << std::setw(8) << p[1]
               << std::setw(8) << p[2] << std::setw(6) << std::setprecision(2) << 1.00
               << std::setw(6) << std::setprecision(2) << bf << "\n";
        }
    }
    os << "TER\n";
    if (model_no > 0) os << "ENDMDL\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Synthetic helix corpus
// ---------------------------------------------------------------------------

// Fixed per-residue local offsets (radial, tangential, axial) in Angstrom,
// relative to C4' in the local helical frame. Values give plausible covalent
// distances; they are a stand-in corpus geometry, not ideal A-form.
inline const std::vector<std::pair<std::string, Vec3>>& helix_atom_offsets() {
    static const std::vector<std::pair<std::string, Vec3>> table = {
        {"P", {1.20, -2.80, 2.20}},   {"C5'", {0.60, -1.10, 1.05}},
        {"C4'", {0.00, 0.00, 0.00}},  {"C3'", {0.95, 0.85, -0.80}},
        {"C2'", {-0.05, 1.90, -1.15}},{"C1'", {-1.35, 1.45, -0.65}},
        {"O5'", {1.30, -2.10, 0.95}}, {"O4'", {-1.40, 0.25, 0.25}},
        {"O3'", {0.80, 1.55, -2.05}}, {"O2'", {0.35, 3.10, -0.70}},
        {"N9", {-2.50, 1.80, -0.80}}, {"N1", {-2.50, 1.80, -0.80}},
    };
    return table;
}

// Regular helical trace: residue i sits at angle i*twist and height i*rise,
// remaining atoms placed by fixed offsets in the rotating local frame. The
// ideal A-form defaults are twist 32.7 deg and rise 2.81 A at radius 9.4 A.
inline RnaStructure synth_helix(int length, double twist_deg, double rise, Rng& rng,
                                AtomSetTag atom_set = AtomSetTag::A10, double radius = 9.4) {
    if (length < 4) throw StructureError("synth_helix: length must be >= 4");
    RnaStructure s;
    s.atom_set = atom_set;
    s.chain_id = "A";
    static const char bases[4] = {'A', 'U', 'C', 'G'};
    for (int i = 0; i < length; ++i) s.sequence.push_back(bases[rng.below(4)]);
    s.id = "helix";
    int A = atom_set_size(atom_set);
    s.coords.assign(static_cast<size_t>(length) * A * 3, 0.0);
    s.mask.assign(static_cast<size_t>(length) * A, 1);

    const auto& offsets = helix_atom_offsets();
    constexpr double pi = 3.14159265358979323846;
    double twist = twist_deg * pi / 180.0;
    for (int i = 0; i < length; ++i) {
        double phi = i * twist;
        Vec3 u{std::cos(phi), std::sin(phi), 0.0};  // radial
        Vec3 w{-std::sin(phi), std::cos(phi), 0.0}; // tangential
        Vec3 k{0.0, 0.0, 1.0};                      // axial
        Vec3 c4 = u * radius + k * (i * rise);
        auto names = atom_set_names(atom_set, s.sequence[i]);
        for (int a = 0; a < A; ++a) {
            Vec3 off{0, 0, 0};
            for (const auto& [nm, o] : offsets)
                if (nm == names[a]) off = o;
            Vec3 p = c4 + u * off[0] + w * off[1] + k * off[2];
            double* dst = s.atom(i, a);
            dst[0] = p[0];
            dst[1] = p[1];
            dst[2] = p[2];
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Deterministic corpus split
// ---------------------------------------------------------------------------

struct SplitResult {
    std::vector<size_t> train, val, test;
};

namespace detail_split {
inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}
} // namespace detail_split

// Assignment is a pure function of (id, seed): hash the id, mix the seed,
// map to [0,1) and bin by cumulative fractions. Adding or removing corpus
// entries never reassigns the others.
inline SplitResult split_dataset(const std::vector<std::string>& ids, double f_train, double f_val,
                                 double f_test, uint64_t seed) {
    if (ids.empty()) throw StructureError("split_dataset: empty corpus");
    if (std::fabs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw StructureError("split_dataset: fractions must sum to 1");
    SplitResult r;
    for (size_t i = 0; i < ids.size(); ++i) {
        Rng h(detail_split::fnv1a64(ids[i]) ^ (seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
        double u = h.uniform();
        if (u < f_train)
            r.train.push_back(i);
        else if (u < f_train + f_val)
            r.val.push_back(i);
        else
            r.test.push_back(i);
    }
    return r;
}

// Pairwise distance matrix over all unmasked atoms (upper triangle, flat).
inline std::vector<double> pairwise_distances(const RnaStructure& s) {
    std::vector<Vec3> pts;
    int L = s.length(), A = s.atoms();
    for (int i = 0; i < L; ++i)
        for (int a = 0; a < A; ++a)
            if (s.present(i, a)) pts.push_back(s.atom_vec(i, a));
    std::vector<double> d;
    d.reserve(pts.size() * (pts.size() - 1) / 2);
    for (size_t i = 0; i < pts.size(); ++i)
        for (size_t j = i + 1; j < pts.size(); ++j) d.push_back(norm(pts[i] - pts[j]));
    return d;
}

} // namespace ribosphere
