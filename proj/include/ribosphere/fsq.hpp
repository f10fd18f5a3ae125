#pragma once

// Finite scalar quantization: bound each latent dimension with a scaled tanh,
// round to the nearest lattice point (straight-through gradients), and map the
// resulting digit tuple to a single mixed-radix code index.
//
// For an odd level count l the bound is floor(l/2)*tanh(z), whose rounding
// reaches exactly l integers. For even l a half-unit offset is subtracted so
// the rounded lattice has exactly l points (e.g. l=6 reaches {-3,...,2});
// without it an even level would reach l+1 integers.

#include <cfenv>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ribosphere/tensor.hpp"

namespace ribosphere {

struct FsqConfig {
    std::vector<int> levels; // l_1 .. l_m, each >= 2

    int dim() const { return static_cast<int>(levels.size()); }

    int64_t codebook_size() const {
        int64_t n = 1;
        for (int l : levels) n *= l;
        return n;
    }

    void validate() const {
        if (levels.empty()) throw TensorError("fsq: empty level list");
        for (int l : levels)
            if (l < 2) throw TensorError("fsq: every level must be >= 2, got " + std::to_string(l));
    }

    std::string to_string() const {
        std::ostringstream os;
        for (size_t i = 0; i < levels.size(); ++i) os << (i ? "," : "") << levels[i];
        return os.str();
    }

    static FsqConfig from_string(const std::string& s) {
        FsqConfig cfg;
        std::istringstream is(s);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            if (tok.empty()) continue;
            cfg.levels.push_back(std::stoi(tok));
        }
        cfg.validate();
        return cfg;
    }
};

struct TokenSequence {
    std::string id;
    std::vector<int64_t> indices;  // L entries in [0, prod(levels))
    std::vector<double> quantized; // L x m grid values
    FsqConfig levels;

    int length() const { return static_cast<int>(indices.size()); }
};

// Round to nearest, ties to even (the default FE_TONEAREST behaviour).
inline double round_ties_even(double x) { return std::nearbyint(x); }

// Straight-through rounding: forward value is the rounded lattice point,
// backward gradient is the identity on the bounded pre-image.
inline TensorPtr quantize_ste(const TensorPtr& bounded) {
    std::vector<double> out(bounded->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = round_ties_even(bounded->data[i]);
    return detail::make_node("quantize_ste", bounded->shape, std::move(out), {bounded},
                             [](Tensor& self) {
                                 auto& p = *self.parents[0];
                                 for (size_t i = 0; i < self.grad.size(); ++i)
                                     p.grad[i] += self.grad[i];
                             });
}

class Fsq {
public:
    FsqConfig cfg;
    TensorPtr w_proj, b_proj; // encoder dim -> m

    void build(ParamStore& ps, const std::string& prefix, const FsqConfig& config, int enc_dim,
               Rng& rng) {
        cfg = config;
        cfg.validate();
        w_proj = ps.create(prefix + "w", {enc_dim, cfg.dim()}, Init::NormalScaled, rng);
        b_proj = ps.create(prefix + "b", {cfg.dim()}, Init::Zeros, rng);
    }

    // Per-dimension bounding of the projected latent: floor(l/2)*tanh(z),
    // shifted by -1/2 for even levels. The (1 - eps) factor follows the FSQ
    // reference implementation: tanh saturates to exactly 1.0 in doubles for
    // |z| > ~19, and without the margin a saturated even dimension would
    // round onto a tie point outside the lattice.
    TensorPtr bound(const TensorPtr& latents) const {
        constexpr double eps = 1e-3;
        auto z = tanh_op(linear(latents, w_proj, b_proj)); // in (-1, 1)
        int m = cfg.dim();
        std::vector<double> sc(m), off(m);
        for (int i = 0; i < m; ++i) {
            sc[i] = static_cast<double>(cfg.levels[i] / 2) * (1.0 - eps);
            off[i] = cfg.levels[i] % 2 == 0 ? -0.5 : 0.0;
        }
        auto scale_row = make_tensor({m}, sc);
        auto offset_row = make_tensor({m}, off);
        return add_rowvec(mul_rowvec(z, scale_row), offset_row);
    }

    // Bound + straight-through rounding; the full quantization op.
    TensorPtr quantize(const TensorPtr& latents) const { return quantize_ste(bound(latents)); }

    // Digit shift per dimension: rounded values live in [-shift, shift or
    // shift-1]; adding the shift yields digits in [0, l).
    int digit_shift(int dim_i) const { return cfg.levels[dim_i] / 2; }

    int64_t index_of_digits(const std::vector<int>& digits) const {
        int64_t idx = 0, radix = 1;
        for (int i = 0; i < cfg.dim(); ++i) {
            if (digits[i] < 0 || digits[i] >= cfg.levels[i])
                throw TensorError("fsq: digit out of range");
            idx += digits[i] * radix;
            radix *= cfg.levels[i];
        }
        return idx;
    }

    std::vector<int> digits_of_index(int64_t index) const {
        if (index < 0 || index >= codebook_size())
            throw TensorError("fsq: index out of range: " + std::to_string(index));
        std::vector<int> digits(cfg.dim());
        for (int i = 0; i < cfg.dim(); ++i) {
            digits[i] = static_cast<int>(index % cfg.levels[i]);
            index /= cfg.levels[i];
        }
        return digits;
    }

    int64_t codebook_size() const { return cfg.codebook_size(); }

    // Grid values (the quantized latent) for a code index.
    std::vector<double> grid_values(int64_t index) const {
        auto digits = digits_of_index(index);
        std::vector<double> v(cfg.dim());
        for (int i = 0; i < cfg.dim(); ++i) v[i] = static_cast<double>(digits[i] - digit_shift(i));
        return v;
    }

    // Index sequence from an L x m quantized tensor (values already on-grid).
    std::vector<int64_t> indices_from_quantized(const std::vector<double>& q, int L) const {
        int m = cfg.dim();
        std::vector<int64_t> out(L);
        std::vector<int> digits(m);
        for (int i = 0; i < L; ++i) {
            for (int j = 0; j < m; ++j)
                digits[j] = static_cast<int>(q[static_cast<size_t>(i) * m + j]) + digit_shift(j);
            out[i] = index_of_digits(digits);
        }
        return out;
    }
};

// Fraction of the code space observed at least once.
inline double utilization(const std::vector<TokenSequence>& tokens, const FsqConfig& cfg) {
    std::set<int64_t> seen;
    int64_t total = 0;
    for (const auto& t : tokens) {
        for (int64_t i : t.indices) seen.insert(i);
        total += t.length();
    }
    if (total == 0) throw TensorError("utilization: no tokens");
    return static_cast<double>(seen.size()) / static_cast<double>(cfg.codebook_size());
}

// ---------------------------------------------------------------------------
// Token file format (line-delimited text, stable):
//   # ribosphere tokens v1
//   <id>\t<L>\t<levels commas>\t<indices commas>
// ---------------------------------------------------------------------------

inline void write_tokens(std::ostream& os, const std::vector<TokenSequence>& tokens) {
    os << "# ribosphere tokens v1\n";
    for (const auto& t : tokens) {
        os << t.id << "\t" << t.length() << "\t" << t.levels.to_string() << "\t";
        for (int i = 0; i < t.length(); ++i) os << (i ? "," : "") << t.indices[i];
        os << "\n";
    }
}

inline void write_tokens_file(const std::string& path, const std::vector<TokenSequence>& tokens) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw TensorError("cannot open token file for writing: " + path);
    write_tokens(os, tokens);
}

inline std::vector<TokenSequence> read_tokens(std::istream& is) {
    std::vector<TokenSequence> out;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        TokenSequence t;
        std::string l_str, levels_str, idx_str;
        if (!std::getline(ls, t.id, '\t') || !std::getline(ls, l_str, '\t') ||
            !std::getline(ls, levels_str, '\t') || !std::getline(ls, idx_str))
            throw TensorError("token file: malformed record at line " + std::to_string(line_no));
        t.levels = FsqConfig::from_string(levels_str);
        std::istringstream xs(idx_str);
        std::string tok;
        while (std::getline(xs, tok, ',')) t.indices.push_back(std::stoll(tok));
        if (static_cast<int>(t.indices.size()) != std::stoi(l_str))
            throw TensorError("token file: length mismatch at line " + std::to_string(line_no));
        // restore quantized grid values from indices
        Fsq f;
        f.cfg = t.levels;
        t.quantized.reserve(t.indices.size() * t.levels.dim());
        for (int64_t idx : t.indices) {
            auto v = f.grid_values(idx);
            t.quantized.insert(t.quantized.end(), v.begin(), v.end());
        }
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<TokenSequence> read_tokens_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw TensorError("cannot open token file: " + path);
    return read_tokens(is);
}

} // namespace ribosphere
