#include <catch2/catch_amalgamated.hpp>

#include "ribosphere/encoder.hpp"
#include "ribosphere/structure.hpp"
#include "oracles.hpp"

using namespace ribosphere;

namespace {

EncoderConfig small_cfg(int atoms = 10, int window = 0) {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.dim = 32;
    cfg.heads = 4;
    cfg.pair_dim = 12;
    cfg.window = window;
    cfg.dist_bins = 16;
    cfg.dist_max = 40.0;
    cfg.relpos_clip = 8;
    cfg.mlp_factor = 2;
    cfg.atoms = atoms;
    return cfg;
}

struct EncFixture {
    ParamStore ps;
    Encoder enc;
    EncFixture(const EncoderConfig& cfg, uint64_t seed = 5) {
        Rng rng(seed);
        enc.build(ps, "encoder.", cfg, rng);
    }
};

// flat coords + representative (C4') coords from a structure
std::pair<std::vector<double>, std::vector<double>> coords_of(const RnaStructure& s) {
    std::vector<double> rep(static_cast<size_t>(s.length()) * 3);
    int c4 = c4_index(s.atom_set);
    for (int i = 0; i < s.length(); ++i)
        for (int c = 0; c < 3; ++c) rep[3 * i + c] = s.atom(i, c4)[c];
    return {s.coords, rep};
}

} // namespace

TEST_CASE("distance binning", "[encoder]") {
    REQUIRE(distance_bin(0.0, 64, 40.0) == 0);
    REQUIRE(distance_bin(39.999, 64, 40.0) == 63);
    REQUIRE(distance_bin(40.0, 64, 40.0) == 63); // overflow clamp
    REQUIRE(distance_bin(400.0, 64, 40.0) == 63);
    REQUIRE(distance_bin(0.624, 64, 40.0) == 0);
    REQUIRE(distance_bin(0.626, 64, 40.0) == 1);
}

TEST_CASE("embed_nucleotide basics", "[encoder]") {
    auto cfg = small_cfg();
    EncFixture f(cfg);
    Rng rng(9);
    auto s = mean_center(synth_helix(7, 32.7, 2.81, rng, AtomSetTag::A10));
    auto [coords, rep] = coords_of(s);

    SECTION("output shape L x d") {
        auto h = f.enc.embed(coords, s.length());
        REQUIRE(h->shape == std::vector<int>{7, cfg.dim});
    }
    SECTION("zero input hits the bias path deterministically") {
        std::vector<double> zero(coords.size(), 0.0);
        auto h1 = f.enc.embed(zero, s.length());
        auto h2 = f.enc.embed(zero, s.length());
        REQUIRE(h1->data == h2->data);
        for (int c = 0; c < cfg.dim; ++c)
            REQUIRE(h1->data[c] == h1->data[static_cast<size_t>(3) * cfg.dim + c]);
    }
    SECTION("embedding is not rotation invariant") {
        auto rot = apply_rotation(s, random_rotation_matrix(rng));
        auto h = f.enc.embed(s.coords, s.length());
        auto hr = f.enc.embed(rot.coords, s.length());
        double diff = 0;
        for (size_t i = 0; i < h->data.size(); ++i) diff += std::fabs(h->data[i] - hr->data[i]);
        REQUIRE(diff > 1e-3);
    }
}

TEST_CASE("pair features are rigid-transform invariant", "[encoder]") {
    auto cfg = small_cfg();
    EncFixture f(cfg);
    Rng rng(3);
    auto s = mean_center(synth_helix(6, 32.7, 2.81, rng, AtomSetTag::A10));
    auto [coords, rep] = coords_of(s);

    auto rot = apply_rotation(s, random_rotation_matrix(rng));
    auto [coords_r, rep_r] = coords_of(rot);

    auto p0 = f.enc.pair_features(rep, s.length());
    auto p1 = f.enc.pair_features(rep_r, s.length());
    REQUIRE(p0->data == p1->data); // bitwise: distance bins are identical integers
}

TEST_CASE("attention block contracts", "[encoder]") {
    auto cfg = small_cfg();
    EncFixture f(cfg);
    Rng rng(21);

    SECTION("L=1 forward works (self-attention only)") {
        auto s = mean_center(synth_helix(4, 32.7, 2.81, rng, AtomSetTag::A10));
        RnaStructure one = s;
        one.sequence = "A";
        one.coords.assign(s.coords.begin(), s.coords.begin() + 10 * 3);
        one.mask.assign(s.mask.begin(), s.mask.begin() + 10);
        auto [coords, rep] = coords_of(mean_center(one));
        auto out = f.enc.forward(coords, rep, 1);
        REQUIRE(out->shape == std::vector<int>{1, cfg.dim});
        // single key: attention weight is exactly 1
        auto w = softmax(zeros({1, 1}));
        REQUIRE(w->data[0] == 1.0);
    }

    SECTION("uniform scores give uniform weights") {
        auto w = softmax(full({1, 5}, 0.37));
        for (int j = 0; j < 5; ++j) REQUIRE(w->data[j] == Catch::Approx(0.2).margin(1e-15));
    }

    SECTION("softmax saturation under a huge pair bias") {
        auto scores = make_tensor({1, 4}, {0.0, 0.0, 0.0, 0.0});
        auto bias = make_tensor({1, 4}, {0.0, 1e9, 0.0, 0.0});
        auto w = softmax(add(scores, bias));
        REQUIRE(w->data[1] >= 1.0 - 1e-6);
    }

    SECTION("windowed mask zeroes out-of-band weights exactly") {
        auto m = window_mask(6, 2);
        auto w = softmax(add(zeros({6, 6}), m));
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) {
                double v = w->data[static_cast<size_t>(i) * 6 + j];
                if (std::abs(i - j) > 2)
                    REQUIRE(v == 0.0);
                else
                    REQUIRE(v > 0.0);
            }
    }

    SECTION("attention rows sum to 1 over permitted keys") {
        Rng r2(4);
        auto q = randn({9, 9}, r2);
        auto w = softmax(add(q, window_mask(9, 2)));
        for (int i = 0; i < 9; ++i) {
            double rs = 0;
            for (int j = 0; j < 9; ++j) rs += w->data[static_cast<size_t>(i) * 9 + j];
            REQUIRE(rs == Catch::Approx(1.0).margin(1e-10));
        }
    }

    SECTION("window smaller than 1 rejected by config validation") {
        EncoderConfig bad = small_cfg();
        bad.window = -1;
        REQUIRE_THROWS_AS(bad.validate(), TensorError);
    }
}

TEST_CASE("encode end-to-end contracts", "[encoder]") {
    auto cfg = small_cfg();
    EncFixture f(cfg);
    Rng rng(33);
    auto s = mean_center(synth_helix(25, 32.7, 2.81, rng, AtomSetTag::A10));
    auto [coords, rep] = coords_of(s);

    SECTION("shape contract") {
        auto out = f.enc.forward(coords, rep, 25);
        REQUIRE(out->shape == std::vector<int>{25, cfg.dim});
    }

    SECTION("translation invariance is exact via centering") {
        RnaStructure t = s;
        for (int i = 0; i < t.length(); ++i)
            for (int a = 0; a < t.atoms(); ++a) {
                double* p = t.atom(i, a);
                p[0] += 3.5;
                p[1] -= 1.25;
                p[2] += 0.75;
            }
        auto tc = mean_center(t);
        auto [coords_t, rep_t] = coords_of(tc);
        auto a = f.enc.forward(coords, rep, 25);
        auto b = f.enc.forward(coords_t, rep_t, 25);
        for (size_t i = 0; i < a->data.size(); ++i)
            REQUIRE(a->data[i] == Catch::Approx(b->data[i]).margin(1e-9));
    }

    SECTION("swapping two residues changes latents globally (full attention)") {
        auto base = f.enc.forward(coords, rep, 25);
        auto s2 = s;
        for (int c = 0; c < 10 * 3; ++c)
            std::swap(s2.coords[3 * 10 * 3 + c], s2.coords[20 * 10 * 3 + c]);
        auto [coords2, rep2] = coords_of(s2);
        auto out2 = f.enc.forward(coords2, rep2, 25);
        double diff_other = 0; // residue 10 was not swapped but must change
        for (int c = 0; c < cfg.dim; ++c)
            diff_other += std::fabs(base->data[static_cast<size_t>(10) * cfg.dim + c] -
                                    out2->data[static_cast<size_t>(10) * cfg.dim + c]);
        REQUIRE(diff_other > 1e-9);
        double diff_swapped = 0;
        for (int c = 0; c < cfg.dim; ++c)
            diff_swapped += std::fabs(base->data[static_cast<size_t>(3) * cfg.dim + c] -
                                      out2->data[static_cast<size_t>(3) * cfg.dim + c]);
        REQUIRE(diff_swapped > 1e-9);
    }
}

TEST_CASE("encoder layer gradient check", "[encoder][gradcheck]") {
    EncoderConfig cfg;
    cfg.layers = 1;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.pair_dim = 4;
    cfg.window = 0;
    cfg.dist_bins = 4;
    cfg.dist_max = 40.0;
    cfg.relpos_clip = 2;
    cfg.mlp_factor = 2;
    cfg.atoms = 2;
    EncFixture f(cfg, 12);
    Rng rng(7);
    const int L = 3;
    std::vector<double> coords(L * cfg.atoms * 3);
    for (auto& v : coords) v = rng.uniform(-2, 2);
    std::vector<double> rep(L * 3);
    for (auto& v : rep) v = rng.uniform(-2, 2);

    std::vector<double> w(static_cast<size_t>(L) * cfg.dim);
    for (auto& v : w) v = rng.uniform(-1, 1);
    auto weights = make_tensor({L, cfg.dim}, w);

    auto scalar_fn = [&] {
        auto out = f.enc.forward(coords, rep, L);
        double s = 0;
        for (size_t i = 0; i < out->data.size(); ++i) s += out->data[i] * weights->data[i];
        return s;
    };
    auto backward_fn = [&] {
        Tape tape;
        Tape::Scope scope(tape);
        auto out = f.enc.forward(coords, rep, L);
        tape.backward(sum(mul(out, weights)));
    };
    auto res = oracles::grad_check(scalar_fn, backward_fn, f.ps.all_params());
    INFO("checked " << res.checked << " partials, max rel err " << res.max_rel_err);
    REQUIRE(res.max_rel_err < 1e-4);
}
