#include <catch2/catch_amalgamated.hpp>

#include "ribosphere/flow.hpp"
#include "oracles.hpp"

using namespace ribosphere;

namespace {

std::vector<uint8_t> full_mask(int n) { return std::vector<uint8_t>(n, 1); }

VectorFieldConfig tiny_vf_cfg() {
    VectorFieldConfig cfg;
    cfg.layers = 1;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.pair_dim = 4;
    cfg.dist_bins = 4;
    cfg.dist_max = 8.0;
    cfg.relpos_clip = 2;
    cfg.mlp_factor = 2;
    cfg.atoms = 2;
    cfg.cond_dim = 3;
    cfg.time_freqs = 4;
    return cfg;
}

} // namespace

TEST_CASE("zero-CoM noise sampling", "[flow]") {
    Rng rng(3);
    SECTION("center of mass vanishes") {
        auto x = sample_noise_zero_com(7, 4, rng);
        auto com = center_of_mass(x, full_mask(28));
        for (double c : com) REQUIRE(std::fabs(c) < 1e-12);
    }
    SECTION("degenerate single-atom sample is all zero") {
        auto x = sample_noise_zero_com(1, 1, rng);
        for (double v : x) REQUIRE(v == 0.0);
    }
    SECTION("projection shrinks per-coordinate variance to 1 - 1/(L*A)") {
        const int L = 4, A = 2, n = L * A;
        double m2 = 0.0;
        const int trials = 4000;
        for (int k = 0; k < trials; ++k) {
            auto x = sample_noise_zero_com(L, A, rng);
            for (double v : x) m2 += v * v;
        }
        m2 /= static_cast<double>(trials) * n * 3;
        REQUIRE(m2 == Catch::Approx(1.0 - 1.0 / n).margin(0.01));
    }
    SECTION("masked atoms stay zero and are excluded from the mean") {
        std::vector<uint8_t> mask = {1, 1, 0, 1};
        auto x = sample_noise_zero_com(2, 2, rng, &mask);
        REQUIRE(x[6] == 0.0);
        REQUIRE(x[7] == 0.0);
        REQUIRE(x[8] == 0.0);
        auto com = center_of_mass(x, mask);
        for (double c : com) REQUIRE(std::fabs(c) < 1e-12);
    }
}

TEST_CASE("interpolation endpoints and midpoint", "[flow]") {
    std::vector<double> x1 = {2, 0, 0};
    std::vector<double> x0 = {0, 2, 0};
    auto at0 = interpolate(x1, x0, 0.0);
    REQUIRE(at0 == x0);
    auto at1 = interpolate(x1, x0, 1.0);
    REQUIRE(at1 == x1);
    auto mid = interpolate(x1, x0, 0.5);
    REQUIRE(mid == std::vector<double>{1, 1, 0});
    REQUIRE_THROWS_AS(interpolate(x1, {0, 0}, 0.5), FlowError);

    // zero-CoM closure
    Rng rng(5);
    auto a = sample_noise_zero_com(5, 2, rng);
    auto b = sample_noise_zero_com(5, 2, rng);
    auto m = interpolate(a, b, 0.37);
    auto com = center_of_mass(m, full_mask(10));
    for (double c : com) REQUIRE(std::fabs(c) < 1e-12);
}

TEST_CASE("classifier-free guidance combination", "[flow]") {
    std::vector<double> vc = {2, 2, 2};
    std::vector<double> vu = {1, 0, -1};
    SECTION("g = 0 returns v_cond bitwise") {
        REQUIRE(cfg_field(vc, vu, 0.0) == vc);
    }
    SECTION("equal fields are unchanged for any g") {
        REQUIRE(cfg_field(vc, vc, 7.3) == vc);
    }
    SECTION("scalar arithmetic") {
        auto out = cfg_field({2}, {1}, 1.0);
        REQUIRE(out[0] == 3.0);
    }
    SECTION("shape mismatch errors") {
        REQUIRE_THROWS_AS(cfg_field(vc, {1.0}, 1.0), FlowError);
    }
}

TEST_CASE("vector field to score conversion", "[flow]") {
    Rng rng(11);
    SECTION("t = 0 gives the standard-normal score -x") {
        auto x = sample_noise_zero_com(4, 1, rng);
        auto v = x; // arbitrary
        auto s = vf_to_score(v, x, 0.0);
        for (size_t i = 0; i < x.size(); ++i) REQUIRE(s[i] == Catch::Approx(-x[i]).margin(1e-15));
    }
    SECTION("exact conditional field: numerator recovers -x0, score is -x0/(1-t)") {
        auto x1 = sample_noise_zero_com(5, 2, rng);
        auto x0 = sample_noise_zero_com(5, 2, rng);
        std::vector<double> v(x1.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = x1[i] - x0[i];
        for (double t : {0.0, 0.25, 0.5, 0.75, 0.9}) {
            auto x_t = interpolate(x1, x0, t);
            auto s = vf_to_score(v, x_t, t);
            for (size_t i = 0; i < s.size(); ++i) {
                REQUIRE(s[i] * (1.0 - t) == Catch::Approx(-x0[i]).margin(1e-9));
                REQUIRE(s[i] == Catch::Approx(-x0[i] / (1.0 - t)).margin(1e-9));
            }
        }
    }
    SECTION("terminal regime guard") {
        std::vector<double> x = {1, 2, 3};
        REQUIRE_THROWS_AS(vf_to_score(x, x, 1.0), FlowError);
        REQUIRE_THROWS_AS(vf_to_score(x, x, 0.9999999999999), FlowError);
        REQUIRE_NOTHROW(vf_to_score(x, x, 0.9));
    }
}

TEST_CASE("euler sampler on analytic fields", "[flow]") {
    Rng rng(13);
    const int L = 4, A = 2;
    auto mask = full_mask(L * A);
    auto x0 = sample_noise_zero_com(L, A, rng);

    SECTION("constant field telescopes exactly for any N") {
        auto c = sample_noise_zero_com(L, A, rng); // zero-CoM constant drift
        FieldFn field = [&](const std::vector<double>&, double) { return c; };
        for (int N : {1, 3, 17}) {
            auto out = euler_sample(field, x0, mask, N);
            for (size_t i = 0; i < out.size(); ++i)
                REQUIRE(out[i] == Catch::Approx(x0[i] + c[i]).margin(1e-12));
        }
    }
    SECTION("N = 1 is a single step") {
        FieldFn field = [&](const std::vector<double>& x, double) {
            std::vector<double> v(x.size());
            for (size_t i = 0; i < v.size(); ++i) v[i] = -x[i];
            return v;
        };
        auto out = euler_sample(field, x0, mask, 1);
        for (size_t i = 0; i < out.size(); ++i) REQUIRE(out[i] == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("linear field matches the closed form and converges at first order") {
        FieldFn field = [&](const std::vector<double>& x, double) {
            std::vector<double> v(x.size());
            for (size_t i = 0; i < v.size(); ++i) v[i] = -x[i];
            return v;
        };
        // exact: x(1) = x0 * e^{-1}; Euler: x0 * (1 - 1/N)^N
        std::vector<double> errs;
        std::vector<int> ns = {10, 20, 40, 80, 160};
        for (int N : ns) {
            auto out = euler_sample(field, x0, mask, N);
            double err = 0.0;
            double closed = std::pow(1.0 - 1.0 / N, N);
            for (size_t i = 0; i < out.size(); ++i) {
                REQUIRE(out[i] == Catch::Approx(x0[i] * closed).margin(1e-12));
                err = std::max(err, std::fabs(out[i] - x0[i] * std::exp(-1.0)));
            }
            errs.push_back(err);
        }
        // log-log slope of error vs N
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int n = static_cast<int>(ns.size());
        for (int i = 0; i < n; ++i) {
            double lx = std::log(static_cast<double>(ns[i])), ly = std::log(errs[i]);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        REQUIRE(-slope > 0.8);
        REQUIRE(-slope < 1.2);
    }
}

TEST_CASE("sde sampler identities", "[flow]") {
    const int L = 4, A = 2;
    auto mask = full_mask(L * A);
    FieldFn field = [](const std::vector<double>& x, double) {
        std::vector<double> v(x.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = -0.5 * x[i];
        return v;
    };

    SECTION("eta = gamma = 0 degenerates to the Euler sampler bitwise") {
        SamplerConfig cfg;
        cfg.steps = 25;
        cfg.eta = 0.0;
        cfg.gamma = 0.0;
        Rng r1(7), r2(7);
        auto x0a = sample_noise_zero_com(L, A, r1);
        auto x0b = sample_noise_zero_com(L, A, r2);
        REQUIRE(x0a == x0b);
        auto a = sde_sample(field, x0a, mask, cfg, r1);
        auto b = euler_sample(field, x0b, mask, cfg.steps);
        REQUIRE(a == b);
    }
    SECTION("two seeds with gamma > 0 differ") {
        SamplerConfig cfg;
        cfg.steps = 25;
        cfg.gamma = 0.5;
        cfg.terminal_deterministic_from = 0.9;
        Rng r1(7), r2(8);
        auto x0 = sample_noise_zero_com(L, A, r1);
        auto a = sde_sample(field, x0, mask, cfg, r1);
        auto b = sde_sample(field, x0, mask, cfg, r2);
        double diff = 0;
        for (size_t i = 0; i < a.size(); ++i) diff += std::fabs(a[i] - b[i]);
        REQUIRE(diff > 1e-6);
    }
    SECTION("Ornstein-Uhlenbeck variance matches the closed form within 5%") {
        // v = -x, injected score s = -x, constant schedule, eta=1, gamma=1:
        // dx = -(1+eta) x dt + sqrt(2 gamma) dW, theta = 2.
        // In the zero-CoM subspace every variance carries a (1 - 1/n) factor.
        const int n_atoms = L * A;
        const double theta = 2.0, gamma = 1.0;
        FieldFn ou_field = [](const std::vector<double>& x, double) {
            std::vector<double> v(x.size());
            for (size_t i = 0; i < v.size(); ++i) v[i] = -x[i];
            return v;
        };
        ScoreFn ou_score = [](const std::vector<double>& x, double, const std::vector<double>&) {
            std::vector<double> s(x.size());
            for (size_t i = 0; i < s.size(); ++i) s[i] = -x[i];
            return s;
        };
        SamplerConfig cfg;
        cfg.steps = 100;
        cfg.eta = 1.0;
        cfg.gamma = gamma;
        cfg.terminal_deterministic_from = 1.0; // pure OU over the whole horizon
        Rng rng(117);
        double m2 = 0.0;
        const int trajectories = 10000;
        for (int k = 0; k < trajectories; ++k) {
            auto x0 = sample_noise_zero_com(L, A, rng);
            auto x = sde_sample(ou_field, x0, mask, cfg, rng, ou_score);
            for (double v : x) m2 += v * v;
        }
        m2 /= static_cast<double>(trajectories) * n_atoms * 3;
        double proj = 1.0 - 1.0 / n_atoms;
        double expected =
            proj * (std::exp(-2.0 * theta) + (gamma / theta) * (1.0 - std::exp(-2.0 * theta)));
        REQUIRE(m2 == Catch::Approx(expected).epsilon(0.05));
    }
}

TEST_CASE("flow loss", "[flow]") {
    Rng rng(19);
    const int L = 3, A = 2;
    FlowBatchItem item;
    item.L = L;
    item.rep_atom = 0;
    item.atom_mask = full_mask(L * A);
    item.x1 = sample_noise_zero_com(L, A, rng);
    item.cond = make_tensor({L, 3}, std::vector<double>(L * 3, 1.0));
    auto x0 = sample_noise_zero_com(L, A, rng);

    SECTION("a field hard-wired to x1 - x0 gives exactly zero loss") {
        NetFn perfect = [&](const std::vector<double>&, double, bool) {
            std::vector<double> v(item.x1.size());
            for (size_t i = 0; i < v.size(); ++i) v[i] = item.x1[i] - x0[i];
            return make_tensor({L, A * 3}, std::move(v));
        };
        auto loss = flow_loss_at(perfect, item, 0.3, x0, false);
        REQUIRE(loss->scalar() == 0.0);
    }
    SECTION("a zero field gives the closed-form mean squared displacement") {
        NetFn zero_fn = [&](const std::vector<double>&, double, bool) {
            return zeros({L, A * 3});
        };
        auto loss = flow_loss_at(zero_fn, item, 0.7, x0, false);
        double expect = 0.0;
        for (size_t i = 0; i < item.x1.size(); ++i) {
            double d = item.x1[i] - x0[i];
            expect += d * d;
        }
        expect /= static_cast<double>(L * A * 3);
        REQUIRE(loss->scalar() == Catch::Approx(expect).margin(1e-12));
    }
    SECTION("full conditioning dropout makes the loss token-independent") {
        ParamStore ps;
        Rng wrng(23);
        VectorFieldNet net;
        net.build(ps, "dec.", tiny_vf_cfg(), wrng);
        FlowBatchItem a = item, b = item;
        b.cond = make_tensor({L, 3}, std::vector<double>(L * 3, -2.0)); // different tokens
        Rng r1(5), r2(5);
        auto la = flow_loss(net, a, 1.0, r1);
        auto lb = flow_loss(net, b, 1.0, r2);
        REQUIRE(la->scalar() == lb->scalar());
    }
}

TEST_CASE("vector field net contracts", "[flow]") {
    ParamStore ps;
    Rng rng(31);
    auto cfg = tiny_vf_cfg();
    VectorFieldNet net;
    net.build(ps, "dec.", cfg, rng);
    const int L = 4;
    auto mask = full_mask(L * cfg.atoms);
    auto x = sample_noise_zero_com(L, cfg.atoms, rng);
    auto cond = make_tensor({L, cfg.cond_dim}, std::vector<double>(L * cfg.cond_dim, 0.5));

    SECTION("output shape matches input and is zero-CoM") {
        auto v = net.forward(x, 0.4, cond, mask, L, 0);
        REQUIRE(v->shape == std::vector<int>{L, cfg.atoms * 3});
        auto com = center_of_mass(v->data, mask);
        for (double c : com) REQUIRE(std::fabs(c) < 1e-12);
    }
    SECTION("fresh net has a zero-initialized head") {
        auto v = net.forward(x, 0.4, cond, mask, L, 0);
        for (double d : v->data) REQUIRE(d == 0.0);
    }
    SECTION("null conditioning differs from token conditioning after training starts") {
        // nudge the output head away from zero so the difference is visible
        Rng wr(91);
        for (auto& w : ps.get("dec.out.w")->data) w = wr.uniform(-0.1, 0.1);
        auto vc = net.forward(x, 0.4, cond, mask, L, 0);
        auto vu = net.forward(x, 0.4, nullptr, mask, L, 0);
        double diff = 0;
        for (size_t i = 0; i < vc->data.size(); ++i) diff += std::fabs(vc->data[i] - vu->data[i]);
        REQUIRE(diff > 1e-12);
    }
}

TEST_CASE("vector field net gradient check", "[flow][gradcheck]") {
    ParamStore ps;
    Rng rng(37);
    auto cfg = tiny_vf_cfg();
    VectorFieldNet net;
    net.build(ps, "dec.", cfg, rng);
    // move the zero-initialized head so gradients flow everywhere
    for (auto& w : ps.get("dec.out.w")->data) w = rng.uniform(-0.3, 0.3);

    const int L = 3;
    FlowBatchItem item;
    item.L = L;
    item.rep_atom = 0;
    item.atom_mask = full_mask(L * cfg.atoms);
    item.x1 = sample_noise_zero_com(L, cfg.atoms, rng);
    item.cond = make_tensor({L, cfg.cond_dim}, std::vector<double>(L * cfg.cond_dim, 0.3));
    auto x0 = sample_noise_zero_com(L, cfg.atoms, rng);

    auto net_fn = [&](const std::vector<double>& x_t, double t, bool conditioned) {
        return net.forward(x_t, t, conditioned ? item.cond : nullptr, item.atom_mask, L,
                           item.rep_atom);
    };
    auto scalar_fn = [&] { return flow_loss_at(net_fn, item, 0.45, x0, false)->scalar(); };
    auto backward_fn = [&] {
        Tape tape;
        Tape::Scope scope(tape);
        tape.backward(flow_loss_at(net_fn, item, 0.45, x0, false));
    };
    auto res = oracles::grad_check(scalar_fn, backward_fn, ps.all_params());
    INFO("checked " << res.checked << " partials, max rel err " << res.max_rel_err);
    REQUIRE(res.max_rel_err < 1e-4);
}
