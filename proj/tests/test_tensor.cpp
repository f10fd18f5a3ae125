#include <catch2/catch_amalgamated.hpp>

#include "ribosphere/checkpoint.hpp"
#include "ribosphere/tensor.hpp"
#include "oracles.hpp"

#include <cstdio>
#include <filesystem>

using namespace ribosphere;

namespace {

TensorPtr rand_param(std::vector<int> shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    int64_t n = shape_numel(shape);
    std::vector<double> d(n);
    for (auto& x : d) x = rng.uniform(lo, hi);
    return make_tensor(std::move(shape), std::move(d), true);
}

// Random fixed weights turning a tensor into a scalar, so gradient checks can
// probe the full output.
TensorPtr rand_weights_like(const TensorPtr& t, Rng& rng) {
    std::vector<double> d(t->data.size());
    for (auto& x : d) x = rng.uniform(-1.0, 1.0);
    return make_tensor(t->shape, std::move(d), false);
}

double check_op(const std::function<TensorPtr()>& build, const std::vector<TensorPtr>& wrt,
                Rng& rng) {
    TensorPtr probe;
    {
        Tape warm;
        Tape::Scope scope(warm);
        probe = build();
    }
    auto w = rand_weights_like(probe, rng);
    auto scalar_fn = [&]() {
        auto out = build();
        double s = 0.0;
        for (size_t i = 0; i < out->data.size(); ++i) s += out->data[i] * w->data[i];
        return s;
    };
    auto backward_fn = [&]() {
        Tape tape;
        Tape::Scope scope(tape);
        auto out = build();
        auto loss = sum(mul(out, w));
        tape.backward(loss);
    };
    auto res = oracles::grad_check(scalar_fn, backward_fn, wrt);
    return res.max_rel_err;
}

} // namespace

TEST_CASE("matmul identity and shapes", "[tensor]") {
    Rng rng(7);
    auto m = rand_param({3, 3}, rng);
    auto eye = make_tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto out = matmul(eye, m);
    for (int i = 0; i < 9; ++i) REQUIRE(out->data[i] == m->data[i]);

    auto a = rand_param({2, 5}, rng);
    auto b = rand_param({5, 4}, rng);
    REQUIRE(matmul(a, b)->shape == std::vector<int>{2, 4});
    REQUIRE_THROWS_AS(matmul(b, a), TensorError);
}

TEST_CASE("softmax symmetry and row sums", "[tensor]") {
    auto x = make_tensor({1, 4}, {0, 0, 0, 0});
    auto y = softmax(x);
    for (int i = 0; i < 4; ++i) REQUIRE(y->data[i] == Catch::Approx(0.25).margin(1e-15));

    Rng rng(3);
    auto z = rand_param({6, 9}, rng);
    auto s = softmax(z);
    for (int r = 0; r < 6; ++r) {
        double row = 0.0;
        for (int c = 0; c < 9; ++c) row += s->data[r * 9 + c];
        REQUIRE(row == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("layernorm normalizes the trailing axis", "[tensor]") {
    auto x = make_tensor({1, 3}, {1, 2, 3});
    auto g = full({3}, 1.0);
    auto b = zeros({3});
    auto y = layernorm(x, g, b);
    double m = (y->data[0] + y->data[1] + y->data[2]) / 3.0;
    REQUIRE(std::fabs(m) < 1e-12);
    double var = 0.0;
    for (int i = 0; i < 3; ++i) var += (y->data[i] - m) * (y->data[i] - m);
    var /= 3.0;
    REQUIRE(var == Catch::Approx(1.0).margin(1e-4)); // eps shifts variance slightly
}

TEST_CASE("simple backward identities", "[tensor]") {
    // d/dx tanh(x) at 0 = 1
    auto x = make_tensor({1}, {0.0}, true);
    {
        Tape tape;
        Tape::Scope scope(tape);
        auto loss = sum(tanh_op(x));
        tape.backward(loss);
        REQUIRE(x->grad[0] == Catch::Approx(1.0).margin(1e-15));
    }
    // d/dx x*x at 3 = 6
    auto x2 = make_tensor({1}, {3.0}, true);
    {
        Tape tape;
        Tape::Scope scope(tape);
        auto loss = sum(mul(x2, x2));
        tape.backward(loss);
        REQUIRE(x2->grad[0] == Catch::Approx(6.0).margin(1e-12));
    }
}

TEST_CASE("backward errors", "[tensor]") {
    auto x = make_tensor({2}, {1.0, 2.0}, true);
    Tape tape;
    Tape::Scope scope(tape);
    auto y = mul(x, x);
    REQUIRE_THROWS_AS(tape.backward(y), TensorError); // non-scalar loss
    auto loss = sum(y);
    tape.backward(loss);
    REQUIRE_THROWS_AS(tape.backward(loss), TensorError); // double backward
}

TEST_CASE("nan detection", "[tensor]") {
    auto x = make_tensor({1}, {1e308});
    REQUIRE_THROWS_AS(mul(x, x), TensorError);
}

TEST_CASE("finite-difference agreement for every op", "[tensor][gradcheck]") {
    Rng rng(42);

    SECTION("add/sub/mul/scale") {
        auto a = rand_param({3, 4}, rng);
        auto b = rand_param({3, 4}, rng);
        REQUIRE(check_op([&] { return add(a, b); }, {a, b}, rng) < 1e-4);
        REQUIRE(check_op([&] { return sub(a, b); }, {a, b}, rng) < 1e-4);
        REQUIRE(check_op([&] { return mul(a, b); }, {a, b}, rng) < 1e-4);
        REQUIRE(check_op([&] { return scale(a, -1.7); }, {a}, rng) < 1e-4);
        REQUIRE(check_op([&] { return add_scalar(a, 0.3); }, {a}, rng) < 1e-4);
    }
    SECTION("matmul / matmul_nt / add_rowvec") {
        auto a = rand_param({3, 5}, rng);
        auto b = rand_param({5, 4}, rng);
        auto c = rand_param({4, 5}, rng);
        auto v = rand_param({5}, rng);
        REQUIRE(check_op([&] { return matmul(a, b); }, {a, b}, rng) < 1e-4);
        REQUIRE(check_op([&] { return matmul_nt(a, c); }, {a, c}, rng) < 1e-4);
        REQUIRE(check_op([&] { return add_rowvec(a, v); }, {a, v}, rng) < 1e-4);
        REQUIRE(check_op([&] { return mul_rowvec(a, v); }, {a, v}, rng) < 1e-4);
    }
    SECTION("tanh / sigmoid / softmax / log_softmax") {
        auto a = rand_param({4, 6}, rng);
        REQUIRE(check_op([&] { return tanh_op(a); }, {a}, rng) < 1e-4);
        REQUIRE(check_op([&] { return sigmoid_op(a); }, {a}, rng) < 1e-4);
        REQUIRE(check_op([&] { return softmax(a); }, {a}, rng) < 1e-4);
        REQUIRE(check_op([&] { return log_softmax(a); }, {a}, rng) < 1e-4);
    }
    SECTION("layernorm") {
        auto a = rand_param({4, 8}, rng);
        auto g = rand_param({8}, rng, 0.5, 1.5);
        auto b = rand_param({8}, rng, -0.5, 0.5);
        REQUIRE(check_op([&] { return layernorm(a, g, b); }, {a, g, b}, rng) < 1e-4);
    }
    SECTION("reductions and shape ops") {
        auto a = rand_param({3, 6}, rng);
        REQUIRE(check_op([&] { return sum(a); }, {a}, rng) < 1e-4);
        REQUIRE(check_op([&] { return mean(a); }, {a}, rng) < 1e-4);
        REQUIRE(check_op([&] { return reshape(a, {6, 3}); }, {a}, rng) < 1e-4);
        REQUIRE(check_op([&] { return slice_cols(a, 1, 3); }, {a}, rng) < 1e-4);
        REQUIRE(check_op([&] { return slice_rows(a, 1, 2); }, {a}, rng) < 1e-4);
        auto b = rand_param({3, 2}, rng);
        REQUIRE(check_op([&] { return concat_cols({a, b}); }, {a, b}, rng) < 1e-4);
        auto c = rand_param({2, 6}, rng);
        REQUIRE(check_op([&] { return concat_rows({a, c}); }, {a, c}, rng) < 1e-4);
    }
    SECTION("embedding lookup") {
        auto table = rand_param({7, 5}, rng);
        std::vector<int> idx{0, 3, 3, 6, 1};
        REQUIRE(check_op([&] { return gather_rows(table, idx); }, {table}, rng) < 1e-4);
    }
    SECTION("vector-channel ops") {
        auto v = rand_param({4, 5 * 3}, rng);
        auto g = rand_param({4, 5}, rng);
        auto m3 = rand_param({4, 3}, rng);
        REQUIRE(check_op([&] { return mean_channels(v, 5); }, {v}, rng) < 1e-4);
        REQUIRE(check_op([&] { return channel_norms(v, 5); }, {v}, rng) < 1e-4);
        REQUIRE(check_op([&] { return rowwise_outer(g, m3); }, {g, m3}, rng) < 1e-4);
    }
    SECTION("com_project") {
        auto x = rand_param({4, 2 * 3}, rng);
        std::vector<uint8_t> mask(8, 1);
        mask[3] = 0;
        REQUIRE(check_op([&] { return com_project(x, mask); }, {x}, rng) < 1e-4);
    }
}

TEST_CASE("adamw update semantics", "[tensor]") {
    SECTION("zero gradient, zero decay: unchanged") {
        auto p = make_tensor({3}, {1.0, -2.0, 0.5}, true);
        p->ensure_grad();
        AdamW opt({p}, {});
        opt.step();
        REQUIRE(p->data[0] == 1.0);
        REQUIRE(p->data[1] == -2.0);
        REQUIRE(p->data[2] == 0.5);
    }
    SECTION("zero gradient with decay scales by (1 - lr*wd)") {
        auto p = make_tensor({2}, {1.0, -4.0}, true);
        p->ensure_grad();
        AdamWConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.5;
        AdamW opt({p}, cfg);
        opt.step();
        REQUIRE(p->data[0] == Catch::Approx(1.0 * (1 - 0.1 * 0.5)).margin(1e-15));
        REQUIRE(p->data[1] == Catch::Approx(-4.0 * (1 - 0.1 * 0.5)).margin(1e-15));
    }
    SECTION("one step on x^2 moves toward zero") {
        auto p = make_tensor({1}, {1.0}, true);
        AdamWConfig cfg;
        cfg.lr = 0.01;
        AdamW opt({p}, cfg);
        opt.zero_grad();
        {
            Tape tape;
            Tape::Scope scope(tape);
            auto loss = sum(mul(p, p));
            tape.backward(loss);
        }
        opt.step();
        REQUIRE(p->data[0] < 1.0);
        REQUIRE(p->data[0] > 0.9);
    }
}

TEST_CASE("rng determinism and normality", "[tensor]") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng r(5);
    double m = 0.0, m2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        m += x;
        m2 += x * x;
    }
    m /= n;
    m2 /= n;
    REQUIRE(std::fabs(m) < 0.03);
    REQUIRE(std::fabs(m2 - 1.0) < 0.05);

    // identical seed + identical op sequence -> bitwise identical tensors
    Rng s1(99), s2(99);
    auto t1 = randn({4, 4}, s1);
    auto t2 = randn({4, 4}, s2);
    REQUIRE(t1->data == t2->data);
}

TEST_CASE("checkpoint round trip", "[tensor]") {
    namespace fs = std::filesystem;
    Rng rng(11);
    ParamStore store;
    auto w = store.create("enc.w", {3, 4}, Init::Normal, rng, 0.5);
    auto b = store.create("enc.b", {4}, Init::Zeros, rng);
    b->data[2] = 1.25;

    auto path = (fs::temp_directory_path() / "rs_test_ckpt.rscp").string();
    save_checkpoint(path, "kind=test\nseed=11\n", store.entries());

    auto ck = load_checkpoint(path);
    REQUIRE(parse_meta(ck.meta).at("seed") == "11");
    REQUIRE(ck.at("enc.w").shape == std::vector<int>{3, 4});
    REQUIRE(ck.at("enc.w").data == w->data);
    REQUIRE(ck.at("enc.b").data == b->data);

    ParamStore store2;
    Rng rng2(999);
    store2.create("enc.w", {3, 4}, Init::Normal, rng2);
    store2.create("enc.b", {4}, Init::Normal, rng2);
    restore_params(ck, store2);
    REQUIRE(store2.get("enc.w")->data == w->data);

    // refuse to save NaN
    w->data[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(save_checkpoint(path, "", store.entries()), CheckpointError);
    fs::remove(path);
}
