#include <catch2/catch_amalgamated.hpp>

#include "ribosphere/codebook.hpp"
#include "oracles.hpp"

using namespace ribosphere;

namespace {

TokenSequence toks(std::string id, std::vector<int64_t> idx) {
    TokenSequence t;
    t.id = std::move(id);
    t.levels = FsqConfig{{8, 6, 5}};
    t.indices = std::move(idx);
    return t;
}

// naive recount oracle
int64_t naive_count(const std::vector<TokenSequence>& corpus, const std::vector<int64_t>& ngram) {
    int64_t c = 0;
    int n = static_cast<int>(ngram.size());
    for (const auto& t : corpus)
        for (int i = 0; i + n <= static_cast<int>(t.indices.size()); ++i) {
            bool match = true;
            for (int k = 0; k < n; ++k)
                if (t.indices[i + k] != ngram[k]) match = false;
            if (match) ++c;
        }
    return c;
}

} // namespace

TEST_CASE("mine_ngrams counting", "[codebook]") {
    SECTION("overlapping occurrences count") {
        auto stats = mine_ngrams({toks("a", {7, 7, 7, 7})}, 2);
        REQUIRE(stats.size() == 1);
        REQUIRE(stats[0].ngram == std::vector<int64_t>{7, 7});
        REQUIRE(stats[0].count == 3);
    }
    SECTION("n=1 gives a frequency table summing to the residue count") {
        std::vector<TokenSequence> corpus = {toks("a", {1, 2, 2, 3}), toks("b", {2, 3})};
        auto stats = mine_ngrams(corpus, 1);
        int64_t total = 0;
        for (const auto& s : stats) total += s.count;
        REQUIRE(total == 6);
    }
    SECTION("planted shared 5-gram ranks first") {
        std::vector<int64_t> planted = {11, 22, 33, 44, 55};
        std::vector<int64_t> a = {1, 2};
        a.insert(a.end(), planted.begin(), planted.end());
        a.push_back(9);
        std::vector<int64_t> b = {8};
        b.insert(b.end(), planted.begin(), planted.end());
        b.insert(b.end(), planted.begin(), planted.end()); // twice more
        auto stats = mine_ngrams({toks("a", a), toks("b", b)}, 5);
        REQUIRE(stats[0].ngram == planted);
        REQUIRE(stats[0].count == 3);
        REQUIRE(stats[0].instances.size() == 3);
    }
    SECTION("counts equal a naive recount on random corpora") {
        Rng rng(3);
        std::vector<TokenSequence> corpus;
        for (int s = 0; s < 6; ++s) {
            std::vector<int64_t> idx;
            for (int i = 0; i < 30; ++i) idx.push_back(static_cast<int64_t>(rng.below(4)));
            corpus.push_back(toks("s" + std::to_string(s), idx));
        }
        for (int n : {1, 2, 3}) {
            auto stats = mine_ngrams(corpus, n);
            for (const auto& st : stats) REQUIRE(st.count == naive_count(corpus, st.ngram));
        }
    }
    SECTION("ordering is deterministic: count desc then lexicographic") {
        auto stats = mine_ngrams({toks("a", {3, 1, 3, 1, 2, 2})}, 1);
        REQUIRE(stats[0].count >= stats[1].count);
        for (size_t i = 0; i + 1 < stats.size(); ++i) {
            if (stats[i].count == stats[i + 1].count)
                REQUIRE(stats[i].ngram < stats[i + 1].ngram);
        }
    }
    SECTION("n exceeding every sequence errors") {
        REQUIRE_THROWS_AS(mine_ngrams({toks("a", {1, 2})}, 5), AnalysisError);
    }
}

TEST_CASE("ngram consistency", "[codebook]") {
    Rng rng(5);
    Points trace;
    for (int i = 0; i < 5; ++i)
        trace.push_back({rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)});

    SECTION("rigid copies give zero mean RMSD") {
        std::vector<Points> inst;
        for (int k = 0; k < 4; ++k) {
            Mat3 r = random_rotation_matrix(rng);
            Vec3 t{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
            Points p(trace.size());
            for (size_t i = 0; i < trace.size(); ++i) p[i] = mat3_apply(r, trace[i]) + t;
            inst.push_back(p);
        }
        auto res = ngram_consistency(inst);
        REQUIRE(res.mean_rmsd == Catch::Approx(0.0).margin(1e-8));
    }
    SECTION("a 1 A z-offset on one residue reproduces the direct oracle") {
        Points shifted = trace;
        shifted[2][2] += 1.0;
        auto res = ngram_consistency({trace, shifted});
        double expect = oracles::rmsd_aligned_oracle(trace, shifted);
        REQUIRE(res.mean_rmsd == Catch::Approx(expect).margin(1e-9));
        REQUIRE(res.mean_rmsd > 0.0);
    }
    SECTION("mean is invariant to instance ordering") {
        Points shifted = trace;
        shifted[0][1] += 0.7;
        Points other = trace;
        other[4][0] -= 1.3;
        auto a = ngram_consistency({trace, shifted, other});
        auto b = ngram_consistency({other, trace, shifted});
        REQUIRE(a.mean_rmsd == Catch::Approx(b.mean_rmsd).margin(1e-12));
    }
    SECTION("fewer than 2 instances errors") {
        REQUIRE_THROWS_AS(ngram_consistency({trace}), AnalysisError);
    }
}

TEST_CASE("divergences", "[codebook]") {
    SECTION("identical distributions give zero KL and JS") {
        std::vector<double> p = {0.25, 0.25, 0.5};
        REQUIRE(kl_divergence(p, p) == 0.0);
        REQUIRE(js_divergence(p, p) == 0.0);
    }
    SECTION("two-code toy value matches hand arithmetic") {
        std::vector<double> motif = {0.9, 0.1};
        std::vector<double> background = {0.5, 0.5};
        double expect = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
        REQUIRE(kl_divergence(motif, background) == Catch::Approx(expect).margin(1e-12));
        REQUIRE(expect == Catch::Approx(0.368).margin(5e-4));
    }
    SECTION("KL is non-negative on random distribution pairs; JS bounded and symmetric") {
        Rng rng(7);
        for (int trial = 0; trial < 200; ++trial) {
            int n = 2 + static_cast<int>(rng.below(6));
            std::vector<double> p(n), q(n);
            double sp = 0, sq = 0;
            for (int i = 0; i < n; ++i) {
                p[i] = rng.uniform(0.01, 1.0);
                q[i] = rng.uniform(0.01, 1.0);
                sp += p[i];
                sq += q[i];
            }
            for (int i = 0; i < n; ++i) {
                p[i] /= sp;
                q[i] /= sq;
            }
            REQUIRE(kl_divergence(p, q) >= 0.0);
            double js = js_divergence(p, q);
            REQUIRE(js >= 0.0);
            REQUIRE(js <= std::log(2.0) + 1e-15);
            REQUIRE(js == Catch::Approx(js_divergence(q, p)).margin(1e-15));
        }
    }
    SECTION("disjoint support reaches ln 2") {
        std::vector<double> p = {1.0, 0.0};
        std::vector<double> q = {0.0, 1.0};
        REQUIRE(js_divergence(p, q) == Catch::Approx(std::log(2.0)).margin(1e-15));
        REQUIRE(js_distance(p, q) == Catch::Approx(std::sqrt(std::log(2.0))).margin(1e-15));
    }
    SECTION("motif_kl applies Laplace smoothing over the full code space") {
        std::vector<int64_t> motif = {0, 0, 0, 1};
        std::vector<int64_t> background = {0, 1, 2, 3};
        REQUIRE(motif_kl(motif, motif, 4) == Catch::Approx(0.0).margin(1e-15));
        REQUIRE(motif_kl(motif, background, 4) > 0.0);
        REQUIRE_THROWS_AS(motif_kl({}, background, 4), AnalysisError);
        // smoothing keeps codes never seen in the background finite
        std::vector<int64_t> spiky = {3, 3, 3, 3, 3};
        REQUIRE(std::isfinite(motif_kl(spiky, background, 4)));
    }
}

TEST_CASE("dot-bracket parsing and motif annotation", "[codebook]") {
    SECTION("perfect stem-loop: one HL of size 4") {
        auto pairs = parse_dot_bracket("((((....))))");
        auto ann = annotate_motifs(12, pairs, "s");
        int hl = 0;
        for (const auto& a : ann)
            if (a.cls == MotifClass::HL) {
                ++hl;
                REQUIRE(a.size() == 4);
                REQUIRE(a.segments == std::vector<std::pair<int, int>>{{4, 7}});
            }
        REQUIRE(hl == 1);
    }
    SECTION("(( .. (( ... )) .. )) decomposes into one IL and one HL") {
        auto pairs = parse_dot_bracket("((..((...))..))");
        auto ann = annotate_motifs(15, pairs, "s");
        int hl = 0, il = 0;
        for (const auto& a : ann) {
            if (a.cls == MotifClass::HL) ++hl;
            if (a.cls == MotifClass::IL) {
                ++il;
                REQUIRE(a.segments == std::vector<std::pair<int, int>>{{2, 3}, {11, 12}});
            }
        }
        REQUIRE(hl == 1);
        REQUIRE(il == 1);
    }
    SECTION("three-way junction is classified J3") {
        auto pairs = parse_dot_bracket("((.((...)).((...)).))");
        auto ann = annotate_motifs(21, pairs, "s");
        int j3 = 0;
        for (const auto& a : ann)
            if (a.cls == MotifClass::J3) ++j3;
        REQUIRE(j3 == 1);
    }
    SECTION("unpaired sequence is all background") {
        auto ann = annotate_motifs(8, {}, "s");
        REQUIRE(ann.size() == 1);
        REQUIRE(ann[0].cls == MotifClass::Background);
        REQUIRE(ann[0].segments == std::vector<std::pair<int, int>>{{0, 7}});
    }
    SECTION("malformed inputs error") {
        REQUIRE_THROWS_AS(parse_dot_bracket("(()"), AnalysisError);
        REQUIRE_THROWS_AS(annotate_motifs(3, {{0, 5}}, "s"), AnalysisError);
    }
}

TEST_CASE("heuristic base pairs find a planted duplex", "[codebook]") {
    // two anti-parallel strands of C4' anchors 10.4 A apart plus a far spacer
    RnaStructure s;
    s.id = "duplex";
    s.atom_set = AtomSetTag::A1;
    s.chain_id = "A";
    const int n = 6, L = 2 * n + 4;
    s.sequence = std::string(L, 'G');
    s.coords.assign(static_cast<size_t>(L) * 3, 0.0);
    s.mask.assign(L, 1);
    for (int i = 0; i < n; ++i) {
        s.coords[static_cast<size_t>(i) * 3 + 0] = 0.0;
        s.coords[static_cast<size_t>(i) * 3 + 2] = i * 4.0;
    }
    for (int i = 0; i < 4; ++i) {
        s.coords[static_cast<size_t>(n + i) * 3 + 0] = 40.0 + 5.0 * i;
        s.coords[static_cast<size_t>(n + i) * 3 + 2] = 60.0;
    }
    for (int i = 0; i < n; ++i) {
        s.coords[static_cast<size_t>(n + 4 + i) * 3 + 0] = 10.4;
        s.coords[static_cast<size_t>(n + 4 + i) * 3 + 2] = (n - 1 - i) * 4.0;
    }
    auto pairs = heuristic_base_pairs(s);
    REQUIRE(pairs.size() == n);
    for (auto& [i, j] : pairs) REQUIRE(i + j == 2 * n + 3); // anti-parallel match
}
