#include <catch2/catch_amalgamated.hpp>

#include "ribosphere/structure.hpp"

#include <set>

using namespace ribosphere;

namespace {

// Hand-written 3-residue fixture with all A10 atoms present.
std::string three_residue_pdb() {
    Rng rng(17);
    auto s = synth_helix(4, 32.7, 2.81, rng, AtomSetTag::A10);
    RnaStructure s3 = s;
    s3.sequence = s.sequence.substr(0, 3);
    s3.coords.assign(s.coords.begin(), s.coords.begin() + 3 * 10 * 3);
    s3.mask.assign(s.mask.begin(), s.mask.begin() + 3 * 10);
    return write_pdb(s3);
}

} // namespace

TEST_CASE("parse_pdb on a complete fixture", "[structure]") {
    auto text = three_residue_pdb();
    auto parsed = parse_pdb(text, AtomSetTag::A10, "fix");
    REQUIRE(parsed.size() == 1);
    const auto& s = parsed[0];
    REQUIRE(s.length() == 3);
    REQUIRE(s.atoms() == 10);
    for (auto m : s.mask) REQUIRE(m == 1);
}

TEST_CASE("parse_pdb masks a deleted atom", "[structure]") {
    auto text = three_residue_pdb();
    // drop the O2' line of residue 2
    std::istringstream is(text);
    std::ostringstream os;
    std::string line;
    int dropped = 0;
    while (std::getline(is, line)) {
        if (!dropped && line.rfind("ATOM", 0) == 0 && line.substr(12, 4).find("O2'") != std::string::npos &&
            line.substr(22, 4).find("2") != std::string::npos) {
            ++dropped;
            continue;
        }
        os << line << "\n";
    }
    REQUIRE(dropped == 1);
    auto parsed = parse_pdb(os.str(), AtomSetTag::A10, "fix");
    const auto& s = parsed[0];
    auto names = atom_set_names(AtomSetTag::A10, 'A');
    int o2 = 0;
    for (int a = 0; a < 10; ++a)
        if (names[a] == "O2'") o2 = a;
    for (int i = 0; i < 3; ++i)
        for (int a = 0; a < 10; ++a) {
            bool expect = !(i == 1 && a == o2);
            REQUIRE(s.present(i, a) == expect);
        }
}

TEST_CASE("parse_pdb error paths", "[structure]") {
    REQUIRE_THROWS_WITH(parse_pdb("", AtomSetTag::A10), Catch::Matchers::ContainsSubstring("no RNA chains"));
    REQUIRE_THROWS_WITH(parse_pdb("HETATM    1  C4'   A A   1      1.0     2.0     3.0\n", AtomSetTag::A10),
                        Catch::Matchers::ContainsSubstring("no RNA chains"));

    // duplicate atom
    std::string dup =
        "ATOM      1  C4'   A A   1       1.000   2.000   3.000  1.00  0.00\n"
        "ATOM      2  C4'   A A   1       1.500   2.000   3.000  1.00  0.00\n";
    REQUIRE_THROWS_WITH(parse_pdb(dup, AtomSetTag::A10), Catch::Matchers::ContainsSubstring("duplicate atom"));

    // malformed coordinate carries the line number
    std::string bad =
        "ATOM      1  C4'   A A   1       1.000   2.000   x.bad  1.00  0.00\n";
    REQUIRE_THROWS_WITH(parse_pdb(bad, AtomSetTag::A10), Catch::Matchers::ContainsSubstring("line 1"));
}

TEST_CASE("primed and starred atom names are equivalent", "[structure]") {
    std::string starred =
        "ATOM      1  C4*   A A   1       1.000   2.000   3.000  1.00  0.00\n";
    auto parsed = parse_pdb(starred, AtomSetTag::A1, "s");
    REQUIRE(parsed[0].present(0, 0));
}

TEST_CASE("unknown residues are dropped with a warning", "[structure]") {
    std::string text =
        "ATOM      1  C4'   A A   1       1.000   2.000   3.000  1.00  0.00\n"
        "ATOM      2  C4' PSU A   2       4.000   2.000   3.000  1.00  0.00\n"
        "ATOM      3  C4'   G A   3       7.000   2.000   3.000  1.00  0.00\n";
    std::vector<std::string> warnings;
    auto parsed = parse_pdb(text, AtomSetTag::A1, "w",
                            [&](const std::string& m) { warnings.push_back(m); });
    REQUIRE(parsed[0].length() == 2);
    REQUIRE(parsed[0].sequence == "AG");
    REQUIRE(warnings.size() == 1);
    REQUIRE(warnings[0].find("PSU") != std::string::npos);
}

TEST_CASE("multi-model expansion shares an id prefix", "[structure]") {
    Rng rng(3);
    auto s = synth_helix(5, 32.7, 2.81, rng, AtomSetTag::A1);
    std::string text = "MODEL        1\n" + write_pdb(s) + "ENDMDL\nMODEL        2\n" +
                       write_pdb(mean_center(s)) + "ENDMDL\n";
    auto parsed = parse_pdb(text, AtomSetTag::A1, "multi");
    REQUIRE(parsed.size() == 2);
    REQUIRE(parsed[0].id == "multi_A_m1");
    REQUIRE(parsed[1].id == "multi_A_m2");
}

TEST_CASE("round trip preserves sequence, mask and 3-decimal coords", "[structure]") {
    Rng rng(23);
    auto s = synth_helix(8, 32.7, 2.81, rng, AtomSetTag::A10);
    s.mask[13] = 0; // hide one atom
    for (int c = 0; c < 3; ++c) s.coords[13 * 3 + c] = 0.0;
    auto text = write_pdb(s);
    auto back = parse_pdb(text, AtomSetTag::A10, "rt")[0];
    REQUIRE(back.sequence == s.sequence);
    REQUIRE(back.mask == s.mask);
    for (size_t i = 0; i < s.coords.size(); ++i)
        REQUIRE(back.coords[i] == Catch::Approx(s.coords[i]).margin(5e-4));
}

TEST_CASE("mean_center", "[structure]") {
    Rng rng(5);
    auto s = synth_helix(6, 32.7, 2.81, rng);
    SECTION("constant coords collapse to zero") {
        RnaStructure c = s;
        for (size_t i = 0; i < c.coords.size(); ++i) c.coords[i] = 5.0;
        auto out = mean_center(c);
        for (double v : out.coords) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("already centered input unchanged, idempotent") {
        auto c1 = mean_center(s);
        Vec3 cen = centroid(c1);
        REQUIRE(std::fabs(cen[0]) < 1e-9);
        REQUIRE(std::fabs(cen[1]) < 1e-9);
        REQUIRE(std::fabs(cen[2]) < 1e-9);
        auto c2 = mean_center(c1);
        for (size_t i = 0; i < c1.coords.size(); ++i)
            REQUIRE(c2.coords[i] == Catch::Approx(c1.coords[i]).margin(1e-12));
    }
    SECTION("all atoms masked errors") {
        RnaStructure bad = s;
        std::fill(bad.mask.begin(), bad.mask.end(), 0);
        REQUIRE_THROWS_AS(mean_center(bad), StructureError);
    }
}

TEST_CASE("random rotations are proper and isometric", "[structure]") {
    Rng rng(31);
    for (int i = 0; i < 1000; ++i) {
        Mat3 r = random_rotation_matrix(rng);
        REQUIRE(mat3_det(r) == Catch::Approx(1.0).margin(1e-12));
        Mat3 rtr = mat3_mul(mat3_transpose(r), r);
        Mat3 eye = mat3_identity();
        for (int k = 0; k < 9; ++k) REQUIRE(rtr[k] == Catch::Approx(eye[k]).margin(1e-12));
    }

    auto s = mean_center(synth_helix(7, 32.7, 2.81, rng));
    auto d0 = pairwise_distances(s);
    auto rot = random_rotation(s, rng);
    auto d1 = pairwise_distances(rot);
    for (size_t i = 0; i < d0.size(); ++i) REQUIRE(d1[i] == Catch::Approx(d0[i]).margin(1e-9));
}

TEST_CASE("rotation sampling is roughly uniform", "[structure]") {
    Rng rng(77);
    double colsum[9] = {0};
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        Mat3 r = random_rotation_matrix(rng);
        for (int k = 0; k < 9; ++k) colsum[k] += r[k];
    }
    for (int k = 0; k < 9; ++k) REQUIRE(std::fabs(colsum[k] / n) < 0.05);
}

TEST_CASE("synth_helix geometry", "[structure]") {
    Rng rng(13);
    SECTION("constant consecutive C4' distance") {
        auto s = synth_helix(10, 32.7, 2.81, rng);
        int c4 = c4_index(s.atom_set);
        double d0 = norm(s.atom_vec(1, c4) - s.atom_vec(0, c4));
        for (int i = 1; i + 1 < 10; ++i) {
            double d = norm(s.atom_vec(i + 1, c4) - s.atom_vec(i, c4));
            REQUIRE(d == Catch::Approx(d0).margin(1e-9));
        }
    }
    SECTION("zero twist is a pure translation along z") {
        auto s = synth_helix(6, 0.0, 2.81, rng);
        int c4 = c4_index(s.atom_set);
        for (int i = 1; i < 6; ++i) {
            REQUIRE(s.atom_vec(i, c4)[0] == Catch::Approx(s.atom_vec(0, c4)[0]).margin(1e-12));
            REQUIRE(s.atom_vec(i, c4)[1] == Catch::Approx(s.atom_vec(0, c4)[1]).margin(1e-12));
        }
    }
    SECTION("twist 360/k closes the turn") {
        const int k = 8;
        auto s = synth_helix(k + 1, 360.0 / k, 2.81, rng);
        int c4 = c4_index(s.atom_set);
        REQUIRE(s.atom_vec(k, c4)[0] == Catch::Approx(s.atom_vec(0, c4)[0]).margin(1e-9));
        REQUIRE(s.atom_vec(k, c4)[1] == Catch::Approx(s.atom_vec(0, c4)[1]).margin(1e-9));
    }
    SECTION("length below 4 errors") {
        REQUIRE_THROWS_AS(synth_helix(3, 32.7, 2.81, rng), StructureError);
    }
    SECTION("deterministic given seed") {
        Rng r1(4), r2(4);
        auto a = synth_helix(5, 32.7, 2.81, r1);
        auto b = synth_helix(5, 32.7, 2.81, r2);
        REQUIRE(a.sequence == b.sequence);
        REQUIRE(a.coords == b.coords);
    }
}

TEST_CASE("split_dataset", "[structure]") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back("s" + std::to_string(i));

    SECTION("fractions (1,0,0) takes everything") {
        auto r = split_dataset(ids, 1.0, 0.0, 0.0, 7);
        REQUIRE(r.train.size() == 100);
    }
    SECTION("same seed twice is identical; disjoint partition") {
        auto a = split_dataset(ids, 0.8, 0.1, 0.1, 7);
        auto b = split_dataset(ids, 0.8, 0.1, 0.1, 7);
        REQUIRE(a.train == b.train);
        REQUIRE(a.val == b.val);
        REQUIRE(a.test == b.test);
        std::set<size_t> all;
        for (auto i : a.train) all.insert(i);
        for (auto i : a.val) all.insert(i);
        for (auto i : a.test) all.insert(i);
        REQUIRE(all.size() == 100);
    }
    SECTION("sizes near the target fractions (frozen from simulation)") {
        auto r = split_dataset(ids, 0.8, 0.1, 0.1, 7);
        REQUIRE(std::llabs(static_cast<long long>(r.train.size()) - 80) <= 3);
        REQUIRE(std::llabs(static_cast<long long>(r.val.size()) - 10) <= 3);
        REQUIRE(std::llabs(static_cast<long long>(r.test.size()) - 10) <= 3);
    }
    SECTION("assignment is a function of (id, seed) only") {
        auto full = split_dataset(ids, 0.8, 0.1, 0.1, 7);
        std::vector<std::string> half(ids.begin(), ids.begin() + 50);
        auto part = split_dataset(half, 0.8, 0.1, 0.1, 7);
        std::set<size_t> train_full(full.train.begin(), full.train.end());
        for (size_t i = 0; i < 50; ++i) {
            bool in_full = train_full.count(i) > 0;
            bool in_part = std::find(part.train.begin(), part.train.end(), i) != part.train.end();
            REQUIRE(in_full == in_part);
        }
    }
    SECTION("empty corpus errors") {
        REQUIRE_THROWS_AS(split_dataset({}, 1, 0, 0, 1), StructureError);
    }
}
