#include "doctest.h"
#include "duet/rope.hpp"

#include <set>
#include <tuple>

using namespace duet;

namespace {
// attention logit between two rotated tokens, double precision
double logit(const rope::FreqConfig& fc, const std::vector<double>& qc, const std::vector<double>& kc,
             rope::PositionIndex pq, rope::PositionIndex pk) {
    std::vector<double> q = qc, k = kc;
    std::vector<rope::PositionIndex> pos1 = {pq}, pos2 = {pk};
    rope::apply(q.data(), 1, 1, fc, pos1, +1);
    rope::apply(k.data(), 1, 1, fc, pos2, +1);
    double acc = 0;
    for (size_t i = 0; i < q.size(); i++) acc += q[i] * k[i];
    return acc;
}
}  // namespace

TEST_CASE("remap_reference formula") {
    CHECK(rope::remap_reference({0, 2, 3}, 4, 4) == rope::PositionIndex{-1, 6, 7});
    CHECK(rope::remap_reference({0, 0, 0}, 0, 0) == rope::PositionIndex{-1, 0, 0});
    CHECK(rope::remap_reference({0, 5, 1}, 8, 8) == rope::PositionIndex{-1, 13, 9});
}

TEST_CASE("remapped reference positions are disjoint from frame positions") {
    int frames = 3, gh = 4, gw = 5;
    auto fp = rope::grid_positions(frames, gh, gw);
    std::set<std::tuple<int, int, int>> frame_set;
    for (auto& p : fp) frame_set.insert({p.l, p.i, p.j});
    for (int i = 0; i < gh; i++)
        for (int j = 0; j < gw; j++) {
            auto r = rope::remap_reference({0, i, j}, gw, gh);
            CHECK(r.l == -1);
            CHECK(frame_set.count({r.l, r.i, r.j}) == 0);
        }
}

TEST_CASE("rope preserves token norms") {
    rope::FreqConfig fc(24);
    Rng rng(7);
    for (int trial = 0; trial < 20; trial++) {
        std::vector<double> x(24);
        for (auto& v : x) v = rng.normal();
        double n0 = 0;
        for (double v : x) n0 += v * v;
        std::vector<rope::PositionIndex> pos = {
            {rng.uniform_int(-1, 5), rng.uniform_int(0, 9), rng.uniform_int(0, 9)}};
        rope::apply(x.data(), 1, 1, fc, pos, +1);
        double n1 = 0;
        for (double v : x) n1 += v * v;
        CHECK(n1 == doctest::Approx(n0).epsilon(1e-6));
    }
}

TEST_CASE("attention logits depend only on relative position (brute force)") {
    rope::FreqConfig fc(12);
    Rng rng(11);
    std::vector<double> q(12), k(12);
    for (auto& v : q) v = rng.normal();
    for (auto& v : k) v = rng.normal();
    // all (base, shifted-base) pairs over a 5x5x5 grid with a fixed offset
    rope::PositionIndex delta{1, 2, 1};
    double expect = logit(fc, q, k, {0, 0, 0}, {0 + delta.l, 0 + delta.i, 0 + delta.j});
    for (int l = 0; l < 3; l++)
        for (int i = 0; i < 3; i++)
            for (int j = 0; j < 3; j++) {
                double got = logit(fc, q, k, {l, i, j}, {l + delta.l, i + delta.i, j + delta.j});
                CHECK(got == doctest::Approx(expect).epsilon(1e-8));
            }
}

TEST_CASE("common shift along each single axis leaves logits invariant") {
    rope::FreqConfig fc(24);
    Rng rng(13);
    std::vector<double> q(24), k(24);
    for (auto& v : q) v = rng.normal();
    for (auto& v : k) v = rng.normal();
    rope::PositionIndex a{1, 2, 3}, b{2, 0, 4};
    double base = logit(fc, q, k, a, b);
    for (int s = 1; s <= 4; s++) {
        CHECK(logit(fc, q, k, {a.l + s, a.i, a.j}, {b.l + s, b.i, b.j}) ==
              doctest::Approx(base).epsilon(1e-8));
        CHECK(logit(fc, q, k, {a.l, a.i + s, a.j}, {b.l, b.i + s, b.j}) ==
              doctest::Approx(base).epsilon(1e-8));
        CHECK(logit(fc, q, k, {a.l, a.i, a.j + s}, {b.l, b.i, b.j + s}) ==
              doctest::Approx(base).epsilon(1e-8));
    }
}

TEST_CASE("equal positions rotate identically") {
    rope::FreqConfig fc(16);
    Rng rng(17);
    std::vector<double> x(16), y(16);
    for (int i = 0; i < 16; i++) {
        x[i] = rng.normal();
        y[i] = x[i];
    }
    std::vector<rope::PositionIndex> p1 = {{2, 3, 1}}, p2 = {{2, 3, 1}};
    rope::apply(x.data(), 1, 1, fc, p1, +1);
    rope::apply(y.data(), 1, 1, fc, p2, +1);
    for (int i = 0; i < 16; i++) CHECK(x[i] == y[i]);
}

TEST_CASE("apply with sign=-1 inverts the rotation") {
    rope::FreqConfig fc(24);
    Rng rng(19);
    std::vector<double> x(48);
    for (auto& v : x) v = rng.normal();
    auto orig = x;
    std::vector<rope::PositionIndex> pos = {{0, 1, 2}, {-1, 5, 7}};
    rope::apply(x.data(), 2, 1, fc, pos, +1);
    rope::apply(x.data(), 2, 1, fc, pos, -1);
    for (size_t i = 0; i < x.size(); i++) CHECK(x[i] == doctest::Approx(orig[i]).epsilon(1e-12));
}

TEST_CASE("axis split covers all pairs with remainder on frame axis") {
    rope::FreqConfig fc(16);  // 8 pairs -> 2+2 spatial, 4 frame
    CHECK(fc.pairs_frame == 4);
    CHECK(fc.pairs_h == 2);
    CHECK(fc.pairs_w == 2);
    rope::FreqConfig fc2(24);  // 12 pairs -> equal 4/4/4
    CHECK(fc2.pairs_frame == 4);
    CHECK(fc2.pairs_h == 4);
    CHECK(fc2.pairs_w == 4);
}
