#include "doctest.h"
#include "duet/common.hpp"

#include <cstdio>
#include <set>

using namespace duet;

TEST_CASE("sha256 known vectors") {
    // published digests for the empty string and "abc"
    CHECK(Sha256::of_string("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(Sha256::of_string("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(Sha256::of_string("The quick brown fox jumps over the lazy dog") ==
          "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
    // streamed in odd chunk sizes == one-shot
    Sha256 s;
    std::string msg(1000, 'x');
    s.update(msg.data(), 333);
    s.update(msg.data() + 333, 667);
    CHECK(s.hex_digest() == Sha256::of_string(msg));
}

TEST_CASE("sha256 of file matches of string") {
    std::string path = "sha_tmp_test.bin";
    std::string content = "file hash content\n with newline";
    write_text_file(path, content);
    CHECK(Sha256::of_file(path) == Sha256::of_string(content));
    std::remove(path.c_str());
}

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; i++) {
        double x = a.uniform();
        CHECK(x == b.uniform());
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    CHECK(a.uniform() != c.uniform());
    CHECK(seed_for(7, "train/step/1") != seed_for(7, "train/step/2"));
    CHECK(seed_for(7, "x") != seed_for(8, "x"));
    CHECK(seed_for(7, "x") == seed_for(7, "x"));
}

TEST_CASE("rng normal moments") {
    Rng r(123);
    double sum = 0, sum2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; i++) {
        double x = r.normal();
        sum += x;
        sum2 += x * x;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("rng uniform_int inclusive bounds") {
    Rng r(5);
    std::set<int> seen;
    for (int i = 0; i < 1000; i++) {
        int x = r.uniform_int(2, 5);
        CHECK(x >= 2);
        CHECK(x <= 5);
        seen.insert(x);
    }
    CHECK(seen.size() == 4);
}

TEST_CASE("rng categorical frequencies") {
    Rng r(99);
    std::vector<double> w = {1.0, 3.0};  // 0.25 / 0.75
    int n1 = 0;
    const int n = 100000;
    for (int i = 0; i < n; i++) n1 += r.categorical(w);
    CHECK(std::abs(double(n1) / n - 0.75) < 0.01);
    CHECK_THROWS_AS(r.categorical({0.0, 0.0}), contract_error);
    CHECK_THROWS_AS(r.categorical({-1.0, 2.0}), contract_error);
}

TEST_CASE("all_finite") {
    float ok[3] = {1.0f, -2.0f, 0.0f};
    CHECK(all_finite(ok, 3));
    float bad[3] = {1.0f, std::numeric_limits<float>::quiet_NaN(), 0.0f};
    CHECK(!all_finite(bad, 3));
    float inf[1] = {std::numeric_limits<float>::infinity()};
    CHECK(!all_finite(inf, 1));
}
