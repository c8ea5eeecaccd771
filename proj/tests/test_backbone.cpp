#include "doctest.h"
#include "duet/backbone.hpp"
#include "gradcheck.hpp"

using namespace duet;

namespace {

template <class T>
std::vector<T> randn(size_t n, uint64_t seed, double scale = 1.0) {
    Rng r(seed);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(r.normal() * scale);
    return v;
}

// a tiny fully-featured block fixture in double precision
struct BlockFix {
    static constexpr int C = 8, heads = 2, ref_tokens = 4, frames = 2, spatial = 4;
    static constexpr int Ttot = ref_tokens + frames * spatial;
    static constexpr int n_cond = 3, audio_dim = 6;
    DitBlock<double> block;
    std::vector<double> x0, temb, cond, audio, mask;
    std::vector<rope::PositionIndex> pos;

    BlockFix(bool text, bool audio_on) {
        Rng rng(404);
        block.init(C, heads, text, audio_on, audio_dim, rng);
        x0 = randn<double>(size_t(Ttot) * C, 1);
        temb = randn<double>(C, 2);
        cond = randn<double>(size_t(n_cond) * C, 3);
        audio = randn<double>(size_t(frames) * audio_dim, 4);
        mask.assign(Ttot, 0.0);
        // ref tokens masked out; half of each frame's tokens carry weight
        for (int f = 0; f < frames; f++)
            for (int s = 0; s < spatial; s++)
                mask[ref_tokens + f * spatial + s] = (s % 2 == 0) ? 0.7 : 0.0;
        for (int i = 0; i < 2; i++)
            for (int j = 0; j < 2; j++) pos.push_back(rope::remap_reference({0, i, j}, 2, 2));
        for (int l = 0; l < frames; l++)
            for (int i = 0; i < 2; i++)
                for (int j = 0; j < 2; j++) pos.push_back({l, i, j});
    }

    // 0.5 * sum(out^2)
    double loss() {
        std::vector<double> x = x0;
        DitBlock<double>::Cache c;
        block.fwd(x, pos, temb.data(), cond.data(), n_cond, audio.data(), frames, mask.data(),
                  ref_tokens, spatial, c);
        double acc = 0;
        for (double v : x) acc += 0.5 * v * v;
        return acc;
    }
};

}  // namespace

TEST_CASE("linear forward/backward gradcheck") {
    Rng rng(1);
    Linear<double> lin;
    lin.init(3, 4, rng);
    int M = 5;
    auto x = randn<double>(size_t(M) * 3, 2);

    auto loss = [&]() {
        std::vector<double> y(size_t(M) * 4, 0.0);
        lin.fwd(M, x.data(), y.data());
        double acc = 0;
        for (double v : y) acc += 0.5 * v * v;
        return acc;
    };
    std::vector<double> y(size_t(M) * 4, 0.0);
    lin.fwd(M, x.data(), y.data());
    std::vector<double> dx(x.size(), 0.0);
    lin.bwd(M, x.data(), y.data(), dx.data());  // dloss/dy = y

    std::vector<gradcheck::ParamSlot> slots;
    lin.visit("lin", [&](const std::string& n, std::vector<double>& w, std::vector<double>& g) {
        slots.push_back({n, &w, &g});
    });
    gradcheck::check_params(slots, loss, 1e-6, 1e-6);
    gradcheck::check_input(x, dx, loss, "lin.x", 1e-6, 1e-6);
}

TEST_CASE("zero-init linear maps everything to zero, then trains") {
    Linear<float> z;
    z.init_zero(5, 3);
    CHECK(z.is_zero());
    auto x = randn<float>(size_t(4) * 5, 3, 100.0);
    std::vector<float> y(size_t(4) * 3, 42.0f);
    z.fwd(4, x.data(), y.data());
    for (float v : y) CHECK(v == 0.0f);
    // gradient flows to weights even though output is zero
    std::vector<float> dy(y.size(), 1.0f);
    z.bwd(4, x.data(), dy.data(), nullptr);
    double gsum = 0;
    for (float g : z.gw) gsum += std::abs(g);
    CHECK(gsum > 0.0);
    // identity weights pass input through
    Linear<float> id;
    id.init_zero(3, 3);
    for (int i = 0; i < 3; i++) id.w[size_t(i) * 3 + i] = 1.0f;
    id.sync();
    std::vector<float> xi = {1.5f, -2.0f, 0.25f}, yo(3);
    id.fwd(1, xi.data(), yo.data());
    for (int i = 0; i < 3; i++) CHECK(yo[i] == xi[i]);
}

TEST_CASE("embedding gather/scatter") {
    Rng rng(5);
    Embedding<double> emb;
    emb.init(7, 4, rng);
    std::vector<int> ids = {2, 5, 2};
    std::vector<double> out(3 * 4);
    emb.fwd(ids, out.data());
    for (int c = 0; c < 4; c++) {
        CHECK(out[c] == emb.w[2 * 4 + c]);
        CHECK(out[8 + c] == emb.w[2 * 4 + c]);  // repeated id, same row
    }
    std::vector<double> dy(3 * 4, 1.0);
    emb.bwd(ids, dy.data());
    for (int c = 0; c < 4; c++) {
        CHECK(emb.gw[2 * 4 + c] == 2.0);  // id 2 appears twice
        CHECK(emb.gw[5 * 4 + c] == 1.0);
        CHECK(emb.gw[0 * 4 + c] == 0.0);
    }
    CHECK_THROWS_AS(emb.fwd({9}, out.data()), contract_error);
}

TEST_CASE("timestep embedding gradcheck") {
    Rng rng(6);
    TimestepEmbed<double> te;
    te.init(8, rng);
    auto loss = [&]() {
        TimestepEmbed<double>::Cache c;
        te.fwd(0.37, c);
        double acc = 0;
        for (double v : c.out) acc += 0.5 * v * v;
        return acc;
    };
    TimestepEmbed<double>::Cache c;
    te.fwd(0.37, c);
    te.bwd(c, c.out.data());
    std::vector<gradcheck::ParamSlot> slots;
    te.visit("temb", [&](const std::string& n, std::vector<double>& w, std::vector<double>& g) {
        slots.push_back({n, &w, &g});
    });
    gradcheck::check_params(slots, loss, 1e-5, 1e-6);
}

TEST_CASE("dit block: determinism and cross-attn transparency at init") {
    BlockFix f(true, true);
    std::vector<double> x1 = f.x0, x2 = f.x0;
    DitBlock<double>::Cache c1, c2;
    f.block.fwd(x1, f.pos, f.temb.data(), f.cond.data(), f.n_cond, f.audio.data(), f.frames,
                f.mask.data(), f.ref_tokens, f.spatial, c1);
    f.block.fwd(x2, f.pos, f.temb.data(), f.cond.data(), f.n_cond, f.audio.data(), f.frames,
                f.mask.data(), f.ref_tokens, f.spatial, c2);
    CHECK(std::memcmp(x1.data(), x2.data(), x1.size() * sizeof(double)) == 0);

    // ca_out / aca_out are zero-init, so cond and audio content cannot matter yet
    std::vector<double> x3 = f.x0;
    auto cond2 = randn<double>(f.cond.size(), 77);
    auto audio2 = randn<double>(f.audio.size(), 78);
    DitBlock<double>::Cache c3;
    f.block.fwd(x3, f.pos, f.temb.data(), cond2.data(), f.n_cond, audio2.data(), f.frames,
                f.mask.data(), f.ref_tokens, f.spatial, c3);
    double md = 0;
    for (size_t i = 0; i < x1.size(); i++) md = std::max(md, std::abs(x1[i] - x3[i]));
    CHECK(md == 0.0);
}

TEST_CASE("dit block: zero-mask tokens are bitwise audio-independent") {
    BlockFix f(false, true);
    Rng rng(505);
    // make the audio path live
    fill_normal(f.block.aca_out.w, rng, 0.3);
    fill_normal(f.block.aca_out.b, rng, 0.1);
    f.block.aca_out.sync();

    std::vector<double> xa = f.x0, xb = f.x0;
    auto audio2 = randn<double>(f.audio.size(), 99, 5.0);
    DitBlock<double>::Cache ca, cb;
    f.block.fwd(xa, f.pos, f.temb.data(), nullptr, 0, f.audio.data(), f.frames, f.mask.data(),
                f.ref_tokens, f.spatial, ca);
    f.block.fwd(xb, f.pos, f.temb.data(), nullptr, 0, audio2.data(), f.frames, f.mask.data(),
                f.ref_tokens, f.spatial, cb);
    bool some_changed = false;
    for (int t = 0; t < f.Ttot; t++) {
        bool same = std::memcmp(xa.data() + size_t(t) * f.C, xb.data() + size_t(t) * f.C,
                                sizeof(double) * f.C) == 0;
        if (f.mask[t] == 0.0) {
            CHECK(same);
        } else if (!same) {
            some_changed = true;
        }
    }
    CHECK(some_changed);  // masked-in tokens do react to audio
}

TEST_CASE("dit block full gradcheck (text + audio branches)") {
    BlockFix f(true, true);
    Rng rng(606);
    // exercise the zero-init projections away from zero so their input grads are live
    fill_normal(f.block.ca_out.w, rng, 0.2);
    fill_normal(f.block.aca_out.w, rng, 0.2);
    fill_normal(f.block.mod.w, rng, 0.05);
    f.block.ca_out.sync();
    f.block.aca_out.sync();
    f.block.mod.sync();

    // analytic grads
    std::vector<double> x = f.x0;
    DitBlock<double>::Cache c;
    f.block.fwd(x, f.pos, f.temb.data(), f.cond.data(), f.n_cond, f.audio.data(), f.frames,
                f.mask.data(), f.ref_tokens, f.spatial, c);
    std::vector<double> d = x;  // dloss/dout = out
    std::vector<double> dtemb(f.C, 0.0), dcond(f.cond.size(), 0.0), daudio(f.audio.size(), 0.0);
    f.block.bwd(c, f.pos, f.cond.data(), f.audio.data(), f.mask.data(), d, dtemb.data(),
                dcond.data(), daudio.data());

    auto loss = [&]() { return f.loss(); };
    std::vector<gradcheck::ParamSlot> slots;
    f.block.visit("blk", [&](const std::string& n, std::vector<double>& w, std::vector<double>& g) {
        slots.push_back({n, &w, &g});
    });
    gradcheck::check_params(slots, loss, 1e-4, 1e-5);
    gradcheck::check_input(f.x0, d, loss, "blk.x", 1e-4, 1e-5);
    gradcheck::check_input(f.temb, dtemb, loss, "blk.temb", 1e-4, 1e-5);
    gradcheck::check_input(f.cond, dcond, loss, "blk.cond", 1e-4, 1e-5);
    gradcheck::check_input(f.audio, daudio, loss, "blk.audio", 1e-4, 1e-5);
}

TEST_CASE("final head: zero at init, gradcheck when live") {
    Rng rng(707);
    FinalHead<double> head;
    head.init(6, 5);
    int M = 4;
    auto x = randn<double>(size_t(M) * 6, 1);
    auto temb = randn<double>(6, 2);
    std::vector<double> out(size_t(M) * 5, 7.0);
    FinalHead<double>::Cache c;
    head.fwd(M, x.data(), temb.data(), c, out.data());
    for (double v : out) CHECK(v == 0.0);

    fill_normal(head.head.w, rng, 0.3);
    fill_normal(head.mod.w, rng, 0.1);
    head.head.sync();
    head.mod.sync();

    auto loss = [&]() {
        FinalHead<double>::Cache cc;
        std::vector<double> o(size_t(M) * 5, 0.0);
        head.fwd(M, x.data(), temb.data(), cc, o.data());
        double acc = 0;
        for (double v : o) acc += 0.5 * v * v;
        return acc;
    };
    head.fwd(M, x.data(), temb.data(), c, out.data());
    std::vector<double> dx(x.size(), 0.0), dtemb(6, 0.0);
    head.bwd(c, out.data(), dx.data(), dtemb.data());
    std::vector<gradcheck::ParamSlot> slots;
    head.visit("head", [&](const std::string& n, std::vector<double>& w, std::vector<double>& g) {
        slots.push_back({n, &w, &g});
    });
    gradcheck::check_params(slots, loss, 1e-5, 1e-6);
    gradcheck::check_input(x, dx, loss, "head.x", 1e-5, 1e-6);
    gradcheck::check_input(temb, dtemb, loss, "head.temb", 1e-5, 1e-6);
}

TEST_CASE("conv1d gradcheck") {
    Rng rng(808);
    Conv1d<double> conv;
    conv.init(2, 3, 4, 2, rng);
    int L = 12;
    auto x = randn<double>(size_t(2) * L, 3);
    int Lout = conv.out_len(L);
    auto loss = [&]() {
        std::vector<double> y(size_t(3) * Lout, 0.0);
        conv.fwd(L, x.data(), y.data());
        double acc = 0;
        for (double v : y) acc += 0.5 * v * v;
        return acc;
    };
    std::vector<double> y(size_t(3) * Lout, 0.0);
    conv.fwd(L, x.data(), y.data());
    std::vector<double> dx(x.size(), 0.0);
    conv.bwd(L, x.data(), y.data(), dx.data());
    std::vector<gradcheck::ParamSlot> slots;
    conv.visit("conv", [&](const std::string& n, std::vector<double>& w, std::vector<double>& g) {
        slots.push_back({n, &w, &g});
    });
    gradcheck::check_params(slots, loss, 1e-6, 1e-6);
    gradcheck::check_input(x, dx, loss, "conv.x", 1e-6, 1e-6);
}
