#pragma once

// Flow matching on the rectified linear path: zt = (1-t)*z0 + t*eps with
// ground-truth field eps - z0, t=0 clean. The Euler sampler integrates the
// learned field from t=1 down to t=0 on a uniform grid; on fields constant in
// (z, t) it is exact for any step count.

#include <functional>

#include "duet/grid.hpp"

namespace duet {

template <class T>
struct FlowSample {
    LatentGrid<T> z0, eps, zt, target;
    T t = T(0);
};

// Per-token binary weights; all-ones by default, first-frame-only in
// detection-style batches.
struct LossMask {
    int frames = 0, gh = 0, gw = 0;
    std::vector<uint8_t> w;  // one per token

    LossMask() = default;
    LossMask(int f, int h, int wd, uint8_t fill = 1)
        : frames(f), gh(h), gw(wd), w(static_cast<size_t>(f) * h * wd, fill) {}

    static LossMask full(int f, int h, int wd) { return LossMask(f, h, wd, 1); }
    static LossMask first_frame(int f, int h, int wd) {
        LossMask m(f, h, wd, 0);
        for (size_t i = 0; i < static_cast<size_t>(h) * wd; i++) m.w[i] = 1;
        return m;
    }
    static LossMask all_but_first(int f, int h, int wd) {
        LossMask m(f, h, wd, 1);
        for (size_t i = 0; i < static_cast<size_t>(h) * wd; i++) m.w[i] = 0;
        return m;
    }
    size_t count() const {
        size_t n = 0;
        for (uint8_t x : w) n += x;
        return n;
    }
};

template <class T>
FlowSample<T> make_flow_sample(const LatentGrid<T>& z0, T t, Rng& rng) {
    DUET_CHECK(t >= T(0) && t <= T(1), "make_flow_sample: t must lie in [0,1]");
    FlowSample<T> s;
    s.t = t;
    s.z0 = z0;
    s.eps = LatentGrid<T>(z0.frames, z0.gh, z0.gw, z0.C);
    for (size_t i = 0; i < s.eps.numel(); i++) s.eps.data[i] = static_cast<T>(rng.normal());
    s.zt = LatentGrid<T>(z0.frames, z0.gh, z0.gw, z0.C);
    s.target = LatentGrid<T>(z0.frames, z0.gh, z0.gw, z0.C);
    for (size_t i = 0; i < z0.numel(); i++) {
        s.zt.data[i] = (T(1) - t) * z0.data[i] + t * s.eps.data[i];
        s.target.data[i] = s.eps.data[i] - z0.data[i];
    }
    return s;
}

// Mean squared error over the channels of unmasked tokens.
template <class T>
double fm_loss(const LatentGrid<T>& pred, const LatentGrid<T>& target, const LossMask& mask) {
    DUET_CHECK(pred.same_shape(target), "fm_loss: prediction/target shape mismatch");
    DUET_CHECK(mask.w.size() == pred.tokens(), "fm_loss: mask token count mismatch");
    size_t n_mask = mask.count();
    DUET_REQUIRE(n_mask > 0, "fm_loss: all-zero loss mask");
    double acc = 0.0;
    int C = pred.C;
    for (size_t tok = 0; tok < mask.w.size(); tok++) {
        if (!mask.w[tok]) continue;
        const T* p = pred.ptr() + tok * C;
        const T* g = target.ptr() + tok * C;
        for (int c = 0; c < C; c++) {
            double d = static_cast<double>(p[c]) - static_cast<double>(g[c]);
            acc += d * d;
        }
    }
    return acc / (static_cast<double>(n_mask) * C);
}

// d(loss)/d(pred), accumulated into dpred scaled by upstream `gscale`.
template <class T>
void fm_loss_backward(const LatentGrid<T>& pred, const LatentGrid<T>& target, const LossMask& mask,
                      T gscale, LatentGrid<T>& dpred) {
    DUET_CHECK(dpred.same_shape(pred), "fm_loss_backward: gradient shape mismatch");
    size_t n_mask = mask.count();
    DUET_REQUIRE(n_mask > 0, "fm_loss_backward: all-zero loss mask");
    int C = pred.C;
    T norm = gscale * T(2) / (static_cast<T>(n_mask) * C);
    for (size_t tok = 0; tok < mask.w.size(); tok++) {
        if (!mask.w[tok]) continue;
        T* d = dpred.ptr() + tok * C;
        const T* p = pred.ptr() + tok * C;
        const T* g = target.ptr() + tok * C;
        for (int c = 0; c < C; c++) d[c] += norm * (p[c] - g[c]);
    }
}

// model(z, t) must write the predicted field into its output argument.
template <class T>
using FieldOracle = std::function<void(const LatentGrid<T>& z, T t, LatentGrid<T>& field)>;

// Integrator state is accumulated in double so fine step grids do not drift
// in single precision; the model still sees the working scalar type.
template <class T>
LatentGrid<T> euler_sample(const FieldOracle<T>& model, const LatentGrid<T>& z_init, int steps) {
    DUET_CHECK(steps >= 1, "euler_sample: steps must be >= 1");
    std::vector<double> zd(z_init.data.begin(), z_init.data.end());
    LatentGrid<T> z = z_init;
    LatentGrid<T> field(z.frames, z.gh, z.gw, z.C);
    double dt = 1.0 / steps;
    for (int k = 0; k < steps; k++) {
        T t = static_cast<T>(1.0 - k * dt);
        for (size_t i = 0; i < zd.size(); i++) z.data[i] = static_cast<T>(zd[i]);
        model(z, t, field);
        for (size_t i = 0; i < zd.size(); i++) zd[i] -= dt * static_cast<double>(field.data[i]);
    }
    for (size_t i = 0; i < zd.size(); i++) z.data[i] = static_cast<T>(zd[i]);
    return z;
}

}  // namespace duet
