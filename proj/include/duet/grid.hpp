#pragma once

// LatentGrid: the token grid flowing through the transformer streams, plus the
// lossless pixel <-> patch-token rearrangement used as the latent encoder.

#include <vector>

#include "duet/common.hpp"
#include "duet/rope.hpp"
#include "duet/tensor.hpp"

namespace duet {

template <class T>
struct LatentGrid {
    int frames = 0, gh = 0, gw = 0, C = 0;
    std::vector<T> data;  // [frames, gh, gw, C]

    LatentGrid() = default;
    LatentGrid(int f, int h, int w, int c) : frames(f), gh(h), gw(w), C(c) {
        data.assign(static_cast<size_t>(f) * h * w * c, T(0));
    }

    size_t tokens() const { return static_cast<size_t>(frames) * gh * gw; }
    size_t numel() const { return data.size(); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    std::vector<rope::PositionIndex> positions() const {
        return rope::grid_positions(frames, gh, gw);
    }

    bool same_shape(const LatentGrid& o) const {
        return frames == o.frames && gh == o.gh && gw == o.gw && C == o.C;
    }
};

// Pixels [F, H, W, 3] -> tokens [F, H/ps, W/ps, 3*ps*ps]; exact inverse below.
template <class T>
LatentGrid<T> patchify(const T* pixels, int F, int H, int W, int ps) {
    DUET_CHECK(ps > 0 && H % ps == 0 && W % ps == 0, "patchify: H and W must be divisible by patch_size");
    LatentGrid<T> g(F, H / ps, W / ps, 3 * ps * ps);
    for (int f = 0; f < F; f++)
        for (int i = 0; i < g.gh; i++)
            for (int j = 0; j < g.gw; j++) {
                T* tok = g.ptr() + (((static_cast<size_t>(f) * g.gh + i) * g.gw) + j) * g.C;
                int c = 0;
                for (int py = 0; py < ps; py++)
                    for (int px = 0; px < ps; px++)
                        for (int ch = 0; ch < 3; ch++)
                            tok[c++] = pixels[((static_cast<size_t>(f) * H + i * ps + py) * W +
                                               j * ps + px) * 3 + ch];
            }
    return g;
}

template <class T>
void unpatchify(const LatentGrid<T>& g, int ps, T* pixels) {
    DUET_CHECK(g.C == 3 * ps * ps, "unpatchify: channel dim does not match patch size");
    int H = g.gh * ps, W = g.gw * ps;
    for (int f = 0; f < g.frames; f++)
        for (int i = 0; i < g.gh; i++)
            for (int j = 0; j < g.gw; j++) {
                const T* tok = g.ptr() + (((static_cast<size_t>(f) * g.gh + i) * g.gw) + j) * g.C;
                int c = 0;
                for (int py = 0; py < ps; py++)
                    for (int px = 0; px < ps; px++)
                        for (int ch = 0; ch < 3; ch++)
                            pixels[((static_cast<size_t>(f) * H + i * ps + py) * W + j * ps + px) *
                                       3 + ch] = tok[c++];
            }
}

}  // namespace duet
