#pragma once

// 3-axis rotary position embedding over (frame, height, width). Channel pairs
// are split equally among the three axes with the remainder going to the frame
// axis. Reference-image tokens live at frame -1 with spatial indices pushed
// past the generated grid so no reference position collides with a frame
// position.

#include <cmath>
#include <vector>

#include "duet/common.hpp"

namespace duet::rope {

struct PositionIndex {
    int l = 0;  // frame index, -1 for reference tokens
    int i = 0;  // height patch index
    int j = 0;  // width patch index
    bool operator==(const PositionIndex&) const = default;
};

// Reference tokens keep their spatial layout but move to (-1, i+grid_w, j+grid_h).
inline PositionIndex remap_reference(PositionIndex p, int grid_w, int grid_h) {
    return PositionIndex{-1, p.i + grid_w, p.j + grid_h};
}

// Frequency layout for one head dimension: hd/2 rotation pairs, split across
// the three axes (remainder to frame). Angles use the usual 10000^(-2k/span)
// spectrum within each axis group.
struct FreqConfig {
    int head_dim = 0;
    int pairs_frame = 0, pairs_h = 0, pairs_w = 0;
    std::vector<double> inv_freq;  // hd/2 entries, grouped [frame | h | w]

    FreqConfig() = default;
    explicit FreqConfig(int hd, double base = 10000.0) {
        DUET_CHECK(hd > 0 && hd % 2 == 0, "rope: head_dim must be positive and even");
        head_dim = hd;
        int pairs = hd / 2;
        pairs_h = pairs / 3;
        pairs_w = pairs / 3;
        pairs_frame = pairs - pairs_h - pairs_w;
        inv_freq.resize(pairs);
        int idx = 0;
        auto fill = [&](int n) {
            for (int k = 0; k < n; k++)
                inv_freq[idx++] = std::pow(base, -2.0 * k / (2.0 * n));
        };
        fill(pairs_frame);
        fill(pairs_h);
        fill(pairs_w);
    }

    double angle(const PositionIndex& p, int pair) const {
        double pos;
        if (pair < pairs_frame)
            pos = p.l;
        else if (pair < pairs_frame + pairs_h)
            pos = p.i;
        else
            pos = p.j;
        return pos * inv_freq[pair];
    }
};

// Rotate q-or-k features in place: x is [T, heads*head_dim]; each head sees the
// same angles. sign=+1 forward, sign=-1 is its exact inverse (used in backward:
// the transpose of a rotation is the rotation by the negated angle).
template <class T>
void apply(T* x, int tokens, int heads, const FreqConfig& fc, const std::vector<PositionIndex>& pos,
           int sign = 1) {
    DUET_CHECK(static_cast<int>(pos.size()) == tokens, "rope: position count mismatch");
    int hd = fc.head_dim;
    int pairs = hd / 2;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < tokens; t++) {
        for (int p = 0; p < pairs; p++) {
            double a = fc.angle(pos[t], p) * sign;
            T c = static_cast<T>(std::cos(a));
            T s = static_cast<T>(std::sin(a));
            for (int h = 0; h < heads; h++) {
                T* v = x + (static_cast<size_t>(t) * heads + h) * hd;
                T x0 = v[2 * p], x1 = v[2 * p + 1];
                v[2 * p] = c * x0 - s * x1;
                v[2 * p + 1] = s * x0 + c * x1;
            }
        }
    }
}

// Standard video token ordering: frame-major, then rows, then columns.
inline std::vector<PositionIndex> grid_positions(int frames, int grid_h, int grid_w) {
    std::vector<PositionIndex> out;
    out.reserve(static_cast<size_t>(frames) * grid_h * grid_w);
    for (int l = 0; l < frames; l++)
        for (int i = 0; i < grid_h; i++)
            for (int j = 0; j < grid_w; j++) out.push_back(PositionIndex{l, i, j});
    return out;
}

}  // namespace duet::rope
