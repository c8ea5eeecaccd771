#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "duet/common.hpp"

namespace duet {

struct Image {
    int h = 0, w = 0;
    std::vector<uint8_t> px;  // rgb, row-major

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), px(static_cast<size_t>(h_) * w_ * 3, 0) {}

    uint8_t* at(int y, int x) { return px.data() + (static_cast<size_t>(y) * w + x) * 3; }
    const uint8_t* at(int y, int x) const { return px.data() + (static_cast<size_t>(y) * w + x) * 3; }

    void set(int y, int x, uint8_t r, uint8_t g, uint8_t b) {
        if (y < 0 || y >= h || x < 0 || x >= w) return;
        uint8_t* p = at(y, x);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }

    bool operator==(const Image& o) const { return h == o.h && w == o.w && px == o.px; }
};

void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// latent conversion: pixels scaled to [0,1]
std::vector<float> image_to_float(const Image& img);
Image float_to_image(const float* data, int h, int w);  // clamps to [0,1]

}  // namespace duet
