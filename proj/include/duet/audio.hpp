#pragma once

// Waveform handling for the video stream: PCM WAV IO, frame-centered window
// slicing, and a small trainable strided-conv encoder that turns each frame's
// window into one feature vector (sub-segment encodings concatenated, then
// projected).

#include <cmath>
#include <string>
#include <vector>

#include "duet/layers.hpp"

namespace duet::audio {

struct AudioTrack {
    std::vector<float> samples;  // mono, nominally in [-1, 1]
    int rate = 16000;            // Hz
    int fps = 8;                 // video frame rate this track accompanies
};

void write_wav(const std::string& path, const AudioTrack& track);
AudioTrack read_wav(const std::string& path);  // PCM16 mono only

// center sample aligned with frame i
inline long frame_center(int i, int rate, int fps) {
    return std::lround(double(i) * rate / fps + double(rate) / (2.0 * fps));
}

// Frame windows: for each frame, a window of kSegs consecutive sub-segments
// (one frame period each) centered on the frame's sample; out-of-range samples
// are zero. window_half_width = kSegs/2 frame periods.
constexpr int kSegs = 4;

struct FrameWindows {
    int frames = 0;
    int seg_len = 0;  // frame period in samples
    std::vector<float> x;  // [frames, kSegs, seg_len]
    int window_half_width = 0;

    const float* seg(int f, int s) const {
        return x.data() + (static_cast<size_t>(f) * kSegs + s) * seg_len;
    }
};

FrameWindows make_windows(const AudioTrack& track, int frames);

template <class T>
struct FeatureSeq {
    int frames = 0;
    int dim = 0;
    std::vector<T> f;  // [frames, dim]
    int window_half_width = 0;

    const T* row(int i) const { return f.data() + static_cast<size_t>(i) * dim; }
};
using AudioFeatureSequence = FeatureSeq<float>;

// Shared conv stack applied per sub-segment, mean-pooled over time, results
// concatenated across the window and linearly projected.
template <class T>
struct AudioEncoder {
    int out_dim = 0, c1 = 8, c2 = 16;
    Conv1d<T> conv1, conv2;
    Linear<T> proj;

    struct Cache {
        int frames = 0, seg_len = 0, l1 = 0, l2 = 0;
        std::vector<T> h1, g1, h2, g2;  // [frames*kSegs, c, l] activations
        std::vector<T> cat;             // [frames, kSegs*c2]
        const FrameWindows* win = nullptr;
    };

    void init(int out_dim_, Rng& rng, int k1 = 32, int s1 = 16, int k2 = 16, int s2 = 8,
              int c1_ = 8, int c2_ = 16) {
        out_dim = out_dim_;
        c1 = c1_;
        c2 = c2_;
        conv1.init(1, c1, k1, s1, rng);
        conv2.init(c1, c2, k2, s2, rng);
        proj.init(kSegs * c2, out_dim, rng);
    }

    int min_seg_len() const { return conv1.k + (conv2.k - 1) * conv1.stride; }

    void fwd(const FrameWindows& win, Cache& c, FeatureSeq<T>& out) const {
        DUET_CHECK(win.seg_len >= min_seg_len(), "audio window too short for encoder");
        int F = win.frames;
        c.frames = F;
        c.seg_len = win.seg_len;
        c.l1 = conv1.out_len(win.seg_len);
        c.l2 = conv2.out_len(c.l1);
        c.win = &win;
        size_t ns = static_cast<size_t>(F) * kSegs;
        c.h1.assign(ns * c1 * c.l1, T(0));
        c.g1.assign(ns * c1 * c.l1, T(0));
        c.h2.assign(ns * c2 * c.l2, T(0));
        c.g2.assign(ns * c2 * c.l2, T(0));
        c.cat.assign(static_cast<size_t>(F) * kSegs * c2, T(0));
        for (int f = 0; f < F; f++)
            for (int s = 0; s < kSegs; s++) {
                size_t i = static_cast<size_t>(f) * kSegs + s;
                T* h1 = c.h1.data() + i * c1 * c.l1;
                T* g1 = c.g1.data() + i * c1 * c.l1;
                T* h2 = c.h2.data() + i * c2 * c.l2;
                T* g2 = c.g2.data() + i * c2 * c.l2;
                std::vector<T> xin(win.seg(f, s), win.seg(f, s) + win.seg_len);
                conv1.fwd(win.seg_len, xin.data(), h1);
                kern::gelu_fwd(h1, g1, static_cast<size_t>(c1) * c.l1);
                conv2.fwd(c.l1, g1, h2);
                kern::gelu_fwd(h2, g2, static_cast<size_t>(c2) * c.l2);
                T* cat = c.cat.data() + (static_cast<size_t>(f) * kSegs + s) * c2;
                for (int ch = 0; ch < c2; ch++) {
                    T acc = T(0);
                    for (int t = 0; t < c.l2; t++) acc += g2[static_cast<size_t>(ch) * c.l2 + t];
                    cat[ch] = acc / T(c.l2);
                }
            }
        out.frames = F;
        out.dim = out_dim;
        out.window_half_width = win.window_half_width;
        out.f.assign(static_cast<size_t>(F) * out_dim, T(0));
        proj.fwd(F, c.cat.data(), out.f.data());
    }

    // parameter gradients only; the waveform is data, not a variable
    void bwd(Cache& c, const T* dfeat) {
        int F = c.frames;
        std::vector<T> dcat(static_cast<size_t>(F) * kSegs * c2, T(0));
        proj.bwd(F, c.cat.data(), dfeat, dcat.data());
        std::vector<T> dg2(static_cast<size_t>(c2) * c.l2);
        std::vector<T> dh2(static_cast<size_t>(c2) * c.l2);
        std::vector<T> dg1(static_cast<size_t>(c1) * c.l1);
        std::vector<T> dh1(static_cast<size_t>(c1) * c.l1);
        for (int f = 0; f < F; f++)
            for (int s = 0; s < kSegs; s++) {
                size_t i = static_cast<size_t>(f) * kSegs + s;
                const T* dc = dcat.data() + i * c2;
                std::fill(dg2.begin(), dg2.end(), T(0));
                for (int ch = 0; ch < c2; ch++)
                    for (int t = 0; t < c.l2; t++)
                        dg2[static_cast<size_t>(ch) * c.l2 + t] = dc[ch] / T(c.l2);
                std::fill(dh2.begin(), dh2.end(), T(0));
                kern::gelu_bwd(c.h2.data() + i * c2 * c.l2, dg2.data(), dh2.data(),
                               static_cast<size_t>(c2) * c.l2);
                std::fill(dg1.begin(), dg1.end(), T(0));
                conv2.bwd(c.l1, c.g1.data() + i * c1 * c.l1, dh2.data(), dg1.data());
                std::fill(dh1.begin(), dh1.end(), T(0));
                kern::gelu_bwd(c.h1.data() + i * c1 * c.l1, dg1.data(), dh1.data(),
                               static_cast<size_t>(c1) * c.l1);
                std::vector<T> xin(c.win->seg(f, s), c.win->seg(f, s) + c.seg_len);
                conv1.bwd(c.seg_len, xin.data(), dh1.data(), nullptr);
            }
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        conv1.visit(prefix + ".conv1", fn);
        conv2.visit(prefix + ".conv2", fn);
        proj.visit(prefix + ".proj", fn);
    }

    void sync() { proj.sync(); }
};

// convenience wrapper: windows + encoder forward, no cache retained
template <class T>
FeatureSeq<T> extract_audio_features(const AudioTrack& track, int frames,
                                     const AudioEncoder<T>& enc) {
    FrameWindows win = make_windows(track, frames);
    typename AudioEncoder<T>::Cache cache;
    FeatureSeq<T> out;
    enc.fwd(win, cache, out);
    return out;
}

// stepwise per-frame loudness envelope in [0,1]; drives the actor's mouth
std::vector<float> loudness_envelope(const AudioTrack& track, int frames);

}  // namespace duet::audio
