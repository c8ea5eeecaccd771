#include "duet/audio.hpp"

#include <cstring>
#include <fstream>

namespace duet::audio {

namespace {

void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; i++) s.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, uint16_t v) {
    for (int i = 0; i < 2; i++) s.push_back(char((v >> (8 * i)) & 0xff));
}
uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint16_t get_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

}  // namespace

void write_wav(const std::string& path, const AudioTrack& track) {
    DUET_CHECK(track.rate > 0, "invalid sample rate");
    uint32_t n = static_cast<uint32_t>(track.samples.size());
    std::string out;
    out.reserve(44 + 2 * n);
    out += "RIFF";
    put_u32(out, 36 + 2 * n);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(track.rate));
    put_u32(out, static_cast<uint32_t>(track.rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, 2 * n);
    for (float x : track.samples) {
        float cl = std::min(1.0f, std::max(-1.0f, x));
        put_u16(out, static_cast<uint16_t>(int16_t(std::lround(cl * 32767.0f))));
    }
    write_text_file(path, out);
}

AudioTrack read_wav(const std::string& path) {
    std::string raw = read_text_file(path);
    const uint8_t* p = reinterpret_cast<const uint8_t*>(raw.data());
    size_t n = raw.size();
    DUET_REQUIRE(n >= 44 && std::memcmp(p, "RIFF", 4) == 0 && std::memcmp(p + 8, "WAVE", 4) == 0,
                 "not a RIFF/WAVE file: " + path);
    AudioTrack track;
    bool got_fmt = false, got_data = false;
    size_t off = 12;
    while (off + 8 <= n) {
        uint32_t csize = get_u32(p + off + 4);
        const uint8_t* body = p + off + 8;
        if (std::memcmp(p + off, "fmt ", 4) == 0) {
            DUET_REQUIRE(csize >= 16, "short fmt chunk");
            DUET_REQUIRE(get_u16(body) == 1, "only PCM wav supported: " + path);
            DUET_REQUIRE(get_u16(body + 2) == 1, "only mono wav supported: " + path);
            track.rate = static_cast<int>(get_u32(body + 4));
            DUET_REQUIRE(get_u16(body + 14) == 16, "only 16-bit wav supported: " + path);
            got_fmt = true;
        } else if (std::memcmp(p + off, "data", 4) == 0) {
            DUET_REQUIRE(off + 8 + csize <= n, "truncated wav data: " + path);
            track.samples.resize(csize / 2);
            for (size_t i = 0; i < track.samples.size(); i++)
                track.samples[i] = int16_t(get_u16(body + 2 * i)) / 32767.0f;
            got_data = true;
        }
        off += 8 + csize + (csize & 1);
    }
    DUET_REQUIRE(got_fmt && got_data, "wav missing fmt/data chunk: " + path);
    return track;
}

FrameWindows make_windows(const AudioTrack& track, int frames) {
    DUET_CHECK(frames >= 1, "need at least one frame");
    DUET_CHECK(track.rate > 0 && track.fps > 0, "invalid track rate/fps");
    int seg_len = track.rate / track.fps;
    DUET_CHECK(seg_len >= 1 && track.rate % track.fps == 0,
               "sample rate must be a multiple of fps");
    DUET_CHECK(track.samples.size() >= static_cast<size_t>(frames) * seg_len,
               "audio track too short for requested frame count");
    DUET_CHECK(all_finite(track.samples.data(), track.samples.size()),
               "audio track contains non-finite samples");
    FrameWindows win;
    win.frames = frames;
    win.seg_len = seg_len;
    win.window_half_width = (kSegs / 2) * seg_len;
    win.x.assign(static_cast<size_t>(frames) * kSegs * seg_len, 0.0f);
    long N = static_cast<long>(track.samples.size());
    for (int f = 0; f < frames; f++) {
        long start = frame_center(f, track.rate, track.fps) - win.window_half_width;
        for (int s = 0; s < kSegs; s++) {
            float* dst = win.x.data() + (static_cast<size_t>(f) * kSegs + s) * seg_len;
            long src0 = start + static_cast<long>(s) * seg_len;
            for (int t = 0; t < seg_len; t++) {
                long idx = src0 + t;
                if (idx >= 0 && idx < N) dst[t] = track.samples[static_cast<size_t>(idx)];
            }
        }
    }
    return win;
}

std::vector<float> loudness_envelope(const AudioTrack& track, int frames) {
    DUET_CHECK(track.rate % track.fps == 0, "sample rate must be a multiple of fps");
    int seg = track.rate / track.fps;
    DUET_CHECK(track.samples.size() >= static_cast<size_t>(frames) * seg,
               "audio track too short for requested frame count");
    std::vector<float> env(static_cast<size_t>(frames));
    for (int f = 0; f < frames; f++) {
        double acc = 0;
        for (int t = 0; t < seg; t++)
            acc += std::fabs(track.samples[static_cast<size_t>(f) * seg + t]);
        env[static_cast<size_t>(f)] = std::min(1.0f, float(2.0 * acc / seg));
    }
    return env;
}

}  // namespace duet::audio
