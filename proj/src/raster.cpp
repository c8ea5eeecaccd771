#include "duet/motion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace duet {

void write_ppm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    DUET_REQUIRE(f.good(), "cannot write image: " + path);
    f << "P6\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    DUET_REQUIRE(f.good(), "image write failed: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    DUET_REQUIRE(f.good(), "cannot open image: " + path);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    f >> magic >> w >> h >> maxv;
    DUET_REQUIRE(magic == "P6" && maxv == 255 && w > 0 && h > 0, "unsupported image format: " + path);
    f.get();  // single whitespace after header
    Image img(h, w);
    f.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    DUET_REQUIRE(f.gcount() == static_cast<std::streamsize>(img.px.size()), "truncated image: " + path);
    return img;
}

std::vector<float> image_to_float(const Image& img) {
    std::vector<float> out(img.px.size());
    for (size_t i = 0; i < img.px.size(); i++) out[i] = img.px[i] / 255.0f;
    return out;
}

Image float_to_image(const float* data, int h, int w) {
    Image img(h, w);
    for (size_t i = 0; i < img.px.size(); i++) {
        float v = std::min(1.0f, std::max(0.0f, data[i]));
        img.px[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    return img;
}

}  // namespace duet

namespace duet::motion {

const std::array<std::pair<int, int>, kBones> kBonePairs = {{
    {J_HEAD, J_NECK}, {J_NECK, J_LSHO}, {J_NECK, J_RSHO},
    {J_LSHO, J_LELB}, {J_LELB, J_LWRI}, {J_RSHO, J_RELB}, {J_RELB, J_RWRI},
    {J_NECK, J_HIP},  {J_HIP, J_LKNE},  {J_LKNE, J_LANK}, {J_HIP, J_RKNE}, {J_RKNE, J_RANK},
}};

namespace {

int dist2(const Rgb& a, const Rgb& b) {
    int dr = int(a.r) - b.r, dg = int(a.g) - b.g, db = int(a.b) - b.b;
    return dr * dr + dg * dg + db * db;
}

// Colors the parser must recognize but ignore: background + scene-render hues.
const std::vector<Rgb>& reserved_colors() {
    static const std::vector<Rgb> res = {
        {0, 0, 0},        // motion-canvas background
        {15, 15, 30},     // scene background
        {35, 35, 55},     // scene floor
        {200, 160, 120},  // actor body
        {120, 20, 20},    // mouth
    };
    return res;
}

Palette build_palette() {
    Palette p;
    p.object = {{230, 40, 40}, {40, 210, 40}, {50, 90, 235},
                {235, 225, 40}, {170, 50, 215}, {45, 215, 215}};
    p.class_name = {"red box", "green box", "blue box", "yellow box", "purple box", "cyan box"};

    // greedy max-min-distance selection for joint/bone colors, keeping clear
    // of the object colors and the reserved scene hues
    std::vector<Rgb> chosen = reserved_colors();
    chosen.insert(chosen.end(), p.object.begin(), p.object.end());
    std::vector<Rgb> cand;
    for (int r = 0; r <= 255; r += 51)
        for (int g = 0; g <= 255; g += 51)
            for (int b = 0; b <= 255; b += 51)
                if (std::max({r, g, b}) >= 102)
                    cand.push_back({uint8_t(r), uint8_t(g), uint8_t(b)});
    auto pick = [&]() {
        int best = -1, best_min = -1;
        for (size_t i = 0; i < cand.size(); i++) {
            int mn = INT32_MAX;
            for (const Rgb& c : chosen) mn = std::min(mn, dist2(cand[i], c));
            if (mn > best_min) {
                best_min = mn;
                best = static_cast<int>(i);
            }
        }
        Rgb c = cand[static_cast<size_t>(best)];
        chosen.push_back(c);
        return c;
    };
    for (int j = 0; j < kJoints; j++) p.joint[j] = pick();
    for (int b = 0; b < kBones; b++) p.bone[b] = pick();
    return p;
}

void fill_disc(Image& img, float cx, float cy, float radius, Rgb c) {
    int y0 = std::max(0, int(std::floor(cy - radius)));
    int y1 = std::min(img.h - 1, int(std::ceil(cy + radius)));
    int x0 = std::max(0, int(std::floor(cx - radius)));
    int x1 = std::min(img.w - 1, int(std::ceil(cx + radius)));
    float r2 = radius * radius;
    for (int y = y0; y <= y1; y++)
        for (int x = x0; x <= x1; x++)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r2) img.set(y, x, c.r, c.g, c.b);
}

void draw_segment(Image& img, float x0, float y0, float x1, float y1, int brush, Rgb c) {
    float len = std::hypot(x1 - x0, y1 - y0);
    int steps = std::max(1, int(std::ceil(len * 2)));
    for (int s = 0; s <= steps; s++) {
        float t = float(s) / steps;
        int px = int(std::lround(x0 + t * (x1 - x0)));
        int py = int(std::lround(y0 + t * (y1 - y0)));
        for (int dy = -brush + 1; dy <= brush - 1; dy++)
            for (int dx = -brush + 1; dx <= brush - 1; dx++) img.set(py + dy, px + dx, c.r, c.g, c.b);
    }
}

}  // namespace

const Palette& palette() {
    static const Palette p = build_palette();
    return p;
}

int class_id(const std::string& name) {
    const Palette& p = palette();
    for (size_t i = 0; i < p.class_name.size(); i++)
        if (p.class_name[i] == name) return static_cast<int>(i);
    return -1;
}

Image render_motion_frame(const PoseFrame& pose, const ObjectBoxFrame& objs, int canvas,
                          int* clamp_warnings) {
    DUET_CHECK(canvas >= 16, "render canvas too small");
    Image img(canvas, canvas);
    const Palette& pal = palette();
    float S = float(canvas - 1);
    int thick = std::max(1, canvas / 128);
    int brush = std::max(1, canvas / 128);
    float joint_r = std::max(2.0f, canvas / 52.0f);

    // boxes first (outlines), then bones, then joint discs on top
    for (const ObjectBox& b : objs.boxes) {
        if (!b.present) continue;
        DUET_CHECK(b.x_min < b.x_max && b.y_min < b.y_max, "degenerate object box");
        int cid = class_id(b.cls);
        DUET_CHECK(cid >= 0, "unknown object class: " + b.cls);
        Rgb c = pal.object[static_cast<size_t>(cid)];
        int x0 = int(std::lround(b.x_min * S)), x1 = int(std::lround(b.x_max * S));
        int y0 = int(std::lround(b.y_min * S)), y1 = int(std::lround(b.y_max * S));
        for (int y = y0; y <= y1; y++)
            for (int x = x0; x <= x1; x++) {
                bool edge = (x - x0 < thick) || (x1 - x < thick) || (y - y0 < thick) || (y1 - y < thick);
                if (edge) img.set(y, x, c.r, c.g, c.b);
            }
    }

    auto jpix = [&](int j, float* px, float* py) {
        float x = pose.xy[2 * j], y = pose.xy[2 * j + 1];
        if (x < 0.0f || x > 1.0f || y < 0.0f || y > 1.0f) {
            if (clamp_warnings) (*clamp_warnings)++;
            x = std::min(1.0f, std::max(0.0f, x));
            y = std::min(1.0f, std::max(0.0f, y));
        }
        *px = x * S;
        *py = y * S;
    };
    for (int b = 0; b < kBones; b++) {
        auto [a, bb] = kBonePairs[b];
        if (!pose.visible[a] || !pose.visible[bb]) continue;
        float x0, y0, x1, y1;
        jpix(a, &x0, &y0);
        jpix(bb, &x1, &y1);
        draw_segment(img, x0, y0, x1, y1, brush, pal.bone[b]);
    }
    for (int j = 0; j < kJoints; j++) {
        if (!pose.visible[j]) continue;
        float x, y;
        jpix(j, &x, &y);
        fill_disc(img, x, y, joint_r, pal.joint[j]);
    }
    return img;
}

std::vector<Image> render_motion(const std::vector<PoseFrame>& poses,
                                 const std::vector<ObjectBoxFrame>& objects, int canvas,
                                 int* clamp_warnings) {
    DUET_CHECK(poses.size() == objects.size(), "pose/object frame count mismatch");
    std::vector<Image> out;
    out.reserve(poses.size());
    for (size_t i = 0; i < poses.size(); i++)
        out.push_back(render_motion_frame(poses[i], objects[i], canvas, clamp_warnings));
    return out;
}

ParsedFrame parse_motion_frame(const Image& img) {
    const Palette& pal = palette();
    // candidate list: ignored colors first, then joints, bones, object classes
    struct Cand {
        Rgb c;
        int kind;  // 0 ignore, 1 joint, 2 bone, 3 object
        int idx;
    };
    static std::vector<Cand> cands = [] {
        std::vector<Cand> cs;
        for (const Rgb& c : std::vector<Rgb>{{0, 0, 0}, {15, 15, 30}, {35, 35, 55}, {200, 160, 120}, {120, 20, 20}})
            cs.push_back({c, 0, 0});
        const Palette& p = palette();
        for (int j = 0; j < kJoints; j++) cs.push_back({p.joint[j], 1, j});
        for (int b = 0; b < kBones; b++) cs.push_back({p.bone[b], 2, b});
        for (size_t o = 0; o < p.object.size(); o++) cs.push_back({p.object[o], 3, int(o)});
        return cs;
    }();

    // per-channel median via histogram; subtracting it cancels constant
    // brightness offsets before classification
    int med[3];
    for (int ch = 0; ch < 3; ch++) {
        int hist[256] = {0};
        for (size_t i = ch; i < img.px.size(); i += 3) hist[img.px[i]]++;
        size_t half = img.px.size() / 6;  // half the pixel count
        size_t acc = 0;
        med[ch] = 0;
        for (int v = 0; v < 256; v++) {
            acc += static_cast<size_t>(hist[v]);
            if (acc > half) {
                med[ch] = v;
                break;
            }
        }
    }
    // the scene background is the usual majority color; treat the offset as
    // median minus the nearest known background value
    int bias[3] = {0, 0, 0};
    {
        int bg_plain[3] = {0, 0, 0}, bg_scene[3] = {15, 15, 30};
        int d_plain = 0, d_scene = 0;
        for (int ch = 0; ch < 3; ch++) {
            d_plain += (med[ch] - bg_plain[ch]) * (med[ch] - bg_plain[ch]);
            d_scene += (med[ch] - bg_scene[ch]) * (med[ch] - bg_scene[ch]);
        }
        const int* bg = d_plain <= d_scene ? bg_plain : bg_scene;
        for (int ch = 0; ch < 3; ch++) bias[ch] = med[ch] - bg[ch];
    }

    const int tau2 = 140 * 140;
    struct Acc {
        double sx = 0, sy = 0;
        std::vector<int> xs, ys;
    };
    std::array<Acc, kJoints> jacc;
    std::map<int, Acc> oacc;

    for (int y = 0; y < img.h; y++)
        for (int x = 0; x < img.w; x++) {
            const uint8_t* p = img.at(y, x);
            int r = std::min(255, std::max(0, int(p[0]) - bias[0]));
            int g = std::min(255, std::max(0, int(p[1]) - bias[1]));
            int b = std::min(255, std::max(0, int(p[2]) - bias[2]));
            Rgb pc{uint8_t(r), uint8_t(g), uint8_t(b)};
            int best = -1, bd = INT32_MAX;
            for (size_t ci = 0; ci < cands.size(); ci++) {
                int d = dist2(pc, cands[ci].c);
                if (d < bd) {
                    bd = d;
                    best = static_cast<int>(ci);
                }
            }
            if (bd > tau2) continue;
            const Cand& cd = cands[static_cast<size_t>(best)];
            if (cd.kind == 1) {
                jacc[static_cast<size_t>(cd.idx)].sx += x;
                jacc[static_cast<size_t>(cd.idx)].sy += y;
                jacc[static_cast<size_t>(cd.idx)].xs.push_back(x);
            } else if (cd.kind == 3) {
                Acc& a = oacc[cd.idx];
                a.sx += x;
                a.sy += y;
                a.xs.push_back(x);
                a.ys.push_back(y);
            }
        }

    ParsedFrame out;
    float S = float(std::max(img.w, img.h) - 1);
    for (int j = 0; j < kJoints; j++) {
        size_t n = jacc[static_cast<size_t>(j)].xs.size();
        if (n < 3) continue;
        out.joint_found[static_cast<size_t>(j)] = true;
        out.joint_xy[static_cast<size_t>(2 * j)] = float(jacc[static_cast<size_t>(j)].sx / n / S);
        out.joint_xy[static_cast<size_t>(2 * j + 1)] = float(jacc[static_cast<size_t>(j)].sy / n / S);
    }
    for (auto& [cls, a] : oacc) {
        size_t n = a.xs.size();
        if (n < 6) continue;
        std::sort(a.xs.begin(), a.xs.end());
        std::sort(a.ys.begin(), a.ys.end());
        size_t lo = static_cast<size_t>(std::floor(0.02 * (n - 1)));
        size_t hi = static_cast<size_t>(std::ceil(0.98 * (n - 1)));
        ParsedFrame::Box bx;
        bx.cls = cls;
        bx.x_min = a.xs[lo] / S;
        bx.x_max = a.xs[hi] / S;
        bx.y_min = a.ys[lo] / S;
        bx.y_max = a.ys[hi] / S;
        bx.cx = float(a.sx / n / S);
        bx.cy = float(a.sy / n / S);
        bx.pixel_count = static_cast<int>(n);
        out.boxes.push_back(bx);
    }
    return out;
}

std::vector<ParsedFrame> parse_motion(const std::vector<Image>& frames) {
    std::vector<ParsedFrame> out;
    out.reserve(frames.size());
    for (const Image& f : frames) out.push_back(parse_motion_frame(f));
    return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> vocab = {
        "pick", "up",  "the", "push",    "pull",  "point", "at",    "touch", "lift",
        "tap",  "wave", "nod", "stretch", "bow",   "clap",  "march", "shrug", "lean",
        "left", "right", "red", "green",  "blue",  "yellow", "purple", "cyan", "box",
    };
    return vocab;
}

std::vector<int> tokenize(const std::string& command) {
    const auto& vocab = vocabulary();
    std::vector<int> ids;
    std::istringstream ss(command);
    std::string word;
    while (ss >> word) {
        auto it = std::find(vocab.begin(), vocab.end(), word);
        DUET_CHECK(it != vocab.end(), "out-of-vocabulary token: '" + word + "'");
        ids.push_back(static_cast<int>(it - vocab.begin()));
    }
    return ids;
}

TaskConditioning build_conditioning(const std::string& command, const std::string& task) {
    DUET_CHECK(task == "ACTION" || task == "HOI", "task must be ACTION or HOI");
    TaskConditioning tc;
    tc.text_ids = tokenize(command);
    tc.task_id = task == "ACTION" ? 0 : 1;
    return tc;
}

}  // namespace duet::motion
