#include "duet/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include <json.hpp>

namespace duet::world {

namespace fs = std::filesystem;
using nlohmann::json;
using motion::J_HEAD;
using motion::J_HIP;
using motion::J_LANK;
using motion::J_LELB;
using motion::J_LKNE;
using motion::J_LSHO;
using motion::J_LWRI;
using motion::J_NECK;
using motion::J_RANK;
using motion::J_RELB;
using motion::J_RKNE;
using motion::J_RSHO;
using motion::J_RWRI;

namespace {

constexpr int kActions = 9;
constexpr int kHoiTemplates = 7;
const char* kActionCmd[kActions] = {"wave", "nod",   "stretch",   "bow",       "clap",
                                    "march", "shrug", "lean left", "lean right"};
const char* kHoiFmt[kHoiTemplates] = {"pick up the %s box", "push the %s box",
                                      "pull the %s box",    "point at the %s box",
                                      "touch the %s box",   "lift the %s box",
                                      "tap the %s box"};

// rest-pose joint template, normalized coordinates
const float kBaseX[motion::kJoints] = {0.50f, 0.50f, 0.40f, 0.60f, 0.34f, 0.66f, 0.30f,
                                       0.70f, 0.50f, 0.44f, 0.56f, 0.44f, 0.56f};
const float kBaseY[motion::kJoints] = {0.18f, 0.28f, 0.30f, 0.30f, 0.42f, 0.42f, 0.54f,
                                       0.54f, 0.55f, 0.70f, 0.70f, 0.88f, 0.88f};

const float kSlotX[4] = {0.16f, 0.34f, 0.66f, 0.84f};
const float kSlotY[2] = {0.52f, 0.70f};

std::string color_word(int cls) {
    const std::string& name = motion::palette().class_name.at(static_cast<size_t>(cls));
    return name.substr(0, name.find(' '));
}

float clampf(float v, float lo, float hi) { return std::min(hi, std::max(lo, v)); }

void set_xy(motion::PoseFrame& p, int j, float x, float y) {
    p.xy[2 * j] = clampf(x, 0.02f, 0.98f);
    p.xy[2 * j + 1] = clampf(y, 0.02f, 0.98f);
}

// elbow placed off the shoulder->wrist chord so the arm reads as jointed
void solve_elbow(motion::PoseFrame& p, int sho, int elb, int wri, float side) {
    float sx = p.xy[2 * sho], sy = p.xy[2 * sho + 1];
    float wx = p.xy[2 * wri], wy = p.xy[2 * wri + 1];
    float dx = wx - sx, dy = wy - sy;
    float len = std::sqrt(dx * dx + dy * dy);
    if (len < 0.05f) {
        dx = side;
        dy = 1.0f;
        len = std::sqrt(2.0f);
    }
    float mx = 0.5f * (sx + wx), my = 0.5f * (sy + wy);
    set_xy(p, elb, mx + side * 0.05f * (dy / len), my - side * 0.05f * (dx / len));
}


void fill_rect(Image& im, int x0, int y0, int x1, int y1, motion::Rgb c) {
    x0 = std::max(0, x0);
    y0 = std::max(0, y0);
    x1 = std::min(im.w - 1, x1);
    y1 = std::min(im.h - 1, y1);
    for (int y = y0; y <= y1; y++)
        for (int x = x0; x <= x1; x++) im.set(y, x, c.r, c.g, c.b);
}

void fill_disc(Image& im, float cx, float cy, float r, motion::Rgb c) {
    int x0 = static_cast<int>(std::floor(cx - r)), x1 = static_cast<int>(std::ceil(cx + r));
    int y0 = static_cast<int>(std::floor(cy - r)), y1 = static_cast<int>(std::ceil(cy + r));
    for (int y = y0; y <= y1; y++)
        for (int x = x0; x <= x1; x++) {
            float dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r * r) im.set(y, x, c.r, c.g, c.b);
        }
}

void thick_segment(Image& im, float x0, float y0, float x1, float y1, int brush,
                   motion::Rgb c) {
    float dx = x1 - x0, dy = y1 - y0;
    int steps = static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy)))) + 1;
    for (int s = 0; s <= steps; s++) {
        float t = steps == 0 ? 0.0f : static_cast<float>(s) / steps;
        int px = static_cast<int>(std::lround(x0 + t * dx));
        int py = static_cast<int>(std::lround(y0 + t * dy));
        for (int oy = -brush + 1; oy <= brush - 1; oy++)
            for (int ox = -brush + 1; ox <= brush - 1; ox++)
                im.set(py + oy, px + ox, c.r, c.g, c.b);
    }
}

int verb_of(int command_id) {  // HOI template index, -1 for actions
    return command_id < kActions ? -1 : (command_id - kActions) / 6;
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& command_list() {
    static const std::vector<std::pair<std::string, std::string>> cmds = [] {
        std::vector<std::pair<std::string, std::string>> v;
        for (int a = 0; a < kActions; a++) v.emplace_back(kActionCmd[a], "ACTION");
        char buf[64];
        for (int t = 0; t < kHoiTemplates; t++)
            for (int c = 0; c < 6; c++) {
                std::snprintf(buf, sizeof(buf), kHoiFmt[t], color_word(c).c_str());
                v.emplace_back(buf, "HOI");
            }
        return v;
    }();
    return cmds;
}

EpisodeSpec make_spec(int command_id, int layout_id, int frames, int fps, int video_canvas,
                      uint64_t seed, const std::string& split) {
    const auto& cmds = command_list();
    DUET_CHECK(command_id >= 0 && command_id < static_cast<int>(cmds.size()),
               "command id out of range");
    DUET_CHECK(layout_id >= 0 && layout_id < kLayouts, "layout id out of range");
    DUET_CHECK(frames >= 4 && frames <= 64, "episode frames must be in [4, 64]");
    EpisodeSpec s;
    s.command_id = command_id;
    s.layout_id = layout_id;
    s.split = split;
    s.command = cmds[static_cast<size_t>(command_id)].first;
    s.task = cmds[static_cast<size_t>(command_id)].second;
    s.frames = frames;
    s.fps = fps;
    s.video_canvas = video_canvas;
    s.seed = seed;

    Rng rng(seed_for(seed, "scene"));
    int slot = layout_id / 3;
    int count = layout_id % 3 + 1;
    int target_cls = command_id >= kActions ? (command_id - kActions) % 6 : -1;

    // deal `count` distinct slots, the layout's own slot first
    std::vector<int> slots = {slot};
    std::vector<int> rest;
    for (int i = 0; i < 8; i++)
        if (i != slot) rest.push_back(i);
    for (int k = 1; k < count; k++) {
        int pick = rng.uniform_int(0, static_cast<int>(rest.size()) - 1);
        slots.push_back(rest[static_cast<size_t>(pick)]);
        rest.erase(rest.begin() + pick);
    }
    // distinct classes, the commanded color on the layout slot
    std::vector<int> classes;
    std::vector<int> avail;
    for (int c = 0; c < 6; c++)
        if (c != target_cls) avail.push_back(c);
    if (target_cls >= 0)
        classes.push_back(target_cls);
    else {
        int pick = rng.uniform_int(0, static_cast<int>(avail.size()) - 1);
        classes.push_back(avail[static_cast<size_t>(pick)]);
        avail.erase(avail.begin() + pick);
    }
    for (int k = 1; k < count; k++) {
        int pick = rng.uniform_int(0, static_cast<int>(avail.size()) - 1);
        classes.push_back(avail[static_cast<size_t>(pick)]);
        avail.erase(avail.begin() + pick);
    }

    for (int k = 0; k < count; k++) {
        SceneObject o;
        o.id = k;
        o.cls = classes[static_cast<size_t>(k)];
        o.half = static_cast<float>(rng.uniform(0.055, 0.085));
        int sx = slots[static_cast<size_t>(k)] % 4, sy = slots[static_cast<size_t>(k)] / 4;
        o.cx = clampf(kSlotX[sx] + static_cast<float>(rng.uniform(-0.015, 0.015)),
                      o.half + 0.02f, 1.0f - o.half - 0.02f);
        o.cy = clampf(kSlotY[sy] + static_cast<float>(rng.uniform(-0.015, 0.015)),
                      o.half + 0.02f, 1.0f - o.half - 0.02f);
        s.objects.push_back(o);
    }
    s.target = target_cls >= 0 ? 0 : -1;

    for (int f = 0; f < frames; f++)
        s.envelope.push_back(static_cast<float>(rng.uniform(0.1, 1.0)));

    int fi = frames / 4;
    int fr = frames - std::max(2, (3 * frames) / 8);
    if (fr <= fi) fr = fi + 1;
    s.window_begin = s.task == "HOI" ? fr : fi;
    s.window_end = frames;
    return s;
}

motion::MotionSequence script_motion(const EpisodeSpec& spec) {
    int F = spec.frames;
    int fi = F / 4;
    int fr = spec.task == "HOI" ? spec.window_begin : F - std::max(2, (3 * F) / 8);
    Rng rng(seed_for(spec.seed, "pose"));
    float jx[motion::kJoints], jy[motion::kJoints];
    for (int j = 0; j < motion::kJoints; j++) {
        jx[j] = kBaseX[j] + static_cast<float>(rng.uniform(-0.01, 0.01));
        jy[j] = kBaseY[j] + static_cast<float>(rng.uniform(-0.01, 0.01));
    }

    motion::MotionSequence seq;
    seq.fps = spec.fps;
    seq.canvas = kDocCanvas;
    seq.command = spec.command;
    seq.task = spec.task;

    int verb = verb_of(spec.command_id);
    const SceneObject* targ =
        spec.target >= 0 ? &spec.objects[static_cast<size_t>(spec.target)] : nullptr;
    float push_dir = targ && targ->cx >= 0.5f ? 1.0f : -1.0f;

    for (int f = 0; f < F; f++) {
        motion::PoseFrame p;
        for (int j = 0; j < motion::kJoints; j++) {
            p.visible[j] = true;
            set_xy(p, j, jx[j], jy[j]);
        }
        // light idle sway so even rest frames carry a little motion
        float sway = 0.004f * std::sin(6.2831853f * f / std::max(1, F));
        set_xy(p, J_LWRI, jx[J_LWRI] + sway, jy[J_LWRI]);

        motion::ObjectBoxFrame objs;
        std::vector<std::pair<float, float>> centers;
        for (const auto& o : spec.objects) centers.emplace_back(o.cx, o.cy);

        if (spec.task == "HOI") {
            float u = fr > fi ? clampf(static_cast<float>(f - fi) / (fr - fi), 0.0f, 1.0f)
                              : (f >= fr ? 1.0f : 0.0f);
            float wx = jx[J_RWRI] + u * (targ->cx - jx[J_RWRI]);
            float wy = jy[J_RWRI] + u * (targ->cy - jy[J_RWRI]);
            if (f >= fr) {
                int k = f - fr;
                float cx = targ->cx, cy = targ->cy;
                float lo = targ->half + 0.02f, hi = 1.0f - targ->half - 0.02f;
                switch (verb) {
                    case 0:  // pick up: grasped box rises with the hand
                    case 5:  // lift
                        cy = clampf(targ->cy - 0.035f * k, lo, hi);
                        break;
                    case 1:  // push: box slides away from the actor
                        cx = clampf(targ->cx + push_dir * 0.03f * k, lo, hi);
                        break;
                    case 2:  // pull: box slides toward the actor
                        cx = clampf(targ->cx - push_dir * 0.03f * k, lo, hi);
                        break;
                    case 6:  // tap: hand bobs inside the box face
                        wy = targ->cy + (k % 2 ? -0.3f : 0.15f) * targ->half;
                        break;
                    default: break;  // point, touch: hold
                }
                centers[static_cast<size_t>(spec.target)] = {cx, cy};
                if (verb != 6) {  // tap keeps its own bobbing offset
                    wx = cx;
                    wy = cy;
                }
            }
            set_xy(p, J_RWRI, wx, wy);
            solve_elbow(p, J_RSHO, J_RELB, J_RWRI, 1.0f);
        } else {
            int a = spec.command_id;
            float prog = f <= fi ? 0.0f
                                 : static_cast<float>(f - fi) / std::max(1, F - 1 - fi);
            int k = std::max(0, f - fi);
            switch (a) {
                case 0:  // wave
                    if (f >= fi) {
                        set_xy(p, J_RWRI, 0.70f + (k % 2 ? 0.06f : -0.06f), 0.30f);
                        solve_elbow(p, J_RSHO, J_RELB, J_RWRI, 1.0f);
                    }
                    break;
                case 1:  // nod
                    set_xy(p, J_HEAD, jx[J_HEAD], jy[J_HEAD] + (f >= fi && k % 2 ? 0.035f : 0.0f));
                    break;
                case 2:  // stretch: both hands rise overhead
                    set_xy(p, J_LWRI, jx[J_LWRI] + prog * (jx[J_LSHO] - 0.02f - jx[J_LWRI]),
                           jy[J_LWRI] + prog * (0.14f - jy[J_LWRI]));
                    set_xy(p, J_RWRI, jx[J_RWRI] + prog * (jx[J_RSHO] + 0.02f - jx[J_RWRI]),
                           jy[J_RWRI] + prog * (0.14f - jy[J_RWRI]));
                    solve_elbow(p, J_LSHO, J_LELB, J_LWRI, -1.0f);
                    solve_elbow(p, J_RSHO, J_RELB, J_RWRI, 1.0f);
                    break;
                case 3:  // bow: upper body tips forward/down
                    for (int j : {static_cast<int>(J_HEAD), static_cast<int>(J_NECK),
                                  static_cast<int>(J_LSHO), static_cast<int>(J_RSHO)})
                        set_xy(p, j, p.xy[2 * j], p.xy[2 * j + 1] + 0.12f * prog);
                    break;
                case 4:  // clap: hands meet at the chest on alternating frames
                    if (f >= fi) {
                        float m = k % 2 ? 1.0f : 0.3f;
                        set_xy(p, J_LWRI, jx[J_LWRI] + m * (0.47f - jx[J_LWRI]),
                               jy[J_LWRI] + m * (0.40f - jy[J_LWRI]));
                        set_xy(p, J_RWRI, jx[J_RWRI] + m * (0.53f - jx[J_RWRI]),
                               jy[J_RWRI] + m * (0.40f - jy[J_RWRI]));
                        solve_elbow(p, J_LSHO, J_LELB, J_LWRI, -1.0f);
                        solve_elbow(p, J_RSHO, J_RELB, J_RWRI, 1.0f);
                    }
                    break;
                case 5:  // march: knees lift alternately
                    if (f >= fi) {
                        int lift = k % 2;
                        set_xy(p, lift ? J_LKNE : J_RKNE, jx[lift ? J_LKNE : J_RKNE],
                               jy[lift ? J_LKNE : J_RKNE] - 0.06f);
                        set_xy(p, lift ? J_LANK : J_RANK, jx[lift ? J_LANK : J_RANK],
                               jy[lift ? J_LANK : J_RANK] - 0.05f);
                    }
                    break;
                case 6: {  // shrug: shoulders rise then settle
                    float amp = 0.035f * std::sin(3.14159265f * prog);
                    set_xy(p, J_LSHO, jx[J_LSHO], jy[J_LSHO] - amp);
                    set_xy(p, J_RSHO, jx[J_RSHO], jy[J_RSHO] - amp);
                    break;
                }
                case 7:  // lean left
                case 8: {  // lean right
                    float dir = a == 7 ? -1.0f : 1.0f;
                    for (int j : {static_cast<int>(J_HEAD), static_cast<int>(J_NECK),
                                  static_cast<int>(J_LSHO), static_cast<int>(J_RSHO),
                                  static_cast<int>(J_LELB), static_cast<int>(J_RELB),
                                  static_cast<int>(J_LWRI), static_cast<int>(J_RWRI)})
                        set_xy(p, j, p.xy[2 * j] + dir * 0.06f * prog, p.xy[2 * j + 1]);
                    break;
                }
                default: break;
            }
        }

        for (size_t i = 0; i < spec.objects.size(); i++) {
            const auto& o = spec.objects[i];
            motion::ObjectBox b;
            b.id = o.id;
            b.cls = motion::palette().class_name.at(static_cast<size_t>(o.cls));
            b.x_min = centers[i].first - o.half;
            b.x_max = centers[i].first + o.half;
            b.y_min = centers[i].second - o.half;
            b.y_max = centers[i].second + o.half;
            b.present = true;
            objs.boxes.push_back(b);
        }
        seq.poses.push_back(p);
        seq.objects.push_back(objs);
    }
    return seq;
}

Image render_scene_frame(const EpisodeSpec& spec, const motion::PoseFrame& pose,
                         const motion::ObjectBoxFrame& objs, float envelope, int canvas) {
    DUET_CHECK(canvas >= 16, "scene canvas too small");
    (void)spec;
    Image im(canvas, canvas);
    int S = canvas - 1;
    fill_rect(im, 0, 0, S, S, {15, 15, 30});
    fill_rect(im, 0, static_cast<int>(std::lround(kFloorY * S)), S, S, {35, 35, 55});

    const motion::Palette& pal = motion::palette();
    for (const auto& b : objs.boxes) {
        if (!b.present) continue;
        int cls = motion::class_id(b.cls);
        DUET_CHECK(cls >= 0, "unknown object class '" + b.cls + "'");
        motion::Rgb c = pal.object.at(static_cast<size_t>(cls));
        fill_rect(im, static_cast<int>(std::lround(b.x_min * S)),
                  static_cast<int>(std::lround(b.y_min * S)),
                  static_cast<int>(std::lround(b.x_max * S)),
                  static_cast<int>(std::lround(b.y_max * S)), c);
    }

    motion::Rgb skin{200, 160, 120};
    int brush = std::max(2, canvas / 32);
    for (const auto& [a, b] : motion::kBonePairs) {
        if (!pose.visible[a] || !pose.visible[b]) continue;
        thick_segment(im, pose.xy[2 * a] * S, pose.xy[2 * a + 1] * S, pose.xy[2 * b] * S,
                      pose.xy[2 * b + 1] * S, brush, skin);
    }
    for (int j = 0; j < motion::kJoints; j++) {
        if (!pose.visible[j]) continue;
        fill_disc(im, pose.xy[2 * j] * S, pose.xy[2 * j + 1] * S, std::max(1, canvas / 48), skin);
    }
    if (pose.visible[J_HEAD]) {
        float hx = pose.xy[2 * J_HEAD] * S, hy = pose.xy[2 * J_HEAD + 1] * S;
        float r = kHeadRadius * canvas;
        fill_disc(im, hx, hy, r, skin);
        int mw = std::max(1, static_cast<int>(std::lround(0.45 * r)));
        int mh = std::max(1, static_cast<int>(std::lround(envelope * 0.5 * r)));
        int my = static_cast<int>(std::lround(hy + 0.45 * r));
        fill_rect(im, static_cast<int>(std::lround(hx)) - mw, my - (mh - 1) / 2,
                  static_cast<int>(std::lround(hx)) + mw, my + mh / 2, {120, 20, 20});
    }
    return im;
}

std::vector<Image> render_video(const EpisodeSpec& spec, const motion::MotionSequence& seq,
                                int canvas) {
    DUET_CHECK(seq.length() == spec.frames, "motion length does not match episode spec");
    DUET_CHECK(spec.envelope.size() == static_cast<size_t>(spec.frames),
               "envelope length does not match episode spec");
    std::vector<Image> out;
    for (int f = 0; f < spec.frames; f++)
        out.push_back(render_scene_frame(spec, seq.poses[static_cast<size_t>(f)],
                                         seq.objects[static_cast<size_t>(f)],
                                         spec.envelope[static_cast<size_t>(f)], canvas));
    return out;
}

audio::AudioTrack synth_audio(const EpisodeSpec& spec, int rate) {
    DUET_CHECK(rate % spec.fps == 0, "audio rate must be a multiple of fps");
    int spp = rate / spec.fps;
    int n = spec.frames * spp;
    Rng rng(seed_for(spec.seed, "audio"));
    std::vector<float> noise(static_cast<size_t>(n) + 8);
    for (auto& x : noise) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    audio::AudioTrack t;
    t.rate = rate;
    t.fps = spec.fps;
    t.samples.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; i++) {
        float acc = 0.0f;
        for (int k = 0; k < 8; k++) acc += noise[static_cast<size_t>(i + k)];
        t.samples[static_cast<size_t>(i)] = acc / 8.0f;
    }
    // per-frame gain targets mean |x| = env/2; a light crest clamp first keeps
    // the scaled peaks out of the PCM clipping range
    for (int f = 0; f < spec.frames; f++) {
        float* seg = t.samples.data() + static_cast<size_t>(f) * spp;
        double m1 = 0.0;
        for (int i = 0; i < spp; i++) m1 += std::abs(seg[i]);
        m1 /= spp;
        float cap = static_cast<float>(1.75 * m1);
        double m2 = 0.0;
        for (int i = 0; i < spp; i++) {
            seg[i] = clampf(seg[i], -cap, cap);
            m2 += std::abs(seg[i]);
        }
        m2 /= spp;
        float gain = static_cast<float>(spec.envelope[static_cast<size_t>(f)] / 2.0 /
                                        std::max(m2, 1e-9));
        for (int i = 0; i < spp; i++) seg[i] *= gain;
    }
    return t;
}

FaceMask face_mask_from_motion(const motion::MotionSequence& seq, int canvas, int patch) {
    DUET_CHECK(patch >= 1 && canvas % patch == 0, "face mask canvas must divide by patch");
    int g = canvas / patch;
    FaceMask m(seq.length(), g, g, 0.0f);
    int S = canvas - 1;
    float r = kHeadRadius * canvas;
    for (int f = 0; f < seq.length(); f++) {
        const auto& pose = seq.poses[static_cast<size_t>(f)];
        if (!pose.visible[J_HEAD]) continue;
        float cx = pose.xy[2 * J_HEAD] * S, cy = pose.xy[2 * J_HEAD + 1] * S;
        for (int i = 0; i < g; i++)
            for (int j = 0; j < g; j++) {
                int cnt = 0;
                for (int py = 0; py < patch; py++)
                    for (int px = 0; px < patch; px++) {
                        float dx = j * patch + px - cx, dy = i * patch + py - cy;
                        if (dx * dx + dy * dy <= r * r) cnt++;
                    }
                m.w[(static_cast<size_t>(f) * g + i) * g + j] =
                    static_cast<float>(cnt) / (patch * patch);
            }
    }
    return m;
}

std::string spec_to_json(const EpisodeSpec& s) {
    json j;
    j["schema_version"] = 1;
    j["command_id"] = s.command_id;
    j["layout_id"] = s.layout_id;
    j["split"] = s.split;
    j["command"] = s.command;
    j["task"] = s.task;
    j["frames"] = s.frames;
    j["fps"] = s.fps;
    j["video_canvas"] = s.video_canvas;
    j["target"] = s.target;
    j["window"] = {s.window_begin, s.window_end};
    j["seed"] = s.seed;
    j["envelope"] = s.envelope;
    json objs = json::array();
    for (const auto& o : s.objects)
        objs.push_back({{"id", o.id},
                        {"cls", o.cls},
                        {"half", o.half},
                        {"cx", o.cx},
                        {"cy", o.cy}});
    j["objects"] = objs;
    return j.dump(2);
}

EpisodeSpec spec_from_json(const std::string& text) {
    try {
        json j = json::parse(text);
        DUET_REQUIRE(j.at("schema_version").get<int>() == 1, "unsupported scene schema version");
        EpisodeSpec s;
        s.command_id = j.at("command_id").get<int>();
        s.layout_id = j.at("layout_id").get<int>();
        s.split = j.at("split").get<std::string>();
        s.command = j.at("command").get<std::string>();
        s.task = j.at("task").get<std::string>();
        s.frames = j.at("frames").get<int>();
        s.fps = j.at("fps").get<int>();
        s.video_canvas = j.at("video_canvas").get<int>();
        s.target = j.at("target").get<int>();
        s.window_begin = j.at("window").at(0).get<int>();
        s.window_end = j.at("window").at(1).get<int>();
        s.seed = j.at("seed").get<uint64_t>();
        s.envelope = j.at("envelope").get<std::vector<float>>();
        for (const auto& o : j.at("objects")) {
            SceneObject so;
            so.id = o.at("id").get<int>();
            so.cls = o.at("cls").get<int>();
            so.half = o.at("half").get<float>();
            so.cx = o.at("cx").get<float>();
            so.cy = o.at("cy").get<float>();
            s.objects.push_back(so);
        }
        return s;
    } catch (const json::exception& e) {
        throw runtime_failure(std::string("scene document parse error: ") + e.what());
    }
}

DatasetSummary build_dataset(const std::string& dir, int episodes, int frames, int fps,
                             int video_canvas, int audio_rate, uint64_t seed) {
    DUET_CHECK(episodes >= 12, "need at least 12 episodes for train/val/test splits");
    int n_val = episodes / 12, n_test = episodes / 12;
    int n_train = episodes - n_val - n_test;

    // deal command x layout combos disjointly across splits, proportional to
    // the split sizes; every episode then draws from its split's pool only
    const auto& cmds = command_list();
    std::vector<std::pair<int, int>> combos;
    for (int c = 0; c < static_cast<int>(cmds.size()); c++)
        for (int l = 0; l < kLayouts; l++) combos.emplace_back(c, l);
    Rng crng(seed_for(seed, "combos"));
    for (size_t i = combos.size(); i > 1; i--)
        std::swap(combos[i - 1], combos[static_cast<size_t>(
                                     crng.uniform_int(0, static_cast<int>(i) - 1))]);
    size_t pool_val = combos.size() / 12, pool_test = combos.size() / 12;
    size_t pool_train = combos.size() - pool_val - pool_test;
    auto pool_of = [&](const std::string& split) {
        size_t b = 0, e = pool_train;
        if (split == "val") b = pool_train, e = pool_train + pool_val;
        if (split == "test") b = pool_train + pool_val, e = combos.size();
        return std::pair<size_t, size_t>(b, e);
    };

    fs::create_directories(dir);
    json manifest;
    manifest["schema_version"] = 1;
    manifest["seed"] = seed;
    manifest["frames"] = frames;
    manifest["fps"] = fps;
    manifest["video_canvas"] = video_canvas;
    manifest["audio_rate"] = audio_rate;
    json eplist = json::array();
    std::string hash_cat;

    for (int i = 0; i < episodes; i++) {
        std::string split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        char id[16];
        std::snprintf(id, sizeof(id), "ep%04d", i);
        Rng erng(seed_for(seed, std::string("ep.") + id));
        auto [pb, pe] = pool_of(split);
        auto [cmd, layout] =
            combos[pb + static_cast<size_t>(erng.uniform_int(0, static_cast<int>(pe - pb) - 1))];
        EpisodeSpec spec = make_spec(cmd, layout, frames, fps, video_canvas,
                                     seed_for(seed, std::string("spec.") + id), split);
        motion::MotionSequence seq = script_motion(spec);
        std::vector<Image> video = render_video(spec, seq, video_canvas);
        audio::AudioTrack track = synth_audio(spec, audio_rate);

        fs::path ep = fs::path(dir) / id;
        fs::create_directories(ep);
        std::string scene_js = spec_to_json(spec);
        write_text_file((ep / "scene.json").string(), scene_js);
        std::string motion_js = motion::motion_doc_to_json(seq);
        write_text_file((ep / "motion.json").string(), motion_js);
        audio::write_wav((ep / "audio.wav").string(), track);
        for (int f = 0; f < frames; f++) {
            char fn[32];
            std::snprintf(fn, sizeof(fn), "frame_%03d.ppm", f);
            write_ppm((ep / fn).string(), video[static_cast<size_t>(f)]);
        }

        Sha256 h;
        auto add = [&](const std::string& s) { h.update(s.data(), s.size()); };
        add(Sha256::of_string(scene_js));
        add(Sha256::of_string(motion_js));
        add(Sha256::of_file((ep / "audio.wav").string()));
        for (int f = 0; f < frames; f++) {
            char fn[32];
            std::snprintf(fn, sizeof(fn), "frame_%03d.ppm", f);
            add(Sha256::of_file((ep / fn).string()));
        }
        std::string ep_hash = h.hex_digest();
        hash_cat += ep_hash;
        eplist.push_back({{"id", id},
                          {"split", split},
                          {"command", spec.command},
                          {"task", spec.task},
                          {"command_id", spec.command_id},
                          {"layout_id", spec.layout_id},
                          {"hash", ep_hash}});
    }

    DatasetSummary sum;
    sum.manifest_hash = Sha256::of_string(hash_cat);
    sum.n_train = n_train;
    sum.n_val = n_val;
    sum.n_test = n_test;
    sum.dir = dir;
    manifest["episodes"] = eplist;
    manifest["content_hash"] = sum.manifest_hash;
    write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2));
    return sum;
}

Episode load_episode(const std::string& episode_dir) {
    Episode e;
    fs::path ep(episode_dir);
    e.spec = spec_from_json(read_text_file((ep / "scene.json").string()));
    e.motion = motion::load_motion_doc((ep / "motion.json").string());
    DUET_REQUIRE(e.motion.length() == e.spec.frames, "episode motion/scene length mismatch");
    e.audio = audio::read_wav((ep / "audio.wav").string());
    e.audio.fps = e.spec.fps;  // wav carries no frame rate; the scene doc does
    for (int f = 0; f < e.spec.frames; f++) {
        char fn[32];
        std::snprintf(fn, sizeof(fn), "frame_%03d.ppm", f);
        e.video.push_back(read_ppm((ep / fn).string()));
    }
    return e;
}

std::vector<std::string> list_split(const std::string& dataset_dir, const std::string& split) {
    std::string text = read_text_file((fs::path(dataset_dir) / "manifest.json").string());
    try {
        json j = json::parse(text);
        std::vector<std::string> out;
        for (const auto& ep : j.at("episodes"))
            if (ep.at("split").get<std::string>() == split)
                out.push_back((fs::path(dataset_dir) / ep.at("id").get<std::string>()).string());
        return out;
    } catch (const json::exception& e) {
        throw runtime_failure(std::string("manifest parse error: ") + e.what());
    }
}

}  // namespace duet::world
