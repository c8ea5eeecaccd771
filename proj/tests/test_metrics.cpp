#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "duet/metrics.hpp"
#include "duet/world.hpp"

using namespace duet;
namespace fs = std::filesystem;

namespace {

// one actor pose far from every slot, wrists at rest
motion::PoseFrame rest_pose() {
    motion::PoseFrame p;
    float xs[motion::kJoints] = {0.50f, 0.50f, 0.40f, 0.60f, 0.34f, 0.66f, 0.30f,
                                 0.70f, 0.50f, 0.44f, 0.56f, 0.44f, 0.56f};
    float ys[motion::kJoints] = {0.18f, 0.28f, 0.30f, 0.30f, 0.42f, 0.42f, 0.54f,
                                 0.54f, 0.55f, 0.70f, 0.70f, 0.88f, 0.88f};
    for (int j = 0; j < motion::kJoints; j++) {
        p.xy[2 * j] = xs[j];
        p.xy[2 * j + 1] = ys[j];
        p.visible[j] = true;
    }
    return p;
}

motion::MotionSequence two_frame_seq(float wrist_x, float wrist_y, float bx, float by,
                                     float half, const std::string& cls) {
    motion::MotionSequence seq;
    seq.fps = 8;
    seq.canvas = 64;
    seq.command = "touch the red box";
    seq.task = "HOI";
    for (int f = 0; f < 2; f++) {
        motion::PoseFrame p = rest_pose();
        p.xy[2 * motion::J_RWRI] = wrist_x;
        p.xy[2 * motion::J_RWRI + 1] = wrist_y;
        motion::ObjectBoxFrame obf;
        motion::ObjectBox b;
        b.id = 0;
        b.cls = cls;
        b.x_min = bx - half;
        b.x_max = bx + half;
        b.y_min = by - half;
        b.y_max = by + half;
        obf.boxes.push_back(b);
        seq.poses.push_back(p);
        seq.objects.push_back(obf);
    }
    return seq;
}

Image flat(int c, uint8_t r, uint8_t g, uint8_t b) {
    Image im(c, c);
    for (size_t i = 0; i < im.px.size(); i += 3) {
        im.px[i] = r;
        im.px[i + 1] = g;
        im.px[i + 2] = b;
    }
    return im;
}

}  // namespace

TEST_CASE("pixel interaction counts hand-in-box frames with a scaled margin") {
    // wrist dead center -> 1.0
    auto in = two_frame_seq(0.5f, 0.5f, 0.5f, 0.5f, 0.06f, "red box");
    CHECK(metrics::pixel_interaction(in, "red box", 0, 2).value == doctest::Approx(1.0));
    // far away -> 0.0
    auto out = two_frame_seq(0.1f, 0.1f, 0.8f, 0.8f, 0.06f, "red box");
    metrics::MetricValue mv = metrics::pixel_interaction(out, "red box", 0, 2);
    CHECK(mv.available);
    CHECK(mv.value == doctest::Approx(0.0));
    // 1.9 px outside the edge is inside the 2 px margin; 2.1 px is not
    float edge = 0.5f + 0.06f;
    auto close = two_frame_seq(edge + 1.9f / 63.0f, 0.5f, 0.5f, 0.5f, 0.06f, "red box");
    CHECK(metrics::pixel_interaction(close, "red box", 0, 2).value == doctest::Approx(1.0));
    auto barely = two_frame_seq(edge + 2.1f / 63.0f, 0.5f, 0.5f, 0.5f, 0.06f, "red box");
    CHECK(metrics::pixel_interaction(barely, "red box", 0, 2).value == doctest::Approx(0.0));
    // wrong class present -> frames cannot hit
    CHECK(metrics::pixel_interaction(in, "green box", 0, 2).value == doctest::Approx(0.0));
    // half window
    auto half = two_frame_seq(0.5f, 0.5f, 0.5f, 0.5f, 0.06f, "red box");
    half.poses[1].xy[2 * motion::J_RWRI] = 0.05f;
    half.poses[1].xy[2 * motion::J_LWRI] = 0.95f;
    CHECK(metrics::pixel_interaction(half, "red box", 0, 2).value == doctest::Approx(0.5));
    // either hand counts
    auto lefty = two_frame_seq(0.1f, 0.1f, 0.3f, 0.54f, 0.06f, "red box");
    for (auto& p : lefty.poses) p.xy[2 * motion::J_LWRI] = 0.3f;  // left wrist y is 0.54
    CHECK(metrics::pixel_interaction(lefty, "red box", 0, 2).value == doctest::Approx(1.0));

    CHECK_THROWS_AS((void)metrics::pixel_interaction(in, "red box", 0, 5), contract_error);
    CHECK_THROWS_AS((void)metrics::pixel_interaction(in, "red box", 1, 1), contract_error);
    CHECK_THROWS_AS((void)metrics::pixel_interaction(in, "mauve box", 0, 2), contract_error);
}

TEST_CASE("scripted episodes achieve the pixel-interaction ceiling") {
    for (int verb = 0; verb < 7; verb++) {
        int cmd = 9 + verb * 6 + verb % 6;
        world::EpisodeSpec spec = world::make_spec(cmd, 14, 8, 8, 64, 900u + verb, "train");
        motion::MotionSequence seq = world::script_motion(spec);
        std::string cls = motion::palette().class_name[static_cast<size_t>(spec.objects[0].cls)];
        metrics::MetricValue pi =
            metrics::pixel_interaction(seq, cls, spec.window_begin, spec.window_end);
        CHECK(pi.value == doctest::Approx(1.0));
    }
    // a frozen rest pose scores zero against a far-off slot
    world::EpisodeSpec spec = world::make_spec(9, 0, 8, 8, 64, 901, "train");
    motion::MotionSequence seq = world::script_motion(spec);
    for (auto& p : seq.poses) p = rest_pose();
    std::string cls = motion::palette().class_name[static_cast<size_t>(spec.objects[0].cls)];
    CHECK(metrics::pixel_interaction(seq, cls, spec.window_begin, spec.window_end).value ==
          doctest::Approx(0.0));
}

TEST_CASE("dynamic degree matches a hand-computed difference") {
    std::vector<Image> still = {flat(16, 100, 100, 100), flat(16, 100, 100, 100)};
    CHECK(metrics::dynamic_degree(still).value == doctest::Approx(0.0));
    std::vector<Image> step = {flat(16, 100, 100, 100), flat(16, 110, 100, 100)};
    CHECK(metrics::dynamic_degree(step).value == doctest::Approx(10.0 / 765.0));
    std::vector<Image> triple = {flat(16, 0, 0, 0), flat(16, 255, 255, 255), flat(16, 0, 0, 0)};
    CHECK(metrics::dynamic_degree(triple).value == doctest::Approx(1.0));
    CHECK_THROWS_AS((void)metrics::dynamic_degree({flat(16, 1, 1, 1)}), contract_error);
}

TEST_CASE("laplacian sharpness separates flat, sharp and blurred content") {
    std::vector<Image> uniform = {flat(16, 77, 77, 77)};
    CHECK(metrics::laplacian_sharpness(uniform, 0, 0, 16, 16).value == doctest::Approx(0.0));

    // vertical stripes alternating 0/255: the interior Laplacian is +-510
    Image stripes(16, 16);
    for (int y = 0; y < 16; y++)
        for (int x = 0; x < 16; x++) {
            uint8_t v = x % 2 ? 255 : 0;
            stripes.set(y, x, v, v, v);
        }
    metrics::MetricValue sharp = metrics::laplacian_sharpness({stripes}, 1, 1, 15, 15);
    CHECK(sharp.value == doctest::Approx(510.0 * 510.0));

    // box blur of the stripes must strictly reduce it
    Image blurred(16, 16);
    for (int y = 0; y < 16; y++)
        for (int x = 0; x < 16; x++) {
            int acc = 0, n = 0;
            for (int dy = -1; dy <= 1; dy++)
                for (int dx = -1; dx <= 1; dx++) {
                    int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= 16 || xx < 0 || xx >= 16) continue;
                    acc += stripes.at(yy, xx)[0];
                    n++;
                }
            uint8_t v = static_cast<uint8_t>(acc / n);
            blurred.set(y, x, v, v, v);
        }
    metrics::MetricValue soft = metrics::laplacian_sharpness({blurred}, 1, 1, 15, 15);
    CHECK(soft.value < 0.2 * sharp.value);

    CHECK_THROWS_AS((void)metrics::laplacian_sharpness({stripes}, 5, 5, 5, 9), contract_error);
    CHECK_THROWS_AS((void)metrics::laplacian_sharpness({stripes}, 15, 15, 16, 16),
                    contract_error);
}

TEST_CASE("box tracking error measures center drift and flags parse failures") {
    world::EpisodeSpec spec = world::make_spec(13, 14, 8, 8, 64, 321, "train");
    motion::MotionSequence seq = world::script_motion(spec);
    std::vector<Image> frames = motion::render_motion(seq.poses, seq.objects, 64);

    metrics::MetricValue self = metrics::box_tracking_error(frames, seq);
    REQUIRE(self.available);
    CHECK(self.value <= 1.0);  // parsing its own render is sub-pixel-ish

    motion::MotionSequence shifted = seq;
    for (auto& of : shifted.objects)
        for (auto& b : of.boxes) {
            b.x_min += 6.0f / 63.0f;
            b.x_max += 6.0f / 63.0f;
        }
    metrics::MetricValue drift = metrics::box_tracking_error(frames, shifted);
    REQUIRE(drift.available);
    CHECK(drift.value == doctest::Approx(6.0).epsilon(0.25));

    // driving expects a class the frames never show -> unavailable, not zero
    int absent = -1;
    for (int c = 0; c < (int)motion::palette().class_name.size() && absent < 0; ++c) {
        bool used = false;
        for (const auto& o : spec.objects) used |= (o.cls == c);
        if (!used) absent = c;
    }
    REQUIRE(absent >= 0);
    motion::MotionSequence ghost = seq;
    for (auto& of : ghost.objects)
        for (auto& b : of.boxes) b.cls = motion::palette().class_name.at(absent);
    metrics::MetricValue miss = metrics::box_tracking_error(frames, ghost);
    CHECK(!miss.available);
    CHECK(miss.note.find("parse failure") != std::string::npos);

    motion::MotionSequence none = seq;
    for (auto& of : none.objects) of.boxes.clear();
    CHECK(!metrics::box_tracking_error(frames, none).available);
}

TEST_CASE("external metric adapters speak the stdin/stdout score protocol") {
    fs::path dir = fs::temp_directory_path() / "duet_adapters";
    fs::create_directories(dir);
    fs::path good = dir / "good.sh";
    {
        std::ofstream f(good);
        f << "#!/bin/sh\ncat > /dev/null\nprintf '{\"score\": 0.75, \"note\": \"stub\"}'\n";
    }
    fs::path bad = dir / "bad.sh";
    {
        std::ofstream f(bad);
        f << "#!/bin/sh\ncat > /dev/null\nexit 3\n";
    }
    fs::path noise = dir / "noise.sh";
    {
        std::ofstream f(noise);
        f << "#!/bin/sh\ncat > /dev/null\necho not-json\n";
    }

    metrics::MetricValue ok = metrics::run_external_metric("sh " + good.string(), "{\"x\":1}");
    REQUIRE(ok.available);
    CHECK(ok.value == doctest::Approx(0.75));
    CHECK(ok.note == "stub");

    metrics::MetricValue err = metrics::run_external_metric("sh " + bad.string(), "{}");
    CHECK(!err.available);
    CHECK(err.note.find("status") != std::string::npos);

    metrics::MetricValue junk = metrics::run_external_metric("sh " + noise.string(), "{}");
    CHECK(!junk.available);
    fs::remove_all(dir);
}

TEST_CASE("metric reports round trip and never render n/a as a number") {
    metrics::MetricReport r;
    r.add("pixel_interaction", metrics::MetricValue::ok(0.8125, "50 episodes"));
    r.add("box_tracking_error", metrics::MetricValue::missing("parse failure rate 40%"));
    r.add("dynamic_degree", metrics::MetricValue::ok(0.0421));

    std::string js = r.to_json();
    metrics::MetricReport back = metrics::report_from_json(js);
    REQUIRE(back.entries.size() == 3);
    CHECK(back.entries["pixel_interaction"].available);
    CHECK(back.entries["pixel_interaction"].value == doctest::Approx(0.8125));
    CHECK(back.entries["pixel_interaction"].note == "50 episodes");
    CHECK(!back.entries["box_tracking_error"].available);

    std::string table = r.to_table();
    CHECK(table.find("n/a") != std::string::npos);
    CHECK(table.find("0.8125") != std::string::npos);
    CHECK(table.find("parse failure rate 40%") != std::string::npos);
    // the unavailable row carries no numeric value in json either
    CHECK(js.find("\"box_tracking_error\"") != std::string::npos);
    auto pos = js.find("\"box_tracking_error\"");
    auto seg = js.substr(pos, js.find('}', pos) - pos);
    CHECK(seg.find("value") == std::string::npos);

    CHECK_THROWS_AS((void)metrics::report_from_json("{"), runtime_failure);
}
