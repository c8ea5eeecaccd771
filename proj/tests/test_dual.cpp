#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "duet/checkpoint.hpp"
#include "duet/dual.hpp"
#include "duet/image.hpp"

using namespace duet;

namespace {

RunConfig tiny_cfg() {
    RunConfig c;
    c.layers = 2;
    c.motion_width = 32;
    c.motion_heads = 2;
    c.video_width = 32;
    c.video_heads = 2;
    c.patch = 8;
    c.motion_canvas = 32;
    c.video_canvas = 32;
    c.audio_dim = 8;
    c.frames = 4;
    c.sample_steps = 3;
    return c;
}

Image random_ref(int canvas, uint64_t seed) {
    Rng rng(seed);
    Image im(canvas, canvas);
    for (auto& v : im.px) v = static_cast<uint8_t>(rng.uniform_int(0, 255));
    return im;
}

// fresh models predict the exact zero field (zero-init output heads); nudge
// every parameter so generation actually transforms the state
void perturb(JointModel& m, float scale, uint64_t seed) {
    m.visit([&](const std::string& name, std::vector<float>& w, std::vector<float>&) {
        Rng rng(seed_for(seed, name));
        for (float& x : w) x += scale * static_cast<float>(rng.uniform(-1.0, 1.0));
    });
    m.sync();
}

motion::MotionSequence scripted_wave(int frames, int canvas) {
    motion::MotionSequence seq;
    seq.fps = 8;
    seq.canvas = canvas;
    seq.command = "wave";
    seq.task = "ACTION";
    for (int f = 0; f < frames; f++) {
        motion::PoseFrame p;
        float xs[motion::kJoints] = {0.50f, 0.50f, 0.40f, 0.60f, 0.34f, 0.66f, 0.30f,
                                     0.70f, 0.50f, 0.44f, 0.56f, 0.44f, 0.56f};
        float ys[motion::kJoints] = {0.18f, 0.28f, 0.30f, 0.30f, 0.42f, 0.42f, 0.54f,
                                     0.54f, 0.55f, 0.70f, 0.70f, 0.88f, 0.88f};
        for (int j = 0; j < motion::kJoints; j++) {
            p.xy[2 * j] = xs[j];
            p.xy[2 * j + 1] = ys[j] - (j == motion::J_RWRI ? 0.02f * f : 0.0f);
            p.visible[j] = true;
        }
        seq.poses.push_back(p);
        seq.objects.push_back({});
    }
    return seq;
}

audio::AudioTrack tone_track(int frames, int rate, int fps) {
    audio::AudioTrack t;
    t.rate = rate;
    t.fps = fps;
    int n = frames * rate / fps;
    t.samples.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; i++)
        t.samples[static_cast<size_t>(i)] =
            0.3f * std::sin(2.0f * 3.14159265f * 440.0f * i / rate);
    return t;
}

}  // namespace

TEST_CASE("inference mode names round trip") {
    for (auto m : {InferenceMode::T2MV, InferenceMode::TA2V, InferenceMode::TAM2V,
                   InferenceMode::TA2MV})
        CHECK(mode_from_string(mode_to_string(m)) == m);
    CHECK(mode_from_string("T2MV") == InferenceMode::T2MV);
    CHECK_THROWS_AS((void)mode_from_string("t2v"), contract_error);
}

TEST_CASE("joint model rejects mismatched stream depths at construction") {
    RunConfig c = tiny_cfg();
    c.video_layers = 3;  // motion has 2
    JointModel m;
    CHECK_THROWS_AS(m.init(c, 1), contract_error);
    c.video_layers = -1;
    m.init(c, 1);  // resolves to the shared count
    CHECK(m.vs.layers == m.ms.layers);
}

TEST_CASE("latent encode/decode round trips pixels exactly") {
    JointModel m;
    m.init(tiny_cfg(), 5);
    Image ref = random_ref(32, 99);
    LatentGrid<float> z = m.video_ref_latent(ref);
    CHECK(z.frames == 1);
    CHECK(z.gh == 4);
    CHECK(z.gw == 4);
    CHECK(z.C == 192);
    std::vector<Image> back = m.decode_video(z);
    REQUIRE(back.size() == 1);
    CHECK(back[0] == ref);
}

TEST_CASE("request validation enforces per-mode conditions") {
    JointModel m;
    m.init(tiny_cfg(), 5);
    audio::AudioTrack snd = tone_track(4, 16000, 8);
    motion::MotionSequence drv = scripted_wave(4, 256);

    GenerationRequest req;
    req.ref_image = random_ref(32, 1);
    req.command = "wave";
    req.task = "ACTION";
    req.frames = 4;
    req.steps = 2;

    SUBCASE("t2mv rejects audio") {
        req.mode = InferenceMode::T2MV;
        req.audio = &snd;
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
    }
    SUBCASE("ta2v requires audio") {
        req.mode = InferenceMode::TA2V;
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
    }
    SUBCASE("tam2v requires driving motion") {
        req.mode = InferenceMode::TAM2V;
        req.audio = &snd;
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
    }
    SUBCASE("tam2v driving length must match frames") {
        req.mode = InferenceMode::TAM2V;
        req.audio = &snd;
        motion::MotionSequence shrt = scripted_wave(3, 256);
        req.driving = &shrt;
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
    }
    SUBCASE("co-generation modes reject driving motion") {
        req.mode = InferenceMode::TA2MV;
        req.audio = &snd;
        req.driving = &drv;
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
    }
    SUBCASE("face mask needs audio") {
        req.mode = InferenceMode::T2MV;
        FaceMask fm(4, 4, 4, 0.5f);
        req.face_mask = &fm;
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
    }
    SUBCASE("wrong reference size") {
        req.mode = InferenceMode::T2MV;
        req.ref_image = random_ref(64, 1);
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
    }
    SUBCASE("frames out of range") {
        req.mode = InferenceMode::T2MV;
        req.frames = 40;
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
        req.frames = 2;
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
    }
    SUBCASE("unknown word in command") {
        req.command = "wave warmly";
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
    }
    SUBCASE("audio rate mismatch") {
        req.mode = InferenceMode::TA2V;
        audio::AudioTrack bad = tone_track(4, 8000, 8);
        req.audio = &bad;
        CHECK_THROWS_AS(m.validate_request(req), contract_error);
    }
    SUBCASE("valid requests pass") {
        req.mode = InferenceMode::T2MV;
        m.validate_request(req);
        req.mode = InferenceMode::TAM2V;
        req.audio = &snd;
        req.driving = &drv;
        m.validate_request(req);
    }
}

TEST_CASE("generation is deterministic under a fixed seed") {
    JointModel m;
    m.init(tiny_cfg(), 5);
    perturb(m, 0.02f, 77);

    GenerationRequest req;
    req.ref_image = random_ref(32, 2);
    req.command = "nod";
    req.task = "ACTION";
    req.frames = 4;
    req.steps = 3;
    req.seed = 31;
    req.mode = InferenceMode::T2MV;

    GenerationResult a = m.generate(req);
    GenerationResult b = m.generate(req);
    REQUIRE(a.video.size() == 4);
    REQUIRE(a.motion_frames.size() == 4);
    for (int f = 0; f < 4; f++) {
        CHECK(a.video[static_cast<size_t>(f)] == b.video[static_cast<size_t>(f)]);
        CHECK(a.motion_frames[static_cast<size_t>(f)] == b.motion_frames[static_cast<size_t>(f)]);
    }
    CHECK(!a.motion_auxiliary);
    CHECK(a.motion.length() == 4);

    req.seed = 32;
    GenerationResult c = m.generate(req);
    CHECK(a.video[0] != c.video[0]);
}

TEST_CASE("ta2v marks motion auxiliary and uses the audio") {
    JointModel m;
    m.init(tiny_cfg(), 6);
    perturb(m, 0.02f, 78);

    audio::AudioTrack snd = tone_track(4, 16000, 8);
    GenerationRequest req;
    req.ref_image = random_ref(32, 3);
    req.command = "clap";
    req.task = "ACTION";
    req.frames = 4;
    req.steps = 2;
    req.seed = 9;
    req.mode = InferenceMode::TA2V;
    req.audio = &snd;
    FaceMask fm(4, 4, 4, 1.0f);
    req.face_mask = &fm;

    GenerationResult a = m.generate(req);
    CHECK(a.motion_auxiliary);

    audio::AudioTrack louder = snd;
    for (float& s : louder.samples) s *= 3.0f;
    req.audio = &louder;
    GenerationResult b = m.generate(req);
    CHECK(a.video[0] != b.video[0]);  // audio reaches the video stream
}

TEST_CASE("driving-motion encoding and tam2v regeneration are bitwise stable") {
    JointModel m;
    m.init(tiny_cfg(), 7);
    perturb(m, 0.02f, 79);

    motion::MotionSequence drv = scripted_wave(4, 256);
    motion::TaskConditioning cond = motion::build_conditioning(drv.command, drv.task);
    Image ref = random_ref(32, 4);
    LatentGrid<float> mref = m.motion_ref_latent(ref);

    ResidualStack<float> s1 = m.encode_driving_motion(drv, mref, cond);
    ResidualStack<float> s2 = m.encode_driving_motion(drv, mref, cond);
    CHECK(s1.step_tag == kDrivingTag);
    REQUIRE(s1.delta.size() == s2.delta.size());
    for (size_t l = 0; l < s1.delta.size(); l++) {
        REQUIRE(s1.delta[l].size() == s2.delta[l].size());
        CHECK(std::memcmp(s1.delta[l].data(), s2.delta[l].data(),
                          s1.delta[l].size() * sizeof(float)) == 0);
    }

    audio::AudioTrack snd = tone_track(4, 16000, 8);
    GenerationRequest req;
    req.ref_image = ref;
    req.command = "wave";
    req.task = "ACTION";
    req.frames = 4;
    req.steps = 3;
    req.seed = 21;
    req.mode = InferenceMode::TAM2V;
    req.audio = &snd;
    req.driving = &drv;

    GenerationResult a = m.generate(req);
    GenerationResult b = m.generate(req);
    for (int f = 0; f < 4; f++)
        CHECK(a.video[static_cast<size_t>(f)] == b.video[static_cast<size_t>(f)]);
    // driving motion is passed through unchanged
    CHECK(a.motion.length() == 4);
    CHECK(a.motion.command == "wave");
    CHECK(a.motion_frames.size() == 4);

    // the driving signal actually steers the video
    motion::MotionSequence drv2 = scripted_wave(4, 256);
    for (auto& p : drv2.poses)
        for (int j = 0; j < motion::kJoints; j++) p.xy[2 * j] = 1.0f - p.xy[2 * j];
    req.driving = &drv2;
    GenerationResult c = m.generate(req);
    CHECK(a.video[0] != c.video[0]);
}

TEST_CASE("checkpoint save/load restores a model bitwise") {
    JointModel m;
    m.init(tiny_cfg(), 11);
    perturb(m, 0.05f, 80);

    Checkpoint ck;
    ck.config = m.cfg;
    ck.stage = "joint";
    ck.step = 300;
    m.export_params(ck.params);
    CHECK(ck.params.size() > 20);
    std::string path = (std::filesystem::temp_directory_path() / "duet_model_rt.ckpt").string();
    save_checkpoint(path, ck);

    Checkpoint lk = load_checkpoint(path);
    JointModel m2;
    m2.init(lk.config, 999);  // different init seed; weights overwritten below
    m2.import_params(lk.params);

    GenerationRequest req;
    req.ref_image = random_ref(32, 8);
    req.command = "bow";
    req.task = "ACTION";
    req.frames = 4;
    req.steps = 2;
    req.seed = 5;
    req.mode = InferenceMode::T2MV;
    GenerationResult a = m.generate(req);
    GenerationResult b = m2.generate(req);
    for (int f = 0; f < 4; f++)
        CHECK(a.video[static_cast<size_t>(f)] == b.video[static_cast<size_t>(f)]);

    // import rejects missing/extra/mis-sized parameters
    auto missing = ck.params;
    missing.erase(missing.begin());
    CHECK_THROWS_AS(m2.import_params(missing), runtime_failure);
    auto extra = ck.params;
    extra["bogus.w"] = {1.0f};
    CHECK_THROWS_AS(m2.import_params(extra), runtime_failure);
    auto wrong = ck.params;
    wrong.begin()->second.push_back(0.0f);
    CHECK_THROWS_AS(m2.import_params(wrong), runtime_failure);
}
