#include "duet/dual.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "duet/image.hpp"
#include "duet/kernels.hpp"

namespace duet {

InferenceMode mode_from_string(const std::string& s) {
    std::string u;
    for (char ch : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    if (u == "T2MV") return InferenceMode::T2MV;
    if (u == "TA2V") return InferenceMode::TA2V;
    if (u == "TAM2V") return InferenceMode::TAM2V;
    if (u == "TA2MV") return InferenceMode::TA2MV;
    throw contract_error("unknown inference mode '" + s + "' (expected t2mv, ta2v, tam2v or ta2mv)");
}

std::string mode_to_string(InferenceMode m) {
    switch (m) {
        case InferenceMode::T2MV: return "t2mv";
        case InferenceMode::TA2V: return "ta2v";
        case InferenceMode::TAM2V: return "tam2v";
        case InferenceMode::TA2MV: return "ta2mv";
    }
    return "?";
}

void JointModel::init(const RunConfig& c, uint64_t seed) {
    c.validate();
    cfg = c;
    DUET_CHECK(cfg.resolved_video_layers() == cfg.layers,
               "stream layer counts must match for layer-wise injection");
    Rng rm(seed_for(seed, "init.motion"));
    Rng rv(seed_for(seed, "init.video"));
    ms.init(cfg.motion_width, cfg.motion_heads, cfg.layers, cfg.patch,
            static_cast<int>(motion::vocabulary().size()), rm);
    vs.init(cfg.video_width, cfg.video_heads, cfg.layers, cfg.patch, cfg.audio_dim,
            cfg.motion_width, rv);
}

LatentGrid<float> JointModel::video_latent(const std::vector<float>& px, int frames) const {
    DUET_CHECK(px.size() == static_cast<size_t>(frames) * cfg.video_canvas * cfg.video_canvas * 3,
               "video pixel buffer size mismatch");
    std::vector<float> cent(px.size());
    for (size_t i = 0; i < px.size(); i++) cent[i] = pixel_to_latent(px[i]);
    return patchify(cent.data(), frames, cfg.video_canvas, cfg.video_canvas, cfg.patch);
}

LatentGrid<float> JointModel::motion_latent(const std::vector<float>& px, int frames) const {
    DUET_CHECK(px.size() == static_cast<size_t>(frames) * cfg.motion_canvas * cfg.motion_canvas * 3,
               "motion pixel buffer size mismatch");
    std::vector<float> cent(px.size());
    for (size_t i = 0; i < px.size(); i++) cent[i] = pixel_to_latent(px[i]);
    return patchify(cent.data(), frames, cfg.motion_canvas, cfg.motion_canvas, cfg.patch);
}

LatentGrid<float> JointModel::video_ref_latent(const Image& ref) const {
    DUET_CHECK(ref.h == cfg.video_canvas && ref.w == cfg.video_canvas,
               "reference image must match the video canvas (" +
                   std::to_string(cfg.video_canvas) + "px)");
    return video_latent(image_to_float(ref), 1);
}

LatentGrid<float> JointModel::motion_ref_latent(const Image& ref) const {
    DUET_CHECK(ref.h == cfg.video_canvas && ref.w == cfg.video_canvas,
               "reference image must match the video canvas (" +
                   std::to_string(cfg.video_canvas) + "px)");
    std::vector<float> full = image_to_float(ref);
    if (cfg.motion_canvas == cfg.video_canvas) return motion_latent(full, 1);
    std::vector<float> small(static_cast<size_t>(cfg.motion_canvas) * cfg.motion_canvas * 3);
    kern::resize_bilinear_fwd(1, cfg.video_canvas, cfg.video_canvas, cfg.motion_canvas,
                              cfg.motion_canvas, 3, full.data(), small.data());
    return motion_latent(small, 1);
}

std::vector<Image> JointModel::decode_video(const LatentGrid<float>& z) const {
    std::vector<float> px(static_cast<size_t>(z.frames) * cfg.video_canvas * cfg.video_canvas * 3);
    unpatchify(z, cfg.patch, px.data());
    std::vector<Image> out;
    for (int f = 0; f < z.frames; f++) {
        std::vector<float> one(px.begin() + static_cast<size_t>(f) * cfg.video_canvas *
                                                cfg.video_canvas * 3,
                               px.begin() + static_cast<size_t>(f + 1) * cfg.video_canvas *
                                                cfg.video_canvas * 3);
        for (float& v : one) v = latent_to_pixel(v);
        out.push_back(float_to_image(one.data(), cfg.video_canvas, cfg.video_canvas));
    }
    return out;
}

std::vector<Image> JointModel::decode_motion(const LatentGrid<float>& z) const {
    std::vector<float> px(static_cast<size_t>(z.frames) * cfg.motion_canvas * cfg.motion_canvas *
                          3);
    unpatchify(z, cfg.patch, px.data());
    std::vector<Image> out;
    for (int f = 0; f < z.frames; f++) {
        std::vector<float> one(px.begin() + static_cast<size_t>(f) * cfg.motion_canvas *
                                                cfg.motion_canvas * 3,
                               px.begin() + static_cast<size_t>(f + 1) * cfg.motion_canvas *
                                                cfg.motion_canvas * 3);
        for (float& v : one) v = latent_to_pixel(v);
        out.push_back(float_to_image(one.data(), cfg.motion_canvas, cfg.motion_canvas));
    }
    return out;
}

LatentGrid<float> motion_frames_to_latent(const std::vector<Image>& frames, int patch) {
    DUET_REQUIRE(!frames.empty(), "motion_frames_to_latent: empty frame list");
    int canvas = frames[0].h;
    std::vector<float> px;
    px.reserve(static_cast<size_t>(frames.size()) * canvas * canvas * 3);
    for (const Image& im : frames) {
        DUET_CHECK(im.h == canvas && im.w == canvas, "motion frames must share a square canvas");
        std::vector<float> one = image_to_float(im);
        px.insert(px.end(), one.begin(), one.end());
    }
    for (float& v : px) v = pixel_to_latent(v);
    return patchify(px.data(), static_cast<int>(frames.size()), canvas, canvas, patch);
}

ResidualStack<float> JointModel::encode_driving_motion(const motion::MotionSequence& driving,
                                                       const LatentGrid<float>& motion_ref,
                                                       const motion::TaskConditioning& cond) const {
    std::vector<Image> frames = motion::render_motion(driving.poses, driving.objects, cfg.motion_canvas);
    LatentGrid<float> z = motion_frames_to_latent(frames, cfg.patch);
    MotionStream<float>::Cache mc;
    LatentGrid<float> pred(z.frames, z.gh, z.gw, z.C);
    ResidualStack<float> stack;
    ms.fwd(z, motion_ref, 0.0f, cond, mc, pred, stack);
    stack.step_tag = kDrivingTag;
    return stack;
}

void JointModel::joint_denoise_step(const LatentGrid<float>& z_video,
                                    const LatentGrid<float>& z_motion, float t,
                                    const LatentGrid<float>& video_ref,
                                    const LatentGrid<float>& motion_ref,
                                    const motion::TaskConditioning& cond,
                                    const audio::AudioFeatureSequence* audio_feat,
                                    const FaceMask* mask, uint64_t step_tag,
                                    LatentGrid<float>& v_video, LatentGrid<float>& v_motion) const {
    MotionStream<float>::Cache mc;
    VideoStream<float>::Cache vc;
    ResidualStack<float> stack;
    ms.fwd(z_motion, motion_ref, t, cond, mc, v_motion, stack);
    stack.step_tag = step_tag;
    DUET_REQUIRE(stack.step_tag == step_tag, "residual stack fell out of denoising lockstep");
    vs.fwd(z_video, video_ref, t, audio_feat, mask, &stack, vc, v_video);
}

void JointModel::validate_request(const GenerationRequest& req) const {
    DUET_CHECK(req.ref_image.h == cfg.video_canvas && req.ref_image.w == cfg.video_canvas,
               "--ref image must be " + std::to_string(cfg.video_canvas) + "x" +
                   std::to_string(cfg.video_canvas));
    motion::build_conditioning(req.command, req.task);  // validates text + task
    int lo = std::min(8, cfg.frames);
    DUET_CHECK(req.frames >= lo && req.frames <= 32,
               "--frames out of the supported range [" + std::to_string(lo) + ", 32]");
    DUET_CHECK(req.steps >= 1, "--steps must be >= 1");
    bool need_audio = req.mode != InferenceMode::T2MV;
    if (need_audio)
        DUET_CHECK(req.audio != nullptr,
                   "mode " + mode_to_string(req.mode) + " requires --audio");
    else
        DUET_CHECK(req.audio == nullptr, "mode t2mv does not accept --audio");
    if (req.mode == InferenceMode::TAM2V) {
        DUET_CHECK(req.driving != nullptr, "mode tam2v requires --motion (driving motion)");
        DUET_CHECK(req.driving->length() == req.frames,
                   "--motion length must equal --frames");
    } else {
        DUET_CHECK(req.driving == nullptr,
                   "mode " + mode_to_string(req.mode) + " does not accept --motion");
    }
    if (req.face_mask) {
        DUET_CHECK(req.audio != nullptr, "--face-mask is only meaningful with --audio");
        DUET_CHECK(req.face_mask->frames == req.frames && req.face_mask->gh == video_grid() &&
                       req.face_mask->gw == video_grid(),
                   "--face-mask grid must be [frames, " + std::to_string(video_grid()) + ", " +
                       std::to_string(video_grid()) + "]");
    }
    if (req.audio) {
        DUET_CHECK(req.audio->rate == cfg.audio_rate,
                   "--audio sample rate must be " + std::to_string(cfg.audio_rate));
        DUET_CHECK(req.audio->fps == cfg.fps, "--audio frame rate must be " +
                                                  std::to_string(cfg.fps) + " fps");
    }
}

motion::MotionSequence parse_decoded_motion(const std::vector<Image>& frames,
                                            const std::string& command, const std::string& task,
                                            int fps) {
    motion::MotionSequence seq;
    seq.fps = fps;
    seq.canvas = frames.empty() ? 0 : frames[0].h;
    seq.command = command;
    seq.task = task;
    for (const Image& im : frames) {
        motion::ParsedFrame pf = motion::parse_motion_frame(im);
        motion::PoseFrame pose;
        for (int j = 0; j < motion::kJoints; j++) {
            pose.xy[2 * j] = pf.joint_xy[2 * j];
            pose.xy[2 * j + 1] = pf.joint_xy[2 * j + 1];
            pose.visible[j] = pf.joint_found[j];
        }
        motion::ObjectBoxFrame obf;
        for (const auto& b : pf.boxes) {
            motion::ObjectBox ob;
            ob.id = b.cls;
            ob.cls = motion::palette().class_name.at(static_cast<size_t>(b.cls));
            ob.x_min = b.x_min;
            ob.y_min = b.y_min;
            ob.x_max = b.x_max;
            ob.y_max = b.y_max;
            ob.present = true;
            obf.boxes.push_back(ob);
        }
        seq.poses.push_back(pose);
        seq.objects.push_back(obf);
        seq.rendered.push_back(im);
    }
    return seq;
}

GenerationResult JointModel::generate(const GenerationRequest& req) const {
    validate_request(req);
    motion::TaskConditioning cond = motion::build_conditioning(req.command, req.task);
    LatentGrid<float> vref = video_ref_latent(req.ref_image);
    LatentGrid<float> mref = motion_ref_latent(req.ref_image);
    int F = req.frames;
    int vg = video_grid(), mg = motion_grid();
    int in_ch = 3 * cfg.patch * cfg.patch;

    audio::AudioFeatureSequence feat;
    const audio::AudioFeatureSequence* featp = nullptr;
    if (req.audio) {
        feat = audio::extract_audio_features<float>(*req.audio, F, vs.audio_enc);
        featp = &feat;
    }

    Rng rv(seed_for(req.seed, "noise.video"));
    std::vector<double> zv(static_cast<size_t>(F) * vg * vg * in_ch);
    for (double& x : zv) x = rv.normal();

    GenerationResult out;
    LatentGrid<float> z_video(F, vg, vg, in_ch);
    double dt = 1.0 / req.steps;

    if (req.mode == InferenceMode::TAM2V) {
        // motion is given: encode once on the clean signal, then sample video only
        ResidualStack<float> stack = encode_driving_motion(*req.driving, mref, cond);
        LatentGrid<float> field(F, vg, vg, in_ch);
        for (int k = 0; k < req.steps; k++) {
            float t = static_cast<float>(1.0 - k * dt);
            for (size_t i = 0; i < zv.size(); i++) z_video.data[i] = static_cast<float>(zv[i]);
            VideoStream<float>::Cache vc;
            DUET_REQUIRE(stack.step_tag == kDrivingTag, "driving stack tag was clobbered");
            vs.fwd(z_video, vref, t, featp, req.face_mask, &stack, vc, field);
            for (size_t i = 0; i < zv.size(); i++) zv[i] -= dt * field.data[i];
        }
        for (size_t i = 0; i < zv.size(); i++) z_video.data[i] = static_cast<float>(zv[i]);
        out.video = decode_video(z_video);
        out.motion = *req.driving;
        out.motion_frames = motion::render_motion(req.driving->poses, req.driving->objects, cfg.motion_canvas);
        return out;
    }

    Rng rm(seed_for(req.seed, "noise.motion"));
    std::vector<double> zm(static_cast<size_t>(F) * mg * mg * in_ch);
    for (double& x : zm) x = rm.normal();
    LatentGrid<float> z_motion(F, mg, mg, in_ch);
    LatentGrid<float> fv(F, vg, vg, in_ch), fm(F, mg, mg, in_ch);
    for (int k = 0; k < req.steps; k++) {
        float t = static_cast<float>(1.0 - k * dt);
        for (size_t i = 0; i < zv.size(); i++) z_video.data[i] = static_cast<float>(zv[i]);
        for (size_t i = 0; i < zm.size(); i++) z_motion.data[i] = static_cast<float>(zm[i]);
        joint_denoise_step(z_video, z_motion, t, vref, mref, cond, featp, req.face_mask,
                           static_cast<uint64_t>(k + 1), fv, fm);
        for (size_t i = 0; i < zv.size(); i++) zv[i] -= dt * fv.data[i];
        for (size_t i = 0; i < zm.size(); i++) zm[i] -= dt * fm.data[i];
    }
    for (size_t i = 0; i < zv.size(); i++) z_video.data[i] = static_cast<float>(zv[i]);
    for (size_t i = 0; i < zm.size(); i++) z_motion.data[i] = static_cast<float>(zm[i]);
    out.video = decode_video(z_video);
    out.motion_frames = decode_motion(z_motion);
    out.motion = parse_decoded_motion(out.motion_frames, req.command, req.task, cfg.fps);
    out.motion_auxiliary = (req.mode == InferenceMode::TA2V);
    return out;
}

void JointModel::visit(const ParamVisitor<float>& fn) {
    ms.visit("motion", fn);
    vs.visit("video", fn);
}

void JointModel::export_params(std::map<std::string, std::vector<float>>& out) {
    out.clear();
    visit([&](const std::string& name, std::vector<float>& w, std::vector<float>&) {
        DUET_REQUIRE(!out.count(name), "duplicate parameter name " + name);
        out[name] = w;
    });
}

void JointModel::import_params(const std::map<std::string, std::vector<float>>& in) {
    size_t used = 0;
    visit([&](const std::string& name, std::vector<float>& w, std::vector<float>&) {
        auto it = in.find(name);
        DUET_REQUIRE(it != in.end(), "checkpoint is missing parameter " + name);
        DUET_REQUIRE(it->second.size() == w.size(),
                     "checkpoint parameter " + name + " has wrong size");
        w = it->second;
        used++;
    });
    DUET_REQUIRE(used == in.size(), "checkpoint has extra parameters not present in the model");
    sync();
}

void JointModel::sync() {
    ms.sync();
    vs.sync();
}

}  // namespace duet
