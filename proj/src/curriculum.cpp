#include "duet/curriculum.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <tuple>

#include "duet/image.hpp"
#include "duet/kernels.hpp"

namespace duet::train {

using nlohmann::json;

const char* stage_tag(Stage s) {
    switch (s) {
        case Stage::PIM_PRETRAIN: return "pim";
        case Stage::AIM_AUDIO_PRETRAIN: return "audio";
        case Stage::JOINT_FINETUNE: return "joint";
    }
    return "?";
}

Stage stage_from_tag(const std::string& tag) {
    if (tag == "pim") return Stage::PIM_PRETRAIN;
    if (tag == "audio") return Stage::AIM_AUDIO_PRETRAIN;
    if (tag == "joint") return Stage::JOINT_FINETUNE;
    throw contract_error("unknown stage tag '" + tag + "' (expected pim, audio or joint)");
}

const char* pim_mode_name(PimMode m) {
    switch (m) {
        case PimMode::CONTINUATION: return "continuation";
        case PimMode::PERCEPTION_GEN: return "perception_gen";
        case PimMode::DETECTION: return "detection";
    }
    return "?";
}

const char* recipe_name(RecipeKind k) {
    switch (k) {
        case RecipeKind::AUDIO_COND: return "audio_cond";
        case RecipeKind::MOTION_DRIVEN: return "motion_driven";
        case RecipeKind::JOINT_GEN: return "joint_gen";
        case RecipeKind::PURE_I2V: return "pure_i2v";
    }
    return "?";
}

// recipe weights in enum order {AUDIO_COND, MOTION_DRIVEN, JOINT_GEN, PURE_I2V}
static std::vector<double> recipe_weights(Stage stage, const RunConfig& cfg) {
    std::vector<double> w(4, 0.0);
    if (stage == Stage::AIM_AUDIO_PRETRAIN) {
        w[0] = 1.0 - cfg.audio_stage_i2v;
        w[3] = cfg.audio_stage_i2v;
    } else {
        double rest = cfg.joint_audio + cfg.joint_driven + cfg.joint_gen;
        DUET_CHECK(rest > 0, "joint mix weights sum to zero");
        double keep = 1.0 - cfg.i2v_weight;
        w[0] = keep * cfg.joint_audio / rest;
        w[1] = keep * cfg.joint_driven / rest;
        w[2] = keep * cfg.joint_gen / rest;
        w[3] = cfg.i2v_weight;
    }
    return w;
}

std::vector<StagePlan> plan_stages(const RunConfig& cfg, std::string* warning) {
    cfg.validate();
    std::vector<StagePlan> all(3);
    all[0].stage = Stage::PIM_PRETRAIN;
    all[0].steps = cfg.stage1_steps;
    all[0].lr = cfg.stage1_lr;
    double pt = cfg.pim_cont + cfg.pim_perc + cfg.pim_det;
    all[0].mix = {{"continuation", cfg.pim_cont / pt},
                  {"perception_gen", cfg.pim_perc / pt},
                  {"detection", cfg.pim_det / pt}};
    all[1].stage = Stage::AIM_AUDIO_PRETRAIN;
    all[1].steps = cfg.stage2_steps;
    all[1].lr = cfg.stage2_lr;
    all[2].stage = Stage::JOINT_FINETUNE;
    all[2].steps = cfg.stage3_steps;
    all[2].lr = cfg.stage3_lr;
    {
        std::vector<double> w2 = recipe_weights(Stage::AIM_AUDIO_PRETRAIN, cfg);
        all[1].mix = {{"audio_cond", w2[0]}, {"pure_i2v", w2[3]}};
        std::vector<double> w3 = recipe_weights(Stage::JOINT_FINETUNE, cfg);
        for (int k = 0; k < 4; k++)
            all[2].mix.push_back({recipe_name(static_cast<RecipeKind>(k)), w3[k]});
    }

    int last = -1;
    for (int i = 0; i < 3; i++)
        if (all[i].steps > 0) last = i;
    DUET_CHECK(last >= 0, "every stage budget is zero; nothing to train");
    for (int i = 0; i < last; i++)
        DUET_CHECK(all[i].steps > 0, "zero-budget stage '" + std::string(stage_tag(all[i].stage)) +
                                         "' cannot precede a budgeted one; later stages start "
                                         "from the earlier checkpoints");
    std::vector<StagePlan> plans(all.begin(), all.begin() + last + 1);
    if (warning) {
        warning->clear();
        for (int i = last + 1; i < 3; i++) {
            if (!warning->empty()) *warning += "; ";
            *warning += std::string("stage '") + stage_tag(all[i].stage) +
                        "' skipped (zero step budget)";
        }
    }
    return plans;
}

CurriculumMode sample_curriculum(Rng& rng, const RunConfig& cfg, int clip_frames) {
    DUET_CHECK(clip_frames >= 1, "clip length must be positive");
    int k = rng.categorical({cfg.pim_cont, cfg.pim_perc, cfg.pim_det});
    CurriculumMode m;
    m.mode = k == 0   ? PimMode::CONTINUATION
             : k == 1 ? PimMode::PERCEPTION_GEN
                      : PimMode::DETECTION;
    m.target_length = m.mode == PimMode::DETECTION ? 1 : clip_frames;
    return m;
}

LossMask pim_loss_mask(PimMode m, int frames, int gh, int gw) {
    switch (m) {
        case PimMode::CONTINUATION: return LossMask::all_but_first(frames, gh, gw);
        case PimMode::PERCEPTION_GEN: return LossMask::full(frames, gh, gw);
        case PimMode::DETECTION: return LossMask::first_frame(frames, gh, gw);
    }
    throw contract_error("unknown curriculum mode");
}

BatchRecipe sample_batch_recipe(Rng& rng, Stage stage, const RunConfig& cfg) {
    DUET_CHECK(stage != Stage::PIM_PRETRAIN,
               "mixed batch recipes only exist in the audio and joint stages");
    int k = rng.categorical(recipe_weights(stage, cfg));
    BatchRecipe r;
    r.kind = static_cast<RecipeKind>(k);
    switch (r.kind) {
        case RecipeKind::AUDIO_COND:
            r.audio = true;
            r.joint = stage == Stage::JOINT_FINETUNE;
            break;
        case RecipeKind::MOTION_DRIVEN: r.driving = true; break;
        case RecipeKind::JOINT_GEN: r.joint = true; break;
        case RecipeKind::PURE_I2V: break;
    }
    return r;
}

// ---------------------------------------------------------------------------

PreparedSet PreparedSet::build(const JointModel& model, const std::string& dataset_dir,
                               const std::string& split, Stage stage, int limit) {
    const RunConfig& cfg = model.cfg;
    PreparedSet set;
    {
        std::ifstream f(dataset_dir + "/manifest.json");
        DUET_REQUIRE(f.good(), "dataset manifest not found under " + dataset_dir +
                                   " (build the dataset first)");
        json j = json::parse(f, nullptr, false);
        DUET_REQUIRE(!j.is_discarded() && j.contains("content_hash"),
                     "dataset manifest under " + dataset_dir + " is unreadable");
        set.dataset_hash = j["content_hash"].get<std::string>();
    }
    std::vector<std::string> paths = world::list_split(dataset_dir, split);
    DUET_REQUIRE(!paths.empty(), "dataset split '" + split + "' is empty");
    if (limit > 0 && static_cast<int>(paths.size()) > limit) paths.resize(limit);

    bool need_video = stage != Stage::PIM_PRETRAIN;
    for (const std::string& path : paths) {
        world::Episode ep = world::load_episode(path);
        std::string name = std::filesystem::path(path).filename().string();
        DUET_CHECK(ep.spec.frames == cfg.frames,
                   "dataset clip length " + std::to_string(ep.spec.frames) +
                       " does not match config frames " + std::to_string(cfg.frames));
        PreparedEpisode p;
        p.name = name;
        p.cond = motion::build_conditioning(ep.spec.command, ep.spec.task);
        std::vector<Image> mot =
            motion::render_motion(ep.motion.poses, ep.motion.objects, cfg.motion_canvas);
        p.z0_motion = motion_frames_to_latent(mot, cfg.patch);
        const Image& ref = ep.video.at(0);
        DUET_CHECK(ref.h == cfg.video_canvas && ref.w == cfg.video_canvas,
                   "dataset canvas " + std::to_string(ref.h) +
                       " does not match config video canvas " + std::to_string(cfg.video_canvas));
        p.vref = model.video_ref_latent(ref);
        p.mref = model.motion_ref_latent(ref);
        p.driving = ep.motion;
        if (need_video) {
            DUET_CHECK(static_cast<int>(ep.video.size()) == cfg.frames,
                       "episode " + name + " has the wrong frame count");
            std::vector<float> px;
            px.reserve(static_cast<size_t>(cfg.frames) * cfg.video_canvas * cfg.video_canvas * 3);
            for (const Image& im : ep.video) {
                std::vector<float> one = image_to_float(im);
                px.insert(px.end(), one.begin(), one.end());
            }
            p.z0_video = model.video_latent(px, cfg.frames);
            DUET_CHECK(ep.audio.rate == cfg.audio_rate && ep.audio.fps == cfg.fps,
                       "dataset audio rate/fps does not match the config");
            p.audio = ep.audio;
            p.fmask = world::face_mask_from_motion(ep.motion, cfg.video_canvas, cfg.patch);
        }
        set.eps.push_back(std::move(p));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Optimizer bookkeeping. Parameters with identically zero gradients (the
// stream a stage does not train) stay bitwise unchanged under the update.

namespace {

struct AdamState {
    long long step = 0;  // completed optimizer steps within the stage
    std::map<std::string, std::vector<float>> m, v;
};

void zero_grads(JointModel& model) {
    model.visit([](const std::string&, std::vector<float>&, std::vector<float>& g) {
        std::fill(g.begin(), g.end(), 0.0f);
    });
}

void adam_apply(JointModel& model, AdamState& opt, double lr, const RunConfig& cfg) {
    opt.step++;
    model.visit([&](const std::string& name, std::vector<float>& w, std::vector<float>& g) {
        std::vector<float>& m = opt.m[name];
        std::vector<float>& v = opt.v[name];
        if (m.size() != w.size()) m.assign(w.size(), 0.0f);
        if (v.size() != w.size()) v.assign(w.size(), 0.0f);
        kern::adam_step(w.data(), g.data(), m.data(), v.data(), w.size(), static_cast<float>(lr),
                        static_cast<float>(cfg.adam_b1), static_cast<float>(cfg.adam_b2),
                        static_cast<float>(cfg.adam_eps), opt.step);
    });
    model.sync();
}

Checkpoint make_checkpoint(JointModel& model, const RunConfig& cfg, Stage st, uint64_t step,
                           const AdamState& opt) {
    Checkpoint ck;
    ck.config = cfg;
    ck.stage = stage_tag(st);
    ck.step = step;
    model.export_params(ck.params);
    for (const auto& [k, v] : opt.m) ck.params["opt.m." + k] = v;
    for (const auto& [k, v] : opt.v) ck.params["opt.v." + k] = v;
    return ck;
}

void split_checkpoint(const Checkpoint& ck, std::map<std::string, std::vector<float>>& params,
                      AdamState& opt) {
    params.clear();
    opt = AdamState{};
    for (const auto& [k, v] : ck.params) {
        if (k.rfind("opt.m.", 0) == 0)
            opt.m[k.substr(6)] = v;
        else if (k.rfind("opt.v.", 0) == 0)
            opt.v[k.substr(6)] = v;
        else
            params[k] = v;
    }
    opt.step = static_cast<long long>(ck.step);
}

void check_architecture(const RunConfig& a, const RunConfig& b) {
    bool ok = a.layers == b.layers && a.resolved_video_layers() == b.resolved_video_layers() &&
              a.motion_width == b.motion_width && a.motion_heads == b.motion_heads &&
              a.video_width == b.video_width && a.video_heads == b.video_heads &&
              a.patch == b.patch && a.motion_canvas == b.motion_canvas &&
              a.video_canvas == b.video_canvas && a.audio_dim == b.audio_dim;
    DUET_CHECK(ok, "checkpoint model architecture does not match the run config");
}

// ---------------------------------------------------------------------------
// Per-sample losses. Draw order per sample is fixed: episode index, then the
// recipe/mode, then t, then motion noise (when the motion latent is noised),
// then video noise. Gradients accumulate into the parameter arrays.

double pim_sample(JointModel& model, const PreparedEpisode& ep, Rng& rng, const RunConfig& cfg,
                  float gscale, std::string& mode_out) {
    CurriculumMode cm = sample_curriculum(rng, cfg, cfg.frames);
    mode_out = pim_mode_name(cm.mode);
    float t = static_cast<float>(rng.uniform());
    FlowSample<float> fs = make_flow_sample(ep.z0_motion, t, rng);
    if (cm.mode == PimMode::CONTINUATION) {
        // the clean first frame is given; the model continues from it
        size_t fr = static_cast<size_t>(fs.z0.gh) * fs.z0.gw * fs.z0.C;
        std::memcpy(fs.zt.ptr(), fs.z0.ptr(), sizeof(float) * fr);
    }
    LossMask mask = pim_loss_mask(cm.mode, fs.z0.frames, fs.z0.gh, fs.z0.gw);
    MotionStream<float>::Cache mc;
    LatentGrid<float> pred;
    ResidualStack<float> stack;
    model.ms.fwd(fs.zt, ep.mref, t, ep.cond, mc, pred, stack);
    double loss = fm_loss(pred, fs.target, mask);
    LatentGrid<float> dpred(pred.frames, pred.gh, pred.gw, pred.C);
    fm_loss_backward(pred, fs.target, mask, gscale, dpred);
    model.ms.bwd(mc, dpred, nullptr, nullptr);
    return loss;
}

double recipe_sample(JointModel& model, const PreparedEpisode& ep, const BatchRecipe& r, Rng& rng,
                     const RunConfig& cfg, uint64_t step_tag, float gscale) {
    float t = static_cast<float>(rng.uniform());

    audio::AudioEncoder<float>::Cache acache;
    audio::AudioFeatureSequence feat;
    const audio::AudioFeatureSequence* featp = nullptr;
    const FaceMask* fmp = nullptr;
    audio::FrameWindows win;
    if (r.audio) {
        win = audio::make_windows(ep.audio, cfg.frames);
        model.vs.audio_enc.fwd(win, acache, feat);
        featp = &feat;
        fmp = &ep.fmask;
    }

    ResidualStack<float> stack;
    const ResidualStack<float>* stackp = nullptr;
    MotionStream<float>::Cache mcache;
    LatentGrid<float> mpred;
    FlowSample<float> mfs;
    if (r.joint) {
        mfs = make_flow_sample(ep.z0_motion, t, rng);  // shared t across streams
        model.ms.fwd(mfs.zt, ep.mref, t, ep.cond, mcache, mpred, stack);
        stack.step_tag = step_tag;
        stackp = &stack;
    } else if (r.driving) {
        stack = model.encode_driving_motion(ep.driving, ep.mref, ep.cond);
        DUET_CHECK(stack.step_tag == kDrivingTag, "driving stack must be encoded at t = 0");
        stackp = &stack;
    }

    FlowSample<float> vfs = make_flow_sample(ep.z0_video, t, rng);
    VideoStream<float>::Cache vcache;
    LatentGrid<float> vpred;
    model.vs.fwd(vfs.zt, ep.vref, t, featp, fmp, stackp, vcache, vpred);
    LossMask vmask = LossMask::full(vfs.z0.frames, vfs.z0.gh, vfs.z0.gw);
    double lv = fm_loss(vpred, vfs.target, vmask);

    double sample_loss = lv;
    float vscale = gscale, mscale = gscale;
    LossMask mmask;
    double lm = 0.0;
    if (r.joint) {
        mmask = LossMask::full(mfs.z0.frames, mfs.z0.gh, mfs.z0.gw);
        lm = fm_loss(mpred, mfs.target, mmask);
        sample_loss = 0.5 * (lv + lm);
        vscale = mscale = 0.5f * gscale;
    }

    // video backward first: it supplies the stack gradients the motion
    // backward consumes; driving stacks are conditioning only (no dstack)
    LatentGrid<float> dv(vpred.frames, vpred.gh, vpred.gw, vpred.C);
    fm_loss_backward(vpred, vfs.target, vmask, vscale, dv);
    ResidualStack<float> dstack;
    ResidualStack<float>* dstackp = nullptr;
    if (r.joint) {
        dstack.reset(stack.layers, stack.frames, stack.gh, stack.gw, stack.C);
        dstackp = &dstack;
    }
    std::vector<float> dfeat;
    float* dfeatp = nullptr;
    if (r.audio) {
        dfeat.assign(feat.f.size(), 0.0f);
        dfeatp = dfeat.data();
    }
    model.vs.bwd(vcache, dv, featp ? feat.f.data() : nullptr, dstackp, dfeatp);
    if (r.audio) model.vs.audio_enc.bwd(acache, dfeat.data());
    if (r.joint) {
        LatentGrid<float> dm(mpred.frames, mpred.gh, mpred.gw, mpred.C);
        fm_loss_backward(mpred, mfs.target, mmask, mscale, dm);
        model.ms.bwd(mcache, dm, dstackp, nullptr);
    }
    return sample_loss;
}

std::string write_diagnostic(const std::string& out_dir, const std::string& tag, uint64_t step,
                             double batch_loss, double lr,
                             const std::vector<std::pair<std::string, double>>& detail,
                             JointModel& model) {
    auto num = [](double x) { return std::isfinite(x) ? json(x) : json(std::to_string(x)); };
    json j;
    j["stage"] = tag;
    j["step"] = step;
    j["learning_rate"] = lr;
    j["batch_loss"] = num(batch_loss);
    json samples = json::array();
    for (const auto& [mode, loss] : detail) samples.push_back({{"recipe", mode}, {"loss", num(loss)}});
    j["batch_samples"] = samples;
    std::vector<std::tuple<size_t, double, std::string>> stats;  // nonfinite, max_abs, name
    model.visit([&](const std::string& name, std::vector<float>& w, std::vector<float>&) {
        size_t bad = 0;
        double mx = 0.0;
        for (float x : w) {
            if (!std::isfinite(x))
                bad++;
            else
                mx = std::max(mx, std::fabs(static_cast<double>(x)));
        }
        stats.emplace_back(bad, mx, name);
    });
    std::sort(stats.begin(), stats.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
        return std::get<1>(a) > std::get<1>(b);
    });
    json params = json::array();
    for (size_t i = 0; i < stats.size() && i < 8; i++)
        params.push_back({{"name", std::get<2>(stats[i])},
                          {"nonfinite", std::get<0>(stats[i])},
                          {"max_abs_finite", std::get<1>(stats[i])}});
    j["parameters_worst"] = params;
    std::string path = out_dir + "/diagnostic_" + tag + "_step" + std::to_string(step) + ".json";
    std::ofstream f(path);
    f << j.dump(2) << "\n";
    return path;
}

}  // namespace

// ---------------------------------------------------------------------------

double probe_loss(const JointModel& model, Stage stage, const PreparedSet& set,
                  const RunConfig& cfg) {
    DUET_REQUIRE(!set.eps.empty(), "probe needs a non-empty training set");
    Rng rng(seed_for(cfg.seed, std::string("probe/") + stage_tag(stage)));
    int n = std::min(cfg.batch, 4);
    double acc = 0.0;
    for (int i = 0; i < n; i++) {
        const PreparedEpisode& ep = set.eps[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(set.eps.size()) - 1))];
        float t = static_cast<float>(rng.uniform());
        if (stage == Stage::PIM_PRETRAIN) {
            FlowSample<float> fs = make_flow_sample(ep.z0_motion, t, rng);
            MotionStream<float>::Cache mc;
            LatentGrid<float> pred;
            ResidualStack<float> stack;
            model.ms.fwd(fs.zt, ep.mref, t, ep.cond, mc, pred, stack);
            acc += fm_loss(pred, fs.target, LossMask::full(fs.z0.frames, fs.z0.gh, fs.z0.gw));
        } else if (stage == Stage::AIM_AUDIO_PRETRAIN) {
            audio::FrameWindows win = audio::make_windows(ep.audio, cfg.frames);
            audio::AudioEncoder<float>::Cache ac;
            audio::AudioFeatureSequence feat;
            model.vs.audio_enc.fwd(win, ac, feat);
            FlowSample<float> fs = make_flow_sample(ep.z0_video, t, rng);
            VideoStream<float>::Cache vc;
            LatentGrid<float> pred;
            model.vs.fwd(fs.zt, ep.vref, t, &feat, &ep.fmask, nullptr, vc, pred);
            acc += fm_loss(pred, fs.target, LossMask::full(fs.z0.frames, fs.z0.gh, fs.z0.gw));
        } else {
            FlowSample<float> mfs = make_flow_sample(ep.z0_motion, t, rng);
            FlowSample<float> vfs = make_flow_sample(ep.z0_video, t, rng);
            MotionStream<float>::Cache mc;
            VideoStream<float>::Cache vc;
            LatentGrid<float> mpred, vpred;
            ResidualStack<float> stack;
            model.ms.fwd(mfs.zt, ep.mref, t, ep.cond, mc, mpred, stack);
            model.vs.fwd(vfs.zt, ep.vref, t, nullptr, nullptr, &stack, vc, vpred);
            double lm = fm_loss(mpred, mfs.target, LossMask::full(mfs.z0.frames, mfs.z0.gh, mfs.z0.gw));
            double lv = fm_loss(vpred, vfs.target, LossMask::full(vfs.z0.frames, vfs.z0.gh, vfs.z0.gw));
            acc += 0.5 * (lm + lv);
        }
    }
    return acc / n;
}

void load_model(JointModel& model, const Checkpoint& ck) {
    check_architecture(ck.config, model.cfg);
    std::map<std::string, std::vector<float>> params;
    AdamState dropped;
    split_checkpoint(ck, params, dropped);
    model.import_params(params);
}

StageReport run_stage(JointModel& model, const StagePlan& plan, const RunConfig& cfg,
                      const StageRunArgs& args) {
    cfg.validate();
    DUET_CHECK(model.cfg == cfg, "model was initialized with a different config");
    DUET_CHECK(cfg.frames >= 2, "training clips need at least 2 frames");
    DUET_CHECK(!args.dataset_dir.empty() && !args.out_dir.empty(),
               "dataset and output directories are required");
    DUET_CHECK(plan.steps >= 1, "stage budget must be positive");
    const std::string tag = stage_tag(plan.stage);

    uint64_t start_step = 0;
    AdamState opt;
    if (!args.start) {
        DUET_CHECK(plan.stage == Stage::PIM_PRETRAIN,
                   std::string("stage '") + tag +
                       "' requires the previous stage's checkpoint; stages run pim -> audio -> "
                       "joint");
    } else {
        const Checkpoint& ck = *args.start;
        check_architecture(ck.config, cfg);
        std::map<std::string, std::vector<float>> params;
        if (ck.stage == tag) {
            split_checkpoint(ck, params, opt);
            model.import_params(params);
            start_step = ck.step;
            DUET_CHECK(start_step <= static_cast<uint64_t>(plan.steps),
                       "checkpoint step exceeds the stage budget");
        } else if ((plan.stage == Stage::AIM_AUDIO_PRETRAIN && ck.stage == "pim") ||
                   (plan.stage == Stage::JOINT_FINETUNE && ck.stage == "audio")) {
            AdamState dropped;  // each stage starts with fresh optimizer state
            split_checkpoint(ck, params, dropped);
            model.import_params(params);
        } else {
            throw contract_error("stage '" + tag + "' cannot start from a '" + ck.stage +
                                 "' checkpoint; stages run pim -> audio -> joint");
        }
    }

    std::filesystem::create_directories(args.out_dir);
    PreparedSet set = PreparedSet::build(model, args.dataset_dir, "train", plan.stage,
                                         args.limit_episodes);

    StageReport rep;
    rep.stage = plan.stage;
    rep.initial_loss = probe_loss(model, plan.stage, set, cfg);

    auto wall0 = std::chrono::steady_clock::now();
    std::map<std::string, double> mode_loss_sum;
    // plain-text loss curve; a resumed run appends to the existing series
    std::ofstream curve(args.out_dir + "/loss_" + tag + ".txt",
                        start_step > 0 ? std::ios::app : std::ios::trunc);
    uint64_t step = start_step;
    int ran = 0;
    while (step < static_cast<uint64_t>(plan.steps) &&
           (args.limit_steps < 0 || ran < args.limit_steps)) {
        step++;
        ran++;
        Rng rng(seed_for(cfg.seed, "train/" + tag + "/step/" + std::to_string(step)));
        zero_grads(model);
        double batch_loss = 0.0;
        std::vector<std::pair<std::string, double>> detail;
        for (int b = 0; b < cfg.batch; b++) {
            const PreparedEpisode& ep = set.eps[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(set.eps.size()) - 1))];
            float gscale = 1.0f / static_cast<float>(cfg.batch);
            std::string mode;
            double sl;
            if (plan.stage == Stage::PIM_PRETRAIN) {
                sl = pim_sample(model, ep, rng, cfg, gscale, mode);
            } else {
                BatchRecipe r = sample_batch_recipe(rng, plan.stage, cfg);
                mode = recipe_name(r.kind);
                sl = recipe_sample(model, ep, r, rng, cfg, step, gscale);
            }
            batch_loss += sl / cfg.batch;
            mode_loss_sum[mode] += sl;
            rep.mode_count[mode]++;
            detail.push_back({mode, sl});
        }
        if (!std::isfinite(batch_loss)) {
            std::string dump = write_diagnostic(args.out_dir, tag, step, batch_loss, plan.lr,
                                                detail, model);
            throw runtime_failure("non-finite loss at " + tag + " step " + std::to_string(step) +
                                  "; diagnostic dump: " + dump);
        }
        adam_apply(model, opt, plan.lr, cfg);
        rep.loss_series.push_back(batch_loss);
        curve << step << " " << std::setprecision(10) << batch_loss << "\n";
        if (!args.quiet && (step % static_cast<uint64_t>(std::max(1, args.log_every)) == 0 ||
                            step == static_cast<uint64_t>(plan.steps))) {
            std::printf("[%s] step %llu/%d loss %.6f\n", tag.c_str(),
                        static_cast<unsigned long long>(step), plan.steps, batch_loss);
            std::fflush(stdout);
        }
    }
    rep.steps_run = ran;
    rep.final_step = step;
    for (const auto& [k, s] : mode_loss_sum) rep.mode_loss[k] = s / rep.mode_count[k];
    rep.final_loss = probe_loss(model, plan.stage, set, cfg);
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();

    Checkpoint ck = make_checkpoint(model, cfg, plan.stage, step, opt);
    rep.checkpoint_path = args.out_dir + "/ckpt_" + tag + ".duetckpt";
    save_checkpoint(rep.checkpoint_path, ck);
    rep.checkpoint_hash = ck.content_hash;

    json mf;
    mf["schema_version"] = 1;
    mf["stage"] = tag;
    mf["budget_steps"] = plan.steps;
    mf["learning_rate"] = plan.lr;
    json mix = json::object();
    for (const auto& [k, p] : plan.mix) mix[k] = p;
    mf["mix"] = mix;
    mf["batch"] = cfg.batch;
    mf["seed"] = cfg.seed;
    mf["config"] = json::parse(config_to_json(cfg));
    mf["dataset_dir"] = args.dataset_dir;
    mf["dataset_hash"] = set.dataset_hash;
    mf["episodes"] = set.eps.size();
    mf["resumed_from_step"] = start_step;
    mf["steps_run"] = ran;
    mf["final_step"] = step;
    mf["initial_probe_loss"] = rep.initial_loss;
    mf["final_probe_loss"] = rep.final_loss;
    mf["mode_loss"] = rep.mode_loss;
    mf["mode_count"] = rep.mode_count;
    mf["loss_series"] = rep.loss_series;
    mf["checkpoint"] = rep.checkpoint_path;
    mf["checkpoint_hash"] = rep.checkpoint_hash;
    mf["wall_seconds"] = wall;
    rep.manifest_path = args.out_dir + "/manifest_" + tag + ".json";
    {
        std::ofstream f(rep.manifest_path);
        DUET_REQUIRE(f.good(), "cannot write " + rep.manifest_path);
        f << mf.dump(2) << "\n";
    }
    return rep;
}

PipelineResult train_pipeline(JointModel& model, const RunConfig& cfg, const StageRunArgs& args) {
    PipelineResult out;
    std::vector<StagePlan> plans = plan_stages(cfg, &out.warning);
    model.init(cfg, cfg.seed);
    auto order = [](const std::string& t) { return t == "pim" ? 0 : t == "audio" ? 1 : 2; };
    Checkpoint chain;
    const Checkpoint* prior = nullptr;
    if (args.start) {
        chain = *args.start;
        prior = &chain;
    }
    for (const StagePlan& plan : plans) {
        if (prior) {
            int po = order(prior->stage), so = order(stage_tag(plan.stage));
            if (po > so) continue;  // resuming past a completed stage
            if (po == so && prior->step >= static_cast<uint64_t>(plan.steps)) {
                // this stage is already complete in the starting checkpoint
                check_architecture(prior->config, cfg);
                std::map<std::string, std::vector<float>> params;
                AdamState dropped;
                split_checkpoint(*prior, params, dropped);
                model.import_params(params);
                continue;
            }
        }
        StageRunArgs a = args;
        a.start = prior;
        StageReport rep = run_stage(model, plan, cfg, a);
        out.reports.push_back(rep);
        out.final_checkpoint = rep.checkpoint_path;
        chain = load_checkpoint(rep.checkpoint_path);
        prior = &chain;
        if (rep.final_step < static_cast<uint64_t>(plan.steps)) break;  // hit the step limit
    }
    return out;
}

}  // namespace duet::train
