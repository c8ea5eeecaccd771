#include "duet/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "duet/checkpoint.hpp"
#include "duet/common.hpp"
#include "duet/config.hpp"
#include "duet/curriculum.hpp"
#include "duet/dual.hpp"
#include "duet/image.hpp"
#include "duet/metrics.hpp"
#include "duet/motion.hpp"
#include "duet/world.hpp"

namespace duet::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// --out falls back to DUET_OUT, then (for train) the config's out_dir
std::string resolve_out(const std::string& flag, const std::string& cfg_fallback = "") {
    if (!flag.empty()) return flag;
    const char* env = std::getenv("DUET_OUT");
    if (env && *env) return env;
    if (!cfg_fallback.empty()) return cfg_fallback;
    throw contract_error("--out is required (or set DUET_OUT)");
}

std::string frame_name(const char* prefix, int i) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%s_%04d.ppm", prefix, i);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    DUET_REQUIRE(f.good(), "cannot write " + path);
    f << text;
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string upper(std::string s) {
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

// ---------------------------------------------------------------------------
// build-data

struct BuildDataArgs {
    std::string out;
    int episodes = 600, frames = 8, fps = 8, canvas = 64, rate = 8000;
    uint64_t seed = 0;
};

int cmd_build_data(const BuildDataArgs& a) {
    std::string out = resolve_out(a.out);
    world::DatasetSummary s =
        world::build_dataset(out, a.episodes, a.frames, a.fps, a.canvas, a.rate, a.seed);
    std::printf("dataset %s: %d train / %d val / %d test episodes\n", s.dir.c_str(), s.n_train,
                s.n_val, s.n_test);
    std::printf("manifest hash %s\n", s.manifest_hash.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config, data, out, stage = "all", resume;
    int max_steps = -1, episodes = -1, log_every = 50;
    bool quiet = false;
};

void print_stage(const train::StageReport& r, int budget) {
    std::printf("[%s] ran %d steps (at %llu/%d), probe %.6f -> %.6f\n",
                train::stage_tag(r.stage), r.steps_run,
                static_cast<unsigned long long>(r.final_step), budget, r.initial_loss,
                r.final_loss);
    std::printf("[%s] checkpoint %s\n", train::stage_tag(r.stage), r.checkpoint_path.c_str());
}

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = load_config(a.config);
    if (!a.data.empty()) cfg.dataset_dir = a.data;
    cfg.out_dir = resolve_out(a.out, cfg.out_dir);
    DUET_CHECK(!cfg.dataset_dir.empty(), "--data is required (config has no dataset_dir)");
    cfg.validate();

    train::StageRunArgs sargs;
    sargs.dataset_dir = cfg.dataset_dir;
    sargs.out_dir = cfg.out_dir;
    sargs.limit_steps = a.max_steps;
    sargs.limit_episodes = a.episodes;
    sargs.quiet = a.quiet;
    sargs.log_every = a.log_every;

    Checkpoint start;
    if (!a.resume.empty()) {
        start = load_checkpoint(a.resume);
        sargs.start = &start;
        std::printf("resuming from %s (stage %s, step %llu)\n", a.resume.c_str(),
                    start.stage.c_str(), static_cast<unsigned long long>(start.step));
    }

    std::string warning;
    std::vector<train::StagePlan> plans = train::plan_stages(cfg, &warning);
    if (!warning.empty()) std::fprintf(stderr, "warning: %s\n", warning.c_str());

    JointModel model;
    if (a.stage == "all") {
        train::PipelineResult res = train::train_pipeline(model, cfg, sargs);
        for (const train::StageReport& r : res.reports) {
            int budget = 0;
            for (const train::StagePlan& p : plans)
                if (p.stage == r.stage) budget = p.steps;
            print_stage(r, budget);
        }
        if (res.reports.empty())
            std::printf("nothing to train: every budgeted stage is already complete\n");
        else
            std::printf("final checkpoint %s\n", res.final_checkpoint.c_str());
        return 0;
    }

    train::Stage st = train::stage_from_tag(a.stage);
    const train::StagePlan* plan = nullptr;
    for (const train::StagePlan& p : plans)
        if (p.stage == st) plan = &p;
    DUET_CHECK(plan != nullptr, "stage '" + a.stage + "' has a zero step budget in this config");
    model.init(cfg, cfg.seed);
    train::StageReport rep = train::run_stage(model, *plan, cfg, sargs);
    print_stage(rep, plan->steps);
    return 0;
}

// ---------------------------------------------------------------------------
// generate

struct GenArgs {
    std::string ckpt, ref, command, task = "ACTION", mode = "t2mv";
    std::string audio, motion, face_mask_from, out;
    int frames = 8, steps = 16;
    uint64_t seed = 0;
};

int cmd_generate(const GenArgs& a) {
    std::string out = resolve_out(a.out);
    Checkpoint ck = load_checkpoint(a.ckpt);
    JointModel model;
    model.init(ck.config, ck.config.seed);
    train::load_model(model, ck);

    GenerationRequest req;
    req.ref_image = read_ppm(a.ref);
    req.command = a.command;
    req.task = upper(a.task);
    req.mode = mode_from_string(a.mode);
    req.frames = a.frames;
    req.seed = a.seed;
    req.steps = a.steps;

    audio::AudioTrack track;
    if (!a.audio.empty()) {
        track = audio::read_wav(a.audio);
        track.fps = model.cfg.fps;  // wav carries no frame rate; generation runs at the model's
        req.audio = &track;
    }
    motion::MotionSequence driving;
    if (!a.motion.empty()) {
        driving = motion::load_motion_doc(a.motion);
        req.driving = &driving;
    }
    FaceMask fmask;
    if (!a.face_mask_from.empty()) {
        motion::MotionSequence src = motion::load_motion_doc(a.face_mask_from);
        fmask = world::face_mask_from_motion(src, model.cfg.video_canvas, model.cfg.patch);
        req.face_mask = &fmask;
    }

    GenerationResult res = model.generate(req);

    fs::create_directories(out);
    for (size_t i = 0; i < res.video.size(); i++)
        write_ppm(out + "/" + frame_name("frame", static_cast<int>(i)), res.video[i]);
    for (size_t i = 0; i < res.motion_frames.size(); i++)
        write_ppm(out + "/" + frame_name("motion", static_cast<int>(i)), res.motion_frames[i]);
    motion::save_motion_doc(out + "/motion.json", res.motion);

    json mf;
    mf["schema_version"] = 1;
    mf["mode"] = mode_to_string(req.mode);
    mf["command"] = req.command;
    mf["task"] = req.task;
    mf["frames"] = req.frames;
    mf["steps"] = req.steps;
    mf["seed"] = req.seed;
    mf["reference"] = a.ref;
    mf["audio"] = a.audio.empty() ? json() : json(a.audio);
    mf["driving"] = a.motion.empty() ? json() : json(a.motion);
    mf["checkpoint"] = a.ckpt;
    mf["checkpoint_stage"] = ck.stage;
    mf["checkpoint_hash"] = ck.content_hash;
    mf["motion_auxiliary"] = res.motion_auxiliary;
    write_text(out + "/generation.json", mf.dump(2) + "\n");

    std::printf("wrote %zu video + %zu motion frames to %s\n", res.video.size(),
                res.motion_frames.size(), out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string ckpt, generations, data, split = "test", mode = "t2mv", out;
    bool ground_truth = false;
    int limit = -1, steps = 8;
    uint64_t seed = 0;
    std::vector<std::string> metric_cmds;  // name=command
};

constexpr const char* kExternalSlots[] = {"vlm_qa", "clip_score", "dino_consistency",
                                          "sync_confidence"};

int cmd_eval(const EvalArgs& a) {
    std::string out = resolve_out(a.out);
    int sources = (!a.ckpt.empty() ? 1 : 0) + (!a.generations.empty() ? 1 : 0) +
                  (a.ground_truth ? 1 : 0);
    DUET_CHECK(sources == 1,
               "choose exactly one generation source: --ckpt, --generations or --ground-truth");

    std::map<std::string, std::string> external;
    for (const std::string& mc : a.metric_cmds) {
        size_t eq = mc.find('=');
        DUET_CHECK(eq != std::string::npos && eq > 0, "--metric-cmd expects name=command");
        external[mc.substr(0, eq)] = mc.substr(eq + 1);
    }

    std::vector<std::string> ep_paths = world::list_split(a.data, a.split);
    if (a.limit >= 0 && static_cast<int>(ep_paths.size()) > a.limit)
        ep_paths.resize(static_cast<size_t>(a.limit));
    if (ep_paths.empty())
        throw runtime_failure("no episodes to evaluate in split '" + a.split + "' of " + a.data);

    InferenceMode mode = mode_from_string(a.mode);
    JointModel model;
    Checkpoint ck;
    if (!a.ckpt.empty()) {
        ck = load_checkpoint(a.ckpt);
        model.init(ck.config, ck.config.seed);
        train::load_model(model, ck);
    }

    if (!a.generations.empty()) {
        // every evaluated episode needs a generation directory; stray extra
        // directories are reported when evaluating the whole split
        std::set<std::string> expected;
        std::vector<std::string> missing;
        for (const std::string& p : ep_paths) {
            std::string id = fs::path(p).filename().string();
            expected.insert(id);
            if (!fs::exists(fs::path(a.generations) / id / "motion.json")) missing.push_back(id);
        }
        std::vector<std::string> extra;
        if (a.limit < 0 && fs::is_directory(a.generations))
            for (const auto& de : fs::directory_iterator(a.generations))
                if (de.is_directory() && !expected.count(de.path().filename().string()))
                    extra.push_back(de.path().filename().string());
        std::sort(extra.begin(), extra.end());
        if (!missing.empty() || !extra.empty()) {
            std::string msg = "episode ids do not match the generation set;";
            if (!missing.empty()) {
                msg += " missing generations:";
                for (const std::string& m : missing) msg += " " + m;
            }
            if (!extra.empty()) {
                msg += " unmatched generation directories:";
                for (const std::string& e : extra) msg += " " + e;
            }
            throw runtime_failure(msg);
        }
    }

    fs::create_directories(out + "/reports");
    if (!a.ckpt.empty()) fs::create_directories(out + "/gen");

    struct Agg {
        double sum = 0.0;
        int n = 0, total = 0;
        std::string first_note;
    };
    std::map<std::string, Agg> agg;
    std::vector<std::string> ids;

    for (const std::string& path : ep_paths) {
        std::string id = fs::path(path).filename().string();
        ids.push_back(id);
        world::Episode ep = world::load_episode(path);

        std::vector<Image> frames;       // video frames under evaluation
        motion::MotionSequence mseq;     // motion under evaluation
        bool driving_cmp = false;        // box tracking against the episode motion applies
        std::string frames_dir;          // where those frames live, for external scorers

        if (a.ground_truth) {
            frames = ep.video;
            mseq = ep.motion;
            driving_cmp = true;
            frames_dir = path;
        } else if (!a.ckpt.empty()) {
            GenerationRequest req;
            req.ref_image = ep.video.at(0);
            req.command = ep.spec.command;
            req.task = ep.spec.task;
            req.mode = mode;
            req.frames = ep.spec.frames;
            req.steps = a.steps;
            req.seed = seed_for(a.seed, "eval/" + id);
            if (mode != InferenceMode::T2MV) req.audio = &ep.audio;
            if (mode == InferenceMode::TAM2V) req.driving = &ep.motion;
            GenerationResult res = model.generate(req);
            frames = std::move(res.video);
            mseq = std::move(res.motion);
            driving_cmp = (mode == InferenceMode::TAM2V);
            frames_dir = out + "/gen/" + id;
            fs::create_directories(frames_dir);
            for (size_t i = 0; i < frames.size(); i++)
                write_ppm(frames_dir + "/" + frame_name("frame", static_cast<int>(i)), frames[i]);
            motion::save_motion_doc(frames_dir + "/motion.json", mseq);
            json g;
            g["episode"] = id;
            g["mode"] = mode_to_string(mode);
            g["seed"] = req.seed;
            g["steps"] = req.steps;
            write_text(frames_dir + "/generation.json", g.dump(2) + "\n");
        } else {
            frames_dir = a.generations + "/" + id;
            mseq = motion::load_motion_doc(frames_dir + "/motion.json");
            for (int i = 0;; i++) {
                fs::path f = fs::path(frames_dir) / frame_name("frame", i);
                if (!fs::exists(f)) break;
                frames.push_back(read_ppm(f.string()));
            }
            DUET_REQUIRE(!frames.empty(), "no frame_*.ppm files in " + frames_dir);
            fs::path gj = fs::path(frames_dir) / "generation.json";
            if (fs::exists(gj)) {
                std::ifstream f(gj);
                json g = json::parse(f);
                driving_cmp = lower(g.value("mode", "")) == "tam2v";
            }
        }

        metrics::MetricReport rep;
        if (ep.spec.task == "HOI") {
            const std::string& target =
                motion::palette().class_name.at(static_cast<size_t>(
                    ep.spec.objects.at(static_cast<size_t>(ep.spec.target)).cls));
            rep.add("pixel_interaction",
                    metrics::pixel_interaction(mseq, target, ep.spec.window_begin,
                                               ep.spec.window_end));
        } else {
            rep.add("pixel_interaction",
                    metrics::MetricValue::missing("no interaction window on ACTION episodes"));
        }
        rep.add("dynamic_degree", metrics::dynamic_degree(frames));
        rep.add("sharpness",
                metrics::laplacian_sharpness(frames, 0, 0, frames.at(0).w, frames.at(0).h));
        if (driving_cmp)
            rep.add("box_tracking_px", metrics::box_tracking_error(frames, ep.motion));
        else
            rep.add("box_tracking_px",
                    metrics::MetricValue::missing(
                        "needs a driving motion (tam2v generations or --ground-truth)"));

        for (const auto& [name, command] : external) {
            json rq;
            rq["metric"] = name;
            rq["episode"] = id;
            rq["command"] = ep.spec.command;
            rq["task"] = ep.spec.task;
            rq["frames"] = static_cast<int>(frames.size());
            rq["video_dir"] = frames_dir;
            rq["motion_doc"] = frames_dir + "/motion.json";
            rq["audio"] = path + "/audio.wav";
            rep.add(name, metrics::run_external_metric(command, rq.dump()));
        }
        for (const char* slot : kExternalSlots)
            if (!rep.entries.count(slot))
                rep.add(slot, metrics::MetricValue::missing(
                                  std::string("external adapter not configured; pass --metric-cmd ") +
                                  slot + "=<command>"));

        write_text(out + "/reports/" + id + ".json", rep.to_json() + "\n");
        for (const auto& [name, v] : rep.entries) {
            Agg& g = agg[name];
            g.total++;
            if (v.available) {
                g.sum += v.value;
                g.n++;
            } else if (g.first_note.empty()) {
                g.first_note = v.note;
            }
        }
    }

    metrics::MetricReport summary;
    for (const auto& [name, g] : agg) {
        if (g.n > 0)
            summary.add(name, metrics::MetricValue::ok(
                                  g.sum / g.n, "mean over " + std::to_string(g.n) + "/" +
                                                   std::to_string(g.total) + " episodes"));
        else
            summary.add(name, metrics::MetricValue::missing(
                                  g.first_note.empty() ? "unavailable for every episode"
                                                       : g.first_note));
    }

    json s;
    s["schema_version"] = 1;
    s["dataset"] = a.data;
    s["split"] = a.split;
    s["source"] = a.ground_truth ? "ground-truth" : (!a.ckpt.empty() ? "checkpoint" : "generations");
    if (!a.ckpt.empty()) {
        s["checkpoint"] = a.ckpt;
        s["checkpoint_hash"] = ck.content_hash;
        s["mode"] = mode_to_string(mode);
        s["steps"] = a.steps;
        s["seed"] = a.seed;
    }
    if (!a.generations.empty()) s["generations"] = a.generations;
    s["episodes"] = ids;
    s["aggregate"] = json::parse(summary.to_json());
    write_text(out + "/summary.json", s.dump(2) + "\n");

    std::fputs(summary.to_table().c_str(), stdout);
    std::printf("%zu episode reports in %s/reports\n", ids.size(), out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// render-motion

struct RenderArgs {
    std::string motion, out;
    int canvas = 0;  // 0 = the document's canvas
};

int cmd_render_motion(const RenderArgs& a) {
    std::string out = resolve_out(a.out);
    motion::MotionSequence seq = motion::load_motion_doc(a.motion);
    int canvas = a.canvas > 0 ? a.canvas : seq.canvas;
    int clamped = 0;
    std::vector<Image> frames = motion::render_motion(seq.poses, seq.objects, canvas, &clamped);
    fs::create_directories(out);
    for (size_t i = 0; i < frames.size(); i++)
        write_ppm(out + "/" + frame_name("motion", static_cast<int>(i)), frames[i]);
    if (clamped > 0)
        std::fprintf(stderr, "warning: %d keypoints clamped into the canvas\n", clamped);
    std::printf("wrote %zu motion frames at %dpx to %s\n", frames.size(), canvas, out.c_str());
    return 0;
}

}  // namespace

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
    CLI::App app{"dual-stream motion + video generation toolkit"};
    app.require_subcommand(1);

    BuildDataArgs bd;
    CLI::App* c_bd = app.add_subcommand("build-data", "build a procedural dataset");
    c_bd->add_option("--out", bd.out, "dataset directory (or DUET_OUT)");
    c_bd->add_option("--episodes", bd.episodes, "episode count")->capture_default_str();
    c_bd->add_option("--frames", bd.frames, "frames per episode")->capture_default_str();
    c_bd->add_option("--fps", bd.fps, "frame rate")->capture_default_str();
    c_bd->add_option("--canvas", bd.canvas, "video canvas in px")->capture_default_str();
    c_bd->add_option("--audio-rate", bd.rate, "audio sample rate in Hz")->capture_default_str();
    c_bd->add_option("--seed", bd.seed, "dataset seed")->capture_default_str();

    TrainArgs tr;
    CLI::App* c_tr = app.add_subcommand("train", "run the staged training curriculum");
    c_tr->add_option("--config", tr.config, "run config file")->required();
    c_tr->add_option("--data", tr.data, "dataset directory (overrides the config)");
    c_tr->add_option("--out", tr.out, "output directory (or DUET_OUT, or the config)");
    c_tr->add_option("--stage", tr.stage, "all | pim | audio | joint")
        ->capture_default_str()
        ->check(CLI::IsMember({"all", "pim", "audio", "joint"}));
    c_tr->add_option("--resume", tr.resume, "checkpoint to continue from");
    c_tr->add_option("--max-steps", tr.max_steps, "stop after this many steps (per stage)");
    c_tr->add_option("--episodes", tr.episodes, "cap the training episodes");
    c_tr->add_option("--log-every", tr.log_every, "progress print interval")->capture_default_str();
    c_tr->add_flag("--quiet", tr.quiet, "suppress progress prints");

    GenArgs gn;
    CLI::App* c_gn = app.add_subcommand("generate", "sample motion + video from a checkpoint");
    c_gn->add_option("--ckpt", gn.ckpt, "model checkpoint")->required();
    c_gn->add_option("--ref", gn.ref, "reference image (ppm, video canvas)")->required();
    c_gn->add_option("--command", gn.command, "text command")->required();
    c_gn->add_option("--task", gn.task, "ACTION | HOI")->capture_default_str();
    c_gn->add_option("--mode", gn.mode, "t2mv | ta2v | tam2v | ta2mv")
        ->capture_default_str()
        ->check(CLI::IsMember({"t2mv", "ta2v", "tam2v", "ta2mv"}, CLI::ignore_case));
    c_gn->add_option("--audio", gn.audio, "driving audio (wav), for the audio modes");
    c_gn->add_option("--motion", gn.motion, "driving motion document, for tam2v");
    c_gn->add_option("--face-mask-from", gn.face_mask_from,
                     "motion document whose head pose supplies the face mask");
    c_gn->add_option("--frames", gn.frames, "clip length")->capture_default_str();
    c_gn->add_option("--steps", gn.steps, "sampling steps")->capture_default_str();
    c_gn->add_option("--seed", gn.seed, "noise seed")->capture_default_str();
    c_gn->add_option("--out", gn.out, "output directory (or DUET_OUT)");

    EvalArgs ev;
    CLI::App* c_ev = app.add_subcommand("eval", "score generations against a dataset split");
    c_ev->add_option("--data", ev.data, "dataset directory")->required();
    c_ev->add_option("--split", ev.split, "train | val | test")->capture_default_str();
    c_ev->add_option("--ckpt", ev.ckpt, "generate on the fly from this checkpoint");
    c_ev->add_option("--generations", ev.generations,
                     "directory of per-episode generation folders");
    c_ev->add_flag("--ground-truth", ev.ground_truth,
                   "evaluate the dataset's own clips (sanity baseline)");
    c_ev->add_option("--mode", ev.mode, "inference mode for --ckpt")
        ->capture_default_str()
        ->check(CLI::IsMember({"t2mv", "ta2v", "tam2v", "ta2mv"}, CLI::ignore_case));
    c_ev->add_option("--limit", ev.limit, "evaluate at most this many episodes");
    c_ev->add_option("--steps", ev.steps, "sampling steps for --ckpt")->capture_default_str();
    c_ev->add_option("--seed", ev.seed, "evaluation seed")->capture_default_str();
    c_ev->add_option("--metric-cmd", ev.metric_cmds,
                     "external scorer as name=command (repeatable)");
    c_ev->add_option("--out", ev.out, "report directory (or DUET_OUT)");

    RenderArgs rm;
    CLI::App* c_rm = app.add_subcommand("render-motion", "rasterize a motion document");
    c_rm->add_option("--motion", rm.motion, "motion document")->required();
    c_rm->add_option("--canvas", rm.canvas, "canvas in px (default: the document's)");
    c_rm->add_option("--out", rm.out, "output directory (or DUET_OUT)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // --help is a success; anything else is a usage error
    }

    try {
        if (c_bd->parsed()) return cmd_build_data(bd);
        if (c_tr->parsed()) return cmd_train(tr);
        if (c_gn->parsed()) return cmd_generate(gn);
        if (c_ev->parsed()) return cmd_eval(ev);
        if (c_rm->parsed()) return cmd_render_motion(rm);
    } catch (const contract_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}

}  // namespace duet::cli
