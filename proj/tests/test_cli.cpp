#include <doctest.h>
#include <json.hpp>

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "duet/checkpoint.hpp"
#include "duet/cli.hpp"
#include "duet/config.hpp"
#include "duet/world.hpp"

using namespace duet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

// invokes the CLI in-process with stdout/stderr captured
CliResult run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "duet");
    std::vector<char*> argv;
    for (std::string& a : args) argv.push_back(a.data());

    fs::path cap_out = fs::temp_directory_path() / "duet_cli_stdout.txt";
    fs::path cap_err = fs::temp_directory_path() / "duet_cli_stderr.txt";
    std::fflush(stdout);
    std::fflush(stderr);
    int keep_out = dup(1), keep_err = dup(2);
    (void)!std::freopen(cap_out.string().c_str(), "w", stdout);
    (void)!std::freopen(cap_err.string().c_str(), "w", stderr);

    CliResult r;
    r.code = cli::run(static_cast<int>(argv.size()), argv.data());

    std::fflush(stdout);
    std::fflush(stderr);
    dup2(keep_out, 1);
    dup2(keep_err, 2);
    close(keep_out);
    close(keep_err);
    r.out = slurp(cap_out);
    r.err = slurp(cap_err);
    return r;
}

std::string fresh_dir(const std::string& name) {
    std::string d = (fs::temp_directory_path() / name).string();
    fs::remove_all(d);
    return d;
}

const std::string& cli_dataset() {
    static std::string dir = [] {
        std::string d = fresh_dir("duet_cli_data");
        world::build_dataset(d, 12, 4, 8, 32, 8000, 99);
        return d;
    }();
    return dir;
}

RunConfig cli_cfg() {
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
    c.audio_rate = 8000;
    c.frames = 4;
    c.stage1_steps = 3;
    c.stage2_steps = 2;
    c.stage3_steps = 2;
    c.stage1_lr = 1e-3;
    c.stage2_lr = 1e-3;
    c.stage3_lr = 1e-3;
    c.batch = 2;
    c.sample_steps = 3;
    c.seed = 1313;
    c.dataset_dir = cli_dataset();
    return c;
}

const std::string& cli_cfg_path() {
    static std::string path = [] {
        std::string p = (fs::temp_directory_path() / "duet_cli_cfg.json").string();
        save_config(p, cli_cfg());
        return p;
    }();
    return path;
}

// one full 3-stage training run through the CLI, shared by the later cases
struct Trained {
    int code = -1;
    std::string dir;
};

const Trained& cli_trained() {
    static Trained t = [] {
        Trained r;
        r.dir = fresh_dir("duet_cli_run");
        r.code = run_cli({"train", "--config", cli_cfg_path(), "--out", r.dir, "--quiet"}).code;
        return r;
    }();
    return t;
}

std::string joint_ckpt() { return cli_trained().dir + "/ckpt_joint.duetckpt"; }

std::string ref_frame() { return cli_dataset() + "/ep0000/frame_000.ppm"; }

bool same_params(const std::map<std::string, std::vector<float>>& a,
                 const std::map<std::string, std::vector<float>>& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [k, v] : a) {
        auto it = b.find(k);
        if (it == b.end() || it->second.size() != v.size()) return false;
        if (!v.empty() &&
            std::memcmp(v.data(), it->second.data(), v.size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

int count_lines(const fs::path& p) {
    std::ifstream f(p);
    int n = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) n++;
    return n;
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::vector<std::string> names;
    for (const auto& de : fs::recursive_directory_iterator(a))
        if (de.is_regular_file()) names.push_back(fs::relative(de.path(), a).string());
    std::vector<std::string> other;
    for (const auto& de : fs::recursive_directory_iterator(b))
        if (de.is_regular_file()) other.push_back(fs::relative(de.path(), b).string());
    std::sort(names.begin(), names.end());
    std::sort(other.begin(), other.end());
    if (names != other) return false;
    for (const std::string& n : names)
        if (slurp(a / n) != slurp(b / n)) return false;
    return true;
}

}  // namespace

TEST_CASE("usage errors exit with code 2 and name the offending flag") {
    unsetenv("DUET_OUT");

    CliResult none = run_cli({});
    CHECK(none.code == 2);

    CHECK(run_cli({"--help"}).code == 0);
    CHECK(run_cli({"bogus-verb"}).code == 2);

    CliResult no_out = run_cli({"build-data"});
    CHECK(no_out.code == 2);
    CHECK(no_out.err.find("--out") != std::string::npos);

    CliResult no_cfg = run_cli({"train", "--out", "/tmp/x"});
    CHECK(no_cfg.code == 2);
    CHECK(no_cfg.err.find("--config") != std::string::npos);

    CHECK(run_cli({"train", "--config", cli_cfg_path(), "--out", "/tmp/x", "--stage", "warmup"})
              .code == 2);

    // eval needs exactly one generation source
    std::string out = fresh_dir("duet_cli_ev0");
    CliResult no_src = run_cli({"eval", "--data", cli_dataset(), "--out", out});
    CHECK(no_src.code == 2);
    CHECK(no_src.err.find("--ground-truth") != std::string::npos);
    CHECK(run_cli({"eval", "--data", cli_dataset(), "--out", out, "--ground-truth", "--ckpt",
                   "x"})
              .code == 2);
}

TEST_CASE("build-data is deterministic and honors the DUET_OUT fallback") {
    std::string a = fresh_dir("duet_cli_bd_a");
    std::string b = fresh_dir("duet_cli_bd_b");
    CliResult ra = run_cli({"build-data", "--out", a, "--episodes", "12", "--frames", "4",
                            "--canvas", "32", "--audio-rate", "8000", "--seed", "5"});
    REQUIRE(ra.code == 0);

    setenv("DUET_OUT", b.c_str(), 1);
    CliResult rb = run_cli({"build-data", "--episodes", "12", "--frames", "4", "--canvas", "32",
                            "--audio-rate", "8000", "--seed", "5"});
    unsetenv("DUET_OUT");
    REQUIRE(rb.code == 0);

    json ma = json::parse(slurp(fs::path(a) / "manifest.json"));
    json mb = json::parse(slurp(fs::path(b) / "manifest.json"));
    CHECK(ma.at("content_hash") == mb.at("content_hash"));

    std::string c = fresh_dir("duet_cli_bd_c");
    CliResult rc = run_cli({"build-data", "--out", c, "--episodes", "12", "--frames", "4",
                            "--canvas", "32", "--audio-rate", "8000", "--seed", "6"});
    REQUIRE(rc.code == 0);
    json mc = json::parse(slurp(fs::path(c) / "manifest.json"));
    CHECK(ma.at("content_hash") != mc.at("content_hash"));

    CliResult small = run_cli({"build-data", "--out", fresh_dir("duet_cli_bd_d"), "--episodes",
                               "6", "--frames", "4", "--canvas", "32"});
    CHECK(small.code == 2);
    CHECK(small.err.find("12 episodes") != std::string::npos);
}

TEST_CASE("train runs the stage chain and refuses out-of-order starts") {
    REQUIRE(cli_trained().code == 0);
    const std::string& dir = cli_trained().dir;

    for (const char* tag : {"pim", "audio", "joint"}) {
        CHECK(fs::exists(dir + "/ckpt_" + tag + ".duetckpt"));
        CHECK(fs::exists(dir + "/manifest_" + tag + ".json"));
        CHECK(fs::exists(dir + "/loss_" + tag + ".txt"));
    }
    CHECK(count_lines(dir + "/loss_pim.txt") == 3);  // stage1 budget
    Checkpoint ck = load_checkpoint(joint_ckpt());
    CHECK(ck.stage == "joint");
    CHECK(ck.step == 2);

    CliResult oo = run_cli({"train", "--config", cli_cfg_path(), "--out",
                            fresh_dir("duet_cli_oo"), "--stage", "joint", "--quiet"});
    CHECK(oo.code == 2);
    CHECK(oo.err.find("pim -> audio -> joint") != std::string::npos);

    CliResult au = run_cli({"train", "--config", cli_cfg_path(), "--out",
                            fresh_dir("duet_cli_au"), "--stage", "audio", "--resume",
                            dir + "/ckpt_pim.duetckpt", "--quiet"});
    CHECK(au.code == 0);
}

TEST_CASE("interrupted cli training resumes to identical parameters") {
    std::string one = fresh_dir("duet_cli_one");
    REQUIRE(run_cli({"train", "--config", cli_cfg_path(), "--out", one, "--stage", "pim",
                     "--quiet"})
                .code == 0);

    std::string two = fresh_dir("duet_cli_two");
    REQUIRE(run_cli({"train", "--config", cli_cfg_path(), "--out", two, "--stage", "pim",
                     "--max-steps", "2", "--quiet"})
                .code == 0);
    CHECK(load_checkpoint(two + "/ckpt_pim.duetckpt").step == 2);
    REQUIRE(run_cli({"train", "--config", cli_cfg_path(), "--out", two, "--stage", "pim",
                     "--resume", two + "/ckpt_pim.duetckpt", "--quiet"})
                .code == 0);

    Checkpoint a = load_checkpoint(one + "/ckpt_pim.duetckpt");
    Checkpoint b = load_checkpoint(two + "/ckpt_pim.duetckpt");
    CHECK(a.step == b.step);
    // parameter maps include the optimizer moments, so this is the full state;
    // the content hashes differ only through the configs' embedded out_dir
    CHECK(same_params(a.params, b.params));
    CHECK(count_lines(two + "/loss_pim.txt") == 3);  // 2 fresh + 1 appended
}

TEST_CASE("generate writes byte-identical artifacts under a fixed seed") {
    REQUIRE(cli_trained().code == 0);

    std::string a = fresh_dir("duet_cli_gen_a");
    std::string b = fresh_dir("duet_cli_gen_b");
    std::vector<std::string> base = {"generate", "--ckpt", joint_ckpt(), "--ref", ref_frame(),
                                     "--command", "wave",  "--frames", "4", "--steps", "3",
                                     "--seed", "9"};
    std::vector<std::string> ra = base;
    ra.insert(ra.end(), {"--out", a});
    std::vector<std::string> rb = base;
    rb.insert(rb.end(), {"--out", b});
    REQUIRE(run_cli(ra).code == 0);
    REQUIRE(run_cli(rb).code == 0);
    CHECK(same_tree(a, b));
    CHECK(fs::exists(fs::path(a) / "frame_0003.ppm"));
    CHECK(fs::exists(fs::path(a) / "motion_0003.ppm"));
    CHECK(fs::exists(fs::path(a) / "motion.json"));
    json gj = json::parse(slurp(fs::path(a) / "generation.json"));
    CHECK(gj.at("mode") == "t2mv");
    CHECK(gj.at("seed") == 9);

    std::string c = fresh_dir("duet_cli_gen_c");
    std::vector<std::string> rc = {"generate", "--ckpt", joint_ckpt(), "--ref", ref_frame(),
                                   "--command", "wave",  "--frames", "4", "--steps", "3",
                                   "--seed", "10", "--out", c};
    REQUIRE(run_cli(rc).code == 0);
    CHECK(slurp(fs::path(a) / "frame_0000.ppm") != slurp(fs::path(c) / "frame_0000.ppm"));

    // rasterize the parsed motion document back to frames
    std::string rm = fresh_dir("duet_cli_rm");
    CliResult rr = run_cli({"render-motion", "--motion", a + "/motion.json", "--out", rm});
    CHECK(rr.code == 0);
    CHECK(fs::exists(fs::path(rm) / "motion_0003.ppm"));
}

TEST_CASE("generate refuses flag sets inconsistent with the mode") {
    REQUIRE(cli_trained().code == 0);
    std::string out = fresh_dir("duet_cli_gen_bad");
    std::string wav = cli_dataset() + "/ep0000/audio.wav";
    std::string mo = cli_dataset() + "/ep0000/motion.json";

    CliResult no_audio = run_cli({"generate", "--ckpt", joint_ckpt(), "--ref", ref_frame(),
                                  "--command", "wave", "--mode", "ta2v", "--frames", "4",
                                  "--out", out});
    CHECK(no_audio.code == 2);
    CHECK(no_audio.err.find("--audio") != std::string::npos);

    CHECK(run_cli({"generate", "--ckpt", joint_ckpt(), "--ref", ref_frame(), "--command",
                   "wave", "--mode", "t2mv", "--audio", wav, "--frames", "4", "--out", out})
              .code == 2);
    CHECK(run_cli({"generate", "--ckpt", joint_ckpt(), "--ref", ref_frame(), "--command",
                   "wave", "--mode", "tam2v", "--audio", wav, "--frames", "4", "--out", out})
              .code == 2);  // tam2v needs --motion

    // driving length 4 vs requested 8 frames
    CliResult len = run_cli({"generate", "--ckpt", joint_ckpt(), "--ref", ref_frame(),
                             "--command", "wave", "--mode", "tam2v", "--audio", wav, "--motion",
                             mo, "--frames", "8", "--out", out});
    CHECK(len.code == 2);
    CHECK(len.err.find("--motion") != std::string::npos);

    // audio-driven generation works with the episode's own wav + face mask
    CliResult ok = run_cli({"generate", "--ckpt", joint_ckpt(), "--ref", ref_frame(),
                            "--command", "wave", "--mode", "ta2v", "--audio", wav,
                            "--face-mask-from", mo, "--frames", "4", "--steps", "2", "--out",
                            out});
    CHECK(ok.code == 0);
}

TEST_CASE("ground-truth eval scores interaction at 1 and re-runs identically") {
    std::string a = fresh_dir("duet_cli_ev_a");
    CliResult ra = run_cli({"eval", "--data", cli_dataset(), "--split", "train",
                            "--ground-truth", "--limit", "6", "--out", a});
    REQUIRE(ra.code == 0);
    CHECK(count_lines(a + "/summary.json") > 0);

    json s = json::parse(slurp(fs::path(a) / "summary.json"));
    const json& agg = s.at("aggregate").at("metrics");
    REQUIRE(agg.at("pixel_interaction").at("available").get<bool>());
    CHECK(agg.at("pixel_interaction").at("value").get<double>() == 1.0);
    REQUIRE(agg.at("box_tracking_px").at("available").get<bool>());
    CHECK(agg.at("box_tracking_px").at("value").get<double>() < 2.0);
    CHECK(!agg.at("vlm_qa").at("available").get<bool>());
    CHECK(s.at("episodes").size() == 6);

    int n_reports = 0;
    for (const auto& de : fs::directory_iterator(a + "/reports"))
        if (de.is_regular_file()) n_reports++;
    CHECK(n_reports == 6);

    std::string b = fresh_dir("duet_cli_ev_b");
    REQUIRE(run_cli({"eval", "--data", cli_dataset(), "--split", "train", "--ground-truth",
                     "--limit", "6", "--out", b})
                .code == 0);
    CHECK(same_tree(a + "/reports", b + "/reports"));
}

TEST_CASE("eval refuses empty sets and mismatched generation ids") {
    std::string out = fresh_dir("duet_cli_ev_e");
    CliResult empty = run_cli({"eval", "--data", cli_dataset(), "--split", "train",
                               "--ground-truth", "--limit", "0", "--out", out});
    CHECK(empty.code == 3);
    CHECK(empty.err.find("no episodes") != std::string::npos);

    std::string hollow = fresh_dir("duet_cli_hollow");
    fs::create_directories(hollow);
    CliResult miss = run_cli({"eval", "--data", cli_dataset(), "--split", "train",
                              "--generations", hollow, "--limit", "2", "--out", out});
    CHECK(miss.code == 3);
    CHECK(miss.err.find("ep0000") != std::string::npos);
    CHECK(miss.err.find("ep0001") != std::string::npos);
}

TEST_CASE("eval from a checkpoint writes generation folders eval can reread") {
    REQUIRE(cli_trained().code == 0);
    std::string a = fresh_dir("duet_cli_ev_ck");
    CliResult ra = run_cli({"eval", "--data", cli_dataset(), "--split", "test", "--ckpt",
                            joint_ckpt(), "--mode", "t2mv", "--steps", "2", "--out", a});
    REQUIRE(ra.code == 0);

    json s = json::parse(slurp(fs::path(a) / "summary.json"));
    REQUIRE(s.at("episodes").size() == 1);
    std::string id = s.at("episodes")[0].get<std::string>();
    CHECK(fs::exists(fs::path(a) / "gen" / id / "motion.json"));
    CHECK(fs::exists(fs::path(a) / "gen" / id / "frame_0000.ppm"));
    // motion comes from the generator here, so interaction is actually measured
    const json& agg = s.at("aggregate").at("metrics");
    CHECK(!agg.at("box_tracking_px").at("available").get<bool>());  // t2mv has no driving

    std::string b = fresh_dir("duet_cli_ev_rd");
    REQUIRE(run_cli({"eval", "--data", cli_dataset(), "--split", "test", "--generations",
                     a + "/gen", "--out", b})
                .code == 0);
    CHECK(same_tree(a + "/reports", b + "/reports"));
}

TEST_CASE("eval drives external adapters through the metric-cmd protocol") {
    fs::path dir = fs::temp_directory_path() / "duet_cli_adapter";
    fs::remove_all(dir);
    fs::create_directories(dir);
    fs::path script = dir / "score.sh";
    fs::path capture = dir / "request.json";
    {
        std::ofstream f(script);
        f << "#!/bin/sh\ncat > " << capture.string()
          << "\nprintf '{\"score\": 0.25, \"note\": \"stub\"}'\n";
    }

    std::string out = fresh_dir("duet_cli_ev_x");
    CliResult r = run_cli({"eval", "--data", cli_dataset(), "--split", "train", "--limit", "1",
                           "--ground-truth", "--metric-cmd", "vlm_qa=sh " + script.string(),
                           "--metric-cmd", "my_probe=sh " + script.string(), "--out", out});
    REQUIRE(r.code == 0);

    json s = json::parse(slurp(fs::path(out) / "summary.json"));
    const json& agg = s.at("aggregate").at("metrics");
    REQUIRE(agg.at("vlm_qa").at("available").get<bool>());
    CHECK(agg.at("vlm_qa").at("value").get<double>() == 0.25);
    REQUIRE(agg.at("my_probe").at("available").get<bool>());

    json req = json::parse(slurp(capture));
    CHECK(req.at("episode") == "ep0000");
    CHECK(req.count("command") == 1);
    CHECK(req.count("video_dir") == 1);
    CHECK(req.count("motion_doc") == 1);
    fs::remove_all(dir);
}
