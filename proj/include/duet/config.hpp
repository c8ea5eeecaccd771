#pragma once

// Run configuration: one flat, documented struct covering model dimensions,
// curriculum weights, stage budgets, seeds, and paths. Serializes to JSON with
// exact round-trip equality; schema_version guards future layout changes.

#include <cstdint>
#include <string>

#include "duet/common.hpp"

namespace duet {

struct RunConfig {
    int schema_version = 1;

    // model dimensions (both streams share layer count by default)
    int layers = 3;
    int video_layers = -1;  // -1: same as layers; differing counts are rejected at build
    int motion_width = 96, motion_heads = 4;
    int video_width = 96, video_heads = 4;
    int patch = 8;
    int motion_canvas = 64;  // model-side motion latent canvas (stored renders stay 256)
    int video_canvas = 64;
    int audio_dim = 32, audio_rate = 16000, fps = 8;
    int frames = 8;  // training clip length

    // motion-stream curriculum (continuation / perception / detection)
    double pim_cont = 0.5, pim_perc = 0.3, pim_det = 0.2;
    // joint-stage mix, normalized internally; i2v gets its own share first
    double joint_audio = 30, joint_driven = 15, joint_gen = 60;
    double i2v_weight = 0.1;
    double audio_stage_i2v = 0.2;  // PURE_I2V share during audio pretraining

    // stage budgets and learning rates
    int stage1_steps = 2000, stage2_steps = 1000, stage3_steps = 800;
    double stage1_lr = 1e-5, stage2_lr = 1e-5, stage3_lr = 2e-6;
    int batch = 4;
    double adam_b1 = 0.9, adam_b2 = 0.999, adam_eps = 1e-8;

    // sampling
    int sample_steps = 16;

    uint64_t seed = 1234;
    std::string dataset_dir = "data";
    std::string out_dir = "out";

    bool operator==(const RunConfig&) const = default;

    int resolved_video_layers() const { return video_layers < 0 ? layers : video_layers; }

    void validate() const {
        DUET_CHECK(layers >= 1 && motion_width >= 8 && video_width >= 8, "model dims too small");
        DUET_CHECK(motion_width % motion_heads == 0 && video_width % video_heads == 0,
                   "width must divide by heads");
        DUET_CHECK(patch >= 1 && motion_canvas % patch == 0 && video_canvas % patch == 0,
                   "canvas must divide by patch size");
        DUET_CHECK(frames >= 1 && fps >= 1 && audio_rate % fps == 0,
                   "audio rate must be a multiple of fps");
        DUET_CHECK(pim_cont >= 0 && pim_perc >= 0 && pim_det >= 0 &&
                       pim_cont + pim_perc + pim_det > 0,
                   "motion curriculum weights invalid");
        DUET_CHECK(joint_audio >= 0 && joint_driven >= 0 && joint_gen >= 0 &&
                       joint_audio + joint_driven + joint_gen > 0,
                   "joint mix weights invalid");
        DUET_CHECK(i2v_weight >= 0 && i2v_weight < 1, "i2v weight must be in [0,1)");
        DUET_CHECK(audio_stage_i2v >= 0 && audio_stage_i2v < 1,
                   "audio-stage i2v share must be in [0,1)");
        DUET_CHECK(stage1_steps >= 0 && stage2_steps >= 0 && stage3_steps >= 0,
                   "stage budgets must be non-negative");
        DUET_CHECK(batch >= 1 && sample_steps >= 1, "batch and sampler steps must be positive");
    }
};

std::string config_to_json(const RunConfig& c);
RunConfig config_from_json(const std::string& text);
void save_config(const std::string& path, const RunConfig& c);
RunConfig load_config(const std::string& path);

}  // namespace duet
