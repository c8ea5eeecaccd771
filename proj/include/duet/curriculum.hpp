#pragma once

// Three-stage training: motion-stream pretraining, audio-conditioned video
// pretraining, then joint finetuning with mixed condition recipes. The loop is
// plain flow matching with adaptive-moment updates. Every step re-derives its
// randomness from (config seed, stage, step index), so a run is replayable
// from the config alone and resumes from a checkpoint bitwise.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "duet/checkpoint.hpp"
#include "duet/dual.hpp"
#include "duet/world.hpp"

namespace duet::train {

enum class Stage { PIM_PRETRAIN, AIM_AUDIO_PRETRAIN, JOINT_FINETUNE };

// short tag used in checkpoints and file names: "pim" | "audio" | "joint"
const char* stage_tag(Stage s);
Stage stage_from_tag(const std::string& tag);

struct StagePlan {
    Stage stage{};
    int steps = 0;
    double lr = 0.0;
    std::vector<std::pair<std::string, double>> mix;  // recipe name -> probability
};

// The three plans in order, with per-stage budgets/learning rates taken from
// the config. Trailing stages with a zero budget are dropped (appending a
// note to *warning); a zero-budget stage followed by a non-zero one is an
// error, because later stages require the earlier checkpoints.
std::vector<StagePlan> plan_stages(const RunConfig& cfg, std::string* warning = nullptr);

// ---------------------------------------------------------------------------
// Stage-1 curriculum over the motion stream.

enum class PimMode { CONTINUATION, PERCEPTION_GEN, DETECTION };
const char* pim_mode_name(PimMode m);

struct CurriculumMode {
    PimMode mode{};
    int target_length = 0;  // supervised frames: clip length, or 1 for DETECTION
};

// Draws CONTINUATION / PERCEPTION_GEN / DETECTION with the configured
// weights (normalized). DETECTION is the length-1 sub-case of generation.
CurriculumMode sample_curriculum(Rng& rng, const RunConfig& cfg, int clip_frames);

// Loss mask for a mode: CONTINUATION supervises every frame except the clean
// first one; PERCEPTION_GEN supervises everything; DETECTION confines the
// loss to the first frame.
LossMask pim_loss_mask(PimMode m, int frames, int gh, int gw);

// ---------------------------------------------------------------------------
// Stage-2/3 batch recipes.

enum class RecipeKind { AUDIO_COND, MOTION_DRIVEN, JOINT_GEN, PURE_I2V };
const char* recipe_name(RecipeKind k);

struct BatchRecipe {
    RecipeKind kind{};
    bool audio = false;    // audio features + face mask enter the video stream
    bool driving = false;  // clean motion, encoded at t = 0, guides the video
    bool joint = false;    // both streams noised at a shared t, both losses
};

// Audio pretraining draws AUDIO_COND / PURE_I2V (i2v share from the config);
// joint finetuning draws all four kinds: PURE_I2V takes its own share first
// and the audio/driven/generation weights are normalized over the rest.
// The PIM stage has no mixed recipes and is rejected.
BatchRecipe sample_batch_recipe(Rng& rng, Stage stage, const RunConfig& cfg);

// ---------------------------------------------------------------------------
// In-memory training set: per-episode tensors derived once, reused per step.

struct PreparedEpisode {
    LatentGrid<float> z0_motion;  // clean motion latent at the motion canvas
    LatentGrid<float> z0_video;   // clean video latent (empty during stage 1)
    LatentGrid<float> mref, vref;
    motion::TaskConditioning cond;
    motion::MotionSequence driving;  // source document, for driven recipes
    audio::AudioTrack audio;
    FaceMask fmask;  // head coverage on the video grid
    std::string name;
};

struct PreparedSet {
    std::vector<PreparedEpisode> eps;
    std::string dataset_hash;

    // Loads `split` from a built dataset and derives what `stage` needs;
    // limit > 0 keeps only the first episodes of the split.
    static PreparedSet build(const JointModel& model, const std::string& dataset_dir,
                             const std::string& split, Stage stage, int limit = -1);
};

// ---------------------------------------------------------------------------
// Stage execution.

struct StageReport {
    Stage stage{};
    int steps_run = 0;       // optimizer steps executed by this call
    uint64_t final_step = 0;  // step counter reached within the stage
    double initial_loss = 0.0, final_loss = 0.0;  // fixed probe batch, both ends
    std::vector<double> loss_series;              // batch-mean loss per step
    std::map<std::string, double> mode_loss;      // mean loss per recipe/mode
    std::map<std::string, long long> mode_count;  // sample draws per recipe/mode
    std::string checkpoint_path, checkpoint_hash;
    std::string manifest_path;
};

struct StageRunArgs {
    std::string dataset_dir;
    std::string out_dir;
    const Checkpoint* start = nullptr;  // nullptr: fresh start (stage 1 only)
    int limit_steps = -1;               // stop after this many steps this call
    int limit_episodes = -1;            // train on a prefix of the split
    bool quiet = true;
    int log_every = 50;
};

// Runs (or resumes) one stage. Stage order is enforced through the checkpoint
// tag: stage 1 starts fresh or from a "pim" checkpoint, stage 2 from "pim" or
// "audio", stage 3 from "audio" or "joint". The model must already be
// initialized for cfg; a start checkpoint overwrites its parameters.
// Emits ckpt_<tag>.duetckpt and manifest_<tag>.json under out_dir. A
// non-finite loss aborts with a diagnostic dump next to them.
StageReport run_stage(JointModel& model, const StagePlan& plan, const RunConfig& cfg,
                      const StageRunArgs& args);

// Deterministic probe: mean flow-matching loss of a fixed batch drawn from a
// stage-specific named seed stream; comparable across calls.
double probe_loss(const JointModel& model, Stage stage, const PreparedSet& set,
                  const RunConfig& cfg);

// Loads model parameters from a training checkpoint, ignoring optimizer
// state. The model must already be initialized with a matching architecture.
void load_model(JointModel& model, const Checkpoint& ck);

struct PipelineResult {
    std::vector<StageReport> reports;
    std::string final_checkpoint;
    std::string warning;  // stage-skipping note from plan_stages, if any
};

// Initializes the model from the config seed and runs every planned stage in
// order, chaining checkpoints. args.start resumes: completed stages are
// skipped (their parameters carried over), a partially trained stage continues
// from its step counter. If every stage is already complete the result has no
// reports and no final checkpoint path.
PipelineResult train_pipeline(JointModel& model, const RunConfig& cfg,
                              const StageRunArgs& args);

}  // namespace duet::train
