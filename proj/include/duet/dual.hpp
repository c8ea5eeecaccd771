#pragma once

// Joint model: both streams wired together, inference-mode dispatch, lockstep
// co-sampling, and external motion driving (clean-motion encoding at t=0).

#include <map>
#include <optional>

#include "duet/config.hpp"
#include "duet/flowmatch.hpp"
#include "duet/streams.hpp"

namespace duet {

enum class InferenceMode { T2MV, TA2V, TAM2V, TA2MV };

InferenceMode mode_from_string(const std::string& s);  // accepts lower/upper case
std::string mode_to_string(InferenceMode m);

struct GenerationRequest {
    Image ref_image;  // video-canvas RGB reference
    std::string command;
    std::string task = "ACTION";  // ACTION | HOI
    const audio::AudioTrack* audio = nullptr;
    const motion::MotionSequence* driving = nullptr;
    const FaceMask* face_mask = nullptr;  // optional; all-ones when absent
    int frames = 8;
    uint64_t seed = 0;
    int steps = 16;
    InferenceMode mode = InferenceMode::T2MV;
};

struct GenerationResult {
    std::vector<Image> video;          // video-canvas frames
    std::vector<Image> motion_frames;  // motion-canvas frames decoded from the motion latent
    motion::MotionSequence motion;     // parsed from motion_frames
    bool motion_auxiliary = false;     // true when the mode treats motion as a by-product
};

// tag for stacks produced by external driving (reused across timesteps by design)
constexpr uint64_t kDrivingTag = ~uint64_t(0);

struct JointModel {
    RunConfig cfg;
    MotionStream<float> ms;
    VideoStream<float> vs;

    void init(const RunConfig& c, uint64_t seed);

    int motion_grid() const { return cfg.motion_canvas / cfg.patch; }
    int video_grid() const { return cfg.video_canvas / cfg.patch; }

    // pixels [0,1] -> centered latent grids
    LatentGrid<float> video_latent(const std::vector<float>& px, int frames) const;
    LatentGrid<float> motion_latent(const std::vector<float>& px, int frames) const;
    // reference image -> per-stream single-frame reference latents
    LatentGrid<float> video_ref_latent(const Image& ref) const;
    LatentGrid<float> motion_ref_latent(const Image& ref) const;
    // latent -> clamped pixel frames
    std::vector<Image> decode_video(const LatentGrid<float>& z) const;
    std::vector<Image> decode_motion(const LatentGrid<float>& z) const;

    // renders the clean driving motion at the model's motion canvas and encodes
    // it at t=0; deterministic
    ResidualStack<float> encode_driving_motion(const motion::MotionSequence& driving,
                                               const LatentGrid<float>& motion_ref,
                                               const motion::TaskConditioning& cond) const;

    // one lockstep evaluation of both vector fields at timestep t; the stack
    // produced by the motion stream is consumed by the video stream at the
    // same step (tag-checked)
    void joint_denoise_step(const LatentGrid<float>& z_video, const LatentGrid<float>& z_motion,
                            float t, const LatentGrid<float>& video_ref,
                            const LatentGrid<float>& motion_ref,
                            const motion::TaskConditioning& cond,
                            const audio::AudioFeatureSequence* audio_feat, const FaceMask* mask,
                            uint64_t step_tag, LatentGrid<float>& v_video,
                            LatentGrid<float>& v_motion) const;

    void validate_request(const GenerationRequest& req) const;
    GenerationResult generate(const GenerationRequest& req) const;

    // named parameter map (used by checkpoints); import refreshes caches
    void export_params(std::map<std::string, std::vector<float>>& out);
    void import_params(const std::map<std::string, std::vector<float>>& in);
    void visit(const ParamVisitor<float>& fn);
    void sync();
};

// motion latent for a rendered sequence at the model's motion canvas
LatentGrid<float> motion_frames_to_latent(const std::vector<Image>& frames, int patch);
// parse decoded motion frames into a MotionSequence document
motion::MotionSequence parse_decoded_motion(const std::vector<Image>& frames,
                                            const std::string& command, const std::string& task,
                                            int fps);

}  // namespace duet
