#pragma once

// Procedural stick-figure world: scripted episodes pairing a text command with
// a motion document, rendered video frames, pseudo-speech audio, and a face
// mask. Command/layout combinations are dealt disjointly across splits so
// held-out episodes are novel pairings of known pieces.

#include <string>
#include <vector>

#include "duet/audio.hpp"
#include "duet/image.hpp"
#include "duet/motion.hpp"
#include "duet/streams.hpp"

namespace duet::world {

constexpr float kFloorY = 0.8f;       // scene floor line, normalized
constexpr float kHeadRadius = 0.08f;  // actor head disc radius, normalized
constexpr int kDocCanvas = 256;       // canvas recorded in motion documents
constexpr int kLayouts = 24;          // 8 position slots x 1..3 objects

struct SceneObject {
    int id = 0;
    int cls = 0;        // palette object class
    float half = 0.0f;  // half side length, normalized
    float cx = 0.0f, cy = 0.0f;  // initial center
};

struct EpisodeSpec {
    int command_id = 0;
    int layout_id = 0;
    std::string split;  // train | val | test
    std::string command;
    std::string task;  // ACTION | HOI
    int frames = 8, fps = 8;
    int video_canvas = 64;
    int target = -1;  // index into objects; -1 for ACTION episodes
    int window_begin = 0, window_end = 0;  // interaction frames [begin, end)
    std::vector<SceneObject> objects;
    std::vector<float> envelope;  // per-frame loudness in [0.1, 1]
    uint64_t seed = 0;
};

// the full command inventory; id = index into this list
const std::vector<std::pair<std::string, std::string>>& command_list();  // (command, task)

EpisodeSpec make_spec(int command_id, int layout_id, int frames, int fps, int video_canvas,
                      uint64_t seed, const std::string& split);

// deterministic keyframe script: idle, reach, interact; HOI commands end with
// the acting wrist on the target box (object follows the hand after grasp),
// pure actions leave every box static
motion::MotionSequence script_motion(const EpisodeSpec& spec);

// scene rendering at the video canvas: background, floor, filled boxes,
// skin-toned actor, head disc, mouth bar scaled by the loudness envelope
Image render_scene_frame(const EpisodeSpec& spec, const motion::PoseFrame& pose,
                         const motion::ObjectBoxFrame& objs, float envelope, int canvas);
std::vector<Image> render_video(const EpisodeSpec& spec, const motion::MotionSequence& seq,
                                int canvas);

// white noise -> 8-tap moving average -> per-frame gain so that the stepwise
// loudness (2 * mean |x|) reproduces the envelope
audio::AudioTrack synth_audio(const EpisodeSpec& spec, int rate);

// per-patch coverage of the head disc, derived from the motion document
FaceMask face_mask_from_motion(const motion::MotionSequence& seq, int canvas, int patch);

std::string spec_to_json(const EpisodeSpec& spec);
EpisodeSpec spec_from_json(const std::string& text);

struct DatasetSummary {
    std::string manifest_hash;
    int n_train = 0, n_val = 0, n_test = 0;
    std::string dir;
};

// writes episode directories (scene.json, motion.json, audio.wav, frame PPMs)
// plus a hashed manifest; identical arguments produce an identical manifest hash
DatasetSummary build_dataset(const std::string& dir, int episodes, int frames, int fps,
                             int video_canvas, int audio_rate, uint64_t seed);

struct Episode {
    EpisodeSpec spec;
    motion::MotionSequence motion;  // document canvas (256)
    std::vector<Image> video;       // stored video frames
    audio::AudioTrack audio;
};

Episode load_episode(const std::string& episode_dir);
// episode directory names for one split, in manifest order
std::vector<std::string> list_split(const std::string& dataset_dir, const std::string& split);

}  // namespace duet::world
