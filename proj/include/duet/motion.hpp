#pragma once

// Motion representation: skeletal keypoints + object box trajectories, their
// deterministic RGB rasterization, and the color-classifying parser that
// recovers keypoints/boxes from rendered (or generated) frames. The parser is
// the measurement oracle for rendering fidelity and for grounding metrics on
// model outputs.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "duet/image.hpp"

namespace duet::motion {

constexpr int kJoints = 13;
constexpr int kBones = 12;

// joint order: head, neck, l/r shoulder, l/r elbow, l/r wrist, hip,
// l/r knee, l/r ankle
enum Joint {
    J_HEAD = 0, J_NECK, J_LSHO, J_RSHO, J_LELB, J_RELB, J_LWRI, J_RWRI,
    J_HIP, J_LKNE, J_RKNE, J_LANK, J_RANK
};

extern const std::array<std::pair<int, int>, kBones> kBonePairs;

struct Rgb {
    uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

// Fixed palette: every joint, bone, and object class renders in its own color,
// chosen max-min-distance apart in RGB so nearest-color classification is
// robust to generation noise. Object classes keep human-readable color names
// because commands mention them.
struct Palette {
    std::array<Rgb, kJoints> joint;
    std::array<Rgb, kBones> bone;
    std::vector<Rgb> object;             // indexed by class id
    std::vector<std::string> class_name; // "red box", ...
};
const Palette& palette();

int class_id(const std::string& name);  // -1 if unknown

struct PoseFrame {
    std::array<float, 2 * kJoints> xy{};  // normalized [0,1], (x,y) pairs
    std::array<bool, kJoints> visible{};
};

struct ObjectBox {
    int id = 0;
    std::string cls;
    float x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // normalized
    bool present = true;

    float cx() const { return 0.5f * (x_min + x_max); }
    float cy() const { return 0.5f * (y_min + y_max); }
};

struct ObjectBoxFrame {
    std::vector<ObjectBox> boxes;
};

struct MotionSequence {
    int fps = 8;
    int canvas = 256;  // short side of the stored render
    std::string command;
    std::string task;  // "ACTION" | "HOI"
    std::vector<PoseFrame> poses;
    std::vector<ObjectBoxFrame> objects;
    std::vector<Image> rendered;

    int length() const { return static_cast<int>(poses.size()); }
};

// Deterministic rasterization at the given square canvas. Keypoints outside
// [0,1] are clamped (flagged via the optional warning counter); degenerate
// boxes are a contract error.
Image render_motion_frame(const PoseFrame& pose, const ObjectBoxFrame& objs, int canvas,
                          int* clamp_warnings = nullptr);
std::vector<Image> render_motion(const std::vector<PoseFrame>& poses,
                                 const std::vector<ObjectBoxFrame>& objects, int canvas,
                                 int* clamp_warnings = nullptr);

// Parsed estimate of one frame's content, normalized coordinates.
struct ParsedFrame {
    std::array<float, 2 * kJoints> joint_xy{};
    std::array<bool, kJoints> joint_found{};
    struct Box {
        int cls = -1;
        float x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // extent estimate
        float cx = 0, cy = 0;                              // centroid estimate (blur-robust)
        int pixel_count = 0;
    };
    std::vector<Box> boxes;  // one per detected class
};

// Nearest-palette-color classification after per-channel median subtraction
// (so constant per-frame brightness offsets cancel). Joints come back as
// weighted centroids, boxes as trimmed-percentile extents plus centroids.
ParsedFrame parse_motion_frame(const Image& img);
std::vector<ParsedFrame> parse_motion(const std::vector<Image>& frames);

// Task conditioning: closed-vocabulary token ids for a command plus the task
// token appended by the embedding stage.
struct TaskConditioning {
    std::vector<int> text_ids;
    int task_id = 0;  // 0 ACTION, 1 HOI
};

const std::vector<std::string>& vocabulary();
std::vector<int> tokenize(const std::string& command);  // throws on OOV
TaskConditioning build_conditioning(const std::string& command, const std::string& task);

// Motion document: JSON clip description (fps, canvas, command/task, per-frame
// keypoints and box records). Rendered frames are not stored; the rasterizer
// regenerates them. Stored fields round-trip exactly.
std::string motion_doc_to_json(const MotionSequence& seq);
MotionSequence motion_doc_from_json(const std::string& text);
void save_motion_doc(const std::string& path, const MotionSequence& seq);
MotionSequence load_motion_doc(const std::string& path);

}  // namespace duet::motion
