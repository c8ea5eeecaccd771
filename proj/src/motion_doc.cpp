#include "duet/motion.hpp"

#include <json.hpp>

namespace duet::motion {

using json = nlohmann::json;

static constexpr int kMotionDocSchema = 1;

std::string motion_doc_to_json(const MotionSequence& seq) {
    DUET_CHECK(seq.poses.size() == seq.objects.size(), "pose/object frame count mismatch");
    json doc;
    doc["schema_version"] = kMotionDocSchema;
    doc["fps"] = seq.fps;
    doc["canvas"] = seq.canvas;
    doc["command"] = seq.command;
    doc["task"] = seq.task;
    json frames = json::array();
    for (size_t f = 0; f < seq.poses.size(); f++) {
        const PoseFrame& p = seq.poses[f];
        json jf;
        jf["keypoints"] = std::vector<float>(p.xy.begin(), p.xy.end());
        jf["visible"] = std::vector<bool>(p.visible.begin(), p.visible.end());
        json boxes = json::array();
        for (const ObjectBox& b : seq.objects[f].boxes) {
            boxes.push_back({{"id", b.id},
                             {"class", b.cls},
                             {"corners", {b.x_min, b.y_min, b.x_max, b.y_max}},
                             {"present", b.present}});
        }
        jf["boxes"] = std::move(boxes);
        frames.push_back(std::move(jf));
    }
    doc["frames"] = std::move(frames);
    return doc.dump(2);
}

MotionSequence motion_doc_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw runtime_failure(std::string("motion document parse error: ") + e.what());
    }
    DUET_REQUIRE(doc.value("schema_version", -1) == kMotionDocSchema,
                 "unsupported motion document schema_version");
    MotionSequence seq;
    try {
        seq.fps = doc.at("fps").get<int>();
        seq.canvas = doc.at("canvas").get<int>();
        seq.command = doc.at("command").get<std::string>();
        seq.task = doc.at("task").get<std::string>();
        for (const json& jf : doc.at("frames")) {
            PoseFrame p;
            auto kp = jf.at("keypoints").get<std::vector<float>>();
            auto vis = jf.at("visible").get<std::vector<bool>>();
            DUET_REQUIRE(kp.size() == p.xy.size() && vis.size() == p.visible.size(),
                         "motion document keypoint arity mismatch");
            std::copy(kp.begin(), kp.end(), p.xy.begin());
            std::copy(vis.begin(), vis.end(), p.visible.begin());
            ObjectBoxFrame of;
            for (const json& jb : jf.at("boxes")) {
                ObjectBox b;
                b.id = jb.at("id").get<int>();
                b.cls = jb.at("class").get<std::string>();
                auto c = jb.at("corners").get<std::vector<float>>();
                DUET_REQUIRE(c.size() == 4, "box corners must have 4 entries");
                b.x_min = c[0];
                b.y_min = c[1];
                b.x_max = c[2];
                b.y_max = c[3];
                b.present = jb.at("present").get<bool>();
                of.boxes.push_back(std::move(b));
            }
            seq.poses.push_back(p);
            seq.objects.push_back(std::move(of));
        }
    } catch (const json::exception& e) {
        throw runtime_failure(std::string("motion document field error: ") + e.what());
    }
    DUET_REQUIRE(seq.fps > 0 && seq.canvas >= 16, "motion document has invalid fps/canvas");
    return seq;
}

void save_motion_doc(const std::string& path, const MotionSequence& seq) {
    write_text_file(path, motion_doc_to_json(seq));
}

MotionSequence load_motion_doc(const std::string& path) {
    return motion_doc_from_json(read_text_file(path));
}

}  // namespace duet::motion
