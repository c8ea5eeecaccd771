#include "duet/config.hpp"

#include <json.hpp>

namespace duet {

using json = nlohmann::json;

namespace {

// one list of field bindings serves both directions
template <class C, class F>
void for_each_field(C& c, F&& f) {
    f("layers", c.layers);
    f("video_layers", c.video_layers);
    f("motion_width", c.motion_width);
    f("motion_heads", c.motion_heads);
    f("video_width", c.video_width);
    f("video_heads", c.video_heads);
    f("patch", c.patch);
    f("motion_canvas", c.motion_canvas);
    f("video_canvas", c.video_canvas);
    f("audio_dim", c.audio_dim);
    f("audio_rate", c.audio_rate);
    f("fps", c.fps);
    f("frames", c.frames);
    f("pim_cont", c.pim_cont);
    f("pim_perc", c.pim_perc);
    f("pim_det", c.pim_det);
    f("joint_audio", c.joint_audio);
    f("joint_driven", c.joint_driven);
    f("joint_gen", c.joint_gen);
    f("i2v_weight", c.i2v_weight);
    f("audio_stage_i2v", c.audio_stage_i2v);
    f("stage1_steps", c.stage1_steps);
    f("stage2_steps", c.stage2_steps);
    f("stage3_steps", c.stage3_steps);
    f("stage1_lr", c.stage1_lr);
    f("stage2_lr", c.stage2_lr);
    f("stage3_lr", c.stage3_lr);
    f("batch", c.batch);
    f("adam_b1", c.adam_b1);
    f("adam_b2", c.adam_b2);
    f("adam_eps", c.adam_eps);
    f("sample_steps", c.sample_steps);
    f("seed", c.seed);
    f("dataset_dir", c.dataset_dir);
    f("out_dir", c.out_dir);
}

}  // namespace

std::string config_to_json(const RunConfig& c) {
    json j;
    j["schema_version"] = c.schema_version;
    for_each_field(const_cast<RunConfig&>(c),
                   [&](const char* name, auto& field) { j[name] = field; });
    return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw runtime_failure(std::string("config parse error: ") + e.what());
    }
    DUET_REQUIRE(j.value("schema_version", -1) == RunConfig{}.schema_version,
                 "unsupported config schema_version");
    RunConfig c;
    try {
        for_each_field(c, [&](const char* name, auto& field) {
            if (j.contains(name)) field = j.at(name).get<std::decay_t<decltype(field)>>();
        });
    } catch (const json::exception& e) {
        throw runtime_failure(std::string("config field error: ") + e.what());
    }
    return c;
}

void save_config(const std::string& path, const RunConfig& c) {
    write_text_file(path, config_to_json(c));
}

RunConfig load_config(const std::string& path) { return config_from_json(read_text_file(path)); }

}  // namespace duet
