#include "duet/metrics.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "duet/common.hpp"

namespace duet::metrics {

using nlohmann::json;

MetricValue pixel_interaction(const motion::MotionSequence& seq, const std::string& target_class,
                              int window_begin, int window_end, float eps_px) {
    DUET_CHECK(window_begin >= 0 && window_end > window_begin && window_end <= seq.length(),
               "pixel_interaction: invalid interaction window");
    DUET_CHECK(motion::class_id(target_class) >= 0,
               "pixel_interaction: unknown target class '" + target_class + "'");
    float eps = eps_px / 63.0f;  // margin defined at 64 px, normalized coords scale it
    int hit = 0;
    for (int f = window_begin; f < window_end; f++) {
        const motion::ObjectBox* tb = nullptr;
        for (const auto& b : seq.objects[static_cast<size_t>(f)].boxes)
            if (b.present && b.cls == target_class) tb = &b;
        if (!tb) continue;
        const auto& pose = seq.poses[static_cast<size_t>(f)];
        for (int wrist : {static_cast<int>(motion::J_LWRI), static_cast<int>(motion::J_RWRI)}) {
            if (!pose.visible[wrist]) continue;
            float x = pose.xy[2 * wrist], y = pose.xy[2 * wrist + 1];
            if (x >= tb->x_min - eps && x <= tb->x_max + eps && y >= tb->y_min - eps &&
                y <= tb->y_max + eps) {
                hit++;
                break;
            }
        }
    }
    return MetricValue::ok(static_cast<double>(hit) / (window_end - window_begin));
}

MetricValue dynamic_degree(const std::vector<Image>& frames) {
    DUET_CHECK(frames.size() >= 2, "dynamic_degree needs at least two frames");
    double acc = 0.0;
    size_t n = 0;
    for (size_t f = 1; f < frames.size(); f++) {
        const Image& a = frames[f - 1];
        const Image& b = frames[f];
        DUET_CHECK(a.h == b.h && a.w == b.w, "dynamic_degree: frame size mismatch");
        for (size_t i = 0; i < a.px.size(); i++)
            acc += std::abs(static_cast<double>(a.px[i]) - static_cast<double>(b.px[i]));
        n += a.px.size();
    }
    return MetricValue::ok(acc / (255.0 * static_cast<double>(n)));
}

MetricValue laplacian_sharpness(const std::vector<Image>& frames, int x0, int y0, int x1, int y1) {
    DUET_CHECK(!frames.empty(), "laplacian_sharpness: no frames");
    double per_frame_acc = 0.0;
    for (const Image& im : frames) {
        int ix0 = std::max(x0, 1), iy0 = std::max(y0, 1);
        int ix1 = std::min(x1, im.w - 1), iy1 = std::min(y1, im.h - 1);
        DUET_CHECK(ix1 > ix0 && iy1 > iy0,
                   "laplacian_sharpness: region has no interior pixels");
        auto gray = [&](int y, int x) {
            const uint8_t* p = im.at(y, x);
            return (static_cast<double>(p[0]) + p[1] + p[2]) / 3.0;
        };
        double sum = 0.0, sq = 0.0;
        int n = 0;
        for (int y = iy0; y < iy1; y++)
            for (int x = ix0; x < ix1; x++) {
                double l = 4.0 * gray(y, x) - gray(y - 1, x) - gray(y + 1, x) - gray(y, x - 1) -
                           gray(y, x + 1);
                sum += l;
                sq += l * l;
                n++;
            }
        double mean = sum / n;
        per_frame_acc += sq / n - mean * mean;
    }
    return MetricValue::ok(per_frame_acc / static_cast<double>(frames.size()));
}

MetricValue box_tracking_error(const std::vector<Image>& frames,
                               const motion::MotionSequence& driving) {
    DUET_CHECK(static_cast<int>(frames.size()) == driving.length(),
               "box_tracking_error: frame/document length mismatch");
    DUET_CHECK(!frames.empty(), "box_tracking_error: no frames");
    int expected = 0, matched = 0;
    double acc = 0.0;
    for (int f = 0; f < driving.length(); f++) {
        const Image& im = frames[static_cast<size_t>(f)];
        float scale = static_cast<float>(std::max(im.h, im.w) - 1);
        motion::ParsedFrame pf = motion::parse_motion_frame(im);
        for (const auto& b : driving.objects[static_cast<size_t>(f)].boxes) {
            if (!b.present) continue;
            expected++;
            int cls = motion::class_id(b.cls);
            const motion::ParsedFrame::Box* hit = nullptr;
            for (const auto& pb : pf.boxes)
                if (pb.cls == cls) hit = &pb;
            if (!hit) continue;
            matched++;
            float dx = (hit->cx - b.cx()) * scale;
            float dy = (hit->cy - b.cy()) * scale;
            acc += std::sqrt(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy);
        }
    }
    if (expected == 0) return MetricValue::missing("driving document contains no boxes");
    double miss_frac = 1.0 - static_cast<double>(matched) / expected;
    if (miss_frac > 0.20) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "parse failure rate %.0f%% exceeds 20%%",
                      100.0 * miss_frac);
        return MetricValue::missing(buf);
    }
    return MetricValue::ok(acc / matched,
                           "matched " + std::to_string(matched) + "/" + std::to_string(expected));
}

MetricValue run_external_metric(const std::string& command, const std::string& request_json) {
    std::string req_path = "/tmp/duet_metric_req_" + std::to_string(::getpid()) + "_" +
                           std::to_string(reinterpret_cast<uintptr_t>(&command) & 0xffff) +
                           ".json";
    write_text_file(req_path, request_json);
    std::string full = command + " < " + req_path;
    FILE* pipe = ::popen(full.c_str(), "r");
    if (!pipe) {
        std::remove(req_path.c_str());
        return MetricValue::missing("failed to spawn adapter: " + command);
    }
    std::string out;
    char buf[4096];
    size_t got;
    while ((got = std::fread(buf, 1, sizeof(buf), pipe)) > 0) out.append(buf, got);
    int rc = ::pclose(pipe);
    std::remove(req_path.c_str());
    if (rc != 0)
        return MetricValue::missing("adapter exited with status " + std::to_string(rc));
    try {
        json j = json::parse(out);
        MetricValue v = MetricValue::ok(j.at("score").get<double>());
        if (j.contains("note")) v.note = j.at("note").get<std::string>();
        return v;
    } catch (const json::exception& e) {
        return MetricValue::missing(std::string("adapter reply was not a score document: ") +
                                    e.what());
    }
}

std::string MetricReport::to_json() const {
    json j;
    j["schema_version"] = 1;
    json m = json::object();
    for (const auto& [name, v] : entries) {
        json e;
        e["available"] = v.available;
        if (v.available) e["value"] = v.value;
        if (!v.note.empty()) e["note"] = v.note;
        m[name] = e;
    }
    j["metrics"] = m;
    return j.dump(2);
}

std::string MetricReport::to_table() const {
    size_t w = 6;
    for (const auto& [name, v] : entries) w = std::max(w, name.size());
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-*s  %10s  %s\n", static_cast<int>(w), "metric", "value",
                  "note");
    out += line;
    out += std::string(w + 2 + 10 + 2 + 4, '-') + "\n";
    for (const auto& [name, v] : entries) {
        if (v.available)
            std::snprintf(line, sizeof(line), "%-*s  %10.4f  %s\n", static_cast<int>(w),
                          name.c_str(), v.value, v.note.c_str());
        else
            std::snprintf(line, sizeof(line), "%-*s  %10s  %s\n", static_cast<int>(w),
                          name.c_str(), "n/a", v.note.c_str());
        out += line;
    }
    return out;
}

MetricReport report_from_json(const std::string& text) {
    try {
        json j = json::parse(text);
        DUET_REQUIRE(j.at("schema_version").get<int>() == 1, "unsupported report schema");
        MetricReport r;
        for (const auto& [name, e] : j.at("metrics").items()) {
            MetricValue v;
            v.available = e.at("available").get<bool>();
            if (v.available) v.value = e.at("value").get<double>();
            if (e.contains("note")) v.note = e.at("note").get<std::string>();
            r.entries[name] = v;
        }
        return r;
    } catch (const json::exception& e) {
        throw runtime_failure(std::string("metric report parse error: ") + e.what());
    }
}

}  // namespace duet::metrics
