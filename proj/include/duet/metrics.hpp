#pragma once

// Computable evaluation metrics over motion documents and rendered frames,
// plus the subprocess protocol for plugging in external scorers. A metric that
// cannot be computed reports itself unavailable; it never degrades to 0.

#include <map>
#include <string>
#include <vector>

#include "duet/image.hpp"
#include "duet/motion.hpp"

namespace duet::metrics {

struct MetricValue {
    double value = 0.0;
    bool available = false;
    std::string note;  // reason when unavailable, context otherwise

    static MetricValue ok(double v, std::string n = "") { return {v, true, std::move(n)}; }
    static MetricValue missing(std::string n) { return {0.0, false, std::move(n)}; }
};

// Fraction of interaction-window frames with a hand keypoint inside the target
// box, within a margin of eps_px (measured on a 64-px canvas and scaled
// linearly with resolution). Window is [begin, end).
MetricValue pixel_interaction(const motion::MotionSequence& seq, const std::string& target_class,
                              int window_begin, int window_end, float eps_px = 2.0f);

// Mean absolute per-pixel temporal difference, normalized by the value range.
MetricValue dynamic_degree(const std::vector<Image>& frames);

// Variance of the discrete 4-neighbor Laplacian of the grayscale image inside
// the pixel region [x0,x1) x [y0,y1), averaged over frames. An empty region
// (no interior pixels) is a contract violation.
MetricValue laplacian_sharpness(const std::vector<Image>& frames, int x0, int y0, int x1, int y1);

// Mean L2 distance, in pixels at the frame resolution, between box centers
// parsed from rendered frames and the driving document's box centers. More
// than 20% unmatched boxes marks the metric unavailable.
MetricValue box_tracking_error(const std::vector<Image>& frames,
                               const motion::MotionSequence& driving);

// External adapter: `command` runs under the shell with the request document
// on stdin and must print {"score": <number>, "note": <optional>} on stdout.
// Failures (spawn, exit status, malformed reply) come back unavailable.
MetricValue run_external_metric(const std::string& command, const std::string& request_json);

struct MetricReport {
    std::map<std::string, MetricValue> entries;

    void add(const std::string& name, MetricValue v) { entries[name] = std::move(v); }
    std::string to_json() const;
    std::string to_table() const;  // aligned text, explicit n/a markers
};

MetricReport report_from_json(const std::string& text);

}  // namespace duet::metrics
