#ifndef VC_METRICS_HPP
#define VC_METRICS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "vc/conditions.hpp"
#include "vc/video.hpp"

namespace vc {

// Fixed substitute for an image-embedding similarity: 16x16 box-downsampled
// luminance, mean-centered, projected by a seeded random matrix to 128 dims,
// then the mean cosine over adjacent frame pairs. Bitwise-identical frames
// score exactly 1; uniform or white-noise frames carry no shared structure
// and score near 0.

double frame_consistency(const VideoClip& v);

// the per-frame feature vector behind frame_consistency, exposed so tests
// can construct frames with chosen feature geometry
std::vector<double> metric_frame_feature(const VideoClip& v, int frame);

// mean over all pixels and transitions of the Euclidean distance between
// predicted and ground-truth displacement
double end_point_error(const std::vector<FlowField>& pred, const std::vector<FlowField>& gt);

// percentile bootstrap: resample the values with replacement `resamples`
// times, take the mean of each resample, sort, and read the interval off
// the nearest-rank quantiles of the resample means
struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double half_width() const { return (hi - lo) / 2.0; }
};
Interval bootstrap_ci(const std::vector<double>& values, int resamples = 1000, double coverage = 0.9,
                      uint64_t seed = 1);

struct EvalRow {
    std::string name;
    int samples = 0;
    std::vector<uint64_t> seeds;
    double fc_mean = 0, fc_lo = 0, fc_hi = 0;
    double epe_mean = 0, epe_lo = 0, epe_hi = 0;
    std::string error;  // nonempty: the row could not run (and the numbers are meaningless)
};

struct EvalReport {
    std::string config_hash;
    std::string revision;
    std::vector<EvalRow> rows;
};

std::string fnv1a_hex(const std::string& text);  // stable config fingerprint
std::string report_table(const EvalReport& report);
std::string report_jsonl(const EvalReport& report);

} // namespace vc

#endif
