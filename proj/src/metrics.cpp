#include "vc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "json.hpp"
#include "vc/rng.hpp"

namespace vc {

namespace {

constexpr int kGrid = 16;
constexpr int kFeatDim = 128;

// one fixed projection for the life of the process, seeded by a constant so
// every run and every machine scores videos identically
const std::vector<double>& projection() {
    static const std::vector<double> p = [] {
        Rng rng(90210);
        std::vector<double> m((size_t)kFeatDim * kGrid * kGrid);
        const double scale = 1.0 / std::sqrt((double)kGrid * kGrid);
        for (double& v : m) v = rng.gaussian() * scale;
        return m;
    }();
    return p;
}

double luminance(const float* px) { return 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]; }

} // namespace

std::vector<double> metric_frame_feature(const VideoClip& v, int frame) {
    if (frame < 0 || frame >= v.frames)
        throw std::invalid_argument("metric: frame " + std::to_string(frame) + " outside clip");
    if (v.height < kGrid || v.width < kGrid)
        throw std::invalid_argument("metric: frames must be at least 16x16, got " + std::to_string(v.height) + "x" +
                                    std::to_string(v.width));
    const int H = v.height, W = v.width;
    const float* p = v.frame(frame);

    // box means over an integer partition of the frame into a 16x16 grid
    std::vector<double> grid((size_t)kGrid * kGrid);
    for (int gy = 0; gy < kGrid; gy++) {
        const int y0 = gy * H / kGrid, y1 = (gy + 1) * H / kGrid;
        for (int gx = 0; gx < kGrid; gx++) {
            const int x0 = gx * W / kGrid, x1 = (gx + 1) * W / kGrid;
            double sum = 0;
            for (int y = y0; y < y1; y++)
                for (int x = x0; x < x1; x++) sum += luminance(p + ((size_t)y * W + x) * 3);
            grid[(size_t)gy * kGrid + gx] = sum / ((double)(y1 - y0) * (x1 - x0));
        }
    }

    // drop the frame's mean brightness: correlation should come from
    // structure, not from every luminance being nonnegative
    double mean = 0;
    for (double g : grid) mean += g;
    mean /= (double)grid.size();
    for (double& g : grid) g -= mean;

    const auto& P = projection();
    std::vector<double> feat(kFeatDim, 0.0);
    for (int d = 0; d < kFeatDim; d++) {
        const double* row = P.data() + (size_t)d * kGrid * kGrid;
        double acc = 0;
        for (size_t i = 0; i < grid.size(); i++) acc += row[i] * grid[i];
        feat[d] = acc;
    }
    return feat;
}

double frame_consistency(const VideoClip& v) {
    if (v.frames < 2)
        throw std::invalid_argument("metric: frame consistency needs at least 2 frames, got " +
                                    std::to_string(v.frames));
    const size_t plane = (size_t)v.height * v.width * 3;
    std::vector<double> prev = metric_frame_feature(v, 0);
    double total = 0;
    for (int f = 1; f < v.frames; f++) {
        std::vector<double> cur = metric_frame_feature(v, f);
        if (std::memcmp(v.frame(f - 1), v.frame(f), plane * sizeof(float)) == 0) {
            total += 1.0;  // identical frames score 1 exactly, no rounding
        } else {
            double dot = 0, na = 0, nb = 0;
            for (int d = 0; d < kFeatDim; d++) {
                dot += prev[d] * cur[d];
                na += prev[d] * prev[d];
                nb += cur[d] * cur[d];
            }
            // a zero feature has no direction; call it orthogonal to everything
            total += (na == 0.0 || nb == 0.0) ? 0.0 : dot / std::sqrt(na * nb);
        }
        prev = std::move(cur);
    }
    return total / (v.frames - 1);
}

double end_point_error(const std::vector<FlowField>& pred, const std::vector<FlowField>& gt) {
    if (pred.empty() || pred.size() != gt.size())
        throw std::invalid_argument("metric: flow shapes do not match");
    double sum = 0;
    size_t count = 0;
    for (size_t f = 0; f < pred.size(); f++) {
        const FlowField& a = pred[f];
        const FlowField& b = gt[f];
        if (a.height != b.height || a.width != b.width)
            throw std::invalid_argument("metric: flow shapes do not match");
        for (size_t i = 0; i < a.dx.size(); i++) {
            const double ddx = (double)a.dx[i] - b.dx[i];
            const double ddy = (double)a.dy[i] - b.dy[i];
            sum += std::sqrt(ddx * ddx + ddy * ddy);
        }
        count += a.dx.size();
    }
    return sum / (double)count;
}

Interval bootstrap_ci(const std::vector<double>& values, int resamples, double coverage, uint64_t seed) {
    if (values.empty()) throw std::invalid_argument("metric: no samples to bootstrap");
    if (resamples < 1) throw std::invalid_argument("metric: resamples must be >= 1");
    if (!(coverage > 0.0 && coverage < 1.0)) throw std::invalid_argument("metric: coverage must lie in (0,1)");
    const size_t n = values.size();
    Rng rng(seed);
    std::vector<double> means((size_t)resamples);
    for (int r = 0; r < resamples; r++) {
        double acc = 0;
        for (size_t i = 0; i < n; i++) acc += values[rng.uniform_int(0, (int64_t)n - 1)];
        means[r] = acc / (double)n;
    }
    std::sort(means.begin(), means.end());
    const double alpha = (1.0 - coverage) / 2.0;
    auto rank = [&](double q) { return means[(size_t)std::llround(q * (resamples - 1))]; };
    return {rank(alpha), rank(1.0 - alpha)};
}

std::string fnv1a_hex(const std::string& text) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return buf;
}

std::string report_table(const EvalReport& report) {
    std::ostringstream out;
    out << "config " << report.config_hash << "  revision " << report.revision << "\n";
    out << "config                          n   frame-consistency        end-point-error\n";
    for (const EvalRow& r : report.rows) {
        char line[160];
        if (!r.error.empty()) {
            std::snprintf(line, sizeof line, "%-30s  --  %s", r.name.c_str(), r.error.c_str());
        } else {
            std::snprintf(line, sizeof line, "%-30s %3d   %.4f [%.4f,%.4f]   %.4f [%.4f,%.4f]", r.name.c_str(),
                          r.samples, r.fc_mean, r.fc_lo, r.fc_hi, r.epe_mean, r.epe_lo, r.epe_hi);
        }
        out << line << "\n";
    }
    return out.str();
}

std::string report_jsonl(const EvalReport& report) {
    std::ostringstream out;
    for (const EvalRow& r : report.rows) {
        nlohmann::json j;
        j["config_hash"] = report.config_hash;
        j["revision"] = report.revision;
        j["name"] = r.name;
        if (r.error.empty()) {
            j["samples"] = r.samples;
            j["seeds"] = r.seeds;
            j["fc_mean"] = r.fc_mean;
            j["fc_lo"] = r.fc_lo;
            j["fc_hi"] = r.fc_hi;
            j["epe_mean"] = r.epe_mean;
            j["epe_lo"] = r.epe_lo;
            j["epe_hi"] = r.epe_hi;
        } else {
            j["error"] = r.error;
        }
        out << j.dump() << "\n";
    }
    return out.str();
}

} // namespace vc
