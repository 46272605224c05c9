#include "vc/conditions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace vc {

std::vector<int> luma_plane(const VideoClip& v, int frame) {
    std::vector<int> out((size_t)v.height * v.width);
    const float* p = v.frame(frame);
    for (size_t i = 0; i < out.size(); i++) {
        float y = luminance(p[i * 3], p[i * 3 + 1], p[i * 3 + 2]);
        out[i] = (int)std::lround(255.0f * y);
    }
    return out;
}

namespace {
// (SAD, dx*dx + dy*dy, dy, dx) as one comparable key
struct MatchKey {
    long long sad;
    int norm2, dy, dx;
    bool operator<(const MatchKey& o) const {
        if (sad != o.sad) return sad < o.sad;
        if (norm2 != o.norm2) return norm2 < o.norm2;
        if (dy != o.dy) return dy < o.dy;
        return dx < o.dx;
    }
};
} // namespace

BlockField match_blocks(const VideoClip& v, int prev, int next, MatchParams p) {
    if (prev < 0 || prev >= v.frames || next < 0 || next >= v.frames)
        throw std::invalid_argument("match: frame index out of range");
    if (p.block < 1 || v.height % p.block != 0 || v.width % p.block != 0)
        throw std::invalid_argument("match: " + std::to_string(v.height) + "x" + std::to_string(v.width) +
                                    " not divisible into " + std::to_string(p.block) + "-blocks");
    if (p.range < 1) throw std::invalid_argument("match: search range must be >= 1");

    const int H = v.height, W = v.width, B = p.block;
    std::vector<int> a = luma_plane(v, prev), b = luma_plane(v, next);
    BlockField bf;
    bf.block = B;
    bf.grid_h = H / B;
    bf.grid_w = W / B;
    bf.dx.assign((size_t)bf.grid_h * bf.grid_w, 0);
    bf.dy.assign((size_t)bf.grid_h * bf.grid_w, 0);

    for (int by = 0; by < bf.grid_h; by++)
        for (int bx = 0; bx < bf.grid_w; bx++) {
            const int y0 = by * B, x0 = bx * B;
            MatchKey best{-1, 0, 0, 0};
            for (int dy = -p.range; dy <= p.range; dy++) {
                if (y0 + dy < 0 || y0 + dy + B > H) continue;
                for (int dx = -p.range; dx <= p.range; dx++) {
                    if (x0 + dx < 0 || x0 + dx + B > W) continue;
                    long long sad = 0;
                    for (int y = 0; y < B; y++) {
                        const int* ra = a.data() + (size_t)(y0 + y) * W + x0;
                        const int* rb = b.data() + (size_t)(y0 + dy + y) * W + x0 + dx;
                        for (int x = 0; x < B; x++) sad += std::abs(ra[x] - rb[x]);
                    }
                    MatchKey k{sad, dx * dx + dy * dy, dy, dx};
                    if (best.sad < 0 || k < best) best = k;
                }
            }
            bf.dx[(size_t)by * bf.grid_w + bx] = best.dx;
            bf.dy[(size_t)by * bf.grid_w + bx] = best.dy;
        }
    return bf;
}

FlowField densify_motion(const BlockField& bf) {
    if (bf.block < 1 || bf.grid_h < 1 || bf.grid_w < 1) throw std::invalid_argument("densify: empty block grid");
    FlowField f = FlowField::zero(bf.grid_h * bf.block, bf.grid_w * bf.block);
    for (int y = 0; y < f.height; y++)
        for (int x = 0; x < f.width; x++) {
            size_t bi = (size_t)(y / bf.block) * bf.grid_w + x / bf.block;
            f.dx[(size_t)y * f.width + x] = (float)bf.dx[bi];
            f.dy[(size_t)y * f.width + x] = (float)bf.dy[bi];
        }
    return f;
}

std::vector<FlowField> flow_from_video(const VideoClip& v, MatchParams p) {
    if (v.frames < 2) throw std::invalid_argument("flow: need at least 2 frames, got " + std::to_string(v.frames));
    std::vector<FlowField> out;
    out.reserve(v.frames - 1);
    for (int f = 0; f + 1 < v.frames; f++) out.push_back(densify_motion(match_blocks(v, f, f + 1, p)));
    return out;
}

CondSeq motion_condition(const std::vector<FlowField>& transitions, int range) {
    if (transitions.empty()) throw std::invalid_argument("motion: no transitions");
    if (range < 1) throw std::invalid_argument("motion: search range must be >= 1");
    const int H = transitions[0].height, W = transitions[0].width;
    const int F = (int)transitions.size() + 1;
    CondSeq seq;
    seq.channels = 2;
    seq.data.assign((size_t)F * 2 * H * W, 0.f);
    const float s = 1.0f / (float)range;
    for (int f = 1; f < F; f++) {
        const FlowField& t = transitions[f - 1];
        if (t.height != H || t.width != W) throw std::invalid_argument("motion: transition sizes differ");
        float* dx = seq.data.data() + ((size_t)f * 2 + 0) * H * W;
        float* dy = seq.data.data() + ((size_t)f * 2 + 1) * H * W;
        for (size_t i = 0; i < (size_t)H * W; i++) {
            dx[i] = t.dx[i] * s;
            dy[i] = t.dy[i] * s;
        }
    }
    return seq;
}

std::vector<float> extract_sketch(const VideoClip& v, int frame, float threshold) {
    if (!(threshold > 0.f && threshold < 1.f))
        throw std::invalid_argument("sketch: threshold " + std::to_string(threshold) + " outside (0,1)");
    const int H = v.height, W = v.width;
    std::vector<float> luma((size_t)H * W), out((size_t)H * W, 0.f);
    const float* p = v.frame(frame);
    for (size_t i = 0; i < luma.size(); i++) luma[i] = luminance(p[i * 3], p[i * 3 + 1], p[i * 3 + 2]);
    const float inv_sqrt2 = 0.70710678f;
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            float c = luma[(size_t)y * W + x];
            float gx = (x + 1 < W ? luma[(size_t)y * W + x + 1] : c) - c;
            float gy = (y + 1 < H ? luma[(size_t)(y + 1) * W + x] : c) - c;
            float mag = std::sqrt(gx * gx + gy * gy) * inv_sqrt2;
            out[(size_t)y * W + x] = mag >= threshold ? 1.f : 0.f;
        }
    return out;
}

CondSeq sketch_condition(const VideoClip& v, float threshold) {
    CondSeq seq;
    seq.channels = 1;
    seq.data.reserve((size_t)v.frames * v.height * v.width);
    for (int f = 0; f < v.frames; f++) {
        auto s = extract_sketch(v, f, threshold);
        seq.data.insert(seq.data.end(), s.begin(), s.end());
    }
    return seq;
}

CondSeq single_sketch_condition(const VideoClip& v, float threshold) {
    auto s = extract_sketch(v, 0, threshold);
    CondSeq seq;
    seq.channels = 1;
    seq.data.reserve((size_t)v.frames * s.size());
    for (int f = 0; f < v.frames; f++) seq.data.insert(seq.data.end(), s.begin(), s.end());
    return seq;
}

CondSeq image_condition(const VideoClip& v) {
    const int H = v.height, W = v.width;
    CondSeq seq;
    seq.channels = 3;
    seq.data.resize((size_t)v.frames * 3 * H * W);
    for (int f = 0; f < v.frames; f++)
        for (int c = 0; c < 3; c++) {
            float* dst = seq.data.data() + ((size_t)f * 3 + c) * H * W;
            for (int y = 0; y < H; y++)
                for (int x = 0; x < W; x++) dst[(size_t)y * W + x] = 2.f * v.at(0, y, x, c) - 1.f;
        }
    return seq;
}

CondSeq depth_condition(int frames, int height, int width, const std::vector<float>& maps) {
    if ((int64_t)maps.size() != (int64_t)frames * height * width)
        throw std::invalid_argument("depth: got " + std::to_string(maps.size()) + " values for " +
                                    std::to_string(frames) + " frames of " + std::to_string(height) + "x" +
                                    std::to_string(width));
    CondSeq seq;
    seq.channels = 1;
    seq.data = maps;
    return seq;
}

std::vector<unsigned char> make_tube_mask(int height, int width, double ratio, Rng& rng) {
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw std::invalid_argument("mask: ratio " + std::to_string(ratio) + " outside [0,1]");
    const int cell = 8;
    const int gh = (height + cell - 1) / cell, gw = (width + cell - 1) / cell;
    const int cells = gh * gw;
    const int k = (int)std::lround(ratio * cells);
    std::vector<int> order(cells);
    std::iota(order.begin(), order.end(), 0);
    // Fisher-Yates with our own rng so masks reproduce across standard
    // library implementations
    for (int i = cells - 1; i > 0; i--) std::swap(order[i], order[rng.uniform_int(0, i)]);
    std::vector<unsigned char> cellmask(cells, 0);
    for (int i = 0; i < k; i++) cellmask[order[i]] = 1;
    std::vector<unsigned char> mask((size_t)height * width);
    for (int y = 0; y < height; y++)
        for (int x = 0; x < width; x++)
            mask[(size_t)y * width + x] = cellmask[(size_t)(y / cell) * gw + x / cell];
    return mask;
}

CondSeq mask_condition(const VideoClip& v, const std::vector<unsigned char>& mask) {
    const int H = v.height, W = v.width;
    if ((int64_t)mask.size() != (int64_t)H * W)
        throw std::invalid_argument("mask: pattern size " + std::to_string(mask.size()) + " does not match " +
                                    std::to_string(H) + "x" + std::to_string(W));
    CondSeq seq;
    seq.channels = 4;
    seq.data.resize((size_t)v.frames * 4 * H * W);
    for (int f = 0; f < v.frames; f++) {
        for (int c = 0; c < 3; c++) {
            float* dst = seq.data.data() + ((size_t)f * 4 + c) * H * W;
            for (int y = 0; y < H; y++)
                for (int x = 0; x < W; x++) {
                    size_t i = (size_t)y * W + x;
                    dst[i] = mask[i] ? 0.f : 2.f * v.at(f, y, x, c) - 1.f;
                }
        }
        float* dm = seq.data.data() + ((size_t)f * 4 + 3) * H * W;
        for (size_t i = 0; i < (size_t)H * W; i++) dm[i] = (float)mask[i];
    }
    return seq;
}

namespace {
double polyline_length(const std::vector<std::pair<float, float>>& pts) {
    double len = 0;
    for (size_t i = 1; i < pts.size(); i++)
        len += std::hypot((double)pts[i].first - pts[i - 1].first, (double)pts[i].second - pts[i - 1].second);
    return len;
}

// point at arc distance s along the polyline
std::pair<double, double> arc_point(const std::vector<std::pair<float, float>>& pts, double s) {
    for (size_t i = 1; i < pts.size(); i++) {
        double seg = std::hypot((double)pts[i].first - pts[i - 1].first, (double)pts[i].second - pts[i - 1].second);
        if (s <= seg || i + 1 == pts.size()) {
            if (seg == 0) return {pts[i].first, pts[i].second};
            double u = std::min(1.0, s / seg);
            return {pts[i - 1].first + u * (pts[i].first - pts[i - 1].first),
                    pts[i - 1].second + u * (pts[i].second - pts[i - 1].second)};
        }
        s -= seg;
    }
    return {pts[0].first, pts[0].second};
}
} // namespace

std::vector<FlowField> compile_strokes(const StrokeSpec& spec, int frames, int height, int width, int range) {
    if (frames < 2) throw std::invalid_argument("strokes: need at least 2 frames");
    std::vector<FlowField> out;
    out.reserve(frames - 1);
    for (int f = 0; f < frames - 1; f++) out.push_back(FlowField::zero(height, width));

    for (const Stroke& st : spec.strokes) {
        if (st.points.empty()) throw std::invalid_argument("strokes: empty polyline");
        if (st.first_frame < 0 || st.last_frame >= frames || st.first_frame > st.last_frame)
            throw std::invalid_argument("strokes: frame span " + std::to_string(st.first_frame) + ":" +
                                        std::to_string(st.last_frame) + " outside 0:" + std::to_string(frames - 1));
        int span = st.last_frame - st.first_frame;
        if (span == 0) continue;  // a stroke needs at least one transition to move anything
        double len = polyline_length(st.points);
        for (int f = st.first_frame; f < st.last_frame; f++) {
            double s0 = len * (f - st.first_frame) / span;
            double s1 = len * (f + 1 - st.first_frame) / span;
            auto p0 = arc_point(st.points, s0);
            auto p1 = arc_point(st.points, s1);
            float ddx = std::clamp((float)(p1.first - p0.first), (float)-range, (float)range);
            float ddy = std::clamp((float)(p1.second - p0.second), (float)-range, (float)range);
            FlowField& field = out[f];  // transition f -> f+1, anchored at the frame-f position
            int ylo = std::max(0, (int)std::floor(p0.second - st.radius));
            int yhi = std::min(height - 1, (int)std::ceil(p0.second + st.radius));
            int xlo = std::max(0, (int)std::floor(p0.first - st.radius));
            int xhi = std::min(width - 1, (int)std::ceil(p0.first + st.radius));
            for (int y = ylo; y <= yhi; y++)
                for (int x = xlo; x <= xhi; x++) {
                    double d2 = (x - p0.first) * (x - p0.first) + (y - p0.second) * (y - p0.second);
                    if (d2 <= (double)st.radius * st.radius) {
                        field.dx[(size_t)y * width + x] = ddx;
                        field.dy[(size_t)y * width + x] = ddy;
                    }
                }
        }
    }
    return out;
}

StrokeSpec parse_strokes(const std::string& text) {
    StrokeSpec spec;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word)) continue;
        if (word != "stroke")
            throw std::runtime_error("strokes: line " + std::to_string(lineno) + ": expected 'stroke', got '" +
                                     word + "'");
        Stroke st;
        char colon = 0;
        if (!(ls >> st.radius >> st.first_frame >> colon >> st.last_frame) || colon != ':')
            throw std::runtime_error("strokes: line " + std::to_string(lineno) +
                                     ": expected '<radius> <first>:<last>'");
        std::string pt;
        while (ls >> pt) {
            float x = 0, y = 0;
            char comma = 0;
            std::istringstream ps(pt);
            if (!(ps >> x >> comma >> y) || comma != ',')
                throw std::runtime_error("strokes: line " + std::to_string(lineno) + ": bad point '" + pt + "'");
            st.points.emplace_back(x, y);
        }
        if (st.points.empty())
            throw std::runtime_error("strokes: line " + std::to_string(lineno) + ": stroke has no points");
        spec.strokes.push_back(std::move(st));
    }
    return spec;
}

StrokeSpec read_strokes_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("strokes: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), {});
    return parse_strokes(text);
}

std::vector<int> tokenize(const std::string& caption, const std::vector<std::string>& vocab, int max_tokens) {
    std::vector<int> ids;
    std::istringstream in(caption);
    std::string word;
    while (in >> word && (int)ids.size() < max_tokens) {
        for (char& c : word) c = (char)std::tolower((unsigned char)c);
        auto it = std::find(vocab.begin(), vocab.end(), word);
        if (it == vocab.end()) throw std::runtime_error("tokenize: word '" + word + "' not in vocabulary");
        ids.push_back((int)(it - vocab.begin()));
    }
    ids.resize(max_tokens, -1);
    return ids;
}

} // namespace vc
