#ifndef VC_VIDEO_HPP
#define VC_VIDEO_HPP

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vc {

// Pixel-domain clip: interleaved RGB floats, [frame][row][col][channel],
// nominal range [0,1]. decode may temporarily hold out-of-range values from
// sampled latents; validate() is applied at file boundaries.
struct VideoClip {
    int frames = 0;
    int height = 0;
    int width = 0;
    double fps = 4.0;
    std::vector<float> rgb;

    static VideoClip blank(int f, int h, int w, float fill = 0.f) {
        VideoClip v;
        v.frames = f;
        v.height = h;
        v.width = w;
        v.rgb.assign((size_t)f * h * w * 3, fill);
        return v;
    }

    int64_t pixel_count() const { return (int64_t)frames * height * width; }

    float& at(int f, int y, int x, int c) { return rgb[(((size_t)f * height + y) * width + x) * 3 + c]; }
    float at(int f, int y, int x, int c) const { return rgb[(((size_t)f * height + y) * width + x) * 3 + c]; }

    const float* frame(int f) const { return rgb.data() + (size_t)f * height * width * 3; }
    float* frame(int f) { return rgb.data() + (size_t)f * height * width * 3; }

    void validate() const {
        if (frames < 1) throw std::runtime_error("clip: no frames");
        if (rgb.size() != (size_t)frames * height * width * 3)
            throw std::runtime_error("clip: buffer does not match " + std::to_string(frames) + "x" +
                                     std::to_string(height) + "x" + std::to_string(width) + "x3");
        for (float v : rgb)
            if (!(v >= 0.f && v <= 1.f)) throw std::runtime_error("clip: pixel value " + std::to_string(v) +
                                                                  " outside [0,1]");
    }
};

inline float luminance(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

// Dense per-pixel displacement for one frame transition, in pixels.
// dx is rightward, dy is downward (row-major image coordinates).
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<float> dx, dy;

    static FlowField zero(int h, int w) {
        FlowField f;
        f.height = h;
        f.width = w;
        f.dx.assign((size_t)h * w, 0.f);
        f.dy.assign((size_t)h * w, 0.f);
        return f;
    }
};

// Block-level match result on the macroblock grid
struct BlockField {
    int grid_h = 0;
    int grid_w = 0;
    int block = 0;
    std::vector<int> dx, dy; // [grid_h * grid_w]
};

// Spatial/temporal condition kinds routed through the conditioning encoders.
// Text and style ride a separate token path.
enum class Cond { motion, depth, sketch, mask, image, single_sketch };

inline const char* cond_name(Cond c) {
    switch (c) {
        case Cond::motion: return "motion";
        case Cond::depth: return "depth";
        case Cond::sketch: return "sketch";
        case Cond::mask: return "mask";
        case Cond::image: return "image";
        case Cond::single_sketch: return "single_sketch";
    }
    return "?";
}

inline int cond_channels(Cond c) {
    switch (c) {
        case Cond::motion: return 2;  // normalized dx, dy
        case Cond::depth: return 1;
        case Cond::sketch: return 1;
        case Cond::mask: return 4;    // masked rgb + mask plane
        case Cond::image: return 3;
        case Cond::single_sketch: return 1;
    }
    return 0;
}

// One condition sequence in model layout [frame][channel][row][col]
struct CondSeq {
    int channels = 0;
    std::vector<float> data;
};

// Everything the denoiser can be conditioned on for one clip
struct ConditionSet {
    int frames = 0;
    int height = 0;
    int width = 0;
    std::map<Cond, CondSeq> seqs;
    bool has_text = false;
    std::vector<int> text_ids;     // padded with -1
    bool has_style = false;
    std::vector<float> style_rgb;  // [H][W][3] style source image

    void put(Cond kind, CondSeq seq) {
        if ((int64_t)seq.data.size() != (int64_t)frames * seq.channels * height * width)
            throw std::runtime_error(std::string("conditions: ") + cond_name(kind) + " buffer does not match " +
                                     std::to_string(frames) + " frames of " + std::to_string(seq.channels) + "x" +
                                     std::to_string(height) + "x" + std::to_string(width));
        if (seq.channels != cond_channels(kind))
            throw std::runtime_error(std::string("conditions: ") + cond_name(kind) + " expects " +
                                     std::to_string(cond_channels(kind)) + " channels, got " +
                                     std::to_string(seq.channels));
        seqs[kind] = std::move(seq);
    }
};

} // namespace vc

#endif
