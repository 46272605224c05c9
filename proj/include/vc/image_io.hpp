#ifndef VC_IMAGE_IO_HPP
#define VC_IMAGE_IO_HPP

#include <string>
#include <vector>

#include "vc/video.hpp"

namespace vc {

// 8-bit RGB image buffer, interleaved, row-major
struct Image8 {
    int height = 0;
    int width = 0;
    std::vector<unsigned char> rgb;
};

// Minimal PNG support: 8-bit truecolor, no interlace. Writing always emits
// filter-0 scanlines through zlib at a fixed level, so identical pixels give
// identical files. Reading additionally accepts RGBA (alpha dropped) and
// grayscale, and undoes all five scanline filters.
void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

Image8 quantize_frame(const VideoClip& clip, int frame);      // clamps to [0,1], rounds to 8 bits
void store_frame(VideoClip& clip, int frame, const Image8& img);

// dense flow sequence file: "VCMF", frame-transition count, H, W, then
// float32 pairs interleaved per pixel (dx, dy) for each transition
void write_flow_file(const std::string& path, const std::vector<FlowField>& fields);
std::vector<FlowField> read_flow_file(const std::string& path);

// single-channel float map file: "VCSC", H, W, float32 payload
void write_scalar_map(const std::string& path, int height, int width, const std::vector<float>& data);
std::vector<float> read_scalar_map(const std::string& path, int& height, int& width);

// clip directory: frames/000.png ... plus manifest.json
// (frames, height, width, fps, caption, seed)
struct ClipMeta {
    int frames = 0, height = 0, width = 0;
    double fps = 4.0;
    std::string caption;
    uint64_t seed = 0;
};
void write_clip_dir(const std::string& dir, const VideoClip& clip, const ClipMeta& meta);
VideoClip read_clip_dir(const std::string& dir, ClipMeta* meta_out = nullptr);

} // namespace vc

#endif
