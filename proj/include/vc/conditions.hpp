#ifndef VC_CONDITIONS_HPP
#define VC_CONDITIONS_HPP

#include <string>
#include <vector>

#include "vc/rng.hpp"
#include "vc/video.hpp"

namespace vc {

// Extraction of the composable control signals from pixel clips. Everything
// here is pure and deterministic. Channel conventions for the maps fed to
// the condition encoders:
//   motion        2ch, displacement / search range, in [-1,1], zero = still
//   depth         1ch, layered map in [0,1], near = 1, background = 0
//   sketch        1ch, binary {0,1}
//   mask          4ch, masked video as centered RGB (2x-1, holes = 0) plus
//                 the {0,1} hole indicator
//   image         3ch, centered RGB (2x-1), first frame repeated
//   single_sketch 1ch, binary, first-frame sketch repeated

struct MatchParams {
    int block = 8;  // macroblock edge, must divide H and W
    int range = 7;  // exhaustive search window, displacements in [-range, range]
};

// Integer luminance plane, round(255 * Rec.601), for exact SAD arithmetic.
std::vector<int> luma_plane(const VideoClip& v, int frame);

// Exhaustive macroblock matching from frame `prev` to frame `next`: for each
// block of `prev`, the displacement minimizing the sum of absolute luminance
// differences against `next`, considering only displacements that keep the
// block fully inside the frame. Ties are broken by smallest squared
// displacement, then smallest dy, then smallest dx, a total order, so the
// result is unique and (0,0) wins whenever it ties the minimum.
BlockField match_blocks(const VideoClip& v, int prev, int next, MatchParams p = {});

// Every pixel inherits its block's vector.
FlowField densify_motion(const BlockField& bf);

// F-1 dense fields for the F-1 adjacent transitions, field i anchored at
// frame i (forward matching).
std::vector<FlowField> flow_from_video(const VideoClip& v, MatchParams p = {});

// Stacks transitions into an F-frame condition: entry 0 is the zero field
// (frame 0 has no predecessor), entry i>0 is transition i-1 -> i, scaled by
// 1/range. Channel 0 horizontal, channel 1 vertical.
CondSeq motion_condition(const std::vector<FlowField>& transitions, int range);

// Gradient-magnitude edge map of one frame: forward-difference kernels on
// luminance, magnitude scaled by 1/sqrt(2) into [0,1], then thresholded.
// Rows and columns are edge-replicated so constant frames stay all-zero.
std::vector<float> extract_sketch(const VideoClip& v, int frame, float threshold);

CondSeq sketch_condition(const VideoClip& v, float threshold = 0.25f);
CondSeq single_sketch_condition(const VideoClip& v, float threshold = 0.25f);
CondSeq image_condition(const VideoClip& v);
CondSeq depth_condition(int frames, int height, int width, const std::vector<float>& maps);

// Spatial hole pattern on a grid of 8x8-pixel cells, identical across all
// frames. round(ratio * cells) cells are masked, chosen by seeded shuffle.
std::vector<unsigned char> make_tube_mask(int height, int width, double ratio, Rng& rng);

CondSeq mask_condition(const VideoClip& v, const std::vector<unsigned char>& mask);

// Motion authored as strokes. A stroke moves a disk of influence along a
// polyline at uniform arc-length speed across its frame span [first, last];
// the displacement for transition f -> f+1 is painted at the frame-f
// position. Later strokes overwrite earlier ones where disks overlap.
struct Stroke {
    std::vector<std::pair<float, float>> points;  // (x, y) pixel coordinates
    float radius = 2.0f;
    int first_frame = 0;
    int last_frame = 0;  // inclusive
};

struct StrokeSpec {
    std::vector<Stroke> strokes;
};

// frames-1 transition fields, entry f covering f -> f+1, same contract as
// flow_from_video; components clamped to [-range, range].
std::vector<FlowField> compile_strokes(const StrokeSpec& spec, int frames, int height, int width, int range = 7);

// Text format, one stroke per line, '#' comments:
//   stroke <radius> <first>:<last> x,y x,y ...
StrokeSpec parse_strokes(const std::string& text);
StrokeSpec read_strokes_file(const std::string& path);

// Caption tokens against the corpus's closed vocabulary: lowercase
// whitespace split, padded with -1 (the all-zero null row) or truncated to
// max_tokens. Unknown words are an error naming the word. An empty caption
// is the unconditional branch: all -1.
std::vector<int> tokenize(const std::string& caption, const std::vector<std::string>& vocab, int max_tokens = 8);

} // namespace vc

#endif
