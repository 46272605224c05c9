#ifndef VC_CORPUS_HPP
#define VC_CORPUS_HPP

#include <array>
#include <string>
#include <vector>

#include "vc/conditions.hpp"
#include "vc/rng.hpp"
#include "vc/trainer.hpp"
#include "vc/video.hpp"

namespace vc {

// Synthetic "moving shapes" clips with exact captions, layered depth and
// per-pixel flow. Everything is rasterized from integer sprite positions,
// so a sprite pixel in frame f+1 is a bit-for-bit copy of the frame-f pixel
// displaced by the sprite velocity.

enum class Shape { circle, square, triangle };
enum class Layer { near, mid, far };

struct Sprite {
    Shape shape = Shape::circle;
    int color = 0;  // palette index
    int size = 5;   // half-extent in pixels
    Layer layer = Layer::mid;
    int x = 0, y = 0;    // center at frame 0
    int vx = 0, vy = 0;  // pixels per frame
};

struct SceneSpec {
    int frames = 8;
    int height = 64;
    int width = 64;
    bool gradient = false;  // plain grey otherwise
    std::vector<Sprite> sprites;
};

struct Sample {
    VideoClip clip;
    std::string caption;
    std::vector<float> depth;      // frames * H * W, topmost layer value or 0
    std::vector<FlowField> flow;   // frames-1 transitions, sprite velocity inside the top sprite
};

// caption attributes recovered from text (positions and sizes are not captioned)
struct ParsedSprite {
    Shape shape;
    int color;
    int dir_x = 0, dir_y = 0;  // velocity signs
};
struct ParsedCaption {
    std::vector<ParsedSprite> sprites;
    bool gradient = false;
};

const std::array<std::array<float, 3>, 8>& palette();
const std::vector<std::string>& color_names();
const std::vector<std::string>& caption_vocabulary();  // closed, at most 64 words

std::string caption_for(const SceneSpec& spec);
ParsedCaption parse_caption(const std::string& caption);
std::vector<int> tokenize_caption(const std::string& caption);

Sample render(const SceneSpec& spec);

// plain-text spec serialization, round-trips exactly
std::string scene_to_text(const SceneSpec& spec);
SceneSpec scene_from_text(const std::string& text);

// 1-3 sprites with disjoint swept footprints; velocities clipped so every
// sprite stays in frame for the whole clip
SceneSpec random_scene(Rng& rng, int frames, int height, int width);

// writes <out_dir>/<id>/{frames/*.png, depth/*.bin, flow/motion.bin,
// caption.txt, spec.txt, manifest.json} per sample plus a line-delimited
// manifest at the root; per-sample seeds are derived from `seed` by counter.
// Returns the manifest path.
std::string generate_dataset(int n, uint64_t seed, const std::string& out_dir, int frames = 8, int height = 64,
                             int width = 64);

struct CorpusEntry {
    std::string dir;  // sample directory relative to the root
    std::string caption;
    int frames = 0, height = 0, width = 0;
};

struct Corpus {
    std::string root;
    std::vector<CorpusEntry> entries;
};

Corpus open_corpus(const std::string& root);
TrainSample load_corpus_sample(const Corpus& c, int index);
std::vector<FlowField> load_corpus_flow(const Corpus& c, int index);

inline SampleLoader corpus_loader(const Corpus& c) {
    return [c](int i) { return load_corpus_sample(c, i); };
}

} // namespace vc

#endif
