#include "vc/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vc/image_io.hpp"

namespace fs = std::filesystem;

namespace vc {

using nlohmann::json;

namespace {

const char* shape_names[] = {"circle", "square", "triangle"};
const char* layer_names[] = {"near", "mid", "far"};

float layer_value(Layer l) {
    switch (l) {
        case Layer::near: return 1.f;
        case Layer::mid: return 2.f / 3.f;
        default: return 1.f / 3.f;
    }
}

int draw_rank(Layer l) { return l == Layer::far ? 0 : l == Layer::mid ? 1 : 2; }

bool covers(Shape shape, int size, int lx, int ly) {
    switch (shape) {
        case Shape::circle: return lx * lx + ly * ly <= size * size;
        case Shape::square: return std::abs(lx) <= size && std::abs(ly) <= size;
        default:  // apex up, base halfwidth = size
            return ly >= -size && ly <= size && 2 * std::abs(lx) <= ly + size;
    }
}

// radial shade off the sprite center; a pure function of the local offset,
// so a moving sprite repeats its pixels bit for bit and block matching has
// texture to lock onto even in the interior
float shade(int size, int lx, int ly) {
    return 1.f - 0.35f * (float)(lx * lx + ly * ly) / (float)(2 * size * size + 1);
}

void validate(const SceneSpec& spec) {
    if (spec.frames < 1) throw std::invalid_argument("corpus: need at least 1 frame");
    if (spec.height < 8 || spec.width < 8) throw std::invalid_argument("corpus: frame size must be at least 8x8");
    if (spec.sprites.empty() || spec.sprites.size() > 3)
        throw std::invalid_argument("corpus: scene needs 1 to 3 sprites");
    for (size_t i = 0; i < spec.sprites.size(); i++) {
        const Sprite& sp = spec.sprites[i];
        if (sp.color < 0 || sp.color >= 8)
            throw std::invalid_argument("corpus: color " + std::to_string(sp.color) + " outside palette");
        if (sp.size < 2) throw std::invalid_argument("corpus: sprite size must be at least 2");
        for (int f = 0; f < spec.frames; f++) {
            const int cx = sp.x + f * sp.vx, cy = sp.y + f * sp.vy;
            if (cx - sp.size < 0 || cx + sp.size >= spec.width || cy - sp.size < 0 || cy + sp.size >= spec.height)
                throw std::invalid_argument("corpus: sprite " + std::to_string(i) + " leaves the frame");
        }
    }
}

const char* direction_phrase(int sx, int sy) {
    if (sy < 0) return sx > 0 ? "up and to the right" : sx < 0 ? "up and to the left" : "up";
    if (sy > 0) return sx > 0 ? "down and to the right" : sx < 0 ? "down and to the left" : "down";
    return sx > 0 ? "right" : "left";
}

int sign(int v) { return v > 0 ? 1 : v < 0 ? -1 : 0; }

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

} // namespace

const std::array<std::array<float, 3>, 8>& palette() {
    static const std::array<std::array<float, 3>, 8> p = {{{0.85f, 0.10f, 0.10f},
                                                           {0.10f, 0.75f, 0.15f},
                                                           {0.12f, 0.25f, 0.90f},
                                                           {0.90f, 0.85f, 0.10f},
                                                           {0.10f, 0.80f, 0.85f},
                                                           {0.85f, 0.15f, 0.80f},
                                                           {0.95f, 0.55f, 0.10f},
                                                           {0.55f, 0.15f, 0.80f}}};
    return p;
}

const std::vector<std::string>& color_names() {
    static const std::vector<std::string> names = {"red",  "green",   "blue",   "yellow",
                                                   "cyan", "magenta", "orange", "purple"};
    return names;
}

const std::vector<std::string>& caption_vocabulary() {
    static const std::vector<std::string> vocab = [] {
        std::vector<std::string> v = {"a",      "and",    "to",       "the",   "over", "background",
                                      "moving", "gradient", "circle", "square", "triangle"};
        v.insert(v.end(), color_names().begin(), color_names().end());
        for (const char* d : {"right", "left", "up", "down"}) v.push_back(d);
        return v;
    }();
    return vocab;
}

std::string caption_for(const SceneSpec& spec) {
    validate(spec);
    std::string out;
    for (size_t i = 0; i < spec.sprites.size(); i++) {
        const Sprite& sp = spec.sprites[i];
        if (i) out += " and ";
        out += "a " + color_names()[sp.color] + " " + shape_names[(int)sp.shape];
        if (sp.vx != 0 || sp.vy != 0) out += std::string(" moving ") + direction_phrase(sign(sp.vx), sign(sp.vy));
    }
    if (spec.gradient) out += " over a gradient background";
    return out;
}

std::vector<int> tokenize_caption(const std::string& caption) {
    const auto& vocab = caption_vocabulary();
    std::vector<int> ids;
    for (const std::string& w : split_words(caption)) {
        auto it = std::find(vocab.begin(), vocab.end(), w);
        if (it == vocab.end()) throw std::invalid_argument("caption: unknown word " + w);
        ids.push_back((int)(it - vocab.begin()));
    }
    return ids;
}

ParsedCaption parse_caption(const std::string& caption) {
    const auto words = split_words(caption);
    ParsedCaption out;
    size_t i = 0;
    auto fail = [&] { throw std::invalid_argument("caption: cannot parse \"" + caption + "\""); };
    auto expect = [&](const char* w) {
        if (i >= words.size() || words[i] != w) fail();
        i++;
    };
    while (i < words.size()) {
        if (words[i] == "over") {  // trailing background clause
            expect("over");
            expect("a");
            expect("gradient");
            expect("background");
            out.gradient = true;
            if (i != words.size()) fail();
            break;
        }
        expect("a");
        ParsedSprite sp;
        {
            const auto& names = color_names();
            auto it = i < words.size() ? std::find(names.begin(), names.end(), words[i]) : names.end();
            if (it == names.end()) fail();
            sp.color = (int)(it - names.begin());
            i++;
        }
        {
            auto it = i < words.size() ? std::find(std::begin(shape_names), std::end(shape_names), words[i])
                                       : std::end(shape_names);
            if (it == std::end(shape_names)) fail();
            sp.shape = (Shape)(it - std::begin(shape_names));
            i++;
        }
        if (i < words.size() && words[i] == "moving") {
            i++;
            if (i >= words.size()) fail();
            if (words[i] == "right") sp.dir_x = 1;
            else if (words[i] == "left") sp.dir_x = -1;
            else if (words[i] == "up") sp.dir_y = -1;
            else if (words[i] == "down") sp.dir_y = 1;
            else fail();
            i++;
            // diagonal tail: "and to the <right|left>"; a sprite join is "and a"
            if (i + 3 < words.size() && words[i] == "and" && words[i + 1] == "to") {
                expect("and");
                expect("to");
                expect("the");
                if (i >= words.size()) fail();
                if (words[i] == "right") sp.dir_x = 1;
                else if (words[i] == "left") sp.dir_x = -1;
                else fail();
                i++;
            }
        }
        out.sprites.push_back(sp);
        if (i < words.size() && words[i] == "and" && i + 1 < words.size() && words[i + 1] == "a") i++;
    }
    if (out.sprites.empty()) fail();
    return out;
}

Sample render(const SceneSpec& spec) {
    validate(spec);
    const int F = spec.frames, H = spec.height, W = spec.width;
    Sample s;
    s.clip = VideoClip::blank(F, H, W);
    s.depth.assign((size_t)F * H * W, 0.f);
    for (int f = 0; f + 1 < F; f++) s.flow.push_back(FlowField::zero(H, W));

    for (int f = 0; f < F; f++) {
        float* fr = s.clip.frame(f);
        for (int y = 0; y < H; y++) {
            const float bg = spec.gradient ? 0.08f + 0.17f * (float)y / (float)(H - 1) : 0.12f;
            for (int x = 0; x < W; x++)
                for (int c = 0; c < 3; c++) fr[((size_t)y * W + x) * 3 + c] = bg;
        }
    }

    std::vector<size_t> order(spec.sprites.size());
    for (size_t i = 0; i < order.size(); i++) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return draw_rank(spec.sprites[a].layer) < draw_rank(spec.sprites[b].layer);
    });

    for (int f = 0; f < F; f++) {
        float* fr = s.clip.frame(f);
        float* dp = s.depth.data() + (size_t)f * H * W;
        for (size_t idx : order) {
            const Sprite& sp = spec.sprites[idx];
            const int cx = sp.x + f * sp.vx, cy = sp.y + f * sp.vy;
            for (int ly = -sp.size; ly <= sp.size; ly++)
                for (int lx = -sp.size; lx <= sp.size; lx++) {
                    if (!covers(sp.shape, sp.size, lx, ly)) continue;
                    const int x = cx + lx, y = cy + ly;
                    const float sh = shade(sp.size, lx, ly);
                    for (int c = 0; c < 3; c++) fr[((size_t)y * W + x) * 3 + c] = palette()[sp.color][c] * sh;
                    dp[(size_t)y * W + x] = layer_value(sp.layer);
                    if (f + 1 < F) {
                        s.flow[f].dx[(size_t)y * W + x] = (float)sp.vx;
                        s.flow[f].dy[(size_t)y * W + x] = (float)sp.vy;
                    }
                }
        }
    }
    s.caption = caption_for(spec);
    return s;
}

std::string scene_to_text(const SceneSpec& spec) {
    std::ostringstream out;
    out << "frames " << spec.frames << "\n";
    out << "size " << spec.height << " " << spec.width << "\n";
    out << "background " << (spec.gradient ? "gradient" : "plain") << "\n";
    for (const Sprite& sp : spec.sprites)
        out << "sprite " << shape_names[(int)sp.shape] << " " << color_names()[sp.color] << " size " << sp.size
            << " layer " << layer_names[(int)sp.layer] << " pos " << sp.x << " " << sp.y << " vel " << sp.vx << " "
            << sp.vy << "\n";
    return out.str();
}

SceneSpec scene_from_text(const std::string& text) {
    SceneSpec spec;
    spec.sprites.clear();
    std::istringstream in(text);
    std::string line;
    auto fail = [](const std::string& l) { throw std::invalid_argument("corpus: bad spec line: " + l); };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "frames") {
            if (!(ls >> spec.frames)) fail(line);
        } else if (key == "size") {
            if (!(ls >> spec.height >> spec.width)) fail(line);
        } else if (key == "background") {
            std::string b;
            if (!(ls >> b) || (b != "plain" && b != "gradient")) fail(line);
            spec.gradient = b == "gradient";
        } else if (key == "sprite") {
            Sprite sp;
            std::string shape, color, kw, layer;
            if (!(ls >> shape >> color)) fail(line);
            auto sit = std::find(std::begin(shape_names), std::end(shape_names), shape);
            if (sit == std::end(shape_names)) fail(line);
            sp.shape = (Shape)(sit - std::begin(shape_names));
            auto cit = std::find(color_names().begin(), color_names().end(), color);
            if (cit == color_names().end()) fail(line);
            sp.color = (int)(cit - color_names().begin());
            if (!(ls >> kw >> sp.size) || kw != "size") fail(line);
            if (!(ls >> kw >> layer) || kw != "layer") fail(line);
            auto lit = std::find(std::begin(layer_names), std::end(layer_names), layer);
            if (lit == std::end(layer_names)) fail(line);
            sp.layer = (Layer)(lit - std::begin(layer_names));
            if (!(ls >> kw >> sp.x >> sp.y) || kw != "pos") fail(line);
            if (!(ls >> kw >> sp.vx >> sp.vy) || kw != "vel") fail(line);
            spec.sprites.push_back(sp);
        } else {
            fail(line);
        }
    }
    validate(spec);
    return spec;
}

SceneSpec random_scene(Rng& rng, int frames, int height, int width) {
    SceneSpec spec;
    spec.frames = frames;
    spec.height = height;
    spec.width = width;
    spec.gradient = rng.uniform() < 0.5;
    const int want = (int)rng.uniform_int(1, 3);
    const int span = frames > 1 ? frames - 1 : 1;

    struct Box {
        int x0, x1, y0, y1;
    };
    std::vector<Box> taken;
    for (int k = 0; k < want; k++) {
        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; attempt++) {
            Sprite sp;
            sp.shape = (Shape)rng.uniform_int(0, 2);
            sp.color = (int)rng.uniform_int(0, 7);
            sp.size = (int)rng.uniform_int(4, 9);
            sp.layer = (Layer)rng.uniform_int(0, 2);
            if (width - 1 - 2 * sp.size <= 0 || height - 1 - 2 * sp.size <= 0) continue;
            sp.x = (int)rng.uniform_int(sp.size, width - 1 - sp.size);
            sp.y = (int)rng.uniform_int(sp.size, height - 1 - sp.size);
            sp.vx = (int)rng.uniform_int(-3, 3);
            sp.vy = (int)rng.uniform_int(-3, 3);
            // clip velocity so the whole trajectory stays in frame
            sp.vx = std::clamp(sp.vx, -(sp.x - sp.size) / span, (width - 1 - sp.size - sp.x) / span);
            sp.vy = std::clamp(sp.vy, -(sp.y - sp.size) / span, (height - 1 - sp.size - sp.y) / span);
            Box b;
            b.x0 = sp.x - sp.size + std::min(0, sp.vx * span);
            b.x1 = sp.x + sp.size + std::max(0, sp.vx * span);
            b.y0 = sp.y - sp.size + std::min(0, sp.vy * span);
            b.y1 = sp.y + sp.size + std::max(0, sp.vy * span);
            bool clear = true;
            // swept footprints stay 2px apart so flow warps are never occluded
            for (const Box& t : taken)
                clear = clear && (b.x1 + 2 <= t.x0 || t.x1 + 2 <= b.x0 || b.y1 + 2 <= t.y0 || t.y1 + 2 <= b.y0);
            if (!clear) continue;
            taken.push_back(b);
            spec.sprites.push_back(sp);
            placed = true;
        }
        if (!placed) break;  // crowded frame: settle for fewer sprites
    }
    return spec;
}

std::string generate_dataset(int n, uint64_t seed, const std::string& out_dir, int frames, int height, int width) {
    if (n < 1) throw std::invalid_argument("corpus: need at least one sample");
    if (frames < 2) throw std::invalid_argument("corpus: need at least 2 frames");
    const fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw std::runtime_error("corpus: cannot create " + out_dir + ": " + ec.message());
    const std::string manifest_path = (root / "manifest.jsonl").string();
    std::ofstream mf(manifest_path, std::ios::binary);
    if (!mf) throw std::runtime_error("corpus: cannot write " + manifest_path);

    char id[16];
    for (int i = 0; i < n; i++) {
        std::snprintf(id, sizeof id, "%06d", i);
        const uint64_t sample_seed = derive_seed(seed, 7, (uint64_t)i);
        Rng rng(sample_seed);
        const SceneSpec spec = random_scene(rng, frames, height, width);
        Sample s = render(spec);
        const fs::path dir = root / id;

        ClipMeta meta;
        meta.caption = s.caption;
        meta.seed = sample_seed;
        write_clip_dir(dir.string(), s.clip, meta);

        fs::create_directories(dir / "depth");
        char name[32];
        for (int f = 0; f < frames; f++) {
            std::snprintf(name, sizeof name, "%03d.bin", f);
            std::vector<float> plane(s.depth.begin() + (size_t)f * height * width,
                                     s.depth.begin() + (size_t)(f + 1) * height * width);
            write_scalar_map((dir / "depth" / name).string(), height, width, plane);
        }
        fs::create_directories(dir / "flow");
        write_flow_file((dir / "flow" / "motion.bin").string(), s.flow);

        std::ofstream cap(dir / "caption.txt", std::ios::binary);
        cap << s.caption << "\n";
        std::ofstream spt(dir / "spec.txt", std::ios::binary);
        spt << scene_to_text(spec);
        if (!cap || !spt) throw std::runtime_error("corpus: cannot write " + dir.string());

        json line;
        line["dir"] = id;
        line["caption"] = s.caption;
        line["frames"] = frames;
        line["height"] = height;
        line["width"] = width;
        mf << line.dump() << "\n";
    }
    mf.flush();
    if (!mf) throw std::runtime_error("corpus: cannot write " + manifest_path);
    return manifest_path;
}

Corpus open_corpus(const std::string& root) {
    Corpus c;
    c.root = root;
    std::ifstream mf(fs::path(root) / "manifest.jsonl");
    if (!mf) throw std::runtime_error("corpus: cannot open " + root + "/manifest.jsonl");
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw std::runtime_error("corpus: bad manifest line in " + root);
        CorpusEntry e;
        e.dir = j.at("dir").get<std::string>();
        e.caption = j.at("caption").get<std::string>();
        e.frames = j.at("frames").get<int>();
        e.height = j.at("height").get<int>();
        e.width = j.at("width").get<int>();
        c.entries.push_back(std::move(e));
    }
    if (c.entries.empty()) throw std::runtime_error("corpus: " + root + " lists no samples");
    return c;
}

static void check_index(const Corpus& c, int index) {
    if (index < 0 || index >= (int)c.entries.size())
        throw std::out_of_range("corpus: sample index " + std::to_string(index) + " outside 0.." +
                                std::to_string(c.entries.size() - 1));
}

TrainSample load_corpus_sample(const Corpus& c, int index) {
    check_index(c, index);
    const CorpusEntry& e = c.entries[index];
    const fs::path dir = fs::path(c.root) / e.dir;
    TrainSample s;
    s.clip = read_clip_dir(dir.string());
    s.caption = e.caption;
    s.text_ids = tokenize_caption(e.caption);
    s.depth.reserve((size_t)e.frames * e.height * e.width);
    char name[32];
    for (int f = 0; f < e.frames; f++) {
        std::snprintf(name, sizeof name, "%03d.bin", f);
        int h = 0, w = 0;
        auto plane = read_scalar_map((dir / "depth" / name).string(), h, w);
        if (h != e.height || w != e.width)
            throw std::runtime_error("corpus: depth map size mismatch in " + dir.string());
        s.depth.insert(s.depth.end(), plane.begin(), plane.end());
    }
    return s;
}

std::vector<FlowField> load_corpus_flow(const Corpus& c, int index) {
    check_index(c, index);
    return read_flow_file((fs::path(c.root) / c.entries[index].dir / "flow" / "motion.bin").string());
}

} // namespace vc
