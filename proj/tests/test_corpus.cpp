#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "vc/corpus.hpp"
#include "vc/image_io.hpp"

using vc::Layer;
using vc::SceneSpec;
using vc::Shape;
using vc::Sprite;

namespace {

std::filesystem::path fresh_dir(const std::string& leaf) {
    auto dir = std::filesystem::temp_directory_path() / "vc_corpus_tests" / leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Sprite sprite(Shape sh, int color, int size, Layer layer, int x, int y, int vx, int vy) {
    Sprite sp;
    sp.shape = sh;
    sp.color = color;
    sp.size = size;
    sp.layer = layer;
    sp.x = x;
    sp.y = y;
    sp.vx = vx;
    sp.vy = vy;
    return sp;
}

// frame t warped by the ground-truth flow must reproduce frame t+1 bit for
// bit on every sprite pixel
void check_warp_exact(const vc::Sample& s) {
    const int F = s.clip.frames, H = s.clip.height, W = s.clip.width;
    for (int f = 0; f + 1 < F; f++) {
        const float* dp = s.depth.data() + (size_t)f * H * W;
        const float* a = s.clip.frame(f);
        const float* b = s.clip.frame(f + 1);
        for (int y = 0; y < H; y++)
            for (int x = 0; x < W; x++) {
                if (dp[(size_t)y * W + x] == 0.f) continue;
                const int dx = (int)s.flow[f].dx[(size_t)y * W + x];
                const int dy = (int)s.flow[f].dy[(size_t)y * W + x];
                const float* src = a + ((size_t)y * W + x) * 3;
                const float* dst = b + ((size_t)(y + dy) * W + (x + dx)) * 3;
                for (int c = 0; c < 3; c++) REQUIRE(src[c] == dst[c]);
            }
    }
}

} // namespace

TEST_CASE("a static sprite renders identical frames and zero flow") {
    SceneSpec spec;
    spec.frames = 4;
    spec.height = 32;
    spec.width = 32;
    spec.sprites = {sprite(Shape::circle, 0, 6, Layer::near, 16, 16, 0, 0)};
    auto s = vc::render(spec);

    const size_t plane = (size_t)32 * 32 * 3;
    for (int f = 1; f < 4; f++)
        for (size_t i = 0; i < plane; i++) REQUIRE(s.clip.frame(f)[i] == s.clip.frame(0)[i]);
    for (const auto& fl : s.flow) {
        for (float v : fl.dx) REQUIRE(v == 0.f);
        for (float v : fl.dy) REQUIRE(v == 0.f);
    }
    CHECK(s.caption == "a red circle");

    // depth carries the layer value inside the sprite and zero outside
    std::set<float> values(s.depth.begin(), s.depth.end());
    CHECK(values == std::set<float>{0.f, 1.f});
    CHECK(s.depth[(size_t)16 * 32 + 16] == 1.f);
}

TEST_CASE("ground-truth flow equals sprite velocity and warps exactly") {
    SceneSpec spec;
    spec.frames = 4;
    spec.height = 32;
    spec.width = 32;
    spec.sprites = {sprite(Shape::circle, 2, 6, Layer::mid, 10, 16, 2, 0)};
    auto s = vc::render(spec);

    for (int f = 0; f < 3; f++) {
        const float* dp = s.depth.data() + (size_t)f * 32 * 32;
        for (int y = 0; y < 32; y++)
            for (int x = 0; x < 32; x++) {
                const size_t i = (size_t)y * 32 + x;
                if (dp[i] > 0.f) {
                    REQUIRE(s.flow[f].dx[i] == 2.f);
                    REQUIRE(s.flow[f].dy[i] == 0.f);
                } else {
                    REQUIRE(s.flow[f].dx[i] == 0.f);
                    REQUIRE(s.flow[f].dy[i] == 0.f);
                }
            }
    }
    check_warp_exact(s);

    // block matching on the rendered frames recovers the velocity where the
    // sprite provides texture, and stays zero on static blocks
    auto est = vc::flow_from_video(s.clip, {});
    REQUIRE(est.size() == 3);
    CHECK(est[0].dx[(size_t)16 * 32 + 10] == 2.f);
    CHECK(est[0].dy[(size_t)16 * 32 + 10] == 0.f);
    CHECK(est[0].dx[(size_t)28 * 32 + 28] == 0.f);
    CHECK(est[0].dy[(size_t)28 * 32 + 28] == 0.f);
}

TEST_CASE("nearer layers win occluded pixels in color, depth and flow") {
    SceneSpec spec;
    spec.frames = 2;
    spec.height = 32;
    spec.width = 32;
    spec.sprites = {sprite(Shape::square, 1, 8, Layer::far, 16, 16, 0, 0),
                    sprite(Shape::circle, 0, 4, Layer::near, 16, 16, 1, 0)};
    auto s = vc::render(spec);

    const size_t center = (size_t)16 * 32 + 16;
    CHECK(s.depth[center] == 1.f);
    // circle shade at its center is full palette red
    CHECK(s.clip.frame(0)[center * 3 + 0] == vc::palette()[0][0]);
    CHECK(s.flow[0].dx[center] == 1.f);
    // a corner of the square not covered by the circle keeps the far layer
    const size_t corner = (size_t)9 * 32 + 9;
    CHECK(s.depth[corner] == doctest::Approx(1.f / 3.f));
    CHECK(s.flow[0].dx[corner] == 0.f);
    CHECK(s.caption == "a green square and a red circle moving right");
}

TEST_CASE("captions follow the template and parse back to the attributes") {
    SceneSpec spec;
    spec.frames = 4;
    spec.height = 64;
    spec.width = 64;
    spec.gradient = true;
    spec.sprites = {sprite(Shape::triangle, 3, 5, Layer::mid, 16, 16, 1, -2),
                    sprite(Shape::square, 6, 5, Layer::far, 44, 44, 0, 3),
                    sprite(Shape::circle, 4, 5, Layer::near, 44, 16, -1, 0)};
    const std::string cap = vc::caption_for(spec);
    CHECK(cap ==
          "a yellow triangle moving up and to the right and a orange square moving down and a cyan circle moving "
          "left over a gradient background");

    auto parsed = vc::parse_caption(cap);
    REQUIRE(parsed.sprites.size() == 3);
    CHECK(parsed.gradient);
    CHECK(parsed.sprites[0].shape == Shape::triangle);
    CHECK(parsed.sprites[0].color == 3);
    CHECK(parsed.sprites[0].dir_x == 1);
    CHECK(parsed.sprites[0].dir_y == -1);
    CHECK(parsed.sprites[1].shape == Shape::square);
    CHECK(parsed.sprites[1].dir_x == 0);
    CHECK(parsed.sprites[1].dir_y == 1);
    CHECK(parsed.sprites[2].color == 4);
    CHECK(parsed.sprites[2].dir_x == -1);
    CHECK(parsed.sprites[2].dir_y == 0);

    auto still = vc::parse_caption("a red circle");
    CHECK(still.sprites.size() == 1);
    CHECK_FALSE(still.gradient);
    CHECK(still.sprites[0].dir_x == 0);
    CHECK(still.sprites[0].dir_y == 0);

    CHECK_THROWS_AS(vc::parse_caption("a red dodecahedron"), std::invalid_argument);
    CHECK_THROWS_AS(vc::parse_caption(""), std::invalid_argument);

    // tokenizer round-trips through the closed vocabulary
    const auto& vocab = vc::caption_vocabulary();
    CHECK(vocab.size() <= 64);
    auto ids = vc::tokenize_caption(cap);
    std::string rebuilt;
    for (size_t i = 0; i < ids.size(); i++) rebuilt += (i ? " " : "") + vocab[ids[i]];
    CHECK(rebuilt == cap);
    CHECK_THROWS_WITH_AS(vc::tokenize_caption("a shiny circle"), "caption: unknown word shiny",
                         std::invalid_argument);
}

TEST_CASE("random scenes stay in frame, apart, and warp-exact") {
    int multi = 0, moving = 0;
    for (uint64_t seed = 0; seed < 40; seed++) {
        vc::Rng rng(seed);
        auto spec = vc::random_scene(rng, 6, 48, 48);
        REQUIRE(spec.sprites.size() >= 1);
        REQUIRE(spec.sprites.size() <= 3);
        if (spec.sprites.size() > 1) multi++;

        // swept footprints must not touch, otherwise captions and flow lie
        struct Box {
            int x0, x1, y0, y1;
        };
        std::vector<Box> boxes;
        for (const auto& sp : spec.sprites) {
            const int span = spec.frames - 1;
            Box b{sp.x - sp.size + std::min(0, sp.vx * span), sp.x + sp.size + std::max(0, sp.vx * span),
                  sp.y - sp.size + std::min(0, sp.vy * span), sp.y + sp.size + std::max(0, sp.vy * span)};
            for (const Box& t : boxes)
                REQUIRE((b.x1 < t.x0 || t.x1 < b.x0 || b.y1 < t.y0 || t.y1 < b.y0));
            boxes.push_back(b);
            if (sp.vx != 0 || sp.vy != 0) moving++;
        }

        auto s = vc::render(spec);  // validates in-frame trajectories
        check_warp_exact(s);
        CHECK_NOTHROW(vc::tokenize_caption(s.caption));
    }
    CHECK(multi > 5);
    CHECK(moving > 20);
}

TEST_CASE("scene specs serialize and parse back unchanged") {
    for (uint64_t seed = 100; seed < 110; seed++) {
        vc::Rng rng(seed);
        auto spec = vc::random_scene(rng, 8, 64, 64);
        auto back = vc::scene_from_text(vc::scene_to_text(spec));
        CHECK(back.frames == spec.frames);
        CHECK(back.height == spec.height);
        CHECK(back.width == spec.width);
        CHECK(back.gradient == spec.gradient);
        REQUIRE(back.sprites.size() == spec.sprites.size());
        for (size_t i = 0; i < spec.sprites.size(); i++) {
            CHECK(back.sprites[i].shape == spec.sprites[i].shape);
            CHECK(back.sprites[i].color == spec.sprites[i].color);
            CHECK(back.sprites[i].size == spec.sprites[i].size);
            CHECK(back.sprites[i].layer == spec.sprites[i].layer);
            CHECK(back.sprites[i].x == spec.sprites[i].x);
            CHECK(back.sprites[i].y == spec.sprites[i].y);
            CHECK(back.sprites[i].vx == spec.sprites[i].vx);
            CHECK(back.sprites[i].vy == spec.sprites[i].vy);
        }
    }
    CHECK_THROWS_WITH_AS(vc::scene_from_text("frames 4\nsize 32 32\nbanana yes\nsprite circle red size 4 layer "
                                             "near pos 16 16 vel 0 0"),
                         "corpus: bad spec line: banana yes", std::invalid_argument);
}

TEST_CASE("invalid scenes are rejected with reasons") {
    SceneSpec spec;
    spec.frames = 4;
    spec.height = 32;
    spec.width = 32;
    spec.sprites = {sprite(Shape::circle, 9, 4, Layer::near, 16, 16, 0, 0)};
    CHECK_THROWS_WITH_AS(vc::render(spec), "corpus: color 9 outside palette", std::invalid_argument);

    spec.sprites = {sprite(Shape::circle, 1, 4, Layer::near, 28, 16, 2, 0)};
    CHECK_THROWS_WITH_AS(vc::render(spec), "corpus: sprite 0 leaves the frame", std::invalid_argument);

    spec.sprites.clear();
    CHECK_THROWS_WITH_AS(vc::render(spec), "corpus: scene needs 1 to 3 sprites", std::invalid_argument);
    spec.sprites.assign(4, sprite(Shape::circle, 1, 3, Layer::near, 16, 16, 0, 0));
    CHECK_THROWS_AS(vc::render(spec), std::invalid_argument);
}

TEST_CASE("datasets lay out samples on disk and load back") {
    auto root = fresh_dir("layout");
    auto manifest = vc::generate_dataset(2, 42, root.string(), 4, 32, 32);
    CHECK(manifest == (root / "manifest.jsonl").string());
    for (const char* f : {"000000/frames/000.png", "000000/frames/003.png", "000000/depth/000.bin",
                          "000000/flow/motion.bin", "000000/caption.txt", "000000/spec.txt", "000000/manifest.json",
                          "000001/caption.txt"})
        CHECK_MESSAGE(std::filesystem::exists(root / f), f, " missing");

    auto corpus = vc::open_corpus(root.string());
    REQUIRE(corpus.entries.size() == 2);
    CHECK(corpus.entries[0].frames == 4);
    CHECK(corpus.entries[0].height == 32);

    for (int i = 0; i < 2; i++) {
        // regenerate the same scene to compare against what the loader reads
        vc::Rng rng(vc::derive_seed(42, 7, (uint64_t)i));
        auto sample = vc::render(vc::random_scene(rng, 4, 32, 32));
        auto loaded = vc::load_corpus_sample(corpus, i);

        CHECK(loaded.caption == sample.caption);
        CHECK(loaded.text_ids == vc::tokenize_caption(sample.caption));
        CHECK(loaded.depth == sample.depth);
        REQUIRE(loaded.clip.frames == 4);
        float worst = 0.f;
        for (int f = 0; f < 4; f++)
            for (size_t j = 0; j < (size_t)32 * 32 * 3; j++)
                worst = std::max(worst, std::abs(loaded.clip.frame(f)[j] - sample.clip.frame(f)[j]));
        CHECK(worst <= 0.51f / 255.f);  // 8-bit quantization is the only loss

        auto flow = vc::load_corpus_flow(corpus, i);
        REQUIRE(flow.size() == sample.flow.size());
        for (size_t f = 0; f < flow.size(); f++) {
            CHECK(flow[f].dx == sample.flow[f].dx);
            CHECK(flow[f].dy == sample.flow[f].dy);
        }

        auto spec_back = vc::scene_from_text(slurp(root / corpus.entries[i].dir / "spec.txt"));
        CHECK(vc::caption_for(spec_back) == sample.caption);
        CHECK(slurp(root / corpus.entries[i].dir / "caption.txt") == sample.caption + "\n");
    }

    CHECK_THROWS_AS(vc::load_corpus_sample(corpus, 2), std::out_of_range);
    CHECK_THROWS_AS(vc::open_corpus((root / "nope").string()), std::runtime_error);
}

TEST_CASE("the same seed regenerates a byte-identical tree") {
    auto a = fresh_dir("tree_a");
    auto b = fresh_dir("tree_b");
    auto c = fresh_dir("tree_c");
    vc::generate_dataset(3, 7, a.string(), 4, 32, 32);
    vc::generate_dataset(3, 7, b.string(), 4, 32, 32);
    vc::generate_dataset(3, 8, c.string(), 4, 32, 32);

    auto files = [](const std::filesystem::path& root) {
        std::vector<std::filesystem::path> rel;
        for (const auto& e : std::filesystem::recursive_directory_iterator(root))
            if (e.is_regular_file()) rel.push_back(std::filesystem::relative(e.path(), root));
        std::sort(rel.begin(), rel.end());
        return rel;
    };
    auto fa = files(a), fb = files(b);
    REQUIRE(fa == fb);
    for (const auto& f : fa) REQUIRE_MESSAGE(slurp(a / f) == slurp(b / f), f.string(), " differs between runs");

    bool any_diff = files(c) != fa;
    for (const auto& f : fa)
        if (!any_diff && std::filesystem::exists(c / f)) any_diff = slurp(a / f) != slurp(c / f);
    CHECK(any_diff);
}

TEST_CASE("vocabulary stays closed over many generated scenes") {
    for (uint64_t seed = 0; seed < 128; seed++) {
        vc::Rng rng(vc::derive_seed(500, 7, seed));
        auto spec = vc::random_scene(rng, 8, 64, 64);
        CHECK_NOTHROW(vc::tokenize_caption(vc::caption_for(spec)));
    }
}

TEST_CASE("unusable output locations are reported with the path") {
    CHECK_THROWS_AS(vc::generate_dataset(0, 1, fresh_dir("n0").string(), 4, 32, 32), std::invalid_argument);
    CHECK_THROWS_AS(vc::generate_dataset(1, 1, fresh_dir("f1").string(), 1, 32, 32), std::invalid_argument);

    auto blocker = fresh_dir("blocked") / "file";
    std::ofstream(blocker).put('x');
    try {
        vc::generate_dataset(1, 1, (blocker / "sub").string(), 4, 32, 32);
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find((blocker / "sub").string()) != std::string::npos);
    }
}
