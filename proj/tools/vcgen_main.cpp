// Command-line entry point tying the pieces together: corpus rendering,
// two-stage training, conditional sampling, stroke compilation, condition
// extraction and the ablation report. Exit codes: 0 on success, 1 with a
// single "error: ..." line on a runtime failure, 2 with usage text when
// the invocation itself is malformed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "vc/ablation.hpp"
#include "vc/codec.hpp"
#include "vc/corpus.hpp"
#include "vc/diffusion.hpp"
#include "vc/image_io.hpp"
#include "vc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw std::runtime_error("cli: cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

vc::Cond cond_from_name(const std::string& name) {
    for (vc::Cond c : vc::all_condition_kinds())
        if (name == vc::cond_name(c)) return c;
    throw std::runtime_error("cli: unknown condition kind '" + name + "'");
}

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(csv);
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

vc::VideoClip clip_from_image(const vc::Image8& img, int frames) {
    vc::VideoClip v = vc::VideoClip::blank(frames, img.height, img.width);
    for (int f = 0; f < frames; f++) vc::store_frame(v, f, img);
    return v;
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
    std::string out;
    int samples = 0;
    uint64_t seed = 1;
    int frames = 8, height = 64, width = 64;
};

void run_gen_data(const GenDataArgs& a) {
    std::cout << vc::generate_dataset(a.samples, a.seed, a.out, a.frames, a.height, a.width) << "\n";
}

// ------------------------------------------------------------------- train

struct TrainArgs {
    std::string config, data, out, stage1, resume;
};

template <class T>
std::string train_with(const vc::ModelConfig& model, const vc::TrainConfig& cfg, const vc::SampleLoader& load,
                       int n, const TrainArgs& a, std::ostream* log) {
    if (cfg.stage == 1) return vc::train_stage1<T>(model, cfg, load, n, a.out, log, a.resume).checkpoint;
    if (a.stage1.empty() && a.resume.empty())
        throw std::runtime_error("train: stage 2 needs --stage1 or --resume");
    return vc::train_stage2<T>(model, cfg, load, n, a.stage1, a.out, log, a.resume).checkpoint;
}

void run_train(const TrainArgs& a) {
    const std::string text = slurp(a.config);
    vc::TrainConfig cfg = vc::train_config_from_json(text);
    vc::ModelConfig model = vc::model_config_from_json(text);
    vc::Corpus corpus = vc::open_corpus(a.data);
    const int n = (int)corpus.entries.size();

    fs::create_directories(a.out);
    std::ofstream(a.out + "/config.json", std::ios::binary) << vc::run_config_to_json(model, cfg);
    std::ofstream log(a.out + "/train_log.jsonl", std::ios::binary);
    if (!log.good()) throw std::runtime_error("train: cannot write " + a.out + "/train_log.jsonl");

    std::string ckpt = cfg.precision == "f64"
                           ? train_with<double>(model, cfg, vc::corpus_loader(corpus), n, a, &log)
                           : train_with<float>(model, cfg, vc::corpus_loader(corpus), n, a, &log);
    std::cout << ckpt << "\n";
}

// ------------------------------------------------------------------ sample

struct SampleArgs {
    std::string checkpoint, out;
    std::string text, motion, image, sketch, style, reference, extract;
    double mask_ratio = 0.5;
    int frames = 0, height = 0, width = 0;  // 0 = take from inputs or defaults
    int steps = 25;
    double guidance = 3.0;
    uint64_t seed = 1;
};

void run_sample(const SampleArgs& a) {
    auto model = vc::load_model<float>(a.checkpoint);

    // geometry comes from the reference clip when there is one, else from
    // the first image input, else from the flags and their defaults
    vc::VideoClip ref;
    bool have_ref = false;
    if (!a.reference.empty()) {
        ref = vc::read_clip_dir(a.reference);
        have_ref = true;
    } else if (!a.extract.empty()) {
        throw std::runtime_error("sample: --extract needs --reference");
    }

    auto check_dim = [](const char* flag, int value, int from_input, const char* source) {
        if (value != 0 && from_input != 0 && value != from_input)
            throw std::runtime_error(std::string("sample: ") + flag + "=" + std::to_string(value) +
                                     " disagrees with the " + source + " (" + std::to_string(from_input) + ")");
        return value != 0 ? value : from_input;
    };

    int F = 0, H = 0, W = 0;
    if (have_ref) {
        F = check_dim("--frames", a.frames, ref.frames, "reference clip");
        H = check_dim("--height", a.height, ref.height, "reference clip");
        W = check_dim("--width", a.width, ref.width, "reference clip");
    } else {
        F = a.frames;
        H = a.height;
        W = a.width;
    }

    vc::Image8 image_png, sketch_png, style_png;
    for (auto [path, img] : {std::pair{&a.image, &image_png}, {&a.sketch, &sketch_png}, {&a.style, &style_png}}) {
        if (path->empty()) continue;
        *img = vc::read_png(*path);
        H = check_dim("--height", H, img->height, path->c_str());
        W = check_dim("--width", W, img->width, path->c_str());
    }
    if (F == 0) F = 8;
    if (H == 0) H = 64;
    if (W == 0) W = 64;
    if (H % model.cfg.factor != 0 || W % model.cfg.factor != 0)
        throw std::runtime_error("sample: size " + std::to_string(W) + "x" + std::to_string(H) +
                                 " is not divisible by the latent factor " + std::to_string(model.cfg.factor));

    vc::ConditionSet cond;
    cond.frames = F;
    cond.height = H;
    cond.width = W;
    auto put_once = [&](vc::Cond kind, vc::CondSeq seq) {
        if (cond.seqs.count(kind))
            throw std::runtime_error(std::string("sample: duplicate ") + vc::cond_name(kind) + " condition");
        cond.put(kind, std::move(seq));
    };

    if (!a.text.empty()) {
        cond.has_text = true;
        cond.text_ids = vc::tokenize(a.text, vc::caption_vocabulary(), model.cfg.stc.max_tokens);
    }
    if (!a.motion.empty()) {
        vc::MatchParams mp;
        auto fields = vc::compile_strokes(vc::parse_strokes(slurp(a.motion)), F, H, W, mp.range);
        put_once(vc::Cond::motion, vc::motion_condition(fields, mp.range));
    }
    if (!a.image.empty()) put_once(vc::Cond::image, vc::image_condition(clip_from_image(image_png, F)));
    if (!a.sketch.empty())
        put_once(vc::Cond::single_sketch, vc::single_sketch_condition(clip_from_image(sketch_png, F)));
    if (!a.style.empty()) {
        cond.has_style = true;
        vc::VideoClip s = clip_from_image(style_png, 1);
        cond.style_rgb.assign(s.frame(0), s.frame(0) + (size_t)H * W * 3);
    }

    for (const std::string& kind_name : split_csv(a.extract)) {
        vc::Cond kind = cond_from_name(kind_name);
        switch (kind) {
            case vc::Cond::motion: {
                vc::MatchParams mp;
                put_once(kind, vc::motion_condition(vc::flow_from_video(ref, mp), mp.range));
                break;
            }
            case vc::Cond::sketch: put_once(kind, vc::sketch_condition(ref)); break;
            case vc::Cond::single_sketch: put_once(kind, vc::single_sketch_condition(ref)); break;
            case vc::Cond::image: put_once(kind, vc::image_condition(ref)); break;
            case vc::Cond::depth: {
                std::vector<float> maps;
                for (int f = 0; f < F; f++) {
                    char name[32];
                    std::snprintf(name, sizeof name, "/depth/%03d.bin", f);
                    int h = 0, w = 0;
                    auto plane = vc::read_scalar_map(a.reference + name, h, w);
                    if (h != H || w != W)
                        throw std::runtime_error("sample: depth map " + std::to_string(f) +
                                                 " does not match the reference clip");
                    maps.insert(maps.end(), plane.begin(), plane.end());
                }
                put_once(kind, vc::depth_condition(F, H, W, maps));
                break;
            }
            case vc::Cond::mask: {
                if (!(a.mask_ratio >= 0.0 && a.mask_ratio <= 1.0))
                    throw std::runtime_error("sample: --mask-ratio must lie in [0, 1]");
                vc::Rng mask_rng(vc::derive_seed(a.seed, 5));
                put_once(kind, vc::mask_condition(ref, vc::make_tube_mask(H, W, a.mask_ratio, mask_rng)));
                break;
            }
        }
    }

    vc::ConditionSet uncond;
    uncond.frames = F;
    uncond.height = H;
    uncond.width = W;

    auto ns = vc::NoiseSchedule::linear(model.cfg.T);
    vc::Rng noise_rng(vc::derive_seed(a.seed, 1));
    std::vector<int> shape = {F, model.cfg.channels, H / model.cfg.factor, W / model.cfg.factor};
    auto z = vc::ddim_sample<float>(
        ns, shape, a.steps,
        [&](const vc::Tensor<float>& z_t, int t) {
            vc::Tape<float> tape;
            return vc::cfg_epsilon(tape, model.params, model.cfg, z_t, t, uncond, cond, a.guidance);
        },
        noise_rng);
    vc::VideoClip video = vc::decode_video(z, model.cfg.factor);

    vc::ClipMeta meta;
    meta.caption = a.text;
    meta.seed = a.seed;
    vc::write_clip_dir(a.out, video, meta);
    std::cout << a.out << "\n";
}

// ----------------------------------------------------------------- compose

struct ComposeArgs {
    std::string strokes, out;
    int frames = 8, height = 64, width = 64, range = 7;
};

void run_compose(const ComposeArgs& a) {
    auto fields = vc::compile_strokes(vc::parse_strokes(slurp(a.strokes)), a.frames, a.height, a.width, a.range);
    vc::write_flow_file(a.out, fields);
    std::cout << a.out << "\n";
}

// ----------------------------------------------------------------- extract

struct ExtractArgs {
    std::string reference, out;
    std::string kinds = "motion,sketch";
};

void run_extract(const ExtractArgs& a) {
    vc::VideoClip clip = vc::read_clip_dir(a.reference);
    fs::create_directories(a.out);
    for (const std::string& kind : split_csv(a.kinds)) {
        if (kind == "motion") {
            vc::write_flow_file(a.out + "/motion.bin", vc::flow_from_video(clip));
        } else if (kind == "sketch") {
            fs::create_directories(a.out + "/sketch");
            vc::CondSeq seq = vc::sketch_condition(clip);
            for (int f = 0; f < clip.frames; f++) {
                vc::Image8 img;
                img.height = clip.height;
                img.width = clip.width;
                img.rgb.resize((size_t)clip.height * clip.width * 3);
                const float* plane = seq.data.data() + (size_t)f * clip.height * clip.width;
                for (size_t i = 0; i < (size_t)clip.height * clip.width; i++) {
                    unsigned char v = plane[i] > 0.5f ? 255 : 0;
                    img.rgb[i * 3] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = v;
                }
                char name[32];
                std::snprintf(name, sizeof name, "/sketch/%03d.png", f);
                vc::write_png(a.out + name, img);
            }
        } else {
            throw std::runtime_error("extract: unknown kind '" + kind + "' (motion, sketch)");
        }
    }
    std::cout << a.out << "\n";
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string config, out;
};

void parse_eval_config(const std::string& text, vc::AblationConfig& cfg, std::vector<vc::AblationRow>& rows) {
    json top;
    try {
        top = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("config: not valid JSON: ") + e.what());
    }
    if (!top.is_object()) throw std::runtime_error("config: top level must be an object");
    for (auto it = top.begin(); it != top.end(); ++it)
        if (it.key() != "eval" && it.key() != "rows")
            throw std::runtime_error("config: unknown section " + it.key());

    if (top.contains("eval")) {
        const json& s = top.at("eval");
        if (!s.is_object()) throw std::runtime_error("config: eval must be an object");
        for (auto it = s.begin(); it != s.end(); ++it) {
            const std::string& key = it.key();
            const json& v = it.value();
            if (key == "root") cfg.eval_root = v.get<std::string>();
            else if (key == "prompts") cfg.prompts = v.get<int>();
            else if (key == "steps") cfg.steps = v.get<int>();
            else if (key == "guidance") cfg.guidance = v.get<double>();
            else if (key == "seed") cfg.seed = v.get<uint64_t>();
            else if (key == "resamples") cfg.resamples = v.get<int>();
            else if (key == "coverage") cfg.coverage = v.get<double>();
            else throw std::runtime_error("config: unknown key eval." + key);
        }
    }
    if (!top.contains("rows") || !top.at("rows").is_array())
        throw std::runtime_error("config: rows must be an array");
    for (const json& r : top.at("rows")) {
        if (!r.is_object()) throw std::runtime_error("config: each row must be an object");
        vc::AblationRow row;
        for (auto it = r.begin(); it != r.end(); ++it) {
            const std::string& key = it.key();
            const json& v = it.value();
            if (key == "name") {
                row.name = v.get<std::string>();
            } else if (key == "conditions") {
                for (const json& c : v) row.conditions.push_back(cond_from_name(c.get<std::string>()));
            } else if (key == "checkpoints") {
                for (const json& c : v)
                    row.checkpoints.push_back({c.at("seed").get<uint64_t>(), c.at("path").get<std::string>()});
            } else {
                throw std::runtime_error("config: unknown key rows." + key);
            }
        }
        rows.push_back(std::move(row));
    }
}

void run_evaluate(const EvaluateArgs& a) {
    vc::AblationConfig cfg;
    std::vector<vc::AblationRow> rows;
    parse_eval_config(slurp(a.config), cfg, rows);
    vc::EvalReport rep = vc::run_ablation(rows, cfg);
    fs::create_directories(a.out);
    std::ofstream(a.out + "/report.txt", std::ios::binary) << vc::report_table(rep);
    std::ofstream(a.out + "/report.jsonl", std::ios::binary) << vc::report_jsonl(rep);
    std::cout << vc::report_table(rep);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"compositional video generation workbench"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "render a synthetic sprite corpus");
    gen->add_option("--out", gd.out, "corpus directory")->required();
    gen->add_option("--samples", gd.samples, "number of clips")->required();
    gen->add_option("--seed", gd.seed, "master seed");
    gen->add_option("--frames", gd.frames, "frames per clip");
    gen->add_option("--height", gd.height, "frame height");
    gen->add_option("--width", gd.width, "frame width");
    gen->callback([&] { run_gen_data(gd); });

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "run one training stage from a JSON config");
    train->add_option("--config", tr.config, "JSON file with train and model sections")->required();
    train->add_option("--data", tr.data, "corpus directory")->required();
    train->add_option("--out", tr.out, "run directory for checkpoints and logs")->required();
    train->add_option("--stage1", tr.stage1, "stage-1 checkpoint (required for stage 2)");
    train->add_option("--resume", tr.resume, "checkpoint of the same stage to continue");
    train->callback([&] { run_train(tr); });

    SampleArgs sa;
    auto* sample = app.add_subcommand("sample", "generate a video from a checkpoint and conditions");
    sample->add_option("--checkpoint", sa.checkpoint, "trained model archive")->required();
    sample->add_option("--out", sa.out, "output clip directory")->required();
    sample->add_option("--text", sa.text, "caption");
    sample->add_option("--motion", sa.motion, "stroke file compiled to a motion condition");
    sample->add_option("--image", sa.image, "PNG used as the first-frame condition");
    sample->add_option("--sketch", sa.sketch, "PNG used as the single-sketch condition");
    sample->add_option("--style", sa.style, "PNG used as the style token");
    sample->add_option("--reference", sa.reference, "clip directory conditions are extracted from");
    sample->add_option("--extract", sa.extract, "kinds pulled from the reference (csv)");
    sample->add_option("--mask-ratio", sa.mask_ratio, "tube hole ratio for the mask condition");
    sample->add_option("--frames", sa.frames, "frame count (default 8 or the reference's)");
    sample->add_option("--height", sa.height, "frame height (default 64 or the inputs')");
    sample->add_option("--width", sa.width, "frame width (default 64 or the inputs')");
    sample->add_option("--steps", sa.steps, "DDIM steps");
    sample->add_option("--guidance-scale", sa.guidance, "guidance weight omega");
    sample->add_option("--seed", sa.seed, "sampling seed");
    sample->callback([&] { run_sample(sa); });

    ComposeArgs co;
    auto* compose = app.add_subcommand("compose", "compile a stroke file into a dense motion field");
    compose->add_option("--strokes", co.strokes, "stroke description file")->required();
    compose->add_option("--out", co.out, "output flow file")->required();
    compose->add_option("--frames", co.frames, "frame count");
    compose->add_option("--height", co.height, "frame height");
    compose->add_option("--width", co.width, "frame width");
    compose->add_option("--range", co.range, "displacement normalization range");
    compose->callback([&] { run_compose(co); });

    ExtractArgs ex;
    auto* extract = app.add_subcommand("extract", "dump conditions computed from a clip");
    extract->add_option("--reference", ex.reference, "clip directory")->required();
    extract->add_option("--out", ex.out, "output directory")->required();
    extract->add_option("--kinds", ex.kinds, "what to dump (csv of motion, sketch)");
    extract->callback([&] { run_extract(ex); });

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "run the ablation rows and write the report");
    evaluate->add_option("--config", ev.config, "JSON file with eval and rows sections")->required();
    evaluate->add_option("--out", ev.out, "report directory")->required();
    evaluate->callback([&] { run_evaluate(ev); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
