#include "vc/trainer.hpp"

#include <sstream>

#include "json.hpp"

namespace vc {

using nlohmann::json;

namespace {

json parse_object(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("config: not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config: top level must be an object");
    return j;
}

// Pulls `section` out of the top-level object (absent section = all
// defaults) and rejects keys that match nothing, so a misspelled field
// cannot silently fall back to its default.
template <class Fn>
void read_section(const json& top, const char* section, Fn&& field) {
    if (!top.contains(section)) return;
    const json& s = top.at(section);
    if (!s.is_object()) throw std::runtime_error(std::string("config: ") + section + " must be an object");
    for (auto it = s.begin(); it != s.end(); ++it)
        if (!field(it.key(), it.value()))
            throw std::runtime_error(std::string("config: unknown key ") + section + "." + it.key());
}

} // namespace

TrainConfig train_config_from_json(const std::string& text) {
    TrainConfig cfg;
    read_section(parse_object(text), "train", [&](const std::string& key, const json& v) {
        if (key == "stage") cfg.stage = v.get<int>();
        else if (key == "lr") cfg.lr = v.get<double>();
        else if (key == "steps") cfg.steps = v.get<int>();
        else if (key == "batch") cfg.batch = v.get<int>();
        else if (key == "image_batch_prob") cfg.image_batch_prob = v.get<double>();
        else if (key == "p_keep_all") cfg.p_keep_all = v.get<double>();
        else if (key == "p_drop_all") cfg.p_drop_all = v.get<double>();
        else if (key == "p_keep_each") cfg.p_keep_each = v.get<double>();
        else if (key == "text_in_dropout") cfg.text_in_dropout = v.get<bool>();
        else if (key == "seed") cfg.seed = v.get<uint64_t>();
        else if (key == "precision") cfg.precision = v.get<std::string>();
        else if (key == "weight_decay") cfg.weight_decay = v.get<double>();
        else if (key == "beta1") cfg.beta1 = v.get<double>();
        else if (key == "beta2") cfg.beta2 = v.get<double>();
        else if (key == "checkpoint_every") cfg.checkpoint_every = v.get<int>();
        else if (key == "warmup") cfg.warmup = v.get<bool>();
        else if (key == "ema") cfg.ema = v.get<bool>();
        else return false;
        return true;
    });
    cfg.validate();
    return cfg;
}

ModelConfig model_config_from_json(const std::string& text) {
    ModelConfig cfg;
    read_section(parse_object(text), "model", [&](const std::string& key, const json& v) {
        if (key == "T") cfg.T = v.get<int>();
        else if (key == "factor") cfg.factor = v.get<int>();
        else if (key == "base") cfg.base = v.get<int>();
        else if (key == "sin_dim") cfg.sin_dim = v.get<int>();
        else if (key == "temb_dim") cfg.temb_dim = v.get<int>();
        else if (key == "groups") cfg.groups = v.get<int>();
        else if (key == "stc_width") cfg.stc.width = v.get<int>();
        else if (key == "stc_temporal") cfg.stc.temporal = v.get<bool>();
        else if (key == "text_vocab") cfg.stc.text_vocab = v.get<int>();
        else if (key == "token_dim") cfg.stc.token_dim = v.get<int>();
        else if (key == "max_tokens") cfg.stc.max_tokens = v.get<int>();
        else if (key == "style_patch") cfg.stc.style_patch = v.get<int>();
        else return false;
        return true;
    });
    cfg.finalize();
    return cfg;
}

std::string run_config_to_json(const ModelConfig& model, const TrainConfig& train) {
    json j;
    j["model"] = {{"T", model.T},
                  {"factor", model.factor},
                  {"base", model.base},
                  {"sin_dim", model.sin_dim},
                  {"temb_dim", model.temb_dim},
                  {"groups", model.groups},
                  {"stc_width", model.stc.width},
                  {"stc_temporal", model.stc.temporal},
                  {"text_vocab", model.stc.text_vocab},
                  {"token_dim", model.stc.token_dim},
                  {"max_tokens", model.stc.max_tokens},
                  {"style_patch", model.stc.style_patch}};
    j["train"] = {{"stage", train.stage},
                  {"lr", train.lr},
                  {"steps", train.steps},
                  {"batch", train.batch},
                  {"image_batch_prob", train.image_batch_prob},
                  {"p_keep_all", train.p_keep_all},
                  {"p_drop_all", train.p_drop_all},
                  {"p_keep_each", train.p_keep_each},
                  {"text_in_dropout", train.text_in_dropout},
                  {"seed", train.seed},
                  {"precision", train.precision},
                  {"weight_decay", train.weight_decay},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"checkpoint_every", train.checkpoint_every}};
    return j.dump(2) + "\n";
}

} // namespace vc
