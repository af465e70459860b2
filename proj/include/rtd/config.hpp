#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rtd/eval.hpp"

namespace rtd {

// Resolved run configuration. Field defaults are the reference settings;
// a JSON config file overrides keys, command-line flags override both.
struct TrainConfig {
    // matcher / loss weights
    double alpha = 1.0;
    double beta = 5.0;
    double gamma = 2.0;
    // boundary-attentive module
    double alpha_r = 2.0;
    std::size_t d_pos = 32;
    std::size_t tem_hidden = 128;
    double expansion = 0.1;  // boundary-label half-width, fraction of duration
    // windowing
    std::size_t window_length = 100;
    double train_overlap = 0.75;
    double test_overlap = 0.5;
    std::string mode = "window";  // window | whole
    // decoder
    std::size_t decoder_layers = 6;
    std::size_t heads = 4;
    std::size_t d_model = 64;
    std::size_t d_ffn = 256;
    std::optional<std::size_t> n_queries;  // default 32 (window) / 100 (whole)
    std::string decoder_pos = "attention";  // none | input | attention
    std::string placement = "pre";           // pre | post
    std::string enhancement = "multiply";    // multiply | concat
    // optimization
    double lr = 1e-4;
    std::size_t batch_size = 32;
    double weight_decay = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs_strict = 80;
    std::size_t epochs_relaxed = 20;
    std::size_t epochs_complete = 20;
    std::size_t tem_epochs = 20;
    double tem_lr = 1e-3;
    // relaxation
    std::string relax_mode = "threshold_cls_loc";
    double relax_threshold = 0.7;
    // evaluation
    std::size_t an_max = 100;
    std::vector<double> thresholds;  // empty = THUMOS default set
    double snms_sigma = 0.5;
    double snms_floor = 1e-3;
    // paths
    std::string dataset_dir;
    std::string tem_checkpoint;
    std::string checkpoint;
    std::string proposals_file;
    std::string annotations_file;
    // reproducibility
    std::optional<std::uint64_t> seed;

    std::size_t resolved_n_queries() const {
        if (n_queries) return *n_queries;
        return mode == "whole" ? 100 : 32;
    }

    std::vector<double> resolved_thresholds() const {
        return thresholds.empty() ? default_thresholds_thumos() : thresholds;
    }

    RelaxMode resolved_relax_mode() const {
        if (relax_mode == "threshold_cls_loc") return RelaxMode::threshold_cls_loc;
        if (relax_mode == "threshold_cls") return RelaxMode::threshold_cls;
        if (relax_mode == "top1_cls_loc") return RelaxMode::top1_cls_loc;
        throw ConfigError("unknown relax_mode: " + relax_mode);
    }

    InferMode resolved_infer_mode() const {
        if (mode == "window") return InferMode::window;
        if (mode == "whole") return InferMode::whole;
        throw ConfigError("unknown mode: " + mode);
    }

    ModelConfig model_config(std::size_t channels) const {
        ModelConfig mc;
        mc.channels = channels;
        mc.tem_hidden = tem_hidden;
        mc.alpha_r = alpha_r;
        mc.d_pos = d_pos;
        mc.decoder.layers = decoder_layers;
        mc.decoder.heads = heads;
        mc.decoder.d_model = d_model;
        mc.decoder.d_ffn = d_ffn;
        mc.decoder.n_queries = resolved_n_queries();
        if (decoder_pos == "none") mc.decoder.pos_placement = PosPlacement::none;
        else if (decoder_pos == "input") mc.decoder.pos_placement = PosPlacement::at_input;
        else if (decoder_pos == "attention") mc.decoder.pos_placement = PosPlacement::at_attention;
        else throw ConfigError("unknown decoder_pos: " + decoder_pos);
        if (placement == "pre") mc.placement = ProjectionPlacement::pre_enhance;
        else if (placement == "post") mc.placement = ProjectionPlacement::post_enhance;
        else throw ConfigError("unknown placement: " + placement);
        if (enhancement == "multiply") mc.enhancement = EnhancementMode::multiply;
        else if (enhancement == "concat") mc.enhancement = EnhancementMode::concat;
        else throw ConfigError("unknown enhancement: " + enhancement);
        return mc;
    }

    TrainSchedule schedule() const {
        TrainSchedule s;
        s.weights = {alpha, beta, gamma};
        s.relax_mode = resolved_relax_mode();
        s.relax_threshold = relax_threshold;
        s.batch_size = batch_size;
        s.adam = {lr, adam_beta1, adam_beta2, adam_eps, weight_decay};
        s.epochs_strict = epochs_strict;
        s.epochs_relaxed = epochs_relaxed;
        s.epochs_complete = epochs_complete;
        s.seed = seed.value_or(0);
        return s;
    }

    TemTrainConfig tem_train_config() const {
        TemTrainConfig c;
        c.epochs = tem_epochs;
        c.batch_size = batch_size;
        c.expansion = expansion;
        c.adam = {tem_lr, adam_beta1, adam_beta2, adam_eps, weight_decay};
        c.seed = seed.value_or(0);
        return c;
    }
};

namespace detail {

inline std::size_t byte_to_line(const std::string& text, std::size_t byte) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline void apply_config_json(TrainConfig& cfg, const nlohmann::json& j) {
    using detail::read_key;
    read_key(j, "alpha", cfg.alpha);
    read_key(j, "beta", cfg.beta);
    read_key(j, "gamma", cfg.gamma);
    read_key(j, "alpha_r", cfg.alpha_r);
    read_key(j, "d_pos", cfg.d_pos);
    read_key(j, "tem_hidden", cfg.tem_hidden);
    read_key(j, "expansion", cfg.expansion);
    read_key(j, "window_length", cfg.window_length);
    read_key(j, "train_overlap", cfg.train_overlap);
    read_key(j, "test_overlap", cfg.test_overlap);
    read_key(j, "mode", cfg.mode);
    read_key(j, "decoder_layers", cfg.decoder_layers);
    read_key(j, "heads", cfg.heads);
    read_key(j, "d_model", cfg.d_model);
    read_key(j, "d_ffn", cfg.d_ffn);
    if (j.contains("n_queries")) cfg.n_queries = j.at("n_queries").get<std::size_t>();
    read_key(j, "decoder_pos", cfg.decoder_pos);
    read_key(j, "placement", cfg.placement);
    read_key(j, "enhancement", cfg.enhancement);
    read_key(j, "lr", cfg.lr);
    read_key(j, "batch_size", cfg.batch_size);
    read_key(j, "weight_decay", cfg.weight_decay);
    read_key(j, "adam_beta1", cfg.adam_beta1);
    read_key(j, "adam_beta2", cfg.adam_beta2);
    read_key(j, "adam_eps", cfg.adam_eps);
    read_key(j, "epochs_strict", cfg.epochs_strict);
    read_key(j, "epochs_relaxed", cfg.epochs_relaxed);
    read_key(j, "epochs_complete", cfg.epochs_complete);
    read_key(j, "tem_epochs", cfg.tem_epochs);
    read_key(j, "tem_lr", cfg.tem_lr);
    read_key(j, "relax_mode", cfg.relax_mode);
    read_key(j, "relax_threshold", cfg.relax_threshold);
    read_key(j, "an_max", cfg.an_max);
    if (j.contains("thresholds")) cfg.thresholds = j.at("thresholds").get<std::vector<double>>();
    read_key(j, "snms_sigma", cfg.snms_sigma);
    read_key(j, "snms_floor", cfg.snms_floor);
    read_key(j, "dataset_dir", cfg.dataset_dir);
    read_key(j, "tem_checkpoint", cfg.tem_checkpoint);
    read_key(j, "checkpoint", cfg.checkpoint);
    read_key(j, "proposals_file", cfg.proposals_file);
    read_key(j, "annotations_file", cfg.annotations_file);
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
}

inline nlohmann::json parse_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("config parse error in " + path + " at line " +
                          std::to_string(detail::byte_to_line(text, e.byte)) + ": " + e.what());
    }
}

inline TrainConfig load_train_config(const std::string& path) {
    TrainConfig cfg;
    apply_config_json(cfg, parse_json_file(path));
    return cfg;
}

// Full resolved view, written to run manifests: no hidden defaults.
inline nlohmann::json resolved_config_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["alpha"] = cfg.alpha;
    j["beta"] = cfg.beta;
    j["gamma"] = cfg.gamma;
    j["alpha_r"] = cfg.alpha_r;
    j["d_pos"] = cfg.d_pos;
    j["tem_hidden"] = cfg.tem_hidden;
    j["expansion"] = cfg.expansion;
    j["window_length"] = cfg.window_length;
    j["train_overlap"] = cfg.train_overlap;
    j["test_overlap"] = cfg.test_overlap;
    j["mode"] = cfg.mode;
    j["decoder_layers"] = cfg.decoder_layers;
    j["heads"] = cfg.heads;
    j["d_model"] = cfg.d_model;
    j["d_ffn"] = cfg.d_ffn;
    j["n_queries"] = cfg.resolved_n_queries();
    j["decoder_pos"] = cfg.decoder_pos;
    j["placement"] = cfg.placement;
    j["enhancement"] = cfg.enhancement;
    j["lr"] = cfg.lr;
    j["batch_size"] = cfg.batch_size;
    j["weight_decay"] = cfg.weight_decay;
    j["adam_beta1"] = cfg.adam_beta1;
    j["adam_beta2"] = cfg.adam_beta2;
    j["adam_eps"] = cfg.adam_eps;
    j["epochs_strict"] = cfg.epochs_strict;
    j["epochs_relaxed"] = cfg.epochs_relaxed;
    j["epochs_complete"] = cfg.epochs_complete;
    j["tem_epochs"] = cfg.tem_epochs;
    j["tem_lr"] = cfg.tem_lr;
    j["relax_mode"] = cfg.relax_mode;
    j["relax_threshold"] = cfg.relax_threshold;
    j["an_max"] = cfg.an_max;
    j["thresholds"] = cfg.resolved_thresholds();
    j["snms_sigma"] = cfg.snms_sigma;
    j["snms_floor"] = cfg.snms_floor;
    j["dataset_dir"] = cfg.dataset_dir;
    j["tem_checkpoint"] = cfg.tem_checkpoint;
    j["checkpoint"] = cfg.checkpoint;
    j["proposals_file"] = cfg.proposals_file;
    j["annotations_file"] = cfg.annotations_file;
    if (cfg.seed) j["seed"] = *cfg.seed;
    return j;
}

inline SyntheticConfig load_synthetic_config(const nlohmann::json& j) {
    using detail::read_key;
    SyntheticConfig cfg;
    read_key(j, "videos", cfg.videos);
    read_key(j, "steps", cfg.steps);
    read_key(j, "channels", cfg.channels);
    read_key(j, "min_instances", cfg.min_instances);
    read_key(j, "max_instances", cfg.max_instances);
    read_key(j, "min_len_steps", cfg.min_len_steps);
    read_key(j, "max_len_steps", cfg.max_len_steps);
    read_key(j, "min_gap_steps", cfg.min_gap_steps);
    read_key(j, "noise_level", cfg.noise_level);
    read_key(j, "smoothing_radius", cfg.smoothing_radius);
    read_key(j, "seconds_per_step", cfg.seconds_per_step);
    read_key(j, "background_scale", cfg.background_scale);
    read_key(j, "id_prefix", cfg.id_prefix);
    return cfg;
}

inline nlohmann::json synthetic_config_json(const SyntheticConfig& cfg) {
    return {{"videos", cfg.videos},
            {"steps", cfg.steps},
            {"channels", cfg.channels},
            {"min_instances", cfg.min_instances},
            {"max_instances", cfg.max_instances},
            {"min_len_steps", cfg.min_len_steps},
            {"max_len_steps", cfg.max_len_steps},
            {"min_gap_steps", cfg.min_gap_steps},
            {"noise_level", cfg.noise_level},
            {"smoothing_radius", cfg.smoothing_radius},
            {"seconds_per_step", cfg.seconds_per_step},
            {"background_scale", cfg.background_scale},
            {"id_prefix", cfg.id_prefix}};
}

}  // namespace rtd
