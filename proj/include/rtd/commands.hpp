#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rtd/config.hpp"

namespace rtd {

// Flag-level overrides shared by the CLI subcommands; flags win over the
// config file, which wins over defaults.
struct CommandOptions {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    bool dump_attention = false;
    bool dump_boundary = false;
    bool with_soft_nms = false;
    std::optional<std::size_t> an_max;
    std::vector<double> thresholds;
};

struct Dataset {
    std::vector<FeatureSequence> features;
    std::vector<VideoAnnotation> annotations;  // aligned by video_id lookup

    const VideoAnnotation* find(const std::string& video_id) const {
        for (const auto& a : annotations)
            if (a.video_id == video_id) return &a;
        return nullptr;
    }
};

namespace cmd_detail {

namespace fs = std::filesystem;

inline TrainConfig resolve_config(const CommandOptions& opts, bool need_seed) {
    TrainConfig cfg;
    if (!opts.config_path.empty()) cfg = load_train_config(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.mode) cfg.mode = *opts.mode;
    if (opts.an_max) cfg.an_max = *opts.an_max;
    if (!opts.thresholds.empty()) cfg.thresholds = opts.thresholds;
    if (need_seed && !cfg.seed)
        throw ConfigError("a seed is required (--seed flag or \"seed\" config key)");
    return cfg;
}

inline void write_manifest(const std::string& out_dir, const std::string& command,
                           const nlohmann::json& config, const nlohmann::json& extra = {}) {
    nlohmann::json m;
    m["command"] = command;
    m["config"] = config;
    if (!extra.is_null() && !extra.empty()) m["run"] = extra;
    std::ofstream os(fs::path(out_dir) / "run_manifest.json", std::ios::trunc);
    if (!os) throw IoError("cannot write run manifest in " + out_dir);
    os << m.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dir, bool need_annotations) {
    if (dir.empty()) throw ConfigError("dataset_dir is required");
    const fs::path root(dir);
    const fs::path feat_dir = root / "features";
    if (!fs::exists(feat_dir)) throw IoError("missing features directory: " + feat_dir.string());
    Dataset ds;
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(feat_dir))
        if (e.is_regular_file() && e.path().extension() == ".rtdf")
            files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .rtdf feature files under " + feat_dir.string());
    for (const auto& f : files) ds.features.push_back(load_features(f));
    const fs::path ann = root / "annotations.json";
    if (fs::exists(ann)) ds.annotations = load_annotations(ann.string());
    else if (need_annotations) throw IoError("missing annotations file: " + ann.string());
    return ds;
}

inline std::vector<Window> training_windows(const Dataset& ds, const TrainConfig& cfg) {
    std::vector<Window> windows;
    for (const auto& fsq : ds.features) {
        const VideoAnnotation* ann = ds.find(fsq.video_id);
        if (!ann) continue;
        const FeatureSequence* src = &fsq;
        FeatureSequence rescaled;
        std::vector<GroundTruthInstance> gts = ann->instances;
        if (cfg.mode == "whole" && fsq.steps() != cfg.window_length) {
            rescaled = rescale_linear(fsq, cfg.window_length);
            src = &rescaled;
            // Annotations stay in seconds; only seconds_per_step changed.
        }
        auto ws = sliding_windows(*src, gts, cfg.window_length,
                                  cfg.mode == "whole" ? 0.0 : cfg.train_overlap, true);
        for (auto& w : ws) windows.push_back(std::move(w));
    }
    if (windows.empty()) throw ConfigError("no training windows with targets");
    return windows;
}

inline RtdModel build_model(const TrainConfig& cfg, std::size_t channels) {
    return RtdModel(cfg.model_config(channels), cfg.seed.value_or(0));
}

inline void save_loss_log(const std::vector<EpochLog>& logs, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "epoch,phase,l_cls,l_boundary,l_complete,n_pos\n";
    char buf[192];
    for (const auto& l : logs) {
        std::snprintf(buf, sizeof(buf), "%zu,%s,%.12g,%.12g,%.12g,%zu\n", l.epoch, l.phase.c_str(),
                      l.l_cls, l.l_boundary, l.l_complete, l.n_pos);
        os << buf;
    }
}

}  // namespace cmd_detail

// synth: generate a synthetic dataset tree (features/ + annotations.json).
inline int run_synth(const CommandOptions& opts) {
    namespace fs = std::filesystem;
    if (opts.config_path.empty()) throw ConfigError("synth requires --config");
    const nlohmann::json j = parse_json_file(opts.config_path);
    const SyntheticConfig cfg = load_synthetic_config(j);
    std::optional<std::uint64_t> seed = opts.seed;
    if (!seed && j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
    if (!seed) throw ConfigError("synth requires a seed (--seed flag or \"seed\" config key)");

    const SyntheticDataset ds = synth_generate(cfg, *seed);
    const fs::path root(opts.out_dir);
    fs::create_directories(root / "features");
    for (const auto& f : ds.features)
        save_features(f, (root / "features" / (f.video_id + ".rtdf")).string());
    save_annotations(ds.annotations, (root / "annotations.json").string());
    nlohmann::json config = synthetic_config_json(cfg);
    config["seed"] = *seed;
    cmd_detail::write_manifest(opts.out_dir, "synth", config,
                               {{"videos_written", ds.features.size()}});
    return 0;
}

// train-tem: fit the boundary predictor and emit a TEM-only checkpoint.
inline int run_train_tem(const CommandOptions& opts) {
    namespace fs = std::filesystem;
    const TrainConfig cfg = cmd_detail::resolve_config(opts, true);
    const Dataset ds = cmd_detail::load_dataset(cfg.dataset_dir, true);
    const std::vector<Window> windows = cmd_detail::training_windows(ds, cfg);
    RtdModel model = cmd_detail::build_model(cfg, ds.features.front().channels());

    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<EpochLog> logs = train_tem(model, windows, cfg.tem_train_config());
    const double wall_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(opts.out_dir);
    save_checkpoint(model.params(), (fs::path(opts.out_dir) / "tem.rtdw").string(), "tem.");
    cmd_detail::save_loss_log(logs, (fs::path(opts.out_dir) / "tem_loss_log.csv").string());
    cmd_detail::write_manifest(opts.out_dir, "train-tem", resolved_config_json(cfg),
                               {{"windows", windows.size()}, {"wall_ms", wall_ms}});
    return 0;
}

// train: run the three-phase schedule; emits model.rtdw + loss_log.csv.
inline int run_train(const CommandOptions& opts) {
    namespace fs = std::filesystem;
    const TrainConfig cfg = cmd_detail::resolve_config(opts, true);
    if (cfg.tem_checkpoint.empty())
        throw ConfigError("train requires tem_checkpoint (train the TEM first)");
    const Dataset ds = cmd_detail::load_dataset(cfg.dataset_dir, true);
    const std::vector<Window> windows = cmd_detail::training_windows(ds, cfg);
    RtdModel model = cmd_detail::build_model(cfg, ds.features.front().channels());
    load_checkpoint(model.params(), cfg.tem_checkpoint);

    const auto t0 = std::chrono::steady_clock::now();
    Trainer trainer(model, cfg.schedule());
    const std::vector<EpochLog> logs = trainer.run(windows);
    const double wall_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(opts.out_dir);
    save_checkpoint(model.params(), (fs::path(opts.out_dir) / "model.rtdw").string());
    cmd_detail::save_loss_log(logs, (fs::path(opts.out_dir) / "loss_log.csv").string());
    cmd_detail::write_manifest(opts.out_dir, "train", resolved_config_json(cfg),
                               {{"windows", windows.size()}, {"wall_ms", wall_ms}});
    return 0;
}

// infer: NMS-free proposal generation over a dataset; proposals.jsonl plus
// optional attention/boundary dumps.
inline int run_infer(const CommandOptions& opts) {
    namespace fs = std::filesystem;
    const TrainConfig cfg = cmd_detail::resolve_config(opts, false);
    if (cfg.checkpoint.empty()) throw ConfigError("infer requires checkpoint");
    const Dataset ds = cmd_detail::load_dataset(cfg.dataset_dir, false);
    RtdModel model = cmd_detail::build_model(cfg, ds.features.front().channels());
    load_checkpoint(model.params(), cfg.checkpoint);

    fs::create_directories(opts.out_dir);
    std::vector<InferResult> results(ds.features.size());
    parallel_for(ds.features.size(), [&](std::size_t i) {
        results[i] = infer(ds.features[i], model, cfg.resolved_infer_mode(), cfg.window_length,
                           cfg.test_overlap, opts.dump_attention);
    });

    StageTimesMs times;
    std::vector<ScoredProposal> all;
    for (std::size_t i = 0; i < results.size(); ++i) {
        times.boundary += results[i].times.boundary;
        times.encoding += results[i].times.encoding;
        times.decoding += results[i].times.decoding;
        times.heads += results[i].times.heads;
        for (auto& p : results[i].proposals) all.push_back(std::move(p));
    }
    save_proposals_jsonl(all, (fs::path(opts.out_dir) / "proposals.jsonl").string());

    if (opts.dump_attention) {
        const fs::path attn_dir = fs::path(opts.out_dir) / "attention";
        fs::create_directories(attn_dir);
        for (std::size_t i = 0; i < results.size(); ++i) {
            if (results[i].attention.empty()) continue;
            // First window per video keeps the dump volume bounded.
            const auto& [w, layers] = results[i].attention.front();
            for (std::size_t l = 0; l < layers.size(); ++l) {
                const std::string stem = w.video_id + "_w0_layer" + std::to_string(l);
                save_attention_csv(layers[l].self_attn, (attn_dir / (stem + "_self.csv")).string());
                save_attention_csv(layers[l].cross_attn, (attn_dir / (stem + "_cross.csv")).string());
            }
        }
    }
    if (opts.dump_boundary) {
        const fs::path bdir = fs::path(opts.out_dir) / "boundary";
        fs::create_directories(bdir);
        for (const auto& fsq : ds.features) {
            const BoundaryScores scores = model.boundary_scores(fsq.values);
            dump_boundary_csv(scores, (bdir / (fsq.video_id + "_boundary.csv")).string());
        }
    }

    cmd_detail::write_manifest(opts.out_dir, "infer", resolved_config_json(cfg),
                               {{"proposals", all.size()},
                                {"stage_ms",
                                 {{"boundary", times.boundary},
                                  {"encoding", times.encoding},
                                  {"decoding", times.decoding},
                                  {"heads", times.heads}}}});
    return 0;
}

// eval: AR@AN table, AUC, optional mAP (labeled inputs), optional Soft-NMS
// comparison.
inline int run_eval(const CommandOptions& opts) {
    namespace fs = std::filesystem;
    const TrainConfig cfg = cmd_detail::resolve_config(opts, false);
    if (cfg.proposals_file.empty() || cfg.annotations_file.empty())
        throw ConfigError("eval requires proposals_file and annotations_file");
    const std::vector<ScoredProposal> proposals = load_proposals_jsonl(cfg.proposals_file);
    const std::vector<VideoAnnotation> annotations = load_annotations(cfg.annotations_file);
    const std::vector<double> thresholds = cfg.resolved_thresholds();

    fs::create_directories(opts.out_dir);
    const RecallTable table = ar_at_an(proposals, annotations, thresholds, cfg.an_max);
    save_recall_csv(table, (fs::path(opts.out_dir) / "ar_an.csv").string());

    nlohmann::json metrics;
    auto ar_at = [&](std::size_t an) -> std::optional<double> {
        if (an < 1 || an > table.an_values.size()) return std::nullopt;
        return table.average_recall[an - 1];
    };
    for (std::size_t an : {std::size_t{1}, std::size_t{10}, std::size_t{50}, std::size_t{100}})
        if (auto v = ar_at(an)) metrics["ar_at_" + std::to_string(an)] = *v;
    if (table.an_values.size() >= 2) metrics["auc"] = auc(table);

    bool labeled = !proposals.empty();
    for (const auto& p : proposals)
        if (p.label.empty()) labeled = false;
    if (labeled) {
        std::vector<std::string> warnings;
        const ApReport ap = map_metric(proposals, annotations, thresholds, &warnings);
        metrics["map_mean"] = ap.mean_map;
        for (std::size_t i = 0; i < ap.thresholds.size(); ++i) {
            char key[32];
            std::snprintf(key, sizeof(key), "map_at_%.2f", ap.thresholds[i]);
            metrics[key] = ap.map_per_threshold[i];
        }
        if (!warnings.empty()) metrics["map_warnings"] = warnings;
    }

    if (opts.with_soft_nms) {
        const std::vector<ScoredProposal> rescored =
            soft_nms(proposals, cfg.snms_sigma, cfg.snms_floor);
        const RecallTable snms_table = ar_at_an(rescored, annotations, thresholds, cfg.an_max);
        save_recall_csv(snms_table, (fs::path(opts.out_dir) / "ar_an_snms.csv").string());
        if (snms_table.an_values.size() >= 2) metrics["auc_snms"] = auc(snms_table);
    }

    std::ofstream os(fs::path(opts.out_dir) / "metrics.json", std::ios::trunc);
    if (!os) throw IoError("cannot write metrics.json in " + opts.out_dir);
    os << metrics.dump(2) << "\n";
    cmd_detail::write_manifest(opts.out_dir, "eval", resolved_config_json(cfg),
                               {{"proposals", proposals.size()}});
    return 0;
}

// fp-profile: bucket fractions over top-1G..10G proposals per video.
inline int run_fp_profile(const CommandOptions& opts) {
    namespace fs = std::filesystem;
    const TrainConfig cfg = cmd_detail::resolve_config(opts, false);
    if (cfg.proposals_file.empty() || cfg.annotations_file.empty())
        throw ConfigError("fp-profile requires proposals_file and annotations_file");
    const std::vector<ScoredProposal> proposals = load_proposals_jsonl(cfg.proposals_file);
    const std::vector<VideoAnnotation> annotations = load_annotations(cfg.annotations_file);
    fs::create_directories(opts.out_dir);
    save_fp_profile_csv(proposals, annotations, 0.5,
                        (fs::path(opts.out_dir) / "fp_profile.csv").string());
    cmd_detail::write_manifest(opts.out_dir, "fp-profile", resolved_config_json(cfg),
                               {{"proposals", proposals.size()}});
    return 0;
}

}  // namespace rtd
