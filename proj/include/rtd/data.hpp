#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rtd/checkpoint.hpp"
#include "rtd/tensor.hpp"

namespace rtd {

// Per-step video features with time metadata.
struct FeatureSequence {
    std::string video_id;
    Tensor values;  // T×C
    double seconds_per_step = 1.0;

    std::size_t steps() const { return values.rows(); }
    std::size_t channels() const { return values.cols(); }
    double duration_sec() const { return static_cast<double>(steps()) * seconds_per_step; }
};

struct GroundTruthInstance {
    double start_sec = 0.0;
    double end_sec = 0.0;
    std::string label;
};

struct VideoAnnotation {
    std::string video_id;
    double duration_sec = 0.0;
    std::vector<GroundTruthInstance> instances;
};

// A local ground truth inside a window, in [0,1] window coordinates.
struct LocalTarget {
    double start = 0.0;
    double end = 0.0;
    std::string label;
};

// One observation window over a feature sequence. features are always
// length_steps rows; when the source run out early, the tail rows are zero
// and valid_steps marks the padding boundary.
struct Window {
    std::string video_id;
    std::size_t global_offset_steps = 0;
    std::size_t length_steps = 100;
    std::size_t valid_steps = 100;
    double seconds_per_step = 1.0;
    Tensor features;  // length_steps × C, zero-padded past valid_steps
    std::vector<LocalTarget> targets;

    bool padded() const { return valid_steps < length_steps; }

    double local_to_sec(double t) const {
        return (static_cast<double>(global_offset_steps) +
                t * static_cast<double>(length_steps)) *
               seconds_per_step;
    }

    double sec_to_local(double s) const {
        return (s / seconds_per_step - static_cast<double>(global_offset_steps)) /
               static_cast<double>(length_steps);
    }
};

// ---- RTDF feature file format ----
// magic "RTDF", version u32, T u32, C u32, seconds_per_step f64,
// then T×C little-endian f64 row-major.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

inline void save_features(const FeatureSequence& fs, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("RTDF", 4);
    detail::put_le<std::uint32_t>(os, kFeatureFileVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(fs.steps()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(fs.channels()));
    detail::put_f64(os, fs.seconds_per_step);
    for (std::size_t i = 0; i < fs.values.size(); ++i) detail::put_f64(os, fs.values[i]);
    if (!os) throw IoError("write failed: " + path);
}

inline FeatureSequence load_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "RTDF", 4) != 0)
        throw FormatError("bad feature magic at byte 0 in " + path);
    std::uint32_t version = 0, t = 0, c = 0;
    if (!detail::get_le(is, version) || version != kFeatureFileVersion)
        throw FormatError("unsupported feature version at byte 4 in " + path);
    if (!detail::get_le(is, t) || !detail::get_le(is, c))
        throw FormatError("truncated feature header at byte 8 in " + path);
    if (t == 0 || c == 0) throw FormatError("empty feature dims in " + path);
    FeatureSequence fs;
    if (!detail::get_f64(is, fs.seconds_per_step) || fs.seconds_per_step <= 0.0)
        throw FormatError("bad seconds_per_step at byte 16 in " + path);
    fs.values = Tensor({t, c});
    for (std::size_t i = 0; i < fs.values.size(); ++i) {
        if (!detail::get_f64(is, fs.values[i]))
            throw FormatError("truncated feature payload at byte " +
                              std::to_string(24 + 8 * i) + " in " + path);
    }
    fs.video_id = std::filesystem::path(path).stem().string();
    return fs;
}

// Early fusion: concatenate several streams channel-wise. All streams must
// agree on T and seconds_per_step.
inline FeatureSequence load_features_fused(const std::vector<std::string>& paths) {
    if (paths.empty()) throw ConfigError("load_features_fused: no streams");
    FeatureSequence out = load_features(paths[0]);
    for (std::size_t s = 1; s < paths.size(); ++s) {
        FeatureSequence next = load_features(paths[s]);
        if (next.steps() != out.steps())
            throw ShapeError("stream fusion: step count mismatch between " + paths[0] + " and " +
                             paths[s]);
        if (next.seconds_per_step != out.seconds_per_step)
            throw ShapeError("stream fusion: seconds_per_step mismatch");
        Tensor fused({out.steps(), out.channels() + next.channels()});
        for (std::size_t i = 0; i < out.steps(); ++i) {
            for (std::size_t j = 0; j < out.channels(); ++j) fused(i, j) = out.values(i, j);
            for (std::size_t j = 0; j < next.channels(); ++j)
                fused(i, out.channels() + j) = next.values(i, j);
        }
        out.values = std::move(fused);
    }
    return out;
}

// ---- annotations ----

inline nlohmann::json annotation_to_json(const VideoAnnotation& a) {
    nlohmann::json inst = nlohmann::json::array();
    for (const auto& g : a.instances)
        inst.push_back({{"start_sec", g.start_sec}, {"end_sec", g.end_sec}, {"label", g.label}});
    return {{"video_id", a.video_id}, {"duration_sec", a.duration_sec}, {"instances", inst}};
}

inline VideoAnnotation annotation_from_json(const nlohmann::json& j) {
    VideoAnnotation a;
    a.video_id = j.at("video_id").get<std::string>();
    a.duration_sec = j.at("duration_sec").get<double>();
    for (const auto& i : j.at("instances")) {
        GroundTruthInstance g;
        g.start_sec = i.at("start_sec").get<double>();
        g.end_sec = i.at("end_sec").get<double>();
        g.label = i.value("label", std::string());
        if (g.end_sec <= g.start_sec)
            throw FormatError("annotation with non-positive duration in " + a.video_id);
        a.instances.push_back(std::move(g));
    }
    return a;
}

inline void save_annotations(const std::vector<VideoAnnotation>& anns, const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& a : anns) arr.push_back(annotation_to_json(a));
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os << arr.dump(2) << "\n";
}

inline std::vector<VideoAnnotation> load_annotations(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    nlohmann::json arr;
    try {
        is >> arr;
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("annotation parse error in " + path + ": " + e.what());
    }
    std::vector<VideoAnnotation> out;
    for (const auto& j : arr) out.push_back(annotation_from_json(j));
    return out;
}

// ---- windowing ----

// Slides fixed-length windows with the given overlap; the final window is
// snapped so its end equals T. In train mode, windows whose clipped target
// set is empty are dropped. Local targets shorter than one step after
// clipping are discarded.
inline std::vector<Window> sliding_windows(const FeatureSequence& fs,
                                           const std::vector<GroundTruthInstance>& gts,
                                           std::size_t length, double overlap, bool train) {
    if (length < 1) throw ConfigError("sliding_windows: length must be >= 1");
    if (overlap < 0.0 || overlap >= 1.0) throw ConfigError("sliding_windows: overlap in [0,1)");
    const std::size_t t_total = fs.steps();
    std::size_t stride = static_cast<std::size_t>(
        std::llround(static_cast<double>(length) * (1.0 - overlap)));
    if (stride == 0) stride = 1;

    std::vector<std::size_t> starts;
    if (t_total <= length) {
        starts.push_back(0);
    } else {
        for (std::size_t s = 0;; s += stride) {
            if (s + length >= t_total) {
                starts.push_back(t_total - length);
                break;
            }
            starts.push_back(s);
        }
    }

    std::vector<Window> out;
    for (std::size_t s : starts) {
        Window w;
        w.video_id = fs.video_id;
        w.global_offset_steps = s;
        w.length_steps = length;
        w.valid_steps = std::min(length, t_total - s);
        w.seconds_per_step = fs.seconds_per_step;
        w.features = Tensor({length, fs.channels()});
        for (std::size_t i = 0; i < w.valid_steps; ++i)
            for (std::size_t j = 0; j < fs.channels(); ++j)
                w.features(i, j) = fs.values(s + i, j);
        const double win_start = static_cast<double>(s) * fs.seconds_per_step;
        const double win_len = static_cast<double>(length) * fs.seconds_per_step;
        for (const auto& g : gts) {
            const double lo = std::max(g.start_sec, win_start);
            const double hi = std::min(g.end_sec, win_start + win_len);
            if (hi - lo < fs.seconds_per_step) continue;  // sub-step fragment
            LocalTarget t;
            t.start = (lo - win_start) / win_len;
            t.end = (hi - win_start) / win_len;
            t.label = g.label;
            w.targets.push_back(std::move(t));
        }
        if (train && w.targets.empty()) continue;
        out.push_back(std::move(w));
    }
    return out;
}

// Per-channel linear interpolation to target_len steps; endpoints preserved.
inline FeatureSequence rescale_linear(const FeatureSequence& fs, std::size_t target_len) {
    if (target_len < 2) throw ConfigError("rescale_linear: target_len must be >= 2");
    if (fs.steps() < 2)
        throw ShapeError("rescale_linear: cannot broadcast a single step");
    FeatureSequence out;
    out.video_id = fs.video_id;
    out.seconds_per_step =
        fs.seconds_per_step * static_cast<double>(fs.steps()) / static_cast<double>(target_len);
    out.values = Tensor({target_len, fs.channels()});
    const double scale = static_cast<double>(fs.steps() - 1) / static_cast<double>(target_len - 1);
    for (std::size_t i = 0; i < target_len; ++i) {
        const double pos = static_cast<double>(i) * scale;
        const std::size_t lo = std::min(static_cast<std::size_t>(pos), fs.steps() - 2);
        const double frac = pos - static_cast<double>(lo);
        for (std::size_t j = 0; j < fs.channels(); ++j)
            out.values(i, j) = (1.0 - frac) * fs.values(lo, j) + frac * fs.values(lo + 1, j);
    }
    return out;
}

// ---- synthetic corpus ----

struct SyntheticConfig {
    std::size_t videos = 200;
    std::size_t steps = 100;          // T
    std::size_t channels = 16;        // C
    std::size_t min_instances = 1;
    std::size_t max_instances = 4;
    std::size_t min_len_steps = 8;    // instance duration bounds
    std::size_t max_len_steps = 25;
    std::size_t min_gap_steps = 5;    // between instances and to window edges
    double noise_level = 0.05;
    std::size_t smoothing_radius = 2;
    double seconds_per_step = 1.0;
    double background_scale = 0.25;   // prototype magnitude for gaps
    std::string id_prefix = "synth";
};

struct SyntheticDataset {
    std::vector<FeatureSequence> features;
    std::vector<VideoAnnotation> annotations;
};

namespace detail {

// Instance count inside [min,max], weighted toward fewer instances
// (weight 2^-(k-min)); keeps multi-instance videos present without letting
// the mean instance count dominate top-1 recall ceilings.
inline std::size_t draw_instance_count(const SyntheticConfig& cfg, Rng& rng) {
    std::vector<double> w;
    double total = 0.0;
    for (std::size_t k = cfg.min_instances; k <= cfg.max_instances; ++k) {
        w.push_back(std::pow(0.5, static_cast<double>(k - cfg.min_instances)));
        total += w.back();
    }
    double x = rng.uniform() * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (x < w[i]) return cfg.min_instances + i;
        x -= w[i];
    }
    return cfg.max_instances;
}

}  // namespace detail

// Plants non-overlapping intervals, gives each segment (action or gap) its
// own prototype vector, adds white noise, then smooths with a moving
// average. Background prototypes are drawn at lower magnitude than action
// prototypes so that foreground is statistically separable.
inline SyntheticDataset synth_generate(const SyntheticConfig& cfg, std::uint64_t seed) {
    if (cfg.min_instances < 1 || cfg.max_instances < cfg.min_instances)
        throw ConfigError("synth: bad instance count range");
    if (cfg.min_len_steps < 1 || cfg.max_len_steps < cfg.min_len_steps)
        throw ConfigError("synth: bad instance length range");
    SyntheticDataset ds;
    Rng rng(seed);
    for (std::size_t v = 0; v < cfg.videos; ++v) {
        const std::size_t count = detail::draw_instance_count(cfg, rng);
        // Draw lengths until the packing fits; this is the retry loop.
        std::vector<std::size_t> lens;
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            lens.clear();
            std::size_t total = 0;
            for (std::size_t i = 0; i < count; ++i) {
                lens.push_back(static_cast<std::size_t>(rng.uniform_int(
                    static_cast<std::int64_t>(cfg.min_len_steps),
                    static_cast<std::int64_t>(cfg.max_len_steps))));
                total += lens.back();
            }
            const std::size_t fixed = total + (count + 1) * cfg.min_gap_steps;
            if (fixed <= cfg.steps) placed = true;
        }
        if (!placed)
            throw ConfigError("synth: cannot pack " + std::to_string(count) +
                              " instances into " + std::to_string(cfg.steps) + " steps");
        // Distribute the leftover slack over the count+1 gaps.
        std::size_t slack = cfg.steps - (count + 1) * cfg.min_gap_steps;
        for (std::size_t l : lens) slack -= l;
        std::vector<std::size_t> extra(count + 1, 0);
        for (std::size_t s = 0; s < slack; ++s)
            ++extra[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(count)))];

        std::vector<std::pair<std::size_t, std::size_t>> intervals;  // [start, end) steps
        std::size_t cursor = 0;
        for (std::size_t i = 0; i < count; ++i) {
            cursor += cfg.min_gap_steps + extra[i];
            intervals.emplace_back(cursor, cursor + lens[i]);
            cursor += lens[i];
        }

        // Segment layout: gap0, action0, gap1, action1, ..., gapN.
        FeatureSequence fs;
        fs.video_id = cfg.id_prefix + "_" + std::to_string(v);
        fs.seconds_per_step = cfg.seconds_per_step;
        fs.values = Tensor({cfg.steps, cfg.channels});
        auto fill_segment = [&](std::size_t lo, std::size_t hi, double scale) {
            std::vector<double> proto(cfg.channels);
            for (auto& x : proto) x = scale * rng.normal();
            for (std::size_t t = lo; t < hi; ++t)
                for (std::size_t j = 0; j < cfg.channels; ++j) fs.values(t, j) = proto[j];
        };
        std::size_t prev_end = 0;
        for (const auto& [lo, hi] : intervals) {
            fill_segment(prev_end, lo, cfg.background_scale);
            fill_segment(lo, hi, 1.0);
            prev_end = hi;
        }
        fill_segment(prev_end, cfg.steps, cfg.background_scale);

        if (cfg.noise_level > 0.0)
            for (std::size_t i = 0; i < fs.values.size(); ++i)
                fs.values[i] += cfg.noise_level * rng.normal();

        if (cfg.smoothing_radius > 0) {
            Tensor smoothed({cfg.steps, cfg.channels});
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(cfg.smoothing_radius);
            for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(cfg.steps); ++t) {
                const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, t - r);
                const std::ptrdiff_t hi =
                    std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(cfg.steps) - 1, t + r);
                for (std::size_t j = 0; j < cfg.channels; ++j) {
                    double acc = 0.0;
                    for (std::ptrdiff_t s = lo; s <= hi; ++s)
                        acc += fs.values(static_cast<std::size_t>(s), j);
                    smoothed(static_cast<std::size_t>(t), j) = acc / static_cast<double>(hi - lo + 1);
                }
            }
            fs.values = std::move(smoothed);
        }

        VideoAnnotation ann;
        ann.video_id = fs.video_id;
        ann.duration_sec = fs.duration_sec();
        for (const auto& [lo, hi] : intervals) {
            GroundTruthInstance g;
            g.start_sec = static_cast<double>(lo) * cfg.seconds_per_step;
            g.end_sec = static_cast<double>(hi) * cfg.seconds_per_step;
            g.label = "action";
            ann.instances.push_back(std::move(g));
        }
        ds.features.push_back(std::move(fs));
        ds.annotations.push_back(std::move(ann));
    }
    return ds;
}

}  // namespace rtd
