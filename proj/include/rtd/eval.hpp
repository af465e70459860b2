#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rtd/losses.hpp"

namespace rtd {

// A proposal mapped to global seconds with its fused confidence.
struct ScoredProposal {
    std::string video_id;
    double start_sec = 0.0;
    double end_sec = 0.0;
    double score = 0.0;
    double p_bc = 0.0;
    double p_c = 0.0;
    std::string label;  // optional; empty when class-agnostic
};

inline double fuse_scores(double p_bc, double p_c) {
    if (p_bc < 0.0 || p_bc > 1.0 || p_c < 0.0 || p_c > 1.0)
        throw ConfigError("fuse_scores: inputs must lie in [0,1]");
    return 0.5 * (p_bc + p_c);
}

enum class InferMode { window, whole };

struct StageTimesMs {
    double boundary = 0.0;
    double encoding = 0.0;
    double decoding = 0.0;
    double heads = 0.0;
};

struct InferResult {
    std::vector<ScoredProposal> proposals;
    StageTimesMs times;
    // One entry per processed window when attention dumping is requested.
    std::vector<std::pair<Window, std::vector<LayerAttention>>> attention;
};

inline bool proposal_order(const ScoredProposal& a, const ScoredProposal& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start_sec != b.start_sec) return a.start_sec < b.start_sec;
    return a.end_sec < b.end_sec;
}

// NMS-free inference on one video. Window mode slides test windows
// (overlap 0.5 by default) and pools every query of every window; whole
// mode rescales the sequence to the window length first. No suppression or
// deduplication anywhere; proposals are sorted by fused score.
inline InferResult infer(const FeatureSequence& fs, const RtdModel& model, InferMode mode,
                         std::size_t window_length, double test_overlap, bool want_attention = false) {
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };
    const FeatureSequence* src = &fs;
    FeatureSequence rescaled;
    if (mode == InferMode::whole && fs.steps() != window_length) {
        rescaled = rescale_linear(fs, window_length);
        src = &rescaled;
    }
    std::vector<Window> windows = mode == InferMode::whole
                                      ? sliding_windows(*src, {}, window_length, 0.0, false)
                                      : sliding_windows(*src, {}, window_length, test_overlap, false);

    InferResult out;
    for (const auto& w : windows) {
        const auto t0 = clock::now();
        EncoderInput in = model.prepare_encoder_input(w);
        const auto t1 = clock::now();
        Tensor memory = model.memory_values(in);
        const auto t2 = clock::now();
        std::vector<LayerAttention> attn;
        Tensor dec_out = model.decoder_values(memory, want_attention ? &attn : nullptr);
        const auto t3 = clock::now();
        std::vector<ProposalPrediction> preds = model.head_values(dec_out);
        const auto t4 = clock::now();
        out.times.boundary += ms(t0, t1);
        out.times.encoding += ms(t1, t2);
        out.times.decoding += ms(t2, t3);
        out.times.heads += ms(t3, t4);
        for (const auto& p : preds) {
            ScoredProposal sp;
            sp.video_id = fs.video_id;
            sp.start_sec = w.local_to_sec(p.t_start);
            sp.end_sec = w.local_to_sec(p.t_end);
            sp.p_bc = p.p_bc;
            sp.p_c = p.p_c;
            sp.score = fuse_scores(p.p_bc, p.p_c);
            out.proposals.push_back(std::move(sp));
        }
        if (want_attention) out.attention.emplace_back(w, std::move(attn));
    }
    std::stable_sort(out.proposals.begin(), out.proposals.end(), proposal_order);
    return out;
}

// ---- proposal files (JSON lines) ----

inline void save_proposals_jsonl(const std::vector<ScoredProposal>& props, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    for (const auto& p : props) {
        nlohmann::json j{{"video_id", p.video_id}, {"start_sec", p.start_sec},
                         {"end_sec", p.end_sec},   {"score", p.score},
                         {"p_bc", p.p_bc},         {"p_c", p.p_c}};
        if (!p.label.empty()) j["label"] = p.label;
        os << j.dump() << "\n";
    }
}

inline std::vector<ScoredProposal> load_proposals_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::vector<ScoredProposal> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("proposal parse error at " + path + ":" + std::to_string(line_no) +
                              ": " + e.what());
        }
        ScoredProposal p;
        p.video_id = j.at("video_id").get<std::string>();
        p.start_sec = j.at("start_sec").get<double>();
        p.end_sec = j.at("end_sec").get<double>();
        p.score = j.at("score").get<double>();
        p.p_bc = j.value("p_bc", 0.0);
        p.p_c = j.value("p_c", 0.0);
        p.label = j.value("label", std::string());
        out.push_back(std::move(p));
    }
    return out;
}

// ---- AR@AN / AUC ----

struct RecallTable {
    std::vector<std::size_t> an_values;       // 1..AN_max
    std::vector<double> thresholds;
    std::vector<std::vector<double>> recall;  // [an][threshold]
    std::vector<double> average_recall;       // mean over thresholds per AN
};

inline std::vector<double> default_thresholds_thumos() {
    std::vector<double> t;
    for (int i = 0; i <= 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

inline std::vector<double> default_thresholds_anet() {
    std::vector<double> t;
    for (int i = 0; i <= 9; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

namespace detail {

struct VideoEval {
    std::vector<Interval> gts;
    std::vector<Interval> props;  // sorted by score descending
};

inline std::map<std::string, VideoEval> group_for_eval(
    const std::vector<ScoredProposal>& proposals, const std::vector<VideoAnnotation>& annotations) {
    std::map<std::string, VideoEval> vids;
    for (const auto& a : annotations) {
        auto& v = vids[a.video_id];
        for (const auto& g : a.instances) v.gts.push_back({g.start_sec, g.end_sec});
    }
    std::map<std::string, std::vector<ScoredProposal>> per_video;
    for (const auto& p : proposals) per_video[p.video_id].push_back(p);
    for (auto& [id, list] : per_video) {
        std::stable_sort(list.begin(), list.end(), proposal_order);
        auto& v = vids[id];
        for (const auto& p : list) v.props.push_back({p.start_sec, p.end_sec});
    }
    return vids;
}

}  // namespace detail

// Corpus-pooled average recall: a target is recalled at threshold th if any
// of the video's top-AN proposals reaches tIoU >= th; recall pools counts
// over all videos with at least one target.
inline RecallTable ar_at_an(const std::vector<ScoredProposal>& proposals,
                            const std::vector<VideoAnnotation>& annotations,
                            const std::vector<double>& thresholds, std::size_t an_max) {
    if (thresholds.empty()) throw ConfigError("ar_at_an: empty threshold set");
    if (an_max < 1) throw ConfigError("ar_at_an: an_max must be >= 1");
    const auto vids = detail::group_for_eval(proposals, annotations);

    std::size_t total_gt = 0;
    for (const auto& [id, v] : vids) total_gt += v.gts.size();
    if (total_gt == 0) throw ConfigError("ar_at_an: no ground truths");

    RecallTable table;
    table.thresholds = thresholds;
    // For each target, the rank (1-based) of the earliest proposal reaching
    // each threshold; recall@AN then counts ranks <= AN.
    std::vector<std::vector<std::size_t>> first_rank(thresholds.size());
    for (const auto& [id, v] : vids) {
        if (v.gts.empty()) continue;  // excluded from the denominator
        for (const auto& gt : v.gts) {
            for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
                std::size_t rank = 0;
                for (std::size_t pi = 0; pi < v.props.size() && pi < an_max; ++pi) {
                    if (tiou(v.props[pi], gt) >= thresholds[ti]) {
                        rank = pi + 1;
                        break;
                    }
                }
                if (rank > 0) first_rank[ti].push_back(rank);
            }
        }
    }
    table.an_values.resize(an_max);
    table.recall.assign(an_max, std::vector<double>(thresholds.size(), 0.0));
    table.average_recall.assign(an_max, 0.0);
    for (std::size_t an = 1; an <= an_max; ++an) {
        table.an_values[an - 1] = an;
        double mean = 0.0;
        for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
            std::size_t recalled = 0;
            for (std::size_t r : first_rank[ti])
                if (r <= an) ++recalled;
            const double rec = static_cast<double>(recalled) / static_cast<double>(total_gt);
            table.recall[an - 1][ti] = rec;
            mean += rec;
        }
        table.average_recall[an - 1] = mean / static_cast<double>(thresholds.size());
    }
    // AR must be non-decreasing in AN; violation means a metric bug.
    for (std::size_t i = 1; i < an_max; ++i)
        for (std::size_t ti = 0; ti < thresholds.size(); ++ti)
            if (table.recall[i][ti] + 1e-12 < table.recall[i - 1][ti])
                throw NumericError("ar_at_an: recall decreased with AN");
    return table;
}

// Trapezoidal area under AR vs AN over the table's grid, rescaled to
// [0,100] percent.
inline double auc(const RecallTable& table) {
    const std::size_t n = table.average_recall.size();
    if (n < 2) throw ConfigError("auc: need at least two AN points");
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i)
        area += 0.5 * (table.average_recall[i] + table.average_recall[i + 1]);
    return area / static_cast<double>(n - 1) * 100.0;
}

// ---- mAP ----

struct ApReport {
    std::vector<double> thresholds;
    std::vector<double> map_per_threshold;
    double mean_map = 0.0;
    std::vector<std::string> classes;
};

// Greedy per-class matching in score order with all-point interpolated AP.
inline ApReport map_metric(const std::vector<ScoredProposal>& detections,
                           const std::vector<VideoAnnotation>& annotations,
                           const std::vector<double>& thresholds,
                           std::vector<std::string>* warnings = nullptr) {
    if (thresholds.empty()) throw ConfigError("map_metric: empty threshold set");
    struct Gt {
        Interval iv;
        bool claimed = false;
    };
    // class -> video -> targets
    std::map<std::string, std::map<std::string, std::vector<Interval>>> gt_by_class;
    for (const auto& a : annotations)
        for (const auto& g : a.instances)
            gt_by_class[g.label][a.video_id].push_back({g.start_sec, g.end_sec});

    std::map<std::string, std::vector<ScoredProposal>> det_by_class;
    for (const auto& d : detections) {
        if (d.label.empty()) throw ConfigError("map_metric: detection without label");
        det_by_class[d.label].push_back(d);
    }

    ApReport report;
    report.thresholds = thresholds;
    report.map_per_threshold.assign(thresholds.size(), 0.0);
    std::size_t class_count = 0;
    for (auto& [cls, dets] : det_by_class) {
        report.classes.push_back(cls);
        ++class_count;
        auto git = gt_by_class.find(cls);
        if (git == gt_by_class.end()) {
            if (warnings)
                warnings->push_back("class '" + cls + "' has detections but no ground truth; AP=0");
            continue;  // contributes 0 at every threshold
        }
        std::stable_sort(dets.begin(), dets.end(), proposal_order);
        std::size_t total_gt = 0;
        for (const auto& [vid, list] : git->second) total_gt += list.size();
        for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
            std::map<std::string, std::vector<Gt>> open;
            for (const auto& [vid, list] : git->second)
                for (const auto& iv : list) open[vid].push_back({iv, false});
            std::vector<char> is_tp(dets.size(), 0);
            for (std::size_t di = 0; di < dets.size(); ++di) {
                auto vit = open.find(dets[di].video_id);
                if (vit == open.end()) continue;
                double best = -1.0;
                std::size_t arg = 0;
                for (std::size_t gi = 0; gi < vit->second.size(); ++gi) {
                    const double t = tiou({dets[di].start_sec, dets[di].end_sec}, vit->second[gi].iv);
                    if (t > best) {
                        best = t;
                        arg = gi;
                    }
                }
                if (best >= thresholds[ti] && !vit->second[arg].claimed) {
                    vit->second[arg].claimed = true;
                    is_tp[di] = 1;
                }
            }
            // all-point interpolated AP
            std::vector<double> precision, recall;
            std::size_t tp = 0;
            for (std::size_t di = 0; di < dets.size(); ++di) {
                tp += is_tp[di];
                precision.push_back(static_cast<double>(tp) / static_cast<double>(di + 1));
                recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
            }
            for (std::size_t i = precision.size(); i-- > 1;)
                precision[i - 1] = std::max(precision[i - 1], precision[i]);
            double ap = 0.0;
            double prev_recall = 0.0;
            for (std::size_t i = 0; i < precision.size(); ++i) {
                ap += (recall[i] - prev_recall) * precision[i];
                prev_recall = recall[i];
            }
            report.map_per_threshold[ti] += ap;
        }
    }
    if (class_count == 0) throw ConfigError("map_metric: no detections");
    for (auto& v : report.map_per_threshold) v /= static_cast<double>(class_count);
    for (double v : report.map_per_threshold) report.mean_map += v;
    report.mean_map /= static_cast<double>(thresholds.size());
    return report;
}

// ---- false-positive profile ----

struct FpBuckets {
    std::size_t true_positive = 0;
    std::size_t duplicate = 0;
    std::size_t localization_error = 0;
    std::size_t background_error = 0;

    std::size_t total() const {
        return true_positive + duplicate + localization_error + background_error;
    }
};

// Classifies the top-(g_multiplier * G) proposals per video in score order:
// TP claims an unclaimed target at tIoU >= tp_threshold; duplicate reaches
// the threshold on an already-claimed best target; localization error has
// max tIoU in [0.1, tp_threshold); background error stays below 0.1.
inline FpBuckets fp_profile(const std::vector<ScoredProposal>& proposals,
                            const std::vector<VideoAnnotation>& annotations,
                            std::size_t g_multiplier = 10, double tp_threshold = 0.5) {
    if (g_multiplier < 1) throw ConfigError("fp_profile: multiplier must be >= 1");
    const auto vids = detail::group_for_eval(proposals, annotations);
    FpBuckets buckets;
    for (const auto& [id, v] : vids) {
        if (v.gts.empty()) continue;  // precondition: at least one target per video
        const std::size_t limit = std::min(v.props.size(), g_multiplier * v.gts.size());
        std::vector<char> claimed(v.gts.size(), 0);
        for (std::size_t pi = 0; pi < limit; ++pi) {
            double best = -1.0;
            std::size_t arg = 0;
            for (std::size_t gi = 0; gi < v.gts.size(); ++gi) {
                const double t = tiou(v.props[pi], v.gts[gi]);
                if (t > best) {
                    best = t;
                    arg = gi;
                }
            }
            if (best >= tp_threshold) {
                if (!claimed[arg]) {
                    claimed[arg] = 1;
                    ++buckets.true_positive;
                } else {
                    ++buckets.duplicate;
                }
            } else if (best >= 0.1) {
                ++buckets.localization_error;
            } else {
                ++buckets.background_error;
            }
        }
    }
    return buckets;
}

// ---- Soft-NMS (ablation baseline only) ----

// Gaussian-decay suppression: repeatedly select the highest-score proposal,
// decay every remaining score by exp(-tIoU^2 / sigma), drop proposals whose
// final score falls below score_floor. Interval coordinates are untouched.
inline std::vector<ScoredProposal> soft_nms(std::vector<ScoredProposal> proposals, double sigma,
                                            double score_floor) {
    if (sigma <= 0.0) throw ConfigError("soft_nms: sigma must be positive");
    std::map<std::string, std::vector<ScoredProposal>> per_video;
    for (auto& p : proposals) per_video[p.video_id].push_back(std::move(p));
    std::vector<ScoredProposal> out;
    for (auto& [id, list] : per_video) {
        std::vector<ScoredProposal> kept;
        std::vector<ScoredProposal> pool = std::move(list);
        std::stable_sort(pool.begin(), pool.end(), proposal_order);
        while (!pool.empty()) {
            // pool stays sorted, so the head is the current max.
            ScoredProposal top = pool.front();
            pool.erase(pool.begin());
            kept.push_back(top);
            for (auto& p : pool) {
                const double t = tiou({top.start_sec, top.end_sec}, {p.start_sec, p.end_sec});
                p.score *= std::exp(-(t * t) / sigma);
            }
            std::stable_sort(pool.begin(), pool.end(), proposal_order);
            pool.erase(std::remove_if(pool.begin(), pool.end(),
                                      [&](const ScoredProposal& p) { return p.score < score_floor; }),
                       pool.end());
        }
        for (auto& p : kept) out.push_back(std::move(p));
    }
    std::stable_sort(out.begin(), out.end(), proposal_order);
    return out;
}

// ---- report writers ----

inline void save_recall_csv(const RecallTable& t, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "an";
    char buf[64];
    for (double th : t.thresholds) {
        std::snprintf(buf, sizeof(buf), ",tiou_%.2f", th);
        os << buf;
    }
    os << ",mean\n";
    for (std::size_t i = 0; i < t.an_values.size(); ++i) {
        os << t.an_values[i];
        for (double r : t.recall[i]) {
            std::snprintf(buf, sizeof(buf), ",%.9g", r);
            os << buf;
        }
        std::snprintf(buf, sizeof(buf), ",%.9g\n", t.average_recall[i]);
        os << buf;
    }
}

inline void save_fp_profile_csv(const std::vector<ScoredProposal>& proposals,
                                const std::vector<VideoAnnotation>& annotations,
                                double tp_threshold, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "g_multiplier,true_positive,duplicate,localization_error,background_error,total\n";
    for (std::size_t g = 1; g <= 10; ++g) {
        const FpBuckets b = fp_profile(proposals, annotations, g, tp_threshold);
        const double total = std::max<std::size_t>(1, b.total());
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%zu\n", g,
                      b.true_positive / total, b.duplicate / total, b.localization_error / total,
                      b.background_error / total, b.total());
        os << buf;
    }
}

inline void save_attention_csv(const Tensor& m, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    char buf[48];
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%s%.9g", j ? "," : "", m(i, j));
            os << buf;
        }
        os << "\n";
    }
}

}  // namespace rtd
