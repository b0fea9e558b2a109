#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "degdit/flow_gen.hpp"
#include "degdit/timeline.hpp"

namespace degdit {

struct DetectedEvent {
    std::string category;
    double onset = 0.0;
    double offset = 0.0;
    double confidence = 0.0;
};

struct DetectorConfig {
    double threshold = 0.5;
    std::vector<std::string> universe;  // classes scanned by the detector
};

// Correlation-threshold detector: project each latent frame onto every unit
// class signature, mark frames at or above threshold active, and merge runs
// of active frames into segments. Exact on clean synthetic targets.
inline std::vector<DetectedEvent> detect_events(const SyntheticLatent& latent,
                                                const ClassSignatureBank& bank,
                                                const DetectorConfig& cfg) {
    const int f_lat = static_cast<int>(latent.x.rows());
    const double delta = latent.clip_duration / f_lat;
    std::vector<DetectedEvent> out;
    for (const auto& label : cfg.universe) {
        const auto& sig = bank.get(label);
        Eigen::VectorXd proj = latent.x * sig.transpose();
        int run_start = -1;
        double run_sum = 0.0;
        auto close_run = [&](int end_frame) {
            if (run_start < 0) return;
            DetectedEvent ev;
            ev.category = label;
            ev.onset = run_start * delta;
            ev.offset = end_frame * delta;
            ev.confidence = std::clamp(
                run_sum / static_cast<double>(end_frame - run_start), 0.0, 1.0);
            out.push_back(std::move(ev));
            run_start = -1;
            run_sum = 0.0;
        };
        for (int f = 0; f < f_lat; ++f) {
            if (proj[f] >= cfg.threshold) {
                if (run_start < 0) run_start = f;
                run_sum += proj[f];
            } else {
                close_run(f);
            }
        }
        close_run(f_lat);
    }
    return out;
}

// ---- F1 metrics --------------------------------------------------------------

struct CollarConfig {
    double collar = 0.2;        // seconds, onset tolerance
    double offset_ratio = 0.2;  // offset tolerance = max(collar, ratio*dur)
};

struct ClassCounts {
    long tp = 0, fp = 0, fn = 0;

    double precision() const {
        return tp + fp == 0 ? 0.0
                            : static_cast<double>(tp) /
                                  static_cast<double>(tp + fp);
    }
    double recall() const {
        return tp + fn == 0 ? 0.0
                            : static_cast<double>(tp) /
                                  static_cast<double>(tp + fn);
    }
    double f1() const {
        double p = precision(), r = recall();
        return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    }
};

namespace detail {

// Overlapping (or touching) same-class ground-truth events merged into
// segments the detector can actually represent.
inline std::vector<std::pair<double, double>> merged_gt_segments(
    const Timeline& tl, const std::string& label) {
    std::vector<std::pair<double, double>> segs;
    for (const auto& e : tl.events)
        if (e.category == label) segs.emplace_back(e.onset, e.offset);
    std::sort(segs.begin(), segs.end());
    std::vector<std::pair<double, double>> merged;
    for (const auto& s : segs) {
        if (!merged.empty() && s.first <= merged.back().second)
            merged.back().second = std::max(merged.back().second, s.second);
        else
            merged.push_back(s);
    }
    return merged;
}

inline std::set<std::string> gt_labels(const Timeline& tl) {
    std::set<std::string> labels;
    for (const auto& e : tl.events) labels.insert(e.category);
    return labels;
}

}  // namespace detail

// Greedy one-to-one segment matching per class with onset/offset collars.
inline std::map<std::string, ClassCounts> match_events(
    const std::vector<DetectedEvent>& detections, const Timeline& gt,
    const CollarConfig& cfg = {}) {
    std::map<std::string, ClassCounts> counts;
    std::set<std::string> labels = detail::gt_labels(gt);
    for (const auto& d : detections) labels.insert(d.category);

    for (const auto& label : labels) {
        auto gt_segs = detail::merged_gt_segments(gt, label);
        std::vector<const DetectedEvent*> dets;
        for (const auto& d : detections)
            if (d.category == label) dets.push_back(&d);
        std::sort(dets.begin(), dets.end(),
                  [](const DetectedEvent* a, const DetectedEvent* b) {
                      return a->onset < b->onset;
                  });

        std::vector<bool> det_used(dets.size(), false);
        long tp = 0;
        for (const auto& [gs, ge] : gt_segs) {
            double off_tol = std::max(cfg.collar, cfg.offset_ratio * (ge - gs));
            for (size_t k = 0; k < dets.size(); ++k) {
                if (det_used[k]) continue;
                if (std::abs(dets[k]->onset - gs) <= cfg.collar &&
                    std::abs(dets[k]->offset - ge) <= off_tol) {
                    det_used[k] = true;
                    ++tp;
                    break;
                }
            }
        }
        ClassCounts c;
        c.tp = tp;
        c.fp = static_cast<long>(dets.size()) - tp;
        c.fn = static_cast<long>(gt_segs.size()) - tp;
        counts[label] = c;
    }
    return counts;
}

// Event-level F1 for one clip, macro-averaged over classes present in GT.
inline double f1_event(const std::vector<DetectedEvent>& detections,
                       const Timeline& gt, const CollarConfig& cfg = {}) {
    auto counts = match_events(detections, gt, cfg);
    auto labels = detail::gt_labels(gt);
    if (labels.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& label : labels) sum += counts[label].f1();
    return sum / static_cast<double>(labels.size());
}

// Clip-level presence/absence counts per class.
inline std::map<std::string, ClassCounts> clip_presence_counts(
    const std::vector<DetectedEvent>& detections, const Timeline& gt) {
    std::set<std::string> det_classes;
    for (const auto& d : detections) det_classes.insert(d.category);
    auto gt_classes = detail::gt_labels(gt);

    std::map<std::string, ClassCounts> counts;
    for (const auto& c : gt_classes) {
        if (det_classes.count(c)) counts[c].tp = 1;
        else counts[c].fn = 1;
    }
    for (const auto& c : det_classes)
        if (!gt_classes.count(c)) counts[c].fp = 1;
    return counts;
}

// Clip-level F1 for one clip, macro over the union of GT and detected classes.
inline double f1_clip(const std::vector<DetectedEvent>& detections,
                      const Timeline& gt) {
    auto counts = clip_presence_counts(detections, gt);
    if (counts.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [label, c] : counts) sum += c.f1();
    return sum / static_cast<double>(counts.size());
}

// Pools per-class counts over an evaluation set; macro-averages are taken
// over the set's ground-truth label universe.
class EvalAccumulator {
  public:
    explicit EvalAccumulator(CollarConfig collar = {}) : collar_(collar) {}

    void add_clip(const std::vector<DetectedEvent>& detections,
                  const Timeline& gt) {
        for (const auto& [label, c] : match_events(detections, gt, collar_)) {
            event_counts_[label].tp += c.tp;
            event_counts_[label].fp += c.fp;
            event_counts_[label].fn += c.fn;
        }
        for (const auto& [label, c] : clip_presence_counts(detections, gt)) {
            clip_counts_[label].tp += c.tp;
            clip_counts_[label].fp += c.fp;
            clip_counts_[label].fn += c.fn;
        }
        for (const auto& label : detail::gt_labels(gt)) universe_.insert(label);
    }

    double f1_event_macro() const { return macro(event_counts_); }
    double f1_clip_macro() const { return macro(clip_counts_); }

    const std::map<std::string, ClassCounts>& event_counts() const {
        return event_counts_;
    }
    const std::map<std::string, ClassCounts>& clip_counts() const {
        return clip_counts_;
    }
    const std::set<std::string>& universe() const { return universe_; }

  private:
    double macro(const std::map<std::string, ClassCounts>& counts) const {
        if (universe_.empty()) return 0.0;
        double sum = 0.0;
        for (const auto& label : universe_) {
            auto it = counts.find(label);
            if (it != counts.end()) sum += it->second.f1();
        }
        return sum / static_cast<double>(universe_.size());
    }

    CollarConfig collar_;
    std::map<std::string, ClassCounts> event_counts_, clip_counts_;
    std::set<std::string> universe_;
};

}  // namespace degdit
