#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "degdit/errors.hpp"

namespace degdit {

// One audio event: open-vocabulary label, interval in seconds, intensity.
struct EventSpec {
    std::string category;
    double onset = 0.0;
    double offset = 0.0;
    double intensity = 1.0;

    double duration() const { return offset - onset; }
};

// Clip-level collection of events. Event order is authoring order and feeds
// the positional embedding downstream.
struct Timeline {
    double clip_duration = 0.0;
    std::vector<EventSpec> events;

    int size() const { return static_cast<int>(events.size()); }
};

enum class ViolationKind {
    NegativeOnset,
    OnsetAfterOffset,
    OffsetPastClipEnd,
    IntensityOutOfRange,
    TooManyEvents,
    EmptyTimeline,
    NonPositiveDuration,
};

inline const char* violation_name(ViolationKind k) {
    switch (k) {
        case ViolationKind::NegativeOnset: return "NegativeOnset";
        case ViolationKind::OnsetAfterOffset: return "OnsetAfterOffset";
        case ViolationKind::OffsetPastClipEnd: return "OffsetPastClipEnd";
        case ViolationKind::IntensityOutOfRange: return "IntensityOutOfRange";
        case ViolationKind::TooManyEvents: return "TooManyEvents";
        case ViolationKind::EmptyTimeline: return "EmptyTimeline";
        case ViolationKind::NonPositiveDuration: return "NonPositiveDuration";
    }
    return "Unknown";
}

struct Violation {
    ViolationKind kind;
    int event_index;  // -1 for clip-level violations
    std::string message;
};

struct ValidationResult {
    std::optional<Timeline> timeline;
    std::vector<Violation> violations;

    bool ok() const { return timeline.has_value(); }
};

// Checks every field and reports every violation, not just the first.
// Out-of-range inputs are rejected, never clipped.
inline ValidationResult validate_timeline(double clip_duration,
                                          const std::vector<EventSpec>& events,
                                          int n_max = 16) {
    ValidationResult res;
    auto flag = [&](ViolationKind k, int idx, std::string msg) {
        res.violations.push_back(Violation{k, idx, std::move(msg)});
    };

    if (!(clip_duration > 0.0))
        flag(ViolationKind::NonPositiveDuration, -1,
             "clip_duration must be > 0, got " + std::to_string(clip_duration));
    if (events.empty())
        flag(ViolationKind::EmptyTimeline, -1, "timeline has no events");
    if (static_cast<int>(events.size()) > n_max)
        flag(ViolationKind::TooManyEvents, -1,
             std::to_string(events.size()) + " events exceeds N_max=" +
                 std::to_string(n_max));

    for (int i = 0; i < static_cast<int>(events.size()); ++i) {
        const EventSpec& e = events[i];
        if (e.onset < 0.0)
            flag(ViolationKind::NegativeOnset, i,
                 "onset " + std::to_string(e.onset));
        if (!(e.onset < e.offset))
            flag(ViolationKind::OnsetAfterOffset, i,
                 "onset " + std::to_string(e.onset) + " >= offset " +
                     std::to_string(e.offset));
        if (clip_duration > 0.0 && e.offset > clip_duration)
            flag(ViolationKind::OffsetPastClipEnd, i,
                 "offset " + std::to_string(e.offset) + " > clip end " +
                     std::to_string(clip_duration));
        if (e.intensity < 0.0 || e.intensity > 1.0)
            flag(ViolationKind::IntensityOutOfRange, i,
                 "intensity " + std::to_string(e.intensity));
    }

    if (res.violations.empty())
        res.timeline = Timeline{clip_duration, events};
    return res;
}

// N×F matrix; entry (i,j) is the fraction of frame j covered by event i.
struct FrameActivationMatrix {
    Eigen::MatrixXd values;  // N×F, entries in [0,1]
    int frame_count = 0;
    double clip_duration = 0.0;
};

// Frames are [jΔ, (j+1)Δ) with the final frame closed, Δ = clip_duration/F.
// Half-open vs closed only matters at measure zero, so coverage fractions are
// unaffected; entries for disjoint frames are exactly 0.
inline FrameActivationMatrix frame_activation(const Timeline& tl,
                                              int frame_count) {
    if (frame_count < 1)
        throw Error(ErrorKind::FrameCountMismatch, "frame count must be >= 1");
    const int n = tl.size();
    const double delta = tl.clip_duration / frame_count;
    FrameActivationMatrix fam;
    fam.frame_count = frame_count;
    fam.clip_duration = tl.clip_duration;
    fam.values = Eigen::MatrixXd::Zero(n, frame_count);
    for (int i = 0; i < n; ++i) {
        const double s = tl.events[i].onset;
        const double e = tl.events[i].offset;
        for (int j = 0; j < frame_count; ++j) {
            double lo = j * delta;
            double hi = (j + 1) * delta;
            double inter = std::min(e, hi) - std::max(s, lo);
            if (inter > 0.0) fam.values(i, j) = inter / delta;
        }
    }
    return fam;
}

enum Relation : int {
    BEFORE = 0,
    AFTER = 1,
    OVERLAPS = 2,
    CONTAINS = 3,
    CONTAINED_BY = 4,
};

constexpr int kRelationChannels = 5;

// N×N×5 tensor of pairwise temporal-relation strengths, antisymmetric by
// construction (mirror channels written from one classification per
// unordered pair).
struct RelationTensor {
    int n = 0;
    std::vector<double> data;  // n*n*5, row-major (i, j, channel)

    double at(int i, int j, int ch) const {
        return data[(static_cast<size_t>(i) * n + j) * kRelationChannels + ch];
    }
    double& at(int i, int j, int ch) {
        return data[(static_cast<size_t>(i) * n + j) * kRelationChannels + ch];
    }

    // N²×5 view with row index i*n + j, for feeding the relation encoder
    Eigen::MatrixXd flat() const {
        Eigen::MatrixXd m(n * n, kRelationChannels);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int ch = 0; ch < kRelationChannels; ++ch)
                    m(i * n + j, ch) = at(i, j, ch);
        return m;
    }
};

struct PairRelation {
    Relation channel;
    double strength;
};

// Classification of the ordered pair (i -> j). Precedence: containment,
// then overlap, then before/after. Touching intervals (e_i == s_j) are BEFORE
// with gap 0 (zero-measure intersection is not an overlap); identical
// intervals fall through to OVERLAPS with strength exactly 1.
inline PairRelation classify_pair(const EventSpec& a, const EventSpec& b,
                                  double clip_duration) {
    const double sa = a.onset, ea = a.offset;
    const double sb = b.onset, eb = b.offset;

    const bool a_contains_b =
        sa <= sb && eb <= ea && (sa < sb || eb < ea);
    if (a_contains_b) return {CONTAINS, 1.0};
    const bool b_contains_a =
        sb <= sa && ea <= eb && (sb < sa || ea < eb);
    if (b_contains_a) return {CONTAINED_BY, 1.0};

    const double inter = std::min(ea, eb) - std::max(sa, sb);
    if (inter > 0.0) {
        const double strength =
            inter / std::min(a.duration(), b.duration());
        return {OVERLAPS, strength};
    }

    if (ea <= sb) {
        const double gap = sb - ea;
        return {BEFORE, std::max(0.0, 1.0 - gap / clip_duration)};
    }
    const double gap = sa - eb;
    return {AFTER, std::max(0.0, 1.0 - gap / clip_duration)};
}

inline RelationTensor relation_tensor(const Timeline& tl) {
    const int n = tl.size();
    RelationTensor rt;
    rt.n = n;
    rt.data.assign(static_cast<size_t>(n) * n * kRelationChannels, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            PairRelation r =
                classify_pair(tl.events[i], tl.events[j], tl.clip_duration);
            switch (r.channel) {
                case CONTAINS:
                    rt.at(i, j, CONTAINS) = r.strength;
                    rt.at(j, i, CONTAINED_BY) = r.strength;
                    break;
                case CONTAINED_BY:
                    rt.at(i, j, CONTAINED_BY) = r.strength;
                    rt.at(j, i, CONTAINS) = r.strength;
                    break;
                case OVERLAPS:
                    rt.at(i, j, OVERLAPS) = r.strength;
                    rt.at(j, i, OVERLAPS) = r.strength;
                    break;
                case BEFORE:
                    rt.at(i, j, BEFORE) = r.strength;
                    rt.at(j, i, AFTER) = r.strength;
                    break;
                case AFTER:
                    rt.at(i, j, AFTER) = r.strength;
                    rt.at(j, i, BEFORE) = r.strength;
                    break;
            }
        }
    }
    return rt;
}

}  // namespace degdit
