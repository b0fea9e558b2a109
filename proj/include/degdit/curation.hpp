#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "degdit/annotations.hpp"
#include "degdit/errors.hpp"
#include "degdit/rng.hpp"
#include "degdit/util.hpp"

namespace degdit {

// Label frequency statistics with rarity thresholds. Rare means
// phi < tau_rare, common means phi > tau_common (both strict); everything
// else is medium-frequency.
struct FrequencyTable {
    std::map<std::string, long> counts;
    std::map<std::string, double> phi;
    double tau_rare = 0.005;
    double tau_common = 0.03;
    std::set<std::string> rare, common;

    bool is_rare(const std::string& label) const { return rare.count(label); }
    bool is_common(const std::string& label) const {
        return common.count(label);
    }
};

struct FrequencyOptions {
    double tau_rare = 0.005;
    double tau_common = 0.03;
    // Percentile mode: thresholds from the 20th/80th percentiles of the
    // phi distribution instead of the fixed defaults.
    bool adaptive = false;
};

inline FrequencyTable build_frequency_table(
    const std::vector<AnnotationRecord>& corpus,
    const FrequencyOptions& opt = {}) {
    if (corpus.empty())
        throw Error(ErrorKind::EmptyCorpus, "no annotation records");
    FrequencyTable ft;
    long total = 0;
    for (const auto& rec : corpus)
        for (const auto& e : rec.events) {
            ++ft.counts[e.label];
            ++total;
        }
    if (total == 0)
        throw Error(ErrorKind::EmptyCorpus, "corpus has no events");
    for (const auto& [label, n] : ft.counts)
        ft.phi[label] = static_cast<double>(n) / static_cast<double>(total);

    if (opt.adaptive) {
        std::vector<double> phis;
        for (const auto& [label, p] : ft.phi) phis.push_back(p);
        std::sort(phis.begin(), phis.end());
        ft.tau_rare = percentile_sorted(phis, 0.20);
        ft.tau_common = percentile_sorted(phis, 0.80);
    } else {
        ft.tau_rare = opt.tau_rare;
        ft.tau_common = opt.tau_common;
    }
    if (!(ft.tau_rare < ft.tau_common))
        throw Error(ErrorKind::ConfigError, "tau_rare must be < tau_common");

    for (const auto& [label, p] : ft.phi) {
        if (p < ft.tau_rare) ft.rare.insert(label);
        else if (p > ft.tau_common) ft.common.insert(label);
    }
    return ft;
}

// Multi-criteria quality score; integer arithmetic throughout and the total
// always equals the sum of the breakdown.
struct QualityScore {
    int total = 0;
    std::vector<std::pair<std::string, int>> breakdown;
};

struct QualityOptions {
    double valid_dur_lo = 0.5, valid_dur_hi = 5.0;
    double ideal_dur_lo = 1.0, ideal_dur_hi = 3.0;
    double min_duration = 0.1;       // below this: severe penalty
    double full_coverage = 0.95;     // strict > for the single-event penalty
};

namespace detail {

inline bool label_is_speech_or_music(const std::string& label) {
    std::string lower;
    for (char c : label)
        lower.push_back(
            static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return lower.find("speech") != std::string::npos ||
           lower.find("music") != std::string::npos;
}

}  // namespace detail

inline QualityScore quality_score(const AnnotationRecord& rec,
                                  const QualityOptions& opt = {}) {
    QualityScore qs;
    auto add = [&](const std::string& crit, int pts) {
        qs.breakdown.emplace_back(crit, pts);
        qs.total += pts;
    };

    const int n = static_cast<int>(rec.events.size());
    if (n >= 2 && n <= 5) add("event_count_2_5", 10);
    else if (n == 1) add("event_count_1", 5);
    else if (n >= 6 && n <= 8) add("event_count_6_8", 3);
    else add("event_count_other", -5);

    std::set<std::string> classes;
    for (const auto& e : rec.events) classes.insert(e.label);
    if (classes.size() >= 3) add("type_diversity_3plus", 8);
    else if (classes.size() == 2) add("type_diversity_2", 5);

    int valid = 0, ideal = 0;
    bool any_short = false;
    for (const auto& e : rec.events) {
        double dur = e.offset - e.onset;
        if (dur >= opt.valid_dur_lo && dur <= opt.valid_dur_hi) ++valid;
        if (dur >= opt.ideal_dur_lo && dur <= opt.ideal_dur_hi) ++ideal;
        if (dur < opt.min_duration) any_short = true;
    }
    if (valid > 0) add("duration_validity", std::min(2 * valid, 10));
    if (ideal > 0) add("ideal_duration", std::min(ideal, 5));
    if (any_short) add("short_event_penalty", -50);

    if (n == 1 && rec.duration > 0.0) {
        double coverage = (rec.events[0].offset - rec.events[0].onset) /
                          rec.duration;
        if (coverage > opt.full_coverage &&
            detail::label_is_speech_or_music(rec.events[0].label))
            add("single_event_full_coverage_penalty", -8);
    }
    return qs;
}

enum class Stratum { RARE, COMMON, MEDIUM };

inline const char* stratum_name(Stratum s) {
    switch (s) {
        case Stratum::RARE: return "RARE";
        case Stratum::COMMON: return "COMMON";
        case Stratum::MEDIUM: return "MEDIUM";
    }
    return "?";
}

struct CuratedEntry {
    std::string id;
    Stratum stratum;
    QualityScore score;
};

struct CuratedDataset {
    std::vector<CuratedEntry> selected;
    std::map<std::string, long> stratum_counts;  // candidates per stratum
    std::map<std::string, long> shortfalls;
    double q_min = 15.0;
    int n_target = 0;
};

struct StratifyOptions {
    double q_min = 15.0;
    uint64_t seed = 0;
};

namespace detail {

// Rare-first assignment, enforcing Eq-style mutual exclusivity: a sample
// containing both rare and common labels lands in RARE when it clears the
// moderate threshold.
inline std::optional<Stratum> assign_stratum(const AnnotationRecord& rec,
                                             const FrequencyTable& ft,
                                             int q, double q_min) {
    bool has_rare = false, has_common = false;
    for (const auto& e : rec.events) {
        has_rare |= ft.is_rare(e.label);
        has_common |= ft.is_common(e.label);
    }
    if (has_rare && q >= 10) return Stratum::RARE;
    if (has_common && static_cast<double>(q) >= q_min) return Stratum::COMMON;
    if (static_cast<double>(q) >= 0.8 * q_min) return Stratum::MEDIUM;
    return std::nullopt;
}

}  // namespace detail

// Quota sampling: (0.25, 0.5, 0.25)·N_target from (RARE, COMMON, MEDIUM),
// drawn uniformly with a seeded shuffle. Unfillable quotas are backfilled
// from the MEDIUM pool by descending score, then from COMMON; whatever is
// still missing shows up in the shortfall report.
inline CuratedDataset stratify_and_sample(
    const std::vector<AnnotationRecord>& corpus, const FrequencyTable& ft,
    const std::vector<QualityScore>& scores, int n_target,
    const StratifyOptions& opt = {}) {
    if (n_target < 4)
        throw Error(ErrorKind::ConfigError, "n_target must be >= 4");
    if (scores.size() != corpus.size())
        throw Error(ErrorKind::ShapeMismatch, "scores/corpus size");

    struct Candidate {
        int index;
        Stratum stratum;
    };
    std::vector<Candidate> pools[3];
    for (size_t i = 0; i < corpus.size(); ++i) {
        auto s = detail::assign_stratum(corpus[i], ft, scores[i].total,
                                        opt.q_min);
        if (s)
            pools[static_cast<int>(*s)].push_back(
                Candidate{static_cast<int>(i), *s});
    }

    CuratedDataset out;
    out.q_min = opt.q_min;
    out.n_target = n_target;
    for (int s = 0; s < 3; ++s)
        out.stratum_counts[stratum_name(static_cast<Stratum>(s))] =
            static_cast<long>(pools[s].size());

    const int quota_rare = n_target / 4;
    const int quota_medium = n_target / 4;
    const int quota_common = n_target - quota_rare - quota_medium;
    const int quotas[3] = {quota_rare, quota_common, quota_medium};

    Rng rng = derive_rng(opt.seed, "stratified_sampling");
    std::vector<bool> taken(corpus.size(), false);
    long missing[3] = {0, 0, 0};

    auto draw_from = [&](std::vector<Candidate>& pool, int want) {
        for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i)
            std::swap(pool[i], pool[rng.uniform_int(i + 1)]);
        int got = 0;
        for (const auto& c : pool) {
            if (got == want) break;
            if (taken[c.index]) continue;
            taken[c.index] = true;
            out.selected.push_back(
                CuratedEntry{corpus[c.index].id, c.stratum, scores[c.index]});
            ++got;
        }
        return got;
    };

    for (int s : {static_cast<int>(Stratum::RARE),
                  static_cast<int>(Stratum::COMMON),
                  static_cast<int>(Stratum::MEDIUM)}) {
        int got = draw_from(pools[s], quotas[s]);
        missing[s] = quotas[s] - got;
    }

    // backfill order: MEDIUM pool by descending score, then COMMON
    long deficit = missing[0] + missing[1] + missing[2];
    if (deficit > 0) {
        for (int src : {static_cast<int>(Stratum::MEDIUM),
                        static_cast<int>(Stratum::COMMON)}) {
            if (deficit == 0) break;
            auto pool = pools[src];
            std::sort(pool.begin(), pool.end(),
                      [&](const Candidate& a, const Candidate& b) {
                          if (scores[a.index].total != scores[b.index].total)
                              return scores[a.index].total >
                                     scores[b.index].total;
                          return corpus[a.index].id < corpus[b.index].id;
                      });
            for (const auto& c : pool) {
                if (deficit == 0) break;
                if (taken[c.index]) continue;
                taken[c.index] = true;
                out.selected.push_back(CuratedEntry{corpus[c.index].id,
                                                    c.stratum,
                                                    scores[c.index]});
                --deficit;
            }
        }
    }

    for (int s = 0; s < 3; ++s)
        if (missing[s] > 0)
            out.shortfalls[stratum_name(static_cast<Stratum>(s))] = missing[s];
    return out;
}

// ---- manifest / summary serialization ---------------------------------------

inline nlohmann::json curated_entry_json(const CuratedEntry& e) {
    nlohmann::json breakdown = nlohmann::json::array();
    for (const auto& [crit, pts] : e.score.breakdown)
        breakdown.push_back({{"criterion", crit}, {"points", pts}});
    return {{"id", e.id},
            {"stratum", stratum_name(e.stratum)},
            {"quality_score", e.score.total},
            {"breakdown", breakdown}};
}

inline void write_curated_manifest(const std::string& path,
                                   const CuratedDataset& ds) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + path);
    for (const auto& e : ds.selected) f << curated_entry_json(e).dump() << "\n";
}

inline nlohmann::json curation_summary(const CuratedDataset& ds,
                                       const FrequencyTable& ft) {
    std::map<std::string, long> selected_counts;
    for (const auto& e : ds.selected) ++selected_counts[stratum_name(e.stratum)];
    return {{"n_target", ds.n_target},
            {"q_min", ds.q_min},
            {"tau_rare", ft.tau_rare},
            {"tau_common", ft.tau_common},
            {"candidates_per_stratum", ds.stratum_counts},
            {"selected_per_stratum", selected_counts},
            {"shortfalls", ds.shortfalls}};
}

}  // namespace degdit
