#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "degdit/errors.hpp"
#include "degdit/timeline.hpp"

namespace degdit {

// One line of the shared JSONL annotation format:
// {"id", "duration", "caption", "events": [{"label", "onset", "offset",
//  "intensity"?}]}. Intensity defaults to 1.0 when absent.
struct AnnotationEvent {
    std::string label;
    double onset = 0.0;
    double offset = 0.0;
    double intensity = 1.0;
};

struct AnnotationRecord {
    std::string id;
    double duration = 0.0;
    std::string caption;
    std::vector<AnnotationEvent> events;
};

inline AnnotationRecord parse_annotation(const nlohmann::json& j) {
    AnnotationRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.duration = j.at("duration").get<double>();
    if (j.contains("caption")) rec.caption = j["caption"].get<std::string>();
    for (const auto& ev : j.at("events")) {
        AnnotationEvent e;
        e.label = ev.at("label").get<std::string>();
        e.onset = ev.at("onset").get<double>();
        e.offset = ev.at("offset").get<double>();
        if (ev.contains("intensity")) e.intensity = ev["intensity"].get<double>();
        rec.events.push_back(std::move(e));
    }
    return rec;
}

inline nlohmann::json annotation_to_json(const AnnotationRecord& rec) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : rec.events)
        events.push_back({{"label", e.label},
                          {"onset", e.onset},
                          {"offset", e.offset},
                          {"intensity", e.intensity}});
    return {{"id", rec.id},
            {"duration", rec.duration},
            {"caption", rec.caption},
            {"events", events}};
}

inline std::vector<AnnotationRecord> read_annotations(std::istream& in) {
    std::vector<AnnotationRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(parse_annotation(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ParseError,
                        "annotation line " + std::to_string(lineno) + ": " +
                            e.what());
        }
    }
    return out;
}

inline std::vector<AnnotationRecord> read_annotations_file(
    const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::IoError, "cannot open " + path);
    return read_annotations(f);
}

inline void write_annotations_file(const std::string& path,
                                   const std::vector<AnnotationRecord>& recs) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + path);
    for (const auto& r : recs) f << annotation_to_json(r).dump() << "\n";
}

inline ValidationResult record_to_timeline(const AnnotationRecord& rec,
                                           int n_max = 16) {
    std::vector<EventSpec> events;
    events.reserve(rec.events.size());
    for (const auto& e : rec.events)
        events.push_back(EventSpec{e.label, e.onset, e.offset, e.intensity});
    return validate_timeline(rec.duration, events, n_max);
}

}  // namespace degdit
