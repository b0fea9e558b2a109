#pragma once

// Hand-composed quality-score fixtures shared by the unit and acceptance
// suites. Each total was worked out from the scoring weights by hand.

#include <string>
#include <vector>

#include "degdit/annotations.hpp"

namespace golden {

struct Golden {
    degdit::AnnotationRecord record;
    int expected;
};

inline degdit::AnnotationRecord rec(const std::string& id, double dur,
                                    std::vector<degdit::AnnotationEvent> events) {
    degdit::AnnotationRecord r;
    r.id = id;
    r.duration = dur;
    r.events = std::move(events);
    return r;
}

inline degdit::AnnotationEvent ev(const std::string& label, double onset,
                                  double offset) {
    return degdit::AnnotationEvent{label, onset, offset, 1.0};
}

inline std::vector<Golden> golden_records() {
    std::vector<Golden> g;
    // single event, valid+ideal duration: 5 + 0 + 2 + 1
    g.push_back({rec("g01", 10, {ev("dog", 1.0, 3.0)}), 8});
    // 3 events, 3 classes, durations 2.0/2.5/1.5: 10 + 8 + 6 + 3
    g.push_back({rec("g02", 10,
                     {ev("a", 0.0, 2.0), ev("b", 3.0, 5.5), ev("c", 6.0, 7.5)}),
                 27});
    // 2 events, 1 class: 10 + 0 + 4 + 2
    g.push_back({rec("g03", 10, {ev("dog", 0.0, 2.0), ev("dog", 3.0, 5.0)}),
                 16});
    // 2 events, 2 classes: 10 + 5 + 4 + 2
    g.push_back({rec("g04", 10, {ev("a", 0.0, 2.0), ev("b", 3.0, 5.0)}), 21});
    // 6 events, 6 classes, caps bind: 3 + 8 + 10 + 5
    {
        std::vector<degdit::AnnotationEvent> events;
        for (int i = 0; i < 6; ++i)
            events.push_back(
                ev("c" + std::to_string(i), i * 1.2, i * 1.2 + 2.0));
        g.push_back({rec("g05", 10, events), 26});
    }
    // 9 events, 3 classes: -5 + 8 + 10 + 5
    {
        std::vector<degdit::AnnotationEvent> events;
        for (int i = 0; i < 9; ++i)
            events.push_back(
                ev("c" + std::to_string(i % 3), i * 0.9, i * 0.9 + 2.0));
        g.push_back({rec("g06", 10, events), 18});
    }
    // speech covering 98%: 5 + 0 + 0 + 0 - 8
    g.push_back({rec("g07", 10, {ev("Speech", 0.1, 9.9)}), -3});
    // music covering exactly 95%: no penalty (strict >): 5
    g.push_back({rec("g08", 10, {ev("Music", 0.2, 9.7)}), 5});
    // non-speech 96% coverage: no penalty: 5
    g.push_back({rec("g09", 10, {ev("dog", 0.0, 9.6)}), 5});
    // short event triggers the severe penalty: 10 + 5 + 2 + 1 - 50
    g.push_back({rec("g10", 10, {ev("a", 0.0, 0.05), ev("b", 1.0, 3.0)}),
                 -32});
    // inclusive duration boundaries 0.5/5.0 valid, 1.0/3.0 ideal:
    // 10 + 5 + 8 + 2
    g.push_back({rec("g11", 10,
                     {ev("a", 0.0, 0.5), ev("b", 1.0, 6.0), ev("a", 6.0, 7.0),
                      ev("b", 6.5, 9.5)}),
                 25});
    // case-insensitive substring match for the coverage penalty:
    // 5 + 0 + 0 + 0 - 8
    g.push_back({rec("g12", 10, {ev("background speech", 0.0, 9.7)}), -3});
    return g;
}

}  // namespace golden
