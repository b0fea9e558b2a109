#include <catch2/catch.hpp>

#include <algorithm>
#include <set>

#include "degdit/rng.hpp"
#include "degdit/timeline.hpp"

using namespace degdit;

namespace {

bool has_violation(const ValidationResult& r, ViolationKind k) {
    return std::any_of(r.violations.begin(), r.violations.end(),
                       [&](const Violation& v) { return v.kind == k; });
}

// Independent oracle: direct per-frame interval intersection, written
// against the frame definition rather than the implementation.
double frame_coverage_oracle(double s, double e, int j, double clip, int F) {
    double delta = clip / F;
    double lo = j * delta, hi = (j + 1) * delta;
    double inter = std::min(e, hi) - std::max(s, lo);
    return inter > 0 ? inter / delta : 0.0;
}

Timeline random_timeline(Rng& rng, int max_events = 6, double clip = 10.0) {
    int n = 1 + rng.uniform_int(max_events);
    std::vector<EventSpec> events;
    for (int i = 0; i < n; ++i) {
        double a = rng.uniform(0.0, clip);
        double b = rng.uniform(0.0, clip);
        if (a == b) b = std::min(clip, a + 0.01);
        EventSpec ev;
        ev.category = "c" + std::to_string(rng.uniform_int(5));
        ev.onset = std::min(a, b);
        ev.offset = std::max(a, b);
        ev.intensity = rng.uniform();
        events.push_back(ev);
    }
    auto res = validate_timeline(clip, events);
    REQUIRE(res.ok());
    return *res.timeline;
}

}  // namespace

TEST_CASE("validate_timeline accepts a minimal record", "[timeline]") {
    auto res = validate_timeline(10.0, {{"dog", 2.0, 4.0, 1.0}});
    REQUIRE(res.ok());
    CHECK(res.timeline->size() == 1);
    CHECK(res.timeline->events[0].category == "dog");
}

TEST_CASE("validate_timeline rejects inverted intervals", "[timeline]") {
    auto res = validate_timeline(10.0, {{"dog", 4.0, 2.0, 1.0}});
    REQUIRE_FALSE(res.ok());
    CHECK(has_violation(res, ViolationKind::OnsetAfterOffset));
}

TEST_CASE("validate_timeline rejects offsets past clip end", "[timeline]") {
    auto res = validate_timeline(10.0, {{"dog", 2.0, 11.0, 1.0}});
    REQUIRE_FALSE(res.ok());
    CHECK(has_violation(res, ViolationKind::OffsetPastClipEnd));
}

TEST_CASE("validate_timeline enumerates every violation", "[timeline]") {
    auto res = validate_timeline(
        10.0, {{"a", -1.0, 0.5, 1.0}, {"b", 3.0, 2.0, 1.5}});
    REQUIRE_FALSE(res.ok());
    CHECK(has_violation(res, ViolationKind::NegativeOnset));
    CHECK(has_violation(res, ViolationKind::OnsetAfterOffset));
    CHECK(has_violation(res, ViolationKind::IntensityOutOfRange));
    CHECK(res.violations.size() == 3);
}

TEST_CASE("validate_timeline rejects empty and oversized timelines",
          "[timeline]") {
    CHECK(has_violation(validate_timeline(10.0, {}),
                        ViolationKind::EmptyTimeline));
    std::vector<EventSpec> many(17, EventSpec{"x", 1.0, 2.0, 1.0});
    CHECK(has_violation(validate_timeline(10.0, many),
                        ViolationKind::TooManyEvents));
    CHECK(has_violation(validate_timeline(0.0, {{"x", 0.0, 1.0, 1.0}}),
                        ViolationKind::NonPositiveDuration));
}

TEST_CASE("frame_activation full coverage row", "[timeline]") {
    Timeline tl{10.0, {{"dog", 0.0, 10.0, 1.0}}};
    auto fam = frame_activation(tl, 16);
    for (int j = 0; j < 16; ++j) CHECK(fam.values(0, j) == 1.0);
}

TEST_CASE("frame_activation exact frame-aligned event", "[timeline]") {
    // 2.5 s = 4 frames of 0.625 s exactly
    Timeline tl{10.0, {{"dog", 0.0, 2.5, 1.0}}};
    auto fam = frame_activation(tl, 16);
    for (int j = 0; j < 16; ++j)
        CHECK(fam.values(0, j) == Approx(j < 4 ? 1.0 : 0.0).margin(1e-12));
}

TEST_CASE("frame_activation sub-frame event", "[timeline]") {
    Timeline tl{10.0, {{"dog", 0.3, 0.6, 1.0}}};
    auto fam = frame_activation(tl, 16);
    CHECK(fam.values(0, 0) == Approx(0.48).margin(1e-12));
    for (int j = 1; j < 16; ++j) CHECK(fam.values(0, j) == 0.0);
}

TEST_CASE("frame rows integrate back to event durations", "[timeline]") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        Timeline tl = random_timeline(rng);
        int F = 1 + rng.uniform_int(32);
        auto fam = frame_activation(tl, F);
        double delta = tl.clip_duration / F;
        for (int i = 0; i < tl.size(); ++i) {
            double total = fam.values.row(i).sum() * delta;
            CHECK(std::abs(total - tl.events[i].duration()) < 1e-9);
        }
    }
}

TEST_CASE("frame_activation matches brute-force oracle", "[timeline]") {
    Rng rng(7);
    double max_err = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        Timeline tl = random_timeline(rng);
        int F = 1 + rng.uniform_int(24);
        auto fam = frame_activation(tl, F);
        for (int i = 0; i < tl.size(); ++i)
            for (int j = 0; j < F; ++j) {
                double expect = frame_coverage_oracle(
                    tl.events[i].onset, tl.events[i].offset, j,
                    tl.clip_duration, F);
                max_err = std::max(max_err,
                                   std::abs(fam.values(i, j) - expect));
            }
    }
    CHECK(max_err < 1e-12);
}

TEST_CASE("relation strengths for disjoint events", "[timeline]") {
    Timeline tl{10.0, {{"a", 0.0, 2.0, 1.0}, {"b", 5.0, 7.0, 1.0}}};
    auto rt = relation_tensor(tl);
    CHECK(rt.at(0, 1, BEFORE) == Approx(0.7));
    CHECK(rt.at(1, 0, AFTER) == Approx(0.7));
    for (int ch : {AFTER, OVERLAPS, CONTAINS, CONTAINED_BY})
        CHECK(rt.at(0, 1, ch) == 0.0);
    for (int ch : {BEFORE, OVERLAPS, CONTAINS, CONTAINED_BY})
        CHECK(rt.at(1, 0, ch) == 0.0);
}

TEST_CASE("relation strengths for containment", "[timeline]") {
    Timeline tl{10.0, {{"a", 0.0, 10.0, 1.0}, {"b", 2.0, 4.0, 1.0}}};
    auto rt = relation_tensor(tl);
    CHECK(rt.at(0, 1, CONTAINS) == 1.0);
    CHECK(rt.at(1, 0, CONTAINED_BY) == 1.0);
}

TEST_CASE("relation strengths for partial overlap", "[timeline]") {
    Timeline tl{10.0, {{"a", 0.0, 4.0, 1.0}, {"b", 2.0, 6.0, 1.0}}};
    auto rt = relation_tensor(tl);
    CHECK(rt.at(0, 1, OVERLAPS) == Approx(0.5));
    CHECK(rt.at(1, 0, OVERLAPS) == Approx(0.5));
}

TEST_CASE("touching intervals are BEFORE with strength 1", "[timeline]") {
    Timeline tl{10.0, {{"a", 0.0, 3.0, 1.0}, {"b", 3.0, 5.0, 1.0}}};
    auto rt = relation_tensor(tl);
    CHECK(rt.at(0, 1, BEFORE) == 1.0);
    CHECK(rt.at(0, 1, OVERLAPS) == 0.0);
}

TEST_CASE("identical intervals classify as OVERLAPS with strength 1",
          "[timeline]") {
    Timeline tl{10.0, {{"a", 1.0, 4.0, 1.0}, {"b", 1.0, 4.0, 1.0}}};
    auto rt = relation_tensor(tl);
    CHECK(rt.at(0, 1, OVERLAPS) == 1.0);
    CHECK(rt.at(0, 1, CONTAINS) == 0.0);
    CHECK(rt.at(0, 1, CONTAINED_BY) == 0.0);
}

TEST_CASE("shared-endpoint containment needs one strict endpoint",
          "[timeline]") {
    Timeline tl{10.0, {{"a", 0.0, 4.0, 1.0}, {"b", 0.0, 2.0, 1.0}}};
    auto rt = relation_tensor(tl);
    CHECK(rt.at(0, 1, CONTAINS) == 1.0);
}

TEST_CASE("relation tensor invariants on random timelines", "[timeline]") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        Timeline tl = random_timeline(rng);
        auto rt = relation_tensor(tl);
        int n = tl.size();
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < kRelationChannels; ++ch)
                REQUIRE(rt.at(i, i, ch) == 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                // exact antisymmetry
                REQUIRE(rt.at(i, j, BEFORE) == rt.at(j, i, AFTER));
                REQUIRE(rt.at(i, j, CONTAINS) == rt.at(j, i, CONTAINED_BY));
                REQUIRE(rt.at(i, j, OVERLAPS) == rt.at(j, i, OVERLAPS));
                // channel exclusivity and bounds
                int nonzero = 0;
                for (int ch = 0; ch < kRelationChannels; ++ch) {
                    double v = rt.at(i, j, ch);
                    REQUIRE(v >= 0.0);
                    REQUIRE(v <= 1.0);
                    if (v != 0.0) ++nonzero;
                }
                REQUIRE(nonzero <= 1);
            }
        }
    }
}

TEST_CASE("shift covariance of F and A", "[timeline]") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        double clip = 10.0;
        int F = 20;
        double delta = clip / F;
        // events confined to the first half so a +k*delta shift stays in-clip
        std::vector<EventSpec> events;
        int n = 1 + rng.uniform_int(4);
        for (int i = 0; i < n; ++i) {
            double s = rng.uniform(0.0, 4.0);
            double e = s + rng.uniform(0.05, 1.0);
            events.push_back({"c" + std::to_string(i), s, e, 1.0});
        }
        int k = 1 + rng.uniform_int(5);
        std::vector<EventSpec> shifted = events;
        for (auto& ev : shifted) {
            ev.onset += k * delta;
            ev.offset += k * delta;
        }
        Timeline tl{clip, events}, tl2{clip, shifted};
        auto fam = frame_activation(tl, F), fam2 = frame_activation(tl2, F);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j + k < F; ++j)
                REQUIRE(std::abs(fam.values(i, j) - fam2.values(i, j + k)) <
                        1e-12);
        auto rt = relation_tensor(tl), rt2 = relation_tensor(tl2);
        for (size_t idx = 0; idx < rt.data.size(); ++idx)
            REQUIRE(std::abs(rt.data[idx] - rt2.data[idx]) < 1e-12);
    }
}
