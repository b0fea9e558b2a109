#include <catch2/catch.hpp>

#include "degdit/detection.hpp"
#include "degdit/experiment.hpp"

using namespace degdit;

namespace {

DetectorConfig universe_cfg(std::vector<std::string> labels,
                            double threshold = 0.5) {
    DetectorConfig cfg;
    cfg.threshold = threshold;
    cfg.universe = std::move(labels);
    return cfg;
}

std::vector<DetectedEvent> as_detections(const Timeline& tl) {
    std::vector<DetectedEvent> dets;
    for (const auto& e : tl.events)
        dets.push_back(DetectedEvent{e.category, e.onset, e.offset, 1.0});
    return dets;
}

}  // namespace

TEST_CASE("detector recovers a clean single event", "[detection]") {
    ClassSignatureBank bank(11, 16);
    Timeline tl{10.0, {{"dog", 2.0, 5.0, 1.0}}};
    Rng rng(0);
    auto latent = synth_target(tl, bank, 64, 0.0, rng);
    auto dets = detect_events(latent, bank, universe_cfg({"dog", "cat"}));
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].category == "dog");
    const double frame = 10.0 / 64;
    CHECK(std::abs(dets[0].onset - 2.0) <= frame);
    CHECK(std::abs(dets[0].offset - 5.0) <= frame);
    CHECK(dets[0].confidence > 0.9);
    CHECK(dets[0].confidence <= 1.0);
}

TEST_CASE("detector returns nothing on zero latents or high thresholds",
          "[detection]") {
    ClassSignatureBank bank(11, 16);
    SyntheticLatent zero{Mat::Zero(64, 16), 10.0};
    CHECK(detect_events(zero, bank, universe_cfg({"dog"})).empty());

    Timeline tl{10.0, {{"dog", 2.0, 5.0, 1.0}}};
    Rng rng(0);
    auto latent = synth_target(tl, bank, 64, 0.0, rng);
    CHECK(detect_events(latent, bank, universe_cfg({"dog"}, 2.0)).empty());
}

TEST_CASE("detector soundness on non-overlapping distinct classes",
          "[detection]") {
    ClassSignatureBank bank(23, 16);
    const int f_lat = 64;
    const double clip = 10.0;
    const double frame = clip / f_lat;
    Rng rng(5);

    auto best_match = [&](const std::vector<DetectedEvent>& dets,
                          const EventSpec& e) {
        double best_iou = 0.0, best_slack = clip;
        for (const auto& d : dets) {
            if (d.category != e.category) continue;
            double inter =
                std::min(d.offset, e.offset) - std::max(d.onset, e.onset);
            double uni =
                std::max(d.offset, e.offset) - std::min(d.onset, e.onset);
            if (inter > 0) {
                best_iou = std::max(best_iou, inter / uni);
                best_slack = std::min(best_slack, uni - inter);
            }
        }
        return std::pair{best_iou, best_slack};
    };

    // Boundary quantization costs at most one frame per endpoint, so the
    // 1 - 2/F_lat IoU bound is meaningful for clip-scale events; shorter
    // events get the equivalent absolute-slack bound.
    for (int trial = 0; trial < 30; ++trial) {
        double onset = rng.uniform(0.0, 2.0);
        double dur = rng.uniform(6.0, clip - onset - 0.1);
        Timeline tl{clip, {{"alarm", onset, onset + dur, 1.0}}};
        auto latent = synth_target(tl, bank, f_lat, 0.0, rng);
        auto dets = detect_events(latent, bank, universe_cfg({"alarm", "dog"}));
        auto [iou, slack] = best_match(dets, tl.events[0]);
        REQUIRE(iou >= 1.0 - 2.0 / f_lat);
        (void)slack;
    }

    for (int trial = 0; trial < 50; ++trial) {
        std::vector<EventSpec> events;
        std::vector<std::string> classes = {"alarm", "dog", "siren"};
        double cursor = 0.3;
        for (int i = 0; i < 3; ++i) {
            double dur = rng.uniform(1.0, 2.2);
            events.push_back({classes[i], cursor, cursor + dur, 1.0});
            cursor += dur + rng.uniform(0.3, 0.8);
        }
        Timeline tl{clip, events};
        auto latent = synth_target(tl, bank, f_lat, 0.0, rng);
        auto dets = detect_events(latent, bank, universe_cfg(classes));
        for (const auto& e : tl.events) {
            auto [iou, slack] = best_match(dets, e);
            REQUIRE(iou > 0.0);            // every class recovered
            REQUIRE(slack <= 2.0 * frame);  // <= one frame per endpoint
        }
    }
}

TEST_CASE("f1_event is 1 for identical detections and 0 for none",
          "[detection]") {
    Timeline tl{10.0, {{"a", 1.0, 3.0, 1.0}, {"b", 4.0, 6.0, 1.0}}};
    CHECK(f1_event(as_detections(tl), tl) == 1.0);
    CHECK(f1_event({}, tl) == 0.0);
}

TEST_CASE("collar rejects a half-second onset error", "[detection]") {
    Timeline tl{10.0, {{"a", 2.0, 3.0, 1.0}}};  // duration 1 s
    std::vector<DetectedEvent> dets = {{"a", 2.5, 3.5, 1.0}};
    // onset error 0.5 > 0.2 collar; offset tolerance max(0.2, 0.2*1) = 0.2
    CHECK(f1_event(dets, tl) == 0.0);
}

TEST_CASE("offset tolerance widens with ground-truth duration",
          "[detection]") {
    Timeline tl{10.0, {{"a", 1.0, 6.0, 1.0}}};  // 5 s -> offset tol 1 s
    std::vector<DetectedEvent> dets = {{"a", 1.1, 6.8, 1.0}};
    CHECK(f1_event(dets, tl) == 1.0);
    std::vector<DetectedEvent> too_far = {{"a", 1.1, 7.2, 1.0}};
    CHECK(f1_event(too_far, tl) == 0.0);
}

TEST_CASE("overlapping same-class ground truth merges before matching",
          "[detection]") {
    Timeline tl{10.0, {{"a", 1.0, 3.0, 1.0}, {"a", 2.5, 5.0, 1.0}}};
    std::vector<DetectedEvent> dets = {{"a", 1.0, 5.0, 1.0}};
    CHECK(f1_event(dets, tl) == 1.0);
}

TEST_CASE("f1_clip presence and macro averaging", "[detection]") {
    Timeline tl{10.0, {{"a", 1.0, 3.0, 1.0}, {"b", 4.0, 6.0, 1.0}}};
    CHECK(f1_clip(as_detections(tl), tl) == 1.0);

    Timeline gt_a{10.0, {{"a", 1.0, 3.0, 1.0}}};
    std::vector<DetectedEvent> det_b = {{"b", 1.0, 3.0, 1.0}};
    CHECK(f1_clip(det_b, gt_a) == 0.0);

    std::vector<DetectedEvent> det_a = {{"a", 1.0, 3.0, 1.0}};
    CHECK(f1_clip(det_a, tl) == Approx(0.5));
}

TEST_CASE("swapping detections and ground truth leaves F1 unchanged",
          "[detection]") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        // ground truth with disjoint same-duration events; detections are
        // in-collar copies plus far-away spurious segments
        std::vector<EventSpec> gt_events;
        std::vector<DetectedEvent> dets;
        double cursor = 0.2;
        int n = 1 + rng.uniform_int(3);
        for (int i = 0; i < n; ++i) {
            double dur = 1.5;
            // one class per event so no same-class merging on either side
            std::string cls = "c" + std::to_string(i);
            gt_events.push_back({cls, cursor, cursor + dur, 1.0});
            if (rng.uniform() < 0.7) {
                double jitter = rng.uniform(-0.15, 0.15);
                dets.push_back(
                    {cls, cursor + jitter, cursor + dur + jitter, 1.0});
            } else {
                dets.push_back({cls, cursor + 3.0, cursor + 3.0 + dur, 1.0});
            }
            cursor += dur + 1.8;
        }
        Timeline gt{20.0, gt_events};

        // forward
        double f_fwd = f1_event(dets, gt);
        // swapped: detections become ground truth and vice versa
        std::vector<EventSpec> gt2;
        for (const auto& d : dets)
            gt2.push_back({d.category, d.onset, d.offset, 1.0});
        Timeline gt_swapped{20.0, gt2};
        double f_bwd = f1_event(as_detections(gt), gt_swapped);
        REQUIRE(f_fwd == Approx(f_bwd).margin(1e-12));
    }
}

TEST_CASE("accumulator pools counts and macro-averages over the universe",
          "[detection]") {
    EvalAccumulator acc;
    Timeline t1{10.0, {{"a", 1.0, 3.0, 1.0}}};
    Timeline t2{10.0, {{"b", 2.0, 4.0, 1.0}}};
    acc.add_clip(as_detections(t1), t1);  // a perfect
    acc.add_clip({}, t2);                 // b missed
    CHECK(acc.universe().size() == 2);
    CHECK(acc.f1_event_macro() == Approx(0.5));
    CHECK(acc.f1_clip_macro() == Approx(0.5));
    // macro equals the mean of per-class F1 exactly
    double mean = 0.0;
    for (const auto& label : acc.universe()) {
        auto it = acc.event_counts().find(label);
        mean += it == acc.event_counts().end() ? 0.0 : it->second.f1();
    }
    mean /= 2.0;
    CHECK(acc.f1_event_macro() == Approx(mean).margin(1e-12));
}

TEST_CASE("metric bounds hold on random detection sets", "[detection]") {
    Rng rng(404);
    ClassSignatureBank bank(2, 8);
    for (int trial = 0; trial < 50; ++trial) {
        Timeline tl{10.0,
                    {{"a", 1.0, 3.0, 1.0},
                     {"b", rng.uniform(0.0, 5.0), 9.0, 1.0}}};
        SyntheticLatent lat{rng.gaussian_matrix(32, 8), 10.0};
        auto dets = detect_events(lat, bank, universe_cfg({"a", "b"}, 0.3));
        double fe = f1_event(dets, tl);
        double fc = f1_clip(dets, tl);
        REQUIRE(fe >= 0.0);
        REQUIRE(fe <= 1.0);
        REQUIRE(fc >= 0.0);
        REQUIRE(fc <= 1.0);
    }
}
