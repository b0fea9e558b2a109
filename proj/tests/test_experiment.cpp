#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "degdit/experiment.hpp"

using namespace degdit;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

nlohmann::json mini_config_json() {
    return {
        {"seed", 11},
        {"d_model", 16},
        {"L", 1},
        {"n_heads", 2},
        {"N_max", 8},
        {"F", 8},
        {"T_max", 8},
        {"F_lat", 16},
        {"D", 8},
        {"gs", 2.0},
        {"steps", 4},
        {"lr", 1e-3},
        {"epochs", 2},
        {"batch_size", 4},
        {"eval_samples", 6},
        {"corpus",
         {{"n_samples", 12}, {"n_classes", 5}, {"max_events", 3}}},
    };
}

}  // namespace

TEST_CASE("unknown config keys are rejected by name", "[experiment]") {
    auto j = mini_config_json();
    j["mystery_knob"] = 3;
    try {
        parse_experiment_config(j);
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ConfigError);
        CHECK(std::string(e.what()).find("mystery_knob") !=
              std::string::npos);
    }

    auto j2 = mini_config_json();
    j2["corpus"]["n_sampels"] = 5;
    try {
        parse_experiment_config(j2);
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("corpus.n_sampels") !=
              std::string::npos);
    }
}

TEST_CASE("config defaults follow the stated values", "[experiment]") {
    ExperimentConfig cfg = parse_experiment_config({{"seed", 3}});
    CHECK(cfg.gen.enc.d_model == 64);
    CHECK(cfg.gen.enc.L == 4);
    CHECK(cfg.gen.enc.F == 16);
    CHECK(cfg.gen.F_lat == 64);
    CHECK(cfg.gen.D == 16);
    CHECK(cfg.gs == 4.0);
    CHECK(cfg.steps == 50);
    CHECK(cfg.gen.noise_scale == 0.05);
    CHECK(cfg.curation_q_min == 15.0);
    CHECK(cfg.copo_beta == 0.1);
    CHECK(cfg.copo_ema == 0.999);
}

TEST_CASE("synthetic corpora are valid, deterministic, and captioned in "
          "onset order",
          "[experiment]") {
    SynthCorpusConfig cfg;
    cfg.n_samples = 40;
    cfg.n_classes = 6;
    cfg.max_events = 4;
    cfg.seed = 123;
    auto a = make_synthetic_corpus(cfg);
    auto b = make_synthetic_corpus(cfg);
    REQUIRE(a.size() == 40);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].caption == b[i].caption);
        auto vr = record_to_timeline(a[i]);
        REQUIRE(vr.ok());
        REQUIRE(a[i].events.size() >= 1);
        REQUIRE(a[i].events.size() <= 4);
        for (size_t e = 1; e < a[i].events.size(); ++e)
            CHECK(a[i].events[e - 1].onset <= a[i].events[e].onset);
        // caption is the labels joined by "then"
        std::string expect;
        for (size_t e = 0; e < a[i].events.size(); ++e) {
            if (e) expect += " then ";
            expect += a[i].events[e].label;
        }
        CHECK(a[i].caption == expect);
    }
}

TEST_CASE("run_experiment writes its artifacts and reruns byte-identically",
          "[experiment][slow]") {
    namespace fs = std::filesystem;
    ExperimentConfig cfg = parse_experiment_config(mini_config_json());
    auto tmp = fs::temp_directory_path();
    std::string d1 = (tmp / "exp_run_a").string();
    std::string d2 = (tmp / "exp_run_b").string();
    fs::remove_all(d1);
    fs::remove_all(d2);

    nlohmann::json m1 = run_experiment(cfg, d1);
    nlohmann::json m2 = run_experiment(cfg, d2);

    for (const char* f : {"corpus.jsonl", "model.ckpt", "latents.bin",
                          "metrics.json"})
        CHECK(fs::exists(fs::path(d1) / f));

    CHECK(slurp(d1 + "/metrics.json") == slurp(d2 + "/metrics.json"));
    CHECK(slurp(d1 + "/corpus.jsonl") == slurp(d2 + "/corpus.jsonl"));
    CHECK(slurp(d1 + "/latents.bin") == slurp(d2 + "/latents.bin"));

    CHECK(m1["f1_event"].get<double>() >= 0.0);
    CHECK(m1["f1_event"].get<double>() <= 1.0);
    CHECK(m1["n_clips"] == 6);
    CHECK(m1["train_loss"].size() == 2);
}

TEST_CASE("run_experiment sweeps, curation, and copo stages", "[experiment][slow]") {
    namespace fs = std::filesystem;
    auto j = mini_config_json();
    j["corpus"] = {{"n_samples", 10}, {"n_classes", 4}, {"max_events", 2}};
    j["eval_samples"] = 4;
    j["epochs"] = 1;
    j["curation"] = {{"enabled", true}, {"n_target", 8}, {"q_min", 5.0}};
    j["copo"] = {{"enabled", true}, {"steps", 5}};
    j["sweeps"] = {{"gs", {0.0, 2.0}}, {"steps", {2, 4}}};
    ExperimentConfig cfg = parse_experiment_config(j);

    std::string dir =
        (fs::temp_directory_path() / "exp_run_full").string();
    fs::remove_all(dir);
    nlohmann::json metrics = run_experiment(cfg, dir);

    for (const char* f :
         {"curated_manifest.jsonl", "curation_summary.json", "pairs.jsonl",
          "gs_sweep.csv", "steps_sweep.csv", "metrics.json"})
        CHECK(fs::exists(fs::path(dir) / f));

    // sweep CSV has a header plus one row per value
    std::istringstream csv(slurp(dir + "/gs_sweep.csv"));
    std::string line;
    int rows = 0;
    REQUIRE(std::getline(csv, line));
    CHECK(line.rfind("gs,f1_event,", 0) == 0);
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    CHECK(metrics.contains("copo_loss"));
}
