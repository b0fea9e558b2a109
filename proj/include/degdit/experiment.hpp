#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "degdit/annotations.hpp"
#include "degdit/copo.hpp"
#include "degdit/curation.hpp"
#include "degdit/detection.hpp"
#include "degdit/flow_gen.hpp"
#include "degdit/params.hpp"

namespace degdit {

// ---- synthetic corpus --------------------------------------------------------

struct SynthCorpusConfig {
    int n_samples = 200;
    int n_classes = 12;
    int max_events = 4;
    double clip_duration = 10.0;
    double min_duration = 0.8;
    double max_duration = 3.5;
    uint64_t seed = 0;
};

inline std::vector<std::string> default_class_names(int n) {
    static const std::vector<std::string> pool = {
        "alarm", "dog",   "siren",  "engine", "bell",  "bird",
        "car",   "cat",   "door",   "drum",   "glass", "horn",
        "rain",  "train", "water",  "wind",   "clock", "cough",
        "piano", "horse", "thunder", "whistle", "saw",  "frog"};
    std::vector<std::string> names;
    for (int i = 0; i < n; ++i) {
        if (i < static_cast<int>(pool.size())) names.push_back(pool[i]);
        else names.push_back("class" + std::to_string(i));
    }
    return names;
}

// Random timelines over a fixed class list: 1..max_events distinct classes per
// clip, uniform intervals, caption = labels in onset order joined by "then".
inline std::vector<AnnotationRecord> make_synthetic_corpus(
    const SynthCorpusConfig& cfg) {
    auto classes = default_class_names(cfg.n_classes);
    Rng rng = derive_rng(cfg.seed, "corpus");
    std::vector<AnnotationRecord> records;
    for (int s = 0; s < cfg.n_samples; ++s) {
        AnnotationRecord rec;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "clip%05d", s);
        rec.id = buf;
        rec.duration = cfg.clip_duration;

        int n_events = 1 + rng.uniform_int(cfg.max_events);
        std::vector<int> pick(classes.size());
        for (size_t i = 0; i < pick.size(); ++i) pick[i] = static_cast<int>(i);
        for (int i = static_cast<int>(pick.size()) - 1; i > 0; --i)
            std::swap(pick[i], pick[rng.uniform_int(i + 1)]);

        for (int e = 0; e < n_events; ++e) {
            AnnotationEvent ev;
            ev.label = classes[pick[e]];
            double dur = rng.uniform(cfg.min_duration, cfg.max_duration);
            ev.onset = rng.uniform(0.0, cfg.clip_duration - dur);
            ev.offset = ev.onset + dur;
            ev.intensity = 1.0;
            rec.events.push_back(std::move(ev));
        }
        std::sort(rec.events.begin(), rec.events.end(),
                  [](const AnnotationEvent& a, const AnnotationEvent& b) {
                      return a.onset < b.onset;
                  });
        for (size_t e = 0; e < rec.events.size(); ++e) {
            if (e) rec.caption += " then ";
            rec.caption += rec.events[e].label;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

// ---- experiment config -------------------------------------------------------

struct ExperimentConfig {
    uint64_t seed = 1;
    GenConfig gen;
    double gs = 4.0;
    int steps = 50;
    double lr = 1e-3;
    int epochs = 20;
    int batch_size = 16;
    double cond_dropout = 0.1;
    double detect_threshold = 0.5;
    double collar = 0.2;
    bool text_only = false;
    int threads = 0;  // 0: take DEGDIT_THREADS from the environment
    int eval_samples = 0;  // 0: all

    SynthCorpusConfig corpus;

    bool curation_enabled = false;
    int curation_n_target = 100;
    double curation_q_min = 15.0;
    double curation_tau_rare = 0.005;
    double curation_tau_common = 0.03;
    bool curation_adaptive = false;

    bool copo_enabled = false;
    double copo_beta = 0.1;
    double copo_lambda = 0.1;
    double copo_ema = 0.999;
    int copo_steps = 200;
    double copo_lr = 1e-3;

    std::vector<double> sweep_gs;
    std::vector<int> sweep_steps;
    std::vector<int> sweep_L;
    std::vector<int> sweep_F;

    int resolved_threads() const {
        if (threads > 0) return threads;
        if (const char* env = std::getenv("DEGDIT_THREADS")) {
            int n = std::atoi(env);
            if (n > 0) return n;
        }
        return 1;
    }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::vector<std::string>& known,
                                const std::string& scope) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known) ok |= (it.key() == k);
        if (!ok)
            throw Error(ErrorKind::ConfigError,
                        "unknown config key '" + scope + it.key() + "'");
    }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j,
        {"seed", "d_model", "L", "n_heads", "N_max", "F", "T_max", "F_lat",
         "D", "noise_scale", "gs", "steps", "lr", "epochs", "batch_size",
         "cond_dropout", "detect_threshold", "collar", "text_only", "threads",
         "eval_samples", "corpus", "curation", "copo", "sweeps"},
        "");

    ExperimentConfig c;
    auto get = [&](const char* key, auto def) {
        using T = decltype(def);
        return j.contains(key) ? j.at(key).get<T>() : def;
    };
    c.seed = get("seed", static_cast<uint64_t>(1));
    c.gen.enc.d_model = get("d_model", 64);
    c.gen.enc.L = get("L", 4);
    c.gen.enc.n_heads = get("n_heads", 4);
    c.gen.enc.N_max = get("N_max", 16);
    c.gen.enc.F = get("F", 16);
    c.gen.enc.seed = c.seed;
    c.gen.T_max = get("T_max", 16);
    c.gen.F_lat = get("F_lat", 64);
    c.gen.D = get("D", 16);
    c.gen.noise_scale = get("noise_scale", 0.05);
    c.gs = get("gs", 4.0);
    c.steps = get("steps", 50);
    c.lr = get("lr", 1e-3);
    c.epochs = get("epochs", 20);
    c.batch_size = get("batch_size", 16);
    c.cond_dropout = get("cond_dropout", 0.1);
    c.detect_threshold = get("detect_threshold", 0.5);
    c.collar = get("collar", 0.2);
    c.text_only = get("text_only", false);
    c.threads = get("threads", 0);
    c.eval_samples = get("eval_samples", 0);

    if (j.contains("corpus")) {
        const auto& jc = j["corpus"];
        detail::reject_unknown_keys(jc,
                                    {"n_samples", "n_classes", "max_events",
                                     "clip_duration", "min_duration",
                                     "max_duration"},
                                    "corpus.");
        auto getc = [&](const char* key, auto def) {
            using T = decltype(def);
            return jc.contains(key) ? jc.at(key).get<T>() : def;
        };
        c.corpus.n_samples = getc("n_samples", 200);
        c.corpus.n_classes = getc("n_classes", 12);
        c.corpus.max_events = getc("max_events", 4);
        c.corpus.clip_duration = getc("clip_duration", 10.0);
        c.corpus.min_duration = getc("min_duration", 0.8);
        c.corpus.max_duration = getc("max_duration", 3.5);
    }
    c.corpus.seed = c.seed;

    if (j.contains("curation")) {
        const auto& jc = j["curation"];
        detail::reject_unknown_keys(
            jc, {"enabled", "n_target", "q_min", "tau_rare", "tau_common",
                 "adaptive"},
            "curation.");
        auto getc = [&](const char* key, auto def) {
            using T = decltype(def);
            return jc.contains(key) ? jc.at(key).get<T>() : def;
        };
        c.curation_enabled = getc("enabled", false);
        c.curation_n_target = getc("n_target", 100);
        c.curation_q_min = getc("q_min", 15.0);
        c.curation_tau_rare = getc("tau_rare", 0.005);
        c.curation_tau_common = getc("tau_common", 0.03);
        c.curation_adaptive = getc("adaptive", false);
    }

    if (j.contains("copo")) {
        const auto& jc = j["copo"];
        detail::reject_unknown_keys(
            jc, {"enabled", "beta", "lambda", "ema", "steps", "lr"}, "copo.");
        auto getc = [&](const char* key, auto def) {
            using T = decltype(def);
            return jc.contains(key) ? jc.at(key).get<T>() : def;
        };
        c.copo_enabled = getc("enabled", false);
        c.copo_beta = getc("beta", 0.1);
        c.copo_lambda = getc("lambda", 0.1);
        c.copo_ema = getc("ema", 0.999);
        c.copo_steps = getc("steps", 200);
        c.copo_lr = getc("lr", 1e-3);
    }

    if (j.contains("sweeps")) {
        const auto& js = j["sweeps"];
        detail::reject_unknown_keys(js, {"gs", "steps", "L", "F"}, "sweeps.");
        if (js.contains("gs"))
            c.sweep_gs = js["gs"].get<std::vector<double>>();
        if (js.contains("steps"))
            c.sweep_steps = js["steps"].get<std::vector<int>>();
        if (js.contains("L")) c.sweep_L = js["L"].get<std::vector<int>>();
        if (js.contains("F")) c.sweep_F = js["F"].get<std::vector<int>>();
    }
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::IoError, "cannot open config " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError,
                    "config json: " + std::string(e.what()));
    }
    return parse_experiment_config(j);
}

// ---- dataset building --------------------------------------------------------

struct EvalItem {
    std::string id;
    Timeline tl;
    std::string prompt;
};

inline std::vector<TrainSample> build_train_samples(
    const std::vector<AnnotationRecord>& records, const GenConfig& cfg,
    const ClassSignatureBank& bank, uint64_t seed) {
    std::vector<TrainSample> samples;
    for (const auto& rec : records) {
        auto vr = record_to_timeline(rec, cfg.enc.N_max);
        if (!vr.ok())
            throw Error(ErrorKind::InvalidTimeline,
                        "record " + rec.id + ": " +
                            violation_name(vr.violations[0].kind));
        Rng rng = derive_rng(seed, "target/" + rec.id);
        SyntheticLatent target = synth_target(*vr.timeline, bank, cfg.F_lat,
                                              cfg.noise_scale, rng);
        samples.push_back(
            TrainSample{*vr.timeline, rec.caption, std::move(target.x)});
    }
    return samples;
}

inline std::vector<EvalItem> build_eval_items(
    const std::vector<AnnotationRecord>& records, int n_max, int limit = 0) {
    std::vector<EvalItem> items;
    for (const auto& rec : records) {
        if (limit > 0 && static_cast<int>(items.size()) >= limit) break;
        auto vr = record_to_timeline(rec, n_max);
        if (!vr.ok()) continue;
        items.push_back(EvalItem{rec.id, *vr.timeline, rec.caption});
    }
    return items;
}

// ---- generation + evaluation ---------------------------------------------------

inline std::vector<std::pair<std::string, Mat>> generate_latents(
    const ParamStore& store, const Generator& gen,
    const std::vector<EvalItem>& items, double gs, int steps, uint64_t seed,
    bool use_graph = true) {
    std::vector<std::pair<std::string, Mat>> out;
    for (const auto& item : items) {
        Rng rng = derive_rng(seed, "sample/" + item.id);
        out.emplace_back(item.id, sample(store, gen, item.tl, item.prompt, gs,
                                         steps, rng, use_graph));
    }
    return out;
}

struct EvalMetrics {
    double f1_event = 0.0;
    double f1_clip = 0.0;
    RewardVector mean_rewards;
    double mean_overall = 0.0;
    int n_clips = 0;
};

inline EvalMetrics evaluate_latents(
    const std::vector<std::pair<std::string, Mat>>& latents,
    const std::vector<EvalItem>& items, const ClassSignatureBank& bank,
    const RewardConfig& rcfg, const CollarConfig& collar) {
    std::map<std::string, const Timeline*> by_id;
    std::map<std::string, const std::string*> prompt_by_id;
    for (const auto& item : items) {
        by_id[item.id] = &item.tl;
        prompt_by_id[item.id] = &item.prompt;
    }

    EvalAccumulator acc(collar);
    RewardVector sum;
    double sum_overall = 0.0;
    int n = 0;
    for (const auto& [id, latent] : latents) {
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw Error(ErrorKind::MissingCandidate,
                        "latent id not in annotations: " + id);
        const Timeline& tl = *it->second;
        SyntheticLatent sl{latent, tl.clip_duration};
        acc.add_clip(detect_events(sl, bank, rcfg.detector), tl);
        RewardVector r =
            compute_rewards(sl, tl, *prompt_by_id[id], bank, rcfg);
        sum.text += r.text;
        sum.event += r.event;
        sum.temporal += r.temporal;
        sum.audio += r.audio;
        sum_overall += r.overall(rcfg.weights);
        ++n;
    }
    EvalMetrics m;
    m.n_clips = n;
    if (n > 0) {
        double inv = 1.0 / n;
        m.mean_rewards = RewardVector{sum.text * inv, sum.event * inv,
                                      sum.temporal * inv, sum.audio * inv};
        m.mean_overall = sum_overall * inv;
    }
    m.f1_event = acc.f1_event_macro();
    m.f1_clip = acc.f1_clip_macro();
    return m;
}

inline nlohmann::json metrics_json(const EvalMetrics& m) {
    return {{"f1_event", m.f1_event},
            {"f1_clip", m.f1_clip},
            {"rewards",
             {{"text", m.mean_rewards.text},
              {"event", m.mean_rewards.event},
              {"temporal", m.mean_rewards.temporal},
              {"audio", m.mean_rewards.audio},
              {"overall", m.mean_overall}}},
            {"n_clips", m.n_clips}};
}

// ---- full pipeline -------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline void write_sweep_csv(const std::string& path, const std::string& axis,
                            const std::vector<std::pair<std::string, EvalMetrics>>& rows) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + path);
    f << axis
      << ",f1_event,f1_clip,r_text,r_event,r_temporal,r_audio,r_overall\n";
    for (const auto& [value, m] : rows) {
        f << value << ',' << format_double(m.f1_event) << ','
          << format_double(m.f1_clip) << ','
          << format_double(m.mean_rewards.text) << ','
          << format_double(m.mean_rewards.event) << ','
          << format_double(m.mean_rewards.temporal) << ','
          << format_double(m.mean_rewards.audio) << ','
          << format_double(m.mean_overall) << "\n";
    }
}

}  // namespace detail

// Runs curate -> train -> (optional copo) -> generate -> evaluate, writing
// corpus.jsonl, checkpoints, latents, metrics.json, and any requested sweep
// CSVs under out_dir. Fully deterministic for a fixed config in
// single-threaded mode.
inline nlohmann::json run_experiment(const ExperimentConfig& cfg,
                                     const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto path = [&](const std::string& name) {
        return (fs::path(out_dir) / name).string();
    };

    // corpus
    std::vector<AnnotationRecord> records = make_synthetic_corpus(cfg.corpus);
    write_annotations_file(path("corpus.jsonl"), records);

    ClassSignatureBank bank(cfg.seed, cfg.gen.D);
    std::vector<std::string> universe =
        default_class_names(cfg.corpus.n_classes);

    // curation (optional)
    std::vector<AnnotationRecord> train_records = records;
    if (cfg.curation_enabled) {
        FrequencyOptions fo;
        fo.tau_rare = cfg.curation_tau_rare;
        fo.tau_common = cfg.curation_tau_common;
        fo.adaptive = cfg.curation_adaptive;
        FrequencyTable ft = build_frequency_table(records, fo);
        std::vector<QualityScore> scores;
        for (const auto& r : records) scores.push_back(quality_score(r));
        StratifyOptions so;
        so.q_min = cfg.curation_q_min;
        so.seed = cfg.seed;
        CuratedDataset curated = stratify_and_sample(
            records, ft, scores, cfg.curation_n_target, so);
        write_curated_manifest(path("curated_manifest.jsonl"), curated);
        {
            std::ofstream f(path("curation_summary.json"));
            f << curation_summary(curated, ft).dump(2) << "\n";
        }
        std::set<std::string> keep;
        for (const auto& e : curated.selected) keep.insert(e.id);
        train_records.clear();
        for (const auto& r : records)
            if (keep.count(r.id)) train_records.push_back(r);
    }

    // train
    ParamStore store(cfg.seed);
    Generator gen(cfg.gen, store);
    std::vector<TrainSample> samples =
        build_train_samples(train_records, cfg.gen, bank, cfg.seed);
    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.cond_dropout = cfg.cond_dropout;
    tc.seed = cfg.seed;
    tc.threads = cfg.resolved_threads();
    tc.use_graph = !cfg.text_only;
    TrainResult tr = train(store, gen, samples, tc);
    save_checkpoint(store, path("model.ckpt"));

    RewardConfig rcfg;
    rcfg.detector.threshold = cfg.detect_threshold;
    rcfg.detector.universe = universe;
    CollarConfig collar;
    collar.collar = cfg.collar;

    std::vector<EvalItem> items =
        build_eval_items(records, cfg.gen.enc.N_max, cfg.eval_samples);

    // copo (optional): candidates from the trained model at two guidance
    // settings plus clean reference targets
    std::vector<double> copo_curve;
    if (cfg.copo_enabled) {
        std::vector<PairPrompt> prompts;
        std::vector<PairSource> sources(3);
        sources[0].name = "reference";
        sources[1].name = "model_a";
        sources[2].name = "model_b";
        for (const auto& item : items) {
            prompts.push_back(PairPrompt{item.id, item.tl, item.prompt});
            Rng ref_rng = derive_rng(cfg.seed, "copo_ref/" + item.id);
            sources[0].latents[item.id] =
                synth_target(item.tl, bank, cfg.gen.F_lat, 0.0, ref_rng).x;
            Rng ra = derive_rng(cfg.seed, "copo_a/" + item.id);
            sources[1].latents[item.id] =
                sample(store, gen, item.tl, item.prompt, cfg.gs, cfg.steps, ra,
                       !cfg.text_only);
            Rng rb = derive_rng(cfg.seed, "copo_b/" + item.id);
            sources[2].latents[item.id] =
                sample(store, gen, item.tl, item.prompt, 1.0, cfg.steps, rb,
                       !cfg.text_only);
        }
        std::vector<PreferencePair> pairs =
            build_pairs(prompts, sources, bank, rcfg);
        write_pair_manifest(path("pairs.jsonl"), pairs);
        {
            TensorFile tf;
            tf.seed = cfg.seed;
            for (const auto& src : sources)
                for (const auto& [id, m] : src.latents)
                    tf.tensors.emplace_back(src.name + "/" + id, m);
            write_tensor_file(path("copo_candidates.bin"), tf);
        }
        if (!pairs.empty()) {
            CoPOState st = make_copo_state(store, cfg.copo_beta,
                                           cfg.copo_lambda, cfg.copo_ema);
            CoPOTrainConfig ct;
            ct.steps = cfg.copo_steps;
            ct.lr = cfg.copo_lr;
            ct.seed = cfg.seed;
            ct.use_graph = !cfg.text_only;
            CoPOResult cr = copo_train(st, gen, pairs, ct);
            copo_curve = cr.loss_curve;
            store = st.theta;
            save_checkpoint(store, path("model_copo.ckpt"));
        }
    }

    // generate + evaluate
    auto latents = generate_latents(store, gen, items, cfg.gs, cfg.steps,
                                    cfg.seed, !cfg.text_only);
    {
        TensorFile tf;
        tf.seed = cfg.seed;
        for (const auto& [id, m] : latents) tf.tensors.emplace_back(id, m);
        write_tensor_file(path("latents.bin"), tf);
    }
    EvalMetrics metrics = evaluate_latents(latents, items, bank, rcfg, collar);

    nlohmann::json out = metrics_json(metrics);
    out["seed"] = cfg.seed;
    out["gs"] = cfg.gs;
    out["steps"] = cfg.steps;
    out["train_loss"] = tr.epoch_loss;
    if (cfg.copo_enabled) out["copo_loss"] = copo_curve;

    // sweeps reuse the trained model; gs/steps only touch the sampler, L/F
    // retrain from scratch
    if (!cfg.sweep_gs.empty()) {
        std::vector<std::pair<std::string, EvalMetrics>> rows;
        for (double gs : cfg.sweep_gs) {
            auto lat = generate_latents(store, gen, items, gs, cfg.steps,
                                        cfg.seed, !cfg.text_only);
            rows.emplace_back(detail::format_double(gs),
                              evaluate_latents(lat, items, bank, rcfg, collar));
        }
        detail::write_sweep_csv(path("gs_sweep.csv"), "gs", rows);
    }
    if (!cfg.sweep_steps.empty()) {
        std::vector<std::pair<std::string, EvalMetrics>> rows;
        for (int steps : cfg.sweep_steps) {
            auto lat = generate_latents(store, gen, items, cfg.gs, steps,
                                        cfg.seed, !cfg.text_only);
            rows.emplace_back(std::to_string(steps),
                              evaluate_latents(lat, items, bank, rcfg, collar));
        }
        detail::write_sweep_csv(path("steps_sweep.csv"), "steps", rows);
    }
    auto retrain_eval = [&](GenConfig gen_cfg) {
        ParamStore st2(cfg.seed);
        Generator g2(gen_cfg, st2);
        auto samples2 = build_train_samples(train_records, gen_cfg, bank,
                                            cfg.seed);
        train(st2, g2, samples2, tc);
        auto lat = generate_latents(st2, g2, items, cfg.gs, cfg.steps,
                                    cfg.seed, !cfg.text_only);
        return evaluate_latents(lat, items, bank, rcfg, collar);
    };
    if (!cfg.sweep_L.empty()) {
        std::vector<std::pair<std::string, EvalMetrics>> rows;
        for (int L : cfg.sweep_L) {
            GenConfig gc = cfg.gen;
            gc.enc.L = L;
            rows.emplace_back(std::to_string(L), retrain_eval(gc));
        }
        detail::write_sweep_csv(path("L_sweep.csv"), "L", rows);
    }
    if (!cfg.sweep_F.empty()) {
        std::vector<std::pair<std::string, EvalMetrics>> rows;
        for (int F : cfg.sweep_F) {
            GenConfig gc = cfg.gen;
            gc.enc.F = F;
            rows.emplace_back(std::to_string(F), retrain_eval(gc));
        }
        detail::write_sweep_csv(path("F_sweep.csv"), "F", rows);
    }

    {
        std::ofstream f(path("metrics.json"));
        if (!f) throw Error(ErrorKind::IoError, "cannot write metrics.json");
        f << out.dump(2) << "\n";
    }
    return out;
}

}  // namespace degdit
