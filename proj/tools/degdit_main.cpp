// degdit: event-graph conditioned rectified-flow generation on synthetic
// latents. Subcommands: curate, train, generate, copo, evaluate, report.
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "degdit/annotations.hpp"
#include "degdit/copo.hpp"
#include "degdit/curation.hpp"
#include "degdit/detection.hpp"
#include "degdit/experiment.hpp"
#include "degdit/flow_gen.hpp"
#include "degdit/params.hpp"

using namespace degdit;

namespace {

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::NonFiniteLoss:
        case ErrorKind::IoError:
            return 2;
        default:
            return 1;
    }
}

std::vector<std::string> label_universe(
    const std::vector<AnnotationRecord>& records) {
    std::set<std::string> labels;
    for (const auto& r : records)
        for (const auto& e : r.events) labels.insert(e.label);
    return {labels.begin(), labels.end()};
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + path);
    f << j.dump(2) << "\n";
}

int cmd_curate(const std::string& input, int n_target, double q_min,
               double tau_rare, double tau_common, bool adaptive,
               uint64_t seed, const std::string& manifest,
               const std::string& summary) {
    auto records = read_annotations_file(input);
    FrequencyOptions fo{tau_rare, tau_common, adaptive};
    FrequencyTable ft = build_frequency_table(records, fo);
    std::vector<QualityScore> scores;
    scores.reserve(records.size());
    for (const auto& r : records) scores.push_back(quality_score(r));
    StratifyOptions so{q_min, seed};
    CuratedDataset ds = stratify_and_sample(records, ft, scores, n_target, so);
    write_curated_manifest(manifest, ds);
    write_json(summary, curation_summary(ds, ft));
    std::cout << "curated " << ds.selected.size() << " of " << records.size()
              << " records\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& corpus_path,
              const std::string& out_path, const std::string& loss_csv) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    auto records = read_annotations_file(corpus_path);
    ClassSignatureBank bank(cfg.seed, cfg.gen.D);
    ParamStore store(cfg.seed);
    Generator gen(cfg.gen, store);
    auto samples = build_train_samples(records, cfg.gen, bank, cfg.seed);
    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.cond_dropout = cfg.cond_dropout;
    tc.seed = cfg.seed;
    tc.threads = cfg.resolved_threads();
    tc.use_graph = !cfg.text_only;
    TrainResult tr = train(store, gen, samples, tc);
    save_checkpoint(store, out_path);
    if (!loss_csv.empty()) {
        std::ofstream f(loss_csv);
        f << "epoch,loss\n";
        for (size_t e = 0; e < tr.epoch_loss.size(); ++e)
            f << e << ',' << tr.epoch_loss[e] << "\n";
    }
    std::cout << "trained " << cfg.epochs << " epochs, final loss "
              << (tr.epoch_loss.empty() ? 0.0 : tr.epoch_loss.back()) << "\n";
    return 0;
}

int cmd_generate(const std::string& config_path, const std::string& model_path,
                 const std::string& annotations_path,
                 const std::string& out_path, double gs, int steps,
                 uint64_t seed, bool text_only) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    ParamStore store(cfg.seed);
    Generator gen(cfg.gen, store);
    load_checkpoint(store, model_path);
    auto records = read_annotations_file(annotations_path);
    auto items = build_eval_items(records, cfg.gen.enc.N_max);
    auto latents =
        generate_latents(store, gen, items, gs, steps, seed, !text_only);
    TensorFile tf;
    tf.seed = seed;
    for (auto& [id, m] : latents) tf.tensors.emplace_back(id, std::move(m));
    write_tensor_file(out_path, tf);
    std::cout << "generated " << items.size() << " latents\n";
    return 0;
}

int cmd_copo(const std::string& config_path, const std::string& model_path,
             const std::string& pairs_path, const std::string& latents_path,
             const std::string& annotations_path, const std::string& out_path,
             double beta, double lambda, double ema, int steps, uint64_t seed) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    ParamStore store(cfg.seed);
    Generator gen(cfg.gen, store);
    load_checkpoint(store, model_path);

    auto records = read_annotations_file(annotations_path);
    std::map<std::string, EvalItem> items;
    for (auto& item : build_eval_items(records, cfg.gen.enc.N_max))
        items[item.id] = item;

    TensorFile lat = read_tensor_file(latents_path);
    std::map<std::string, Mat> latents;
    for (auto& [name, m] : lat.tensors) latents[name] = std::move(m);

    std::ifstream pf(pairs_path);
    if (!pf) throw Error(ErrorKind::IoError, "cannot open " + pairs_path);
    std::vector<PreferencePair> pairs;
    std::string line;
    while (std::getline(pf, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        PreferencePair p;
        p.prompt_id = j.at("prompt_id").get<std::string>();
        p.win_ref = j.at("win_ref").get<std::string>();
        p.lose_ref = j.at("lose_ref").get<std::string>();
        p.delta = j.at("delta").get<double>();
        auto wit = latents.find(p.win_ref);
        auto lit = latents.find(p.lose_ref);
        if (wit == latents.end() || lit == latents.end())
            throw Error(ErrorKind::MissingCandidate,
                        "pair references missing latent: " + p.win_ref + " / " +
                            p.lose_ref);
        auto iit = items.find(p.prompt_id);
        if (iit == items.end())
            throw Error(ErrorKind::MissingCandidate,
                        "pair prompt not in annotations: " + p.prompt_id);
        p.win = wit->second;
        p.lose = lit->second;
        p.tl = iit->second.tl;
        p.prompt = iit->second.prompt;
        pairs.push_back(std::move(p));
    }

    CoPOState st = make_copo_state(store, beta, lambda, ema);
    CoPOTrainConfig ct;
    ct.steps = steps;
    ct.lr = cfg.copo_lr;
    ct.seed = seed;
    ct.use_graph = !cfg.text_only;
    CoPOResult res = copo_train(st, gen, pairs, ct);
    save_checkpoint(st.theta, out_path);
    std::cout << "copo " << steps << " steps on " << pairs.size()
              << " pairs, final loss " << res.loss_curve.back() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path,
                 const std::string& latents_path,
                 const std::string& annotations_path,
                 const std::string& out_path) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    auto records = read_annotations_file(annotations_path);
    auto items = build_eval_items(records, cfg.gen.enc.N_max);

    TensorFile lat = read_tensor_file(latents_path);
    std::vector<std::pair<std::string, Mat>> latents;
    for (auto& [name, m] : lat.tensors)
        latents.emplace_back(name, std::move(m));

    ClassSignatureBank bank(cfg.seed, cfg.gen.D);
    RewardConfig rcfg;
    rcfg.detector.threshold = cfg.detect_threshold;
    rcfg.detector.universe = label_universe(records);
    CollarConfig collar;
    collar.collar = cfg.collar;
    EvalMetrics m = evaluate_latents(latents, items, bank, rcfg, collar);
    write_json(out_path, metrics_json(m));
    std::cout << "f1_event=" << m.f1_event << " f1_clip=" << m.f1_clip << "\n";
    return 0;
}

int cmd_report(const std::string& config_path, const std::string& out_dir) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    nlohmann::json metrics = run_experiment(cfg, out_dir);
    std::cout << "f1_event=" << metrics["f1_event"]
              << " f1_clip=" << metrics["f1_clip"] << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic event graph conditioned flow generation"};
    app.require_subcommand(1);

    // curate
    auto* curate = app.add_subcommand("curate", "quality-balanced data selection");
    std::string cu_input, cu_manifest = "curated_manifest.jsonl",
                cu_summary = "curation_summary.json";
    int cu_n_target = 100;
    double cu_q_min = 15.0, cu_tau_rare = 0.005, cu_tau_common = 0.03;
    bool cu_adaptive = false;
    uint64_t cu_seed = 0;
    curate->add_option("--input", cu_input)->required();
    curate->add_option("--n-target", cu_n_target)->required();
    curate->add_option("--q-min", cu_q_min);
    curate->add_option("--tau-rare", cu_tau_rare);
    curate->add_option("--tau-common", cu_tau_common);
    curate->add_flag("--adaptive", cu_adaptive);
    curate->add_option("--seed", cu_seed);
    curate->add_option("--manifest", cu_manifest);
    curate->add_option("--summary", cu_summary);

    // train
    auto* train_cmd = app.add_subcommand("train", "flow-matching training");
    std::string tr_config, tr_corpus, tr_out = "model.ckpt", tr_loss_csv;
    train_cmd->add_option("--config", tr_config)->required();
    train_cmd->add_option("--corpus", tr_corpus)->required();
    train_cmd->add_option("--out", tr_out);
    train_cmd->add_option("--loss-curve", tr_loss_csv);

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "guided Euler sampling");
    std::string ge_config, ge_model, ge_annotations, ge_out = "latents.bin";
    double ge_gs = 4.0;
    int ge_steps = 50;
    uint64_t ge_seed = 0;
    bool ge_text_only = false;
    gen_cmd->add_option("--config", ge_config)->required();
    gen_cmd->add_option("--model", ge_model)->required();
    gen_cmd->add_option("--annotations", ge_annotations)->required();
    gen_cmd->add_option("--out", ge_out);
    gen_cmd->add_option("--gs", ge_gs);
    gen_cmd->add_option("--steps", ge_steps);
    gen_cmd->add_option("--seed", ge_seed);
    gen_cmd->add_flag("--text-only", ge_text_only);

    // copo
    auto* copo_cmd = app.add_subcommand("copo", "consensus preference optimization");
    std::string co_config, co_model, co_pairs, co_latents, co_annotations,
        co_out = "model_copo.ckpt";
    double co_beta = 0.1, co_lambda = 0.1, co_ema = 0.999;
    int co_steps = 200;
    uint64_t co_seed = 0;
    copo_cmd->add_option("--config", co_config)->required();
    copo_cmd->add_option("--model", co_model)->required();
    copo_cmd->add_option("--pairs", co_pairs)->required();
    copo_cmd->add_option("--latents", co_latents)->required();
    copo_cmd->add_option("--annotations", co_annotations)->required();
    copo_cmd->add_option("--out", co_out);
    copo_cmd->add_option("--beta", co_beta);
    copo_cmd->add_option("--lambda", co_lambda);
    copo_cmd->add_option("--ema", co_ema);
    copo_cmd->add_option("--steps", co_steps);
    copo_cmd->add_option("--seed", co_seed);

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "F1 + reward metrics");
    std::string ev_config, ev_latents, ev_annotations, ev_out = "metrics.json";
    eval_cmd->add_option("--config", ev_config)->required();
    eval_cmd->add_option("--latents", ev_latents)->required();
    eval_cmd->add_option("--annotations", ev_annotations)->required();
    eval_cmd->add_option("--out", ev_out);

    // report
    auto* rep_cmd = app.add_subcommand("report", "full experiment pipeline");
    std::string re_config, re_out_dir = "run";
    rep_cmd->add_option("--config", re_config)->required();
    rep_cmd->add_option("--out-dir", re_out_dir);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (curate->parsed())
            return cmd_curate(cu_input, cu_n_target, cu_q_min, cu_tau_rare,
                              cu_tau_common, cu_adaptive, cu_seed, cu_manifest,
                              cu_summary);
        if (train_cmd->parsed())
            return cmd_train(tr_config, tr_corpus, tr_out, tr_loss_csv);
        if (gen_cmd->parsed())
            return cmd_generate(ge_config, ge_model, ge_annotations, ge_out,
                                ge_gs, ge_steps, ge_seed, ge_text_only);
        if (copo_cmd->parsed())
            return cmd_copo(co_config, co_model, co_pairs, co_latents,
                            co_annotations, co_out, co_beta, co_lambda, co_ema,
                            co_steps, co_seed);
        if (eval_cmd->parsed())
            return cmd_evaluate(ev_config, ev_latents, ev_annotations, ev_out);
        if (rep_cmd->parsed()) return cmd_report(re_config, re_out_dir);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
