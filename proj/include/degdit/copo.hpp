#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "degdit/detection.hpp"
#include "degdit/flow_gen.hpp"
#include "degdit/params.hpp"
#include "degdit/rng.hpp"
#include "degdit/util.hpp"

namespace degdit {

struct RewardWeights {
    double text = 0.35;
    double event = 0.35;
    double temporal = 0.15;
    double audio = 0.15;
};

struct RewardVector {
    double text = 0.0;
    double event = 0.0;
    double temporal = 0.0;
    double audio = 0.0;

    double overall(const RewardWeights& w = {}) const {
        return w.text * text + w.event * event + w.temporal * temporal +
               w.audio * audio;
    }
};

struct RewardConfig {
    DetectorConfig detector;
    RewardWeights weights;
};

namespace detail {

// Orthonormal basis of the class-signature span (modified Gram-Schmidt).
inline std::vector<Eigen::RowVectorXd> signature_basis(
    const ClassSignatureBank& bank, const std::vector<std::string>& universe) {
    std::vector<Eigen::RowVectorXd> basis;
    for (const auto& label : universe) {
        Eigen::RowVectorXd v = bank.get(label);
        for (const auto& b : basis) v -= v.dot(b) * b;
        double n = v.norm();
        if (n > 1e-10) basis.push_back(v / n);
    }
    return basis;
}

inline double residual_energy_ratio(
    const Mat& x, const std::vector<Eigen::RowVectorXd>& basis) {
    double total = x.squaredNorm();
    if (total < 1e-12) return 0.0;
    double in_span = 0.0;
    for (const auto& b : basis) in_span += (x * b.transpose()).squaredNorm();
    return clamp01((total - in_span) / total);
}

inline double dynamic_range_statistic(const Mat& x) {
    std::vector<double> norms(static_cast<size_t>(x.rows()));
    for (int r = 0; r < x.rows(); ++r) norms[r] = x.row(r).norm();
    std::sort(norms.begin(), norms.end());
    return clamp01((percentile_sorted(norms, 0.95) -
                    percentile_sorted(norms, 0.05)) /
                   2.0);
}

inline double interval_iou(double s1, double e1, double s2, double e2) {
    double inter = std::min(e1, e2) - std::max(s1, s2);
    if (inter <= 0.0) return 0.0;
    double uni = std::max(e1, e2) - std::min(s1, s2);
    return inter / uni;
}

}  // namespace detail

// Four-component reward on a generated latent: hash-space text alignment,
// detected-class recall, mean per-event IoU, and a synthetic audio-quality
// score (in-span energy + dynamic range). All components live in [0,1].
inline RewardVector compute_rewards(const SyntheticLatent& latent,
                                    const Timeline& tl,
                                    const std::string& prompt,
                                    const ClassSignatureBank& bank,
                                    const RewardConfig& cfg) {
    RewardVector r;

    // text: cosine between pooled prompt tokens and the mean latent frame,
    // both living in the bank's D-dim space
    auto tokens = tokenize(prompt);
    Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(bank.dim());
    for (const auto& tok : tokens) pooled += bank.get(tok);
    Eigen::RowVectorXd mean_frame = latent.x.colwise().mean();
    double np = pooled.norm(), nf = mean_frame.norm();
    double cosine =
        (np < 1e-12 || nf < 1e-12) ? 0.0 : pooled.dot(mean_frame) / (np * nf);
    r.text = clamp01(0.5 * (1.0 + cosine));

    auto detections = detect_events(latent, bank, cfg.detector);

    // event: recall of ground-truth classes
    std::set<std::string> gt_classes, det_classes;
    for (const auto& e : tl.events) gt_classes.insert(e.category);
    for (const auto& d : detections) det_classes.insert(d.category);
    long hit = 0;
    for (const auto& c : gt_classes) hit += det_classes.count(c) ? 1 : 0;
    r.event = gt_classes.empty()
                  ? 0.0
                  : static_cast<double>(hit) /
                        static_cast<double>(gt_classes.size());

    // temporal: mean best-IoU per ground-truth event
    double iou_sum = 0.0;
    for (const auto& e : tl.events) {
        double best = 0.0;
        for (const auto& d : detections)
            if (d.category == e.category)
                best = std::max(best, detail::interval_iou(e.onset, e.offset,
                                                           d.onset, d.offset));
        iou_sum += best;
    }
    r.temporal = tl.events.empty()
                     ? 0.0
                     : iou_sum / static_cast<double>(tl.events.size());

    auto basis = detail::signature_basis(bank, cfg.detector.universe);
    r.audio =
        0.5 * clamp01(1.0 - detail::residual_energy_ratio(latent.x, basis)) +
        0.5 * detail::dynamic_range_statistic(latent.x);
    return r;
}

// ---- preference pairs --------------------------------------------------------

struct PreferencePair {
    std::string prompt_id;
    std::string win_ref, lose_ref;
    Mat win, lose;
    Timeline tl;
    std::string prompt;
    double delta = 0.0;  // r_overall(win) - r_overall(lose), > 0 by orientation
    RewardVector rewards_win, rewards_lose;
};

struct PairPrompt {
    std::string id;
    Timeline tl;
    std::string prompt;
};

struct PairSource {
    std::string name;
    std::map<std::string, Mat> latents;  // prompt id -> latent
};

// Scores every candidate per prompt and emits one oriented pair per
// unordered candidate pair with a strictly positive intensity; exact ties
// carry no signal and are dropped.
inline std::vector<PreferencePair> build_pairs(
    const std::vector<PairPrompt>& prompts,
    const std::vector<PairSource>& sources, const ClassSignatureBank& bank,
    const RewardConfig& cfg) {
    std::vector<PreferencePair> pairs;
    for (const auto& p : prompts) {
        struct Scored {
            std::string ref;
            const Mat* latent;
            RewardVector rewards;
            double overall;
        };
        std::vector<Scored> cands;
        for (const auto& src : sources) {
            auto it = src.latents.find(p.id);
            if (it == src.latents.end())
                throw Error(ErrorKind::MissingCandidate,
                            "prompt " + p.id + " missing from source " +
                                src.name);
            SyntheticLatent lat{it->second, p.tl.clip_duration};
            RewardVector rv = compute_rewards(lat, p.tl, p.prompt, bank, cfg);
            cands.push_back(Scored{src.name + "/" + p.id, &it->second, rv,
                                   rv.overall(cfg.weights)});
        }
        for (size_t a = 0; a < cands.size(); ++a) {
            for (size_t b = a + 1; b < cands.size(); ++b) {
                double delta = cands[a].overall - cands[b].overall;
                if (delta == 0.0) continue;
                const Scored& win = delta > 0 ? cands[a] : cands[b];
                const Scored& lose = delta > 0 ? cands[b] : cands[a];
                PreferencePair pp;
                pp.prompt_id = p.id;
                pp.win_ref = win.ref;
                pp.lose_ref = lose.ref;
                pp.win = *win.latent;
                pp.lose = *lose.latent;
                pp.tl = p.tl;
                pp.prompt = p.prompt;
                pp.delta = std::abs(delta);
                pp.rewards_win = win.rewards;
                pp.rewards_lose = lose.rewards;
                pairs.push_back(std::move(pp));
            }
        }
    }
    return pairs;
}

inline nlohmann::json reward_json(const RewardVector& r) {
    return {{"text", r.text},
            {"event", r.event},
            {"temporal", r.temporal},
            {"audio", r.audio}};
}

inline void write_pair_manifest(const std::string& path,
                                const std::vector<PreferencePair>& pairs) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + path);
    for (const auto& p : pairs) {
        nlohmann::json j = {{"prompt_id", p.prompt_id},
                            {"win_ref", p.win_ref},
                            {"lose_ref", p.lose_ref},
                            {"delta", p.delta},
                            {"rewards_win", reward_json(p.rewards_win)},
                            {"rewards_lose", reward_json(p.rewards_lose)}};
        f << j.dump() << "\n";
    }
}

// ---- CoPO loss ---------------------------------------------------------------

struct CoPOState {
    ParamStore theta;
    ParamStore reference;
    double beta = 0.1;
    double lambda = 0.1;
    double ema_decay = 0.999;
};

inline CoPOState make_copo_state(const ParamStore& trained, double beta = 0.1,
                                 double lambda = 0.1, double ema_decay = 0.999) {
    CoPOState st;
    st.theta = trained;
    st.reference = trained;
    st.beta = beta;
    st.lambda = lambda;
    st.ema_decay = ema_decay;
    return st;
}

// theta_ref <- decay*theta_ref + (1-decay)*theta, applied every step
inline void refresh_reference(CoPOState& st) {
    ema_update(st.reference, st.theta, st.ema_decay);
}

// delta_hat = -(L_fm^theta(win) - L_fm^theta(lose))
//             + (L_fm^ref(win) - L_fm^ref(lose)),
// all four evaluated on one shared (t, x0) draw.
inline double preference_signal(const Generator& gen, const CoPOState& st,
                                const PreferencePair& pair,
                                const FlowDraw& draw, bool use_graph = true) {
    auto eval = [&](const ParamStore& store, const Mat& x1) {
        ConditioningBundle cb =
            gen.condition_bundle(store, pair.tl, pair.prompt, use_graph);
        return gen.fm_loss_value(store, x1, cb.concat(), cb.concat_mask(),
                                 draw);
    };
    double lw = eval(st.theta, pair.win);
    double ll = eval(st.theta, pair.lose);
    double lrw = eval(st.reference, pair.win);
    double lrl = eval(st.reference, pair.lose);
    return -(lw - ll) + (lrw - lrl);
}

// L = (delta - beta*delta_hat)^2 + lambda*L_fm^theta(win); gradients flow
// through delta_hat's theta terms and the FM anchor only — delta and the
// reference model are constants.
inline Var copo_loss_t(Binding& B, const Generator& gen, const CoPOState& st,
                       const PreferencePair& pair, const FlowDraw& draw,
                       bool use_graph = true, double* delta_hat_out = nullptr) {
    ad::Tape& T = B.tape();

    CondVars cond = gen.assemble_condition_t(B, pair.tl, pair.prompt, use_graph);
    Var loss_win = gen.fm_loss_t(B, pair.win, cond, draw);
    Var loss_lose = gen.fm_loss_t(B, pair.lose, cond, draw);

    auto ref_eval = [&](const Mat& x1) {
        ConditioningBundle cb =
            gen.condition_bundle(st.reference, pair.tl, pair.prompt, use_graph);
        return gen.fm_loss_value(st.reference, x1, cb.concat(),
                                 cb.concat_mask(), draw);
    };
    const double ref_diff = ref_eval(pair.win) - ref_eval(pair.lose);

    Var delta_hat = T.add_const(T.scale(T.sub(loss_win, loss_lose), -1.0),
                                ref_diff);
    if (delta_hat_out) *delta_hat_out = delta_hat.scalar();

    Var err = T.add_const(T.scale(delta_hat, -st.beta), pair.delta);
    Var pref = T.hadamard(err, err);
    return T.add(pref, T.scale(loss_win, st.lambda));
}

struct CoPOTrainConfig {
    int steps = 200;
    double lr = 1e-3;
    int pairs_per_step = 0;  // 0: full batch over the pair set
    uint64_t seed = 0;
    bool use_graph = true;
};

struct CoPOResult {
    std::vector<double> loss_curve;
};

// Each optimizer step averages the CoPO loss over a batch of pairs (full
// batch by default), draws a fresh shared (t, x0) per pair, then refreshes
// the EMA reference. Per-draw preference signals are far too noisy for
// single-pair steps to accumulate the win/lose asymmetry.
inline CoPOResult copo_train(CoPOState& st, const Generator& gen,
                             const std::vector<PreferencePair>& pairs,
                             const CoPOTrainConfig& tc) {
    if (pairs.empty())
        throw Error(ErrorKind::EmptyDataset, "no preference pairs");
    const GenConfig& cfg = gen.config();
    Adam opt(st.theta, AdamConfig{tc.lr});
    Rng rng = derive_rng(tc.seed, "copo");
    const int n = static_cast<int>(pairs.size());
    const int batch = tc.pairs_per_step > 0
                          ? std::min(tc.pairs_per_step, n)
                          : n;

    CoPOResult result;
    for (int step = 0; step < tc.steps; ++step) {
        std::vector<Mat> grads = make_grad_buffer(st.theta);
        double step_loss = 0.0;
        const double inv = 1.0 / batch;
        for (int k = 0; k < batch; ++k) {
            const PreferencePair& pair =
                batch == n ? pairs[k] : pairs[rng.uniform_int(n)];
            FlowDraw draw;
            draw.t = rng.uniform();
            draw.x0 = rng.gaussian_matrix(cfg.F_lat, cfg.D);

            ad::Tape tape;
            Binding B(tape, st.theta, true);
            Var loss = copo_loss_t(B, gen, st, pair, draw, tc.use_graph);
            if (!std::isfinite(loss.scalar()))
                throw Error(ErrorKind::NonFiniteLoss,
                            "copo step " + std::to_string(step));
            tape.backward(loss);
            B.accumulate_grads(grads, inv);
            step_loss += loss.scalar() * inv;
        }
        opt.step(st.theta, grads);
        refresh_reference(st);
        result.loss_curve.push_back(step_loss);
    }
    return result;
}

// Mean preference objective (delta - beta*delta_hat)^2 over a pair set with
// fixed evaluation draws; used to measure CoPO progress deterministically.
// Each pair's delta_hat is averaged over its draws first: the single-draw
// square carries an irreducible beta^2*Var(delta_hat) floor that no model
// can remove, while the mean isolates the learnable alignment.
inline double mean_preference_objective(
    const Generator& gen, const CoPOState& st,
    const std::vector<PreferencePair>& pairs,
    const std::vector<std::vector<FlowDraw>>& draws_per_pair,
    bool use_graph = true) {
    double sum = 0.0;
    for (size_t i = 0; i < pairs.size(); ++i) {
        double dh = 0.0;
        for (const auto& draw : draws_per_pair[i])
            dh += preference_signal(gen, st, pairs[i], draw, use_graph);
        dh /= static_cast<double>(draws_per_pair[i].size());
        double err = pairs[i].delta - st.beta * dh;
        sum += err * err;
    }
    return sum / static_cast<double>(pairs.size());
}

}  // namespace degdit
