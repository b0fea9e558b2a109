#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "degdit/autodiff.hpp"
#include "degdit/deg_encoder.hpp"
#include "degdit/errors.hpp"
#include "degdit/nn.hpp"
#include "degdit/params.hpp"
#include "degdit/rng.hpp"
#include "degdit/timeline.hpp"

namespace degdit {

struct GenConfig {
    EncoderConfig enc;
    int T_max = 16;   // prompt token rows
    int F_lat = 64;   // latent frames
    int D = 16;       // latent channels
    double noise_scale = 0.05;

    int d_model() const { return enc.d_model; }
    uint64_t seed() const { return enc.seed; }
    int cond_rows() const { return T_max + enc.N_max + 1; }
};

// Category string -> unit-norm D-vector, a pure function of (label, seed).
// Defines the synthetic ground truth, so detection and rewards have exact
// oracles.
class ClassSignatureBank {
  public:
    ClassSignatureBank(uint64_t seed, int dim) : seed_(seed), dim_(dim) {}

    const Eigen::RowVectorXd& get(const std::string& label) const {
        auto it = cache_.find(label);
        if (it != cache_.end()) return it->second;
        auto [ins, ok] =
            cache_.emplace(label, class_signature(label, seed_, dim_));
        (void)ok;
        return ins->second;
    }

    int dim() const { return dim_; }
    uint64_t seed() const { return seed_; }

  private:
    uint64_t seed_;
    int dim_;
    mutable std::unordered_map<std::string, Eigen::RowVectorXd> cache_;
};

struct SyntheticLatent {
    Mat x;  // F_lat × D
    double clip_duration = 0.0;
};

// x1[t,:] = sum_i alpha_i * coverage_{i,t} * signature(c_i) + noise_scale*eta
inline SyntheticLatent synth_target(const Timeline& tl,
                                    const ClassSignatureBank& bank, int f_lat,
                                    double noise_scale, Rng& rng) {
    FrameActivationMatrix fam = frame_activation(tl, f_lat);
    Mat x = Mat::Zero(f_lat, bank.dim());
    for (int i = 0; i < tl.size(); ++i) {
        const auto& sig = bank.get(tl.events[i].category);
        for (int t = 0; t < f_lat; ++t) {
            double w = tl.events[i].intensity * fam.values(i, t);
            if (w != 0.0) x.row(t) += w * sig;
        }
    }
    if (noise_scale != 0.0) x += noise_scale * rng.gaussian_matrix(f_lat, bank.dim());
    return SyntheticLatent{std::move(x), tl.clip_duration};
}

// Straight-line interpolation and its constant target velocity.
inline std::pair<Mat, Mat> interpolate(const Mat& x1, const Mat& x0, double t) {
    if (x1.rows() != x0.rows() || x1.cols() != x0.cols())
        throw Error(ErrorKind::ShapeMismatch, "interpolate shapes");
    return {(1.0 - t) * x1 + t * x0, x0 - x1};
}

// Value-level conditioning bundle, blocks in the fixed (text, graph,
// duration) order; masked rows are zero.
struct ConditioningBundle {
    Mat text, graph, dur;
    std::vector<bool> text_mask, graph_mask;
    bool dur_mask = true;

    Mat concat() const {
        Mat rows(text.rows() + graph.rows() + 1, text.cols());
        rows.topRows(text.rows()) = text;
        rows.middleRows(text.rows(), graph.rows()) = graph;
        rows.bottomRows(1) = dur;
        return rows;
    }

    std::vector<bool> concat_mask() const {
        std::vector<bool> m;
        m.insert(m.end(), text_mask.begin(), text_mask.end());
        m.insert(m.end(), graph_mask.begin(), graph_mask.end());
        m.push_back(dur_mask);
        return m;
    }
};

// Tape-level conditioning: pre-concatenated rows plus key mask.
struct CondVars {
    Var rows;
    std::vector<bool> mask;

    bool all_masked() const {
        for (bool b : mask)
            if (b) return false;
        return true;
    }
};

struct FlowDraw {
    double t = 0.0;
    Mat x0;
};

// Conditional rectified-flow velocity model plus the conditioning assembly
// (text projection, graph embeddings from the encoder, duration embedding,
// block-type offsets).
class Generator {
  public:
    Generator(const GenConfig& cfg, ParamStore& store)
        : cfg_(cfg), encoder_(cfg.enc, store) {
        const int d = cfg.d_model();
        in_proj_ = nn::make_affine(store, "gen.in", cfg.D, d);
        t_emb_ = nn::make_affine(store, "gen.temb", d, d);
        for (int b = 0; b < kBlocks; ++b) {
            std::string name = "gen.block" + std::to_string(b);
            Block blk;
            blk.ln1 = nn::make_layer_norm(store, name + ".ln1", d);
            blk.ln2 = nn::make_layer_norm(store, name + ".ln2", d);
            blk.attn = nn::make_mha(store, name + ".attn", d);
            blk.mlp = nn::make_ffn(store, name + ".ffn", d, 4 * d);
            blk.mod1 = make_modulation(store, name + ".mod1", d);
            blk.mod2 = make_modulation(store, name + ".mod2", d);
            blocks_.push_back(blk);
        }
        final_ln_ = nn::make_layer_norm(store, "gen.final_ln", d);
        final_mod_ = make_modulation(store, "gen.final_mod", d);
        out_proj_ = nn::make_affine(store, "gen.out", d, cfg.D);
        skip_gate_.W = store.ensure_constant("gen.skip_gate.W", cfg.D, d, 0.0);
        skip_gate_.b = store.ensure_constant("gen.skip_gate.b", 1, cfg.D, 0.0);
        text_proj_ = nn::make_affine(store, "gen.text_proj", d, d);
        dur_proj_ = nn::make_affine(store, "gen.dur", d, d);
        type_offsets_ = store.ensure_uniform("gen.type_offsets", 3, d, d);
        frame_pe_ = nn::sinusoidal_position_table(cfg.F_lat, d);
        text_pe_ = nn::sinusoidal_position_table(cfg.T_max, d);
    }

    const GenConfig& config() const { return cfg_; }
    const DegEncoder& encoder() const { return encoder_; }

    // ---- conditioning -------------------------------------------------------

    CondVars assemble_condition_t(Binding& B, const Timeline& tl,
                                  const std::string& prompt,
                                  bool use_graph = true,
                                  EncodeTrace* trace = nullptr) const {
        ad::Tape& T = B.tape();
        const int d = cfg_.d_model();

        auto tokens = tokenize(prompt);
        const int n_tok =
            std::min<int>(cfg_.T_max, static_cast<int>(tokens.size()));
        std::vector<bool> text_mask(cfg_.T_max, false);
        Mat raw_tok = Mat::Zero(cfg_.T_max, d);
        for (int k = 0; k < n_tok; ++k) {
            raw_tok.row(k) = token_embedding(tokens[k], cfg_.seed(), d);
            text_mask[k] = true;
        }
        Var text = nn::affine(B, T.constant(std::move(raw_tok)), text_proj_);
        text = T.add(text, T.constant(text_pe_));
        text = T.add_rowvec(text, T.slice_rows(B(type_offsets_), 0, 1));
        text = T.zero_rows(text, text_mask);

        std::vector<bool> graph_mask(cfg_.enc.N_max, false);
        Var graph;
        if (use_graph) {
            FrameActivationMatrix fam = frame_activation(tl, cfg_.enc.F);
            RelationTensor rt = relation_tensor(tl);
            Var h = encoder_.encode_graph_t(
                B, tl, T.constant(DegEncoder::times_matrix(tl)),
                T.constant(fam.values), T.constant(rt.flat()), trace);
            for (int i = 0; i < tl.size(); ++i) graph_mask[i] = true;
            graph = T.add_rowvec(h, T.slice_rows(B(type_offsets_), 1, 1));
            graph = T.zero_rows(graph, graph_mask);
        } else {
            graph = T.constant(Mat::Zero(cfg_.enc.N_max, d));
        }

        Var dur = nn::affine(
            B, T.constant(nn::sinusoidal_features(tl.clip_duration, d)),
            dur_proj_);
        dur = T.add_rowvec(dur, T.slice_rows(B(type_offsets_), 2, 1));

        CondVars cv;
        cv.rows = T.concat_rows(T.concat_rows(text, graph), dur);
        cv.mask = text_mask;
        cv.mask.insert(cv.mask.end(), graph_mask.begin(), graph_mask.end());
        cv.mask.push_back(true);
        return cv;
    }

    CondVars null_condition_t(Binding& B) const {
        CondVars cv;
        cv.rows = B.tape().constant(
            Mat::Zero(cfg_.cond_rows(), cfg_.d_model()));
        cv.mask.assign(cfg_.cond_rows(), false);
        return cv;
    }

    ConditioningBundle condition_bundle(const ParamStore& store,
                                        const Timeline& tl,
                                        const std::string& prompt,
                                        bool use_graph = true) const {
        ad::Tape tape;
        Binding B(tape, store, false);
        CondVars cv = assemble_condition_t(B, tl, prompt, use_graph);
        const Mat& rows = cv.rows.val();
        ConditioningBundle cb;
        cb.text = rows.topRows(cfg_.T_max);
        cb.graph = rows.middleRows(cfg_.T_max, cfg_.enc.N_max);
        cb.dur = rows.bottomRows(1);
        cb.text_mask.assign(cv.mask.begin(), cv.mask.begin() + cfg_.T_max);
        cb.graph_mask.assign(cv.mask.begin() + cfg_.T_max,
                             cv.mask.end() - 1);
        cb.dur_mask = cv.mask.back();
        return cb;
    }

    // ---- velocity field -----------------------------------------------------

    // Latent frames attend to conditioning rows; the timestep enters through
    // scale/shift modulation of every pre-norm (DiT style), which lets the
    // field scale like the rectified-flow target does near t=0.
    Var velocity_t(Binding& B, Var x_t, double t, const CondVars& cond) const {
        ad::Tape& T = B.tape();
        if (x_t.rows() != cfg_.F_lat || x_t.cols() != cfg_.D)
            throw Error(ErrorKind::ShapeMismatch, "velocity input");
        Var h = nn::affine(B, x_t, in_proj_);
        h = T.add(h, T.constant(frame_pe_));
        Var temb = nn::affine(
            B, T.constant(nn::sinusoidal_features(t, cfg_.d_model())), t_emb_);
        temb = T.gelu(temb);
        h = T.add_rowvec(h, temb);
        for (const auto& blk : blocks_) {
            Var a = modulate(B, nn::layer_norm(B, h, blk.ln1), temb, blk.mod1);
            h = T.add(h, nn::mha(B, a, cond.rows, cond.mask, blk.attn,
                                 cfg_.enc.n_heads));
            Var m = modulate(B, nn::layer_norm(B, h, blk.ln2), temb, blk.mod2);
            h = T.add(h, nn::ffn(B, m, blk.mlp));
        }
        h = modulate(B, nn::layer_norm(B, h, final_ln_), temb, final_mod_);
        Var out = nn::affine(B, h, out_proj_);
        // t-gated linear skip from the input latent; the rectified-flow
        // target is linear in x_t with a t-dependent coefficient, and this
        // path lets the model carry that component exactly
        Var gate = nn::affine(B, temb, skip_gate_);
        return T.add(out, T.hadamard_rowvec(x_t, gate));
    }

    Mat velocity(const ParamStore& store, const Mat& x, double t,
                 const Mat& cond_rows, const std::vector<bool>& cond_mask) const {
        ad::Tape tape;
        Binding B(tape, store, false);
        CondVars cv{tape.constant(cond_rows), cond_mask};
        return velocity_t(B, tape.constant(x), t, cv).val();
    }

    // ---- flow matching loss -------------------------------------------------

    Var fm_loss_t(Binding& B, const Mat& x1, const CondVars& cond,
                  const FlowDraw& draw) const {
        auto [xt, u] = interpolate(x1, draw.x0, draw.t);
        Var v = velocity_t(B, B.tape().constant(std::move(xt)), draw.t, cond);
        return B.tape().mse(v, B.tape().constant(std::move(u)));
    }

    double fm_loss_value(const ParamStore& store, const Mat& x1,
                         const Mat& cond_rows,
                         const std::vector<bool>& cond_mask,
                         const FlowDraw& draw) const {
        ad::Tape tape;
        Binding B(tape, store, false);
        CondVars cv{tape.constant(cond_rows), cond_mask};
        return fm_loss_t(B, x1, cv, draw).scalar();
    }

    static constexpr int kBlocks = 2;  // cross-attention blocks

  private:
    struct Block {
        nn::LayerNormIds ln1, ln2;
        nn::MhaIds attn;
        nn::FfnIds mlp;
        nn::AffineIds mod1, mod2;
    };

    // Zero-initialized affine temb -> (scale, shift); modulation starts as
    // the identity and is learned.
    static nn::AffineIds make_modulation(ParamStore& store,
                                         const std::string& name, int d) {
        nn::AffineIds ids;
        ids.W = store.ensure_constant(name + ".W", 2 * d, d, 0.0);
        ids.b = store.ensure_constant(name + ".b", 1, 2 * d, 0.0);
        return ids;
    }

    Var modulate(Binding& B, Var h, Var temb, const nn::AffineIds& mod) const {
        ad::Tape& T = B.tape();
        const int d = cfg_.d_model();
        Var gb = nn::affine(B, temb, mod);
        Var gamma = T.add_const(T.slice_cols(gb, 0, d), 1.0);
        Var beta = T.slice_cols(gb, d, d);
        return T.add_rowvec(T.hadamard_rowvec(h, gamma), beta);
    }

    GenConfig cfg_;
    DegEncoder encoder_;
    nn::AffineIds in_proj_, t_emb_, out_proj_, text_proj_, dur_proj_;
    std::vector<Block> blocks_;
    nn::LayerNormIds final_ln_;
    nn::AffineIds final_mod_, skip_gate_;
    int type_offsets_ = -1;
    Mat frame_pe_, text_pe_;
};

struct LossGrad {
    double loss = 0.0;
    std::vector<Mat> grads;  // indexed like the parameter store
};

// Single-draw flow-matching loss with gradients for every parameter.
inline LossGrad fm_loss(const ParamStore& store, const Generator& gen,
                        const Mat& x1, const Timeline& tl,
                        const std::string& prompt, Rng& rng,
                        bool use_graph = true) {
    const GenConfig& cfg = gen.config();
    FlowDraw draw{rng.uniform(), rng.gaussian_matrix(cfg.F_lat, cfg.D)};
    ad::Tape tape;
    Binding B(tape, store, true);
    CondVars cond = gen.assemble_condition_t(B, tl, prompt, use_graph);
    Var loss = gen.fm_loss_t(B, x1, cond, draw);
    tape.backward(loss);
    LossGrad out;
    out.loss = loss.scalar();
    out.grads = make_grad_buffer(store);
    B.accumulate_grads(out.grads);
    return out;
}

// ---- sampling --------------------------------------------------------------

// Euler integration of dx/dt = v from t=1 (noise) down to t=0. Exact for a
// constant velocity field at any step count.
inline Mat euler_sample(const std::function<Mat(const Mat&, double)>& vel,
                        Mat x, int steps) {
    if (steps < 1) throw Error(ErrorKind::ConfigError, "steps must be >= 1");
    const double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        double t = 1.0 - k * dt;
        x -= dt * vel(x, t);
    }
    return x;
}

// Classifier-free guided sampling. gs==0 integrates the unconditional field
// only and never reads the conditioning; gs==1 is exactly the conditional
// field.
inline Mat sample(const ParamStore& store, const Generator& gen,
                  const Timeline& tl, const std::string& prompt, double gs,
                  int steps, Rng& rng, bool use_graph = true) {
    const GenConfig& cfg = gen.config();
    Mat x0 = rng.gaussian_matrix(cfg.F_lat, cfg.D);

    Mat null_rows = Mat::Zero(cfg.cond_rows(), cfg.d_model());
    std::vector<bool> null_mask(cfg.cond_rows(), false);

    if (gs == 0.0) {
        auto vel = [&](const Mat& x, double t) {
            return gen.velocity(store, x, t, null_rows, null_mask);
        };
        return euler_sample(vel, std::move(x0), steps);
    }

    ConditioningBundle cb = gen.condition_bundle(store, tl, prompt, use_graph);
    Mat cond_rows = cb.concat();
    std::vector<bool> cond_mask = cb.concat_mask();

    if (gs == 1.0) {
        auto vel = [&](const Mat& x, double t) {
            return gen.velocity(store, x, t, cond_rows, cond_mask);
        };
        return euler_sample(vel, std::move(x0), steps);
    }

    auto vel = [&](const Mat& x, double t) {
        Mat vc = gen.velocity(store, x, t, cond_rows, cond_mask);
        Mat vu = gen.velocity(store, x, t, null_rows, null_mask);
        return Mat(vu + gs * (vc - vu));
    };
    return euler_sample(vel, std::move(x0), steps);
}

// ---- training ----------------------------------------------------------------

struct TrainSample {
    Timeline tl;
    std::string prompt;
    Mat x1;  // F_lat × D target latent
};

struct TrainConfig {
    double lr = 1e-3;
    int epochs = 10;
    int batch_size = 16;
    double cond_dropout = 0.1;
    uint64_t seed = 0;
    int threads = 1;
    bool use_graph = true;
};

struct TrainResult {
    std::vector<double> epoch_loss;
};

namespace detail {

struct SampleDraw {
    FlowDraw draw;
    bool drop_cond = false;
};

}  // namespace detail

// Adam on the flow-matching loss with condition dropout. Per-sample
// gradients are reduced in fixed sample order, so results are bit-identical
// for any thread count.
inline TrainResult train(ParamStore& store, const Generator& gen,
                         const std::vector<TrainSample>& data,
                         const TrainConfig& tc) {
    if (data.empty())
        throw Error(ErrorKind::EmptyDataset, "training dataset is empty");

    const GenConfig& cfg = gen.config();
    Adam opt(store, AdamConfig{tc.lr});
    Rng rng = derive_rng(tc.seed, "train");

    std::vector<int> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TrainResult result;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[rng.uniform_int(i + 1)]);

        double epoch_loss = 0.0;
        size_t pos = 0;
        while (pos < order.size()) {
            const size_t bsz =
                std::min<size_t>(tc.batch_size, order.size() - pos);

            std::vector<detail::SampleDraw> draws(bsz);
            for (size_t k = 0; k < bsz; ++k) {
                draws[k].draw.t = rng.uniform();
                draws[k].draw.x0 = rng.gaussian_matrix(cfg.F_lat, cfg.D);
                draws[k].drop_cond = rng.uniform() < tc.cond_dropout;
            }

            std::vector<double> losses(bsz, 0.0);
            std::vector<std::vector<Mat>> grads(bsz);
            auto run_one = [&](size_t k) {
                const TrainSample& s = data[order[pos + k]];
                ad::Tape tape;
                Binding B(tape, store, true);
                CondVars cond =
                    draws[k].drop_cond
                        ? gen.null_condition_t(B)
                        : gen.assemble_condition_t(B, s.tl, s.prompt,
                                                   tc.use_graph);
                Var loss = gen.fm_loss_t(B, s.x1, cond, draws[k].draw);
                tape.backward(loss);
                losses[k] = loss.scalar();
                grads[k] = make_grad_buffer(store);
                B.accumulate_grads(grads[k]);
            };

            if (tc.threads > 1 && bsz > 1) {
                std::vector<std::thread> pool;
                std::atomic<size_t> next{0};
                const int nthreads =
                    std::min<int>(tc.threads, static_cast<int>(bsz));
                for (int w = 0; w < nthreads; ++w)
                    pool.emplace_back([&]() {
                        for (size_t k = next.fetch_add(1); k < bsz;
                             k = next.fetch_add(1))
                            run_one(k);
                    });
                for (auto& th : pool) th.join();
            } else {
                for (size_t k = 0; k < bsz; ++k) run_one(k);
            }

            std::vector<Mat> batch_grads = make_grad_buffer(store);
            const double inv = 1.0 / static_cast<double>(bsz);
            for (size_t k = 0; k < bsz; ++k) {
                if (!std::isfinite(losses[k]))
                    throw Error(ErrorKind::NonFiniteLoss,
                                "epoch " + std::to_string(epoch) + " sample " +
                                    std::to_string(order[pos + k]));
                epoch_loss += losses[k];
                for (size_t p = 0; p < batch_grads.size(); ++p) {
                    if (grads[k][p].size() == 0) continue;
                    if (batch_grads[p].size() == 0)
                        batch_grads[p] = grads[k][p] * inv;
                    else
                        batch_grads[p] += grads[k][p] * inv;
                }
            }
            opt.step(store, batch_grads);
            pos += bsz;
        }
        result.epoch_loss.push_back(epoch_loss /
                                    static_cast<double>(order.size()));
    }
    return result;
}

}  // namespace degdit
