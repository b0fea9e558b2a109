#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "degdit/autodiff.hpp"
#include "degdit/errors.hpp"
#include "degdit/nn.hpp"
#include "degdit/params.hpp"
#include "degdit/rng.hpp"
#include "degdit/timeline.hpp"

namespace degdit {

using ad::Mat;
using ad::Var;

struct EncoderConfig {
    int d_model = 64;
    int L = 4;
    int n_heads = 4;
    int N_max = 16;
    int F = 16;
    uint64_t seed = 0;
};

struct TypeEmbedding {
    Eigen::RowVectorXd vector;  // unit norm
};

struct GraphEmbeddings {
    Mat H;                   // N_max × d_model, masked rows exactly zero
    std::vector<bool> mask;  // true = real event
};

struct EncodeTrace {
    // one row-stochastic matrix per (layer, head), in layer-major order
    std::vector<Mat> attention;
};

// Dynamic event graph encoder: seeded-hash type embeddings, sinusoidal time
// MLP, relation aggregation, intensity-weighted frame encoding, fusion, and a
// pre-norm transformer over the event sequence with padding mask.
class DegEncoder {
  public:
    DegEncoder(const EncoderConfig& cfg, ParamStore& store) : cfg_(cfg) {
        const int d = cfg.d_model;
        if (d % cfg.n_heads != 0)
            throw Error(ErrorKind::ConfigError,
                        "d_model must be divisible by n_heads");
        if (cfg.L < 1) throw Error(ErrorKind::ConfigError, "L must be >= 1");
        type_proj_ = nn::make_affine(store, "enc.type_proj", d, d);
        time_in_ = nn::make_affine(store, "enc.time_in", 2, d);
        time_out_ = nn::make_affine(store, "enc.time_out", d, d);
        rel_enc_ = nn::make_affine(store, "enc.rel", kRelationChannels, d);
        frame_enc_ = nn::make_affine(store, "enc.frame", cfg.F, d);
        fusion_ = nn::make_affine(store, "enc.fusion", 2 * d, d);
        pos_emb_ = store.ensure_uniform("enc.pos", cfg.N_max, d, d);
        for (int l = 0; l < cfg.L; ++l)
            layers_.push_back(nn::make_encoder_layer(
                store, "enc.layer" + std::to_string(l), d, 4 * d));
        final_ln_ = nn::make_layer_norm(store, "enc.final_ln", d);
    }

    const EncoderConfig& config() const { return cfg_; }

    // Mean-pooled fixed-table embedding of a label's tokens (pre-projection).
    Mat pooled_token_embedding(std::string_view label) const {
        auto tokens = tokenize(label);
        if (tokens.empty())
            throw Error(ErrorKind::EmptyLabel,
                        "label has no tokens: '" + std::string(label) + "'");
        Mat pooled = Mat::Zero(1, cfg_.d_model);
        for (const auto& tok : tokens)
            pooled += token_embedding(tok, cfg_.seed, cfg_.d_model);
        return pooled / static_cast<double>(tokens.size());
    }

    // ---- tape-level pieces (differentiable) --------------------------------

    Var type_rows_t(Binding& B, const std::vector<std::string>& labels) const {
        Mat pooled(static_cast<int>(labels.size()), cfg_.d_model);
        for (size_t i = 0; i < labels.size(); ++i)
            pooled.row(static_cast<int>(i)) =
                pooled_token_embedding(labels[i]).row(0);
        Var raw = B.tape().constant(std::move(pooled));
        return B.tape().l2_normalize_rows(nn::affine(B, raw, type_proj_));
    }

    // times: N×2 of raw (onset, offset) seconds
    Var time_rows_t(Binding& B, Var times, double clip_duration) const {
        Var scaled = B.tape().scale(times, 1.0 / clip_duration);
        Var hidden = B.tape().sin(nn::affine(B, scaled, time_in_));
        return nn::affine(B, hidden, time_out_);
    }

    // rel_flat: N²×5 with row index i*n + j; r_i averages the encoded slices
    // over real neighbors j != i, and is zero for a single-event timeline
    Var relation_rows_t(Binding& B, Var rel_flat, int n) const {
        ad::Tape& T = B.tape();
        if (n == 1) return T.constant(Mat::Zero(1, cfg_.d_model));
        Var encoded = nn::affine(B, rel_flat, rel_enc_);
        Var out;
        for (int i = 0; i < n; ++i) {
            std::vector<int> neighbors;
            neighbors.reserve(n - 1);
            for (int j = 0; j < n; ++j)
                if (j != i) neighbors.push_back(i * n + j);
            Var ri = T.mean_rows(T.select_rows(encoded, std::move(neighbors)));
            out = i == 0 ? ri : T.concat_rows(out, ri);
        }
        return out;
    }

    // frames: N×F coverage rows; f_i = alpha_i * FrameEncoder(F[i,:])
    Var frame_rows_t(Binding& B, Var frames,
                     const std::vector<double>& alphas) const {
        if (frames.cols() != cfg_.F)
            throw Error(ErrorKind::FrameCountMismatch,
                        "expected " + std::to_string(cfg_.F) + " frames, got " +
                            std::to_string(frames.cols()));
        Eigen::VectorXd a(alphas.size());
        for (size_t i = 0; i < alphas.size(); ++i) a[i] = alphas[i];
        return B.tape().row_scale(nn::affine(B, frames, frame_enc_), a);
    }

    // Full encoding path on the tape. times N×2, frames N×F, rel_flat N²×5.
    Var encode_graph_t(Binding& B, const Timeline& tl, Var times, Var frames,
                       Var rel_flat, EncodeTrace* trace = nullptr) const {
        ad::Tape& T = B.tape();
        const int n = tl.size();
        if (n > cfg_.N_max)
            throw Error(ErrorKind::ShapeMismatch, "timeline exceeds N_max");

        std::vector<std::string> labels;
        std::vector<double> alphas;
        for (const auto& e : tl.events) {
            labels.push_back(e.category);
            alphas.push_back(e.intensity);
        }

        Var g0 = T.add(type_rows_t(B, labels),
                       time_rows_t(B, times, tl.clip_duration));
        Var rf = T.add(relation_rows_t(B, rel_flat, n),
                       frame_rows_t(B, frames, alphas));
        Var g1 = nn::affine(B, T.concat_cols(g0, rf), fusion_);

        if (n < cfg_.N_max)
            g1 = T.concat_rows(
                g1, T.constant(Mat::Zero(cfg_.N_max - n, cfg_.d_model)));

        std::vector<bool> mask(cfg_.N_max, false);
        for (int i = 0; i < n; ++i) mask[i] = true;

        Var h = T.add(g1, B(pos_emb_));
        h = transformer_rows_t(B, h, mask, trace);
        return T.zero_rows(h, mask);
    }

    // Transformer stack alone (exposed so mask-soundness can be probed with
    // arbitrary padding content).
    Var transformer_rows_t(Binding& B, Var rows, const std::vector<bool>& mask,
                           EncodeTrace* trace = nullptr) const {
        Var h = rows;
        for (const auto& layer : layers_)
            h = nn::self_attention_layer(B, h, mask, layer, cfg_.n_heads,
                                         trace ? &trace->attention : nullptr);
        return nn::layer_norm(B, h, final_ln_);
    }

    // ---- value-level operations --------------------------------------------

    TypeEmbedding embed_type(const ParamStore& store,
                             std::string_view label) const {
        ad::Tape tape;
        Binding B(tape, store, false);
        Var v = type_rows_t(B, {std::string(label)});
        return TypeEmbedding{v.val().row(0)};
    }

    Eigen::RowVectorXd embed_time(const ParamStore& store, double onset,
                                  double offset, double clip_duration) const {
        if (!(onset < offset))
            throw Error(ErrorKind::InvalidTimeline, "onset >= offset");
        ad::Tape tape;
        Binding B(tape, store, false);
        Mat t(1, 2);
        t << onset, offset;
        return time_rows_t(B, tape.constant(t), clip_duration).val().row(0);
    }

    GraphEmbeddings encode_graph(const ParamStore& store, const Timeline& tl,
                                 const FrameActivationMatrix& fam,
                                 const RelationTensor& rt,
                                 EncodeTrace* trace = nullptr) const {
        ad::Tape tape;
        Binding B(tape, store, false);
        Var h = encode_graph_t(B, tl, tape.constant(times_matrix(tl)),
                               tape.constant(fam.values),
                               tape.constant(rt.flat()), trace);
        GraphEmbeddings out;
        out.H = h.val();
        out.mask.assign(cfg_.N_max, false);
        for (int i = 0; i < tl.size(); ++i) out.mask[i] = true;
        return out;
    }

    static Mat times_matrix(const Timeline& tl) {
        Mat t(tl.size(), 2);
        for (int i = 0; i < tl.size(); ++i) {
            t(i, 0) = tl.events[i].onset;
            t(i, 1) = tl.events[i].offset;
        }
        return t;
    }

  private:
    EncoderConfig cfg_;
    nn::AffineIds type_proj_, time_in_, time_out_, rel_enc_, frame_enc_,
        fusion_;
    int pos_emb_ = -1;
    std::vector<nn::EncoderLayerIds> layers_;
    nn::LayerNormIds final_ln_;
};

}  // namespace degdit
