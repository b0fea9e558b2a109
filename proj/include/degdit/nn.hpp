#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "degdit/autodiff.hpp"
#include "degdit/params.hpp"

namespace degdit::nn {

using ad::Mat;
using ad::Var;

struct AffineIds {
    int W = -1;
    int b = -1;
};

inline AffineIds make_affine(ParamStore& store, const std::string& name,
                             int in_dim, int out_dim) {
    AffineIds ids;
    ids.W = store.ensure_uniform(name + ".W", out_dim, in_dim, in_dim);
    ids.b = store.ensure_uniform(name + ".b", 1, out_dim, in_dim);
    return ids;
}

inline Var affine(Binding& B, Var x, const AffineIds& ids) {
    return B.tape().affine(x, B(ids.W), B(ids.b));
}

struct LayerNormIds {
    int gamma = -1;
    int beta = -1;
};

inline LayerNormIds make_layer_norm(ParamStore& store, const std::string& name,
                                    int dim) {
    LayerNormIds ids;
    ids.gamma = store.ensure_constant(name + ".gamma", 1, dim, 1.0);
    ids.beta = store.ensure_constant(name + ".beta", 1, dim, 0.0);
    return ids;
}

inline Var layer_norm(Binding& B, Var x, const LayerNormIds& ids) {
    return B.tape().layer_norm(x, B(ids.gamma), B(ids.beta));
}

struct MhaIds {
    AffineIds q, k, v, o;
};

inline MhaIds make_mha(ParamStore& store, const std::string& name, int d_model) {
    MhaIds ids;
    ids.q = make_affine(store, name + ".q", d_model, d_model);
    ids.k = make_affine(store, name + ".k", d_model, d_model);
    ids.v = make_affine(store, name + ".v", d_model, d_model);
    ids.o = make_affine(store, name + ".o", d_model, d_model);
    return ids;
}

// Multi-head attention from q_src rows to kv_src rows. key_valid masks keys;
// a row with no valid key yields an exactly-zero output row. attn_probe, when
// given, receives one probability matrix per head.
inline Var mha(Binding& B, Var q_src, Var kv_src,
               const std::vector<bool>& key_valid, const MhaIds& ids,
               int n_heads, std::vector<Mat>* attn_probe = nullptr) {
    ad::Tape& T = B.tape();
    const int d_model = q_src.cols();
    const int dh = d_model / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Var Q = affine(B, q_src, ids.q);
    Var K = affine(B, kv_src, ids.k);
    Var V = affine(B, kv_src, ids.v);

    Var merged;
    for (int h = 0; h < n_heads; ++h) {
        Var Qh = T.slice_cols(Q, h * dh, dh);
        Var Kh = T.slice_cols(K, h * dh, dh);
        Var Vh = T.slice_cols(V, h * dh, dh);
        Var S = T.scale(T.matmul_nt(Qh, Kh), scale);
        Var P = T.softmax_masked(S, key_valid);
        if (attn_probe) attn_probe->push_back(P.val());
        Var Oh = T.matmul(P, Vh);
        merged = h == 0 ? Oh : T.concat_cols(merged, Oh);
    }
    return affine(B, merged, ids.o);
}

struct FfnIds {
    AffineIds in, out;
};

inline FfnIds make_ffn(ParamStore& store, const std::string& name, int d_model,
                       int hidden) {
    FfnIds ids;
    ids.in = make_affine(store, name + ".in", d_model, hidden);
    ids.out = make_affine(store, name + ".out", hidden, d_model);
    return ids;
}

inline Var ffn(Binding& B, Var x, const FfnIds& ids) {
    return affine(B, B.tape().gelu(affine(B, x, ids.in)), ids.out);
}

struct EncoderLayerIds {
    LayerNormIds ln1, ln2;
    MhaIds attn;
    FfnIds mlp;
};

inline EncoderLayerIds make_encoder_layer(ParamStore& store,
                                          const std::string& name, int d_model,
                                          int ffn_hidden) {
    EncoderLayerIds ids;
    ids.ln1 = make_layer_norm(store, name + ".ln1", d_model);
    ids.ln2 = make_layer_norm(store, name + ".ln2", d_model);
    ids.attn = make_mha(store, name + ".attn", d_model);
    ids.mlp = make_ffn(store, name + ".ffn", d_model, ffn_hidden);
    return ids;
}

// Pre-norm self-attention layer with padding mask.
inline Var self_attention_layer(Binding& B, Var x,
                                const std::vector<bool>& mask,
                                const EncoderLayerIds& ids, int n_heads,
                                std::vector<Mat>* attn_probe = nullptr) {
    ad::Tape& T = B.tape();
    Var normed = layer_norm(B, x, ids.ln1);
    x = T.add(x, mha(B, normed, normed, mask, ids.attn, n_heads, attn_probe));
    x = T.add(x, ffn(B, layer_norm(B, x, ids.ln2), ids.mlp));
    return x;
}

// Pre-norm cross-attention block: latent rows attend to conditioning rows.
inline Var cross_attention_block(Binding& B, Var x, Var cond,
                                 const std::vector<bool>& cond_mask,
                                 const EncoderLayerIds& ids, int n_heads,
                                 std::vector<Mat>* attn_probe = nullptr) {
    ad::Tape& T = B.tape();
    x = T.add(x, mha(B, layer_norm(B, x, ids.ln1), cond, cond_mask, ids.attn,
                     n_heads, attn_probe));
    x = T.add(x, ffn(B, layer_norm(B, x, ids.ln2), ids.mlp));
    return x;
}

// Standard sin/cos features of a scalar; frequencies span 1..1e4.
inline Mat sinusoidal_features(double t, int dim) {
    Mat f(1, dim);
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * k / std::max(1, half));
        f(0, 2 * k) = std::sin(t * freq);
        f(0, 2 * k + 1) = std::cos(t * freq);
    }
    if (dim % 2 == 1) f(0, dim - 1) = std::sin(t);
    return f;
}

// Fixed table of position encodings, one row per position.
inline Mat sinusoidal_position_table(int n, int dim) {
    Mat table(n, dim);
    for (int p = 0; p < n; ++p)
        table.row(p) = sinusoidal_features(static_cast<double>(p), dim).row(0);
    return table;
}

}  // namespace degdit::nn
