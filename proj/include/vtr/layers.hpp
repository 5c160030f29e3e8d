#pragma once

// Transformer blocks with LoRA-injected projections and the three
// parameter-efficient attention schemes: per-frame (image-level), joint
// (video-level), and the fused two-branch scheme with a bottleneck adapter.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vtr/config.hpp"
#include "vtr/tensor.hpp"

namespace vtr {

// Counts query-key score evaluations (one per query-key pair per attention
// call, independent of head count).
struct CostCounter {
    std::uint64_t score_pairs = 0;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct LinearParams {
    Tensor w;  // [d_out, d_in], frozen
    Tensor b;  // [1, d_out], frozen

    Tensor forward(const Tensor& x) const {
        Tensor y = matmul(x, transpose(w));
        return add(y, broadcast_row(b, y.rows()));
    }
};

// Frozen base projection plus a trainable low-rank delta. With the up factor
// at zero the forward path is exactly the base projection.
struct LoraLinear {
    Tensor w;     // [d_out, d_in], frozen
    Tensor b;     // [1, d_out], frozen
    Tensor down;  // [r, d_in], trainable
    Tensor up;    // [d_out, r], trainable, zero-initialized
    double scaling = 1.0;
    bool enabled = true;  // structurally skip the delta (backbone-only forward)

    Tensor forward(const Tensor& x) const {
        Tensor y = matmul(x, transpose(w));
        if (enabled) {
            Tensor delta = matmul(matmul(x, transpose(down)), transpose(up));
            y = add(y, scale(delta, scaling));
        }
        return add(y, broadcast_row(b, y.rows()));
    }

    std::size_t trainable_count() const { return down.size() + up.size(); }

    void collect(const std::string& prefix, NamedParams& out) const {
        out.emplace_back(prefix + ".lora_down", down);
        out.emplace_back(prefix + ".lora_up", up);
    }
};

// Bottleneck map gelu(x * W_down) * W_up; maps zero to zero and starts as the
// zero map (up factor zero-initialized).
struct FusionAdapter {
    Tensor down;  // [D, r], trainable
    Tensor up;    // [r, D], trainable
    bool enabled = true;

    Tensor forward(const Tensor& x) const { return matmul(gelu(matmul(x, down)), up); }

    std::size_t trainable_count() const { return down.size() + up.size(); }

    void collect(const std::string& prefix, NamedParams& out) const {
        out.emplace_back(prefix + ".adapter_down", down);
        out.emplace_back(prefix + ".adapter_up", up);
    }
};

struct LayerNormParams {
    Tensor gamma;  // [1, d], frozen
    Tensor beta;   // [1, d], frozen

    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// One pre-norm block: x += attn(ln1(x)); x += mlp(ln2(x)).
struct TransformerLayer {
    std::size_t heads = 1;
    AttnScheme scheme = AttnScheme::ImageLevel;
    LoraLinear q_proj;
    LinearParams k_proj;
    LoraLinear v_proj;
    LinearParams o_proj;
    LayerNormParams ln1, ln2;
    LinearParams fc1, fc2;
    std::optional<FusionAdapter> adapter;

    void collect(const std::string& prefix, NamedParams& out) const {
        q_proj.collect(prefix + ".q", out);
        v_proj.collect(prefix + ".v", out);
        if (adapter) adapter->collect(prefix, out);
    }

    void set_deltas_enabled(bool on) {
        q_proj.enabled = on;
        v_proj.enabled = on;
        if (adapter) adapter->enabled = on;
    }
};

// Token sequences entering one layer. For vision each sequence is one frame's
// [N+1, D] grid with the global token at row 0; for text each sequence is one
// caption with the summary at the last row.
struct TokenSet {
    std::vector<Tensor> seqs;
    std::vector<std::size_t> summary;  // summary row index per sequence
};

namespace detail {

inline Tensor causal_mask(std::size_t n) {
    std::vector<Scalar> m(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -1e30;
    return Tensor({n, n}, std::move(m));
}

}  // namespace detail

// Scaled dot-product multi-head attention, queries from q_in, keys/values
// from kv_in (shared projections). Causal masking requires q_in == kv_in.
inline Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in,
                                   const TransformerLayer& layer, bool causal,
                                   CostCounter* cost = nullptr) {
    const std::size_t d = q_in.cols();
    const std::size_t dh = d / layer.heads;
    Tensor q = layer.q_proj.forward(q_in);
    Tensor k = layer.k_proj.forward(kv_in);
    Tensor v = layer.v_proj.forward(kv_in);
    const std::size_t m = q.rows(), s = k.rows();
    if (cost) cost->score_pairs += static_cast<std::uint64_t>(m) * s;
    Tensor mask;
    if (causal) {
        if (m != s) throw TensorError("causal attention requires square score matrix");
        mask = detail::causal_mask(m);
    }
    const Scalar inv_sqrt_dh = 1.0 / std::sqrt(static_cast<Scalar>(dh));
    std::vector<Tensor> head_outs;
    head_outs.reserve(layer.heads);
    for (std::size_t h = 0; h < layer.heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
        if (causal) scores = add(scores, mask);
        head_outs.push_back(matmul(softmax_rows(scores, 1.0), vh));
    }
    return layer.o_proj.forward(concat_cols(head_outs));
}

// Attention stage of one layer (post-norm input, pre-residual output), per
// sequence. This is the part the scheme choice changes.
inline std::vector<Tensor> attention_stage(const TransformerLayer& layer, const TokenSet& pre,
                                           bool causal, CostCounter* cost = nullptr) {
    const std::size_t f = pre.seqs.size();
    std::vector<Tensor> out(f);
    switch (layer.scheme) {
        case AttnScheme::ImageLevel: {
            for (std::size_t i = 0; i < f; ++i)
                out[i] = multi_head_attention(pre.seqs[i], pre.seqs[i], layer, causal, cost);
            break;
        }
        case AttnScheme::VideoLevel: {
            Tensor joint = concat_rows(pre.seqs);
            Tensor y = multi_head_attention(joint, joint, layer, causal && f == 1, cost);
            std::size_t off = 0;
            for (std::size_t i = 0; i < f; ++i) {
                out[i] = slice_rows(y, off, pre.seqs[i].rows());
                off += pre.seqs[i].rows();
            }
            break;
        }
        case AttnScheme::IVFusion:
        case AttnScheme::IVFusionNoAdapter: {
            // Branch 1: per-sequence attention.
            std::vector<Tensor> branch1(f);
            for (std::size_t i = 0; i < f; ++i)
                branch1[i] = multi_head_attention(pre.seqs[i], pre.seqs[i], layer, causal, cost);
            // Branch 2: every sequence's summary token attends across all
            // sequences' tokens, non-causal, same projections.
            std::vector<Tensor> queries;
            queries.reserve(f);
            for (std::size_t i = 0; i < f; ++i)
                queries.push_back(slice_rows(pre.seqs[i], pre.summary[i], 1));
            Tensor c2 = multi_head_attention(concat_rows(queries), concat_rows(pre.seqs), layer,
                                             false, cost);
            for (std::size_t i = 0; i < f; ++i) {
                Tensor c1 = slice_rows(branch1[i], pre.summary[i], 1);
                Tensor c2i = slice_rows(c2, i, 1);
                Tensor fused;
                if (layer.scheme == AttnScheme::IVFusion)
                    fused = layer.adapter->enabled ? add(c2i, layer.adapter->forward(c1)) : c2i;
                else
                    fused = scale(add(c1, c2i), 0.5);
                out[i] = replace_row(branch1[i], pre.summary[i], fused);
            }
            break;
        }
    }
    return out;
}

// Full block forward over a token set.
inline TokenSet layer_forward(const TransformerLayer& layer, const TokenSet& x, bool causal,
                              CostCounter* cost = nullptr) {
    TokenSet pre{{}, x.summary};
    pre.seqs.reserve(x.seqs.size());
    for (const auto& s : x.seqs) pre.seqs.push_back(layer.ln1.forward(s));
    std::vector<Tensor> attn = attention_stage(layer, pre, causal, cost);
    TokenSet out{{}, x.summary};
    out.seqs.reserve(x.seqs.size());
    for (std::size_t i = 0; i < x.seqs.size(); ++i) {
        Tensor h = add(x.seqs[i], attn[i]);
        Tensor m = layer.fc2.forward(gelu(layer.fc1.forward(layer.ln2.forward(h))));
        out.seqs.push_back(add(h, m));
    }
    return out;
}

// Exact query-key score evaluations per layer for each scheme.
inline std::uint64_t attention_cost(AttnScheme scheme, std::uint64_t f, std::uint64_t n) {
    const std::uint64_t t = n + 1;  // tokens per frame
    switch (scheme) {
        case AttnScheme::ImageLevel: return f * t * t;
        case AttnScheme::VideoLevel: return (f * t) * (f * t);
        case AttnScheme::IVFusion:
        case AttnScheme::IVFusionNoAdapter: return f * t * t + f * (f * t);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// construction

inline LinearParams make_linear(const ParamRng& rng, const std::string& name, std::size_t d_out,
                                std::size_t d_in) {
    LinearParams p;
    p.w = rng.normal(name + ".w", {d_out, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)));
    p.b = rng.normal(name + ".b", {1, d_out}, 0.01);
    return p;
}

inline LoraLinear make_lora_linear(const ParamRng& rng, const std::string& name, std::size_t d_out,
                                   std::size_t d_in, std::size_t rank) {
    LoraLinear p;
    p.w = rng.normal(name + ".w", {d_out, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)));
    p.b = rng.normal(name + ".b", {1, d_out}, 0.01);
    p.down = rng.normal(name + ".lora_down", {rank, d_in},
                        1.0 / std::sqrt(static_cast<double>(d_in)), true);
    p.up = Tensor::zeros({d_out, rank}, true);
    p.scaling = 1.0;
    return p;
}

inline FusionAdapter make_adapter(const ParamRng& rng, const std::string& name, std::size_t d,
                                  std::size_t rank) {
    FusionAdapter a;
    a.down = rng.normal(name + ".adapter_down", {d, rank},
                        1.0 / std::sqrt(static_cast<double>(d)), true);
    a.up = Tensor::zeros({rank, d}, true);
    return a;
}

inline TransformerLayer make_layer(const ParamRng& rng, const std::string& name, std::size_t d,
                                   std::size_t heads, std::size_t rank, AttnScheme scheme) {
    TransformerLayer l;
    l.heads = heads;
    l.scheme = scheme;
    l.q_proj = make_lora_linear(rng, name + ".q", d, d, rank);
    l.k_proj = make_linear(rng, name + ".k", d, d);
    l.v_proj = make_lora_linear(rng, name + ".v", d, d, rank);
    l.o_proj = make_linear(rng, name + ".o", d, d);
    l.ln1 = {Tensor::full({1, d}, 1.0), Tensor::zeros({1, d})};
    l.ln2 = {Tensor::full({1, d}, 1.0), Tensor::zeros({1, d})};
    l.fc1 = make_linear(rng, name + ".fc1", 4 * d, d);
    l.fc2 = make_linear(rng, name + ".fc2", d, 4 * d);
    if (scheme == AttnScheme::IVFusion) l.adapter = make_adapter(rng, name, d, rank);
    return l;
}

}  // namespace vtr
