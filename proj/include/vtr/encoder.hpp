#pragma once

// Vision and text encoder stacks. Shallow layers run per-frame (or
// per-caption) attention; the top H layers run the configured fusion scheme.

#include <string>
#include <vector>

#include "vtr/config.hpp"
#include "vtr/layers.hpp"
#include "vtr/tensor.hpp"

namespace vtr {

struct VideoFeatures {
    Tensor per_frame;  // [F, d_embed], unit-norm rows
    Tensor pooled;     // [1, d_embed], unit-norm
};

class VisionEncoder {
public:
    VisionEncoder() = default;

    VisionEncoder(const ModelConfig& cfg, const ParamRng& rng) {
        const std::size_t shallow = cfg.layers_vision - cfg.h_vision;
        for (std::size_t i = 0; i < cfg.layers_vision; ++i) {
            AttnScheme scheme = i < shallow ? AttnScheme::ImageLevel : cfg.fusion_scheme;
            layers_.push_back(make_layer(rng, "vision.layer" + std::to_string(i), cfg.d_vision,
                                         cfg.heads_vision, cfg.rank, scheme));
        }
        ln_final_ = {Tensor::full({1, cfg.d_vision}, 1.0), Tensor::zeros({1, cfg.d_vision})};
        proj_ = rng.normal("vision.proj", {cfg.d_vision, cfg.d_embed},
                           1.0 / std::sqrt(static_cast<double>(cfg.d_vision)));
    }

    // frames: F grids of [N+1, d_vision], global token at row 0.
    VideoFeatures encode(const std::vector<Tensor>& frames, CostCounter* cost = nullptr) const {
        TokenSet x{frames, std::vector<std::size_t>(frames.size(), 0)};
        for (const auto& layer : layers_) x = layer_forward(layer, x, false, cost);
        std::vector<Tensor> projected;
        projected.reserve(frames.size());
        for (const auto& seq : x.seqs) {
            Tensor cls = ln_final_.forward(slice_rows(seq, 0, 1));
            projected.push_back(matmul(cls, proj_));
        }
        Tensor raw = concat_rows(projected);
        VideoFeatures out;
        out.per_frame = l2_normalize_rows(raw);
        out.pooled = l2_normalize_rows(mean_rows(raw));
        return out;
    }

    const std::vector<TransformerLayer>& layers() const { return layers_; }
    std::vector<TransformerLayer>& mutable_layers() { return layers_; }

    void collect(NamedParams& out) const {
        for (std::size_t i = 0; i < layers_.size(); ++i)
            layers_[i].collect("vision.layer" + std::to_string(i), out);
    }

private:
    std::vector<TransformerLayer> layers_;
    LayerNormParams ln_final_;
    Tensor proj_;  // [d_vision, d_embed], frozen
};

class TextEncoder {
public:
    TextEncoder() = default;

    TextEncoder(const ModelConfig& cfg, const ParamRng& rng) : max_len_(cfg.max_caption_len) {
        const std::size_t shallow = cfg.layers_text - cfg.effective_h_text();
        for (std::size_t i = 0; i < cfg.layers_text; ++i) {
            AttnScheme scheme = i < shallow ? AttnScheme::ImageLevel : cfg.fusion_scheme;
            layers_.push_back(make_layer(rng, "text.layer" + std::to_string(i), cfg.d_text,
                                         cfg.heads_text, cfg.rank, scheme));
        }
        ln_final_ = {Tensor::full({1, cfg.d_text}, 1.0), Tensor::zeros({1, cfg.d_text})};
        proj_ = rng.normal("text.proj", {cfg.d_text, cfg.d_embed},
                           1.0 / std::sqrt(static_cast<double>(cfg.d_text)));
        token_emb_ = rng.normal("text.token_emb", {cfg.vocab_size, cfg.d_text}, 0.5);
        pos_emb_ = rng.normal("text.pos_emb", {cfg.max_caption_len, cfg.d_text}, 0.1);
    }

    Tensor embed(const std::vector<std::uint32_t>& ids, bool* truncated = nullptr) const {
        std::vector<std::uint32_t> use = ids;
        if (use.size() > max_len_) {
            use.resize(max_len_);
            if (truncated) *truncated = true;
        }
        if (use.empty()) throw TensorError("embed: empty caption");
        std::vector<Tensor> rows;
        rows.reserve(use.size());
        for (std::size_t i = 0; i < use.size(); ++i) {
            std::uint32_t id = use[i] % static_cast<std::uint32_t>(token_emb_.rows());
            rows.push_back(add(slice_rows(token_emb_, id, 1), slice_rows(pos_emb_, i, 1)));
        }
        return concat_rows(rows);
    }

    // Encodes a group of captions jointly: causal per-caption attention in the
    // shallow layers, fusion layers letting last-token summaries attend across
    // the whole group. A single caption is the degenerate one-sequence case.
    Tensor encode_group(const std::vector<std::vector<std::uint32_t>>& captions,
                        CostCounter* cost = nullptr, bool* truncated = nullptr) const {
        TokenSet x;
        for (const auto& cap : captions) {
            Tensor seq = embed(cap, truncated);
            x.summary.push_back(seq.rows() - 1);
            x.seqs.push_back(std::move(seq));
        }
        for (const auto& layer : layers_) x = layer_forward(layer, x, true, cost);
        std::vector<Tensor> projected;
        projected.reserve(x.seqs.size());
        for (std::size_t i = 0; i < x.seqs.size(); ++i) {
            Tensor summary = ln_final_.forward(slice_rows(x.seqs[i], x.summary[i], 1));
            projected.push_back(matmul(summary, proj_));
        }
        return l2_normalize_rows(concat_rows(projected));
    }

    // Single video caption -> [1, d_embed].
    Tensor encode_caption(const std::vector<std::uint32_t>& caption,
                          CostCounter* cost = nullptr, bool* truncated = nullptr) const {
        return encode_group({caption}, cost, truncated);
    }

    const std::vector<TransformerLayer>& layers() const { return layers_; }
    std::vector<TransformerLayer>& mutable_layers() { return layers_; }

    void collect(NamedParams& out) const {
        for (std::size_t i = 0; i < layers_.size(); ++i)
            layers_[i].collect("text.layer" + std::to_string(i), out);
    }

private:
    std::vector<TransformerLayer> layers_;
    LayerNormParams ln_final_;
    Tensor proj_;
    Tensor token_emb_;
    Tensor pos_emb_;
    std::size_t max_len_ = 0;
};

// ---------------------------------------------------------------------------
// trainable-parameter accounting

struct ComponentFlags {
    bool lora = true;
    bool vision_adapters = false;
    bool text_adapters = false;
};

// Exact trainable scalar count for a configuration; frozen backbone excluded.
inline std::size_t count_trainable_params(const ModelConfig& cfg, const ComponentFlags& flags) {
    std::size_t n = 0;
    if (flags.lora) {
        // Query and value projections in every layer of both encoders; each
        // LoRA pair holds r*d_in + d_out*r scalars.
        n += cfg.layers_vision * 2 * (cfg.rank * cfg.d_vision + cfg.d_vision * cfg.rank);
        n += cfg.layers_text * 2 * (cfg.rank * cfg.d_text + cfg.d_text * cfg.rank);
    }
    if (flags.vision_adapters) n += cfg.h_vision * 2 * cfg.d_vision * cfg.rank;
    if (flags.text_adapters) n += cfg.h_text * 2 * cfg.d_text * cfg.rank;
    return n;
}

}  // namespace vtr
