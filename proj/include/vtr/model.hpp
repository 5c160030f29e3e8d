#pragma once

// The full retrieval model: vision encoder, text encoder, and a trainable
// log-scale temperature, with batch forward producing the loss breakdown.

#include <cmath>
#include <string>
#include <vector>

#include "vtr/alignment.hpp"
#include "vtr/config.hpp"
#include "vtr/data.hpp"
#include "vtr/encoder.hpp"
#include "vtr/tensor.hpp"

namespace vtr {

class Model {
public:
    Model() = default;

    Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        ParamRng rng(seed);
        vision_ = VisionEncoder(cfg_, rng);
        text_ = TextEncoder(cfg_, rng);
        log_scale_ = Tensor::scalar(std::log(1.0 / cfg_.tau_init), true);
    }

    const ModelConfig& config() const { return cfg_; }
    const VisionEncoder& vision() const { return vision_; }
    const TextEncoder& text() const { return text_; }
    Tensor log_scale_param() const { return log_scale_; }

    // Backbone-only forward: structurally skip every trainable delta.
    void set_trainable_deltas_enabled(bool on) {
        for (auto& l : vision_.mutable_layers()) l.set_deltas_enabled(on);
        for (auto& l : text_.mutable_layers()) l.set_deltas_enabled(on);
    }

    // 1/tau, clamped at 100.
    Tensor logit_scale() const { return exp_clamped(log_scale_, 100.0); }

    NamedParams trainable() const {
        NamedParams out;
        vision_.collect(out);
        text_.collect(out);
        out.emplace_back("logit_scale", log_scale_);
        return out;
    }

    std::vector<Tensor> frame_tensors(const VideoRecord& rec) const {
        std::vector<Tensor> frames;
        frames.reserve(rec.frames.size());
        for (const auto& grid : rec.frames)
            frames.emplace_back(Shape{cfg_.patches + 1, cfg_.d_vision}, grid);
        return frames;
    }

    VideoFeatures encode_video(const VideoRecord& rec, CostCounter* cost = nullptr) const {
        return vision_.encode(frame_tensors(rec), cost);
    }

    Tensor encode_video_caption(const VideoRecord& rec, CostCounter* cost = nullptr) const {
        return text_.encode_caption(rec.video_caption, cost);
    }

    // F pseudo captions -> [F, d_embed].
    Tensor encode_pseudo_captions(const VideoRecord& rec, CostCounter* cost = nullptr) const {
        if (rec.pseudo_captions.size() != cfg_.frames)
            throw TensorError("encode_pseudo_captions: expected " + std::to_string(cfg_.frames) +
                              " captions, got " + std::to_string(rec.pseudo_captions.size()));
        return text_.encode_group(rec.pseudo_captions, cost);
    }

    struct ForwardResult {
        SimilarityMatrix sim_vid;
        SimilarityMatrix sim_img;  // undefined tensor when not computed
        LossBreakdown loss;
    };

    ForwardResult forward(const Batch& batch, SimilarityMode sim_mode = SimilarityMode::FineGrained,
                          CostCounter* cost = nullptr) const {
        std::vector<Tensor> t_rows, v_rows;
        std::vector<Tensor> t_img, v_img;
        const bool need_img = cfg_.uses_pseudo_captions() && sim_mode != SimilarityMode::None;
        for (const VideoRecord* rec : batch.samples) {
            VideoFeatures vf = encode_video(*rec, cost);
            v_rows.push_back(vf.pooled);
            t_rows.push_back(encode_video_caption(*rec, cost));
            if (need_img) {
                v_img.push_back(vf.per_frame);
                t_img.push_back(encode_pseudo_captions(*rec, cost));
            }
        }
        ForwardResult out;
        out.sim_vid = video_similarity(concat_rows(t_rows), concat_rows(v_rows));
        Tensor scale_t = logit_scale();
        const SimilarityMatrix* img_ptr = nullptr;
        if (need_img) {
            switch (sim_mode) {
                case SimilarityMode::FineGrained:
                    out.sim_img = fine_grained_image_similarity(t_img, v_img);
                    break;
                case SimilarityMode::Paired:
                    out.sim_img = paired_image_similarity(t_img, v_img);
                    break;
                case SimilarityMode::VideoLevelAvg:
                    out.sim_img = video_level_avg_similarity(t_img, v_img);
                    break;
                case SimilarityMode::None: break;
            }
            img_ptr = &out.sim_img;
        }
        out.loss = total_loss(out.sim_vid, img_ptr, scale_t, cfg_.alpha, cfg_.beta,
                              cfg_.detach_distill_teacher);
        return out;
    }

private:
    ModelConfig cfg_;
    VisionEncoder vision_;
    TextEncoder text_;
    Tensor log_scale_;
};

}  // namespace vtr
