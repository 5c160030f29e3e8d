#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtr/tensor.hpp"

namespace vtr {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class SimilarityMode { FineGrained, Paired, VideoLevelAvg, None };

enum class AttnScheme { ImageLevel, VideoLevel, IVFusion, IVFusionNoAdapter };

inline std::string to_string(SimilarityMode m) {
    switch (m) {
        case SimilarityMode::FineGrained: return "fine_grained";
        case SimilarityMode::Paired: return "paired";
        case SimilarityMode::VideoLevelAvg: return "video_level_avg";
        case SimilarityMode::None: return "none";
    }
    return "?";
}

inline SimilarityMode similarity_mode_from_string(const std::string& s) {
    if (s == "fine_grained") return SimilarityMode::FineGrained;
    if (s == "paired") return SimilarityMode::Paired;
    if (s == "video_level_avg") return SimilarityMode::VideoLevelAvg;
    if (s == "none") return SimilarityMode::None;
    throw ConfigError("unknown similarity mode: " + s);
}

struct ModelConfig {
    std::size_t d_vision = 768;
    std::size_t d_text = 512;
    std::size_t d_embed = 512;
    std::size_t layers_vision = 12;
    std::size_t layers_text = 12;
    std::size_t heads_vision = 12;
    std::size_t heads_text = 8;
    std::size_t frames = 12;          // F
    std::size_t patches = 49;         // N patch tokens per frame
    std::size_t h_vision = 4;         // IVFusion layers in the vision encoder
    std::size_t h_text = 2;           // IVFusion layers in the text encoder
    std::size_t rank = 8;             // LoRA rank = adapter bottleneck
    double tau_init = 0.07;
    double alpha = 0.3;               // image-level loss weight
    double beta = 1.0;                // distillation weight
    std::size_t max_caption_len = 32;
    std::size_t vocab_size = 512;
    AttnScheme fusion_scheme = AttnScheme::IVFusion;  // scheme for the top H layers
    bool detach_distill_teacher = true;

    void validate() const {
        if (h_vision > layers_vision) throw ConfigError("h_vision exceeds layers_vision");
        if (h_text > layers_text) throw ConfigError("h_text exceeds layers_text");
        if (rank < 1) throw ConfigError("rank must be >= 1");
        if (frames < 1) throw ConfigError("frames must be >= 1");
        if (!(tau_init > 0.0)) throw ConfigError("tau_init must be positive");
        if (alpha < 0.0 || beta < 0.0) throw ConfigError("loss weights must be nonnegative");
        if (d_vision % heads_vision != 0 || d_text % heads_text != 0)
            throw ConfigError("width must be divisible by head count");
    }

    // Text IVFusion layers exist for pseudo-caption features; without the
    // image-level alignment term they carry no trainable adapters.
    std::size_t effective_h_text() const { return alpha > 0.0 ? h_text : 0; }
    bool uses_pseudo_captions() const { return alpha > 0.0 || beta > 0.0; }

    // Desk-scale configuration used by CI and smoke training.
    static ModelConfig desk_scale() {
        ModelConfig c;
        c.d_vision = 64;
        c.d_text = 64;
        c.d_embed = 64;
        c.layers_vision = 4;
        c.layers_text = 2;
        c.heads_vision = 4;
        c.heads_text = 4;
        c.frames = 4;
        c.patches = 8;
        c.h_vision = 2;
        c.h_text = 1;
        c.rank = 8;
        c.max_caption_len = 16;
        return c;
    }

    // CLIP ViT-B/32 widths; used by the parameter- and cost-accounting checks.
    static ModelConfig clip_b32() { return ModelConfig{}; }
};

struct RunConfig {
    ModelConfig model = ModelConfig::desk_scale();
    double learning_rate = 6e-4;
    double weight_decay = 0.2;
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
    std::uint64_t data_seed = 7;
    std::size_t corpus_size = 512;
    std::size_t eval_size = 64;       // held-out gallery
    std::size_t latent_dim = 6;
    double noise_scale = 0.1;
    std::string out_dir = "out";
    std::string preset = "full";
    bool drop_last = true;
    int caption_bins = 8;

    // Schedule used by the end-to-end smoke runs: the synthetic task wants a
    // hotter learning rate and a longer run than the full-scale defaults.
    static RunConfig desk_schedule() {
        RunConfig r;
        r.learning_rate = 3e-2;
        r.epochs = 30;
        r.latent_dim = 4;
        return r;
    }
};

// Seeded gaussian fills. Each parameter derives its stream from (seed, name),
// so shared parameters are identical across presets that differ elsewhere.
class ParamRng {
public:
    explicit ParamRng(std::uint64_t seed) : seed_(seed) {}

    std::mt19937_64 stream(const std::string& name) const {
        std::uint64_t h = 1469598103934665603ull ^ seed_;
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        return std::mt19937_64(h);
    }

    Tensor normal(const std::string& name, Shape shape, double stddev,
                  bool requires_grad = false) const {
        auto rng = stream(name);
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<Scalar> d(numel(shape));
        for (auto& v : d) v = dist(rng);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

private:
    std::uint64_t seed_;
};

}  // namespace vtr
