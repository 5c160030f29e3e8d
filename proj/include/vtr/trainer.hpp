#pragma once

// Training and evaluation drivers: AdamW over the trainable parameters,
// cosine learning-rate schedule, loss tracing, tiny checkpoints holding only
// the trainable tensors plus a config hash, and full-matrix evaluation.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vtr/config.hpp"
#include "vtr/data.hpp"
#include "vtr/model.hpp"
#include "vtr/retrieval.hpp"

namespace vtr {

// lr(t) = lr0 * (1 + cos(pi * t / T)) / 2
inline double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0) return base_lr;
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * double(step) / double(total_steps)));
}

class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Decoupled weight decay; decay is skipped for the temperature scalar.
    void step(const NamedParams& params, double lr, double weight_decay) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, double(t_));
        const double bc2 = 1.0 - std::pow(beta2_, double(t_));
        for (const auto& [name, p] : params) {
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() != p.size()) {
                m.assign(p.size(), 0.0);
                v.assign(p.size(), 0.0);
            }
            const auto& g = p.grad();
            auto& data = const_cast<Tensor&>(p).mutable_data();
            const double wd = name == "logit_scale" ? 0.0 : weight_decay;
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double gi = g.empty() ? 0.0 : g[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                data[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd * data[i]);
            }
        }
    }

private:
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// presets mirroring the component-ablation rows

inline RunConfig apply_preset(RunConfig cfg, const std::string& preset) {
    cfg.preset = preset;
    ModelConfig& m = cfg.model;
    if (preset == "lora") {
        m.h_vision = 0;
        m.h_text = 0;
        m.alpha = 0.0;
        m.beta = 0.0;
    } else if (preset == "b1") {
        m.alpha = 0.0;
        m.beta = 0.0;
    } else if (preset == "b2") {
        m.beta = 0.0;
    } else if (preset == "b3") {
        m.alpha = 0.0;
    } else if (preset == "full") {
        // config defaults
    } else if (preset == "video_level") {
        m.fusion_scheme = AttnScheme::VideoLevel;
        m.alpha = 0.0;
        m.beta = 0.0;
    } else if (preset == "ivfusion_no_adapter") {
        m.fusion_scheme = AttnScheme::IVFusionNoAdapter;
        m.alpha = 0.0;
        m.beta = 0.0;
    } else {
        throw ConfigError("unknown preset: " + preset);
    }
    return cfg;
}

inline ComponentFlags preset_flags(const ModelConfig& m) {
    ComponentFlags f;
    f.lora = true;
    f.vision_adapters = m.h_vision > 0 && m.fusion_scheme == AttnScheme::IVFusion;
    f.text_adapters = m.effective_h_text() > 0 && m.fusion_scheme == AttnScheme::IVFusion;
    return f;
}

// ---------------------------------------------------------------------------
// checkpoints: config hash + named trainable tensors, nothing else

inline std::string config_canonical(const ModelConfig& m) {
    std::ostringstream os;
    os << "d_vision=" << m.d_vision << ";d_text=" << m.d_text << ";d_embed=" << m.d_embed
       << ";layers_vision=" << m.layers_vision << ";layers_text=" << m.layers_text
       << ";heads_vision=" << m.heads_vision << ";heads_text=" << m.heads_text
       << ";frames=" << m.frames << ";patches=" << m.patches << ";h_vision=" << m.h_vision
       << ";h_text=" << m.h_text << ";rank=" << m.rank << ";tau_init=" << m.tau_init
       << ";alpha=" << m.alpha << ";beta=" << m.beta << ";max_caption_len=" << m.max_caption_len
       << ";vocab=" << m.vocab_size << ";scheme=" << int(m.fusion_scheme);
    return os.str();
}

inline std::uint64_t config_hash(const ModelConfig& m) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : config_canonical(m)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

inline constexpr char kCheckpointMagic[8] = {'V', 'T', 'R', 'C', 'K', 'P', 'T', '\1'};

inline void save_checkpoint(const std::string& path, const Model& model) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_checkpoint: cannot open " + path);
    f.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint64_t h = config_hash(model.config());
    f.write(reinterpret_cast<const char*>(&h), 8);
    const NamedParams params = model.trainable();
    const std::uint32_t count = static_cast<std::uint32_t>(params.size());
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, p] : params) {
        const std::uint32_t len = static_cast<std::uint32_t>(name.size());
        f.write(reinterpret_cast<const char*>(&len), 4);
        f.write(name.data(), len);
        const std::uint32_t ndims = static_cast<std::uint32_t>(p.shape().size());
        f.write(reinterpret_cast<const char*>(&ndims), 4);
        for (auto d : p.shape()) {
            const std::uint32_t dd = static_cast<std::uint32_t>(d);
            f.write(reinterpret_cast<const char*>(&dd), 4);
        }
        f.write(reinterpret_cast<const char*>(p.data().data()),
                static_cast<std::streamsize>(p.size() * sizeof(Scalar)));
    }
}

// Loads trainable tensors into a model freshly built from (config, seed).
inline void load_checkpoint(const std::string& path, Model& model) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw DataError("load_checkpoint: bad magic in " + path);
    std::uint64_t h = 0;
    f.read(reinterpret_cast<char*>(&h), 8);
    if (h != config_hash(model.config()))
        throw DataError("load_checkpoint: config hash mismatch, checkpoint is for a different "
                        "configuration");
    std::uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 4);
    NamedParams params = model.trainable();
    std::map<std::string, Tensor> by_name(params.begin(), params.end());
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t len = 0;
        f.read(reinterpret_cast<char*>(&len), 4);
        std::string name(len, '\0');
        f.read(name.data(), len);
        std::uint32_t ndims = 0;
        f.read(reinterpret_cast<char*>(&ndims), 4);
        Shape shape(ndims);
        for (auto& d : shape) {
            std::uint32_t dd = 0;
            f.read(reinterpret_cast<char*>(&dd), 4);
            d = dd;
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("load_checkpoint: unknown parameter " + name);
        if (it->second.shape() != shape)
            throw DataError("load_checkpoint: shape mismatch for " + name);
        f.read(reinterpret_cast<char*>(it->second.mutable_data().data()),
               static_cast<std::streamsize>(it->second.size() * sizeof(Scalar)));
        if (!f) throw DataError("load_checkpoint: truncated file at parameter " + name);
    }
}

// ---------------------------------------------------------------------------
// evaluation: inference uses the video-level similarity only

enum class Postprocess { None, DSL };

struct EvalResult {
    RetrievalMetrics t2v;
    RetrievalMetrics v2t;
    SimilarityMatrix sim;
};

inline EvalResult run_evaluation(const Model& model, const Corpus& corpus, std::size_t begin,
                                 std::size_t count, Postprocess post = Postprocess::None,
                                 Scalar dsl_temperature = 1.0) {
    if (begin + count > corpus.records.size())
        throw DataError("run_evaluation: range exceeds corpus");
    std::vector<Tensor> t_rows, v_rows;
    for (std::size_t i = 0; i < count; ++i) {
        const VideoRecord& rec = corpus.records[begin + i];
        t_rows.push_back(model.encode_video_caption(rec).detach());
        v_rows.push_back(model.encode_video(rec).pooled.detach());
    }
    EvalResult out;
    out.sim = video_similarity(concat_rows(t_rows), concat_rows(v_rows));
    if (post == Postprocess::DSL) {
        SimilarityMatrix t2v_sim = dual_softmax_postprocess(out.sim, dsl_temperature);
        SimilarityMatrix v2t_t = dual_softmax_postprocess(
            SimilarityMatrix{transpose(out.sim.values), out.sim.level}, dsl_temperature);
        out.t2v = rank_and_metrics(t2v_sim, Direction::T2V);
        out.v2t = rank_and_metrics(SimilarityMatrix{transpose(v2t_t.values), v2t_t.level},
                                   Direction::V2T);
    } else {
        out.t2v = rank_and_metrics(out.sim, Direction::T2V);
        out.v2t = rank_and_metrics(out.sim, Direction::V2T);
    }
    return out;
}

// ---------------------------------------------------------------------------
// training

struct TraceRow {
    std::size_t step;
    double loss_total, loss_align_vid, loss_align_img, loss_kl, lr;
};

struct TrainResult {
    Model model;
    std::vector<TraceRow> trace;
    bool diverged = false;
    std::size_t last_finite_step = 0;
};

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream os;
    os << "step,loss_total,loss_align_vid,loss_align_img,loss_kl,lr\n";
    os.precision(17);
    for (const auto& r : trace)
        os << r.step << ',' << r.loss_total << ',' << r.loss_align_vid << ','
           << r.loss_align_img << ',' << r.loss_kl << ',' << r.lr << "\n";
    return os.str();
}

inline SimilarityMode preset_similarity_mode(const RunConfig& cfg) {
    if (!cfg.model.uses_pseudo_captions()) return SimilarityMode::None;
    return SimilarityMode::FineGrained;
}

inline TrainResult run_training(const RunConfig& cfg, const Corpus& corpus,
                                SimilarityMode sim_mode, std::ostream* log = nullptr) {
    const std::size_t train_count = corpus.records.size() > cfg.eval_size
                                        ? corpus.records.size() - cfg.eval_size
                                        : corpus.records.size();
    Corpus train_corpus;
    train_corpus.frames_per_video = corpus.frames_per_video;
    train_corpus.token_dim = corpus.token_dim;
    train_corpus.tokens_per_frame = corpus.tokens_per_frame;
    train_corpus.records.assign(corpus.records.begin(), corpus.records.begin() + train_count);

    TrainResult result;
    result.model = Model(cfg.model, cfg.seed);
    AdamW opt;
    BatchIterator iter(train_corpus, cfg.batch_size, cfg.seed, cfg.drop_last);
    const std::size_t steps_per_epoch = iter.epoch(0).size();
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    NamedParams params = result.model.trainable();
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const Batch& batch : iter.epoch(epoch)) {
            const double lr = cosine_lr(cfg.learning_rate, step, total_steps);
            for (auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
            auto fwd = result.model.forward(batch, sim_mode);
            if (!fwd.loss.total.all_finite()) {
                result.diverged = true;
                result.last_finite_step = step == 0 ? 0 : step - 1;
                return result;
            }
            fwd.loss.total.backward();
            opt.step(params, lr, cfg.weight_decay);
            result.trace.push_back({step, fwd.loss.total.item(), fwd.loss.video_align.item(),
                                    fwd.loss.image_align.item(), fwd.loss.distill.item(), lr});
            result.last_finite_step = step;
            ++step;
        }
        if (log)
            (*log) << "epoch " << epoch << " step " << step << " loss "
                   << (result.trace.empty() ? 0.0 : result.trace.back().loss_total) << "\n";
    }
    return result;
}

}  // namespace vtr
