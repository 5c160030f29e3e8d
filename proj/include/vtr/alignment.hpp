#pragma once

// Similarity matrices and training losses: symmetric contrastive alignment,
// fine-grained image-level similarity with its ablation variants, and the
// image-to-video KL distillation term.

#include <cmath>
#include <string>
#include <vector>

#include "vtr/config.hpp"
#include "vtr/tensor.hpp"

namespace vtr {

enum class SimLevel { Video, Image };

struct SimilarityMatrix {
    Tensor values;  // [N_t, N_v]
    SimLevel level = SimLevel::Video;

    std::size_t n_text() const { return values.rows(); }
    std::size_t n_video() const { return values.cols(); }
    bool square() const { return n_text() == n_video(); }
};

struct LossBreakdown {
    Tensor video_align;
    Tensor image_align;
    Tensor distill;
    Tensor total;
    double alpha = 0.0;
    double beta = 0.0;
};

namespace detail {

inline void require_unit_rows(const Tensor& t, const char* who) {
    const std::size_t m = t.rows(), n = t.cols();
    for (std::size_t i = 0; i < m; ++i) {
        Scalar s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += t.at(i, j) * t.at(i, j);
        if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
            throw TensorError(std::string(who) + ": row " + std::to_string(i) +
                              " is not unit-norm");
    }
}

}  // namespace detail

// Sim[i][j] = <text_i, video_j> over unit-norm embedding rows.
inline SimilarityMatrix video_similarity(const Tensor& t_vid, const Tensor& v_vid) {
    detail::require_unit_rows(t_vid, "video_similarity(text)");
    detail::require_unit_rows(v_vid, "video_similarity(video)");
    return {matmul(t_vid, transpose(v_vid)), SimLevel::Video};
}

// Symmetric contrastive alignment: mean diagonal log-softmax over rows and
// columns, negated and halved. Nonnegative; zero only for a one-hot-perfect
// square of size 1.
inline Tensor contrastive_alignment_loss(const SimilarityMatrix& sim, const Tensor& logit_scale) {
    if (!sim.square()) throw TensorError("contrastive_alignment_loss: square matrix required");
    Tensor logits = scale_by(sim.values, logit_scale);
    Tensor t2v = mean_diag(log_softmax_rows(logits, 1.0));
    Tensor v2t = mean_diag(log_softmax_rows(transpose(logits), 1.0));
    return scale(add(t2v, v2t), -0.5);
}

inline Tensor contrastive_alignment_loss(const SimilarityMatrix& sim, Scalar tau) {
    if (!(tau > 0.0)) throw TensorError("contrastive_alignment_loss: tau must be positive");
    return contrastive_alignment_loss(sim, Tensor::scalar(1.0 / tau));
}

// Fine-grained image-level similarity: per pair (i,j), mean over captions of
// the max over frames, averaged with the transposed direction.
inline SimilarityMatrix fine_grained_image_similarity(const std::vector<Tensor>& t_img,
                                                      const std::vector<Tensor>& v_img) {
    const std::size_t b = t_img.size();
    if (v_img.size() != b) throw TensorError("fine_grained_image_similarity: batch mismatch");
    std::vector<Tensor> rows;
    rows.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        if (t_img[i].rows() != v_img[0].rows())
            throw TensorError("fine_grained_image_similarity: frame count mismatch");
        std::vector<Tensor> cells;
        cells.reserve(b);
        for (std::size_t j = 0; j < b; ++j) {
            Tensor grid = matmul(t_img[i], transpose(v_img[j]));  // [F_t, F_v]
            Tensor t2v = mean_all(rowwise_max(grid));
            Tensor v2t = mean_all(rowwise_max(transpose(grid)));
            cells.push_back(reshape(scale(add(t2v, v2t), 0.5), {1, 1}));
        }
        rows.push_back(concat_cols(cells));
    }
    return {concat_rows(rows), SimLevel::Image};
}

// Ablation variant: only index-matched caption-frame pairs contribute.
inline SimilarityMatrix paired_image_similarity(const std::vector<Tensor>& t_img,
                                                const std::vector<Tensor>& v_img) {
    const std::size_t b = t_img.size();
    if (v_img.size() != b) throw TensorError("paired_image_similarity: batch mismatch");
    std::vector<Tensor> rows;
    rows.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<Tensor> cells;
        cells.reserve(b);
        for (std::size_t j = 0; j < b; ++j) {
            if (t_img[i].rows() != v_img[j].rows())
                throw TensorError("paired_image_similarity: frame count mismatch");
            const Scalar inv_f = 1.0 / static_cast<Scalar>(t_img[i].rows());
            cells.push_back(reshape(scale(sum(mul(t_img[i], v_img[j])), inv_f), {1, 1}));
        }
        rows.push_back(concat_cols(cells));
    }
    return {concat_rows(rows), SimLevel::Image};
}

// Ablation variant: average each side over frames, then a single dot product.
inline SimilarityMatrix video_level_avg_similarity(const std::vector<Tensor>& t_img,
                                                   const std::vector<Tensor>& v_img) {
    const std::size_t b = t_img.size();
    if (v_img.size() != b) throw TensorError("video_level_avg_similarity: batch mismatch");
    std::vector<Tensor> t_rows, v_rows;
    for (std::size_t i = 0; i < b; ++i) {
        t_rows.push_back(mean_rows(t_img[i]));
        v_rows.push_back(mean_rows(v_img[i]));
    }
    return {matmul(concat_rows(t_rows), transpose(concat_rows(v_rows))), SimLevel::Image};
}

// KL between row (and column) softmax distributions of the image-level and
// video-level similarity matrices, teacher side optionally detached.
inline Tensor align_distill_kl(const SimilarityMatrix& sim_img, const SimilarityMatrix& sim_vid,
                               const Tensor& logit_scale, bool detach_teacher = true) {
    if (sim_img.values.shape() != sim_vid.values.shape())
        throw TensorError("align_distill_kl: shape mismatch");
    Tensor teacher = detach_teacher ? sim_img.values.detach() : sim_img.values;
    Tensor t_logits = scale_by(teacher, detach_teacher ? logit_scale.detach() : logit_scale);
    Tensor s_logits = scale_by(sim_vid.values, logit_scale);
    auto direction = [](const Tensor& t, const Tensor& s) {
        Tensor p = softmax_rows(t, 1.0);
        Tensor log_ratio = sub(log_softmax_rows(t, 1.0), log_softmax_rows(s, 1.0));
        // mean over rows of sum over columns of p * log_ratio
        return scale(sum(mul(p, log_ratio)), 1.0 / static_cast<Scalar>(t.rows()));
    };
    Tensor kl_t2v = direction(t_logits, s_logits);
    Tensor kl_v2t = direction(transpose(t_logits), transpose(s_logits));
    return scale(add(kl_t2v, kl_v2t), 0.5);
}

inline Tensor align_distill_kl(const SimilarityMatrix& sim_img, const SimilarityMatrix& sim_vid,
                               Scalar tau, bool detach_teacher = true) {
    if (!(tau > 0.0)) throw TensorError("align_distill_kl: tau must be positive");
    return align_distill_kl(sim_img, sim_vid, Tensor::scalar(1.0 / tau), detach_teacher);
}

// Total objective: video alignment + alpha * image alignment + beta * KL.
// sim_img may be undefined when alpha == beta == 0.
inline LossBreakdown total_loss(const SimilarityMatrix& sim_vid, const SimilarityMatrix* sim_img,
                                const Tensor& logit_scale, double alpha, double beta,
                                bool detach_teacher = true) {
    if (alpha < 0.0 || beta < 0.0) throw TensorError("total_loss: negative loss weight");
    LossBreakdown out;
    out.alpha = alpha;
    out.beta = beta;
    out.video_align = contrastive_alignment_loss(sim_vid, logit_scale);
    out.total = out.video_align;
    if (sim_img && alpha > 0.0) {
        out.image_align = contrastive_alignment_loss(*sim_img, logit_scale);
        out.total = add(out.total, scale(out.image_align, alpha));
    } else {
        out.image_align = Tensor::scalar(0.0);
    }
    if (sim_img && beta > 0.0) {
        out.distill = align_distill_kl(*sim_img, sim_vid, logit_scale, detach_teacher);
        out.total = add(out.total, scale(out.distill, beta));
    } else {
        out.distill = Tensor::scalar(0.0);
    }
    return out;
}

}  // namespace vtr
