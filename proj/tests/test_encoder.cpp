#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "vtr/data.hpp"
#include "vtr/encoder.hpp"
#include "vtr/model.hpp"
#include "oracles.hpp"

using namespace vtr;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.d_vision = c.d_text = c.d_embed = 16;
    c.layers_vision = 2;
    c.layers_text = 2;
    c.heads_vision = c.heads_text = 2;
    c.frames = 3;
    c.patches = 4;
    c.h_vision = 1;
    c.h_text = 1;
    c.rank = 2;
    c.vocab_size = 64;
    c.max_caption_len = 8;
    return c;
}

double row_norm(const Tensor& t, std::size_t r) {
    double s = 0;
    for (std::size_t c = 0; c < t.cols(); ++c) s += t.at(r, c) * t.at(r, c);
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("video features come out with unit-norm rows") {
    ModelConfig cfg = tiny_config();
    Corpus corpus = generate_synthetic_corpus(11, 2, 4, 0.1, cfg);
    Model model(cfg, 3);
    VideoFeatures vf = model.encode_video(corpus.records[0]);
    CHECK(vf.per_frame.rows() == cfg.frames);
    CHECK(vf.per_frame.cols() == cfg.d_embed);
    CHECK(vf.pooled.rows() == 1);
    for (std::size_t f = 0; f < cfg.frames; ++f)
        CHECK(row_norm(vf.per_frame, f) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(row_norm(vf.pooled, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single-frame video pools to its only frame") {
    ModelConfig cfg = tiny_config();
    cfg.frames = 1;
    Corpus corpus = generate_synthetic_corpus(12, 2, 4, 0.1, cfg);
    Model model(cfg, 3);
    VideoFeatures vf = model.encode_video(corpus.records[1]);
    CHECK(oracle::max_abs_diff(vf.pooled, vf.per_frame) == 0.0);
}

TEST_CASE("frame permutation permutes per-frame features, pooled is invariant") {
    ModelConfig cfg = tiny_config();
    Corpus corpus = generate_synthetic_corpus(13, 2, 4, 0.1, cfg);
    Model model(cfg, 3);
    VideoRecord rec = corpus.records[0];
    VideoFeatures base = model.encode_video(rec);

    VideoRecord perm = rec;
    std::vector<std::size_t> order = {2, 0, 1};
    for (std::size_t f = 0; f < order.size(); ++f) perm.frames[f] = rec.frames[order[f]];
    VideoFeatures got = model.encode_video(perm);

    for (std::size_t f = 0; f < order.size(); ++f)
        CHECK(oracle::max_abs_diff(slice_rows(got.per_frame, f, 1),
                                   slice_rows(base.per_frame, order[f], 1)) < 1e-10);
    CHECK(oracle::max_abs_diff(got.pooled, base.pooled) < 1e-10);
}

TEST_CASE("frozen start is bit-identical to the delta-disabled backbone") {
    ModelConfig cfg = tiny_config();
    Corpus corpus = generate_synthetic_corpus(14, 2, 4, 0.1, cfg);
    const VideoRecord& rec = corpus.records[0];
    Model with(cfg, 9);
    Model without(cfg, 9);
    without.set_trainable_deltas_enabled(false);

    VideoFeatures a = with.encode_video(rec);
    VideoFeatures b = without.encode_video(rec);
    CHECK(oracle::max_abs_diff(a.per_frame, b.per_frame) == 0.0);
    CHECK(oracle::max_abs_diff(a.pooled, b.pooled) == 0.0);

    Tensor ta = with.encode_video_caption(rec);
    Tensor tb = without.encode_video_caption(rec);
    CHECK(oracle::max_abs_diff(ta, tb) == 0.0);
}

TEST_CASE("trainable parameter accounting at full scale") {
    ModelConfig cfg = ModelConfig::clip_b32();
    CHECK(count_trainable_params(cfg, {true, false, false}) == 491520);
    CHECK(count_trainable_params(cfg, {true, true, false}) == 540672);
    CHECK(count_trainable_params(cfg, {true, true, true}) == 557056);
}

TEST_CASE("collected trainables agree with the accounting formula") {
    ModelConfig cfg = tiny_config();

    auto collected = [&](const ModelConfig& c) {
        Model m(c, 3);
        std::size_t n = 0;
        for (const auto& [name, t] : m.trainable())
            if (name != "logit_scale") n += t.size();
        return n;
    };

    CHECK(collected(cfg) == count_trainable_params(cfg, {true, true, true}));

    ModelConfig no_img = cfg;
    no_img.alpha = 0.0;
    no_img.beta = 0.0;
    CHECK(collected(no_img) == count_trainable_params(no_img, {true, true, false}));
}

TEST_CASE("pseudo caption arity is enforced") {
    ModelConfig cfg = tiny_config();
    Corpus corpus = generate_synthetic_corpus(15, 2, 4, 0.1, cfg);
    Model model(cfg, 3);
    VideoRecord rec = corpus.records[0];
    rec.pseudo_captions.pop_back();
    CHECK_THROWS_AS(model.encode_pseudo_captions(rec), TensorError);
}

TEST_CASE("over-long captions truncate to the prefix and set the flag") {
    ModelConfig cfg = tiny_config();
    Model model(cfg, 3);
    std::vector<std::uint32_t> long_cap, prefix;
    for (std::uint32_t i = 0; i < cfg.max_caption_len + 5; ++i) long_cap.push_back(i % 13);
    prefix.assign(long_cap.begin(), long_cap.begin() + cfg.max_caption_len);

    bool truncated = false;
    Tensor a = model.text().encode_caption(long_cap, nullptr, &truncated);
    CHECK(truncated);
    bool flag = false;
    Tensor b = model.text().encode_caption(prefix, nullptr, &flag);
    CHECK(!flag);
    CHECK(oracle::max_abs_diff(a, b) == 0.0);

    CHECK_THROWS_AS(model.text().encode_caption({}), TensorError);
}

TEST_CASE("identical captions in a group give identical summaries") {
    ModelConfig cfg = tiny_config();
    Model model(cfg, 3);
    std::vector<std::uint32_t> cap = {4, 9, 1, 30};
    Tensor group = model.text().encode_group({cap, cap, cap});
    CHECK(group.rows() == 3);
    for (std::size_t i = 1; i < 3; ++i)
        CHECK(oracle::max_abs_diff(slice_rows(group, 0, 1), slice_rows(group, i, 1)) < 1e-12);
}

TEST_CASE("construction is seed-deterministic") {
    ModelConfig cfg = tiny_config();
    Corpus corpus = generate_synthetic_corpus(16, 2, 4, 0.1, cfg);
    const VideoRecord& rec = corpus.records[0];

    Model a(cfg, 21), b(cfg, 21), c(cfg, 22);
    CHECK(oracle::max_abs_diff(a.encode_video(rec).pooled, b.encode_video(rec).pooled) == 0.0);
    CHECK(oracle::max_abs_diff(a.encode_video_caption(rec), b.encode_video_caption(rec)) == 0.0);
    CHECK(oracle::max_abs_diff(a.encode_video(rec).pooled, c.encode_video(rec).pooled) > 0.0);
}
