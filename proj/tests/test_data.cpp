#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <vector>

#include "vtr/data.hpp"
#include "vtr/retrieval.hpp"
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

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("uniform frame sampling hits the floor formula") {
    CHECK(sample_frames_uniform(12, 4) == std::vector<std::size_t>{0, 3, 6, 9});
    CHECK(sample_frames_uniform(24, 6) == std::vector<std::size_t>{0, 4, 8, 12, 16, 20});
    CHECK(sample_frames_uniform(3, 4) == std::vector<std::size_t>{0, 0, 1, 2});
    CHECK(sample_frames_uniform(1, 3) == std::vector<std::size_t>{0, 0, 0});
    CHECK_THROWS_AS(sample_frames_uniform(0, 4), DataError);
    CHECK_THROWS_AS(sample_frames_uniform(10, 0), DataError);

    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t total = 1 + rng() % 100, target = 1 + rng() % 20;
        auto idx = sample_frames_uniform(total, target);
        CHECK(idx.size() == target);
        CHECK(idx.front() == 0);
        for (std::size_t k = 0; k < target; ++k) {
            CHECK(idx[k] < total);
            if (k) CHECK(idx[k] >= idx[k - 1]);
        }
    }
}

TEST_CASE("corpus generation is seed-deterministic") {
    ModelConfig cfg = tiny_config();
    Corpus a = generate_synthetic_corpus(42, 6, 4, 0.1, cfg);
    Corpus b = generate_synthetic_corpus(42, 6, 4, 0.1, cfg);
    Corpus c = generate_synthetic_corpus(43, 6, 4, 0.1, cfg);
    REQUIRE(a.records.size() == 6);
    CHECK(a.records[0].video_id == "vid00000");
    for (std::size_t s = 0; s < 6; ++s) {
        CHECK(a.records[s].frames == b.records[s].frames);
        CHECK(a.records[s].video_caption == b.records[s].video_caption);
        CHECK(a.records[s].pseudo_captions == b.records[s].pseudo_captions);
        CHECK(a.records[s].latent == b.records[s].latent);
    }
    CHECK(a.records[0].frames != c.records[0].frames);
    CHECK_THROWS_AS(generate_synthetic_corpus(1, 1, 4, 0.1, cfg), DataError);
}

TEST_CASE("zero noise plants exact frame-video correspondence") {
    ModelConfig cfg = tiny_config();
    Corpus corpus = generate_synthetic_corpus(7, 16, 4, 0.0, cfg);
    for (const auto& rec : corpus.records) {
        for (const auto& sub : rec.frame_latents) CHECK(sub == rec.latent);
        for (const auto& cap : rec.pseudo_captions) CHECK(cap == rec.video_caption);
        for (std::size_t f = 1; f < rec.frames.size(); ++f)
            CHECK(rec.frames[f] == rec.frames[0]);
    }
    // The planted-latent affinity matrix retrieves perfectly.
    const std::size_t b = corpus.records.size();
    std::vector<Scalar> sim(b * b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j)
            sim[i * b + j] = latent_affinity(corpus.records[i].latent, corpus.records[j].latent);
    RetrievalMetrics m =
        rank_and_metrics({Tensor({b, b}, sim), SimLevel::Video}, Direction::T2V);
    CHECK(m.r_at[1] == 100.0);
    CHECK(m.mnr == 1.0);
}

TEST_CASE("frame-to-video affinity degrades as noise grows") {
    ModelConfig cfg = tiny_config();
    double prev = 2.0;
    for (double noise : {0.0, 0.1, 1.0}) {
        Corpus corpus = generate_synthetic_corpus(7, 16, 4, noise, cfg);
        double acc = 0.0;
        std::size_t n = 0;
        for (const auto& rec : corpus.records)
            for (const auto& sub : rec.frame_latents) {
                acc += latent_affinity(sub, rec.latent);
                ++n;
            }
        double mean = acc / double(n);
        CHECK(mean < prev + 1e-12);
        if (noise == 0.0) CHECK(mean == doctest::Approx(1.0));
        prev = mean;
    }
}

TEST_CASE("tokenizer is deterministic and stays inside the vocabulary") {
    auto a = tokenize("c0b3 c1b5 c2b0", 64, 9);
    auto b = tokenize("c0b3 c1b5 c2b0", 64, 9);
    CHECK(a == b);
    CHECK(a.size() == 3);
    for (auto id : a) CHECK(id < 64);
    CHECK(tokenize("c0b3 c1b5", 64, 10) != a);  // seed changes the hash
    CHECK_THROWS_AS(tokenize("   ", 64, 9), DataError);
}

TEST_CASE("feature files round-trip through float32") {
    std::mt19937_64 rng(11);
    FeatureTable table;
    table.d_embed = 6;
    table.frames = 3;
    for (int i = 0; i < 4; ++i) {
        table.ids.push_back("vid" + std::to_string(i));
        table.features.push_back(oracle::random_tensor(rng, {3, 6}));
    }
    const std::string path = temp_path("vtr_feat_test.bin");
    write_feature_file(path, table);

    FeatureTable loaded = load_feature_file(path);
    REQUIRE(loaded.ids == table.ids);
    CHECK(loaded.d_embed == 6);
    CHECK(loaded.frames == 3);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 18; ++j)
            CHECK(loaded.features[i].at(j) == double(float(table.features[i].at(j))));

    // A second pass is exact: everything is already float-representable.
    const std::string path2 = temp_path("vtr_feat_test2.bin");
    write_feature_file(path2, loaded);
    FeatureTable again = load_feature_file(path2);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(again.features[i].data() == loaded.features[i].data());

    CHECK(loaded.find("vid2") != nullptr);
    CHECK(loaded.find("nope") == nullptr);

    std::remove(path.c_str());
    std::remove((path + ".ids").c_str());
    std::remove(path2.c_str());
    std::remove((path2 + ".ids").c_str());
}

TEST_CASE("feature loader reports format violations with positions") {
    const std::string path = temp_path("vtr_feat_bad.bin");

    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTMAGIC and then some";
    }
    CHECK_THROWS_WITH_AS(load_feature_file(path), doctest::Contains("bad magic"), DataError);

    {
        std::ofstream f(path, std::ios::binary);
        f.write(kFeatureMagic, 8);
        f.put(99);
    }
    CHECK_THROWS_WITH_AS(load_feature_file(path), doctest::Contains("version 99"), DataError);

    {
        std::ofstream f(path, std::ios::binary);
        f.write(kFeatureMagic, 8);
        f.put(char(kFeatureVersion));
        std::uint32_t v = 4;
        f.write(reinterpret_cast<char*>(&v), 4);  // header cut short
    }
    CHECK_THROWS_WITH_AS(load_feature_file(path), doctest::Contains("truncated header"),
                         DataError);

    // Valid header claiming more rows than the payload holds.
    {
        std::ofstream f(path, std::ios::binary);
        f.write(kFeatureMagic, 8);
        f.put(char(kFeatureVersion));
        std::uint32_t dims[3] = {4, 2, 3};  // d_embed=4, frames=2, count=3
        f.write(reinterpret_cast<char*>(dims), 12);
        float payload[8] = {};
        f.write(reinterpret_cast<char*>(payload), sizeof payload);  // one id's worth
    }
    CHECK_THROWS_WITH_AS(load_feature_file(path), doctest::Contains("truncated"), DataError);

    // Mismatch against the model configuration.
    FeatureTable table;
    table.d_embed = 4;
    table.frames = 2;
    table.ids = {"a"};
    table.features = {Tensor::zeros({2, 4})};
    write_feature_file(path, table);
    ModelConfig cfg = tiny_config();  // expects d_embed 16, frames 3
    CHECK_THROWS_WITH_AS(load_feature_file(path, &cfg), doctest::Contains("d_embed"), DataError);

    std::remove(path.c_str());
    std::remove((path + ".ids").c_str());
}

TEST_CASE("pseudo-caption tsv round-trips and enforces arity") {
    const std::string path = temp_path("vtr_caps.tsv");
    write_pseudo_caption_tsv(path, {{"vidA", {"a frame", "another frame"}},
                                    {"vidB", {"on a desk", "near a lamp"}}});
    auto loaded = load_pseudo_caption_tsv(path, 2);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded.at("vidA") == std::vector<std::string>{"a frame", "another frame"});
    CHECK(loaded.at("vidB")[1] == "near a lamp");

    CHECK_THROWS_WITH_AS(load_pseudo_caption_tsv(path, 3), doctest::Contains("expected 3"),
                         DataError);

    std::ofstream(path, std::ios::app) << "vidC\tno-tab-after-this\n";
    // Still two tabs required; a line with only one is malformed.
    std::ofstream(path, std::ios::app) << "broken line\n";
    CHECK_THROWS_WITH_AS(load_pseudo_caption_tsv(path, 2), doctest::Contains("malformed"),
                         DataError);
    std::remove(path.c_str());
}

TEST_CASE("batch iterator covers each record once per epoch") {
    ModelConfig cfg = tiny_config();
    Corpus corpus = generate_synthetic_corpus(3, 10, 4, 0.1, cfg);

    BatchIterator it(corpus, 4, 5, /*drop_last=*/true);
    auto batches = it.epoch(0);
    CHECK(batches.size() == 2);  // 10 = 4 + 4 + dropped 2
    std::set<const VideoRecord*> seen;
    for (const auto& b : batches) {
        CHECK(b.size() == 4);
        for (auto* r : b.samples) CHECK(seen.insert(r).second);
    }

    BatchIterator keep(corpus, 4, 5, /*drop_last=*/false);
    auto kept = keep.epoch(0);
    CHECK(kept.size() == 3);
    CHECK(kept.back().size() == 2);
    std::set<const VideoRecord*> all;
    for (const auto& b : kept)
        for (auto* r : b.samples) all.insert(r);
    CHECK(all.size() == 10);
}

TEST_CASE("batch iterator shuffles deterministically per epoch") {
    ModelConfig cfg = tiny_config();
    Corpus corpus = generate_synthetic_corpus(3, 12, 4, 0.1, cfg);
    BatchIterator a(corpus, 4, 5, true);
    BatchIterator b(corpus, 4, 5, true);

    auto ids = [](const std::vector<Batch>& batches) {
        std::vector<std::string> out;
        for (const auto& batch : batches)
            for (auto* r : batch.samples) out.push_back(r->video_id);
        return out;
    };
    CHECK(ids(a.epoch(0)) == ids(b.epoch(0)));
    CHECK(ids(a.epoch(1)) == ids(b.epoch(1)));
    CHECK(ids(a.epoch(0)) != ids(a.epoch(1)));

    BatchIterator other(corpus, 4, 6, true);
    CHECK(ids(a.epoch(0)) != ids(other.epoch(0)));
}

TEST_CASE("degenerate batch shapes are rejected") {
    ModelConfig cfg = tiny_config();
    Corpus corpus = generate_synthetic_corpus(3, 4, 4, 0.1, cfg);
    CHECK_THROWS_AS(BatchIterator(corpus, 1, 5, true), DataError);
    CHECK_THROWS_AS(BatchIterator(corpus, 5, 5, true), DataError);
    CHECK_NOTHROW(BatchIterator(corpus, 4, 5, true));
}

TEST_CASE("the pseudo-caption prompt mentions its substitution slot") {
    std::string prompt = kPseudoCaptionPrompt;
    CHECK(prompt.find("{video caption}") != std::string::npos);
    CHECK(prompt.find("frame") != std::string::npos);
}
