#pragma once

// Frame sampling, the synthetic planted-correspondence corpus, feature-file
// and pseudo-caption ingestion, and batch assembly.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtr/config.hpp"
#include "vtr/tensor.hpp"

namespace vtr {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Prompt used to generate per-frame captions offline with a multimodal model;
// {video caption} is replaced by the clip's ground-truth caption.
inline constexpr const char* kPseudoCaptionPrompt =
    "The provided image is a frame sampled from the video, which describes "
    "{video caption}. Based on the video's content, provide a caption for the "
    "provided image.";

// index_k = floor(k*T/F); when T < F the last valid index repeats.
inline std::vector<std::size_t> sample_frames_uniform(std::size_t total, std::size_t target) {
    if (total == 0) throw DataError("sample_frames_uniform: empty video");
    if (target == 0) throw DataError("sample_frames_uniform: target must be >= 1");
    std::vector<std::size_t> idx(target);
    for (std::size_t k = 0; k < target; ++k) idx[k] = std::min(k * total / target, total - 1);
    return idx;
}

struct VideoRecord {
    std::string video_id;
    std::vector<std::vector<Scalar>> frames;  // F grids, each (N+1)*d_vision row-major
    std::vector<std::uint32_t> video_caption;
    std::vector<std::vector<std::uint32_t>> pseudo_captions;  // F sequences, training only
    std::vector<Scalar> latent;                               // generator ground truth
    std::vector<std::vector<Scalar>> frame_latents;
};

struct Corpus {
    std::vector<VideoRecord> records;
    std::size_t frames_per_video = 0;
    std::size_t token_dim = 0;  // (N+1) tokens of this width per frame
    std::size_t tokens_per_frame = 0;
};

struct Batch {
    std::vector<const VideoRecord*> samples;
    std::size_t size() const { return samples.size(); }
};

// Hash a whitespace-separated symbol stream into vocabulary ids.
inline std::vector<std::uint32_t> tokenize(const std::string& text, std::size_t vocab,
                                           std::uint64_t seed) {
    std::vector<std::uint32_t> ids;
    std::istringstream is(text);
    std::string word;
    while (is >> word) {
        std::uint64_t h = 1469598103934665603ull ^ seed;
        for (char c : word) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        ids.push_back(static_cast<std::uint32_t>(h % vocab));
    }
    if (ids.empty()) throw DataError("tokenize: empty caption");
    return ids;
}

namespace detail {

// Symbol stream describing a latent vector: one word per coordinate naming
// the coordinate and its quantization bin.
inline std::string latent_symbols(std::span<const Scalar> latent, int bins) {
    std::ostringstream os;
    for (std::size_t k = 0; k < latent.size(); ++k) {
        const Scalar v = std::clamp(latent[k], Scalar(-2.0), Scalar(1.999));
        const int bin = static_cast<int>(std::floor((v + 2.0) / 4.0 * bins));
        if (k) os << ' ';
        os << 'c' << k << 'b' << bin;
    }
    return os.str();
}

}  // namespace detail

// Each sample plants a latent content vector; frame grids and captions are
// deterministic noisy functions of it, with per-frame sub-latents so pseudo
// captions describe individual frames while the video caption reflects the
// shared latent.
inline Corpus generate_synthetic_corpus(std::uint64_t seed, std::size_t size,
                                        std::size_t latent_dim, double noise_scale,
                                        const ModelConfig& cfg, int caption_bins = 8) {
    if (size < 2) throw DataError("generate_synthetic_corpus: size must be >= 2");
    Corpus corpus;
    corpus.frames_per_video = cfg.frames;
    corpus.token_dim = cfg.d_vision;
    corpus.tokens_per_frame = cfg.patches + 1;

    ParamRng gen(seed);
    // Fixed per-position projections from latent space to token space.
    std::vector<Tensor> patch_proj;
    for (std::size_t p = 0; p < corpus.tokens_per_frame; ++p)
        patch_proj.push_back(gen.normal("corpus.patch_proj" + std::to_string(p),
                                        {latent_dim, cfg.d_vision},
                                        1.0 / std::sqrt(double(latent_dim))));
    Tensor cls_base = gen.normal("corpus.cls_base", {1, cfg.d_vision}, 1.0);

    auto rng = gen.stream("corpus.samples");
    std::normal_distribution<double> unit(0.0, 1.0);
    corpus.records.reserve(size);
    for (std::size_t s = 0; s < size; ++s) {
        VideoRecord rec;
        {
            char buf[24];
            std::snprintf(buf, sizeof buf, "vid%05zu", s);
            rec.video_id = buf;
        }
        rec.latent.resize(latent_dim);
        for (auto& v : rec.latent) v = unit(rng);
        for (std::size_t f = 0; f < cfg.frames; ++f) {
            std::vector<Scalar> sub(latent_dim);
            for (std::size_t k = 0; k < latent_dim; ++k)
                sub[k] = rec.latent[k] + noise_scale * unit(rng);
            rec.frame_latents.push_back(sub);
            std::vector<Scalar> grid(corpus.tokens_per_frame * cfg.d_vision);
            for (std::size_t p = 0; p < corpus.tokens_per_frame; ++p) {
                const auto& proj = patch_proj[p].data();
                for (std::size_t d = 0; d < cfg.d_vision; ++d) {
                    Scalar acc = p == 0 ? cls_base.at(0, d) : 0.0;
                    for (std::size_t k = 0; k < latent_dim; ++k)
                        acc += sub[k] * proj[k * cfg.d_vision + d];
                    grid[p * cfg.d_vision + d] = acc;
                }
            }
            rec.frames.push_back(std::move(grid));
            rec.pseudo_captions.push_back(
                tokenize(detail::latent_symbols(sub, caption_bins), cfg.vocab_size, seed));
        }
        rec.video_caption =
            tokenize(detail::latent_symbols(rec.latent, caption_bins), cfg.vocab_size, seed);
        corpus.records.push_back(std::move(rec));
    }
    return corpus;
}

// Cosine affinity between two planted latents; the ground-truth oracle for
// the synthetic retrieval task.
inline Scalar latent_affinity(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
    Scalar dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

// ---------------------------------------------------------------------------
// feature file format: magic, version byte, dims header, row-major float32;
// ids in a parallel UTF-8 index file at <path>.ids.

inline constexpr char kFeatureMagic[8] = {'V', 'T', 'R', 'F', 'E', 'A', 'T', '\0'};
inline constexpr std::uint8_t kFeatureVersion = 1;

struct FeatureTable {
    std::size_t d_embed = 0;
    std::size_t frames = 0;  // rows per id
    std::vector<std::string> ids;
    std::vector<Tensor> features;  // one [frames, d_embed] tensor per id

    const Tensor* find(const std::string& id) const {
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] == id) return &features[i];
        return nullptr;
    }
};

inline void write_feature_file(const std::string& path, const FeatureTable& table) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_feature_file: cannot open " + path);
    f.write(kFeatureMagic, sizeof kFeatureMagic);
    f.put(static_cast<char>(kFeatureVersion));
    auto put32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    put32(static_cast<std::uint32_t>(table.d_embed));
    put32(static_cast<std::uint32_t>(table.frames));
    put32(static_cast<std::uint32_t>(table.ids.size()));
    for (const auto& t : table.features)
        for (Scalar v : t.data()) {
            const float fv = static_cast<float>(v);
            f.write(reinterpret_cast<const char*>(&fv), 4);
        }
    std::ofstream idx(path + ".ids");
    for (const auto& id : table.ids) idx << id << "\n";
}

inline FeatureTable load_feature_file(const std::string& path, const ModelConfig* cfg = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_feature_file: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, kFeatureMagic, sizeof magic) != 0)
        throw DataError("load_feature_file: bad magic at offset 0 in " + path);
    const int version = f.get();
    if (version != kFeatureVersion)
        throw DataError("load_feature_file: unsupported version " + std::to_string(version) +
                        " at offset 8");
    auto get32 = [&]() {
        std::uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    FeatureTable table;
    table.d_embed = get32();
    table.frames = get32();
    const std::uint32_t count = get32();
    if (!f) throw DataError("load_feature_file: truncated header");
    if (cfg) {
        if (table.d_embed != cfg->d_embed)
            throw DataError("load_feature_file: header d_embed " + std::to_string(table.d_embed) +
                            " != config " + std::to_string(cfg->d_embed));
        if (table.frames != cfg->frames)
            throw DataError("load_feature_file: header F " + std::to_string(table.frames) +
                            " != config F " + std::to_string(cfg->frames));
    }
    const std::size_t per_id = table.frames * table.d_embed;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::vector<Scalar> row(per_id);
        for (std::size_t j = 0; j < per_id; ++j) {
            float fv;
            f.read(reinterpret_cast<char*>(&fv), 4);
            if (!f) {
                const std::size_t expected = 21 + std::size_t(count) * per_id * 4;
                const std::size_t got = 21 + (std::size_t(i) * per_id + j) * 4;
                throw DataError("load_feature_file: truncated, expected " +
                                std::to_string(expected) + " bytes, got about " +
                                std::to_string(got));
            }
            row[j] = fv;
        }
        table.features.emplace_back(Shape{table.frames, table.d_embed}, std::move(row));
    }
    std::ifstream idx(path + ".ids");
    std::string line;
    while (std::getline(idx, line))
        if (!line.empty()) table.ids.push_back(line);
    if (table.ids.size() != count)
        throw DataError("load_feature_file: id index has " + std::to_string(table.ids.size()) +
                        " entries, header says " + std::to_string(count));
    return table;
}

// ---------------------------------------------------------------------------
// pseudo-caption TSV: video_id \t frame_index \t caption

inline void write_pseudo_caption_tsv(const std::string& path,
                                     const std::vector<std::pair<std::string,
                                                                 std::vector<std::string>>>& rows) {
    std::ofstream f(path);
    if (!f) throw DataError("write_pseudo_caption_tsv: cannot open " + path);
    for (const auto& [id, captions] : rows)
        for (std::size_t i = 0; i < captions.size(); ++i)
            f << id << '\t' << i << '\t' << captions[i] << "\n";
}

// id -> per-frame caption strings, ordered by frame index.
inline std::unordered_map<std::string, std::vector<std::string>> load_pseudo_caption_tsv(
    const std::string& path, std::size_t expected_frames) {
    std::ifstream f(path);
    if (!f) throw DataError("load_pseudo_caption_tsv: cannot open " + path);
    std::unordered_map<std::string, std::vector<std::string>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = line.find('\t', tab1 + 1);
        if (tab1 == std::string::npos || tab2 == std::string::npos)
            throw DataError("load_pseudo_caption_tsv: malformed line " + std::to_string(lineno));
        const std::string id = line.substr(0, tab1);
        const std::size_t frame = std::stoul(line.substr(tab1 + 1, tab2 - tab1 - 1));
        auto& caps = out[id];
        if (caps.size() <= frame) caps.resize(frame + 1);
        caps[frame] = line.substr(tab2 + 1);
    }
    for (const auto& [id, caps] : out)
        if (caps.size() != expected_frames)
            throw DataError("load_pseudo_caption_tsv: id " + id + " has " +
                            std::to_string(caps.size()) + " captions, expected " +
                            std::to_string(expected_frames));
    return out;
}

// ---------------------------------------------------------------------------
// batching

class BatchIterator {
public:
    BatchIterator(const Corpus& corpus, std::size_t batch, std::uint64_t seed, bool drop_last)
        : corpus_(&corpus), batch_(batch), seed_(seed), drop_last_(drop_last) {
        if (batch < 2) throw DataError("batch_iterator: batch must be >= 2");
        if (batch > corpus.records.size())
            throw DataError("batch_iterator: batch exceeds corpus size");
    }

    std::vector<Batch> epoch(std::size_t epoch_index) const {
        std::vector<std::size_t> order(corpus_->records.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(seed_ * 0x9e3779b97f4a7c15ull + epoch_index + 1);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<Batch> batches;
        for (std::size_t off = 0; off < order.size(); off += batch_) {
            const std::size_t n = std::min(batch_, order.size() - off);
            if (n < batch_ && drop_last_) break;
            if (n < 2) break;  // contrastive loss is degenerate below 2
            Batch b;
            for (std::size_t i = 0; i < n; ++i)
                b.samples.push_back(&corpus_->records[order[off + i]]);
            batches.push_back(std::move(b));
        }
        return batches;
    }

private:
    const Corpus* corpus_;
    std::size_t batch_;
    std::uint64_t seed_;
    bool drop_last_;
};

}  // namespace vtr
