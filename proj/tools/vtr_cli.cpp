// Command-line driver: train / eval / ablate / count-params / gen-data.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vtr/trainer.hpp"

namespace {

struct CliOptions {
    vtr::RunConfig run;
    int caption_bins = 8;
    std::string similarity = "fine_grained";
    std::string scale = "desk";  // desk | clip_b32
    bool dsl = false;
    double dsl_temperature = 0.01;
};

void add_run_options(CLI::App& cmd, CliOptions& o) {
    cmd.fallthrough();
    cmd.set_config("--config", "", "key=value file mirroring these options");
    cmd.add_option("--preset", o.run.preset,
                   "lora|b1|b2|b3|full|video_level|ivfusion_no_adapter")
        ->capture_default_str();
    cmd.add_option("--seed", o.run.seed)->capture_default_str();
    cmd.add_option("--data_seed", o.run.data_seed)->capture_default_str();
    cmd.add_option("--out_dir", o.run.out_dir)->capture_default_str();
    cmd.add_option("--learning_rate", o.run.learning_rate)->capture_default_str();
    cmd.add_option("--weight_decay", o.run.weight_decay)->capture_default_str();
    cmd.add_option("--epochs", o.run.epochs)->capture_default_str();
    cmd.add_option("--batch_size", o.run.batch_size)->capture_default_str();
    cmd.add_option("--corpus_size", o.run.corpus_size)->capture_default_str();
    cmd.add_option("--eval_size", o.run.eval_size)->capture_default_str();
    cmd.add_option("--latent_dim", o.run.latent_dim)->capture_default_str();
    cmd.add_option("--noise_scale", o.run.noise_scale)->capture_default_str();
    cmd.add_option("--caption_bins", o.caption_bins)->capture_default_str();
    cmd.add_option("--similarity", o.similarity, "fine_grained|paired|video_level_avg|none")
        ->capture_default_str();
    cmd.add_flag("--drop_last,!--no-drop_last", o.run.drop_last)->capture_default_str();
    cmd.add_option("--alpha", o.run.model.alpha, "image-level loss weight (set by preset)");
    cmd.add_option("--beta", o.run.model.beta, "distillation weight (set by preset)");
}

vtr::RunConfig resolved(const CliOptions& o) {
    vtr::RunConfig cfg = o.run;
    double alpha = cfg.model.alpha, beta = cfg.model.beta;
    bool alpha_set = alpha != vtr::ModelConfig().alpha, beta_set = beta != vtr::ModelConfig().beta;
    cfg = vtr::apply_preset(cfg, cfg.preset);
    if (alpha_set) cfg.model.alpha = alpha;  // explicit flags win over the preset
    if (beta_set) cfg.model.beta = beta;
    cfg.model.validate();
    return cfg;
}

vtr::SimilarityMode sim_mode(const CliOptions& o, const vtr::RunConfig& cfg) {
    if (!cfg.model.uses_pseudo_captions()) return vtr::SimilarityMode::None;
    return vtr::similarity_mode_from_string(o.similarity);
}

vtr::Corpus make_corpus(const CliOptions& o, const vtr::RunConfig& cfg) {
    return vtr::generate_synthetic_corpus(cfg.data_seed, cfg.corpus_size, cfg.latent_dim,
                                          cfg.noise_scale, cfg.model, o.caption_bins);
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw vtr::DataError("cannot write " + path);
    f << content;
}

std::string metrics_record(const vtr::EvalResult& ev, const vtr::RunConfig& cfg,
                           std::size_t params) {
    std::ostringstream os;
    os << "preset=" << cfg.preset << "\nseed=" << cfg.seed << "\ntrainable_params=" << params
       << "\n"
       << ev.t2v.report("t2v") << ev.v2t.report("v2t");
    return os.str();
}

int cmd_train(const CliOptions& o) {
    vtr::RunConfig cfg = resolved(o);
    std::filesystem::create_directories(cfg.out_dir);
    vtr::Corpus corpus = make_corpus(o, cfg);
    vtr::TrainResult result = vtr::run_training(cfg, corpus, sim_mode(o, cfg), &std::cout);
    write_file(cfg.out_dir + "/trace.csv", vtr::trace_csv(result.trace));
    if (result.diverged) {
        std::cerr << "training diverged; last finite step " << result.last_finite_step << "\n";
        return 1;
    }
    vtr::save_checkpoint(cfg.out_dir + "/checkpoint.bin", result.model);
    const std::size_t held_out = std::min(cfg.eval_size, corpus.records.size());
    vtr::EvalResult ev = vtr::run_evaluation(
        result.model, corpus, corpus.records.size() - held_out, held_out,
        o.dsl ? vtr::Postprocess::DSL : vtr::Postprocess::None, o.dsl_temperature);
    const std::size_t params =
        vtr::count_trainable_params(cfg.model, vtr::preset_flags(cfg.model));
    const std::string record = metrics_record(ev, cfg, params);
    write_file(cfg.out_dir + "/metrics.txt", record);
    std::cout << record;
    return 0;
}

int cmd_eval(const CliOptions& o, const std::string& checkpoint) {
    vtr::RunConfig cfg = resolved(o);
    vtr::Model model(cfg.model, cfg.seed);
    vtr::load_checkpoint(checkpoint, model);
    vtr::Corpus corpus = make_corpus(o, cfg);
    const std::size_t held_out = std::min(cfg.eval_size, corpus.records.size());
    vtr::EvalResult ev = vtr::run_evaluation(
        model, corpus, corpus.records.size() - held_out, held_out,
        o.dsl ? vtr::Postprocess::DSL : vtr::Postprocess::None, o.dsl_temperature);
    const std::size_t params =
        vtr::count_trainable_params(cfg.model, vtr::preset_flags(cfg.model));
    std::cout << metrics_record(ev, cfg, params);
    return 0;
}

int cmd_ablate(const CliOptions& o, const std::vector<std::string>& presets) {
    std::ostringstream table;
    table << std::left << std::setw(22) << "preset" << std::right << std::setw(10) << "params"
          << std::setw(8) << "R@1" << std::setw(8) << "R@5" << std::setw(8) << "R@10"
          << std::setw(8) << "Rsum" << std::setw(8) << "MnR" << "\n";
    for (const std::string& name : presets) {
        CliOptions po = o;
        po.run.preset = name;
        vtr::RunConfig cfg = resolved(po);
        vtr::Corpus corpus = make_corpus(po, cfg);
        vtr::TrainResult result = vtr::run_training(cfg, corpus, sim_mode(po, cfg));
        if (result.diverged) {
            std::cerr << name << ": diverged at step " << result.last_finite_step << "\n";
            return 1;
        }
        const std::size_t held_out = std::min(cfg.eval_size, corpus.records.size());
        vtr::EvalResult ev =
            vtr::run_evaluation(result.model, corpus, corpus.records.size() - held_out, held_out);
        table << std::left << std::setw(22) << name << std::right << std::setw(10)
              << vtr::count_trainable_params(cfg.model, vtr::preset_flags(cfg.model))
              << std::fixed << std::setprecision(1) << std::setw(8) << ev.t2v.r_at.at(1)
              << std::setw(8) << ev.t2v.r_at.at(5) << std::setw(8) << ev.t2v.r_at.at(10)
              << std::setw(8) << ev.t2v.r_sum << std::setw(8) << ev.t2v.mnr << "\n";
        std::cout << "done: " << name << "\n";
    }
    std::cout << table.str();
    if (!o.run.out_dir.empty()) {
        std::filesystem::create_directories(o.run.out_dir);
        write_file(o.run.out_dir + "/ablation.txt", table.str());
    }
    return 0;
}

int cmd_count_params(const CliOptions& o) {
    vtr::RunConfig cfg = o.run;
    if (o.scale == "clip_b32")
        cfg.model = vtr::ModelConfig::clip_b32();
    else if (o.scale != "desk")
        throw CLI::ValidationError("--scale must be desk or clip_b32");
    cfg = vtr::apply_preset(cfg, cfg.preset);
    std::cout << "preset=" << cfg.preset << " scale=" << o.scale << " trainable="
              << vtr::count_trainable_params(cfg.model, vtr::preset_flags(cfg.model)) << "\n";
    return 0;
}

int cmd_gen_data(const CliOptions& o) {
    vtr::RunConfig cfg = resolved(o);
    std::filesystem::create_directories(cfg.out_dir);
    vtr::Corpus corpus = make_corpus(o, cfg);

    // Pseudo captions as the TSV interchange format (symbol-stream captions).
    std::vector<std::pair<std::string, std::vector<std::string>>> rows;
    for (const auto& rec : corpus.records) {
        std::vector<std::string> caps;
        for (const auto& sub : rec.frame_latents)
            caps.push_back(vtr::detail::latent_symbols(sub, o.caption_bins));
        rows.emplace_back(rec.video_id, caps);
    }
    vtr::write_pseudo_caption_tsv(cfg.out_dir + "/pseudo_captions.tsv", rows);

    // Frozen-start per-frame features in the binary feature format.
    vtr::Model model(cfg.model, cfg.seed);
    vtr::FeatureTable table;
    table.d_embed = cfg.model.d_embed;
    table.frames = cfg.model.frames;
    for (const auto& rec : corpus.records) {
        table.ids.push_back(rec.video_id);
        table.features.push_back(model.encode_video(rec).per_frame.detach());
    }
    vtr::write_feature_file(cfg.out_dir + "/features.bin", table);
    std::cout << "wrote " << corpus.records.size() << " records to " << cfg.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"parameter-efficient video-text retrieval, desk scale"};
    app.require_subcommand(1);
    CliOptions o;

    add_run_options(app, o);
    app.add_flag("--dsl", o.dsl, "dual-softmax re-ranking at evaluation");
    app.add_option("--dsl_temperature", o.dsl_temperature)->capture_default_str();
    app.add_option("--scale", o.scale, "desk|clip_b32 (count-params)")->capture_default_str();

    CLI::App* train = app.add_subcommand("train", "train a preset on the synthetic corpus");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string checkpoint;
    eval->add_option("--checkpoint", checkpoint, "path saved by train")->required();
    CLI::App* ablate = app.add_subcommand("ablate", "train and compare presets");
    std::vector<std::string> presets = {"lora", "b1", "b2", "b3", "full"};
    ablate->add_option("--presets", presets, "presets to compare")->delimiter(',');
    CLI::App* count = app.add_subcommand("count-params", "trainable parameter accounting");
    CLI::App* gen = app.add_subcommand("gen-data", "write the corpus interchange files");

    CLI11_PARSE(app, argc, argv);
    if (ablate->parsed() && app.get_option("--seed")->count() == 0) {
        std::cerr << "ablate requires an explicit --seed\n";
        return 1;
    }
    try {
        if (train->parsed()) return cmd_train(o);
        if (eval->parsed()) return cmd_eval(o, checkpoint);
        if (ablate->parsed()) return cmd_ablate(o, presets);
        if (count->parsed()) return cmd_count_params(o);
        if (gen->parsed()) return cmd_gen_data(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
