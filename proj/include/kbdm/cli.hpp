#pragma once

// Command-line front end: a thin orchestration layer over the pipeline
// helpers. Every subcommand is deterministic given its flags, so reruns
// reproduce checkpoints and CSV files byte for byte.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kbdm/pgm.hpp"
#include "kbdm/pipeline.hpp"

namespace kbdm {
namespace cli {

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
};

struct Ctx {
    GlobalOpts g;
    std::vector<CLI::Option*> seed_opts;

    bool seed_given() const {
        for (const CLI::Option* o : seed_opts)
            if (o->count() > 0) return true;
        return false;
    }
};

inline void add_globals(CLI::App* cmd, Ctx& ctx) {
    ctx.seed_opts.push_back(
        cmd->add_option("--seed", ctx.g.seed, "Override the experiment seed"));
    cmd->add_option("--config", ctx.g.config_path, "Experiment config file (key = value lines)");
    cmd->add_option("--out-dir", ctx.g.out_dir, "Directory prefix for relative output paths");
}

// Relative output paths land under --out-dir; absolute paths are untouched.
inline std::string resolve_out(const Ctx& ctx, const std::string& path) {
    if (path.empty() || ctx.g.out_dir.empty()) return path;
    const std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (std::filesystem::path(ctx.g.out_dir) / p).string();
}

inline void ensure_parent_dir(const std::string& path) {
    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline ExperimentConfig load_experiment(const Ctx& ctx) {
    ExperimentConfig cfg;
    if (!ctx.g.config_path.empty()) cfg = load_config(ctx.g.config_path);
    if (ctx.seed_given()) cfg.seed = ctx.g.seed;
    return cfg;
}

// The training corpus follows the experiment seed so that every stage of one
// experiment sees the same data.
inline std::vector<SyntheticSample> train_corpus(const ExperimentConfig& cfg) {
    CorpusConfig c = cfg.corpus;
    c.seed = cfg.seed;
    return generate_corpus(c);
}

inline std::vector<std::string> split_prompt(const std::string& prompt) {
    std::vector<std::string> parts = detail::split_list(prompt);
    if (parts.empty()) throw ConfigError("prompt must contain at least one label component");
    return parts;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    ensure_parent_dir(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    os << content;
    if (!os) throw DataError("failed writing " + path);
}

inline std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

// --- gen-data ----------------------------------------------------------------

inline void cmd_gen_data(const Ctx& ctx, const std::string& out) {
    ExperimentConfig cfg = load_experiment(ctx);
    cfg.validate();
    const std::vector<SyntheticSample> corpus = train_corpus(cfg);

    const std::string dir = resolve_out(ctx, out);
    std::filesystem::create_directories(dir);

    std::ostringstream labels;
    labels << "index";
    const std::size_t label_count = corpus.empty() ? 0 : corpus.front().labels.size();
    for (std::size_t c = 0; c < label_count; ++c) labels << ",component" << (c + 1);
    labels << "\n";

    std::ostringstream keypoints;
    keypoints << "index,joint,x,y\n";

    char name[32];
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const SyntheticSample& s = corpus[i];
        std::snprintf(name, sizeof(name), "sample_%05zu.pgm", i);
        write_pgm((std::filesystem::path(dir) / name).string(), s.image);
        std::snprintf(name, sizeof(name), "pose_%05zu.pgm", i);
        write_pgm((std::filesystem::path(dir) / name).string(), s.pose_image);

        labels << i;
        for (const std::string& l : s.labels) labels << "," << l;
        labels << "\n";
        for (std::size_t j = 0; j < s.keypoints.size(); ++j)
            keypoints << i << "," << joint_names()[j] << "," << format_value(s.keypoints[j].x)
                      << "," << format_value(s.keypoints[j].y) << "\n";
    }
    write_text_file((std::filesystem::path(dir) / "labels.csv").string(), labels.str());
    write_text_file((std::filesystem::path(dir) / "keypoints.csv").string(), keypoints.str());
    std::cout << "wrote " << corpus.size() << " samples to " << dir << "\n";
}

// --- train-codebook ----------------------------------------------------------

inline void cmd_train_codebook(const Ctx& ctx, const std::string& out) {
    ExperimentConfig cfg = load_experiment(ctx);
    cfg.validate();
    const std::vector<SyntheticSample> corpus = train_corpus(cfg);
    const Tensor projection = default_feature_projection(cfg.kb_dim);
    const std::vector<ImageFeatureGrid> grids = corpus_features(corpus, cfg.patch, projection);

    Codebook cb(cfg.kb_entries, cfg.kb_dim);
    init_codebook_from_corpus(grids, cb);
    Rng rng = Rng(cfg.seed).split(streams::kCodebook);
    const TrainReport report = train_codebook(grids, cb, cfg.codebook_train, rng);

    const std::string path = resolve_out(ctx, out);
    ensure_parent_dir(path);
    Checkpoint ck;
    add_codebook_to(ck, cb, projection, cfg.patch);
    ck.save(path);

    std::ostringstream csv;
    csv << "epoch,loss\n";
    for (std::size_t e = 0; e < report.epoch_losses.size(); ++e)
        csv << (e + 1) << "," << format_value(report.epoch_losses[e]) << "\n";
    write_text_file(path + ".losses.csv", csv.str());
    std::cout << "codebook: " << cfg.kb_entries << " entries, final loss "
              << format_value(report.epoch_losses.back()) << " -> " << path << "\n";
}

// --- train-classifier --------------------------------------------------------

inline void cmd_train_classifier(const Ctx& ctx, const std::string& codebook_path,
                                 const std::string& out) {
    ExperimentConfig cfg = load_experiment(ctx);
    cfg.validate();
    const Checkpoint cb_ck = Checkpoint::load(codebook_path);
    const CodebookBundle bundle = read_codebook_from(cb_ck);
    cfg.patch = bundle.patch;  // the codebook fixes the feature geometry
    cfg.kb_dim = bundle.codebook.C;
    cfg.kb_entries = bundle.codebook.K;

    const std::vector<SyntheticSample> corpus = train_corpus(cfg);
    const std::vector<ImageFeatureGrid> grids =
        corpus_features(corpus, cfg.patch, bundle.projection);
    Rng rng = Rng(cfg.seed).split(streams::kClassifier);
    Classifier cls = Classifier::make(cfg.text_dim, cfg.classifier_hidden, cfg.token_count(),
                                      cfg.kb_entries, rng);
    const std::vector<TrainPair> pairs =
        make_classifier_pairs(corpus, grids, bundle.codebook, cfg.text_dim);
    const TrainReport report = train_classifier(pairs, cls, cfg.classifier_train);

    const std::string path = resolve_out(ctx, out);
    ensure_parent_dir(path);
    Checkpoint ck;
    add_codebook_to(ck, bundle.codebook, bundle.projection, bundle.patch);
    add_classifier_to(ck, cls);
    ck.save(path);

    std::ostringstream csv;
    csv << "epoch,loss,accuracy\n";
    for (std::size_t e = 0; e < report.epoch_losses.size(); ++e)
        csv << (e + 1) << "," << format_value(report.epoch_losses[e]) << ","
            << format_value(report.epoch_accuracy[e]) << "\n";
    write_text_file(path + ".losses.csv", csv.str());
    std::cout << "classifier: final loss " << format_value(report.epoch_losses.back())
              << ", index accuracy " << format_value(report.epoch_accuracy.back()) << " -> "
              << path << "\n";
}

// --- train-diffusion ---------------------------------------------------------

inline void cmd_train_diffusion(const Ctx& ctx, const std::string& codebook_path,
                                const std::string& classifier_path, const std::string& out,
                                bool no_kb, bool no_dm, bool no_dc) {
    ExperimentConfig cfg = load_experiment(ctx);
    if (no_kb) cfg.use_kb = false;
    if (no_dm) cfg.use_dm = false;
    if (no_dc) cfg.use_dc = false;
    cfg.validate();

    KbBundle kb;
    if (cfg.use_kb) {
        if (codebook_path.empty() || classifier_path.empty())
            throw ConfigError(
                "kb conditioning requires --codebook and --classifier checkpoints "
                "(or pass --no-kb)");
        const Checkpoint cb_ck = Checkpoint::load(codebook_path);
        const CodebookBundle bundle = read_codebook_from(cb_ck);
        const Checkpoint cls_ck = Checkpoint::load(classifier_path);
        kb.projection = bundle.projection;
        kb.codebook = bundle.codebook;
        kb.classifier = read_classifier_from(cls_ck);
        cfg.patch = bundle.patch;
        cfg.kb_dim = bundle.codebook.C;
        cfg.kb_entries = bundle.codebook.K;
        cfg.text_dim = kb.classifier.text_dim;
        if (kb.classifier.positions != cfg.token_count())
            throw DataError("classifier checkpoint covers " +
                            std::to_string(kb.classifier.positions) +
                            " grid positions but the codebook patch size implies " +
                            std::to_string(cfg.token_count()));
    }

    const std::vector<SyntheticSample> corpus = train_corpus(cfg);
    TrainedModel model = train_pipeline_diffusion(cfg, corpus, cfg.use_kb ? &kb : nullptr);

    const std::string path = resolve_out(ctx, out);
    ensure_parent_dir(path);
    Checkpoint ck;
    if (cfg.use_kb) {
        add_codebook_to(ck, kb.codebook, kb.projection, cfg.patch);
        add_classifier_to(ck, kb.classifier);
    }
    add_denoiser_to(ck, model.denoiser, cfg);
    ck.save(path);

    std::ostringstream csv;
    csv << "epoch,train_loss,probe_loss\n";
    csv << "0,," << format_value(model.report.probe_losses.front()) << "\n";
    for (std::size_t e = 0; e < model.report.epoch_losses.size(); ++e)
        csv << (e + 1) << "," << format_value(model.report.epoch_losses[e]) << ","
            << format_value(model.report.probe_losses[e + 1]) << "\n";
    write_text_file(path + ".losses.csv", csv.str());
    std::cout << "diffusion: probe loss " << format_value(model.report.probe_losses.front())
              << " -> " << format_value(model.report.probe_losses.back()) << " over "
              << model.report.epoch_losses.size() << " epochs -> " << path << "\n";
}

// --- sample ------------------------------------------------------------------

inline void cmd_sample(const Ctx& ctx, const std::string& ckpt_path, const std::string& prompt,
                       const std::string& pose_path, int steps, double cfg_scale,
                       const std::string& out) {
    const Checkpoint ck = Checkpoint::load(ckpt_path);
    const ModelBundle m = read_model_from(ck);

    Condition cond;
    cond.mask_mode = m.cfg.mask_mode;
    if (m.cfg.use_kb) {
        if (prompt.empty())
            throw ConfigError("this model is prompt-conditioned; pass --prompt \"a,b\"");
        const std::vector<std::string> comps = split_prompt(prompt);
        if (m.cfg.use_dc)
            cond.kb_features =
                retrieve_dc(m.kb.classifier, PromptComponents{comps}, m.kb.codebook, m.cfg.fusion);
        else
            cond.kb_features = retrieve(m.kb.classifier,
                                        embed_prompt(comps, m.kb.classifier.text_dim),
                                        m.kb.codebook);
    }
    if (m.cfg.use_dm) {
        if (pose_path.empty())
            throw ConfigError("this model is pose-conditioned; pass --pose <pgm>");
        const Tensor pose = read_pgm(pose_path);
        cond.pose_mask = pose_to_mask(pose, m.cfg.grid_side(), m.cfg.grid_side());
    }

    const std::uint64_t seed = ctx.g.seed;  // defaults to 0 when --seed absent
    Rng rng = Rng(seed).split(streams::kSampling);
    const Tensor image = ddim_sample_image(m.denoiser, m.schedule, cond, steps, rng, cfg_scale,
                                           kImageSize, kImageSize, m.cfg.patch);
    const std::string path = resolve_out(ctx, out);
    ensure_parent_dir(path);
    write_pgm(path, image);
    std::cout << "sampled " << steps << " steps (seed " << seed << ") -> " << path << "\n";
}

// --- eval --------------------------------------------------------------------

inline void cmd_eval(const Ctx& ctx, const std::string& ckpt_path, const std::string& judge_path,
                     const std::string& out) {
    ExperimentConfig cfg = load_experiment(ctx);
    cfg.validate();
    const Checkpoint ck = Checkpoint::load(ckpt_path);
    const ModelBundle m = read_model_from(ck);

    // Model switches and geometry come from the checkpoint; the config supplies
    // the evaluation protocol (held-out corpus recipe, counts, thresholds).
    ExperimentConfig e = cfg;
    e.use_kb = m.cfg.use_kb;
    e.use_dm = m.cfg.use_dm;
    e.use_dc = m.cfg.use_dc;
    e.mask_mode = m.cfg.mask_mode;
    e.fusion = m.cfg.fusion;
    e.patch = m.cfg.patch;
    e.kb_dim = m.cfg.kb_dim;
    e.kb_entries = m.cfg.kb_entries;
    if (m.cfg.use_kb) e.text_dim = m.kb.classifier.text_dim;

    const KbBundle* judge = nullptr;
    KbBundle external;
    if (m.cfg.use_kb) {
        judge = &m.kb;
    } else if (!judge_path.empty()) {
        const Checkpoint jck = Checkpoint::load(judge_path);
        const CodebookBundle bundle = read_codebook_from(jck);
        external.projection = bundle.projection;
        external.codebook = bundle.codebook;
        external.classifier = read_classifier_from(jck);
        judge = &external;
        if (bundle.patch != e.patch)
            throw DataError("judge checkpoint patch size disagrees with the model");
    } else {
        throw ConfigError(
            "label consistency needs a knowledge base: the model has none, pass --judge <ckpt>");
    }

    const std::vector<SyntheticSample> eval_corpus = make_eval_corpus(e);
    const TrainedModel model{m.denoiser, m.schedule, {}};
    const std::vector<Tensor> generated =
        sample_for_eval(e, model, eval_corpus, m.cfg.use_kb ? &m.kb : nullptr);
    const MetricReport r = evaluate_samples(e, generated, eval_corpus, *judge);

    std::ostringstream csv;
    csv << "pose_pck,frechet_proxy,label_consistency\n"
        << format_metric(r.pose_pck) << "," << format_metric(r.frechet_proxy) << ","
        << format_metric(r.label_consistency) << "\n";
    std::cout << csv.str();
    if (!out.empty()) write_text_file(resolve_out(ctx, out), csv.str());
}

// --- ablate ------------------------------------------------------------------

inline std::string ablation_report_text(const AblationTable& mean) {
    const MetricReport base = mean.row("baseline").metrics;
    const MetricReport kb = mean.row("+KB").metrics;
    const MetricReport kbdm_row = mean.row("+KB+DM").metrics;
    const MetricReport dc = mean.row("+KB+DM+D&C").metrics;

    const double dm_gain = kbdm_row.pose_pck - kb.pose_pck;
    const double dc_gain = dc.label_consistency - kbdm_row.label_consistency;
    const bool base_lowest =
        base.pose_pck <= kb.pose_pck && base.pose_pck <= kbdm_row.pose_pck &&
        base.pose_pck <= dc.pose_pck;

    std::ostringstream os;
    os << "pose_pck(+KB+DM) - pose_pck(+KB) = " << format_value(dm_gain) << " ("
       << (dm_gain >= 0.0 ? "holds" : "NOT CONFIRMED at this scale") << ")\n";
    os << "label_consistency(+KB+DM+D&C) - label_consistency(+KB+DM) = " << format_value(dc_gain)
       << " (" << (dc_gain >= 0.0 ? "holds" : "NOT CONFIRMED at this scale") << ")\n";
    os << "baseline pose_pck lowest: " << (base_lowest ? "holds" : "NOT CONFIRMED at this scale")
       << "\n";
    os << "direction overall: "
       << ((dm_gain >= 0.0 && dc_gain >= 0.0 && base_lowest) ? "CONFIRMED"
                                                             : "NOT CONFIRMED at this scale")
       << "\n";
    return os.str();
}

inline void cmd_ablate(const Ctx& ctx, const std::string& out) {
    ExperimentConfig cfg = load_experiment(ctx);
    cfg.validate();
    std::vector<AblationTable> per_seed;
    const AblationTable mean = run_ablation_seeds(cfg, &per_seed);

    const std::string csv = ablation_csv(mean);
    std::cout << csv;
    const std::string report = ablation_report_text(mean);
    std::cout << report;

    if (!out.empty()) {
        const std::string path = resolve_out(ctx, out);
        write_text_file(path, csv);
        for (std::size_t i = 0; i < per_seed.size(); ++i)
            write_text_file(path + ".seed" + std::to_string(cfg.ablation_seeds[i]) + ".csv",
                            ablation_csv(per_seed[i]));
        write_text_file(path + ".report.txt", report);
    }
}

// --- inspect-gate ------------------------------------------------------------

inline void cmd_inspect_gate(const Ctx& ctx, const std::string& ckpt_path,
                             const std::string& out) {
    const Checkpoint ck = Checkpoint::load(ckpt_path);
    const ModelBundle m = read_model_from(ck);
    std::ostringstream csv;
    csv << "timestep,g\n";
    for (int t = 0; t < m.schedule.steps; ++t) {
        const TimestepEmbedding temb = timestep_embedding(t, m.cfg.temb_dim);
        csv << t << "," << format_value(compute_gate(m.denoiser.gate, temb)) << "\n";
    }
    std::cout << csv.str();
    if (!out.empty()) write_text_file(resolve_out(ctx, out), csv.str());
}

// --- query-kb ----------------------------------------------------------------

inline void cmd_query_kb(const Ctx& ctx, const std::string& ckpt_path, const std::string& prompt,
                         const std::string& fusion_str, const std::string& out) {
    const Checkpoint ck = Checkpoint::load(ckpt_path);
    if (!ck.has("cb.entries") || !ck.has("meta.text_dim"))
        throw ConfigError("checkpoint contains no knowledge base (train-classifier output needed)");
    const CodebookBundle bundle = read_codebook_from(ck);
    const Classifier cls = read_classifier_from(ck);
    const std::vector<std::string> comps = split_prompt(prompt);
    const Fusion fusion = parse_fusion(fusion_str);

    const Tensor fused = retrieve_dc(cls, PromptComponents{comps}, bundle.codebook, fusion);
    const std::size_t side = kImageSize / bundle.patch;
    const ImageFeatureGrid grid{fused, side, side};
    const TokenIndexVector indices = assign_indices(pairwise_sq_distance(grid, bundle.codebook));

    std::ostringstream csv;
    csv << "position,index\n";
    for (std::size_t p = 0; p < indices.size(); ++p) csv << p << "," << indices[p] << "\n";
    std::cout << csv.str();
    if (!out.empty()) write_text_file(resolve_out(ctx, out), csv.str());
}

// --- wiring ------------------------------------------------------------------

inline int run_cli(int argc, char** argv) {
    Ctx ctx;
    CLI::App app{"Knowledge-base guided pose-conditioned diffusion, desk scale"};
    app.require_subcommand(1);
    add_globals(&app, ctx);

    std::string out, codebook_path, classifier_path, ckpt_path, prompt, pose_path, judge_path;
    std::string fusion_str = "mean";
    int steps = 50;
    double cfg_scale = 1.0;
    bool no_kb = false, no_dm = false, no_dc = false;

    CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic stick-figure corpus");
    add_globals(gen, ctx);
    gen->add_option("--out", out, "Output directory")->required();
    gen->callback([&] { cmd_gen_data(ctx, out); });

    CLI::App* tcb = app.add_subcommand("train-codebook", "Train the visual codebook");
    add_globals(tcb, ctx);
    tcb->add_option("--out", out, "Checkpoint path")->required();
    tcb->callback([&] { cmd_train_codebook(ctx, out); });

    CLI::App* tcl = app.add_subcommand("train-classifier", "Train the text-query classifier");
    add_globals(tcl, ctx);
    tcl->add_option("--codebook", codebook_path, "Codebook checkpoint")->required();
    tcl->add_option("--out", out, "Checkpoint path")->required();
    tcl->callback([&] { cmd_train_classifier(ctx, codebook_path, out); });

    CLI::App* tdf = app.add_subcommand("train-diffusion", "Train the conditional denoiser");
    add_globals(tdf, ctx);
    tdf->add_option("--codebook", codebook_path, "Codebook checkpoint");
    tdf->add_option("--classifier", classifier_path, "Classifier checkpoint");
    tdf->add_option("--out", out, "Checkpoint path")->required();
    tdf->add_flag("--no-kb", no_kb, "Disable knowledge-base conditioning");
    tdf->add_flag("--no-dm", no_dm, "Disable dynamic pose masking");
    tdf->add_flag("--no-dc", no_dc, "Disable decompose-and-combine retrieval");
    tdf->callback([&] {
        cmd_train_diffusion(ctx, codebook_path, classifier_path, out, no_kb, no_dm, no_dc);
    });

    CLI::App* smp = app.add_subcommand("sample", "Sample one image from a trained model");
    add_globals(smp, ctx);
    smp->add_option("--ckpt", ckpt_path, "Diffusion checkpoint")->required();
    smp->add_option("--prompt", prompt, "Comma-separated label components");
    smp->add_option("--pose", pose_path, "Pose-skeleton PGM");
    smp->add_option("--steps", steps, "DDIM steps")->check(CLI::PositiveNumber);
    smp->add_option("--cfg", cfg_scale, "Classifier-free guidance scale (1 = off)");
    smp->add_option("--out", out, "Output PGM path")->required();
    smp->callback([&] { cmd_sample(ctx, ckpt_path, prompt, pose_path, steps, cfg_scale, out); });

    CLI::App* evl = app.add_subcommand("eval", "Evaluate a checkpoint on a held-out corpus");
    add_globals(evl, ctx);
    evl->add_option("--ckpt", ckpt_path, "Diffusion checkpoint")->required();
    evl->add_option("--judge", judge_path, "Classifier checkpoint for label consistency "
                                           "(needed only for models without a knowledge base)");
    evl->add_option("--out", out, "Metrics CSV path");
    evl->callback([&] { cmd_eval(ctx, ckpt_path, judge_path, out); });

    CLI::App* abl = app.add_subcommand("ablate", "Run the four-row adapter ablation");
    add_globals(abl, ctx);
    abl->add_option("--out", out, "Mean-table CSV path (per-seed CSVs written alongside)");
    abl->callback([&] { cmd_ablate(ctx, out); });

    CLI::App* gate = app.add_subcommand("inspect-gate", "Print the mask gate over all timesteps");
    add_globals(gate, ctx);
    gate->add_option("--ckpt", ckpt_path, "Diffusion checkpoint")->required();
    gate->add_option("--out", out, "CSV path (also printed)");
    gate->callback([&] { cmd_inspect_gate(ctx, ckpt_path, out); });

    CLI::App* qkb = app.add_subcommand("query-kb", "Retrieve codebook indices for a prompt");
    add_globals(qkb, ctx);
    qkb->add_option("--ckpt", ckpt_path, "Classifier checkpoint")->required();
    qkb->add_option("--prompt", prompt, "Comma-separated label components")->required();
    qkb->add_option("--fusion", fusion_str, "Fusion mode: mean, sum, or select");
    qkb->add_option("--out", out, "CSV path (also printed)");
    qkb->callback([&] { cmd_query_kb(ctx, ckpt_path, prompt, fusion_str, out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace cli
}  // namespace kbdm
