#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "kbdm/checkpoint.hpp"
#include "kbdm/classifier.hpp"
#include "kbdm/codebook.hpp"
#include "kbdm/config.hpp"
#include "kbdm/diffusion.hpp"
#include "kbdm/metrics.hpp"
#include "kbdm/synthdata.hpp"

namespace kbdm {

// Stream labels for deriving independent rng streams from one experiment seed.
namespace streams {
constexpr std::uint64_t kCodebook = 0x01;
constexpr std::uint64_t kClassifier = 0x02;
constexpr std::uint64_t kDenoiserInit = 0x03;
constexpr std::uint64_t kSampling = 0x04;
constexpr std::uint64_t kEvalCorpus = 0x05;
}  // namespace streams

// One fixed projection seed so the patch-feature map is a single frozen
// function shared by training, retrieval, and every metric.
constexpr std::uint64_t kFeatureProjectionSeed = 0x70726f6aull;

inline Tensor default_feature_projection(std::size_t dim) {
    return make_feature_projection(dim, kFeatureProjectionSeed);
}

/// Frozen knowledge base: trained codebook + text-query classifier + the
/// feature map both were trained against.
struct KbBundle {
    Tensor projection;  // [4 x C]
    Codebook codebook;
    Classifier classifier;
    TrainReport codebook_report;
    TrainReport classifier_report;

    KbBundle() : codebook(2, 1) {}
};

inline std::vector<ImageFeatureGrid> corpus_features(const std::vector<SyntheticSample>& corpus,
                                                     std::size_t patch, const Tensor& projection) {
    std::vector<ImageFeatureGrid> grids;
    grids.reserve(corpus.size());
    for (const SyntheticSample& s : corpus) grids.push_back(patch_features(s.image, patch, projection));
    return grids;
}

// Classifier supervision: the joint prompt plus each single component, all
// targeting the sample's quantized indices. Component pairs are what give
// decomposed retrieval something to answer with.
inline std::vector<TrainPair> make_classifier_pairs(const std::vector<SyntheticSample>& corpus,
                                                    const std::vector<ImageFeatureGrid>& grids,
                                                    const Codebook& cb, std::size_t text_dim,
                                                    bool include_components = true) {
    std::vector<TrainPair> pairs;
    pairs.reserve(corpus.size() * (include_components ? 3 : 1));
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const TokenIndexVector idx = assign_indices(pairwise_sq_distance(grids[i], cb));
        pairs.push_back({embed_prompt(corpus[i].labels, text_dim), idx});
        if (include_components)
            for (const std::string& c : corpus[i].labels)
                pairs.push_back({embed_text(c, text_dim), idx});
    }
    return pairs;
}

inline KbBundle train_kb(const ExperimentConfig& cfg, const std::vector<SyntheticSample>& corpus) {
    if (corpus.empty()) throw ConfigError("train_kb: empty corpus");
    KbBundle kb;
    kb.projection = default_feature_projection(cfg.kb_dim);
    const std::vector<ImageFeatureGrid> grids = corpus_features(corpus, cfg.patch, kb.projection);

    kb.codebook = Codebook(cfg.kb_entries, cfg.kb_dim);
    init_codebook_from_corpus(grids, kb.codebook);
    Rng cb_rng = Rng(cfg.seed).split(streams::kCodebook);
    kb.codebook_report = train_codebook(grids, kb.codebook, cfg.codebook_train, cb_rng);

    Rng cls_rng = Rng(cfg.seed).split(streams::kClassifier);
    kb.classifier = Classifier::make(cfg.text_dim, cfg.classifier_hidden, cfg.token_count(),
                                     cfg.kb_entries, cls_rng);
    const std::vector<TrainPair> pairs =
        make_classifier_pairs(corpus, grids, kb.codebook, cfg.text_dim);
    kb.classifier_report = train_classifier(pairs, kb.classifier, cfg.classifier_train);
    return kb;
}

// Conditioning for one sample under the experiment's adapter switches. The
// knowledge base may be null only when kb conditioning is off.
inline Condition make_condition(const ExperimentConfig& cfg, const SyntheticSample& sample,
                                const KbBundle* kb) {
    Condition cond;
    cond.mask_mode = cfg.mask_mode;
    if (cfg.use_kb) {
        if (!kb) throw ConfigError("kb conditioning enabled but no trained knowledge base given");
        if (cfg.use_dc) {
            cond.kb_features = retrieve_dc(kb->classifier, PromptComponents{sample.labels},
                                           kb->codebook, cfg.fusion);
        } else {
            cond.kb_features = retrieve(kb->classifier,
                                        embed_prompt(sample.labels, kb->classifier.text_dim),
                                        kb->codebook);
        }
    }
    if (cfg.use_dm)
        cond.pose_mask = pose_to_mask(sample.pose_image, cfg.grid_side(), cfg.grid_side());
    return cond;
}

inline std::vector<DiffusionExample> make_diffusion_examples(
    const ExperimentConfig& cfg, const std::vector<SyntheticSample>& corpus, const KbBundle* kb) {
    std::vector<DiffusionExample> examples;
    examples.reserve(corpus.size());
    for (const SyntheticSample& s : corpus)
        examples.push_back({encode_latent(s.image, cfg.patch), make_condition(cfg, s, kb)});
    return examples;
}

struct TrainedModel {
    Denoiser denoiser;
    NoiseSchedule schedule;
    DiffusionTrainReport report;
};

inline TrainedModel train_pipeline_diffusion(const ExperimentConfig& cfg,
                                             const std::vector<SyntheticSample>& corpus,
                                             const KbBundle* kb) {
    cfg.validate();
    TrainedModel m;
    m.schedule = cfg.schedule();
    Rng init = Rng(cfg.seed).split(streams::kDenoiserInit);
    m.denoiser = Denoiser::make(cfg.denoiser_config(), init);
    const std::vector<DiffusionExample> examples = make_diffusion_examples(cfg, corpus, kb);
    m.report = train_diffusion(m.denoiser, examples, m.schedule, cfg.diffusion_train, cfg.seed);
    return m;
}

inline std::vector<SyntheticSample> make_eval_corpus(const ExperimentConfig& cfg) {
    CorpusConfig ec = cfg.corpus;
    ec.count = cfg.eval_count;
    ec.seed = cfg.seed ^ 0x6576616cull;  // distinct conditions, same distribution
    return generate_corpus(ec);
}

// Samples one image per held-out condition.
inline std::vector<Tensor> sample_for_eval(const ExperimentConfig& cfg, const TrainedModel& model,
                                           const std::vector<SyntheticSample>& eval_corpus,
                                           const KbBundle* kb) {
    std::vector<Tensor> images;
    images.reserve(eval_corpus.size());
    Rng root = Rng(cfg.seed).split(streams::kSampling);
    for (std::size_t i = 0; i < eval_corpus.size(); ++i) {
        const Condition cond = make_condition(cfg, eval_corpus[i], kb);
        images.push_back(ddim_sample_image(model.denoiser, model.schedule, cond, cfg.sample_steps,
                                           root.split(i), cfg.cfg_scale, kImageSize, kImageSize,
                                           cfg.patch));
    }
    return images;
}

struct MetricReport {
    double pose_pck = 0.0;
    double frechet_proxy = 0.0;
    double label_consistency = 0.0;
};

// The consistency judge is the per-seed trained knowledge base, shared across
// every ablation row so scores are comparable.
inline MetricReport evaluate_samples(const ExperimentConfig& cfg,
                                     const std::vector<Tensor>& generated,
                                     const std::vector<SyntheticSample>& conditions,
                                     const KbBundle& judge) {
    MetricReport r;
    r.pose_pck = eval_pose_pck(generated, conditions, cfg.pck_threshold);
    std::vector<Tensor> reference;
    reference.reserve(conditions.size());
    for (const SyntheticSample& s : conditions) reference.push_back(s.image);
    r.frechet_proxy = eval_frechet_proxy(generated, reference, cfg.patch, judge.projection);
    std::vector<PromptComponents> prompts;
    prompts.reserve(conditions.size());
    for (const SyntheticSample& s : conditions) prompts.push_back({s.labels});
    r.label_consistency = eval_label_consistency(generated, prompts, judge.classifier,
                                                 judge.codebook, cfg.patch, judge.projection);
    return r;
}

// --- ablation ----------------------------------------------------------------

struct AblationRow {
    std::string name;
    bool kb = false, dm = false, dc = false;
    MetricReport metrics;
};

struct AblationTable {
    std::vector<AblationRow> rows;

    const AblationRow& row(const std::string& name) const {
        for (const AblationRow& r : rows)
            if (r.name == name) return r;
        throw ConfigError("no ablation row named " + name);
    }
};

inline std::vector<AblationRow> ablation_grid() {
    return {
        {"baseline", false, false, false, {}},
        {"+KB", true, false, false, {}},
        {"+KB+DM", true, true, false, {}},
        {"+KB+DM+D&C", true, true, true, {}},
    };
}

// Trains and scores the adapter grid under one seed. The knowledge base is
// trained once and shared: its stages never see the dm/dc switches.
inline AblationTable run_ablation(const ExperimentConfig& base) {
    base.validate();
    const std::vector<SyntheticSample> corpus = generate_corpus([&] {
        CorpusConfig c = base.corpus;
        c.seed = base.seed;
        return c;
    }());
    const std::vector<SyntheticSample> eval_corpus = make_eval_corpus(base);
    const KbBundle kb = train_kb(base, corpus);
    AblationTable table;
    for (AblationRow row : ablation_grid()) {
        ExperimentConfig cfg = base;
        cfg.use_kb = row.kb;
        cfg.use_dm = row.dm;
        cfg.use_dc = row.dc;
        const KbBundle* kb_ptr = row.kb ? &kb : nullptr;
        const TrainedModel model = train_pipeline_diffusion(cfg, corpus, kb_ptr);
        const std::vector<Tensor> generated = sample_for_eval(cfg, model, eval_corpus, kb_ptr);
        row.metrics = evaluate_samples(cfg, generated, eval_corpus, kb);
        table.rows.push_back(std::move(row));
    }
    return table;
}

// Means each metric across per-seed ablation tables.
inline AblationTable mean_tables(const std::vector<AblationTable>& tables) {
    if (tables.empty()) throw ConfigError("mean_tables: no tables");
    AblationTable mean = tables[0];
    for (std::size_t t = 1; t < tables.size(); ++t) {
        for (std::size_t r = 0; r < mean.rows.size(); ++r) {
            mean.rows[r].metrics.pose_pck += tables[t].rows[r].metrics.pose_pck;
            mean.rows[r].metrics.frechet_proxy += tables[t].rows[r].metrics.frechet_proxy;
            mean.rows[r].metrics.label_consistency += tables[t].rows[r].metrics.label_consistency;
        }
    }
    const double inv = 1.0 / static_cast<double>(tables.size());
    for (AblationRow& r : mean.rows) {
        r.metrics.pose_pck *= inv;
        r.metrics.frechet_proxy *= inv;
        r.metrics.label_consistency *= inv;
    }
    return mean;
}

inline AblationTable run_ablation_seeds(const ExperimentConfig& base,
                                        std::vector<AblationTable>* per_seed = nullptr) {
    std::vector<AblationTable> tables;
    for (std::uint64_t seed : base.ablation_seeds) {
        ExperimentConfig cfg = base;
        cfg.seed = seed;
        tables.push_back(run_ablation(cfg));
    }
    if (per_seed) *per_seed = tables;
    return mean_tables(tables);
}

inline std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string ablation_csv(const AblationTable& table) {
    std::string out = "config,pose_pck,frechet_proxy,label_consistency\n";
    for (const AblationRow& r : table.rows) {
        out += r.name;
        out += ',' + format_metric(r.metrics.pose_pck);
        out += ',' + format_metric(r.metrics.frechet_proxy);
        out += ',' + format_metric(r.metrics.label_consistency);
        out += '\n';
    }
    return out;
}

// --- checkpoint layout -------------------------------------------------------

inline void add_scalar_once(Checkpoint& ck, const std::string& name, double v) {
    if (!ck.has(name)) ck.add_scalar(name, v);
}

inline void add_codebook_to(Checkpoint& ck, const Codebook& cb, const Tensor& projection,
                            std::size_t patch) {
    ck.add_scalar("meta.kb_entries", static_cast<double>(cb.K));
    add_scalar_once(ck, "meta.kb_dim", static_cast<double>(cb.C));
    add_scalar_once(ck, "meta.patch", static_cast<double>(patch));
    ck.add("cb.entries", cb.entries.value);
    ck.add("feat.projection", projection);
}

struct CodebookBundle {
    Codebook codebook;
    Tensor projection;
    std::size_t patch = 4;

    CodebookBundle() : codebook(2, 1) {}
};

inline CodebookBundle read_codebook_from(const Checkpoint& ck) {
    CodebookBundle b;
    const auto k = static_cast<std::size_t>(ck.scalar("meta.kb_entries"));
    const auto c = static_cast<std::size_t>(ck.scalar("meta.kb_dim"));
    b.patch = static_cast<std::size_t>(ck.scalar("meta.patch"));
    b.codebook = Codebook(k, c);
    const Tensor& entries = ck.require("cb.entries");
    if (entries.shape != Shape{k, c})
        throw DataError("checkpoint cb.entries shape " + shape_str(entries.shape) +
                        " disagrees with meta");
    b.codebook.entries.value = entries;
    b.projection = ck.require("feat.projection");
    return b;
}

inline void add_classifier_to(Checkpoint& ck, Classifier& cls) {
    ck.add_scalar("meta.text_dim", static_cast<double>(cls.text_dim));
    ck.add_scalar("meta.positions", static_cast<double>(cls.positions));
    ck.add_scalar("meta.hidden", static_cast<double>(cls.mlp.layers[0].w.value.cols()));
    save_params(cls.mlp, ck);
}

inline Classifier read_classifier_from(const Checkpoint& ck) {
    const auto text_dim = static_cast<std::size_t>(ck.scalar("meta.text_dim"));
    const auto positions = static_cast<std::size_t>(ck.scalar("meta.positions"));
    const auto hidden = static_cast<std::size_t>(ck.scalar("meta.hidden"));
    const auto entries = static_cast<std::size_t>(ck.scalar("meta.kb_entries"));
    Rng rng(0);
    Classifier cls = Classifier::make(text_dim, hidden, positions, entries, rng);
    load_params(cls.mlp, ck);
    return cls;
}

inline void add_denoiser_to(Checkpoint& ck, Denoiser& den, const ExperimentConfig& cfg) {
    add_scalar_once(ck, "meta.patch", static_cast<double>(cfg.patch));
    add_scalar_once(ck, "meta.kb_dim", static_cast<double>(cfg.kb_dim));
    ck.add_scalar("meta.temb_dim", static_cast<double>(den.cfg.temb_dim));
    ck.add_scalar("meta.attn_dim", static_cast<double>(den.cfg.attn_dim));
    ck.add_scalar("meta.head_hidden", static_cast<double>(den.cfg.head_hidden));
    ck.add_scalar("meta.gate_hidden", static_cast<double>(den.cfg.gate_hidden));
    ck.add_scalar("meta.pos_dim", static_cast<double>(den.cfg.pos_dim));
    ck.add_scalar("meta.timesteps", static_cast<double>(cfg.timesteps));
    ck.add_scalar("meta.beta_start", cfg.beta_start);
    ck.add_scalar("meta.beta_end", cfg.beta_end);
    ck.add_scalar("meta.use_kb", cfg.use_kb ? 1.0 : 0.0);
    ck.add_scalar("meta.use_dm", cfg.use_dm ? 1.0 : 0.0);
    ck.add_scalar("meta.use_dc", cfg.use_dc ? 1.0 : 0.0);
    ck.add_scalar("meta.mask_mode", cfg.mask_mode == MaskMode::multiplicative ? 0.0 : 1.0);
    ck.add_scalar("meta.fusion",
                  cfg.fusion == Fusion::mean ? 0.0 : (cfg.fusion == Fusion::sum ? 1.0 : 2.0));
    save_params(den, ck);
}

/// Everything `sample` and `eval` need from one diffusion checkpoint.
struct ModelBundle {
    ExperimentConfig cfg;
    Denoiser denoiser;
    NoiseSchedule schedule;
    KbBundle kb;  // populated only when cfg.use_kb
};

inline ModelBundle read_model_from(const Checkpoint& ck) {
    ModelBundle m;
    m.cfg.timesteps = static_cast<int>(ck.scalar("meta.timesteps"));
    m.cfg.beta_start = ck.scalar("meta.beta_start");
    m.cfg.beta_end = ck.scalar("meta.beta_end");
    m.cfg.use_kb = ck.scalar("meta.use_kb") != 0.0;
    m.cfg.use_dm = ck.scalar("meta.use_dm") != 0.0;
    m.cfg.use_dc = ck.scalar("meta.use_dc") != 0.0;
    m.cfg.mask_mode =
        ck.scalar("meta.mask_mode") == 0.0 ? MaskMode::multiplicative : MaskMode::additive_ninf;
    const double fusion = ck.scalar("meta.fusion");
    m.cfg.fusion = fusion == 0.0 ? Fusion::mean : (fusion == 1.0 ? Fusion::sum : Fusion::select);
    m.cfg.patch = static_cast<std::size_t>(ck.scalar("meta.patch"));
    m.cfg.temb_dim = static_cast<std::size_t>(ck.scalar("meta.temb_dim"));
    m.cfg.attn_dim = static_cast<std::size_t>(ck.scalar("meta.attn_dim"));
    m.cfg.head_hidden = static_cast<std::size_t>(ck.scalar("meta.head_hidden"));
    m.cfg.gate_hidden = static_cast<std::size_t>(ck.scalar("meta.gate_hidden"));
    m.cfg.pos_dim = static_cast<std::size_t>(ck.scalar("meta.pos_dim"));
    if (ck.has("meta.kb_dim")) m.cfg.kb_dim = static_cast<std::size_t>(ck.scalar("meta.kb_dim"));
    if (ck.has("meta.kb_entries"))
        m.cfg.kb_entries = static_cast<std::size_t>(ck.scalar("meta.kb_entries"));
    m.schedule = make_schedule(m.cfg.timesteps, m.cfg.beta_start, m.cfg.beta_end);
    Rng rng(0);
    m.denoiser = Denoiser::make(m.cfg.denoiser_config(), rng);
    load_params(m.denoiser, ck);
    if (m.cfg.use_kb) {
        const CodebookBundle cb = read_codebook_from(ck);
        m.kb.projection = cb.projection;
        m.kb.codebook = cb.codebook;
        m.kb.classifier = read_classifier_from(ck);
        m.cfg.text_dim = m.kb.classifier.text_dim;
        m.cfg.classifier_hidden = static_cast<std::size_t>(ck.scalar("meta.hidden"));
    }
    return m;
}

}  // namespace kbdm
