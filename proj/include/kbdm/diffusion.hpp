#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

#include "kbdm/checkpoint.hpp"
#include "kbdm/dynmask.hpp"
#include "kbdm/mlp.hpp"
#include "kbdm/optim.hpp"
#include "kbdm/rng.hpp"
#include "kbdm/tensor.hpp"

namespace kbdm {

/// Linear variance schedule with cumulative alpha products.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> betas, alphas, alpha_bars;
};

inline NoiseSchedule make_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02) {
    if (steps < 2) throw ConfigError("make_schedule: need at least 2 steps");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<std::size_t>(steps));
    s.alphas.resize(s.betas.size());
    s.alpha_bars.resize(s.betas.size());
    double bar = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double frac = static_cast<double>(t) / static_cast<double>(steps - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        s.betas[static_cast<std::size_t>(t)] = beta;
        s.alphas[static_cast<std::size_t>(t)] = 1.0 - beta;
        bar *= 1.0 - beta;
        s.alpha_bars[static_cast<std::size_t>(t)] = bar;
    }
    return s;
}

inline double alpha_bar_at(const NoiseSchedule& s, int t) {
    if (t < 0 || t >= s.steps)
        throw IndexError("timestep " + std::to_string(t) + " outside [0, " +
                         std::to_string(s.steps) + ")");
    return s.alpha_bars[static_cast<std::size_t>(t)];
}

// Forward process: z_t = sqrt(abar) z0 + sqrt(1-abar) eps.
inline Tensor add_noise_with(const Tensor& z0, const Tensor& eps, double alpha_bar) {
    if (!z0.same_shape(eps))
        throw DimensionError("add_noise: z0 " + shape_str(z0.shape) + " vs eps " +
                             shape_str(eps.shape));
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    Tensor out = z0;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
    return out;
}

inline Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    return add_noise_with(z0, eps, alpha_bar_at(sched, t));
}

// Global latent gain. Pixels live in [0,1] with std ~0.23, far below the
// unit-variance noise the schedule mixes in; the gain lifts latent std to
// ~0.9 so a usable signal-to-noise range actually spans the schedule. A
// power of two keeps encode/decode bitwise inverse.
constexpr double kLatentGain = 4.0;

// Lossless stand-in for a latent encoder: each patch x patch block becomes one
// token row (block pixels flattened row-major), scaled by the fixed gain.
inline Tensor encode_latent(const Tensor& image, std::size_t patch = 4) {
    if (image.rank() != 2 || patch == 0 || image.rows() % patch != 0 ||
        image.cols() % patch != 0) {
        throw ConfigError("encode_latent: patch " + std::to_string(patch) +
                          " does not divide image " + shape_str(image.shape));
    }
    const std::size_t gh = image.rows() / patch, gw = image.cols() / patch;
    Tensor latent({gh * gw, patch * patch});
    for (std::size_t gr = 0; gr < gh; ++gr)
        for (std::size_t gc = 0; gc < gw; ++gc)
            for (std::size_t r = 0; r < patch; ++r)
                for (std::size_t c = 0; c < patch; ++c)
                    latent.at(gr * gw + gc, r * patch + c) =
                        kLatentGain * image.at(gr * patch + r, gc * patch + c);
    return latent;
}

inline Tensor decode_latent(const Tensor& latent, std::size_t height, std::size_t width,
                            std::size_t patch = 4) {
    if (patch == 0 || height % patch != 0 || width % patch != 0)
        throw ConfigError("decode_latent: patch must divide the target extents");
    const std::size_t gh = height / patch, gw = width / patch;
    if (latent.rank() != 2 || latent.rows() != gh * gw || latent.cols() != patch * patch)
        throw DimensionError("decode_latent: latent " + shape_str(latent.shape) +
                             " does not match a " + std::to_string(height) + "x" +
                             std::to_string(width) + "/" + std::to_string(patch) + " grid");
    Tensor image({height, width});
    for (std::size_t gr = 0; gr < gh; ++gr)
        for (std::size_t gc = 0; gc < gw; ++gc)
            for (std::size_t r = 0; r < patch; ++r)
                for (std::size_t c = 0; c < patch; ++c)
                    image.at(gr * patch + r, gc * patch + c) =
                        latent.at(gr * gw + gc, r * patch + c) / kLatentGain;
    return image;
}

inline Tensor clamp_unit(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return out;
}

/// Conditioning inputs for one denoising pass. An empty kb_features tensor is
/// the null text token; an empty token_mask disables pose masking (attention
/// sees an all-ones soft mask).
struct Condition {
    Tensor kb_features;       // [N x kb_dim] or empty
    BinaryPoseMask pose_mask; // token_mask [1 x N] or empty
    MaskMode mask_mode = MaskMode::multiplicative;

    bool has_kb() const { return kb_features.numel() > 0; }
    bool has_mask() const { return pose_mask.token_mask.numel() > 0; }
};

struct DenoiserConfig {
    std::size_t latent_dim = 16;  // patch^2
    std::size_t temb_dim = 32;
    std::size_t kb_dim = 16;
    std::size_t attn_dim = 32;
    std::size_t head_hidden = 64;
    std::size_t gate_hidden = 32;
    std::size_t pos_dim = 16;  // sinusoidal token-position features; 0 disables
    std::size_t grid_h = 8;    // token grid that the latent rows raster
    std::size_t grid_w = 8;
};

// Fixed per-token position features (half the channels encode the row, half
// the column). Without these every token looks identical at high noise and
// attention could not localize anything, mask included.
inline Tensor position_embedding(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
    if (dim % 4 != 0) throw ConfigError("position_embedding: dim must be a multiple of 4");
    Tensor out({grid_h * grid_w, dim});
    const std::size_t half = dim / 2;
    for (std::size_t r = 0; r < grid_h; ++r) {
        const TimestepEmbedding er = timestep_embedding(static_cast<int>(r), half);
        for (std::size_t c = 0; c < grid_w; ++c) {
            const TimestepEmbedding ec = timestep_embedding(static_cast<int>(c), half);
            for (std::size_t j = 0; j < half; ++j) {
                out.at(r * grid_w + c, j) = er.vector.at(0, j);
                out.at(r * grid_w + c, half + j) = ec.vector.at(0, j);
            }
        }
    }
    return out;
}

/// Epsilon-prediction network: input projection of z (+) timestep embedding
/// (+) position features, one masked self-attention block, additive injection
/// of projected knowledge features (zero-initialized adapter), two-layer head.
struct Denoiser {
    DenoiserConfig cfg;
    Mlp input_proj;  // (latent_dim + temb_dim + pos_dim) -> attn_dim, relu
    Mlp wq, wk, wv;  // attn_dim -> attn_dim
    Mlp kb_proj;     // kb_dim -> attn_dim, zero-initialized
    Mlp head;        // attn_dim -> head_hidden -> latent_dim
    GateNet gate;

    static Denoiser make(const DenoiserConfig& cfg, Rng& rng) {
        Denoiser d;
        d.cfg = cfg;
        d.input_proj =
            Mlp::make({cfg.latent_dim + cfg.temb_dim + cfg.pos_dim, cfg.attn_dim}, rng, "den.in");
        d.wq = Mlp::make({cfg.attn_dim, cfg.attn_dim}, rng, "den.wq");
        d.wk = Mlp::make({cfg.attn_dim, cfg.attn_dim}, rng, "den.wk");
        d.wv = Mlp::make({cfg.attn_dim, cfg.attn_dim}, rng, "den.wv");
        d.kb_proj = Mlp::make({cfg.kb_dim, cfg.attn_dim}, rng, "den.kb");
        d.kb_proj.layers[0].w.value.fill(0.0);  // adapter starts as a no-op
        d.head = Mlp::make({cfg.attn_dim, cfg.head_hidden, cfg.latent_dim}, rng, "den.head");
        d.gate = GateNet::make(cfg.temb_dim, cfg.gate_hidden, rng);
        return d;
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps;
        for (Mlp* m : {&input_proj, &wq, &wk, &wv, &kb_proj, &head, &gate.mlp})
            for (Parameter* p : m->parameters()) ps.push_back(p);
        return ps;
    }

    void zero_grad() {
        for (Parameter* p : parameters()) p->zero_grad();
    }
};

struct DenoiserCache {
    Mlp::Cache input, q, k, v, kb, head, gate;
    AttentionCache attn;
    BinaryPoseMask mask;
    bool dm_active = false;
};

inline Tensor denoiser_forward(const Denoiser& den, const Tensor& z, int t, const Condition& cond,
                               DenoiserCache* cache = nullptr) {
    if (z.rank() != 2 || z.cols() != den.cfg.latent_dim)
        throw DimensionError("denoiser_forward: latent " + shape_str(z.shape) + ", expected [N x " +
                             std::to_string(den.cfg.latent_dim) + "]");
    const std::size_t n = z.rows();
    if (den.cfg.pos_dim > 0 && n != den.cfg.grid_h * den.cfg.grid_w)
        throw DimensionError("denoiser_forward: " + std::to_string(n) + " tokens do not fill a " +
                             std::to_string(den.cfg.grid_h) + "x" +
                             std::to_string(den.cfg.grid_w) + " grid");
    const TimestepEmbedding temb = timestep_embedding(t, den.cfg.temb_dim);
    const Tensor pos = den.cfg.pos_dim > 0
                           ? position_embedding(den.cfg.grid_h, den.cfg.grid_w, den.cfg.pos_dim)
                           : Tensor({n, 0});
    Tensor h0({n, den.cfg.latent_dim + den.cfg.temb_dim + den.cfg.pos_dim});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < den.cfg.latent_dim; ++j) h0.at(i, j) = z.at(i, j);
        for (std::size_t j = 0; j < den.cfg.temb_dim; ++j)
            h0.at(i, den.cfg.latent_dim + j) = temb.vector.at(0, j);
        for (std::size_t j = 0; j < den.cfg.pos_dim; ++j)
            h0.at(i, den.cfg.latent_dim + den.cfg.temb_dim + j) = pos.at(i, j);
    }
    Tensor h1 = den.input_proj.forward(h0, Activation::relu, cache ? &cache->input : nullptr);
    Tensor q = den.wq.forward(h1, Activation::none, cache ? &cache->q : nullptr);
    Tensor k = den.wk.forward(h1, Activation::none, cache ? &cache->k : nullptr);
    Tensor v = den.wv.forward(h1, Activation::none, cache ? &cache->v : nullptr);
    SoftMask sm;
    bool dm_active = false;
    if (cond.has_mask()) {
        if (cond.pose_mask.token_mask.numel() != n)
            throw DimensionError("denoiser_forward: pose mask covers " +
                                 std::to_string(cond.pose_mask.token_mask.numel()) +
                                 " tokens, latent has " + std::to_string(n));
        const double g = compute_gate(den.gate, temb, cache ? &cache->gate : nullptr);
        sm = build_soft_mask(cond.pose_mask, g);
        dm_active = true;
    } else {
        sm = unit_soft_mask(n);
    }
    Tensor attn = masked_attention(q, k, v, sm, cond.mask_mode, cache ? &cache->attn : nullptr);
    Tensor kb_in = cond.has_kb() ? cond.kb_features : Tensor::zeros({n, den.cfg.kb_dim});
    if (kb_in.rows() != n || kb_in.cols() != den.cfg.kb_dim)
        throw DimensionError("denoiser_forward: kb features " + shape_str(kb_in.shape) +
                             ", expected [" + std::to_string(n) + " x " +
                             std::to_string(den.cfg.kb_dim) + "]");
    Tensor kbp = den.kb_proj.forward(kb_in, Activation::none, cache ? &cache->kb : nullptr);
    Tensor h2 = h1;
    h2 += attn;
    h2 += kbp;
    Tensor out = den.head.forward(h2, Activation::none, cache ? &cache->head : nullptr);
    if (cache) {
        cache->mask = cond.pose_mask;
        cache->dm_active = dm_active;
    }
    return out;
}

// Accumulates parameter gradients and returns the gradient w.r.t. the noisy
// latent input.
inline Tensor denoiser_backward(Denoiser& den, const DenoiserCache& cache, const Tensor& dout) {
    Tensor dh2 = den.head.backward(cache.head, dout);
    den.kb_proj.backward(cache.kb, dh2);  // kb features are frozen inputs
    const AttentionGrads ag = masked_attention_backward(cache.attn, dh2);
    Tensor dh1 = dh2;
    dh1 += den.wq.backward(cache.q, ag.dq);
    dh1 += den.wk.backward(cache.k, ag.dk);
    dh1 += den.wv.backward(cache.v, ag.dv);
    if (cache.dm_active) {
        const double dg = soft_mask_gate_grad(cache.mask, ag.dmask);
        compute_gate_backward(den.gate, cache.gate, dg);
    }
    const Tensor dh0 = den.input_proj.backward(cache.input, dh1);
    Tensor dz({dh0.rows(), den.cfg.latent_dim});
    for (std::size_t i = 0; i < dz.rows(); ++i)
        for (std::size_t j = 0; j < dz.cols(); ++j) dz.at(i, j) = dh0.at(i, j);
    return dz;
}

/// One training example with its precomputed conditioning.
struct DiffusionExample {
    Tensor z0;  // [N x latent_dim]
    Condition cond;
};

struct DiffusionTrainConfig {
    int epochs = 10;
    double lr = 1e-5;
    int batch = 8;
    double prompt_dropout = 0.5;
};

struct DiffusionTrainReport {
    std::vector<double> epoch_losses;  // running training loss per epoch
    std::vector<double> probe_losses;  // fixed-draw corpus loss; [0] before training
};

inline bool sample_prompt_drop(Rng& rng, double p) { return rng.uniform() < p; }

namespace detail {
constexpr std::uint64_t kProbeStream = 0x70726f6265ull;  // disjoint from training streams

struct DrawnStep {
    int t = 0;
    Tensor eps;
    bool drop = false;
};

inline DrawnStep draw_step(Rng rng, const NoiseSchedule& sched, const Tensor& z0, double p_drop) {
    DrawnStep d;
    d.t = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(sched.steps)));
    d.eps = Tensor(z0.shape);
    for (double& v : d.eps.data) v = rng.normal();
    d.drop = sample_prompt_drop(rng, p_drop);
    return d;
}

inline double step_loss(const Denoiser& den, const DiffusionExample& ex, const DrawnStep& dr,
                        const NoiseSchedule& sched, DenoiserCache* cache, Tensor* eps_out) {
    Condition cond = ex.cond;
    if (dr.drop) cond.kb_features = Tensor();  // null text token
    const Tensor zt = add_noise(ex.z0, dr.t, dr.eps, sched);
    const Tensor eps_hat = denoiser_forward(den, zt, dr.t, cond, cache);
    if (eps_out) *eps_out = eps_hat;
    return mse(eps_hat, dr.eps);
}
}  // namespace detail

// Epsilon-matching loss on one batch; draws (t, eps, dropout) per example from
// split rng streams so results are independent of batch grouping.
inline double diffusion_loss(Denoiser& den, const std::vector<DiffusionExample>& batch,
                             const NoiseSchedule& sched, Rng rng, double prompt_dropout = 0.5,
                             bool accumulate_grads = false) {
    if (batch.empty()) throw ConfigError("diffusion_loss: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const detail::DrawnStep dr =
            detail::draw_step(rng.split(i), sched, batch[i].z0, prompt_dropout);
        DenoiserCache cache;
        Tensor eps_hat;
        total += detail::step_loss(den, batch[i], dr, sched, accumulate_grads ? &cache : nullptr,
                                   &eps_hat);
        if (accumulate_grads) {
            Tensor dout = mse_backward(eps_hat, dr.eps);
            dout *= 1.0 / static_cast<double>(batch.size());
            denoiser_backward(den, cache, dout);
        }
    }
    return total / static_cast<double>(batch.size());
}

// Corpus loss under a fixed set of (t, eps, dropout) draws, used to compare
// before/after training on identical random numbers.
inline double probe_loss(const Denoiser& den, const std::vector<DiffusionExample>& corpus,
                         const NoiseSchedule& sched, Rng root, double prompt_dropout) {
    if (corpus.empty()) throw ConfigError("probe_loss: empty corpus");
    Rng probe = root.split(detail::kProbeStream);
    double total = 0.0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const detail::DrawnStep dr =
            detail::draw_step(probe.split(i), sched, corpus[i].z0, prompt_dropout);
        total += detail::step_loss(den, corpus[i], dr, sched, nullptr, nullptr);
    }
    return total / static_cast<double>(corpus.size());
}

inline DiffusionTrainReport train_diffusion(Denoiser& den,
                                            const std::vector<DiffusionExample>& corpus,
                                            const NoiseSchedule& sched,
                                            const DiffusionTrainConfig& cfg, std::uint64_t seed) {
    if (corpus.empty()) throw ConfigError("train_diffusion: empty corpus");
    if (cfg.epochs < 1 || cfg.batch < 1)
        throw ConfigError("train_diffusion: epochs and batch must be >= 1");
    Rng root(seed);
    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    DiffusionTrainReport report;
    report.probe_losses.push_back(probe_loss(den, corpus, sched, root, cfg.prompt_dropout));
    const std::vector<Parameter*> params = den.parameters();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = root.split(static_cast<std::uint64_t>(epoch) + 1);
        double epoch_total = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < corpus.size();
             start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t stop =
                std::min(corpus.size(), start + static_cast<std::size_t>(cfg.batch));
            std::vector<DiffusionExample> batch(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                                                corpus.begin() + static_cast<std::ptrdiff_t>(stop));
            den.zero_grad();
            const double loss =
                diffusion_loss(den, batch, sched, erng.split(start), cfg.prompt_dropout, true);
            for (Parameter* p : params) check_finite(p->grad, "diffusion gradient");
            opt.step(params);
            epoch_total += loss * static_cast<double>(batch.size());
            seen += batch.size();
        }
        report.epoch_losses.push_back(epoch_total / static_cast<double>(seen));
        report.probe_losses.push_back(probe_loss(den, corpus, sched, root, cfg.prompt_dropout));
    }
    return report;
}

// Evenly spaced descending timestep subset for DDIM.
inline std::vector<int> ddim_timesteps(int total, int steps) {
    if (steps < 1 || steps > total)
        throw ConfigError("ddim_timesteps: steps must lie in [1, " + std::to_string(total) + "]");
    std::vector<int> ts(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
        ts[static_cast<std::size_t>(steps - 1 - i)] =
            static_cast<int>((static_cast<long long>(i) * total) / steps);
    return ts;
}

// Deterministic (eta = 0) update: estimate z0, re-noise to the previous level.
// clip_z0 clamps the clean-latent estimate to the encoded pixel range
// [0, kLatentGain] before re-noising; valid only when the latent domain is
// known to be pixel-valued, and off by default so the update stays an exact
// algebraic inverse of add_noise.
inline Tensor ddim_step(const Tensor& zt, const Tensor& eps_hat, double alpha_bar_t,
                        double alpha_bar_prev, bool clip_z0 = false) {
    const double sa = std::sqrt(alpha_bar_t), sb = std::sqrt(1.0 - alpha_bar_t);
    const double pa = std::sqrt(alpha_bar_prev), pb = std::sqrt(1.0 - alpha_bar_prev);
    Tensor out = zt;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double z0_hat = (zt.data[i] - sb * eps_hat.data[i]) / sa;
        if (clip_z0) z0_hat = std::clamp(z0_hat, 0.0, kLatentGain);
        out.data[i] = pa * z0_hat + pb * eps_hat.data[i];
    }
    return out;
}

// Runs the DDIM trajectory with an arbitrary epsilon predictor (tests swap in
// oracles here).
inline Tensor ddim_trajectory(Tensor z, const NoiseSchedule& sched, const std::vector<int>& ts,
                              const std::function<Tensor(const Tensor&, int)>& eps_fn,
                              bool clip_z0 = false) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double ab_t = alpha_bar_at(sched, ts[i]);
        const double ab_prev = (i + 1 < ts.size()) ? alpha_bar_at(sched, ts[i + 1]) : 1.0;
        z = ddim_step(z, eps_fn(z, ts[i]), ab_t, ab_prev, clip_z0);
        check_finite(z, "ddim latent");
    }
    return z;
}

// The gate (hence the soft mask) is recomputed inside denoiser_forward at each
// visited timestep. cfg_scale 1 disables classifier-free guidance; other
// values blend conditional and null predictions.
inline Tensor ddim_sample_latent(const Denoiser& den, const NoiseSchedule& sched,
                                 const Condition& cond, int steps, Rng rng,
                                 double cfg_scale = 1.0, std::size_t tokens = 64,
                                 bool clip_z0 = false) {
    Tensor z({tokens, den.cfg.latent_dim});
    for (double& v : z.data) v = rng.normal();
    const std::vector<int> ts = ddim_timesteps(sched.steps, steps);
    auto eps_fn = [&](const Tensor& zt, int t) {
        Tensor eps = denoiser_forward(den, zt, t, cond);
        if (cfg_scale != 1.0 && cond.has_kb()) {
            Condition null_cond = cond;
            null_cond.kb_features = Tensor();
            const Tensor eps_null = denoiser_forward(den, zt, t, null_cond);
            for (std::size_t i = 0; i < eps.numel(); ++i)
                eps.data[i] = eps_null.data[i] + cfg_scale * (eps.data[i] - eps_null.data[i]);
        }
        return eps;
    };
    return ddim_trajectory(std::move(z), sched, ts, eps_fn, clip_z0);
}

// Image sampling runs in the pixel-patch latent domain, so the clean-latent
// clip is sound here and keeps low-capacity predictors from drifting out of
// range at high noise levels.
inline Tensor ddim_sample_image(const Denoiser& den, const NoiseSchedule& sched,
                                const Condition& cond, int steps, Rng rng,
                                double cfg_scale = 1.0, std::size_t height = 32,
                                std::size_t width = 32, std::size_t patch = 4) {
    const std::size_t tokens = (height / patch) * (width / patch);
    Tensor z = ddim_sample_latent(den, sched, cond, steps, rng, cfg_scale, tokens,
                                  /*clip_z0=*/true);
    return clamp_unit(decode_latent(z, height, width, patch));
}

}  // namespace kbdm
