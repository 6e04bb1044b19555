#pragma once

#include <string>
#include <vector>

#include "kbdm/mlp.hpp"

namespace kbdm {

/// Binary foreground mask at pixel resolution plus its any-reduction to the
/// attention token grid.
struct BinaryPoseMask {
    Tensor mask;        // [H x W], entries in {0,1}
    Tensor token_mask;  // [1 x N], 1 iff the patch holds >= 1 foreground pixel
};

inline BinaryPoseMask pose_to_mask(const Tensor& pose_image, std::size_t grid_h,
                                   std::size_t grid_w) {
    if (pose_image.rank() != 2 || grid_h == 0 || grid_w == 0 ||
        pose_image.rows() % grid_h != 0 || pose_image.cols() % grid_w != 0) {
        throw ConfigError("pose_to_mask: grid " + std::to_string(grid_h) + "x" +
                          std::to_string(grid_w) + " does not divide image " +
                          shape_str(pose_image.shape));
    }
    const std::size_t ph = pose_image.rows() / grid_h, pw = pose_image.cols() / grid_w;
    BinaryPoseMask out;
    out.mask = Tensor(pose_image.shape);
    for (std::size_t i = 0; i < pose_image.numel(); ++i)
        out.mask.data[i] = pose_image.data[i] > 0.0 ? 1.0 : 0.0;
    out.token_mask = Tensor({1, grid_h * grid_w});
    for (std::size_t gr = 0; gr < grid_h; ++gr) {
        for (std::size_t gc = 0; gc < grid_w; ++gc) {
            double any = 0.0;
            for (std::size_t r = gr * ph; r < (gr + 1) * ph && any == 0.0; ++r)
                for (std::size_t c = gc * pw; c < (gc + 1) * pw; ++c)
                    if (out.mask.at(r, c) > 0.0) {
                        any = 1.0;
                        break;
                    }
            out.token_mask.at(0, gr * grid_w + gc) = any;
        }
    }
    return out;
}

/// Sinusoidal features of a diffusion timestep.
struct TimestepEmbedding {
    Tensor vector;  // [1 x C_e]
    int timestep = 0;
};

inline TimestepEmbedding timestep_embedding(int t, std::size_t dim) {
    if (dim % 2 != 0) throw ConfigError("timestep_embedding: dim must be even");
    TimestepEmbedding e;
    e.timestep = t;
    e.vector = Tensor({1, dim});
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half));
        e.vector.at(0, 2 * i) = std::sin(t * freq);
        e.vector.at(0, 2 * i + 1) = std::cos(t * freq);
    }
    return e;
}

/// Timestep-conditioned gate: 2-layer perceptron with logistic output,
/// g strictly in (0,1).
struct GateNet {
    Mlp mlp;

    static GateNet make(std::size_t temb_dim, std::size_t hidden, Rng& rng) {
        return GateNet{Mlp::make({temb_dim, hidden, 1}, rng, "gate")};
    }
};

inline double compute_gate(const GateNet& gate, const TimestepEmbedding& e,
                           Mlp::Cache* cache = nullptr) {
    Tensor out = gate.mlp.forward(e.vector, Activation::sigmoid, cache);
    return out.at(0, 0);
}

inline void compute_gate_backward(GateNet& gate, const Mlp::Cache& cache, double dgate) {
    gate.mlp.backward(cache, Tensor({1, 1}, {dgate}));
}

/// Per-location attention strength: foreground weight 1+g, background 0.
struct SoftMask {
    Tensor values;  // [1 x N], each entry 0 or 1+g
    double gate = 0.0;
};

inline SoftMask build_soft_mask(const BinaryPoseMask& m, double gate) {
    SoftMask sm;
    sm.gate = gate;
    sm.values = m.token_mask;
    sm.values *= 1.0 + gate;
    return sm;
}

// An all-ones soft mask (gate bypassed); masked attention degenerates to
// standard scaled dot-product attention.
inline SoftMask unit_soft_mask(std::size_t n) {
    return SoftMask{Tensor::full({1, n}, 1.0), 0.0};
}

enum class MaskMode { multiplicative, additive_ninf };

inline MaskMode parse_mask_mode(const std::string& s) {
    if (s == "multiplicative") return MaskMode::multiplicative;
    if (s == "additive_ninf") return MaskMode::additive_ninf;
    throw ConfigError("unknown mask_mode: " + s);
}

struct AttentionCache {
    Tensor q, k, v;
    Tensor logits;        // QK^T / sqrt(d), pre-mask
    Tensor masked_logits; // after mask modulation
    Tensor weights;       // row softmax
    SoftMask soft_mask;
    MaskMode mode = MaskMode::multiplicative;
};

// Attn(Q,K,V) = softmax((QK^T / sqrt(d)) * m~) V, the soft mask broadcast
// along the key axis. Background keys keep logit exactly 0 in the default
// mode; additive_ninf substitutes -1e9 there instead.
inline Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                               const SoftMask& soft_mask,
                               MaskMode mode = MaskMode::multiplicative,
                               AttentionCache* cache = nullptr) {
    if (q.rank() != 2 || !q.same_shape(k) || !q.same_shape(v)) {
        throw DimensionError("masked_attention: Q " + shape_str(q.shape) + ", K " +
                             shape_str(k.shape) + ", V " + shape_str(v.shape));
    }
    const std::size_t n = q.rows();
    if (soft_mask.values.numel() != n) {
        throw DimensionError("masked_attention: mask has " +
                             std::to_string(soft_mask.values.numel()) + " entries for " +
                             std::to_string(n) + " tokens");
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor logits = matmul(q, transpose(k));
    logits *= inv_sqrt_d;
    Tensor masked = logits;
    for (std::size_t qi = 0; qi < n; ++qi) {
        for (std::size_t ki = 0; ki < n; ++ki) {
            const double mv = soft_mask.values[ki];
            if (mode == MaskMode::additive_ninf && mv == 0.0) {
                masked.at(qi, ki) = -1e9;
            } else {
                masked.at(qi, ki) *= mv;
            }
        }
    }
    Tensor weights = softmax_rows(masked);
    Tensor out = matmul(weights, v);
    if (cache) {
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->logits = std::move(logits);
        cache->masked_logits = std::move(masked);
        cache->weights = std::move(weights);
        cache->soft_mask = soft_mask;
        cache->mode = mode;
    }
    return out;
}

struct AttentionGrads {
    Tensor dq, dk, dv;
    Tensor dmask;  // [1 x N], gradient w.r.t. the soft mask values
};

inline AttentionGrads masked_attention_backward(const AttentionCache& cache, const Tensor& dout) {
    const std::size_t n = cache.q.rows();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cache.q.cols()));
    AttentionGrads g;
    g.dv = matmul(transpose(cache.weights), dout);
    const Tensor dweights = matmul(dout, transpose(cache.v));
    const Tensor dmasked = softmax_rows_backward(cache.weights, dweights);
    Tensor dlogits({n, n});
    g.dmask = Tensor({1, n});
    for (std::size_t qi = 0; qi < n; ++qi) {
        for (std::size_t ki = 0; ki < n; ++ki) {
            const double mv = cache.soft_mask.values[ki];
            if (cache.mode == MaskMode::additive_ninf && mv == 0.0) continue;
            dlogits.at(qi, ki) = dmasked.at(qi, ki) * mv;
            g.dmask[ki] += dmasked.at(qi, ki) * cache.logits.at(qi, ki);
        }
    }
    g.dq = matmul(dlogits, cache.k);
    g.dq *= inv_sqrt_d;
    g.dk = matmul(transpose(dlogits), cache.q);
    g.dk *= inv_sqrt_d;
    return g;
}

// Chain rule from soft mask values to the gate scalar: m~ = (1+g) * token_mask.
inline double soft_mask_gate_grad(const BinaryPoseMask& mask, const Tensor& dmask) {
    double dg = 0.0;
    for (std::size_t i = 0; i < dmask.numel(); ++i) dg += dmask[i] * mask.token_mask[i];
    return dg;
}

}  // namespace kbdm
