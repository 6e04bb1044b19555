#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kbdm/optim.hpp"
#include "kbdm/tensor.hpp"

namespace kbdm {

/// K trainable entry vectors of dimension C: the discrete visual knowledge base.
struct Codebook {
    Parameter entries;  // [K x C]
    std::size_t K = 0;
    std::size_t C = 0;

    Codebook() = default;
    Codebook(std::size_t k, std::size_t c)
        : entries("codebook.entries", Tensor::zeros({k, c})), K(k), C(c) {
        if (k < 2 || c < 1) throw ConfigError("codebook requires K >= 2 and C >= 1");
    }
};

/// Dense per-position image features, N = grid_h * grid_w spatial tokens.
struct ImageFeatureGrid {
    Tensor features;  // [N x C]
    std::size_t grid_h = 1;
    std::size_t grid_w = 1;

    std::size_t tokens() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }
};

struct DistanceMatrix {
    Tensor values;  // [N x K], squared Euclidean distances
};

// Per-position nearest-entry indices, each in [0, K).
using TokenIndexVector = std::vector<std::size_t>;

struct OneHotAssignment {
    Tensor matrix;  // [N x K], one 1 per row
};

// D[i,j] = |z_i|^2 + |e_j|^2 - 2 z_i . e_j
inline DistanceMatrix pairwise_sq_distance(const ImageFeatureGrid& z_e, const Codebook& cb) {
    if (z_e.dim() != cb.C) {
        throw DimensionError("pairwise_sq_distance: feature dim " + std::to_string(z_e.dim()) +
                             " vs codebook dim " + std::to_string(cb.C));
    }
    const std::size_t n = z_e.tokens(), k = cb.K, c = cb.C;
    const Tensor& z = z_e.features;
    const Tensor& e = cb.entries.value;
    std::vector<double> znorm(n, 0.0), enorm(k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < c; ++d) znorm[i] += z.at(i, d) * z.at(i, d);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t d = 0; d < c; ++d) enorm[j] += e.at(j, d) * e.at(j, d);
    DistanceMatrix out{Tensor({n, k})};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double dot = 0.0;
            for (std::size_t d = 0; d < c; ++d) dot += z.at(i, d) * e.at(j, d);
            out.values.at(i, j) = znorm[i] + enorm[j] - 2.0 * dot;
        }
    }
    return out;
}

// a_i = argmin_j D[i,j], ties broken by the smallest j.
inline TokenIndexVector assign_indices(const DistanceMatrix& d) {
    TokenIndexVector a(d.values.rows());
    for (std::size_t i = 0; i < d.values.rows(); ++i) {
        std::size_t best = 0;
        double best_val = d.values.at(i, 0);
        for (std::size_t j = 1; j < d.values.cols(); ++j) {
            if (d.values.at(i, j) < best_val) {
                best_val = d.values.at(i, j);
                best = j;
            }
        }
        a[i] = best;
    }
    return a;
}

inline OneHotAssignment one_hot(const TokenIndexVector& a, std::size_t k) {
    OneHotAssignment o{Tensor({a.size(), k})};
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] >= k) {
            throw IndexError("one_hot: index " + std::to_string(a[i]) + " at position " +
                             std::to_string(i) + " >= K=" + std::to_string(k));
        }
        o.matrix.at(i, a[i]) = 1.0;
    }
    return o;
}

// z_q = O . e
inline Tensor quantize(const OneHotAssignment& o, const Codebook& cb) {
    if (o.matrix.cols() != cb.K) {
        throw DimensionError("quantize: one-hot columns " + std::to_string(o.matrix.cols()) +
                             " vs K=" + std::to_string(cb.K));
    }
    return matmul(o.matrix, cb.entries.value);
}

// Row gather by index; equals the one-hot matmul exactly.
inline Tensor quantize_gather(const TokenIndexVector& a, const Codebook& cb) {
    Tensor out({a.size(), cb.C});
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] >= cb.K) {
            throw IndexError("quantize_gather: index " + std::to_string(a[i]) +
                             " >= K=" + std::to_string(cb.K));
        }
        for (std::size_t d = 0; d < cb.C; ++d) out.at(i, d) = cb.entries.value.at(a[i], d);
    }
    return out;
}

inline double codebook_loss(const Tensor& z_q, const ImageFeatureGrid& z_e) {
    return mse(z_q, z_e.features);
}

// Gradient reaches entries only through the selected rows; assignments are
// constants within a step. d e_j = sum_{i: a_i=j} 2 (e_j - z_i) / (N*C).
inline void codebook_loss_backward(const TokenIndexVector& a, const Tensor& z_q,
                                   const ImageFeatureGrid& z_e, Codebook& cb,
                                   double upstream = 1.0) {
    const Tensor dzq = mse_backward(z_q, z_e.features);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t d = 0; d < cb.C; ++d)
            cb.entries.grad.at(a[i], d) += upstream * dzq.at(i, d);
}

// ---------------------------------------------------------------------------
// Image feature stand-in: per 4x4 patch, 2x2 block averages projected to C by
// a frozen random matrix. No trained encoder; spatial structure is preserved.
// ---------------------------------------------------------------------------

// Frozen projection [4 x C], seeded.
inline Tensor make_feature_projection(std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    Tensor p({4, c});
    const double scale = 1.0 / std::sqrt(4.0);
    for (double& v : p.data) v = scale * rng.normal();
    return p;
}

// Separable [1 2 1]/4 smoothing with replicated borders.
inline Tensor blur3(const Tensor& image) {
    const std::size_t h = image.rows(), w = image.cols();
    Tensor horiz({h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double left = image.at(r, c > 0 ? c - 1 : 0);
            const double right = image.at(r, c + 1 < w ? c + 1 : w - 1);
            horiz.at(r, c) = 0.25 * left + 0.5 * image.at(r, c) + 0.25 * right;
        }
    Tensor out({h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double up = horiz.at(r > 0 ? r - 1 : 0, c);
            const double down = horiz.at(r + 1 < h ? r + 1 : h - 1, c);
            out.at(r, c) = 0.25 * up + 0.5 * horiz.at(r, c) + 0.25 * down;
        }
    return out;
}

// Frozen feature map: smooth the image, average each patch's four quadrants,
// project the 4 quadrant means through the fixed random matrix. Smoothing
// keeps the features tolerant of the corpus' small keypoint jitter.
inline ImageFeatureGrid patch_features(const Tensor& image, std::size_t patch,
                                       const Tensor& projection) {
    if (image.rank() != 2 || image.rows() % patch != 0 || image.cols() % patch != 0) {
        throw ConfigError("patch_features: patch " + std::to_string(patch) +
                          " does not divide image " + shape_str(image.shape));
    }
    if (projection.rows() != 4) {
        throw DimensionError("patch_features: projection must have 4 rows, got " +
                             shape_str(projection.shape));
    }
    const Tensor smooth = blur3(blur3(image));
    const std::size_t gh = image.rows() / patch, gw = image.cols() / patch;
    const std::size_t half = patch / 2;
    Tensor quads({gh * gw, 4});
    for (std::size_t pr = 0; pr < gh; ++pr) {
        for (std::size_t pc = 0; pc < gw; ++pc) {
            const std::size_t tok = pr * gw + pc;
            for (std::size_t q = 0; q < 4; ++q) {
                const std::size_t r0 = pr * patch + (q / 2) * half;
                const std::size_t c0 = pc * patch + (q % 2) * half;
                double sum = 0.0;
                for (std::size_t r = r0; r < r0 + half; ++r)
                    for (std::size_t c = c0; c < c0 + half; ++c) sum += smooth.at(r, c);
                quads.at(tok, q) = sum / static_cast<double>(half * half);
            }
        }
    }
    return ImageFeatureGrid{matmul(quads, projection), gh, gw};
}

// ---------------------------------------------------------------------------
// Stage-one training
// ---------------------------------------------------------------------------

struct CodebookTrainConfig {
    int epochs = 30;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int batch = 16;  // grids per optimizer step
};

struct TrainReport {
    std::vector<double> epoch_losses;
    std::vector<double> epoch_accuracy;  // unused by codebook training
};

// Entries seeded from the first K distinct corpus feature rows.
inline void init_codebook_from_corpus(const std::vector<ImageFeatureGrid>& corpus, Codebook& cb) {
    std::vector<std::vector<double>> seen;
    for (const ImageFeatureGrid& g : corpus) {
        for (std::size_t i = 0; i < g.tokens() && seen.size() < cb.K; ++i) {
            std::vector<double> row(cb.C);
            for (std::size_t d = 0; d < cb.C; ++d) row[d] = g.features.at(i, d);
            bool duplicate = false;
            for (const auto& s : seen)
                if (s == row) {
                    duplicate = true;
                    break;
                }
            if (!duplicate) seen.push_back(std::move(row));
        }
        if (seen.size() >= cb.K) break;
    }
    if (seen.size() < cb.K) {
        throw ConfigError("codebook init: corpus has only " + std::to_string(seen.size()) +
                          " distinct feature rows, need K=" + std::to_string(cb.K));
    }
    for (std::size_t j = 0; j < cb.K; ++j)
        for (std::size_t d = 0; d < cb.C; ++d) cb.entries.value.at(j, d) = seen[j][d];
}

inline TrainReport train_codebook(const std::vector<ImageFeatureGrid>& corpus, Codebook& cb,
                                  const CodebookTrainConfig& cfg, Rng& rng) {
    if (corpus.empty()) throw ConfigError("train_codebook: empty corpus");
    for (const ImageFeatureGrid& g : corpus) {
        if (g.dim() != cb.C) {
            throw ConfigError("train_codebook: corpus feature dim " + std::to_string(g.dim()) +
                              " vs codebook C=" + std::to_string(cb.C));
        }
    }
    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    std::vector<Parameter*> params{&cb.entries};
    TrainReport report;
    const std::size_t batch = cfg.batch > 0 ? static_cast<std::size_t>(cfg.batch) : corpus.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr_scale = cosine_decay(epoch, cfg.epochs);
        std::vector<std::size_t> assigned(cb.K, 0);
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t start = 0; start < corpus.size(); start += batch) {
            cb.entries.zero_grad();
            const std::size_t end = std::min(corpus.size(), start + batch);
            double batch_loss = 0.0;
            for (std::size_t s = start; s < end; ++s) {
                const ImageFeatureGrid& g = corpus[s];
                const DistanceMatrix d = pairwise_sq_distance(g, cb);
                const TokenIndexVector a = assign_indices(d);
                for (std::size_t idx : a) ++assigned[idx];
                const Tensor z_q = quantize_gather(a, cb);
                batch_loss += codebook_loss(z_q, g);
                codebook_loss_backward(a, z_q, g, cb, 1.0 / static_cast<double>(end - start));
            }
            batch_loss /= static_cast<double>(end - start);
            check_finite(batch_loss, "codebook batch loss");
            loss_sum += batch_loss * static_cast<double>(end - start);
            loss_count += end - start;
            opt.step(params, lr_scale);
        }
        report.epoch_losses.push_back(loss_sum / static_cast<double>(loss_count));
        // Re-seed entries that went a full epoch without an assignment.
        for (std::size_t j = 0; j < cb.K; ++j) {
            if (assigned[j] != 0) continue;
            const ImageFeatureGrid& g = corpus[rng.next_below(corpus.size())];
            const std::size_t row = rng.next_below(g.tokens());
            for (std::size_t d = 0; d < cb.C; ++d)
                cb.entries.value.at(j, d) = g.features.at(row, d);
        }
    }
    return report;
}

}  // namespace kbdm
