#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kbdm/codebook.hpp"
#include "kbdm/mlp.hpp"
#include "kbdm/optim.hpp"

namespace kbdm {

/// Deterministic stand-in text embedding: label hash seeds a frozen random
/// unit vector. Identical labels always give identical vectors.
struct TextEmbedding {
    Tensor vector;  // [1 x C_t]
};

struct PromptComponents {
    std::vector<std::string> components;  // nonempty, order preserved
};

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline TextEmbedding embed_text(const std::string& label, std::size_t dim = 32) {
    Rng rng(fnv1a64(label));
    Tensor v({1, dim});
    double norm = 0.0;
    for (double& x : v.data) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v.data) x /= norm;
    return TextEmbedding{std::move(v)};
}

// Prompt embedding: normalized mean of component embeddings. A single
// component reduces exactly to embed_text of that component.
inline TextEmbedding embed_prompt(const std::vector<std::string>& components, std::size_t dim = 32) {
    if (components.empty()) throw DataError("embed_prompt: empty component list");
    Tensor mean({1, dim});
    for (const std::string& c : components) mean += embed_text(c, dim).vector;
    mean *= 1.0 / static_cast<double>(components.size());
    double norm = 0.0;
    for (double x : mean.data) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) mean *= 1.0 / norm;
    return TextEmbedding{std::move(mean)};
}

/// Text-query classifier: 2-layer perceptron C_t -> hidden -> N*K, reshaped to
/// per-position codebook logits.
struct Classifier {
    Mlp mlp;
    std::size_t positions = 0;  // N
    std::size_t entries = 0;    // K
    std::size_t text_dim = 0;   // C_t

    static Classifier make(std::size_t text_dim, std::size_t hidden, std::size_t positions,
                           std::size_t entries, Rng& rng) {
        Classifier c;
        c.mlp = Mlp::make({text_dim, hidden, positions * entries}, rng, "classifier");
        c.positions = positions;
        c.entries = entries;
        c.text_dim = text_dim;
        return c;
    }
};

struct TokenLogits {
    Tensor values;  // [N x K]
};

inline TokenLogits predict_logits(const Classifier& cls, const TextEmbedding& z_t,
                                  Mlp::Cache* cache = nullptr) {
    Tensor flat = cls.mlp.forward(z_t.vector, Activation::none, cache);  // [1 x N*K]
    return TokenLogits{Tensor({cls.positions, cls.entries}, std::move(flat.data))};
}

// Argmax per position, ties to the lowest index.
inline TokenIndexVector logits_to_indices(const TokenLogits& logits) {
    TokenIndexVector a(logits.values.rows());
    for (std::size_t i = 0; i < logits.values.rows(); ++i) {
        std::size_t best = 0;
        double best_val = logits.values.at(i, 0);
        for (std::size_t j = 1; j < logits.values.cols(); ++j) {
            if (logits.values.at(i, j) > best_val) {
                best_val = logits.values.at(i, j);
                best = j;
            }
        }
        a[i] = best;
    }
    return a;
}

inline TokenIndexVector retrieve_indices(const Classifier& cls, const TextEmbedding& z_t) {
    return logits_to_indices(predict_logits(cls, z_t));
}

// Gathered codebook rows for the argmax indices (one_hot(j) . e).
inline Tensor retrieve(const Classifier& cls, const TextEmbedding& z_t, const Codebook& cb) {
    return quantize_gather(retrieve_indices(cls, z_t), cb);
}

enum class Fusion { mean, sum, select };

inline Fusion parse_fusion(const std::string& s) {
    if (s == "mean") return Fusion::mean;
    if (s == "sum") return Fusion::sum;
    if (s == "select") return Fusion::select;
    throw ConfigError("unknown fusion mode: " + s);
}

// Decomposition and combination: retrieve per component, then fuse the
// feature grids. `select` keeps, per position, the candidate row closest in
// squared distance to the other candidates (first wins ties).
inline Tensor retrieve_dc(const Classifier& cls, const PromptComponents& prompt,
                          const Codebook& cb, Fusion fusion = Fusion::mean) {
    if (prompt.components.empty()) throw DataError("retrieve_dc: empty component list");
    std::vector<Tensor> grids;
    grids.reserve(prompt.components.size());
    for (const std::string& c : prompt.components)
        grids.push_back(retrieve(cls, embed_text(c, cls.text_dim), cb));
    if (grids.size() == 1) return grids[0];

    const std::size_t n = grids[0].rows(), c = grids[0].cols();
    Tensor fused({n, c});
    switch (fusion) {
        case Fusion::mean:
        case Fusion::sum: {
            for (const Tensor& g : grids) fused += g;
            if (fusion == Fusion::mean) fused *= 1.0 / static_cast<double>(grids.size());
            break;
        }
        case Fusion::select: {
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t best = 0;
                double best_cost = 0.0;
                for (std::size_t a = 0; a < grids.size(); ++a) {
                    double cost = 0.0;
                    for (std::size_t b = 0; b < grids.size(); ++b) {
                        for (std::size_t d = 0; d < c; ++d) {
                            double diff = grids[a].at(i, d) - grids[b].at(i, d);
                            cost += diff * diff;
                        }
                    }
                    if (a == 0 || cost < best_cost) {
                        best_cost = cost;
                        best = a;
                    }
                }
                for (std::size_t d = 0; d < c; ++d) fused.at(i, d) = grids[best].at(i, d);
            }
            break;
        }
    }
    return fused;
}

// ---------------------------------------------------------------------------
// Stage-two training
// ---------------------------------------------------------------------------

struct ClassifierTrainConfig {
    int epochs = 30;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int batch = 16;
};

struct TrainPair {
    TextEmbedding text;
    TokenIndexVector indices;
};

inline double index_accuracy(const TokenIndexVector& predicted, const TokenIndexVector& actual) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == actual[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

inline TrainReport train_classifier(const std::vector<TrainPair>& pairs, Classifier& cls,
                                    const ClassifierTrainConfig& cfg) {
    if (pairs.empty()) throw ConfigError("train_classifier: no training pairs");
    for (const TrainPair& p : pairs) {
        if (p.indices.size() != cls.positions) {
            throw ConfigError("train_classifier: index vector length " +
                              std::to_string(p.indices.size()) + " vs N=" +
                              std::to_string(cls.positions));
        }
        for (std::size_t idx : p.indices) {
            if (idx >= cls.entries) {
                throw IndexError("train_classifier: target index " + std::to_string(idx) +
                                 " >= K=" + std::to_string(cls.entries));
            }
        }
    }
    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    std::vector<Parameter*> params = cls.mlp.parameters();
    TrainReport report;
    const std::size_t batch = cfg.batch > 0 ? static_cast<std::size_t>(cfg.batch) : pairs.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr_scale = cosine_decay(epoch, cfg.epochs);
        double loss_sum = 0.0, acc_sum = 0.0;
        for (std::size_t start = 0; start < pairs.size(); start += batch) {
            cls.mlp.zero_grad();
            const std::size_t end = std::min(pairs.size(), start + batch);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t s = start; s < end; ++s) {
                Mlp::Cache cache;
                const TokenLogits logits = predict_logits(cls, pairs[s].text, &cache);
                loss_sum += cross_entropy(logits.values, pairs[s].indices);
                acc_sum += index_accuracy(logits_to_indices(logits), pairs[s].indices);
                Tensor dlogits = cross_entropy_backward(logits.values, pairs[s].indices);
                dlogits *= inv;
                cls.mlp.backward(cache, Tensor({1, cls.positions * cls.entries},
                                               std::move(dlogits.data)));
            }
            opt.step(params, lr_scale);
        }
        report.epoch_losses.push_back(loss_sum / static_cast<double>(pairs.size()));
        report.epoch_accuracy.push_back(acc_sum / static_cast<double>(pairs.size()));
        check_finite(report.epoch_losses.back(), "classifier epoch loss");
    }
    return report;
}

}  // namespace kbdm
