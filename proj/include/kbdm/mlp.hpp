#pragma once

#include <string>
#include <vector>

#include "kbdm/tensor.hpp"

namespace kbdm {

enum class Activation { none, relu, sigmoid };

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Tensor apply_activation(const Tensor& x, Activation act) {
    Tensor out = x;
    switch (act) {
        case Activation::none:
            break;
        case Activation::relu:
            for (double& v : out.data) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::sigmoid:
            for (double& v : out.data) v = sigmoid(v);
            break;
    }
    return out;
}

// Gradient through the activation given its pre-activation input.
inline Tensor activation_backward(const Tensor& pre, const Tensor& dout, Activation act) {
    Tensor dx = dout;
    switch (act) {
        case Activation::none:
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < dx.numel(); ++i)
                if (pre.data[i] <= 0.0) dx.data[i] = 0.0;
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < dx.numel(); ++i) {
                double s = sigmoid(pre.data[i]);
                dx.data[i] *= s * (1.0 - s);
            }
            break;
    }
    return dx;
}

struct DenseLayer {
    Parameter w;  // [in x out]
    Parameter b;  // [1 x out], broadcast over rows
};

/// Affine-activation stack. Hidden layers use hidden_activation; the final
/// layer's activation is chosen per forward call.
struct Mlp {
    std::vector<DenseLayer> layers;
    Activation hidden_activation = Activation::relu;

    static Mlp make(const std::vector<std::size_t>& dims, Rng& rng, const std::string& prefix) {
        Mlp net;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            DenseLayer layer;
            std::string id = prefix + ".l" + std::to_string(l);
            layer.w = Parameter(id + ".w", init_uniform({dims[l], dims[l + 1]}, dims[l], dims[l + 1], rng));
            layer.b = Parameter(id + ".b", Tensor::zeros({1, dims[l + 1]}));
            net.layers.push_back(std::move(layer));
        }
        return net;
    }

    struct Cache {
        std::vector<Tensor> inputs;    // input to each layer
        std::vector<Tensor> preacts;   // affine output of each layer
        Activation final_activation = Activation::none;
    };

    Tensor forward(const Tensor& x, Activation final_activation, Cache* cache = nullptr) const {
        if (layers.empty()) throw ConfigError("mlp has no layers");
        if (cache) {
            cache->inputs.clear();
            cache->preacts.clear();
            cache->final_activation = final_activation;
        }
        Tensor h = x;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const DenseLayer& layer = layers[l];
            if (h.cols() != layer.w.value.rows()) {
                throw DimensionError("mlp layer " + std::to_string(l) + ": input " +
                                     shape_str(h.shape) + " vs weight " +
                                     shape_str(layer.w.value.shape));
            }
            if (cache) cache->inputs.push_back(h);
            Tensor pre = matmul(h, layer.w.value);
            for (std::size_t i = 0; i < pre.rows(); ++i)
                for (std::size_t j = 0; j < pre.cols(); ++j)
                    pre.at(i, j) += layer.b.value.at(0, j);
            if (cache) cache->preacts.push_back(pre);
            Activation act = (l + 1 == layers.size()) ? final_activation : hidden_activation;
            h = apply_activation(pre, act);
        }
        return h;
    }

    // Accumulates parameter gradients from a cached forward pass and returns
    // the gradient with respect to the input.
    Tensor backward(const Cache& cache, const Tensor& dout) {
        Tensor d = dout;
        for (std::size_t l = layers.size(); l-- > 0;) {
            Activation act = (l + 1 == layers.size()) ? cache.final_activation : hidden_activation;
            d = activation_backward(cache.preacts[l], d, act);
            // bias gradient: column sums
            for (std::size_t i = 0; i < d.rows(); ++i)
                for (std::size_t j = 0; j < d.cols(); ++j)
                    layers[l].b.grad.at(0, j) += d.at(i, j);
            matmul_backward(cache.inputs[l], layers[l].w.value, d, nullptr, &layers[l].w.grad);
            d = matmul(d, transpose(layers[l].w.value));
        }
        return d;
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps;
        for (DenseLayer& l : layers) {
            ps.push_back(&l.w);
            ps.push_back(&l.b);
        }
        return ps;
    }

    void zero_grad() {
        for (DenseLayer& l : layers) {
            l.w.zero_grad();
            l.b.zero_grad();
        }
    }
};

inline Tensor mlp_forward(const Tensor& x, const Mlp& net, Activation final_activation) {
    return net.forward(x, final_activation);
}

}  // namespace kbdm
