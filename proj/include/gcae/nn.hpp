#pragma once

#include <cblas.h>

#include <cmath>
#include <string>
#include <vector>

#include "gcae/graph.hpp"
#include "gcae/rng.hpp"
#include "gcae/tensor.hpp"

namespace gcae {

enum class Act : uint8_t { None, Selu, ScaledSoftsign, Sigmoid };

inline const char* act_name(Act a) {
    switch (a) {
        case Act::None: return "none";
        case Act::Selu: return "selu";
        case Act::ScaledSoftsign: return "scaled_softsign";
        case Act::Sigmoid: return "sigmoid";
    }
    return "?";
}

inline Act act_from_name(const std::string& s) {
    if (s == "none") return Act::None;
    if (s == "selu") return Act::Selu;
    if (s == "scaled_softsign") return Act::ScaledSoftsign;
    if (s == "sigmoid") return Act::Sigmoid;
    throw ConfigError("unknown activation: " + s);
}

// Scratch buffers for the tape-free forward path, reused across calls.
struct Workspace {
    std::vector<float> a, b;
};

// Node ids of one forward pass; weight/bias ids line up with Mlp layers.
struct MlpTapeIds {
    std::vector<int> weights;
    std::vector<int> biases;
    int output = -1;
};

// Fully connected net. Weights are (in x out) row-major; initialization is
// fan-in-scaled uniform (bound = 1/sqrt(fan_in)) for weights and biases.
class Mlp {
public:
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    std::vector<Act> acts;

    static Mlp build(const std::vector<int64_t>& layer_sizes, const std::vector<Act>& activations,
                     RngStream& rng) {
        if (layer_sizes.size() < 2)
            throw ContractError("build_mlp: need at least one layer (got " +
                                std::to_string(layer_sizes.size()) + " sizes)");
        if (activations.size() != layer_sizes.size() - 1)
            throw ContractError("build_mlp: " + std::to_string(activations.size()) +
                                " activations for " + std::to_string(layer_sizes.size() - 1) +
                                " layers");
        Mlp net;
        net.acts = activations;
        for (size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
            const int64_t fan_in = layer_sizes[l], fan_out = layer_sizes[l + 1];
            const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
            Tensor w({fan_in, fan_out});
            rng.fill_uniform(w.mut(), w.numel(), -bound, bound);
            Tensor b({fan_out});
            rng.fill_uniform(b.mut(), b.numel(), -bound, bound);
            net.weights.push_back(std::move(w));
            net.biases.push_back(std::move(b));
        }
        return net;
    }

    int64_t in_dim() const { return weights.front().shape()[0]; }
    int64_t out_dim() const { return weights.back().shape()[1]; }
    size_t layer_count() const { return weights.size(); }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& w : weights) n += w.numel();
        for (const auto& b : biases) n += b.numel();
        return n;
    }

    // Forward on the tape. Parameters enter as leaves; their node ids are
    // reported so callers can read gradients back after backward().
    // skip_head_activation exposes pre-activation logits under a sigmoid head.
    int forward(Graph& g, int x, bool params_require_grad, MlpTapeIds* ids = nullptr,
                bool skip_head_activation = false) const {
        int h = x;
        MlpTapeIds local;
        for (size_t l = 0; l < weights.size(); ++l) {
            int w = g.leaf(weights[l], params_require_grad);
            int b = g.leaf(biases[l], params_require_grad);
            local.weights.push_back(w);
            local.biases.push_back(b);
            h = g.affine(h, w, b);
            if (!(skip_head_activation && l + 1 == weights.size())) h = apply_act(g, h, acts[l]);
        }
        local.output = h;
        if (ids) *ids = local;
        return h;
    }

    // Tape-free forward for evaluation loops. `x` is rows x in_dim,
    // `out` must hold rows x out_dim.
    void forward_raw(const float* x, int64_t rows, float* out, Workspace& ws,
                     bool skip_head_activation = false) const {
        const float* src = x;
        std::vector<float>* cur = &ws.a;
        std::vector<float>* nxt = &ws.b;
        for (size_t l = 0; l < weights.size(); ++l) {
            const int64_t in = weights[l].shape()[0], on = weights[l].shape()[1];
            float* dst = nullptr;
            if (l + 1 == weights.size()) {
                dst = out;
            } else {
                nxt->resize(static_cast<size_t>(rows * on));
                dst = nxt->data();
            }
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(rows),
                        static_cast<int>(on), static_cast<int>(in), 1.0f, src,
                        static_cast<int>(in), weights[l].ptr(), static_cast<int>(on), 0.0f, dst,
                        static_cast<int>(on));
            const float* bp = biases[l].ptr();
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < on; ++j) dst[i * on + j] += bp[j];
            if (!(skip_head_activation && l + 1 == weights.size()))
                apply_act_raw(dst, rows * on, acts[l]);
            src = dst;
            std::swap(cur, nxt);
        }
        (void)cur;
    }

private:
    static int apply_act(Graph& g, int h, Act a) {
        switch (a) {
            case Act::None: return h;
            case Act::Selu: return g.selu(h);
            case Act::ScaledSoftsign: return g.scaled_softsign(h);
            case Act::Sigmoid: return g.sigmoid(h);
        }
        return h;
    }

    static void apply_act_raw(float* v, int64_t n, Act a) {
        switch (a) {
            case Act::None:
                return;
            case Act::Selu:
                for (int64_t i = 0; i < n; ++i) v[i] = detail::selu(v[i]);
                return;
            case Act::ScaledSoftsign:
                for (int64_t i = 0; i < n; ++i) v[i] = 3.0f * v[i] / (1.0f + std::fabs(v[i]));
                return;
            case Act::Sigmoid:
                for (int64_t i = 0; i < n; ++i) v[i] = detail::stable_sigmoid(v[i]);
                return;
        }
    }
};

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
};

// State for one parameter tensor.
struct AdamState {
    Tensor first_moment;
    Tensor second_moment;
    int64_t step_count = 0;

    explicit AdamState(const Shape& shape)
        : first_moment(Tensor::zeros(shape)), second_moment(Tensor::zeros(shape)) {}
    AdamState() = default;
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& st, const AdamConfig& cfg) {
    if (param.shape() != grad.shape() || param.shape() != st.first_moment.shape())
        throw ContractError("adam_step: shape mismatch param " + shape_str(param.shape()) +
                            " grad " + shape_str(grad.shape()));
    st.step_count += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step_count));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step_count));
    float* p = param.mut();
    float* m = st.first_moment.mut();
    float* v = st.second_moment.mut();
    const float* g = grad.ptr();
    for (int64_t i = 0; i < param.numel(); ++i) {
        m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g[i]);
        v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
}

// Adam over all tensors of one Mlp.
class MlpOptimizer {
public:
    MlpOptimizer() = default;
    MlpOptimizer(const Mlp& net, AdamConfig cfg) : cfg_(cfg) {
        for (const auto& w : net.weights) states_.emplace_back(w.shape());
        for (const auto& b : net.biases) states_.emplace_back(b.shape());
    }

    void step(Mlp& net, const Graph& g, const MlpTapeIds& ids) {
        size_t s = 0;
        for (size_t l = 0; l < net.weights.size(); ++l)
            adam_step(net.weights[l], g.grad(ids.weights[l]), states_[s++], cfg_);
        for (size_t l = 0; l < net.biases.size(); ++l)
            adam_step(net.biases[l], g.grad(ids.biases[l]), states_[s++], cfg_);
    }

    const AdamConfig& config() const { return cfg_; }
    std::vector<AdamState>& states() { return states_; }
    const std::vector<AdamState>& states() const { return states_; }

private:
    AdamConfig cfg_;
    std::vector<AdamState> states_;
};

}  // namespace gcae
