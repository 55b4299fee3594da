#pragma once

#include <cblas.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gcae/tensor.hpp"

namespace gcae {

// Tape-based reverse-mode autodiff over float32 tensors.
//
// One Graph per training step: nodes are appended in forward order (which is
// therefore a valid topological order) and the whole tape is discarded after
// backward. A Graph is single-threaded; concurrency happens across graphs.
//
// Gradients are only propagated into inputs that can reach a requires_grad
// leaf, so e.g. a frozen discriminator used inside an encoder loss never pays
// for weight-gradient GEMMs.
//
// Scalar-producing ops (mse, bce, mean, sum) raise NumericFault on non-finite
// output; elementwise ops do not scan their outputs on the hot path.

enum class Op : uint8_t {
    Leaf,
    Matmul,
    BiasAdd,
    Affine,
    Selu,
    ScaledSoftsign,
    Sigmoid,
    Exp,
    Log,
    Square,
    Clamp,
    Add,
    Sub,
    Mul,
    Scale,
    MeanAll,
    SumAll,
    ConcatCols,
    ConcatRows,
    TileRows,
    WithColumn,
    Reshape,
    Mse,
    BceLogits,
    StopGrad,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Matmul: return "matmul";
        case Op::BiasAdd: return "bias_add";
        case Op::Affine: return "affine";
        case Op::Selu: return "selu";
        case Op::ScaledSoftsign: return "scaled_softsign";
        case Op::Sigmoid: return "sigmoid";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::Clamp: return "clamp";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::MeanAll: return "mean";
        case Op::SumAll: return "sum";
        case Op::ConcatCols: return "concat_cols";
        case Op::ConcatRows: return "concat_rows";
        case Op::TileRows: return "tile_rows";
        case Op::WithColumn: return "with_column";
        case Op::Reshape: return "reshape";
        case Op::Mse: return "mse";
        case Op::BceLogits: return "bce_logits";
        case Op::StopGrad: return "stop_gradient";
    }
    return "?";
}

namespace detail {
// Single-threaded BLAS, process-wide: concurrent calls into a threaded
// OpenBLAS share its worker pool and the reduction splits become
// scheduling-dependent, which breaks bitwise reproducibility. Parallelism
// happens at the discriminator/run level instead. (See runtime.hpp for the
// kernel-selection fixup, which must run even earlier.)
extern "C" void openblas_set_num_threads(int);
struct BlasProcessInit {
    BlasProcessInit() { openblas_set_num_threads(1); }
};
inline BlasProcessInit blas_process_init;

constexpr float kSeluAlpha = 1.6732632423543772f;
constexpr float kSeluScale = 1.0507009873554805f;
// ln((1-eps)/eps) for eps = 1e-7: clamping logits at +/- this bound is the
// same as clamping sigmoid outputs to [eps, 1-eps] before log/ratio.
constexpr float kLogitClamp = 16.11809565095832f;

inline float stable_sigmoid(float x) {
    if (x >= 0.0f) {
        return 1.0f / (1.0f + std::exp(-x));
    }
    float e = std::exp(x);
    return e / (1.0f + e);
}

inline float softplus(float x) {
    // log(1 + e^x), overflow-safe
    if (x > 30.0f) return x;
    if (x < -30.0f) return std::exp(x);
    return std::log1p(std::exp(x));
}

// expf-based branch; expm1f costs ~4x more and the sub-ulp difference near
// zero is far below the float32 noise floor of these nets.
inline float selu(float x) {
    return x > 0.0f ? kSeluScale * x : kSeluScale * kSeluAlpha * (std::exp(x) - 1.0f);
}
}  // namespace detail

class Graph {
public:
    struct Node {
        Op op = Op::Leaf;
        int a = -1;
        int b = -1;
        int c = -1;  // third input (affine bias)
        Tensor value;
        Tensor grad;       // allocated on first accumulation
        Tensor aux;        // op-specific constant (e.g. substituted column, bce targets)
        Tensor aux2;       // second constant (bce weights)
        float p0 = 0.0f;   // op params: clamp lo / scale factor / bce target
        float p1 = 0.0f;   // clamp hi
        int64_t i0 = 0;    // column index / tile count
        bool needs_grad = false;
    };

    struct Stats {
        int64_t bce_logits_clamped = 0;
    };

    int leaf(Tensor value, bool requires_grad) {
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(value);
        n.needs_grad = requires_grad;
        return push(std::move(n));
    }

    int matmul(int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.ndim() != 2 || B.ndim() != 2 || A.shape()[1] != B.shape()[0])
            fail_shape(Op::Matmul, A, B);
        Node n = binary(Op::Matmul, a, b);
        n.value = Tensor({A.shape()[0], B.shape()[1]});
        sgemm(false, false, A.shape()[0], B.shape()[1], A.shape()[1], 1.0f, A.ptr(), B.ptr(), 0.0f,
              n.value.mut());
        return push(std::move(n));
    }

    int bias_add(int a, int bias) {
        const Tensor& A = val(a);
        const Tensor& B = val(bias);
        if (A.ndim() != 2 || B.numel() != A.shape()[1]) fail_shape(Op::BiasAdd, A, B);
        Node n = binary(Op::BiasAdd, a, bias);
        n.value = Tensor(A.shape());
        const int64_t r = A.shape()[0], c = A.shape()[1];
        const float* ap = A.ptr();
        const float* bp = B.ptr();
        float* out = n.value.mut();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) out[i * c + j] = ap[i * c + j] + bp[j];
        return push(std::move(n));
    }

    // Fused x*W + b (one output buffer, bias seeded before the GEMM).
    // Semantically identical to bias_add(matmul(x, w), b).
    int affine(int x, int w, int bias) {
        const Tensor& X = val(x);
        const Tensor& W = val(w);
        const Tensor& B = val(bias);
        if (X.ndim() != 2 || W.ndim() != 2 || X.shape()[1] != W.shape()[0])
            fail_shape(Op::Affine, X, W);
        if (B.numel() != W.shape()[1]) fail_shape(Op::Affine, W, B);
        Node n = binary(Op::Affine, x, w);
        n.c = bias;
        n.needs_grad = n.needs_grad || nodes_[static_cast<size_t>(bias)].needs_grad;
        const int64_t r = X.shape()[0], c = W.shape()[1];
        n.value = Tensor({r, c});
        float* out = n.value.mut();
        for (int64_t i = 0; i < r; ++i) std::copy_n(B.ptr(), c, out + i * c);
        sgemm(false, false, r, c, X.shape()[1], 1.0f, X.ptr(), W.ptr(), 1.0f, out);
        return push(std::move(n));
    }

    int selu(int a) {
        return unary_map(Op::Selu, a, [](float x) { return detail::selu(x); });
    }

    // 3*s/(1+|s|): bounded output in (-3, 3).
    int scaled_softsign(int a) {
        return unary_map(Op::ScaledSoftsign, a,
                         [](float x) { return 3.0f * x / (1.0f + std::fabs(x)); });
    }

    int sigmoid(int a) {
        return unary_map(Op::Sigmoid, a, [](float x) { return detail::stable_sigmoid(x); });
    }

    int exp_(int a) {
        return unary_map(Op::Exp, a, [](float x) { return std::exp(x); });
    }

    int log_(int a) {
        return unary_map(Op::Log, a, [](float x) { return std::log(x); });
    }

    int square(int a) {
        return unary_map(Op::Square, a, [](float x) { return x * x; });
    }

    int clamp(int a, float lo, float hi) {
        Node n = unary(Op::Clamp, a);
        n.p0 = lo;
        n.p1 = hi;
        n.value = Tensor(val(a).shape());
        const float* x = val(a).ptr();
        float* out = n.value.mut();
        for (int64_t i = 0; i < val(a).numel(); ++i) out[i] = std::fmin(std::fmax(x[i], lo), hi);
        return push(std::move(n));
    }

    int add(int a, int b) { return elementwise(Op::Add, a, b, [](float x, float y) { return x + y; }); }
    int sub(int a, int b) { return elementwise(Op::Sub, a, b, [](float x, float y) { return x - y; }); }
    int mul(int a, int b) { return elementwise(Op::Mul, a, b, [](float x, float y) { return x * y; }); }

    int scale(int a, float s) {
        Node n = unary(Op::Scale, a);
        n.p0 = s;
        n.value = Tensor(val(a).shape());
        const float* x = val(a).ptr();
        float* out = n.value.mut();
        for (int64_t i = 0; i < val(a).numel(); ++i) out[i] = x[i] * s;
        return push(std::move(n));
    }

    int mean_all(int a) { return reduce(Op::MeanAll, a); }
    int sum_all(int a) { return reduce(Op::SumAll, a); }

    int concat_cols(int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.ndim() != 2 || B.ndim() != 2 || A.shape()[0] != B.shape()[0])
            fail_shape(Op::ConcatCols, A, B);
        Node n = binary(Op::ConcatCols, a, b);
        const int64_t r = A.shape()[0], ca = A.shape()[1], cb = B.shape()[1];
        n.value = Tensor({r, ca + cb});
        float* out = n.value.mut();
        for (int64_t i = 0; i < r; ++i) {
            std::copy_n(A.ptr() + i * ca, ca, out + i * (ca + cb));
            std::copy_n(B.ptr() + i * cb, cb, out + i * (ca + cb) + ca);
        }
        return push(std::move(n));
    }

    int concat_rows(int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.ndim() != 2 || B.ndim() != 2 || A.shape()[1] != B.shape()[1])
            fail_shape(Op::ConcatRows, A, B);
        Node n = binary(Op::ConcatRows, a, b);
        n.value = Tensor({A.shape()[0] + B.shape()[0], A.shape()[1]});
        float* out = n.value.mut();
        std::copy_n(A.ptr(), A.numel(), out);
        std::copy_n(B.ptr(), B.numel(), out + A.numel());
        return push(std::move(n));
    }

    int tile_rows(int a, int64_t times) {
        const Tensor& A = val(a);
        if (A.ndim() != 2 || times < 1)
            throw ShapeError(std::string("tile_rows: bad input ") + shape_str(A.shape()) +
                             " times=" + std::to_string(times));
        Node n = unary(Op::TileRows, a);
        n.i0 = times;
        const int64_t r = A.shape()[0], c = A.shape()[1];
        n.value = Tensor({times * r, c});
        float* out = n.value.mut();
        for (int64_t t = 0; t < times; ++t) std::copy_n(A.ptr(), r * c, out + t * r * c);
        return push(std::move(n));
    }

    // Copy of `a` with column `col` replaced by the constant vector
    // `column` (one value per row). No gradient flows into the replaced
    // slot, which is exactly the stop-gradient the conditional-input layout
    // requires.
    int with_column(int a, int64_t col, Tensor column) {
        const Tensor& A = val(a);
        if (A.ndim() != 2 || col < 0 || col >= A.shape()[1] || column.numel() != A.shape()[0])
            throw ShapeError(std::string("with_column: input ") + shape_str(A.shape()) + " col=" +
                             std::to_string(col) + " column " + shape_str(column.shape()));
        Node n = unary(Op::WithColumn, a);
        n.i0 = col;
        n.value = Tensor(A.shape());
        const int64_t r = A.shape()[0], c = A.shape()[1];
        float* out = n.value.mut();
        std::copy_n(A.ptr(), r * c, out);
        const float* u = column.ptr();
        for (int64_t i = 0; i < r; ++i) out[i * c + col] = u[i];
        n.aux = std::move(column);
        return push(std::move(n));
    }

    int reshape(int a, Shape s) {
        Node n = unary(Op::Reshape, a);
        n.value = val(a).reshaped(std::move(s));
        return push(std::move(n));
    }

    int mse(int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.shape() != B.shape()) fail_shape(Op::Mse, A, B);
        Node n = binary(Op::Mse, a, b);
        const float* x = A.ptr();
        const float* y = B.ptr();
        double acc = 0.0;
        for (int64_t i = 0; i < A.numel(); ++i) {
            double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
            acc += d * d;
        }
        n.value = Tensor::scalar(static_cast<float>(acc / static_cast<double>(A.numel())));
        check_scalar_finite(Op::Mse, n.value);
        return push(std::move(n));
    }

    // Binary cross entropy of sigmoid(logits), computed from logits as the
    // weighted sum of per-element terms: sum_i w_i * (softplus(s_i) - t_i*s_i).
    // Logits are clamped to +/-kLogitClamp, equivalent to clamping the
    // probability to [1e-7, 1-1e-7]; clamping is counted in stats().
    int bce_with_logits(int a, Tensor targets, Tensor weights) {
        const Tensor& A = val(a);
        if (targets.numel() != A.numel() || weights.numel() != A.numel())
            throw ShapeError("bce_logits: logits " + shape_str(A.shape()) + ", targets " +
                             shape_str(targets.shape()) + ", weights " +
                             shape_str(weights.shape()));
        Node n = unary(Op::BceLogits, a);
        const float* s = A.ptr();
        const float* t = targets.ptr();
        const float* w = weights.ptr();
        double acc = 0.0;
        int64_t clamped = 0;
        for (int64_t i = 0; i < A.numel(); ++i) {
            float sc = s[i];
            if (sc > detail::kLogitClamp || sc < -detail::kLogitClamp) {
                sc = std::fmin(std::fmax(sc, -detail::kLogitClamp), detail::kLogitClamp);
                ++clamped;
            }
            acc += static_cast<double>(w[i]) *
                   (static_cast<double>(detail::softplus(sc)) - static_cast<double>(t[i]) * sc);
        }
        stats_.bce_logits_clamped += clamped;
        n.aux = std::move(targets);
        n.aux2 = std::move(weights);
        n.value = Tensor::scalar(static_cast<float>(acc));
        check_scalar_finite(Op::BceLogits, n.value);
        return push(std::move(n));
    }

    // Mean BCE against a constant 0/1 target.
    int bce_with_logits(int a, float target) {
        const int64_t m = val(a).numel();
        return bce_with_logits(a, Tensor::full(val(a).shape(), target),
                               Tensor::full(val(a).shape(), 1.0f / static_cast<float>(m)));
    }

    int stop_gradient(int a) {
        Node n;
        n.op = Op::StopGrad;
        n.a = a;
        n.value = val(a);  // shares storage
        n.needs_grad = false;
        return push(std::move(n));
    }

    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Gradient of a node after backward; zeros if nothing reached it.
    Tensor grad(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.defined()) return n.grad;
        return Tensor::zeros(n.value.shape());
    }

    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    size_t size() const { return nodes_.size(); }
    const Stats& stats() const { return stats_; }

    // Standard entry point: seed d(loss)/d(loss) = 1 and sweep the tape.
    void backward(int loss_id) {
        if (val(loss_id).numel() != 1)
            throw ContractError("backward: loss must be scalar, got " +
                                shape_str(val(loss_id).shape()));
        backward_seeded({{loss_id, Tensor::scalar(1.0f)}});
    }

    // Seed several nodes with externally supplied cotangents and sweep once.
    // Used to stitch gradients from sibling graphs (e.g. per-discriminator
    // regularizer graphs feeding the encoder's latent output).
    void backward_seeded(const std::vector<std::pair<int, Tensor>>& seeds) {
        for (const auto& [id, g] : seeds) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.needs_grad) continue;
            if (g.shape() != n.value.shape())
                throw ShapeError("backward seed shape " + shape_str(g.shape()) + " vs node " +
                                 shape_str(n.value.shape()));
            accumulate(id, g.ptr());
        }
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.grad.defined() || n.op == Op::Leaf) continue;
            propagate(n);
        }
    }

private:
    std::vector<Node> nodes_;
    Stats stats_;

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Node unary(Op op, int a) {
        Node n;
        n.op = op;
        n.a = a;
        n.needs_grad = nodes_[static_cast<size_t>(a)].needs_grad;
        return n;
    }

    Node binary(Op op, int a, int b) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.needs_grad = nodes_[static_cast<size_t>(a)].needs_grad ||
                       nodes_[static_cast<size_t>(b)].needs_grad;
        return n;
    }

    template <class F>
    int unary_map(Op op, int a, F f) {
        Node n = unary(op, a);
        n.value = Tensor(val(a).shape());
        const float* x = val(a).ptr();
        float* out = n.value.mut();
        const int64_t m = val(a).numel();
        for (int64_t i = 0; i < m; ++i) out[i] = f(x[i]);
        return push(std::move(n));
    }

    template <class F>
    int elementwise(Op op, int a, int b, F f) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.shape() != B.shape()) fail_shape(op, A, B);
        Node n = binary(op, a, b);
        n.value = Tensor(A.shape());
        const float* x = A.ptr();
        const float* y = B.ptr();
        float* out = n.value.mut();
        for (int64_t i = 0; i < A.numel(); ++i) out[i] = f(x[i], y[i]);
        return push(std::move(n));
    }

    int reduce(Op op, int a) {
        Node n = unary(op, a);
        const Tensor& A = val(a);
        double acc = 0.0;
        const float* x = A.ptr();
        for (int64_t i = 0; i < A.numel(); ++i) acc += x[i];
        if (op == Op::MeanAll) acc /= static_cast<double>(A.numel());
        n.value = Tensor::scalar(static_cast<float>(acc));
        check_scalar_finite(op, n.value);
        return push(std::move(n));
    }

    static void check_scalar_finite(Op op, const Tensor& v) {
        if (!std::isfinite(v.at(0)))
            throw NumericFault(std::string("op ") + op_name(op) + " produced non-finite value");
    }

    [[noreturn]] static void fail_shape(Op op, const Tensor& a, const Tensor& b) {
        throw ShapeError(std::string(op_name(op)) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " not conformable");
    }

    static void sgemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
                      const float* A, const float* B, float beta, float* C) {
        cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                    static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, A,
                    static_cast<int>(ta ? m : k), B, static_cast<int>(tb ? k : n), beta, C,
                    static_cast<int>(n));
    }

    float* grad_buf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad.defined()) n.grad = Tensor::zeros(n.value.shape());
        return n.grad.mut();
    }

    void accumulate(int id, const float* g) {
        Node& n = nodes_[static_cast<size_t>(id)];
        float* dst = grad_buf(id);
        for (int64_t i = 0; i < n.value.numel(); ++i) dst[i] += g[i];
    }

    bool wants(int id) const { return id >= 0 && nodes_[static_cast<size_t>(id)].needs_grad; }

    void propagate(Node& n) {
        const float* g = n.grad.ptr();
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Matmul: {
                const Tensor& A = val(n.a);
                const Tensor& B = val(n.b);
                const int64_t r = A.shape()[0], k = A.shape()[1], c = B.shape()[1];
                if (wants(n.a))  // dA = dC * B^T
                    sgemm(false, true, r, k, c, 1.0f, g, B.ptr(), 1.0f, grad_buf(n.a));
                if (wants(n.b))  // dB = A^T * dC
                    sgemm(true, false, k, c, r, 1.0f, A.ptr(), g, 1.0f, grad_buf(n.b));
                break;
            }
            case Op::BiasAdd: {
                const int64_t r = val(n.a).shape()[0], c = val(n.a).shape()[1];
                if (wants(n.a)) {
                    float* da = grad_buf(n.a);
                    for (int64_t i = 0; i < r * c; ++i) da[i] += g[i];
                }
                if (wants(n.b)) {
                    float* db = grad_buf(n.b);
                    for (int64_t i = 0; i < r; ++i)
                        for (int64_t j = 0; j < c; ++j) db[j] += g[i * c + j];
                }
                break;
            }
            case Op::Affine: {
                const Tensor& X = val(n.a);
                const Tensor& W = val(n.b);
                const int64_t r = X.shape()[0], k = X.shape()[1], c = W.shape()[1];
                if (wants(n.a))  // dX = g * W^T
                    sgemm(false, true, r, k, c, 1.0f, g, W.ptr(), 1.0f, grad_buf(n.a));
                if (wants(n.b))  // dW = X^T * g
                    sgemm(true, false, k, c, r, 1.0f, X.ptr(), g, 1.0f, grad_buf(n.b));
                if (wants(n.c)) {
                    float* db = grad_buf(n.c);
                    for (int64_t i = 0; i < r; ++i)
                        for (int64_t j = 0; j < c; ++j) db[j] += g[i * c + j];
                }
                break;
            }
            case Op::Selu: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const float* out = n.value.ptr();
                for (int64_t i = 0; i < n.value.numel(); ++i) {
                    float d = out[i] > 0.0f ? detail::kSeluScale
                                            : out[i] + detail::kSeluScale * detail::kSeluAlpha;
                    da[i] += g[i] * d;
                }
                break;
            }
            case Op::ScaledSoftsign: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const float* out = n.value.ptr();
                for (int64_t i = 0; i < n.value.numel(); ++i) {
                    float t = 3.0f - std::fabs(out[i]);
                    da[i] += g[i] * (t * t / 3.0f);
                }
                break;
            }
            case Op::Sigmoid: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const float* out = n.value.ptr();
                for (int64_t i = 0; i < n.value.numel(); ++i)
                    da[i] += g[i] * out[i] * (1.0f - out[i]);
                break;
            }
            case Op::Exp: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const float* out = n.value.ptr();
                for (int64_t i = 0; i < n.value.numel(); ++i) da[i] += g[i] * out[i];
                break;
            }
            case Op::Log: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const float* x = val(n.a).ptr();
                for (int64_t i = 0; i < n.value.numel(); ++i) da[i] += g[i] / x[i];
                break;
            }
            case Op::Square: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const float* x = val(n.a).ptr();
                for (int64_t i = 0; i < n.value.numel(); ++i) da[i] += g[i] * 2.0f * x[i];
                break;
            }
            case Op::Clamp: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const float* x = val(n.a).ptr();
                for (int64_t i = 0; i < n.value.numel(); ++i)
                    if (x[i] >= n.p0 && x[i] <= n.p1) da[i] += g[i];
                break;
            }
            case Op::Add: {
                if (wants(n.a)) accumulate(n.a, g);
                if (wants(n.b)) accumulate(n.b, g);
                break;
            }
            case Op::Sub: {
                if (wants(n.a)) accumulate(n.a, g);
                if (wants(n.b)) {
                    float* db = grad_buf(n.b);
                    for (int64_t i = 0; i < n.value.numel(); ++i) db[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                if (wants(n.a)) {
                    float* da = grad_buf(n.a);
                    const float* y = val(n.b).ptr();
                    for (int64_t i = 0; i < n.value.numel(); ++i) da[i] += g[i] * y[i];
                }
                if (wants(n.b)) {
                    float* db = grad_buf(n.b);
                    const float* x = val(n.a).ptr();
                    for (int64_t i = 0; i < n.value.numel(); ++i) db[i] += g[i] * x[i];
                }
                break;
            }
            case Op::Scale: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                for (int64_t i = 0; i < n.value.numel(); ++i) da[i] += g[i] * n.p0;
                break;
            }
            case Op::MeanAll: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const float gi = g[0] / static_cast<float>(val(n.a).numel());
                for (int64_t i = 0; i < val(n.a).numel(); ++i) da[i] += gi;
                break;
            }
            case Op::SumAll: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                for (int64_t i = 0; i < val(n.a).numel(); ++i) da[i] += g[0];
                break;
            }
            case Op::ConcatCols: {
                const int64_t r = n.value.shape()[0];
                const int64_t ca = val(n.a).shape()[1], cb = val(n.b).shape()[1];
                if (wants(n.a)) {
                    float* da = grad_buf(n.a);
                    for (int64_t i = 0; i < r; ++i)
                        for (int64_t j = 0; j < ca; ++j) da[i * ca + j] += g[i * (ca + cb) + j];
                }
                if (wants(n.b)) {
                    float* db = grad_buf(n.b);
                    for (int64_t i = 0; i < r; ++i)
                        for (int64_t j = 0; j < cb; ++j)
                            db[i * cb + j] += g[i * (ca + cb) + ca + j];
                }
                break;
            }
            case Op::ConcatRows: {
                const int64_t na = val(n.a).numel();
                if (wants(n.a)) {
                    float* da = grad_buf(n.a);
                    for (int64_t i = 0; i < na; ++i) da[i] += g[i];
                }
                if (wants(n.b)) {
                    float* db = grad_buf(n.b);
                    for (int64_t i = 0; i < val(n.b).numel(); ++i) db[i] += g[na + i];
                }
                break;
            }
            case Op::TileRows: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const int64_t block = val(n.a).numel();
                for (int64_t t = 0; t < n.i0; ++t)
                    for (int64_t i = 0; i < block; ++i) da[i] += g[t * block + i];
                break;
            }
            case Op::WithColumn: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const int64_t r = n.value.shape()[0], c = n.value.shape()[1];
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j)
                        if (j != n.i0) da[i * c + j] += g[i * c + j];
                break;
            }
            case Op::Reshape: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                for (int64_t i = 0; i < n.value.numel(); ++i) da[i] += g[i];
                break;
            }
            case Op::Mse: {
                const Tensor& A = val(n.a);
                const Tensor& B = val(n.b);
                const float c = 2.0f * g[0] / static_cast<float>(A.numel());
                if (wants(n.a)) {
                    float* da = grad_buf(n.a);
                    for (int64_t i = 0; i < A.numel(); ++i) da[i] += c * (A.at(i) - B.at(i));
                }
                if (wants(n.b)) {
                    float* db = grad_buf(n.b);
                    for (int64_t i = 0; i < A.numel(); ++i) db[i] -= c * (A.at(i) - B.at(i));
                }
                break;
            }
            case Op::BceLogits: {
                if (!wants(n.a)) break;
                float* da = grad_buf(n.a);
                const float* s = val(n.a).ptr();
                const float* t = n.aux.ptr();
                const float* w = n.aux2.ptr();
                for (int64_t i = 0; i < val(n.a).numel(); ++i) {
                    if (s[i] > detail::kLogitClamp || s[i] < -detail::kLogitClamp) continue;
                    da[i] += g[0] * w[i] * (detail::stable_sigmoid(s[i]) - t[i]);
                }
                break;
            }
            case Op::StopGrad:
                break;
        }
    }
};

}  // namespace gcae
