#pragma once

// Finite-difference gradient oracle for the tape. Each op has an independent
// double-precision reference forward; central differences of that reference
// are compared against the engine's analytic float32 gradients. The reference
// math here must stay decoupled from gcae/graph.hpp internals.

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gcae/graph.hpp"

namespace fd {

using DVec = std::vector<double>;

struct OpCase {
    std::string name;
    // shapes of differentiable inputs
    std::vector<gcae::Shape> shapes;
    // double-precision scalar forward over flattened inputs
    std::function<double(const std::vector<DVec>&)> ref;
    // engine forward: leaves are already on the tape, return loss node
    std::function<int(gcae::Graph&, const std::vector<int>&)> eng;
    // optional input conditioner (positivity, keep away from kinks)
    std::function<void(std::vector<DVec>&)> condition;
};

constexpr double kSeluAlpha = 1.6732632423543772;
constexpr double kSeluScale = 1.0507009873554805;

inline double ref_selu(double x) {
    return x > 0 ? kSeluScale * x : kSeluScale * kSeluAlpha * std::expm1(x);
}
inline double ref_softsign3(double x) { return 3.0 * x / (1.0 + std::fabs(x)); }
inline double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double ref_softplus(double x) {
    if (x > 30) return x;
    if (x < -30) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Weighted scalar readout so output gradients are non-uniform.
struct Readout {
    DVec w;
    double apply(const DVec& v) const {
        double s = 0;
        for (size_t i = 0; i < v.size(); ++i) s += w[i] * v[i];
        return s;
    }
};

inline std::vector<OpCase> op_cases(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dim(2, 6);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto mkw = [&](int64_t n) {
        DVec w(static_cast<size_t>(n));
        for (auto& x : w) x = gauss(rng);
        return w;
    };
    auto readout_leaf = [](gcae::Graph& g, const DVec& w, gcae::Shape shape) {
        std::vector<float> wf(w.begin(), w.end());
        return g.leaf(gcae::Tensor(std::move(shape), std::move(wf)), false);
    };

    std::vector<OpCase> cases;
    const int64_t r = dim(rng), k = dim(rng), c = dim(rng);

    {
        Readout ro{mkw(r * c)};
        cases.push_back(OpCase{
            "matmul",
            {{r, k}, {k, c}},
            [=](const std::vector<DVec>& in) {
                DVec out(static_cast<size_t>(r * c), 0.0);
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j)
                        for (int64_t t = 0; t < k; ++t)
                            out[i * c + j] += in[0][i * k + t] * in[1][t * c + j];
                return ro.apply(out);
            },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                int out = g.matmul(ids[0], ids[1]);
                return g.sum_all(g.mul(out, readout_leaf(g, ro.w, {r, c})));
            },
            nullptr});
    }
    {
        Readout ro{mkw(r * c)};
        cases.push_back(OpCase{
            "bias_add",
            {{r, c}, {c}},
            [=](const std::vector<DVec>& in) {
                DVec out(static_cast<size_t>(r * c));
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j) out[i * c + j] = in[0][i * c + j] + in[1][j];
                return ro.apply(out);
            },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                return g.sum_all(g.mul(g.bias_add(ids[0], ids[1]), readout_leaf(g, ro.w, {r, c})));
            },
            nullptr});
    }
    {
        Readout ro{mkw(r * c)};
        cases.push_back(OpCase{
            "affine",
            {{r, k}, {k, c}, {c}},
            [=](const std::vector<DVec>& in) {
                DVec out(static_cast<size_t>(r * c));
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j) {
                        double acc = in[2][j];
                        for (int64_t t = 0; t < k; ++t)
                            acc += in[0][i * k + t] * in[1][t * c + j];
                        out[i * c + j] = acc;
                    }
                return ro.apply(out);
            },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                return g.sum_all(
                    g.mul(g.affine(ids[0], ids[1], ids[2]), readout_leaf(g, ro.w, {r, c})));
            },
            nullptr});
    }

    auto unary_case = [&](const std::string& name, std::function<double(double)> f,
                          std::function<int(gcae::Graph&, int)> op,
                          std::function<void(std::vector<DVec>&)> cond) {
        Readout ro{mkw(r * c)};
        cases.push_back(OpCase{
            name,
            {{r, c}},
            [=](const std::vector<DVec>& in) {
                DVec out(in[0].size());
                for (size_t i = 0; i < in[0].size(); ++i) out[i] = f(in[0][i]);
                return ro.apply(out);
            },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                return g.sum_all(g.mul(op(g, ids[0]), readout_leaf(g, ro.w, {r, c})));
            },
            cond});
    };
    auto away_from = [](double kink, double margin) {
        return [=](std::vector<DVec>& in) {
            for (auto& row : in)
                for (auto& x : row)
                    if (std::fabs(x - kink) < margin) x = kink + (x >= kink ? margin : -margin) * 2;
        };
    };
    unary_case("selu", ref_selu, [](gcae::Graph& g, int a) { return g.selu(a); },
               away_from(0.0, 1e-2));
    unary_case("scaled_softsign", ref_softsign3,
               [](gcae::Graph& g, int a) { return g.scaled_softsign(a); }, away_from(0.0, 1e-2));
    unary_case("sigmoid", ref_sigmoid, [](gcae::Graph& g, int a) { return g.sigmoid(a); },
               nullptr);
    unary_case("exp", [](double x) { return std::exp(x); },
               [](gcae::Graph& g, int a) { return g.exp_(a); }, nullptr);
    unary_case("log", [](double x) { return std::log(x); },
               [](gcae::Graph& g, int a) { return g.log_(a); },
               [](std::vector<DVec>& in) {
                   for (auto& x : in[0]) x = std::fabs(x) + 0.5;
               });
    unary_case("square", [](double x) { return x * x; },
               [](gcae::Graph& g, int a) { return g.square(a); }, nullptr);
    unary_case("clamp", [](double x) { return std::fmin(std::fmax(x, -0.8), 0.8); },
               [](gcae::Graph& g, int a) { return g.clamp(a, -0.8f, 0.8f); },
               [](std::vector<DVec>& in) {
                   for (auto& x : in[0]) {
                       if (std::fabs(x - 0.8) < 1e-2) x += 0.05;
                       if (std::fabs(x + 0.8) < 1e-2) x -= 0.05;
                   }
               });
    unary_case("scale", [](double x) { return -1.7 * x; },
               [](gcae::Graph& g, int a) { return g.scale(a, -1.7f); }, nullptr);
    unary_case("stop_gradient_mix",
               [](double x) { return ref_selu(x); },  // stop-grad branch contributes no gradient
               [](gcae::Graph& g, int a) {
                   int live = g.selu(a);
                   int dead = g.stop_gradient(g.square(a));
                   (void)dead;
                   return live;
               },
               away_from(0.0, 1e-2));

    auto binary_case = [&](const std::string& name, std::function<double(double, double)> f,
                           std::function<int(gcae::Graph&, int, int)> op) {
        Readout ro{mkw(r * c)};
        cases.push_back(OpCase{
            name,
            {{r, c}, {r, c}},
            [=](const std::vector<DVec>& in) {
                DVec out(in[0].size());
                for (size_t i = 0; i < in[0].size(); ++i) out[i] = f(in[0][i], in[1][i]);
                return ro.apply(out);
            },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                return g.sum_all(g.mul(op(g, ids[0], ids[1]), readout_leaf(g, ro.w, {r, c})));
            },
            nullptr});
    };
    binary_case("add", [](double a, double b) { return a + b; },
                [](gcae::Graph& g, int a, int b) { return g.add(a, b); });
    binary_case("sub", [](double a, double b) { return a - b; },
                [](gcae::Graph& g, int a, int b) { return g.sub(a, b); });
    binary_case("mul", [](double a, double b) { return a * b; },
                [](gcae::Graph& g, int a, int b) { return g.mul(a, b); });

    {
        cases.push_back(OpCase{
            "mean",
            {{r, c}},
            [=](const std::vector<DVec>& in) {
                double s = 0;
                for (double x : in[0]) s += x;
                return s / static_cast<double>(in[0].size());
            },
            [](gcae::Graph& g, const std::vector<int>& ids) { return g.mean_all(ids[0]); },
            nullptr});
        cases.push_back(OpCase{
            "sum",
            {{r, c}},
            [](const std::vector<DVec>& in) {
                double s = 0;
                for (double x : in[0]) s += x;
                return s;
            },
            [](gcae::Graph& g, const std::vector<int>& ids) { return g.sum_all(ids[0]); },
            nullptr});
    }
    {
        Readout ro{mkw(r * (2 * c))};
        cases.push_back(OpCase{
            "concat_cols",
            {{r, c}, {r, c}},
            [=](const std::vector<DVec>& in) {
                DVec out(static_cast<size_t>(r * 2 * c));
                for (int64_t i = 0; i < r; ++i) {
                    for (int64_t j = 0; j < c; ++j) {
                        out[i * 2 * c + j] = in[0][i * c + j];
                        out[i * 2 * c + c + j] = in[1][i * c + j];
                    }
                }
                return ro.apply(out);
            },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                return g.sum_all(
                    g.mul(g.concat_cols(ids[0], ids[1]), readout_leaf(g, ro.w, {r, 2 * c})));
            },
            nullptr});
    }
    {
        Readout ro{mkw(2 * r * c)};
        cases.push_back(OpCase{
            "concat_rows",
            {{r, c}, {r, c}},
            [=](const std::vector<DVec>& in) {
                DVec out;
                out.insert(out.end(), in[0].begin(), in[0].end());
                out.insert(out.end(), in[1].begin(), in[1].end());
                return ro.apply(out);
            },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                return g.sum_all(
                    g.mul(g.concat_rows(ids[0], ids[1]), readout_leaf(g, ro.w, {2 * r, c})));
            },
            nullptr});
    }
    {
        const int64_t tiles = 3;
        Readout ro{mkw(tiles * r * c)};
        cases.push_back(OpCase{
            "tile_rows",
            {{r, c}},
            [=](const std::vector<DVec>& in) {
                DVec out;
                for (int64_t t = 0; t < tiles; ++t)
                    out.insert(out.end(), in[0].begin(), in[0].end());
                return ro.apply(out);
            },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                return g.sum_all(
                    g.mul(g.tile_rows(ids[0], tiles), readout_leaf(g, ro.w, {tiles * r, c})));
            },
            nullptr});
    }
    {
        const int64_t col = k % c;
        DVec ucol = mkw(r);
        Readout ro{mkw(r * c)};
        cases.push_back(OpCase{
            "with_column",
            {{r, c}},
            [=](const std::vector<DVec>& in) {
                DVec out = in[0];
                for (int64_t i = 0; i < r; ++i) out[i * c + col] = ucol[static_cast<size_t>(i)];
                return ro.apply(out);
            },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                std::vector<float> uf(ucol.begin(), ucol.end());
                int out = g.with_column(ids[0], col, gcae::Tensor({r}, std::move(uf)));
                return g.sum_all(g.mul(out, readout_leaf(g, ro.w, {r, c})));
            },
            nullptr});
    }
    {
        Readout ro{mkw(r * c)};
        cases.push_back(OpCase{
            "reshape",
            {{r, c}},
            [=](const std::vector<DVec>& in) { return ro.apply(in[0]); },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                int out = g.reshape(ids[0], {r * c, 1});
                return g.sum_all(g.mul(out, readout_leaf(g, ro.w, {r * c, 1})));
            },
            nullptr});
    }
    {
        cases.push_back(OpCase{
            "mse",
            {{r, c}, {r, c}},
            [](const std::vector<DVec>& in) {
                double s = 0;
                for (size_t i = 0; i < in[0].size(); ++i) {
                    double d = in[0][i] - in[1][i];
                    s += d * d;
                }
                return s / static_cast<double>(in[0].size());
            },
            [](gcae::Graph& g, const std::vector<int>& ids) { return g.mse(ids[0], ids[1]); },
            nullptr});
    }
    {
        DVec targets(static_cast<size_t>(r * c));
        DVec weights(static_cast<size_t>(r * c));
        std::uniform_real_distribution<double> uw(0.05, 1.0);
        std::bernoulli_distribution bt(0.5);
        for (auto& t : targets) t = bt(rng) ? 1.0 : 0.0;
        for (auto& w : weights) w = uw(rng);
        cases.push_back(OpCase{
            "bce_logits",
            {{r, c}},
            [=](const std::vector<DVec>& in) {
                double s = 0;
                for (size_t i = 0; i < in[0].size(); ++i)
                    s += weights[i] * (ref_softplus(in[0][i]) - targets[i] * in[0][i]);
                return s;
            },
            [=](gcae::Graph& g, const std::vector<int>& ids) {
                std::vector<float> tf(targets.begin(), targets.end());
                std::vector<float> wf(weights.begin(), weights.end());
                return g.bce_with_logits(ids[0], gcae::Tensor({r, c}, std::move(tf)),
                                         gcae::Tensor({r, c}, std::move(wf)));
            },
            nullptr});
    }
    return cases;
}

struct FdResult {
    bool ok = true;
    int checks = 0;
    double worst_rel = 0.0;
    std::string failures;
};

// Runs the FD suite: `rounds` random shape/seed draws, every op each round.
inline FdResult run_fd_suite(int rounds, uint64_t seed) {
    FdResult res;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double h = 1e-4;
    for (int round = 0; round < rounds; ++round) {
        for (auto& oc : op_cases(rng)) {
            std::vector<DVec> inputs;
            for (const auto& s : oc.shapes) {
                DVec v(static_cast<size_t>(gcae::shape_numel(s)));
                for (auto& x : v) x = gauss(rng);
                inputs.push_back(std::move(v));
            }
            if (oc.condition) oc.condition(inputs);

            gcae::Graph g;
            std::vector<int> ids;
            for (size_t i = 0; i < inputs.size(); ++i) {
                std::vector<float> f(inputs[i].begin(), inputs[i].end());
                ids.push_back(g.leaf(gcae::Tensor(oc.shapes[i], std::move(f)), true));
                // engine sees the float32-rounded values; keep the reference in sync
                for (size_t t = 0; t < inputs[i].size(); ++t)
                    inputs[i][t] = static_cast<double>(g.val(ids[i]).at(static_cast<int64_t>(t)));
            }
            int loss = oc.eng(g, ids);
            g.backward(loss);

            for (size_t i = 0; i < inputs.size(); ++i) {
                gcae::Tensor grad = g.grad(ids[i]);
                for (size_t t = 0; t < inputs[i].size(); ++t) {
                    auto perturbed = inputs;
                    perturbed[i][t] += h;
                    const double up = oc.ref(perturbed);
                    perturbed[i][t] -= 2 * h;
                    const double dn = oc.ref(perturbed);
                    const double fd = (up - dn) / (2 * h);
                    const double an = static_cast<double>(grad.at(static_cast<int64_t>(t)));
                    const double rel =
                        std::fabs(an - fd) / std::max(1e-6, std::max(std::fabs(an), std::fabs(fd)));
                    ++res.checks;
                    res.worst_rel = std::max(res.worst_rel, rel);
                    if (rel > 1e-3) {
                        res.ok = false;
                        std::ostringstream os;
                        os << oc.name << " round " << round << " input " << i << " elem " << t
                           << ": analytic " << an << " vs fd " << fd << " (rel " << rel << ")\n";
                        res.failures += os.str();
                    }
                }
            }
        }
    }
    return res;
}

}  // namespace fd
