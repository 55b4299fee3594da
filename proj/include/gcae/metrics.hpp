#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "gcae/rng.hpp"
#include "gcae/tensor.hpp"

namespace gcae {

enum class FactorKind : uint8_t { Categorical, Continuous };

// Ground-truth generative factors: N x K, categorical entries integer-coded.
struct FactorMatrix {
    Tensor values;
    std::vector<FactorKind> kinds;
    std::vector<int> cardinalities;  // 0 for continuous factors

    int64_t count() const { return values.shape()[0]; }
    int64_t factors() const { return values.shape()[1]; }
};

struct MetricReport {
    double mig = 0.0;
    double factor_score = 0.0;
    double sap = 0.0;
    double dci = 0.0;
    std::vector<double> importance;     // m x K tree-importance matrix (row-major)
    std::vector<double> mig_gaps;       // per-factor normalized gaps
    int64_t latents = 0;
    int64_t factor_count = 0;
    int64_t excluded_factors = 0;       // zero-entropy factors skipped by MIG
    std::vector<int> dead_latents;      // zero-variance units excluded by FactorScore
};

namespace metrics_detail {

inline std::vector<int> equal_width_bins(const float* v, int64_t n, int64_t stride, int bins) {
    float lo = v[0], hi = v[0];
    for (int64_t i = 1; i < n; ++i) {
        lo = std::fmin(lo, v[i * stride]);
        hi = std::fmax(hi, v[i * stride]);
    }
    std::vector<int> out(static_cast<size_t>(n), 0);
    if (hi <= lo) return out;  // constant vector: one occupied bin
    const float w = (hi - lo) / static_cast<float>(bins);
    for (int64_t i = 0; i < n; ++i) {
        int b = static_cast<int>((v[i * stride] - lo) / w);
        out[static_cast<size_t>(i)] = std::min(b, bins - 1);
    }
    return out;
}

inline std::vector<int> categorical_bins(const float* v, int64_t n, int64_t stride, int card) {
    std::vector<int> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int c = static_cast<int>(std::lround(v[i * stride]));
        out[static_cast<size_t>(i)] = std::clamp(c, 0, card - 1);
    }
    return out;
}

inline double entropy_from_bins(const std::vector<int>& a, int ka) {
    std::vector<int64_t> cnt(static_cast<size_t>(ka), 0);
    for (int b : a) ++cnt[static_cast<size_t>(b)];
    const double n = static_cast<double>(a.size());
    double h = 0.0;
    for (int64_t c : cnt)
        if (c > 0) {
            const double p = c / n;
            h -= p * std::log(p);
        }
    return h;
}

// Plug-in MI from the joint histogram, in nats. Nonnegative by construction.
inline double mi_from_bins(const std::vector<int>& a, int ka, const std::vector<int>& b, int kb) {
    const int64_t n = static_cast<int64_t>(a.size());
    std::vector<int64_t> joint(static_cast<size_t>(ka * kb), 0);
    std::vector<int64_t> ma(static_cast<size_t>(ka), 0), mb(static_cast<size_t>(kb), 0);
    for (int64_t i = 0; i < n; ++i) {
        ++joint[static_cast<size_t>(a[static_cast<size_t>(i)] * kb + b[static_cast<size_t>(i)])];
        ++ma[static_cast<size_t>(a[static_cast<size_t>(i)])];
        ++mb[static_cast<size_t>(b[static_cast<size_t>(i)])];
    }
    double mi = 0.0;
    const double dn = static_cast<double>(n);
    for (int i = 0; i < ka; ++i)
        for (int j = 0; j < kb; ++j) {
            const int64_t c = joint[static_cast<size_t>(i * kb + j)];
            if (c == 0) continue;
            const double pij = c / dn;
            const double pi = ma[static_cast<size_t>(i)] / dn;
            const double pj = mb[static_cast<size_t>(j)] / dn;
            mi += pij * std::log(pij / (pi * pj));
        }
    return std::max(mi, 0.0);
}

// Deterministic top-2 by value, ties broken by lower index.
inline std::pair<int64_t, int64_t> top_two(const std::vector<double>& v) {
    int64_t a = 0;
    for (int64_t i = 1; i < static_cast<int64_t>(v.size()); ++i)
        if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(a)]) a = i;
    int64_t b = a == 0 ? 1 : 0;
    for (int64_t i = 0; i < static_cast<int64_t>(v.size()); ++i) {
        if (i == a) continue;
        if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(b)]) b = i;
    }
    return {a, b};
}

}  // namespace metrics_detail

// Plug-in histogram MI between two vectors, equal-width bins from min to max.
inline double histogram_mi(const std::vector<float>& a, const std::vector<float>& b, int bins_a,
                           int bins_b) {
    if (a.size() != b.size() || a.empty())
        throw ContractError("histogram_mi: mismatched or empty vectors");
    auto ba = metrics_detail::equal_width_bins(a.data(), static_cast<int64_t>(a.size()), 1, bins_a);
    auto bb = metrics_detail::equal_width_bins(b.data(), static_cast<int64_t>(b.size()), 1, bins_b);
    return metrics_detail::mi_from_bins(ba, bins_a, bb, bins_b);
}

// Mutual information gap: mean over factors of the normalized difference
// between the two most informative latents. Zero-entropy factors are
// excluded (counted in the report when one is provided).
inline double mig(const Tensor& codes, const FactorMatrix& factors, int bins,
                  MetricReport* report = nullptr) {
    const int64_t n = codes.shape()[0], m = codes.shape()[1], kf = factors.factors();
    if (m < 2) throw ContractError("mig: need at least 2 latent dimensions");
    if (factors.count() != n) throw ContractError("mig: codes/factors row mismatch");

    std::vector<std::vector<int>> code_bins(static_cast<size_t>(m));
    for (int64_t j = 0; j < m; ++j)
        code_bins[static_cast<size_t>(j)] =
            metrics_detail::equal_width_bins(codes.ptr() + j, n, m, bins);

    double acc = 0.0;
    int64_t used = 0;
    for (int64_t k = 0; k < kf; ++k) {
        const bool cat = factors.kinds[static_cast<size_t>(k)] == FactorKind::Categorical;
        const int fb = cat ? factors.cardinalities[static_cast<size_t>(k)] : bins;
        auto fbin = cat ? metrics_detail::categorical_bins(factors.values.ptr() + k, n,
                                                           kf, fb)
                        : metrics_detail::equal_width_bins(factors.values.ptr() + k, n, kf, fb);
        const double hk = metrics_detail::entropy_from_bins(fbin, fb);
        if (hk <= 0.0) {
            if (report) ++report->excluded_factors;
            continue;
        }
        std::vector<double> mi(static_cast<size_t>(m));
        for (int64_t j = 0; j < m; ++j)
            mi[static_cast<size_t>(j)] =
                metrics_detail::mi_from_bins(code_bins[static_cast<size_t>(j)], bins, fbin, fb);
        auto [a, b] = metrics_detail::top_two(mi);
        const double gap = (mi[static_cast<size_t>(a)] - mi[static_cast<size_t>(b)]) / hk;
        if (report) report->mig_gaps.push_back(gap);
        acc += gap;
        ++used;
    }
    return used > 0 ? acc / static_cast<double>(used) : 0.0;
}

// FactorScore: majority-vote classification of the fixed factor from the
// latent whose normalized variance collapses under the intervention.
// sample_codes(batch, rng) draws intervention-free code batches;
// sample_codes_fixed(factor, rng) draws a code batch with that factor held
// constant.
inline double factor_score(const std::function<Tensor(int64_t, RngStream&)>& sample_codes,
                           const std::function<Tensor(int64_t, RngStream&)>& sample_codes_fixed,
                           int64_t num_factors, int64_t n_train, int64_t n_test, RngStream& rng,
                           MetricReport* report = nullptr) {
    Tensor ref = sample_codes(2048, rng);
    const int64_t m = ref.shape()[1];
    std::vector<double> global_var(static_cast<size_t>(m), 0.0);
    for (int64_t j = 0; j < m; ++j) {
        double s = 0, s2 = 0;
        for (int64_t i = 0; i < ref.shape()[0]; ++i) {
            s += ref.at(i, j);
            s2 += ref.at(i, j) * ref.at(i, j);
        }
        const double mean = s / static_cast<double>(ref.shape()[0]);
        global_var[static_cast<size_t>(j)] =
            std::max(0.0, s2 / static_cast<double>(ref.shape()[0]) - mean * mean);
    }
    std::vector<bool> dead(static_cast<size_t>(m), false);
    for (int64_t j = 0; j < m; ++j)
        if (global_var[static_cast<size_t>(j)] < 1e-12) {
            dead[static_cast<size_t>(j)] = true;
            if (report) report->dead_latents.push_back(static_cast<int>(j));
        }

    auto vote = [&](int64_t* out_latent, int64_t* out_factor) {
        const int64_t k = rng.index(num_factors);
        Tensor codes = sample_codes_fixed(k, rng);
        const int64_t b = codes.shape()[0];
        int64_t best = -1;
        double best_v = 0.0;
        for (int64_t j = 0; j < m; ++j) {
            if (dead[static_cast<size_t>(j)]) continue;
            double s = 0, s2 = 0;
            for (int64_t i = 0; i < b; ++i) {
                s += codes.at(i, j);
                s2 += codes.at(i, j) * codes.at(i, j);
            }
            const double mean = s / static_cast<double>(b);
            const double v =
                std::max(0.0, s2 / static_cast<double>(b) - mean * mean) /
                global_var[static_cast<size_t>(j)];
            if (best < 0 || v < best_v) {
                best = j;
                best_v = v;
            }
        }
        *out_latent = best;
        *out_factor = k;
    };

    std::vector<std::vector<int64_t>> counts(static_cast<size_t>(m),
                                             std::vector<int64_t>(static_cast<size_t>(num_factors), 0));
    for (int64_t t = 0; t < n_train; ++t) {
        int64_t d, k;
        vote(&d, &k);
        if (d >= 0) ++counts[static_cast<size_t>(d)][static_cast<size_t>(k)];
    }
    std::vector<int64_t> majority(static_cast<size_t>(m), 0);
    for (int64_t j = 0; j < m; ++j) {
        int64_t best = 0;
        for (int64_t k = 1; k < num_factors; ++k)
            if (counts[static_cast<size_t>(j)][static_cast<size_t>(k)] >
                counts[static_cast<size_t>(j)][static_cast<size_t>(best)])
                best = k;
        majority[static_cast<size_t>(j)] = best;
    }
    int64_t hits = 0;
    for (int64_t t = 0; t < n_test; ++t) {
        int64_t d, k;
        vote(&d, &k);
        if (d >= 0 && majority[static_cast<size_t>(d)] == k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n_test);
}

namespace metrics_detail {

// R^2 of a single-latent linear regression, fit on train, scored on test,
// clamped to [0,1]. Zero-variance predictors score 0.
inline double stump_r2(const std::vector<float>& x_train, const std::vector<float>& y_train,
                       const std::vector<float>& x_test, const std::vector<float>& y_test) {
    const double n = static_cast<double>(x_train.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < x_train.size(); ++i) {
        sx += x_train[i];
        sy += y_train[i];
        sxx += static_cast<double>(x_train[i]) * x_train[i];
        sxy += static_cast<double>(x_train[i]) * y_train[i];
    }
    const double varx = sxx / n - (sx / n) * (sx / n);
    if (varx < 1e-12) return 0.0;
    const double slope = (sxy / n - sx / n * sy / n) / varx;
    const double intercept = sy / n - slope * sx / n;

    double sse = 0, syt = 0;
    for (float v : y_test) syt += v;
    const double mean_t = syt / static_cast<double>(y_test.size());
    double sst = 0;
    for (size_t i = 0; i < x_test.size(); ++i) {
        const double pred = slope * x_test[i] + intercept;
        sse += (pred - y_test[i]) * (pred - y_test[i]);
        sst += (y_test[i] - mean_t) * (y_test[i] - mean_t);
    }
    if (sst < 1e-12) return 0.0;
    return std::clamp(1.0 - sse / sst, 0.0, 1.0);
}

// Best single-threshold classifier of `positive` from one latent, balanced
// accuracy on test. Both polarities are swept on the train split.
inline double stump_balanced_accuracy(const std::vector<float>& x_train,
                                      const std::vector<char>& pos_train,
                                      const std::vector<float>& x_test,
                                      const std::vector<char>& pos_test) {
    std::vector<size_t> order(x_train.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return x_train[a] < x_train[b]; });
    int64_t total_pos = 0;
    for (char c : pos_train) total_pos += c;
    const int64_t total_neg = static_cast<int64_t>(pos_train.size()) - total_pos;
    if (total_pos == 0 || total_neg == 0) return 0.0;

    double best_acc = 0.5;
    float best_thr = x_train[order[0]] - 1.0f;
    bool best_ge = true;  // predict positive when x >= thr
    int64_t pos_below = 0, neg_below = 0;
    for (size_t i = 0; i + 1 <= order.size(); ++i) {
        if (pos_train[order[i]])
            ++pos_below;
        else
            ++neg_below;
        if (i + 1 < order.size() && x_train[order[i]] == x_train[order[i + 1]]) continue;
        const float thr = i + 1 < order.size()
                              ? 0.5f * (x_train[order[i]] + x_train[order[i + 1]])
                              : x_train[order[i]] + 1.0f;
        // predict positive when x >= thr
        const double tpr_ge = static_cast<double>(total_pos - pos_below) / total_pos;
        const double tnr_ge = static_cast<double>(neg_below) / total_neg;
        const double acc_ge = 0.5 * (tpr_ge + tnr_ge);
        if (acc_ge > best_acc) {
            best_acc = acc_ge;
            best_thr = thr;
            best_ge = true;
        }
        // predict positive when x < thr
        const double acc_lt = 0.5 * ((static_cast<double>(pos_below) / total_pos) +
                                     (static_cast<double>(total_neg - neg_below) / total_neg));
        if (acc_lt > best_acc) {
            best_acc = acc_lt;
            best_thr = thr;
            best_ge = false;
        }
    }
    int64_t tp = 0, tn = 0, p = 0, ng = 0;
    for (size_t i = 0; i < x_test.size(); ++i) {
        const bool pred = best_ge ? x_test[i] >= best_thr : x_test[i] < best_thr;
        if (pos_test[i]) {
            ++p;
            if (pred) ++tp;
        } else {
            ++ng;
            if (!pred) ++tn;
        }
    }
    if (p == 0 || ng == 0) return 0.0;
    return 0.5 * (static_cast<double>(tp) / p + static_cast<double>(tn) / ng);
}

}  // namespace metrics_detail

// SAP: per (latent, factor) predictability matrix; continuous factors use
// single-latent linear-regression R^2, categorical factors a one-vs-rest
// decision stump's balanced accuracy. Score is the mean over factors of the
// top-minus-second column gap. Rows [0, n_train) train, [n_train,
// n_train+n_test) test.
inline double sap(const Tensor& codes, const FactorMatrix& factors, int64_t n_train,
                  int64_t n_test) {
    const int64_t n = codes.shape()[0], m = codes.shape()[1], kf = factors.factors();
    if (m < 2) throw ContractError("sap: need at least 2 latent dimensions");
    if (n_train < 2 || n_test < 1) throw ContractError("sap: empty split");
    if (n_train + n_test > n) throw ContractError("sap: split larger than data");

    double acc = 0.0;
    for (int64_t k = 0; k < kf; ++k) {
        std::vector<double> col(static_cast<size_t>(m), 0.0);
        for (int64_t j = 0; j < m; ++j) {
            std::vector<float> xtr, xte;
            xtr.reserve(static_cast<size_t>(n_train));
            xte.reserve(static_cast<size_t>(n_test));
            for (int64_t i = 0; i < n_train; ++i) xtr.push_back(codes.at(i, j));
            for (int64_t i = n_train; i < n_train + n_test; ++i) xte.push_back(codes.at(i, j));
            if (factors.kinds[static_cast<size_t>(k)] == FactorKind::Continuous) {
                std::vector<float> ytr, yte;
                for (int64_t i = 0; i < n_train; ++i) ytr.push_back(factors.values.at(i, k));
                for (int64_t i = n_train; i < n_train + n_test; ++i)
                    yte.push_back(factors.values.at(i, k));
                col[static_cast<size_t>(j)] = metrics_detail::stump_r2(xtr, ytr, xte, yte);
            } else {
                const int card = factors.cardinalities[static_cast<size_t>(k)];
                double bal = 0.0;
                int used = 0;
                for (int c = 0; c < card; ++c) {
                    std::vector<char> ptr, pte;
                    for (int64_t i = 0; i < n_train; ++i)
                        ptr.push_back(
                            static_cast<int>(std::lround(factors.values.at(i, k))) == c);
                    for (int64_t i = n_train; i < n_train + n_test; ++i)
                        pte.push_back(
                            static_cast<int>(std::lround(factors.values.at(i, k))) == c);
                    const double a =
                        metrics_detail::stump_balanced_accuracy(xtr, ptr, xte, pte);
                    if (a > 0.0) {
                        bal += a;
                        ++used;
                    }
                }
                col[static_cast<size_t>(j)] = used > 0 ? bal / used : 0.0;
            }
        }
        auto [a, b] = metrics_detail::top_two(col);
        acc += col[static_cast<size_t>(a)] - col[static_cast<size_t>(b)];
    }
    return acc / static_cast<double>(kf);
}

namespace metrics_detail {

// CART regression tree: variance-reduction splits, depth/min-leaf bounded.
// Feature importances accumulate absolute impurity decrease.
class CartRegressor {
public:
    CartRegressor(int max_depth, int min_leaf) : max_depth_(max_depth), min_leaf_(min_leaf) {}

    void fit(const Tensor& x, const std::vector<float>& y, std::vector<double>& importance) {
        std::vector<int64_t> idx(y.size());
        std::iota(idx.begin(), idx.end(), 0);
        importance.assign(static_cast<size_t>(x.shape()[1]), 0.0);
        grow(x, y, idx, 0, importance);
    }

private:
    int max_depth_;
    int min_leaf_;

    void grow(const Tensor& x, const std::vector<float>& y, std::vector<int64_t>& idx, int depth,
              std::vector<double>& importance) {
        const int64_t n = static_cast<int64_t>(idx.size());
        double sy = 0, syy = 0;
        for (int64_t i : idx) {
            sy += y[static_cast<size_t>(i)];
            syy += static_cast<double>(y[static_cast<size_t>(i)]) * y[static_cast<size_t>(i)];
        }
        const double sse_parent = syy - sy * sy / static_cast<double>(n);
        if (depth >= max_depth_ || n < 2 * min_leaf_ || sse_parent <= 1e-12) return;

        const int64_t m = x.shape()[1];
        double best_gain = 1e-12;
        int64_t best_feat = -1, best_pos = -1;
        std::vector<int64_t> order;
        std::vector<int64_t> best_order;
        for (int64_t f = 0; f < m; ++f) {
            order = idx;
            std::sort(order.begin(), order.end(),
                      [&](int64_t a, int64_t b) { return x.at(a, f) < x.at(b, f); });
            double ls = 0, lss = 0;
            for (int64_t i = 0; i + 1 < n; ++i) {
                const double v = y[static_cast<size_t>(order[static_cast<size_t>(i)])];
                ls += v;
                lss += v * v;
                if (i + 1 < min_leaf_ || n - i - 1 < min_leaf_) continue;
                if (x.at(order[static_cast<size_t>(i)], f) ==
                    x.at(order[static_cast<size_t>(i + 1)], f))
                    continue;
                const double nl = static_cast<double>(i + 1);
                const double nr = static_cast<double>(n - i - 1);
                const double rs = sy - ls, rss = syy - lss;
                const double sse = (lss - ls * ls / nl) + (rss - rs * rs / nr);
                const double gain = sse_parent - sse;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feat = f;
                    best_pos = i;
                    best_order = order;
                }
            }
        }
        if (best_feat < 0) return;
        importance[static_cast<size_t>(best_feat)] += best_gain;
        std::vector<int64_t> left(best_order.begin(), best_order.begin() + best_pos + 1);
        std::vector<int64_t> right(best_order.begin() + best_pos + 1, best_order.end());
        grow(x, y, left, depth + 1, importance);
        grow(x, y, right, depth + 1, importance);
    }
};

}  // namespace metrics_detail

// DCI disentanglement from CART importances: per-latent rows of the m x K
// importance matrix are normalized; score is one minus the base-K row
// entropy, weighted by each row's share of total importance. All-zero rows
// carry zero weight.
inline double dci_disentanglement(const Tensor& codes, const FactorMatrix& factors,
                                  int64_t n_train, int64_t n_test,
                                  std::vector<double>* importance_out = nullptr) {
    (void)n_test;  // disentanglement uses importances only; sizes echo the protocol
    const int64_t n = codes.shape()[0], m = codes.shape()[1], kf = factors.factors();
    if (n_train > n) throw ContractError("dci: split larger than data");

    Tensor xtr({n_train, m});
    float* xp = xtr.mut();
    for (int64_t i = 0; i < n_train; ++i)
        for (int64_t j = 0; j < m; ++j) xp[i * m + j] = codes.at(i, j);

    std::vector<double> imp(static_cast<size_t>(m * kf), 0.0);
    for (int64_t k = 0; k < kf; ++k) {
        std::vector<float> y(static_cast<size_t>(n_train));
        for (int64_t i = 0; i < n_train; ++i) y[static_cast<size_t>(i)] = factors.values.at(i, k);
        std::vector<double> col;
        metrics_detail::CartRegressor tree(/*max_depth=*/8, /*min_leaf=*/5);
        tree.fit(xtr, y, col);
        for (int64_t j = 0; j < m; ++j) imp[static_cast<size_t>(j * kf + k)] = col[static_cast<size_t>(j)];
    }
    if (importance_out) *importance_out = imp;

    double total = 0.0;
    for (double v : imp) total += v;
    if (total <= 0.0) return 0.0;
    double score = 0.0;
    const double logk = std::log(static_cast<double>(kf));
    for (int64_t j = 0; j < m; ++j) {
        double row = 0.0;
        for (int64_t k = 0; k < kf; ++k) row += imp[static_cast<size_t>(j * kf + k)];
        if (row <= 0.0) continue;  // zero-importance latent: weight 0
        double h = 0.0;
        for (int64_t k = 0; k < kf; ++k) {
            const double p = imp[static_cast<size_t>(j * kf + k)] / row;
            if (p > 0.0) h -= p * std::log(p);
        }
        const double disent = 1.0 - (kf > 1 ? h / logk : 0.0);
        score += (row / total) * disent;
    }
    return score;
}

}  // namespace gcae
