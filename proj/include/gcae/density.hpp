#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "gcae/nn.hpp"

namespace gcae {

// Known "fake" distribution the density-ratio trick transfers density
// through: u ~ Unif(low, high) per dimension.
struct UniformReference {
    float low = -4.0f;
    float high = 4.0f;

    float width() const { return high - low; }
    float density1d() const { return 1.0f / width(); }
    bool contains(float u) const { return u >= low && u <= high; }
};

struct DensityEstimate {
    double value = 0.0;
};

// Clamped ratio D/(1-D) computed from the pre-sigmoid logit; identical to
// clamping D into [1e-7, 1-1e-7] first.
inline double density_ratio_from_logit(float logit) {
    const float s = std::fmin(std::fmax(logit, -detail::kLogitClamp), detail::kLogitClamp);
    return std::exp(static_cast<double>(s));
}

// One small real-vs-uniform classifier approximating the conditional density
// of latent `index` given the remaining coordinates. Input layout is fixed:
// slot `index` carries the candidate value, the other slots carry the
// conditioning variables in their original order. Head is a sigmoid; training
// and density evaluation work on the pre-sigmoid logit.
class ConditionalDiscriminator {
public:
    int64_t index = 0;
    UniformReference reference;
    Mlp net;

    static ConditionalDiscriminator build(int64_t index, int64_t latent_dim, RngStream& rng,
                                          UniformReference ref = {}, int64_t hidden = 256) {
        if (index < 0 || index >= latent_dim)
            throw ContractError("discriminator index " + std::to_string(index) +
                                " out of range for m=" + std::to_string(latent_dim));
        ConditionalDiscriminator d;
        d.index = index;
        d.reference = ref;
        d.net = Mlp::build({latent_dim, hidden, hidden, 1},
                           {Act::Selu, Act::Selu, Act::Sigmoid}, rng);
        return d;
    }

    int64_t latent_dim() const { return net.in_dim(); }

    int logits(Graph& g, int x, bool params_require_grad, MlpTapeIds* ids = nullptr) const {
        return net.forward(g, x, params_require_grad, ids, /*skip_head_activation=*/true);
    }

    void logits_raw(const float* x, int64_t rows, float* out, Workspace& ws) const {
        net.forward_raw(x, rows, out, ws, /*skip_head_activation=*/true);
    }

    // Candidate slot gets u, conditioning slots keep their original order.
    void assemble_input(float u, const float* cond, float* out) const {
        const int64_t m = latent_dim();
        int64_t c = 0;
        for (int64_t j = 0; j < m; ++j) out[j] = (j == index) ? u : cond[c++];
    }
};

// p(z_index = u | cond) estimated as (D/(1-D)) * 1/(b-a); zero outside the
// reference support by construction.
inline DensityEstimate conditional_density(const ConditionalDiscriminator& disc, float u,
                                           const std::vector<float>& cond, Workspace& ws) {
    if (static_cast<int64_t>(cond.size()) != disc.latent_dim() - 1)
        throw ContractError("conditional_density: " + std::to_string(cond.size()) +
                            " conditioning values for m=" + std::to_string(disc.latent_dim()));
    if (!disc.reference.contains(u)) return {0.0};
    std::vector<float> row(static_cast<size_t>(disc.latent_dim()));
    disc.assemble_input(u, cond.data(), row.data());
    float logit = 0.0f;
    disc.logits_raw(row.data(), 1, &logit, ws);
    if (!std::isfinite(logit)) throw NumericFault("conditional_density: non-finite logit");
    return {density_ratio_from_logit(logit) * disc.reference.density1d()};
}

// Densities for a batch of full m-vectors whose slot `index` already holds
// the candidate value.
inline std::vector<double> conditional_density_rows(const ConditionalDiscriminator& disc,
                                                    const Tensor& rows, Workspace& ws) {
    const int64_t n = rows.shape()[0];
    std::vector<float> logits(static_cast<size_t>(n));
    disc.logits_raw(rows.ptr(), n, logits.data(), ws);
    std::vector<double> out(static_cast<size_t>(n));
    const float dref = disc.reference.density1d();
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(logits[static_cast<size_t>(i)]))
            throw NumericFault("conditional_density: non-finite logit");
        const float u = rows.at(i, disc.index);
        out[static_cast<size_t>(i)] =
            disc.reference.contains(u)
                ? density_ratio_from_logit(logits[static_cast<size_t>(i)]) * dref
                : 0.0;
    }
    return out;
}

// Batch estimate of the marginal: mean over conditioning draws of the
// conditional density at u. cond_batch is B x (m-1).
inline DensityEstimate marginal_density(const ConditionalDiscriminator& disc, float u,
                                        const Tensor& cond_batch, Workspace& ws) {
    const int64_t b = cond_batch.shape()[0];
    if (b == 0) throw ContractError("marginal_density: empty conditioning batch");
    if (cond_batch.shape()[1] != disc.latent_dim() - 1)
        throw ContractError("marginal_density: cond width " + shape_str(cond_batch.shape()) +
                            " for m=" + std::to_string(disc.latent_dim()));
    if (!disc.reference.contains(u)) return {0.0};
    const int64_t m = disc.latent_dim();
    Tensor rows({b, m});
    float* rp = rows.mut();
    for (int64_t i = 0; i < b; ++i)
        disc.assemble_input(u, cond_batch.ptr() + i * (m - 1), rp + i * m);
    auto dens = conditional_density_rows(disc, rows, ws);
    double acc = 0.0;
    for (double d : dens) acc += d;
    return {acc / static_cast<double>(b)};
}

// -[mean log D(real) + mean log(1-D(fake))] on the tape. real and fake are
// node ids of (B x m) batches; minimizing drives D toward the optimal
// real/(real+fake) classifier.
inline int discriminator_loss(Graph& g, const ConditionalDiscriminator& disc, int real, int fake,
                              bool params_require_grad, MlpTapeIds* ids = nullptr) {
    const int64_t br = g.val(real).shape()[0];
    const int64_t bf = g.val(fake).shape()[0];
    if (br == 0 || bf == 0) throw ContractError("discriminator_loss: empty batch");
    int x = g.concat_rows(real, fake);
    int s = disc.logits(g, x, params_require_grad, ids);
    Tensor targets({br + bf, 1});
    Tensor weights({br + bf, 1});
    float* t = targets.mut();
    float* w = weights.mut();
    for (int64_t i = 0; i < br + bf; ++i) {
        t[i] = i < br ? 1.0f : 0.0f;
        w[i] = i < br ? 1.0f / static_cast<float>(br) : 1.0f / static_cast<float>(bf);
    }
    return g.bce_with_logits(s, std::move(targets), std::move(weights));
}

// One adversarial update of a conditional discriminator: real rows are the
// latent batch as-is, fake rows substitute slot `index` with fresh uniform
// draws while keeping the same conditioning rows (this pairing is what makes
// the learned ratio conditional rather than joint).
inline double conditional_disc_step(ConditionalDiscriminator& disc, MlpOptimizer& opt,
                                    const Tensor& z, RngStream& fake_rng) {
    const int64_t b = z.shape()[0], m = z.shape()[1];
    Tensor fake = z;
    float* fp = fake.mut();
    for (int64_t i = 0; i < b; ++i)
        fp[i * m + disc.index] = fake_rng.uniform(disc.reference.low, disc.reference.high);
    Graph g;
    int real_id = g.leaf(z, false);
    int fake_id = g.leaf(std::move(fake), false);
    MlpTapeIds ids;
    int loss = discriminator_loss(g, disc, real_id, fake_id, true, &ids);
    g.backward(loss);
    opt.step(disc.net, g, ids);
    return static_cast<double>(g.val(loss).item());
}

// The bank: m conditional discriminators, the i-th one modeling latent i
// given the rest.
struct DiscriminatorBank {
    std::vector<ConditionalDiscriminator> discs;

    static DiscriminatorBank build(int64_t m, uint64_t run_seed, UniformReference ref = {},
                                   int64_t hidden = 256) {
        DiscriminatorBank bank;
        bank.discs.reserve(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) {
            RngStream rng(derive_seed(run_seed, "disc_init", static_cast<uint64_t>(i)));
            bank.discs.push_back(ConditionalDiscriminator::build(i, m, rng, ref, hidden));
        }
        return bank;
    }

    int64_t size() const { return static_cast<int64_t>(discs.size()); }
};

// Whole-vector density estimator against the uniform box, for the joint
// estimation experiments. Fails in high dimension; that failure is the point.
class JointDensityEstimator {
public:
    UniformReference reference;
    Mlp net;

    static JointDensityEstimator build(int64_t dim, RngStream& rng, UniformReference ref = {},
                                       int64_t hidden = 512) {
        JointDensityEstimator j;
        j.reference = ref;
        j.net = Mlp::build({dim, hidden, hidden, 1}, {Act::Selu, Act::Selu, Act::Sigmoid}, rng);
        return j;
    }

    int64_t dim() const { return net.in_dim(); }

    double train_step(MlpOptimizer& opt, const Tensor& real, RngStream& fake_rng) {
        const int64_t b = real.shape()[0], d = real.shape()[1];
        Tensor fake({b, d});
        fake_rng.fill_uniform(fake.mut(), b * d, reference.low, reference.high);
        Graph g;
        int real_id = g.leaf(real, false);
        int fake_id = g.leaf(std::move(fake), false);
        int x = g.concat_rows(real_id, fake_id);
        MlpTapeIds ids;
        int s = net.forward(g, x, true, &ids, /*skip_head_activation=*/true);
        Tensor targets({2 * b, 1});
        Tensor weights = Tensor::full({2 * b, 1}, 1.0f / static_cast<float>(b));
        float* t = targets.mut();
        for (int64_t i = 0; i < 2 * b; ++i) t[i] = i < b ? 1.0f : 0.0f;
        int loss = g.bce_with_logits(s, std::move(targets), std::move(weights));
        g.backward(loss);
        opt.step(net, g, ids);
        return static_cast<double>(g.val(loss).item());
    }

    // ratio * (1/(b-a))^d per row; zero outside the box.
    std::vector<double> density_rows(const Tensor& rows, Workspace& ws) const {
        const int64_t n = rows.shape()[0], d = rows.shape()[1];
        std::vector<float> logits(static_cast<size_t>(n));
        net.forward_raw(rows.ptr(), n, logits.data(), ws, /*skip_head_activation=*/true);
        const double log_ref = -static_cast<double>(d) * std::log(static_cast<double>(reference.width()));
        std::vector<double> out(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            bool inside = true;
            for (int64_t j = 0; j < d && inside; ++j)
                inside = reference.contains(rows.at(i, j));
            out[static_cast<size_t>(i)] =
                inside ? density_ratio_from_logit(logits[static_cast<size_t>(i)]) *
                             std::exp(log_ref)
                       : 0.0;
        }
        return out;
    }
};

// Monte-Carlo KL(true || est) from samples of the true distribution:
// mean over samples of [log p_true(s) - log max(est(s), 1e-12)]. Transiently
// negative values are expected when the true KL is near zero.
inline double mc_kl_terms(const std::vector<double>& true_logpdf,
                          const std::vector<double>& est_density) {
    if (true_logpdf.empty() || true_logpdf.size() != est_density.size())
        throw ContractError("mc_kl: empty or mismatched sample sets");
    double acc = 0.0;
    for (size_t i = 0; i < true_logpdf.size(); ++i)
        acc += true_logpdf[i] - std::log(std::max(est_density[i], 1e-12));
    return acc / static_cast<double>(true_logpdf.size());
}

inline double mc_kl(const std::function<double(const float*)>& true_logpdf,
                    const std::function<double(const float*)>& est_density,
                    const Tensor& samples) {
    const int64_t n = samples.shape()[0], d = samples.shape()[1];
    if (n == 0) throw ContractError("mc_kl: empty sample batch");
    std::vector<double> lp(static_cast<size_t>(n)), ed(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        lp[static_cast<size_t>(i)] = true_logpdf(samples.ptr() + i * d);
        ed[static_cast<size_t>(i)] = est_density(samples.ptr() + i * d);
    }
    return mc_kl_terms(lp, ed);
}

// Gaussian chain: first m-1 coordinates i.i.d. standard normal, last one
// z_m ~ N((m-1)^{-1/2} * sum(z_1..z_{m-1}), 1/m). Marginals are all Gaussian
// but the last coordinate is strongly coupled to the rest.
inline Tensor gaussian_chain_sample(int64_t m, int64_t batch, RngStream& rng) {
    if (m < 2) throw ContractError("gaussian_chain_sample: m must be >= 2, got " +
                                   std::to_string(m));
    Tensor z({batch, m});
    float* p = z.mut();
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(m - 1));
    const float cond_std = 1.0f / std::sqrt(static_cast<float>(m));
    for (int64_t i = 0; i < batch; ++i) {
        float s = 0.0f;
        for (int64_t j = 0; j < m - 1; ++j) {
            p[i * m + j] = rng.normal();
            s += p[i * m + j];
        }
        p[i * m + m - 1] = rng.normal(inv_sqrt * s, cond_std);
    }
    return z;
}

inline double gaussian_logpdf(double x, double mean, double stddev) {
    const double z = (x - mean) / stddev;
    return -0.5 * z * z - std::log(stddev) - 0.5 * std::log(2.0 * std::numbers::pi);
}

// log p(z_m | z_1..z_{m-1}) under the Gaussian chain.
inline double chain_conditional_logpdf(const float* row, int64_t m) {
    double s = 0.0;
    for (int64_t j = 0; j < m - 1; ++j) s += row[j];
    const double mean = s / std::sqrt(static_cast<double>(m - 1));
    return gaussian_logpdf(row[m - 1], mean, 1.0 / std::sqrt(static_cast<double>(m)));
}

inline double isotropic_gaussian_logpdf(const float* row, int64_t d) {
    double q = 0.0;
    for (int64_t j = 0; j < d; ++j) q += static_cast<double>(row[j]) * row[j];
    return -0.5 * q - 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
}

}  // namespace gcae
