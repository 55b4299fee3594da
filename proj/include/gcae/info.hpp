#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "gcae/density.hpp"

namespace gcae {

// Shared diagnostics counters for estimator pathologies. Values are reported,
// never fed back into the training signal.
struct Diagnostics {
    int64_t negative_info_warnings = 0;  // per-latent info estimate below -0.1
    int64_t entropy_exp_clamps = 0;      // marginal entropy clamped before e^(2h)
    int64_t density_log_floors = 0;      // densities floored at 1e-12 before log
};

constexpr double kInfoWarnThreshold = -0.1;
constexpr double kEntropyExpClamp = 10.0;
constexpr double kDensityFloor = 1e-12;

// Per-step information summary across the bank.
struct InfoEstimate {
    std::vector<double> per_latent_info;              // I(Z_i ; Z_\i) estimates
    std::vector<double> per_latent_marginal_entropy;  // h(Z_i) estimates
    std::vector<double> entropy_power;                // (1/2pi*e) * e^(2h_i)
    double sigma_i = 0.0;                             // sum of per-latent infos
    double eep = 0.0;                                 // entropy-power weighted sum
};

// One latent's differentiable information estimate:
//
//   I(Z_i;Z_\i) ~= (b-a) * E_{z_\i in batch} E_{u ~ Unif(a,b)}
//                  [ p(u|z_\i) * (log p(u|z_\i) - log pbar(u)) ]
//
// where pbar(u) is the batch estimate of the marginal (mean of the
// conditionals over the batch). The bracketed log terms are a constant
// weight on the tape: gradient flows only through the leading p(u|z_\i)
// factor, and only into the conditioning slots (the candidate column is a
// substituted constant). The marginal entropy
//
//   h(Z_i) ~= -(b-a) * E_u [ pbar(u) * log pbar(u) ]
//
// is computed valuewise; inside the EEP loss it acts as a detached weight.
struct InfoFunctionalGraph {
    Graph graph;
    int z_leaf = -1;
    int info_node = -1;        // scalar node, value == info_value
    double info_value = 0.0;
    double marginal_entropy = 0.0;
};

inline InfoFunctionalGraph build_info_functional(const ConditionalDiscriminator& disc,
                                                 const Tensor& z_clean, int64_t n_uniform,
                                                 RngStream& u_rng, bool need_grad,
                                                 Diagnostics* diag = nullptr) {
    const int64_t b = z_clean.shape()[0];
    const int64_t m = z_clean.shape()[1];
    const int64_t j = n_uniform;
    if (b == 0 || j <= 0) throw ContractError("info_functional: empty batch or n_uniform <= 0");
    if (m != disc.latent_dim())
        throw ContractError("info_functional: latent dim " + std::to_string(m) +
                            " vs discriminator m=" + std::to_string(disc.latent_dim()));
    const UniformReference& ref = disc.reference;

    // u_1..u_J once per batch; row r = q*B + batch index carries u_q.
    std::vector<float> u(static_cast<size_t>(j));
    u_rng.fill_uniform(u.data(), j, ref.low, ref.high);
    Tensor ucol({j * b});
    float* up = ucol.mut();
    for (int64_t q = 0; q < j; ++q)
        for (int64_t i = 0; i < b; ++i) up[q * b + i] = u[static_cast<size_t>(q)];

    InfoFunctionalGraph out;
    Graph& g = out.graph;
    out.z_leaf = g.leaf(z_clean, need_grad);
    int tiled = g.tile_rows(out.z_leaf, j);
    int xin = g.with_column(tiled, disc.index, std::move(ucol));
    int logits = disc.logits(g, xin, /*params_require_grad=*/false);
    int clamped = g.clamp(logits, -detail::kLogitClamp, detail::kLogitClamp);
    int dens = g.scale(g.exp_(clamped), ref.density1d());  // p(u_q | z_\i^(i)), (J*B x 1)

    // Marginal over the same batch, then the stop-gradient log bracket.
    const Tensor& p = g.val(dens);
    std::vector<double> pbar(static_cast<size_t>(j), 0.0);
    for (int64_t q = 0; q < j; ++q) {
        double acc = 0.0;
        for (int64_t i = 0; i < b; ++i) acc += p.at(q * b + i);
        pbar[static_cast<size_t>(q)] = acc / static_cast<double>(b);
    }
    Tensor bracket({j * b, 1});
    float* w = bracket.mut();
    for (int64_t q = 0; q < j; ++q) {
        double lpb = std::log(std::max(pbar[static_cast<size_t>(q)], kDensityFloor));
        if (diag && pbar[static_cast<size_t>(q)] < kDensityFloor) ++diag->density_log_floors;
        for (int64_t i = 0; i < b; ++i) {
            const double pv = p.at(q * b + i);
            if (diag && pv < kDensityFloor) ++diag->density_log_floors;
            w[q * b + i] = static_cast<float>(std::log(std::max(pv, kDensityFloor)) - lpb);
        }
    }
    int wleaf = g.leaf(std::move(bracket), false);
    int dens2d = g.reshape(dens, {j * b, 1});
    out.info_node = g.scale(g.mean_all(g.mul(dens2d, wleaf)), ref.width());
    out.info_value = static_cast<double>(g.val(out.info_node).item());

    double h = 0.0;
    for (int64_t q = 0; q < j; ++q) {
        const double pb = std::max(pbar[static_cast<size_t>(q)], kDensityFloor);
        h += pb * std::log(pb);
    }
    out.marginal_entropy = -static_cast<double>(ref.width()) * h / static_cast<double>(j);

    if (diag && out.info_value < kInfoWarnThreshold) ++diag->negative_info_warnings;
    return out;
}

// Entropy power with the overflow guard on h before exponentiation.
inline double entropy_power(double marginal_entropy, Diagnostics* diag = nullptr) {
    double h = marginal_entropy;
    if (h > kEntropyExpClamp) {
        h = kEntropyExpClamp;
        if (diag) ++diag->entropy_exp_clamps;
    }
    return std::exp(2.0 * h) / (2.0 * std::numbers::pi * std::numbers::e);
}

// Evaluation-only information summary for a bank (no gradients). Each
// discriminator draws its uniform samples from its own stream.
inline InfoEstimate estimate_information(const DiscriminatorBank& bank, const Tensor& z_clean,
                                         int64_t n_uniform, std::vector<RngStream>& u_streams,
                                         Diagnostics* diag = nullptr, int workers = 1) {
    const int64_t m = bank.size();
    InfoEstimate est;
    est.per_latent_info.assign(static_cast<size_t>(m), 0.0);
    est.per_latent_marginal_entropy.assign(static_cast<size_t>(m), 0.0);
    est.entropy_power.assign(static_cast<size_t>(m), 0.0);
    if (m <= 1) return est;  // no complement: sum of informations is 0 by definition
    std::vector<Diagnostics> local(static_cast<size_t>(m));
    parallel_for(static_cast<int>(m), workers, [&](int i) {
        auto fg = build_info_functional(bank.discs[static_cast<size_t>(i)], z_clean, n_uniform,
                                        u_streams[static_cast<size_t>(i)], /*need_grad=*/false,
                                        &local[static_cast<size_t>(i)]);
        est.per_latent_info[static_cast<size_t>(i)] = fg.info_value;
        est.per_latent_marginal_entropy[static_cast<size_t>(i)] = fg.marginal_entropy;
    });
    for (int64_t i = 0; i < m; ++i) {
        est.entropy_power[static_cast<size_t>(i)] = entropy_power(
            est.per_latent_marginal_entropy[static_cast<size_t>(i)],
            diag ? &local[static_cast<size_t>(i)] : nullptr);
        est.sigma_i += est.per_latent_info[static_cast<size_t>(i)];
        est.eep += est.per_latent_info[static_cast<size_t>(i)] *
                   est.entropy_power[static_cast<size_t>(i)];
        if (diag) {
            diag->negative_info_warnings += local[static_cast<size_t>(i)].negative_info_warnings;
            diag->entropy_exp_clamps += local[static_cast<size_t>(i)].entropy_exp_clamps;
            diag->density_log_floors += local[static_cast<size_t>(i)].density_log_floors;
        }
    }
    return est;
}

}  // namespace gcae
