#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gcae/info.hpp"

namespace gcae {

enum class LossMode : uint8_t { Eep, DirectSigmaI, None };

inline const char* loss_mode_name(LossMode m) {
    switch (m) {
        case LossMode::Eep: return "eep";
        case LossMode::DirectSigmaI: return "direct_sigma_i";
        case LossMode::None: return "none";
    }
    return "?";
}

inline LossMode loss_mode_from_name(const std::string& s) {
    if (s == "eep") return LossMode::Eep;
    if (s == "direct_sigma_i") return LossMode::DirectSigmaI;
    if (s == "none") return LossMode::None;
    throw ConfigError("unknown loss mode: " + s);
}

// Encoder trunk ends in a scaled softsign, so z_phi lives in (-3,3)^m; the
// decoder head is linear. Widths default to the reference architecture.
class GcaeModel {
public:
    Mlp encoder;
    Mlp decoder;
    int64_t m = 0;
    float sigma = 0.2f;
    LossMode loss_mode = LossMode::Eep;

    static GcaeModel build(int64_t n, int64_t m, float sigma, LossMode mode, uint64_t run_seed,
                           std::vector<int64_t> enc_hidden = {1024, 1024, 512}) {
        if (sigma < 0.0f) throw ContractError("sigma must be >= 0");
        GcaeModel model;
        model.m = m;
        model.sigma = sigma;
        model.loss_mode = mode;
        std::vector<int64_t> enc_sizes{n};
        enc_sizes.insert(enc_sizes.end(), enc_hidden.begin(), enc_hidden.end());
        enc_sizes.push_back(m);
        std::vector<Act> enc_acts(enc_hidden.size(), Act::Selu);
        enc_acts.push_back(Act::ScaledSoftsign);
        std::vector<int64_t> dec_sizes(enc_sizes.rbegin(), enc_sizes.rend());
        std::vector<Act> dec_acts(enc_hidden.size(), Act::Selu);
        dec_acts.push_back(Act::None);
        RngStream enc_rng(derive_seed(run_seed, "encoder_init"));
        RngStream dec_rng(derive_seed(run_seed, "decoder_init"));
        model.encoder = Mlp::build(enc_sizes, enc_acts, enc_rng);
        model.decoder = Mlp::build(dec_sizes, dec_acts, dec_rng);
        return model;
    }

    int64_t input_dim() const { return encoder.in_dim(); }

    // Tape-free z_phi for evaluation paths.
    Tensor encode(const Tensor& x, Workspace& ws) const {
        const int64_t rows = x.shape()[0];
        Tensor z({rows, m});
        encoder.forward_raw(x.ptr(), rows, z.mut(), ws);
        if (!z.all_finite()) throw NumericFault("encode: non-finite latent");
        return z;
    }
};

// Additive Gaussian channel output; z_noisy - z_clean equals the stored draw
// exactly.
struct LatentBatch {
    Tensor z_clean;
    Tensor z_noisy;
    Tensor noise;
};

inline LatentBatch channel(const Tensor& z_clean, float sigma, RngStream& rng) {
    if (sigma < 0.0f) throw ContractError("channel: sigma must be >= 0");
    LatentBatch lb;
    lb.z_clean = z_clean;
    lb.noise = Tensor(z_clean.shape());
    if (sigma > 0.0f) rng.fill_normal(lb.noise.mut(), lb.noise.numel(), 0.0f, sigma);
    lb.z_noisy = Tensor(z_clean.shape());
    float* zn = lb.z_noisy.mut();
    float* nv = lb.noise.mut();
    const float* zc = z_clean.ptr();
    for (int64_t i = 0; i < z_clean.numel(); ++i) {
        zn[i] = zc[i] + nv[i];
        nv[i] = zn[i] - zc[i];  // store the realized draw: the identity holds exactly
    }
    return lb;
}

// Evaluation wrappers matching the loss definitions: sum of per-latent
// informations, and the same sum weighted by detached entropy powers.
inline InfoEstimate sigma_i_loss(const DiscriminatorBank& bank, const Tensor& z_clean,
                                 int64_t n_uniform, std::vector<RngStream>& u_streams,
                                 Diagnostics* diag = nullptr, int workers = 1) {
    return estimate_information(bank, z_clean, n_uniform, u_streams, diag, workers);
}

inline double eep_loss(const DiscriminatorBank& bank, const Tensor& z_clean, int64_t n_uniform,
                       std::vector<RngStream>& u_streams, Diagnostics* diag = nullptr,
                       int workers = 1) {
    return estimate_information(bank, z_clean, n_uniform, u_streams, diag, workers).eep;
}

struct TrainHyper {
    float lambda = 0.2f;
    int64_t k = 5;
    int64_t batch_size = 64;
    int64_t n_uniform = 50;
    AdamConfig ae_opt{5e-5f, 0.9f, 0.999f, 1e-8f};
    AdamConfig disc_opt{2e-4f, 0.5f, 0.9f, 1e-8f};
    int workers = 1;  // concurrent discriminator updates
};

struct StepReport {
    double mse = 0.0;
    double sigma_i = 0.0;
    double eep = 0.0;
    bool info_valid = false;            // sigma_i/eep were measured this step
    std::vector<double> latent_std;     // per-latent std of the clean batch
    std::vector<double> per_latent_info;
};

using BatchSampler = std::function<Tensor(int64_t batch, RngStream&)>;

// Owns the model, the bank, their optimizers and all RNG substreams of one
// run. Streams are derived per component (and per discriminator index), so
// concurrent discriminator updates cannot perturb determinism.
class GcaeTrainer {
public:
    GcaeModel model;
    DiscriminatorBank bank;

    GcaeTrainer(GcaeModel model_in, DiscriminatorBank bank_in, TrainHyper hyper, uint64_t run_seed,
                BatchSampler sampler)
        : model(std::move(model_in)),
          bank(std::move(bank_in)),
          hyper_(hyper),
          sampler_(std::move(sampler)),
          enc_opt_(model.encoder, hyper.ae_opt),
          dec_opt_(model.decoder, hyper.ae_opt),
          data_disc_rng_(derive_seed(run_seed, "data_disc")),
          data_ae_rng_(derive_seed(run_seed, "data_ae")),
          noise_disc_rng_(derive_seed(run_seed, "noise_disc")),
          noise_ae_rng_(derive_seed(run_seed, "noise_ae")) {
        for (int64_t i = 0; i < bank.size(); ++i) {
            disc_opts_.emplace_back(bank.discs[static_cast<size_t>(i)].net, hyper.disc_opt);
            fake_rngs_.emplace_back(derive_seed(run_seed, "disc_fake", static_cast<uint64_t>(i)));
            u_rngs_.emplace_back(derive_seed(run_seed, "info_uniform", static_cast<uint64_t>(i)));
        }
    }

    const TrainHyper& hyper() const { return hyper_; }
    Diagnostics& diagnostics() { return diag_; }
    int64_t iteration() const { return iteration_; }

    // One adversarial round: fresh batch, fresh channel noise, every
    // discriminator updated against the shared read-only latent batch.
    void disc_round() {
        Tensor xb = sampler_(hyper_.batch_size, data_disc_rng_);
        Tensor z = model.encode(xb, ws_);
        LatentBatch lb = channel(z, model.sigma, noise_disc_rng_);
        std::vector<double> losses(static_cast<size_t>(bank.size()), 0.0);
        parallel_for(static_cast<int>(bank.size()), hyper_.workers, [&](int i) {
            losses[static_cast<size_t>(i)] =
                conditional_disc_step(bank.discs[static_cast<size_t>(i)],
                                      disc_opts_[static_cast<size_t>(i)], lb.z_noisy,
                                      fake_rngs_[static_cast<size_t>(i)]);
        });
        for (int64_t i = 0; i < bank.size(); ++i)
            if (!std::isfinite(losses[static_cast<size_t>(i)]))
                throw NumericFault("iteration " + std::to_string(iteration_) +
                                   ": non-finite loss for discriminator " + std::to_string(i));
    }

    // Bank pre-training against the (typically untrained) encoder's latent
    // distribution, so conditional densities are valid before any
    // regularization pressure applies.
    void warmup(int64_t n_batches) {
        for (int64_t i = 0; i < n_batches; ++i) disc_round();
    }

    // k discriminator rounds followed by one autoencoder update of
    // mse + lambda * (EEP | sigma-I) per the configured mode. Information
    // metrics are measured on the clean latents whenever the regularizer is
    // active, or when `want_info` forces an extra evaluation pass.
    StepReport train_step(bool want_info = true) {
        ++iteration_;
        for (int64_t r = 0; r < hyper_.k; ++r) disc_round();

        Tensor xb = sampler_(hyper_.batch_size, data_ae_rng_);
        Graph g;
        const int x_leaf = g.leaf(xb, false);
        MlpTapeIds enc_ids, dec_ids;
        const int z_id = model.encoder.forward(g, x_leaf, true, &enc_ids);
        Tensor noise(g.val(z_id).shape());
        if (model.sigma > 0.0f)
            noise_ae_rng_.fill_normal(noise.mut(), noise.numel(), 0.0f, model.sigma);
        const int z_noisy = g.add(z_id, g.leaf(std::move(noise), false));
        const int xhat = model.decoder.forward(g, z_noisy, true, &dec_ids);
        const int mse_id = g.mse(xhat, x_leaf);

        StepReport rep;
        rep.mse = static_cast<double>(g.val(mse_id).item());
        if (!std::isfinite(rep.mse))
            throw NumericFault("iteration " + std::to_string(iteration_) +
                               ": non-finite mse term");
        const Tensor z_vals = g.val(z_id);
        rep.latent_std = column_std(z_vals);

        const bool reg_active =
            hyper_.lambda > 0.0f && model.loss_mode != LossMode::None && model.m > 1;
        std::vector<std::pair<int, Tensor>> seeds{{mse_id, Tensor::scalar(1.0f)}};
        if (reg_active) {
            Tensor dz = Tensor::zeros(z_vals.shape());
            fill_info_report(z_vals, /*need_grad=*/true, rep, &dz);
            seeds.emplace_back(z_id, std::move(dz));
        } else if (want_info && model.m > 1) {
            fill_info_report(z_vals, /*need_grad=*/false, rep, nullptr);
        } else if (model.m <= 1) {
            rep.info_valid = true;  // no complement: both losses identically zero
            rep.per_latent_info.assign(static_cast<size_t>(model.m), 0.0);
        }
        if (rep.info_valid && (!std::isfinite(rep.sigma_i) || !std::isfinite(rep.eep)))
            throw NumericFault("iteration " + std::to_string(iteration_) +
                               ": non-finite information term");

        g.backward_seeded(seeds);
        enc_opt_.step(model.encoder, g, enc_ids);
        dec_opt_.step(model.decoder, g, dec_ids);
        return rep;
    }

    // Evaluation-only information estimate (consumes the same uniform
    // streams as training would).
    InfoEstimate measure_information(const Tensor& z_clean) {
        return estimate_information(bank, z_clean, hyper_.n_uniform, u_rngs_, &diag_,
                                    hyper_.workers);
    }

    Workspace& workspace() { return ws_; }
    MlpOptimizer& encoder_opt() { return enc_opt_; }
    MlpOptimizer& decoder_opt() { return dec_opt_; }
    std::vector<MlpOptimizer>& disc_opts() { return disc_opts_; }

    // Named access for checkpointing.
    template <class Fn>
    void visit_rng_streams(Fn&& fn) {
        fn("data_disc", data_disc_rng_);
        fn("data_ae", data_ae_rng_);
        fn("noise_disc", noise_disc_rng_);
        fn("noise_ae", noise_ae_rng_);
        for (size_t i = 0; i < fake_rngs_.size(); ++i)
            fn("disc_fake_" + std::to_string(i), fake_rngs_[i]);
        for (size_t i = 0; i < u_rngs_.size(); ++i)
            fn("info_uniform_" + std::to_string(i), u_rngs_[i]);
    }

    void set_iteration(int64_t it) { iteration_ = it; }

private:
    TrainHyper hyper_;
    BatchSampler sampler_;
    MlpOptimizer enc_opt_;
    MlpOptimizer dec_opt_;
    std::vector<MlpOptimizer> disc_opts_;
    RngStream data_disc_rng_, data_ae_rng_, noise_disc_rng_, noise_ae_rng_;
    std::vector<RngStream> fake_rngs_;
    std::vector<RngStream> u_rngs_;
    Workspace ws_;
    Diagnostics diag_;
    int64_t iteration_ = 0;

    static std::vector<double> column_std(const Tensor& z) {
        const int64_t b = z.shape()[0], m = z.shape()[1];
        std::vector<double> out(static_cast<size_t>(m), 0.0);
        for (int64_t j = 0; j < m; ++j) {
            double s = 0.0, s2 = 0.0;
            for (int64_t i = 0; i < b; ++i) {
                const double v = z.at(i, j);
                s += v;
                s2 += v * v;
            }
            const double mean = s / static_cast<double>(b);
            out[static_cast<size_t>(j)] =
                std::sqrt(std::max(0.0, s2 / static_cast<double>(b) - mean * mean));
        }
        return out;
    }

    // Builds each discriminator's functional, backpropagates lambda-weighted
    // seeds to the latent leaf, and reduces the per-discriminator gradients
    // in index order (scheduling-independent).
    void fill_info_report(const Tensor& z_vals, bool need_grad, StepReport& rep, Tensor* dz_out) {
        const int64_t m = bank.size();
        std::vector<double> infos(static_cast<size_t>(m), 0.0);
        std::vector<double> entropies(static_cast<size_t>(m), 0.0);
        std::vector<Tensor> dzs(static_cast<size_t>(m));
        std::vector<Diagnostics> local(static_cast<size_t>(m));
        const LossMode mode = model.loss_mode;
        const float lambda = hyper_.lambda;
        parallel_for(static_cast<int>(m), hyper_.workers, [&](int i) {
            auto fg = build_info_functional(bank.discs[static_cast<size_t>(i)], z_vals,
                                            hyper_.n_uniform, u_rngs_[static_cast<size_t>(i)],
                                            need_grad, &local[static_cast<size_t>(i)]);
            infos[static_cast<size_t>(i)] = fg.info_value;
            entropies[static_cast<size_t>(i)] = fg.marginal_entropy;
            if (need_grad) {
                const double w = mode == LossMode::Eep
                                     ? entropy_power(fg.marginal_entropy,
                                                     &local[static_cast<size_t>(i)])
                                     : 1.0;
                fg.graph.backward_seeded(
                    {{fg.info_node, Tensor::scalar(static_cast<float>(lambda * w))}});
                dzs[static_cast<size_t>(i)] = fg.graph.grad(fg.z_leaf);
            }
        });
        rep.info_valid = true;
        rep.per_latent_info = infos;
        for (int64_t i = 0; i < m; ++i) {
            const double ep = entropy_power(entropies[static_cast<size_t>(i)], nullptr);
            rep.sigma_i += infos[static_cast<size_t>(i)];
            rep.eep += infos[static_cast<size_t>(i)] * ep;
            diag_.negative_info_warnings += local[static_cast<size_t>(i)].negative_info_warnings;
            diag_.entropy_exp_clamps += local[static_cast<size_t>(i)].entropy_exp_clamps;
            diag_.density_log_floors += local[static_cast<size_t>(i)].density_log_floors;
            if (dz_out && dzs[static_cast<size_t>(i)].defined()) {
                float* acc = dz_out->mut();
                const float* src = dzs[static_cast<size_t>(i)].ptr();
                for (int64_t t = 0; t < dz_out->numel(); ++t) acc[t] += src[t];
            }
        }
    }
};

}  // namespace gcae
