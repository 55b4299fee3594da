#pragma once

#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gcae/checkpoint.hpp"
#include "gcae/csvio.hpp"
#include "gcae/datasets.hpp"
#include "gcae/metrics.hpp"
#include "gcae/model.hpp"

namespace gcae {

// Per-dataset metric evaluation sizes.
struct EvalProtocol {
    int mig_bins = -1;
    int64_t mig_samples = -1;  // -1: full dataset
    int64_t fs_train = -1, fs_test = -1, fs_batch = 64;
    int64_t sap_train = -1, sap_test = -1;
    int64_t dci_train = -1, dci_test = -1;
};

// One run's full configuration. Values of -1 (or empty) resolve to
// dataset-dependent defaults in finalized().
struct ExperimentConfig {
    std::string dataset = "waveforms";  // waveforms | dsprites
    int64_t m = 10;
    float sigma = 0.2f;
    float lambda = 0.2f;
    std::string loss_mode = "eep";  // eep | direct_sigma_i | none
    int64_t batch_size = -1;
    int64_t iterations = -1;
    int64_t k = -1;  // discriminator updates per autoencoder update
    float ae_lr = 5e-5f;
    float disc_lr = 2e-4f;
    float ae_beta1 = 0.9f, ae_beta2 = 0.999f;
    float disc_beta1 = 0.5f, disc_beta2 = 0.9f;
    int64_t warmup_batches = 500;
    int64_t n_uniform = 50;
    uint64_t seed = 0;
    int64_t dsprites_subsample = 10000;  // 0: train on every loaded item
    std::string data_dir;                // dsprites archive directory
    std::string out_dir;                 // empty: no files written
    int workers = 1;                     // concurrent sweep runs
    int disc_workers = 2;                // concurrent discriminator updates
    int64_t log_every = 50;
    int64_t checkpoint_every = 500;
    int64_t eval_batches = 16;  // batches averaged for final mse / sigma-i
    EvalProtocol protocol;
    std::vector<int64_t> enc_hidden{1024, 1024, 512};
    int64_t disc_hidden = 256;

    ExperimentConfig finalized() const {
        ExperimentConfig c = *this;
        std::string errors;
        if (c.dataset != "waveforms" && c.dataset != "dsprites")
            errors += "  dataset: must be waveforms or dsprites, got '" + c.dataset + "'\n";
        if (c.m < 1) errors += "  m: must be >= 1\n";
        if (c.sigma < 0) errors += "  sigma: must be >= 0\n";
        if (c.lambda < 0) errors += "  lambda: must be >= 0\n";
        if (c.loss_mode != "eep" && c.loss_mode != "direct_sigma_i" && c.loss_mode != "none")
            errors += "  loss_mode: must be eep, direct_sigma_i or none\n";
        if (c.n_uniform < 1) errors += "  n_uniform: must be >= 1\n";
        if (c.warmup_batches < 0) errors += "  warmup_batches: must be >= 0\n";
        const bool waveforms = c.dataset == "waveforms";
        if (c.batch_size < 0) c.batch_size = waveforms ? 64 : 256;
        if (c.iterations < 0) c.iterations = waveforms ? 2000 : 20000;
        if (c.k < 0) c.k = c.m >= 20 ? 10 : 5;
        if (c.batch_size < 1) errors += "  batch_size: must be >= 1\n";
        if (c.iterations < 0) errors += "  iterations: must be >= 0\n";
        if (c.k < 1) errors += "  k: must be >= 1\n";
        EvalProtocol& p = c.protocol;
        if (p.mig_bins < 0) p.mig_bins = waveforms ? 50 : 20;
        if (p.mig_samples < 0) p.mig_samples = waveforms ? -1 : 10000;
        if (p.fs_train < 0) p.fs_train = waveforms ? 1000 : 5000;
        if (p.fs_test < 0) p.fs_test = waveforms ? 200 : 1000;
        if (p.sap_train < 0) p.sap_train = waveforms ? 240 : 5000;
        if (p.sap_test < 0) p.sap_test = waveforms ? 120 : 1000;
        if (p.dci_train < 0) p.dci_train = waveforms ? 240 : 5000;
        if (p.dci_test < 0) p.dci_test = waveforms ? 120 : 1000;
        if (!errors.empty()) throw ConfigError("invalid configuration:\n" + errors);
        return c;
    }

    KvPairs to_kv() const {
        KvPairs kv;
        auto add = [&](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
        add("dataset", dataset);
        add("m", std::to_string(m));
        add("sigma", fmt_num(sigma));
        add("lambda", fmt_num(lambda));
        add("loss_mode", loss_mode);
        add("batch_size", std::to_string(batch_size));
        add("iterations", std::to_string(iterations));
        add("k", std::to_string(k));
        add("ae_lr", fmt_num(ae_lr));
        add("disc_lr", fmt_num(disc_lr));
        add("ae_beta1", fmt_num(ae_beta1));
        add("ae_beta2", fmt_num(ae_beta2));
        add("disc_beta1", fmt_num(disc_beta1));
        add("disc_beta2", fmt_num(disc_beta2));
        add("warmup_batches", std::to_string(warmup_batches));
        add("n_uniform", std::to_string(n_uniform));
        add("seed", std::to_string(seed));
        add("dsprites_subsample", std::to_string(dsprites_subsample));
        add("log_every", std::to_string(log_every));
        add("checkpoint_every", std::to_string(checkpoint_every));
        add("eval_batches", std::to_string(eval_batches));
        add("mig_bins", std::to_string(protocol.mig_bins));
        add("mig_samples", std::to_string(protocol.mig_samples));
        add("fs_train", std::to_string(protocol.fs_train));
        add("fs_test", std::to_string(protocol.fs_test));
        add("fs_batch", std::to_string(protocol.fs_batch));
        add("sap_train", std::to_string(protocol.sap_train));
        add("sap_test", std::to_string(protocol.sap_test));
        add("dci_train", std::to_string(protocol.dci_train));
        add("dci_test", std::to_string(protocol.dci_test));
        add("disc_hidden", std::to_string(disc_hidden));
        std::string hidden;
        for (size_t i = 0; i < enc_hidden.size(); ++i)
            hidden += (i ? "," : "") + std::to_string(enc_hidden[i]);
        add("enc_hidden", hidden);
        return kv;
    }

    static ExperimentConfig from_kv(const KvPairs& kv) {
        ExperimentConfig c;
        auto s = [&](const char* k, std::string& dst) {
            if (const auto* v = kv_find(kv, k)) dst = *v;
        };
        auto i = [&](const char* k, int64_t& dst) {
            if (const auto* v = kv_find(kv, k)) dst = std::stoll(*v);
        };
        auto f = [&](const char* k, float& dst) {
            if (const auto* v = kv_find(kv, k)) dst = std::stof(*v);
        };
        s("dataset", c.dataset);
        i("m", c.m);
        f("sigma", c.sigma);
        f("lambda", c.lambda);
        s("loss_mode", c.loss_mode);
        i("batch_size", c.batch_size);
        i("iterations", c.iterations);
        i("k", c.k);
        f("ae_lr", c.ae_lr);
        f("disc_lr", c.disc_lr);
        f("ae_beta1", c.ae_beta1);
        f("ae_beta2", c.ae_beta2);
        f("disc_beta1", c.disc_beta1);
        f("disc_beta2", c.disc_beta2);
        i("warmup_batches", c.warmup_batches);
        i("n_uniform", c.n_uniform);
        if (const auto* v = kv_find(kv, "seed")) c.seed = std::stoull(*v);
        i("dsprites_subsample", c.dsprites_subsample);
        i("log_every", c.log_every);
        i("checkpoint_every", c.checkpoint_every);
        i("eval_batches", c.eval_batches);
        int64_t tmp;
        auto ip = [&](const char* k, auto& dst) {
            if (const auto* v = kv_find(kv, k)) {
                tmp = std::stoll(*v);
                dst = static_cast<std::decay_t<decltype(dst)>>(tmp);
            }
        };
        ip("mig_bins", c.protocol.mig_bins);
        ip("mig_samples", c.protocol.mig_samples);
        ip("fs_train", c.protocol.fs_train);
        ip("fs_test", c.protocol.fs_test);
        ip("fs_batch", c.protocol.fs_batch);
        ip("sap_train", c.protocol.sap_train);
        ip("sap_test", c.protocol.sap_test);
        ip("dci_train", c.protocol.dci_train);
        ip("dci_test", c.protocol.dci_test);
        i("disc_hidden", c.disc_hidden);
        if (const auto* v = kv_find(kv, "enc_hidden")) {
            c.enc_hidden.clear();
            std::stringstream ss(*v);
            std::string tok;
            while (std::getline(ss, tok, ',')) c.enc_hidden.push_back(std::stoll(tok));
        }
        return c;
    }
};

inline FactorDataset load_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset == "waveforms") return generate_waveforms();
    const std::string dir = cfg.data_dir.empty() ? "." : cfg.data_dir;
    const std::string path = dir + "/dsprites.npz";
    if (!std::filesystem::exists(path))
        throw IoError("dsprites archive not found at " + path +
                      " (set GCAE_DATA_DIR or generate one with `gcae make-dsprites`)");
    return dsprites::load(path);
}

namespace exp_detail {

// Encode dataset rows in chunks through the frozen normalization stats.
inline Tensor encode_indices(const GcaeModel& model, const FactorDataset& ds,
                             const NormStats& stats, const std::vector<int64_t>& idx,
                             Workspace& ws) {
    const int64_t n = static_cast<int64_t>(idx.size());
    Tensor codes({n, model.m});
    const int64_t chunk = 512;
    for (int64_t start = 0; start < n; start += chunk) {
        const int64_t count = std::min(chunk, n - start);
        Tensor x({count, ds.features});
        ds.fill_rows(idx.data() + start, count, x.mut());
        normalize_inplace(x, stats);
        Tensor z = model.encode(x, ws);
        std::copy_n(z.ptr(), z.numel(), codes.mut() + start * model.m);
    }
    return codes;
}

inline FactorMatrix gather_factors(const FactorDataset& ds, const std::vector<int64_t>& idx) {
    FactorMatrix out;
    const int64_t kf = ds.factors.factors();
    out.values = Tensor({static_cast<int64_t>(idx.size()), kf});
    float* p = out.values.mut();
    for (size_t i = 0; i < idx.size(); ++i)
        for (int64_t k = 0; k < kf; ++k)
            p[static_cast<int64_t>(i) * kf + k] = ds.factors.values.at(idx[i], k);
    out.kinds = ds.factors.kinds;
    out.cardinalities = ds.factors.cardinalities;
    return out;
}

}  // namespace exp_detail

// Runs the four supervised metrics on clean-latent codes of the dataset.
inline MetricReport evaluate_all(const GcaeModel& model, const FactorDataset& ds,
                                 const NormStats& stats, const EvalProtocol& protocol,
                                 uint64_t eval_seed) {
    Workspace ws;
    MetricReport rep;
    rep.latents = model.m;
    rep.factor_count = ds.factors.factors();

    // Shared shuffled sample for the score-matrix metrics.
    const int64_t want = protocol.mig_samples < 0 ? ds.items
                                                  : std::min(protocol.mig_samples, ds.items);
    std::vector<int64_t> sample = subsample_indices(ds.items, want, derive_seed(eval_seed, "mig"));
    Tensor codes = exp_detail::encode_indices(model, ds, stats, sample, ws);
    FactorMatrix factors = exp_detail::gather_factors(ds, sample);

    rep.mig = mig(codes, factors, protocol.mig_bins, &rep);
    auto split = [&](int64_t train, int64_t test) {
        if (train + test <= codes.shape()[0]) return std::pair<int64_t, int64_t>{train, test};
        const int64_t tr = codes.shape()[0] * 2 / 3;  // shrink, keep the 2:1 ratio
        return std::pair<int64_t, int64_t>{tr, codes.shape()[0] - tr};
    };
    const auto [sap_tr, sap_te] = split(protocol.sap_train, protocol.sap_test);
    rep.sap = sap(codes, factors, sap_tr, sap_te);
    const auto [dci_tr, dci_te] = split(protocol.dci_train, protocol.dci_test);
    rep.dci = dci_disentanglement(codes, factors, dci_tr, dci_te, &rep.importance);

    RngStream fs_rng(derive_seed(eval_seed, "factor_score"));
    auto sample_codes = [&](int64_t batch, RngStream& r) {
        std::vector<int64_t> idx(static_cast<size_t>(batch));
        for (auto& v : idx) v = r.index(ds.items);
        return exp_detail::encode_indices(model, ds, stats, idx, ws);
    };
    auto sample_fixed = [&](int64_t factor, RngStream& r) {
        auto idx = sample_fixed_factor(ds, factor, protocol.fs_batch, r);
        return exp_detail::encode_indices(model, ds, stats, idx, ws);
    };
    rep.factor_score = factor_score(sample_codes, sample_fixed, ds.factors.factors(),
                                    protocol.fs_train, protocol.fs_test, fs_rng, &rep);
    return rep;
}

struct LogRow {
    int64_t iter;
    double mse, sigma_i, eep;
};

struct RunResult {
    ExperimentConfig cfg;  // resolved
    double final_mse = 0.0;
    double final_sigma_i = 0.0;
    double final_eep = 0.0;
    MetricReport metrics;
    double drift_stat = 0.0;  // mean over latents of Var(running std)
    std::vector<LogRow> log;
    Diagnostics diagnostics;
    double wall_seconds = 0.0;
};

namespace exp_detail {

inline CsvTable run_log_table(const ExperimentConfig& cfg, const std::vector<LogRow>& rows) {
    CsvTable t;
    const KvPairs kv = cfg.to_kv();
    for (const auto& [k, v] : kv) t.header.push_back(k);
    t.header.insert(t.header.end(), {"iter", "mse", "sigma_i", "eep"});
    for (const auto& r : rows) {
        std::vector<std::string> row;
        for (const auto& [k, v] : kv) row.push_back(v);
        row.push_back(std::to_string(r.iter));
        row.push_back(fmt_num(r.mse));
        row.push_back(fmt_num(r.sigma_i));
        row.push_back(fmt_num(r.eep));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline void write_metrics_files(const std::string& dir, const ExperimentConfig& cfg,
                                const RunResult& res) {
    CsvTable t;
    const KvPairs kv = cfg.to_kv();
    for (const auto& [k, v] : kv) t.header.push_back(k);
    t.header.insert(t.header.end(), {"final_mse", "final_sigma_i", "final_eep", "mig",
                                     "factor_score", "sap", "dci", "drift"});
    std::vector<std::string> row;
    for (const auto& [k, v] : kv) row.push_back(v);
    row.insert(row.end(),
               {fmt_num(res.final_mse), fmt_num(res.final_sigma_i), fmt_num(res.final_eep),
                fmt_num(res.metrics.mig), fmt_num(res.metrics.factor_score),
                fmt_num(res.metrics.sap), fmt_num(res.metrics.dci), fmt_num(res.drift_stat)});
    t.rows.push_back(std::move(row));
    t.write(dir + "/metrics.csv");

    // structured-text report
    std::ofstream os(dir + "/metrics.txt");
    os << "mig=" << fmt_num(res.metrics.mig) << "\n"
       << "factor_score=" << fmt_num(res.metrics.factor_score) << "\n"
       << "sap=" << fmt_num(res.metrics.sap) << "\n"
       << "dci=" << fmt_num(res.metrics.dci) << "\n"
       << "final_mse=" << fmt_num(res.final_mse) << "\n"
       << "final_sigma_i=" << fmt_num(res.final_sigma_i) << "\n"
       << "final_eep=" << fmt_num(res.final_eep) << "\n"
       << "drift=" << fmt_num(res.drift_stat) << "\n"
       << "excluded_factors=" << res.metrics.excluded_factors << "\n"
       << "negative_info_warnings=" << res.diagnostics.negative_info_warnings << "\n"
       << "entropy_exp_clamps=" << res.diagnostics.entropy_exp_clamps << "\n";

    if (!res.metrics.importance.empty()) {
        CsvTable imp;
        for (int64_t k = 0; k < res.metrics.factor_count; ++k)
            imp.header.push_back("factor" + std::to_string(k));
        for (int64_t j = 0; j < res.metrics.latents; ++j) {
            std::vector<std::string> r;
            for (int64_t k = 0; k < res.metrics.factor_count; ++k)
                r.push_back(fmt_num(
                    res.metrics.importance[static_cast<size_t>(j * res.metrics.factor_count + k)]));
            imp.rows.push_back(std::move(r));
        }
        imp.write(dir + "/importance.csv");
    }
}

}  // namespace exp_detail

// Deterministic construction shared by training and checkpoint evaluation:
// training split, frozen normalization stats, model, bank, trainer.
struct TrainerBundle {
    Tensor train_x;  // normalized training rows
    NormStats stats;
    std::unique_ptr<GcaeTrainer> trainer;
};

inline TrainerBundle build_trainer(const ExperimentConfig& cfg, const FactorDataset& ds) {
    TrainerBundle b;
    std::vector<int64_t> train_idx;
    if (cfg.dataset == "dsprites" && cfg.dsprites_subsample > 0 &&
        cfg.dsprites_subsample < ds.items) {
        train_idx = subsample_indices(ds.items, cfg.dsprites_subsample,
                                      derive_seed(cfg.seed, "train_subsample"));
    } else {
        train_idx.resize(static_cast<size_t>(ds.items));
        std::iota(train_idx.begin(), train_idx.end(), 0);
    }
    b.train_x = ds.rows(train_idx);
    b.stats = fit_norm_stats(b.train_x);
    normalize_inplace(b.train_x, b.stats);

    GcaeModel model = GcaeModel::build(ds.features, cfg.m, cfg.sigma,
                                       loss_mode_from_name(cfg.loss_mode), cfg.seed,
                                       cfg.enc_hidden);
    DiscriminatorBank bank = DiscriminatorBank::build(cfg.m, cfg.seed, {}, cfg.disc_hidden);
    TrainHyper hyper;
    hyper.lambda = cfg.lambda;
    hyper.k = cfg.k;
    hyper.batch_size = cfg.batch_size;
    hyper.n_uniform = cfg.n_uniform;
    hyper.ae_opt = {cfg.ae_lr, cfg.ae_beta1, cfg.ae_beta2, 1e-8f};
    hyper.disc_opt = {cfg.disc_lr, cfg.disc_beta1, cfg.disc_beta2, 1e-8f};
    hyper.workers = cfg.disc_workers;

    Tensor train_x = b.train_x;  // shared buffer, captured by value
    BatchSampler sampler = [train_x](int64_t batch, RngStream& rng) {
        const int64_t n = train_x.shape()[0], f = train_x.shape()[1];
        Tensor out({batch, f});
        float* p = out.mut();
        for (int64_t i = 0; i < batch; ++i)
            std::copy_n(train_x.ptr() + rng.index(n) * f, f, p + i * f);
        return out;
    };
    b.trainer = std::make_unique<GcaeTrainer>(std::move(model), std::move(bank), hyper, cfg.seed,
                                              std::move(sampler));
    return b;
}

// Full training procedure: warmup, k-discriminator/1-autoencoder loop,
// periodic logging and checkpoints, final evaluation averaging, metrics.
inline RunResult run_training(const ExperimentConfig& raw_cfg, const FactorDataset& ds,
                              bool quiet = true) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig cfg = raw_cfg.finalized();
    RunResult res;
    res.cfg = cfg;

    if (!cfg.out_dir.empty()) {
        ensure_dir(cfg.out_dir);
        std::ofstream os(cfg.out_dir + "/config_echo.ini");
        os << kv_to_text(cfg.to_kv());
    }

    TrainerBundle bundle = build_trainer(cfg, ds);
    GcaeTrainer& trainer = *bundle.trainer;
    const NormStats& stats = bundle.stats;

    trainer.warmup(cfg.warmup_batches);

    std::vector<std::vector<double>> std_series(static_cast<size_t>(cfg.m));
    const std::string ckpt_path = cfg.out_dir.empty() ? "" : cfg.out_dir + "/checkpoint.bin";
    const std::string echo = kv_to_text(cfg.to_kv());
    for (int64_t it = 1; it <= cfg.iterations; ++it) {
        const bool log_step = (it % cfg.log_every == 0) || it == cfg.iterations;
        StepReport rep = trainer.train_step(/*want_info=*/log_step);
        if (log_step) {
            res.log.push_back({it, rep.mse, rep.sigma_i, rep.eep});
            for (int64_t j = 0; j < cfg.m; ++j)
                std_series[static_cast<size_t>(j)].push_back(
                    rep.latent_std[static_cast<size_t>(j)]);
            if (!quiet)
                std::cerr << "iter " << it << " mse " << fmt_num(rep.mse) << " sigma_i "
                          << fmt_num(rep.sigma_i) << " eep " << fmt_num(rep.eep) << "\n";
        }
        if (!ckpt_path.empty() && cfg.checkpoint_every > 0 &&
            (it % cfg.checkpoint_every == 0 || it == cfg.iterations))
            save_checkpoint(ckpt_path, trainer, echo);
    }
    if (!ckpt_path.empty() && cfg.iterations == 0) save_checkpoint(ckpt_path, trainer, echo);

    // latent-scale drift: variance of each latent's running std across the
    // logged checkpoints, averaged over latents
    for (int64_t j = 0; j < cfg.m; ++j) {
        const auto& s = std_series[static_cast<size_t>(j)];
        if (s.size() < 2) continue;
        double mean = 0;
        for (double v : s) mean += v;
        mean /= static_cast<double>(s.size());
        double var = 0;
        for (double v : s) var += (v - mean) * (v - mean);
        res.drift_stat += var / static_cast<double>(s.size());
    }
    res.drift_stat /= static_cast<double>(cfg.m);

    // final mse / information estimates averaged over fresh evaluation batches
    RngStream eval_data(derive_seed(cfg.seed, "eval_data"));
    RngStream eval_noise(derive_seed(cfg.seed, "eval_noise"));
    Workspace ws;
    const Tensor& train_x = bundle.train_x;
    double mse_acc = 0, si_acc = 0, eep_acc = 0;
    for (int64_t e = 0; e < cfg.eval_batches; ++e) {
        Tensor xb({cfg.batch_size, ds.features});
        float* xp = xb.mut();
        for (int64_t i = 0; i < cfg.batch_size; ++i)
            std::copy_n(train_x.ptr() + eval_data.index(train_x.shape()[0]) * ds.features,
                        ds.features, xp + i * ds.features);
        Tensor z = trainer.model.encode(xb, ws);
        LatentBatch lb = channel(z, cfg.sigma, eval_noise);
        Tensor xhat({cfg.batch_size, ds.features});
        trainer.model.decoder.forward_raw(lb.z_noisy.ptr(), cfg.batch_size, xhat.mut(), ws);
        double se = 0;
        for (int64_t i = 0; i < xhat.numel(); ++i) {
            const double d = static_cast<double>(xhat.at(i)) - xb.at(i);
            se += d * d;
        }
        mse_acc += se / static_cast<double>(xhat.numel());
        InfoEstimate est = trainer.measure_information(z);
        si_acc += est.sigma_i;
        eep_acc += est.eep;
    }
    res.final_mse = mse_acc / static_cast<double>(cfg.eval_batches);
    res.final_sigma_i = si_acc / static_cast<double>(cfg.eval_batches);
    res.final_eep = eep_acc / static_cast<double>(cfg.eval_batches);

    res.metrics = evaluate_all(trainer.model, ds, stats, cfg.protocol,
                               derive_seed(cfg.seed, "metrics"));
    res.diagnostics = trainer.diagnostics();
    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!cfg.out_dir.empty()) {
        exp_detail::run_log_table(cfg, res.log).write(cfg.out_dir + "/train_log.csv");
        exp_detail::write_metrics_files(cfg.out_dir, cfg, res);
        std::ofstream timing(cfg.out_dir + "/timings.txt");
        timing << "wall_seconds=" << res.wall_seconds << "\n";
    }
    return res;
}

// One sweep cell result; failures are recorded, not fatal.
struct SweepRecord {
    ExperimentConfig cfg;
    bool failed = false;
    std::string error;
    double final_mse = 0, final_sigma_i = 0, mig = 0, factor_score = 0, sap = 0, dci = 0;
    double drift = 0;
    double wall_seconds = 0;
};

inline CsvTable sweep_table(const std::vector<SweepRecord>& records) {
    CsvTable t;
    if (records.empty()) return t;
    const KvPairs kv0 = records.front().cfg.to_kv();
    for (const auto& [k, v] : kv0) t.header.push_back(k);
    t.header.insert(t.header.end(), {"status", "final_mse", "final_sigma_i", "log_sigma_i", "mig",
                                     "factor_score", "sap", "dci", "drift"});
    for (const auto& r : records) {
        std::vector<std::string> row;
        for (const auto& [k, v] : r.cfg.to_kv()) row.push_back(v);
        row.push_back(r.failed ? "failed" : "ok");
        if (r.failed) {
            for (int i = 0; i < 8; ++i) row.push_back("");
        } else {
            row.push_back(fmt_num(r.final_mse));
            row.push_back(fmt_num(r.final_sigma_i));
            row.push_back(r.final_sigma_i > 0 ? fmt_num(std::log(r.final_sigma_i)) : "");
            row.push_back(fmt_num(r.mig));
            row.push_back(fmt_num(r.factor_score));
            row.push_back(fmt_num(r.sap));
            row.push_back(fmt_num(r.dci));
            row.push_back(fmt_num(r.drift));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

// Grid sweep over lambda x sigma x seed. Runs execute concurrently up to
// `workers`; each run owns its model, RNG streams and output directory, and
// the result tables are assembled in grid order after the join.
inline std::vector<SweepRecord> run_sweep(const ExperimentConfig& base,
                                          const std::vector<float>& lambdas,
                                          const std::vector<float>& sigmas,
                                          const std::vector<uint64_t>& seeds,
                                          const FactorDataset& ds, const std::string& out_dir) {
    if (lambdas.empty() || sigmas.empty() || seeds.empty())
        throw ContractError("sweep: empty grid");
    std::vector<ExperimentConfig> cfgs;
    for (float lam : lambdas)
        for (float sig : sigmas)
            for (uint64_t seed : seeds) {
                ExperimentConfig c = base;
                c.lambda = lam;
                c.sigma = sig;
                c.seed = seed;
                c.workers = 1;
                c.disc_workers = base.workers > 1 ? 1 : base.disc_workers;
                if (!out_dir.empty()) {
                    std::ostringstream dir;
                    dir << out_dir << "/run_lam" << fmt_num(lam) << "_sig" << fmt_num(sig)
                        << "_seed" << seed;
                    c.out_dir = dir.str();
                }
                cfgs.push_back(std::move(c));
            }

    std::vector<SweepRecord> records(cfgs.size());
    parallel_for(static_cast<int>(cfgs.size()), std::max(1, base.workers), [&](int i) {
        SweepRecord rec;
        rec.cfg = cfgs[static_cast<size_t>(i)].finalized();
        try {
            RunResult r = run_training(cfgs[static_cast<size_t>(i)], ds);
            rec.final_mse = r.final_mse;
            rec.final_sigma_i = r.final_sigma_i;
            rec.mig = r.metrics.mig;
            rec.factor_score = r.metrics.factor_score;
            rec.sap = r.metrics.sap;
            rec.dci = r.metrics.dci;
            rec.drift = r.drift_stat;
            rec.wall_seconds = r.wall_seconds;
        } catch (const NumericFault& e) {
            rec.failed = true;
            rec.error = e.what();
        }
        records[static_cast<size_t>(i)] = std::move(rec);
    });

    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        sweep_table(records).write(out_dir + "/sweep.csv");

        // per-(lambda, sigma) mean/std summary over seeds
        CsvTable sum;
        sum.header = {"lambda", "sigma",      "runs",     "mig_mean", "mig_std", "fs_mean",
                      "fs_std",  "sap_mean",  "sap_std",  "dci_mean", "dci_std", "mse_mean",
                      "mse_std", "sigma_i_mean", "sigma_i_std"};
        for (float lam : lambdas)
            for (float sig : sigmas) {
                std::vector<const SweepRecord*> cell;
                for (const auto& r : records)
                    if (!r.failed && r.cfg.lambda == lam && r.cfg.sigma == sig)
                        cell.push_back(&r);
                if (cell.empty()) continue;
                auto stat = [&](auto get) {
                    double mean = 0;
                    for (auto* r : cell) mean += get(*r);
                    mean /= static_cast<double>(cell.size());
                    double var = 0;
                    for (auto* r : cell) var += (get(*r) - mean) * (get(*r) - mean);
                    return std::pair<double, double>(
                        mean, std::sqrt(var / static_cast<double>(cell.size())));
                };
                auto [mm, ms] = stat([](const SweepRecord& r) { return r.mig; });
                auto [fm, fs] = stat([](const SweepRecord& r) { return r.factor_score; });
                auto [sm, ss] = stat([](const SweepRecord& r) { return r.sap; });
                auto [dm, dsd] = stat([](const SweepRecord& r) { return r.dci; });
                auto [em, es] = stat([](const SweepRecord& r) { return r.final_mse; });
                auto [im, is] = stat([](const SweepRecord& r) { return r.final_sigma_i; });
                sum.rows.push_back({fmt_num(lam), fmt_num(sig), std::to_string(cell.size()),
                                    fmt_num(mm), fmt_num(ms), fmt_num(fm), fmt_num(fs),
                                    fmt_num(sm), fmt_num(ss), fmt_num(dm), fmt_num(dsd),
                                    fmt_num(em), fmt_num(es), fmt_num(im), fmt_num(is)});
            }
        sum.write(out_dir + "/summary.csv");

        std::ofstream timing(out_dir + "/timings.txt");
        for (size_t i = 0; i < records.size(); ++i)
            timing << "run" << i << "_wall_seconds=" << records[i].wall_seconds << "\n";
    }
    return records;
}

struct CorrelateResult {
    bool defined = false;
    double r = 0.0;
    int64_t used = 0;
    int64_t excluded_nonpositive = 0;
};

// Pearson r between log(final sigma-i) and MIG over sweep records. Records
// with non-positive sigma-i are excluded with a note; fewer than 3 usable
// records is a contract error; zero variance gives an explicit undefined
// result instead of NaN.
inline CorrelateResult correlate_records(const std::vector<SweepRecord>& records,
                                         CsvTable* scatter = nullptr) {
    std::vector<double> x, y;
    CorrelateResult out;
    for (const auto& r : records) {
        if (r.failed) continue;
        if (r.final_sigma_i <= 0.0) {
            ++out.excluded_nonpositive;
            continue;
        }
        x.push_back(std::log(r.final_sigma_i));
        y.push_back(r.mig);
    }
    out.used = static_cast<int64_t>(x.size());
    if (out.used < 3)
        throw ContractError("correlate: need at least 3 records with positive sigma-i, have " +
                            std::to_string(out.used));
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (scatter) {
        scatter->header = {"log_sigma_i", "mig"};
        for (size_t i = 0; i < x.size(); ++i)
            scatter->rows.push_back({fmt_num(x[i]), fmt_num(y[i])});
    }
    if (sxx <= 0.0 || syy <= 0.0) return out;  // undefined, not NaN
    out.defined = true;
    out.r = sxy / std::sqrt(sxx * syy);
    return out;
}

struct AblateRecord {
    uint64_t seed = 0;
    std::string mode;
    double mig = 0, drift = 0, final_sigma_i = 0, final_mse = 0;
};

// Paired runs per seed: identical everything except the loss mode.
inline std::vector<AblateRecord> run_ablation(const ExperimentConfig& base,
                                              const std::vector<uint64_t>& seeds,
                                              const FactorDataset& ds,
                                              const std::string& out_dir) {
    std::vector<AblateRecord> records;
    for (uint64_t seed : seeds) {
        for (const std::string mode : {"eep", "direct_sigma_i"}) {
            ExperimentConfig c = base;
            c.seed = seed;
            c.loss_mode = mode;
            if (!out_dir.empty())
                c.out_dir = out_dir + "/run_" + mode + "_seed" + std::to_string(seed);
            RunResult r = run_training(c, ds);
            records.push_back({seed, mode, r.metrics.mig, r.drift_stat, r.final_sigma_i,
                               r.final_mse});
        }
    }
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        CsvTable t;
        t.header = {"seed", "loss_mode", "mig", "drift", "final_sigma_i", "final_mse"};
        for (const auto& r : records)
            t.rows.push_back({std::to_string(r.seed), r.mode, fmt_num(r.mig), fmt_num(r.drift),
                              fmt_num(r.final_sigma_i), fmt_num(r.final_mse)});
        t.write(out_dir + "/ablate.csv");
    }
    return records;
}

// Density estimation demonstration: KL(true || estimated) traces as training
// progresses, for the joint box estimator or the conditional estimator on
// the Gaussian chain.
struct DensityDemoConfig {
    std::string mode = "joint";  // joint | conditional
    std::vector<int64_t> dims{2, 4, 8, 16};
    int64_t steps = -1;          // -1: 20000 joint, 40000 conditional
    int64_t batch = 256;
    int64_t hidden = -1;         // -1: 512 joint, 256 conditional
    int64_t eval_every = 200;
    int64_t eval_samples = 4096;
    float lr = 2e-4f;
    float beta1 = 0.5f, beta2 = 0.9f;
    uint64_t seed = 0;
    std::string out_dir;
};

struct DensityDemoResult {
    int64_t dim = 0;
    double final_kl = 0.0;
    std::vector<std::pair<int64_t, double>> trace;
};

inline std::vector<DensityDemoResult> run_density_demo(const DensityDemoConfig& raw) {
    DensityDemoConfig cfg = raw;
    if (cfg.mode != "joint" && cfg.mode != "conditional")
        throw ConfigError("density demo mode must be joint or conditional");
    if (cfg.dims.empty()) throw ContractError("density demo: empty dimension list");
    const bool joint = cfg.mode == "joint";
    if (cfg.steps < 0) cfg.steps = joint ? 20000 : 40000;
    if (cfg.hidden < 0) cfg.hidden = joint ? 512 : 256;
    if (!cfg.out_dir.empty()) ensure_dir(cfg.out_dir);

    std::vector<DensityDemoResult> results;
    for (int64_t m : cfg.dims) {
        DensityDemoResult res;
        res.dim = m;
        RngStream init(derive_seed(cfg.seed, "demo_init", static_cast<uint64_t>(m)));
        RngStream data(derive_seed(cfg.seed, "demo_data", static_cast<uint64_t>(m)));
        RngStream fake(derive_seed(cfg.seed, "demo_fake", static_cast<uint64_t>(m)));
        RngStream eval(derive_seed(cfg.seed, "demo_eval", static_cast<uint64_t>(m)));
        Workspace ws;
        const AdamConfig opt_cfg{cfg.lr, cfg.beta1, cfg.beta2, 1e-8f};

        auto eval_kl = [&](auto&& density_fn) {
            Tensor s = joint ? [&] {
                Tensor t({cfg.eval_samples, m});
                eval.fill_normal(t.mut(), t.numel());
                return t;
            }()
                             : gaussian_chain_sample(m, cfg.eval_samples, eval);
            std::vector<double> lp(static_cast<size_t>(cfg.eval_samples));
            for (int64_t i = 0; i < cfg.eval_samples; ++i)
                lp[static_cast<size_t>(i)] = joint
                                                 ? isotropic_gaussian_logpdf(s.ptr() + i * m, m)
                                                 : chain_conditional_logpdf(s.ptr() + i * m, m);
            return mc_kl_terms(lp, density_fn(s));
        };

        if (joint) {
            JointDensityEstimator est = JointDensityEstimator::build(m, init, {}, cfg.hidden);
            MlpOptimizer opt(est.net, opt_cfg);
            for (int64_t step = 1; step <= cfg.steps; ++step) {
                Tensor real({cfg.batch, m});
                data.fill_normal(real.mut(), real.numel());
                est.train_step(opt, real, fake);
                if (step % cfg.eval_every == 0 || step == cfg.steps) {
                    const double kl =
                        eval_kl([&](const Tensor& s) { return est.density_rows(s, ws); });
                    res.trace.emplace_back(step, kl);
                }
            }
        } else {
            RngStream disc_init(derive_seed(cfg.seed, "demo_disc", static_cast<uint64_t>(m)));
            auto disc = ConditionalDiscriminator::build(m - 1, m, disc_init, {}, cfg.hidden);
            MlpOptimizer opt(disc.net, opt_cfg);
            for (int64_t step = 1; step <= cfg.steps; ++step) {
                Tensor z = gaussian_chain_sample(m, cfg.batch, data);
                conditional_disc_step(disc, opt, z, fake);
                if (step % cfg.eval_every == 0 || step == cfg.steps) {
                    const double kl = eval_kl(
                        [&](const Tensor& s) { return conditional_density_rows(disc, s, ws); });
                    res.trace.emplace_back(step, kl);
                }
            }
        }
        res.final_kl = res.trace.empty() ? 0.0 : res.trace.back().second;
        if (!cfg.out_dir.empty()) {
            CsvTable t;
            t.header = {"mode", "m", "step", "kl"};
            for (const auto& [step, kl] : res.trace)
                t.rows.push_back({cfg.mode, std::to_string(m), std::to_string(step), fmt_num(kl)});
            t.write(cfg.out_dir + "/kl_trace_" + cfg.mode + "_m" + std::to_string(m) + ".csv");
        }
        results.push_back(std::move(res));
    }
    return results;
}

}  // namespace gcae
