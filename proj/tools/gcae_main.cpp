// gcae: experiment driver for the Gaussian channel autoencoder.
//
// Subcommands: train, sweep, eval, correlate, density-demo, ablate,
// make-dsprites. Exit codes: 0 success, 2 configuration/contract error,
// 3 numeric fault during training, 4 I/O error.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "gcae/experiment.hpp"
#include "gcae/runtime.hpp"

using namespace gcae;

namespace {

std::vector<float> parse_float_list(const std::string& s) {
    std::vector<float> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stof(tok));
    return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
    std::vector<uint64_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
    return out;
}

std::vector<int64_t> parse_int_list(const std::string& s) {
    std::vector<int64_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoll(tok));
    return out;
}

// Options shared by the training-style subcommands. Spellings double as the
// keys of config files and config echoes.
void add_config_options(CLI::App* cmd, ExperimentConfig& cfg) {
    cmd->set_config("--config")->description("config file (key=value)");
    cmd->add_option("--dataset", cfg.dataset, "waveforms | dsprites");
    cmd->add_option("--m", cfg.m, "latent dimension");
    cmd->add_option("--sigma", cfg.sigma, "channel noise std");
    cmd->add_option("--lambda", cfg.lambda, "regularization strength");
    cmd->add_option("--loss-mode,--loss_mode", cfg.loss_mode, "eep | direct_sigma_i | none");
    cmd->add_option("--batch,--batch_size", cfg.batch_size, "batch size");
    cmd->add_option("--iters,--iterations", cfg.iterations, "training iterations");
    cmd->add_option("--k", cfg.k, "discriminator updates per autoencoder update");
    cmd->add_option("--ae-lr,--ae_lr", cfg.ae_lr, "autoencoder learning rate");
    cmd->add_option("--disc-lr,--disc_lr", cfg.disc_lr, "discriminator learning rate");
    cmd->add_option("--warmup,--warmup_batches", cfg.warmup_batches,
                    "discriminator warmup batches");
    cmd->add_option("--n-uniform,--n_uniform", cfg.n_uniform,
                    "uniform samples per information estimate");
    cmd->add_option("--seed", cfg.seed, "run seed");
    cmd->add_option("--subsample,--dsprites_subsample", cfg.dsprites_subsample,
                    "dsprites training subsample (0 = all)");
    cmd->add_option("--log-every,--log_every", cfg.log_every, "log cadence");
    cmd->add_option("--checkpoint-every,--checkpoint_every", cfg.checkpoint_every,
                    "checkpoint cadence");
    cmd->add_option("--eval-batches,--eval_batches", cfg.eval_batches,
                    "batches averaged for final losses");
    cmd->add_option("--mig-bins,--mig_bins", cfg.protocol.mig_bins, "histogram bins for MIG");
    cmd->add_option("--mig-samples,--mig_samples", cfg.protocol.mig_samples,
                    "samples scored by MIG/SAP/DCI (-1 = all)");
    cmd->add_option("--data", cfg.data_dir, "dataset directory (default $GCAE_DATA_DIR)");
    cmd->add_option("--out", cfg.out_dir, "output directory");
    cmd->add_option("--workers", cfg.workers, "concurrent sweep runs");
}

void resolve_data_dir(ExperimentConfig& cfg) {
    if (cfg.data_dir.empty())
        if (const char* env = std::getenv("GCAE_DATA_DIR")) cfg.data_dir = env;
}

int cmd_train(ExperimentConfig& cfg) {
    resolve_data_dir(cfg);
    FactorDataset ds = load_dataset(cfg.finalized());
    RunResult res = run_training(cfg, ds, /*quiet=*/false);
    std::cout << "final_mse=" << fmt_num(res.final_mse)
              << " final_sigma_i=" << fmt_num(res.final_sigma_i)
              << " mig=" << fmt_num(res.metrics.mig)
              << " factor_score=" << fmt_num(res.metrics.factor_score)
              << " sap=" << fmt_num(res.metrics.sap) << " dci=" << fmt_num(res.metrics.dci)
              << "\n";
    if (!cfg.out_dir.empty()) std::cout << "outputs in " << cfg.out_dir << "\n";
    return 0;
}

int cmd_sweep(ExperimentConfig& cfg, const std::string& lambdas, const std::string& sigmas,
              const std::string& seeds) {
    resolve_data_dir(cfg);
    FactorDataset ds = load_dataset(cfg.finalized());
    auto records = run_sweep(cfg, parse_float_list(lambdas), parse_float_list(sigmas),
                             parse_seed_list(seeds), ds, cfg.out_dir);
    int64_t failed = 0;
    for (const auto& r : records) failed += r.failed;
    std::cout << records.size() << " runs, " << failed << " failed";
    if (!cfg.out_dir.empty()) std::cout << "; tables in " << cfg.out_dir;
    std::cout << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, ExperimentConfig& overrides, bool dataset_given,
             bool seed_given) {
    ExperimentConfig cfg =
        ExperimentConfig::from_kv(kv_from_text(load_checkpoint_config(checkpoint)));
    if (dataset_given && overrides.dataset != cfg.dataset)
        throw ConfigError("checkpoint was trained on '" + cfg.dataset +
                          "' but --dataset requests '" + overrides.dataset + "'");
    if (seed_given) cfg.seed = overrides.seed;
    cfg.data_dir = overrides.data_dir;
    resolve_data_dir(cfg);
    cfg = cfg.finalized();

    FactorDataset ds = load_dataset(cfg);
    TrainerBundle bundle = build_trainer(cfg, ds);
    load_checkpoint_into(checkpoint, *bundle.trainer);
    MetricReport rep = evaluate_all(bundle.trainer->model, ds, bundle.stats, cfg.protocol,
                                    derive_seed(cfg.seed, "metrics"));
    std::cout << "mig=" << fmt_num(rep.mig) << " factor_score=" << fmt_num(rep.factor_score)
              << " sap=" << fmt_num(rep.sap) << " dci=" << fmt_num(rep.dci) << "\n";
    if (!overrides.out_dir.empty()) {
        ensure_dir(overrides.out_dir);
        RunResult res;
        res.cfg = cfg;
        res.metrics = rep;
        exp_detail::write_metrics_files(overrides.out_dir, cfg, res);
        std::cout << "report in " << overrides.out_dir << "\n";
    }
    return 0;
}

int cmd_correlate(const std::vector<std::string>& inputs, const std::string& out_dir) {
    std::vector<SweepRecord> records;
    for (const auto& path : inputs) {
        CsvTable t = CsvTable::read(path);
        const int c_status = t.column("status");
        const int c_sigma_i = t.column("final_sigma_i");
        const int c_mig = t.column("mig");
        for (const auto& row : t.rows) {
            SweepRecord r;
            r.failed = row[static_cast<size_t>(c_status)] != "ok";
            if (!r.failed) {
                r.final_sigma_i = std::stod(row[static_cast<size_t>(c_sigma_i)]);
                r.mig = std::stod(row[static_cast<size_t>(c_mig)]);
            }
            records.push_back(std::move(r));
        }
    }
    CsvTable scatter;
    CorrelateResult res = correlate_records(records, &scatter);
    if (res.defined)
        std::cout << "pearson_r=" << fmt_num(res.r) << " used=" << res.used
                  << " excluded_nonpositive=" << res.excluded_nonpositive << "\n";
    else
        std::cout << "pearson_r=undefined used=" << res.used
                  << " excluded_nonpositive=" << res.excluded_nonpositive << "\n";
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        scatter.write(out_dir + "/correlate.csv");
        std::ofstream os(out_dir + "/correlate.txt");
        os << (res.defined ? "pearson_r=" + fmt_num(res.r) : std::string("pearson_r=undefined"))
           << "\nused=" << res.used << "\nexcluded_nonpositive=" << res.excluded_nonpositive
           << "\n";
    }
    return 0;
}

int cmd_density_demo(DensityDemoConfig& cfg, const std::string& m_list) {
    cfg.dims = parse_int_list(m_list);
    auto results = run_density_demo(cfg);
    for (const auto& r : results)
        std::cout << "mode=" << cfg.mode << " m=" << r.dim << " final_kl=" << fmt_num(r.final_kl)
                  << "\n";
    return 0;
}

int cmd_ablate(ExperimentConfig& cfg, const std::string& seeds) {
    resolve_data_dir(cfg);
    FactorDataset ds = load_dataset(cfg.finalized());
    auto records = run_ablation(cfg, parse_seed_list(seeds), ds, cfg.out_dir);
    double mig_eep = 0, mig_dir = 0, drift_eep = 0, drift_dir = 0;
    int64_t n = 0;
    for (const auto& r : records) {
        if (r.mode == "eep") {
            mig_eep += r.mig;
            drift_eep += r.drift;
            ++n;
        } else {
            mig_dir += r.mig;
            drift_dir += r.drift;
        }
    }
    std::cout << "eep: mean_mig=" << fmt_num(mig_eep / static_cast<double>(n))
              << " mean_drift=" << fmt_num(drift_eep / static_cast<double>(n)) << "\n"
              << "direct_sigma_i: mean_mig=" << fmt_num(mig_dir / static_cast<double>(n))
              << " mean_drift=" << fmt_num(drift_dir / static_cast<double>(n)) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    ensure_blas_kernel(argv);
    CLI::App app{"Gaussian channel autoencoder experiments"};
    app.require_subcommand(1);

    ExperimentConfig train_cfg;
    auto* train = app.add_subcommand("train", "train one model");
    add_config_options(train, train_cfg);

    ExperimentConfig sweep_cfg;
    std::string sweep_lambdas = "0,0.1,0.2,0.5";
    std::string sweep_sigmas = "0.2";
    std::string sweep_seeds = "0,1,2";
    auto* sweep = app.add_subcommand("sweep", "grid of training runs");
    add_config_options(sweep, sweep_cfg);
    sweep->add_option("--lambdas", sweep_lambdas, "comma-separated lambda grid");
    sweep->add_option("--sigmas", sweep_sigmas, "comma-separated sigma grid");
    sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds");

    ExperimentConfig eval_cfg;
    std::string eval_checkpoint;
    auto* eval = app.add_subcommand("eval", "score a checkpoint");
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    auto* eval_dataset_opt =
        eval->add_option("--dataset", eval_cfg.dataset, "expected dataset (validated)");
    auto* eval_seed_opt = eval->add_option("--seed", eval_cfg.seed, "evaluation seed override");
    eval->add_option("--data", eval_cfg.data_dir, "dataset directory");
    eval->add_option("--out", eval_cfg.out_dir, "report directory");

    std::vector<std::string> correlate_inputs;
    std::string correlate_out;
    auto* correlate = app.add_subcommand("correlate", "Pearson r of log sigma-i vs MIG");
    correlate->add_option("--in", correlate_inputs, "sweep.csv files")->required();
    correlate->add_option("--out", correlate_out, "output directory");

    DensityDemoConfig demo_cfg;
    std::string demo_mlist = "2,4,8,16";
    auto* demo = app.add_subcommand("density-demo", "KL traces of the density estimators");
    demo->add_option("--mode", demo_cfg.mode, "joint | conditional");
    demo->add_option("--m-list,--m_list", demo_mlist, "comma-separated dimensions");
    demo->add_option("--steps", demo_cfg.steps, "training steps (-1 = default budget)");
    demo->add_option("--batch", demo_cfg.batch, "batch size");
    demo->add_option("--width", demo_cfg.hidden, "hidden width (-1 = default)");
    demo->add_option("--lr", demo_cfg.lr, "discriminator learning rate");
    demo->add_option("--seed", demo_cfg.seed, "seed");
    demo->add_option("--out", demo_cfg.out_dir, "trace directory");

    ExperimentConfig ablate_cfg;
    std::string ablate_seeds = "0,1,2";
    auto* ablate = app.add_subcommand("ablate", "paired eep vs direct sigma-i runs");
    add_config_options(ablate, ablate_cfg);
    ablate->add_option("--seeds", ablate_seeds, "comma-separated seeds");

    std::string mk_out = "dsprites.npz";
    int64_t mk_count = 73728;
    uint64_t mk_seed = 0;
    auto* mk = app.add_subcommand("make-dsprites", "write a synthetic sprite archive");
    mk->add_option("--out", mk_out, "output file");
    mk->add_option("--count", mk_count, "item count (max 737280)");
    mk->add_option("--seed", mk_seed, "grid subsample seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_cfg);
        if (sweep->parsed()) return cmd_sweep(sweep_cfg, sweep_lambdas, sweep_sigmas, sweep_seeds);
        if (eval->parsed())
            return cmd_eval(eval_checkpoint, eval_cfg, eval_dataset_opt->count() > 0,
                            eval_seed_opt->count() > 0);
        if (correlate->parsed()) return cmd_correlate(correlate_inputs, correlate_out);
        if (demo->parsed()) return cmd_density_demo(demo_cfg, demo_mlist);
        if (ablate->parsed()) return cmd_ablate(ablate_cfg, ablate_seeds);
        if (mk->parsed()) {
            dsprites::synthesize(mk_out, mk_count, mk_seed);
            std::cout << "wrote " << mk_out << " (" << mk_count << " items)\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericFault& e) {
        std::cerr << "numeric fault: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
