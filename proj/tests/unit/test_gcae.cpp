#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gcae/model.hpp"

using namespace gcae;

namespace {

void zero_net(Mlp& net) {
    for (auto& w : net.weights) std::fill_n(w.mut(), w.numel(), 0.0f);
    for (auto& b : net.biases) std::fill_n(b.mut(), b.numel(), 0.0f);
}

// Correlated standard-normal pair with the given rho.
Tensor correlated_pair_batch(int64_t n, float rho, RngStream& rng) {
    Tensor z({n, 2});
    float* p = z.mut();
    const float w = std::sqrt(1.0f - rho * rho);
    for (int64_t i = 0; i < n; ++i) {
        const float a = rng.normal();
        const float b = rng.normal();
        p[i * 2] = a;
        p[i * 2 + 1] = rho * a + w * b;
    }
    return z;
}

DiscriminatorBank trained_bank(std::function<Tensor(RngStream&)> sample, int64_t m, int steps,
                               uint64_t seed) {
    DiscriminatorBank bank = DiscriminatorBank::build(m, seed);
    std::vector<MlpOptimizer> opts;
    std::vector<RngStream> fakes;
    for (int64_t i = 0; i < m; ++i) {
        opts.emplace_back(bank.discs[static_cast<size_t>(i)].net,
                          AdamConfig{2e-4f, 0.5f, 0.9f, 1e-8f});
        fakes.emplace_back(derive_seed(seed, "fake", static_cast<uint64_t>(i)));
    }
    RngStream data(derive_seed(seed, "data"));
    for (int s = 0; s < steps; ++s) {
        Tensor z = sample(data);
        for (int64_t i = 0; i < m; ++i)
            conditional_disc_step(bank.discs[static_cast<size_t>(i)],
                                  opts[static_cast<size_t>(i)], z, fakes[static_cast<size_t>(i)]);
    }
    return bank;
}

std::vector<RngStream> u_streams(int64_t m, uint64_t seed) {
    std::vector<RngStream> out;
    for (int64_t i = 0; i < m; ++i)
        out.emplace_back(derive_seed(seed, "u", static_cast<uint64_t>(i)));
    return out;
}

}  // namespace

TEST_CASE("encoder output is bounded by the scaled softsign") {
    GcaeModel model = GcaeModel::build(12, 4, 0.2f, LossMode::Eep, 99, {32, 16});
    RngStream rng(5);
    Tensor x({1000, 12});
    Workspace ws;
    for (int rep = 0; rep < 10; ++rep) {
        rng.fill_normal(x.mut(), x.numel(), 0.0f, 3.0f);
        Tensor z = model.encode(x, ws);
        for (int64_t i = 0; i < z.numel(); ++i) {
            CHECK(z.at(i) > -3.0f);
            CHECK(z.at(i) < 3.0f);
        }
    }
}

TEST_CASE("scaled softsign hits the origin and saturates toward 3") {
    Graph g;
    int x = g.leaf(Tensor({3}, {0.0f, 1e6f, -1e6f}), false);
    Tensor out = g.val(g.scaled_softsign(x));
    CHECK(out.at(0) == 0.0f);
    CHECK(out.at(1) == Catch::Approx(3.0).epsilon(1e-4));
    CHECK(out.at(2) == Catch::Approx(-3.0).epsilon(1e-4));
}

TEST_CASE("channel adds exactly the stored draw") {
    RngStream rng(8);
    Tensor z({64, 4});
    rng.fill_normal(z.mut(), z.numel());
    SECTION("sigma = 0 is the identity") {
        LatentBatch lb = channel(z, 0.0f, rng);
        CHECK(lb.z_noisy.vec() == lb.z_clean.vec());
    }
    SECTION("noise std matches sigma") {
        RngStream noise_rng(9);
        double s2 = 0;
        int64_t count = 0;
        for (int rep = 0; rep < 400; ++rep) {
            LatentBatch lb = channel(z, 0.2f, noise_rng);
            for (int64_t i = 0; i < lb.noise.numel(); ++i) {
                const double d = static_cast<double>(lb.z_noisy.at(i)) - lb.z_clean.at(i);
                s2 += d * d;
                ++count;
            }
        }
        CHECK(std::sqrt(s2 / static_cast<double>(count)) == Catch::Approx(0.2).margin(0.003));
    }
    SECTION("noisy minus clean is exactly the stored draw") {
        LatentBatch lb = channel(z, 0.3f, rng);
        for (int64_t i = 0; i < lb.noise.numel(); ++i)
            CHECK(lb.z_noisy.at(i) - lb.z_clean.at(i) == lb.noise.at(i));
    }
    SECTION("negative sigma is a contract error") {
        CHECK_THROWS_AS(channel(z, -0.1f, rng), ContractError);
    }
}

TEST_CASE("info functional is exactly zero for an uninformative discriminator") {
    RngStream rng(3);
    auto d = ConditionalDiscriminator::build(0, 2, rng);
    zero_net(d.net);  // logit 0 everywhere -> D = 0.5 -> p == pbar
    RngStream u(4);
    Tensor z({32, 2});
    rng.fill_normal(z.mut(), z.numel());
    auto fg = build_info_functional(d, z, 50, u, false);
    CHECK(fg.info_value == 0.0);
    CHECK(fg.marginal_entropy == Catch::Approx(std::log(8.0)));  // uniform pbar
}

TEST_CASE("correlated latents carry about -0.5*ln(1-rho^2) nats") {
    const float rho = 0.9f;
    auto bank = trained_bank(
        [&](RngStream& r) { return correlated_pair_batch(256, rho, r); }, 2, 3000, 1234);
    auto us = u_streams(2, 55);
    RngStream data(77);
    double acc = 0;
    const int evals = 16;
    for (int e = 0; e < evals; ++e) {
        Tensor z = correlated_pair_batch(256, rho, data);
        InfoEstimate est = estimate_information(bank, z, 50, us);
        acc += est.per_latent_info[0];
    }
    const double info = acc / evals;
    CHECK(info == Catch::Approx(0.8304).margin(0.15));
}

TEST_CASE("independent latents carry almost no information") {
    auto bank = trained_bank(
        [&](RngStream& r) {
            Tensor z({256, 2});
            r.fill_normal(z.mut(), z.numel());
            return z;
        },
        2, 3000, 4321);
    auto us = u_streams(2, 56);
    RngStream data(78);
    double acc0 = 0, acc1 = 0;
    const int evals = 16;
    for (int e = 0; e < evals; ++e) {
        Tensor z({256, 2});
        data.fill_normal(z.mut(), z.numel());
        InfoEstimate est = estimate_information(bank, z, 50, us);
        acc0 += est.per_latent_info[0];
        acc1 += est.per_latent_info[1];
    }
    CHECK(std::fabs(acc0 / evals) < 0.05);
    CHECK(std::fabs(acc1 / evals) < 0.05);
}

TEST_CASE("marginal entropy and entropy power track a known gaussian") {
    // z_0 ~ N(0, 0.5^2) with an independent N(0,1) nuisance coordinate.
    const float s = 0.5f;
    auto bank = trained_bank(
        [&](RngStream& r) {
            Tensor z({256, 2});
            float* p = z.mut();
            for (int i = 0; i < 256; ++i) {
                p[i * 2] = r.normal(0.0f, s);
                p[i * 2 + 1] = r.normal();
            }
            return z;
        },
        2, 3000, 777);
    auto us = u_streams(2, 57);
    RngStream data(79);
    double h = 0, ep = 0;
    const int evals = 16;
    for (int e = 0; e < evals; ++e) {
        Tensor z({256, 2});
        float* p = z.mut();
        for (int i = 0; i < 256; ++i) {
            p[i * 2] = data.normal(0.0f, s);
            p[i * 2 + 1] = data.normal();
        }
        InfoEstimate est = estimate_information(bank, z, 256, us);
        h += est.per_latent_marginal_entropy[0];
        ep += est.entropy_power[0];
    }
    CHECK(h / evals == Catch::Approx(0.7258).margin(0.15));  // 0.5*ln(2*pi*e*0.25)
    CHECK(ep / evals == Catch::Approx(0.25).epsilon(0.35));  // entropy power ~= variance
}

TEST_CASE("eep loss structure") {
    SECTION("zero informations give zero eep and zero sigma-i") {
        InfoEstimate est;
        est.per_latent_info = {0.0, 0.0};
        CHECK(est.sigma_i == 0.0);
        CHECK(est.eep == 0.0);
    }
    SECTION("unit entropy power passes the information through") {
        // h = ln(sqrt(2*pi*e)) makes the entropy power exactly 1
        const double h = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
        CHECK(entropy_power(h) == Catch::Approx(1.0));
    }
    SECTION("entropy exponent is clamped with a diagnostic") {
        Diagnostics diag;
        const double big = entropy_power(50.0, &diag);
        CHECK(diag.entropy_exp_clamps == 1);
        CHECK(big == Catch::Approx(std::exp(20.0) / (2.0 * std::numbers::pi * std::numbers::e)));
    }
}

TEST_CASE("m=1 degenerates to a plain noisy autoencoder") {
    GcaeModel model = GcaeModel::build(8, 1, 0.2f, LossMode::Eep, 5, {16, 8});
    DiscriminatorBank bank = DiscriminatorBank::build(1, 5, {}, 16);
    TrainHyper hyper;
    hyper.lambda = 0.3f;
    hyper.batch_size = 16;
    hyper.k = 1;
    GcaeTrainer trainer(std::move(model), std::move(bank), hyper, 5,
                        [&](int64_t b, RngStream& r) {
                            Tensor x({b, 8});
                            r.fill_normal(x.mut(), x.numel());
                            return x;
                        });
    for (int i = 0; i < 3; ++i) {
        StepReport rep = trainer.train_step();
        CHECK(rep.info_valid);
        CHECK(rep.sigma_i == 0.0);
        CHECK(rep.eep == 0.0);
        CHECK(std::isfinite(rep.mse));
    }
}

TEST_CASE("gradient routing: discriminators blind to conditioning give zero regularizer gradient") {
    // Each discriminator reads only its own candidate slot: conditioning
    // columns have zero first-layer weight, so the functional cannot pull on
    // the latents. The encoder must then receive a zero regularizer gradient.
    const int64_t m = 3;
    RngStream rng(64);
    DiscriminatorBank bank = DiscriminatorBank::build(m, 64, {}, 8);
    for (int64_t i = 0; i < m; ++i) {
        Mlp& net = bank.discs[static_cast<size_t>(i)].net;
        float* w = net.weights[0].mut();
        const int64_t rows = net.weights[0].shape()[0], cols = net.weights[0].shape()[1];
        for (int64_t r = 0; r < rows; ++r)
            if (r != i)
                for (int64_t c = 0; c < cols; ++c) w[r * cols + c] = 0.0f;
    }
    Tensor z({16, m});
    rng.fill_normal(z.mut(), z.numel());
    RngStream u(65);
    for (int64_t i = 0; i < m; ++i) {
        auto fg = build_info_functional(bank.discs[static_cast<size_t>(i)], z, 32, u, true);
        fg.graph.backward_seeded({{fg.info_node, Tensor::scalar(1.0f)}});
        Tensor dz = fg.graph.grad(fg.z_leaf);
        for (int64_t t = 0; t < dz.numel(); ++t) CHECK(dz.at(t) == 0.0f);
    }
}

TEST_CASE("training step report carries finite values and latent stds") {
    GcaeModel model = GcaeModel::build(8, 3, 0.2f, LossMode::Eep, 15, {16, 8});
    DiscriminatorBank bank = DiscriminatorBank::build(3, 15, {}, 16);
    TrainHyper hyper;
    hyper.lambda = 0.1f;
    hyper.batch_size = 16;
    hyper.k = 2;
    hyper.n_uniform = 16;
    GcaeTrainer trainer(std::move(model), std::move(bank), hyper, 15,
                        [&](int64_t b, RngStream& r) {
                            Tensor x({b, 8});
                            r.fill_normal(x.mut(), x.numel());
                            return x;
                        });
    trainer.warmup(10);
    StepReport rep = trainer.train_step();
    CHECK(rep.info_valid);
    CHECK(std::isfinite(rep.mse));
    CHECK(std::isfinite(rep.sigma_i));
    CHECK(std::isfinite(rep.eep));
    REQUIRE(rep.latent_std.size() == 3);
    for (double s : rep.latent_std) CHECK(s >= 0.0);
}

TEST_CASE("warmup with zero batches leaves the bank untouched") {
    DiscriminatorBank bank = DiscriminatorBank::build(2, 20, {}, 8);
    Tensor before = bank.discs[0].net.weights[0];
    GcaeModel model = GcaeModel::build(4, 2, 0.1f, LossMode::Eep, 20, {8});
    TrainHyper hyper;
    hyper.batch_size = 8;
    GcaeTrainer trainer(std::move(model), std::move(bank), hyper, 20,
                        [&](int64_t b, RngStream& r) {
                            Tensor x({b, 4});
                            r.fill_normal(x.mut(), x.numel());
                            return x;
                        });
    trainer.warmup(0);
    CHECK(trainer.bank.discs[0].net.weights[0].vec() == before.vec());
}

TEST_CASE("trainer determinism: same seed, same parameters") {
    auto run = [](uint64_t seed) {
        GcaeModel model = GcaeModel::build(6, 2, 0.2f, LossMode::Eep, seed, {12});
        DiscriminatorBank bank = DiscriminatorBank::build(2, seed, {}, 8);
        TrainHyper hyper;
        hyper.lambda = 0.2f;
        hyper.batch_size = 8;
        hyper.k = 2;
        hyper.n_uniform = 8;
        hyper.workers = 2;  // concurrency must not perturb results
        GcaeTrainer trainer(std::move(model), std::move(bank), hyper, seed,
                            [&](int64_t b, RngStream& r) {
                                Tensor x({b, 6});
                                r.fill_normal(x.mut(), x.numel());
                                return x;
                            });
        trainer.warmup(5);
        for (int i = 0; i < 5; ++i) trainer.train_step();
        return trainer.model.encoder.weights[0].vec();
    };
    CHECK(run(7) == run(7));
}
