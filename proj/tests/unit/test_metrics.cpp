#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gcae/metrics.hpp"

using namespace gcae;

namespace {

// Discrete uniform factor values in [0, card).
std::vector<float> discrete_uniform(int64_t n, int card, RngStream& rng) {
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.index(card));
    return v;
}

FactorMatrix make_factors(const std::vector<std::vector<float>>& cols,
                          const std::vector<FactorKind>& kinds, const std::vector<int>& cards) {
    const int64_t n = static_cast<int64_t>(cols[0].size());
    const int64_t k = static_cast<int64_t>(cols.size());
    FactorMatrix f;
    f.values = Tensor({n, k});
    float* p = f.values.mut();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j) p[i * k + j] = cols[static_cast<size_t>(j)][static_cast<size_t>(i)];
    f.kinds = kinds;
    f.cardinalities = cards;
    return f;
}

Tensor make_codes(const std::vector<std::vector<float>>& cols) {
    const int64_t n = static_cast<int64_t>(cols[0].size());
    const int64_t m = static_cast<int64_t>(cols.size());
    Tensor c({n, m});
    float* p = c.mut();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) p[i * m + j] = cols[static_cast<size_t>(j)][static_cast<size_t>(i)];
    return c;
}

Tensor permute_columns(const Tensor& codes, const std::vector<int64_t>& perm) {
    Tensor out(codes.shape());
    float* p = out.mut();
    const int64_t n = codes.shape()[0], m = codes.shape()[1];
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) p[i * m + j] = codes.at(i, perm[static_cast<size_t>(j)]);
    return out;
}

}  // namespace

TEST_CASE("histogram mi oracle values") {
    SECTION("identical uniform 4-class labels carry ln 4 nats") {
        RngStream rng(1);
        auto a = discrete_uniform(20000, 4, rng);
        CHECK(histogram_mi(a, a, 4, 4) == Catch::Approx(std::log(4.0)).margin(0.01));
    }
    SECTION("independent pairs carry almost nothing (finite-N bias positive)") {
        RngStream rng(2);
        std::vector<float> a(10000), b(10000);
        rng.fill_uniform(a.data(), 10000, 0.0f, 1.0f);
        rng.fill_uniform(b.data(), 10000, 0.0f, 1.0f);
        const double mi = histogram_mi(a, b, 20, 20);
        CHECK(mi >= 0.0);
        CHECK(mi < 0.02);
    }
    SECTION("2x2 joint table [[.4,.1],[.1,.4]] gives ~0.193 nats") {
        RngStream rng(3);
        const int64_t n = 100000;
        std::vector<float> a, b;
        for (int64_t i = 0; i < n; ++i) {
            const float u = rng.uniform(0.0f, 1.0f);
            if (u < 0.4f) { a.push_back(0); b.push_back(0); }
            else if (u < 0.5f) { a.push_back(0); b.push_back(1); }
            else if (u < 0.6f) { a.push_back(1); b.push_back(0); }
            else { a.push_back(1); b.push_back(1); }
        }
        CHECK(histogram_mi(a, b, 2, 2) == Catch::Approx(0.19274).margin(0.01));
    }
    SECTION("constant vector has zero mi, not an error") {
        std::vector<float> a(100, 1.0f), b(100);
        for (size_t i = 0; i < 100; ++i) b[i] = static_cast<float>(i % 5);
        CHECK(histogram_mi(a, b, 10, 5) == 0.0);
    }
}

TEST_CASE("mig oracle") {
    RngStream rng(17);
    const int64_t n = 10000;
    auto f_cat = discrete_uniform(n, 4, rng);
    std::vector<float> f_c1(n), f_c2(n), noise1(n), noise2(n);
    rng.fill_uniform(f_c1.data(), n, 0.0f, 1.0f);
    rng.fill_uniform(f_c2.data(), n, -2.0f, 2.0f);
    rng.fill_normal(noise1.data(), n);
    rng.fill_normal(noise2.data(), n);
    FactorMatrix factors = make_factors({f_cat, f_c1, f_c2},
                                        {FactorKind::Categorical, FactorKind::Continuous,
                                         FactorKind::Continuous},
                                        {4, 0, 0});

    SECTION("perfect codes plus noise latents score near 1") {
        Tensor codes = make_codes({f_cat, f_c1, f_c2, noise1, noise2});
        CHECK(mig(codes, factors, 20) >= 0.95);
    }
    SECTION("codes independent of the factors score near 0") {
        std::vector<float> n3(n), n4(n);
        rng.fill_normal(n3.data(), n);
        rng.fill_normal(n4.data(), n);
        Tensor codes = make_codes({noise1, noise2, n3, n4});
        CHECK(mig(codes, factors, 20) < 0.05);
    }
    SECTION("permuting latent columns leaves the score unchanged") {
        Tensor codes = make_codes({noise1, f_c1, f_cat, noise2, f_c2});
        const double base = mig(codes, factors, 20);
        const double perm = mig(permute_columns(codes, {4, 2, 0, 1, 3}), factors, 20);
        CHECK(base == perm);
    }
    SECTION("monotone per-latent transforms move the score only within binning slack") {
        // Grid-valued latents over [0, 0.3], 10 distinct values against 20
        // equal-width bins: every grid value stays alone in its bin both
        // before and after tanh, so the bin occupancy (and hence the plug-in
        // MI) is preserved under the monotone warp.
        RngStream grng(18);
        auto grid10 = [&](int64_t count) {
            std::vector<float> v(static_cast<size_t>(count));
            for (auto& x : v) x = 0.3f * static_cast<float>(grng.index(10)) / 9.0f;
            return v;
        };
        auto g1 = grid10(n), g2 = grid10(n), gnoise = grid10(n);
        FactorMatrix gf = make_factors({g1, g2},
                                       {FactorKind::Continuous, FactorKind::Continuous}, {0, 0});
        Tensor codes = make_codes({g1, g2, gnoise});
        Tensor warped = codes;
        float* p = warped.mut();
        for (int64_t i = 0; i < warped.numel(); ++i) p[i] = std::tanh(p[i]);
        CHECK(mig(codes, gf, 20) == Catch::Approx(mig(warped, gf, 20)).margin(0.02));
    }
    SECTION("constant factors are excluded with a warning") {
        std::vector<float> constant(n, 2.0f);
        FactorMatrix f2 = make_factors({constant, f_c1},
                                       {FactorKind::Continuous, FactorKind::Continuous}, {0, 0});
        Tensor codes = make_codes({f_c1, noise1});
        MetricReport rep;
        const double score = mig(codes, f2, 20, &rep);
        CHECK(rep.excluded_factors == 1);
        CHECK(score >= 0.0);
    }
    SECTION("scores stay in [0,1]") {
        Tensor codes = make_codes({f_cat, f_cat, f_c1, f_c2});
        const double s = mig(codes, factors, 20);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("factor score oracle") {
    const int64_t kFactors = 3, card = 8;
    // Ground truth draws shared by both samplers through their rng argument.
    auto draw_factors = [&](RngStream& r) {
        std::vector<float> f(static_cast<size_t>(kFactors));
        for (auto& x : f) x = static_cast<float>(r.index(card));
        return f;
    };
    SECTION("permuted factor copies score 1") {
        auto codes_from = [&](const std::vector<float>& f, RngStream& r) {
            return std::vector<float>{f[2], f[0], f[1], r.normal()};
        };
        auto sample_codes = [&](int64_t batch, RngStream& r) {
            Tensor out({batch, 4});
            float* p = out.mut();
            for (int64_t i = 0; i < batch; ++i) {
                auto c = codes_from(draw_factors(r), r);
                std::copy(c.begin(), c.end(), p + i * 4);
            }
            return out;
        };
        auto sample_fixed = [&](int64_t k, RngStream& r) {
            const float fixed = static_cast<float>(r.index(card));
            Tensor out({64, 4});
            float* p = out.mut();
            for (int64_t i = 0; i < 64; ++i) {
                auto f = draw_factors(r);
                f[static_cast<size_t>(k)] = fixed;
                auto c = codes_from(f, r);
                std::copy(c.begin(), c.end(), p + i * 4);
            }
            return out;
        };
        RngStream rng(5);
        CHECK(factor_score(sample_codes, sample_fixed, kFactors, 300, 100, rng) == 1.0);
    }
    SECTION("pure noise scores near chance") {
        auto sample_codes = [&](int64_t batch, RngStream& r) {
            Tensor out({batch, 4});
            r.fill_normal(out.mut(), out.numel());
            return out;
        };
        auto sample_fixed = [&](int64_t, RngStream& r) {
            Tensor out({64, 4});
            r.fill_normal(out.mut(), out.numel());
            return out;
        };
        RngStream rng(6);
        const double s = factor_score(sample_codes, sample_fixed, kFactors, 600, 300, rng);
        CHECK(s == Catch::Approx(1.0 / kFactors).margin(0.1));
    }
    SECTION("positive rescaling of a latent changes nothing (variance normalization)") {
        auto build = [&](float scale) {
            auto sample_codes = [&, scale](int64_t batch, RngStream& r) {
                Tensor out({batch, 3});
                float* p = out.mut();
                for (int64_t i = 0; i < batch; ++i) {
                    auto f = draw_factors(r);
                    p[i * 3] = scale * f[0];
                    p[i * 3 + 1] = f[1];
                    p[i * 3 + 2] = f[2];
                }
                return out;
            };
            auto sample_fixed = [&, scale](int64_t k, RngStream& r) {
                const float fixed = static_cast<float>(r.index(card));
                Tensor out({64, 3});
                float* p = out.mut();
                for (int64_t i = 0; i < 64; ++i) {
                    auto f = draw_factors(r);
                    f[static_cast<size_t>(k)] = fixed;
                    p[i * 3] = scale * f[0];
                    p[i * 3 + 1] = f[1];
                    p[i * 3 + 2] = f[2];
                }
                return out;
            };
            RngStream rng(7);
            return factor_score(sample_codes, sample_fixed, kFactors, 200, 100, rng);
        };
        CHECK(build(1.0f) == build(25.0f));
    }
    SECTION("dead latents are excluded and reported") {
        auto sample_codes = [&](int64_t batch, RngStream& r) {
            Tensor out({batch, 3});
            float* p = out.mut();
            for (int64_t i = 0; i < batch; ++i) {
                auto f = draw_factors(r);
                p[i * 3] = f[0];
                p[i * 3 + 1] = 0.0f;  // dead unit
                p[i * 3 + 2] = f[1];
            }
            return out;
        };
        auto sample_fixed = [&](int64_t k, RngStream& r) {
            const float fixed = static_cast<float>(r.index(card));
            Tensor out({64, 3});
            float* p = out.mut();
            for (int64_t i = 0; i < 64; ++i) {
                auto f = draw_factors(r);
                f[static_cast<size_t>(k)] = fixed;
                p[i * 3] = f[0];
                p[i * 3 + 1] = 0.0f;
                p[i * 3 + 2] = f[1];
            }
            return out;
        };
        RngStream rng(8);
        MetricReport rep;
        factor_score(sample_codes, sample_fixed, kFactors, 100, 50, rng, &rep);
        REQUIRE(rep.dead_latents.size() == 1);
        CHECK(rep.dead_latents[0] == 1);
    }
}

TEST_CASE("sap oracle") {
    RngStream rng(21);
    const int64_t n = 1200, n_train = 800, n_test = 400;
    std::vector<float> f0(n), f1(n), noise(n);
    rng.fill_uniform(f0.data(), n, 0.0f, 1.0f);
    rng.fill_uniform(f1.data(), n, -1.0f, 1.0f);
    rng.fill_normal(noise.data(), n);
    FactorMatrix factors =
        make_factors({f0, f1}, {FactorKind::Continuous, FactorKind::Continuous}, {0, 0});

    SECTION("exact continuous copies give gaps near 1") {
        Tensor codes = make_codes({f0, f1, noise});
        CHECK(sap(codes, factors, n_train, n_test) >= 0.9);
    }
    SECTION("all latents copying one factor tie, gap 0 for it") {
        Tensor codes = make_codes({f0, f0, f0});
        const double s = sap(codes, factors, n_train, n_test);
        CHECK(s >= 0.0);
        CHECK(s < 0.05);  // both factors: top two columns tie
    }
    SECTION("categorical factors use the stump's balanced accuracy") {
        std::vector<float> cat(n);
        for (int64_t i = 0; i < n; ++i) cat[static_cast<size_t>(i)] = f0[static_cast<size_t>(i)] > 0.5f;
        FactorMatrix f2 = make_factors({cat}, {FactorKind::Categorical}, {2});
        Tensor codes = make_codes({f0, noise});
        const double s = sap(codes, f2, n_train, n_test);
        CHECK(s >= 0.3);  // perfect stump vs chance-level noise
        CHECK(s <= 1.0);
    }
    SECTION("permutation invariance") {
        Tensor codes = make_codes({noise, f1, f0});
        CHECK(sap(codes, factors, n_train, n_test) ==
              sap(permute_columns(codes, {2, 0, 1}), factors, n_train, n_test));
    }
}

TEST_CASE("dci disentanglement oracle") {
    RngStream rng(31);
    const int64_t n = 1000;
    std::vector<float> f0(n), f1(n), noise(n);
    rng.fill_uniform(f0.data(), n, 0.0f, 1.0f);
    rng.fill_uniform(f1.data(), n, 0.0f, 1.0f);
    rng.fill_normal(noise.data(), n);

    SECTION("one latent per factor scores near 1 (hand-computed identity matrix)") {
        FactorMatrix factors =
            make_factors({f0, f1}, {FactorKind::Continuous, FactorKind::Continuous}, {0, 0});
        Tensor codes = make_codes({f0, f1, noise});
        std::vector<double> imp;
        const double s = dci_disentanglement(codes, factors, 800, 200, &imp);
        CHECK(s == Catch::Approx(1.0).margin(0.05));
        REQUIRE(imp.size() == 6);
        CHECK(imp[0] > 0.0);   // z0 -> f0
        CHECK(imp[3] > 0.0);   // z1 -> f1
    }
    SECTION("one latent explaining every factor scores near 0 (uniform row)") {
        FactorMatrix factors =
            make_factors({f0, f0}, {FactorKind::Continuous, FactorKind::Continuous}, {0, 0});
        Tensor codes = make_codes({f0, noise, noise});
        const double s = dci_disentanglement(codes, factors, 800, 200);
        CHECK(s == Catch::Approx(0.0).margin(0.05));
    }
    SECTION("permutation invariance") {
        FactorMatrix factors =
            make_factors({f0, f1}, {FactorKind::Continuous, FactorKind::Continuous}, {0, 0});
        Tensor codes = make_codes({noise, f0, f1});
        CHECK(dci_disentanglement(codes, factors, 800, 200) ==
              dci_disentanglement(permute_columns(codes, {1, 2, 0}), factors, 800, 200));
    }
    SECTION("score range") {
        FactorMatrix factors =
            make_factors({f0, f1}, {FactorKind::Continuous, FactorKind::Continuous}, {0, 0});
        Tensor codes = make_codes({noise, noise, noise});
        const double s = dci_disentanglement(codes, factors, 800, 200);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
}
