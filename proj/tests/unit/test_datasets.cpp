#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "gcae/datasets.hpp"

using namespace gcae;

namespace {
std::string tmp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}
}  // namespace

TEST_CASE("pulse train duty-cycle identity") {
    auto w = pulse_train(0.5f, 100);
    double mean = 0;
    for (float v : w) mean += v;
    CHECK(mean / w.size() == Catch::Approx(0.5));

    auto ones = pulse_train(1.0f, 40);
    for (float v : ones) CHECK(v == 1.0f);
}

TEST_CASE("waveform dataset spans the full factor grid") {
    FactorDataset ds = generate_waveforms();
    CHECK(ds.items == 360);
    CHECK(ds.features == 1000);
    CHECK(ds.unique_values(0).size() == 30);
    CHECK(ds.unique_values(1).size() == 12);
    for (float d : ds.unique_values(0)) {
        CHECK(d > 0.05f);
        CHECK(d < 0.95f);
    }
    // factor independence by grid construction
    std::vector<float> duty, freq;
    for (int64_t i = 0; i < ds.items; ++i) {
        duty.push_back(ds.factors.values.at(i, 0));
        freq.push_back(ds.factors.values.at(i, 1));
    }
    CHECK(histogram_mi(duty, freq, 30, 12) < 0.01);
}

TEST_CASE("normalization contracts") {
    Tensor data({4, 3}, {1, 5, 7, 2, 5, 9, 3, 5, 11, 4, 5, 13});
    auto [norm1, stats] = normalize(data);
    SECTION("per-feature mean ~0, std ~1 on the fitted split") {
        for (int64_t j = 0; j < 3; ++j) {
            double s = 0, s2 = 0;
            for (int64_t i = 0; i < 4; ++i) {
                s += norm1.at(i, j);
                s2 += norm1.at(i, j) * norm1.at(i, j);
            }
            CHECK(std::fabs(s / 4) < 1e-5);
            if (j != 1) CHECK(std::sqrt(s2 / 4) == Catch::Approx(1.0).margin(1e-3));
        }
    }
    SECTION("constant feature maps to zero under the floored std") {
        for (int64_t i = 0; i < 4; ++i) CHECK(norm1.at(i, 1) == 0.0f);
    }
    SECTION("normalizing twice with the same stats is idempotent on the stats") {
        auto [norm2, stats2] = normalize(data, &stats);
        for (int64_t i = 0; i < norm1.numel(); ++i) CHECK(norm2.at(i) == norm1.at(i));
    }
}

TEST_CASE("seeded subsampling is deterministic and duplicate-free") {
    auto a = subsample_indices(10000, 500, 99);
    auto b = subsample_indices(10000, 500, 99);
    CHECK(a == b);
    std::set<int64_t> uniq(a.begin(), a.end());
    CHECK(uniq.size() == 500);
    CHECK_THROWS_AS(subsample_indices(10, 11, 1), ContractError);
}

TEST_CASE("fixed-factor sampling holds exactly one factor constant") {
    FactorDataset ds = generate_waveforms();
    RngStream rng(5);
    SECTION("fixed duty leaves frequency varying") {
        auto idx = sample_fixed_factor(ds, 0, 64, rng);
        REQUIRE(idx.size() == 64);
        std::set<float> duties, freqs;
        for (int64_t i : idx) {
            duties.insert(ds.factors.values.at(i, 0));
            freqs.insert(ds.factors.values.at(i, 1));
        }
        CHECK(duties.size() == 1);
        CHECK(freqs.size() > 1);
    }
    SECTION("batch of one is trivially constant") {
        auto idx = sample_fixed_factor(ds, 1, 1, rng);
        CHECK(idx.size() == 1);
    }
    SECTION("invalid factor index is a contract error") {
        CHECK_THROWS_AS(sample_fixed_factor(ds, 7, 8, rng), ContractError);
    }
}

TEST_CASE("synthetic sprite archive round-trips through the loader") {
    const std::string path = tmp_path("gcae_test_sprites.npz");
    dsprites::synthesize(path, 512, 1234);
    FactorDataset ds = dsprites::load(path);

    CHECK(ds.items == 512);
    CHECK(ds.features == 64 * 64);
    CHECK(ds.factors.factors() == 5);  // color column dropped
    CHECK(ds.factors.kinds[0] == FactorKind::Categorical);
    CHECK(ds.factors.cardinalities[0] == 3);
    for (uint8_t px : ds.packed) CHECK(px <= 1);

    SECTION("images respond to their factors") {
        // at least: images are non-empty and differ across rows
        int64_t lit = 0;
        for (uint8_t px : ds.packed) lit += px;
        CHECK(lit > 0);
        CHECK(std::memcmp(ds.packed.data(), ds.packed.data() + ds.features,
                          static_cast<size_t>(ds.features)) != 0);
    }

    SECTION("fixing each factor yields a constant column") {
        RngStream rng(8);
        for (int64_t k = 0; k < 5; ++k) {
            auto idx = sample_fixed_factor(ds, k, 16, rng);
            std::set<float> vals;
            for (int64_t i : idx) vals.insert(ds.factors.values.at(i, k));
            CHECK(vals.size() == 1);
        }
    }

    SECTION("array headers re-serialize to the bytes read") {
        auto entries = npy::read_zip(path);
        for (const auto& e : entries) {
            auto arr = npy::parse_npy(e.data.data(), e.data.size(), e.name);
            auto bytes = npy::serialize_npy(arr);
            REQUIRE(bytes.size() == e.data.size());
            CHECK(std::memcmp(bytes.data(), e.data.data(), bytes.size()) == 0);
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("loader rejects malformed containers") {
    const std::string path = tmp_path("gcae_bad.npz");
    SECTION("not a zip") {
        std::ofstream out(path, std::ios::binary);
        out << "definitely not a zip";
        out.close();
        CHECK_THROWS_AS(dsprites::load(path), IoError);
    }
    SECTION("bad array magic inside the container") {
        npy::write_zip_stored(path, {{"imgs.npy", {1, 2, 3, 4}},
                                     {"latents_values.npy", {1, 2, 3, 4}},
                                     {"latents_classes.npy", {1, 2, 3, 4}}});
        CHECK_THROWS_WITH(dsprites::load(path), Catch::Matchers::ContainsSubstring("magic"));
    }
    std::filesystem::remove(path);
}

TEST_CASE("full-grid class codes decode consistently") {
    const std::string path = tmp_path("gcae_codes.npz");
    dsprites::synthesize(path, 64, 7);
    FactorDataset ds = dsprites::load(path);
    // scale is one of 6 grid values in [0.5, 1]; positions in [0,1]
    for (int64_t i = 0; i < ds.items; ++i) {
        CHECK(ds.factors.values.at(i, 1) >= 0.5f);
        CHECK(ds.factors.values.at(i, 1) <= 1.0f);
        CHECK(ds.factors.values.at(i, 3) >= 0.0f);
        CHECK(ds.factors.values.at(i, 3) <= 1.0f);
    }
    std::filesystem::remove(path);
}
