#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gcae/metrics.hpp"
#include "gcae/npy.hpp"
#include "gcae/rng.hpp"
#include "gcae/tensor.hpp"

namespace gcae {

// Inputs paired with ground-truth generative factors. Image data stays
// packed as uint8 and is widened per batch; waveform data is float-backed.
class FactorDataset {
public:
    std::string name;
    int64_t items = 0;
    int64_t features = 0;
    FactorMatrix factors;
    Tensor dense;                 // items x features, float backing
    std::vector<uint8_t> packed;  // items * features, uint8 backing

    bool u8_backed() const { return !packed.empty(); }

    void fill_rows(const int64_t* idx, int64_t count, float* out) const {
        if (u8_backed()) {
            for (int64_t i = 0; i < count; ++i) {
                const uint8_t* src = packed.data() + idx[i] * features;
                for (int64_t j = 0; j < features; ++j) out[i * features + j] = src[j];
            }
        } else {
            for (int64_t i = 0; i < count; ++i)
                std::copy_n(dense.ptr() + idx[i] * features, features, out + i * features);
        }
    }

    Tensor rows(const std::vector<int64_t>& idx) const {
        Tensor out({static_cast<int64_t>(idx.size()), features});
        fill_rows(idx.data(), static_cast<int64_t>(idx.size()), out.mut());
        return out;
    }

    // Realized values of each factor and the items carrying them, built once
    // for intervention sampling.
    void build_factor_index() {
        const int64_t kf = factors.factors();
        unique_values_.assign(static_cast<size_t>(kf), {});
        value_items_.assign(static_cast<size_t>(kf), {});
        for (int64_t k = 0; k < kf; ++k) {
            std::vector<std::pair<float, int64_t>> pairs;
            pairs.reserve(static_cast<size_t>(items));
            for (int64_t i = 0; i < items; ++i) pairs.emplace_back(factors.values.at(i, k), i);
            std::sort(pairs.begin(), pairs.end());
            auto& vals = unique_values_[static_cast<size_t>(k)];
            auto& lists = value_items_[static_cast<size_t>(k)];
            for (const auto& [v, i] : pairs) {
                if (vals.empty() || vals.back() != v) {
                    vals.push_back(v);
                    lists.emplace_back();
                }
                lists.back().push_back(i);
            }
        }
    }

    const std::vector<float>& unique_values(int64_t k) const {
        return unique_values_.at(static_cast<size_t>(k));
    }
    const std::vector<int64_t>& items_with(int64_t k, int64_t value_idx) const {
        return value_items_.at(static_cast<size_t>(k)).at(static_cast<size_t>(value_idx));
    }

private:
    std::vector<std::vector<float>> unique_values_;
    std::vector<std::vector<std::vector<int64_t>>> value_items_;
};

// Per-feature standardization statistics; factor columns are never touched.
struct NormStats {
    std::vector<float> mean;
    std::vector<float> stddev;  // floored at 1e-6
};

inline NormStats fit_norm_stats(const Tensor& data) {
    const int64_t n = data.shape()[0], f = data.shape()[1];
    NormStats st;
    st.mean.assign(static_cast<size_t>(f), 0.0f);
    st.stddev.assign(static_cast<size_t>(f), 1.0f);
    for (int64_t j = 0; j < f; ++j) {
        double s = 0, s2 = 0;
        for (int64_t i = 0; i < n; ++i) {
            s += data.at(i, j);
            s2 += static_cast<double>(data.at(i, j)) * data.at(i, j);
        }
        const double mean = s / static_cast<double>(n);
        const double var = std::max(0.0, s2 / static_cast<double>(n) - mean * mean);
        st.mean[static_cast<size_t>(j)] = static_cast<float>(mean);
        st.stddev[static_cast<size_t>(j)] =
            std::max(static_cast<float>(std::sqrt(var)), 1e-6f);
    }
    return st;
}

inline void normalize_inplace(Tensor& data, const NormStats& st) {
    const int64_t n = data.shape()[0], f = data.shape()[1];
    float* p = data.mut();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < f; ++j)
            p[i * f + j] = (p[i * f + j] - st.mean[static_cast<size_t>(j)]) /
                           st.stddev[static_cast<size_t>(j)];
}

// (x - mean) / std per feature; fits stats when none are supplied.
inline std::pair<Tensor, NormStats> normalize(const Tensor& data, const NormStats* stats = nullptr) {
    NormStats st = stats ? *stats : fit_norm_stats(data);
    Tensor out = data;
    out.mut();  // detach before writing
    normalize_inplace(out, st);
    return {std::move(out), std::move(st)};
}

// Rectangular pulse trains standing in for the accelerator waveform data:
// 30 evenly spaced duty cycles inside (0.05, 0.95) crossed with 12 pulse
// periods {40, 50, ..., 150}, 1000 samples each. value 1 during the duty
// fraction of each period, 0 otherwise. Deterministic by construction.
inline FactorDataset generate_waveforms() {
    constexpr int64_t kLength = 1000;
    constexpr int64_t kDuties = 30;
    constexpr int64_t kFreqs = 12;
    FactorDataset ds;
    ds.name = "waveforms";
    ds.items = kDuties * kFreqs;
    ds.features = kLength;
    ds.dense = Tensor({ds.items, kLength});
    ds.factors.values = Tensor({ds.items, 2});
    ds.factors.kinds = {FactorKind::Continuous, FactorKind::Categorical};
    ds.factors.cardinalities = {0, static_cast<int>(kFreqs)};

    float* x = ds.dense.mut();
    float* fv = ds.factors.values.mut();
    int64_t row = 0;
    for (int64_t d = 0; d < kDuties; ++d) {
        // midpoints of (0.05, 0.95): open interval respected
        const float duty = 0.05f + 0.9f * (2.0f * static_cast<float>(d) + 1.0f) / (2.0f * kDuties);
        for (int64_t f = 0; f < kFreqs; ++f) {
            const int64_t period = 40 + 10 * f;
            for (int64_t t = 0; t < kLength; ++t)
                x[row * kLength + t] =
                    (static_cast<float>(t % period) < duty * static_cast<float>(period)) ? 1.0f
                                                                                         : 0.0f;
            fv[row * 2] = duty;
            fv[row * 2 + 1] = static_cast<float>(f);
            ++row;
        }
    }
    ds.build_factor_index();
    return ds;
}

// One rectangular pulse train; exposed for generator checks.
inline std::vector<float> pulse_train(float duty, int64_t period, int64_t length = 1000) {
    std::vector<float> w(static_cast<size_t>(length));
    for (int64_t t = 0; t < length; ++t)
        w[static_cast<size_t>(t)] =
            (static_cast<float>(t % period) < duty * static_cast<float>(period)) ? 1.0f : 0.0f;
    return w;
}

// Item indices with factor `k` held at one uniformly drawn realizable value.
// Without replacement while the pool lasts; with replacement when the batch
// exceeds the matching items.
inline std::vector<int64_t> sample_fixed_factor(const FactorDataset& ds, int64_t factor_index,
                                                int64_t batch, RngStream& rng) {
    if (factor_index < 0 || factor_index >= ds.factors.factors())
        throw ContractError("sample_fixed_factor: factor index " + std::to_string(factor_index) +
                            " out of range");
    const auto& values = ds.unique_values(factor_index);
    if (values.empty()) throw ContractError("sample_fixed_factor: factor has no realized values");
    const int64_t v = rng.index(static_cast<int64_t>(values.size()));
    const auto& pool = ds.items_with(factor_index, v);
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(batch));
    if (batch <= static_cast<int64_t>(pool.size())) {
        std::vector<int64_t> shuffled = pool;
        for (int64_t i = 0; i < batch; ++i) {
            const int64_t j = i + rng.index(static_cast<int64_t>(shuffled.size()) - i);
            std::swap(shuffled[static_cast<size_t>(i)], shuffled[static_cast<size_t>(j)]);
            out.push_back(shuffled[static_cast<size_t>(i)]);
        }
    } else {
        for (int64_t i = 0; i < batch; ++i)
            out.push_back(pool[static_cast<size_t>(rng.index(static_cast<int64_t>(pool.size())))]);
    }
    return out;
}

// Deterministic duplicate-free subsample of [0, items).
inline std::vector<int64_t> subsample_indices(int64_t items, int64_t count, uint64_t seed) {
    if (count > items) throw ContractError("subsample: count exceeds items");
    std::vector<int64_t> idx(static_cast<size_t>(items));
    std::iota(idx.begin(), idx.end(), 0);
    RngStream rng(seed);
    for (int64_t i = 0; i < count; ++i) {
        const int64_t j = i + rng.index(items - i);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(count));
    return idx;
}

namespace dsprites {

constexpr int64_t kImageSide = 64;
constexpr int64_t kFullCount = 737280;  // 3 * 6 * 40 * 32 * 32
constexpr int kShapes = 3, kScales = 6, kOrients = 40, kPositions = 32;

// Loads the standard archive: members imgs (|u1, N x 64 x 64),
// latents_values (<f8, N x 6) and latents_classes (<i8, N x 6). The constant
// color column is dropped, leaving shape (categorical) plus scale,
// orientation and the two positions (continuous).
inline FactorDataset load(const std::string& path) {
    auto entries = npy::read_zip(path);
    auto find = [&](const std::string& base) -> const npy::ZipEntry& {
        for (const auto& e : entries)
            if (e.name == base || e.name == base + ".npy") return e;
        throw IoError(path + ": missing member " + base);
    };
    const auto imgs = npy::parse_npy(find("imgs").data.data(), find("imgs").data.size(), "imgs");
    const auto vals = npy::parse_npy(find("latents_values").data.data(),
                                     find("latents_values").data.size(), "latents_values");
    const auto cls = npy::parse_npy(find("latents_classes").data.data(),
                                    find("latents_classes").data.size(), "latents_classes");

    if (imgs.dtype != "|u1" || imgs.shape.size() != 3 || imgs.shape[1] != kImageSide ||
        imgs.shape[2] != kImageSide)
        throw IoError(path + ": imgs schema mismatch (dtype " + imgs.dtype + ", shape " +
                      std::to_string(imgs.shape.size()) + "-d)");
    if (vals.dtype != "<f8" || vals.shape.size() != 2 || vals.shape[1] != 6)
        throw IoError(path + ": latents_values schema mismatch");
    if (cls.dtype != "<i8" || cls.shape.size() != 2 || cls.shape[1] != 6)
        throw IoError(path + ": latents_classes schema mismatch");
    const int64_t n = imgs.shape[0];
    if (vals.shape[0] != n || cls.shape[0] != n)
        throw IoError(path + ": member row counts disagree");
    if (n > kFullCount)
        throw IoError(path + ": " + std::to_string(n) + " items exceeds the factor grid");

    FactorDataset ds;
    ds.name = "dsprites";
    ds.items = n;
    ds.features = kImageSide * kImageSide;
    ds.packed = imgs.raw;
    for (uint8_t px : ds.packed)
        if (px > 1) throw IoError(path + ": non-binary pixel value " + std::to_string(px));

    ds.factors.values = Tensor({n, 5});
    ds.factors.kinds = {FactorKind::Categorical, FactorKind::Continuous, FactorKind::Continuous,
                        FactorKind::Continuous, FactorKind::Continuous};
    ds.factors.cardinalities = {kShapes, 0, 0, 0, 0};
    float* fv = ds.factors.values.mut();
    const double* vv = reinterpret_cast<const double*>(vals.raw.data());
    const int64_t* cv = reinterpret_cast<const int64_t*>(cls.raw.data());
    for (int64_t i = 0; i < n; ++i) {
        fv[i * 5 + 0] = static_cast<float>(cv[i * 6 + 1]);  // shape as class code
        for (int64_t k = 2; k < 6; ++k) fv[i * 5 + (k - 1)] = static_cast<float>(vv[i * 6 + k]);
    }
    ds.build_factor_index();
    return ds;
}

namespace render {

inline bool inside_shape(int shape, double u, double v, double h) {
    switch (shape) {
        case 0:  // square
            return std::fabs(u) <= 0.82 * h && std::fabs(v) <= 0.82 * h;
        case 1: {  // 2:1 ellipse
            const double a = u / h, b = v / (0.5 * h);
            return a * a + b * b <= 1.0;
        }
        default: {  // heart
            const double a = 1.25 * u / h;
            const double b = -1.25 * v / h - 0.25;
            const double q = a * a + b * b - 1.0;
            return q * q * q - a * a * b * b * b <= 0.0;
        }
    }
}

inline void draw(int shape, double scale, double orient, double pos_x, double pos_y,
                 uint8_t* out) {
    const double cx = 16.0 + 32.0 * pos_x;
    const double cy = 16.0 + 32.0 * pos_y;
    const double h = 12.0 * scale;
    const double c = std::cos(orient), s = std::sin(orient);
    for (int64_t py = 0; py < kImageSide; ++py) {
        for (int64_t px = 0; px < kImageSide; ++px) {
            const double dx = static_cast<double>(px) + 0.5 - cx;
            const double dy = static_cast<double>(py) + 0.5 - cy;
            const double u = c * dx + s * dy;
            const double v = -s * dx + c * dy;
            out[py * kImageSide + px] = inside_shape(shape, u, v, h) ? 1 : 0;
        }
    }
}

}  // namespace render

// Writes a synthetic archive with the standard schema: the full
// shape x scale x orientation x position grid rendered as binary sprites,
// optionally subsampled (seeded, duplicate-free) down to `count` items.
inline void synthesize(const std::string& path, int64_t count, uint64_t seed) {
    if (count <= 0 || count > kFullCount)
        throw ContractError("synthesize: count must be in [1, " + std::to_string(kFullCount) +
                            "]");
    std::vector<int64_t> keep;
    if (count == kFullCount) {
        keep.resize(static_cast<size_t>(kFullCount));
        std::iota(keep.begin(), keep.end(), 0);
    } else {
        keep = subsample_indices(kFullCount, count, seed);
        std::sort(keep.begin(), keep.end());
    }

    npy::Array imgs, vals, cls;
    imgs.dtype = "|u1";
    imgs.shape = {count, kImageSide, kImageSide};
    imgs.raw.resize(static_cast<size_t>(count * kImageSide * kImageSide));
    vals.dtype = "<f8";
    vals.shape = {count, 6};
    vals.raw.resize(static_cast<size_t>(count * 6 * 8));
    cls.dtype = "<i8";
    cls.shape = {count, 6};
    cls.raw.resize(static_cast<size_t>(count * 6 * 8));
    double* vv = reinterpret_cast<double*>(vals.raw.data());
    int64_t* cv = reinterpret_cast<int64_t*>(cls.raw.data());

    for (int64_t row = 0; row < count; ++row) {
        int64_t g = keep[static_cast<size_t>(row)];
        const int oy = static_cast<int>(g % kPositions);
        g /= kPositions;
        const int ox = static_cast<int>(g % kPositions);
        g /= kPositions;
        const int orient_i = static_cast<int>(g % kOrients);
        g /= kOrients;
        const int scale_i = static_cast<int>(g % kScales);
        g /= kScales;
        const int shape_i = static_cast<int>(g);

        const double scale = 0.5 + 0.5 * scale_i / (kScales - 1);
        const double orient = 2.0 * std::numbers::pi * orient_i / kOrients;
        const double pos_x = static_cast<double>(ox) / (kPositions - 1);
        const double pos_y = static_cast<double>(oy) / (kPositions - 1);
        render::draw(shape_i, scale, orient, pos_x, pos_y,
                     imgs.raw.data() + row * kImageSide * kImageSide);

        vv[row * 6 + 0] = 1.0;
        vv[row * 6 + 1] = shape_i + 1.0;
        vv[row * 6 + 2] = scale;
        vv[row * 6 + 3] = orient;
        vv[row * 6 + 4] = pos_x;
        vv[row * 6 + 5] = pos_y;
        cv[row * 6 + 0] = 0;
        cv[row * 6 + 1] = shape_i;
        cv[row * 6 + 2] = scale_i;
        cv[row * 6 + 3] = orient_i;
        cv[row * 6 + 4] = ox;
        cv[row * 6 + 5] = oy;
    }

    npy::write_zip_stored(path, {{"imgs.npy", npy::serialize_npy(imgs)},
                                 {"latents_values.npy", npy::serialize_npy(vals)},
                                 {"latents_classes.npy", npy::serialize_npy(cls)}});
}

}  // namespace dsprites

}  // namespace gcae
