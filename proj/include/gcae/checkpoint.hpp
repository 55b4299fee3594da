#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gcae/model.hpp"

// Checkpoint container, version 1.
//
//   magic   8 bytes  "GCAECKP1"
//   version u32      1
//   config  u64 length + UTF-8 key=value text (one pair per line)
//   iter    i64      training iteration count
//   rng     u32 count, then per stream: name, u64 length + engine state text
//   tensors u32 count, then per tensor: name, u32 ndim, i64 dims, f32 data
//   adam    u32 count, then per state: name, i64 step, two inline tensors
//           (first and second moment)
//
// All integers and floats are little-endian; strings are u32 length + bytes.
// Tensor names: enc.w0/enc.b0..., dec.*, disc<i>.*; adam entries mirror them
// as opt.enc.w0 etc. No timestamps or absolute paths are stored, so a rerun
// with the same config and seed produces byte-identical checkpoints.

namespace gcae {

namespace ckpt_detail {

constexpr char kMagic[8] = {'G', 'C', 'A', 'E', 'C', 'K', 'P', '1'};

inline void ensure_little_endian() {
    const uint32_t probe = 1;
    uint8_t b;
    std::memcpy(&b, &probe, 1);
    if (b != 1) throw IoError("checkpoint format requires a little-endian host");
}

template <class T>
void wr(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void wr_str(std::ostream& os, const std::string& s) {
    wr<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void wr_blob(std::ostream& os, const std::string& s) {
    wr<uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void wr_tensor(std::ostream& os, const Tensor& t) {
    wr<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) wr<int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.ptr()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

template <class T>
T rd(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint truncated");
    return v;
}

inline std::string rd_str(std::istream& is) {
    const uint32_t n = rd<uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw IoError("checkpoint truncated");
    return s;
}

inline std::string rd_blob(std::istream& is) {
    const uint64_t n = rd<uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw IoError("checkpoint truncated");
    return s;
}

inline Tensor rd_tensor(std::istream& is) {
    const uint32_t nd = rd<uint32_t>(is);
    Shape shape;
    for (uint32_t i = 0; i < nd; ++i) shape.push_back(rd<int64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.mut()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw IoError("checkpoint truncated");
    return t;
}

inline void visit_tensors(GcaeTrainer& tr,
                          const std::function<void(const std::string&, Tensor&)>& fn) {
    auto net = [&](const std::string& prefix, Mlp& mlp) {
        for (size_t l = 0; l < mlp.weights.size(); ++l) {
            fn(prefix + ".w" + std::to_string(l), mlp.weights[l]);
            fn(prefix + ".b" + std::to_string(l), mlp.biases[l]);
        }
    };
    net("enc", tr.model.encoder);
    net("dec", tr.model.decoder);
    for (int64_t i = 0; i < tr.bank.size(); ++i)
        net("disc" + std::to_string(i), tr.bank.discs[static_cast<size_t>(i)].net);
}

inline void visit_adam(GcaeTrainer& tr,
                       const std::function<void(const std::string&, AdamState&)>& fn) {
    auto opt = [&](const std::string& prefix, MlpOptimizer& o) {
        for (size_t s = 0; s < o.states().size(); ++s)
            fn("opt." + prefix + "." + std::to_string(s), o.states()[s]);
    };
    opt("enc", tr.encoder_opt());
    opt("dec", tr.decoder_opt());
    for (int64_t i = 0; i < tr.bank.size(); ++i)
        opt("disc" + std::to_string(i), tr.disc_opts()[static_cast<size_t>(i)]);
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, GcaeTrainer& trainer,
                            const std::string& config_echo) {
    using namespace ckpt_detail;
    ensure_little_endian();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot create checkpoint " + path);
    os.write(kMagic, 8);
    wr<uint32_t>(os, 1);
    wr_blob(os, config_echo);
    wr<int64_t>(os, trainer.iteration());

    uint32_t rng_count = 0;
    trainer.visit_rng_streams([&](const std::string&, RngStream&) { ++rng_count; });
    wr<uint32_t>(os, rng_count);
    trainer.visit_rng_streams([&](const std::string& name, RngStream& s) {
        wr_str(os, name);
        wr_blob(os, s.serialize());
    });

    uint32_t tcount = 0;
    visit_tensors(trainer, [&](const std::string&, Tensor&) { ++tcount; });
    wr<uint32_t>(os, tcount);
    visit_tensors(trainer, [&](const std::string& name, Tensor& t) {
        wr_str(os, name);
        wr_tensor(os, t);
    });

    uint32_t acount = 0;
    visit_adam(trainer, [&](const std::string&, AdamState&) { ++acount; });
    wr<uint32_t>(os, acount);
    visit_adam(trainer, [&](const std::string& name, AdamState& st) {
        wr_str(os, name);
        wr<int64_t>(os, st.step_count);
        wr_tensor(os, st.first_moment);
        wr_tensor(os, st.second_moment);
    });
    if (!os) throw IoError("write failed for checkpoint " + path);
}

// Config text stored in a checkpoint (validated header only).
inline std::string load_checkpoint_config(const std::string& path) {
    using namespace ckpt_detail;
    ensure_little_endian();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError(path + ": bad checkpoint magic");
    const uint32_t version = rd<uint32_t>(is);
    if (version != 1)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    return rd_blob(is);
}

// Restores parameters, optimizer states and RNG streams into a trainer built
// from the same configuration.
inline void load_checkpoint_into(const std::string& path, GcaeTrainer& trainer) {
    using namespace ckpt_detail;
    ensure_little_endian();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError(path + ": bad checkpoint magic");
    if (rd<uint32_t>(is) != 1) throw IoError(path + ": unsupported checkpoint version");
    (void)rd_blob(is);  // config echo: callers validate via load_checkpoint_config
    trainer.set_iteration(rd<int64_t>(is));

    std::map<std::string, std::string> rng_states;
    const uint32_t rng_count = rd<uint32_t>(is);
    for (uint32_t i = 0; i < rng_count; ++i) {
        std::string name = rd_str(is);
        rng_states[name] = rd_blob(is);
    }
    trainer.visit_rng_streams([&](const std::string& name, RngStream& s) {
        auto it = rng_states.find(name);
        if (it == rng_states.end()) throw IoError(path + ": missing rng stream " + name);
        s.deserialize(it->second);
    });

    const uint32_t tcount = rd<uint32_t>(is);
    std::map<std::string, Tensor> tensors;
    for (uint32_t i = 0; i < tcount; ++i) {
        std::string name = rd_str(is);
        tensors.emplace(std::move(name), rd_tensor(is));
    }
    visit_tensors(trainer, [&](const std::string& name, Tensor& t) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IoError(path + ": missing tensor " + name);
        if (it->second.shape() != t.shape())
            throw IoError(path + ": shape mismatch for " + name + " (" +
                          shape_str(it->second.shape()) + " vs " + shape_str(t.shape()) + ")");
        t = it->second;
    });

    const uint32_t acount = rd<uint32_t>(is);
    struct AdamBlob {
        int64_t step;
        Tensor m, v;
    };
    std::map<std::string, AdamBlob> adams;
    for (uint32_t i = 0; i < acount; ++i) {
        std::string name = rd_str(is);
        AdamBlob b;
        b.step = rd<int64_t>(is);
        b.m = rd_tensor(is);
        b.v = rd_tensor(is);
        adams.emplace(std::move(name), std::move(b));
    }
    visit_adam(trainer, [&](const std::string& name, AdamState& st) {
        auto it = adams.find(name);
        if (it == adams.end()) throw IoError(path + ": missing optimizer state " + name);
        st.step_count = it->second.step;
        st.first_moment = it->second.m;
        st.second_moment = it->second.v;
    });
}

}  // namespace gcae
