#pragma once

#include <cstring>
#include <iostream>
#include <string>

#include "crl/agent.hpp"

namespace crl {

// Little-endian binary encoding; values are portable across platforms, byte
// layout is explicit rather than struct-dumped.

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw UsageError("checkpoint: truncated stream");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw UsageError("checkpoint: truncated stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw UsageError("checkpoint: truncated stream");
    return s;
}

inline void write_f64_vec(std::ostream& os, const std::vector<double>& v) {
    write_u64(os, v.size());
    for (double x : v) write_f64(os, x);
}

inline void read_f64_vec(std::istream& is, std::vector<double>& v) {
    const std::uint64_t n = read_u64(is);
    if (n != v.size()) throw ConfigError("checkpoint: value count mismatch");
    for (auto& x : v) x = read_f64(is);
}

// Parameters with Adam moments. Loading requires an identically-shaped store
// (construction defines the architecture); any mismatch is a migration error.
inline void write_store(std::ostream& os, const ParameterStore& store) {
    write_u32(os, static_cast<std::uint32_t>(store.count()));
    for (const auto& [name, p] : store) {
        write_string(os, name);
        write_u32(os, static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) write_u32(os, static_cast<std::uint32_t>(d));
        write_u64(os, static_cast<std::uint64_t>(p.adam_t));
        write_f64_vec(os, p.value);
        write_f64_vec(os, p.adam_m);
        write_f64_vec(os, p.adam_v);
    }
}

// params_only skips optimizer moments (transfer initialization).
inline void read_store(std::istream& is, ParameterStore& store, bool params_only = false) {
    const std::uint32_t count = read_u32(is);
    if (count != store.count())
        throw ConfigError("checkpoint migration error: parameter count " + std::to_string(count) +
                          " does not match model (" + std::to_string(store.count()) + ")");
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::string name = read_string(is);
        if (!store.contains(name))
            throw ConfigError("checkpoint migration error: unknown parameter " + name);
        ParamTensor& p = store.get(name);
        const std::uint32_t rank = read_u32(is);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(read_u32(is)));
        if (shape != p.shape)
            throw ConfigError("checkpoint migration error: parameter " + name + " has shape " +
                              shape_str(shape) + ", model expects " + shape_str(p.shape));
        const auto adam_t = static_cast<std::int64_t>(read_u64(is));
        std::vector<double> value(p.value.size()), m(p.value.size()), v(p.value.size());
        read_f64_vec(is, value);
        read_f64_vec(is, m);
        read_f64_vec(is, v);
        p.value = std::move(value);
        if (!params_only) {
            p.adam_t = adam_t;
            p.adam_m = std::move(m);
            p.adam_v = std::move(v);
        }
        p.zero_grad();
    }
}

// ---- full trainer state (exact resume) ----

inline void Trainer::save(std::ostream& os) const {
    write_u64(os, static_cast<std::uint64_t>(steps_));
    write_u64(os, static_cast<std::uint64_t>(updates_));
    write_u64(os, act_rng_.state());
    write_u64(os, eps_rng_.state());
    write_u32(os, static_cast<std::uint32_t>(envs_.size()));
    for (std::size_t i = 0; i < envs_.size(); ++i) {
        write_u64(os, env_seed_rng_[i].state());
        std::ostringstream snap;
        envs_[i].save(snap);
        write_string(os, snap.str());
    }
    write_store(os, store_);
    write_store(os, club_->store());
}

inline void Trainer::load(std::istream& is) {
    steps_ = static_cast<std::int64_t>(read_u64(is));
    updates_ = static_cast<std::int64_t>(read_u64(is));
    act_rng_.set_state(read_u64(is));
    eps_rng_.set_state(read_u64(is));
    const std::uint32_t n = read_u32(is);
    if (n != envs_.size())
        throw ConfigError("checkpoint migration error: env count mismatch");
    for (std::size_t i = 0; i < envs_.size(); ++i) {
        env_seed_rng_[i].set_state(read_u64(is));
        std::istringstream snap(read_string(is));
        envs_[i].load(snap);
        caches_[i].valid = false;
    }
    read_store(is, store_);
    read_store(is, club_->store());
}

// Transfer initialization: weights only, fresh optimizer and step counter.
inline void load_params_only(std::istream& is, Trainer& t) {
    read_u64(is);  // steps
    read_u64(is);
    read_u64(is);
    read_u64(is);
    const std::uint32_t n = read_u32(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        read_u64(is);
        read_string(is);
    }
    read_store(is, t.params(), /*params_only=*/true);
    read_store(is, t.club().store(), /*params_only=*/true);
}

}  // namespace crl
