#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace duet {

// Contract violations (bad shapes, bad arguments, mode/flag mismatches).
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime failures (I/O, non-finite loss, parse failures).
struct runtime_failure : std::runtime_error {
    explicit runtime_failure(const std::string& msg) : std::runtime_error(msg) {}
};

#define DUET_CHECK(cond, msg)                             \
    do {                                                  \
        if (!(cond)) throw ::duet::contract_error(msg);   \
    } while (0)

#define DUET_REQUIRE(cond, msg)                           \
    do {                                                  \
        if (!(cond)) throw ::duet::runtime_failure(msg);  \
    } while (0)

// ---------------------------------------------------------------------------
// Seed derivation. Every source of randomness in the project is a named
// sub-stream of one root seed, so runs (and resumed runs) replay exactly.

uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64(const std::string& s);

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derive the seed of a named sub-stream, e.g. seed_for(root, "train/pim/step/12").
inline uint64_t seed_for(uint64_t root, const std::string& name) {
    return splitmix64(root ^ fnv1a64(name));
}

// Deterministic RNG used everywhere. Normal deviates come from an explicit
// Box-Muller transform (no cached spare) so the stream has no hidden state.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t bits() { return gen_(); }

    double uniform() {  // [0, 1)
        return (gen_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
    }

    double normal() {
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Draw an index from unnormalized non-negative weights.
    int categorical(const std::vector<double>& w);

  private:
    std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// SHA-256, used for content-addressing datasets and checkpoints.

class Sha256 {
  public:
    Sha256();
    void update(const void* data, size_t n);
    std::string hex_digest();  // finalizes

    static std::string of_bytes(const void* data, size_t n);
    static std::string of_string(const std::string& s);
    static std::string of_file(const std::string& path);

  private:
    uint64_t total_ = 0;
    uint32_t h_[8];
    unsigned char buf_[64];
    size_t buf_len_ = 0;
    void process_block(const unsigned char* p);
};

// ---------------------------------------------------------------------------
// Small file helpers.

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

template <class T>
bool all_finite(const T* p, size_t n) {
    for (size_t i = 0; i < n; i++)
        if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
}

}  // namespace duet
