#ifndef VC_RNG_HPP
#define VC_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace vc {

// Deterministic RNG used everywhere in place of std distributions, whose
// output is implementation-defined. mt19937_64 itself is bit-exact by the
// standard, so streams reproduce across compilers as long as we map the raw
// words to doubles ourselves.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Stable seed for stream `index` of stream family `tag` under `master`.
// Used for per-sample corpus seeds and per-step training streams, so a
// resumed run draws exactly what the uninterrupted run would have drawn.
inline uint64_t derive_seed(uint64_t master, uint64_t tag, uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ splitmix64(tag)) ^ index);
}

class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t raw() { return eng_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] inclusive, rejection-free for small ranges
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int64_t(eng_() % span);
    }

    // Box-Muller; second value cached
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace vc

#endif
