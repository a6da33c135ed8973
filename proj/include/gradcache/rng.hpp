#pragma once

#include <cmath>
#include <cstdint>

namespace gradcache {

// Counter-based generator: every draw hashes (key, counter), so independent
// streams can be forked per purpose (weights, noise, prompts) and a given
// seed always reproduces the same sequence regardless of what other streams
// were consumed in between.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x8c2f9d1a7b3e5c41ull)) {}

    // derive an independent stream; forking with the same tag twice yields
    // the same stream, forking with different tags yields unrelated ones
    Rng fork(std::uint64_t tag) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(tag ^ 0x6a09e667f3bcc909ull));
        return child;
    }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // strictly inside (0, 1) so log() below is always safe
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform()));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * uniform();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace gradcache
