#pragma once

#include <algorithm>
#include <cstdint>

#include <Eigen/Dense>

namespace sepmatch {

// splitmix64: tiny counter-style generator with full 64-bit state jumps.
// Chosen over std::mt19937 because its output is pinned by the algorithm
// itself, not by library implementation details, so simulation output is
// bitwise reproducible across platforms.
class SplitMix64 {
  public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform double in [0, 1) with 53 random bits
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  private:
    std::uint64_t state_;
};

// Independent substream seed for replication `index` under `root`.
// Mixing the pair through the splitmix64 scrambler decorrelates streams even
// for adjacent indices, and depends only on (root, index) so replications can
// run in any order.
inline std::uint64_t substream_seed(std::uint64_t root, std::uint64_t index) {
    SplitMix64 mixer(root ^ (0x9e3779b97f4a7c15ull * (index + 1)));
    return mixer.next();
}

// One multinomial draw of `n` households over the probability vector `p`
// (must sum to 1), by inverse-CDF lookup per household. O(n log |p|), fully
// deterministic given the generator state.
inline Eigen::VectorXd draw_multinomial(const Eigen::VectorXd& p, long n, SplitMix64& gen) {
    const Eigen::Index cells = p.size();
    Eigen::VectorXd cum(cells);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < cells; ++i) {
        acc += p[i];
        cum[i] = acc;
    }
    cum[cells - 1] = 1.0;  // guard against accumulated rounding
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(cells);
    for (long k = 0; k < n; ++k) {
        const double u = gen.next_double();
        const double* begin = cum.data();
        const double* it = std::lower_bound(begin, begin + cells, u);
        counts[it - begin] += 1.0;
    }
    return counts;
}

}  // namespace sepmatch
