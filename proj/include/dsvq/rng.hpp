#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dsvq/matrix.hpp"

namespace dsvq {

// Seeded generator with a fixed Gaussian recipe. std::normal_distribution is
// not pinned across standard library versions, so Box-Muller is spelled out
// here to keep seeded runs byte-reproducible on any toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double mean = 0.0,
                           double stddev = 1.0) {
        Matrix m(rows, cols);
        for (double& x : m.data) x = normal(mean, stddev);
        return m;
    }

    std::vector<double> gaussian_vector(std::size_t n, double mean = 0.0, double stddev = 1.0) {
        std::vector<double> v(n);
        for (double& x : v) x = normal(mean, stddev);
        return v;
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace dsvq
