#pragma once

#include <cmath>
#include <cstdint>

#include "qexp/errors.hpp"

namespace qexp {

// Counter-based deterministic RNG.
//
// Every variate is a pure function of (seed, a, b, c), so paths are
// independent addressable streams: enlarging n_paths or re-running with the
// same seed reproduces earlier draws bit for bit.  (a, b, c) conventionally
// encode (path, step, channel).
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t bits(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
        std::uint64_t h = mix(seed_ ^ 0x6a09e667f3bcc908ull);
        h = mix(h ^ a);
        h = mix(h ^ b);
        h = mix(h ^ c);
        return h;
    }

    // Uniform on the open interval (0,1).
    double uniform(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
        return (static_cast<double>(bits(a, b, c) >> 11) + 0.5) * 0x1.0p-53;
    }

    // Standard normal via inverse CDF; fully deterministic, accurate tails.
    double normal(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
        return inverse_normal_cdf(uniform(a, b, c));
    }

    // Poisson count by CDF inversion (suited to the small means used here).
    int poisson(double mean, std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
        if (mean < 0.0) throw ModelError("poisson mean must be nonnegative");
        if (mean == 0.0) return 0;
        double u = uniform(a, b, c);
        double p = std::exp(-mean);
        double cum = p;
        int k = 0;
        while (u > cum && k < 10'000) {
            ++k;
            p *= mean / k;
            cum += p;
        }
        return k;
    }

    // Acklam's rational approximation polished with one Newton step.
    static double inverse_normal_cdf(double p) {
        if (!(p > 0.0 && p < 1.0)) throw NumericsError("inverse normal cdf needs p in (0,1)");
        static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                       -2.759285104469687e+02, 1.383577518672690e+02,
                                       -3.066479806614716e+01, 2.506628277459239e+00};
        static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                       -1.556989798598866e+02, 6.680131188771972e+01,
                                       -1.328068155288572e+01};
        static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                       -2.400758277161838e+00, -2.549732539343734e+00,
                                       4.374664141464968e+00,  2.938163982698783e+00};
        static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                       2.445134137142996e+00, 3.754408661907416e+00};
        constexpr double plow = 0.02425;
        double x;
        if (p < plow) {
            double q = std::sqrt(-2.0 * std::log(p));
            x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
                ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
        } else if (p <= 1.0 - plow) {
            double q = p - 0.5;
            double r = q * q;
            x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
                (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
        } else {
            double q = std::sqrt(-2.0 * std::log1p(-p));
            x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
                ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
        }
        // Newton polish against the exact CDF.
        double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
        double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
        return x - u / (1.0 + x * u / 2.0);
    }

  private:
    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t seed_;
};

// Stream channels used across the library; keeping them in one place avoids
// accidental collisions between independent draws of one path.
namespace channel {
inline constexpr std::uint64_t brownian = 1;     // + dim index offset
inline constexpr std::uint64_t jump_count = 101;
inline constexpr std::uint64_t jump_time = 102;
inline constexpr std::uint64_t jump_mark = 103;
inline constexpr std::uint64_t sampling = 200;   // structure-check point sets
}  // namespace channel

}  // namespace qexp
