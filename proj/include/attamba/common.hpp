#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace attamba {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// catch one type; the subclasses exist so tests can assert on the cause.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct MaskError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// Multiply-accumulate counters, filled in by the kernels when a caller passes
// one through. Attention counts only the score/value pairs that are actually
// computed under the mask.
struct FlopCounter {
    long long matmul_macs = 0;
    long long attn_score_macs = 0;
    long long attn_av_macs = 0;
    long long ssm_macs = 0;

    long long attention_macs() const { return attn_score_macs + attn_av_macs; }
    long long total_macs() const {
        return matmul_macs + attn_score_macs + attn_av_macs + ssm_macs;
    }
    void reset() { *this = FlopCounter{}; }
};

// Deterministic RNG. mt19937_64 is pinned by the standard; the distributions
// are hand-rolled so streams are reproducible across standard libraries.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    double uniform() {  // [0, 1)
        return (gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    // Normal(0, std) resampled until within two standard deviations.
    double trunc_normal(double std_dev) {
        while (true) {
            double v = normal() * std_dev;
            if (std::fabs(v) <= 2.0 * std_dev) return v;
        }
    }

    uint64_t below(uint64_t n) {  // uniform in [0, n)
        if (n == 0) throw ContractError("Rng::below: n must be positive");
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return v % n;
    }

    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace attamba
