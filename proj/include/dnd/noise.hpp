#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>

namespace dnd {

/**
 * Increment laws. All are symmetric with mean 0 and variance 1.
 *
 * Sub-Gaussian bound E exp(sW) <= exp(gamma s^2): Gaussian attains it with
 * gamma = 1/2; the bounded laws satisfy it by Hoeffding's lemma with
 * gamma = (width)^2 / 8, i.e. 1/2 for TwoPoint and 3/2 for UniformSqrt3.
 */
enum class NoiseLaw { Gaussian, TwoPoint, UniformSqrt3 };

std::string to_string(NoiseLaw law);
NoiseLaw parse_noise_law(const std::string& text);

struct NoiseSpec {
    NoiseLaw law = NoiseLaw::Gaussian;
    std::uint64_t seed = 0;

    friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

/// Philox4x32 with 10 rounds.
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) noexcept {
        constexpr std::uint32_t kMul0 = 0xD2511F53u;
        constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
        constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
        constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }
};

/**
 * Single-owner random stream for one Monte Carlo path.
 *
 * Output is a pure function of (seed, path_index, block) where blocks are
 * consumed in order, so a path's draws never depend on which worker runs it
 * and distinct path indices never share a cipher input.
 */
class NoiseStream {
public:
    NoiseStream(NoiseSpec spec, std::uint64_t path_index) noexcept
        : spec_(spec),
          key_{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32)},
          path_index_(path_index) {}

    const NoiseSpec& spec() const noexcept { return spec_; }
    std::uint64_t path_index() const noexcept { return path_index_; }
    std::uint64_t steps_drawn() const noexcept { return steps_; }

    /// One standardized draw W from the stream's law.
    double draw() noexcept {
        switch (spec_.law) {
            case NoiseLaw::TwoPoint: return next_bit() ? 1.0 : -1.0;
            case NoiseLaw::UniformSqrt3: return kSqrt3 * (2.0 * next_unit() - 1.0);
            case NoiseLaw::Gaussian: break;
        }
        return next_gaussian();
    }

    /// Fill out[k] = sqrt(dt) * W^k for one time step.
    void increments(double dt, std::span<double> out) noexcept {
        if (dt != last_dt_) {
            last_dt_ = dt;
            sqrt_dt_ = std::sqrt(dt);
        }
        for (double& v : out) v = sqrt_dt_ * draw();
        ++steps_;
    }

    /// Uniform on [0, 1) with 53 random bits.
    double next_unit() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_gaussian() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // Box-Muller; 1 - u keeps the log argument in (0, 1].
        const double u1 = 1.0 - next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * kPi * u2;
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

    std::uint64_t next_u64() noexcept {
        if (word_ + 2 > 4) refill();
        const std::uint64_t lo = block_[static_cast<std::size_t>(word_)];
        const std::uint64_t hi = block_[static_cast<std::size_t>(word_) + 1];
        word_ += 2;
        return lo | (hi << 32);
    }

private:
    static constexpr double kSqrt3 = 1.7320508075688772;
    static constexpr double kPi = 3.14159265358979323846;

    bool next_bit() noexcept {
        if (bits_left_ == 0) {
            bits_ = next_u64();
            bits_left_ = 64;
        }
        const bool bit = (bits_ & 1u) != 0;
        bits_ >>= 1;
        --bits_left_;
        return bit;
    }

    void refill() noexcept {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_index_),
                                      static_cast<std::uint32_t>(block_index_ >> 32),
                                      static_cast<std::uint32_t>(path_index_),
                                      static_cast<std::uint32_t>(path_index_ >> 32)};
        block_ = Philox4x32::generate(ctr, key_);
        ++block_index_;
        word_ = 0;
    }

    NoiseSpec spec_;
    Philox4x32::Key key_;
    std::uint64_t path_index_;
    std::uint64_t block_index_ = 0;
    Philox4x32::Counter block_{};
    int word_ = 4;
    std::uint64_t bits_ = 0;
    int bits_left_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
    std::uint64_t steps_ = 0;
    double last_dt_ = 0.0;
    double sqrt_dt_ = 0.0;
};

inline NoiseStream substream(const NoiseSpec& spec, std::uint64_t path_index) noexcept {
    return NoiseStream(spec, path_index);
}

}  // namespace dnd
