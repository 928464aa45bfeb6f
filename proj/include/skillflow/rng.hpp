#pragma once

#include <array>
#include <cstdint>

namespace skillflow {

// Philox4x32-10 counter-based generator. A stream is fully determined by
// (seed, step, slot); the draw index lives in the low counter word.
class Philox {
public:
    Philox(std::uint64_t seed, std::uint64_t step, std::uint64_t slot)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          ctr_{0, 0, static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(slot)},
          hi_{static_cast<std::uint32_t>(step >> 32) ^ (static_cast<std::uint32_t>(slot >> 32) << 16)} {
        ctr_[1] = hi_;
    }

    std::array<std::uint32_t, 4> next_block() {
        auto out = round10(ctr_, key_);
        if (++ctr_[0] == 0) ctr_[1] += 0x10000u;
        return out;
    }

    std::uint32_t next_u32() {
        if (pos_ == 4) {
            buf_ = next_block();
            pos_ = 0;
        }
        return buf_[pos_++];
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        const std::uint64_t a = next_u32() >> 5;
        const std::uint64_t b = next_u32() >> 6;
        return (static_cast<double>(a) * 67108864.0 + static_cast<double>(b)) * (1.0 / 9007199254740992.0);
    }

    static std::array<std::uint32_t, 4> round10(std::array<std::uint32_t, 4> c,
                                                std::array<std::uint32_t, 2> k) {
        constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
        constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
        for (int r = 0; r < 10; ++r) {
            const std::uint64_t p0 = std::uint64_t{M0} * c[0];
            const std::uint64_t p1 = std::uint64_t{M1} * c[2];
            c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
                 static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
            k[0] += W0;
            k[1] += W1;
        }
        return c;
    }

private:
    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> ctr_;
    std::uint32_t hi_;
    std::array<std::uint32_t, 4> buf_{};
    int pos_ = 4;
};

}  // namespace skillflow
