#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace snapstack {

// FNV-1a, 64-bit. Used for network-spec digests and config digests; those
// digests are embedded in output files, so the function must stay stable.
class Fnv1a {
public:
    void update(const void* bytes, std::size_t n) {
        auto p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ull;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    void update_u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        update(b, 8);
    }
    void update_f64(double v) { update_u64(std::bit_cast<std::uint64_t>(v)); }

    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ull;
};

}  // namespace snapstack
