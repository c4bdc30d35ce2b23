#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

// Little-endian primitives shared by every binary file format in the project.
// Byte order is produced explicitly so files are portable across hosts.

namespace snapstack::wire {

inline void put_u8(std::ostream& os, std::uint8_t v) {
    os.put(static_cast<char>(v));
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline void put_f64(std::ostream& os, double v) {
    put_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline std::uint8_t get_u8(std::istream& is, const char* what) {
    const int c = is.get();
    if (c == std::istream::traits_type::eof())
        throw std::runtime_error(std::string("truncated input while reading ") + what);
    return static_cast<std::uint8_t>(c);
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
    char b[8];
    is.read(b, 8);
    if (is.gcount() != 8)
        throw std::runtime_error(std::string("truncated input while reading ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is, const char* what) {
    return std::bit_cast<double>(get_u64(is, what));
}

}  // namespace snapstack::wire
