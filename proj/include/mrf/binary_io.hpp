#pragma once

// Little-endian primitive readers/writers shared by every on-disk format.

#include <mrf/error.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

namespace mrf::io {

namespace detail {

template <class U>
U byteswap_if_big(U v) {
    if constexpr (std::endian::native == std::endian::big) {
        U out = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
        }
        return out;
    } else {
        return v;
    }
}

template <class T>
using uint_of = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                std::conditional_t<sizeof(T) == 2, std::uint16_t,
                std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;

}  // namespace detail

template <class T>
    requires std::is_arithmetic_v<T>
void write_le(std::ostream& os, T value) {
    using U = detail::uint_of<T>;
    U bits = detail::byteswap_if_big(std::bit_cast<U>(value));
    std::array<char, sizeof(U)> buf{};
    std::memcpy(buf.data(), &bits, sizeof(U));
    os.write(buf.data(), buf.size());
}

template <class T>
    requires std::is_arithmetic_v<T>
void write_le_array(std::ostream& os, std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size_bytes()));
    } else {
        for (T v : values) write_le(os, v);
    }
}

/// Reads one value; `field` names what is being read for the error message.
template <class T>
    requires std::is_arithmetic_v<T>
T read_le(std::istream& is, std::string_view field) {
    using U = detail::uint_of<T>;
    std::array<char, sizeof(U)> buf{};
    if (!is.read(buf.data(), buf.size())) {
        throw FormatError("truncated file while reading " + std::string(field));
    }
    U bits{};
    std::memcpy(&bits, buf.data(), sizeof(U));
    return std::bit_cast<T>(detail::byteswap_if_big(bits));
}

template <class T>
    requires std::is_arithmetic_v<T>
void read_le_array(std::istream& is, std::span<T> out, std::string_view field) {
    if constexpr (std::endian::native == std::endian::little) {
        if (!is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()))) {
            throw FormatError("truncated file while reading " + std::string(field));
        }
    } else {
        for (auto& v : out) v = read_le<T>(is, field);
    }
}

inline void write_magic(std::ostream& os, std::string_view magic) {
    os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& is, std::string_view magic) {
    std::string got(magic.size(), '\0');
    if (!is.read(got.data(), static_cast<std::streamsize>(got.size()))) {
        throw FormatError("truncated file while reading magic");
    }
    if (got != magic) throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return is;
}

inline void finish_write(std::ostream& os, const std::string& path) {
    os.flush();
    if (!os) throw IoError("write failed: " + path);
}

/// After a full parse, anything left over means the header lied about sizes.
inline void expect_eof(std::istream& is, std::string_view what) {
    if (is.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after " + std::string(what));
    }
}

}  // namespace mrf::io
