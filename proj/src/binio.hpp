#pragma once

// Little-endian binary helpers for the checkpoint and feature-cache files.

#include <Eigen/Dense>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "rwz/errors.hpp"

namespace rwz::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw FormatError("unexpected end of binary file");
    return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
    const auto n = get<std::uint64_t>(in);
    if (n > (1ull << 32)) throw FormatError("implausible string length in binary file");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw FormatError("unexpected end of binary file");
    return s;
}

inline void put_doubles(std::ostream& out, const double* p, std::size_t n) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void get_doubles(std::istream& in, double* p, std::size_t n) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw FormatError("unexpected end of binary file");
}

// Matrices are stored as rows, cols, then column-major values.
inline void put_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    put_doubles(out, m.data(), static_cast<std::size_t>(m.size()));
}

inline Eigen::MatrixXd get_matrix(std::istream& in) {
    const auto r = get<std::uint64_t>(in);
    const auto c = get<std::uint64_t>(in);
    if (r * c > (1ull << 34)) throw FormatError("implausible matrix size in binary file");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    get_doubles(in, m.data(), static_cast<std::size_t>(m.size()));
    return m;
}

}  // namespace rwz::binio
