#pragma once

#include "nlreg/core.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

namespace nlreg::io {

// Little-endian primitives, independent of host byte order.
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);

/// Flat matrix container, see docs/FORMATS.md:
///   "NLREGMAT" | u32 version | u32 count | { u64 rows | u64 cols | f64[rows*cols] column-major }*
inline constexpr char kMatrixMagic[8] = {'N', 'L', 'R', 'E', 'G', 'M', 'A', 'T'};
inline constexpr std::uint32_t kMatrixVersion = 1;

void write_matrices(const std::filesystem::path& path, std::span<const Matrix> matrices);
std::vector<Matrix> read_matrices(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

/// FNV-1a over the little-endian bytes of a matrix; used to tie checkpoints to
/// the dictionary they were trained against.
std::uint64_t fingerprint(const Matrix& m);

/// Fixed-format rendering used by every CSV writer, so reruns are byte-identical.
std::string format_real(double v);

}  // namespace nlreg::io
