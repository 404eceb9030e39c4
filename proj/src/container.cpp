#include "nlreg/container.hpp"
#include "nlreg/errors.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace nlreg::io {

namespace {

template <class T>
void put_le(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw FormatError("unexpected end of binary container");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
void write_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
std::uint32_t read_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return get_le<std::uint64_t>(in); }
double read_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

void write_matrices(const std::filesystem::path& path, std::span<const Matrix> matrices) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(kMatrixMagic, sizeof kMatrixMagic);
  write_u32(out, kMatrixVersion);
  write_u32(out, static_cast<std::uint32_t>(matrices.size()));
  for (const auto& m : matrices) {
    write_u64(out, static_cast<std::uint64_t>(m.rows()));
    write_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) write_f64(out, m.data()[i]);
  }
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::vector<Matrix> read_matrices(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  char magic[sizeof kMatrixMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMatrixMagic, sizeof magic) != 0)
    throw FormatError("'" + path.string() + "' is not a matrix container");
  const auto version = read_u32(in);
  if (version != kMatrixVersion)
    throw FormatError("unsupported matrix container version " + std::to_string(version));
  const auto count = read_u32(in);
  std::vector<Matrix> result;
  result.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto rows = read_u64(in);
    const auto cols = read_u64(in);
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = read_f64(in);
    result.push_back(std::move(m));
  }
  return result;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("malformed metadata in '" + path.string() + "': " + e.what());
  }
}

std::uint64_t fingerprint(const Matrix& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h ^= (word >> (8 * i)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(m.rows()));
  mix(static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) mix(std::bit_cast<std::uint64_t>(m.data()[i]));
  return h;
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace nlreg::io
