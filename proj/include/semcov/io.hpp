#pragma once

// Small I/O helpers: CSV tokenizing, locale-independent number formatting,
// little-endian binary primitives.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "semcov/errors.hpp"

namespace semcov::io {

using Json = nlohmann::ordered_json;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Splits one CSV record; supports double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  if (*b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e;
}

inline bool parse_long(const std::string& s, long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

/// Shortest decimal that round-trips.
inline std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// Fixed-precision decimal (reports, logs).
inline std::string fmt_fixed(double v, int digits = 6) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, ptr);
}

template <typename U>
void write_le(std::ostream& out, U v) {
  static_assert(std::is_integral_v<U>);
  unsigned char b[sizeof(U)];
  for (size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U read_le(std::istream& in) {
  unsigned char b[sizeof(U)] = {};
  in.read(reinterpret_cast<char*>(b), sizeof(U));
  if (!in) throw ParseError("unexpected end of binary stream");
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return static_cast<U>(v);
}

inline void write_u32(std::ostream& out, uint32_t v) { write_le(out, v); }
inline void write_u64(std::ostream& out, uint64_t v) { write_le(out, v); }
inline void write_i32(std::ostream& out, int32_t v) { write_le(out, static_cast<uint32_t>(v)); }
inline void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<uint64_t>(v)); }
inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<uint32_t>(v)); }
inline uint32_t read_u32(std::istream& in) { return read_le<uint32_t>(in); }
inline uint64_t read_u64(std::istream& in) { return read_le<uint64_t>(in); }
inline int32_t read_i32(std::istream& in) { return static_cast<int32_t>(read_le<uint32_t>(in)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<uint64_t>(in)); }
inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_le<uint32_t>(in)); }

inline void write_string64(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string64(std::istream& in) {
  const uint64_t n = read_u64(in);
  if (n > (uint64_t{1} << 32)) throw ParseError("implausible string length in binary stream");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ParseError("unexpected end of binary stream");
  return s;
}

}  // namespace semcov::io
