// Byte-buffer, hexadecimal, digest and small text-parsing helpers shared by
// the rest of the library.

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

namespace nvx {

using Bytes = std::vector<std::uint8_t>;

inline Bytes to_bytes(std::string_view s) {
  return Bytes(s.begin(), s.end());
}

inline std::string to_string(const Bytes& b) {
  return std::string(b.begin(), b.end());
}

// --- little-endian packing ---------------------------------------------------

inline void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }

inline void put_u16le(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32le(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64le(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_i64le(Bytes& out, std::int64_t v) {
  put_u64le(out, static_cast<std::uint64_t>(v));
}

inline void put_lp_bytes(Bytes& out, const Bytes& b) {
  put_u32le(out, static_cast<std::uint32_t>(b.size()));
  out.insert(out.end(), b.begin(), b.end());
}

inline void put_lp_string(Bytes& out, std::string_view s) {
  put_u32le(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

// --- cursor-based reads ------------------------------------------------------

struct ByteReader {
  const Bytes& data;
  std::size_t pos = 0;

  bool exhausted() const { return pos >= data.size(); }
  std::size_t remaining() const { return data.size() - pos; }

  std::uint8_t u8() {
    require(1);
    return data[pos++];
  }
  std::uint16_t u16le() {
    require(2);
    std::uint16_t v = static_cast<std::uint16_t>(data[pos]) |
                      static_cast<std::uint16_t>(data[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32le() {
    require(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64le() {
    require(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::int64_t i64le() { return static_cast<std::int64_t>(u64le()); }

  Bytes raw(std::size_t n) {
    require(n);
    Bytes out(data.begin() + static_cast<std::ptrdiff_t>(pos),
              data.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return out;
  }
  Bytes lp_bytes() { return raw(u32le()); }
  std::string lp_string() {
    Bytes b = lp_bytes();
    return std::string(b.begin(), b.end());
  }

  void require(std::size_t n) const {
    if (pos + n > data.size()) throw std::out_of_range("byte reader underrun");
  }
};

// --- hex ---------------------------------------------------------------------

inline std::string hex_encode(const Bytes& b) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(b.size() * 2);
  for (std::uint8_t c : b) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

inline std::string hex_dump(const Bytes& b, std::size_t per_line = 32) {
  std::string out;
  for (std::size_t i = 0; i < b.size(); i += per_line) {
    Bytes line(b.begin() + static_cast<std::ptrdiff_t>(i),
               b.begin() + static_cast<std::ptrdiff_t>(std::min(b.size(), i + per_line)));
    out += hex_encode(line);
    out.push_back('\n');
  }
  return out;
}

// --- digests -------------------------------------------------------------

inline Bytes sha256(const Bytes& data) {
  Bytes digest(EVP_MAX_MD_SIZE);
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(),
                 nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  digest.resize(len);
  return digest;
}

inline std::string sha256_hex(const Bytes& data) { return hex_encode(sha256(data)); }

// --- text parsing ----------------------------------------------------------

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream is{std::string(s)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t p = s.find(sep, start);
    if (p == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, p - start));
    start = p + 1;
  }
  return out;
}

// Accepts decimal or 0x-prefixed hex, with optional leading minus.
inline std::int64_t parse_int(const std::string& tok) {
  std::string t = trim(tok);
  if (t.empty()) throw std::invalid_argument("empty integer token");
  bool neg = t[0] == '-';
  std::string body = neg ? t.substr(1) : t;
  int base = 10;
  if (body.size() > 2 && body[0] == '0' && (body[1] == 'x' || body[1] == 'X')) {
    base = 16;
    body = body.substr(2);
  }
  std::size_t used = 0;
  std::uint64_t mag = std::stoull(body, &used, base);
  if (used != body.size()) throw std::invalid_argument("bad integer token: " + tok);
  std::int64_t v = static_cast<std::int64_t>(mag);
  return neg ? -v : v;
}

inline std::uint64_t parse_uint(const std::string& tok) {
  std::int64_t v = parse_int(tok);
  if (v < 0) throw std::invalid_argument("expected unsigned value: " + tok);
  return static_cast<std::uint64_t>(v);
}

// Sectioned key/value text, the format shared by the ABI descriptors, the
// policy table and scenario configs:
//
//   [section.name]
//   key = value        # comment
//   bare-line tokens
//
struct SectionedFile {
  struct Line {
    std::string text;  // comment-stripped, trimmed
    int number;        // 1-based, for diagnostics
  };
  // Section order and line order are preserved.
  std::vector<std::pair<std::string, std::vector<Line>>> sections;

  const std::vector<Line>* find(const std::string& name) const {
    for (const auto& [sec, lines] : sections)
      if (sec == name) return &lines;
    return nullptr;
  }
};

inline SectionedFile parse_sectioned_text(std::istream& in,
                                          const std::string& origin) {
  SectionedFile out;
  out.sections.emplace_back("", std::vector<SectionedFile::Line>{});
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    if (std::size_t hash = line.find('#'); hash != std::string::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                 ": malformed section header");
      out.sections.emplace_back(trim(line.substr(1, line.size() - 2)),
                                std::vector<SectionedFile::Line>{});
      continue;
    }
    out.sections.back().second.push_back({line, lineno});
  }
  return out;
}

inline SectionedFile parse_sectioned_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_sectioned_text(in, path);
}

// Splits "key = value"; returns nullopt for bare lines.
inline std::optional<std::pair<std::string, std::string>> split_kv(
    const std::string& line) {
  std::size_t eq = line.find('=');
  if (eq == std::string::npos) return std::nullopt;
  return std::make_pair(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

}  // namespace nvx
