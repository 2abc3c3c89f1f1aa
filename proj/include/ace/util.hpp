#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ace/errors.hpp"
#include "ace/rational.hpp"

namespace ace {

using json = nlohmann::json;

/// Reads a rational from either a JSON number (via its shortest decimal
/// round-trip, so 0.8 parses as exactly 4/5) or a "num/den" string.
inline Rational rational_from_json(const json& j) {
    if (j.is_string()) return Rational::parse(j.get<std::string>());
    if (j.is_number_integer()) return Rational(j.get<long long>());
    if (j.is_number()) return Rational::parse(j.dump());
    throw ParseError("expected number or fraction string");
}

inline json rational_to_json(const Rational& r) {
    std::string dec = r.to_decimal_string();
    if (dec.find('/') != std::string::npos) return dec;  // non-terminating: keep exact
    return json::parse(dec);
}

inline std::string base64_encode(std::string_view data) {
    static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 3 <= data.size()) {
        uint32_t v = uint8_t(data[i]) << 16 | uint8_t(data[i + 1]) << 8 | uint8_t(data[i + 2]);
        out += table[v >> 18];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += table[v & 63];
        i += 3;
    }
    size_t rest = data.size() - i;
    if (rest == 1) {
        uint32_t v = uint8_t(data[i]) << 16;
        out += table[v >> 18];
        out += table[(v >> 12) & 63];
        out += "==";
    } else if (rest == 2) {
        uint32_t v = uint8_t(data[i]) << 16 | uint8_t(data[i + 1]) << 8;
        out += table[v >> 18];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

inline std::string base64_decode(std::string_view text) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        int v = value_of(c);
        if (v < 0) throw ParseError("invalid base64 payload");
        acc = acc << 6 | uint32_t(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += char((acc >> bits) & 0xff);
        }
    }
    return out;
}

/// Strict UTF-8 check (rejects overlong forms and surrogates, matching what
/// the JSON serializer will accept).
inline bool is_valid_utf8(std::string_view s) {
    size_t i = 0;
    while (i < s.size()) {
        uint8_t c = s[i];
        size_t extra;
        uint32_t cp;
        if (c < 0x80) {
            extra = 0;
            cp = c;
        } else if ((c >> 5) == 0x6) {
            extra = 1;
            cp = c & 0x1f;
        } else if ((c >> 4) == 0xe) {
            extra = 2;
            cp = c & 0x0f;
        } else if ((c >> 3) == 0x1e) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (extra > 0 && i + extra >= s.size()) return false;
        for (size_t k = 1; k <= extra; ++k) {
            uint8_t cc = s[i + k];
            if ((cc >> 6) != 0x2) return false;
            cp = cp << 6 | (cc & 0x3f);
        }
        if (extra == 1 && cp < 0x80) return false;
        if (extra == 2 && cp < 0x800) return false;
        if (extra == 3 && cp < 0x10000) return false;
        if (cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return false;
        i += extra + 1;
    }
    return true;
}

/// Number of whitespace-delimited tokens; the generator-agnostic fallback
/// for token lengths when no tokenizer count is reported.
inline long long whitespace_token_count(std::string_view text) {
    long long count = 0;
    bool in_token = false;
    for (char c : text) {
        bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (!ws && !in_token) ++count;
        in_token = !ws;
    }
    return count;
}

inline uint64_t fnv1a64(std::string_view data, uint64_t seed = 0xcbf29ce484222325ull) {
    uint64_t h = seed;
    for (char c : data) {
        h ^= uint8_t(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Deterministic seed derivation for per-(problem, role, round, sample) RNG streams.
inline uint64_t mix_seed(uint64_t seed, std::string_view tag) {
    uint64_t h = fnv1a64(tag, seed ^ 0x9e3779b97f4a7c15ull);
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    return h;
}

inline std::string to_hex(uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("short write to " + path.string());
}

/// Write via sibling temp file + rename, so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    write_file(tmp, data);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string());
}

/// Stores a byte string under `key` as plain UTF-8 when possible, otherwise
/// base64 under `key + "_b64"`. Test payloads must survive byte-exactly.
inline void set_bytes(json& j, const std::string& key, std::string_view value) {
    if (is_valid_utf8(value)) {
        j[key] = std::string(value);
    } else {
        j[key + "_b64"] = base64_encode(value);
    }
}

inline std::string get_bytes(const json& j, const std::string& key) {
    if (j.contains(key)) return j.at(key).get<std::string>();
    if (j.contains(key + "_b64")) return base64_decode(j.at(key + "_b64").get<std::string>());
    throw ParseError("missing field: " + key);
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::string text = read_file(path);
    std::vector<json> out;
    size_t start = 0;
    int line_no = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        ++line_no;
        std::string_view line(text.data() + start, end - start);
        if (!line.empty()) {
            try {
                out.push_back(json::parse(line));
            } catch (const json::exception& e) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        start = end + 1;
    }
    return out;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

}  // namespace ace
