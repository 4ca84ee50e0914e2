// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#include "balmix/text.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "balmix/error.hpp"

namespace balmix {

std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    unsigned char b0 = static_cast<unsigned char>(s[i]);
    char32_t cp = 0;
    std::size_t len = 0;
    if (b0 < 0x80) {
      cp = b0;
      len = 1;
    } else if ((b0 & 0xe0) == 0xc0) {
      cp = b0 & 0x1f;
      len = 2;
    } else if ((b0 & 0xf0) == 0xe0) {
      cp = b0 & 0x0f;
      len = 3;
    } else if ((b0 & 0xf8) == 0xf0) {
      cp = b0 & 0x07;
      len = 4;
    } else {
      throw IngestError("invalid UTF-8 lead byte at offset " +
                        std::to_string(i));
    }
    if (i + len > n) {
      throw IngestError("truncated UTF-8 sequence at offset " +
                        std::to_string(i));
    }
    for (std::size_t k = 1; k < len; ++k) {
      unsigned char b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xc0) != 0x80) {
        throw IngestError("invalid UTF-8 continuation at offset " +
                          std::to_string(i + k));
      }
      cp = (cp << 6) | (b & 0x3f);
    }
    static const char32_t kMinByLen[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (len > 1 && cp < kMinByLen[len]) {
      throw IngestError("overlong UTF-8 sequence at offset " +
                        std::to_string(i));
    }
    if (cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) {
      throw IngestError("invalid code point at offset " + std::to_string(i));
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode_utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += char(cp);
  } else if (cp < 0x800) {
    out += char(0xc0 | (cp >> 6));
    out += char(0x80 | (cp & 0x3f));
  } else if (cp < 0x10000) {
    out += char(0xe0 | (cp >> 12));
    out += char(0x80 | ((cp >> 6) & 0x3f));
    out += char(0x80 | (cp & 0x3f));
  } else {
    out += char(0xf0 | (cp >> 18));
    out += char(0x80 | ((cp >> 12) & 0x3f));
    out += char(0x80 | ((cp >> 6) & 0x3f));
    out += char(0x80 | (cp & 0x3f));
  }
  return out;
}

std::string encode_utf8(const std::vector<char32_t>& cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) out += encode_utf8(cp);
  return out;
}

std::size_t count_codepoints(std::string_view s) {
  return decode_utf8(s).size();
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_ascii_space(char32_t(
                               static_cast<unsigned char>(s[i])))) {
      ++i;
    }
    std::size_t start = i;
    while (i < s.size() && !is_ascii_space(char32_t(
                               static_cast<unsigned char>(s[i])))) {
      ++i;
    }
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

std::size_t count_whitespace_tokens(std::string_view s) {
  std::size_t count = 0;
  bool in_token = false;
  for (char c : s) {
    bool space = is_ascii_space(char32_t(static_cast<unsigned char>(c)));
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

std::string casefold_tr(std::string_view s) {
  static const std::unordered_map<char32_t, char32_t> kTurkish = {
      {U'Ç', U'ç'}, {U'Ğ', U'ğ'}, {U'İ', U'i'}, {U'I', U'ı'},
      {U'Ö', U'ö'}, {U'Ş', U'ş'}, {U'Ü', U'ü'},
  };
  std::vector<char32_t> cps = decode_utf8(s);
  for (char32_t& cp : cps) {
    if (cp >= U'A' && cp <= U'Z' && cp != U'I') {
      cp = cp - U'A' + U'a';
    } else {
      auto it = kTurkish.find(cp);
      if (it != kTurkish.end()) cp = it->second;
    }
  }
  return encode_utf8(cps);
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    bool boundary = (c == '.' || c == '!' || c == '?' || c == ';') &&
                    i + 1 < text.size() && text[i + 1] == ' ';
    if (boundary) {
      out.emplace_back(text.substr(start, i - start + 1));
      start = i + 2;
      i += 1;
    }
  }
  if (start < text.size()) out.emplace_back(text.substr(start));
  if (out.empty() && !text.empty()) out.emplace_back(text);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path);
  out.write(content.data(), std::streamsize(content.size()));
}

}  // namespace balmix
