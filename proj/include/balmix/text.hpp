// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_TEXT_HPP
#define BALMIX_TEXT_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace balmix {

// Decodes UTF-8, rejecting overlong forms, surrogates and truncated
// sequences with IngestError. Input text is assumed to already be in NFC;
// no normalization is applied.
std::vector<char32_t> decode_utf8(std::string_view s);

std::string encode_utf8(char32_t cp);
std::string encode_utf8(const std::vector<char32_t>& cps);

// Number of code points; throws IngestError on invalid UTF-8.
std::size_t count_codepoints(std::string_view s);

inline bool is_ascii_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' ||
         cp == U'\f' || cp == U'\v';
}

// Control characters that cleaning flattens to spaces: C0, DEL, C1,
// NEL and the Unicode line/paragraph separators.
inline bool is_control(char32_t cp) {
  return cp < 0x20 || cp == 0x7f || (cp >= 0x80 && cp <= 0x9f) ||
         cp == 0x2028 || cp == 0x2029;
}

// ASCII punctuation; non-ASCII letters (including the Turkish set) are
// word characters for pre-tokenization purposes.
inline bool is_word_punct(char32_t cp) {
  return (cp >= 0x21 && cp <= 0x2f) || (cp >= 0x3a && cp <= 0x40) ||
         (cp >= 0x5b && cp <= 0x60) || (cp >= 0x7b && cp <= 0x7e);
}

// Splits on runs of ASCII whitespace.
std::vector<std::string> split_whitespace(std::string_view s);

std::size_t count_whitespace_tokens(std::string_view s);

// Lowercases ASCII plus the Turkish uppercase letters, with the Turkish
// dotted/dotless i convention. Used only to build dedup keys.
std::string casefold_tr(std::string_view s);

// Sentence boundaries for cleaned single-line text: split after . ! ? ;
// followed by a space. Falls back to the whole text when no boundary is
// found.
std::vector<std::string> split_sentences(std::string_view text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace balmix

#endif  // BALMIX_TEXT_HPP
