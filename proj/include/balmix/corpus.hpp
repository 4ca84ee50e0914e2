// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_CORPUS_HPP
#define BALMIX_CORPUS_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace balmix {

enum class Source { kGeneral, kBiomedical, kRadiologyTheses, kClinicalReports };

const char* to_string(Source s);
Source source_from_string(const std::string& s);  // IngestError on unknown tag

struct RawDocument {
  std::string id;
  std::string text;
  Source source = Source::kGeneral;
};

// Normalized document: single line, single spaces, no control characters,
// at least min_chars code points.
struct CleanDocument {
  std::string id;
  std::string text;
  Source source = Source::kGeneral;
  std::size_t char_count = 0;   // code points after normalization
  std::size_t token_count = 0;  // whitespace tokens
};

// A pattern stripped from raw text before newline flattening. The defaults
// cover common report artifacts: form feeds, separator runs, header-shaped
// lines. The real hospital encodings are unknown, hence configurable.
struct StripPattern {
  std::string name;
  std::string pattern;      // ECMAScript regex, multiline
  std::string replacement;  // usually " " or ""
};

std::vector<StripPattern> default_strip_patterns();

struct CleanConfig {
  std::size_t min_chars = 100;
  std::vector<StripPattern> strip_patterns = default_strip_patterns();
};

// nullopt means the document was filtered (shorter than min_chars after
// normalization; the threshold is applied post-normalization by design).
std::optional<CleanDocument> clean_document(const RawDocument& doc,
                                            const CleanConfig& cfg = {});

struct DeidRule {
  std::string name;
  std::string pattern;      // must compile as ECMAScript regex
  std::string placeholder;  // bracketed tag, e.g. "[DATE]"
  // When set, a regex match is only replaced if the validator accepts it
  // (used for the checksummed national-ID rule).
  std::function<bool(const std::string&)> validator;
};

// Shipped rules: dates, 11-digit checksummed national IDs, phone numbers,
// honorific + capitalized name.
std::vector<DeidRule> default_deid_rules();

// Validates the Turkish national-ID checksum:
//   digit10 = (7 * sum(d1,d3,d5,d7,d9) - sum(d2,d4,d6,d8)) mod 10
//   digit11 = sum(d1..d10) mod 10
bool national_id_checksum_ok(const std::string& digits);

struct DeidResult {
  CleanDocument doc;
  std::size_t replacement_count = 0;
};

// Applies rules in declared order. Idempotent on its own output.
DeidResult deidentify(const CleanDocument& doc,
                      const std::vector<DeidRule>& rules);

struct DedupResult {
  std::vector<CleanDocument> docs;  // survivors, input order
  std::size_t removed_count = 0;
};

// Exact duplicate removal on casefolded, whitespace-normalized text.
// First occurrence wins.
DedupResult dedup_corpus(const std::vector<CleanDocument>& docs);

struct ManifestRow {
  Source source = Source::kGeneral;
  std::uint64_t document_count = 0;
  std::uint64_t byte_size = 0;    // UTF-8 bytes of text
  std::uint64_t token_count = 0;  // whitespace tokens
};

struct CorpusManifest {
  std::vector<ManifestRow> rows;  // one per source present, in enum order
  std::int64_t created_unix = 0;
  std::string config_hash;
};

CorpusManifest corpus_stats(const std::vector<CleanDocument>& docs,
                            const std::string& config_hash,
                            std::int64_t created_unix);

std::string manifest_to_json(const CorpusManifest& m);

// Corpus IO. The .txt format separates documents by blank lines with one
// sentence per line; ids are derived as <stem>-<ordinal>. The .jsonl format
// carries {"id","text","source"} per line.
std::vector<RawDocument> read_txt_corpus(const std::string& path,
                                         Source source);
std::vector<RawDocument> read_jsonl_corpus(const std::string& path);
std::vector<RawDocument> read_corpus(const std::string& path, Source source);

void write_jsonl_corpus(const std::vector<CleanDocument>& docs,
                        const std::string& path);
std::vector<CleanDocument> read_clean_jsonl(const std::string& path);

}  // namespace balmix

#endif  // BALMIX_CORPUS_HPP
