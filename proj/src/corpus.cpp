// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#include "balmix/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "balmix/error.hpp"
#include "balmix/text.hpp"

namespace balmix {

const char* to_string(Source s) {
  switch (s) {
    case Source::kGeneral: return "general";
    case Source::kBiomedical: return "biomedical";
    case Source::kRadiologyTheses: return "radiology-theses";
    case Source::kClinicalReports: return "clinical-reports";
  }
  return "general";
}

Source source_from_string(const std::string& s) {
  if (s == "general") return Source::kGeneral;
  if (s == "biomedical") return Source::kBiomedical;
  if (s == "radiology-theses") return Source::kRadiologyTheses;
  if (s == "clinical-reports") return Source::kClinicalReports;
  throw IngestError("unknown source tag: " + s);
}

std::vector<StripPattern> default_strip_patterns() {
  return {
      {"header-line", "^[A-Z][A-Z0-9_ ]{2,}:[ \\t]*$", ""},
      {"asterisk-run", "\\*{3,}", " "},
      {"dash-run", "-{4,}", " "},
      {"underscore-run", "_{4,}", " "},
      {"equals-run", "={3,}", " "},
  };
}

namespace {

std::string apply_strip_patterns(const std::string& text,
                                 const std::vector<StripPattern>& patterns) {
  std::string out = text;
  for (const auto& p : patterns) {
    std::regex re;
    try {
      re.assign(p.pattern, std::regex::ECMAScript | std::regex::multiline);
    } catch (const std::regex_error& e) {
      throw ConfigError("strip pattern '" + p.name +
                        "' does not compile: " + e.what());
    }
    out = std::regex_replace(out, re, p.replacement);
  }
  return out;
}

// Flattens controls to spaces, collapses space runs, trims.
std::string normalize_spacing(const std::string& text) {
  std::vector<char32_t> cps = decode_utf8(text);
  std::vector<char32_t> out;
  out.reserve(cps.size());
  for (char32_t cp : cps) {
    if (is_control(cp) || cp == U' ') cp = U' ';
    if (cp == U' ' && (out.empty() || out.back() == U' ')) continue;
    out.push_back(cp);
  }
  while (!out.empty() && out.back() == U' ') out.pop_back();
  return encode_utf8(out);
}

}  // namespace

std::optional<CleanDocument> clean_document(const RawDocument& doc,
                                            const CleanConfig& cfg) {
  // decode first so invalid input fails as IngestError before any regex
  decode_utf8(doc.text);
  std::string stripped = apply_strip_patterns(doc.text, cfg.strip_patterns);
  std::string text = normalize_spacing(stripped);
  std::size_t chars = count_codepoints(text);
  if (chars < cfg.min_chars) return std::nullopt;
  CleanDocument out;
  out.id = doc.id;
  out.text = std::move(text);
  out.source = doc.source;
  out.char_count = chars;
  out.token_count = count_whitespace_tokens(out.text);
  return out;
}

bool national_id_checksum_ok(const std::string& digits) {
  if (digits.size() != 11) return false;
  int d[11];
  for (int i = 0; i < 11; ++i) {
    char c = digits[std::size_t(i)];
    if (c < '0' || c > '9') return false;
    d[i] = c - '0';
  }
  int sum_odd = d[0] + d[2] + d[4] + d[6] + d[8];
  int sum_even = d[1] + d[3] + d[5] + d[7];
  int digit10 = ((7 * sum_odd - sum_even) % 10 + 10) % 10;
  int sum_first10 = 0;
  for (int i = 0; i < 10; ++i) sum_first10 += d[i];
  int digit11 = sum_first10 % 10;
  return d[9] == digit10 && d[10] == digit11;
}

std::vector<DeidRule> default_deid_rules() {
  std::vector<DeidRule> rules;
  rules.push_back({"date",
                   "\\b(\\d{1,2}[./]\\d{1,2}[./]\\d{4}|\\d{4}-\\d{2}-\\d{2})\\b",
                   "[DATE]", nullptr});
  rules.push_back(
      {"national-id", "\\b\\d{11}\\b", "[ID]", national_id_checksum_ok});
  rules.push_back({"phone",
                   "\\b0[\\s(]*\\d{3}[\\s)]*\\d{3}[\\s-]*\\d{2}[\\s-]*\\d{2}\\b",
                   "[PHONE]", nullptr});
  rules.push_back({"honorific-name",
                   "\\b(Dr|Prof|Doç|Uzm|Op)\\.? [^\\s.,;:()]+",
                   "[NAME]", nullptr});
  return rules;
}

DeidResult deidentify(const CleanDocument& doc,
                      const std::vector<DeidRule>& rules) {
  DeidResult result;
  result.doc = doc;
  for (const auto& rule : rules) {
    std::regex re;
    try {
      re.assign(rule.pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw ConfigError("deid rule '" + rule.name +
                        "' does not compile: " + e.what());
    }
    const std::string& in = result.doc.text;
    std::string out;
    out.reserve(in.size());
    std::size_t last = 0;
    for (auto it = std::sregex_iterator(in.begin(), in.end(), re);
         it != std::sregex_iterator(); ++it) {
      const std::smatch& m = *it;
      if (rule.validator && !rule.validator(m.str())) continue;
      out.append(in, last, std::size_t(m.position()) - last);
      out.append(rule.placeholder);
      last = std::size_t(m.position()) + std::size_t(m.length());
      ++result.replacement_count;
    }
    out.append(in, last, in.size() - last);
    result.doc.text = std::move(out);
  }
  result.doc.char_count = count_codepoints(result.doc.text);
  result.doc.token_count = count_whitespace_tokens(result.doc.text);
  return result;
}

namespace {

std::string dedup_key(const std::string& text) {
  std::string folded = casefold_tr(text);
  std::vector<std::string> tokens = split_whitespace(folded);
  std::string key;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) key += ' ';
    key += tokens[i];
  }
  return key;
}

}  // namespace

DedupResult dedup_corpus(const std::vector<CleanDocument>& docs) {
  DedupResult result;
  std::unordered_set<std::string> seen;
  seen.reserve(docs.size() * 2);
  for (const auto& doc : docs) {
    if (seen.insert(dedup_key(doc.text)).second) {
      result.docs.push_back(doc);
    } else {
      ++result.removed_count;
    }
  }
  return result;
}

CorpusManifest corpus_stats(const std::vector<CleanDocument>& docs,
                            const std::string& config_hash,
                            std::int64_t created_unix) {
  CorpusManifest m;
  m.config_hash = config_hash;
  m.created_unix = created_unix;
  static const Source kOrder[] = {Source::kGeneral, Source::kBiomedical,
                                  Source::kRadiologyTheses,
                                  Source::kClinicalReports};
  for (Source s : kOrder) {
    ManifestRow row;
    row.source = s;
    for (const auto& doc : docs) {
      if (doc.source != s) continue;
      row.document_count += 1;
      row.byte_size += doc.text.size();
      row.token_count += count_whitespace_tokens(doc.text);
    }
    if (row.document_count > 0) m.rows.push_back(row);
  }
  return m;
}

std::string manifest_to_json(const CorpusManifest& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : m.rows) {
    rows.push_back({{"source", to_string(r.source)},
                    {"document_count", r.document_count},
                    {"byte_size", r.byte_size},
                    {"token_count", r.token_count}});
  }
  nlohmann::json j = {{"created_unix", m.created_unix},
                      {"config_hash", m.config_hash},
                      {"sources", rows}};
  return j.dump(2) + "\n";
}

std::vector<RawDocument> read_txt_corpus(const std::string& path,
                                         Source source) {
  std::string content = read_file(path);
  std::string stem = path;
  if (auto slash = stem.find_last_of('/'); slash != std::string::npos) {
    stem = stem.substr(slash + 1);
  }
  if (auto dot = stem.find_last_of('.'); dot != std::string::npos) {
    stem = stem.substr(0, dot);
  }

  std::vector<RawDocument> docs;
  std::istringstream in(content);
  std::string line;
  std::string current;
  auto flush = [&] {
    if (current.empty()) return;
    RawDocument doc;
    doc.id = stem + "-" + std::to_string(docs.size());
    doc.text = current;
    doc.source = source;
    docs.push_back(std::move(doc));
    current.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool blank = line.find_first_not_of(" \t") == std::string::npos;
    if (blank) {
      flush();
    } else {
      if (!current.empty()) current += '\n';
      current += line;
    }
  }
  flush();
  return docs;
}

std::vector<RawDocument> read_jsonl_corpus(const std::string& path) {
  std::string content = read_file(path);
  std::vector<RawDocument> docs;
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(path + ":" + std::to_string(lineno) +
                        ": bad JSON: " + e.what());
    }
    if (!j.contains("id") || !j.contains("text") || !j.contains("source")) {
      throw IngestError(path + ":" + std::to_string(lineno) +
                        ": expected fields id, text, source");
    }
    RawDocument doc;
    doc.id = j["id"].get<std::string>();
    doc.text = j["text"].get<std::string>();
    doc.source = source_from_string(j["source"].get<std::string>());
    docs.push_back(std::move(doc));
  }
  std::unordered_set<std::string> ids;
  for (const auto& d : docs) {
    if (!ids.insert(d.id).second) {
      throw IngestError(path + ": duplicate document id " + d.id);
    }
  }
  return docs;
}

std::vector<RawDocument> read_corpus(const std::string& path, Source source) {
  if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl") {
    return read_jsonl_corpus(path);
  }
  return read_txt_corpus(path, source);
}

void write_jsonl_corpus(const std::vector<CleanDocument>& docs,
                        const std::string& path) {
  std::ostringstream out;
  for (const auto& doc : docs) {
    nlohmann::json j = {{"id", doc.id},
                        {"source", to_string(doc.source)},
                        {"text", doc.text}};
    out << j.dump() << "\n";
  }
  write_file(path, out.str());
}

std::vector<CleanDocument> read_clean_jsonl(const std::string& path) {
  std::vector<RawDocument> raw = read_jsonl_corpus(path);
  std::vector<CleanDocument> docs;
  docs.reserve(raw.size());
  for (auto& r : raw) {
    CleanDocument d;
    d.id = std::move(r.id);
    d.text = std::move(r.text);
    d.source = r.source;
    d.char_count = count_codepoints(d.text);
    d.token_count = count_whitespace_tokens(d.text);
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace balmix
