// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#include "balmix/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "balmix/error.hpp"
#include "balmix/hash.hpp"
#include "balmix/rng.hpp"
#include "balmix/text.hpp"

namespace balmix {

namespace {

const char* kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_continuation(const std::string& s) {
  return s.size() > 2 && s.compare(0, 2, Vocabulary::kContinuation) == 0;
}

std::string stripped_content(const std::string& s) {
  return is_continuation(s) ? s.substr(2) : s;
}

}  // namespace

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens,
                                   bool cased) {
  if (tokens.size() < std::size_t(kNumSpecials)) {
    throw TrainError("vocabulary smaller than the special-token block");
  }
  for (int i = 0; i < kNumSpecials; ++i) {
    if (tokens[std::size_t(i)] != kSpecials[i]) {
      throw TrainError(std::string("special token at id ") +
                       std::to_string(i) + " must be " + kSpecials[i]);
    }
  }
  Vocabulary v;
  v.cased_ = cased;
  v.index_.reserve(tokens.size() * 2);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    if (t.empty() || t == kContinuation) {
      throw TrainError("empty token at id " + std::to_string(i));
    }
    for (char c : t) {
      if (is_ascii_space(char32_t(static_cast<unsigned char>(c)))) {
        throw TrainError("token with whitespace at id " + std::to_string(i));
      }
    }
    if (!v.index_.emplace(t, int(i)).second) {
      throw TrainError("duplicate token: " + t);
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

std::optional<int> Vocabulary::id_of(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::save(const std::string& path) const {
  std::ostringstream out;
  for (const auto& t : tokens_) out << t << "\n";
  write_file(path, out.str());
}

Vocabulary Vocabulary::load(const std::string& path, bool cased) {
  std::string content = read_file(path);
  std::vector<std::string> tokens;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(std::move(tokens), cased);
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    h = fnv1a64_bytes(t.data(), t.size(), h);
    h = fnv1a64_bytes("\n", 1, h);
  }
  return h;
}

std::vector<std::string> pre_tokenize(const std::string& text) {
  std::vector<std::string> words;
  for (const std::string& tok : split_whitespace(text)) {
    std::vector<char32_t> cps = decode_utf8(tok);
    std::vector<char32_t> current;
    auto flush = [&] {
      if (!current.empty()) {
        words.push_back(encode_utf8(current));
        current.clear();
      }
    };
    for (char32_t cp : cps) {
      if (is_word_punct(cp)) {
        flush();
        words.push_back(encode_utf8(cp));
      } else {
        current.push_back(cp);
      }
    }
    flush();
  }
  return words;
}

namespace {

struct TrainerWord {
  std::vector<int> symbols;
  std::uint64_t count = 0;
};

struct PairKey {
  int left;
  int right;
  bool operator==(const PairKey&) const = default;
};

struct PairKeyHash {
  std::size_t operator()(const PairKey& k) const {
    return std::size_t(splitmix64((std::uint64_t(std::uint32_t(k.left)) << 32) |
                                  std::uint32_t(k.right)));
  }
};

// Exact score comparison: count_a/(fl_a*fr_a) vs count_b/(fl_b*fr_b)
// cross-multiplied in 128-bit integers, so no floating-point ties.
bool score_greater(std::uint64_t ca, std::uint64_t fla, std::uint64_t fra,
                   std::uint64_t cb, std::uint64_t flb, std::uint64_t frb) {
  unsigned __int128 lhs = (unsigned __int128)ca * flb * frb;
  unsigned __int128 rhs = (unsigned __int128)cb * fla * fra;
  return lhs > rhs;
}

// Tie order: stripped content first, word-initial before continuation.
bool merge_precedes(const std::string& a, const std::string& b) {
  std::string sa = stripped_content(a);
  std::string sb = stripped_content(b);
  if (sa != sb) return sa < sb;
  return !is_continuation(a) && is_continuation(b);
}

}  // namespace

Vocabulary train_wordpiece(const std::vector<CleanDocument>& corpus,
                           const VocabTrainerConfig& cfg) {
  if (cfg.min_pair_frequency < 1) {
    throw ConfigError("min_pair_frequency must be >= 1");
  }
  if (cfg.max_token_length < 1) {
    throw ConfigError("max_token_length must be >= 1");
  }

  // word frequency over the corpus, deterministic order
  std::map<std::string, std::uint64_t> word_counts;
  for (const auto& doc : corpus) {
    for (const auto& w : pre_tokenize(doc.text)) {
      if (count_codepoints(w) > std::size_t(cfg.max_token_length)) continue;
      word_counts[w] += 1;
    }
  }
  if (word_counts.empty()) {
    throw TrainError("empty corpus after pre-tokenization");
  }

  // symbol table: specials first, then the alphabet in both forms
  std::vector<std::string> symbols;
  std::unordered_map<std::string, int> symbol_ids;
  auto intern = [&](const std::string& s) {
    auto it = symbol_ids.find(s);
    if (it != symbol_ids.end()) return it->second;
    int id = int(symbols.size());
    symbols.push_back(s);
    symbol_ids.emplace(s, id);
    return id;
  };
  for (int i = 0; i < Vocabulary::kNumSpecials; ++i) intern(kSpecials[i]);

  std::map<std::string, bool> alphabet;  // content -> seen as word-initial
  std::map<std::string, bool> alphabet_cont;
  for (const auto& [word, count] : word_counts) {
    std::vector<char32_t> cps = decode_utf8(word);
    for (std::size_t i = 0; i < cps.size(); ++i) {
      std::string ch = encode_utf8(cps[i]);
      if (i == 0) {
        alphabet[ch] = true;
      } else {
        alphabet_cont[ch] = true;
      }
    }
  }
  // sorted by content, word-initial form before continuation form
  {
    std::vector<std::string> all_chars;
    for (const auto& [ch, _] : alphabet) all_chars.push_back(ch);
    for (const auto& [ch, _] : alphabet_cont) {
      if (!alphabet.count(ch)) all_chars.push_back(ch);
    }
    std::sort(all_chars.begin(), all_chars.end());
    for (const auto& ch : all_chars) {
      if (alphabet.count(ch)) intern(ch);
      if (alphabet_cont.count(ch)) intern(Vocabulary::kContinuation + ch);
    }
  }

  if (cfg.vocab_size <= int(symbols.size())) {
    throw TrainError("vocab_size " + std::to_string(cfg.vocab_size) +
                     " not larger than specials plus alphabet (" +
                     std::to_string(symbols.size()) + ")");
  }

  std::vector<TrainerWord> words;
  words.reserve(word_counts.size());
  for (const auto& [word, count] : word_counts) {
    TrainerWord tw;
    tw.count = count;
    std::vector<char32_t> cps = decode_utf8(word);
    for (std::size_t i = 0; i < cps.size(); ++i) {
      std::string ch = encode_utf8(cps[i]);
      tw.symbols.push_back(
          symbol_ids.at(i == 0 ? ch : Vocabulary::kContinuation + ch));
    }
    words.push_back(std::move(tw));
  }

  while (int(symbols.size()) < cfg.vocab_size) {
    std::vector<std::uint64_t> symbol_freq(symbols.size(), 0);
    std::unordered_map<PairKey, std::uint64_t, PairKeyHash> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        symbol_freq[std::size_t(w.symbols[i])] += w.count;
        if (i + 1 < w.symbols.size()) {
          pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
        }
      }
    }

    bool found = false;
    PairKey best{};
    std::string best_merged;
    std::uint64_t best_count = 0, best_fl = 1, best_fr = 1;
    for (const auto& [pair, count] : pair_counts) {
      if (count < cfg.min_pair_frequency) continue;
      const std::string& left = symbols[std::size_t(pair.left)];
      const std::string& right = symbols[std::size_t(pair.right)];
      std::string merged = left + stripped_content(right);
      if (count_codepoints(stripped_content(merged)) >
          std::size_t(cfg.max_token_length)) {
        continue;
      }
      std::uint64_t fl = symbol_freq[std::size_t(pair.left)];
      std::uint64_t fr = symbol_freq[std::size_t(pair.right)];
      if (!found ||
          score_greater(count, fl, fr, best_count, best_fl, best_fr) ||
          (!score_greater(best_count, best_fl, best_fr, count, fl, fr) &&
           merge_precedes(merged, best_merged))) {
        found = true;
        best = pair;
        best_merged = merged;
        best_count = count;
        best_fl = fl;
        best_fr = fr;
      }
    }
    if (!found) break;

    int merged_id = intern(best_merged);
    for (auto& w : words) {
      std::vector<int>& s = w.symbols;
      std::size_t write = 0;
      for (std::size_t read = 0; read < s.size(); ++read) {
        if (read + 1 < s.size() && s[read] == best.left &&
            s[read + 1] == best.right) {
          s[write++] = merged_id;
          ++read;
        } else {
          s[write++] = s[read];
        }
      }
      s.resize(write);
    }
  }

  return Vocabulary::from_tokens(std::move(symbols), cfg.cased);
}

std::vector<std::string> tokenize(const std::string& text,
                                  const Vocabulary& v,
                                  std::size_t max_word_chars) {
  std::vector<std::string> out;
  for (const std::string& word : pre_tokenize(text)) {
    std::vector<char32_t> cps = decode_utf8(word);
    if (cps.size() > max_word_chars) {
      out.emplace_back(v.token(Vocabulary::kUnk));
      continue;
    }
    std::vector<std::string> pieces;
    std::size_t start = 0;
    bool bad = false;
    while (start < cps.size()) {
      std::size_t end = cps.size();
      std::string match;
      while (end > start) {
        std::string candidate =
            encode_utf8(std::vector<char32_t>(cps.begin() + long(start),
                                              cps.begin() + long(end)));
        if (start > 0) candidate = Vocabulary::kContinuation + candidate;
        if (v.id_of(candidate)) {
          match = std::move(candidate);
          break;
        }
        --end;
      }
      if (match.empty()) {
        bad = true;
        break;
      }
      pieces.push_back(std::move(match));
      start = end;
    }
    if (bad) {
      out.emplace_back(v.token(Vocabulary::kUnk));
    } else {
      for (auto& p : pieces) out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<int> encode_ids(const std::vector<std::string>& tokens,
                            const Vocabulary& v) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto id = v.id_of(t);
    if (!id) throw EncodeError("token not in vocabulary: " + t);
    ids.push_back(*id);
  }
  return ids;
}

std::vector<std::string> decode(const std::vector<int>& ids,
                                const Vocabulary& v) {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= v.size()) {
      throw EncodeError("id out of range: " + std::to_string(id));
    }
    tokens.push_back(v.token(id));
  }
  return tokens;
}

FertilityReport fertility(const std::vector<CleanDocument>& corpus,
                          const Vocabulary& v) {
  FertilityReport r;
  const std::string unk = v.token(Vocabulary::kUnk);
  for (const auto& doc : corpus) {
    r.words += count_whitespace_tokens(doc.text);
    for (const auto& tok : tokenize(doc.text, v)) {
      r.subwords += 1;
      if (tok == unk) r.unks += 1;
    }
  }
  if (r.words > 0) r.fertility = double(r.subwords) / double(r.words);
  if (r.subwords > 0) r.unk_rate = double(r.unks) / double(r.subwords);
  return r;
}

AmplifiedCorpus amplified_corpus(const std::vector<CleanDocument>& large,
                                 const std::vector<CleanDocument>& small) {
  if (small.empty()) {
    throw MixError("amplified vocabulary requires a domain corpus");
  }
  std::uint64_t large_tokens = 0, small_tokens = 0;
  for (const auto& d : large) large_tokens += count_whitespace_tokens(d.text);
  for (const auto& d : small) small_tokens += count_whitespace_tokens(d.text);
  AmplifiedCorpus out;
  out.repeat_factor = 1;
  if (small_tokens > 0 && large_tokens > small_tokens) {
    out.repeat_factor = std::uint64_t(
        std::llround(double(large_tokens) / double(small_tokens)));
    if (out.repeat_factor < 1) out.repeat_factor = 1;
  }
  out.docs = large;
  for (std::uint64_t rep = 0; rep < out.repeat_factor; ++rep) {
    for (const auto& d : small) {
      CleanDocument copy = d;
      if (rep > 0) copy.id += "~dup" + std::to_string(rep);
      out.docs.push_back(std::move(copy));
    }
  }
  return out;
}

}  // namespace balmix
