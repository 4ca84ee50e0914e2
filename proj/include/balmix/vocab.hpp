// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_VOCAB_HPP
#define BALMIX_VOCAB_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "balmix/corpus.hpp"

namespace balmix {

// Ordered subword list with BERT-style specials at fixed ids and "##"
// marking continuation pieces. Immutable once built; tokenization is a
// pure function over it.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;
  static constexpr const char* kContinuation = "##";

  // Validates the invariants: specials at ids 0-4, unique non-empty tokens,
  // no embedded whitespace. Throws TrainError on violation.
  static Vocabulary from_tokens(std::vector<std::string> tokens,
                                bool cased = true);

  int size() const { return int(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(std::size_t(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<int> id_of(const std::string& token) const;
  bool cased() const { return cased_; }

  // One token per line, line number = id.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path, bool cased = true);

  // FNV-1a over the serialized token list; embedded in instance and
  // checkpoint sidecars so stages can detect vocabulary mismatches.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  bool cased_ = true;
};

struct VocabTrainerConfig {
  int vocab_size = 32000;
  std::uint64_t min_pair_frequency = 2;
  int max_token_length = 100;  // merges beyond this length are not formed
  bool cased = true;           // no lowercasing by default (dotted/dotless i)
};

// Whitespace split with ASCII punctuation broken out as single-char words.
std::vector<std::string> pre_tokenize(const std::string& text);

// Iterative pair merging maximizing freq(pair) / (freq(left)*freq(right)),
// seeded with single characters in word-initial and ##-continuation form.
// Deterministic: score ties are broken by the merged token's content
// (continuation prefix stripped), word-initial pieces first.
Vocabulary train_wordpiece(const std::vector<CleanDocument>& corpus,
                           const VocabTrainerConfig& cfg);

// Greedy longest-match-first within each pre-token. A word with an
// unmatchable remainder, or longer than max_word_chars code points,
// becomes a single [UNK].
std::vector<std::string> tokenize(const std::string& text,
                                  const Vocabulary& v,
                                  std::size_t max_word_chars = 100);

std::vector<int> encode_ids(const std::vector<std::string>& tokens,
                            const Vocabulary& v);
std::vector<std::string> decode(const std::vector<int>& ids,
                                const Vocabulary& v);

struct FertilityReport {
  double fertility = 0.0;  // subword tokens per whitespace word
  double unk_rate = 0.0;   // [UNK] share of emitted subwords
  std::uint64_t words = 0;
  std::uint64_t subwords = 0;
  std::uint64_t unks = 0;
};

FertilityReport fertility(const std::vector<CleanDocument>& corpus,
                          const Vocabulary& v);

// Text-level balanced up-sampling for amplified-vocabulary training: the
// small corpus is repeated round(large_tokens / small_tokens) times (at
// least once) and concatenated with the large corpus. Mirrors the chunk
// mixing arithmetic before any vocabulary exists to tokenize with.
struct AmplifiedCorpus {
  std::vector<CleanDocument> docs;
  std::uint64_t repeat_factor = 1;
};

AmplifiedCorpus amplified_corpus(const std::vector<CleanDocument>& large,
                                 const std::vector<CleanDocument>& small);

}  // namespace balmix

#endif  // BALMIX_VOCAB_HPP
