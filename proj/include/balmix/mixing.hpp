// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_MIXING_HPP
#define BALMIX_MIXING_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "balmix/corpus.hpp"
#include "balmix/vocab.hpp"

namespace balmix {

struct TokenizedDocument {
  std::string id;
  Source source = Source::kGeneral;
  std::vector<std::vector<int>> sentences;  // token ids, document order
};

// Sentence-splits and WordPiece-encodes a cleaned document. Sentences that
// tokenize to nothing are dropped.
TokenizedDocument tokenize_document(const CleanDocument& doc,
                                    const Vocabulary& v);

// The equal-size mixing unit. Sentences keep document order and a chunk
// never spans two documents. Token count stays <= the chunk target except
// for a single longer-than-target sentence, which becomes its own chunk.
struct Chunk {
  std::vector<std::vector<int>> sentences;
  Source source = Source::kGeneral;
  std::string origin_doc;
  int chunk_index = 0;  // ordinal within the origin document

  std::uint64_t token_count() const {
    std::uint64_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }
};

// Greedy sentence packing up to chunk_target_tokens. Both corpora must be
// split with the same target so the mixing units are equal-sized.
std::vector<Chunk> split_into_chunks(const std::vector<TokenizedDocument>& docs,
                                     int chunk_target_tokens);

struct MixPlan {
  std::uint64_t large_chunk_count = 0;
  std::uint64_t small_chunk_count = 0;
  std::uint64_t repeat_factor = 1;  // round(ratio * large/small), >= 1
  std::uint64_t seed = 0;
  double target_ratio = 1.0;  // small:large exposure ratio
  double tolerance = 0.05;    // declared exposure-imbalance tolerance
  double imbalance = 0.0;     // |small_exposures - large| / large

  std::string to_json() const;
  static MixPlan from_json(const std::string& json_text);
};

// Chooses the whole-number repeat factor that brings small-corpus
// exposures closest to target_ratio times the large-corpus exposures.
// Residual imbalance is recorded in the plan, not corrected.
MixPlan build_mix_plan(std::uint64_t large_chunk_count,
                       std::uint64_t small_chunk_count, std::uint64_t seed,
                       double target_ratio = 1.0, double tolerance = 0.05);

// Seeded uniform shuffle of the multiset large + small * repeat_factor.
// Identical plan (including seed) gives an identical stream.
std::vector<Chunk> interleave(const MixPlan& plan,
                              const std::vector<Chunk>& large,
                              const std::vector<Chunk>& small);

void write_chunks(const std::vector<Chunk>& chunks, const std::string& path);
std::vector<Chunk> read_chunks(const std::string& path);

}  // namespace balmix

#endif  // BALMIX_MIXING_HPP
