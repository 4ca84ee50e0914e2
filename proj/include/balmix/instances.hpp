// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_INSTANCES_HPP
#define BALMIX_INSTANCES_HPP

#include <cstdint>
#include <vector>

#include "balmix/mixing.hpp"
#include "balmix/vocab.hpp"

namespace balmix {

struct MaskingConfig {
  double mask_probability = 0.15;
  int max_predictions_per_seq = 76;
  double mask_token_share = 0.8;
  double random_token_share = 0.1;
  double keep_share = 0.1;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError on violation
};

struct PairConfig {
  int max_seq_len = 512;
  double nsp_random_prob = 0.5;
  double short_seq_prob = 0.1;
  std::uint64_t seed = 0;
};

struct SentencePair {
  std::vector<int> a;
  std::vector<int> b;
  int nsp_label = 0;  // 0 = true next, 1 = random
};

struct PairStats {
  std::uint64_t emitted = 0;
  std::uint64_t skipped = 0;  // single-sentence groups, or no usable B
};

// Builds A/B segments per chunk. B is the true continuation (label 0) or,
// with nsp_random_prob, consecutive sentences drawn from a different chunk
// (label 1). Pairs are truncated token by token from the end of whichever
// segment is currently longer until |A|+|B| <= max_seq_len-3.
std::vector<SentencePair> build_sentence_pairs(const std::vector<Chunk>& stream,
                                               const PairConfig& cfg,
                                               PairStats* stats = nullptr);

struct PretrainInstance {
  std::vector<std::int32_t> input_ids;       // max_seq_len
  std::vector<std::int32_t> attention_mask;  // max_seq_len, 0/1
  std::vector<std::int32_t> segment_ids;     // max_seq_len
  std::vector<std::int32_t> masked_positions;  // max_predictions_per_seq
  std::vector<std::int32_t> masked_label_ids;  // max_predictions_per_seq
  std::vector<std::int32_t> masked_weights;    // max_predictions_per_seq, 0/1
  std::int32_t next_sentence_label = 0;

  bool operator==(const PretrainInstance&) const = default;
};

// Masks min(cap, max(1, round(p * maskable))) positions chosen uniformly
// without replacement among the A/B content tokens ([CLS]/[SEP]/padding
// are never candidates); zero positions when p == 0 exactly. Each selected
// position becomes [MASK] / a random non-special id / stays put with the
// configured 80/10/10 shares. Deterministic per instance_seed.
PretrainInstance apply_masking(const SentencePair& pair, const Vocabulary& v,
                               const MaskingConfig& cfg, int max_seq_len,
                               std::uint64_t instance_seed);

struct InstanceGenConfig {
  PairConfig pair;
  MaskingConfig masking;
  int dupe_factor = 5;  // simultaneous default; task-adaptive uses 10
  int threads = 1;
};

struct InstanceStats {
  std::uint64_t instances = 0;
  std::uint64_t pairs = 0;
  std::uint64_t skipped_chunks = 0;
};

// Generates dupe_factor differently-masked instances per pair. Work is
// sharded by stream position with per-shard derived seeds and merged in
// stream order, so output is identical for any thread count.
std::vector<PretrainInstance> create_instances(const std::vector<Chunk>& stream,
                                               const Vocabulary& v,
                                               const InstanceGenConfig& cfg,
                                               InstanceStats* stats = nullptr);

std::string instance_to_json(const PretrainInstance& inst);

}  // namespace balmix

#endif  // BALMIX_INSTANCES_HPP
