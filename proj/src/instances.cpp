// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#include "balmix/instances.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <json.hpp>

#include "balmix/error.hpp"
#include "balmix/rng.hpp"

namespace balmix {

void MaskingConfig::validate() const {
  if (!(mask_probability >= 0.0 && mask_probability < 1.0)) {
    throw ConfigError("mask_probability must be in [0, 1)");
  }
  if (max_predictions_per_seq < 1) {
    throw ConfigError("max_predictions_per_seq must be >= 1");
  }
  double shares = mask_token_share + random_token_share + keep_share;
  if (std::abs(shares - 1.0) > 1e-9) {
    throw ConfigError("mask/random/keep shares must sum to 1.0");
  }
  if (mask_token_share < 0 || random_token_share < 0 || keep_share < 0) {
    throw ConfigError("corruption shares must be non-negative");
  }
}

namespace {

void truncate_pair(std::vector<int>& a, std::vector<int>& b,
                   std::size_t max_tokens) {
  while (a.size() + b.size() > max_tokens) {
    if (a.size() > b.size()) {
      a.pop_back();
    } else {
      b.pop_back();
    }
  }
}

// Pair generation for the chunk at one stream position. The RNG is derived
// from (seed, position), so repeated small chunks get fresh pair splits and
// sharded execution reproduces the sequential stream.
void pairs_for_position(const std::vector<Chunk>& stream, std::size_t pos,
                        const PairConfig& cfg,
                        std::vector<SentencePair>& out,
                        std::uint64_t& skipped) {
  const Chunk& chunk = stream[pos];
  const std::size_t max_tokens = std::size_t(cfg.max_seq_len) - 3;
  Rng rng(derive_seed(derive_seed(cfg.seed, "pairs"), pos));

  std::vector<std::size_t> current;  // sentence indices into chunk
  std::size_t current_len = 0;
  auto draw_target = [&]() -> std::size_t {
    if (cfg.short_seq_prob > 0 && rng.bernoulli(cfg.short_seq_prob)) {
      return 2 + std::size_t(rng.below(std::uint64_t(max_tokens) - 1));
    }
    return max_tokens;
  };
  std::size_t target = draw_target();

  auto emit = [&] {
    if (current.empty()) return;
    // Single-sentence groups can never honor a "true next" outcome, so the
    // coin is only flipped where both labels are possible. This keeps the
    // emitted random-next share at exactly nsp_random_prob and makes
    // nsp_random_prob = 0 yield label-0 pairs exclusively.
    if (current.size() < 2) {
      ++skipped;
      current.clear();
      current_len = 0;
      target = draw_target();
      return;
    }
    std::size_t a_end = 1 + std::size_t(rng.below(current.size() - 1));
    std::vector<int> a;
    for (std::size_t i = 0; i < a_end; ++i) {
      const auto& s = chunk.sentences[current[i]];
      a.insert(a.end(), s.begin(), s.end());
    }
    bool have_continuation = a_end < current.size();
    bool want_random = rng.bernoulli(cfg.nsp_random_prob);

    std::vector<int> b;
    int label = 0;
    if (want_random) {
      if (stream.size() >= 2) {
        std::size_t partner = std::size_t(rng.below(stream.size() - 1));
        if (partner >= pos) ++partner;
        const Chunk& other = stream[partner];
        if (!other.sentences.empty()) {
          std::size_t target_b = target > a.size() ? target - a.size() : 1;
          std::size_t start =
              std::size_t(rng.below(other.sentences.size()));
          for (std::size_t i = start;
               i < other.sentences.size() && b.size() < target_b; ++i) {
            b.insert(b.end(), other.sentences[i].begin(),
                     other.sentences[i].end());
          }
          label = 1;
        }
      }
      if (b.empty() && have_continuation) {
        // no usable partner; fall back to the true continuation
        std::vector<int> rest;
        for (std::size_t i = a_end; i < current.size(); ++i) {
          const auto& s = chunk.sentences[current[i]];
          rest.insert(rest.end(), s.begin(), s.end());
        }
        b = std::move(rest);
        label = 0;
      }
    } else if (have_continuation) {
      for (std::size_t i = a_end; i < current.size(); ++i) {
        const auto& s = chunk.sentences[current[i]];
        b.insert(b.end(), s.begin(), s.end());
      }
      label = 0;
    }

    current.clear();
    current_len = 0;
    target = draw_target();

    if (a.empty() || b.empty()) {
      ++skipped;
      return;
    }
    truncate_pair(a, b, max_tokens);
    out.push_back({std::move(a), std::move(b), label});
  };

  for (std::size_t i = 0; i < chunk.sentences.size(); ++i) {
    current.push_back(i);
    current_len += chunk.sentences[i].size();
    if (i + 1 == chunk.sentences.size() || current_len >= target) emit();
  }
}

}  // namespace

std::vector<SentencePair> build_sentence_pairs(const std::vector<Chunk>& stream,
                                               const PairConfig& cfg,
                                               PairStats* stats) {
  if (cfg.max_seq_len < 5) {
    throw ConfigError("max_seq_len must be >= 5 for [CLS] A [SEP] B [SEP]");
  }
  if (cfg.nsp_random_prob < 0.0 || cfg.nsp_random_prob > 1.0) {
    throw ConfigError("nsp_random_prob must be in [0, 1]");
  }
  std::vector<SentencePair> pairs;
  std::uint64_t skipped = 0;
  for (std::size_t pos = 0; pos < stream.size(); ++pos) {
    pairs_for_position(stream, pos, cfg, pairs, skipped);
  }
  if (stats) {
    stats->emitted = pairs.size();
    stats->skipped = skipped;
  }
  return pairs;
}

PretrainInstance apply_masking(const SentencePair& pair, const Vocabulary& v,
                               const MaskingConfig& cfg, int max_seq_len,
                               std::uint64_t instance_seed) {
  const std::size_t L = std::size_t(max_seq_len);
  const std::size_t used = pair.a.size() + pair.b.size() + 3;
  if (used > L) {
    throw ConfigError("sentence pair does not fit max_seq_len");
  }

  PretrainInstance inst;
  inst.input_ids.reserve(L);
  inst.input_ids.push_back(Vocabulary::kCls);
  inst.input_ids.insert(inst.input_ids.end(), pair.a.begin(), pair.a.end());
  inst.input_ids.push_back(Vocabulary::kSep);
  const std::size_t b_start = inst.input_ids.size();
  inst.input_ids.insert(inst.input_ids.end(), pair.b.begin(), pair.b.end());
  inst.input_ids.push_back(Vocabulary::kSep);

  std::vector<std::size_t> candidates;
  candidates.reserve(used - 3);
  for (std::size_t i = 1; i + 1 < b_start; ++i) candidates.push_back(i);
  for (std::size_t i = b_start; i + 1 < used; ++i) candidates.push_back(i);

  inst.attention_mask.assign(used, 1);
  inst.segment_ids.assign(b_start, 0);
  inst.segment_ids.resize(used, 1);

  inst.input_ids.resize(L, Vocabulary::kPad);
  inst.attention_mask.resize(L, 0);
  inst.segment_ids.resize(L, 0);

  std::size_t num_to_mask = 0;
  if (cfg.mask_probability > 0.0 && !candidates.empty()) {
    auto want = std::size_t(std::max<long>(
        1, std::lround(cfg.mask_probability * double(candidates.size()))));
    num_to_mask = std::min(want, std::size_t(cfg.max_predictions_per_seq));
    num_to_mask = std::min(num_to_mask, candidates.size());
  }

  Rng rng(instance_seed);
  rng.shuffle(candidates);
  std::vector<std::size_t> chosen(candidates.begin(),
                                  candidates.begin() + long(num_to_mask));
  std::sort(chosen.begin(), chosen.end());

  const std::size_t cap = std::size_t(cfg.max_predictions_per_seq);
  inst.masked_positions.assign(cap, 0);
  inst.masked_label_ids.assign(cap, 0);
  inst.masked_weights.assign(cap, 0);
  const double mask_cut = cfg.mask_token_share;
  const double random_cut = cfg.mask_token_share + cfg.random_token_share;
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const std::size_t pos = chosen[k];
    const std::int32_t original = inst.input_ids[pos];
    double u = rng.next_unit();
    if (u < mask_cut) {
      inst.input_ids[pos] = Vocabulary::kMask;
    } else if (u < random_cut && v.size() > Vocabulary::kNumSpecials) {
      inst.input_ids[pos] = Vocabulary::kNumSpecials +
          std::int32_t(rng.below(
              std::uint64_t(v.size() - Vocabulary::kNumSpecials)));
    }
    inst.masked_positions[k] = std::int32_t(pos);
    inst.masked_label_ids[k] = original;
    inst.masked_weights[k] = 1;
  }

  inst.next_sentence_label = pair.nsp_label;
  return inst;
}

std::vector<PretrainInstance> create_instances(const std::vector<Chunk>& stream,
                                               const Vocabulary& v,
                                               const InstanceGenConfig& cfg,
                                               InstanceStats* stats) {
  cfg.masking.validate();
  if (cfg.pair.max_seq_len < 5) {
    throw ConfigError("max_seq_len must be >= 5 for [CLS] A [SEP] B [SEP]");
  }
  if (cfg.pair.nsp_random_prob < 0.0 || cfg.pair.nsp_random_prob > 1.0) {
    throw ConfigError("nsp_random_prob must be in [0, 1]");
  }
  if (cfg.dupe_factor < 1) throw ConfigError("dupe_factor must be >= 1");
  const int threads = std::max(1, cfg.threads);
  const std::uint64_t mask_seed = derive_seed(cfg.masking.seed, "masking");

  std::vector<std::vector<PretrainInstance>> shards(stream.size());
  std::vector<std::uint64_t> shard_pairs(stream.size(), 0);
  std::vector<std::uint64_t> shard_skipped(stream.size(), 0);

  auto run_shard = [&](std::size_t pos) {
    std::vector<SentencePair> pairs;
    pairs_for_position(stream, pos, cfg.pair, pairs, shard_skipped[pos]);
    shard_pairs[pos] = pairs.size();
    auto& out = shards[pos];
    out.reserve(pairs.size() * std::size_t(cfg.dupe_factor));
    // The dupe_factor differently-masked copies of a pair stay adjacent.
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      for (int d = 0; d < cfg.dupe_factor; ++d) {
        std::uint64_t inst_seed = derive_seed(
            derive_seed(derive_seed(mask_seed, pos), std::uint64_t(d)),
            j);
        out.push_back(
            apply_masking(pairs[j], v, cfg.masking, cfg.pair.max_seq_len,
                          inst_seed));
      }
    }
  };

  if (threads == 1 || stream.size() <= 1) {
    for (std::size_t pos = 0; pos < stream.size(); ++pos) run_shard(pos);
  } else {
    std::vector<std::thread> workers;
    workers.reserve(std::size_t(threads));
    for (int t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        for (std::size_t pos = std::size_t(t); pos < stream.size();
             pos += std::size_t(threads)) {
          run_shard(pos);
        }
      });
    }
    for (auto& w : workers) w.join();
  }

  std::vector<PretrainInstance> result;
  std::uint64_t pair_total = 0, skipped_total = 0;
  for (std::size_t pos = 0; pos < stream.size(); ++pos) {
    pair_total += shard_pairs[pos];
    skipped_total += shard_skipped[pos];
    result.insert(result.end(),
                  std::make_move_iterator(shards[pos].begin()),
                  std::make_move_iterator(shards[pos].end()));
  }
  if (stats) {
    stats->instances = result.size();
    stats->pairs = pair_total;
    stats->skipped_chunks = skipped_total;
  }
  return result;
}

std::string instance_to_json(const PretrainInstance& inst) {
  nlohmann::json j = {{"input_ids", inst.input_ids},
                      {"attention_mask", inst.attention_mask},
                      {"segment_ids", inst.segment_ids},
                      {"masked_positions", inst.masked_positions},
                      {"masked_label_ids", inst.masked_label_ids},
                      {"masked_weights", inst.masked_weights},
                      {"next_sentence_label", inst.next_sentence_label}};
  return j.dump();
}

}  // namespace balmix
