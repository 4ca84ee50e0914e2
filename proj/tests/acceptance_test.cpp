// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

// Release gate. Each criterion below runs against a fresh synthetic setup
// and prints exactly one PASS/FAIL line with its wall time and a short
// measurement summary; the process exits nonzero if any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "balmix/corpus.hpp"
#include "balmix/datasets.hpp"
#include "balmix/error.hpp"
#include "balmix/instances.hpp"
#include "balmix/mixing.hpp"
#include "balmix/records.hpp"
#include "balmix/rng.hpp"
#include "balmix/tinylm.hpp"
#include "balmix/vocab.hpp"
#include "testutil.hpp"

namespace {

using namespace balmix;

struct Failure {
  std::string msg;
};

void expect(bool ok, const std::string& msg) {
  if (!ok) throw Failure{msg};
}

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  expect(bool(in), "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

// A vocabulary with a large id space so that a random replacement hitting
// the original token (which would be counted as "kept") is negligible.
Vocabulary big_vocab(int content_tokens) {
  std::vector<std::string> toks = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                   "[MASK]"};
  toks.reserve(std::size_t(content_tokens) + 5);
  for (int i = 0; i < content_tokens; ++i) {
    toks.push_back("w" + std::to_string(i));
  }
  return Vocabulary::from_tokens(std::move(toks));
}

std::vector<Chunk> content_chunks(const std::string& prefix, int chunks,
                                  int sentences, int lo_len, int hi_len,
                                  int vocab_size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Chunk> out;
  out.reserve(std::size_t(chunks));
  for (int c = 0; c < chunks; ++c) {
    Chunk ch;
    ch.origin_doc = prefix + "-" + std::to_string(c);
    for (int s = 0; s < sentences; ++s) {
      int len = lo_len + int(rng.below(std::uint64_t(hi_len - lo_len + 1)));
      std::vector<int> sent(std::size_t(len), 0);
      for (auto& t : sent) {
        t = 5 + int(rng.below(std::uint64_t(vocab_size - 5)));
      }
      ch.sentences.push_back(std::move(sent));
    }
    out.push_back(std::move(ch));
  }
  return out;
}

// --------------------------------------------------------------------------
// 1. Masking statistics at the default configuration.

std::string c1_masking() {
  auto v = big_vocab(19995);
  const int V = v.size();

  // Long uniform chunks force full 512-token pairs; short mixed-length
  // chunks give a spread of below-cap lengths.
  auto stream = content_chunks("long", 600, 8, 100, 100, V, 11);
  auto varied = content_chunks("short", 1600, 8, 4, 12, V, 12);
  stream.insert(stream.end(), varied.begin(), varied.end());

  InstanceGenConfig cfg;
  cfg.pair.max_seq_len = 512;
  cfg.pair.nsp_random_prob = 0.5;
  cfg.pair.short_seq_prob = 0.1;
  cfg.pair.seed = 21;
  cfg.masking.mask_probability = 0.15;
  cfg.masking.max_predictions_per_seq = 76;
  cfg.masking.seed = 22;
  cfg.dupe_factor = 5;
  cfg.threads = 4;

  InstanceStats stats;
  auto inst = create_instances(stream, v, cfg, &stats);
  expect(inst.size() >= 10000,
         "need >= 10000 instances, got " + std::to_string(inst.size()));

  std::uint64_t full = 0, below = 0;
  std::uint64_t pooled_w = 0, pooled_m = 0;
  std::uint64_t n_mask = 0, n_keep = 0, n_rand = 0, n_slots = 0;
  for (const auto& ins : inst) {
    int attended = 0;
    for (int a : ins.attention_mask) attended += a;
    int weight = 0;
    for (int w : ins.masked_weights) weight += w;
    int maskable = attended - 3;  // [CLS] and the two [SEP]s never mask
    if (attended == 512) {
      ++full;
      expect(weight == 76, "full-length instance masked " +
                               std::to_string(weight) + " positions, not 76");
    } else {
      ++below;
      pooled_w += std::uint64_t(weight);
      pooled_m += std::uint64_t(maskable);
      if (maskable >= 50) {
        double frac = double(weight) / double(maskable);
        expect(std::abs(frac - 0.15) <= 0.01 + 1e-12,
               "below-cap masked fraction " + num(frac) + " at length " +
                   std::to_string(attended));
      }
    }
    for (std::size_t k = 0; k < ins.masked_weights.size(); ++k) {
      if (ins.masked_weights[k] == 0) continue;
      ++n_slots;
      int now = ins.input_ids[std::size_t(ins.masked_positions[k])];
      if (now == Vocabulary::kMask) {
        ++n_mask;
      } else if (now == ins.masked_label_ids[k]) {
        ++n_keep;
      } else {
        ++n_rand;
      }
    }
  }
  expect(full >= 1000, "too few full-length instances: " +
                           std::to_string(full));
  expect(below >= 1000, "too few below-cap instances: " +
                            std::to_string(below));
  double pooled = double(pooled_w) / double(pooled_m);
  expect(pooled > 0.14 && pooled < 0.16,
         "pooled below-cap masked fraction " + num(pooled));
  double ms = 100.0 * double(n_mask) / double(n_slots);
  double rs = 100.0 * double(n_rand) / double(n_slots);
  double ks = 100.0 * double(n_keep) / double(n_slots);
  expect(std::abs(ms - 80.0) <= 2.0, "[MASK] share " + num(ms, 2) + "%");
  expect(std::abs(rs - 10.0) <= 2.0, "random share " + num(rs, 2) + "%");
  expect(std::abs(ks - 10.0) <= 2.0, "keep share " + num(ks, 2) + "%");
  return std::to_string(inst.size()) + " instances (" + std::to_string(full) +
         " full-length at 76/76), shares " + num(ms, 1) + "/" + num(rs, 1) +
         "/" + num(ks, 1) + ", pooled fraction " + num(pooled);
}

// --------------------------------------------------------------------------
// 2. Chunk mixing balance and conservation at 1000 large / 100 small.

std::string c2_mixing() {
  std::vector<Chunk> large, small;
  for (int i = 0; i < 1000; ++i) {
    large.push_back(testutil::make_chunk(6, std::uint64_t(1000 + i)));
  }
  for (int i = 0; i < 100; ++i) {
    small.push_back(testutil::make_chunk(6, std::uint64_t(9000 + i), 64,
                                         Source::kClinicalReports));
  }

  auto plan = build_mix_plan(large.size(), small.size(), 77);
  expect(plan.repeat_factor == 10,
         "repeat factor " + std::to_string(plan.repeat_factor));
  expect(plan.imbalance == 0.0, "imbalance " + num(plan.imbalance, 6));

  auto stream = interleave(plan, large, small);
  expect(stream.size() == 2000,
         "stream size " + std::to_string(stream.size()));

  auto key = [](const Chunk& c) {
    std::string k = c.origin_doc + "#" + std::to_string(c.chunk_index) + "#" +
                    std::to_string(int(c.source));
    for (const auto& s : c.sentences) {
      k += "|";
      for (int t : s) {
        k += std::to_string(t);
        k += ",";
      }
    }
    return k;
  };
  std::map<std::string, int> seen;
  for (const auto& c : stream) ++seen[key(c)];
  expect(seen.size() == 1100,
         "distinct chunks in stream: " + std::to_string(seen.size()));
  for (const auto& c : small) {
    int n = seen[key(c)];
    expect(n == 10, "small chunk appears " + std::to_string(n) + " times");
  }
  for (const auto& c : large) {
    int n = seen[key(c)];
    expect(n == 1, "large chunk appears " + std::to_string(n) + " times");
  }
  std::uint64_t small_exposures = small.size() * plan.repeat_factor;
  expect(small_exposures == 1000 && large.size() == 1000,
         "exposures " + std::to_string(small_exposures) + ":1000");
  return "repeat factor 10, every small chunk 10x, exposures 1000:1000, "
         "multiset conserved";
}

// --------------------------------------------------------------------------
// 3. Amplified vocabulary beats general-only fertility on held-out domain
//    text by at least 10% without raising the UNK rate.

std::string c3_vocab() {
  // General stems cover every letter in initial and continuation position
  // so the general-only vocabulary fragments domain words instead of
  // falling back to [UNK].
  const std::vector<std::string> general_stems = {
      "the",  "quick",  "brown", "fox",   "jumps",  "over",
      "lazy", "dog",    "vexed", "wizards", "jack", "loves",
      "my",   "big",    "sphinx", "of",   "quartz", "pack",
      "box",  "with",   "five",  "dozen", "liquor", "jugs",
      "fabric", "market", "river", "stone", "cloud", "paper"};
  const std::vector<std::string> domain_stems = {
      "encephalomalacia", "leukoaraiosis",   "hydrocephalus",
      "ventriculomegaly", "subarachnoid",    "hemorrhage",
      "gliosis",          "periventricular", "hyperintensity",
      "ischemic",         "lacunar",         "meningioma",
      "calcification",    "effacement",      "herniation",
      "parenchyma",       "ventricle",       "infarct",
      "atrophy",          "midline"};

  auto general = testutil::make_docs(general_stems, 500, 31, "gen",
                                     Source::kGeneral);
  auto domain = testutil::make_docs(domain_stems, 60, 32, "dom",
                                    Source::kClinicalReports);
  auto heldout = testutil::make_docs(domain_stems, 40, 33, "held",
                                     Source::kClinicalReports);

  VocabTrainerConfig vc;
  vc.vocab_size = 400;
  vc.min_pair_frequency = 2;
  auto general_only = train_wordpiece(general, vc);
  auto amplified = amplified_corpus(general, domain);
  auto balanced = train_wordpiece(amplified.docs, vc);

  auto fg = fertility(heldout, general_only);
  auto fa = fertility(heldout, balanced);
  expect(fg.words > 0 && fa.words == fg.words, "held-out word counts differ");
  expect(fa.fertility <= 0.9 * fg.fertility,
         "amplified fertility " + num(fa.fertility) + " vs general " +
             num(fg.fertility) + " is under a 10% gain");
  expect(fa.unk_rate <= fg.unk_rate + 1e-12,
         "amplified unk rate " + num(fa.unk_rate) + " above general " +
             num(fg.unk_rate));
  double gain = 100.0 * (1.0 - fa.fertility / fg.fertility);
  return "held-out fertility " + num(fa.fertility) + " vs " +
         num(fg.fertility) + " (" + num(gain, 1) + "% lower), unk " +
         num(fa.unk_rate) + " vs " + num(fg.unk_rate) +
         " (repeat factor " + std::to_string(amplified.repeat_factor) + ")";
}

// --------------------------------------------------------------------------
// 4. Record format: field-exact round trip, frame checksums against an
//    independent CRC32C, and single-byte corruption detection.

std::uint32_t crc32c_bitwise(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint32_t crc = 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i) {
    crc ^= p[i];
    for (int b = 0; b < 8; ++b) {
      crc = (crc >> 1) ^ (0x82f63b78u & (0u - (crc & 1u)));
    }
  }
  return crc ^ 0xffffffffu;
}

std::uint32_t masked_bitwise(std::uint32_t crc) {
  return ((crc >> 15) | (crc << 17)) + 0xa282ead8u;
}

PretrainInstance arbitrary_instance(Rng& rng, const RecordLayout& layout) {
  PretrainInstance inst;
  auto fill = [&](std::vector<std::int32_t>& v, int n, int lo, int hi) {
    v.clear();
    for (int i = 0; i < n; ++i) {
      v.push_back(lo + std::int32_t(rng.below(std::uint64_t(hi - lo))));
    }
  };
  fill(inst.input_ids, layout.max_seq_len, 0, 30000);
  fill(inst.attention_mask, layout.max_seq_len, 0, 2);
  fill(inst.segment_ids, layout.max_seq_len, 0, 2);
  fill(inst.masked_positions, layout.max_predictions_per_seq, 0,
       layout.max_seq_len);
  fill(inst.masked_label_ids, layout.max_predictions_per_seq, 0, 30000);
  fill(inst.masked_weights, layout.max_predictions_per_seq, 0, 2);
  inst.next_sentence_label = std::int32_t(rng.below(2));
  return inst;
}

std::uint64_t le64(const std::string& b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | std::uint8_t(b[off + std::size_t(i)]);
  }
  return v;
}

std::uint32_t le32(const std::string& b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | std::uint8_t(b[off + std::size_t(i)]);
  }
  return v;
}

// Flips one byte in place on disk, checks that reading fails with
// CorruptRecord, then restores the byte.
void flip_and_expect_corrupt(const std::string& path,
                             const RecordLayout& layout, std::uint64_t off) {
  std::fstream f(path,
                 std::ios::binary | std::ios::in | std::ios::out);
  expect(bool(f), "cannot reopen " + path);
  f.seekg(std::streamoff(off));
  char byte = 0;
  f.read(&byte, 1);
  char flipped = char(byte ^ 0x40);
  f.seekp(std::streamoff(off));
  f.write(&flipped, 1);
  f.close();
  bool detected = false;
  try {
    read_records(path, layout);
  } catch (const CorruptRecord&) {
    detected = true;
  }
  std::fstream g(path,
                 std::ios::binary | std::ios::in | std::ios::out);
  g.seekp(std::streamoff(off));
  g.write(&byte, 1);
  g.close();
  expect(detected, "corruption at byte " + std::to_string(off) +
                       " was not detected");
}

std::string c4_records() {
  expect(crc32c("123456789", 9) == 0xE3069283u, "crc32c check vector");

  RecordLayout layout{512, 76};
  Rng rng(4242);
  std::vector<PretrainInstance> in;
  in.reserve(10000);
  for (int i = 0; i < 10000; ++i) in.push_back(arbitrary_instance(rng, layout));

  std::string dir = testutil::tmp_dir("accept-records").string();
  std::string path = dir + "/instances.rec";
  write_records(path, in, layout);

  auto out = read_records(path, layout);
  expect(out.size() == in.size(), "read back " + std::to_string(out.size()));
  for (std::size_t i = 0; i < in.size(); ++i) {
    expect(out[i] == in[i], "field mismatch at record " + std::to_string(i));
  }

  // Every frame checksum must agree with the bit-by-bit oracle.
  std::string bytes = read_file(path);
  const std::uint64_t payload = RecordLayout{512, 76}.payload_bytes();
  std::size_t off = 0;
  std::uint64_t frames = 0;
  while (off < bytes.size()) {
    std::uint64_t len = le64(bytes, off);
    expect(len == payload, "frame length " + std::to_string(len));
    expect(le32(bytes, off + 8) ==
               masked_bitwise(crc32c_bitwise(bytes.data() + off, 8)),
           "length checksum mismatch at frame " + std::to_string(frames));
    expect(le32(bytes, off + 12 + len) ==
               masked_bitwise(crc32c_bitwise(bytes.data() + off + 12, len)),
           "payload checksum mismatch at frame " + std::to_string(frames));
    off += 16 + len;
    ++frames;
  }
  expect(frames == 10000, "frame count " + std::to_string(frames));

  // Exhaustive single-byte corruption on a small file, spot checks on the
  // large one.
  std::string small_path = dir + "/small.rec";
  std::vector<PretrainInstance> few = {arbitrary_instance(rng, layout),
                                       arbitrary_instance(rng, layout)};
  write_records(small_path, few, layout);
  auto small_size = std::filesystem::file_size(small_path);
  for (std::uint64_t i = 0; i < small_size; ++i) {
    flip_and_expect_corrupt(small_path, layout, i);
  }
  auto big_size = std::filesystem::file_size(path);
  for (int t = 0; t < 60; ++t) {
    flip_and_expect_corrupt(path, layout, rng.below(big_size));
  }
  std::filesystem::remove_all(dir);
  return "10000 records round-tripped, " + std::to_string(frames) +
         " frames CRC-verified, " + std::to_string(small_size) +
         " exhaustive + 60 sampled corruptions all detected";
}

// --------------------------------------------------------------------------
// 5. Stratified split fidelity at the published label rates, 20 seeds.

std::string c5_split() {
  const auto counts = testutil::label_positive_counts();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto reports = testutil::make_reports(seed);
    auto split = stratified_split(reports, {0.8, 0.1, 0.1}, seed);
    auto sz = split.sizes();
    expect(sz[0] == 1600 && sz[1] == 200 && sz[2] == 200,
           "seed " + std::to_string(seed) + " sizes " + std::to_string(sz[0]) +
               "/" + std::to_string(sz[1]) + "/" + std::to_string(sz[2]));
    std::array<std::array<int, 3>, kNumLabels> pos{};
    for (const auto& r : reports) {
      int s = int(split.assignment.at(r.id));
      for (int l = 0; l < kNumLabels; ++l) {
        pos[std::size_t(l)][std::size_t(s)] += r.labels[std::size_t(l)];
      }
    }
    for (int l = 0; l < kNumLabels; ++l) {
      const auto& p = pos[std::size_t(l)];
      expect(p[0] + p[1] + p[2] == counts[std::size_t(l)],
             "label " + std::to_string(l) + " positives not conserved");
      if (counts[std::size_t(l)] >= 3) {
        expect(p[0] >= 1 && p[1] >= 1 && p[2] >= 1,
               "seed " + std::to_string(seed) + " label " + std::to_string(l) +
                   " missing from a split (" + std::to_string(p[0]) + "/" +
                   std::to_string(p[1]) + "/" + std::to_string(p[2]) + ")");
      }
    }
  }
  return "20 seeds: exact 1600/200/200, positives conserved, every label "
         "present in all three splits";
}

// --------------------------------------------------------------------------
// 6. Metrics agree exactly with a brute-force confusion recount.

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0, support = 0;
};

std::array<Counts, kNumLabels> confusion_oracle(
    const std::vector<LabeledReport>& gold,
    const std::vector<Prediction>& preds, double threshold) {
  std::array<Counts, kNumLabels> out{};
  for (const auto& g : gold) {
    const Prediction* p = nullptr;
    for (const auto& cand : preds) {
      if (cand.id == g.id) p = &cand;
    }
    expect(p != nullptr, "oracle lost prediction " + g.id);
    for (int l = 0; l < kNumLabels; ++l) {
      bool actual = g.labels[std::size_t(l)] == 1;
      bool predicted = p->scores[std::size_t(l)] > threshold;
      auto& c = out[std::size_t(l)];
      if (actual) ++c.support;
      if (actual && predicted) ++c.tp;
      if (!actual && predicted) ++c.fp;
      if (actual && !predicted) ++c.fn;
    }
  }
  return out;
}

std::string c6_metrics() {
  Rng rng(66);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 1 + int(rng.below(60));
    std::vector<LabeledReport> gold;
    std::vector<Prediction> preds;
    for (int i = 0; i < n; ++i) {
      LabeledReport g;
      g.id = "m-" + std::to_string(i);
      g.text = "x";
      for (int l = 0; l < kNumLabels; ++l) {
        g.labels[std::size_t(l)] = std::int8_t(rng.below(2));
      }
      Prediction p;
      p.id = g.id;
      for (int l = 0; l < kNumLabels; ++l) {
        p.scores[std::size_t(l)] = rng.next_unit();
      }
      gold.push_back(std::move(g));
      preds.push_back(std::move(p));
    }
    std::reverse(preds.begin(), preds.end());  // order must not matter

    auto rep = per_label_metrics(gold, preds, 0.5, "gate");
    auto oracle = confusion_oracle(gold, preds, 0.5);
    double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
    for (int l = 0; l < kNumLabels; ++l) {
      const auto& m = rep.per_label[std::size_t(l)];
      const auto& o = oracle[std::size_t(l)];
      expect(m.tp == o.tp && m.fp == o.fp && m.fn == o.fn &&
                 m.support == o.support,
             "confusion mismatch, trial " + std::to_string(trial) + " label " +
                 std::to_string(l));
      double p = (o.tp + o.fp) ? double(o.tp) / double(o.tp + o.fp) : 0.0;
      double r = (o.tp + o.fn) ? double(o.tp) / double(o.tp + o.fn) : 0.0;
      double f = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
      expect(std::abs(m.precision - p) <= 1e-12 &&
                 std::abs(m.recall - r) <= 1e-12 &&
                 std::abs(m.f1 - f) <= 1e-12,
             "metric mismatch, trial " + std::to_string(trial));
      if (p > 0.0 && r > 0.0) {
        expect(m.f1 >= std::min(p, r) - 1e-12 &&
                   m.f1 <= std::max(p, r) + 1e-12,
               "F1 left the [min(P,R), max(P,R)] envelope");
      } else {
        expect(m.f1 == 0.0, "F1 nonzero with a zero component");
      }
      macro_p += p;
      macro_r += r;
      macro_f += f;
    }
    expect(std::abs(rep.macro_precision - macro_p / kNumLabels) <= 1e-12 &&
               std::abs(rep.macro_recall - macro_r / kNumLabels) <= 1e-12 &&
               std::abs(rep.macro_f1 - macro_f / kNumLabels) <= 1e-12,
           "macro mismatch, trial " + std::to_string(trial));
  }
  return "1000 random prediction sets match the recount exactly; F1 "
         "envelope holds";
}

// --------------------------------------------------------------------------
// 7. Paired sign-flip significance test against exhaustive enumeration.

double sign_flip_exhaustive(const std::vector<double>& a,
                            const std::vector<double>& b) {
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double obs = 0.0;
  for (double v : d) obs += v;
  obs = std::abs(obs);
  const std::uint64_t total = std::uint64_t(1) << n;
  std::uint64_t hits = 0;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += (mask >> i & 1) ? -d[i] : d[i];
    }
    if (std::abs(s) >= obs) ++hits;
  }
  return double(hits) / double(total);
}

std::string c7_sigtest() {
  std::vector<double> same = {0.71, 0.68, 0.90, 0.55, 0.62,
                              0.80, 0.49, 0.77, 0.66, 0.73};
  expect(significance_test(same, same) == 1.0, "identical runs, n=10");
  std::vector<double> wide(30, 0.25);
  expect(significance_test(wide, wide) == 1.0,
         "identical runs through the resampling path, n=30");

  std::vector<double> lo(10, 0.0), hi(10, 0.5);
  expect(significance_test(hi, lo) == 2.0 / 1024.0,
         "constant 0.5 gap at n=10 must give exactly 2/1024");

  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(10), b(10);
    for (int i = 0; i < 10; ++i) {
      a[std::size_t(i)] = rng.next_unit();
      b[std::size_t(i)] = rng.next_unit();
    }
    double p = significance_test(a, b);
    double o = sign_flip_exhaustive(a, b);
    expect(p == o, "trial " + std::to_string(trial) + ": p " + num(p, 8) +
                       " vs oracle " + num(o, 8));
  }
  return "identical-run p = 1.0 on both paths; 50 exhaustive n=10 oracles "
         "matched to machine precision";
}

// --------------------------------------------------------------------------
// 8. Tiny transformer numerics: gradients, near-uniform initial loss,
//    single-batch overfit.

PretrainInstance lm_instance(Rng& rng, const TinyLMConfig& c, int attended,
                             int n_masked, int cap = 4) {
  PretrainInstance inst;
  for (int i = 0; i < c.max_seq_len; ++i) {
    bool on = i < attended;
    inst.input_ids.push_back(
        on ? std::int32_t(5 + rng.below(std::uint64_t(c.vocab_size - 5))) : 0);
    inst.attention_mask.push_back(on ? 1 : 0);
    inst.segment_ids.push_back((on && i >= attended / 2) ? 1 : 0);
  }
  std::vector<int> pos;
  for (int i = 1; i + 1 < attended; ++i) pos.push_back(i);
  rng.shuffle(pos);
  for (int k = 0; k < cap; ++k) {
    if (k < n_masked) {
      inst.masked_positions.push_back(pos[std::size_t(k)]);
      inst.masked_label_ids.push_back(
          std::int32_t(5 + rng.below(std::uint64_t(c.vocab_size - 5))));
      inst.masked_weights.push_back(1);
    } else {
      inst.masked_positions.push_back(0);
      inst.masked_label_ids.push_back(0);
      inst.masked_weights.push_back(0);
    }
  }
  inst.next_sentence_label = std::int32_t(rng.below(2));
  return inst;
}

std::string c8_tinylm() {
  TinyLMConfig c;
  c.layers = 2;
  c.hidden = 16;
  c.heads = 2;
  c.ffn = 32;
  c.max_seq_len = 16;
  c.vocab_size = 30;
  c.dropout = 0.0;

  Rng rng(88);
  std::vector<PretrainInstance> batch;
  for (int i = 0; i < 6; ++i) {
    batch.push_back(lm_instance(rng, c, 8 + int(rng.below(8)), 2 + i % 3));
  }

  auto params = ParameterSet::init(c, 8);
  double err = grad_check(params, batch, 1e-5, 300, 17);
  expect(err < 1e-4, "grad check max relative error " + num(err, 8));

  const double target = std::log(30.0) + std::log(2.0);
  auto lp = pretrain_loss(forward(params, batch), batch);
  expect(std::abs(lp.total() - target) <= 0.01 * target,
         "initial loss " + num(lp.total()) + " vs ln(V)+ln(2) = " +
             num(target));
  auto zero = ParameterSet::zeros(c);
  auto lz = pretrain_loss(forward(zero, batch), batch);
  expect(std::abs(lz.mlm - std::log(30.0)) < 1e-9 &&
             std::abs(lz.nsp - std::log(2.0)) < 1e-9,
         "all-zero parameters must give exactly ln(V) + ln(2)");

  std::vector<PretrainInstance> tiny;
  for (int i = 0; i < 4; ++i) {
    tiny.push_back(lm_instance(rng, c, 10, 3));
  }
  auto fit = ParameterSet::init(c, 9);
  auto st = AdamState::fresh(c);
  OptimizerConfig opt;
  opt.learning_rate = 5e-3;
  opt.batch_size = 4;
  opt.seed = 10;
  auto curve = pretrain(fit, st, tiny, opt, 300);
  double final_mlm = pretrain_loss(forward(fit, tiny), tiny).mlm;
  expect(final_mlm < 0.1 * std::log(30.0),
         "overfit MLM loss " + num(final_mlm) + " after 300 steps");
  expect(curve.size() == 300 && st.step == 300, "curve bookkeeping");
  return "grad err " + num(err, 7) + ", init loss " + num(lp.total()) +
         " ~ " + num(target) + ", overfit MLM " + num(final_mlm) + " < " +
         num(0.1 * std::log(30.0));
}

// --------------------------------------------------------------------------
// 9. End-to-end direction: on a corpus with planted trigger/synonym
//    correlations, balanced pretraining then fine-tuning beats the same
//    fine-tune from scratch on held-out macro F1 in >= 8 of 10 paired
//    seeds. Fine-tune reports name findings by their trigger; held-out
//    reports only ever use synonym variants that the fine-tune set never
//    shows, so any score above the no-findings row needs the trigger ~
//    synonym relation planted in the pretraining corpus. Both arms run the
//    identical classifier-only fine-tune, which keeps that relation intact
//    instead of overwriting it while fitting the head.

struct DirectionFixture {
  Vocabulary vocab;
  std::vector<PretrainInstance> instances;
  std::vector<LabeledReport> train, test;
};

DirectionFixture build_direction_fixture() {
  const int kFindings = 6;
  const int kVariants = 4;
  std::vector<std::string> toks = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                   "[MASK]", "."};
  for (int l = 0; l < kFindings; ++l) {
    toks.push_back("ctx" + std::to_string(l));
    toks.push_back("sign" + std::to_string(l));
    for (int k = 0; k < kVariants; ++k) {
      toks.push_back("alt" + std::to_string(l) + "v" + std::to_string(k));
    }
  }
  for (int i = 0; i < 30; ++i) toks.push_back("fill" + std::to_string(i));
  for (int i = 0; i < 50; ++i) toks.push_back("gen" + std::to_string(i));
  for (int i = 0; i < 3; ++i) toks.push_back("normal" + std::to_string(i));
  DirectionFixture fx{Vocabulary::from_tokens(std::move(toks)), {}, {}, {}};
  const Vocabulary& v = fx.vocab;

  auto id = [&](const std::string& t) {
    auto r = v.id_of(t);
    expect(r.has_value(), "fixture token missing: " + t);
    return *r;
  };

  // Domain chunks: per label, the trigger and its synonym variants keep
  // appearing in each other's company, so masked-token prediction pulls
  // their embeddings together.
  Rng rng(99);
  std::vector<Chunk> small;
  for (int cdx = 0; cdx < 100; ++cdx) {
    int l = cdx % kFindings;
    Chunk ch;
    ch.source = Source::kClinicalReports;
    ch.origin_doc = "dom-" + std::to_string(cdx);
    std::string ls = std::to_string(l);
    for (int s = 0; s < 8; ++s) {
      std::vector<int> sent;
      std::string alt =
          "alt" + ls + "v" + std::to_string((s + cdx / kFindings) % kVariants);
      int pattern = s % 4;
      if (pattern == 0) {
        sent = {id("ctx" + ls), id("sign" + ls), id(alt)};
      } else if (pattern == 1) {
        sent = {id("sign" + ls), id(alt)};
      } else if (pattern == 2) {
        sent = {id("ctx" + ls), id(alt)};
      } else {
        sent = {id("ctx" + ls), id("sign" + ls)};
      }
      sent.push_back(id("fill" + std::to_string(rng.below(30))));
      sent.push_back(id("."));
      ch.sentences.push_back(std::move(sent));
    }
    small.push_back(std::move(ch));
  }
  std::vector<Chunk> large;
  for (int cdx = 0; cdx < 400; ++cdx) {
    Chunk ch;
    ch.origin_doc = "gen-" + std::to_string(cdx);
    for (int s = 0; s < 8; ++s) {
      std::vector<int> sent;
      int len = 4 + int(rng.below(5));
      for (int t = 0; t < len; ++t) {
        sent.push_back(id("gen" + std::to_string(rng.below(50))));
      }
      sent.push_back(id("."));
      ch.sentences.push_back(std::move(sent));
    }
    large.push_back(std::move(ch));
  }

  auto plan = build_mix_plan(large.size(), small.size(), 5);
  auto stream = interleave(plan, large, small);
  InstanceGenConfig icfg;
  icfg.pair.max_seq_len = 32;
  icfg.pair.seed = 6;
  icfg.masking.max_predictions_per_seq = 5;
  icfg.masking.seed = 7;
  icfg.dupe_factor = 3;
  icfg.threads = 4;
  fx.instances = create_instances(stream, v, icfg);

  // Fine-tune reports name findings by their trigger, about 45% of the
  // labels per report so every head sees plenty of positives. Mentions are
  // shuffled so position carries no label information.
  Rng rrep(123);
  int uid = 0;
  for (int i = 0; i < 112; ++i) {
    LabeledReport r;
    r.id = "rep-" + std::to_string(uid++);
    std::vector<std::string> words;
    for (int l = 0; l < kFindings; ++l) {
      if (rrep.next_unit() < 0.45) {
        r.labels[std::size_t(l)] = 1;
        words.push_back("sign" + std::to_string(l));
      }
    }
    for (std::size_t k = words.size(); k > 1; --k) {
      std::swap(words[k - 1], words[rrep.below(k)]);
    }
    std::string text;
    if (words.empty()) {
      r.labels[std::size_t(label_index("No Findings"))] = 1;
      text = "normal0 normal1";
    } else {
      for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    }
    for (int k = 0; k < 2; ++k) {
      text += " fill" + std::to_string(rrep.below(30));
    }
    r.text = text + " .";
    fx.train.push_back(std::move(r));
  }

  // Held-out reports carry one finding each, mentioned through three of its
  // synonym variants. The variants never appear in fine-tune data, and with
  // one positive per report, blanket-firing a label scores poorly too.
  for (int i = 0; i < 72; ++i) {
    LabeledReport r;
    r.id = "rep-" + std::to_string(uid++);
    int l = i % kFindings;
    r.labels[std::size_t(l)] = 1;
    int v0 = int(rrep.below(kVariants));
    for (int k = 0; k < 3; ++k) {
      if (k) r.text += " ";
      r.text += "alt" + std::to_string(l) + "v" +
                std::to_string((v0 + k) % kVariants);
    }
    for (int k = 0; k < 2; ++k) {
      r.text += " fill" + std::to_string(rrep.below(30));
    }
    r.text += " .";
    fx.test.push_back(std::move(r));
  }
  for (int i = 0; i < 12; ++i) {
    LabeledReport r;
    r.id = "rep-" + std::to_string(uid++);
    r.labels[std::size_t(label_index("No Findings"))] = 1;
    r.text = "normal0 normal1";
    for (int k = 0; k < 2; ++k) {
      r.text += " fill" + std::to_string(rrep.below(30));
    }
    r.text += " .";
    fx.test.push_back(std::move(r));
  }
  return fx;
}

std::string c9_direction() {
  auto fx = build_direction_fixture();
  expect(fx.instances.size() >= 500,
         "pretraining set too small: " + std::to_string(fx.instances.size()));

  TinyLMConfig c;
  c.layers = 2;
  c.hidden = 32;
  c.heads = 2;
  c.ffn = 64;
  c.max_seq_len = 32;
  c.vocab_size = fx.vocab.size();
  c.dropout = 0.0;

  std::vector<EncodedReport> train_enc, test_enc;
  for (const auto& r : fx.train) {
    train_enc.push_back(encode_report(r, fx.vocab, c.max_seq_len));
  }
  for (const auto& r : fx.test) {
    test_enc.push_back(encode_report(r, fx.vocab, c.max_seq_len));
  }

  auto run_finetune = [&](ParameterSet params, std::uint64_t seed) {
    auto fst = AdamState::fresh(c);
    OptimizerConfig fopt;
    fopt.learning_rate = 1e-2;
    fopt.batch_size = int(train_enc.size());
    fopt.seed = seed;
    fopt.classifier_only = true;
    fine_tune_multilabel(params, fst, train_enc, fopt, 800);
    auto preds = predict(params, test_enc);
    return per_label_metrics(fx.test, preds).macro_f1;
  };

  int wins = 0;
  double sum_pre = 0.0, sum_scr = 0.0;
  for (int pair = 0; pair < 10; ++pair) {
    auto pretrained = ParameterSet::init(c, std::uint64_t(100 + pair));
    auto st = AdamState::fresh(c);
    OptimizerConfig popt;
    popt.learning_rate = 1e-3;
    popt.warmup_steps = 20;
    popt.batch_size = 16;
    popt.seed = std::uint64_t(100 + pair);
    auto curve = pretrain(pretrained, st, fx.instances, popt, 4000);
    expect(curve.back().total < curve.front().total,
           "pretraining loss did not fall");

    std::uint64_t seed = std::uint64_t(300 + pair);
    double pre = run_finetune(std::move(pretrained), seed);
    double scr =
        run_finetune(ParameterSet::init(c, 200 + std::uint64_t(pair)), seed);
    sum_pre += pre;
    sum_scr += scr;
    if (pre > scr) ++wins;
  }
  expect(wins >= 8, "pretrained won only " + std::to_string(wins) +
                        "/10 paired seeds (mean macro F1 " +
                        num(sum_pre / 10) + " vs " + num(sum_scr / 10) + ")");
  return "pretrained won " + std::to_string(wins) + "/10 paired seeds, mean "
         "macro F1 " + num(sum_pre / 10) + " vs " + num(sum_scr / 10);
}

// --------------------------------------------------------------------------
// 10. Determinism: identical config and seed give byte-identical
//     artifacts, at the library level and through the CLI, across thread
//     counts.

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun run_cli(const std::string& args) {
  const char* cli = std::getenv("BALMIX_CLI");
  expect(cli != nullptr, "BALMIX_CLI is not set");
  std::string cmd = "\"" + std::string(cli) + "\" " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  expect(pipe != nullptr, "popen failed");
  CliRun r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) {
    r.output.append(buf, n);
  }
  int status = ::pclose(pipe);
  if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
  return r;
}

std::string c10_determinism() {
  // Library level: instance generation across reruns and thread counts.
  auto v = testutil::small_vocab();
  std::vector<Chunk> stream;
  for (int i = 0; i < 200; ++i) {
    stream.push_back(testutil::make_chunk(8, std::uint64_t(10 + i),
                                          v.size()));
  }
  InstanceGenConfig cfg;
  cfg.pair.max_seq_len = 64;
  cfg.pair.seed = 3;
  cfg.masking.max_predictions_per_seq = 10;
  cfg.masking.seed = 4;
  cfg.dupe_factor = 2;
  auto gen = [&](int threads) {
    auto c2 = cfg;
    c2.threads = threads;
    return create_instances(stream, v, c2);
  };
  auto a = gen(1);
  expect(a == gen(1), "rerun with one thread diverged");
  expect(a == gen(4), "four threads diverged from one");
  expect(a == gen(7), "seven threads diverged from one");

  // Vocabulary training, splitting, and optimization reruns.
  auto corpus = testutil::make_general_docs(100, 3);
  VocabTrainerConfig vtc;
  vtc.vocab_size = 120;
  std::string dir = testutil::tmp_dir("accept-det").string();
  std::string va = dir + "/a.vocab", vb = dir + "/b.vocab";
  train_wordpiece(corpus, vtc).save(va);
  train_wordpiece(corpus, vtc).save(vb);
  expect(read_file(va) == read_file(vb), "vocabulary reruns differ");

  auto reports = testutil::make_reports(4, 400);
  auto s1 = stratified_split(reports, {0.8, 0.1, 0.1}, 9);
  auto s2 = stratified_split(reports, {0.8, 0.1, 0.1}, 9);
  expect(s1.to_json() == s2.to_json(), "split reruns differ");

  TinyLMConfig c;
  c.layers = 1;
  c.hidden = 16;
  c.heads = 2;
  c.ffn = 32;
  c.max_seq_len = 16;
  c.vocab_size = 30;
  c.dropout = 0.1;  // exercises the seeded dropout path
  Rng rng(6);
  std::vector<PretrainInstance> data;
  for (int i = 0; i < 12; ++i) data.push_back(lm_instance(rng, c, 12, 2));
  OptimizerConfig opt;
  opt.learning_rate = 1e-3;
  opt.batch_size = 4;
  opt.seed = 11;
  std::string ca = dir + "/a.ckpt", cb = dir + "/b.ckpt";
  for (const auto& path : {ca, cb}) {
    auto params = ParameterSet::init(c, 12);
    auto st = AdamState::fresh(c);
    pretrain(params, st, data, opt, 30);
    save_checkpoint(path, params, 77, &st, 30);
  }
  expect(read_file(ca) == read_file(cb), "training reruns differ");

  // CLI level: the same command twice, then again with more threads.
  const char* fixtures = std::getenv("BALMIX_FIXTURES");
  expect(fixtures != nullptr, "BALMIX_FIXTURES is not set");
  std::string fx(fixtures);
  auto cl = run_cli("clean --in " + fx + "/domain.txt --source " +
                    "radiology-theses --out " + dir + "/dom.jsonl");
  expect(cl.code == 0, "clean failed: " + cl.output);
  auto vt = run_cli("vocab-train --in " + dir + "/dom.jsonl --out " + dir +
                    "/cli.vocab --vocab-size 200");
  expect(vt.code == 0, "vocab-train failed: " + vt.output);
  auto inst_cmd = [&](int threads, const std::string& out) {
    return run_cli("--seed 42 --threads " + std::to_string(threads) +
                   " instances --mode task-adaptive --vocab " + dir +
                   "/cli.vocab --small " + dir + "/dom.jsonl --out " + dir +
                   "/" + out + " --chunk-size 48 --max-seq-len 48 " +
                   "--max-predictions 8 --dupe-factor 2");
  };
  auto r1 = inst_cmd(1, "r1.rec");
  expect(r1.code == 0, "instances command failed: " + r1.output);
  auto b1 = read_file(dir + "/r1.rec");
  auto m1 = read_file(dir + "/r1.rec.meta.json");
  auto r2 = inst_cmd(1, "r1.rec");  // exact rerun over the same path
  auto r3 = inst_cmd(5, "r3.rec");
  expect(r2.code == 0 && r3.code == 0,
         "instances rerun failed: " + r2.output + r3.output);
  expect(b1 == read_file(dir + "/r1.rec"), "CLI rerun artifacts differ");
  expect(m1 == read_file(dir + "/r1.rec.meta.json"),
         "CLI rerun sidecars differ");
  expect(b1 == read_file(dir + "/r3.rec"),
         "CLI artifacts differ across thread counts");
  std::filesystem::remove_all(dir);
  return "instances (1/4/7 threads), vocab, split, training and CLI reruns "
         "all byte-identical";
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::string (*body)();
  };
  const std::vector<Criterion> gate = {
      {1, "masking statistics", 60.0, c1_masking},
      {2, "balanced chunk mixing", 10.0, c2_mixing},
      {3, "amplified vocabulary fertility", 120.0, c3_vocab},
      {4, "record format integrity", 30.0, c4_records},
      {5, "stratified split fidelity", 30.0, c5_split},
      {6, "metrics vs recount oracle", 30.0, c6_metrics},
      {7, "paired sign-flip significance", 30.0, c7_sigtest},
      {8, "tiny transformer numerics", 300.0, c8_tinylm},
      {9, "pretraining direction check", 900.0, c9_direction},
      {10, "deterministic artifacts", 120.0, c10_determinism},
  };
  int failed = 0;
  for (const auto& cr : gate) {
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    try {
      detail = cr.body();
    } catch (const Failure& f) {
      ok = false;
      detail = f.msg;
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("unexpected exception: ") + e.what();
    }
    double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (ok && secs > cr.budget_seconds) {
      ok = false;
      detail = "over time budget: " + num(secs, 1) + "s > " +
               num(cr.budget_seconds, 0) + "s";
    }
    std::printf("%s %2d/10 %-32s %7.1fs  %s\n", ok ? "PASS" : "FAIL", cr.id,
                cr.name, secs, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failed;
  }
  if (failed == 0) {
    std::printf("acceptance: all 10 criteria passed\n");
    return 0;
  }
  std::printf("acceptance: %d of 10 criteria FAILED\n", failed);
  return 1;
}
