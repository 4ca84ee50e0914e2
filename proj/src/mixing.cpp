// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#include "balmix/mixing.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "balmix/error.hpp"
#include "balmix/rng.hpp"
#include "balmix/text.hpp"

namespace balmix {

TokenizedDocument tokenize_document(const CleanDocument& doc,
                                    const Vocabulary& v) {
  TokenizedDocument out;
  out.id = doc.id;
  out.source = doc.source;
  for (const std::string& sentence : split_sentences(doc.text)) {
    std::vector<int> ids = encode_ids(tokenize(sentence, v), v);
    if (!ids.empty()) out.sentences.push_back(std::move(ids));
  }
  return out;
}

std::vector<Chunk> split_into_chunks(const std::vector<TokenizedDocument>& docs,
                                     int chunk_target_tokens) {
  if (chunk_target_tokens < 1) {
    throw ConfigError("chunk_target_tokens must be >= 1");
  }
  const std::uint64_t target = std::uint64_t(chunk_target_tokens);
  std::vector<Chunk> chunks;
  for (const auto& doc : docs) {
    int next_index = 0;
    Chunk cur;
    std::uint64_t cur_tokens = 0;
    auto flush = [&] {
      if (cur.sentences.empty()) return;
      cur.source = doc.source;
      cur.origin_doc = doc.id;
      cur.chunk_index = next_index++;
      chunks.push_back(std::move(cur));
      cur = Chunk{};
      cur_tokens = 0;
    };
    for (const auto& sentence : doc.sentences) {
      const std::uint64_t n = sentence.size();
      if (!cur.sentences.empty() && cur_tokens + n > target) flush();
      if (n > target) {
        // oversized sentence: its own chunk
        cur.sentences.push_back(sentence);
        flush();
      } else {
        cur.sentences.push_back(sentence);
        cur_tokens += n;
      }
    }
    flush();
  }
  return chunks;
}

std::string MixPlan::to_json() const {
  nlohmann::json j = {{"large_chunk_count", large_chunk_count},
                      {"small_chunk_count", small_chunk_count},
                      {"repeat_factor", repeat_factor},
                      {"seed", seed},
                      {"target_ratio", target_ratio},
                      {"tolerance", tolerance},
                      {"imbalance", imbalance}};
  return j.dump(2) + "\n";
}

MixPlan MixPlan::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  MixPlan p;
  p.large_chunk_count = j.at("large_chunk_count").get<std::uint64_t>();
  p.small_chunk_count = j.at("small_chunk_count").get<std::uint64_t>();
  p.repeat_factor = j.at("repeat_factor").get<std::uint64_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.target_ratio = j.at("target_ratio").get<double>();
  p.tolerance = j.at("tolerance").get<double>();
  p.imbalance = j.at("imbalance").get<double>();
  return p;
}

MixPlan build_mix_plan(std::uint64_t large_chunk_count,
                       std::uint64_t small_chunk_count, std::uint64_t seed,
                       double target_ratio, double tolerance) {
  if (small_chunk_count == 0) {
    throw MixError("simultaneous pretraining requires a domain corpus");
  }
  if (large_chunk_count == 0) {
    throw MixError("simultaneous pretraining requires a general corpus");
  }
  if (target_ratio <= 0.0) throw ConfigError("target_ratio must be > 0");
  MixPlan plan;
  plan.large_chunk_count = large_chunk_count;
  plan.small_chunk_count = small_chunk_count;
  plan.seed = seed;
  plan.target_ratio = target_ratio;
  plan.tolerance = tolerance;
  long long factor = std::llround(target_ratio * double(large_chunk_count) /
                                  double(small_chunk_count));
  plan.repeat_factor = factor < 1 ? 1 : std::uint64_t(factor);
  double small_exposures = double(plan.repeat_factor * small_chunk_count);
  double want = target_ratio * double(large_chunk_count);
  plan.imbalance = std::abs(small_exposures - want) / want;
  return plan;
}

std::vector<Chunk> interleave(const MixPlan& plan,
                              const std::vector<Chunk>& large,
                              const std::vector<Chunk>& small) {
  if (large.size() != plan.large_chunk_count ||
      small.size() != plan.small_chunk_count) {
    throw MixError("chunk counts do not match the mix plan");
  }
  std::vector<const Chunk*> stream;
  stream.reserve(large.size() + small.size() * plan.repeat_factor);
  for (const auto& c : large) stream.push_back(&c);
  for (std::uint64_t rep = 0; rep < plan.repeat_factor; ++rep) {
    for (const auto& c : small) stream.push_back(&c);
  }
  Rng rng(plan.seed);
  rng.shuffle(stream);
  std::vector<Chunk> out;
  out.reserve(stream.size());
  for (const Chunk* c : stream) out.push_back(*c);
  return out;
}

void write_chunks(const std::vector<Chunk>& chunks, const std::string& path) {
  std::ostringstream out;
  for (const auto& c : chunks) {
    nlohmann::json j = {{"chunk_index", c.chunk_index},
                        {"origin_doc", c.origin_doc},
                        {"sentences", c.sentences},
                        {"source", to_string(c.source)}};
    out << j.dump() << "\n";
  }
  write_file(path, out.str());
}

std::vector<Chunk> read_chunks(const std::string& path) {
  std::string content = read_file(path);
  std::vector<Chunk> chunks;
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
    Chunk c;
    c.chunk_index = j.at("chunk_index").get<int>();
    c.origin_doc = j.at("origin_doc").get<std::string>();
    c.sentences = j.at("sentences").get<std::vector<std::vector<int>>>();
    c.source = source_from_string(j.at("source").get<std::string>());
    chunks.push_back(std::move(c));
  }
  return chunks;
}

}  // namespace balmix
