// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_RECORDS_HPP_
#define BALMIX_RECORDS_HPP_

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "balmix/instances.hpp"

namespace balmix {

// CRC32C (Castagnoli). `crc` carries state across calls; 0 starts a fresh
// checksum. crc32c("123456789") == 0xE3069283.
std::uint32_t crc32c(const void* data, std::size_t len, std::uint32_t crc = 0);

// Mask used by the record framing so checksums of checksums stay useful.
std::uint32_t masked_crc32c(const void* data, std::size_t len);

struct RecordLayout {
  int max_seq_len = 512;
  int max_predictions_per_seq = 76;

  // int32 payload: 3 sequence-length fields, 3 prediction fields, NSP label.
  std::size_t payload_bytes() const {
    return 4 * (3 * std::size_t(max_seq_len) +
                3 * std::size_t(max_predictions_per_seq) + 1);
  }
};

std::string serialize_instance(const PretrainInstance& inst,
                               const RecordLayout& layout);
PretrainInstance deserialize_instance(const std::string& payload,
                                      const RecordLayout& layout);

// Framing per record: u64 LE payload length, u32 LE masked CRC32C of those
// 8 bytes, payload, u32 LE masked CRC32C of the payload.
class RecordWriter {
 public:
  RecordWriter(const std::string& path, RecordLayout layout);
  void write(const PretrainInstance& inst);
  std::uint64_t written() const { return written_; }
  void close();

 private:
  std::ofstream out_;
  RecordLayout layout_;
  std::uint64_t written_ = 0;
};

class RecordReader {
 public:
  RecordReader(const std::string& path, RecordLayout layout);
  // nullopt at clean end of file; CorruptRecord on any framing damage.
  std::optional<PretrainInstance> next();
  std::uint64_t records_read() const { return index_; }

 private:
  std::ifstream in_;
  RecordLayout layout_;
  std::uint64_t index_ = 0;
  std::uint64_t offset_ = 0;
};

void write_records(const std::string& path,
                   const std::vector<PretrainInstance>& instances,
                   const RecordLayout& layout);
std::vector<PretrainInstance> read_records(const std::string& path,
                                           const RecordLayout& layout);

// Scans `<records_path>.meta.json` for a {"layout": {...}} block.
std::optional<RecordLayout> read_layout_sidecar(
    const std::string& records_path);

}  // namespace balmix

#endif  // BALMIX_RECORDS_HPP_
