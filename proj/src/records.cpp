// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#include "balmix/records.hpp"

#include <array>
#include <filesystem>

#include <json.hpp>

#include "balmix/error.hpp"
#include "balmix/text.hpp"

namespace balmix {

namespace {

constexpr std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) {
      c = (c & 1) ? (0x82F63B78u ^ (c >> 1)) : (c >> 1);
    }
    table[i] = c;
  }
  return table;
}

void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

void put_u64le(std::string& out, std::uint64_t v) {
  put_u32le(out, std::uint32_t(v & 0xffffffffu));
  put_u32le(out, std::uint32_t(v >> 32));
}

std::uint32_t get_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::uint64_t get_u64le(const unsigned char* p) {
  return std::uint64_t(get_u32le(p)) | std::uint64_t(get_u32le(p + 4)) << 32;
}

void check_field(const std::vector<std::int32_t>& field, std::size_t want,
                 const char* name) {
  if (field.size() != want) {
    throw ConfigError(std::string(name) + " length " +
                      std::to_string(field.size()) +
                      " does not match record layout " + std::to_string(want));
  }
}

}  // namespace

std::uint32_t crc32c(const void* data, std::size_t len, std::uint32_t crc) {
  static constexpr auto kTable = make_crc_table();
  const auto* p = static_cast<const unsigned char*>(data);
  crc = ~crc;
  for (std::size_t i = 0; i < len; ++i) {
    crc = kTable[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
  }
  return ~crc;
}

std::uint32_t masked_crc32c(const void* data, std::size_t len) {
  std::uint32_t crc = crc32c(data, len);
  return ((crc >> 15) | (crc << 17)) + 0xa282ead8u;
}

std::string serialize_instance(const PretrainInstance& inst,
                               const RecordLayout& layout) {
  const auto L = std::size_t(layout.max_seq_len);
  const auto P = std::size_t(layout.max_predictions_per_seq);
  check_field(inst.input_ids, L, "input_ids");
  check_field(inst.attention_mask, L, "attention_mask");
  check_field(inst.segment_ids, L, "segment_ids");
  check_field(inst.masked_positions, P, "masked_positions");
  check_field(inst.masked_label_ids, P, "masked_label_ids");
  check_field(inst.masked_weights, P, "masked_weights");

  std::string payload;
  payload.reserve(layout.payload_bytes());
  auto put_vec = [&](const std::vector<std::int32_t>& v) {
    for (std::int32_t x : v) put_u32le(payload, std::uint32_t(x));
  };
  put_vec(inst.input_ids);
  put_vec(inst.attention_mask);
  put_vec(inst.segment_ids);
  put_vec(inst.masked_positions);
  put_vec(inst.masked_label_ids);
  put_vec(inst.masked_weights);
  put_u32le(payload, std::uint32_t(inst.next_sentence_label));
  return payload;
}

PretrainInstance deserialize_instance(const std::string& payload,
                                      const RecordLayout& layout) {
  if (payload.size() != layout.payload_bytes()) {
    throw ConfigError("payload size does not match record layout");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  std::size_t off = 0;
  auto get_vec = [&](std::size_t n) {
    std::vector<std::int32_t> v(n);
    for (std::size_t i = 0; i < n; ++i, off += 4) {
      v[i] = std::int32_t(get_u32le(p + off));
    }
    return v;
  };
  PretrainInstance inst;
  const auto L = std::size_t(layout.max_seq_len);
  const auto P = std::size_t(layout.max_predictions_per_seq);
  inst.input_ids = get_vec(L);
  inst.attention_mask = get_vec(L);
  inst.segment_ids = get_vec(L);
  inst.masked_positions = get_vec(P);
  inst.masked_label_ids = get_vec(P);
  inst.masked_weights = get_vec(P);
  inst.next_sentence_label = std::int32_t(get_u32le(p + off));
  return inst;
}

RecordWriter::RecordWriter(const std::string& path, RecordLayout layout)
    : out_(path, std::ios::binary | std::ios::trunc), layout_(layout) {
  if (!out_) throw IngestError("cannot open for writing: " + path);
}

void RecordWriter::write(const PretrainInstance& inst) {
  std::string payload = serialize_instance(inst, layout_);
  std::string frame;
  frame.reserve(payload.size() + 16);
  put_u64le(frame, payload.size());
  put_u32le(frame, masked_crc32c(frame.data(), 8));
  frame += payload;
  put_u32le(frame, masked_crc32c(payload.data(), payload.size()));
  out_.write(frame.data(), std::streamsize(frame.size()));
  if (!out_) throw IngestError("short write to record file");
  ++written_;
}

void RecordWriter::close() {
  if (out_.is_open()) {
    out_.close();
    if (!out_) throw IngestError("failed to flush record file");
  }
}

RecordReader::RecordReader(const std::string& path, RecordLayout layout)
    : in_(path, std::ios::binary), layout_(layout) {
  if (!in_) throw IngestError("cannot open for reading: " + path);
}

std::optional<PretrainInstance> RecordReader::next() {
  unsigned char head[12];
  in_.read(reinterpret_cast<char*>(head), 12);
  if (in_.gcount() == 0 && in_.eof()) return std::nullopt;
  if (in_.gcount() != 12) {
    throw CorruptRecord("truncated record header", index_, offset_);
  }
  const std::uint64_t length = get_u64le(head);
  if (get_u32le(head + 8) != masked_crc32c(head, 8)) {
    throw CorruptRecord("length checksum mismatch", index_, offset_);
  }
  if (length != layout_.payload_bytes()) {
    throw CorruptRecord("payload length does not match layout", index_,
                        offset_);
  }
  std::string payload(length, '\0');
  in_.read(payload.data(), std::streamsize(length));
  if (std::uint64_t(in_.gcount()) != length) {
    throw CorruptRecord("truncated record payload", index_, offset_);
  }
  unsigned char foot[4];
  in_.read(reinterpret_cast<char*>(foot), 4);
  if (in_.gcount() != 4) {
    throw CorruptRecord("truncated record footer", index_, offset_);
  }
  if (get_u32le(foot) != masked_crc32c(payload.data(), payload.size())) {
    throw CorruptRecord("payload checksum mismatch", index_, offset_);
  }
  PretrainInstance inst = deserialize_instance(payload, layout_);
  offset_ += 16 + length;
  ++index_;
  return inst;
}

void write_records(const std::string& path,
                   const std::vector<PretrainInstance>& instances,
                   const RecordLayout& layout) {
  RecordWriter writer(path, layout);
  for (const auto& inst : instances) writer.write(inst);
  writer.close();
}

std::vector<PretrainInstance> read_records(const std::string& path,
                                           const RecordLayout& layout) {
  RecordReader reader(path, layout);
  std::vector<PretrainInstance> out;
  while (auto inst = reader.next()) out.push_back(std::move(*inst));
  return out;
}

std::optional<RecordLayout> read_layout_sidecar(
    const std::string& records_path) {
  const std::string meta = records_path + ".meta.json";
  if (!std::filesystem::exists(meta)) return std::nullopt;
  nlohmann::json j = nlohmann::json::parse(read_file(meta));
  if (!j.contains("layout")) return std::nullopt;
  const auto& l = j["layout"];
  RecordLayout layout;
  layout.max_seq_len = l.at("max_seq_len").get<int>();
  layout.max_predictions_per_seq = l.at("max_predictions_per_seq").get<int>();
  return layout;
}

}  // namespace balmix
