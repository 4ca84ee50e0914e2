// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_ERROR_HPP
#define BALMIX_ERROR_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace balmix {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raw text could not be ingested (invalid UTF-8, unreadable file).
struct IngestError : Error {
  using Error::Error;
};

// Vocabulary training preconditions violated.
struct TrainError : Error {
  using Error::Error;
};

// Token not representable in the vocabulary.
struct EncodeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Corpus mixing preconditions violated.
struct MixError : Error {
  using Error::Error;
};

struct EvalError : Error {
  using Error::Error;
};

struct ModelError : Error {
  using Error::Error;
};

// Record stream failed a checksum or was truncated. Carries the index of
// the offending record and the byte offset of its frame.
struct CorruptRecord : Error {
  CorruptRecord(const std::string& what, std::uint64_t record_index,
                std::uint64_t byte_offset)
      : Error(what + " (record " + std::to_string(record_index) +
              ", frame offset " + std::to_string(byte_offset) + ")"),
        record_index(record_index),
        byte_offset(byte_offset) {}

  std::uint64_t record_index;
  std::uint64_t byte_offset;
};

}  // namespace balmix

#endif  // BALMIX_ERROR_HPP
