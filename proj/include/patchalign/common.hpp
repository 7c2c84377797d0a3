#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace patchalign {

// Single scalar type for all numeric evaluation. Checkpoints narrow to
// float32 on disk; see checkpoint.cpp.
using real = double;

enum class ErrorKind {
  config = 2,   // invalid configuration / dimension mismatch
  shape = 3,    // runtime shape disagreement
  vocab = 4,    // token id out of range
  data = 5,     // dataset generation / manifest problems
  io = 6,       // file read/write failures
  checkpoint = 7,
  usage = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }
  const char* category() const {
    switch (kind_) {
      case ErrorKind::config: return "config";
      case ErrorKind::shape: return "shape";
      case ErrorKind::vocab: return "vocab";
      case ErrorKind::data: return "data";
      case ErrorKind::io: return "io";
      case ErrorKind::checkpoint: return "checkpoint";
      case ErrorKind::usage: return "usage";
    }
    return "error";
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline std::string strformat(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  char buf[1024];
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return std::string(buf);
}

// FNV-1a, used for config fingerprints and frozen-group checksums.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace patchalign
