#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bisenet {

enum class ErrorKind {
  kSize,
  kArgument,
  kShape,
  kGraph,
  kConsistency,
  kFormat,
  kData,
  kAnalysis,
  kConfig,
  kNumeric,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library. The kind is the machine-readable
// category; the CLI maps it onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  Error(ErrorKind kind, const std::string& message, std::uint64_t byte_offset);

  ErrorKind kind() const noexcept { return kind_; }
  // Set for format errors raised while decoding a byte stream.
  std::optional<std::uint64_t> byte_offset() const noexcept { return offset_; }

 private:
  ErrorKind kind_;
  std::optional<std::uint64_t> offset_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace bisenet
