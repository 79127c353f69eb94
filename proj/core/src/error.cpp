#include "mammoforge/error.hpp"

#include <fmt/format.h>

namespace mammoforge {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::format: return "format";
    case ErrorKind::state: return "state";
    case ErrorKind::io: return "io";
    case ErrorKind::processing: return "processing";
    case ErrorKind::backend: return "backend";
    case ErrorKind::protocol: return "protocol";
  }
  return "unknown";
}

bool Error::is_validation() const noexcept {
  switch (kind_) {
    case ErrorKind::validation:
    case ErrorKind::format:
    case ErrorKind::state:
      return true;
    default:
      return false;
  }
}

FormatError::FormatError(const std::string& what, std::uint64_t offset)
    : Error(ErrorKind::format, fmt::format("{} (at byte offset {})", what, offset)),
      offset_(offset) {}

RegistrationError::RegistrationError(const std::string& what, int level)
    : Error(ErrorKind::processing, fmt::format("{} (pyramid level {})", what, level)),
      level_(level) {}

BackendError::BackendError(ErrorKind kind, const std::string& what,
                           std::filesystem::path workdir, bool timed_out)
    : Error(kind, what), workdir_(std::move(workdir)), timed_out_(timed_out) {}

}  // namespace mammoforge
