#pragma once

#include <stdexcept>
#include <string>

namespace rlvs {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kInvalidModel,
  kTraceMismatch,
  kCorruptFile,
  kUnsupported,
  kNonFinite,
  kIo,
  kSingleClass,
  kEmptyInput,
};

const char* to_string(ErrorCode code);

// Every failure surfaced by the library. `where` names the layer, file or
// stage that failed so callers can report it without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string where, const std::string& message)
      : std::runtime_error(where.empty() ? message : where + ": " + message),
        code_(code),
        where_(std::move(where)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& where() const noexcept { return where_; }

 private:
  ErrorCode code_;
  std::string where_;
};

}  // namespace rlvs
