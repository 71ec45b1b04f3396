#pragma once
// Error taxonomy shared by the library and the CLI. Each failure class maps
// to a stable process exit code so batch callers can dispatch on it.

#include <stdexcept>
#include <string>

namespace sij {

enum class ExitCode : int {
  ok = 0,
  failure = 1,       // config errors, bad arguments, internal invariants
  pelvis_not_found = 2,
  sij_not_found = 3,
  io_error = 4,
  coccyx_ambiguous = 5,
};

class Error : public std::runtime_error {
public:
  Error(ExitCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ExitCode code() const { return code_; }

private:
  ExitCode code_;
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(ExitCode::io_error, msg) {}
};
struct PelvisNotFoundError : Error {
  explicit PelvisNotFoundError(const std::string& msg)
      : Error(ExitCode::pelvis_not_found, msg) {}
};
struct SijNotFoundError : Error {
  explicit SijNotFoundError(const std::string& msg)
      : Error(ExitCode::sij_not_found, msg) {}
};
struct CoccyxAmbiguousError : Error {
  explicit CoccyxAmbiguousError(const std::string& msg)
      : Error(ExitCode::coccyx_ambiguous, msg) {}
};
struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& msg)
      : Error(ExitCode::failure, msg) {}
};

}  // namespace sij
