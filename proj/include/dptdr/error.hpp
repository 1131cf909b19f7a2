#pragma once

#include <stdexcept>
#include <string>

namespace dptdr {

/// Base error for everything thrown by the library. `code` is a short
/// machine-readable tag (e.g. "shape_mismatch") surfaced by the CLI and the
/// encoding service.
class Error : public std::runtime_error {
  public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), m_code(std::move(code))
    {}

    const std::string& code() const noexcept { return m_code; }

  private:
    std::string m_code;
};

class ShapeError : public Error {
  public:
    explicit ShapeError(const std::string& message) : Error("shape_mismatch", message) {}
};

class ValidationError : public Error {
  public:
    explicit ValidationError(const std::string& message) : Error("invalid_argument", message) {}
};

class IoError : public Error {
  public:
    explicit IoError(const std::string& message) : Error("io_error", message) {}
};

}  // namespace dptdr
