#pragma once

#include <stdexcept>
#include <string>

namespace ccat {

// Base for every error raised by the library. The kind lets front ends map
// failures onto exit codes without string matching.
enum class ErrorKind {
  kShape,
  kInput,
  kState,
  kFormat,
  kInvariant,
  kLibrary,
  kCompatibility,
  kExport,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define CCAT_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

CCAT_DEFINE_ERROR(ShapeError, kShape)
CCAT_DEFINE_ERROR(InputError, kInput)
CCAT_DEFINE_ERROR(StateError, kState)
CCAT_DEFINE_ERROR(FormatError, kFormat)
CCAT_DEFINE_ERROR(InvariantError, kInvariant)
CCAT_DEFINE_ERROR(LibraryError, kLibrary)
CCAT_DEFINE_ERROR(CompatibilityError, kCompatibility)
CCAT_DEFINE_ERROR(ExportError, kExport)

#undef CCAT_DEFINE_ERROR

}  // namespace ccat
