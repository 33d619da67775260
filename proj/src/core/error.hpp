// SPDX-License-Identifier: Apache-2.0
#ifndef XINT_CORE_ERROR_HPP
#define XINT_CORE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace xint {

// Status codes shared with the C API and the CLI exit codes.
enum Status : int {
  kOk = 0,
  kInternalError = 1,
  kValidationError = 2,
  kDataError = 3,
  kNumericError = 4,
};

class Error : public std::runtime_error {
 public:
  Error(Status code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Status code() const { return code_; }

 private:
  Status code_;
};

// Bad shapes, bad arguments, contract violations.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(kValidationError, msg) {}
};

// Malformed or inconsistent input data (annotation files, checkpoints).
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(kDataError, msg) {}
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(kNumericError, msg) {}
};

}  // namespace xint

#endif
