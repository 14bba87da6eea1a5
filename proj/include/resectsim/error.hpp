#pragma once

#include <stdexcept>
#include <string>

namespace resectsim {

enum class ErrorKind {
  contract_violation,
  config,
  fit,
  planning,
  selection,
  segmentation_failed,
  protocol,
  empty_snapshot,
  metric_undefined,
  comparison,
  estimation,
  io,
  not_found,
  conflict,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by fit_poly; keeps the basis/sample sizes so callers can report them.
class FitError : public Error {
 public:
  FitError(const std::string& what, std::size_t basis_size, std::size_t point_count)
      : Error(ErrorKind::fit, what), basis_size_(basis_size), point_count_(point_count) {}

  std::size_t basis_size() const noexcept { return basis_size_; }
  std::size_t point_count() const noexcept { return point_count_; }

 private:
  std::size_t basis_size_;
  std::size_t point_count_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::contract_violation, what);
}

}  // namespace resectsim
