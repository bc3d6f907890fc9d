#pragma once

#include <stdexcept>
#include <string>

namespace riskdiff {

// Conditioning event {H=0} carries no probability mass; the discrete
// conditional expectation is undefined.
class conditioning_mass_error : public std::runtime_error {
public:
  explicit conditioning_mass_error(const std::string& what)
      : std::runtime_error(what) {}
};

// Every band in a banded estimate fell below the minimum sample count.
class insufficient_data_error : public std::runtime_error {
public:
  explicit insufficient_data_error(const std::string& what)
      : std::runtime_error(what) {}
};

// Requested derivative order exceeds what the model can provide.
class unsupported_order_error : public std::domain_error {
public:
  explicit unsupported_order_error(const std::string& what)
      : std::domain_error(what) {}
};

// Malformed input file; line is 1-based, 0 when not attributable to a line.
class parse_error : public std::runtime_error {
public:
  parse_error(const std::string& what, std::size_t line)
      : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")"
                                    : what),
        line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

// Operation does not apply to the given model (e.g. Euler allocation on an
// inhomogeneous loss).
class not_applicable_error : public std::runtime_error {
public:
  explicit not_applicable_error(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace riskdiff
