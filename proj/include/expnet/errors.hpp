#pragma once

#include <stdexcept>
#include <string>

namespace expnet {

// Malformed input text (bad token, unbalanced brackets, ...).
class parse_error : public std::runtime_error {
 public:
  parse_error(const std::string& what, long line = -1)
      : std::runtime_error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// Well-formed input that violates a documented precondition or invariant.
class validation_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Zero denominator with positive numerator and similar numerical dead ends.
class degeneracy_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Evaluation protocol misuse (e.g. scoring a pair that was trained on).
class protocol_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric undefined for the given input (e.g. AUC without negatives).
class metric_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace expnet
