#pragma once

#include <stdexcept>
#include <string>

namespace isot {

/// Input rejected by a precondition check (dimension, unit norm, rigidity...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Config or scenario file that does not validate. `where` carries a JSON
/// pointer (or line number) into the offending document.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

}  // namespace isot
