#ifndef LDL_ERRORS_HPP
#define LDL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ldl {

/// Base class for every error this library throws.
struct error : std::runtime_error {
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor extents do not line up (matmul inner dims, row arity, ...).
struct dim_error : error {
  explicit dim_error(const std::string& what) : error(what) {}
};

/// A setting is out of range or names something that does not exist.
struct config_error : error {
  explicit config_error(const std::string& what) : error(what) {}
};

/// An input file violates its format.
struct parse_error : error {
  explicit parse_error(const std::string& what) : error(what) {}
};

/// A caller broke a documented precondition.
struct contract_error : error {
  explicit contract_error(const std::string& what) : error(what) {}
};

}  // namespace ldl

#endif  // LDL_ERRORS_HPP
