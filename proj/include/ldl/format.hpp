#ifndef LDL_FORMAT_HPP
#define LDL_FORMAT_HPP

#include <cstdio>
#include <string>

namespace ldl {

/// Shortest %g form that still round-trips a double exactly.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Report-friendly formatting; stable because every produced value is
/// already deterministic.
inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace ldl

#endif  // LDL_FORMAT_HPP
