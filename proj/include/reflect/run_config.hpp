#pragma once

#include "reflect/config.hpp"
#include "reflect/grid.hpp"

namespace reflect {

// [grid] section: mesh sizes and computational box. Consumed alongside the
// problem fields so reject_unknown_keys covers the whole file.
inline Grid2D load_grid(Config& c) {
  int n1 = static_cast<int>(c.get_int_or("grid", "n1", 129));
  int n2 = static_cast<int>(c.get_int_or("grid", "n2", 129));
  double x1_min = c.get_double_or("grid", "x1_min", -4.0);
  double x1_max = c.get_double_or("grid", "x1_max", 4.0);
  double x2_min = c.get_double_or("grid", "x2_min", -4.0);
  double x2_max = c.get_double_or("grid", "x2_max", 4.0);
  return Grid2D::make(n1, n2, x1_min, x1_max, x2_min, x2_max);
}

}  // namespace reflect
