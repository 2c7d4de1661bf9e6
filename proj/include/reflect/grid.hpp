#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace reflect {

struct GridError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct OutOfDomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Uniform tensor grid. Nodes are stored row-major by x2 row:
// index(i,j) = j*n1 + i, with i along x1 and j along x2.
struct Grid2D {
  int n1 = 0, n2 = 0;
  double x1_min = 0.0, x1_max = 0.0, x2_min = 0.0, x2_max = 0.0;
  double h1 = 0.0, h2 = 0.0;

  static Grid2D make(int n1, int n2, double x1_min, double x1_max, double x2_min,
                     double x2_max) {
    if (n1 < 16 || n2 < 16) throw GridError("grid must have at least 16 nodes per axis");
    if (!(x1_max > x1_min) || !(x2_max > x2_min))
      throw GridError("grid extents must be positive");
    Grid2D g;
    g.n1 = n1;
    g.n2 = n2;
    g.x1_min = x1_min;
    g.x1_max = x1_max;
    g.x2_min = x2_min;
    g.x2_max = x2_max;
    g.h1 = (x1_max - x1_min) / (n1 - 1);
    g.h2 = (x2_max - x2_min) / (n2 - 1);
    return g;
  }

  int size() const { return n1 * n2; }
  int idx(int i, int j) const { return j * n1 + i; }
  double x1(int i) const { return x1_min + i * h1; }
  double x2(int j) const { return x2_min + j * h2; }
  bool contains(double x, double y) const {
    return x >= x1_min - 1e-12 * span1() && x <= x1_max + 1e-12 * span1() &&
           y >= x2_min - 1e-12 * span2() && y <= x2_max + 1e-12 * span2();
  }
  double span1() const { return x1_max - x1_min; }
  double span2() const { return x2_max - x2_min; }

  bool same_layout(const Grid2D& o) const {
    return n1 == o.n1 && n2 == o.n2 && x1_min == o.x1_min && x1_max == o.x1_max &&
           x2_min == o.x2_min && x2_max == o.x2_max;
  }
};

struct ScalarField {
  Grid2D grid;
  std::vector<double> a;

  ScalarField() = default;
  explicit ScalarField(const Grid2D& g, double fill = 0.0) : grid(g), a(g.size(), fill) {}

  double& operator()(int i, int j) { return a[grid.idx(i, j)]; }
  double operator()(int i, int j) const { return a[grid.idx(i, j)]; }

  double sup_abs() const {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
  }
  double max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : a) m = std::max(m, v);
    return m;
  }
  double min() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : a) m = std::min(m, v);
    return m;
  }
};

// First derivative along x1: central inside, second-order one-sided at the
// two x1 faces.
inline ScalarField d1(const ScalarField& f) {
  const Grid2D& g = f.grid;
  ScalarField r(g);
  const double h = g.h1;
  for (int j = 0; j < g.n2; ++j) {
    r(0, j) = (-3.0 * f(0, j) + 4.0 * f(1, j) - f(2, j)) / (2.0 * h);
    for (int i = 1; i < g.n1 - 1; ++i) r(i, j) = (f(i + 1, j) - f(i - 1, j)) / (2.0 * h);
    int n = g.n1 - 1;
    r(n, j) = (3.0 * f(n, j) - 4.0 * f(n - 1, j) + f(n - 2, j)) / (2.0 * h);
  }
  return r;
}

inline ScalarField d2(const ScalarField& f) {
  const Grid2D& g = f.grid;
  ScalarField r(g);
  const double h = g.h2;
  for (int i = 0; i < g.n1; ++i) {
    r(i, 0) = (-3.0 * f(i, 0) + 4.0 * f(i, 1) - f(i, 2)) / (2.0 * h);
    for (int j = 1; j < g.n2 - 1; ++j) r(i, j) = (f(i, j + 1) - f(i, j - 1)) / (2.0 * h);
    int m = g.n2 - 1;
    r(i, m) = (3.0 * f(i, m) - 4.0 * f(i, m - 1) + f(i, m - 2)) / (2.0 * h);
  }
  return r;
}

inline ScalarField d11(const ScalarField& f) {
  const Grid2D& g = f.grid;
  ScalarField r(g);
  const double hh = g.h1 * g.h1;
  for (int j = 0; j < g.n2; ++j) {
    r(0, j) = (2.0 * f(0, j) - 5.0 * f(1, j) + 4.0 * f(2, j) - f(3, j)) / hh;
    for (int i = 1; i < g.n1 - 1; ++i)
      r(i, j) = (f(i + 1, j) - 2.0 * f(i, j) + f(i - 1, j)) / hh;
    int n = g.n1 - 1;
    r(n, j) = (2.0 * f(n, j) - 5.0 * f(n - 1, j) + 4.0 * f(n - 2, j) - f(n - 3, j)) / hh;
  }
  return r;
}

inline ScalarField d22(const ScalarField& f) {
  const Grid2D& g = f.grid;
  ScalarField r(g);
  const double hh = g.h2 * g.h2;
  for (int i = 0; i < g.n1; ++i) {
    r(i, 0) = (2.0 * f(i, 0) - 5.0 * f(i, 1) + 4.0 * f(i, 2) - f(i, 3)) / hh;
    for (int j = 1; j < g.n2 - 1; ++j)
      r(i, j) = (f(i, j + 1) - 2.0 * f(i, j) + f(i, j - 1)) / hh;
    int m = g.n2 - 1;
    r(i, m) = (2.0 * f(i, m) - 5.0 * f(i, m - 1) + 4.0 * f(i, m - 2) - f(i, m - 3)) / hh;
  }
  return r;
}

// Mixed derivative as the composition d2(d1(f)); symmetric to second order.
inline ScalarField d12(const ScalarField& f) { return d2(d1(f)); }

namespace detail {

struct CellLocation {
  int i, j;
  double t, u;  // local coordinates in [0,1]
};

inline CellLocation locate(const Grid2D& g, double x, double y) {
  if (!g.contains(x, y)) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "point (%.6g, %.6g) outside grid [%g,%g]x[%g,%g]", x, y,
                  g.x1_min, g.x1_max, g.x2_min, g.x2_max);
    throw OutOfDomainError(buf);
  }
  double s = (x - g.x1_min) / g.h1;
  double r = (y - g.x2_min) / g.h2;
  int i = std::min(g.n1 - 2, std::max(0, static_cast<int>(std::floor(s))));
  int j = std::min(g.n2 - 2, std::max(0, static_cast<int>(std::floor(r))));
  return {i, j, s - i, r - j};
}

}  // namespace detail

inline double interp_bilinear(const ScalarField& f, double x, double y) {
  auto c = detail::locate(f.grid, x, y);
  double f00 = f(c.i, c.j), f10 = f(c.i + 1, c.j);
  double f01 = f(c.i, c.j + 1), f11 = f(c.i + 1, c.j + 1);
  return (1 - c.t) * (1 - c.u) * f00 + c.t * (1 - c.u) * f10 + (1 - c.t) * c.u * f01 +
         c.t * c.u * f11;
}

// Gradient of the bilinear interpolant within the containing cell.
inline std::pair<double, double> interp_gradient(const ScalarField& f, double x, double y) {
  auto c = detail::locate(f.grid, x, y);
  double f00 = f(c.i, c.j), f10 = f(c.i + 1, c.j);
  double f01 = f(c.i, c.j + 1), f11 = f(c.i + 1, c.j + 1);
  double gx = ((1 - c.u) * (f10 - f00) + c.u * (f11 - f01)) / f.grid.h1;
  double gy = ((1 - c.t) * (f01 - f00) + c.t * (f11 - f10)) / f.grid.h2;
  return {gx, gy};
}

// ---------------------------------------------------------------------------
// CSV output: header row, then one node per line, row-major by x2 row,
// 17 significant digits so doubles round-trip exactly.
// ---------------------------------------------------------------------------

inline void format_g17(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

inline void write_fields_csv(const std::string& path,
                             const std::vector<std::pair<std::string, const ScalarField*>>& cols) {
  if (cols.empty()) throw GridError("no columns to write");
  const Grid2D& g = cols.front().second->grid;
  for (const auto& [name, f] : cols)
    if (!f->grid.same_layout(g)) throw GridError("CSV columns on mismatched grids");
  std::ofstream out(path);
  if (!out) throw GridError("cannot open output file: " + path);
  std::string line = "x1,x2";
  for (const auto& [name, f] : cols) line += "," + name;
  line += "\n";
  out << line;
  for (int j = 0; j < g.n2; ++j) {
    for (int i = 0; i < g.n1; ++i) {
      line.clear();
      format_g17(line, g.x1(i));
      line += ',';
      format_g17(line, g.x2(j));
      for (const auto& [name, f] : cols) {
        line += ',';
        format_g17(line, (*f)(i, j));
      }
      line += '\n';
      out << line;
    }
  }
}

inline void write_field_csv(const std::string& path, const ScalarField& f,
                            const std::string& name = "value") {
  write_fields_csv(path, {{name, &f}});
}

}  // namespace reflect
