#ifndef QLRECOVER_IO_HPP
#define QLRECOVER_IO_HPP

// Artifact files: atomic writes, CSV tables and trajectories, plot scripts.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qlrecover/errors.hpp"
#include "qlrecover/spatial.hpp"
#include "qlrecover/trajectory.hpp"

namespace qlr {

namespace fs = std::filesystem;

/// Writes `path.tmp` then renames over `path`.
inline void write_atomic(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename onto " + path.string());
  }
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return s.str();
}

inline std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::string out;
    auto line = [&out](const std::vector<std::string>& cells) {
      for (std::size_t k = 0; k < cells.size(); ++k) {
        if (k) out += ',';
        out += cells[k];
      }
      out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }

  int column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return static_cast<int>(k);
    throw IoError("csv: missing column '" + name + "'");
  }
};

inline CsvTable parse_csv(const std::string& text, const std::string& origin = "csv") {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw IoError(origin + ": row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw IoError(origin + ": empty file");
  return t;
}

inline double csv_to_double(const std::string& s, const std::string& origin) {
  // strtod rather than stod: subnormal values are valid cells
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw IoError(origin + ": not a number: '" + s + "'");
  return v;
}

/// Rows (t, x_1..x_n), one per time node.
inline CsvTable trajectory_table(const Trajectory& u) {
  CsvTable t;
  t.header.push_back("t");
  for (int i = 1; i <= u.size(); ++i) t.header.push_back("x_" + std::to_string(i));
  for (int j = 0; j <= u.grid.K; ++j) {
    std::vector<std::string> row{csv_number(u.grid.node(j))};
    for (int i = 0; i < u.size(); ++i) row.push_back(csv_number(u.states(i, j)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline void write_trajectory_csv(const Trajectory& u, const fs::path& path) {
  write_atomic(path, trajectory_table(u).render());
}

inline Trajectory read_trajectory_csv(const fs::path& path) {
  const CsvTable t = parse_csv(read_text(path), path.string());
  if (t.header.empty() || t.header[0] != "t") throw IoError(path.string() + ": first column must be t");
  if (t.rows.size() < 2) throw IoError(path.string() + ": need at least two time rows");
  const int n = static_cast<int>(t.header.size()) - 1;
  const int K = static_cast<int>(t.rows.size()) - 1;
  const TimeGrid g(csv_to_double(t.rows.back()[0], path.string()), K);
  Trajectory u(g, n);
  for (int j = 0; j <= K; ++j) {
    const double tj = csv_to_double(t.rows[j][0], path.string());
    if (std::abs(tj - g.node(j)) > 1e-12 * g.T) throw IoError(path.string() + ": time column is not uniform");
    for (int i = 0; i < n; ++i) u.states(i, j) = csv_to_double(t.rows[j][i + 1], path.string());
  }
  return u;
}

/// Rows (x, value) over the spatial nodes.
inline void write_field_csv(const Grid1D& grid, const Field& f, const std::string& name, const fs::path& path) {
  CsvTable t;
  t.header = {"x", name};
  for (int i = 0; i < f.size(); ++i) t.rows.push_back({csv_number(grid.node(i)), csv_number(f(i))});
  write_atomic(path, t.render());
}

inline Field read_field_csv(const fs::path& path) {
  const CsvTable t = parse_csv(read_text(path), path.string());
  if (t.header.size() != 2) throw IoError(path.string() + ": expected two columns (x, value)");
  Field f(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) f(static_cast<Eigen::Index>(i)) = csv_to_double(t.rows[i][1], path.string());
  return f;
}

enum class PlotKind { Trajectory, Convergence, Scan };

/// Self-contained matplotlib script reading `csv_name` from its own directory.
inline std::string plot_script(PlotKind kind, const std::string& csv_name, int n = 0, int K = 0) {
  std::ostringstream s;
  s << "#!/usr/bin/env python3\n"
       "import csv, os, sys\n"
       "import matplotlib\n"
       "matplotlib.use('Agg')\n"
       "import matplotlib.pyplot as plt\n\n"
       "HERE = os.path.dirname(os.path.abspath(__file__))\n"
       "CSV = os.path.join(HERE, '" << csv_name << "')\n\n"
       "with open(CSV) as fh:\n"
       "    rows = list(csv.reader(fh))\n"
       "header, data = rows[0], [[float(v) if v not in ('', 'nan') else float('nan') for v in r[:4]] + r[4:] for r in rows[1:]]\n\n";
  switch (kind) {
  case PlotKind::Trajectory:
    s << "# space-time heatmap: " << n << " nodes by " << (K + 1) << " time columns\n"
         "EXPECTED_SHAPE = (" << n << ", " << (K + 1) << ")\n"
         "times = [float(r[0]) for r in rows[1:]]\n"
         "values = [[float(v) for v in r[1:]] for r in rows[1:]]\n"
         "field = [list(col) for col in zip(*values)]\n"
         "assert (len(field), len(field[0])) == EXPECTED_SHAPE\n"
         "fig, ax = plt.subplots(figsize=(7, 4))\n"
         "im = ax.imshow(field, aspect='auto', origin='lower', extent=[times[0], times[-1], 0.5, len(field) + 0.5])\n"
         "ax.set_xlabel('t')\n"
         "ax.set_ylabel('node')\n"
         "fig.colorbar(im, ax=ax, label='u')\n";
    break;
  case PlotKind::Convergence:
    s << "# successive-iterate distance against iteration, semilog\n"
         "it = [r[0] for r in data]\n"
         "dist = [r[1] for r in data]\n"
         "fig, ax = plt.subplots(figsize=(6, 4))\n"
         "ax.semilogy(it, dist, marker='o', label='weighted distance')\n"
         "ax.set_xlabel('iteration')\n"
         "ax.set_ylabel('d(u_k, u_{k-1})')\n"
         "ax.legend()\n";
    break;
  case PlotKind::Scan:
    s << "# converged flag against data amplitude\n"
         "amp = [r[0] for r in data]\n"
         "ok = [r[1] for r in data]\n"
         "fig, ax = plt.subplots(figsize=(6, 3))\n"
         "ax.step(amp, ok, where='mid')\n"
         "ax.set_xscale('log')\n"
         "ax.set_yticks([0, 1])\n"
         "ax.set_yticklabels(['diverged', 'converged'])\n"
         "ax.set_xlabel('amplitude')\n";
    break;
  }
  s << "fig.tight_layout()\n"
       "out = sys.argv[1] if len(sys.argv) > 1 else os.path.splitext(CSV)[0] + '.png'\n"
       "fig.savefig(out, dpi=120)\n";
  return s.str();
}

} // namespace qlr

#endif // QLRECOVER_IO_HPP
