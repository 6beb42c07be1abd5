#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "repdecode/error.hpp"
#include "repdecode/matrixio.hpp"

namespace repdecode {

// Upper-triangle cosine similarities, pairs (a, b) with a < b in
// lexicographic order.
struct RsaVector {
  std::vector<double> values;
  std::size_t n = 0;
};

inline RsaVector rsa_vector(const Matrix& reps) {
  if (reps.rows() < 2) throw DataError("rsa_vector: need at least 2 rows");
  Matrix unit = reps;
  for (Eigen::Index r = 0; r < reps.rows(); ++r) {
    const double norm = reps.row(r).norm();
    if (!(norm > 0.0)) throw DataError("rsa_vector: zero-norm row " + std::to_string(r));
    unit.row(r) /= norm;
  }
  const Matrix sim = unit * unit.transpose();
  RsaVector out;
  out.n = static_cast<std::size_t>(reps.rows());
  out.values.reserve(out.n * (out.n - 1) / 2);
  for (Eigen::Index a = 0; a < reps.rows(); ++a)
    for (Eigen::Index b = a + 1; b < reps.rows(); ++b) out.values.push_back(std::clamp(sim(a, b), -1.0, 1.0));
  return out;
}

// Fractional ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i + 1;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = avg;
    i = j;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("pearson: length mismatch");
  if (a.size() < 2) throw DataError("pearson: need at least 2 values");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw NumericalError("correlation undefined for constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw DataError("spearman: length mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  if (a.size() < 2) throw DataError("spearman: need at least 2 values");
  return pearson(fractional_ranks(a), fractional_ranks(b));
}

struct TaskRuns {
  std::string task;
  std::vector<RsaVector> runs;
};

struct RsaHeatmap {
  std::vector<std::string> tasks;
  Matrix values;  // NaN marks a missing cell
};

// Cell (j, j') averages rho over every run pair; on the diagonal a run is
// never paired with itself, so one-run tasks get a missing diagonal.
inline RsaHeatmap rsa_heatmap(const std::vector<TaskRuns>& tasks) {
  RsaHeatmap out;
  const auto t = static_cast<Eigen::Index>(tasks.size());
  out.values = Matrix::Constant(t, t, std::numeric_limits<double>::quiet_NaN());
  for (const auto& tr : tasks) {
    if (tr.runs.empty()) throw DataError("rsa_heatmap: task '" + tr.task + "' has no runs");
    out.tasks.push_back(tr.task);
  }
  for (Eigen::Index j = 0; j < t; ++j) {
    for (Eigen::Index k = j; k < t; ++k) {
      const auto& a = tasks[static_cast<std::size_t>(j)].runs;
      const auto& b = tasks[static_cast<std::size_t>(k)].runs;
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t l = 0; l < a.size(); ++l) {
        for (std::size_t m = 0; m < b.size(); ++m) {
          if (j == k && l == m) continue;
          sum += spearman(a[l].values, b[m].values);
          ++count;
        }
      }
      if (count > 0) out.values(j, k) = out.values(k, j) = sum / static_cast<double>(count);
    }
  }
  return out;
}

inline void write_heatmap_csv(const RsaHeatmap& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "task";
  for (const auto& name : h.tasks) out << ',' << name;
  out << '\n';
  char buf[64];
  for (Eigen::Index r = 0; r < h.values.rows(); ++r) {
    out << h.tasks[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < h.values.cols(); ++c) {
      const double v = h.values(r, c);
      if (std::isnan(v)) {
        out << ",NA";
      } else {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << ',' << buf;
      }
    }
    out << '\n';
  }
}

// Diverging blue-white-red scale clamped to [-1, 1].
inline std::string diverging_color(double v) {
  if (std::isnan(v)) return "#bdbdbd";
  v = std::clamp(v, -1.0, 1.0);
  const auto lerp = [](int a, int b, double t) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  int r, g, b;
  if (v < 0) {
    const double t = v + 1.0;  // 0 at -1, 1 at 0
    r = lerp(33, 247, t), g = lerp(102, 247, t), b = lerp(172, 247, t);
  } else {
    r = lerp(247, 178, v), g = lerp(247, 24, v), b = lerp(247, 43, v);
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

inline std::string heatmap_svg(const RsaHeatmap& h, const std::string& title = "Representational similarity") {
  constexpr int cell = 56, left = 150, top = 60, legend_w = 220;
  const int n = static_cast<int>(h.tasks.size());
  const int width = left + n * cell + 40;
  const int height = top + n * cell + 150;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << std::max(width, left + legend_w + 40)
    << "\" height=\"" << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">" << title << "</text>\n";
  char val[32];
  for (int r = 0; r < n; ++r) {
    s << "<text x=\"" << left - 6 << "\" y=\"" << top + r * cell + cell / 2 + 4 << "\" text-anchor=\"end\">"
      << h.tasks[static_cast<std::size_t>(r)] << "</text>\n";
    for (int c = 0; c < n; ++c) {
      const double v = h.values(r, c);
      s << "<rect x=\"" << left + c * cell << "\" y=\"" << top + r * cell << "\" width=\"" << cell
        << "\" height=\"" << cell << "\" fill=\"" << diverging_color(v) << "\" stroke=\"#ffffff\"/>\n";
      if (std::isnan(v))
        std::snprintf(val, sizeof val, "NA");
      else
        std::snprintf(val, sizeof val, "%.2f", v);
      s << "<text x=\"" << left + c * cell + cell / 2 << "\" y=\"" << top + r * cell + cell / 2 + 4
        << "\" text-anchor=\"middle\">" << val << "</text>\n";
    }
  }
  for (int c = 0; c < n; ++c) {
    const int x = left + c * cell + cell / 2;
    const int y = top + n * cell + 8;
    s << "<text x=\"" << x << "\" y=\"" << y << "\" transform=\"rotate(45 " << x << ' ' << y << ")\">"
      << h.tasks[static_cast<std::size_t>(c)] << "</text>\n";
  }
  const int ly = top + n * cell + 100;
  constexpr int steps = 20;
  for (int i = 0; i < steps; ++i) {
    const double v = -1.0 + 2.0 * (i + 0.5) / steps;
    s << "<rect x=\"" << left + i * (legend_w / steps) << "\" y=\"" << ly << "\" width=\"" << legend_w / steps
      << "\" height=\"12\" fill=\"" << diverging_color(v) << "\"/>\n";
  }
  s << "<text x=\"" << left << "\" y=\"" << ly + 26 << "\">-1</text>\n";
  s << "<text x=\"" << left + legend_w / 2 << "\" y=\"" << ly + 26 << "\" text-anchor=\"middle\">0</text>\n";
  s << "<text x=\"" << left + legend_w << "\" y=\"" << ly + 26 << "\" text-anchor=\"end\">1</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace repdecode
