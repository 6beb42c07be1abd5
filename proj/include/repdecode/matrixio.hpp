#pragma once

// On-disk formats.
//
// MATX (all integers and floats little-endian):
//   "MATX" | u32 version=1 | u64 rows | u64 cols | rows*cols f64, row-major
// SEQX:
//   "SEQX" | u32 version=1 | u64 sentence_count | u64 cols |
//   per sentence: u64 token_count | token_count*cols f64, row-major
//
// Files ending in ".csv" are read as a header row of column names followed by
// one numeric row per sentence.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "repdecode/error.hpp"

namespace repdecode {

// Sentences x dims, 64-bit. Row k always refers to stimulus sentence k.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SequenceSet {
  std::size_t cols = 0;
  std::vector<Matrix> sentences;  // each token_count x cols

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }
  friend bool operator==(const SequenceSet&, const SequenceSet&) = default;
};

namespace io {

inline constexpr std::array<char, 4> kMatxMagic{'M', 'A', 'T', 'X'};
inline constexpr std::array<char, 4> kSeqxMagic{'S', 'E', 'Q', 'X'};
inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw FormatError(FormatErrc::io, "cannot open for writing: " + path.string());
  }

  void magic(const std::array<char, 4>& m) { out_.write(m.data(), 4); }

  template <typename T>
  void put(T v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void put_rows(const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(m(r, c));
  }

  void finish() {
    out_.flush();
    if (!out_) throw FormatError(FormatErrc::io, "write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FormatError(FormatErrc::io, "cannot open: " + path.string());
  }

  void expect_magic(const std::array<char, 4>& m) {
    std::array<char, 4> got{};
    in_.read(got.data(), 4);
    if (in_.gcount() != 4 || got != m)
      throw FormatError(FormatErrc::bad_magic, "bad magic in " + path_.string() + " (expected " +
                                                   std::string(m.data(), 4) + ")");
    const auto version = get<std::uint32_t>("version");
    if (version != kFormatVersion)
      throw FormatError(FormatErrc::bad_version,
                        "unsupported version " + std::to_string(version) + " in " + path_.string());
  }

  template <typename T>
  T get(const char* field) {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in_.gcount() != static_cast<std::streamsize>(sizeof(T)))
      throw FormatError(FormatErrc::truncated,
                        std::string("truncated payload in ") + path_.string() + " reading " + field);
    return to_little(v);
  }

  // Reads rows x cols doubles; `row_offset` only shifts the row index reported
  // in non-finite errors.
  Matrix get_rows(std::uint64_t rows, std::uint64_t cols, std::uint64_t row_offset = 0) {
    check_remaining(rows, cols);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::uint64_t r = 0; r < rows; ++r) {
      for (std::uint64_t c = 0; c < cols; ++c) {
        const double v = get<double>("payload");
        if (!std::isfinite(v))
          throw FormatError(FormatErrc::non_finite, "non-finite value at (row " +
                                                        std::to_string(r + row_offset) + ", col " +
                                                        std::to_string(c) + ") in " + path_.string());
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
      }
    }
    return m;
  }

 private:
  // Guards against allocating from a corrupt header.
  void check_remaining(std::uint64_t rows, std::uint64_t cols) {
    const auto here = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(here);
    const auto remaining = static_cast<std::uint64_t>(end - here);
    if (cols != 0 && rows > remaining / 8 / cols)
      throw FormatError(FormatErrc::truncated, "truncated payload in " + path_.string());
  }

  std::filesystem::path path_;
  std::ifstream in_;
};

inline void check_finite(const Matrix& m, const std::string& what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      if (!std::isfinite(m(r, c)))
        throw FormatError(FormatErrc::non_finite, "non-finite value at (row " + std::to_string(r) +
                                                      ", col " + std::to_string(c) + ") in " + what);
}

inline bool has_csv_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".csv";
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatErrc::io, "cannot open: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::size_t cols = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line, ',');
    if (cols == 0) {
      cols = fields.size();
      continue;
    }
    if (fields.size() != cols)
      throw FormatError(FormatErrc::malformed, path.string() + ":" + std::to_string(line_no) +
                                                   ": expected " + std::to_string(cols) + " fields, got " +
                                                   std::to_string(fields.size()));
    std::vector<double> row;
    row.reserve(cols);
    for (std::size_t c = 0; c < cols; ++c) {
      const auto v = detail::parse_double(fields[c]);
      if (!v)
        throw FormatError(FormatErrc::malformed, path.string() + ":" + std::to_string(line_no) +
                                                     ": not a number: '" + std::string(fields[c]) + "'");
      if (!std::isfinite(*v))
        throw FormatError(FormatErrc::non_finite, "non-finite value at (row " + std::to_string(rows.size()) +
                                                      ", col " + std::to_string(c) + ") in " + path.string());
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  if (cols == 0) throw FormatError(FormatErrc::malformed, path.string() + ": missing CSV header row");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

inline void write_matrix(const Matrix& m, const std::filesystem::path& path) {
  detail::check_finite(m, "matrix destined for " + path.string());
  detail::Writer w(path);
  w.magic(kMatxMagic);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
  w.put_rows(m);
  w.finish();
}

inline Matrix read_matrix(const std::filesystem::path& path) {
  if (detail::has_csv_extension(path)) return read_matrix_csv(path);
  detail::Reader r(path);
  r.expect_magic(kMatxMagic);
  const auto rows = r.get<std::uint64_t>("rows");
  const auto cols = r.get<std::uint64_t>("cols");
  return r.get_rows(rows, cols);
}

inline void write_csv(const Matrix& m, const std::filesystem::path& path,
                      const std::vector<std::string>& header = {}) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatErrc::io, "cannot open for writing: " + path.string());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (c) out << ',';
    out << (static_cast<std::size_t>(c) < header.size() ? header[static_cast<std::size_t>(c)]
                                                        : "c" + std::to_string(c));
  }
  out << '\n';
  out.precision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
}

inline void write_sequences(const SequenceSet& s, const std::filesystem::path& path) {
  for (std::size_t i = 0; i < s.sentences.size(); ++i) {
    const auto& m = s.sentences[i];
    if (m.rows() < 1) throw DataError("sentence " + std::to_string(i) + " has no tokens");
    if (static_cast<std::size_t>(m.cols()) != s.cols)
      throw DataError("sentence " + std::to_string(i) + " has " + std::to_string(m.cols()) +
                      " cols, expected " + std::to_string(s.cols));
    detail::check_finite(m, "sentence " + std::to_string(i));
  }
  detail::Writer w(path);
  w.magic(kSeqxMagic);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint64_t>(s.sentences.size());
  w.put<std::uint64_t>(s.cols);
  for (const auto& m : s.sentences) {
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    w.put_rows(m);
  }
  w.finish();
}

inline SequenceSet read_sequences(const std::filesystem::path& path) {
  detail::Reader r(path);
  r.expect_magic(kSeqxMagic);
  const auto count = r.get<std::uint64_t>("sentence count");
  SequenceSet s;
  s.cols = r.get<std::uint64_t>("cols");
  std::uint64_t token_offset = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto tokens = r.get<std::uint64_t>("token count");
    if (tokens < 1)
      throw FormatError(FormatErrc::malformed,
                        "sentence " + std::to_string(i) + " has zero tokens in " + path.string());
    s.sentences.push_back(r.get_rows(tokens, s.cols, token_offset));
    token_offset += tokens;
  }
  return s;
}

// Returns "MATX", "SEQX", "CSV" or an empty string when unrecognised.
inline std::string sniff_format(const std::filesystem::path& path) {
  if (detail::has_csv_extension(path)) return "CSV";
  std::ifstream in(path, std::ios::binary);
  std::array<char, 4> got{};
  in.read(got.data(), 4);
  if (in.gcount() != 4) return {};
  if (got == kMatxMagic) return "MATX";
  if (got == kSeqxMagic) return "SEQX";
  return {};
}

}  // namespace io

// ---------------------------------------------------------------------------
// Run manifest

enum class EntryKind { sentence_reps, token_reps, brain };

inline std::string to_string(EntryKind k) {
  switch (k) {
    case EntryKind::sentence_reps: return "sentence-reps";
    case EntryKind::token_reps: return "token-reps";
    case EntryKind::brain: return "brain";
  }
  return "?";
}

inline EntryKind parse_entry_kind(const std::string& s) {
  if (s == "sentence-reps") return EntryKind::sentence_reps;
  if (s == "token-reps") return EntryKind::token_reps;
  if (s == "brain") return EntryKind::brain;
  throw DataError("unknown manifest entry kind '" + s + "'");
}

struct ManifestEntry {
  EntryKind kind = EntryKind::sentence_reps;
  std::string task;     // model entries only
  int run = 0;          // model entries only
  int step = 0;         // model entries only
  std::string subject;  // brain entries only
  std::filesystem::path path;
};

struct RunManifest {
  std::vector<std::string> subject_ids;
  std::vector<ManifestEntry> entries;
  std::string baseline_task = "pretrained";

  std::vector<const ManifestEntry*> of_kind(EntryKind k) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.kind == k) out.push_back(&e);
    return out;
  }

  // Tasks in order of first appearance among entries of kind `k`.
  std::vector<std::string> tasks(EntryKind k) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (e.kind == k && std::find(out.begin(), out.end(), e.task) == out.end()) out.push_back(e.task);
    return out;
  }

  std::optional<int> final_step(const std::string& task, EntryKind k) const {
    std::optional<int> best;
    for (const auto& e : entries)
      if (e.kind == k && e.task == task && (!best || e.step > *best)) best = e.step;
    return best;
  }
};

inline void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = nlohmann::json{{"kind", to_string(e.kind)}, {"path", e.path.generic_string()}};
  if (e.kind == EntryKind::brain) {
    j["subject"] = e.subject;
  } else {
    j["task"] = e.task;
    j["run"] = e.run;
    j["step"] = e.step;
  }
}

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"subject_ids", m.subject_ids},
                     {"baseline_task", m.baseline_task},
                     {"entries", m.entries}};
}

inline void save_manifest(const RunManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatErrc::io, "cannot open for writing: " + path.string());
  out << nlohmann::json(m).dump(2) << '\n';
}

// Relative entry paths resolve against the manifest's directory. With
// `check_files`, every path must exist and carry the magic of its kind.
inline RunManifest load_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }

  RunManifest m;
  const auto base = path.parent_path();
  try {
    if (j.contains("subject_ids")) m.subject_ids = j.at("subject_ids").get<std::vector<std::string>>();
    if (j.contains("baseline_task")) m.baseline_task = j.at("baseline_task").get<std::string>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.kind = parse_entry_kind(je.at("kind").get<std::string>());
      std::filesystem::path p = je.at("path").get<std::string>();
      e.path = p.is_absolute() ? p : base / p;
      if (e.kind == EntryKind::brain) {
        e.subject = je.at("subject").get<std::string>();
      } else {
        e.task = je.at("task").get<std::string>();
        e.run = je.value("run", 0);
        e.step = je.value("step", 0);
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }

  std::set<std::tuple<std::string, int, int, int>> seen_models;
  std::set<std::string> seen_subjects;
  for (const auto& e : m.entries) {
    if (e.kind == EntryKind::brain) {
      if (!seen_subjects.insert(e.subject).second)
        throw DataError("manifest: duplicate brain entry for subject '" + e.subject + "'");
      if (std::find(m.subject_ids.begin(), m.subject_ids.end(), e.subject) == m.subject_ids.end())
        m.subject_ids.push_back(e.subject);
    } else if (!seen_models.insert({e.task, e.run, e.step, static_cast<int>(e.kind)}).second) {
      throw DataError("manifest: duplicate entry (task=" + e.task + ", run=" + std::to_string(e.run) +
                      ", step=" + std::to_string(e.step) + ", kind=" + to_string(e.kind) + ")");
    }
    if (check_files) {
      if (!std::filesystem::exists(e.path)) throw DataError("manifest: missing file " + e.path.string());
      const auto fmt = io::sniff_format(e.path);
      const bool ok = e.kind == EntryKind::token_reps ? fmt == "SEQX" : (fmt == "MATX" || fmt == "CSV");
      if (!ok) throw DataError("manifest: " + e.path.string() + " does not parse as " + to_string(e.kind));
    }
  }
  return m;
}

}  // namespace repdecode
