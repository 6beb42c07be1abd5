#pragma once

// Word-vector averaging baseline for sentence representations.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "repdecode/corpusgen.hpp"
#include "repdecode/error.hpp"
#include "repdecode/matrixio.hpp"

namespace repdecode {

struct WordVectorTable {
  std::size_t dims = 0;
  std::unordered_map<std::string, Vector> vectors;
  std::vector<std::string> warnings;

  std::size_t size() const { return vectors.size(); }

  const Vector* find(const std::string& word) const {
    const auto it = vectors.find(word);
    return it == vectors.end() ? nullptr : &it->second;
  }
};

// "word v1 ... vd" per line. Duplicate words keep the last vector.
inline WordVectorTable load_vectors(std::istream& in, const std::string& source = "<stream>") {
  WordVectorTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    const std::size_t dims = fields.size() - 1;
    if (dims == 0) throw DataError(source + ":" + std::to_string(line_no) + ": word without a vector");
    if (table.dims == 0) table.dims = dims;
    if (dims != table.dims)
      throw DataError(source + ":" + std::to_string(line_no) + ": ragged vector (" + std::to_string(dims) +
                      " dims, expected " + std::to_string(table.dims) + ")");
    Vector v(static_cast<Eigen::Index>(dims));
    for (std::size_t i = 0; i < dims; ++i) {
      const auto x = io::detail::parse_double(fields[i + 1]);
      if (!x || !std::isfinite(*x))
        throw DataError(source + ":" + std::to_string(line_no) + ": bad value '" + fields[i + 1] + "'");
      v(static_cast<Eigen::Index>(i)) = *x;
    }
    if (!table.vectors.insert_or_assign(fields[0], std::move(v)).second)
      table.warnings.push_back(source + ":" + std::to_string(line_no) + ": duplicate word '" + fields[0] +
                               "', keeping the last vector");
  }
  return table;
}

inline WordVectorTable load_vectors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return load_vectors(in, path.string());
}

// Whitespace split, then every ASCII punctuation character becomes its own
// token.
inline Tokens tokenize(std::string_view text, bool lowercase = false) {
  Tokens out;
  for (const auto& chunk : split_ws(text)) {
    std::string cur;
    for (char ch : chunk) {
      const auto uch = static_cast<unsigned char>(ch);
      if (std::ispunct(uch)) {
        if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        out.emplace_back(1, ch);
      } else {
        cur.push_back(lowercase ? static_cast<char>(std::tolower(uch)) : ch);
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
  }
  return out;
}

struct SentenceVector {
  Vector values;
  std::size_t in_vocab = 0;
  std::size_t total = 0;

  bool all_oov() const { return in_vocab == 0; }
};

// Mean over in-vocabulary tokens; out-of-vocabulary tokens are skipped.
inline SentenceVector average_sentence(const WordVectorTable& table, const Tokens& tokens) {
  if (tokens.empty()) throw DataError("average_sentence: empty token list");
  SentenceVector out;
  out.values = Vector::Zero(static_cast<Eigen::Index>(table.dims));
  out.total = tokens.size();
  for (const auto& t : tokens) {
    if (const Vector* v = table.find(t)) {
      out.values += *v;
      ++out.in_vocab;
    }
  }
  if (out.in_vocab > 0) out.values /= static_cast<double>(out.in_vocab);
  return out;
}

struct BaselineMatrix {
  Matrix values;
  std::vector<std::size_t> all_oov_rows;
};

inline BaselineMatrix embed_sentences(const WordVectorTable& table, const std::vector<Tokens>& sentences) {
  BaselineMatrix out;
  out.values.resize(static_cast<Eigen::Index>(sentences.size()), static_cast<Eigen::Index>(table.dims));
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto sv = average_sentence(table, sentences[i]);
    if (sv.all_oov()) out.all_oov_rows.push_back(i);
    out.values.row(static_cast<Eigen::Index>(i)) = sv.values.transpose();
  }
  return out;
}

}  // namespace repdecode
