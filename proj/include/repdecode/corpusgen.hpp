#pragma once

// Cloze-task corpus generation: word scrambling within sentences or
// paragraphs, masked-token and masked-POS targets, and next-sentence pairs.
// All randomness flows through repdecode::Rng so outputs are a pure function
// of (input, seed).

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "repdecode/error.hpp"
#include "repdecode/rng.hpp"

namespace repdecode {

using Tokens = std::vector<std::string>;

inline const std::string kMaskToken = "[MASK]";

struct Sentence {
  Tokens tokens;
  Tokens tags;  // empty, or one tag per token
};

struct Paragraph {
  std::vector<Sentence> sentences;
};

struct Document {
  std::vector<Paragraph> paragraphs;

  std::size_t sentence_count() const {
    std::size_t n = 0;
    for (const auto& p : paragraphs) n += p.sentences.size();
    return n;
  }
};

enum class Replacement { mask, random, keep };

struct ClozeExample {
  Tokens input;
  std::vector<std::size_t> positions;
  Tokens targets;
  std::vector<Replacement> replacements;  // how each target position was corrupted

  struct Nsp {
    Tokens b;
    bool adjacent = false;
  };
  std::optional<Nsp> nsp;
};

struct MaskingConfig {
  double mask_rate = 0.15;
  double mask_fraction = 0.8;    // selected -> [MASK]
  double random_fraction = 0.1;  // selected -> random vocabulary token; rest kept
};

// ---------------------------------------------------------------------------
// Scrambling

inline Tokens scramble_sentence(const Tokens& tokens, std::uint64_t seed) {
  Tokens out = tokens;
  Rng rng(seed);
  rng.shuffle(out);
  return out;
}

inline std::vector<Tokens> scramble_paragraph(const std::vector<Tokens>& sentences, std::uint64_t seed) {
  if (sentences.empty()) throw DataError("scramble_paragraph: empty paragraph");
  Tokens pool;
  for (const auto& s : sentences) pool.insert(pool.end(), s.begin(), s.end());
  Rng rng(seed);
  rng.shuffle(pool);
  std::vector<Tokens> out;
  out.reserve(sentences.size());
  auto it = pool.begin();
  for (const auto& s : sentences) {
    out.emplace_back(it, it + static_cast<std::ptrdiff_t>(s.size()));
    it += static_cast<std::ptrdiff_t>(s.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masking

// Each position is kept independently with probability `rate`; if none is
// drawn, one uniformly chosen position is forced.
inline std::vector<std::size_t> select_positions(std::size_t n, double rate, Rng& rng) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (rng.bernoulli(rate)) out.push_back(i);
  if (out.empty() && n > 0) out.push_back(static_cast<std::size_t>(rng.uniform_below(n)));
  return out;
}

// Corrupts `positions` of `tokens` with the mask/random/keep split.
// `vocabulary` supplies random replacements; when empty the sentence's own
// tokens are used.
inline ClozeExample corrupt(const Tokens& tokens, const std::vector<std::size_t>& positions, Rng& rng,
                            const MaskingConfig& cfg, const Tokens& vocabulary = {}) {
  ClozeExample ex;
  ex.input = tokens;
  const Tokens& vocab = vocabulary.empty() ? tokens : vocabulary;
  for (std::size_t p : positions) {
    if (p >= tokens.size()) throw DataError("corrupt: position out of range");
    ex.positions.push_back(p);
    ex.targets.push_back(tokens[p]);
    const double u = rng.uniform01();
    if (u < cfg.mask_fraction) {
      ex.input[p] = kMaskToken;
      ex.replacements.push_back(Replacement::mask);
    } else if (u < cfg.mask_fraction + cfg.random_fraction) {
      ex.input[p] = vocab[static_cast<std::size_t>(rng.uniform_below(vocab.size()))];
      ex.replacements.push_back(Replacement::random);
    } else {
      ex.replacements.push_back(Replacement::keep);
    }
  }
  return ex;
}

inline ClozeExample mask_cloze(const Tokens& tokens, std::uint64_t seed, const MaskingConfig& cfg = {},
                               const Tokens& vocabulary = {}) {
  if (tokens.empty()) throw DataError("mask_cloze: empty input");
  if (!(cfg.mask_rate > 0.0 && cfg.mask_rate < 1.0)) throw UsageError("mask_cloze: mask rate must be in (0, 1)");
  Rng rng(seed);
  const auto positions = select_positions(tokens.size(), cfg.mask_rate, rng);
  return corrupt(tokens, positions, rng, cfg, vocabulary);
}

// Same corruption as for words, with the tags at those positions as targets.
inline ClozeExample pos_example(const Tokens& tokens, const Tokens& tags, const std::vector<std::size_t>& positions,
                                Rng& rng, const MaskingConfig& cfg = {}, const Tokens& vocabulary = {}) {
  ClozeExample ex = corrupt(tokens, positions, rng, cfg, vocabulary);
  for (std::size_t i = 0; i < ex.positions.size(); ++i) {
    const std::size_t p = ex.positions[i];
    if (p >= tags.size() || tags[p].empty())
      throw DataError("pos_targets: missing tag at position " + std::to_string(p));
    ex.targets[i] = tags[p];
  }
  return ex;
}

// Position selection matches mask_cloze under the same seed.
inline ClozeExample pos_targets(const Tokens& tokens, const Tokens& tags, std::uint64_t seed,
                                const MaskingConfig& cfg = {}, const Tokens& vocabulary = {}) {
  if (tokens.empty()) throw DataError("pos_targets: empty input");
  if (!(cfg.mask_rate > 0.0 && cfg.mask_rate < 1.0)) throw UsageError("pos_targets: mask rate must be in (0, 1)");
  Rng rng(seed);
  const auto positions = select_positions(tokens.size(), cfg.mask_rate, rng);
  return pos_example(tokens, tags, positions, rng, cfg, vocabulary);
}

// ---------------------------------------------------------------------------
// Next-sentence pairs

struct SentenceRef {
  std::size_t doc = 0;
  std::size_t index = 0;  // sentence index within the document, paragraphs flattened
};

struct NspPair {
  SentenceRef a;
  SentenceRef b;
  bool adjacent = false;
};

// Flattened view of a corpus: document -> sentences in reading order.
class SentenceIndex {
 public:
  explicit SentenceIndex(const std::vector<Document>& docs) {
    for (std::size_t d = 0; d < docs.size(); ++d) {
      std::vector<const Sentence*> flat;
      std::vector<std::size_t> para;
      for (std::size_t p = 0; p < docs[d].paragraphs.size(); ++p)
        for (const auto& s : docs[d].paragraphs[p].sentences) {
          flat.push_back(&s);
          para.push_back(p);
        }
      for (std::size_t i = 0; i < flat.size(); ++i) {
        all_.push_back({d, i});
        if (i + 1 < flat.size()) with_successor_.push_back({d, i});
      }
      sentences_.push_back(std::move(flat));
      paragraph_of_.push_back(std::move(para));
    }
  }

  const Sentence& at(const SentenceRef& r) const { return *sentences_[r.doc][r.index]; }
  std::size_t paragraph_of(const SentenceRef& r) const { return paragraph_of_[r.doc][r.index]; }
  std::size_t documents() const { return sentences_.size(); }
  std::size_t doc_size(std::size_t d) const { return sentences_[d].size(); }
  const std::vector<SentenceRef>& all() const { return all_; }
  const std::vector<SentenceRef>& with_successor() const { return with_successor_; }

  bool has_successor(const SentenceRef& r) const { return r.index + 1 < sentences_[r.doc].size(); }

  // Uniform over sentences of every document except `doc`.
  SentenceRef random_other(std::size_t doc, Rng& rng) const {
    const std::size_t pool = all_.size() - sentences_[doc].size();
    if (pool == 0) throw DataError("nsp: no sentences outside document " + std::to_string(doc));
    auto k = static_cast<std::size_t>(rng.uniform_below(pool));
    for (std::size_t d = 0; d < sentences_.size(); ++d) {
      if (d == doc) continue;
      if (k < sentences_[d].size()) return {d, k};
      k -= sentences_[d].size();
    }
    return {};  // unreachable
  }

 private:
  std::vector<std::vector<const Sentence*>> sentences_;
  std::vector<std::vector<std::size_t>> paragraph_of_;
  std::vector<SentenceRef> all_;
  std::vector<SentenceRef> with_successor_;
};

// Pair for anchor `a`: with probability 1/2 its successor (when it has one),
// otherwise a random sentence from another document.
inline NspPair nsp_pair_for(const SentenceIndex& index, const SentenceRef& a, Rng& rng) {
  if (rng.bernoulli(0.5) && index.has_successor(a)) return {a, {a.doc, a.index + 1}, true};
  return {a, index.random_other(a.doc, rng), false};
}

// `count` draws; anchors are uniform over sentences that have a successor.
inline std::vector<NspPair> nsp_pairs(const std::vector<Document>& docs, std::size_t count, std::uint64_t seed) {
  if (docs.size() < 2) throw DataError("nsp_pairs: need at least 2 documents");
  const SentenceIndex index(docs);
  if (index.with_successor().empty())
    throw DataError("nsp_pairs: corpus has no document with two or more sentences");
  Rng rng(seed);
  std::vector<NspPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& a = index.with_successor()[static_cast<std::size_t>(rng.uniform_below(index.with_successor().size()))];
    out.push_back(nsp_pair_for(index, a, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus files and datasets

inline Tokens split_ws(std::string_view s) {
  Tokens out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// One sentence per line; a blank line ends a paragraph, two or more
// consecutive blank lines end a document. An optional tab-separated second
// column carries one POS tag per token.
inline std::vector<Document> read_corpus(std::istream& in, const std::string& source = "<stream>") {
  std::vector<Document> docs(1);
  docs.back().paragraphs.emplace_back();
  std::size_t blanks = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    Sentence s;
    s.tokens = split_ws(std::string_view(line).substr(0, tab));
    if (s.tokens.empty()) {
      ++blanks;
      continue;
    }
    if (tab != std::string::npos) {
      s.tags = split_ws(std::string_view(line).substr(tab + 1));
      if (s.tags.size() != s.tokens.size())
        throw DataError(source + ":" + std::to_string(line_no) + ": " + std::to_string(s.tokens.size()) +
                        " tokens but " + std::to_string(s.tags.size()) + " tags");
    }
    if (blanks >= 2 && !docs.back().paragraphs.back().sentences.empty()) {
      docs.emplace_back();
      docs.back().paragraphs.emplace_back();
    } else if (blanks == 1 && !docs.back().paragraphs.back().sentences.empty()) {
      docs.back().paragraphs.emplace_back();
    }
    blanks = 0;
    docs.back().paragraphs.back().sentences.push_back(std::move(s));
  }
  if (docs.back().paragraphs.back().sentences.empty()) docs.back().paragraphs.pop_back();
  if (docs.back().paragraphs.empty()) docs.pop_back();
  return docs;
}

inline std::vector<Document> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path.string());
  return read_corpus(in, path.string());
}

enum class CorpusTask { lm, lm_scrambled, lm_scrambled_para, lm_pos };

inline CorpusTask parse_corpus_task(const std::string& s) {
  if (s == "lm") return CorpusTask::lm;
  if (s == "lm-scrambled") return CorpusTask::lm_scrambled;
  if (s == "lm-scrambled-para") return CorpusTask::lm_scrambled_para;
  if (s == "lm-pos") return CorpusTask::lm_pos;
  throw UsageError("unknown corpus task '" + s + "' (expected lm, lm-scrambled, lm-scrambled-para, lm-pos)");
}

inline std::string to_string(CorpusTask t) {
  switch (t) {
    case CorpusTask::lm: return "lm";
    case CorpusTask::lm_scrambled: return "lm-scrambled";
    case CorpusTask::lm_scrambled_para: return "lm-scrambled-para";
    case CorpusTask::lm_pos: return "lm-pos";
  }
  return "?";
}

inline nlohmann::json to_json_line(const ClozeExample& ex) {
  nlohmann::json j{{"input", ex.input}, {"targets", ex.targets}, {"positions", ex.positions}};
  if (ex.nsp) j["nsp"] = {{"b", ex.nsp->b}, {"adjacent", ex.nsp->adjacent}};
  return j;
}

inline ClozeExample from_json_line(const nlohmann::json& j) {
  ClozeExample ex;
  ex.input = j.at("input").get<Tokens>();
  ex.targets = j.at("targets").get<Tokens>();
  ex.positions = j.at("positions").get<std::vector<std::size_t>>();
  if (j.contains("nsp")) ex.nsp = ClozeExample::Nsp{j["nsp"].at("b").get<Tokens>(), j["nsp"].at("adjacent").get<bool>()};
  return ex;
}

struct SplitSizes {
  std::size_t train = 1'000'000;
  std::size_t dev = 100'000;
  std::size_t test = 100'000;
};

struct DatasetOptions {
  CorpusTask task = CorpusTask::lm;
  SplitSizes sizes;
  std::uint64_t seed = 0;
  MaskingConfig masking;
};

struct DatasetSplits {
  std::vector<ClozeExample> train, dev, test;
};

namespace detail {

inline constexpr std::uint64_t kSplitStream = 1;
inline constexpr std::uint64_t kExampleStream = 2;
inline constexpr std::uint64_t kScrambleStream = 3;
inline constexpr std::uint64_t kParagraphStream = 4;

inline std::string sentence_key(const Tokens& t) {
  std::string k;
  for (const auto& w : t) {
    k += w;
    k += '\x1f';
  }
  return k;
}

// The sentence as it appears in the generated task: scrambled within itself,
// within its paragraph, or untouched.
class TaskView {
 public:
  TaskView(const std::vector<Document>& docs, const SentenceIndex& index, CorpusTask task, std::uint64_t seed)
      : docs_(docs), index_(index), task_(task), seed_(seed) {}

  Tokens tokens(const SentenceRef& r) const {
    const auto& s = index_.at(r);
    switch (task_) {
      case CorpusTask::lm:
      case CorpusTask::lm_pos:
        return s.tokens;
      case CorpusTask::lm_scrambled:
        return scramble_sentence(s.tokens, derive_seed(seed_, kScrambleStream, flat_id(r)));
      case CorpusTask::lm_scrambled_para:
        return paragraph_scrambled(r);
    }
    return s.tokens;
  }

 private:
  std::uint64_t flat_id(const SentenceRef& r) const { return (static_cast<std::uint64_t>(r.doc) << 32) | r.index; }

  Tokens paragraph_scrambled(const SentenceRef& r) const {
    const std::size_t p = index_.paragraph_of(r);
    const auto& para = docs_[r.doc].paragraphs[p];
    std::size_t first = r.index;
    while (first > 0 && index_.paragraph_of({r.doc, first - 1}) == p) --first;
    const std::uint64_t key = (static_cast<std::uint64_t>(r.doc) << 32) | p;
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      std::vector<Tokens> sents;
      for (const auto& s : para.sentences) sents.push_back(s.tokens);
      it = cache_.emplace(key, scramble_paragraph(sents, derive_seed(seed_, kParagraphStream, key))).first;
    }
    return it->second[r.index - first];
  }

  const std::vector<Document>& docs_;
  const SentenceIndex& index_;
  CorpusTask task_;
  std::uint64_t seed_;
  mutable std::unordered_map<std::uint64_t, std::vector<Tokens>> cache_;
};

}  // namespace detail

// Samples disjoint sets of distinct sentences for the three splits and turns
// each into a cloze example with a next-sentence partner.
inline DatasetSplits build_dataset(const std::vector<Document>& docs, const DatasetOptions& opt) {
  if (docs.size() < 2) throw DataError("build_dataset: corpus needs at least 2 documents for sentence pairing");
  const SentenceIndex index(docs);

  // Distinct sentences, first occurrence wins.
  std::vector<SentenceRef> unique;
  std::unordered_set<std::string> seen;
  for (const auto& r : index.all())
    if (seen.insert(detail::sentence_key(index.at(r).tokens)).second) unique.push_back(r);

  const std::size_t wanted = opt.sizes.train + opt.sizes.dev + opt.sizes.test;
  if (unique.size() < wanted)
    throw DataError("build_dataset: corpus has " + std::to_string(unique.size()) + " distinct sentences, " +
                    std::to_string(wanted) + " requested");
  if (opt.task == CorpusTask::lm_pos)
    for (const auto& r : index.all())
      if (index.at(r).tags.empty()) throw DataError("build_dataset: lm-pos requires a tag column on every sentence");

  Rng split_rng(derive_seed(opt.seed, detail::kSplitStream));
  split_rng.shuffle(unique);

  Tokens vocabulary;
  {
    std::set<std::string> v;
    for (const auto& r : index.all())
      for (const auto& w : index.at(r).tokens) v.insert(w);
    vocabulary.assign(v.begin(), v.end());
  }

  const detail::TaskView view(docs, index, opt.task, opt.seed);
  const auto make = [&](const SentenceRef& a, std::uint64_t example_id) {
    Rng rng(derive_seed(opt.seed, detail::kExampleStream, example_id));
    const Tokens tokens = view.tokens(a);
    const auto positions = select_positions(tokens.size(), opt.masking.mask_rate, rng);
    ClozeExample ex;
    if (opt.task == CorpusTask::lm_pos)
      ex = pos_example(tokens, index.at(a).tags, positions, rng, opt.masking, vocabulary);
    else
      ex = corrupt(tokens, positions, rng, opt.masking, vocabulary);
    const auto pair = nsp_pair_for(index, a, rng);
    ex.nsp = ClozeExample::Nsp{view.tokens(pair.b), pair.adjacent};
    return ex;
  };

  DatasetSplits out;
  std::size_t k = 0;
  for (auto* split : {&out.train, &out.dev, &out.test}) {
    const std::size_t n = split == &out.train ? opt.sizes.train : split == &out.dev ? opt.sizes.dev : opt.sizes.test;
    split->reserve(n);
    for (std::size_t i = 0; i < n; ++i, ++k) split->push_back(make(unique[k], k));
  }
  return out;
}

inline void write_jsonl(const std::vector<ClozeExample>& examples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& ex : examples) out << to_json_line(ex).dump() << '\n';
}

// Writes <dir>/<task>.{train,dev,test}.jsonl and returns the paths.
inline std::vector<std::filesystem::path> write_dataset(const DatasetSplits& splits, CorpusTask task,
                                                        const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  const std::string stem = to_string(task);
  for (const auto& [name, data] : {std::pair{"train", &splits.train}, {"dev", &splits.dev}, {"test", &splits.test}}) {
    paths.push_back(dir / (stem + "." + name + ".jsonl"));
    write_jsonl(*data, paths.back());
  }
  return paths;
}

}  // namespace repdecode
