#pragma once

// End-to-end commands behind the `repdecode` CLI. Each function reads its
// inputs from disk, writes its outputs under an output directory and returns
// what it wrote so callers (and tests) can inspect the results directly.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "repdecode/corpusgen.hpp"
#include "repdecode/decoder.hpp"
#include "repdecode/embed.hpp"
#include "repdecode/error.hpp"
#include "repdecode/matrixio.hpp"
#include "repdecode/pca.hpp"
#include "repdecode/probe.hpp"
#include "repdecode/rsa.hpp"
#include "repdecode/stats.hpp"

namespace repdecode::pipeline {

namespace fs = std::filesystem;

inline constexpr double kRetainedVarianceFloor = 0.95;
inline constexpr double kSignificance = 0.01;
inline constexpr double kCiLevel = 0.95;
inline constexpr std::size_t kCiResamples = 10000;

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fixed(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

// Runs job(i) for i in [0, n) on `workers` threads.
template <typename Job>
void parallel_for(std::size_t n, std::size_t workers, Job&& job) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

inline std::string job_stem(const DecodeResult& r) {
  return r.subject + "__" + r.task + "__r" + std::to_string(r.run) + "__s" + std::to_string(r.step);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// pca

struct PcaOutcome {
  PcaModel model;
  Matrix compressed;
  bool low_variance_warning = false;
  fs::path output;
};

// Writes <out_prefix>.matx (compressed rows) plus the persisted model.
inline PcaOutcome run_pca(const fs::path& input, Eigen::Index components, const fs::path& out_prefix) {
  const Matrix raw = io::read_matrix(input);
  PcaOutcome out;
  out.model = pca_fit(raw, components);
  out.compressed = pca_transform(out.model, raw);
  out.low_variance_warning = out.model.retained_variance() <= kRetainedVarianceFloor;
  if (out_prefix.has_parent_path()) fs::create_directories(out_prefix.parent_path());
  out.output = out_prefix.string() + ".matx";
  io::write_matrix(out.compressed, out.output);
  save_pca(out.model, out_prefix);
  return out;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeOptions {
  RidgeConfig ridge;
  std::size_t workers = 1;
  bool normalize_targets = false;  // L2-normalize target rows before fitting
};

struct TrajectoryRow {
  std::string task;
  int step = 0;
  std::size_t n = 0;
  double mean_mse = 0.0;
  double mean_average_rank = 0.0;
  std::optional<double> delta_mse;
  std::optional<double> delta_average_rank;
};

// Means per (task, step), with deltas against the baseline task's mean at its
// final step.
inline std::vector<TrajectoryRow> trajectory(const std::vector<DecodeResult>& results, const std::string& baseline_task) {
  std::map<std::pair<std::string, int>, TrajectoryRow> rows;
  std::vector<std::pair<std::string, int>> order;
  for (const auto& r : results) {
    const auto key = std::make_pair(r.task, r.step);
    auto [it, inserted] = rows.try_emplace(key);
    if (inserted) {
      order.push_back(key);
      it->second.task = r.task;
      it->second.step = r.step;
    }
    it->second.n += 1;
    it->second.mean_mse += r.mse;
    it->second.mean_average_rank += r.average_rank;
  }
  std::optional<int> baseline_step;
  for (auto& [key, row] : rows) {
    row.mean_mse /= static_cast<double>(row.n);
    row.mean_average_rank /= static_cast<double>(row.n);
    if (key.first == baseline_task && (!baseline_step || key.second > *baseline_step)) baseline_step = key.second;
  }
  std::vector<TrajectoryRow> out;
  for (const auto& key : order) {
    auto row = rows.at(key);
    if (baseline_step) {
      const auto& base = rows.at({baseline_task, *baseline_step});
      row.delta_mse = row.mean_mse - base.mean_mse;
      row.delta_average_rank = row.mean_average_rank - base.mean_average_rank;
    }
    out.push_back(row);
  }
  std::stable_sort(out.begin(), out.end(), [](const TrajectoryRow& a, const TrajectoryRow& b) {
    return std::tie(a.task, a.step) < std::tie(b.task, b.step);
  });
  return out;
}

inline std::string trajectory_csv(const std::vector<TrajectoryRow>& rows) {
  std::ostringstream s;
  s << "task,step,n,mean_mse,mean_average_rank,delta_mse,delta_average_rank\n";
  for (const auto& r : rows) {
    s << r.task << ',' << r.step << ',' << r.n << ',' << detail::fmt(r.mean_mse) << ','
      << detail::fmt(r.mean_average_rank) << ',' << (r.delta_mse ? detail::fmt(*r.delta_mse) : "NA") << ','
      << (r.delta_average_rank ? detail::fmt(*r.delta_average_rank) : "NA") << '\n';
  }
  return s.str();
}

inline Matrix normalize_rows(Matrix m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) m.row(r) /= n;
  }
  return m;
}

// One decode per (brain subject, sentence-reps entry). Writes
// <out>/decode/<subject>__<task>__r<run>__s<step>.json,
// <out>/decode_results.json and <out>/trajectory.csv.
inline std::vector<DecodeResult> run_decode(const RunManifest& manifest, const DecodeOptions& opt, const fs::path& out) {
  opt.ridge.validate();
  const auto brains = manifest.of_kind(EntryKind::brain);
  const auto models = manifest.of_kind(EntryKind::sentence_reps);
  if (brains.empty()) throw DataError("decode: manifest has no brain entries");
  if (models.empty()) throw DataError("decode: manifest has no sentence-reps entries");

  std::vector<Matrix> brain_data, target_data;
  for (const auto* e : brains) brain_data.push_back(io::read_matrix(e->path));
  for (const auto* e : models) {
    target_data.push_back(io::read_matrix(e->path));
    if (opt.normalize_targets) target_data.back() = normalize_rows(std::move(target_data.back()));
  }
  const auto n = brain_data.front().rows();
  for (std::size_t i = 0; i < brains.size(); ++i)
    if (brain_data[i].rows() != n)
      throw DataError("decode: misaligned sentence counts (" + brains[i]->path.string() + " has " +
                      std::to_string(brain_data[i].rows()) + " rows, expected " + std::to_string(n) + ")");
  for (std::size_t i = 0; i < models.size(); ++i)
    if (target_data[i].rows() != n)
      throw DataError("decode: misaligned sentence counts (" + models[i]->path.string() + " has " +
                      std::to_string(target_data[i].rows()) + " rows, expected " + std::to_string(n) + ")");

  const FoldPlan plan = make_fold_plan(static_cast<std::size_t>(n), opt.ridge.outer_folds, opt.ridge.seed);
  const std::size_t jobs = brains.size() * models.size();
  std::vector<DecodeResult> results(jobs);
  detail::parallel_for(jobs, opt.workers, [&](std::size_t job) {
    const std::size_t b = job / models.size();
    const std::size_t m = job % models.size();
    DecodeResult r = nested_cv_decode(brain_data[b], target_data[m], opt.ridge, plan);
    r.subject = brains[b]->subject;
    r.task = models[m]->task;
    r.run = models[m]->run;
    r.step = models[m]->step;
    results[job] = std::move(r);
  });

  fs::create_directories(out / "decode");
  for (const auto& r : results) detail::write_json(out / "decode" / (detail::job_stem(r) + ".json"), r);
  detail::write_json(out / "decode_results.json", nlohmann::json(results));
  detail::write_text(out / "trajectory.csv", trajectory_csv(trajectory(results, manifest.baseline_task)));
  return results;
}

// ---------------------------------------------------------------------------
// report

struct ModelSummary {
  std::string task;
  int step = 0;
  std::size_t n = 0;
  double mean_mse = 0.0;
  double mean_average_rank = 0.0;
  stats::Interval ci_mse;
  stats::Interval ci_average_rank;
};

struct Comparison {
  std::string task;
  std::string metric;
  std::optional<stats::TTestResult> test;
  std::string error;
};

struct Report {
  std::string baseline_task;
  std::vector<ModelSummary> models;
  std::vector<Comparison> comparisons;
};

// Pools every (subject, run) result of each task at its final step. Each
// paired sample compares a subject's decode of a fine-tuned run against the
// same subject's mean baseline decode.
inline Report build_report(const std::vector<DecodeResult>& results, const std::string& baseline_task,
                           std::uint64_t seed) {
  Report rep;
  rep.baseline_task = baseline_task;
  std::vector<std::string> tasks;
  std::map<std::string, int> final_step;
  for (const auto& r : results) {
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
    auto [it, inserted] = final_step.try_emplace(r.task, r.step);
    if (!inserted) it->second = std::max(it->second, r.step);
  }
  std::sort(tasks.begin(), tasks.end());

  const auto final_results = [&](const std::string& task) {
    std::vector<const DecodeResult*> out;
    for (const auto& r : results)
      if (r.task == task && r.step == final_step.at(task)) out.push_back(&r);
    return out;
  };

  std::uint64_t stream = 0;
  for (const auto& task : tasks) {
    const auto rs = final_results(task);
    ModelSummary s;
    s.task = task;
    s.step = final_step.at(task);
    s.n = rs.size();
    std::vector<double> mse, ar;
    for (const auto* r : rs) {
      mse.push_back(r->mse);
      ar.push_back(r->average_rank);
    }
    s.mean_mse = stats::mean(mse);
    s.mean_average_rank = stats::mean(ar);
    s.ci_mse = stats::bootstrap_ci(mse, kCiLevel, kCiResamples, derive_seed(seed, ++stream));
    s.ci_average_rank = stats::bootstrap_ci(ar, kCiLevel, kCiResamples, derive_seed(seed, ++stream));
    rep.models.push_back(s);
  }

  if (!final_step.count(baseline_task)) return rep;
  std::map<std::string, std::pair<double, double>> base_by_subject;  // subject -> (mse, ar)
  std::map<std::string, std::size_t> base_count;
  for (const auto* r : final_results(baseline_task)) {
    auto& acc = base_by_subject[r->subject];
    acc.first += r->mse;
    acc.second += r->average_rank;
    ++base_count[r->subject];
  }
  for (auto& [subject, acc] : base_by_subject) {
    acc.first /= static_cast<double>(base_count[subject]);
    acc.second /= static_cast<double>(base_count[subject]);
  }

  for (const auto& task : tasks) {
    if (task == baseline_task) continue;
    stats::PairedSample mse_pairs, ar_pairs;
    for (const auto* r : final_results(task)) {
      const auto it = base_by_subject.find(r->subject);
      if (it == base_by_subject.end()) continue;
      mse_pairs.baseline.push_back(it->second.first);
      mse_pairs.treatment.push_back(r->mse);
      ar_pairs.baseline.push_back(it->second.second);
      ar_pairs.treatment.push_back(r->average_rank);
    }
    for (const auto& [metric, sample] : {std::pair{"mse", &mse_pairs}, {"average_rank", &ar_pairs}}) {
      Comparison c;
      c.task = task;
      c.metric = metric;
      try {
        c.test = stats::paired_t(*sample);
      } catch (const Error& e) {
        c.error = e.what();
      }
      rep.comparisons.push_back(c);
    }
  }
  return rep;
}

inline nlohmann::json to_json(const Report& rep) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : rep.models)
    models.push_back({{"task", m.task},
                      {"step", m.step},
                      {"n", m.n},
                      {"mean_mse", m.mean_mse},
                      {"mean_average_rank", m.mean_average_rank},
                      {"ci95_mse", {m.ci_mse.lo, m.ci_mse.hi}},
                      {"ci95_average_rank", {m.ci_average_rank.lo, m.ci_average_rank.hi}}});
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : rep.comparisons) {
    nlohmann::json j{{"comparison", c.task + " vs " + rep.baseline_task}, {"metric", c.metric}};
    if (c.test) {
      j["t"] = c.test->t;
      j["df"] = c.test->df;
      j["p"] = c.test->p;
      j["n"] = c.test->n;
      j["mean_difference"] = c.test->mean_difference;
      j["significant@0.01"] = c.test->significant(kSignificance);
    } else {
      j["error"] = c.error;
    }
    comps.push_back(j);
  }
  return {{"baseline_task", rep.baseline_task},
          {"ci", {{"method", "percentile bootstrap of the mean"}, {"level", kCiLevel}, {"resamples", kCiResamples}}},
          {"alpha", kSignificance},
          {"models", models},
          {"comparisons", comps}};
}

inline std::string report_markdown(const Report& rep) {
  std::ostringstream s;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[64];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%d %H:%M:%S UTC", std::gmtime(&now));
  s << "# Decoding report\n\nGenerated " << stamp << ".\n\n";
  s << "Baseline task: `" << rep.baseline_task << "`. Intervals are " << static_cast<int>(kCiLevel * 100)
    << "% percentile-bootstrap CIs of the mean over (subject, run) decoders.\n\n";
  s << "| task | step | n | MSE | MSE 95% CI | AR | AR 95% CI |\n|---|---|---|---|---|---|---|\n";
  for (const auto& m : rep.models)
    s << "| " << m.task << " | " << m.step << " | " << m.n << " | " << detail::fixed(m.mean_mse, 5) << " | ["
      << detail::fixed(m.ci_mse.lo, 5) << ", " << detail::fixed(m.ci_mse.hi, 5) << "] | "
      << detail::fixed(m.mean_average_rank, 2) << " | [" << detail::fixed(m.ci_average_rank.lo, 2) << ", "
      << detail::fixed(m.ci_average_rank.hi, 2) << "] |\n";
  if (!rep.comparisons.empty()) {
    s << "\n## Paired t-tests against the baseline (alpha = " << kSignificance << ")\n\n";
    s << "| comparison | metric | n | t | df | p | significant |\n|---|---|---|---|---|---|---|\n";
    for (const auto& c : rep.comparisons) {
      s << "| " << c.task << " vs " << rep.baseline_task << " | " << c.metric << " | ";
      if (c.test)
        s << c.test->n << " | " << detail::fixed(c.test->t, 3) << " | " << c.test->df << " | " << c.test->p << " | "
          << (c.test->significant(kSignificance) ? "yes" : "no") << " |\n";
      else
        s << "- | - | - | - | " << c.error << " |\n";
    }
  }
  return s.str();
}

inline std::vector<DecodeResult> load_results(const fs::path& dir) {
  std::vector<DecodeResult> results;
  const auto combined = dir / "decode_results.json";
  if (fs::exists(combined)) {
    std::ifstream in(combined);
    return nlohmann::json::parse(in).get<std::vector<DecodeResult>>();
  }
  std::vector<fs::path> files;
  const auto sub = fs::exists(dir / "decode") ? dir / "decode" : dir;
  for (const auto& e : fs::directory_iterator(sub))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    try {
      results.push_back(nlohmann::json::parse(in).get<DecodeResult>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(f.string() + ": not a decode result: " + e.what());
    }
  }
  if (results.empty()) throw DataError("report: no decode results found in " + dir.string());
  return results;
}

// Writes <out>/report.json and <out>/summary.md.
inline Report run_report(const fs::path& results_dir, const std::string& baseline_task, std::uint64_t seed,
                         const fs::path& out) {
  const auto rep = build_report(load_results(results_dir), baseline_task, seed);
  detail::write_json(out / "report.json", to_json(rep));
  detail::write_text(out / "summary.md", report_markdown(rep));
  return rep;
}

// ---------------------------------------------------------------------------
// rsa

// Heatmap over tasks using each task's sentence-reps runs at its final step.
// Writes <out>/rsa_heatmap.csv and <out>/rsa_heatmap.svg.
inline RsaHeatmap run_rsa(const RunManifest& manifest, const fs::path& out) {
  std::vector<TaskRuns> tasks;
  std::optional<Eigen::Index> n;
  for (const auto& task : manifest.tasks(EntryKind::sentence_reps)) {
    const int step = *manifest.final_step(task, EntryKind::sentence_reps);
    TaskRuns tr{task, {}};
    for (const auto* e : manifest.of_kind(EntryKind::sentence_reps)) {
      if (e->task != task || e->step != step) continue;
      const Matrix reps = io::read_matrix(e->path);
      if (n && reps.rows() != *n) throw DataError("rsa: misaligned sentence counts in " + e->path.string());
      n = reps.rows();
      tr.runs.push_back(rsa_vector(reps));
    }
    tasks.push_back(std::move(tr));
  }
  if (tasks.empty()) throw DataError("rsa: manifest has no sentence-reps entries");
  auto heat = rsa_heatmap(tasks);
  fs::create_directories(out);
  write_heatmap_csv(heat, out / "rsa_heatmap.csv");
  detail::write_text(out / "rsa_heatmap.svg", heatmap_svg(heat));
  return heat;
}

// ---------------------------------------------------------------------------
// probe

struct ProbeOptions {
  ProbeConfig probe;
  double test_fraction = 0.2;
  std::size_t workers = 1;
};

struct ProbeRunResult {
  std::string task;
  int run = 0;
  int step = 0;
  double uas = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
};

inline std::vector<ParsedSentence> read_conllu_files(const std::vector<fs::path>& paths) {
  std::vector<ParsedSentence> all;
  for (const auto& p : paths) {
    auto part = read_conllu(p);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (all.empty()) throw DataError("probe: no sentences in the CoNLL-U input");
  return all;
}

// Trains one probe per token-reps entry on a shared seeded train/test split of
// the parsed sentences. Writes <out>/probe/<task>__r<run>__s<step>.probe.{matx,json},
// <out>/probe_uas.csv and <out>/probe_trajectory.csv.
inline std::vector<ProbeRunResult> run_probe(const RunManifest& manifest, const std::vector<fs::path>& conllu,
                                             const ProbeOptions& opt, const fs::path& out) {
  const auto gold = read_conllu_files(conllu);
  const auto entries = manifest.of_kind(EntryKind::token_reps);
  if (entries.empty()) throw DataError("probe: manifest has no token-reps entries");
  const auto [train_idx, test_idx] = split_indices(gold.size(), opt.test_fraction, opt.probe.seed);
  if (train_idx.empty() || test_idx.empty()) throw DataError("probe: train/test split leaves an empty side");

  fs::create_directories(out / "probe");
  std::vector<ProbeRunResult> results(entries.size());
  detail::parallel_for(entries.size(), opt.workers, [&](std::size_t k) {
    const auto* e = entries[k];
    auto sentences = gold;
    attach_reps(sentences, io::read_sequences(e->path));
    std::vector<ParsedSentence> train, test;
    for (auto i : train_idx) train.push_back(sentences[i]);
    for (auto i : test_idx) test.push_back(sentences[i]);
    ProbeConfig cfg = opt.probe;
    cfg.rank = std::min<Eigen::Index>(cfg.rank, train.front().reps.cols());
    const auto model = probe_train(train, cfg);
    save_probe(model, out / "probe" / (e->task + "__r" + std::to_string(e->run) + "__s" + std::to_string(e->step)));
    results[k] = {e->task, e->run, e->step, evaluate_uas(model.b, test),
                  model.training_log.empty() ? model.initial_loss : model.training_log.back(),
                  mean_probe_loss(model.b, test)};
  });

  std::ostringstream per_run;
  per_run << "task,run,step,uas,train_loss,test_loss\n";
  std::map<std::pair<std::string, int>, std::pair<double, std::size_t>> traj;
  for (const auto& r : results) {
    per_run << r.task << ',' << r.run << ',' << r.step << ',' << detail::fmt(r.uas) << ',' << detail::fmt(r.train_loss)
            << ',' << detail::fmt(r.test_loss) << '\n';
    auto& acc = traj[{r.task, r.step}];
    acc.first += r.uas;
    acc.second += 1;
  }
  std::ostringstream t;
  t << "task,step,mean_uas,n_runs\n";
  for (const auto& [key, acc] : traj)
    t << key.first << ',' << key.second << ',' << detail::fmt(acc.first / static_cast<double>(acc.second)) << ','
      << acc.second << '\n';
  detail::write_text(out / "probe_uas.csv", per_run.str());
  detail::write_text(out / "probe_trajectory.csv", t.str());
  return results;
}

// ---------------------------------------------------------------------------
// corpus

inline std::vector<fs::path> run_corpus(const fs::path& corpus, const DatasetOptions& opt, const fs::path& out) {
  const auto docs = read_corpus(corpus);
  return write_dataset(build_dataset(docs, opt), opt.task, out);
}

// ---------------------------------------------------------------------------
// embed

struct EmbedOutcome {
  BaselineMatrix matrix;
  std::vector<std::string> warnings;
};

// One sentence per line of `sentences`; writes an N x dims MATX.
inline EmbedOutcome run_embed(const fs::path& vectors, const fs::path& sentences, bool lowercase, const fs::path& out) {
  EmbedOutcome res;
  const auto table = load_vectors(vectors);
  res.warnings = table.warnings;
  std::ifstream in(sentences);
  if (!in) throw DataError("cannot open " + sentences.string());
  std::vector<Tokens> toks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = tokenize(line, lowercase);
    if (t.empty()) throw DataError(sentences.string() + ":" + std::to_string(line_no) + ": empty sentence");
    toks.push_back(std::move(t));
  }
  res.matrix = embed_sentences(table, toks);
  for (auto row : res.matrix.all_oov_rows)
    res.warnings.push_back("sentence " + std::to_string(row) + " has no in-vocabulary tokens; row is zero");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::write_matrix(res.matrix.values, out);
  return res;
}

}  // namespace repdecode::pipeline
