// repdecode: brain-decoding analysis toolkit.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "repdecode/pipeline.hpp"

namespace fs = std::filesystem;
using namespace repdecode;

namespace {

// Flat "key = value" file; '#' starts a comment. Keys are long flag names
// without the leading dashes.
std::map<std::string, std::string> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trimmed = io::detail::trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string_view::npos)
      throw UsageError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    kv[std::string(io::detail::trim(trimmed.substr(0, eq)))] = std::string(io::detail::trim(trimmed.substr(eq + 1)));
  }
  return kv;
}

// Fills options of `sub` that were not given on the command line.
void apply_config(CLI::App& sub, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt) continue;
    if (opt->count() > 0) continue;
    if (opt->get_expected_max() > 1) {
      for (const auto& piece : CLI::detail::split(value, ',')) opt->add_result(CLI::detail::trim_copy(piece));
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

std::size_t default_workers() {
  if (const char* env = std::getenv("REPDECODE_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (...) {
    }
    std::cerr << "warning: ignoring invalid REPDECODE_WORKERS='" << env << "'\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"repdecode: decode brain activations into model representation spaces"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t workers = default_workers();
  std::string out = "out";
  std::string manifest_path;

  const auto common = [&](CLI::App* sub, bool needs_manifest) {
    sub->add_option("--config", config_path, "flat key = value config file; flags win");
    sub->add_option("--seed", seed, "random seed")->capture_default_str();
    sub->add_option("--out", out, "output directory or prefix")->capture_default_str();
    sub->add_option("--workers", workers, "worker threads (env REPDECODE_WORKERS)")->capture_default_str();
    if (needs_manifest) sub->add_option("--manifest", manifest_path, "run manifest JSON");
  };

  // pca
  auto* pca = app.add_subcommand("pca", "compress a subject's brain images with PCA");
  std::string pca_input;
  Eigen::Index components = 256;
  common(pca, false);
  pca->add_option("--input", pca_input, "subject brain matrix (MATX or CSV)");
  pca->add_option("--components", components, "number of principal components")->capture_default_str();

  // decode
  auto* decode = app.add_subcommand("decode", "nested cross-validated ridge decoding for every manifest pair");
  pipeline::DecodeOptions dopt;
  common(decode, true);
  decode->add_option("--beta-grid", dopt.ridge.beta_grid, "comma-separated ridge strengths")->delimiter(',');
  decode->add_option("--folds", dopt.ridge.outer_folds, "outer folds")->capture_default_str();
  decode->add_option("--inner-folds", dopt.ridge.inner_folds, "inner folds")->capture_default_str();
  decode->add_flag("--normalize-targets", dopt.normalize_targets, "L2-normalize target rows");

  // rsa
  auto* rsa = app.add_subcommand("rsa", "representational similarity heatmap over tasks");
  common(rsa, true);

  // probe
  auto* probe = app.add_subcommand("probe", "structural probe UAS for every token-reps entry");
  pipeline::ProbeOptions popt;
  std::vector<std::string> conllu;
  common(probe, true);
  probe->add_option("--conllu", conllu, "CoNLL-U files aligned with the token representations");
  probe->add_option("--rank", popt.probe.rank, "probe rank (<= 30)")->capture_default_str();
  probe->add_option("--epochs", popt.probe.epochs, "training epochs")->capture_default_str();
  probe->add_option("--lr", popt.probe.learning_rate, "Adam step size")->capture_default_str();
  probe->add_option("--batch-size", popt.probe.batch_size, "sentences per batch")->capture_default_str();
  probe->add_option("--test-fraction", popt.test_fraction, "held-out fraction")->capture_default_str();

  // corpus
  auto* corpus = app.add_subcommand("corpus", "generate a cloze-task dataset");
  std::string corpus_path, task_name = "lm";
  DatasetOptions copt;
  common(corpus, false);
  corpus->add_option("--corpus", corpus_path, "input corpus");
  corpus->add_option("--task", task_name, "lm | lm-scrambled | lm-scrambled-para | lm-pos")->capture_default_str();
  corpus->add_option("--train", copt.sizes.train, "training examples")->capture_default_str();
  corpus->add_option("--dev", copt.sizes.dev, "development examples")->capture_default_str();
  corpus->add_option("--test", copt.sizes.test, "test examples")->capture_default_str();
  corpus->add_option("--mask-rate", copt.masking.mask_rate, "per-token selection probability")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "t-tests and bootstrap CIs over decode results");
  std::string results_dir, baseline_task = "pretrained";
  common(report, false);
  report->add_option("--results", results_dir, "directory written by `decode`");
  report->add_option("--baseline-task", baseline_task, "task treated as the pre-fine-tuning baseline")
      ->capture_default_str();

  // embed
  auto* embed = app.add_subcommand("embed", "word-vector averaging baseline sentence matrix");
  std::string vectors_path, sentences_path;
  bool lowercase = false;
  common(embed, false);
  embed->add_option("--vectors", vectors_path, "text word vectors: word v1 ... vd");
  embed->add_option("--sentences", sentences_path, "one sentence per line");
  embed->add_flag("--lowercase", lowercase, "lowercase tokens before lookup");

  try {
    // Config values are merged after parsing so explicit flags win; required
    // inputs are checked afterwards since they may come from the config file.
    app.parse(argc, argv);
    CLI::App* active = app.get_subcommands().front();
    if (!config_path.empty()) apply_config(*active, read_config(config_path));
    const auto need = [&](const char* name) {
      auto* opt = active->get_option_no_throw(name);
      if (opt && opt->count() == 0) throw UsageError(std::string(name) + " is required");
    };
    if (active == pca) need("--input");
    if (active == decode || active == rsa || active == probe) need("--manifest");
    if (active == probe) need("--conllu");
    if (active == corpus) need("--corpus");
    if (active == report) need("--results");
    if (active == embed) need("--vectors"), need("--sentences");
    if (workers < 1) throw UsageError("--workers must be >= 1");

    if (active == pca) {
      const auto res = pipeline::run_pca(pca_input, components, out);
      std::cout << "wrote " << res.output.string() << " (" << res.compressed.rows() << " x " << res.compressed.cols()
                << "), retained variance " << res.model.retained_variance() << "\n";
      if (res.low_variance_warning)
        std::cerr << "warning: " << components << " components retain only " << res.model.retained_variance()
                  << " of the variance (<= " << pipeline::kRetainedVarianceFloor << ")\n";
    } else if (active == decode) {
      dopt.ridge.seed = seed;
      dopt.workers = workers;
      const auto manifest = load_manifest(manifest_path);
      const auto results = pipeline::run_decode(manifest, dopt, out);
      std::cout << "decoded " << results.size() << " (subject, model) pairs into " << out << "\n";
    } else if (active == rsa) {
      const auto heat = pipeline::run_rsa(load_manifest(manifest_path), out);
      std::cout << "wrote " << heat.tasks.size() << "x" << heat.tasks.size() << " heatmap into " << out << "\n";
    } else if (active == probe) {
      popt.probe.seed = seed;
      popt.workers = workers;
      std::vector<fs::path> paths(conllu.begin(), conllu.end());
      const auto results = pipeline::run_probe(load_manifest(manifest_path), paths, popt, out);
      for (const auto& r : results)
        std::cout << r.task << " run " << r.run << " step " << r.step << ": UAS " << r.uas << "\n";
    } else if (active == corpus) {
      copt.task = parse_corpus_task(task_name);
      copt.seed = seed;
      for (const auto& p : pipeline::run_corpus(corpus_path, copt, out)) std::cout << "wrote " << p.string() << "\n";
    } else if (active == report) {
      const auto rep = pipeline::run_report(results_dir, baseline_task, seed, out);
      std::cout << "wrote report for " << rep.models.size() << " models into " << out << "\n";
    } else if (active == embed) {
      const auto res = pipeline::run_embed(vectors_path, sentences_path, lowercase, out);
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "wrote " << out << " (" << res.matrix.values.rows() << " x " << res.matrix.values.cols() << ")\n";
    }
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
  return 0;
}
