#include "layerlens/errors.hpp"
#include "layerlens/fixtures.hpp"
#include "layerlens/report.hpp"
#include "layerlens/scoring.hpp"
#include "layerlens/tsne.hpp"
#include "layerlens/version.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

namespace {

using namespace layerlens;

// Stable exit codes: 0 ok, 2 spec, 3 load, 4 scoring, 5 report schema,
// 6 projection.
constexpr int k_exit_spec = 2;
constexpr int k_exit_load = 3;
constexpr int k_exit_scoring = 4;
constexpr int k_exit_report = 5;
constexpr int k_exit_projection = 6;

std::string join_args(int argc, char **argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i)
      out += " ";
    out += argv[i];
  }
  return out;
}

std::filesystem::path template_dir_or_default(const std::string &flag_value) {
  if (!flag_value.empty())
    return flag_value;
  if (const char *env = std::getenv("LAYERLENS_TEMPLATE_DIR"))
    return env;
  return "templates";
}

std::string family_tag_for_dataset(const std::filesystem::path &path) {
  // Read the first record's task field and map it to its family.
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw io_error("cannot open dataset: " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#')
      continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string tag = j.at("task").get<std::string>();
      if (tag == "arith_int" || tag == "arith_float")
        return "arith";
      return tag;
    } catch (const nlohmann::json::exception &e) {
      throw parse_error("dataset " + path.string() + " line 1: " + e.what());
    }
  }
  throw validation_error("cannot infer task tag from dataset: " +
                         path.string());
}

int cmd_gen(const std::string &spec_path, const std::string &out_path,
            std::uint64_t seed, bool seed_given,
            const std::string &command_line) {
  arithmetic_spec spec;
  std::string spec_text = "defaults";
  if (!spec_path.empty()) {
    std::ifstream in(spec_path, std::ios::binary);
    if (!in)
      throw io_error("cannot open gen spec: " + spec_path);
    std::ostringstream ss;
    ss << in.rdbuf();
    spec_text = ss.str();
    spec = parse_gen_spec(spec_text);
  }
  if (seed_given)
    spec.seed = seed;

  std::ostringstream digest;
  digest << "gen count=" << spec.count_per_cell << " delta=" << spec.delta_max
         << " types=" << spec.types.size() << " bins=" << spec.bins.size()
         << " columns=" << spec.columns.size() << " seed=" << spec.seed;
  run_manifest manifest =
      make_manifest(command_line, digest.str(), spec.seed);
  manifest.dataset_hashes["gen_spec"] = hash_to_hex(fnv1a64(spec_text));

  const probe_dataset ds = gen_arithmetic(spec);
  save_jsonl(ds, out_path, "manifest: " + manifest.hash());
  write_manifest(manifest, std::string(out_path) + ".manifest.json");

  std::size_t total = 0;
  for (const auto &[cell, count] : per_cell_counts(ds)) {
    std::cout << cell << ": " << count << "\n";
    total += count;
  }
  std::cout << "total: " << total << "\n";
  return 0;
}

struct eval_options {
  std::string bundle_path;
  std::string dataset_path;
  std::string out_dir;
  std::string layers = "last";
  std::string norm = "sum";
  std::string tie = "lowest_index";
  std::string template_dir;
  std::string model_label;
  std::string from_results;
  std::uint64_t seed = 0;
  int threads = 1;
  bool lens_raw = false;
};

int cmd_eval(const eval_options &opt, const std::string &command_line) {
  model_bundle bundle;
  probe_dataset ds;
  prompt_library lib;
  try {
    bundle = load_bundle(opt.bundle_path);
    ds = ingest_jsonl(opt.dataset_path, family_tag_for_dataset(opt.dataset_path));
    lib = load_templates(template_dir_or_default(opt.template_dir));
  } catch (const error &e) {
    std::cerr << "layerlens: load error: " << e.what() << "\n";
    return k_exit_load;
  }

  eval_config cfg;
  cfg.norm = normalization_from_string(opt.norm);
  cfg.tie = tie_break_from_string(opt.tie);
  cfg.layers = parse_layers(opt.layers, bundle.config.n_layers);
  cfg.seed = opt.seed;
  cfg.lens_final_norm = !opt.lens_raw;
  cfg.threads = opt.threads;

  std::ostringstream digest;
  digest << "eval layers=" << opt.layers << " norm=" << opt.norm
         << " tie=" << opt.tie << " lens="
         << (cfg.lens_final_norm ? "final_norm" : "raw") << " seed="
         << cfg.seed;
  run_manifest manifest = make_manifest(command_line, digest.str(), cfg.seed);
  manifest.bundle_hash = hash_file(opt.bundle_path);
  manifest.dataset_hashes[std::filesystem::path(opt.dataset_path)
                              .filename()
                              .string()] = hash_file(opt.dataset_path);

  std::filesystem::create_directories(opt.out_dir);
  const auto results_path = std::filesystem::path(opt.out_dir) / "results.csv";
  const auto metrics_path = std::filesystem::path(opt.out_dir) / "metrics.csv";

  const tokenizer tok = tokenizer_for_bundle(bundle);
  try {
    if (opt.from_results.empty()) {
      const auto rows = score_dataset(bundle, tok, ds, lib, cfg);
      write_results_csv(results_path, rows, manifest.hash());
    } else {
      std::filesystem::copy_file(
          opt.from_results, results_path,
          std::filesystem::copy_options::overwrite_existing);
    }
    // Metrics are a pure re-aggregation of the results file.
    const auto rows = read_results_csv(results_path);
    const layer_scores scores = aggregate_results(rows, ds, cfg);

    metrics_metadata meta;
    meta.manifest_hash = manifest.hash();
    meta.task = ds.task;
    meta.model_label = opt.model_label.empty()
                           ? std::filesystem::path(opt.bundle_path)
                                 .stem()
                                 .string()
                           : opt.model_label;
    meta.normalization_name = to_string(cfg.norm);
    write_metrics_csv(metrics_path, scores, meta);
    write_manifest(manifest,
                   std::filesystem::path(opt.out_dir) / "manifest.json");

    std::size_t no_steps = 0;
    for (const auto &item : ds.items)
      if (!item.n_steps)
        ++no_steps;
    if (no_steps > 0)
      std::cerr << "layerlens: note: " << no_steps
                << " items lack n_steps metadata and are excluded from the "
                   "steps breakdown\n";
    std::cout << "wrote " << results_path.string() << " and "
              << metrics_path.string() << "\n";
  } catch (const error &e) {
    std::cerr << "layerlens: scoring error: " << e.what() << "\n";
    return k_exit_scoring;
  }
  return 0;
}

int cmd_report(const std::vector<std::string> &metrics_files,
               const std::string &out_dir, const std::string &command_line) {
  try {
    std::vector<std::filesystem::path> paths(metrics_files.begin(),
                                             metrics_files.end());
    const auto inputs = load_metrics_files(paths);
    run_manifest manifest = make_manifest(command_line, "report", 0);
    for (const auto &p : paths)
      manifest.dataset_hashes[p.filename().string()] = hash_file(p);
    write_report(inputs, out_dir, manifest.hash());
    write_manifest(manifest,
                   std::filesystem::path(out_dir) / "manifest.json");
  } catch (const error &e) {
    std::cerr << "layerlens: report error: " << e.what() << "\n";
    return k_exit_report;
  }
  return 0;
}

struct project_options {
  std::string bundle_path;
  std::string dataset_path;
  std::string out_dir;
  std::string layers = "1,last";
  std::string pooling_name = "last_token";
  std::string template_dir;
  double perplexity = 0.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  std::uint64_t seed = 0;
  std::string knn = "10"; // comma list of neighbourhood sizes
};

std::vector<std::size_t> parse_knn_list(const std::string &text) {
  std::vector<std::size_t> out;
  std::istringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      const std::size_t k = std::stoul(tok);
      if (k == 0)
        throw std::invalid_argument("zero");
      out.push_back(k);
    } catch (const std::exception &) {
      throw config_error("bad knn token: " + tok);
    }
  }
  if (out.empty())
    throw config_error("empty knn list");
  return out;
}

int cmd_project(const project_options &opt, const std::string &command_line) {
  model_bundle bundle;
  probe_dataset ds;
  prompt_library lib;
  try {
    bundle = load_bundle(opt.bundle_path);
    ds = ingest_jsonl(opt.dataset_path,
                      family_tag_for_dataset(opt.dataset_path));
    lib = load_templates(template_dir_or_default(opt.template_dir));
  } catch (const error &e) {
    std::cerr << "layerlens: load error: " << e.what() << "\n";
    return k_exit_load;
  }
  try {
    const auto layers = parse_layers(opt.layers, bundle.config.n_layers);
    const auto knn_list = parse_knn_list(opt.knn);
    const pooling pool = pooling_from_string(opt.pooling_name);
    tsne_params params;
    params.perplexity = opt.perplexity;
    params.iterations = opt.iterations;
    params.learning_rate = opt.learning_rate;
    params.seed = opt.seed;

    std::ostringstream digest;
    digest << "project layers=" << opt.layers << " pooling="
           << opt.pooling_name << " perplexity=" << opt.perplexity
           << " iterations=" << opt.iterations << " lr=" << opt.learning_rate
           << " seed=" << opt.seed << " knn=" << opt.knn;
    run_manifest manifest =
        make_manifest(command_line, digest.str(), opt.seed);
    manifest.bundle_hash = hash_file(opt.bundle_path);
    manifest.dataset_hashes[std::filesystem::path(opt.dataset_path)
                                .filename()
                                .string()] = hash_file(opt.dataset_path);

    std::filesystem::create_directories(opt.out_dir);
    const tokenizer tok = tokenizer_for_bundle(bundle);

    std::ofstream purity_out(std::filesystem::path(opt.out_dir) /
                                 "purity.csv",
                             std::ios::binary | std::ios::trunc);
    purity_out << "# manifest: " << manifest.hash() << "\n";
    purity_out << "layer,k,purity\n";

    for (std::size_t layer : layers) {
      const embedding_set emb =
          extract_embeddings(bundle, tok, ds, lib, layer, pool);
      const tsne_result res = tsne_project(emb, params);
      write_projection_csv(std::filesystem::path(opt.out_dir) /
                               ("projection_layer" + std::to_string(layer) +
                                ".csv"),
                           emb, res, params, manifest.hash());
      for (std::size_t k : knn_list) {
        const double purity = nn_purity(res.y, emb.n, 2, emb.labels, k);
        char buf[64];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f", layer, k, purity);
        purity_out << buf << "\n";
      }
    }
    write_manifest(manifest,
                   std::filesystem::path(opt.out_dir) / "manifest.json");
  } catch (const error &e) {
    std::cerr << "layerlens: projection error: " << e.what() << "\n";
    return k_exit_projection;
  }
  return 0;
}

int cmd_fixture(const std::string &kind, const std::string &out_path,
                const std::string &config_path, std::uint64_t seed,
                std::size_t n_layers, std::size_t d_model, std::size_t vocab,
                std::size_t max_seq) {
  model_config cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in)
      throw io_error("cannot open config: " + config_path);
    std::ostringstream ss;
    ss << in.rdbuf();
    cfg = parse_config_text(ss.str());
  } else {
    cfg = fixture_config(n_layers, d_model, vocab, max_seq);
  }
  const model_bundle bundle = kind == "constant"
                                  ? constant_logit_bundle(cfg)
                                  : random_bundle(cfg, seed);
  save_bundle(bundle, out_path);
  std::cout << "wrote " << out_path << " (" << kind << ", " << cfg.n_layers
            << " layers, d_model " << cfg.d_model << ", vocab "
            << cfg.vocab_size << ")\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"layer-wise logit-lens probing toolkit"};
  app.set_version_flag("--version", std::string(k_artifact_version));
  const std::string command_line = join_args(argc, argv);

  // gen
  auto *gen = app.add_subcommand("gen", "generate the arithmetic dataset");
  std::string gen_spec, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--spec", gen_spec, "generation spec file (defaults: full grid)");
  gen->add_option("--out", gen_out, "output dataset path")->required();
  auto *gen_seed_opt = gen->add_option("--seed", gen_seed, "generator seed");

  // eval
  auto *eval = app.add_subcommand("eval", "score a dataset at tapped layers");
  eval_options eopt;
  eval->add_option("--bundle", eopt.bundle_path, "weight container")->required();
  eval->add_option("--dataset", eopt.dataset_path, "dataset jsonl")->required();
  eval->add_option("--out", eopt.out_dir, "output directory")->required();
  eval->add_option("--layers", eopt.layers, "comma list | all | last");
  eval->add_option("--normalization", eopt.norm, "sum | mean");
  eval->add_option("--tie-break", eopt.tie, "lowest_index | seeded_random");
  eval->add_option("--template-dir", eopt.template_dir, "prompt template dir");
  eval->add_option("--model-label", eopt.model_label, "label in metrics files");
  eval->add_option("--from-results", eopt.from_results,
                   "re-aggregate an existing results file");
  eval->add_option("--seed", eopt.seed, "tie-break seed");
  eval->add_option("--threads", eopt.threads, "item-level parallelism");
  eval->add_flag("--lens-raw", eopt.lens_raw,
                 "unembed the raw residual (skip the final norm)");

  // report
  auto *report = app.add_subcommand("report", "emit table and figure data");
  std::vector<std::string> report_metrics;
  std::string report_out;
  report->add_option("--metrics", report_metrics, "metrics csv files")
      ->required();
  report->add_option("--out", report_out, "output directory")->required();

  // project
  auto *project = app.add_subcommand("project", "t-SNE layer projections");
  project_options popt;
  project->add_option("--bundle", popt.bundle_path, "weight container")
      ->required();
  project->add_option("--dataset", popt.dataset_path, "dataset jsonl")
      ->required();
  project->add_option("--out", popt.out_dir, "output directory")->required();
  project->add_option("--layers", popt.layers, "comma list | all | last");
  project->add_option("--pooling", popt.pooling_name,
                      "last_token | mean_option_tokens");
  project->add_option("--template-dir", popt.template_dir, "template dir");
  project->add_option("--perplexity", popt.perplexity,
                      "0 = min(30, (n-1)/3)");
  project->add_option("--iterations", popt.iterations, "descent iterations");
  project->add_option("--learning-rate", popt.learning_rate, "step size");
  project->add_option("--seed", popt.seed, "init seed");
  project->add_option("--knn", popt.knn,
                      "comma list of neighbourhood sizes for purity");

  // fixture
  auto *fixture = app.add_subcommand(
      "fixture", "write a deterministic test bundle (random or constant)");
  std::string fix_kind = "random", fix_out, fix_config;
  std::uint64_t fix_seed = 7;
  std::size_t fix_layers = 4, fix_d = 32, fix_vocab = 320, fix_seq = 4096;
  fixture->add_option("--kind", fix_kind, "random | constant");
  fixture->add_option("--out", fix_out, "output path")->required();
  fixture->add_option("--config", fix_config,
                      "flat key/value config document (overrides dims)");
  fixture->add_option("--seed", fix_seed, "weight seed");
  fixture->add_option("--layers", fix_layers, "layer count");
  fixture->add_option("--d-model", fix_d, "model width");
  fixture->add_option("--vocab", fix_vocab, "vocab size (>= 259)");
  fixture->add_option("--max-seq", fix_seq, "context length");

  app.require_subcommand(1);
  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen(gen_spec, gen_out, gen_seed, gen_seed_opt->count() > 0,
                     command_line);
    if (eval->parsed())
      return cmd_eval(eopt, command_line);
    if (report->parsed())
      return cmd_report(report_metrics, report_out, command_line);
    if (project->parsed())
      return cmd_project(popt, command_line);
    if (fixture->parsed())
      return cmd_fixture(fix_kind, fix_out, fix_config, fix_seed, fix_layers,
                         fix_d, fix_vocab, fix_seq);
  } catch (const config_error &e) {
    std::cerr << "layerlens: " << e.what() << "\n";
    return k_exit_spec;
  } catch (const error &e) {
    std::cerr << "layerlens: " << e.what() << "\n";
    return k_exit_load;
  }
  return 0;
}
