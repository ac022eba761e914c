#include "layerlens/report.hpp"

#include "layerlens/errors.hpp"
#include "layerlens/rng.hpp"
#include "layerlens/version.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace layerlens {

std::string run_manifest::hash() const {
  std::uint64_t h = fnv1a64(artifact_version);
  h = fnv1a64_accumulate(h, "|");
  h = fnv1a64_accumulate(h, config_digest);
  h = fnv1a64_accumulate(h, "|");
  h = fnv1a64_accumulate(h, bundle_hash);
  h = fnv1a64_accumulate(h, "|");
  h = fnv1a64_accumulate(h, std::to_string(seed));
  for (const auto &[name, dh] : dataset_hashes) {
    h = fnv1a64_accumulate(h, "|");
    h = fnv1a64_accumulate(h, dh);
  }
  return hash_to_hex(h);
}

run_manifest make_manifest(const std::string &command_line,
                           const std::string &config_digest,
                           std::uint64_t seed) {
  run_manifest m;
  m.command_line = command_line;
  m.config_digest = config_digest;
  m.seed = seed;
  m.artifact_version = k_artifact_version;
  if (const char *epoch = std::getenv("SOURCE_DATE_EPOCH"))
    m.timestamp = std::atoll(epoch);
  else
    m.timestamp = static_cast<std::int64_t>(std::time(nullptr));
  return m;
}

std::string hash_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw io_error("cannot open for hashing: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hash_to_hex(fnv1a64(ss.str()));
}

void write_manifest(const run_manifest &m, const std::filesystem::path &path) {
  nlohmann::ordered_json j;
  j["artifact"] = m.artifact_version;
  j["command"] = m.command_line;
  j["config_digest"] = m.config_digest;
  j["bundle_hash"] = m.bundle_hash;
  j["dataset_hashes"] = m.dataset_hashes;
  j["seed"] = m.seed;
  j["manifest_hash"] = m.hash();
  j["timestamp"] = m.timestamp;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw io_error("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

std::string render_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

std::vector<report_input>
load_metrics_files(const std::vector<std::filesystem::path> &paths) {
  std::vector<report_input> out;
  for (const auto &p : paths) {
    report_input in;
    in.scores = read_metrics_csv(p, &in.meta);
    if (in.meta.task.empty())
      throw schema_error("metrics file lacks a task tag: " + p.string());
    if (in.meta.model_label.empty())
      in.meta.model_label = p.stem().string();
    out.push_back(std::move(in));
  }
  return out;
}

namespace {

// Metric rows in the paper's column order.
struct metric_ref {
  std::string label; // "MPS-Cal"
  std::string task;  // family tag
  enum class kind { accuracy, split, mc1, mc3 } which;
  std::string split_key;
};

const std::vector<metric_ref> &metric_catalog() {
  static const std::vector<metric_ref> rows = {
      {"LAMA", "lama", metric_ref::kind::accuracy, ""},
      {"Reclor", "reclor", metric_ref::kind::accuracy, ""},
      {"MPS-Cal", "mps_cal", metric_ref::kind::accuracy, ""},
      {"MPS-Rea", "mps_rea", metric_ref::kind::accuracy, ""},
      {"xMPS-Cal", "xmps_cal", metric_ref::kind::accuracy, ""},
      {"xMPS-Rea", "xmps_rea", metric_ref::kind::accuracy, ""},
      {"MC1", "truthfulqa", metric_ref::kind::mc1, ""},
      {"MC3", "truthfulqa", metric_ref::kind::mc3, ""},
      {"Arithmetic-Int", "arith", metric_ref::kind::split, "arith_int"},
      {"Arithmetic-Float", "arith", metric_ref::kind::split, "arith_float"},
  };
  return rows;
}

bool metric_value(const metric_ref &ref, const layer_metrics &m, double *out) {
  switch (ref.which) {
  case metric_ref::kind::accuracy:
    *out = m.accuracy;
    return true;
  case metric_ref::kind::mc1:
    if (!m.has_mc)
      return false;
    *out = m.mc1;
    return true;
  case metric_ref::kind::mc3:
    if (!m.has_mc)
      return false;
    *out = m.mc3;
    return true;
  case metric_ref::kind::split: {
    const auto it = m.task_split.find(ref.split_key);
    if (it == m.task_split.end()) {
      // Single-task arithmetic runs have no split; fall back to accuracy
      // when the dataset is exactly that task.
      return false;
    }
    *out = it->second;
    return true;
  }
  }
  return false;
}

std::string sanitize_label(const std::string &label) {
  std::string out;
  for (char c : label)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

} // namespace

void write_report(const std::vector<report_input> &inputs,
                  const std::filesystem::path &out_dir,
                  const std::string &manifest_hash) {
  if (inputs.empty())
    throw schema_error("no metrics files given");
  std::filesystem::create_directories(out_dir);

  // model label -> task -> input
  std::map<std::string, std::map<std::string, const report_input *>> by_model;
  for (const auto &in : inputs) {
    auto &slot = by_model[in.meta.model_label][in.meta.task];
    if (slot != nullptr)
      throw schema_error("duplicate metrics for model " +
                         in.meta.model_label + " task " + in.meta.task);
    slot = &in;
  }

  // (a) size-comparison table from each task's final (highest) layer row.
  {
    std::ofstream out(out_dir / "size_table.csv",
                      std::ios::binary | std::ios::trunc);
    out << "# manifest: " << manifest_hash << "\n";
    out << "model";
    for (const auto &ref : metric_catalog())
      out << "," << ref.label;
    out << "\n";
    for (const auto &[model, tasks] : by_model) {
      out << model;
      for (const auto &ref : metric_catalog()) {
        out << ",";
        const auto it = tasks.find(ref.task);
        if (it == tasks.end() || it->second->scores.rows.empty())
          continue;
        const layer_metrics &last = it->second->scores.rows.rbegin()->second;
        double v = 0.0;
        if (metric_value(ref, last, &v))
          out << render_percent(v);
      }
      out << "\n";
    }
  }

  // (b) layer x task grid per model.
  for (const auto &[model, tasks] : by_model) {
    std::set<std::size_t> layers;
    for (const auto &[task, in] : tasks)
      for (const auto &[layer, _] : in->scores.rows)
        layers.insert(layer);
    std::ofstream out(out_dir /
                          ("layer_grid_" + sanitize_label(model) + ".csv"),
                      std::ios::binary | std::ios::trunc);
    out << "# manifest: " << manifest_hash << "\n";
    out << "# model: " << model << "\n";
    out << "task";
    for (std::size_t l : layers)
      out << ",layer" << l;
    out << "\n";
    for (const auto &ref : metric_catalog()) {
      const auto it = tasks.find(ref.task);
      if (it == tasks.end())
        continue;
      // Emit the row only when the metric exists in this file.
      bool any = false;
      std::ostringstream row;
      row << ref.label;
      for (std::size_t l : layers) {
        row << ",";
        const auto rit = it->second->scores.rows.find(l);
        if (rit == it->second->scores.rows.end())
          continue;
        double v = 0.0;
        if (metric_value(ref, rit->second, &v)) {
          row << render_percent(v);
          any = true;
        }
      }
      if (any)
        out << row.str() << "\n";
    }
  }

  // (c) long-form figure data.
  {
    std::ofstream out(out_dir / "fig_layers.csv",
                      std::ios::binary | std::ios::trunc);
    out << "# manifest: " << manifest_hash << "\n";
    out << "model,metric,layer,value\n";
    for (const auto &[model, tasks] : by_model)
      for (const auto &ref : metric_catalog()) {
        const auto it = tasks.find(ref.task);
        if (it == tasks.end())
          continue;
        for (const auto &[layer, m] : it->second->scores.rows) {
          double v = 0.0;
          if (metric_value(ref, m, &v))
            out << model << "," << ref.label << "," << layer << ","
                << render_percent(v) << "\n";
        }
      }
  }
  {
    std::ofstream out(out_dir / "fig_steps.csv",
                      std::ios::binary | std::ios::trunc);
    out << "# manifest: " << manifest_hash << "\n";
    out << "model,task,layer,n_steps,accuracy,count\n";
    for (const auto &[model, tasks] : by_model)
      for (const auto &[task, in] : tasks)
        for (const auto &[layer, m] : in->scores.rows)
          for (const auto &[steps, acc] : m.steps)
            out << model << "," << task << "," << layer << "," << steps << ","
                << render_percent(acc.first) << "," << acc.second << "\n";
  }
}

} // namespace layerlens
