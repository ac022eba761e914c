#pragma once

#include "layerlens/scoring.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace layerlens {

// Provenance block written next to every command's outputs. The hash
// covers only content-derived fields (never the timestamp or raw paths)
// so reruns over identical inputs embed identical hashes.
struct run_manifest {
  std::string command_line;
  std::string config_digest; // canonical settings string
  std::string bundle_hash;
  std::map<std::string, std::string> dataset_hashes; // name -> fnv hex
  std::uint64_t seed = 0;
  std::string artifact_version;
  std::int64_t timestamp = 0; // honors SOURCE_DATE_EPOCH

  std::string hash() const;
};

run_manifest make_manifest(const std::string &command_line,
                           const std::string &config_digest,
                           std::uint64_t seed);

std::string hash_file(const std::filesystem::path &path);

void write_manifest(const run_manifest &m, const std::filesystem::path &path);

// Paper-layout report files regenerated from metrics files:
//   size_table.csv        one row per model label
//   layer_grid_<model>.csv  task rows x layer columns
//   fig_layers.csv        long-form per-layer curve data
//   fig_steps.csv         reasoning-steps curve data
struct report_input {
  layer_scores scores;
  metrics_metadata meta;
};

std::vector<report_input>
load_metrics_files(const std::vector<std::filesystem::path> &paths);

void write_report(const std::vector<report_input> &inputs,
                  const std::filesystem::path &out_dir,
                  const std::string &manifest_hash);

// Percentage rendering used throughout the tables: value*100 to one
// decimal place ("48.3").
std::string render_percent(double fraction);

} // namespace layerlens
