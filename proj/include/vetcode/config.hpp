#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vetcode/corpus.hpp"
#include "vetcode/pipeline.hpp"
#include "vetcode/splitter.hpp"

namespace vetcode {

// Resolved run configuration. Relative paths are taken relative to the
// working directory; unset paths default to files under `out`.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "run";

  struct {
    std::filesystem::path path;         // default <out>/corpus.jsonl
    std::filesystem::path terminology;  // directory; default <out>/terminology when present
    bool migrate = true;                // apply the inactive-to-active map on load
  } corpus;

  GeneratorConfig generator;

  struct {
    SplitFractions fractions;
    std::filesystem::path plan;  // default <out>/split.jsonl
  } split;

  InputConfig tokenizer;
  ModelConfig model;
  TrainConfig train;
  std::size_t replicates = 1;

  struct {
    std::vector<double> volume_fractions = {0.25, 0.5, 0.75, 1.0};
    std::vector<std::vector<Section>> field_permutations = {
        {Section::diagnosis}, {Section::assessment}, {Section::diagnosis, Section::assessment}};
  } analysis;

  struct {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t top_k = 20;
    std::filesystem::path log;    // default <out>/events.jsonl
    std::filesystem::path queue;  // default: test split of the corpus
  } service;

  std::filesystem::path corpus_path() const;
  std::filesystem::path plan_path() const;
  std::filesystem::path terminology_dir() const;
  std::filesystem::path model_dir() const { return out / "model"; }
  std::filesystem::path log_path() const;

  // Checks cross-field constraints; throws Error(config).
  void validate() const;
  PipelineConfig pipeline() const;
};

// YAML text; unknown keys and wrongly typed values are rejected with
// Error(config) naming the key path.
RunConfig parse_run_config(const std::string& yaml_text);
RunConfig load_run_config(const std::filesystem::path& path);

// The complete resolved configuration, every key present.
std::string dump_run_config(const RunConfig& config);
// FNV-1a of dump_run_config, 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace vetcode
