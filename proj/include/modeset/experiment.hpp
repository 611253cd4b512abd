#pragma once
// Experiment wiring: JSON experiment configs, stage drivers (generate,
// train, evaluate, decompose, pipeline), the manifest that makes pipelines
// resumable, and deterministic report files.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "modeset/filtering.hpp"
#include "modeset/mask.hpp"
#include "modeset/propnet.hpp"
#include "modeset/synthgen.hpp"

namespace modeset {

// Configuration or input problems; the CLI maps these to exit code 2,
// numerical failures (anything else) to exit code 3.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  enum class Kind { Directional, ClassFlip, File };
  Kind kind = Kind::Directional;
  DirectionalConfig directional;
  ClassFlipConfig classflip;
  std::string path;  // Kind::File
};

struct DecompConfig {
  int n_samples = 64;
  std::string candidates = "gt";  // "gt" or "checkpoint"
  bool use_filtered = true;       // score-filter checkpoint proposals
  bool use_dedup = true;          // de-duplicate checkpoint proposals
  double field_noise_sigma = 0.0; // additive noise on the oracle field
  std::string templates = "gt";   // class-flip template source: "gt" or "pca"
  std::string split = "val";      // "val", "train" or "all"
};

struct ExperimentConfig {
  DatasetSpec dataset;
  TrainConfig train;
  FilterConfig filter;
  DecompConfig decomp;
  std::string eval_split = "val";
  std::string output_dir = "out";
  uint64_t seed = 0;
  int jobs = 0;  // 0 = hardware concurrency
};

ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& json_text);
std::string experiment_config_json(const ExperimentConfig& cfg);  // canonical form
uint64_t config_hash(const ExperimentConfig& cfg);

// Load the dataset from disk when the spec names a file or a previous gen
// stage wrote one into output_dir; otherwise generate it in memory.
std::vector<DatasetItem> resolve_dataset(const ExperimentConfig& cfg);

// Stage drivers. Each writes its artifacts under cfg.output_dir and records
// completion in manifest.json. All outputs are byte-identical across reruns
// with the same config and seed.
void run_gen(const ExperimentConfig& cfg);
void run_train(const ExperimentConfig& cfg);
void run_eval(const ExperimentConfig& cfg);
void run_decompose(const ExperimentConfig& cfg);
// gen -> train -> eval -> decompose, skipping stages the manifest already
// records as done for the same config hash.
void run_pipeline(const ExperimentConfig& cfg);

// Deterministic per-index parallel map used by eval and decompose.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace modeset
