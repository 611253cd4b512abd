#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "modeset/experiment.hpp"

using namespace modeset;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// A deliberately tiny experiment that still runs every pipeline stage.
std::string tiny_config_json(const std::string& out_dir) {
  return R"({
    "schema_version": 1,
    "seed": 17,
    "output_dir": ")" + out_dir + R"(",
    "jobs": 2,
    "dataset": {"kind": "directional", "height": 8, "width": 8,
                "num_directions": 4, "obstacle_density": 0.0, "num_items": 10},
    "train": {"scenario": "full", "loss": "mse", "epochs": 3, "batch_size": 4,
              "num_proposals": 6, "hidden1": 24, "hidden2": 24, "sel_hidden": 8},
    "decomp": {"n_samples": 8, "candidates": "gt", "split": "val"}
  })";
}

}  // namespace

TEST_CASE("config parsing fills defaults and derives seeds") {
  ExperimentConfig cfg = parse_experiment_config(R"({"seed": 5})");
  CHECK(cfg.seed == 5);
  CHECK(cfg.output_dir == "out");
  CHECK(cfg.train.lambda == 0.01);
  CHECK(cfg.train.eta_p == 0.5);
  CHECK(cfg.filter.score_threshold == 0.5);
  CHECK(cfg.filter.dedup_iou == 0.95);
  CHECK(cfg.decomp.n_samples == 64);
  CHECK(cfg.dataset.kind == DatasetSpec::Kind::Directional);
  // Sub-seeds derive from the master seed, so two parses agree.
  ExperimentConfig cfg2 = parse_experiment_config(R"({"seed": 5})");
  CHECK(cfg.train.rng_seed == cfg2.train.rng_seed);
  CHECK(cfg.dataset.directional.rng_seed == cfg2.dataset.directional.rng_seed);
  ExperimentConfig other = parse_experiment_config(R"({"seed": 6})");
  CHECK(cfg.train.rng_seed != other.train.rng_seed);
}

TEST_CASE("config errors are ConfigError") {
  CHECK_THROWS_AS(parse_experiment_config("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"schema_version": 2})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"dataset": {"kind": "nope"}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"dataset": {"kind": "file"}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"train": {"loss": "nope"}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"decomp": {"candidates": "nope"}})"),
                  ConfigError);
}

TEST_CASE("config hash is stable across round trips") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json("x"));
  ExperimentConfig reparsed = parse_experiment_config(experiment_config_json(cfg));
  CHECK(config_hash(cfg) == config_hash(reparsed));
  ExperimentConfig changed = cfg;
  changed.train.lambda *= 2.0;
  CHECK(config_hash(cfg) != config_hash(changed));
}

TEST_CASE("gen stage writes a deterministic dataset and manifest") {
  TempDir dir("modeset_gen_stage");
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json(dir.path.string()));
  run_gen(cfg);
  std::string first = slurp(dir.path / "dataset.jsonl");
  CHECK(!first.empty());
  CHECK(fs::exists(dir.path / "manifest.json"));
  run_gen(cfg);
  CHECK(slurp(dir.path / "dataset.jsonl") == first);
}

TEST_CASE("pipeline produces byte-identical reports across reruns") {
  TempDir dir1("modeset_pipe_a");
  TempDir dir2("modeset_pipe_b");
  ExperimentConfig cfg1 = parse_experiment_config(tiny_config_json(dir1.path.string()));
  ExperimentConfig cfg2 = parse_experiment_config(tiny_config_json(dir2.path.string()));
  cfg2.output_dir = dir2.path.string();
  run_pipeline(cfg1);
  run_pipeline(cfg2);
  for (const char* name : {"dataset.jsonl", "eval.json", "eval.csv", "decomp.json",
                           "decomp.csv", "history.json"}) {
    CHECK(slurp(dir1.path / name) == slurp(dir2.path / name));
  }
  std::string csv = slurp(dir1.path / "eval.csv");
  CHECK(csv.rfind("scenario,use_scores,use_dedup,selection_f1,hm_iou_star,", 0) == 0);
  // One row per filter-flag combination.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("pipeline resumes from the manifest") {
  TempDir dir("modeset_resume");
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json(dir.path.string()));
  run_gen(cfg);
  run_train(cfg);
  std::string ckpt_before = slurp(dir.path / "checkpoint.bin");
  // A full pipeline run now must not redo gen/train, then complete the rest.
  auto train_time = fs::last_write_time(dir.path / "checkpoint.bin");
  run_pipeline(cfg);
  CHECK(fs::last_write_time(dir.path / "checkpoint.bin") == train_time);
  CHECK(fs::exists(dir.path / "eval.json"));
  CHECK(fs::exists(dir.path / "decomp.json"));
  CHECK(slurp(dir.path / "checkpoint.bin") == ckpt_before);

  // Changing the config invalidates the manifest and stages rerun.
  ExperimentConfig changed = cfg;
  changed.train.epochs += 1;
  run_pipeline(changed);
  CHECK(fs::last_write_time(dir.path / "checkpoint.bin") != train_time);
}

TEST_CASE("decompose on exact oracle reaches near-perfect BSS") {
  TempDir dir("modeset_decomp_stage");
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json(dir.path.string()));
  cfg.decomp.split = "all";
  run_gen(cfg);
  run_decompose(cfg);
  nlohmann::json d = nlohmann::json::parse(slurp(dir.path / "decomp.json"));
  CHECK(d.at("n_failed").get<int>() == 0);
  CHECK(d.at("mean_bss").get<double>() > 0.99);
}

TEST_CASE("eval requires a checkpoint") {
  TempDir dir("modeset_eval_nockpt");
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json(dir.path.string()));
  run_gen(cfg);
  CHECK_THROWS_AS(run_eval(cfg), ConfigError);
}

TEST_CASE("resolve_dataset rejects missing files with ConfigError") {
  ExperimentConfig cfg = parse_experiment_config(
      R"({"dataset": {"kind": "file", "path": "/nonexistent/nowhere.jsonl"}})");
  CHECK_THROWS_AS(resolve_dataset(cfg), ConfigError);
}
