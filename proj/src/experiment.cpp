#include "modeset/experiment.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "modeset/flowdecomp.hpp"
#include "modeset/logging.hpp"
#include "modeset/metrics.hpp"
#include "modeset/structest.hpp"

namespace modeset {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + key + "': " + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

uint64_t fnv1a(const std::string& text) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double finite_or(double v, double fallback) { return std::isfinite(v) ? v : fallback; }

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (get_or<int>(j, "schema_version", 1) != 1)
    throw ConfigError("unsupported config schema_version");

  ExperimentConfig cfg;
  cfg.seed = get_or<uint64_t>(j, "seed", 0);
  cfg.output_dir = get_or<std::string>(j, "output_dir", "out");
  cfg.jobs = get_or<int>(j, "jobs", 0);
  cfg.eval_split = get_or<std::string>(j, "eval_split", "val");

  const json dataset = j.contains("dataset") ? j.at("dataset") : json::object();
  std::string kind = get_or<std::string>(dataset, "kind", "directional");
  if (kind == "directional") {
    cfg.dataset.kind = DatasetSpec::Kind::Directional;
    auto& d = cfg.dataset.directional;
    d.height = get_or<int>(dataset, "height", d.height);
    d.width = get_or<int>(dataset, "width", d.width);
    d.num_directions = get_or<int>(dataset, "num_directions", d.num_directions);
    d.obstacle_density = get_or<double>(dataset, "obstacle_density", d.obstacle_density);
    d.num_items = get_or<int>(dataset, "num_items", 0);
    d.prior_weights = get_or<std::vector<double>>(dataset, "prior_weights", {});
    d.rng_seed = get_or<uint64_t>(dataset, "rng_seed", Rng::child_seed(cfg.seed, 0xDA7AULL));
  } else if (kind == "classflip") {
    cfg.dataset.kind = DatasetSpec::Kind::ClassFlip;
    auto& d = cfg.dataset.classflip;
    d.height = get_or<int>(dataset, "height", d.height);
    d.width = get_or<int>(dataset, "width", d.width);
    d.num_classes = get_or<int>(dataset, "num_classes", d.num_classes);
    d.flip_probs = get_or<std::vector<double>>(dataset, "flip_probs", d.flip_probs);
    d.num_items = get_or<int>(dataset, "num_items", 0);
    d.rng_seed = get_or<uint64_t>(dataset, "rng_seed", Rng::child_seed(cfg.seed, 0xDA7AULL));
  } else if (kind == "file") {
    cfg.dataset.kind = DatasetSpec::Kind::File;
    cfg.dataset.path = get_or<std::string>(dataset, "path", "");
    if (cfg.dataset.path.empty()) throw ConfigError("dataset.kind=file requires dataset.path");
  } else {
    throw ConfigError("unknown dataset.kind: " + kind);
  }

  const json train = j.contains("train") ? j.at("train") : json::object();
  auto& t = cfg.train;
  t.scenario = scenario_from_string(get_or<std::string>(train, "scenario", "full"));
  try {
    t.loss_kind = mask_loss_from_string(get_or<std::string>(train, "loss", "mse"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  t.lambda = get_or<double>(train, "lambda", t.lambda);
  t.eta_p = get_or<double>(train, "eta_p", t.eta_p);
  t.learning_rate = get_or<double>(train, "learning_rate", t.learning_rate);
  t.epochs = get_or<int>(train, "epochs", t.epochs);
  t.batch_size = get_or<int>(train, "batch_size", t.batch_size);
  t.num_proposals = get_or<int>(train, "num_proposals", t.num_proposals);
  t.val_fraction = get_or<double>(train, "val_fraction", t.val_fraction);
  t.hidden1 = get_or<int>(train, "hidden1", t.hidden1);
  t.hidden2 = get_or<int>(train, "hidden2", t.hidden2);
  t.sel_hidden = get_or<int>(train, "sel_hidden", t.sel_hidden);
  t.rng_seed = get_or<uint64_t>(train, "rng_seed", Rng::child_seed(cfg.seed, 0x7124ULL));

  const json filter = j.contains("filter") ? j.at("filter") : json::object();
  cfg.filter.score_threshold = get_or<double>(filter, "score_threshold", 0.5);
  cfg.filter.dedup_iou = get_or<double>(filter, "dedup_iou", 0.95);
  cfg.filter.use_scores = get_or<bool>(filter, "use_scores", true);
  cfg.filter.use_dedup = get_or<bool>(filter, "use_dedup", true);

  const json decomp = j.contains("decomp") ? j.at("decomp") : json::object();
  cfg.decomp.n_samples = get_or<int>(decomp, "n_samples", 64);
  cfg.decomp.candidates = get_or<std::string>(decomp, "candidates", "gt");
  cfg.decomp.use_filtered = get_or<bool>(decomp, "use_filtered", true);
  cfg.decomp.use_dedup = get_or<bool>(decomp, "use_dedup", true);
  cfg.decomp.field_noise_sigma = get_or<double>(decomp, "field_noise_sigma", 0.0);
  cfg.decomp.templates = get_or<std::string>(decomp, "templates", "gt");
  cfg.decomp.split = get_or<std::string>(decomp, "split", "val");
  if (cfg.decomp.candidates != "gt" && cfg.decomp.candidates != "checkpoint")
    throw ConfigError("decomp.candidates must be 'gt' or 'checkpoint'");
  if (cfg.decomp.templates != "gt" && cfg.decomp.templates != "pca")
    throw ConfigError("decomp.templates must be 'gt' or 'pca'");
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_file(path));
}

std::string experiment_config_json(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = 1;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["jobs"] = cfg.jobs;
  j["eval_split"] = cfg.eval_split;
  json d;
  switch (cfg.dataset.kind) {
    case DatasetSpec::Kind::Directional: {
      d["kind"] = "directional";
      d["height"] = cfg.dataset.directional.height;
      d["width"] = cfg.dataset.directional.width;
      d["num_directions"] = cfg.dataset.directional.num_directions;
      d["obstacle_density"] = cfg.dataset.directional.obstacle_density;
      d["num_items"] = cfg.dataset.directional.num_items;
      d["prior_weights"] = cfg.dataset.directional.prior_weights;
      d["rng_seed"] = cfg.dataset.directional.rng_seed;
      break;
    }
    case DatasetSpec::Kind::ClassFlip: {
      d["kind"] = "classflip";
      d["height"] = cfg.dataset.classflip.height;
      d["width"] = cfg.dataset.classflip.width;
      d["num_classes"] = cfg.dataset.classflip.num_classes;
      d["flip_probs"] = cfg.dataset.classflip.flip_probs;
      d["num_items"] = cfg.dataset.classflip.num_items;
      d["rng_seed"] = cfg.dataset.classflip.rng_seed;
      break;
    }
    case DatasetSpec::Kind::File: {
      d["kind"] = "file";
      d["path"] = cfg.dataset.path;
      break;
    }
  }
  j["dataset"] = std::move(d);
  json t;
  t["scenario"] = to_string(cfg.train.scenario);
  t["loss"] = to_string(cfg.train.loss_kind);
  t["lambda"] = cfg.train.lambda;
  t["eta_p"] = cfg.train.eta_p;
  t["learning_rate"] = cfg.train.learning_rate;
  t["epochs"] = cfg.train.epochs;
  t["batch_size"] = cfg.train.batch_size;
  t["num_proposals"] = cfg.train.num_proposals;
  t["val_fraction"] = cfg.train.val_fraction;
  t["hidden1"] = cfg.train.hidden1;
  t["hidden2"] = cfg.train.hidden2;
  t["sel_hidden"] = cfg.train.sel_hidden;
  t["rng_seed"] = cfg.train.rng_seed;
  j["train"] = std::move(t);
  json f;
  f["score_threshold"] = cfg.filter.score_threshold;
  f["dedup_iou"] = cfg.filter.dedup_iou;
  f["use_scores"] = cfg.filter.use_scores;
  f["use_dedup"] = cfg.filter.use_dedup;
  j["filter"] = std::move(f);
  json dc;
  dc["n_samples"] = cfg.decomp.n_samples;
  dc["candidates"] = cfg.decomp.candidates;
  dc["use_filtered"] = cfg.decomp.use_filtered;
  dc["use_dedup"] = cfg.decomp.use_dedup;
  dc["field_noise_sigma"] = cfg.decomp.field_noise_sigma;
  dc["templates"] = cfg.decomp.templates;
  dc["split"] = cfg.decomp.split;
  j["decomp"] = std::move(dc);
  return j.dump(2);
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  return fnv1a(experiment_config_json(cfg));
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

namespace {

json load_manifest(const std::string& dir) {
  fs::path p = fs::path(dir) / "manifest.json";
  if (!fs::exists(p)) return json::object();
  try {
    return json::parse(read_file(p.string()));
  } catch (const std::exception&) {
    return json::object();
  }
}

void mark_stage(const ExperimentConfig& cfg, const std::string& stage,
                const std::vector<std::string>& outputs) {
  json manifest = load_manifest(cfg.output_dir);
  std::string hash = hex64(config_hash(cfg));
  if (!manifest.contains("config_hash") || manifest["config_hash"] != hash) {
    manifest = json::object();
    manifest["schema_version"] = 1;
    manifest["config_hash"] = hash;
    manifest["seed"] = cfg.seed;
    manifest["stages"] = json::object();
  }
  json s;
  s["outputs"] = outputs;
  manifest["stages"][stage] = std::move(s);
  write_file((fs::path(cfg.output_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

bool stage_done(const ExperimentConfig& cfg, const std::string& stage) {
  json manifest = load_manifest(cfg.output_dir);
  if (!manifest.contains("config_hash") ||
      manifest["config_hash"] != hex64(config_hash(cfg)))
    return false;
  if (!manifest.contains("stages") || !manifest["stages"].contains(stage)) return false;
  for (const auto& out : manifest["stages"][stage]["outputs"]) {
    if (!fs::exists(fs::path(cfg.output_dir) / out.get<std::string>())) return false;
  }
  return true;
}

std::vector<DatasetItem> generate_dataset(const ExperimentConfig& cfg) {
  switch (cfg.dataset.kind) {
    case DatasetSpec::Kind::Directional: {
      try {
        return gen_directional(cfg.dataset.directional);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    case DatasetSpec::Kind::ClassFlip: {
      try {
        return gen_classflip(cfg.dataset.classflip);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    case DatasetSpec::Kind::File:
      throw ConfigError("dataset.kind=file cannot be generated");
  }
  throw ConfigError("unreachable dataset kind");
}

std::vector<int> split_indices(const ExperimentConfig& cfg, int n_items,
                               const std::string& which) {
  if (which == "all") {
    std::vector<int> idx(n_items);
    for (int i = 0; i < n_items; ++i) idx[i] = i;
    return idx;
  }
  auto [train_idx, val_idx] = train_val_split(n_items, cfg.train.val_fraction,
                                              cfg.train.rng_seed);
  if (which == "train") return train_idx;
  if (which == "val") return val_idx.empty() ? train_idx : val_idx;
  throw ConfigError("unknown split '" + which + "' (use val, train or all)");
}

std::vector<BinaryMask> expand_by_multiplicity(const ModeSet& modes) {
  std::vector<BinaryMask> out;
  for (size_t k = 0; k < modes.size(); ++k) {
    int m = modes.multiplicities.empty() ? 1 : std::max(1, modes.multiplicities[k]);
    for (int r = 0; r < m; ++r) out.push_back(modes.masks[k]);
  }
  return out;
}

}  // namespace

std::vector<DatasetItem> resolve_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == DatasetSpec::Kind::File) {
    try {
      return load_dataset(cfg.dataset.path);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  fs::path generated = fs::path(cfg.output_dir) / "dataset.jsonl";
  if (fs::exists(generated)) {
    log_debug("loading dataset from " + generated.string());
    try {
      return load_dataset(generated.string());
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  log_debug("generating dataset in memory");
  return generate_dataset(cfg);
}

void run_gen(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  std::vector<DatasetItem> items = generate_dataset(cfg);
  if (items.empty()) log_info("warning: generated dataset is empty");
  std::string path = (fs::path(cfg.output_dir) / "dataset.jsonl").string();
  save_dataset(items, path);
  mark_stage(cfg, "gen", {"dataset.jsonl"});
  log_info("gen: wrote " + std::to_string(items.size()) + " items to " + path);
}

void run_train(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  std::vector<DatasetItem> items = resolve_dataset(cfg);
  if (items.empty()) throw ConfigError("train: dataset is empty");
  TrainResult result = train(items, cfg.train);

  std::string ckpt = (fs::path(cfg.output_dir) / "checkpoint.bin").string();
  save_checkpoint(result.params, cfg.train, ckpt);

  json h;
  h["best_epoch"] = result.best_epoch;
  h["best_val_loss"] = finite_or(result.best_val_loss, -1.0);
  json epochs = json::array();
  for (const auto& s : result.history) {
    json e;
    e["epoch"] = s.epoch;
    e["train_total"] = s.train_total;
    e["train_mask"] = s.train_mask;
    e["train_select"] = s.train_select;
    e["val_loss"] = s.val_loss;
    e["val_hm_iou_star"] = s.val_hm_iou_star;
    epochs.push_back(std::move(e));
  }
  h["epochs"] = std::move(epochs);
  write_file((fs::path(cfg.output_dir) / "history.json").string(), h.dump(2) + "\n");
  mark_stage(cfg, "train", {"checkpoint.bin", "history.json"});
  log_info("train: best epoch " + std::to_string(result.best_epoch) + ", val loss " +
           std::to_string(result.best_val_loss));
}

void run_eval(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  std::vector<DatasetItem> items = resolve_dataset(cfg);
  if (items.empty()) throw ConfigError("eval: dataset is empty");
  std::string ckpt = (fs::path(cfg.output_dir) / "checkpoint.bin").string();
  if (!fs::exists(ckpt)) throw ConfigError("eval: missing checkpoint " + ckpt);
  auto [params, train_cfg] = load_checkpoint(ckpt);

  std::vector<int> idx = split_indices(cfg, static_cast<int>(items.size()), cfg.eval_split);
  if (idx.empty()) throw ConfigError("eval: empty split");

  std::vector<ProposalSet> proposals(idx.size());
  parallel_for(static_cast<int>(idx.size()), cfg.jobs, [&](int i) {
    proposals[i] = forward(params, items[idx[i]].input);
  });

  std::vector<std::pair<const ModeSet*, const ProposalSet*>> f1_items;
  for (size_t i = 0; i < idx.size(); ++i)
    f1_items.emplace_back(&items[idx[i]].modes, &proposals[i]);
  double f1 = selection_f1(f1_items);

  EvalReport report;
  const bool combos[4][2] = {{false, false}, {true, false}, {false, true}, {true, true}};
  for (const auto& combo : combos) {
    FilterConfig fc = cfg.filter;
    fc.use_scores = combo[0];
    fc.use_dedup = combo[1];
    std::vector<EvalItemRecord> recs(idx.size());
    parallel_for(static_cast<int>(idx.size()), cfg.jobs, [&](int i) {
      const DatasetItem& item = items[idx[i]];
      FilterResult fr = filter_proposals(proposals[i], fc);
      EvalItemRecord rec;
      rec.item = idx[i];
      rec.kept = static_cast<int>(fr.masks.size());
      rec.hm_iou_star = hm_iou_star(item.modes, fr.masks);
      rec.hm_iou = hm_iou(expand_by_multiplicity(item.modes), fr.masks);
      rec.hm_iou_multi = hm_iou_multi(item.modes, fr.masks);
      recs[i] = rec;
    });
    EvalRow row;
    row.scenario = to_string(train_cfg.scenario);
    row.use_scores = combo[0];
    row.use_dedup = combo[1];
    row.selection_f1 = f1;
    for (const auto& r : recs) {
      row.hm_iou += r.hm_iou;
      row.hm_iou_star += r.hm_iou_star;
      row.hm_iou_multi += r.hm_iou_multi;
      row.mean_kept_proposals += r.kept;
    }
    double n = static_cast<double>(recs.size());
    row.hm_iou /= n;
    row.hm_iou_star /= n;
    row.hm_iou_multi /= n;
    row.mean_kept_proposals /= n;
    report.rows.push_back(row);
    report.per_item.push_back(std::move(recs));
  }

  write_file((fs::path(cfg.output_dir) / "eval.json").string(), report.to_json() + "\n");
  write_file((fs::path(cfg.output_dir) / "eval.csv").string(), report.to_csv());
  mark_stage(cfg, "eval", {"eval.json", "eval.csv"});
  log_info("eval: " + std::to_string(idx.size()) + " items, selection F1 " +
           std::to_string(f1));
}

namespace {

struct DecompItemResult {
  int item = 0;
  bool failed = false;
  std::string fail_reason;
  int n_candidates = 0;
  double bss_value = 0.0;
  double residual = 0.0;
  double condition_number = 0.0;
  double leaked_mass = 0.0;
  bool has_bernoulli = false;
  double bernoulli = 0.0;
};

}  // namespace

void run_decompose(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  std::vector<DatasetItem> items = resolve_dataset(cfg);
  if (items.empty()) throw ConfigError("decompose: dataset is empty");

  ModelParams params;
  bool have_model = false;
  if (cfg.decomp.candidates == "checkpoint") {
    std::string ckpt = (fs::path(cfg.output_dir) / "checkpoint.bin").string();
    if (!fs::exists(ckpt)) throw ConfigError("decompose: missing checkpoint " + ckpt);
    params = load_checkpoint(ckpt).first;
    have_model = true;
  }

  std::vector<int> idx = split_indices(cfg, static_cast<int>(items.size()), cfg.decomp.split);
  if (idx.empty()) throw ConfigError("decompose: empty split");

  NoiseSchedule sched = NoiseSchedule::linear();
  std::vector<DecompItemResult> results(idx.size());
  parallel_for(static_cast<int>(idx.size()), cfg.jobs, [&](int i) {
    const DatasetItem& item = items[idx[i]];
    DecompItemResult r;
    r.item = idx[i];

    VelocityField field = oracle_field(item.modes, sched);
    if (cfg.decomp.field_noise_sigma > 0.0)
      field = noisy_field(std::move(field), cfg.decomp.field_noise_sigma,
                          Rng::child_seed(cfg.seed, 0xF000ULL + static_cast<uint64_t>(idx[i])));

    std::vector<BinaryMask> candidates;
    if (have_model) {
      ProposalSet ps = forward(params, item.input);
      FilterConfig fc = cfg.filter;
      fc.use_scores = cfg.decomp.use_filtered;
      fc.use_dedup = cfg.decomp.use_dedup;
      candidates = filter_proposals(ps, fc).masks;
    } else {
      candidates = item.modes.masks;
    }
    r.n_candidates = static_cast<int>(candidates.size());

    try {
      Rng rng(Rng::child_seed(cfg.seed, 0xD000ULL + static_cast<uint64_t>(idx[i])));
      WeightEstimate est = estimate_weights(field, candidates, cfg.decomp.n_samples, rng);
      r.residual = est.residual;
      r.condition_number = est.condition_number;
      if (r.condition_number > 1e8)
        log_info("decompose: item " + std::to_string(idx[i]) +
                 " ill-conditioned (condition number " + std::to_string(r.condition_number) +
                 "); weights may be non-unique");
      AlignedWeights aligned = align_weights(candidates, est.weights, item.modes);
      r.leaked_mass = aligned.leaked_mass;
      r.bss_value = bss(aligned.aligned, item.modes.weights);

      if (item.flip) {
        try {
          std::vector<BinaryMask> templates;
          if (cfg.decomp.templates == "pca") {
            templates = estimate_templates_pca(
                candidates, static_cast<int>(item.flip->templates.size()), {});
            // Estimated templates come out in component order; align them to
            // the true classes by IoU before comparing probabilities.
            const int C = static_cast<int>(templates.size());
            CostMatrix cm(C, C);
            for (int a = 0; a < C; ++a)
              for (int b = 0; b < C; ++b)
                cm.at(a, b) = 1.0 - iou(item.flip->templates[a], templates[b]);
            auto [pi, cost] = solve_assignment(cm);
            (void)cost;
            std::vector<BinaryMask> reordered(C);
            for (int a = 0; a < C; ++a) reordered[a] = templates[pi.assignment[a]];
            templates = std::move(reordered);
          } else {
            templates = item.flip->templates;
          }
          auto alpha = estimate_alpha_matrix(candidates, templates);
          auto p_hat = estimate_flip_probs(est.weights, alpha);
          r.bernoulli = bernoulli_bss(p_hat, item.flip->flip_probs);
          r.has_bernoulli = true;
        } catch (const std::exception& e) {
          log_info("decompose: item " + std::to_string(idx[i]) +
                   " flip estimation skipped: " + e.what());
        }
      }
    } catch (const SolverError& e) {
      r.failed = true;
      r.fail_reason = e.what();
      r.residual = e.best_estimate.residual;
      r.condition_number = e.best_estimate.condition_number;
    } catch (const std::invalid_argument& e) {
      r.failed = true;
      r.fail_reason = e.what();
    }
    results[i] = r;
  });

  int n_failed = 0, n_bern = 0;
  double mean_bss = 0.0, mean_bern = 0.0;
  for (const auto& r : results) {
    if (r.failed) {
      ++n_failed;
      continue;
    }
    mean_bss += r.bss_value;
    if (r.has_bernoulli) {
      mean_bern += r.bernoulli;
      ++n_bern;
    }
  }
  int n_ok = static_cast<int>(results.size()) - n_failed;
  if (n_ok > 0) mean_bss /= n_ok;
  if (n_bern > 0) mean_bern /= n_bern;

  json d;
  d["n_items"] = static_cast<int>(results.size());
  d["n_failed"] = n_failed;
  d["mean_bss"] = n_ok > 0 ? json(mean_bss) : json();
  if (n_bern > 0) d["mean_bernoulli_bss"] = mean_bern;
  d["candidates"] = cfg.decomp.candidates;
  d["n_samples"] = cfg.decomp.n_samples;
  json per_item = json::array();
  for (const auto& r : results) {
    json ji;
    ji["item"] = r.item;
    ji["failed"] = r.failed;
    if (r.failed) ji["reason"] = r.fail_reason;
    ji["n_candidates"] = r.n_candidates;
    ji["bss"] = r.bss_value;
    ji["residual"] = r.residual;
    ji["condition_number"] = finite_or(r.condition_number, -1.0);
    ji["leaked_mass"] = r.leaked_mass;
    if (r.has_bernoulli) ji["bernoulli_bss"] = r.bernoulli;
    per_item.push_back(std::move(ji));
  }
  d["per_item"] = std::move(per_item);
  write_file((fs::path(cfg.output_dir) / "decomp.json").string(), d.dump(2) + "\n");

  std::string csv =
      "item,failed,n_candidates,bss,residual,condition_number,leaked_mass,bernoulli_bss\n";
  char buf[512];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.6f,%.6g,%.6g,%.6f,", r.item, r.failed ? 1 : 0,
                  r.n_candidates, r.bss_value, r.residual,
                  finite_or(r.condition_number, -1.0), r.leaked_mass);
    csv += buf;
    if (r.has_bernoulli) {
      std::snprintf(buf, sizeof(buf), "%.6f", r.bernoulli);
      csv += buf;
    }
    csv += '\n';
  }
  write_file((fs::path(cfg.output_dir) / "decomp.csv").string(), csv);
  mark_stage(cfg, "decompose", {"decomp.json", "decomp.csv"});
  log_info("decompose: mean BSS " + std::to_string(mean_bss) + " over " +
           std::to_string(n_ok) + " items (" + std::to_string(n_failed) + " failed)");
}

void run_pipeline(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  struct Stage {
    const char* name;
    void (*fn)(const ExperimentConfig&);
  };
  const Stage stages[] = {
      {"gen", run_gen}, {"train", run_train}, {"eval", run_eval}, {"decompose", run_decompose}};
  for (const auto& stage : stages) {
    if (stage_done(cfg, stage.name)) {
      log_info(std::string("pipeline: skipping completed stage ") + stage.name);
      continue;
    }
    log_info(std::string("pipeline: running stage ") + stage.name);
    stage.fn(cfg);
  }
}

}  // namespace modeset
