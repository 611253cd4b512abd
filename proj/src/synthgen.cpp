#include "modeset/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace modeset {

namespace {

void validate_simplex(const std::vector<double>& w, const std::string& what) {
  double sum = 0.0;
  for (double x : w) {
    if (!(x >= 0.0)) throw std::invalid_argument(what + ": negative weight");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument(what + ": weights sum to " + std::to_string(sum));
}

double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

// Flood fill from the seed restricted to the 90-degree wedge around
// direction theta, 4-connected, blocked by obstacles and the border.
BinaryMask wedge_fill(int h, int w, int seed_r, int seed_c, double theta,
                      const BinaryMask& obstacles) {
  constexpr double kHalfWidth = M_PI / 4.0 + 1e-9;
  BinaryMask in_wedge(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (r == seed_r && c == seed_c) {
        in_wedge.set(r, c, 1);
        continue;
      }
      double ang = std::atan2(static_cast<double>(seed_r - r), static_cast<double>(c - seed_c));
      if (std::abs(wrap_angle(ang - theta)) <= kHalfWidth) in_wedge.set(r, c, 1);
    }
  }
  BinaryMask fill(h, w);
  std::deque<std::pair<int, int>> queue;
  fill.set(seed_r, seed_c, 1);
  queue.emplace_back(seed_r, seed_c);
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  while (!queue.empty()) {
    auto [r, c] = queue.front();
    queue.pop_front();
    for (int d = 0; d < 4; ++d) {
      int nr = r + dr[d], nc = c + dc[d];
      if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
      if (fill.at(nr, nc) || obstacles.at(nr, nc) || !in_wedge.at(nr, nc)) continue;
      fill.set(nr, nc, 1);
      queue.emplace_back(nr, nc);
    }
  }
  return fill;
}

int central_margin(int extent) {
  int m = std::max(2, extent / 5);
  return std::min(m, (extent - 1) / 2);
}

}  // namespace

std::vector<double> default_directional_prior(int num_directions) {
  if (num_directions < 1)
    throw std::invalid_argument("default_directional_prior: need >= 1 direction");
  if (num_directions == 1) return {1.0};
  const double lo = 0.004, hi = 0.502;
  const double ratio = std::pow(hi / lo, 1.0 / (num_directions - 1));
  std::vector<double> w(num_directions);
  double sum = 0.0;
  for (int k = 0; k < num_directions; ++k) {
    w[k] = lo * std::pow(ratio, k);
    sum += w[k];
  }
  for (double& x : w) x /= sum;
  return w;
}

DatasetItem make_directional_item(const BinaryMask& obstacles, int seed_r, int seed_c,
                                  const std::vector<double>& prior_weights) {
  const int h = obstacles.height, w = obstacles.width;
  if (seed_r < 0 || seed_r >= h || seed_c < 0 || seed_c >= w)
    throw std::invalid_argument("make_directional_item: seed outside the grid");
  if (obstacles.at(seed_r, seed_c))
    throw std::invalid_argument("make_directional_item: seed on an obstacle");
  validate_simplex(prior_weights, "make_directional_item prior");
  const int num_directions = static_cast<int>(prior_weights.size());

  std::vector<BinaryMask> fills;
  fills.reserve(num_directions);
  for (int k = 0; k < num_directions; ++k) {
    double theta = wrap_angle(2.0 * M_PI * k / num_directions);
    fills.push_back(wedge_fill(h, w, seed_r, seed_c, theta, obstacles));
  }

  DatasetItem item;
  item.channels = 2;
  item.height = h;
  item.width = w;
  item.input.assign(static_cast<size_t>(2) * h * w, 0.0);
  item.input[static_cast<size_t>(seed_r) * w + seed_c] = 1.0;
  for (size_t p = 0; p < obstacles.values.size(); ++p)
    item.input[static_cast<size_t>(h) * w + p] = obstacles.values[p];
  item.modes = merge_duplicates(fills, prior_weights);
  return item;
}

std::vector<DatasetItem> gen_directional(const DirectionalConfig& cfg) {
  if (cfg.height < 1 || cfg.width < 1)
    throw std::invalid_argument("gen_directional: invalid grid size");
  if (cfg.num_directions < 1)
    throw std::invalid_argument("gen_directional: need >= 1 direction");
  if (!(cfg.obstacle_density >= 0.0 && cfg.obstacle_density < 1.0))
    throw std::invalid_argument("gen_directional: obstacle_density outside [0,1)");
  if (cfg.num_items < 0) throw std::invalid_argument("gen_directional: negative num_items");
  std::vector<double> prior =
      cfg.prior_weights.empty() ? default_directional_prior(cfg.num_directions)
                                : cfg.prior_weights;
  if (static_cast<int>(prior.size()) != cfg.num_directions)
    throw std::invalid_argument("gen_directional: prior length != num_directions");
  validate_simplex(prior, "gen_directional prior");

  const int h = cfg.height, w = cfg.width;
  const int mr = central_margin(h), mc = central_margin(w);
  std::vector<DatasetItem> items;
  items.reserve(cfg.num_items);
  for (int i = 0; i < cfg.num_items; ++i) {
    Rng rng(Rng::child_seed(cfg.rng_seed, static_cast<uint64_t>(i)));

    BinaryMask obstacles(h, w);
    for (size_t p = 0; p < obstacles.values.size(); ++p)
      obstacles.values[p] = rng.uniform() < cfg.obstacle_density ? 1 : 0;

    int seed_r = -1, seed_c = -1;
    for (int attempt = 0; attempt < 100; ++attempt) {
      int r = rng.uniform_int(mr, h - 1 - mr);
      int c = rng.uniform_int(mc, w - 1 - mc);
      if (!obstacles.at(r, c)) {
        seed_r = r;
        seed_c = c;
        break;
      }
    }
    if (seed_r < 0)
      throw std::runtime_error("gen_directional: seed point placement failed for item " +
                               std::to_string(i));

    items.push_back(make_directional_item(obstacles, seed_r, seed_c, prior));
  }
  return items;
}

DatasetItem make_classflip_item(const std::vector<BinaryMask>& templates,
                                const std::vector<double>& flip_probs) {
  const int num_classes = static_cast<int>(templates.size());
  if (num_classes < 1) throw std::invalid_argument("make_classflip_item: no templates");
  if (num_classes > 16)
    throw std::invalid_argument("make_classflip_item: too many classes (2^C modes)");
  if (flip_probs.size() != templates.size())
    throw std::invalid_argument("make_classflip_item: flip_probs length mismatch");
  for (double p : flip_probs)
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("make_classflip_item: flip prob outside [0,1]");
  const int h = templates[0].height, w = templates[0].width;
  for (const auto& t : templates)
    if (t.height != h || t.width != w)
      throw std::invalid_argument("make_classflip_item: template dims differ");
  for (size_t a = 0; a < templates.size(); ++a)
    for (size_t b = a + 1; b < templates.size(); ++b)
      for (size_t p = 0; p < templates[a].values.size(); ++p)
        if (templates[a].values[p] && templates[b].values[p])
          throw std::invalid_argument("make_classflip_item: templates overlap");

  const int num_modes = 1 << num_classes;
  std::vector<BinaryMask> masks;
  std::vector<double> weights;
  std::vector<std::vector<uint8_t>> alphas;
  masks.reserve(num_modes);
  for (int j = 0; j < num_modes; ++j) {
    BinaryMask m(h, w);
    std::vector<uint8_t> row(num_classes, 0);
    double weight = 1.0;
    for (int i = 0; i < num_classes; ++i) {
      uint8_t on = (j >> i) & 1;
      row[i] = on;
      weight *= on ? flip_probs[i] : 1.0 - flip_probs[i];
      if (on)
        for (size_t p = 0; p < m.values.size(); ++p) m.values[p] |= templates[i].values[p];
    }
    masks.push_back(std::move(m));
    weights.push_back(weight);
    alphas.push_back(std::move(row));
  }

  DatasetItem item;
  item.channels = num_classes + 1;
  item.height = h;
  item.width = w;
  item.input.assign(item.input_size(), 0.0);
  for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p) {
    uint8_t any = 0;
    for (int i = 0; i < num_classes; ++i) {
      if (templates[i].values[p]) {
        any = 1;
        item.input[static_cast<size_t>(i + 1) * h * w + p] = 1.0;
      }
    }
    if (!any) item.input[p] = 1.0;
  }
  item.modes = merge_duplicates(masks, weights);

  FlipStructure flip;
  flip.templates = templates;
  flip.flip_probs = flip_probs;
  // Representative alpha row per merged mode: the first enumerated
  // combination producing that mask.
  for (const auto& mode : item.modes.masks) {
    for (int j = 0; j < num_modes; ++j) {
      if (masks[j] == mode) {
        flip.flip_matrix.push_back(alphas[j]);
        break;
      }
    }
  }
  item.flip = std::move(flip);
  return item;
}

std::vector<DatasetItem> gen_classflip(const ClassFlipConfig& cfg) {
  if (cfg.height < 1 || cfg.width < 1)
    throw std::invalid_argument("gen_classflip: invalid grid size");
  if (cfg.num_classes < 1) throw std::invalid_argument("gen_classflip: need >= 1 class");
  if (static_cast<int>(cfg.flip_probs.size()) != cfg.num_classes)
    throw std::invalid_argument("gen_classflip: flip_probs length != num_classes");
  for (double p : cfg.flip_probs)
    if (!(p > 0.0 && p < 1.0))
      throw std::invalid_argument("gen_classflip: flip probs must be in (0,1)");
  if (cfg.num_items < 0) throw std::invalid_argument("gen_classflip: negative num_items");

  // One grid cell per class; each cell hosts one rectangle with a 1px gap,
  // which keeps templates disjoint by construction.
  const int gcols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.num_classes))));
  const int grows = (cfg.num_classes + gcols - 1) / gcols;
  const int cell_h = cfg.height / grows, cell_w = cfg.width / gcols;
  if (cell_h < 4 || cell_w < 4)
    throw std::invalid_argument("gen_classflip: regions cannot be placed disjointly on this grid");

  std::vector<DatasetItem> items;
  items.reserve(cfg.num_items);
  for (int i = 0; i < cfg.num_items; ++i) {
    Rng rng(Rng::child_seed(cfg.rng_seed, static_cast<uint64_t>(i)));
    std::vector<BinaryMask> templates;
    std::set<long> used_areas;
    for (int cls = 0; cls < cfg.num_classes; ++cls) {
      int cell_r = cls / gcols, cell_c = cls % gcols;
      int r0 = cell_r * cell_h, c0 = cell_c * cell_w;
      BinaryMask t(cfg.height, cfg.width);
      // Distinct areas keep the principal components of the mode set from
      // sharing eigenvalues, which template estimation relies on.
      for (int attempt = 0; attempt < 50; ++attempt) {
        int rh = rng.uniform_int(2, cell_h - 2);
        int rw = rng.uniform_int(2, cell_w - 2);
        int top = r0 + 1 + rng.uniform_int(0, cell_h - 2 - rh);
        int left = c0 + 1 + rng.uniform_int(0, cell_w - 2 - rw);
        long area = static_cast<long>(rh) * rw;
        if (used_areas.count(area) && attempt < 49) continue;
        used_areas.insert(area);
        t = BinaryMask(cfg.height, cfg.width);
        for (int r = top; r < top + rh; ++r)
          for (int c = left; c < left + rw; ++c) t.set(r, c, 1);
        break;
      }
      templates.push_back(std::move(t));
    }
    items.push_back(make_classflip_item(templates, cfg.flip_probs));
  }
  return items;
}

BinaryMask sample_single_label(const DatasetItem& item, Rng& rng) {
  if (item.modes.size() == 0)
    throw std::invalid_argument("sample_single_label: item has no modes");
  double u = rng.uniform();
  double cum = 0.0;
  for (size_t k = 0; k < item.modes.size(); ++k) {
    cum += item.modes.weights[k];
    if (u < cum) return item.modes.masks[k];
  }
  return item.modes.masks.back();
}

std::string rle_encode(const BinaryMask& m) {
  std::string out;
  uint8_t value = 0;
  size_t i = 0;
  while (i < m.values.size()) {
    size_t run = 0;
    while (i + run < m.values.size() && m.values[i + run] == value) ++run;
    if (!out.empty()) out += ',';
    out += std::to_string(run);
    i += run;
    value ^= 1;
  }
  if (out.empty()) out = "0";
  return out;
}

BinaryMask rle_decode(const std::string& rle, int height, int width) {
  BinaryMask m(height, width);
  size_t pos = 0;
  uint8_t value = 0;
  size_t start = 0;
  bool first = true;
  auto consume = [&](const std::string& token) {
    if (token.empty()) throw std::runtime_error("rle: empty run token");
    long run = 0;
    for (char ch : token) {
      if (ch < '0' || ch > '9') throw std::runtime_error("rle: non-numeric run token");
      run = run * 10 + (ch - '0');
      if (run > static_cast<long>(m.values.size())) break;
    }
    if (run == 0 && !first) throw std::runtime_error("rle: zero-length interior run");
    if (pos + run > m.values.size()) throw std::runtime_error("rle: runs exceed mask size");
    for (long k = 0; k < run; ++k) m.values[pos++] = value;
    value ^= 1;
    first = false;
  };
  for (size_t i = 0; i <= rle.size(); ++i) {
    if (i == rle.size() || rle[i] == ',') {
      consume(rle.substr(start, i - start));
      start = i + 1;
    }
  }
  if (pos != m.values.size()) throw std::runtime_error("rle: runs do not cover mask");
  return m;
}

namespace {

nlohmann::json item_to_json(const DatasetItem& item) {
  nlohmann::json j;
  j["v"] = "v1";
  j["c"] = item.channels;
  j["h"] = item.height;
  j["w"] = item.width;
  nlohmann::json input = nlohmann::json::array();
  const size_t plane = static_cast<size_t>(item.height) * item.width;
  for (int ch = 0; ch < item.channels; ++ch) {
    nlohmann::json chan = nlohmann::json::array();
    for (size_t p = 0; p < plane; ++p) chan.push_back(item.input[ch * plane + p]);
    input.push_back(std::move(chan));
  }
  j["input"] = std::move(input);
  nlohmann::json modes = nlohmann::json::array();
  for (size_t k = 0; k < item.modes.size(); ++k) {
    nlohmann::json m;
    m["rle"] = rle_encode(item.modes.masks[k]);
    m["w"] = item.modes.weights[k];
    int mult = item.modes.multiplicities.empty() ? 1 : item.modes.multiplicities[k];
    if (mult != 1) m["m"] = mult;
    modes.push_back(std::move(m));
  }
  j["modes"] = std::move(modes);
  if (item.flip) {
    nlohmann::json f;
    nlohmann::json templates = nlohmann::json::array();
    for (const auto& t : item.flip->templates) templates.push_back(rle_encode(t));
    f["templates"] = std::move(templates);
    f["p"] = item.flip->flip_probs;
    nlohmann::json alpha = nlohmann::json::array();
    for (const auto& row : item.flip->flip_matrix) {
      nlohmann::json r = nlohmann::json::array();
      for (uint8_t a : row) r.push_back(static_cast<int>(a));
      alpha.push_back(std::move(r));
    }
    f["alpha"] = std::move(alpha);
    j["flip"] = std::move(f);
  }
  return j;
}

DatasetItem item_from_json(const nlohmann::json& j) {
  if (!j.contains("v") || j.at("v").get<std::string>() != "v1")
    throw std::runtime_error("unknown or missing schema version");
  DatasetItem item;
  item.channels = j.at("c").get<int>();
  item.height = j.at("h").get<int>();
  item.width = j.at("w").get<int>();
  if (item.channels < 1 || item.height < 1 || item.width < 1)
    throw std::runtime_error("invalid dimensions");
  const size_t plane = static_cast<size_t>(item.height) * item.width;
  const auto& input = j.at("input");
  if (input.size() != static_cast<size_t>(item.channels))
    throw std::runtime_error("input channel count mismatch");
  item.input.reserve(item.input_size());
  for (const auto& chan : input) {
    if (chan.size() != plane) throw std::runtime_error("input plane size mismatch");
    for (const auto& x : chan) item.input.push_back(x.get<double>());
  }
  for (const auto& m : j.at("modes")) {
    item.modes.masks.push_back(
        rle_decode(m.at("rle").get<std::string>(), item.height, item.width));
    item.modes.weights.push_back(m.at("w").get<double>());
    item.modes.multiplicities.push_back(m.contains("m") ? m.at("m").get<int>() : 1);
  }
  item.modes.validate();
  if (j.contains("flip")) {
    FlipStructure flip;
    const auto& f = j.at("flip");
    for (const auto& t : f.at("templates"))
      flip.templates.push_back(rle_decode(t.get<std::string>(), item.height, item.width));
    flip.flip_probs = f.at("p").get<std::vector<double>>();
    if (flip.flip_probs.size() != flip.templates.size())
      throw std::runtime_error("flip: probability/template count mismatch");
    for (double p : flip.flip_probs)
      if (!(p >= 0.0 && p <= 1.0)) throw std::runtime_error("flip: probability outside [0,1]");
    for (const auto& row : f.at("alpha")) {
      std::vector<uint8_t> r;
      for (const auto& a : row) {
        int v = a.get<int>();
        if (v != 0 && v != 1) throw std::runtime_error("flip: alpha entry not 0/1");
        r.push_back(static_cast<uint8_t>(v));
      }
      if (r.size() != flip.templates.size())
        throw std::runtime_error("flip: alpha row length mismatch");
      flip.flip_matrix.push_back(std::move(r));
    }
    if (flip.flip_matrix.size() != item.modes.size())
      throw std::runtime_error("flip: alpha row count != mode count");
    // Every stored mode must be reproducible from its alpha row.
    for (size_t k = 0; k < item.modes.size(); ++k) {
      BinaryMask rec(item.height, item.width);
      for (size_t i = 0; i < flip.templates.size(); ++i) {
        if (!flip.flip_matrix[k][i]) continue;
        for (size_t p = 0; p < rec.values.size(); ++p)
          rec.values[p] |= flip.templates[i].values[p];
      }
      if (!(rec == item.modes.masks[k]))
        throw std::runtime_error("flip: mode " + std::to_string(k) +
                                 " does not match its alpha row");
    }
    item.flip = std::move(flip);
  }
  return item;
}

}  // namespace

void save_dataset(const std::vector<DatasetItem>& items, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const auto& item : items) out << item_to_json(item).dump() << '\n';
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

std::vector<DatasetItem> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::vector<DatasetItem> items;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      items.push_back(item_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("load_dataset: " + path + " line " + std::to_string(line_no) +
                               " (item " + std::to_string(items.size()) + "): " + e.what());
    }
  }
  return items;
}

}  // namespace modeset
