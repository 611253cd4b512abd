#include "modeset/propnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "modeset/metrics.hpp"
#include "modeset/synthgen.hpp"

namespace modeset {

namespace {

constexpr double kBceClamp = 1e-7;

double bce(double target, double d) {
  d = std::clamp(d, kBceClamp, 1.0 - kBceClamp);
  return -(target * std::log(d) + (1.0 - target) * std::log(1.0 - d));
}

double bce_grad(double target, double d) {
  if (d <= kBceClamp || d >= 1.0 - kBceClamp) return 0.0;
  return -target / d + (1.0 - target) / (1.0 - d);
}

Eigen::MatrixXd xavier(int out, int in, Rng& rng) {
  double s = std::sqrt(6.0 / (in + out));
  Eigen::MatrixXd m(out, in);
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < in; ++j) m(i, j) = rng.uniform(-s, s);
  return m;
}

// Forward activations for a batch (rows are items).
struct ForwardCache {
  Eigen::MatrixXd x;                  // n x D
  Eigen::MatrixXd a1, a2;             // post-ReLU trunk activations
  std::vector<Eigen::MatrixXd> prop;  // K of n x M, post-sigmoid
  Eigen::MatrixXd sel_h;              // n x sel_hidden, post-ReLU
  Eigen::MatrixXd scores;             // n x K, post-sigmoid
};

ForwardCache forward_batch(const ModelParams& p, Eigen::MatrixXd x) {
  ForwardCache c;
  c.x = std::move(x);
  const auto relu = [](Eigen::MatrixXd m) {
    return m.cwiseMax(0.0);
  };
  const auto sigmoid = [](Eigen::MatrixXd m) {
    return ((-m.array()).exp() + 1.0).inverse().matrix();
  };
  c.a1 = relu(((c.x * p.w1.transpose()).rowwise() + p.b1.transpose()).eval());
  c.a2 = relu(((c.a1 * p.w2.transpose()).rowwise() + p.b2.transpose()).eval());
  c.prop.reserve(p.num_proposals);
  for (int k = 0; k < p.num_proposals; ++k)
    c.prop.push_back(
        sigmoid(((c.a2 * p.head_w[k].transpose()).rowwise() + p.head_b[k].transpose()).eval()));
  c.sel_h = relu(((c.a2 * p.sel_w1.transpose()).rowwise() + p.sel_b1.transpose()).eval());
  c.scores =
      sigmoid(((c.sel_h * p.sel_w2.transpose()).rowwise() + p.sel_b2.transpose()).eval());
  return c;
}

// Accumulate parameter gradients from output cotangents d_prop / d_scores.
void backward_batch(const ModelParams& p, const ForwardCache& c,
                    const std::vector<Eigen::MatrixXd>& d_prop,
                    const Eigen::MatrixXd& d_scores, ParamGrads& g) {
  const long n = c.x.rows();
  Eigen::MatrixXd d_a2 = Eigen::MatrixXd::Zero(n, p.hidden2);
  for (int k = 0; k < p.num_proposals; ++k) {
    if (d_prop[k].size() == 0) continue;
    Eigen::MatrixXd dz =
        d_prop[k].cwiseProduct(c.prop[k].cwiseProduct((1.0 - c.prop[k].array()).matrix()));
    g.head_w[k].noalias() += dz.transpose() * c.a2;
    g.head_b[k].noalias() += dz.colwise().sum().transpose();
    d_a2.noalias() += dz * p.head_w[k];
  }
  {
    Eigen::MatrixXd dz =
        d_scores.cwiseProduct(c.scores.cwiseProduct((1.0 - c.scores.array()).matrix()));
    g.sel_w2.noalias() += dz.transpose() * c.sel_h;
    g.sel_b2.noalias() += dz.colwise().sum().transpose();
    Eigen::MatrixXd dh = dz * p.sel_w2;
    Eigen::MatrixXd ds1 = dh.cwiseProduct((c.sel_h.array() > 0.0).cast<double>().matrix());
    g.sel_w1.noalias() += ds1.transpose() * c.a2;
    g.sel_b1.noalias() += ds1.colwise().sum().transpose();
    d_a2.noalias() += ds1 * p.sel_w1;
  }
  Eigen::MatrixXd dz2 = d_a2.cwiseProduct((c.a2.array() > 0.0).cast<double>().matrix());
  g.w2.noalias() += dz2.transpose() * c.a1;
  g.b2.noalias() += dz2.colwise().sum().transpose();
  Eigen::MatrixXd da1 = dz2 * p.w2;
  Eigen::MatrixXd dz1 = da1.cwiseProduct((c.a1.array() > 0.0).cast<double>().matrix());
  g.w1.noalias() += dz1.transpose() * c.x;
  g.b1.noalias() += dz1.colwise().sum().transpose();
}

SoftMask row_to_softmask(const Eigen::MatrixXd& m, long row, int h, int w) {
  SoftMask s(h, w);
  for (int i = 0; i < m.cols(); ++i) s.values[i] = m(row, i);
  return s;
}

Eigen::MatrixXd batch_inputs(const ModelParams& p,
                             const std::vector<const DatasetItem*>& items) {
  Eigen::MatrixXd x(items.size(), p.input_dim());
  for (size_t i = 0; i < items.size(); ++i) {
    const DatasetItem& it = *items[i];
    if (static_cast<int>(it.input_size()) != p.input_dim() || it.height != p.height ||
        it.width != p.width)
      throw std::invalid_argument("propnet: item dimensions do not match the model");
    for (int d = 0; d < p.input_dim(); ++d) x(i, d) = it.input[d];
  }
  return x;
}

// Fully-labeled loss for batch row `row`, accumulating output cotangents
// scaled by `scale` when accumulators are provided.
LossBreakdown full_loss_row(const ModelParams& p, const ForwardCache& c, long row,
                            const DatasetItem& item, const TrainConfig& cfg, double scale,
                            std::vector<Eigen::MatrixXd>* d_prop, Eigen::MatrixXd* d_scores) {
  const int k_hat = p.num_proposals;
  const int k_x = static_cast<int>(item.modes.size());
  if (k_x > k_hat)
    throw std::invalid_argument("loss_fully: item has more modes than proposals");

  std::vector<SoftMask> props;
  props.reserve(k_hat);
  for (int k = 0; k < k_hat; ++k) props.push_back(row_to_softmask(c.prop[k], row, p.height, p.width));

  CostMatrix cost(k_x, k_hat);
  for (int i = 0; i < k_x; ++i)
    for (int k = 0; k < k_hat; ++k)
      cost.at(i, k) = mask_distance(cfg.loss_kind, item.modes.masks[i], props[k]);
  auto [pi, total_cost] = solve_assignment(cost);
  (void)total_cost;

  LossBreakdown out;
  std::vector<char> matched(k_hat, 0);
  for (int i = 0; i < k_x; ++i) {
    int k = pi.assignment[i];
    matched[k] = 1;
    out.mask_part += cost.at(i, k);
    if (d_prop) {
      auto grad = mask_distance_grad(cfg.loss_kind, item.modes.masks[i], props[k]);
      if ((*d_prop)[k].size() == 0)
        (*d_prop)[k] = Eigen::MatrixXd::Zero(c.x.rows(), p.mask_dim());
      for (int d = 0; d < p.mask_dim(); ++d)
        (*d_prop)[k](row, d) += scale * grad[d] / k_x;
    }
  }
  out.mask_part /= k_x;

  for (int k = 0; k < k_hat; ++k) {
    double target = matched[k] ? 1.0 : 0.0;
    out.select_part += bce(target, c.scores(row, k));
    if (d_scores)
      (*d_scores)(row, k) +=
          scale * cfg.lambda * bce_grad(target, c.scores(row, k)) / k_hat;
  }
  out.select_part /= k_hat;
  out.total = out.mask_part + cfg.lambda * out.select_part;
  return out;
}

// Single-label PU loss over the whole batch held in the cache.
LossBreakdown pu_loss_batch(const ModelParams& p, const ForwardCache& c,
                            const std::vector<LabeledExample>& batch, const TrainConfig& cfg,
                            std::vector<Eigen::MatrixXd>* d_prop, Eigen::MatrixXd* d_scores) {
  const int k_hat = p.num_proposals;
  if (k_hat < 2)
    throw std::invalid_argument("loss_single_pu: the unlabeled term needs K >= 2 proposals");
  const int n = static_cast<int>(batch.size());
  if (n == 0) throw std::invalid_argument("loss_single_pu: empty batch");

  LossBreakdown out;
  std::vector<int> best(n, 0);
  double lp1 = 0.0, lp0 = 0.0, lu = 0.0;
  for (int i = 0; i < n; ++i) {
    const BinaryMask& label = batch[i].label;
    double best_dist = std::numeric_limits<double>::infinity();
    std::vector<SoftMask> props;
    props.reserve(k_hat);
    for (int k = 0; k < k_hat; ++k)
      props.push_back(row_to_softmask(c.prop[k], i, p.height, p.width));
    for (int k = 0; k < k_hat; ++k) {
      double d = mask_distance(cfg.loss_kind, label, props[k]);
      if (d < best_dist) {
        best_dist = d;
        best[i] = k;
      }
    }
    out.mask_part += best_dist;
    if (d_prop) {
      auto grad = mask_distance_grad(cfg.loss_kind, label, props[best[i]]);
      if ((*d_prop)[best[i]].size() == 0)
        (*d_prop)[best[i]] = Eigen::MatrixXd::Zero(n, p.mask_dim());
      for (int d = 0; d < p.mask_dim(); ++d) (*d_prop)[best[i]](i, d) += grad[d] / n;
    }
    lp1 += bce(1.0, c.scores(i, best[i]));
    lp0 += bce(0.0, c.scores(i, best[i]));
    for (int j = 0; j < k_hat; ++j)
      if (j != best[i]) lu += bce(0.0, c.scores(i, j));
  }
  out.mask_part /= n;
  lp1 /= n;
  lp0 /= n;
  lu /= static_cast<double>(n) * (k_hat - 1);

  const bool clamped = lu - cfg.eta_p * lp0 <= 0.0;
  out.select_part = cfg.eta_p * lp1 + (clamped ? 0.0 : lu - cfg.eta_p * lp0);
  out.total = out.mask_part + cfg.lambda * out.select_part;

  if (d_scores) {
    for (int i = 0; i < n; ++i) {
      double g_best = cfg.eta_p * bce_grad(1.0, c.scores(i, best[i])) / n;
      if (!clamped) g_best -= cfg.eta_p * bce_grad(0.0, c.scores(i, best[i])) / n;
      (*d_scores)(i, best[i]) += cfg.lambda * g_best;
      if (!clamped) {
        for (int j = 0; j < k_hat; ++j) {
          if (j == best[i]) continue;
          (*d_scores)(i, j) += cfg.lambda * bce_grad(0.0, c.scores(i, j)) /
                               (static_cast<double>(n) * (k_hat - 1));
        }
      }
    }
  }
  return out;
}

struct Adam {
  ParamGrads m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(const ModelParams& p)
      : m(ParamGrads::zeros_like(p)), v(ParamGrads::zeros_like(p)) {}

  template <typename T>
  void update_tensor(T& param, const T& grad, T& mt, T& vt, double lr) {
    mt = beta1 * mt + (1.0 - beta1) * grad;
    vt = beta2 * vt + (1.0 - beta2) * grad.cwiseProduct(grad);
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    param.array() -= lr * (mt.array() / c1) / ((vt.array() / c2).sqrt() + eps);
  }

  void step(ModelParams& p, const ParamGrads& g, double lr) {
    ++t;
    update_tensor(p.w1, g.w1, m.w1, v.w1, lr);
    update_tensor(p.b1, g.b1, m.b1, v.b1, lr);
    update_tensor(p.w2, g.w2, m.w2, v.w2, lr);
    update_tensor(p.b2, g.b2, m.b2, v.b2, lr);
    for (int k = 0; k < p.num_proposals; ++k) {
      update_tensor(p.head_w[k], g.head_w[k], m.head_w[k], v.head_w[k], lr);
      update_tensor(p.head_b[k], g.head_b[k], m.head_b[k], v.head_b[k], lr);
    }
    update_tensor(p.sel_w1, g.sel_w1, m.sel_w1, v.sel_w1, lr);
    update_tensor(p.sel_b1, g.sel_b1, m.sel_b1, v.sel_b1, lr);
    update_tensor(p.sel_w2, g.sel_w2, m.sel_w2, v.sel_w2, lr);
    update_tensor(p.sel_b2, g.sel_b2, m.sel_b2, v.sel_b2, lr);
  }
};

}  // namespace

Scenario scenario_from_string(const std::string& name) {
  if (name == "full") return Scenario::Full;
  if (name == "single") return Scenario::Single;
  throw std::invalid_argument("unknown scenario: " + name);
}

std::string to_string(Scenario s) { return s == Scenario::Full ? "full" : "single"; }

ParamGrads ParamGrads::zeros_like(const ModelParams& p) {
  ParamGrads g;
  g.w1 = Eigen::MatrixXd::Zero(p.w1.rows(), p.w1.cols());
  g.w2 = Eigen::MatrixXd::Zero(p.w2.rows(), p.w2.cols());
  g.b1 = Eigen::VectorXd::Zero(p.b1.size());
  g.b2 = Eigen::VectorXd::Zero(p.b2.size());
  for (const auto& hw : p.head_w)
    g.head_w.push_back(Eigen::MatrixXd::Zero(hw.rows(), hw.cols()));
  for (const auto& hb : p.head_b) g.head_b.push_back(Eigen::VectorXd::Zero(hb.size()));
  g.sel_w1 = Eigen::MatrixXd::Zero(p.sel_w1.rows(), p.sel_w1.cols());
  g.sel_w2 = Eigen::MatrixXd::Zero(p.sel_w2.rows(), p.sel_w2.cols());
  g.sel_b1 = Eigen::VectorXd::Zero(p.sel_b1.size());
  g.sel_b2 = Eigen::VectorXd::Zero(p.sel_b2.size());
  return g;
}

void ParamGrads::scale(double s) {
  w1 *= s;
  w2 *= s;
  b1 *= s;
  b2 *= s;
  for (auto& hw : head_w) hw *= s;
  for (auto& hb : head_b) hb *= s;
  sel_w1 *= s;
  sel_w2 *= s;
  sel_b1 *= s;
  sel_b2 *= s;
}

ModelParams init_params(int in_channels, int height, int width, const TrainConfig& cfg,
                        Rng& rng) {
  if (in_channels < 1 || height < 1 || width < 1)
    throw std::invalid_argument("init_params: bad input dimensions");
  if (cfg.num_proposals < 1) throw std::invalid_argument("init_params: need K >= 1");
  ModelParams p;
  p.in_channels = in_channels;
  p.height = height;
  p.width = width;
  p.num_proposals = cfg.num_proposals;
  p.hidden1 = cfg.hidden1;
  p.hidden2 = cfg.hidden2;
  p.sel_hidden = cfg.sel_hidden;

  p.w1 = xavier(p.hidden1, p.input_dim(), rng);
  p.b1 = Eigen::VectorXd::Zero(p.hidden1);
  p.w2 = xavier(p.hidden2, p.hidden1, rng);
  p.b2 = Eigen::VectorXd::Zero(p.hidden2);
  p.sel_w1 = xavier(p.sel_hidden, p.hidden2, rng);
  p.sel_b1 = Eigen::VectorXd::Zero(p.sel_hidden);
  p.sel_w2 = xavier(p.num_proposals, p.sel_hidden, rng);
  p.sel_b2 = Eigen::VectorXd::Zero(p.num_proposals);

  Eigen::MatrixXd base = xavier(p.mask_dim(), p.hidden2, rng);
  for (int k = 0; k < p.num_proposals; ++k) {
    Eigen::MatrixXd w = base;
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) w(i, j) *= rng.uniform(0.975, 1.025);
    p.head_w.push_back(std::move(w));
    p.head_b.push_back(Eigen::VectorXd::Zero(p.mask_dim()));
  }
  return p;
}

ProposalSet forward(const ModelParams& params, const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != params.input_dim())
    throw std::invalid_argument("forward: input size does not match the model");
  Eigen::MatrixXd xm(1, params.input_dim());
  for (int d = 0; d < params.input_dim(); ++d) xm(0, d) = x[d];
  ForwardCache c = forward_batch(params, std::move(xm));
  ProposalSet out;
  for (int k = 0; k < params.num_proposals; ++k)
    out.proposals.push_back(row_to_softmask(c.prop[k], 0, params.height, params.width));
  for (int k = 0; k < params.num_proposals; ++k) out.scores.push_back(c.scores(0, k));
  return out;
}

LossBreakdown loss_fully(const ModelParams& params, const DatasetItem& item,
                         const TrainConfig& cfg) {
  ForwardCache c = forward_batch(params, batch_inputs(params, {&item}));
  return full_loss_row(params, c, 0, item, cfg, 1.0, nullptr, nullptr);
}

LossBreakdown loss_single_pu(const ModelParams& params,
                             const std::vector<LabeledExample>& batch,
                             const TrainConfig& cfg) {
  std::vector<const DatasetItem*> items;
  for (const auto& ex : batch) items.push_back(ex.item);
  ForwardCache c = forward_batch(params, batch_inputs(params, items));
  return pu_loss_batch(params, c, batch, cfg, nullptr, nullptr);
}

LossBreakdown LossClosure::value(const ModelParams& params) const {
  if (scenario == Scenario::Full) return loss_fully(params, *item, cfg);
  return loss_single_pu(params, batch, cfg);
}

ParamGrads gradient(const ModelParams& params, const LossClosure& closure) {
  ParamGrads g = ParamGrads::zeros_like(params);
  if (closure.scenario == Scenario::Full) {
    ForwardCache c = forward_batch(params, batch_inputs(params, {closure.item}));
    std::vector<Eigen::MatrixXd> d_prop(params.num_proposals);
    Eigen::MatrixXd d_scores = Eigen::MatrixXd::Zero(1, params.num_proposals);
    full_loss_row(params, c, 0, *closure.item, closure.cfg, 1.0, &d_prop, &d_scores);
    backward_batch(params, c, d_prop, d_scores, g);
  } else {
    std::vector<const DatasetItem*> items;
    for (const auto& ex : closure.batch) items.push_back(ex.item);
    ForwardCache c = forward_batch(params, batch_inputs(params, items));
    std::vector<Eigen::MatrixXd> d_prop(params.num_proposals);
    Eigen::MatrixXd d_scores =
        Eigen::MatrixXd::Zero(static_cast<long>(items.size()), params.num_proposals);
    pu_loss_batch(params, c, closure.batch, closure.cfg, &d_prop, &d_scores);
    backward_batch(params, c, d_prop, d_scores, g);
  }
  return g;
}

std::pair<std::vector<int>, std::vector<int>> train_val_split(int n_items,
                                                              double val_fraction,
                                                              uint64_t seed) {
  std::vector<int> idx(n_items);
  for (int i = 0; i < n_items; ++i) idx[i] = i;
  Rng rng(Rng::child_seed(seed, 0x5EEDULL));
  for (int i = n_items - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_int(0, i)]);
  int n_val = static_cast<int>(n_items * val_fraction);
  std::vector<int> val(idx.begin(), idx.begin() + n_val);
  std::vector<int> train(idx.begin() + n_val, idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

TrainResult train(const std::vector<DatasetItem>& dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.learning_rate <= 0.0 || cfg.batch_size < 1 || cfg.epochs < 0)
    throw std::invalid_argument("train: invalid config");
  const DatasetItem& first = dataset.front();
  for (const auto& it : dataset) {
    if (it.channels != first.channels || it.height != first.height || it.width != first.width)
      throw std::invalid_argument("train: items have inconsistent dimensions");
    if (static_cast<int>(it.modes.size()) > cfg.num_proposals)
      throw std::invalid_argument("train: item has more modes than proposals");
  }

  Rng init_rng(Rng::child_seed(cfg.rng_seed, 0x1817ULL));
  ModelParams params = init_params(first.channels, first.height, first.width, cfg, init_rng);
  auto [train_idx, val_idx] = train_val_split(static_cast<int>(dataset.size()),
                                              cfg.val_fraction, cfg.rng_seed);
  if (train_idx.empty()) {
    train_idx = val_idx;  // degenerate split on tiny datasets
  }

  Adam adam(params);
  TrainResult result;
  result.config = cfg;
  result.params = params;
  result.best_epoch = 0;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  // Single-label validation uses labels drawn once, like observed data;
  // training labels are redrawn every epoch.
  std::vector<BinaryMask> val_labels;
  if (cfg.scenario == Scenario::Single) {
    Rng vrng(Rng::child_seed(cfg.rng_seed, 0x7A15ULL));
    val_labels.reserve(dataset.size());
    for (const auto& it : dataset) val_labels.push_back(sample_single_label(it, vrng));
  }

  const auto eval_split = [&](const std::vector<int>& idx,
                              const std::vector<BinaryMask>* labels) {
    double loss = 0.0;
    if (cfg.scenario == Scenario::Full) {
      for (int i : idx) loss += loss_fully(params, dataset[i], cfg).total;
      loss /= static_cast<double>(idx.size());
    } else {
      std::vector<LabeledExample> batch;
      for (int i : idx) batch.push_back({&dataset[i], (*labels)[i]});
      loss = loss_single_pu(params, batch, cfg).total;
    }
    return loss;
  };
  const auto eval_hm = [&](const std::vector<int>& idx) {
    double hm = 0.0;
    for (int i : idx) {
      ProposalSet ps = forward(params, dataset[i].input);
      std::vector<BinaryMask> bin;
      for (const auto& pm : ps.proposals) bin.push_back(binarize(pm));
      hm += hm_iou_star(dataset[i].modes, bin);
    }
    return hm / static_cast<double>(idx.size());
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng erng(Rng::child_seed(cfg.rng_seed, 0xE000ULL + static_cast<uint64_t>(epoch)));
    std::vector<int> order = train_idx;
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[erng.uniform_int(0, i)]);
    // Per-epoch single-label draws, one per dataset item in index order.
    std::vector<BinaryMask> labels;
    if (cfg.scenario == Scenario::Single) {
      labels.reserve(dataset.size());
      for (const auto& it : dataset) labels.push_back(sample_single_label(it, erng));
    }

    double ep_total = 0.0, ep_mask = 0.0, ep_select = 0.0;
    int n_batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t stop = std::min(order.size(), start + cfg.batch_size);
      ParamGrads grads = ParamGrads::zeros_like(params);
      LossBreakdown batch_loss;
      if (cfg.scenario == Scenario::Full) {
        std::vector<const DatasetItem*> items;
        for (size_t s = start; s < stop; ++s) items.push_back(&dataset[order[s]]);
        ForwardCache c = forward_batch(params, batch_inputs(params, items));
        std::vector<Eigen::MatrixXd> d_prop(params.num_proposals);
        Eigen::MatrixXd d_scores =
            Eigen::MatrixXd::Zero(static_cast<long>(items.size()), params.num_proposals);
        double inv = 1.0 / static_cast<double>(items.size());
        for (size_t s = 0; s < items.size(); ++s) {
          LossBreakdown lb = full_loss_row(params, c, static_cast<long>(s), *items[s], cfg,
                                           inv, &d_prop, &d_scores);
          batch_loss.total += inv * lb.total;
          batch_loss.mask_part += inv * lb.mask_part;
          batch_loss.select_part += inv * lb.select_part;
        }
        backward_batch(params, c, d_prop, d_scores, grads);
      } else {
        std::vector<LabeledExample> batch;
        std::vector<const DatasetItem*> items;
        for (size_t s = start; s < stop; ++s) {
          batch.push_back({&dataset[order[s]], labels[order[s]]});
          items.push_back(&dataset[order[s]]);
        }
        ForwardCache c = forward_batch(params, batch_inputs(params, items));
        std::vector<Eigen::MatrixXd> d_prop(params.num_proposals);
        Eigen::MatrixXd d_scores =
            Eigen::MatrixXd::Zero(static_cast<long>(items.size()), params.num_proposals);
        batch_loss = pu_loss_batch(params, c, batch, cfg, &d_prop, &d_scores);
        backward_batch(params, c, d_prop, d_scores, grads);
      }
      if (!std::isfinite(batch_loss.total))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
      adam.step(params, grads, cfg.learning_rate);
      ep_total += batch_loss.total;
      ep_mask += batch_loss.mask_part;
      ep_select += batch_loss.select_part;
      ++n_batches;
    }

    const std::vector<int>& report_idx = val_idx.empty() ? train_idx : val_idx;
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_total = ep_total / n_batches;
    stats.train_mask = ep_mask / n_batches;
    stats.train_select = ep_select / n_batches;
    stats.val_loss =
        eval_split(report_idx, cfg.scenario == Scenario::Single ? &val_labels : nullptr);
    stats.val_hm_iou_star = eval_hm(report_idx);
    result.history.push_back(stats);

    if (stats.val_loss < result.best_val_loss) {
      result.best_val_loss = stats.val_loss;
      result.best_epoch = epoch;
      result.params = params;
    }
  }
  return result;
}

namespace {

void write_bytes(std::ofstream& out, const void* ptr, size_t bytes) {
  out.write(static_cast<const char*>(ptr), static_cast<std::streamsize>(bytes));
}

void read_bytes(std::ifstream& in, void* ptr, size_t bytes) {
  in.read(static_cast<char*>(ptr), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
}

void write_matrix(std::ofstream& out, const Eigen::MatrixXd& m) {
  write_bytes(out, m.data(), sizeof(double) * m.size());
}

void write_vector(std::ofstream& out, const Eigen::VectorXd& v) {
  write_bytes(out, v.data(), sizeof(double) * v.size());
}

void read_matrix(std::ifstream& in, Eigen::MatrixXd& m) {
  read_bytes(in, m.data(), sizeof(double) * m.size());
}

void read_vector(std::ifstream& in, Eigen::VectorXd& v) {
  read_bytes(in, v.data(), sizeof(double) * v.size());
}

constexpr uint32_t kCheckpointMagic = 0x4d534554;  // "MSET"
constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const ModelParams& params, const TrainConfig& cfg,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  write_bytes(out, &kCheckpointMagic, 4);
  write_bytes(out, &kCheckpointVersion, 4);
  int32_t meta[11] = {params.in_channels,
                      params.height,
                      params.width,
                      params.num_proposals,
                      params.hidden1,
                      params.hidden2,
                      params.sel_hidden,
                      static_cast<int32_t>(cfg.scenario),
                      static_cast<int32_t>(cfg.loss_kind),
                      cfg.epochs,
                      cfg.batch_size};
  write_bytes(out, meta, sizeof(meta));
  double metad[5] = {cfg.lambda, cfg.eta_p, cfg.learning_rate, cfg.val_fraction, 0.0};
  write_bytes(out, metad, sizeof(metad));
  uint64_t seed = cfg.rng_seed;
  write_bytes(out, &seed, sizeof(seed));
  write_matrix(out, params.w1);
  write_vector(out, params.b1);
  write_matrix(out, params.w2);
  write_vector(out, params.b2);
  for (int k = 0; k < params.num_proposals; ++k) {
    write_matrix(out, params.head_w[k]);
    write_vector(out, params.head_b[k]);
  }
  write_matrix(out, params.sel_w1);
  write_vector(out, params.sel_b1);
  write_matrix(out, params.sel_w2);
  write_vector(out, params.sel_b2);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::pair<ModelParams, TrainConfig> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  uint32_t magic = 0, version = 0;
  read_bytes(in, &magic, 4);
  read_bytes(in, &version, 4);
  if (magic != kCheckpointMagic)
    throw std::runtime_error("load_checkpoint: not a checkpoint file");
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  int32_t meta[11];
  read_bytes(in, meta, sizeof(meta));
  double metad[5];
  read_bytes(in, metad, sizeof(metad));
  uint64_t seed = 0;
  read_bytes(in, &seed, sizeof(seed));

  TrainConfig cfg;
  cfg.scenario = static_cast<Scenario>(meta[7]);
  cfg.loss_kind = static_cast<MaskLoss>(meta[8]);
  cfg.epochs = meta[9];
  cfg.batch_size = meta[10];
  cfg.lambda = metad[0];
  cfg.eta_p = metad[1];
  cfg.learning_rate = metad[2];
  cfg.val_fraction = metad[3];
  cfg.rng_seed = seed;
  cfg.num_proposals = meta[3];
  cfg.hidden1 = meta[4];
  cfg.hidden2 = meta[5];
  cfg.sel_hidden = meta[6];

  ModelParams p;
  p.in_channels = meta[0];
  p.height = meta[1];
  p.width = meta[2];
  p.num_proposals = meta[3];
  p.hidden1 = meta[4];
  p.hidden2 = meta[5];
  p.sel_hidden = meta[6];
  p.w1.resize(p.hidden1, p.input_dim());
  p.b1.resize(p.hidden1);
  p.w2.resize(p.hidden2, p.hidden1);
  p.b2.resize(p.hidden2);
  read_matrix(in, p.w1);
  read_vector(in, p.b1);
  read_matrix(in, p.w2);
  read_vector(in, p.b2);
  for (int k = 0; k < p.num_proposals; ++k) {
    Eigen::MatrixXd hw(p.mask_dim(), p.hidden2);
    Eigen::VectorXd hb(p.mask_dim());
    read_matrix(in, hw);
    read_vector(in, hb);
    p.head_w.push_back(std::move(hw));
    p.head_b.push_back(std::move(hb));
  }
  p.sel_w1.resize(p.sel_hidden, p.hidden2);
  p.sel_b1.resize(p.sel_hidden);
  p.sel_w2.resize(p.num_proposals, p.sel_hidden);
  p.sel_b2.resize(p.num_proposals);
  read_matrix(in, p.sel_w1);
  read_vector(in, p.sel_b1);
  read_matrix(in, p.sel_w2);
  read_vector(in, p.sel_b2);
  return {std::move(p), cfg};
}

}  // namespace modeset
