#include "gaitstage/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "gaitstage/errors.hpp"
#include "gaitstage/rng.hpp"

namespace gaitstage {

namespace {
constexpr double kProbabilityFloor = 1e-12;
}

Tensor cross_entropy(const Tensor& probabilities, const std::vector<int>& labels) {
  if (probabilities.rank() != 2) {
    throw std::invalid_argument("cross_entropy expects (batch, classes), got " +
                                shape_str(probabilities.shape()));
  }
  const std::size_t n = probabilities.shape()[0];
  const std::size_t classes = probabilities.shape()[1];
  if (labels.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(n));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                  " out of range [0, " + std::to_string(classes) + ")");
    }
  }
  const auto pv = probabilities.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc -= std::log(std::max(pv[i * classes + static_cast<std::size_t>(labels[i])],
                             kProbabilityFloor));
  }
  Tensor result = Tensor::scalar(acc / static_cast<double>(n));
  if (active_tape() && probabilities.requires_grad()) {
    result.set_requires_grad(true);
    Tensor tp = probabilities, to = result;
    active_tape()->record(result, [n, classes, tp, to, labels]() mutable {
      const auto g = to.grad();
      if (g.empty() || !tp.requires_grad()) return;
      auto gp = tp.grad_mut();
      const auto pv = tp.values();
      const double scale = g[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = i * classes + static_cast<std::size_t>(labels[i]);
        if (pv[k] > kProbabilityFloor) gp[k] -= scale / pv[k];
        // at or below the floor the clamped log is constant in p
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// optimizer

NadamOptimizer::NadamOptimizer(std::vector<Tensor> parameters, NadamConfig config)
    : parameters_(std::move(parameters)), config_(config) {
  first_moment_.reserve(parameters_.size());
  second_moment_.reserve(parameters_.size());
  for (const Tensor& p : parameters_) {
    first_moment_.emplace_back(p.size(), 0.0);
    second_moment_.emplace_back(p.size(), 0.0);
  }
}

void NadamOptimizer::step() {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double t = static_cast<double>(t_);
  const double m_corr = 1.0 - std::pow(b1, t + 1.0);
  const double g_corr = 1.0 - std::pow(b1, t);
  const double n_corr = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    Tensor& p = parameters_[i];
    const auto g = p.grad();
    if (g.empty()) {
      throw std::invalid_argument("nadam step: parameter " + std::to_string(i) +
                                  " has no gradient");
    }
    auto theta = p.values();
    auto& m = first_moment_[i];
    auto& nb = second_moment_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g[j];
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      nb[j] = b2 * nb[j] + (1.0 - b2) * gj * gj;
      const double m_hat = m[j] / m_corr;
      const double n_hat = nb[j] / n_corr;
      theta[j] -= config_.alpha * (b1 * m_hat + (1.0 - b1) * gj / g_corr) /
                  (std::sqrt(n_hat) + config_.epsilon);
    }
  }
}

void NadamOptimizer::zero_grad() {
  for (Tensor& p : parameters_) p.zero_grad();
}

// ---------------------------------------------------------------------------
// early stopping

bool EarlyStopper::observe(double monitored_loss) {
  ++count_;
  if (monitored_loss < best_) {
    best_ = monitored_loss;
    best_index_ = count_;
    stale_ = 0;
    improved_ = true;
    return false;
  }
  improved_ = false;
  ++stale_;
  return stale_ >= patience_;
}

// ---------------------------------------------------------------------------
// fit

namespace {

int argmax_row(std::span<const double> row) {
  int best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = static_cast<int>(j);
  }
  return best;
}

double batch_accuracy(const Tensor& probabilities, const std::vector<int>& labels) {
  const std::size_t n = probabilities.shape()[0];
  const std::size_t classes = probabilities.shape()[1];
  const auto pv = probabilities.values();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (argmax_row(pv.subspan(i * classes, classes)) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const Tensor& p : params) {
    const auto v = p.values();
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

void restore(std::vector<Tensor>& params, const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].values();
    std::copy(snap[i].begin(), snap[i].end(), v.begin());
  }
}

}  // namespace

EvalStats evaluate(const HybridModel& model, const std::vector<Segment>& segments,
                   std::size_t batch_size) {
  EvalStats stats;
  if (segments.empty()) return stats;
  double loss_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < segments.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, segments.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor inputs = make_batch(segments, idx);
    const auto labels = make_labels(segments, idx);
    const Tensor probs = forward(model, inputs);
    const auto pv = probs.values();
    const std::size_t classes = probs.shape()[1];
    for (std::size_t i = 0; i < count; ++i) {
      const auto row = pv.subspan(i * classes, classes);
      loss_sum -= std::log(std::max(row[static_cast<std::size_t>(labels[i])],
                                    kProbabilityFloor));
      if (argmax_row(row) == labels[i]) ++hits;
    }
  }
  stats.loss = loss_sum / static_cast<double>(segments.size());
  stats.accuracy = static_cast<double>(hits) / static_cast<double>(segments.size());
  return stats;
}

Predictions predict(const HybridModel& model, const std::vector<Segment>& segments,
                    std::size_t batch_size) {
  Predictions out;
  out.classes.reserve(segments.size());
  out.probabilities.reserve(segments.size());
  for (std::size_t start = 0; start < segments.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, segments.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor inputs = make_batch(segments, idx);
    const Tensor probs = forward(model, inputs);
    const auto pv = probs.values();
    const std::size_t classes = probs.shape()[1];
    for (std::size_t i = 0; i < count; ++i) {
      const auto row = pv.subspan(i * classes, classes);
      out.classes.push_back(argmax_row(row));
      out.probabilities.emplace_back(row.begin(), row.end());
    }
  }
  return out;
}

TrainingHistory fit(HybridModel& model, const std::vector<Segment>& train_segments,
                    const std::vector<Segment>& val_segments, const TrainConfig& config) {
  TrainingHistory history;
  if (config.max_epochs == 0) return history;
  if (train_segments.empty() || val_segments.empty()) {
    throw PreconditionError("fit: training and validation sets must be non-empty");
  }
  {
    std::unordered_set<std::string> train_subjects;
    for (const Segment& s : train_segments) train_subjects.insert(s.subject_id);
    for (const Segment& s : val_segments) {
      if (train_subjects.count(s.subject_id)) {
        throw PreconditionError("fit: subject " + s.subject_id +
                                " appears in both training and validation sets");
      }
    }
  }
  if (config.batch_size < 1) throw std::invalid_argument("fit: batch_size must be >= 1");
  if (config.patience < 1) throw std::invalid_argument("fit: patience must be >= 1");

  auto params = model.parameters();
  NadamOptimizer optimizer(params);
  CounterRng dropout_rng(derive_seed(config.seed, seed_salt::dropout));
  EarlyStopper stopper(config.patience);
  std::vector<std::vector<double>> best_params = snapshot(params);
  std::vector<std::size_t> order(train_segments.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, seed_salt::shuffle, epoch));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0, acc_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      const Tensor inputs = make_batch(train_segments, idx);
      const auto labels = make_labels(train_segments, idx);

      Tape tape;
      TapeScope scope(tape);
      ForwardOptions opts;
      opts.training = true;
      opts.rng = &dropout_rng;
      opts.dropout_rate = config.dropout_rate;
      const Tensor probs = forward(model, inputs, opts);
      const Tensor loss = cross_entropy(probs, labels);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("fit: non-finite loss " + std::to_string(loss_value) +
                                  " at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batches + 1),
                              epoch, batches + 1);
      }
      tape.backward(loss);
      optimizer.step();
      optimizer.zero_grad();
      loss_sum += loss_value;
      acc_sum += batch_accuracy(probs, labels);
      ++batches;
    }

    const EvalStats val = evaluate(model, val_segments, config.batch_size);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    stats.train_accuracy = acc_sum / static_cast<double>(batches);
    stats.val_loss = val.loss;
    stats.val_accuracy = val.accuracy;
    history.epochs.push_back(stats);

    const bool stop = stopper.observe(val.loss);
    if (stopper.improved()) {
      best_params = snapshot(params);
    }
    if (stop) {
      history.stopped_early = true;
      break;
    }
  }
  history.best_epoch = stopper.best_index();
  history.best_val_loss = stopper.best();
  restore(params, best_params);
  return history;
}

void write_history_csv(const TrainingHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write history: " + path);
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char line[160];
  for (const EpochStats& e : history.epochs) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss,
                  e.train_accuracy, e.val_loss, e.val_accuracy);
    out << line;
  }
}

}  // namespace gaitstage
