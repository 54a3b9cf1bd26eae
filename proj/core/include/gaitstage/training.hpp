#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gaitstage/data.hpp"
#include "gaitstage/model.hpp"
#include "gaitstage/tensor.hpp"

namespace gaitstage {

// mean of -ln p[label] over the batch; probabilities clamped to >= 1e-12
// before the logarithm
Tensor cross_entropy(const Tensor& probabilities, const std::vector<int>& labels);

struct NadamConfig {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Nesterov-Adam: m <- b1*m + (1-b1)*g; n <- b2*n + (1-b2)*g^2;
// theta <- theta - a*(b1*m/(1-b1^(t+1)) + (1-b1)*g/(1-b1^t)) / (sqrt(n/(1-b2^t)) + eps)
class NadamOptimizer {
 public:
  explicit NadamOptimizer(std::vector<Tensor> parameters, NadamConfig config = {});

  void step();  // consumes the populated gradients; throws on missing grads
  void zero_grad();
  std::size_t step_count() const { return t_; }

 private:
  std::vector<Tensor> parameters_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  NadamConfig config_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t batch_size = 150;
  std::size_t max_epochs = 30;
  double dropout_rate = 0.1;
  std::size_t patience = 5;  // epochs without validation-loss improvement
  std::uint64_t seed = 0;    // drives shuffling and dropout masks
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
};

struct TrainingHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based, 0 when no epoch ran
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

// csv: epoch,train_loss,train_acc,val_loss,val_acc at 6 decimal places
void write_history_csv(const TrainingHistory& history, const std::string& path);

// Stop rule on a monitored loss, separated from fit so scripted sequences
// can drive it directly. Improvement means strictly lower than the best.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  // returns true when the run should stop after this observation
  bool observe(double monitored_loss);
  bool improved() const { return improved_; }
  double best() const { return best_; }
  std::size_t best_index() const { return best_index_; }  // 1-based
  std::size_t observations() const { return count_; }

 private:
  std::size_t patience_;
  std::size_t count_ = 0;
  std::size_t stale_ = 0;
  std::size_t best_index_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

// Mini-batch training with Nadam, epoch-level validation, early stopping on
// validation loss and best-weights restore. Deterministic for a fixed
// (seed, data, config) triple.
TrainingHistory fit(HybridModel& model, const std::vector<Segment>& train_segments,
                    const std::vector<Segment>& val_segments, const TrainConfig& config);

// convenience: loss/accuracy of the model over segments, dropout off
struct EvalStats {
  double loss = 0, accuracy = 0;
};
EvalStats evaluate(const HybridModel& model, const std::vector<Segment>& segments,
                   std::size_t batch_size);

// per-segment predicted class and class probabilities, dropout off
struct Predictions {
  std::vector<int> classes;
  std::vector<std::vector<double>> probabilities;
};
Predictions predict(const HybridModel& model, const std::vector<Segment>& segments,
                    std::size_t batch_size);

}  // namespace gaitstage
