#pragma once

#include "amh/datagen.hpp"
#include "amh/kv_config.hpp"
#include "amh/mhnet.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace amh {

/// as_written: positives weighted by beta = |E+|/|E|, negatives by 1-beta.
/// hed: positives weighted by 1-beta, negatives by beta.
enum class BetaConvention { as_written, hed };

struct LossConfig {
  BetaConvention beta = BetaConvention::hed;
  double epsilon = 1e-7;
  std::vector<double> head_weights;  // empty means 1 for every head
};

struct BceResult {
  double loss = 0;
  double beta = 0;
  Tensor grad;  // d loss / d pred
};

/// Class-balanced cross-entropy, returned as a non-negative quantity to minimise.
BceResult balanced_bce(const Tensor& pred, const Tensor& gt, const LossConfig& cfg);

/// Same loss recorded on the tape.
Var balanced_bce(Var pred, const Tensor& gt, const LossConfig& cfg);

struct SupervisedLoss {
  Var total;
  std::vector<double> per_head;  // one per head, then the fused map when it is supervised
};

/// Deep supervision: every head plus the fused map (the fused term is skipped when there is a
/// single head, since it is that head). Without deep supervision only the fused map is supervised.
SupervisedLoss deep_supervised_loss(const std::vector<Var>& heads, Var fused, const Tensor& gt, const LossConfig& cfg,
                                    bool deep_supervision = true);
double deep_supervised_loss(const PredictionSet& preds, const Tensor& gt, const LossConfig& cfg,
                            bool deep_supervision = true);

struct OptimConfig {
  double lr = 1e-3;
  double lr_decay = 0.1;         // multiplied in every lr_step iterations
  std::size_t lr_step = 10000;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::size_t accumulate = 10;   // iterations per parameter update
};

/// v <- m v - lr (g + wd theta);  theta <- theta + v
void sgd_step(ParameterSet& params, const std::vector<Tensor>& grads, std::vector<Tensor>& velocity, double lr,
              double momentum, double weight_decay);

/// SGD with momentum over gradients averaged across `accumulate` iterations.
class Sgd {
 public:
  Sgd(const ParameterSet& params, OptimConfig cfg);

  void accumulate(const std::vector<Tensor>& grads);
  bool ready() const { return count_ >= cfg_.accumulate; }
  double learning_rate(std::size_t iteration) const;
  /// Applies the averaged gradient and clears the accumulator. Requires ready().
  void step(ParameterSet& params, std::size_t iteration);
  const std::vector<Tensor>& velocity() const { return velocity_; }
  std::size_t updates() const { return updates_; }

 private:
  OptimConfig cfg_;
  std::vector<Tensor> sum_;
  std::vector<Tensor> velocity_;
  std::size_t count_ = 0;
  std::size_t updates_ = 0;
};

struct TrainConfig {
  OptimConfig optim;
  LossConfig loss;
  std::size_t epochs = 1;
  std::size_t iterations = 0;  // overrides epochs when nonzero
  std::uint64_t seed = 1;
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;

  static TrainConfig from_kv(const KvConfig& kv);
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainReport {
  std::vector<double> losses;  // one per iteration
  std::size_t iterations = 0;
  std::size_t updates = 0;
};

/// Batch size 1, data order shuffled per epoch from `cfg.seed`. Writes one JSON object per logged
/// iteration to `metrics` and calls `on_checkpoint` every checkpoint_every iterations.
TrainReport train_loop(const Dataset& data, AmhNet& model, const TrainConfig& cfg, std::ostream* metrics = nullptr,
                       const std::function<void(std::size_t, const AmhNet&)>& on_checkpoint = {});

/// Loss and per-parameter gradients for one sample.
struct LossAndGrad {
  double loss = 0;
  std::vector<double> per_head;
  std::vector<Tensor> grads;
};
LossAndGrad loss_and_gradients(const AmhNet& model, const Sample& sample, const LossConfig& cfg);

struct GradCheckEntry {
  std::string tensor;
  std::size_t checked = 0;
  double max_rel_error = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t kinks = 0;  // coordinates skipped because a ReLU/max-pool switch lay inside the stencil
};

/// Adds uniform noise in +-scale to every bias. Zero biases on zero inputs sit exactly on a ReLU
/// kink, where one-sided and central differences disagree; gradient checks move off it first.
void jitter_biases(AmhNet& model, Rng& rng, double scale);

/// Compares tape gradients of the deep-supervised loss against central differences on up to
/// `per_tensor` randomly chosen coordinates of every parameter tensor. A coordinate whose
/// differences at h and h/2 disagree by more than kink_tol (relative) has a non-differentiable
/// point inside the stencil; it is counted in `kinks` and another coordinate is drawn instead.
std::vector<GradCheckEntry> gradient_check(AmhNet& model, const Sample& sample, const LossConfig& cfg,
                                           std::size_t per_tensor, std::uint64_t seed, double h = 1e-4,
                                           double kink_tol = 5e-4);

}  // namespace amh
