#include "amh/train.hpp"

#include "amh/oracle.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace amh {

BceResult balanced_bce(const Tensor& pred, const Tensor& gt, const LossConfig& cfg) {
  check_same_shape(pred.shape(), gt.shape(), "balanced_bce");
  if (!(cfg.epsilon > 0 && cfg.epsilon <= 1e-3)) throw std::invalid_argument("balanced_bce: epsilon must be in (0, 1e-3]");
  Index pos = 0;
  for (Index i = 0; i < gt.size(); ++i) {
    const double g = gt.values()[i];
    if (g != 0.0 && g != 1.0) throw std::invalid_argument("balanced_bce: ground truth must be binary");
    pos += g == 1.0;
  }
  const Index n = gt.size();
  if (n == 0) throw std::invalid_argument("balanced_bce: empty ground truth");

  BceResult r;
  r.beta = static_cast<double>(pos) / static_cast<double>(n);
  const double w_pos = cfg.beta == BetaConvention::hed ? 1.0 - r.beta : r.beta;
  const double w_neg = cfg.beta == BetaConvention::hed ? r.beta : 1.0 - r.beta;
  const double lo = cfg.epsilon, hi = 1.0 - cfg.epsilon;
  r.grad = Tensor(pred.shape());
  for (Index i = 0; i < n; ++i) {
    const double p = pred.values()[i];
    const double pc = std::clamp(p, lo, hi);
    const bool inside = p > lo && p < hi;
    if (gt.values()[i] == 1.0) {
      r.loss -= w_pos * std::log(pc);
      if (inside) r.grad.values()[i] = -w_pos / p;
    } else {
      r.loss -= w_neg * std::log1p(-pc);
      if (inside) r.grad.values()[i] = w_neg / (1.0 - p);
    }
  }
  return r;
}

Var balanced_bce(Var pred, const Tensor& gt, const LossConfig& cfg) {
  BceResult r = balanced_bce(pred.value(), gt, cfg);
  Tensor grad = std::move(r.grad);
  return pred.tape()->record("balanced_bce", Tensor::constant(Shape{1, 1, 1}, r.loss), {pred.id()},
                             [grad = std::move(grad), in = pred.id()](Tape& t, std::size_t self) {
                               Tensor g = grad;
                               g.values() *= t.grad_of(self).values()[0];
                               t.accumulate(in, g);
                             });
}

namespace {

double head_weight(const LossConfig& cfg, std::size_t i) {
  if (cfg.head_weights.empty()) return 1.0;
  if (i >= cfg.head_weights.size()) throw std::invalid_argument("loss: fewer head weights than heads");
  return cfg.head_weights[i];
}

}  // namespace

SupervisedLoss deep_supervised_loss(const std::vector<Var>& heads, Var fused, const Tensor& gt, const LossConfig& cfg,
                                    bool deep_supervision) {
  if (heads.empty()) throw std::invalid_argument("deep_supervised_loss: no heads");
  SupervisedLoss out;
  std::vector<Var> terms;
  if (deep_supervision) {
    for (std::size_t i = 0; i < heads.size(); ++i) {
      Var l = balanced_bce(heads[i], gt, cfg);
      out.per_head.push_back(l.value().values()[0]);
      const double w = head_weight(cfg, i);
      terms.push_back(w == 1.0 ? l : ad::scale(l, w));
    }
  }
  if (!deep_supervision || heads.size() > 1) {
    Var l = balanced_bce(fused, gt, cfg);
    out.per_head.push_back(l.value().values()[0]);
    terms.push_back(l);
  }
  out.total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) out.total = ad::add(out.total, terms[i]);
  return out;
}

double deep_supervised_loss(const PredictionSet& preds, const Tensor& gt, const LossConfig& cfg,
                            bool deep_supervision) {
  if (preds.heads.empty()) throw std::invalid_argument("deep_supervised_loss: no heads");
  double total = 0;
  if (deep_supervision) {
    for (std::size_t i = 0; i < preds.heads.size(); ++i) {
      total += head_weight(cfg, i) * balanced_bce(preds.heads[i], gt, cfg).loss;
    }
  }
  if (!deep_supervision || preds.heads.size() > 1) total += balanced_bce(preds.fused, gt, cfg).loss;
  return total;
}

void sgd_step(ParameterSet& params, const std::vector<Tensor>& grads, std::vector<Tensor>& velocity, double lr,
              double momentum, double weight_decay) {
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: gradient/velocity count does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].value.values();
    check_same_shape(params[i].value.shape(), grads[i].shape(), "sgd_step gradient");
    check_same_shape(params[i].value.shape(), velocity[i].shape(), "sgd_step velocity");
    auto& v = velocity[i].values();
    v = momentum * v - lr * (grads[i].values() + weight_decay * theta);
    theta += v;
  }
}

Sgd::Sgd(const ParameterSet& params, OptimConfig cfg) : cfg_(cfg) {
  if (cfg_.accumulate == 0) throw std::invalid_argument("sgd: accumulation period must be positive");
  for (const auto& p : params) {
    sum_.emplace_back(p.value.shape());
    velocity_.emplace_back(p.value.shape());
  }
}

void Sgd::accumulate(const std::vector<Tensor>& grads) {
  if (grads.size() != sum_.size()) throw std::invalid_argument("sgd: gradient count does not match parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    check_same_shape(sum_[i].shape(), grads[i].shape(), "sgd accumulate");
    sum_[i].values() += grads[i].values();
  }
  ++count_;
}

double Sgd::learning_rate(std::size_t iteration) const {
  if (cfg_.lr_step == 0) return cfg_.lr;
  return cfg_.lr * std::pow(cfg_.lr_decay, static_cast<double>(iteration / cfg_.lr_step));
}

void Sgd::step(ParameterSet& params, std::size_t iteration) {
  if (!ready()) throw std::logic_error("sgd: step before the accumulation period is full");
  for (auto& s : sum_) s.values() /= static_cast<double>(count_);
  sgd_step(params, sum_, velocity_, learning_rate(iteration), cfg_.momentum, cfg_.weight_decay);
  for (auto& s : sum_) s.values().setZero();
  count_ = 0;
  ++updates_;
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv) {
  TrainConfig c;
  c.optim.lr = kv.get_double("train.lr", c.optim.lr);
  c.optim.lr_decay = kv.get_double("train.lr_decay", c.optim.lr_decay);
  c.optim.lr_step = static_cast<std::size_t>(kv.get_int("train.lr_step", static_cast<std::int64_t>(c.optim.lr_step)));
  c.optim.momentum = kv.get_double("train.momentum", c.optim.momentum);
  c.optim.weight_decay = kv.get_double("train.weight_decay", c.optim.weight_decay);
  c.optim.accumulate =
      static_cast<std::size_t>(kv.get_int("train.accumulate", static_cast<std::int64_t>(c.optim.accumulate)));
  const std::string beta = kv.get_or("train.beta", "hed");
  if (beta == "hed") {
    c.loss.beta = BetaConvention::hed;
  } else if (beta == "as_written") {
    c.loss.beta = BetaConvention::as_written;
  } else {
    throw ConfigError("train.beta: expected hed or as_written, got '" + beta + "'");
  }
  c.loss.epsilon = kv.get_double("train.epsilon", c.loss.epsilon);
  if (!(c.loss.epsilon > 0 && c.loss.epsilon <= 1e-3)) throw ConfigError("train.epsilon must be in (0, 1e-3]");
  c.epochs = static_cast<std::size_t>(kv.get_int("train.epochs", static_cast<std::int64_t>(c.epochs)));
  c.iterations = static_cast<std::size_t>(kv.get_int("train.iterations", 0));
  c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<std::int64_t>(c.seed)));
  c.log_every = static_cast<std::size_t>(kv.get_int("train.log_every", static_cast<std::int64_t>(c.log_every)));
  c.checkpoint_every = static_cast<std::size_t>(kv.get_int("train.checkpoint_every", 0));
  if (c.optim.accumulate == 0) throw ConfigError("train.accumulate must be positive");
  return c;
}

LossAndGrad loss_and_gradients(const AmhNet& model, const Sample& sample, const LossConfig& cfg) {
  Tape tape;
  const auto f = model.forward(tape, sample.image);
  const auto loss = deep_supervised_loss(f.heads, f.fused, sample.edges, cfg, model.config().deep_supervision());
  tape.backward(loss.total);
  LossAndGrad out;
  out.loss = loss.total.value().values()[0];
  out.per_head = loss.per_head;
  out.grads.reserve(f.params.size());
  for (const Var& p : f.params) out.grads.push_back(tape.grad(p));
  return out;
}

TrainReport train_loop(const Dataset& data, AmhNet& model, const TrainConfig& cfg, std::ostream* metrics,
                       const std::function<void(std::size_t, const AmhNet&)>& on_checkpoint) {
  if (data.empty()) throw std::invalid_argument("train_loop: empty dataset");
  const std::size_t total = cfg.iterations ? cfg.iterations : cfg.epochs * data.size();
  TrainReport report;
  Sgd opt(model.parameters(), cfg.optim);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t it = 0; it < total; ++it) {
    const std::size_t pos = it % data.size();
    if (pos == 0) std::shuffle(order.begin(), order.end(), rng);
    const LossAndGrad lg = loss_and_gradients(model, data[order[pos]], cfg.loss);
    if (!std::isfinite(lg.loss)) {
      throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + " (sample " +
                             std::to_string(order[pos]) + "): loss is " + std::to_string(lg.loss) +
                             ", learning rate " + std::to_string(opt.learning_rate(it)));
    }
    report.losses.push_back(lg.loss);
    opt.accumulate(lg.grads);
    if (opt.ready()) opt.step(model.parameters(), it);

    if (metrics && cfg.log_every && (it % cfg.log_every == 0 || it + 1 == total)) {
      nlohmann::json j{{"iteration", it}, {"loss", lg.loss}, {"lr", opt.learning_rate(it)}, {"head_losses", lg.per_head}};
      *metrics << j.dump() << '\n';
    }
    if (on_checkpoint && cfg.checkpoint_every && (it + 1) % cfg.checkpoint_every == 0) on_checkpoint(it + 1, model);
  }
  report.iterations = total;
  report.updates = opt.updates();
  return report;
}

void jitter_biases(AmhNet& model, Rng& rng, double scale) {
  for (auto& p : model.parameters()) {
    if (p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, ".b") == 0) {
      p.value.values() += random_tensor(p.value.shape(), rng, -scale, scale).values();
    }
  }
}

std::vector<GradCheckEntry> gradient_check(AmhNet& model, const Sample& sample, const LossConfig& cfg,
                                           std::size_t per_tensor, std::uint64_t seed, double h, double kink_tol) {
  const LossAndGrad analytic = loss_and_gradients(model, sample, cfg);
  const bool deep = model.config().deep_supervision();
  auto loss_fn = [&] { return deep_supervised_loss(model.predict(sample.image), sample.edges, cfg, deep); };

  Rng rng(seed);
  std::vector<GradCheckEntry> out;
  for (std::size_t t = 0; t < model.parameters().size(); ++t) {
    Parameter& p = model.parameters()[t];
    GradCheckEntry e;
    e.tensor = p.name;
    std::vector<Index> coords(static_cast<std::size_t>(p.value.size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    std::shuffle(coords.begin(), coords.end(), rng);
    for (Index c : coords) {
      if (e.checked == per_tensor) break;
      const double numeric = oracle::central_difference(loss_fn, p.value.values()[c], h);
      const double half = oracle::central_difference(loss_fn, p.value.values()[c], h / 2);
      if (oracle::relative_error(numeric, half, 1e-6) > kink_tol) {
        ++e.kinks;
        continue;
      }
      const double exact = analytic.grads[t].values()[c];
      const double rel = oracle::relative_error(exact, numeric, 1e-6);
      if (rel >= e.max_rel_error) {
        e.max_rel_error = rel;
        e.worst_analytic = exact;
        e.worst_numeric = numeric;
      }
      ++e.checked;
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace amh
