#include "amh/verify.hpp"

#include "amh/mhnet.hpp"
#include "amh/oracle.hpp"
#include "amh/tape.hpp"
#include "amh/train.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace amh {

namespace {

Index uniform_index(Rng& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

struct Recorder {
  SuiteResult res;
  std::ostream* jsonl = nullptr;

  void add(const std::string& instance, double err, double tol, bool ok) {
    ++res.instances;
    res.worst = std::max(res.worst, err);
    res.tolerance = tol;
    if (!ok) {
      if (res.failures == 0) res.detail = instance;
      ++res.failures;
    }
    if (jsonl) {
      nlohmann::json j{{"suite", res.name}, {"instance", instance}, {"error", err}, {"tolerance", tol}, {"pass", ok}};
      *jsonl << j.dump() << '\n';
    }
  }
  void add(const oracle::OracleReport& r) { add(r.instance, r.max_abs, r.tolerance, r.pass); }
};

std::string describe(const CrfInstance& c) {
  std::ostringstream s;
  s << "S=" << c.features.size() << " " << c.features[0].height() << "x" << c.features[0].width() << " C=";
  for (auto ch : c.params.channels) s << ch << ",";
  s << " k=" << c.params.pairs[1].pairwise.spec.kernel_h;
  return s.str();
}

void suite_conv(Recorder& rec, Rng& rng) {
  for (int n = 0; n < 100; ++n) {
    const Index k = uniform_index(rng, 0, 2) * 2 + 1;
    const Index stride = uniform_index(rng, 1, 2), pad = uniform_index(rng, 0, k / 2);
    const Shape sh{uniform_index(rng, 1, 4), uniform_index(rng, k, 8), uniform_index(rng, k, 8)};
    const ConvSpec spec{uniform_index(rng, 1, 4), sh.channels, k, k, stride, pad};
    const Tensor x = random_tensor(sh, rng);
    const ConvKernel w = random_kernel(spec, rng);
    rec.add(oracle::compare("conv2d", to_string(sh) + " k" + std::to_string(k) + " s" + std::to_string(stride) + " p" +
                                          std::to_string(pad),
                            conv2d(x, w), oracle::direct_conv(x, w), 1e-6));
  }
}

// <deconv(y), x> == <y, conv(x)>, on inputs whose size the transposed op reproduces exactly
void suite_deconv(Recorder& rec, Rng& rng) {
  for (int n = 0; n < 100; ++n) {
    const Index k = uniform_index(rng, 1, 4);
    const Index stride = uniform_index(rng, 1, 3), pad = uniform_index(rng, 0, (k - 1) / 2);
    const ConvSpec spec{uniform_index(rng, 1, 4), uniform_index(rng, 1, 4), k, k, stride, pad};
    const Index ho = uniform_index(rng, 1, 4), wo = uniform_index(rng, 1, 4);
    const Shape xs{spec.in_channels, deconv_output_size(ho, k, stride, pad), deconv_output_size(wo, k, stride, pad)};
    if (xs.height < k - 2 * pad || xs.width < k - 2 * pad || xs.height <= 0 || xs.width <= 0) {
      --n;
      continue;
    }
    const Tensor x = random_tensor(xs, rng);
    const ConvKernel w = random_kernel(spec, rng);
    const Tensor cx = conv2d(x, w);
    const Tensor y = random_tensor(cx.shape(), rng);
    const double lhs = dot(deconv2d(y, w), x), rhs = dot(y, cx);
    const double err = std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs));
    rec.add("deconv adjoint " + to_string(xs) + " k" + std::to_string(k) + " s" + std::to_string(stride), err, 1e-10,
            err <= 1e-10);
  }
}

void suite_crf_m(Recorder& rec, Rng& rng) {
  for (int n = 0; n < 100; ++n) {
    const CrfInstance c = random_crf_instance(rng);
    const std::size_t S = c.features.size();
    for (std::size_t e = 0; e < S; ++e) {
      for (std::size_t r = 0; r < S; ++r) {
        if (e == r) continue;
        const std::string id = describe(c) + " pair " + std::to_string(e) + "->" + std::to_string(r);
        rec.add(oracle::compare("M", id, compute_M(c.state, c.params, e, r), oracle::direct_M(c.state, c.params, e, r),
                                1e-6));
      }
    }
  }
}

void suite_crf_message(Recorder& rec, Rng& rng) {
  for (int n = 0; n < 100; ++n) {
    const CrfInstance c = random_crf_instance(rng);
    const std::size_t S = c.features.size();
    for (std::size_t e = 0; e < S; ++e) {
      for (std::size_t r = 0; r < S; ++r) {
        if (e == r) continue;
        const std::string id = describe(c) + " pair " + std::to_string(e) + "->" + std::to_string(r);
        rec.add(oracle::compare("message", id, compute_message(c.state, c.params, e, r),
                                oracle::direct_message(c.state, c.params, e, r), 1e-6));
      }
    }
  }
}

void suite_crf_inference(Recorder& rec, Rng& rng) {
  for (int n = 0; n < 50; ++n) {
    CrfInstance c = random_crf_instance(rng, 3, 8, 4, 0.3);
    c.params.iterations = static_cast<int>(uniform_index(rng, 1, 3));
    const auto fast = run_reference_inference(c.features, c.params);
    const auto ref = oracle::direct_reference_inference(c.features, c.params);
    double worst = 0;
    for (std::size_t s = 0; s < c.features.size(); ++s) worst = std::max(worst, max_abs_diff(fast.hbar[s], ref.hbar[s]));
    rec.add(describe(c) + " T=" + std::to_string(c.params.iterations), worst, 1e-6, worst <= 1e-6);
  }
}

void suite_gates(Recorder& rec, Rng& rng) {
  for (int n = 0; n < 20; ++n) {
    CrfInstance c = random_crf_instance(rng);
    // zero kernels: M = 0 everywhere, so alpha = 1/2
    const AgCrfParams zero = AgCrfParams::zeros(c.params.channels, c.params.pairs[1].pairwise.spec.kernel_h);
    double worst = 0;
    for (std::size_t e = 0; e < c.features.size(); ++e) {
      for (std::size_t r = 0; r < c.features.size(); ++r) {
        if (e == r) continue;
        for (GateSign sg : {GateSign::plus, GateSign::minus}) {
          const Tensor a = gate_expectation(compute_M(c.state, zero, e, r), sg);
          worst = std::max(worst, (a.values() - 0.5).abs().maxCoeff());
        }
      }
    }
    rec.add(describe(c) + " alpha(M=0)", worst, 0.0, worst == 0.0);

    // alpha forced to 0: hbar stays F, on both inference paths
    c.params.gate_override = 0.0;
    c.params.iterations = 2;
    const auto ref = run_reference_inference(c.features, c.params);
    Tape tape;
    const auto unrolled = run_unrolled_inference(c.features, c.params, tape);
    bool exact = true;
    for (std::size_t s = 0; s < c.features.size(); ++s) {
      exact = exact && ref.hbar[s] == c.features[s] && unrolled.hbar[s] == c.features[s];
    }
    rec.add(describe(c) + " alpha=0 keeps F", exact ? 0.0 : 1.0, 0.0, exact);
  }
  // sigma(x) + sigma(-x) = 1, i.e. sign flip maps alpha to 1 - alpha
  double worst = 0;
  for (int i = -4000; i <= 4000; ++i) {
    const double x = i * 0.01;
    worst = std::max(worst, std::abs(sigmoid(x) + sigmoid(-x) - 1.0));
  }
  rec.add("sigmoid symmetry on [-40, 40]", worst, 1e-12, worst <= 1e-12);
}

void suite_fixed_point(Recorder& rec, Rng& rng) {
  for (int n = 0; n < 20; ++n) {
    CrfInstance c = random_crf_instance(rng, 3, 8, 4, 1.0);
    // contraction: the per-sweep Lipschitz bound of h_e -> (1/a) sum alpha L (x) h_e stays well below 1
    double a = 0.1;
    for (auto& u : c.params.unary) u.scalar = a;
    for (auto& pk : c.params.pairs) {
      if (pk.pairwise.weights.size() == 0) continue;
      const double fan = static_cast<double>(pk.pairwise.spec.in_channels * pk.pairwise.spec.kernel_h *
                                             pk.pairwise.spec.kernel_w);
      const double target = 0.1 * a / (fan * static_cast<double>(c.features.size()));
      for (auto* k : {&pk.pairwise, &pk.emitter_linear, &pk.receiver_linear}) k->weights *= target;
    }
    std::vector<double> residuals;
    for (int t = 1; t <= 6; ++t) {
      c.params.iterations = t;
      residuals.push_back(oracle::fixed_point_residual(c.features, c.params, run_reference_inference(c.features, c.params)));
    }
    bool mono = true;
    double worst_ratio = 0;
    for (std::size_t t = 1; t < residuals.size(); ++t) {
      if (residuals[t - 1] < 1e-14) break;
      mono = mono && residuals[t] <= residuals[t - 1];
      worst_ratio = std::max(worst_ratio, residuals[t] / residuals[t - 1]);
    }
    rec.add(describe(c) + " residual ratio", worst_ratio, 1.0, mono);
  }
}

void suite_variants(Recorder& rec, Rng& rng) {
  for (int n = 0; n < 20; ++n) {
    const CrfInstance c = random_crf_instance(rng, 3, 8, 4, 0.5);
    const VariantReport v = compare_variants(c.features, c.params, c.params, 0.5, rng());
    const bool ok = v.plag_alpha_shift == 0.0 && v.flag_alpha_shift > 1e-9;
    rec.add(describe(c) + " plag shift " + std::to_string(v.plag_alpha_shift) + " flag shift " +
                std::to_string(v.flag_alpha_shift),
            v.plag_alpha_shift, 0.0, ok);

    AgCrfParams plain = c.params, forced = c.params;
    plain.variant = Variant::plain_crf;
    forced.variant = Variant::flag;
    forced.gate_override = 1.0;
    Tape t1, t2;
    const auto a = run_unrolled_inference(c.features, plain, t1);
    const auto b = run_unrolled_inference(c.features, forced, t2);
    double gap = 0;
    for (std::size_t s = 0; s < a.hbar.size(); ++s) gap = std::max(gap, max_abs_diff(a.hbar[s], b.hbar[s]));
    rec.add(describe(c) + " plain_crf == flag(alpha=1)", gap, 0.0, gap == 0.0);
  }
}

// Scalar loss sum(w * op(inputs)) on a fresh tape; compares tape gradients of every input with central differences.
void check_op(Recorder& rec, const std::string& name, std::vector<Tensor> inputs,
              const std::function<Var(Tape&, const std::vector<Var>&)>& op, Rng& rng, double tol = 1e-6) {
  Tensor w;
  auto loss = [&](std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Tape t;
    std::vector<Var> vs;
    for (auto& x : xs) vs.push_back(t.leaf(x));
    Var out = op(t, vs);
    if (w.size() == 0) w = random_tensor(out.shape(), rng);
    Var l = ad::sum(ad::mul(out, t.constant(w)));
    if (grads) {
      t.backward(l);
      for (auto& v : vs) grads->push_back(t.grad(v));
    }
    return l.value().values()[0];
  };
  std::vector<Tensor> grads;
  loss(inputs, &grads);
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Index j = 0; j < inputs[i].size(); ++j) {
      const double num =
          oracle::central_difference([&] { return loss(inputs, nullptr); }, inputs[i].values()[j], 1e-5);
      worst = std::max(worst, oracle::relative_error(grads[i].values()[j], num, 1e-6));
    }
  }
  rec.add(name, worst, tol, worst <= tol);
}

void suite_tape_ops(Recorder& rec, Rng& rng) {
  for (int n = 0; n < 5; ++n) {
    const ConvSpec cs{3, 2, 3, 3, static_cast<Index>(1 + n % 2), 1};
    check_op(rec, "conv2d", {random_tensor({2, 6, 5}, rng), random_tensor(kernel_tensor_shape(cs), rng)},
             [&](Tape&, const std::vector<Var>& v) { return ad::conv2d(v[0], v[1], cs); }, rng);
    const ConvSpec ds{2, 3, 4, 4, 2, 1};
    check_op(rec, "deconv2d", {random_tensor({2, 4, 3}, rng), random_tensor(kernel_tensor_shape(ds), rng)},
             [&](Tape&, const std::vector<Var>& v) { return ad::deconv2d(v[0], v[1], ds); }, rng);
    check_op(rec, "maxpool", {random_tensor({2, 6, 6}, rng)},
             [](Tape&, const std::vector<Var>& v) { return ad::maxpool(v[0], 2, 2); }, rng);
    check_op(rec, "sigmoid", {random_tensor({2, 3, 3}, rng, -4, 4)},
             [](Tape&, const std::vector<Var>& v) { return ad::sigmoid(v[0]); }, rng);
    check_op(rec, "relu", {random_tensor({2, 3, 3}, rng)},
             [](Tape&, const std::vector<Var>& v) { return ad::relu(v[0]); }, rng);
    check_op(rec, "mul", {random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 3}, rng)},
             [](Tape&, const std::vector<Var>& v) { return ad::mul(v[0], v[1]); }, rng);
    check_op(rec, "sub/scale", {random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 3}, rng)},
             [](Tape&, const std::vector<Var>& v) { return ad::scale(ad::sub(v[0], v[1]), -1.7); }, rng);
    check_op(rec, "mul_broadcast", {random_tensor({1, 3, 4}, rng), random_tensor({3, 3, 4}, rng)},
             [](Tape&, const std::vector<Var>& v) { return ad::mul_broadcast(v[0], v[1]); }, rng);
    check_op(rec, "add_bias", {random_tensor({3, 2, 2}, rng), random_tensor({3, 1, 1}, rng)},
             [](Tape&, const std::vector<Var>& v) { return ad::add_bias(v[0], v[1]); }, rng);
    check_op(rec, "concat", {random_tensor({1, 2, 3}, rng), random_tensor({2, 2, 3}, rng)},
             [](Tape&, const std::vector<Var>& v) { return ad::concat(v); }, rng);
    check_op(rec, "mean", {random_tensor({1, 3, 3}, rng), random_tensor({1, 3, 3}, rng), random_tensor({1, 3, 3}, rng)},
             [](Tape&, const std::vector<Var>& v) { return ad::mean(v); }, rng);
  }
}

void suite_unrolled_grad(Recorder& rec, Rng& rng) {
  for (Variant variant : {Variant::flag, Variant::plag, Variant::plain_crf}) {
    for (int n = 0; n < 3; ++n) {
      CrfInstance c = random_crf_instance(rng, 3, 5, 3, 0.4);
      c.params.variant = variant;
      c.params.iterations = 2;
      const std::size_t S = c.features.size();
      std::vector<Tensor> w;
      for (const auto& f : c.features) w.push_back(random_tensor(f.shape(), rng));
      auto loss = [&] {
        Tape t;
        const auto st = run_unrolled_inference(c.features, c.params, t);
        double l = 0;
        for (std::size_t s = 0; s < S; ++s) l += dot(st.hbar[s], w[s]);
        return l;
      };
      Tape t;
      std::vector<Var> feats;
      for (const auto& f : c.features) feats.push_back(t.leaf(f));
      const UnrolledCrf crf = bind(t, c.params);
      const auto st = run_unrolled_inference(t, feats, crf);
      Var l = ad::sum(ad::mul(st.hbar[0], t.constant(w[0])));
      for (std::size_t s = 1; s < S; ++s) l = ad::add(l, ad::sum(ad::mul(st.hbar[s], t.constant(w[s]))));
      t.backward(l);

      double worst = 0;
      auto probe = [&](Eigen::ArrayXd& values, const Tensor& g) {
        for (Index j = 0; j < values.size(); ++j) {
          const double num = oracle::central_difference(loss, values[j], 1e-4);
          worst = std::max(worst, oracle::relative_error(g.values()[j], num, 1e-6));
        }
      };
      for (std::size_t s = 0; s < S; ++s) probe(c.features[s].values(), t.grad(feats[s]));
      for (std::size_t e = 0; e < S; ++e) {
        for (std::size_t r = 0; r < S; ++r) {
          if (e == r) continue;
          auto& k = c.params.pair(e, r);
          const auto& u = crf.pair(e, r);
          probe(k.pairwise.weights, t.grad(u.pairwise));
          probe(k.emitter_linear.weights, t.grad(u.emitter_linear));
          probe(k.receiver_linear.weights, t.grad(u.receiver_linear));
        }
      }
      rec.add(std::string(to_string(variant)) + " " + describe(c), worst, 1e-4, worst <= 1e-4);
    }
  }
}

void suite_model_grad(Recorder& rec, Rng& rng) {
  ModelConfig cfg = build_ablation("flag");
  cfg.hierarchy.crf_init_scale = 0.3;
  cfg.init_seed = rng();
  AmhNet model(cfg);
  jitter_biases(model, rng, 0.1);
  Sample s;
  s.image = random_tensor({1, 16, 16}, rng, 0, 1);
  s.edges = Tensor(1, 16, 16);
  std::bernoulli_distribution edge(0.2);
  for (Index i = 0; i < s.edges.size(); ++i) s.edges.values()[i] = edge(rng) ? 1.0 : 0.0;
  for (const auto& e : gradient_check(model, s, LossConfig{}, 50, rng())) {
    rec.add(e.tensor + " (" + std::to_string(e.checked) + " coords, " + std::to_string(e.kinks) + " kinks) analytic " + std::to_string(e.worst_analytic) +
                " numeric " + std::to_string(e.worst_numeric),
            e.max_rel_error, 1e-3, e.max_rel_error < 1e-3);
  }
}

using SuiteFn = void (*)(Recorder&, Rng&);
const std::vector<std::pair<std::string, SuiteFn>>& registry() {
  static const std::vector<std::pair<std::string, SuiteFn>> r{
      {"conv", suite_conv},
      {"deconv_adjoint", suite_deconv},
      {"crf_m", suite_crf_m},
      {"crf_message", suite_crf_message},
      {"crf_inference", suite_crf_inference},
      {"gates", suite_gates},
      {"fixed_point", suite_fixed_point},
      {"variants", suite_variants},
      {"tape_ops", suite_tape_ops},
      {"unrolled_grad", suite_unrolled_grad},
      {"model_grad", suite_model_grad},
  };
  return r;
}

}  // namespace

CrfInstance random_crf_instance(Rng& rng, std::size_t max_scales, Index max_side, Index max_channels,
                                double kernel_scale) {
  const auto S = static_cast<std::size_t>(uniform_index(rng, 2, static_cast<Index>(max_scales)));
  const Index k = uniform_index(rng, 0, 1) ? 3 : 1;
  const Index h = uniform_index(rng, 1, max_side), w = uniform_index(rng, 1, max_side);
  std::vector<Index> ch(S);
  for (auto& c : ch) c = uniform_index(rng, 1, max_channels);

  CrfInstance c;
  c.params = AgCrfParams::zeros(ch, k, 0.1 + 0.9 * std::uniform_real_distribution<double>(0, 1)(rng));
  for (std::size_t e = 0; e < S; ++e) {
    for (std::size_t r = 0; r < S; ++r) {
      if (e == r) continue;
      auto& p = c.params.pair(e, r);
      p.pairwise = random_kernel(p.pairwise.spec, rng, kernel_scale);
      p.emitter_linear = random_kernel(p.emitter_linear.spec, rng, kernel_scale);
      p.receiver_linear = random_kernel(p.receiver_linear.spec, rng, kernel_scale);
    }
  }
  for (std::size_t s = 0; s < S; ++s) c.features.push_back(random_tensor({ch[s], h, w}, rng));
  c.state = initial_state(c.features);
  for (auto& hb : c.state.hbar) hb = random_tensor(hb.shape(), rng);
  for (std::size_t i = 0; i < S * S; ++i) {
    if (i / S != i % S) c.state.alpha[i] = random_tensor({1, h, w}, rng, 0, 1);
  }
  return c;
}

std::vector<std::string> suite_names() {
  std::vector<std::string> n;
  for (const auto& [name, fn] : registry()) n.push_back(name);
  return n;
}

SuiteResult run_suite(const std::string& name, std::uint64_t seed, std::ostream* jsonl) {
  for (const auto& [n, fn] : registry()) {
    if (n != name) continue;
    Recorder rec;
    rec.res.name = name;
    rec.jsonl = jsonl;
    Rng rng(seed);
    fn(rec, rng);
    return rec.res;
  }
  throw std::invalid_argument("unknown suite '" + name + "'");
}

std::vector<SuiteResult> run_suites(const std::string& which, std::uint64_t seed, std::ostream* jsonl) {
  std::vector<SuiteResult> out;
  if (which == "all") {
    for (const auto& n : suite_names()) out.push_back(run_suite(n, seed, jsonl));
  } else {
    out.push_back(run_suite(which, seed, jsonl));
  }
  return out;
}

std::string format_table(const std::vector<SuiteResult>& results) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %9s %8s %12s %10s  %s\n", "suite", "instances", "failures", "worst", "tol",
                "result");
  out += buf;
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-16s %9zu %8zu %12.3e %10.1e  %s\n", r.name.c_str(), r.instances, r.failures,
                  r.worst, r.tolerance, r.pass() ? "PASS" : "FAIL");
    out += buf;
    if (!r.pass() && !r.detail.empty()) out += "  first failure: " + r.detail + "\n";
  }
  return out;
}

}  // namespace amh
