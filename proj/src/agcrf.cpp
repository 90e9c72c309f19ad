#include "amh/agcrf.hpp"

#include "amh/random.hpp"

namespace amh {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::flag: return "flag";
    case Variant::plag: return "plag";
    case Variant::plain_crf: return "plain_crf";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "flag") return Variant::flag;
  if (s == "plag") return Variant::plag;
  if (s == "plain_crf") return Variant::plain_crf;
  throw std::invalid_argument("unknown crf variant '" + s + "'");
}

const char* to_string(GateSign s) { return s == GateSign::plus ? "plus" : "minus"; }

GateSign parse_sign(const std::string& s) {
  if (s == "plus") return GateSign::plus;
  if (s == "minus") return GateSign::minus;
  throw std::invalid_argument("unknown gate sign '" + s + "'");
}

namespace {

Var gate_pre_activation(Var hr, Var he, Var msg, const UnrolledPair& k) {
  Var pre = ad::mul(hr, msg);
  pre = ad::add(pre, ad::conv2d(he, k.emitter_linear, k.emitter_spec));
  return ad::add(pre, ad::conv2d(hr, k.receiver_linear, k.receiver_spec));
}

}  // namespace

UnrolledState run_unrolled_inference(Tape& tape, const std::vector<Var>& features, const UnrolledCrf& crf,
                                     const std::vector<Var>* init) {
  const std::size_t S = crf.scales();
  if (features.size() != S) throw ShapeError("unrolled inference: feature count does not match params");
  if (crf.iterations < 1) throw std::invalid_argument("unrolled inference: iterations must be >= 1");
  for (std::size_t s = 0; s < S; ++s) {
    const Shape sh = features[s].shape();
    if (sh.channels != crf.channels[s] || sh.height != features[0].shape().height ||
        sh.width != features[0].shape().width) {
      throw ShapeError("unrolled inference: scale " + std::to_string(s) + " has shape " + to_string(sh));
    }
  }
  UnrolledState st;
  st.hbar = init ? *init : features;
  st.alpha.resize(S * S);
  st.first_alpha.resize(S * S);
  if (S < 2) {
    st.hbar = features;
    return st;
  }
  const double sign = static_cast<double>(static_cast<int>(crf.sign));

  for (int it = 0; it < crf.iterations; ++it) {
    std::vector<Var> next(S);
    for (std::size_t r = 0; r < S; ++r) {
      std::optional<Var> acc;
      for (std::size_t e = 0; e < S; ++e) {
        if (e == r) continue;
        const UnrolledPair& k = crf.pair(e, r);
        auto pair_scope = tape.scope("pair" + std::to_string(e) + "to" + std::to_string(r));
        Var msg;
        {
          auto s = tape.scope("step_i");
          msg = ad::conv2d(st.hbar[e], k.pairwise, k.pairwise_spec);
        }
        Var alpha;
        {
          auto s = tape.scope("step_ii");
          const Shape ms = msg.shape();
          if (crf.gate_override) {
            alpha = tape.constant(Tensor::constant(ms, *crf.gate_override));
          } else if (crf.variant == Variant::plain_crf) {
            alpha = tape.constant(Tensor::constant(ms, 1.0));
          } else if (crf.variant == Variant::flag) {
            alpha = ad::sigmoid(ad::scale(gate_pre_activation(st.hbar[r], st.hbar[e], msg, k), sign));
          } else {
            Var observed_msg = ad::conv2d(features[e], k.pairwise, k.pairwise_spec);
            alpha = ad::sigmoid(ad::scale(gate_pre_activation(features[r], features[e], observed_msg, k), sign));
          }
        }
        {
          auto s = tape.scope("step_iii");
          Var gated = ad::mul_broadcast(alpha, msg);
          acc = acc ? ad::add(*acc, gated) : gated;
        }
        st.alpha[e * S + r] = alpha;
        if (it == 0) st.first_alpha[e * S + r] = alpha;
      }
      auto s = tape.scope("step_iii");
      const UnrolledUnary& u = crf.unary.at(r);
      Var weighted = u.pointwise ? ad::conv2d(*acc, *u.pointwise, u.pointwise_spec) : ad::scale(*acc, u.scalar);
      next[r] = ad::add(features[r], weighted);
    }
    st.hbar = std::move(next);
  }
  return st;
}

UnrolledCrf bind(Tape& tape, const AgCrfParams& p) {
  UnrolledCrf crf;
  crf.channels = p.channels;
  crf.iterations = p.iterations;
  crf.variant = p.variant;
  crf.sign = p.sign;
  crf.gate_override = p.gate_override;
  const std::size_t S = p.scales();
  crf.pairs.resize(S * S);
  for (std::size_t e = 0; e < S; ++e) {
    for (std::size_t r = 0; r < S; ++r) {
      if (e == r) continue;
      const PairKernels& k = p.pair(e, r);
      crf.pairs[e * S + r] = {tape.leaf(k.pairwise.as_tensor()),       tape.leaf(k.emitter_linear.as_tensor()),
                              tape.leaf(k.receiver_linear.as_tensor()), k.pairwise.spec,
                              k.emitter_linear.spec,                    k.receiver_linear.spec};
    }
  }
  for (const auto& u : p.unary) {
    UnrolledUnary uu{u.scalar, std::nullopt, {}};
    if (u.pointwise) {
      uu.pointwise = tape.leaf(u.pointwise->as_tensor());
      uu.pointwise_spec = u.pointwise->spec;
    }
    crf.unary.push_back(uu);
  }
  return crf;
}

MeanFieldState run_unrolled_inference(const ScaleSet& F, const AgCrfParams& p, Tape& tape, const ScaleSet* init) {
  check_scale_set(F, p);
  std::vector<Var> features;
  for (const auto& f : F) features.push_back(tape.constant(f));
  std::vector<Var> init_vars;
  if (init) {
    for (const auto& h : *init) init_vars.push_back(tape.constant(h));
  }
  const UnrolledCrf crf = bind(tape, p);
  const UnrolledState st = run_unrolled_inference(tape, features, crf, init ? &init_vars : nullptr);
  MeanFieldState out;
  for (const auto& h : st.hbar) out.hbar.push_back(h.value());
  out.alpha.resize(st.alpha.size());
  for (std::size_t i = 0; i < st.alpha.size(); ++i) {
    if (st.alpha[i].valid()) out.alpha[i] = st.alpha[i].value();
  }
  return out;
}

VariantReport compare_variants(const ScaleSet& F, const AgCrfParams& p_flag, const AgCrfParams& p_plag,
                               double perturbation, std::uint64_t seed) {
  check_scale_set(F, p_flag);
  check_scale_set(F, p_plag);
  AgCrfParams flag = p_flag, plag = p_plag;
  flag.variant = Variant::flag;
  plag.variant = Variant::plag;

  Rng rng(seed);
  ScaleSet perturbed = F;
  for (auto& h : perturbed) h.values() += random_tensor(h.shape(), rng, -perturbation, perturbation).values();

  auto first_alphas = [&](const AgCrfParams& p, const ScaleSet* init, ScaleSet* hbar) {
    Tape tape;
    std::vector<Var> features, init_vars;
    for (const auto& f : F) features.push_back(tape.constant(f));
    if (init) {
      for (const auto& h : *init) init_vars.push_back(tape.constant(h));
    }
    const auto st = run_unrolled_inference(tape, features, bind(tape, p), init ? &init_vars : nullptr);
    if (hbar) {
      for (const auto& h : st.hbar) hbar->push_back(h.value());
    }
    std::vector<Tensor> a;
    for (const auto& v : st.first_alpha) a.push_back(v.valid() ? v.value() : Tensor());
    return a;
  };
  auto max_gap = [](const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].size() != 0) m = std::max(m, max_abs_diff(a[i], b[i]));
    }
    return m;
  };

  VariantReport rep;
  ScaleSet out_flag, out_plag;
  const auto a_flag = first_alphas(flag, nullptr, &out_flag);
  const auto a_plag = first_alphas(plag, nullptr, &out_plag);
  for (std::size_t s = 0; s < F.size(); ++s) rep.output_divergence.push_back(max_abs_diff(out_flag[s], out_plag[s]));
  rep.first_alpha_gap = max_gap(a_flag, a_plag);
  rep.flag_alpha_shift = max_gap(a_flag, first_alphas(flag, &perturbed, nullptr));
  rep.plag_alpha_shift = max_gap(a_plag, first_alphas(plag, &perturbed, nullptr));
  return rep;
}

}  // namespace amh
