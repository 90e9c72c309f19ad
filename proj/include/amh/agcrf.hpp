#pragma once

// Attention-gated CRF over a set of aligned feature maps ("virtual scales").
//
// Kernel conventions, shared by every path in this header:
//   pairwise        L[e->r]  : C_e -> C_r   bilinear block between receiver r and emitter e
//   emitter_linear  l[e->r]  : C_e -> C_r   linear term in the emitter's features
//   receiver_linear l[r->e]  : C_r -> C_r   linear term in the receiver's features
// All are cross-correlations with the same-size convention, so the pairwise neighbourhood of
// pixel i is the kernel footprint around i.
//
// At one footprint offset o the (C_r+1)x(C_e+1) block matrix is
//   K_o = [ L_o                    sum_c' l[r->e]_o(:,c') ]
//         [ sum_c l[e->r]_o(c,:)   1                      ]
// which gives, for receiver pixel i,
//   M^i   = h_r^i . (L (x) h_e)^i + h_r^i . (l[r->e] (x) 1)^i + 1^T (l[e->r] (x) h_e)^i
//   msg^i = (L (x) h_e)^i + (l[r->e] (x) 1)^i
// where (x) is conv2d and 1 is the all-ones map.

#include "amh/tape.hpp"
#include "amh/tensor.hpp"
#include "amh/tensor_ops.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace amh {

enum class Variant { flag, plag, plain_crf };
enum class GateSign { plus = 1, minus = -1 };

const char* to_string(Variant v);
Variant parse_variant(const std::string& s);
const char* to_string(GateSign s);
GateSign parse_sign(const std::string& s);

template <typename Scalar>
using BasicScaleSet = std::vector<BasicTensor<Scalar>>;
using ScaleSet = BasicScaleSet<double>;

template <typename Scalar>
struct BasicPairKernels {
  BasicConvKernel<Scalar> pairwise;
  BasicConvKernel<Scalar> emitter_linear;
  BasicConvKernel<Scalar> receiver_linear;
};

/// Unary weight a_s: a fixed scalar or, on the unrolled path only, a learnable 1x1 convolution.
template <typename Scalar>
struct BasicUnaryWeight {
  Scalar scalar = Scalar(0.1);
  std::optional<BasicConvKernel<Scalar>> pointwise;
};

template <typename Scalar>
struct BasicAgCrfParams {
  std::vector<Index> channels;
  std::vector<BasicPairKernels<Scalar>> pairs;  // S*S, indexed emitter * S + receiver; diagonal unused
  std::vector<BasicUnaryWeight<Scalar>> unary;
  int iterations = 1;
  Variant variant = Variant::flag;
  GateSign sign = GateSign::plus;
  /// Forces every gate expectation to this value (diagnostics; PLAIN_CRF is the value 1).
  std::optional<Scalar> gate_override;

  std::size_t scales() const { return channels.size(); }
  BasicPairKernels<Scalar>& pair(std::size_t e, std::size_t r) { return pairs.at(e * scales() + r); }
  const BasicPairKernels<Scalar>& pair(std::size_t e, std::size_t r) const { return pairs.at(e * scales() + r); }

  /// All kernels zero, scalar unary weight `a`.
  static BasicAgCrfParams zeros(std::vector<Index> channels, Index kernel = 3, Scalar a = Scalar(0.1)) {
    BasicAgCrfParams p;
    p.channels = std::move(channels);
    const std::size_t S = p.channels.size();
    p.pairs.resize(S * S);
    for (std::size_t e = 0; e < S; ++e) {
      for (std::size_t r = 0; r < S; ++r) {
        if (e == r) continue;
        const Index ce = p.channels[e], cr = p.channels[r];
        p.pair(e, r) = {BasicConvKernel<Scalar>(ConvSpec::same(cr, ce, kernel)),
                        BasicConvKernel<Scalar>(ConvSpec::same(cr, ce, kernel)),
                        BasicConvKernel<Scalar>(ConvSpec::same(cr, cr, kernel))};
      }
    }
    p.unary.assign(S, BasicUnaryWeight<Scalar>{a, std::nullopt});
    return p;
  }
};

using PairKernels = BasicPairKernels<double>;
using UnaryWeight = BasicUnaryWeight<double>;
using AgCrfParams = BasicAgCrfParams<double>;

template <typename Scalar>
struct BasicMeanFieldState {
  BasicScaleSet<Scalar> hbar;
  std::vector<BasicTensor<Scalar>> alpha;  // S*S, indexed emitter * S + receiver; diagonal empty

  const BasicTensor<Scalar>& gate(std::size_t e, std::size_t r) const { return alpha.at(e * hbar.size() + r); }
};
using MeanFieldState = BasicMeanFieldState<double>;

/// Binary gate values per ordered pair, same indexing as MeanFieldState::alpha.
using GateAssignment = std::vector<Tensor>;

// ---------------------------------------------------------------------------------------------
// validation

template <typename Scalar>
void check_scale_set(const BasicScaleSet<Scalar>& F, const BasicAgCrfParams<Scalar>& p) {
  if (F.empty()) throw ShapeError("agcrf: empty scale set");
  if (F.size() != p.scales()) {
    throw ShapeError("agcrf: " + std::to_string(F.size()) + " scales but params for " +
                     std::to_string(p.scales()));
  }
  for (std::size_t s = 0; s < F.size(); ++s) {
    if (F[s].height() != F[0].height() || F[s].width() != F[0].width()) {
      throw ShapeError("agcrf: scale " + std::to_string(s) + " is " + to_string(F[s].shape()) +
                       ", not aligned with " + to_string(F[0].shape()));
    }
    if (F[s].channels() != p.channels[s]) throw ShapeError("agcrf: channel count mismatch at scale " + std::to_string(s));
  }
}

template <typename Scalar>
Scalar scalar_unary(const BasicAgCrfParams<Scalar>& p, std::size_t s) {
  const auto& u = p.unary.at(s);
  if (u.pointwise) throw std::invalid_argument("agcrf: closed-form path needs a scalar unary weight");
  return u.scalar;
}

// ---------------------------------------------------------------------------------------------
// energy

/// -(a/2) * sum_i |h_i - f_i|^2
template <typename Scalar>
Scalar unary_energy(const BasicTensor<Scalar>& h, const BasicTensor<Scalar>& f, Scalar a) {
  check_same_shape(h.shape(), f.shape(), "unary_energy");
  if (!(a > 0)) throw std::invalid_argument("unary_energy: weight a must be positive");
  return -a / 2 * (h.values() - f.values()).square().sum();
}

/// h~_r^T K h~_e with h~ = (h, 1).
template <typename Scalar>
Scalar pairwise_energy(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& h_r,
                       const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& h_e,
                       const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& K) {
  if (K.rows() != h_r.size() + 1 || K.cols() != h_e.size() + 1) {
    throw ShapeError("pairwise_energy: K is " + std::to_string(K.rows()) + "x" + std::to_string(K.cols()) +
                     ", expected " + std::to_string(h_r.size() + 1) + "x" + std::to_string(h_e.size() + 1));
  }
  if (K(K.rows() - 1, K.cols() - 1) != Scalar(1)) {
    throw std::invalid_argument("pairwise_energy: bottom-right entry of K must be 1");
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> hr(h_r.size() + 1), he(h_e.size() + 1);
  hr << h_r, Scalar(1);
  he << h_e, Scalar(1);
  return hr.dot(K * he);
}

/// Block matrix K for footprint offset (ky, kx) of pair (e -> r).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> block_matrix(const BasicPairKernels<Scalar>& k, Index ky,
                                                                   Index kx) {
  const Index cr = k.pairwise.spec.out_channels, ce = k.pairwise.spec.in_channels;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> K = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(cr + 1, ce + 1);
  for (Index o = 0; o < cr; ++o) {
    for (Index i = 0; i < ce; ++i) K(o, i) = k.pairwise(o, i, ky, kx);
    for (Index i = 0; i < cr; ++i) K(o, ce) += k.receiver_linear(o, i, ky, kx);
  }
  for (Index i = 0; i < ce; ++i) {
    for (Index o = 0; o < cr; ++o) K(cr, i) += k.emitter_linear(o, i, ky, kx);
  }
  K(cr, ce) = Scalar(1);
  return K;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pixel_vector(const BasicTensor<Scalar>& t, Index y, Index x) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v(t.channels());
  for (Index c = 0; c < t.channels(); ++c) v[c] = t(c, y, x);
  return v;
}

/// Unary sum plus gate-masked pairwise terms over each kernel footprint. Diagnostic only; the
/// inference updates are the source of truth for signs.
template <typename Scalar>
Scalar total_energy(const BasicScaleSet<Scalar>& H, const GateAssignment& G, const BasicScaleSet<Scalar>& F,
                    const BasicAgCrfParams<Scalar>& p) {
  check_scale_set(F, p);
  check_scale_set(H, p);
  const std::size_t S = F.size();
  if (G.size() != S * S) throw ShapeError("total_energy: gate assignment must hold S*S maps");
  Scalar energy = 0;
  for (std::size_t s = 0; s < S; ++s) energy += unary_energy(H[s], F[s], scalar_unary(p, s));
  const Index Hh = F[0].height(), Ww = F[0].width();
  for (std::size_t e = 0; e < S; ++e) {
    for (std::size_t r = 0; r < S; ++r) {
      if (e == r) continue;
      const auto& k = p.pair(e, r);
      const auto& g = G[e * S + r];
      if (!(g.shape() == Shape{1, Hh, Ww})) throw ShapeError("total_energy: gate map shape");
      const ConvSpec& spec = k.pairwise.spec;
      for (Index y = 0; y < Hh; ++y) {
        for (Index x = 0; x < Ww; ++x) {
          if (g(0, y, x) == Scalar(0)) continue;
          const auto hr = pixel_vector(H[r], y, x);
          for (Index ky = 0; ky < spec.kernel_h; ++ky) {
            for (Index kx = 0; kx < spec.kernel_w; ++kx) {
              const Index jy = y - spec.padding + ky, jx = x - spec.padding + kx;
              if (jy < 0 || jy >= Hh || jx < 0 || jx >= Ww) continue;
              energy += g(0, y, x) * pairwise_energy(hr, pixel_vector(H[e], jy, jx), block_matrix(k, ky, kx));
            }
          }
        }
      }
    }
  }
  return energy;
}

// ---------------------------------------------------------------------------------------------
// closed-form mean-field pieces

/// (l[r->e] (x) 1): the receiver's linear coefficient summed over the footprint.
template <typename Scalar>
BasicTensor<Scalar> receiver_linear_field(const BasicPairKernels<Scalar>& k, Index height, Index width) {
  const Index cr = k.receiver_linear.spec.in_channels;
  return conv2d(BasicTensor<Scalar>::constant({cr, height, width}, Scalar(1)), k.receiver_linear);
}

/// Gate potential M for the pair (e -> r), one channel.
template <typename Scalar>
BasicTensor<Scalar> compute_M(const BasicMeanFieldState<Scalar>& state, const BasicAgCrfParams<Scalar>& p,
                              std::size_t e, std::size_t r) {
  const auto& k = p.pair(e, r);
  const auto& hr = state.hbar.at(r);
  const auto& he = state.hbar.at(e);
  BasicTensor<Scalar> quad = mul(hr, conv2d(he, k.pairwise));
  quad.values() += hr.values() * receiver_linear_field(k, hr.height(), hr.width()).values();
  BasicTensor<Scalar> m = channel_sum(quad);
  m.values() += channel_sum(conv2d(he, k.emitter_linear)).values();
  return m;
}

/// alpha = sigmoid(sign * M), element-wise.
template <typename Scalar>
BasicTensor<Scalar> gate_expectation(const BasicTensor<Scalar>& M, GateSign sign) {
  return sigmoid(scale(M, static_cast<Scalar>(static_cast<int>(sign))));
}

/// Message from e to r including the linear term: L (x) h_e + l[r->e] (x) 1.
template <typename Scalar>
BasicTensor<Scalar> compute_message(const BasicMeanFieldState<Scalar>& state, const BasicAgCrfParams<Scalar>& p,
                                    std::size_t e, std::size_t r) {
  const auto& k = p.pair(e, r);
  const auto& he = state.hbar.at(e);
  BasicTensor<Scalar> msg = conv2d(he, k.pairwise);
  msg.values() += receiver_linear_field(k, he.height(), he.width()).values();
  return msg;
}

template <typename Scalar>
struct GatedMessage {
  BasicTensor<Scalar> alpha;
  BasicTensor<Scalar> message;
};

/// h = f + (1/a) * sum alpha (.) msg
template <typename Scalar>
BasicTensor<Scalar> mean_field_h_update(const BasicTensor<Scalar>& f, Scalar a,
                                        const std::vector<GatedMessage<Scalar>>& incoming) {
  if (a == Scalar(0)) throw std::invalid_argument("mean_field_h_update: unary weight a must be nonzero");
  BasicTensor<Scalar> acc(f.shape());
  for (const auto& in : incoming) {
    check_same_shape(in.message.shape(), f.shape(), "mean_field_h_update");
    acc.values() += mul_broadcast(in.alpha, in.message).values();
  }
  return BasicTensor<Scalar>(f.shape(), f.values() + acc.values() / a);
}

template <typename Scalar>
BasicMeanFieldState<Scalar> initial_state(const BasicScaleSet<Scalar>& F) {
  BasicMeanFieldState<Scalar> st;
  st.hbar = F;
  st.alpha.resize(F.size() * F.size());
  return st;
}

/// One sequential sweep over receivers in scale order; updates `state` in place.
template <typename Scalar>
void reference_sweep(const BasicScaleSet<Scalar>& F, const BasicAgCrfParams<Scalar>& p,
                     BasicMeanFieldState<Scalar>& state) {
  const std::size_t S = F.size();
  for (std::size_t r = 0; r < S; ++r) {
    std::vector<GatedMessage<Scalar>> incoming;
    for (std::size_t e = 0; e < S; ++e) {
      if (e == r) continue;
      BasicTensor<Scalar> alpha =
          p.gate_override ? BasicTensor<Scalar>::constant({1, F[r].height(), F[r].width()}, *p.gate_override)
                          : gate_expectation(compute_M(state, p, e, r), p.sign);
      state.alpha[e * S + r] = alpha;
      incoming.push_back({std::move(alpha), compute_message(state, p, e, r)});
    }
    state.hbar[r] = mean_field_h_update(F[r], scalar_unary(p, r), incoming);
  }
}

/// Closed-form mean-field inference, initialised at h = F, T sequential sweeps.
template <typename Scalar>
BasicMeanFieldState<Scalar> run_reference_inference(const BasicScaleSet<Scalar>& F, const BasicAgCrfParams<Scalar>& p) {
  check_scale_set(F, p);
  if (p.variant != Variant::flag) throw std::invalid_argument("run_reference_inference: requires the flag variant");
  if (p.iterations < 1) throw std::invalid_argument("run_reference_inference: iterations must be >= 1");
  auto state = initial_state(F);
  for (int t = 0; t < p.iterations; ++t) reference_sweep(F, p, state);
  return state;
}

// ---------------------------------------------------------------------------------------------
// unrolled, differentiable path

struct UnrolledPair {
  Var pairwise;
  Var emitter_linear;
  Var receiver_linear;
  ConvSpec pairwise_spec;
  ConvSpec emitter_spec;
  ConvSpec receiver_spec;
};

struct UnrolledUnary {
  double scalar = 0.1;
  std::optional<Var> pointwise;
  ConvSpec pointwise_spec;
};

struct UnrolledCrf {
  std::vector<Index> channels;
  std::vector<UnrolledPair> pairs;  // S*S, emitter * S + receiver
  std::vector<UnrolledUnary> unary;
  int iterations = 1;
  Variant variant = Variant::flag;
  GateSign sign = GateSign::plus;
  std::optional<double> gate_override;

  std::size_t scales() const { return channels.size(); }
  const UnrolledPair& pair(std::size_t e, std::size_t r) const { return pairs.at(e * scales() + r); }
};

struct UnrolledState {
  std::vector<Var> hbar;
  std::vector<Var> alpha;        // last iteration, S*S
  std::vector<Var> first_alpha;  // first iteration, S*S
};

/// Records T simultaneous updates on the tape:
///   (i)   msg   = L (x) h_e
///   (ii)  alpha = sigmoid(sign * (h_r (.) msg + l[e->r] (x) h_e + l[r->e] (x) h_r))   [flag]
///         same expression over the observed features                              [plag]
///         alpha = 1                                                                 [plain_crf]
///   (iii) h_r   = f_r + a_r * sum_e alpha (.) msg
/// The linear message is dropped on this path. `init` overrides the starting hidden state (default F).
UnrolledState run_unrolled_inference(Tape& tape, const std::vector<Var>& features, const UnrolledCrf& crf,
                                     const std::vector<Var>* init = nullptr);

/// Binds every kernel of `p` as a leaf on `tape`.
UnrolledCrf bind(Tape& tape, const AgCrfParams& p);

/// Convenience: bind, run, and copy values out.
MeanFieldState run_unrolled_inference(const ScaleSet& F, const AgCrfParams& p, Tape& tape,
                                      const ScaleSet* init = nullptr);

struct VariantReport {
  std::vector<double> output_divergence;     // per scale, max-abs between flag and plag outputs
  double first_alpha_gap = 0;                // max-abs between flag and plag first-step gates
  double plag_alpha_shift = 0;               // change of plag's first-step gates under a perturbed init
  double flag_alpha_shift = 0;               // same for flag
};

/// Runs both variants; perturbs the hidden-state init by `perturbation`-scaled noise (seeded) to
/// measure how each variant's first-step attention depends on it.
VariantReport compare_variants(const ScaleSet& F, const AgCrfParams& p_flag, const AgCrfParams& p_plag,
                               double perturbation = 0.5, std::uint64_t seed = 7);

}  // namespace amh
