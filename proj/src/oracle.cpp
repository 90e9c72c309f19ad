#include "amh/oracle.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace amh::oracle {

std::string OracleReport::to_json() const {
  nlohmann::json j{{"op", op}, {"instance", instance}, {"max_abs", max_abs}, {"rel", rel},
                   {"tolerance", tolerance}, {"pass", pass}};
  return j.dump();
}

OracleReport compare(const std::string& op, const std::string& instance, const Tensor& fast, const Tensor& ref,
                     double tolerance) {
  OracleReport r{op, instance, 0, 0, tolerance, false};
  if (!(fast.shape() == ref.shape())) {
    r.max_abs = std::numeric_limits<double>::infinity();
    r.rel = r.max_abs;
    return r;
  }
  double scale = 0;
  for (Index i = 0; i < ref.size(); ++i) {
    r.max_abs = std::max(r.max_abs, std::abs(fast.values()[i] - ref.values()[i]));
    scale = std::max(scale, std::abs(ref.values()[i]));
  }
  r.rel = scale > 0 ? r.max_abs / scale : r.max_abs;
  r.pass = r.max_abs <= tolerance;
  return r;
}

Tensor direct_conv(const Tensor& x, const ConvKernel& k) {
  const ConvSpec& s = k.spec;
  if (x.height() > 16 || x.width() > 16 || x.channels() > 8 || s.out_channels > 8) {
    throw std::invalid_argument("direct_conv: instance too large for the oracle");
  }
  if (x.channels() != s.in_channels) throw ShapeError("direct_conv: channel mismatch");
  const Index oh = (x.height() + 2 * s.padding - s.kernel_h) / s.stride + 1;
  const Index ow = (x.width() + 2 * s.padding - s.kernel_w) / s.stride + 1;
  Tensor out(s.out_channels, oh, ow);
  for (Index o = 0; o < s.out_channels; ++o) {
    for (Index y = 0; y < oh; ++y) {
      for (Index xx = 0; xx < ow; ++xx) {
        double acc = 0;
        for (Index c = 0; c < s.in_channels; ++c) {
          for (Index ky = 0; ky < s.kernel_h; ++ky) {
            for (Index kx = 0; kx < s.kernel_w; ++kx) {
              const Index iy = y * s.stride + ky - s.padding;
              const Index ix = xx * s.stride + kx - s.padding;
              if (iy < 0 || ix < 0 || iy >= x.height() || ix >= x.width()) continue;
              acc += k(o, c, ky, kx) * x(c, iy, ix);
            }
          }
        }
        out(o, y, xx) = acc;
      }
    }
  }
  return out;
}

namespace {

// Visits every in-bounds footprint neighbour j of pixel (y, x) with its kernel offset.
template <typename Fn>
void for_each_neighbour(const ConvSpec& s, Index y, Index x, Index H, Index W, Fn&& fn) {
  for (Index ky = 0; ky < s.kernel_h; ++ky) {
    for (Index kx = 0; kx < s.kernel_w; ++kx) {
      const Index jy = y + ky - s.padding, jx = x + kx - s.padding;
      if (jy >= 0 && jx >= 0 && jy < H && jx < W) fn(jy, jx, ky, kx);
    }
  }
}

}  // namespace

Tensor direct_M(const MeanFieldState& state, const AgCrfParams& p, std::size_t e, std::size_t r) {
  const PairKernels& k = p.pair(e, r);
  const Tensor& hr = state.hbar.at(r);
  const Tensor& he = state.hbar.at(e);
  const Index H = hr.height(), W = hr.width(), cr = hr.channels(), ce = he.channels();
  Tensor m(1, H, W);
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x) {
      double total = 0;
      for_each_neighbour(k.pairwise.spec, y, x, H, W, [&](Index jy, Index jx, Index ky, Index kx) {
        // h_r^i^T L h_e^j
        for (Index a = 0; a < cr; ++a) {
          double row = 0;
          for (Index b = 0; b < ce; ++b) row += k.pairwise(a, b, ky, kx) * he(b, jy, jx);
          total += hr(a, y, x) * row;
        }
        // h_r^i^T l_{r,e}: receiver linear vector summed over its input channels
        for (Index a = 0; a < cr; ++a) {
          double lv = 0;
          for (Index b = 0; b < cr; ++b) lv += k.receiver_linear(a, b, ky, kx);
          total += hr(a, y, x) * lv;
        }
        // h_e^j^T l_{e,r}: emitter linear vector summed over its output channels
        for (Index b = 0; b < ce; ++b) {
          double lv = 0;
          for (Index a = 0; a < cr; ++a) lv += k.emitter_linear(a, b, ky, kx);
          total += he(b, jy, jx) * lv;
        }
      });
      m(0, y, x) = total;
    }
  }
  return m;
}

Tensor direct_message(const MeanFieldState& state, const AgCrfParams& p, std::size_t e, std::size_t r) {
  const PairKernels& k = p.pair(e, r);
  const Tensor& he = state.hbar.at(e);
  const Index H = he.height(), W = he.width(), cr = p.channels.at(r), ce = he.channels();
  Tensor msg(cr, H, W);
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x) {
      for_each_neighbour(k.pairwise.spec, y, x, H, W, [&](Index jy, Index jx, Index ky, Index kx) {
        for (Index a = 0; a < cr; ++a) {
          double v = 0;
          for (Index b = 0; b < ce; ++b) v += k.pairwise(a, b, ky, kx) * he(b, jy, jx);
          for (Index b = 0; b < cr; ++b) v += k.receiver_linear(a, b, ky, kx);
          msg(a, y, x) += v;
        }
      });
    }
  }
  return msg;
}

void direct_sweep(const ScaleSet& F, const AgCrfParams& p, MeanFieldState& state) {
  const std::size_t S = F.size();
  for (std::size_t r = 0; r < S; ++r) {
    const Index H = F[r].height(), W = F[r].width(), C = F[r].channels();
    const double a = p.unary.at(r).scalar;
    Tensor h = F[r];
    for (std::size_t e = 0; e < S; ++e) {
      if (e == r) continue;
      Tensor alpha(1, H, W);
      if (p.gate_override) {
        alpha.values().setConstant(*p.gate_override);
      } else {
        const Tensor m = direct_M(state, p, e, r);
        const double sign = p.sign == GateSign::plus ? 1.0 : -1.0;
        for (Index i = 0; i < alpha.size(); ++i) alpha.values()[i] = 1.0 / (1.0 + std::exp(-sign * m.values()[i]));
      }
      const Tensor msg = direct_message(state, p, e, r);
      for (Index c = 0; c < C; ++c) {
        for (Index y = 0; y < H; ++y) {
          for (Index x = 0; x < W; ++x) h(c, y, x) += alpha(0, y, x) * msg(c, y, x) / a;
        }
      }
      state.alpha[e * S + r] = alpha;
    }
    state.hbar[r] = h;
  }
}

MeanFieldState direct_reference_inference(const ScaleSet& F, const AgCrfParams& p) {
  MeanFieldState st;
  st.hbar = F;
  st.alpha.resize(F.size() * F.size());
  for (int t = 0; t < p.iterations; ++t) direct_sweep(F, p, st);
  return st;
}

double fixed_point_residual(const ScaleSet& F, const AgCrfParams& p, const MeanFieldState& state) {
  MeanFieldState next = state;
  direct_sweep(F, p, next);
  double r = 0;
  for (std::size_t s = 0; s < F.size(); ++s) {
    for (Index i = 0; i < F[s].size(); ++i) {
      r = std::max(r, std::abs(next.hbar[s].values()[i] - state.hbar[s].values()[i]));
    }
  }
  return r;
}

double central_difference(const std::function<double()>& fn, double& coord, double h) {
  const double saved = coord;
  coord = saved + h;
  const double up = fn();
  coord = saved - h;
  const double down = fn();
  coord = saved;
  return (up - down) / (2 * h);
}

Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& fn,
                                 const Eigen::VectorXd& params, double h) {
  Eigen::VectorXd x = params;
  Eigen::VectorXd g(params.size());
  for (Index i = 0; i < params.size(); ++i) {
    g[i] = central_difference([&] { return fn(x); }, x[i], h);
  }
  return g;
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace amh::oracle
