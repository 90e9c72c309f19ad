#include "amh/mhnet.hpp"

#include "amh/random.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace amh {

const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::baseline: return "baseline";
    case Ablation::no_agcrf: return "no_agcrf";
    case Ablation::plain_crf: return "plain_crf";
    case Ablation::no_deep_sup: return "no_deep_sup";
    case Ablation::plag: return "plag";
    case Ablation::flag: return "flag";
  }
  return "?";
}

Ablation parse_ablation(const std::string& s) {
  for (auto a : {Ablation::baseline, Ablation::no_agcrf, Ablation::plain_crf, Ablation::no_deep_sup, Ablation::plag,
                 Ablation::flag}) {
    if (s == to_string(a)) return a;
  }
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

Variant ModelConfig::crf_variant() const {
  switch (ablation) {
    case Ablation::plag: return Variant::plag;
    case Ablation::plain_crf: return Variant::plain_crf;
    default: return Variant::flag;
  }
}

namespace {

std::string join(const std::vector<std::int64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string ModelConfig::to_text() const {
  std::vector<std::int64_t> ch, k, st, taps;
  for (const auto& l : frontend.layers) {
    ch.push_back(l.channels);
    k.push_back(l.kernel);
    st.push_back(l.stride);
  }
  for (int t : frontend.taps) taps.push_back(t);
  std::ostringstream os;
  os << "model.ablation=" << to_string(ablation) << "\n"
     << "model.in_channels=" << frontend.in_channels << "\n"
     << "model.layer_channels=" << join(ch) << "\n"
     << "model.layer_kernels=" << join(k) << "\n"
     << "model.layer_strides=" << join(st) << "\n"
     << "model.taps=" << join(taps) << "\n"
     << "model.input_mean=" << exact(frontend.input_mean) << "\n"
     << "model.input_scale=" << exact(frontend.input_scale) << "\n"
     << "model.deconv_kernel=" << hierarchy.branches.deconv_kernel << "\n"
     << "model.deconv_stride=" << hierarchy.branches.deconv_stride << "\n"
     << "model.conv_kernel=" << hierarchy.branches.conv_kernel << "\n"
     << "model.pool_window=" << hierarchy.branches.pool_window << "\n"
     << "model.fused_channels=" << hierarchy.fused_channels << "\n"
     << "model.crf_kernel=" << hierarchy.crf_kernel << "\n"
     << "model.crf_iterations=" << hierarchy.crf_iterations << "\n"
     << "model.sign=" << to_string(hierarchy.sign) << "\n"
     << "model.unary_a=" << exact(hierarchy.unary_a) << "\n"
     << "model.learnable_a=" << (hierarchy.learnable_a ? 1 : 0) << "\n"
     << "model.crf_init_scale=" << exact(hierarchy.crf_init_scale) << "\n"
     << "model.init_seed=" << init_seed << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_kv(const KvConfig& kv) {
  ModelConfig c;
  c.ablation = parse_ablation(kv.get_or("model.ablation", to_string(c.ablation)));
  c.frontend.in_channels = kv.get_int("model.in_channels", c.frontend.in_channels);
  std::vector<std::int64_t> ch, k, st;
  for (const auto& l : c.frontend.layers) {
    ch.push_back(l.channels);
    k.push_back(l.kernel);
    st.push_back(l.stride);
  }
  ch = kv.get_int_list("model.layer_channels", ch);
  k = kv.get_int_list("model.layer_kernels", std::vector<std::int64_t>(ch.size(), 3));
  st = kv.get_int_list("model.layer_strides", st);
  if (k.size() != ch.size() || st.size() != ch.size()) {
    throw ConfigError("model.layer_channels, layer_kernels and layer_strides must have equal length");
  }
  c.frontend.layers.clear();
  for (std::size_t i = 0; i < ch.size(); ++i) c.frontend.layers.push_back({ch[i], k[i], st[i]});
  c.frontend.taps.clear();
  for (auto t : kv.get_int_list("model.taps", {2, 3, 4})) c.frontend.taps.push_back(static_cast<int>(t));
  auto& h = c.hierarchy;
  c.frontend.input_mean = kv.get_double("model.input_mean", c.frontend.input_mean);
  c.frontend.input_scale = kv.get_double("model.input_scale", c.frontend.input_scale);
  h.branches.deconv_kernel = kv.get_int("model.deconv_kernel", h.branches.deconv_kernel);
  h.branches.deconv_stride = kv.get_int("model.deconv_stride", h.branches.deconv_stride);
  h.branches.conv_kernel = kv.get_int("model.conv_kernel", h.branches.conv_kernel);
  h.branches.pool_window = kv.get_int("model.pool_window", h.branches.pool_window);
  h.fused_channels = kv.get_int("model.fused_channels", h.fused_channels);
  h.crf_kernel = kv.get_int("model.crf_kernel", h.crf_kernel);
  h.crf_iterations = static_cast<int>(kv.get_int("model.crf_iterations", h.crf_iterations));
  h.sign = parse_sign(kv.get_or("model.sign", to_string(h.sign)));
  h.unary_a = kv.get_double("model.unary_a", h.unary_a);
  h.learnable_a = kv.get_bool("model.learnable_a", h.learnable_a);
  h.crf_init_scale = kv.get_double("model.crf_init_scale", h.crf_init_scale);
  c.init_seed = static_cast<std::uint64_t>(kv.get_int("model.init_seed", static_cast<std::int64_t>(c.init_seed)));
  return c;
}

ModelConfig build_ablation(const std::string& name, ModelConfig base) {
  base.ablation = parse_ablation(name);
  return base;
}

std::size_t ParameterSet::add(std::string name, Tensor value, std::optional<ConvSpec> spec) {
  for (const auto& p : items_) {
    if (p.name == name) throw std::logic_error("duplicate parameter '" + name + "'");
  }
  items_.push_back({std::move(name), std::move(value), spec});
  return items_.size() - 1;
}

std::size_t ParameterSet::index(const std::string& name) const {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].name == name) return i;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

ConvKernel bilinear_kernel(Index factor, Index channels) {
  const Index k = 2 * factor;
  ConvKernel kern(ConvSpec{channels, channels, k, k, factor, factor / 2});
  const double center = factor - 0.5;
  for (Index c = 0; c < channels; ++c) {
    for (Index y = 0; y < k; ++y) {
      for (Index x = 0; x < k; ++x) {
        kern(c, c, y, x) = (1 - std::abs(y - center) / factor) * (1 - std::abs(x - center) / factor);
      }
    }
  }
  return kern;
}

namespace {

std::string pair_name(const std::string& prefix, std::size_t e, std::size_t r) {
  return prefix + ".crf." + std::to_string(e) + std::to_string(r);
}

}  // namespace

AmhNet::AmhNet(ModelConfig cfg) : cfg_(std::move(cfg)) { build(); }

std::vector<Index> AmhNet::tap_strides() const {
  std::vector<Index> out;
  const auto& fe = cfg_.frontend;
  for (int t : fe.taps) {
    if (t < 1 || t > static_cast<int>(fe.layers.size())) throw ConfigError("tap " + std::to_string(t) + " out of range");
    Index s = 1;
    for (int i = 0; i < t; ++i) s *= fe.layers[i].stride;
    out.push_back(s);
  }
  return out;
}

Index AmhNet::size_multiple() const {
  const auto strides = tap_strides();
  Index m = 1;
  for (auto s : strides) m = std::max(m, s);
  return cfg_.hierarchical() ? m * cfg_.hierarchy.branches.pool_window : m;
}

std::size_t AmhNet::head_count() const { return cfg_.hierarchical() ? cfg_.frontend.taps.size() + 1 : 1; }

void AmhNet::build() {
  const auto& fe = cfg_.frontend;
  const auto& hc = cfg_.hierarchy;
  if (fe.taps.empty()) throw ConfigError("model needs at least one tap");
  for (std::size_t i = 1; i < fe.taps.size(); ++i) {
    if (fe.taps[i] <= fe.taps[i - 1]) throw ConfigError("taps must be strictly increasing");
  }
  const auto strides = tap_strides();
  const Index d = hc.branches.deconv_stride;
  for (auto s : strides) {
    if (cfg_.hierarchical() && (s % d != 0 || (s / d) % (strides[0] / d) != 0)) {
      throw ConfigError("tap strides must be multiples of the deconv stride");
    }
  }

  Rng rng(cfg_.init_seed);
  auto random_conv = [&](const std::string& name, const ConvSpec& spec) {
    const double fan_in = static_cast<double>(spec.in_channels * spec.kernel_h * spec.kernel_w);
    params_.add(name + ".w", random_kernel(spec, rng, std::sqrt(3.0 / fan_in)).as_tensor(), spec);
    params_.add(name + ".b", Tensor(spec.out_channels, 1, 1));
  };
  // Deconv weights live in (in, out) order: spec.out_channels is the deconv's input.
  auto random_deconv = [&](const std::string& name, const ConvSpec& spec) {
    const double fan_in = static_cast<double>(spec.out_channels * spec.kernel_h * spec.kernel_w) /
                          static_cast<double>(spec.stride * spec.stride);
    params_.add(name + ".w", random_kernel(spec, rng, std::sqrt(3.0 / fan_in)).as_tensor(), spec);
    params_.add(name + ".b", Tensor(spec.in_channels, 1, 1));
  };
  auto bilinear_deconv = [&](const std::string& name, Index channels, Index factor) {
    const ConvKernel k = bilinear_kernel(factor, channels);
    params_.add(name + ".w", k.as_tensor(), k.spec);
    params_.add(name + ".b", Tensor(channels, 1, 1));
  };
  auto crf_params = [&](const std::string& prefix, Index channels, std::size_t S) {
    const Index k = hc.crf_kernel;
    for (std::size_t e = 0; e < S; ++e) {
      for (std::size_t r = 0; r < S; ++r) {
        if (e == r) continue;
        for (const char* part : {".L", ".le", ".lr"}) {
          const ConvSpec spec = ConvSpec::same(channels, channels, k);
          params_.add(pair_name(prefix, e, r) + part, random_kernel(spec, rng, hc.crf_init_scale).as_tensor(), spec);
        }
      }
    }
    if (hc.learnable_a) {
      for (std::size_t s = 0; s < S; ++s) {
        ConvKernel a(ConvSpec::pointwise(channels, channels));
        for (Index c = 0; c < channels; ++c) a(c, c, 0, 0) = hc.unary_a;
        params_.add(prefix + ".crf.a" + std::to_string(s), a.as_tensor(), a.spec);
      }
    }
  };

  Index prev = fe.in_channels;
  for (std::size_t i = 0; i < fe.layers.size(); ++i) {
    const auto& l = fe.layers[i];
    random_conv("fe" + std::to_string(i + 1), ConvSpec{l.channels, prev, l.kernel, l.kernel, l.stride, (l.kernel - 1) / 2});
    prev = l.channels;
  }
  auto tap_channels = [&](std::size_t li) { return fe.layers[fe.taps[li] - 1].channels; };

  if (!cfg_.hierarchical()) {
    Index total = tap_channels(0);
    for (std::size_t li = 1; li < fe.taps.size(); ++li) {
      bilinear_deconv("base.align" + std::to_string(li), tap_channels(li), strides[li] / strides[0]);
      total += tap_channels(li);
    }
    random_conv("base.head", ConvSpec::pointwise(1, total));
    return;
  }

  const auto& br = hc.branches;
  const Index F = hc.fused_channels;
  for (std::size_t li = 0; li < fe.taps.size(); ++li) {
    const Index C = tap_channels(li);
    const std::string p = "l" + std::to_string(li);
    random_deconv(p + ".D", ConvSpec{C, C, br.deconv_kernel, br.deconv_kernel, br.deconv_stride,
                                     (br.deconv_kernel - br.deconv_stride) / 2});
    random_conv(p + ".C", ConvSpec{C, C, br.conv_kernel, br.conv_kernel, 1, (br.conv_kernel - 1) / 2});
    bilinear_deconv(p + ".Calign", C, br.deconv_stride);
    bilinear_deconv(p + ".Malign", C, br.deconv_stride * br.pool_window);
    if (cfg_.uses_crf()) crf_params(p, C, 3);
    random_conv(p + ".comb", ConvSpec::pointwise(F, 3 * C));
    random_conv(p + ".head", ConvSpec::pointwise(1, F));
  }
  const std::size_t L = fe.taps.size();
  if (L >= 2) {
    for (std::size_t li = 1; li < L; ++li) bilinear_deconv("top.align" + std::to_string(li), F, strides[li] / strides[0]);
    if (cfg_.uses_crf()) crf_params("top", F, L);
    random_conv("top.comb", ConvSpec::pointwise(F, static_cast<Index>(L) * F));
  }
  random_conv("top.head", ConvSpec::pointwise(1, F));
}

std::vector<Var> AmhNet::bind(Tape& tape) const {
  std::vector<Var> bound;
  bound.reserve(params_.size());
  for (const auto& p : params_) bound.push_back(tape.leaf(p.value));
  return bound;
}

Var AmhNet::param(const std::vector<Var>& bound, const std::string& name) const {
  return bound.at(params_.index(name));
}

Var AmhNet::conv(const std::vector<Var>& bound, const std::string& name, Var x) const {
  const auto& w = params_.at(name + ".w");
  return ad::add_bias(ad::conv2d(x, param(bound, name + ".w"), *w.spec), param(bound, name + ".b"));
}

Var AmhNet::deconv(const std::vector<Var>& bound, const std::string& name, Var x) const {
  const auto& w = params_.at(name + ".w");
  return ad::add_bias(ad::deconv2d(x, param(bound, name + ".w"), *w.spec), param(bound, name + ".b"));
}

DecomposedLayer AmhNet::three_way_decompose(Tape& tape, Var tap, std::size_t layer,
                                            const std::vector<Var>& bound) const {
  const auto& br = cfg_.hierarchy.branches;
  const Shape s = tap.shape();
  if (s.height < br.pool_window || s.width < br.pool_window || s.height % br.pool_window || s.width % br.pool_window) {
    throw ShapeError("three_way_decompose: tap of size " + to_string(s) + " too small to pool by " +
                     std::to_string(br.pool_window));
  }
  const std::string p = "l" + std::to_string(layer);
  auto scope = tape.scope(p + "/decompose");
  DecomposedLayer d;
  d.deconv = ad::relu(deconv(bound, p + ".D", tap));
  Var c = ad::relu(conv(bound, p + ".C", tap));
  Var m = ad::maxpool(tap, br.pool_window, br.pool_window);
  d.conv_raw = c.value();
  d.pool_raw = m.value();
  d.conv = deconv(bound, p + ".Calign", c);
  d.pool = deconv(bound, p + ".Malign", m);
  return d;
}

Var AmhNet::fuse_scales(Tape& tape, const std::vector<Var>& scales, const std::string& prefix,
                        const std::vector<Var>& bound) const {
  std::vector<Var> refined = scales;
  if (cfg_.uses_crf() && scales.size() >= 2) {
    auto scope = tape.scope("agcrf");
    const auto& hc = cfg_.hierarchy;
    const std::size_t S = scales.size();
    UnrolledCrf crf;
    for (const auto& v : scales) crf.channels.push_back(v.shape().channels);
    crf.iterations = hc.crf_iterations;
    crf.variant = cfg_.crf_variant();
    crf.sign = hc.sign;
    crf.pairs.resize(S * S);
    for (std::size_t e = 0; e < S; ++e) {
      for (std::size_t r = 0; r < S; ++r) {
        if (e == r) continue;
        const std::string n = pair_name(prefix, e, r);
        crf.pairs[e * S + r] = {param(bound, n + ".L"),  param(bound, n + ".le"),  param(bound, n + ".lr"),
                                *params_.at(n + ".L").spec, *params_.at(n + ".le").spec, *params_.at(n + ".lr").spec};
      }
    }
    for (std::size_t s = 0; s < S; ++s) {
      UnrolledUnary u{hc.unary_a, std::nullopt, {}};
      if (hc.learnable_a) {
        const std::string n = prefix + ".crf.a" + std::to_string(s);
        u.pointwise = param(bound, n);
        u.pointwise_spec = *params_.at(n).spec;
      }
      crf.unary.push_back(u);
    }
    refined = run_unrolled_inference(tape, scales, crf).hbar;
  }
  auto scope = tape.scope("combine");
  return conv(bound, prefix + ".comb", ad::concat(refined));
}

Var AmhNet::level1_fuse(Tape& tape, const DecomposedLayer& d, std::size_t layer, const std::vector<Var>& bound) const {
  const std::string p = "l" + std::to_string(layer);
  auto scope = tape.scope(p);
  return fuse_scales(tape, {d.deconv, d.conv, d.pool}, p, bound);
}

Var AmhNet::level2_fuse(Tape& tape, const std::vector<Var>& refined, const std::vector<Var>& bound) const {
  if (refined.empty()) throw ShapeError("level2_fuse: no inputs");
  if (refined.size() == 1) return refined[0];
  auto scope = tape.scope("top");
  std::vector<Var> aligned{refined[0]};
  for (std::size_t li = 1; li < refined.size(); ++li) {
    aligned.push_back(deconv(bound, "top.align" + std::to_string(li), refined[li]));
  }
  return fuse_scales(tape, aligned, "top", bound);
}

Var AmhNet::head(Tape& tape, Var features, const std::string& prefix, Index upsample,
                 const std::vector<Var>& bound) const {
  auto scope = tape.scope(prefix + "/head");
  Var logits = conv(bound, prefix + ".head", features);
  if (upsample > 1) {
    const ConvKernel k = bilinear_kernel(upsample, 1);
    logits = ad::deconv2d(logits, tape.constant(k.as_tensor()), k.spec);
  }
  return ad::sigmoid(logits);
}

AmhNet::Forward AmhNet::forward(Tape& tape, const Tensor& image) const {
  const auto& fe = cfg_.frontend;
  if (image.channels() != fe.in_channels) {
    throw ShapeError("forward: image has " + std::to_string(image.channels()) + " channels, model expects " +
                     std::to_string(fe.in_channels));
  }
  const Index m = size_multiple();
  if (image.height() % m || image.width() % m) {
    throw ShapeError("forward: image " + to_string(image.shape()) + " must have sides divisible by " +
                     std::to_string(m));
  }
  Forward out;
  out.params = bind(tape);
  const auto& bound = out.params;

  std::vector<Var> taps;
  {
    auto scope = tape.scope("frontend");
    Tensor centred = image;
    centred.values() = (centred.values() - fe.input_mean) * fe.input_scale;
    Var x = tape.constant(centred);
    for (std::size_t i = 0; i < fe.layers.size(); ++i) {
      x = ad::relu(conv(bound, "fe" + std::to_string(i + 1), x));
      for (int t : fe.taps) {
        if (t == static_cast<int>(i + 1)) taps.push_back(x);
      }
    }
  }
  const auto strides = tap_strides();

  if (!cfg_.hierarchical()) {
    auto scope = tape.scope("base");
    std::vector<Var> aligned{taps[0]};
    for (std::size_t li = 1; li < taps.size(); ++li) {
      aligned.push_back(deconv(bound, "base.align" + std::to_string(li), taps[li]));
    }
    out.heads.push_back(head(tape, ad::concat(aligned), "base", strides[0], bound));
    out.fused = ad::mean(out.heads);
    return out;
  }

  const Index d = cfg_.hierarchy.branches.deconv_stride;
  std::vector<Var> refined;
  for (std::size_t li = 0; li < taps.size(); ++li) {
    const DecomposedLayer parts = three_way_decompose(tape, taps[li], li, bound);
    refined.push_back(level1_fuse(tape, parts, li, bound));
    out.heads.push_back(head(tape, refined.back(), "l" + std::to_string(li), strides[li] / d, bound));
  }
  out.heads.push_back(head(tape, level2_fuse(tape, refined, bound), "top", strides[0] / d, bound));
  out.fused = ad::mean(out.heads);
  return out;
}

PredictionSet AmhNet::predict(const Tensor& image) const {
  Tape tape;
  const Forward f = forward(tape, image);
  PredictionSet p;
  for (const auto& h : f.heads) p.heads.push_back(h.value());
  p.fused = f.fused.value();
  return p;
}

}  // namespace amh
