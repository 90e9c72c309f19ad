#include <doctest.h>

#include "amh/mhnet.hpp"
#include "amh/random.hpp"
#include "amh/train.hpp"

#include <algorithm>

using namespace amh;

namespace {

Tensor random_image(Index h, Index w, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor({1, h, w}, rng, 0.0, 1.0);
}

// Lines of the op trace whose innermost scope is one of `steps`.
std::vector<std::string> steps_of(const Tape& t, const std::vector<std::string>& steps) {
  std::vector<std::string> out;
  for (const auto& line : t.trace()) {
    const std::string scope = line.substr(0, line.find(' '));
    const std::string last = scope.substr(scope.rfind('/') + 1);
    if (std::find(steps.begin(), steps.end(), last) != steps.end()) out.push_back(line);
  }
  return out;
}

}  // namespace

TEST_CASE("three-way decomposition of an 8x8 tap") {
  AmhNet net(build_ablation("flag"));
  Tape t;
  const auto bound = net.bind(t);
  Rng rng(1);
  const Var tap = t.constant(random_tensor({4, 8, 8}, rng));
  const DecomposedLayer d = net.three_way_decompose(t, tap, 0, bound);
  CHECK(d.deconv.shape() == Shape{4, 16, 16});
  CHECK(d.conv_raw.shape() == Shape{4, 8, 8});
  CHECK(d.pool_raw.shape() == Shape{4, 4, 4});
  CHECK(d.conv.shape() == Shape{4, 16, 16});
  CHECK(d.pool.shape() == Shape{4, 16, 16});
}

TEST_CASE("property: decomposition outputs share a shape for random valid taps") {
  AmhNet net(build_ablation("flag"));
  Rng rng(2);
  std::uniform_int_distribution<int> half(1, 6);
  for (int trial = 0; trial < 10; ++trial) {
    Tape t;
    const auto bound = net.bind(t);
    const Index h = 2 * half(rng), w = 2 * half(rng);
    const DecomposedLayer d = net.three_way_decompose(t, t.constant(random_tensor({4, h, w}, rng)), 1, bound);
    CHECK(d.deconv.shape() == Shape{4, 2 * h, 2 * w});
    CHECK(d.conv.shape() == d.deconv.shape());
    CHECK(d.pool.shape() == d.deconv.shape());
  }
}

TEST_CASE("decomposition of a zero tap with zero biases is zero") {
  AmhNet net(build_ablation("flag"));
  Tape t;
  const auto bound = net.bind(t);
  const DecomposedLayer d = net.three_way_decompose(t, t.constant(Tensor(4, 6, 6)), 0, bound);
  CHECK(d.deconv.value().values().isZero(0));
  CHECK(d.conv.value().values().isZero(0));
  CHECK(d.pool.value().values().isZero(0));
}

TEST_CASE("decomposition rejects taps too small to pool") {
  AmhNet net(build_ablation("flag"));
  Tape t;
  const auto bound = net.bind(t);
  CHECK_THROWS_AS(net.three_way_decompose(t, t.constant(Tensor(4, 1, 1)), 0, bound), ShapeError);
  CHECK_THROWS_AS(net.three_way_decompose(t, t.constant(Tensor(4, 3, 4)), 0, bound), ShapeError);
}

TEST_CASE("level-1 fusion with zero CRF kernels is the 1x1 combination of the raw branches") {
  for (const char* v : {"flag", "plag", "plain_crf"}) {
    AmhNet net(build_ablation(v));  // crf_init_scale 0: every CRF kernel starts at zero
    Tape t;
    const auto bound = net.bind(t);
    Rng rng(3);
    const DecomposedLayer d = net.three_way_decompose(t, t.constant(random_tensor({4, 4, 4}, rng)), 0, bound);
    const Var fused = net.level1_fuse(t, d, 0, bound);
    const auto& w = net.parameters().at("l0.comb.w");
    const auto& b = net.parameters().at("l0.comb.b");
    const Tensor cat = concat_channels(std::vector<Tensor>{d.deconv.value(), d.conv.value(), d.pool.value()});
    Tensor want = conv2d(cat, *w.spec, w.value.data());
    for (Index c = 0; c < want.channels(); ++c) want.plane(c).array() += b.value(c, 0, 0);
    CHECK(fused.shape() == Shape{4, 8, 8});
    CHECK(max_abs_diff(fused.value(), want) == 0.0);
  }
}

TEST_CASE("level-2 fusion") {
  AmhNet net(build_ablation("flag"));
  Tape t;
  const auto bound = net.bind(t);
  Rng rng(4);
  const Var one = t.constant(random_tensor({4, 8, 8}, rng));
  CHECK(net.level2_fuse(t, {one}, bound).id() == one.id());

  const Var a = t.constant(random_tensor({4, 8, 8}, rng));
  const Var b = t.constant(random_tensor({4, 4, 4}, rng));
  const Var c = t.constant(random_tensor({4, 2, 2}, rng));
  const Var out = net.level2_fuse(t, {a, b, c}, bound);
  CHECK(out.shape() == Shape{4, 8, 8});
  CHECK_THROWS_AS(net.level2_fuse(t, {}, bound), ShapeError);
}

TEST_CASE("forward: head count, ranges, shapes and the fused mean") {
  for (const char* v : {"baseline", "no_agcrf", "plain_crf", "no_deep_sup", "plag", "flag"}) {
    ModelConfig cfg = build_ablation(v);
    cfg.hierarchy.crf_init_scale = 0.2;
    AmhNet net(cfg);
    const Tensor img = random_image(32, 16, 5);
    const PredictionSet p = net.predict(img);
    const std::size_t want = std::string(v) == "baseline" ? 1 : 4;
    CHECK(p.heads.size() == want);
    CHECK(net.head_count() == want);
    Tensor sum(p.fused.shape());
    for (const auto& h : p.heads) {
      CHECK(h.shape() == Shape{1, 32, 16});
      CHECK((h.values() > 0).all());
      CHECK((h.values() < 1).all());
      sum.values() += h.values();
    }
    sum.values() /= static_cast<double>(p.heads.size());
    CHECK(max_abs_diff(sum, p.fused) == 0.0);
  }
}

TEST_CASE("forward rejects wrong channel counts and sizes") {
  AmhNet net(build_ablation("flag"));
  CHECK(net.size_multiple() == 16);
  CHECK_THROWS_AS(net.predict(Tensor(3, 32, 32)), ShapeError);
  CHECK_THROWS_AS(net.predict(Tensor(1, 24, 32)), ShapeError);
}

TEST_CASE("plain_crf changes only the attention step") {
  ModelConfig base;
  base.hierarchy.crf_init_scale = 0.3;
  base.hierarchy.crf_iterations = 2;
  const Tensor img = random_image(16, 16, 6);
  Tape tf, tp;
  AmhNet(build_ablation("flag", base)).forward(tf, img);
  AmhNet(build_ablation("plain_crf", base)).forward(tp, img);
  const auto f = steps_of(tf, {"step_i", "step_iii"}), p = steps_of(tp, {"step_i", "step_iii"});
  CHECK(!f.empty());
  CHECK(f == p);
  CHECK(steps_of(tf, {"step_ii"}) != steps_of(tp, {"step_ii"}));
}

TEST_CASE("ablation variants") {
  CHECK_THROWS(build_ablation("w/o"));
  ModelConfig cfg;
  cfg.hierarchy.crf_init_scale = 0.1;
  const AmhNet flag(build_ablation("flag", cfg)), plag(build_ablation("plag", cfg));
  REQUIRE(flag.parameters().size() == plag.parameters().size());
  for (std::size_t i = 0; i < flag.parameters().size(); ++i) {
    CHECK(flag.parameters()[i].name == plag.parameters()[i].name);
    CHECK(flag.parameters()[i].value == plag.parameters()[i].value);
  }
  CHECK(flag.config().crf_variant() == Variant::flag);
  CHECK(plag.config().crf_variant() == Variant::plag);
  CHECK(AmhNet(build_ablation("plain_crf")).config().crf_variant() == Variant::plain_crf);

  const AmhNet none(build_ablation("no_agcrf", cfg));
  for (const auto& p : none.parameters()) CHECK(p.name.find(".crf.") == std::string::npos);
  CHECK(none.head_count() == 4);
  CHECK_FALSE(build_ablation("no_deep_sup").deep_supervision());
  CHECK(build_ablation("no_deep_sup").uses_crf());
  CHECK_FALSE(build_ablation("baseline").hierarchical());
}

TEST_CASE("learnable unary weight adds 1x1 parameters") {
  ModelConfig cfg;
  cfg.hierarchy.learnable_a = true;
  const AmhNet net(cfg);
  const auto& a = net.parameters().at("l0.crf.a0");
  CHECK(a.spec->kernel_h == 1);
  CHECK(a.value(0, 0, 0) == 0.1);
  CHECK(net.predict(random_image(16, 16, 7)).heads.size() == 4);
}

TEST_CASE("config text round trip") {
  ModelConfig cfg = build_ablation("plag");
  cfg.frontend.layers = {{6, 3, 1}, {5, 5, 2}, {4, 3, 2}};
  cfg.frontend.taps = {2, 3};
  cfg.hierarchy.crf_iterations = 3;
  cfg.hierarchy.sign = GateSign::minus;
  cfg.hierarchy.unary_a = 0.123456789;
  cfg.frontend.input_scale = 2.5;
  cfg.init_seed = 77;
  const std::string text = cfg.to_text();
  CHECK(ModelConfig::from_kv(KvConfig::parse(text)).to_text() == text);
  CHECK_THROWS_AS(ModelConfig::from_kv(KvConfig::parse("model.layer_channels=4,4\nmodel.layer_strides=1\n")),
                  ConfigError);
}

TEST_CASE("bilinear kernel") {
  const ConvKernel k = bilinear_kernel(2, 1);
  CHECK(k.spec.kernel_h == 4);
  CHECK(k.spec.stride == 2);
  // interior of a constant map stays constant after upsampling
  const Tensor up = deconv2d(Tensor::constant({1, 4, 4}, 1.0), k);
  CHECK(up.shape() == Shape{1, 8, 8});
  for (Index y = 1; y < 7; ++y)
    for (Index x = 1; x < 7; ++x) CHECK(up(0, y, x) == doctest::Approx(1.0));
}

TEST_CASE("end-to-end gradient check on a 16x16 image") {
  ModelConfig cfg = build_ablation("flag");
  cfg.hierarchy.crf_init_scale = 0.3;
  AmhNet net(cfg);
  Rng rng(8);
  jitter_biases(net, rng, 0.1);
  Sample s;
  s.image = random_image(16, 16, 9);
  s.edges = Tensor(1, 16, 16);
  for (Index x = 0; x < 16; ++x) s.edges(0, 7, x) = 1;
  const auto entries = gradient_check(net, s, LossConfig{}, 4, 10);
  CHECK(entries.size() == net.parameters().size());
  for (const auto& e : entries) {
    INFO(e.tensor);
    CHECK(e.checked > 0);
    CHECK(e.max_rel_error < 1e-3);
  }
}
