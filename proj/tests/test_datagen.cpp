#include <doctest.h>

#include "amh/datagen.hpp"
#include "amh/image_io.hpp"

#include <filesystem>
#include <fstream>

using namespace amh;
namespace fs = std::filesystem;

namespace {

Polygon square(double a, double b, double intensity = 1.0) {
  Polygon p;
  p.vertices = {{a, a}, {b, a}, {b, b}, {a, b}};
  p.intensity = intensity;
  return p;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("amh_test_datagen_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("empty scene: uniform image, no edges") {
  SceneSpec spec;
  spec.width = 12;
  spec.height = 10;
  spec.background = 0.3;
  const Sample s = generate(spec);
  CHECK(s.image.shape() == Shape{1, 10, 12});
  CHECK((s.image.values() == 0.3).all());
  CHECK(s.edges.values().isZero(0));
}

TEST_CASE("axis-aligned square: edge count equals its perimeter pixels") {
  for (int side : {2, 5, 8}) {
    SceneSpec spec;
    spec.width = spec.height = 16;
    spec.shapes = {square(4, 4 + side)};
    const Sample s = generate(spec);
    CHECK(s.edges.values().sum() == 4 * side - 4);
    // the boundary lies on the shape's own outermost pixels
    CHECK(s.edges(0, 4, 4) == 1);
    CHECK(s.edges(0, 3, 4) == 0);
  }
}

TEST_CASE("edge masks are binary, one pixel wide and sparse") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const SceneSpec spec = random_scene(64, 64, rng);
    validate(spec);
    const Sample s = generate(spec);
    CHECK(((s.edges.values() == 0) || (s.edges.values() == 1)).all());
    const double pos = s.edges.values().sum();
    CHECK(pos < 0.25 * static_cast<double>(s.edges.size()));
    const auto labels = label_map(spec);
    CHECK(boundary_mask(labels) == s.edges);
  }
}

TEST_CASE("boundary mask marks pixels above a 4-neighbour") {
  Eigen::ArrayXXi labels = Eigen::ArrayXXi::Zero(5, 5);
  labels.block(1, 1, 3, 3).setConstant(1);
  labels(2, 2) = 2;
  const Tensor m = boundary_mask(labels);
  CHECK(m(0, 2, 2) == 1);
  CHECK(m(0, 1, 1) == 1);
  CHECK(m(0, 0, 0) == 0);
  CHECK(m.values().sum() == 9);
}

TEST_CASE("ellipse rasterisation covers pixel centres inside the curve") {
  SceneSpec spec;
  spec.width = spec.height = 20;
  Ellipse e;
  e.center = {10, 10};
  e.rx = 5;
  e.ry = 3;
  spec.shapes = {e};
  const auto labels = label_map(spec);
  CHECK(labels(10, 10) == 1);   // (row, col)
  CHECK(labels(10, 14) == 1);
  CHECK(labels(10, 15) == 0);
  CHECK(labels(13, 10) == 0);
}

TEST_CASE("generation is deterministic and noise is image-only") {
  Rng rng(2);
  SceneSpec spec = random_scene(32, 32, rng, 0.05, 1.0);
  const Sample a = generate(spec), b = generate(spec);
  CHECK(a.image == b.image);
  CHECK(a.edges == b.edges);
  SceneSpec clean = spec;
  clean.noise_sigma = 0;
  clean.blur_radius = 0;
  const Sample c = generate(clean);
  CHECK(c.edges == a.edges);
  CHECK_FALSE(c.image == a.image);
  CHECK((a.image.values() >= 0).all());
  CHECK((a.image.values() <= 1).all());
  spec.seed += 1;
  CHECK_FALSE(generate(spec).image == a.image);
}

TEST_CASE("datasets are reproducible and exercise class imbalance") {
  const Dataset a = generate_dataset(8, 32, 32, 5), b = generate_dataset(8, 32, 32, 5);
  REQUIRE(a.size() == 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    const double pos = a[i].edges.values().sum();
    CHECK(pos > 0);
    CHECK(pos < 0.5 * (static_cast<double>(a[i].edges.size()) - pos));
  }
}

TEST_CASE("three-channel scenes") {
  SceneSpec spec;
  spec.width = spec.height = 16;
  spec.channels = 3;
  spec.shapes = {square(4, 12, 0.8)};
  const Sample s = generate(spec);
  CHECK(s.image.channels() == 3);
  CHECK(s.edges.channels() == 1);
}

TEST_CASE("invalid scenes are rejected") {
  SceneSpec spec;
  spec.width = spec.height = 16;
  spec.shapes = {square(4, 4)};
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec.shapes = {square(4, 20)};
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec.shapes = {square(4, 8, 1.5)};
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  Ellipse e;
  e.center = {8, 8};
  e.rx = 0;
  spec.shapes = {e};
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec.shapes = {};
  spec.channels = 2;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
}

TEST_CASE("gaussian blur keeps constants and mass") {
  const Tensor c = Tensor::constant({1, 9, 9}, 0.4);
  CHECK(max_abs_diff(gaussian_blur(c, 1.3), c) < 1e-15);
  Tensor d(1, 21, 21);
  d(0, 10, 10) = 1;
  const Tensor b = gaussian_blur(d, 1.5);
  CHECK(b.values().sum() == doctest::Approx(1.0));
  CHECK(b(0, 10, 10) < 1);
  CHECK(b(0, 10, 11) == doctest::Approx(b(0, 11, 10)));
}

TEST_CASE("pgm header and size") {
  Tensor one(1, 1, 1);
  one(0, 0, 0) = 128.0 / 255.0;
  const auto bytes = encode_pgm(one);
  // "P5\n1 1\n255\n" is 11 bytes, plus one sample
  CHECK(bytes.size() == 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 11) == "P5\n1 1\n255\n");
  CHECK(bytes[11] == 128);

  const auto wide = encode_pgm(Tensor(1, 3, 17));
  CHECK(std::string(wide.begin(), wide.begin() + 12) == "P5\n17 3\n255\n");
}

TEST_CASE("pgm round trip is exact on quantised maps") {
  Rng rng(3);
  const Tensor q = quantize(random_tensor({1, 7, 13}, rng, -0.2, 1.2));
  CHECK((q.values() >= 0).all());
  CHECK((q.values() <= 1).all());
  CHECK(decode_pgm(encode_pgm(q)) == q);
  const fs::path d = scratch("pgm");
  save_pgm((d / "x.pgm").string(), q);
  CHECK(load_pgm((d / "x.pgm").string()) == q);
  fs::remove_all(d);
}

TEST_CASE("pgm parse errors carry a byte offset") {
  auto err_at = [](const std::string& s) -> std::size_t {
    try {
      decode_pgm(std::vector<unsigned char>(s.begin(), s.end()));
    } catch (const ImageFormatError& e) {
      return e.offset();
    }
    return static_cast<std::size_t>(-1);
  };
  CHECK(err_at("P6\n1 1\n255\n\x01") == 0);
  CHECK(err_at("P5\nx 1\n255\n\x01") == 3);
  CHECK(err_at("P5\n2 1\n255\n\x01") == 12);  // end of buffer
  CHECK(err_at("P5\n1 0\n255\n") == 5);
  CHECK(err_at("P5\n1 1\n65535\n\x01\x01") == 7);
  CHECK(err_at("P5\n1 1\n255\n\x01\x02") == 12);
  CHECK(err_at("P5\n# comment\n1 1\n255\n\x07") == static_cast<std::size_t>(-1));
}

TEST_CASE("png output is a valid signature and chunk stream") {
  Rng rng(4);
  const auto png = encode_png_gray(random_tensor({1, 5, 6}, rng, 0.0, 1.0));
  const unsigned char sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  REQUIRE(png.size() > 8 + 25 + 12);
  CHECK(std::equal(sig, sig + 8, png.begin()));
  CHECK(std::string(png.begin() + 12, png.begin() + 16) == "IHDR");
  CHECK(std::string(png.end() - 8, png.end() - 4) == "IEND");
}

TEST_CASE("manifest round trip and dataset loading") {
  const fs::path d = scratch("manifest");
  fs::create_directories(d / "images");
  fs::create_directories(d / "edges");
  const Dataset data = generate_dataset(3, 16, 16, 9);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string img = "images/" + std::to_string(i) + ".pgm", msk = "edges/" + std::to_string(i) + ".pgm";
    save_pgm((d / img).string(), data[i].image);
    save_pgm((d / msk).string(), data[i].edges);
    entries.push_back({img, msk});
  }
  write_manifest((d / "manifest.tsv").string(), entries);
  const auto back = read_manifest((d / "manifest.tsv").string());
  REQUIRE(back.size() == 3);
  CHECK(back[1].image == entries[1].image);
  CHECK(back[1].mask == entries[1].mask);

  const Dataset loaded = load_dataset((d / "manifest.tsv").string());
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].edges == data[i].edges);
    CHECK(max_abs_diff(loaded[i].image, data[i].image) <= 0.5 / 255 + 1e-12);
  }

  std::ofstream(d / "bad.tsv") << "only-one-column\n";
  CHECK_THROWS(read_manifest((d / "bad.tsv").string()));
  CHECK_THROWS(load_pgm((d / "missing.pgm").string()));
  fs::remove_all(d);
}
