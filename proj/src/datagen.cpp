#include "amh/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace amh {

namespace {

double polygon_area(const Polygon& p) {
  double a = 0;
  const auto& v = p.vertices;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& u = v[i];
    const auto& w = v[(i + 1) % v.size()];
    a += u.x() * w.y() - w.x() * u.y();
  }
  return 0.5 * a;
}

// even-odd rule
bool contains(const Polygon& p, double x, double y) {
  bool in = false;
  const auto& v = p.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const double yi = v[i].y(), yj = v[j].y();
    if ((yi > y) != (yj > y)) {
      const double xc = v[j].x() + (y - yj) * (v[i].x() - v[j].x()) / (yi - yj);
      if (x < xc) in = !in;
    }
  }
  return in;
}

bool contains(const Ellipse& e, double x, double y) {
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double dx = x - e.center.x(), dy = y - e.center.y();
  const double u = (c * dx + s * dy) / e.rx;
  const double v = (-s * dx + c * dy) / e.ry;
  return u * u + v * v <= 1.0;
}

double intensity(const Shape2d& s) {
  return std::visit([](const auto& v) { return v.intensity; }, s);
}

void check_point(double x, double y, const SceneSpec& spec, std::size_t i) {
  if (!(x >= 0 && y >= 0 && x <= static_cast<double>(spec.width) && y <= static_cast<double>(spec.height))) {
    throw std::invalid_argument("scene: shape " + std::to_string(i) + " extends outside the canvas");
  }
}

}  // namespace

void validate(const SceneSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0) throw std::invalid_argument("scene: canvas must be non-empty");
  if (spec.channels != 1 && spec.channels != 3) throw std::invalid_argument("scene: channels must be 1 or 3");
  if (spec.background < 0 || spec.background > 1) throw std::invalid_argument("scene: background outside [0,1]");
  if (spec.noise_sigma < 0 || spec.blur_radius < 0) throw std::invalid_argument("scene: negative noise or blur");
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const double v = intensity(spec.shapes[i]);
    if (!(v >= 0 && v <= 1)) throw std::invalid_argument("scene: shape " + std::to_string(i) + " intensity outside [0,1]");
    if (const auto* p = std::get_if<Polygon>(&spec.shapes[i])) {
      if (p->vertices.size() < 3 || std::abs(polygon_area(*p)) < 1e-12) {
        throw std::invalid_argument("scene: shape " + std::to_string(i) + " is degenerate (zero area)");
      }
      for (const auto& q : p->vertices) check_point(q.x(), q.y(), spec, i);
    } else {
      const auto& e = std::get<Ellipse>(spec.shapes[i]);
      if (!(e.rx > 0 && e.ry > 0)) {
        throw std::invalid_argument("scene: shape " + std::to_string(i) + " is degenerate (zero area)");
      }
      // axis-aligned bounding box of the rotated ellipse
      const double c = std::cos(e.angle), s = std::sin(e.angle);
      const double hx = std::hypot(e.rx * c, e.ry * s), hy = std::hypot(e.rx * s, e.ry * c);
      check_point(e.center.x() - hx, e.center.y() - hy, spec, i);
      check_point(e.center.x() + hx, e.center.y() + hy, spec, i);
    }
  }
}

Eigen::ArrayXXi label_map(const SceneSpec& spec) {
  Eigen::ArrayXXi labels = Eigen::ArrayXXi::Zero(spec.height, spec.width);
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const int label = static_cast<int>(i) + 1;
    for (Index y = 0; y < spec.height; ++y) {
      for (Index x = 0; x < spec.width; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        const bool in = std::visit([&](const auto& s) { return contains(s, px, py); }, spec.shapes[i]);
        if (in) labels(y, x) = label;
      }
    }
  }
  return labels;
}

Tensor boundary_mask(const Eigen::ArrayXXi& labels) {
  const Index h = labels.rows(), w = labels.cols();
  Tensor m(1, h, w);
  constexpr int dy[] = {-1, 1, 0, 0};
  constexpr int dx[] = {0, 0, -1, 1};
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (int k = 0; k < 4; ++k) {
        const Index ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
        if (labels(y, x) > labels(ny, nx)) {
          m(0, y, x) = 1.0;
          break;
        }
      }
    }
  }
  return m;
}

Tensor gaussian_blur(const Tensor& x, double sigma) {
  if (sigma <= 0) return x;
  const Index r = static_cast<Index>(std::ceil(3 * sigma));
  Eigen::ArrayXd k(2 * r + 1);
  for (Index i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  k /= k.sum();
  const Index h = x.height(), w = x.width();
  Tensor tmp(x.shape()), out(x.shape());
  for (Index c = 0; c < x.channels(); ++c) {
    for (Index y = 0; y < h; ++y) {
      for (Index xx = 0; xx < w; ++xx) {
        double s = 0;
        for (Index i = -r; i <= r; ++i) s += k[i + r] * x(c, y, std::clamp<Index>(xx + i, 0, w - 1));
        tmp(c, y, xx) = s;
      }
    }
    for (Index y = 0; y < h; ++y) {
      for (Index xx = 0; xx < w; ++xx) {
        double s = 0;
        for (Index i = -r; i <= r; ++i) s += k[i + r] * tmp(c, std::clamp<Index>(y + i, 0, h - 1), xx);
        out(c, y, xx) = s;
      }
    }
  }
  return out;
}

Sample generate(const SceneSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const Eigen::ArrayXXi labels = label_map(spec);

  // per-shape tint for colour scenes; channel 0 keeps the nominal intensity
  std::vector<std::array<double, 3>> tint(spec.shapes.size() + 1, {1.0, 1.0, 1.0});
  if (spec.channels == 3) {
    std::uniform_real_distribution<double> t(0.6, 1.0);
    for (auto& a : tint) a = {1.0, t(rng), t(rng)};
  }

  Sample s;
  s.image = Tensor(spec.channels, spec.height, spec.width);
  for (Index c = 0; c < spec.channels; ++c) {
    for (Index y = 0; y < spec.height; ++y) {
      for (Index x = 0; x < spec.width; ++x) {
        const int l = labels(y, x);
        const double v = l == 0 ? spec.background : intensity(spec.shapes[static_cast<std::size_t>(l - 1)]);
        s.image(c, y, x) = v * tint[static_cast<std::size_t>(l)][static_cast<std::size_t>(c)];
      }
    }
  }
  s.edges = boundary_mask(labels);

  s.image = gaussian_blur(s.image, spec.blur_radius);
  if (spec.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (Index i = 0; i < s.image.size(); ++i) s.image.values()[i] += noise(rng);
  }
  s.image.values() = s.image.values().cwiseMax(0.0).cwiseMin(1.0);
  return s;
}

SceneSpec random_scene(Index width, Index height, Rng& rng, double noise_sigma, double blur_radius) {
  SceneSpec spec;
  spec.width = width;
  spec.height = height;
  spec.noise_sigma = noise_sigma;
  spec.blur_radius = blur_radius;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  spec.background = 0.2 + 0.6 * u(rng);
  spec.seed = rng();
  const double W = static_cast<double>(width), H = static_cast<double>(height);
  const double m = std::min(W, H);

  auto contrast = [&] {
    double v;
    do {
      v = u(rng);
    } while (std::abs(v - spec.background) < 0.2);
    return v;
  };

  const int count = 1 + static_cast<int>(rng() % 3);
  for (int i = 0; i < count; ++i) {
    const int kind = static_cast<int>(rng() % 3);
    const double size = m * (0.15 + 0.25 * u(rng));
    const double cx = size + (W - 2 * size) * u(rng);
    const double cy = size + (H - 2 * size) * u(rng);
    if (kind == 0) {
      Ellipse e;
      e.center = {cx, cy};
      e.rx = size * (0.5 + 0.5 * u(rng));
      e.ry = size * (0.5 + 0.5 * u(rng));
      e.angle = std::numbers::pi * u(rng);
      e.intensity = contrast();
      spec.shapes.emplace_back(e);
    } else {
      // rotated rectangle or triangle inscribed in a circle of radius `size`
      const int n = kind == 1 ? 4 : 3;
      const double phase = 2 * std::numbers::pi * u(rng);
      Polygon p;
      for (int k = 0; k < n; ++k) {
        const double a = phase + 2 * std::numbers::pi * (k + 0.3 * (u(rng) - 0.5)) / n;
        const double r = size * (0.7 + 0.3 * u(rng));
        p.vertices.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
      }
      p.intensity = contrast();
      spec.shapes.emplace_back(p);
    }
  }
  return spec;
}

Dataset generate_dataset(std::size_t count, Index width, Index height, std::uint64_t seed, double noise_sigma,
                         double blur_radius) {
  Rng rng(seed);
  Dataset d;
  d.reserve(count);
  while (d.size() < count) {
    Sample s = generate(random_scene(width, height, rng, noise_sigma, blur_radius));
    if (s.edges.values().sum() > 0) d.push_back(std::move(s));
  }
  return d;
}

}  // namespace amh
