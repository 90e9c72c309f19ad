#pragma once

// Synthetic scenes of filled polygons and ellipses with exact boundary masks.

#include "amh/random.hpp"
#include "amh/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <variant>
#include <vector>

namespace amh {

struct Polygon {
  std::vector<Eigen::Vector2d> vertices;  // (x, y) in pixel units; pixel (x, y) has centre (x+.5, y+.5)
  double intensity = 1.0;
};

struct Ellipse {
  Eigen::Vector2d center{0, 0};
  double rx = 1, ry = 1;
  double angle = 0;  // radians
  double intensity = 1.0;
};

using Shape2d = std::variant<Polygon, Ellipse>;

struct SceneSpec {
  Index width = 64;
  Index height = 64;
  double background = 0.5;
  std::vector<Shape2d> shapes;  // later shapes are drawn on top
  double noise_sigma = 0.0;
  double blur_radius = 0.0;     // gaussian sigma in pixels
  std::uint64_t seed = 1;
  Index channels = 1;           // 1 or 3
};

struct Sample {
  Tensor image;  // (channels, H, W) in [0,1]
  Tensor edges;  // (1, H, W), values 0 or 1
};
using Dataset = std::vector<Sample>;

/// Throws std::invalid_argument for shapes outside the canvas, intensities outside [0,1] or zero area.
void validate(const SceneSpec& spec);

/// Label of the topmost shape covering each pixel centre (0 is background).
Eigen::ArrayXXi label_map(const SceneSpec& spec);

/// 1 where a pixel's label exceeds the label of one of its 4-neighbours.
Tensor boundary_mask(const Eigen::ArrayXXi& labels);

Sample generate(const SceneSpec& spec);

/// One to three random shapes whose intensities differ from the background by at least 0.2.
SceneSpec random_scene(Index width, Index height, Rng& rng, double noise_sigma = 0.03, double blur_radius = 0.7);

Dataset generate_dataset(std::size_t count, Index width, Index height, std::uint64_t seed, double noise_sigma = 0.03,
                         double blur_radius = 0.7);

/// Separable gaussian blur, edges clamped.
Tensor gaussian_blur(const Tensor& x, double sigma);

}  // namespace amh
