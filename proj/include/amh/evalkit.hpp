#pragma once

// Contour evaluation: NMS thinning, tolerance matching, threshold sweep, ODS / OIS / AP.

#include "amh/tensor_ops.hpp"

#include <string>
#include <vector>

namespace amh {

/// Keeps pixels that are maximal along the gradient direction of a 3x3-binomial smoothed copy
/// (Sobel orientation, bilinear neighbour sampling at distance 1). Values are compared on the
/// input, ties on the smoothed copy. Output <= input pointwise.
Tensor nms_thin(const Tensor& map);

struct MatchCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t predicted() const { return tp + fp; }
  std::size_t truth() const { return tp + fn; }
};

/// One-to-one greedy matching in order of increasing distance; a pair matches when its distance is
/// at most tol_frac * image diagonal. Masks are binary (nonzero counts as an edge).
MatchCounts correspond(const Tensor& pred_binary, const Tensor& gt_binary, double tol_frac);

struct Prf {
  double precision = 1;
  double recall = 1;
  double f = 0;
};
/// Empty prediction has precision 1, empty truth has recall 1.
Prf prf(const MatchCounts& m);

struct CurvePoint {
  double threshold = 0;
  double precision = 0;  // mean over images
  double recall = 0;
  double f = 0;          // mean per-image F
};

struct EvalResult {
  double ods = 0;
  double ods_threshold = 0;
  double ois = 0;
  double ap = 0;
  std::vector<CurvePoint> curve;
  std::vector<double> image_best_f;

  std::string to_json() const;
  std::string to_table() const;
};

/// t_k = k / (n + 1), k = 1..n; a pixel is an edge at t when its value >= t.
std::vector<double> thresholds(std::size_t n);

/// Counts for one image at every threshold.
std::vector<MatchCounts> sweep_image(const Tensor& pred, const Tensor& gt, double tol_frac,
                                     const std::vector<double>& ts);

/// Sums a set of numbers in sorted order, so the result does not depend on input order.
double ordered_mean(std::vector<double> v);

/// Area under the precision envelope (max precision at recall >= r), trapezoids over recall, with
/// the envelope extended flat from recall 0 to the smallest observed recall.
double average_precision(std::vector<CurvePoint> curve);

/// Predictions are evaluated as given (apply nms_thin beforehand if wanted).
EvalResult evaluate(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, double tol_frac = 0.0075,
                    std::size_t n_thresholds = 99);

}  // namespace amh
