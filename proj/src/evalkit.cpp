#include "amh/evalkit.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace amh {

namespace {

double at_clamped(const Tensor& t, Index y, Index x) {
  return t(0, std::clamp<Index>(y, 0, t.height() - 1), std::clamp<Index>(x, 0, t.width() - 1));
}

double bilinear(const Tensor& t, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(t.height() - 1));
  x = std::clamp(x, 0.0, static_cast<double>(t.width() - 1));
  const auto y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * at_clamped(t, y0, x0) + fx * at_clamped(t, y0, x0 + 1)) +
         fy * ((1 - fx) * at_clamped(t, y0 + 1, x0) + fx * at_clamped(t, y0 + 1, x0 + 1));
}

void require_map(const Tensor& t, const char* what) {
  if (t.channels() != 1) throw ShapeError(std::string(what) + ": expected a single-channel map, got " + to_string(t.shape()));
}

}  // namespace

Tensor nms_thin(const Tensor& map) {
  require_map(map, "nms_thin");
  const Index h = map.height(), w = map.width();
  Tensor s(map.shape());
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) acc += (2 - std::abs(dy)) * (2 - std::abs(dx)) * at_clamped(map, y + dy, x + dx);
      }
      s(0, y, x) = acc / 16.0;
    }
  }
  Tensor out(map.shape());
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const double v = map(0, y, x);
      if (v <= 0) continue;
      const double gx = (at_clamped(s, y - 1, x + 1) + 2 * at_clamped(s, y, x + 1) + at_clamped(s, y + 1, x + 1)) -
                        (at_clamped(s, y - 1, x - 1) + 2 * at_clamped(s, y, x - 1) + at_clamped(s, y + 1, x - 1));
      const double gy = (at_clamped(s, y + 1, x - 1) + 2 * at_clamped(s, y + 1, x) + at_clamped(s, y + 1, x + 1)) -
                        (at_clamped(s, y - 1, x - 1) + 2 * at_clamped(s, y - 1, x) + at_clamped(s, y - 1, x + 1));
      const double mag = std::hypot(gx, gy);
      bool keep = true;
      if (mag > 1e-12) {
        const double nx = gx / mag, ny = gy / mag;
        const auto fy = static_cast<double>(y), fx = static_cast<double>(x);
        // raw value first, smoothed value breaks ties (flat-topped ridges)
        auto not_below = [&](double dy, double dx) {
          const double r = bilinear(map, fy + dy, fx + dx);
          return v != r ? v > r : s(0, y, x) >= bilinear(s, fy + dy, fx + dx);
        };
        keep = not_below(ny, nx) && not_below(-ny, -nx);
      }
      if (keep) out(0, y, x) = v;
    }
  }
  return out;
}

MatchCounts correspond(const Tensor& pred_binary, const Tensor& gt_binary, double tol_frac) {
  require_map(pred_binary, "correspond");
  check_same_shape(pred_binary.shape(), gt_binary.shape(), "correspond");
  if (!(tol_frac >= 0)) throw std::invalid_argument("correspond: tolerance must be non-negative");
  const Index h = pred_binary.height(), w = pred_binary.width();
  const double r = tol_frac * std::hypot(static_cast<double>(h), static_cast<double>(w));
  const auto ri = static_cast<Index>(std::floor(r));

  std::vector<std::tuple<Index, Index, Index>> offsets;  // (d2, dy, dx)
  for (Index dy = -ri; dy <= ri; ++dy) {
    for (Index dx = -ri; dx <= ri; ++dx) {
      if (static_cast<double>(dy * dy + dx * dx) <= r * r) offsets.emplace_back(dy * dy + dx * dx, dy, dx);
    }
  }

  // (distance², pred index, gt index)
  std::vector<std::tuple<Index, Index, Index>> pairs;
  MatchCounts m;
  std::size_t n_pred = 0, n_gt = 0;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      n_gt += gt_binary(0, y, x) != 0;
      if (pred_binary(0, y, x) == 0) continue;
      ++n_pred;
      for (const auto& [d2, dy, dx] : offsets) {
        const Index gy = y + dy, gx = x + dx;
        if (gy < 0 || gx < 0 || gy >= h || gx >= w || gt_binary(0, gy, gx) == 0) continue;
        pairs.emplace_back(d2, y * w + x, gy * w + gx);
      }
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<char> pred_used(static_cast<std::size_t>(h * w)), gt_used(static_cast<std::size_t>(h * w));
  for (const auto& [d2, p, g] : pairs) {
    if (pred_used[static_cast<std::size_t>(p)] || gt_used[static_cast<std::size_t>(g)]) continue;
    pred_used[static_cast<std::size_t>(p)] = gt_used[static_cast<std::size_t>(g)] = 1;
    ++m.tp;
  }
  m.fp = n_pred - m.tp;
  m.fn = n_gt - m.tp;
  return m;
}

Prf prf(const MatchCounts& m) {
  Prf r;
  if (m.predicted()) r.precision = static_cast<double>(m.tp) / static_cast<double>(m.predicted());
  if (m.truth()) r.recall = static_cast<double>(m.tp) / static_cast<double>(m.truth());
  const double s = r.precision + r.recall;
  r.f = s > 0 ? 2 * r.precision * r.recall / s : 0.0;
  return r;
}

std::vector<double> thresholds(std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t k = 0; k < n; ++k) t[k] = static_cast<double>(k + 1) / static_cast<double>(n + 1);
  return t;
}

std::vector<MatchCounts> sweep_image(const Tensor& pred, const Tensor& gt, double tol_frac,
                                     const std::vector<double>& ts) {
  std::vector<MatchCounts> out;
  out.reserve(ts.size());
  Tensor binary(pred.shape());
  for (double t : ts) {
    for (Index i = 0; i < pred.size(); ++i) binary.values()[i] = pred.values()[i] >= t ? 1.0 : 0.0;
    out.push_back(correspond(binary, gt, tol_frac));
  }
  return out;
}

double ordered_mean(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double average_precision(std::vector<CurvePoint> curve) {
  if (curve.empty()) return 0;
  std::sort(curve.begin(), curve.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return a.recall != b.recall ? a.recall < b.recall : a.precision > b.precision;
  });
  std::vector<double> env(curve.size());
  double best = 0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    best = std::max(best, curve[i].precision);
    env[i] = best;
  }
  double area = curve[0].recall * env[0];
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    area += (curve[i + 1].recall - curve[i].recall) * 0.5 * (env[i] + env[i + 1]);
  }
  return area;
}

EvalResult evaluate(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, double tol_frac,
                    std::size_t n_thresholds) {
  if (preds.empty()) throw std::invalid_argument("evaluate: no images");
  if (preds.size() != gts.size()) throw std::invalid_argument("evaluate: prediction and ground-truth counts differ");
  if (n_thresholds == 0) throw std::invalid_argument("evaluate: need at least one threshold");
  const auto ts = thresholds(n_thresholds);

  // per threshold, per image
  std::vector<std::vector<double>> ps(ts.size()), rs(ts.size()), fs(ts.size());
  EvalResult res;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto counts = sweep_image(preds[i], gts[i], tol_frac, ts);
    double best = 0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
      const Prf q = prf(counts[k]);
      ps[k].push_back(q.precision);
      rs[k].push_back(q.recall);
      fs[k].push_back(q.f);
      best = std::max(best, q.f);
    }
    res.image_best_f.push_back(best);
  }
  for (std::size_t k = 0; k < ts.size(); ++k) {
    CurvePoint c{ts[k], ordered_mean(ps[k]), ordered_mean(rs[k]), ordered_mean(fs[k])};
    if (c.f > res.ods) {
      res.ods = c.f;
      res.ods_threshold = c.threshold;
    }
    res.curve.push_back(c);
  }
  res.ois = ordered_mean(res.image_best_f);
  res.ap = average_precision(res.curve);
  return res;
}

std::string EvalResult::to_json() const {
  nlohmann::json j;
  j["ods"] = ods;
  j["ods_threshold"] = ods_threshold;
  j["ois"] = ois;
  j["ap"] = ap;
  j["curve"] = nlohmann::json::array();
  for (const auto& c : curve) {
    j["curve"].push_back({{"threshold", c.threshold}, {"precision", c.precision}, {"recall", c.recall}, {"f", c.f}});
  }
  return j.dump();
}

std::string EvalResult::to_table() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "ODS %.4f (t=%.2f)\nOIS %.4f\nAP  %.4f\n", ods, ods_threshold, ois, ap);
  return buf;
}

}  // namespace amh
