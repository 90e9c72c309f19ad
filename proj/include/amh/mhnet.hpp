#pragma once

// Multi-scale hierarchical network: a small conv front-end, a deconv/conv/max-pool decomposition
// of each tapped layer, a first-level AG-CRF inside each layer, a second-level AG-CRF across
// layers, one sigmoid head per CRF output and an averaged final map.

#include "amh/agcrf.hpp"
#include "amh/kv_config.hpp"
#include "amh/tape.hpp"

#include <optional>
#include <string>
#include <vector>

namespace amh {

struct LayerSpec {
  Index channels = 4;
  Index kernel = 3;
  Index stride = 1;
};

struct FrontEndConfig {
  Index in_channels = 1;
  std::vector<LayerSpec> layers{{4, 3, 1}, {4, 3, 2}, {4, 3, 2}, {4, 3, 2}};
  std::vector<int> taps{2, 3, 4};  // 1-based layer indices
  // the network sees (image - input_mean) * input_scale
  double input_mean = 0.5;
  double input_scale = 4.0;
};

struct BranchConfig {
  Index deconv_kernel = 4;
  Index deconv_stride = 2;
  Index conv_kernel = 3;
  Index pool_window = 2;
};

struct HierarchyConfig {
  BranchConfig branches;
  Index fused_channels = 4;
  Index crf_kernel = 3;
  int crf_iterations = 1;
  GateSign sign = GateSign::plus;
  double unary_a = 0.1;
  bool learnable_a = false;
  /// Half-width of the uniform init for CRF kernels; 0 starts from the unary-only regime.
  double crf_init_scale = 0.0;
};

enum class Ablation { baseline, no_agcrf, plain_crf, no_deep_sup, plag, flag };

const char* to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

struct ModelConfig {
  Ablation ablation = Ablation::flag;
  FrontEndConfig frontend;
  HierarchyConfig hierarchy;
  std::uint64_t init_seed = 1;

  Variant crf_variant() const;
  bool uses_crf() const { return ablation != Ablation::no_agcrf && ablation != Ablation::baseline; }
  bool hierarchical() const { return ablation != Ablation::baseline; }
  bool deep_supervision() const { return ablation != Ablation::no_deep_sup; }

  /// Deterministic key=value rendering; from_kv(to_text()) reproduces the config.
  std::string to_text() const;
  static ModelConfig from_kv(const KvConfig& kv);
};

/// Table-3 style model variants.
ModelConfig build_ablation(const std::string& name, ModelConfig base = {});

struct Parameter {
  std::string name;
  Tensor value;
  std::optional<ConvSpec> spec;  // set for kernels
};

class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value, std::optional<ConvSpec> spec = std::nullopt);
  std::size_t index(const std::string& name) const;
  const Parameter& operator[](std::size_t i) const { return items_[i]; }
  Parameter& operator[](std::size_t i) { return items_[i]; }
  const Parameter& at(const std::string& name) const { return items_[index(name)]; }
  Parameter& at(const std::string& name) { return items_[index(name)]; }
  std::size_t size() const { return items_.size(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }

 private:
  std::vector<Parameter> items_;
};

struct PredictionSet {
  std::vector<Tensor> heads;
  Tensor fused;
};

struct DecomposedLayer {
  Var deconv;
  Var conv;
  Var pool;
  Tensor conv_raw;  // before alignment
  Tensor pool_raw;
};

class AmhNet {
 public:
  explicit AmhNet(ModelConfig cfg);

  struct Forward {
    std::vector<Var> heads;
    Var fused;
    std::vector<Var> params;  // parallel to parameters()
  };

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  Forward forward(Tape& tape, const Tensor& image) const;
  PredictionSet predict(const Tensor& image) const;
  std::size_t head_count() const;
  /// Image sides must be multiples of this.
  Index size_multiple() const;

  // Pieces of the forward pass, exposed for tests. `bound` is Forward::params of the same tape.
  DecomposedLayer three_way_decompose(Tape& tape, Var tap, std::size_t layer, const std::vector<Var>& bound) const;
  Var level1_fuse(Tape& tape, const DecomposedLayer& d, std::size_t layer, const std::vector<Var>& bound) const;
  Var level2_fuse(Tape& tape, const std::vector<Var>& refined, const std::vector<Var>& bound) const;
  std::vector<Var> bind(Tape& tape) const;

 private:
  void build();
  Var param(const std::vector<Var>& bound, const std::string& name) const;
  Var conv(const std::vector<Var>& bound, const std::string& name, Var x) const;
  Var deconv(const std::vector<Var>& bound, const std::string& name, Var x) const;
  Var fuse_scales(Tape& tape, const std::vector<Var>& scales, const std::string& prefix,
                  const std::vector<Var>& bound) const;
  Var head(Tape& tape, Var features, const std::string& prefix, Index upsample, const std::vector<Var>& bound) const;
  std::vector<Index> tap_strides() const;

  ModelConfig cfg_;
  ParameterSet params_;
};

/// Fixed bilinear upsampling kernel for `factor` (single channel, kernel 2*factor, stride factor).
ConvKernel bilinear_kernel(Index factor, Index channels = 1);

}  // namespace amh
