#pragma once

// Spiking AlexNet shared by the template and search branches.

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ssfc/boxes.hpp"
#include "ssfc/conv.hpp"
#include "ssfc/snn.hpp"

namespace ssfc {

struct BackboneArch {
  static constexpr std::size_t kLayers = 5;
  static constexpr std::size_t kPoolKernel = 3;
  static constexpr std::size_t kPoolStride = 2;

  static constexpr std::array<ConvSpec, kLayers> convs{{
      {3, 96, 11, 11, 2, 0, 1},
      {96, 256, 5, 5, 1, 0, 2},
      {256, 384, 3, 3, 1, 0, 1},
      {384, 384, 3, 3, 1, 0, 2},
      {384, 256, 3, 3, 1, 0, 2},
  }};
  static constexpr std::array<bool, kLayers> pool_after{true, true, false, false, false};

  static constexpr std::size_t kOutChannels = 256;

  static std::size_t feature_size(std::size_t input) {
    if (input == static_cast<std::size_t>(kTemplateSize)) return 6;
    if (input == static_cast<std::size_t>(kSearchSize)) return 28;
    throw ShapeError("backbone: unsupported input size " + std::to_string(input) + " (supported: 127, 303)");
  }
};

enum class FeatureSource { kTemplate, kSearch };

template <typename T>
struct FeatureMap {
  Var<T> rates;  // [B, 256, 6, 6] or [B, 256, 28, 28], values in [0, 1]
  FeatureSource source = FeatureSource::kTemplate;
};

template <typename T>
struct ConvParams {
  std::string name;
  ConvSpec spec;
  Var<T> weight;
  Var<T> bias;

  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

/// One row of a forward shape trace.
struct TraceEntry {
  std::string layer;
  Shape shape;
  std::size_t params = 0;
  double mean = 0;  // mean activation (spike density after IF layers)
};

/// Centred uniform init with bound 1/sqrt(fan_in), for weights and biases.
template <typename T>
ConvParams<T> make_conv(std::string name, const ConvSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const std::size_t fan_in = (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<T> w(spec.weight_shape()), b(spec.bias_shape());
  for (auto& v : w.data()) v = static_cast<T>(u(rng));
  for (auto& v : b.data()) v = static_cast<T>(u(rng));
  return {std::move(name), spec, Var<T>::parameter(std::move(w)), Var<T>::parameter(std::move(b))};
}

template <typename T>
class Backbone {
 public:
  Backbone() = default;

  Backbone(const IFConfig& if_cfg, std::mt19937_64& rng) : if_cfg_(if_cfg) {
    if_cfg_.validate();
    for (std::size_t i = 0; i < BackboneArch::kLayers; ++i) {
      layers_[i] = make_conv<T>("conv" + std::to_string(i + 1), BackboneArch::convs[i], rng);
    }
  }

  const IFConfig& if_config() const { return if_cfg_; }
  void set_if_config(const IFConfig& cfg) {
    cfg.validate();
    if_cfg_ = cfg;
  }

  std::array<ConvParams<T>, BackboneArch::kLayers>& layers() { return layers_; }
  const std::array<ConvParams<T>, BackboneArch::kLayers>& layers() const { return layers_; }

  std::array<std::size_t, BackboneArch::kLayers> count_parameters() const {
    std::array<std::size_t, BackboneArch::kLayers> counts{};
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] = layers_[i].parameter_count();
    return counts;
  }

  /// images [B, 3, S, S] with S in {127, 303} -> firing rates [B, 256, f, f].
  ///
  /// Direct coding feeds the same image at every step, and conv1 of a repeated
  /// input is the repeated conv1 output, so conv1 runs once and its currents
  /// are replicated over the T steps before the first IF layer.
  FeatureMap<T> extract(const Var<T>& images, std::size_t steps, std::vector<TraceEntry>* trace = nullptr) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != s[3]) {
      throw ShapeError("backbone: expected images [B, 3, S, S], got " + to_string(s));
    }
    BackboneArch::feature_size(s[2]);
    if (steps < 1) throw Error("backbone: T must be >= 1");

    auto record = [trace](const std::string& layer, const Var<T>& v, std::size_t params = 0) {
      if (!trace) return;
      double m = 0;
      for (const auto& e : v.value().data()) m += static_cast<double>(e);
      trace->push_back({layer, v.shape(), params, m / static_cast<double>(v.size())});
    };

    Var<T> x = conv2d(images, layers_[0].weight, layers_[0].bias, layers_[0].spec, layers_[0].name);
    x = repeat_leading(x, steps);
    record("Conv2d", x, layers_[0].parameter_count());
    return finish(x, record, s[2] == kTemplateSize ? FeatureSource::kTemplate : FeatureSource::kSearch);
  }

  /// Same network without the conv1 shortcut: encode_direct then conv1 on
  /// every time step. Used to check the shortcut.
  FeatureMap<T> extract_reference(const Var<T>& images, std::size_t steps) const {
    BackboneArch::feature_size(images.shape().at(2));
    Var<T> x = encode_direct(images, steps);
    x = conv2d(x, layers_[0].weight, layers_[0].bias, layers_[0].spec, layers_[0].name);
    auto none = [](const std::string&, const Var<T>&, std::size_t = 0) {};
    return finish(x, none, images.shape()[2] == kTemplateSize ? FeatureSource::kTemplate : FeatureSource::kSearch);
  }

  /// Rescales each layer's weight and bias, first to last, so the mean firing
  /// rate of its IF layer on `images` is close to `target`. Returns the gains.
  /// The plain fan-in init leaves deep layers silent.
  std::array<double, BackboneArch::kLayers> balance_rates(const Var<T>& images, std::size_t steps, double target) {
    if (!(target > 0 && target < 1)) throw Error("balance_rates: target rate must be in (0, 1)");
    NoGradGuard no_grad;
    std::array<double, BackboneArch::kLayers> gains{};
    Var<T> x = repeat_leading(images, steps);
    for (std::size_t i = 0; i < BackboneArch::kLayers; ++i) {
      auto& l = layers_[i];
      const Var<T> current = conv2d(x, l.weight, l.bias, l.spec, l.name);
      auto rate_at = [&](double g) {
        const Var<T> s = if_neuron(scale(current, static_cast<T>(g)), if_cfg_);
        double m = 0;
        for (const auto& v : s.value().data()) m += static_cast<double>(v);
        return m / static_cast<double>(s.size());
      };
      double lo = -6, hi = 8;  // log gain
      if (rate_at(std::exp(hi)) < target) {
        lo = hi;
      } else {
        for (int it = 0; it < 24; ++it) {
          const double mid = 0.5 * (lo + hi);
          (rate_at(std::exp(mid)) < target ? lo : hi) = mid;
        }
      }
      const double g = std::exp(hi);
      gains[i] = g;
      for (auto& v : l.weight.mutable_value().data()) v = static_cast<T>(v * g);
      for (auto& v : l.bias.mutable_value().data()) v = static_cast<T>(v * g);
      x = if_neuron(conv2d(x, l.weight, l.bias, l.spec, l.name), if_cfg_);
      if (BackboneArch::pool_after[i]) x = maxpool2d(x, BackboneArch::kPoolKernel, BackboneArch::kPoolStride);
    }
    return gains;
  }

  std::vector<Var<T>> parameters() const {
    std::vector<Var<T>> out;
    for (const auto& l : layers_) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

 private:
  template <typename Record>
  FeatureMap<T> finish(Var<T> x, Record& record, FeatureSource source) const {
    for (std::size_t i = 0; i < BackboneArch::kLayers; ++i) {
      if (i > 0) {
        x = conv2d(x, layers_[i].weight, layers_[i].bias, layers_[i].spec, layers_[i].name);
        record("Conv2d", x, layers_[i].parameter_count());
      }
      x = if_neuron(x, if_cfg_, "if" + std::to_string(i + 1));
      record("IFNode", x);
      if (BackboneArch::pool_after[i]) {
        x = maxpool2d(x, BackboneArch::kPoolKernel, BackboneArch::kPoolStride, "pool" + std::to_string(i + 1));
        record("MaxPool2d", x);
      }
    }
    Var<T> rates = firing_rate(x);
    record("FiringRate", rates);
    return {rates, source};
  }

  IFConfig if_cfg_{};
  std::array<ConvParams<T>, BackboneArch::kLayers> layers_{};
};

}  // namespace ssfc
