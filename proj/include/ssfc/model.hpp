#pragma once

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ssfc/head.hpp"

namespace ssfc {

struct ModelConfig {
  std::size_t time_steps = 6;
  IFConfig if_config{};
  QualityKind quality_kind = QualityKind::kPSS;
};

/// Spiking backbone + Siamese head with shared parameters for both branches.
template <typename T>
class SiameseModel {
 public:
  SiameseModel() = default;

  SiameseModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    std::mt19937_64 rng(seed);
    backbone_ = Backbone<T>(cfg.if_config, rng);
    head_ = HeadParams<T>::init(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  void set_config(const ModelConfig& cfg) {
    cfg_ = cfg;
    backbone_.set_if_config(cfg.if_config);
  }

  Backbone<T>& backbone() { return backbone_; }
  const Backbone<T>& backbone() const { return backbone_; }
  HeadParams<T>& head() { return head_; }
  const HeadParams<T>& head() const { return head_; }

  FeatureMap<T> features(const Var<T>& images) const { return backbone_.extract(images, cfg_.time_steps); }

  HeadMaps<T> forward(const FeatureMap<T>& z, const FeatureMap<T>& x) const {
    return head_forward(cross_correlate(z, x), head_);
  }

  HeadMaps<T> forward(const Var<T>& templates, const Var<T>& searches) const {
    return forward(features(templates), features(searches));
  }

  /// Every parameter in checkpoint order, with its array name.
  std::vector<std::pair<std::string, Var<T>>> named_parameters() {
    std::vector<std::pair<std::string, Var<T>>> out;
    for (auto& l : backbone_.layers()) {
      out.emplace_back(l.name + ".weight", l.weight);
      out.emplace_back(l.name + ".bias", l.bias);
    }
    for (auto* c : head_.convs()) {
      out.emplace_back(c->name + ".weight", c->weight);
      out.emplace_back(c->name + ".bias", c->bias);
    }
    return out;
  }

  std::vector<Var<T>> parameters() {
    std::vector<Var<T>> out;
    for (auto& [name, v] : named_parameters()) out.push_back(v);
    return out;
  }

 private:
  ModelConfig cfg_{};
  Backbone<T> backbone_;
  HeadParams<T> head_;
};

}  // namespace ssfc
