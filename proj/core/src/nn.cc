// Copyright 2026 The nsearch Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "nsearch/nn.h"

#include <algorithm>
#include <cmath>

#include "nsearch/common.h"
#include "nsearch/matrix.h"

namespace nsearch {
namespace {

double activate(Activation act, double z, double alpha) {
  switch (act) {
    case Activation::kTanh: return std::tanh(z);
    case Activation::kSoftplus: return softplus(z);
    case Activation::kPrelu: return z > 0 ? z : alpha * z;
  }
  return z;
}

double activation_slope(Activation act, double z, double y, double alpha) {
  switch (act) {
    case Activation::kTanh: return 1.0 - y * y;
    case Activation::kSoftplus: return sigmoid(z);
    case Activation::kPrelu: return z > 0 ? 1.0 : alpha;
  }
  return 1.0;
}

}  // namespace

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kSoftplus: return "softplus";
    case Activation::kPrelu: return "prelu";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "softplus") return Activation::kSoftplus;
  if (name == "prelu") return Activation::kPrelu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view init_scheme_name(InitScheme s) {
  return s == InitScheme::kXavier ? "xavier" : "fan-in";
}

InitScheme parse_init_scheme(std::string_view name) {
  if (name == "xavier") return InitScheme::kXavier;
  if (name == "fan-in") return InitScheme::kFanIn;
  throw ConfigError("unknown init scheme '" + std::string(name) + "'");
}

std::size_t ParamLayout::add(std::string name, std::size_t size, double init_bound,
                             double init_value) {
  const std::size_t offset = total_;
  segments_.push_back(ParamSegment{std::move(name), offset, size, init_bound, init_value});
  total_ += size;
  return offset;
}

const ParamSegment& ParamLayout::find(std::string_view name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  throw Error("no parameter segment named '" + std::string(name) + "'");
}

void ParamLayout::initialize(std::span<double> params, Rng& rng) const {
  for (const auto& s : segments_) {
    for (std::size_t i = 0; i < s.size; ++i) {
      params[s.offset + i] =
          s.init_bound > 0 ? rng.uniform(-s.init_bound, s.init_bound) : s.init_value;
    }
  }
}

Mlp Mlp::create(ParamLayout& layout, const std::string& prefix, std::size_t in_dim,
                std::span<const std::size_t> widths, Activation act, InitScheme init) {
  Mlp mlp;
  mlp.act_ = act;
  std::size_t in = in_dim;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    DenseLayer layer;
    layer.in = in;
    layer.out = widths[l];
    layer.activated = l + 1 < widths.size();
    const double fan_in = 1.0 / std::sqrt(static_cast<double>(in));
    const double xavier = std::sqrt(6.0 / static_cast<double>(in + widths[l]));
    const std::string name = prefix + std::to_string(l);
    if (init == InitScheme::kXavier) {
      layer.weight = layout.add(name + ".w", layer.out * layer.in, xavier);
      layer.bias = layout.add(name + ".b", layer.out, 0.0, 0.0);
    } else {
      layer.weight = layout.add(name + ".w", layer.out * layer.in, fan_in);
      layer.bias = layout.add(name + ".b", layer.out, fan_in);
    }
    if (layer.activated && act == Activation::kPrelu) {
      layer.alpha = layout.add(name + ".alpha", 1, 0.0, 0.25);
    }
    mlp.layers_.push_back(layer);
    in = widths[l];
  }
  return mlp;
}

void Mlp::forward(std::span<const double> params, std::span<const double> x,
                  MlpTrace& trace) const {
  const std::size_t n = layers_.size();
  trace.inputs.resize(n);
  trace.pre.resize(n);
  trace.inputs[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < n; ++l) {
    const DenseLayer& layer = layers_[l];
    const auto& in = trace.inputs[l];
    auto& pre = trace.pre[l];
    pre.resize(layer.out);
    const double* w = params.data() + layer.weight;
    for (std::size_t o = 0; o < layer.out; ++o) {
      double s = params[layer.bias + o];
      const double* row = w + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) s += row[i] * in[i];
      pre[o] = s;
    }
    auto& out = l + 1 < n ? trace.inputs[l + 1] : trace.output;
    out.resize(layer.out);
    if (layer.activated) {
      const double alpha = act_ == Activation::kPrelu ? params[layer.alpha] : 0.0;
      for (std::size_t o = 0; o < layer.out; ++o) out[o] = activate(act_, pre[o], alpha);
    } else {
      std::copy(pre.begin(), pre.end(), out.begin());
    }
  }
}

void Mlp::backward(std::span<const double> params, const MlpTrace& trace,
                   std::span<const double> dout, std::span<double> dx,
                   std::span<double> grad) const {
  std::vector<double> delta(dout.begin(), dout.end());
  std::vector<double> next;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const DenseLayer& layer = layers_[l];
    const auto& in = trace.inputs[l];
    const auto& pre = trace.pre[l];
    if (layer.activated) {
      const auto& out = l + 1 < layers_.size() ? trace.inputs[l + 1] : trace.output;
      const double alpha = act_ == Activation::kPrelu ? params[layer.alpha] : 0.0;
      for (std::size_t o = 0; o < layer.out; ++o) {
        if (!grad.empty() && act_ == Activation::kPrelu && pre[o] <= 0) {
          grad[layer.alpha] += delta[o] * pre[o];
        }
        delta[o] *= activation_slope(act_, pre[o], out[o], alpha);
      }
    }
    const double* w = params.data() + layer.weight;
    if (!grad.empty()) {
      double* gw = grad.data() + layer.weight;
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        grad[layer.bias + o] += d;
        double* grow = gw + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) grow[i] += d * in[i];
      }
    }
    if (l == 0 && dx.empty()) break;
    next.assign(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = w + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) next[i] += d * row[i];
    }
    delta.swap(next);
  }
  if (!dx.empty()) std::copy(delta.begin(), delta.end(), dx.begin());
}

}  // namespace nsearch
