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

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nsearch/rng.h"

namespace nsearch {

enum class Activation : std::uint8_t { kTanh = 0, kSoftplus = 1, kPrelu = 2 };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

// Dense-layer initialization. kXavier draws weights from
// U(-sqrt(6/(in+out)), +sqrt(6/(in+out))) with zero biases; kFanIn draws
// weights and biases from U(-1/sqrt(in), +1/sqrt(in)).
enum class InitScheme : std::uint8_t { kXavier = 0, kFanIn = 1 };

std::string_view init_scheme_name(InitScheme s);
InitScheme parse_init_scheme(std::string_view name);

// Named slice of the flat parameter vector.
struct ParamSegment {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  // Bound for uniform(-b, b) initialization.
  double init_bound = 0.0;
  // Constant initial value used when init_bound == 0.
  double init_value = 0.0;
};

class ParamLayout {
 public:
  std::size_t add(std::string name, std::size_t size, double init_bound, double init_value = 0.0);
  const std::vector<ParamSegment>& segments() const noexcept { return segments_; }
  const ParamSegment& find(std::string_view name) const;
  std::size_t total() const noexcept { return total_; }
  void initialize(std::span<double> params, Rng& rng) const;

 private:
  std::vector<ParamSegment> segments_;
  std::size_t total_ = 0;
};

// Fully connected layer y = act(W x + b), W stored row-major as out x in.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight = 0;  // offset of W
  std::size_t bias = 0;    // offset of b
  std::size_t alpha = 0;   // offset of the PReLU slope, when used
  bool activated = true;
};

// Per-layer inputs and pre-activations recorded by a forward pass; reused
// across calls to avoid reallocating.
struct MlpTrace {
  std::vector<std::vector<double>> inputs;  // inputs[l] feeds layer l
  std::vector<std::vector<double>> pre;     // pre[l] = W x + b of layer l
  std::vector<double> output;
};

// Stack of dense layers; every layer but the last is followed by the
// activation.
class Mlp {
 public:
  Mlp() = default;
  static Mlp create(ParamLayout& layout, const std::string& prefix, std::size_t in_dim,
                    std::span<const std::size_t> widths, Activation act,
                    InitScheme init = InitScheme::kXavier);

  std::size_t in_dim() const noexcept { return layers_.empty() ? 0 : layers_.front().in; }
  std::size_t out_dim() const noexcept { return layers_.empty() ? 0 : layers_.back().out; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  Activation activation() const noexcept { return act_; }

  void forward(std::span<const double> params, std::span<const double> x, MlpTrace& trace) const;
  // Backpropagates `dout` through the recorded trace. `dx` (size in_dim) is
  // overwritten when non-empty; `grad` (full parameter size) is accumulated
  // into when non-empty.
  void backward(std::span<const double> params, const MlpTrace& trace,
                std::span<const double> dout, std::span<double> dx, std::span<double> grad) const;

 private:
  std::vector<DenseLayer> layers_;
  Activation act_ = Activation::kTanh;
};

}  // namespace nsearch
