// Copyright 2026 The RelBert Authors.
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

// Central finite-difference gradient checks in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "relbert/tensor.hpp"
#include "relbert/util.hpp"

namespace relbert::testing {

using DTensor = BasicTensor<double>;

inline DTensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> data(shape_numel(shape));
  for (auto& x : data) x = scale * standard_normal(rng);
  return DTensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// One scalar coordinate of a leaf tensor.
struct Coordinate {
  DTensor tensor;
  std::size_t index = 0;
};

inline std::vector<Coordinate> all_coordinates(const std::vector<DTensor>& leaves) {
  std::vector<Coordinate> out;
  for (const auto& t : leaves) {
    for (std::size_t i = 0; i < t.numel(); ++i) out.push_back({t, i});
  }
  return out;
}

struct GradientComparison {
  std::vector<double> analytic;
  std::vector<double> numeric;

  // ||analytic - numeric|| / max(||analytic||, ||numeric||); 0 when both vanish.
  double relative_error() const {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::sqrt(std::max(na, nn));
    return denom == 0 ? 0.0 : std::sqrt(diff) / denom;
  }
};

// Gradient of the scalar `loss()` at `coords` by backward() and by central
// differences with step h.
inline GradientComparison compare_gradients(const std::vector<Coordinate>& coords,
                                            const std::function<DTensor()>& loss, double h = 1e-3) {
  for (auto c : coords) c.tensor.clear_grad();
  backward(loss());
  GradientComparison out;
  for (auto c : coords) {
    out.analytic.push_back(c.tensor.has_grad() ? c.tensor.grad()[c.index] : 0.0);
    const double saved = c.tensor[c.index];
    c.tensor[c.index] = saved + h;
    const double up = loss().item();
    c.tensor[c.index] = saved - h;
    const double down = loss().item();
    c.tensor[c.index] = saved;
    out.numeric.push_back((up - down) / (2 * h));
  }
  return out;
}

}  // namespace relbert::testing
