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

// Finite-difference check of the whole encoder (d_model 8, two layers) in
// double precision.

#include <vector>

#include "databases.hpp"
#include "gradcheck.hpp"
#include "relbert/model.hpp"
#include "relbert/training.hpp"

namespace relbert::testing {

inline constexpr double kModelTolerance = 1e-3;

inline ModelConfig gradcheck_model_config(std::uint64_t seed, bool shared_space) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.ff_dim = 16;
  c.max_len = 32;
  c.shared_space = shared_space;
  c.seed = seed;
  return c;
}

// Relative error over `coordinates` random parameter coordinates of the total
// loss on one masked NSP batch. Weights are perturbed away from the init scale
// so that attention and layer norm leave their near-linear regime.
inline double model_gradient_error(std::uint64_t seed, bool shared_space, std::size_t coordinates = 20) {
  const auto db = people_and_films();
  const auto vocab = build_vocab(db, 1);
  const auto params = cast_params<double>(init_params<float>(gradcheck_model_config(seed, shared_space), vocab));
  Rng rng = derive_rng(seed, 77, shared_space ? 1 : 0);
  for (auto& [name, t] : params.named()) {
    auto tensor = t;
    for (auto& x : tensor.data()) x += 0.3 * standard_normal(rng);
  }
  TrainConfig tc;
  tc.seed = seed;
  tc.mask_prob = 0.3;
  const auto batch = make_batches(epoch_items(db, vocab, tc, 0), 64, 32).front();
  const auto named = params.named();
  std::vector<Coordinate> coords;
  while (coords.size() < coordinates) {
    const auto& t = named[uniform_index(rng, named.size())].second;
    coords.push_back({t, uniform_index(rng, t.numel())});
  }
  return compare_gradients(coords, [&] { return compute_loss(batch, params, vocab).total; }).relative_error();
}

}  // namespace relbert::testing
