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

#include "relbert/baselines.hpp"
#include "relbert/checkpoint.hpp"
#include "relbert/corpus.hpp"
#include "relbert/csv.hpp"
#include "relbert/error.hpp"
#include "relbert/eval.hpp"
#include "relbert/experiment.hpp"
#include "relbert/model.hpp"
#include "relbert/relational.hpp"
#include "relbert/synth.hpp"
#include "relbert/tensor.hpp"
#include "relbert/training.hpp"
#include "relbert/util.hpp"
