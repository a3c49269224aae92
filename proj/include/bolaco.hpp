// Copyright 2026 The Bolaco Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Umbrella header.

#ifndef BOLACO_BOLACO_HPP
#define BOLACO_BOLACO_HPP

#include "bolaco/allocation.hpp"
#include "bolaco/checkpoint.hpp"
#include "bolaco/compress.hpp"
#include "bolaco/covariance.hpp"
#include "bolaco/data.hpp"
#include "bolaco/error.hpp"
#include "bolaco/factorize.hpp"
#include "bolaco/linalg.hpp"
#include "bolaco/model.hpp"
#include "bolaco/posttrain.hpp"
#include "bolaco/random.hpp"
#include "bolaco/search.hpp"
#include "bolaco/surrogate.hpp"
#include "bolaco/tensor_bundle.hpp"

#endif  // BOLACO_BOLACO_HPP
