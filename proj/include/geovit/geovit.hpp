// Copyright 2026 The geovit Authors. All Rights Reserved.
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

// Umbrella header.

#include "geovit/config.hpp"
#include "geovit/error.hpp"
#include "geovit/formats.hpp"
#include "geovit/geometry.hpp"
#include "geovit/gradcheck.hpp"
#include "geovit/inference.hpp"
#include "geovit/metrics.hpp"
#include "geovit/ops.hpp"
#include "geovit/refinement.hpp"
#include "geovit/serialize.hpp"
#include "geovit/synthetic.hpp"
#include "geovit/tensor.hpp"
#include "geovit/tiling.hpp"
#include "geovit/training.hpp"
#include "geovit/visualize.hpp"
#include "geovit/vit.hpp"
