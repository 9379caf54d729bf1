/* Copyright 2026 The PTM-ST Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include "ptmst/analysis.hpp"
#include "ptmst/config.hpp"
#include "ptmst/data.hpp"
#include "ptmst/distill.hpp"
#include "ptmst/dual.hpp"
#include "ptmst/errors.hpp"
#include "ptmst/eval.hpp"
#include "ptmst/matrix.hpp"
#include "ptmst/model.hpp"
#include "ptmst/param_vector.hpp"
#include "ptmst/plan.hpp"
#include "ptmst/retrieval.hpp"
#include "ptmst/rng.hpp"
#include "ptmst/serialize.hpp"
#include "ptmst/similarity.hpp"
#include "ptmst/trajectory.hpp"
