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

// End-to-end run at toy size: data, experts, two-phase distillation, and
// retrieval of the distilled subsets against a random coreset.

#include <iomanip>
#include <iostream>

#include "ptmst/ptmst.hpp"

using namespace ptmst;

int main() {
  GeneratorConfig gen;
  gen.seed = 7;
  const auto train = generate_pair_dataset(gen);
  gen.split = Split::test;
  gen.num_pairs = 500;
  const auto test = generate_pair_dataset(gen);

  TeacherConfig tc;
  std::vector<TeacherTrajectory> buffer;
  for (std::size_t k = 0; k < 3; ++k) {
    tc.seed = derive_seed(gen.seed, "expert", k);
    buffer.push_back(train_teacher(train, tc, std::to_string(k)));
  }

  DistillPlan plan;
  plan.master_seed = gen.seed;
  PhaseConfig early, late;
  early.iterations = late.iterations = 100;
  late.min_start_epoch = 1;
  late.max_start_epoch = 3;
  late.interpolation_endpoint = 8;
  plan.phases = {early, late};
  const auto phases = distill_all(train, plan, buffer);

  std::vector<StudentSubset> subsets;
  for (const auto& r : phases) {
    const auto& log = r.log;
    std::cout << "phase " << r.distilled.phase << ": first loss " << log.front().loss << ", last loss "
              << log.back().loss << "\n";
    subsets.push_back(StudentSubset::from_synthetic(r.distilled));
  }

  EvalConfig ec;
  const auto distilled = train_student_progressive(subsets, ec, test, gen.seed);
  const auto rows = coreset_random(train.size(), plan.total_queries(), gen.seed);
  const auto random = train_student_progressive({StudentSubset::from_pairs(train.subset(rows))}, ec, test, gen.seed);

  std::cout << std::fixed << std::setprecision(2);
  std::cout << "distilled mean R@K " << distilled.mean() << "\n";
  std::cout << "random coreset mean R@K " << random.mean() << "\n";
  std::cout << distilled.to_json().dump() << "\n";
}
