/* Copyright 2026 The dtrsim Authors. All Rights Reserved.

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

// Measurements behind the linear-network and adversary bounds.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dtrsim/generators.hpp"
#include "dtrsim/runtime.hpp"
#include "json.hpp"

namespace dtr {

// Longest run of consecutive evicted entries that is closed on the right by
// a resident entry. `evicted[k]` describes the k-th surviving forward tensor;
// the always-resident t0 closes runs on the left.
inline int max_closed_gap(const std::vector<bool>& evicted) {
  int best = 0, run = 0;
  for (bool e : evicted) {
    if (e) {
      ++run;
    } else {
      best = std::max(best, run);
      run = 0;
    }
  }
  return best;
}

inline Bytes linear_budget(int n) {
  return 2 * static_cast<Bytes>(std::ceil(std::sqrt(static_cast<double>(n))));
}

struct LinearRun {
  int n = 0;
  Bytes budget = 0;
  SimOutcome outcome;
  // total_compute and rematerializations when tN was produced.
  Time forward_compute = -1;
  std::uint64_t forward_remats = 0;
  int forward_gap = 0;
  int backward_gap = 0;
  double forward_gap_bound = 0;
  double backward_gap_bound = 0;

  Time total() const { return outcome.telemetry.total_compute; }
  bool ok() const { return outcome.status == Status::kOk; }
  bool forward_exact() const { return forward_compute == n && forward_remats == 0; }
  bool forward_gap_ok() const { return forward_gap <= forward_gap_bound; }
  bool backward_gap_ok() const { return backward_gap <= backward_gap_bound; }

  nlohmann::json to_json() const {
    return {{"N", n},
            {"B", budget},
            {"status", status_name(outcome.status)},
            {"total_compute", total()},
            {"overhead", static_cast<double>(total()) / (2.0 * n)},
            {"forward_compute", forward_compute},
            {"forward_gap", forward_gap},
            {"forward_gap_bound", forward_gap_bound},
            {"backward_gap", backward_gap},
            {"backward_gap_bound", backward_gap_bound}};
  }
};

// Replays the linear network at B = 2⌈√N⌉ under compute-memory and banish,
// measuring the evicted gaps along the forward chain at every step.
inline LinearRun run_linear(int n, bool audit = false,
                            DeallocPolicy policy = DeallocPolicy::kBanish,
                            HeuristicSpec heuristic = HeuristicSpec::of(HeuristicKind::kComputeMemory)) {
  LinearRun r;
  r.n = n;
  r.budget = linear_budget(n);
  r.forward_gap_bound = 2.0 * (n - 2) / static_cast<double>(r.budget - 1);
  r.backward_gap_bound = 4.0 * (n - 2) / static_cast<double>(r.budget - 1);
  OpLog log = gen_linear(n);
  bool forward_done = false;
  const std::string last_forward = "t" + std::to_string(n);

  ReplayOptions opts;
  opts.audit = audit;
  opts.observer = [&](const Replay& rep, std::size_t) {
    if (!forward_done && !rep.lookup(last_forward)) return;
    const auto& g = rep.runtime().graph();
    std::vector<bool> evicted;
    for (int k = 1; k <= n; ++k) {
      auto id = rep.lookup("t" + std::to_string(k));
      const Storage& st = g.storage_of(*id);
      if (st.banished) continue;
      evicted.push_back(!st.resident);
    }
    int gap = max_closed_gap(evicted);
    if (!forward_done) {
      forward_done = true;
      Telemetry t = rep.runtime().telemetry();
      r.forward_compute = t.total_compute;
      r.forward_remats = t.rematerialization_count;
      r.forward_gap = gap;
      return;
    }
    r.backward_gap = std::max(r.backward_gap, gap);
  };
  r.outcome = run(log, r.budget, heuristic, policy, opts);
  return r;
}

}  // namespace dtr
