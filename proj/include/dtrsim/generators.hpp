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

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtrsim/oplog.hpp"
#include "dtrsim/runtime.hpp"
#include "json.hpp"

namespace dtr {

namespace detail {

inline void emit_call(std::vector<Instruction>& out, std::string op, std::vector<std::string> in,
                      const std::string& name, Time cost, Bytes size,
                      std::optional<std::string> alias = std::nullopt) {
  out.push_back(instr::Call{std::move(in), {name}, cost, std::move(op)});
  out.push_back(instr::Memory{name, size});
  out.push_back(instr::Alias{name, std::move(alias)});
}

}  // namespace detail

// Linear feedforward network with its backward pass. Forward tensors t1..tN
// (tk = fk(t(k-1))), gradients gN..g1 (gi from t(i-1) and g(i+1)). Unit cost
// and size; t0 is a zero-size constant. Each tensor is released right after
// its last use, except g1, which is the output.
inline OpLog gen_linear(int n) {
  if (n < 2) throw std::invalid_argument("gen_linear needs N >= 2");
  auto t = [](int k) { return "t" + std::to_string(k); };
  auto g = [](int k) { return "g" + std::to_string(k); };
  std::vector<Instruction> out;
  out.push_back(instr::Constant{t(0)});
  out.push_back(instr::Memory{t(0), 0});
  for (int k = 1; k <= n; ++k) {
    detail::emit_call(out, "f" + std::to_string(k), {t(k - 1)}, t(k), 1, 1);
  }
  out.push_back(instr::Release{t(n)});
  detail::emit_call(out, "fhat" + std::to_string(n), {t(n - 1)}, g(n), 1, 1);
  out.push_back(instr::Release{t(n - 1)});
  for (int i = n - 1; i >= 2; --i) {
    detail::emit_call(out, "fhat" + std::to_string(i), {t(i - 1), g(i + 1)}, g(i), 1, 1);
    out.push_back(instr::Release{t(i - 1)});
    out.push_back(instr::Release{g(i + 1)});
  }
  detail::emit_call(out, "fhat1", {g(2)}, g(1), 1, 1);
  out.push_back(instr::Release{g(2)});
  return make_log(std::move(out));
}

// Seeded random training-style DAG. The forward part has `nodes` nodes:
// node 0 is a nullary op, about one node in twenty is a small constant, and
// every other node consumes the previous non-constant node plus up to max_fanin - 1 skip
// inputs (mostly recent, some long-range). Some ops have two outputs or alias
// an input. With `backward`, a gradient op per differentiable forward node
// follows in reverse order; it reads the node's activation and the gradients
// of its consumers. Every name is released right after its last use except
// the outputs of the final op.
inline OpLog gen_random_dag(int nodes, int max_fanin, std::uint64_t seed, bool backward = true) {
  if (nodes < 1) throw std::invalid_argument("gen_random_dag needs at least one node");
  max_fanin = std::max(max_fanin, 1);
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  };
  auto chance = [&](double p) { return std::bernoulli_distribution(p)(rng); };

  struct Node {
    bool constant = false;
    std::vector<std::size_t> inputs;  // indexes into `names`
    std::vector<std::size_t> outputs;
    std::optional<std::size_t> alias_input;  // first output aliases inputs[k]
    Time cost = 1;
    std::vector<Bytes> sizes;
    std::string op;
  };
  std::vector<std::string> names;
  std::vector<Node> dag;
  std::vector<std::size_t> primary;  // first output of each forward node
  std::size_t backbone = 0;          // primary output of the latest non-constant node
  std::geometric_distribution<int> back(0.3);

  for (int i = 0; i < nodes; ++i) {
    Node node;
    node.op = "op" + std::to_string(i);
    std::string base = "n" + std::to_string(i);
    if (i > 1 && chance(0.05)) {
      node.constant = true;
    } else if (i > 0) {
      std::set<std::size_t> picked{backbone};
      int fanin = static_cast<int>(uniform(1, std::min<std::int64_t>(max_fanin, names.size())));
      for (int tries = 0; static_cast<int>(picked.size()) < fanin && tries < 8 * fanin; ++tries) {
        if (chance(0.1)) {
          picked.insert(static_cast<std::size_t>(uniform(0, names.size() - 1)));
        } else {
          std::size_t offset = std::min<std::size_t>(back(rng), names.size() - 1);
          picked.insert(names.size() - 1 - offset);
        }
      }
      node.inputs.assign(picked.begin(), picked.end());
      std::shuffle(node.inputs.begin(), node.inputs.end(), rng);
      if (chance(0.1)) {
        node.alias_input = static_cast<std::size_t>(uniform(0, node.inputs.size() - 1));
      }
    }
    node.cost = uniform(1, 10);
    int outs = (!node.constant && chance(0.1)) ? 2 : 1;
    for (int k = 0; k < outs; ++k) {
      node.outputs.push_back(names.size());
      names.push_back(k == 0 ? base : base + "_" + std::to_string(k));
      Bytes size = node.constant ? uniform(1, 2) : uniform(1, 16);
      node.sizes.push_back(k == 0 && node.alias_input ? 0 : size);
    }
    primary.push_back(node.outputs.front());
    if (!node.constant) backbone = node.outputs.front();
    dag.push_back(std::move(node));
  }

  if (backward && nodes > 1) {
    // consumers[i]: forward nodes reading node i's primary output.
    std::vector<std::vector<int>> consumers(nodes);
    std::vector<int> node_of(names.size());
    for (int i = 0; i < nodes; ++i) {
      for (std::size_t o : dag[i].outputs) node_of[o] = i;
    }
    for (int i = 0; i < nodes; ++i) {
      for (std::size_t in : dag[i].inputs) {
        int j = node_of[in];
        if (in == primary[j] && (consumers[j].empty() || consumers[j].back() != i)) {
          consumers[j].push_back(i);
        }
      }
    }
    std::vector<std::optional<std::size_t>> grad(nodes);
    for (int i = nodes - 1; i >= 1; --i) {
      if (dag[i].constant) continue;
      Node g;
      g.op = "grad" + std::to_string(i);
      g.inputs.push_back(primary[i]);
      for (int c : consumers[i]) {
        if (grad[c]) g.inputs.push_back(*grad[c]);
      }
      if (i != nodes - 1 && g.inputs.size() == 1) continue;  // no path to the loss
      g.cost = uniform(1, 10);
      g.outputs.push_back(names.size());
      grad[i] = names.size();
      names.push_back("g" + std::to_string(i));
      g.sizes.push_back(dag[i].sizes.front() > 0 ? dag[i].sizes.front() : uniform(1, 16));
      dag.push_back(std::move(g));
    }
  }

  const int ops = static_cast<int>(dag.size());
  std::vector<int> last_use(names.size(), -1);
  for (int i = 0; i < ops; ++i) {
    for (std::size_t in : dag[i].inputs) last_use[in] = i;
  }
  std::map<int, std::vector<std::size_t>> releases;
  for (int i = 0; i < ops; ++i) {
    for (std::size_t o : dag[i].outputs) {
      if (last_use[o] >= 0) {
        releases[last_use[o]].push_back(o);
      } else if (i != ops - 1) {
        releases[i].push_back(o);
      }
    }
  }

  std::vector<Instruction> out;
  for (int i = 0; i < ops; ++i) {
    const Node& node = dag[i];
    if (node.constant) {
      out.push_back(instr::Constant{names[node.outputs[0]]});
      out.push_back(instr::Memory{names[node.outputs[0]], node.sizes[0]});
    } else {
      instr::Call call;
      for (std::size_t in : node.inputs) call.inputs.push_back(names[in]);
      for (std::size_t o : node.outputs) call.outputs.push_back(names[o]);
      call.cost = node.cost;
      call.op = node.op;
      out.push_back(call);
      for (std::size_t k = 0; k < node.outputs.size(); ++k) {
        const std::string& name = names[node.outputs[k]];
        out.push_back(instr::Memory{name, node.sizes[k]});
        std::optional<std::string> src;
        if (k == 0 && node.alias_input) src = names[node.inputs[*node.alias_input]];
        out.push_back(instr::Alias{name, src});
      }
    }
    auto it = releases.find(i);
    if (it == releases.end()) continue;
    std::vector<std::size_t> rel = it->second;
    std::sort(rel.begin(), rel.end());
    for (std::size_t o : rel) out.push_back(instr::Release{names[o]});
  }
  return make_log(std::move(out));
}

struct AdversaryReport {
  int n = 0;
  Bytes budget = 0;
  std::string heuristic;
  Time dtr_cost = 0;
  Time static_cost = 0;
  double ratio = 0;
  // The revealed graph as a replayable log.
  OpLog log;

  nlohmann::json to_json() const {
    return {{"N", n},
            {"B", budget},
            {"heuristic", heuristic},
            {"dtr_cost", dtr_cost},
            {"static_cost", static_cost},
            {"ratio", ratio}};
  }
};

// Online adversary. t0 is a pinned zero-size constant with B children, each
// starting a path. Every later node extends the lowest-index path whose
// nodes are all evicted (path 0 when none is), so that DTR must recompute the
// whole path. Unit costs and sizes; deallocation policy ignore. With `audit`,
// the runtime state is audited after every revealed node.
inline AdversaryReport run_adversary(int n, Bytes budget, const HeuristicSpec& heuristic,
                                     bool audit = false) {
  if (budget < 2 || budget >= n) throw std::invalid_argument("adversary needs 2 <= B < N");
  Runtime rt(budget, heuristic, DeallocPolicy::kIgnore);
  std::vector<Instruction> log;
  TensorId root = rt.constant(0);
  log.push_back(instr::Constant{"t0"});
  log.push_back(instr::Memory{"t0", 0});

  struct Path {
    std::vector<TensorId> nodes;
    std::string tip;
  };
  std::vector<Path> paths;
  const OutputSpec unit{1, std::nullopt};

  for (int step = 0; step < n; ++step) {
    const std::string name = "n" + std::to_string(step + 1);
    if (step < budget) {
      auto out = rt.call("reveal", 1, std::span(&root, 1), std::span(&unit, 1));
      detail::emit_call(log, "reveal", {"t0"}, name, 1, 1);
      paths.push_back({{out[0]}, name});
      if (audit) rt.audit(/*expect_unlocked=*/true);
      continue;
    }
    std::size_t target = 0;
    for (std::size_t p = 0; p < paths.size(); ++p) {
      bool all_evicted = std::all_of(paths[p].nodes.begin(), paths[p].nodes.end(), [&](TensorId t) {
        return !rt.graph().storage_of(t).resident;
      });
      if (all_evicted) {
        target = p;
        break;
      }
    }
    Path& path = paths[target];
    TensorId tip = path.nodes.back();
    auto out = rt.call("reveal", 1, std::span(&tip, 1), std::span(&unit, 1));
    detail::emit_call(log, "reveal", {path.tip}, name, 1, 1);
    rt.release(tip);
    log.push_back(instr::Release{path.tip});
    path.nodes.push_back(out[0]);
    path.tip = name;
    if (audit) rt.audit(/*expect_unlocked=*/true);
  }

  AdversaryReport report;
  report.n = n;
  report.budget = budget;
  report.heuristic = heuristic.name();
  report.dtr_cost = rt.telemetry().total_compute;
  report.static_cost = n;
  report.ratio = static_cast<double>(report.dtr_cost) / static_cast<double>(report.static_cost);
  report.log = make_log(std::move(log));
  return report;
}

}  // namespace dtr
