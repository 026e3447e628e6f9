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
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dtrsim/graph.hpp"
#include "dtrsim/heuristics.hpp"
#include "dtrsim/metadata.hpp"
#include "dtrsim/oplog.hpp"

namespace dtr {

enum class DeallocPolicy { kIgnore, kEagerEvict, kBanish, kBanishV2 };

inline DeallocPolicy parse_policy(std::string_view name) {
  if (name == "ignore") return DeallocPolicy::kIgnore;
  if (name == "eager-evict") return DeallocPolicy::kEagerEvict;
  if (name == "banish") return DeallocPolicy::kBanish;
  if (name == "banish-v2") return DeallocPolicy::kBanishV2;
  throw std::invalid_argument("unknown policy: " + std::string(name));
}

inline std::string policy_name(DeallocPolicy p) {
  switch (p) {
    case DeallocPolicy::kIgnore: return "ignore";
    case DeallocPolicy::kEagerEvict: return "eager-evict";
    case DeallocPolicy::kBanish: return "banish";
    case DeallocPolicy::kBanishV2: return "banish-v2";
  }
  return "?";
}

struct Telemetry {
  Time total_compute = 0;
  Time base_compute = 0;
  std::uint64_t rematerialization_count = 0;
  std::uint64_t eviction_count = 0;
  std::uint64_t banish_count = 0;
  Bytes peak_memory = 0;
  std::uint64_t storage_accesses = 0;
  // Bytes held by pinned, resident storages when the replay ended.
  Bytes pinned_bytes = 0;

  double slowdown() const {
    if (base_compute <= 0) return 1.0;
    return static_cast<double>(total_compute) / static_cast<double>(base_compute);
  }
};

enum class Status { kOk, kOom, kThrash };

inline std::string status_name(Status s) {
  switch (s) {
    case Status::kOk: return "ok";
    case Status::kOom: return "oom";
    case Status::kThrash: return "thrash";
  }
  return "?";
}

struct SimOutcome {
  Status status = Status::kOk;
  Telemetry telemetry;
  std::string message;
};

// free() ran out of evictable storages before reaching the needed headroom.
class OutOfMemory : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Total compute crossed the kill-switch limit.
class ThrashAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RuntimeOptions {
  // Abort once total_compute exceeds this many time units.
  std::optional<Time> compute_limit;
};

// Residency state machine over a growing dependency graph. All memory is
// accounted per storage; M never exceeds the budget because every allocation
// frees headroom first.
class Runtime {
 public:
  Runtime(Bytes budget, HeuristicSpec heuristic, DeallocPolicy policy,
          RuntimeOptions options = {})
      : budget_(budget),
        policy_(policy),
        options_(options),
        metadata_(graph_, heuristic.metadata_options(), &telemetry_.storage_accesses),
        scorer_(heuristic, graph_, metadata_, &telemetry_.storage_accesses) {}

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  // ---- external operations ----

  // A constant: resident, pinned, never rematerializable. One external ref.
  TensorId constant(Bytes size) {
    const OutputSpec spec{size, std::nullopt};
    OpId op = graph_.add_operator_result("constant", 0, {}, std::span(&spec, 1), true);
    metadata_.on_operator_added(graph_.op(op));
    if (memory_ + size > budget_) free(size);
    Operator& o = graph_.op(op);
    o.performed = true;
    TensorId t = o.outputs.front();
    Storage& st = graph_.storage(graph_.tensor(t).storage);
    st.resident = true;
    st.computed = true;
    st.pinned = true;
    metadata_.on_first_compute(st.id);
    memory_ += size;
    note_peak();
    Tensor& x = graph_.tensor(t);
    x.defined = true;
    x.last_access = clock_;
    add_ref(t);
    return t;
  }

  // Runs an operator on live inputs. Each output starts with one external
  // reference. Inputs and outputs are stamped with the post-op clock.
  std::vector<TensorId> call(std::string name, Time cost, std::span<const TensorId> inputs,
                             std::span<const OutputSpec> outputs) {
    for (TensorId in : inputs) {
      if (in.index() >= graph_.tensor_count()) {
        throw std::out_of_range("unknown input tensor " + std::to_string(in.value));
      }
      check_invariant(!graph_.storage_of(in).banished, "call input lives in a banished storage");
    }
    // Inputs become resident before the op joins the graph: alias outputs
    // raise the local cost of an input storage, and that must not happen
    // while the storage's cost is held in an evicted component.
    for (TensorId in : inputs) lock(graph_.tensor(in).storage);
    for (TensorId in : inputs) materialize(in);
    OpId op = graph_.add_operator_result(std::move(name), cost, inputs, outputs);
    metadata_.on_operator_added(graph_.op(op));
    run_op(op);
    for (TensorId in : inputs) unlock(graph_.tensor(in).storage);
    std::vector<TensorId> outs = graph_.op(op).outputs;
    for (TensorId t : outs) add_ref(t);
    for (TensorId t : graph_.op(op).inputs) graph_.tensor(t).last_access = clock_;
    for (TensorId t : outs) graph_.tensor(t).last_access = clock_;
    return outs;
  }

  void add_ref(TensorId t) {
    Tensor& x = graph_.tensor(t);
    ++x.refs;
    ++graph_.storage(x.storage).refs;
  }

  // Drops one external reference. When the storage loses its last one the
  // deallocation policy decides what happens.
  void release(TensorId t) {
    Tensor& x = graph_.tensor(t);
    if (x.refs <= 0) throw std::logic_error("release of unreferenced tensor");
    --x.refs;
    Storage& st = graph_.storage(x.storage);
    --st.refs;
    if (st.refs > 0) return;
    switch (policy_) {
      case DeallocPolicy::kIgnore:
        break;
      case DeallocPolicy::kEagerEvict:
        if (st.evictable()) evict(st.id);
        break;
      case DeallocPolicy::kBanish:
        try_banish(st.id);
        break;
      case DeallocPolicy::kBanishV2:
        for (TensorId v : st.views) graph_.tensor(v).last_access = kNegInf;
        break;
    }
  }

  // Makes t defined, recomputing evicted ancestors depth-first.
  void materialize(TensorId t) {
    if (graph_.tensor(t).defined) return;
    run_op(graph_.tensor(t).op, t);
  }

  // Every tensor still referenced at log end is materialized and locked.
  void enforce_output_condition() {
    for (std::size_t i = 0; i < graph_.tensor_count(); ++i) {
      TensorId t{i};
      if (graph_.tensor(t).refs <= 0) continue;
      materialize(t);
      lock(graph_.tensor(t).storage);
    }
  }

  // Evicts until M + headroom ≤ B, lowest score first.
  void free(Bytes headroom) {
    while (memory_ + headroom > budget_) {
      std::optional<StorageId> victim = scorer_.argmin(pool_, clock_);
      if (!victim) {
        throw OutOfMemory("cannot free " + std::to_string(headroom) + " bytes (M=" +
                          std::to_string(memory_) + ", B=" + std::to_string(budget_) + ")");
      }
      evict(*victim);
    }
  }

  void evict(StorageId s) {
    Storage& st = graph_.storage(s);
    check_invariant(st.evictable() && !st.banished, "evicting a non-evictable storage");
    for (TensorId v : st.views) graph_.tensor(v).defined = false;
    st.resident = false;
    memory_ -= st.size;
    pool_.erase(s);
    metadata_.on_evict(s);
    ++telemetry_.eviction_count;
  }

  // Removes S permanently once no dependent is evicted; otherwise retried
  // when a dependent is rematerialized or S is unlocked.
  void try_banish(StorageId s) {
    Storage& st = graph_.storage(s);
    if (st.banished) return;
    check_invariant(st.refs == 0, "banishing a referenced storage");
    if (st.locks > 0) {
      pending_banish_.insert(s);
      return;
    }
    for (StorageId d : graph_.dependents(s)) {
      if (graph_.storage(d).evicted()) {
        pending_banish_.insert(s);
        return;
      }
    }
    pending_banish_.erase(s);
    metadata_.on_remove(s);
    if (st.resident) {
      for (TensorId v : st.views) graph_.tensor(v).defined = false;
      st.resident = false;
      memory_ -= st.size;
      pool_.erase(s);
    }
    std::vector<StorageId> children = graph_.dependents(s);
    graph_.remove_storage(s);
    for (StorageId d : children) {
      Storage& c = graph_.storage(d);
      c.pinned = true;
      pool_.erase(d);
    }
    ++telemetry_.banish_count;
  }

  // ---- audits ----

  // Recomputes the derived state from scratch and compares. With
  // expect_unlocked, also checks that no storage holds a lock.
  void audit(bool expect_unlocked = false) const {
    Bytes resident = 0;
    std::set<StorageId> pool;
    for (const Storage& st : graph_.storages()) {
      if (st.resident) resident += st.size;
      if (st.resident && st.locks == 0 && !st.pinned && !st.banished) pool.insert(st.id);
      check_invariant(st.locks >= 0, "negative lock count");
      if (expect_unlocked) check_invariant(st.locks == 0, "lock leaked across an instruction");
      int refs = 0;
      for (TensorId v : st.views) {
        const Tensor& x = graph_.tensor(v);
        check_invariant(x.refs >= 0, "negative tensor refcount");
        check_invariant(!x.defined || st.resident, "defined tensor in a non-resident storage");
        refs += x.refs;
      }
      check_invariant(refs == st.refs, "storage refcount differs from sum over views");
      check_invariant(!st.banished || !st.resident, "banished storage still resident");
    }
    check_invariant(resident == memory_, "M differs from the sum of resident sizes");
    check_invariant(memory_ <= budget_, "M exceeds the budget");
    check_invariant(pool == pool_, "pool differs from the recomputed evictable set");
  }

  // ---- accessors ----

  Time clock() const { return clock_; }
  Bytes memory() const { return memory_; }
  Bytes budget() const { return budget_; }
  DeallocPolicy policy() const { return policy_; }
  const std::set<StorageId>& pool() const { return pool_; }
  const DependencyGraph& graph() const { return graph_; }
  Metadata& metadata() { return metadata_; }
  const Metadata& metadata() const { return metadata_; }
  Scorer& scorer() { return scorer_; }
  bool banish_pending(StorageId s) const { return pending_banish_.count(s) != 0; }

  Telemetry telemetry() const {
    Telemetry t = telemetry_;
    t.pinned_bytes = 0;
    for (const Storage& st : graph_.storages()) {
      if (st.pinned && st.resident) t.pinned_bytes += st.size;
    }
    return t;
  }
  void set_base_compute(Time base) { telemetry_.base_compute = base; }

 private:
  struct Frame {
    OpId op;
    std::optional<TensorId> trigger;
    bool expanded = false;
  };

  void lock(StorageId s) {
    Storage& st = graph_.storage(s);
    ++st.locks;
    pool_.erase(s);
  }

  void unlock(StorageId s) {
    Storage& st = graph_.storage(s);
    check_invariant(st.locks > 0, "unlock without lock");
    if (--st.locks > 0) return;
    if (st.evictable() && !st.banished) pool_.insert(s);
    if (pending_banish_.count(s)) try_banish(s);
  }

  void note_peak() { telemetry_.peak_memory = std::max(telemetry_.peak_memory, memory_); }

  // Explicit work stack: each frame locks its op's input storages, pushes
  // the undefined inputs (so they run in argument order), and performs the
  // op once they are all defined.
  void run_op(OpId root, std::optional<TensorId> trigger = std::nullopt) {
    std::vector<Frame> stack;
    stack.push_back({root, trigger, false});
    while (!stack.empty()) {
      Frame f = stack.back();
      if (!f.expanded) {
        if (f.trigger && graph_.tensor(*f.trigger).defined) {
          stack.pop_back();
          continue;
        }
        stack.back().expanded = true;
        const Operator& op = graph_.op(f.op);
        for (TensorId in : op.inputs) lock(graph_.tensor(in).storage);
        for (auto it = op.inputs.rbegin(); it != op.inputs.rend(); ++it) {
          const Tensor& x = graph_.tensor(*it);
          if (!x.defined) {
            check_invariant(!graph_.storage(x.storage).banished,
                            "rematerialization needs a banished storage");
            stack.push_back({x.op, *it, false});
          }
        }
      } else {
        stack.pop_back();
        perform(f.op);
        for (TensorId in : graph_.op(f.op).inputs) unlock(graph_.tensor(in).storage);
      }
    }
  }

  void perform(OpId id) {
    const Operator& op = graph_.op(id);
    for (TensorId in : op.inputs) {
      check_invariant(graph_.tensor(in).defined, "performing an op with an undefined input");
    }
    std::vector<StorageId> storages;
    for (TensorId out : op.outputs) {
      StorageId s = graph_.tensor(out).storage;
      if (std::find(storages.begin(), storages.end(), s) == storages.end()) storages.push_back(s);
    }
    Bytes needed = 0;
    std::vector<StorageId> held;
    for (StorageId s : storages) {
      const Storage& st = graph_.storage(s);
      if (st.banished) continue;
      if (st.resident) {
        lock(s);
        held.push_back(s);
      } else {
        needed += st.size;
      }
    }
    if (memory_ + needed > budget_) free(needed);

    std::vector<StorageId> fresh;
    for (StorageId s : storages) {
      Storage& st = graph_.storage(s);
      if (st.banished || st.resident) continue;
      st.resident = true;
      memory_ += st.size;
      if (st.computed) {
        metadata_.on_rematerialize(s);
        fresh.push_back(s);
      } else {
        st.computed = true;
        metadata_.on_first_compute(s);
      }
      if (st.evictable()) pool_.insert(s);
    }
    for (TensorId out : op.outputs) {
      Tensor& x = graph_.tensor(out);
      if (!graph_.storage(x.storage).banished) x.defined = true;
    }
    Operator& mop = graph_.op(id);
    if (mop.performed) {
      ++telemetry_.rematerialization_count;
    } else {
      mop.performed = true;
    }
    clock_ += mop.cost;
    telemetry_.total_compute += mop.cost;
    note_peak();
    for (StorageId s : held) unlock(s);

    for (StorageId t : fresh) {
      std::vector<StorageId> parents = graph_.deps(t);
      for (StorageId p : parents) {
        if (pending_banish_.count(p)) try_banish(p);
      }
    }
    if (options_.compute_limit && telemetry_.total_compute > *options_.compute_limit) {
      throw ThrashAbort("total compute exceeded the kill-switch limit");
    }
  }

  Bytes budget_;
  DeallocPolicy policy_;
  RuntimeOptions options_;
  DependencyGraph graph_;
  Telemetry telemetry_;
  Metadata metadata_;
  Scorer scorer_;
  Time clock_ = 0;
  Bytes memory_ = 0;
  std::set<StorageId> pool_;
  std::set<StorageId> pending_banish_;
};

// ---------------------------------------------------------------------------
// Log replay

class Replay;

struct ReplayOptions {
  double thrash_factor = 2.0;
  // Abort runaway replays at thrash_factor × base × 8 total compute.
  bool kill_switch = true;
  // Run Runtime::audit after every instruction.
  bool audit = false;
  // Called after each instruction group with the index of its head record.
  std::function<void(const Replay&, std::size_t)> observer;
};

// Drives a Runtime through a parsed log. A CALL and its trailing
// MEMORY/ALIAS records form one step.
class Replay {
 public:
  Replay(const OpLog& log, Bytes budget, HeuristicSpec heuristic, DeallocPolicy policy,
         ReplayOptions options = {})
      : log_(&log),
        options_(std::move(options)),
        runtime_(budget, heuristic, policy, runtime_options(log, options_)) {
    runtime_.set_base_compute(log.base_compute);
  }

  SimOutcome run() {
    SimOutcome out;
    try {
      const auto& ins = log_->instructions;
      for (std::size_t i = 0; i < ins.size();) {
        std::size_t head = i;
        i = step(i);
        if (options_.audit) runtime_.audit(/*expect_unlocked=*/true);
        if (options_.observer) options_.observer(*this, head);
      }
      runtime_.enforce_output_condition();
      if (options_.audit) runtime_.audit();
      out.telemetry = runtime_.telemetry();
      out.status = thrashed(out.telemetry) ? Status::kThrash : Status::kOk;
    } catch (const OutOfMemory& e) {
      out.status = Status::kOom;
      out.telemetry = runtime_.telemetry();
      out.message = e.what();
    } catch (const ThrashAbort& e) {
      out.status = Status::kThrash;
      out.telemetry = runtime_.telemetry();
      out.message = e.what();
    }
    return out;
  }

  const Runtime& runtime() const { return runtime_; }
  Runtime& runtime() { return runtime_; }
  const NameBinder& names() const { return names_; }

  // Latest tensor bound to `name`, even if the binding has since died.
  std::optional<TensorId> lookup(const std::string& name) const {
    auto it = history_.find(name);
    if (it == history_.end()) return std::nullopt;
    return it->second;
  }

 private:
  static RuntimeOptions runtime_options(const OpLog& log, const ReplayOptions& o) {
    RuntimeOptions r;
    if (o.kill_switch && log.base_compute > 0) {
      r.compute_limit = static_cast<Time>(
          std::ceil(o.thrash_factor * 8.0 * static_cast<double>(log.base_compute)));
    }
    return r;
  }

  bool thrashed(const Telemetry& t) const {
    return t.base_compute > 0 && t.slowdown() >= options_.thrash_factor;
  }

  void bind(const std::string& name, TensorId t) {
    names_.bind(name, t);
    history_[name] = t;
  }

  void apply(const std::vector<RefChange>& changes) {
    for (const RefChange& c : changes) {
      if (c.delta > 0) {
        runtime_.add_ref(c.tensor);
      } else {
        runtime_.release(c.tensor);
      }
    }
  }

  std::size_t step(std::size_t i) {
    const auto& ins = log_->instructions;
    const Instruction& x = ins[i];
    if (const auto* call = std::get_if<instr::Call>(&x)) {
      std::vector<TensorId> inputs;
      for (const auto& n : call->inputs) inputs.push_back(names_.resolve(n));
      std::vector<OutputSpec> specs;
      for (std::size_t k = 0; k < call->outputs.size(); ++k) {
        const auto& mem = std::get<instr::Memory>(ins[i + 1 + 2 * k]);
        const auto& al = std::get<instr::Alias>(ins[i + 2 + 2 * k]);
        OutputSpec spec{mem.size, std::nullopt};
        if (al.source) {
          auto pos = std::find(call->inputs.begin(), call->inputs.end(), *al.source);
          spec.alias_of = static_cast<std::size_t>(pos - call->inputs.begin());
        }
        specs.push_back(spec);
      }
      std::vector<TensorId> outs = runtime_.call(call->op, call->cost, inputs, specs);
      for (std::size_t k = 0; k < outs.size(); ++k) bind(call->outputs[k], outs[k]);
      return i + 1 + 2 * call->outputs.size();
    }
    if (const auto* mut = std::get_if<instr::Mutate>(&x)) {
      const auto& g = runtime_.graph();
      LoweredMutate low = lower_mutate(
          *mut, names_, [&](TensorId t) { return g.storage_of(t).size; });
      std::vector<TensorId> fresh = runtime_.call(low.op, low.cost, low.inputs, low.outputs);
      apply(finish_mutate(low, fresh, names_));
      for (std::size_t k = 0; k < low.mutated.size(); ++k) history_[low.mutated[k]] = fresh[k];
      return i + 1;
    }
    if (const auto* c = std::get_if<instr::Constant>(&x)) {
      const auto& mem = std::get<instr::Memory>(ins[i + 1]);
      bind(c->tensor, runtime_.constant(mem.size));
      return i + 2;
    }
    if (const auto* cp = std::get_if<instr::Copy>(&x)) {
      apply(names_.copy(*cp));
      history_[cp->dst] = names_.resolve(cp->dst);
      return i + 1;
    }
    if (const auto* cf = std::get_if<instr::CopyFrom>(&x)) {
      apply(names_.copy_from(*cf));
      history_[cf->dst] = names_.resolve(cf->dst);
      return i + 1;
    }
    if (const auto* rel = std::get_if<instr::Release>(&x)) {
      apply(names_.release(*rel));
      return i + 1;
    }
    throw LogError("stray MEMORY/ALIAS record", log_->line_of(i), 1, i);
  }

  const OpLog* log_;
  ReplayOptions options_;
  Runtime runtime_;
  NameBinder names_;
  std::unordered_map<std::string, TensorId> history_;
};

inline SimOutcome run(const OpLog& log, Bytes budget, HeuristicSpec heuristic,
                      DeallocPolicy policy, ReplayOptions options = {}) {
  Replay replay(log, budget, heuristic, policy, std::move(options));
  return replay.run();
}

}  // namespace dtr
