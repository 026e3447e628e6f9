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
#include <vector>

#include "dtrsim/graph.hpp"
#include "dtrsim/union_find.hpp"

namespace dtr {

// Time since last access, clamped to at least one clock unit. `infinite` is
// set when every view was stamped with the minus-infinity sentinel.
struct Staleness {
  bool infinite = false;
  Time value = 1;
};

struct MetadataOptions {
  // Maintain the union-find evicted components (needed by eqclass scores).
  bool track_components = true;
  // Maintain cached evicted ancestor/descendant sets (needed by e* scores).
  bool cache_neighborhoods = true;
};

// Heuristic inputs derived from the dependency graph: local cost, staleness,
// the exact evicted neighborhood e* (with an incrementally invalidated cache),
// and the union-find relaxation of it.
//
// Every storage visited while maintaining or rebuilding the caches, and every
// union-find node traversed, is charged to `*accesses` when it is non-null.
class Metadata {
 public:
  explicit Metadata(const DependencyGraph& graph, MetadataOptions options = {},
                    std::uint64_t* accesses = nullptr)
      : graph_(&graph), options_(options), accesses_(accesses) {}

  const MetadataOptions& options() const { return options_; }

  Time local_cost(StorageId s) const { return graph_->storage(s).local_cost; }

  Time last_access(StorageId s) const {
    Time best = kNegInf;
    for (TensorId t : graph_->storage(s).views) {
      best = std::max(best, graph_->tensor(t).last_access);
    }
    return best;
  }

  Staleness staleness(StorageId s, Time now) const {
    return staleness_since(last_access(s), now);
  }

  static Staleness staleness_since(Time last, Time now) {
    if (last == kNegInf) return {true, 0};
    return {false, std::max<Time>(now - last, 1)};
  }

  // ---- exact evicted neighborhood (pure, uncharged) ----

  std::vector<StorageId> evicted_ancestors_exact(StorageId s) const {
    return closure(s, /*upward=*/true, /*charged=*/false);
  }
  std::vector<StorageId> evicted_descendants_exact(StorageId s) const {
    return closure(s, /*upward=*/false, /*charged=*/false);
  }
  std::vector<StorageId> evicted_neighborhood_exact(StorageId s) const {
    std::vector<StorageId> out = evicted_ancestors_exact(s);
    std::vector<StorageId> desc = evicted_descendants_exact(s);
    out.insert(out.end(), desc.begin(), desc.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  // ---- cached evicted neighborhood ----

  const std::vector<StorageId>& cached_ancestors(StorageId s) {
    Entry& e = entry(s);
    if (e.anc_dirty) rebuild(s, e, /*upward=*/true);
    return e.anc;
  }
  const std::vector<StorageId>& cached_descendants(StorageId s) {
    Entry& e = entry(s);
    if (e.desc_dirty) rebuild(s, e, /*upward=*/false);
    return e.desc;
  }
  Time ancestors_cost(StorageId s) {
    cached_ancestors(s);
    return entry(s).anc_cost;
  }
  // Sum of local costs over e*(S). Alias views can close storage-level
  // cycles, so the two halves may overlap; shared members count once.
  Time neighborhood_cost(StorageId s) {
    cached_ancestors(s);
    cached_descendants(s);
    const Entry& e = entry(s);
    Time overlap = 0;
    auto a = e.anc.begin();
    auto d = e.desc.begin();
    while (a != e.anc.end() && d != e.desc.end()) {
      if (*a < *d) {
        ++a;
      } else if (*d < *a) {
        ++d;
      } else {
        overlap += local_cost(*a);
        ++a;
        ++d;
      }
    }
    return e.anc_cost + e.desc_cost - overlap;
  }
  bool ancestors_clean(StorageId s) const {
    return s.index() < entries_.size() && !entries_[s.index()].anc_dirty;
  }
  bool descendants_clean(StorageId s) const {
    return s.index() < entries_.size() && !entries_[s.index()].desc_dirty;
  }
  // Recomputes whichever halves are dirty.
  void rebuild_cache(StorageId s) {
    cached_ancestors(s);
    cached_descendants(s);
  }

  // ---- union-find relaxation ----

  CostUnionFind::Node component_root(StorageId s) {
    return uf_.find(entry(s).node, accesses_);
  }
  Time component_cost(StorageId s) { return uf_.cost(component_root(s)); }

  // Σ over distinct component roots of evicted neighbors. Performs no unions.
  // Each inspected neighbor and each union-find node visited is charged.
  Time approx_neighborhood_cost(StorageId s) {
    std::vector<CostUnionFind::Node> roots;
    auto collect = [&](const std::vector<StorageId>& adj) {
      for (StorageId n : adj) {
        charge();
        if (graph_->storage(n).evicted()) roots.push_back(component_root(n));
      }
    };
    collect(graph_->deps(s));
    collect(graph_->dependents(s));
    std::sort(roots.begin(), roots.end());
    roots.erase(std::unique(roots.begin(), roots.end()), roots.end());
    Time total = 0;
    for (auto r : roots) total += uf_.cost(r);
    return total;
  }

  // Σ of component costs over all current roots (test/audit helper).
  Time total_component_cost() const {
    Time total = 0;
    for (std::size_t n = 0; n < uf_.node_count(); ++n) {
      auto node = static_cast<CostUnionFind::Node>(n);
      if (uf_.is_root(node)) total += uf_.cost(node);
    }
    return total;
  }

  void uf_on_evict(StorageId s) {
    Entry& e = entry(s);
    auto root = uf_.find(e.node, accesses_);
    uf_.add_cost(root, local_cost(s));
    auto merge = [&](const std::vector<StorageId>& adj) {
      for (StorageId n : adj) {
        if (n == s || !graph_->storage(n).evicted()) continue;
        root = uf_.unite(root, entry(n).node, accesses_);
      }
    };
    merge(graph_->deps(s));
    merge(graph_->dependents(s));
  }

  void uf_on_rematerialize(StorageId s) {
    Entry& e = entry(s);
    auto root = uf_.find(e.node, accesses_);
    check_invariant(uf_.cost(root) >= local_cost(s),
                    "evicted component cost would go negative");
    uf_.add_cost(root, -local_cost(s));
    e.node = uf_.make_set();
  }

  // ---- runtime hooks ----

  // A storage became resident for the first time.
  void on_first_compute(StorageId s) {
    Entry& e = entry(s);
    e.node = uf_.make_set();
    e.anc_dirty = e.desc_dirty = true;
  }

  void on_evict(StorageId s) {
    if (options_.track_components) uf_on_evict(s);
    if (options_.cache_neighborhoods) invalidate_around(s);
  }

  void on_rematerialize(StorageId s) {
    if (options_.track_components) uf_on_rematerialize(s);
    if (options_.cache_neighborhoods) {
      invalidate_around(s);
      Entry& e = entry(s);
      e.anc_dirty = e.desc_dirty = true;
    }
  }

  // Must run before the graph detaches S.
  void on_remove(StorageId s) {
    if (options_.track_components && graph_->storage(s).evicted()) {
      auto root = uf_.find(entry(s).node, accesses_);
      uf_.add_cost(root, -local_cost(s));
    }
    if (options_.cache_neighborhoods) invalidate_around(s);
  }

  // New edges were inserted for `op`; the endpoints' caches may be stale.
  void on_operator_added(const Operator& op) {
    if (!options_.cache_neighborhoods) return;
    for (TensorId out : op.outputs) {
      entry(graph_->tensor(out).storage).anc_dirty = true;
    }
    for (TensorId in : op.inputs) {
      entry(graph_->tensor(in).storage).desc_dirty = true;
    }
  }

 private:
  struct Entry {
    CostUnionFind::Node node = 0;
    std::vector<StorageId> anc;
    std::vector<StorageId> desc;
    Time anc_cost = 0;
    Time desc_cost = 0;
    bool anc_dirty = true;
    bool desc_dirty = true;
  };

  Entry& entry(StorageId s) {
    if (s.index() >= entries_.size()) entries_.resize(graph_->storage_count());
    return entries_[s.index()];
  }

  void charge() const {
    if (accesses_) ++*accesses_;
  }

  void begin_visit() const {
    if (visit_mark_.size() < graph_->storage_count()) {
      visit_mark_.resize(graph_->storage_count(), 0);
    }
    ++epoch_;
  }
  bool visit(StorageId s) const {
    if (visit_mark_[s.index()] == epoch_) return false;
    visit_mark_[s.index()] = epoch_;
    return true;
  }

  const std::vector<StorageId>& next(StorageId s, bool upward) const {
    return upward ? graph_->deps(s) : graph_->dependents(s);
  }

  // Evicted storages reachable from s through evicted-only paths in one
  // direction. Sorted by id.
  std::vector<StorageId> closure(StorageId s, bool upward, bool charged) const {
    std::vector<StorageId> out;
    begin_visit();
    visit(s);
    std::vector<StorageId> stack(next(s, upward).begin(), next(s, upward).end());
    while (!stack.empty()) {
      StorageId cur = stack.back();
      stack.pop_back();
      if (!visit(cur)) continue;
      if (charged) charge();
      if (!graph_->storage(cur).evicted()) continue;
      out.push_back(cur);
      for (StorageId n : next(cur, upward)) stack.push_back(n);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  void rebuild(StorageId s, Entry& e, bool upward) {
    std::vector<StorageId> set = closure(s, upward, true);
    Time cost = 0;
    for (StorageId n : set) cost += local_cost(n);
    if (upward) {
      e.anc = std::move(set);
      e.anc_cost = cost;
      e.anc_dirty = false;
    } else {
      e.desc = std::move(set);
      e.desc_cost = cost;
      e.desc_dirty = false;
    }
  }

  // X changed residency. Every resident storage reachable from X through
  // evicted-only paths downward has a stale ancestor half, and upward a
  // stale descendant half.
  void invalidate_around(StorageId x) {
    for (bool upward : {false, true}) {
      begin_visit();
      visit(x);
      std::vector<StorageId> stack(next(x, upward).begin(), next(x, upward).end());
      while (!stack.empty()) {
        StorageId cur = stack.back();
        stack.pop_back();
        if (!visit(cur)) continue;
        charge();
        const Storage& st = graph_->storage(cur);
        if (st.evicted()) {
          for (StorageId n : next(cur, upward)) stack.push_back(n);
        } else if (st.resident) {
          Entry& e = entry(cur);
          (upward ? e.desc_dirty : e.anc_dirty) = true;
        }
      }
    }
  }

  const DependencyGraph* graph_;
  MetadataOptions options_;
  std::uint64_t* accesses_;
  CostUnionFind uf_;
  std::vector<Entry> entries_;
  mutable std::vector<std::uint32_t> visit_mark_;
  mutable std::uint32_t epoch_ = 0;
};

}  // namespace dtr
