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
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dtr {

// Simulated time and memory. Both are integral so that every comparison the
// runtime makes is exact.
using Time = std::int64_t;
using Bytes = std::int64_t;

// Sentinel for a last-access time of minus infinity.
inline constexpr Time kNegInf = std::numeric_limits<Time>::min();

// Dense identifier assigned in creation order.
template <class Tag>
struct Id {
  std::uint32_t value = 0;

  constexpr Id() = default;
  constexpr explicit Id(std::uint32_t v) : value(v) {}
  constexpr explicit Id(std::size_t v) : value(static_cast<std::uint32_t>(v)) {}

  constexpr std::size_t index() const { return value; }
  friend constexpr auto operator<=>(Id, Id) = default;
};

using StorageId = Id<struct StorageTag>;
using TensorId = Id<struct TensorTag>;
using OpId = Id<struct OpTag>;

// Thrown when an internal runtime invariant does not hold. Always a bug in the
// simulator, never in the input.
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void check_invariant(bool ok, const char* what) {
  if (!ok) throw InvariantViolation(what);
}

struct Storage {
  StorageId id;
  Bytes size = 0;
  TensorId root;
  std::vector<TensorId> views;
  bool resident = false;
  int locks = 0;
  int refs = 0;
  bool pinned = false;
  // Set once the storage has been materialized for the first time; storages
  // whose producing op has not run yet are invisible to the metadata.
  bool computed = false;
  bool banished = false;
  bool constant = false;
  Time local_cost = 0;

  bool evicted() const { return computed && !resident && !banished; }
  bool evictable() const { return resident && locks == 0 && !pinned; }
};

struct Tensor {
  TensorId id;
  OpId op;
  std::uint32_t output_index = 0;
  StorageId storage;
  bool is_alias = false;
  bool defined = false;
  int refs = 0;
  Time last_access = kNegInf;
};

// Per-output description handed to add_operator_result. alias_of indexes the
// operator's input list.
struct OutputSpec {
  Bytes size = 0;
  std::optional<std::size_t> alias_of;
};

struct Operator {
  OpId id;
  std::string name;
  Time cost = 0;
  std::vector<TensorId> inputs;
  std::vector<TensorId> outputs;
  bool is_constant = false;
  bool performed = false;
};

// Storage/tensor/operator tables plus the storage dependency DAG. Edges are
// kept in both directions; each adjacency list is sorted and duplicate-free.
class DependencyGraph {
 public:
  // Creates the operator and its output tensors. Non-alias outputs get a new
  // storage; alias outputs become views of the aliased input's storage.
  // Throws std::out_of_range on an unknown input id.
  OpId add_operator_result(std::string name, Time cost,
                           std::span<const TensorId> inputs,
                           std::span<const OutputSpec> outputs,
                           bool is_constant = false) {
    for (TensorId t : inputs) {
      if (t.index() >= tensors_.size()) {
        throw std::out_of_range("operator input refers to unknown tensor " +
                                std::to_string(t.value));
      }
    }
    OpId op_id{ops_.size()};
    Operator op;
    op.id = op_id;
    op.name = std::move(name);
    op.cost = cost;
    op.inputs.assign(inputs.begin(), inputs.end());
    op.is_constant = is_constant;

    for (std::size_t k = 0; k < outputs.size(); ++k) {
      const OutputSpec& spec = outputs[k];
      Tensor t;
      t.id = TensorId{tensors_.size()};
      t.op = op_id;
      t.output_index = static_cast<std::uint32_t>(k);
      if (spec.alias_of) {
        if (*spec.alias_of >= inputs.size()) {
          throw std::out_of_range("alias_of index out of range");
        }
        t.is_alias = true;
        t.storage = tensors_[inputs[*spec.alias_of].index()].storage;
      } else {
        Storage s;
        s.id = StorageId{storages_.size()};
        s.size = spec.size;
        s.root = t.id;
        s.constant = is_constant;
        t.storage = s.id;
        storages_.push_back(std::move(s));
        deps_.emplace_back();
        dependents_.emplace_back();
      }
      Storage& s = storages_[t.storage.index()];
      s.views.push_back(t.id);
      s.local_cost += cost;
      op.outputs.push_back(t.id);
      tensors_.push_back(t);
    }

    for (TensorId out : op.outputs) {
      StorageId dst = tensors_[out.index()].storage;
      for (TensorId in : op.inputs) {
        StorageId src = tensors_[in.index()].storage;
        if (src != dst) add_edge(src, dst);
      }
    }
    ops_.push_back(std::move(op));
    return op_id;
  }

  // Detaches S from the dependency graph. The table entry is kept (ids are
  // dense) but flagged banished; removing twice is a runtime bug.
  void remove_storage(StorageId s) {
    Storage& st = storage(s);
    check_invariant(!st.banished, "storage removed twice");
    for (StorageId d : deps_[s.index()]) erase_sorted(dependents_[d.index()], s);
    for (StorageId d : dependents_[s.index()]) erase_sorted(deps_[d.index()], s);
    deps_[s.index()].clear();
    dependents_[s.index()].clear();
    st.banished = true;
  }

  Storage& storage(StorageId s) { return storages_.at(s.index()); }
  const Storage& storage(StorageId s) const { return storages_.at(s.index()); }
  Tensor& tensor(TensorId t) { return tensors_.at(t.index()); }
  const Tensor& tensor(TensorId t) const { return tensors_.at(t.index()); }
  Operator& op(OpId o) { return ops_.at(o.index()); }
  const Operator& op(OpId o) const { return ops_.at(o.index()); }

  const Storage& storage_of(TensorId t) const { return storage(tensor(t).storage); }
  Bytes tensor_size(TensorId t) const {
    const Tensor& x = tensor(t);
    return x.is_alias ? 0 : storage(x.storage).size;
  }

  const std::vector<StorageId>& deps(StorageId s) const { return deps_.at(s.index()); }
  const std::vector<StorageId>& dependents(StorageId s) const {
    return dependents_.at(s.index());
  }

  std::size_t storage_count() const { return storages_.size(); }
  std::size_t tensor_count() const { return tensors_.size(); }
  std::size_t op_count() const { return ops_.size(); }

  const std::vector<Storage>& storages() const { return storages_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

 private:
  static void insert_sorted(std::vector<StorageId>& v, StorageId s) {
    auto it = std::lower_bound(v.begin(), v.end(), s);
    if (it == v.end() || *it != s) v.insert(it, s);
  }
  static void erase_sorted(std::vector<StorageId>& v, StorageId s) {
    auto it = std::lower_bound(v.begin(), v.end(), s);
    if (it != v.end() && *it == s) v.erase(it);
  }
  void add_edge(StorageId src, StorageId dst) {
    insert_sorted(deps_[dst.index()], src);
    insert_sorted(dependents_[src.index()], dst);
  }

  std::vector<Storage> storages_;
  std::vector<Tensor> tensors_;
  std::vector<Operator> ops_;
  std::vector<std::vector<StorageId>> deps_;
  std::vector<std::vector<StorageId>> dependents_;
};

}  // namespace dtr

template <class Tag>
struct std::hash<dtr::Id<Tag>> {
  std::size_t operator()(dtr::Id<Tag> id) const noexcept {
    return std::hash<std::uint32_t>{}(id.value);
  }
};
