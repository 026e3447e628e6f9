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

#include <cstdint>
#include <utility>
#include <vector>

#include "dtrsim/graph.hpp"

namespace dtr {

// Union-find over an append-only node arena. Each root carries the running
// cost sum of its component. Union by size, path compression.
//
// Nodes are never reused: a storage that needs a fresh empty set simply gets
// a new node, leaving its old node (and any phantom links) behind.
class CostUnionFind {
 public:
  using Node = std::uint32_t;

  Node make_set() {
    Node n = static_cast<Node>(parent_.size());
    parent_.push_back(n);
    size_.push_back(1);
    cost_.push_back(0);
    return n;
  }

  // `visits` counts every node touched on the way to the root.
  Node find(Node x, std::uint64_t* visits = nullptr) {
    Node root = x;
    while (parent_[root] != root) {
      if (visits) ++*visits;
      root = parent_[root];
    }
    if (visits) ++*visits;
    while (parent_[x] != root) {
      Node next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  Node unite(Node a, Node b, std::uint64_t* visits = nullptr) {
    a = find(a, visits);
    b = find(b, visits);
    if (a == b) return a;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    cost_[a] += cost_[b];
    cost_[b] = 0;
    return a;
  }

  Time cost(Node root) const { return cost_[root]; }
  void add_cost(Node root, Time delta) { cost_[root] += delta; }
  bool is_root(Node n) const { return parent_[n] == n; }
  std::size_t node_count() const { return parent_.size(); }

 private:
  std::vector<Node> parent_;
  std::vector<std::uint32_t> size_;
  std::vector<Time> cost_;
};

}  // namespace dtr
