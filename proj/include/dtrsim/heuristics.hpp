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
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dtrsim/graph.hpp"
#include "dtrsim/metadata.hpp"

namespace dtr {

enum class HeuristicKind {
  kDtrFull,
  kDtrEqclass,
  kDtrLocal,
  kLru,
  kLargest,
  kMsps,
  kRandom,
  kComputeMemory,
  kAblation,
  kDtrFullMinStale,
};

// Which compute-cost measure a score uses.
enum class CostTerm { kEStar, kEqClass, kLocal, kOff };

struct HeuristicSpec {
  HeuristicKind kind = HeuristicKind::kDtrFull;
  // Factors of the parameterized cost / (size * staleness) family. Only read
  // for the dtr-* and ablation kinds.
  bool use_staleness = true;
  bool use_size = true;
  CostTerm cost = CostTerm::kEStar;
  std::uint64_t seed = 0;

  static HeuristicSpec ablation(bool s, bool m, CostTerm c) {
    HeuristicSpec h;
    h.kind = HeuristicKind::kAblation;
    h.use_staleness = s;
    h.use_size = m;
    h.cost = c;
    return h;
  }

  static HeuristicSpec of(HeuristicKind kind, std::uint64_t seed = 0) {
    HeuristicSpec h;
    h.kind = kind;
    h.seed = seed;
    switch (kind) {
      case HeuristicKind::kDtrFull:
      case HeuristicKind::kDtrFullMinStale:
        h.cost = CostTerm::kEStar;
        break;
      case HeuristicKind::kDtrEqclass:
        h.cost = CostTerm::kEqClass;
        break;
      case HeuristicKind::kDtrLocal:
        h.cost = CostTerm::kLocal;
        break;
      default:
        break;
    }
    return h;
  }

  // Accepts the CLI spellings: dtr-full, dtr-eqclass, dtr-local, lru,
  // largest, msps, random, compute-memory, dtr-full-minstale and
  // ablation:s=<on|off>,m=<on|off>,c=<estar|eqclass|local|off>.
  static HeuristicSpec parse(std::string_view name, std::uint64_t seed = 0) {
    if (name == "dtr-full") return of(HeuristicKind::kDtrFull, seed);
    if (name == "dtr-eqclass") return of(HeuristicKind::kDtrEqclass, seed);
    if (name == "dtr-local") return of(HeuristicKind::kDtrLocal, seed);
    if (name == "lru") return of(HeuristicKind::kLru, seed);
    if (name == "largest") return of(HeuristicKind::kLargest, seed);
    if (name == "msps") return of(HeuristicKind::kMsps, seed);
    if (name == "random") return of(HeuristicKind::kRandom, seed);
    if (name == "compute-memory") return of(HeuristicKind::kComputeMemory, seed);
    if (name == "dtr-full-minstale") return of(HeuristicKind::kDtrFullMinStale, seed);

    constexpr std::string_view prefix = "ablation:";
    if (name.substr(0, prefix.size()) == prefix) {
      std::string_view rest = name.substr(prefix.size());
      auto on_off = [&](std::string_view v) {
        if (v == "on") return true;
        if (v == "off") return false;
        throw std::invalid_argument("bad ablation flag value: " + std::string(v));
      };
      std::optional<bool> s, m;
      std::optional<CostTerm> c;
      while (!rest.empty()) {
        auto comma = rest.find(',');
        std::string_view part = rest.substr(0, comma);
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        auto eq = part.find('=');
        if (eq == std::string_view::npos) break;
        std::string_view key = part.substr(0, eq), value = part.substr(eq + 1);
        if (key == "s") {
          s = on_off(value);
        } else if (key == "m") {
          m = on_off(value);
        } else if (key == "c") {
          if (value == "estar") c = CostTerm::kEStar;
          else if (value == "eqclass") c = CostTerm::kEqClass;
          else if (value == "local") c = CostTerm::kLocal;
          else if (value == "off") c = CostTerm::kOff;
          else throw std::invalid_argument("bad ablation cost: " + std::string(value));
        } else {
          throw std::invalid_argument("bad ablation key: " + std::string(key));
        }
      }
      if (s && m && c) {
        HeuristicSpec h = ablation(*s, *m, *c);
        h.seed = seed;
        return h;
      }
    }
    throw std::invalid_argument("unknown heuristic: " + std::string(name));
  }

  std::string name() const {
    switch (kind) {
      case HeuristicKind::kDtrFull: return "dtr-full";
      case HeuristicKind::kDtrEqclass: return "dtr-eqclass";
      case HeuristicKind::kDtrLocal: return "dtr-local";
      case HeuristicKind::kLru: return "lru";
      case HeuristicKind::kLargest: return "largest";
      case HeuristicKind::kMsps: return "msps";
      case HeuristicKind::kRandom: return "random";
      case HeuristicKind::kComputeMemory: return "compute-memory";
      case HeuristicKind::kDtrFullMinStale: return "dtr-full-minstale";
      case HeuristicKind::kAblation: break;
    }
    static constexpr const char* kCost[] = {"estar", "eqclass", "local", "off"};
    return std::string("ablation:s=") + (use_staleness ? "on" : "off") +
           ",m=" + (use_size ? "on" : "off") +
           ",c=" + kCost[static_cast<int>(cost)];
  }

  bool uses_cost_family() const {
    return kind == HeuristicKind::kDtrFull || kind == HeuristicKind::kDtrEqclass ||
           kind == HeuristicKind::kDtrLocal || kind == HeuristicKind::kAblation ||
           kind == HeuristicKind::kDtrFullMinStale;
  }
  bool needs_components() const {
    return uses_cost_family() && cost == CostTerm::kEqClass;
  }
  bool needs_neighborhoods() const {
    return (uses_cost_family() && cost == CostTerm::kEStar) ||
           kind == HeuristicKind::kMsps || kind == HeuristicKind::kComputeMemory;
  }
  MetadataOptions metadata_options() const {
    return {needs_components(), needs_neighborhoods()};
  }
};

// Nonnegative extended rational. Compared exactly by cross-multiplication.
struct ScoreValue {
  bool infinite = false;
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  static ScoreValue inf() { return {true, 0, 1}; }
  static ScoreValue ratio(std::uint64_t n, std::uint64_t d) {
    if (d == 0) return inf();
    return {false, n, d};
  }
  double to_double() const {
    return infinite ? std::numeric_limits<double>::infinity()
                    : static_cast<double>(num) / static_cast<double>(den);
  }

  friend bool operator<(const ScoreValue& a, const ScoreValue& b) {
    if (a.infinite) return false;
    if (b.infinite) return true;
    using u128 = unsigned __int128;
    return static_cast<u128>(a.num) * b.den < static_cast<u128>(b.num) * a.den;
  }
  friend bool operator==(const ScoreValue& a, const ScoreValue& b) {
    if (a.infinite || b.infinite) return a.infinite == b.infinite;
    using u128 = unsigned __int128;
    return static_cast<u128>(a.num) * b.den == static_cast<u128>(b.num) * a.den;
  }
};

// Total order: value first, then smaller storage id.
struct Score {
  ScoreValue value;
  StorageId tiebreak;

  friend bool operator<(const Score& a, const Score& b) {
    if (a.value < b.value) return true;
    if (b.value < a.value) return false;
    return a.tiebreak < b.tiebreak;
  }
};

// Evaluates a heuristic over the current metadata. Owns the generator used by
// the random heuristic so replays are reproducible from the seed.
class Scorer {
 public:
  Scorer(HeuristicSpec spec, const DependencyGraph& graph, Metadata& metadata,
         std::uint64_t* accesses = nullptr)
      : spec_(spec), graph_(&graph), md_(&metadata), accesses_(accesses), rng_(spec.seed) {}

  const HeuristicSpec& spec() const { return spec_; }

  Score score(StorageId s, Time now) {
    if (accesses_) ++*accesses_;
    return {value(s, now), s};
  }

  // Minimum-score member of `pool` (any range of StorageId in ascending
  // order), or nullopt when the pool is empty.
  template <class Range>
  std::optional<StorageId> argmin(const Range& pool, Time now) {
    std::optional<Score> best;
    for (StorageId s : pool) {
      Score sc = score(s, now);
      if (!best || sc < *best) best = sc;
    }
    if (!best) return std::nullopt;
    return best->tiebreak;
  }

 private:
  using u64 = std::uint64_t;

  ScoreValue value(StorageId s, Time now) {
    const Storage& st = graph_->storage(s);
    const auto size = static_cast<u64>(st.size);
    switch (spec_.kind) {
      case HeuristicKind::kLru: {
        Staleness stale = md_->staleness(s, now);
        if (stale.infinite) return ScoreValue::ratio(0, 1);
        return ScoreValue::ratio(1, static_cast<u64>(stale.value));
      }
      case HeuristicKind::kLargest:
        return ScoreValue::ratio(1, size);
      case HeuristicKind::kMsps: {
        Time c = md_->local_cost(s) + md_->ancestors_cost(s);
        return ScoreValue::ratio(static_cast<u64>(c), size);
      }
      case HeuristicKind::kComputeMemory: {
        Time c = md_->local_cost(s) + md_->neighborhood_cost(s);
        return ScoreValue::ratio(static_cast<u64>(c), size);
      }
      case HeuristicKind::kRandom:
        return ScoreValue::ratio(rng_() >> 11, u64{1} << 53);
      default:
        return family(s, now);
    }
  }

  // cost / (size * staleness) with ablated factors replaced by 1.
  ScoreValue family(StorageId s, Time now) {
    const Storage& st = graph_->storage(s);
    Time cost = 1;
    switch (spec_.cost) {
      case CostTerm::kEStar:
        cost = md_->local_cost(s) + md_->neighborhood_cost(s);
        break;
      case CostTerm::kEqClass:
        cost = md_->local_cost(s) + md_->approx_neighborhood_cost(s);
        break;
      case CostTerm::kLocal:
        cost = md_->local_cost(s);
        break;
      case CostTerm::kOff:
        break;
    }
    u64 den = 1;
    if (spec_.use_size) {
      if (st.size == 0) return ScoreValue::inf();
      den = static_cast<u64>(st.size);
    }
    if (spec_.use_staleness) {
      Staleness stale = spec_.kind == HeuristicKind::kDtrFullMinStale
                            ? neighborhood_staleness(s, now)
                            : md_->staleness(s, now);
      if (stale.infinite) return ScoreValue::ratio(0, 1);
      return scaled(static_cast<u64>(cost), den, static_cast<u64>(stale.value));
    }
    return ScoreValue::ratio(static_cast<u64>(cost), den);
  }

  // num / (a * b), halving both sides while the denominator would overflow.
  // Only reachable with byte sizes and clock values near 2^32 each.
  static ScoreValue scaled(u64 num, u64 a, u64 b) {
    u64 den = 0;
    while (__builtin_mul_overflow(a, b, &den)) {
      if (a >= b) a >>= 1; else b >>= 1;
      num >>= 1;
    }
    return ScoreValue::ratio(num, den);
  }

  // Staleness of the most recent access across e*(S) and S itself.
  Staleness neighborhood_staleness(StorageId s, Time now) {
    Time last = md_->last_access(s);
    for (StorageId n : md_->cached_ancestors(s)) last = std::max(last, md_->last_access(n));
    for (StorageId n : md_->cached_descendants(s)) last = std::max(last, md_->last_access(n));
    return Metadata::staleness_since(last, now);
  }

  HeuristicSpec spec_;
  const DependencyGraph* graph_;
  Metadata* md_;
  std::uint64_t* accesses_;
  std::mt19937_64 rng_;
};

}  // namespace dtr
