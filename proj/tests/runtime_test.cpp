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

#include <gtest/gtest.h>

#include "dtrsim/generators.hpp"
#include "dtrsim/runtime.hpp"

namespace dtr {
namespace {

const HeuristicSpec kFull = HeuristicSpec::parse("dtr-full");
const HeuristicSpec kLru = HeuristicSpec::parse("lru");

TensorId op1(Runtime& rt, std::vector<TensorId> in, Time cost, Bytes size,
             std::optional<std::size_t> alias = std::nullopt) {
  OutputSpec out{size, alias};
  return rt.call("op", cost, in, std::span(&out, 1)).front();
}

StorageId sid(const Runtime& rt, TensorId t) { return rt.graph().tensor(t).storage; }

TEST(RuntimeTest, SingleCallAdvancesClock) {
  Runtime rt(10, kFull, DeallocPolicy::kIgnore);
  TensorId a = op1(rt, {}, 3, 4);
  EXPECT_EQ(rt.clock(), 3);
  EXPECT_EQ(rt.memory(), 4);
  EXPECT_TRUE(rt.graph().tensor(a).defined);
  EXPECT_EQ(rt.graph().tensor(a).refs, 1);
  EXPECT_EQ(rt.pool().count(sid(rt, a)), 1u);
  rt.audit(true);
}

TEST(RuntimeTest, ChainRematerializesInOrder) {
  Runtime rt(100, kFull, DeallocPolicy::kIgnore);
  TensorId s1 = op1(rt, {}, 1, 1);
  TensorId s2 = op1(rt, {s1}, 2, 1);
  TensorId s3 = op1(rt, {s2}, 3, 1);
  rt.evict(sid(rt, s3));
  rt.evict(sid(rt, s2));
  Time before = rt.clock();
  rt.materialize(s3);
  EXPECT_EQ(rt.clock() - before, 5);
  EXPECT_TRUE(rt.graph().tensor(s2).defined);
  EXPECT_TRUE(rt.graph().tensor(s3).defined);
  EXPECT_EQ(rt.telemetry().rematerialization_count, 2u);
  rt.audit(true);
}

TEST(RuntimeTest, MultiOutputRecomputeCountsOnlyEvictedOutput) {
  Runtime rt(100, kFull, DeallocPolicy::kIgnore);
  OutputSpec outs[] = {{3, std::nullopt}, {5, std::nullopt}};
  auto r = rt.call("split", 2, {}, outs);
  rt.evict(sid(rt, r[1]));
  EXPECT_EQ(rt.memory(), 3);
  rt.materialize(r[1]);
  EXPECT_EQ(rt.memory(), 8);
  EXPECT_EQ(rt.clock(), 4);
  rt.audit(true);
}

TEST(RuntimeTest, EvictUndefinesAllViewsButNotDependents) {
  Runtime rt(100, kFull, DeallocPolicy::kIgnore);
  TensorId a = op1(rt, {}, 1, 8);
  TensorId v = op1(rt, {a}, 1, 0, 0);
  TensorId b = op1(rt, {a}, 1, 2);
  EXPECT_EQ(sid(rt, v), sid(rt, a));
  rt.evict(sid(rt, a));
  EXPECT_EQ(rt.memory(), 2);
  EXPECT_FALSE(rt.graph().tensor(a).defined);
  EXPECT_FALSE(rt.graph().tensor(v).defined);
  EXPECT_TRUE(rt.graph().tensor(b).defined);
  EXPECT_EQ(rt.telemetry().eviction_count, 1u);
  // Rematerializing the view recomputes its source as well.
  rt.materialize(v);
  EXPECT_TRUE(rt.graph().tensor(a).defined);
  EXPECT_TRUE(rt.graph().tensor(v).defined);
  rt.audit(true);
}

TEST(RuntimeTest, EvictingLockedOrPinnedIsAnInvariantViolation) {
  Runtime rt(100, kFull, DeallocPolicy::kIgnore);
  TensorId c = rt.constant(1);
  EXPECT_THROW(rt.evict(sid(rt, c)), InvariantViolation);
  TensorId a = op1(rt, {}, 1, 1);
  rt.evict(sid(rt, a));
  EXPECT_THROW(rt.evict(sid(rt, a)), InvariantViolation);
}

TEST(RuntimeTest, FreeUnderBudgetEvictsNothing) {
  Runtime rt(10, kFull, DeallocPolicy::kIgnore);
  op1(rt, {}, 1, 4);
  rt.free(6);
  EXPECT_EQ(rt.telemetry().eviction_count, 0u);
}

TEST(RuntimeTest, FreeEvictsLowestScoresInOrder) {
  // Four unit storages created at t=1..4; under lru the oldest go first.
  Runtime rt(4, kLru, DeallocPolicy::kIgnore);
  std::vector<TensorId> ts;
  for (int i = 0; i < 4; ++i) ts.push_back(op1(rt, {}, 1, 1));
  // Touch the first one again so it becomes the freshest.
  op1(rt, {ts[0]}, 1, 0, 0);
  std::vector<std::pair<StorageId, Score>> scores;
  for (StorageId s : rt.pool()) scores.push_back({s, rt.scorer().score(s, rt.clock())});
  std::sort(scores.begin(), scores.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  rt.free(2);
  EXPECT_EQ(rt.telemetry().eviction_count, 2u);
  EXPECT_FALSE(rt.graph().storage(scores[0].first).resident);
  EXPECT_FALSE(rt.graph().storage(scores[1].first).resident);
  EXPECT_TRUE(rt.graph().storage(scores[2].first).resident);
  EXPECT_EQ(scores[0].first, sid(rt, ts[1]));
  EXPECT_EQ(scores[1].first, sid(rt, ts[2]));
}

TEST(RuntimeTest, OutOfMemoryWhenLiveSetDoesNotFit) {
  Runtime rt(5, kFull, DeallocPolicy::kIgnore);
  TensorId a = op1(rt, {}, 1, 3);
  EXPECT_THROW(op1(rt, {a}, 1, 3), OutOfMemory);
}

TEST(RuntimeTest, BudgetNeverExceeded) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    OpLog log = gen_random_dag(120, 4, seed);
    for (double r : {0.9, 0.6, 0.4}) {
      ReplayOptions opts;
      opts.audit = true;
      Bytes budget = static_cast<Bytes>(r * static_cast<double>(log.unconstrained_peak));
      opts.observer = [&](const Replay& rp, std::size_t) {
        ASSERT_LE(rp.runtime().memory(), budget);
      };
      SimOutcome out = run(log, budget, kFull, DeallocPolicy::kEagerEvict, opts);
      EXPECT_LE(out.telemetry.peak_memory, budget);
    }
  }
}

TEST(BanishTest, ReleasedLeafIsBanishedImmediately) {
  Runtime rt(100, kFull, DeallocPolicy::kBanish);
  TensorId a = op1(rt, {}, 1, 6);
  rt.release(a);
  EXPECT_TRUE(rt.graph().storage(sid(rt, a)).banished);
  EXPECT_EQ(rt.memory(), 0);
  EXPECT_EQ(rt.telemetry().banish_count, 1u);
  rt.audit(true);
}

TEST(BanishTest, PinsDependents) {
  Runtime rt(100, kFull, DeallocPolicy::kBanish);
  TensorId a = op1(rt, {}, 1, 1);
  TensorId b = op1(rt, {a}, 1, 1);
  rt.release(a);
  EXPECT_TRUE(rt.graph().storage(sid(rt, a)).banished);
  EXPECT_TRUE(rt.graph().storage(sid(rt, b)).pinned);
  EXPECT_EQ(rt.pool().count(sid(rt, b)), 0u);
  // A pinned storage can still be banished later.
  rt.release(b);
  EXPECT_TRUE(rt.graph().storage(sid(rt, b)).banished);
  rt.audit(true);
}

TEST(BanishTest, DeferredUntilDependentRematerializes) {
  Runtime rt(100, kFull, DeallocPolicy::kBanish);
  TensorId a = op1(rt, {}, 1, 1);
  TensorId b = op1(rt, {a}, 1, 1);
  rt.evict(sid(rt, b));
  rt.release(a);
  EXPECT_FALSE(rt.graph().storage(sid(rt, a)).banished);
  EXPECT_TRUE(rt.banish_pending(sid(rt, a)));
  rt.materialize(b);
  EXPECT_TRUE(rt.graph().storage(sid(rt, a)).banished);
  EXPECT_FALSE(rt.banish_pending(sid(rt, a)));
  EXPECT_TRUE(rt.graph().storage(sid(rt, b)).pinned);
  rt.audit(true);
}

TEST(BanishTest, CanFreeConstants) {
  Runtime rt(100, kFull, DeallocPolicy::kBanish);
  TensorId c = rt.constant(7);
  rt.release(c);
  EXPECT_EQ(rt.memory(), 0);
}

TEST(EagerTest, EvictsOnLastReleaseButKeepsConstants) {
  Runtime rt(100, kFull, DeallocPolicy::kEagerEvict);
  TensorId c = rt.constant(7);
  TensorId a = op1(rt, {c}, 1, 2);
  rt.release(a);
  EXPECT_FALSE(rt.graph().storage(sid(rt, a)).resident);
  rt.release(c);
  EXPECT_TRUE(rt.graph().storage(sid(rt, c)).resident);
  EXPECT_EQ(rt.memory(), 7);
  EXPECT_EQ(rt.telemetry().pinned_bytes, 7);
  rt.audit(true);
}

TEST(BanishV2Test, ReleasedStorageScoresZero) {
  Runtime rt(100, kFull, DeallocPolicy::kBanishV2);
  TensorId a = op1(rt, {}, 5, 2);
  op1(rt, {}, 1, 2);
  rt.release(a);
  EXPECT_TRUE(rt.graph().storage(sid(rt, a)).resident);
  EXPECT_EQ(rt.scorer().score(sid(rt, a), rt.clock()).value, ScoreValue::ratio(0, 1));
}

TEST(ReleaseTest, ReleasingUnreferencedTensorThrows) {
  Runtime rt(100, kFull, DeallocPolicy::kIgnore);
  TensorId a = op1(rt, {}, 1, 1);
  rt.release(a);
  EXPECT_THROW(rt.release(a), std::logic_error);
}

// x = f(); y = g(x); z = h(y); release x, y. z is live at the end.
OpLog three_op_log() {
  std::vector<Instruction> ins;
  detail::emit_call(ins, "f", {}, "x", 1, 1);
  detail::emit_call(ins, "g", {"x"}, "y", 1, 1);
  detail::emit_call(ins, "h", {"y"}, "z", 4, 1);
  ins.push_back(instr::Release{"x"});
  ins.push_back(instr::Release{"y"});
  return make_log(std::move(ins));
}

TEST(OutputConditionTest, AllResidentIsANoOp) {
  OpLog log = three_op_log();
  SimOutcome out = run(log, 100, kFull, DeallocPolicy::kIgnore);
  EXPECT_EQ(out.telemetry.total_compute, 6);
  EXPECT_EQ(out.telemetry.rematerialization_count, 0u);
}

TEST(OutputConditionTest, EvictedOutputIsRecomputedAndCharged) {
  OpLog log = three_op_log();
  // Evict the live output by hand after the last instruction.
  Time before_end = 0;
  ReplayOptions opts;
  opts.observer = [&](const Replay& r, std::size_t head) {
    if (head + 1 == log.instructions.size()) {
      auto& rt = const_cast<Replay&>(r).runtime();
      rt.evict(rt.graph().tensor(*r.lookup("z")).storage);
      before_end = rt.clock();
    }
  };
  Replay replay(log, 100, kFull, DeallocPolicy::kIgnore, opts);
  SimOutcome out = replay.run();
  EXPECT_EQ(before_end, 6);
  // Without enforcement the evicted output would have looked free.
  EXPECT_EQ(out.telemetry.total_compute, 10);
  EXPECT_EQ(out.telemetry.rematerialization_count, 1u);
  const Tensor& z = replay.runtime().graph().tensor(*replay.lookup("z"));
  EXPECT_TRUE(z.defined);
  EXPECT_GT(replay.runtime().graph().storage(z.storage).locks, 0);
}

TEST(ReplayTest, UnlimitedBudgetHasNoOverhead) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    OpLog log = gen_random_dag(80, 4, seed);
    SimOutcome out = run(log, log.unconstrained_peak, kFull, DeallocPolicy::kEagerEvict);
    EXPECT_EQ(out.status, Status::kOk);
    // Only dead storages are evicted; nothing is recomputed.
    EXPECT_EQ(out.telemetry.rematerialization_count, 0u);
    EXPECT_EQ(out.telemetry.peak_memory, log.unconstrained_peak);
    EXPECT_EQ(out.telemetry.total_compute, log.base_compute);
    EXPECT_DOUBLE_EQ(out.telemetry.slowdown(), 1.0);
  }
}

TEST(ReplayTest, ClockMatchesTotalCompute) {
  OpLog log = gen_random_dag(150, 4, 3);
  for (auto policy : {DeallocPolicy::kIgnore, DeallocPolicy::kEagerEvict, DeallocPolicy::kBanish,
                      DeallocPolicy::kBanishV2}) {
    Replay replay(log, log.unconstrained_peak / 2, kFull, policy);
    SimOutcome out = replay.run();
    EXPECT_EQ(replay.runtime().clock(), out.telemetry.total_compute) << policy_name(policy);
    EXPECT_GE(out.telemetry.total_compute, out.telemetry.base_compute);
  }
}

TEST(ReplayTest, Deterministic) {
  OpLog log = gen_random_dag(200, 4, 9);
  for (std::string h : {"dtr-full", "random", "lru", "dtr-eqclass"}) {
    auto once = [&] {
      SimOutcome o = run(log, log.unconstrained_peak / 2, HeuristicSpec::parse(h, 4),
                         DeallocPolicy::kEagerEvict);
      const Telemetry& t = o.telemetry;
      return std::tuple(o.status, t.total_compute, t.rematerialization_count, t.eviction_count,
                        t.peak_memory, t.storage_accesses);
    };
    EXPECT_EQ(once(), once()) << h;
  }
}

TEST(ReplayTest, OomAndThrashAreReported) {
  OpLog log = gen_linear(64);
  EXPECT_EQ(run(log, 1, kFull, DeallocPolicy::kBanish).status, Status::kOom);
  SimOutcome t = run(log, 3, kFull, DeallocPolicy::kBanish);
  EXPECT_EQ(t.status, Status::kThrash);
}

TEST(ReplayTest, LongChainDoesNotOverflowTheStack) {
  constexpr int kLength = 100000;
  Runtime rt(kLength + 10, HeuristicSpec::parse("dtr-local"), DeallocPolicy::kIgnore);
  std::vector<TensorId> ts{op1(rt, {}, 1, 1)};
  for (int i = 1; i < kLength; ++i) ts.push_back(op1(rt, {ts.back()}, 1, 1));
  for (int i = 1; i < kLength; ++i) rt.evict(sid(rt, ts[i]));
  Time before = rt.clock();
  rt.materialize(ts.back());
  EXPECT_EQ(rt.clock() - before, kLength - 1);
  rt.audit(true);
}

TEST(ReplayTest, AuditsHoldOnEveryPolicy) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    OpLog log = gen_random_dag(100, 4, seed);
    for (auto policy : {DeallocPolicy::kIgnore, DeallocPolicy::kEagerEvict,
                        DeallocPolicy::kBanish, DeallocPolicy::kBanishV2}) {
      for (std::string h : {"dtr-full", "dtr-eqclass", "msps", "random"}) {
        ReplayOptions opts;
        opts.audit = true;
        EXPECT_NO_THROW(run(log, log.unconstrained_peak * 6 / 10, HeuristicSpec::parse(h),
                            policy, opts))
            << h << " " << policy_name(policy);
      }
    }
  }
}

TEST(ReplayTest, IgnoreCostsAtLeastEagerOnLinear) {
  OpLog log = gen_linear(128);
  for (Bytes b : {24, 32, 48}) {
    SimOutcome ig = run(log, b, kFull, DeallocPolicy::kIgnore);
    SimOutcome ea = run(log, b, kFull, DeallocPolicy::kEagerEvict);
    if (ig.status == Status::kOom) continue;
    EXPECT_GE(ig.telemetry.total_compute, ea.telemetry.total_compute) << b;
  }
}

TEST(PolicyTest, NamesRoundTrip) {
  for (std::string n : {"ignore", "eager-evict", "banish", "banish-v2"}) {
    EXPECT_EQ(policy_name(parse_policy(n)), n);
  }
  EXPECT_THROW(parse_policy("sometimes"), std::invalid_argument);
}

}  // namespace
}  // namespace dtr
