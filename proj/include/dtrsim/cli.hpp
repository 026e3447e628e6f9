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

// Command-line front end. run_cli() takes argv-style arguments and writes to
// the given streams so tests can drive it in-process.

#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "dtrsim/bounds.hpp"
#include "dtrsim/generators.hpp"
#include "dtrsim/heuristics.hpp"
#include "dtrsim/oplog.hpp"
#include "dtrsim/runtime.hpp"
#include "json.hpp"

namespace dtr {

inline constexpr const char* kSweepHeader =
    "heuristic,policy,budget_bytes,budget_ratio,base_compute,total_compute,slowdown,"
    "remats,evictions,peak_memory,storage_accesses,status";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitOom = 2;
inline constexpr int kExitBoundFailed = 3;

// Seed for the random heuristic and random-DAG generator: RMS_SEED or 0.
inline std::uint64_t default_seed() {
  const char* env = std::getenv("RMS_SEED");
  if (!env || !*env) return 0;
  return std::strtoull(env, nullptr, 10);
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct SweepRow {
  std::string heuristic;
  std::string policy;
  Bytes budget_bytes = 0;
  double budget_ratio = 0;
  // Ratio as requested on the command line; used only for ordering.
  double requested_ratio = 0;
  Telemetry telemetry;
  Status status = Status::kOk;

  std::string csv() const {
    std::ostringstream os;
    os << heuristic << ',' << policy << ',' << budget_bytes << ',' << format_number(budget_ratio)
       << ',' << telemetry.base_compute << ',' << telemetry.total_compute << ','
       << format_number(telemetry.slowdown()) << ',' << telemetry.rematerialization_count << ','
       << telemetry.eviction_count << ',' << telemetry.peak_memory << ','
       << telemetry.storage_accesses << ',' << status_name(status);
    return os.str();
  }

  nlohmann::json json() const {
    return {{"heuristic", heuristic},
            {"policy", policy},
            {"budget_bytes", budget_bytes},
            {"budget_ratio", budget_ratio},
            {"base_compute", telemetry.base_compute},
            {"total_compute", telemetry.total_compute},
            {"slowdown", telemetry.slowdown()},
            {"remats", telemetry.rematerialization_count},
            {"evictions", telemetry.eviction_count},
            {"peak_memory", telemetry.peak_memory},
            {"storage_accesses", telemetry.storage_accesses},
            {"status", status_name(status)}};
  }
};

inline Bytes budget_for_ratio(const OpLog& log, double ratio) {
  return static_cast<Bytes>(std::floor(ratio * static_cast<double>(log.unconstrained_peak)));
}

inline double ratio_of(const OpLog& log, Bytes budget) {
  if (log.unconstrained_peak <= 0) return 1.0;
  return static_cast<double>(budget) / static_cast<double>(log.unconstrained_peak);
}

inline SweepRow replay_row(const OpLog& log, Bytes budget, const HeuristicSpec& h,
                           DeallocPolicy policy, double thrash_factor, ReplayOptions opts = {}) {
  opts.thrash_factor = thrash_factor;
  SimOutcome out = run(log, budget, h, policy, std::move(opts));
  SweepRow row;
  row.heuristic = h.name();
  row.policy = policy_name(policy);
  row.budget_bytes = budget;
  row.budget_ratio = ratio_of(log, budget);
  row.requested_ratio = row.budget_ratio;
  row.telemetry = out.telemetry;
  row.status = out.status;
  return row;
}

// Rows ordered by heuristic name, policy, then descending ratio.
inline void sort_rows(std::vector<SweepRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return std::tie(a.heuristic, a.policy, b.requested_ratio) <
           std::tie(b.heuristic, b.policy, a.requested_ratio);
  });
}

struct SweepJob {
  HeuristicSpec heuristic;
  DeallocPolicy policy;
  double ratio;
};

inline std::vector<SweepRow> sweep(const OpLog& log, const std::vector<SweepJob>& jobs,
                                   double thrash_factor, int parallel) {
  std::vector<SweepRow> rows(jobs.size());
  auto work = [&](std::size_t i) {
    const SweepJob& j = jobs[i];
    rows[i] = replay_row(log, budget_for_ratio(log, j.ratio), j.heuristic, j.policy,
                         thrash_factor);
    rows[i].requested_ratio = j.ratio;
  };
  if (parallel <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < parallel; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < jobs.size();) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  sort_rows(rows);
  return rows;
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Heuristic lists split on ';' so ablation specs can keep their commas.
inline std::vector<std::string> split_heuristics(const std::string& s) {
  if (s.find("ablation:") == std::string::npos) return split_list(s);
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& x : split_list(s)) out.push_back(std::stod(x));
  return out;
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& x : split_list(s)) out.push_back(std::stoi(x));
  return out;
}

class OutputFile {
 public:
  OutputFile(const std::string& path, std::ostream& fallback) {
    if (path.empty() || path == "-") {
      stream_ = &fallback;
    } else {
      file_.open(path, std::ios::binary);
      if (!file_) throw std::runtime_error("cannot open " + path + " for writing");
      stream_ = &file_;
    }
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

// Writes one row per storage per step: evicted, resident or pinned.
class TraceWriter {
 public:
  explicit TraceWriter(std::ostream& out) : out_(&out) { *out_ << "step,storage_id,state\n"; }

  void operator()(const Replay& rep, std::size_t step) {
    for (const Storage& st : rep.runtime().graph().storages()) {
      if (st.banished || !st.computed) continue;
      const char* state = !st.resident ? "evicted" : st.pinned ? "pinned" : "resident";
      *out_ << step << ',' << st.id.value << ',' << state << '\n';
    }
  }

 private:
  std::ostream* out_;
};

}  // namespace detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trace-driven simulator for dynamic tensor rematerialization"};
  app.require_subcommand(1);
  const std::uint64_t seed = default_seed();

  // replay
  auto* replay = app.add_subcommand("replay", "Replay one log at one budget");
  std::string log_path, heuristic = "dtr-full", policy = "eager-evict", trace_path,
                        format = "csv";
  Bytes budget = -1;
  double ratio = -1, thrash_factor = 2.0;
  replay->add_option("--log", log_path, "Operation log (.gz accepted)")->required();
  auto* budget_opt = replay->add_option("--budget", budget, "Budget in bytes");
  auto* ratio_opt = replay->add_option("--ratio", ratio, "Budget as a fraction of peak");
  budget_opt->excludes(ratio_opt);
  replay->add_option("--heuristic", heuristic, "Eviction heuristic");
  replay->add_option("--policy", policy, "ignore, eager-evict, banish or banish-v2");
  replay->add_option("--thrash-factor", thrash_factor, "Slowdown counted as thrashing");
  replay->add_option("--trace", trace_path, "Write a per-step residency CSV");
  replay->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Replay one log across budgets and heuristics");
  std::string ratios = "1.0,0.9,0.8,0.7,0.6,0.5,0.4,0.3,0.2,0.1";
  std::string heuristics = "dtr-full,dtr-eqclass,dtr-local,lru,largest,msps,random";
  std::string policies = "eager-evict";
  std::string out_path;
  int parallel = 1;
  sweep_cmd->add_option("--log", log_path, "Operation log (.gz accepted)")->required();
  sweep_cmd->add_option("--ratios", ratios, "Comma-separated budget ratios");
  sweep_cmd->add_option("--heuristics", heuristics, "Comma-separated heuristics");
  sweep_cmd->add_option("--policies", policies, "Comma-separated policies");
  sweep_cmd->add_option("--thrash-factor", thrash_factor, "Slowdown counted as thrashing");
  sweep_cmd->add_option("--out", out_path, "CSV destination (stdout by default)");
  sweep_cmd->add_option("--parallel", parallel, "Worker threads")->check(CLI::PositiveNumber);

  // verify-bounds
  auto* verify = app.add_subcommand("verify-bounds", "Check the linear and adversary bounds");
  int theorem = 1;
  std::string sizes, budgets = "8,16,32", bound_heuristics = "compute-memory,lru,dtr-local";
  verify->add_option("--theorem", theorem, "1 (linear network) or 2 (adversary)")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  verify->add_option("--sizes", sizes, "Comma-separated N values");
  verify->add_option("--budgets", budgets, "Adversary budgets (theorem 2)");
  verify->add_option("--heuristics", bound_heuristics, "Adversary heuristics (theorem 2)");
  verify->add_option("--out", out_path, "JSON destination (stdout by default)");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a workload log");
  gen->require_subcommand(1);
  auto* gen_lin = gen->add_subcommand("linear", "Linear network with backward pass");
  int n = 0, nodes = 0, max_fanin = 3;
  std::uint64_t gen_seed = seed;
  gen_lin->add_option("--n", n, "Layer count")->required()->check(CLI::Range(2, 1 << 24));
  gen_lin->add_option("--out", out_path, "Log destination (stdout by default)");
  auto* gen_rand = gen->add_subcommand("random", "Random DAG");
  gen_rand->add_option("--nodes", nodes, "Node count")->required()->check(CLI::PositiveNumber);
  gen_rand->add_option("--max-fanin", max_fanin, "Maximum inputs per op");
  gen_rand->add_option("--seed", gen_seed, "Generator seed (default RMS_SEED or 0)");
  gen_rand->add_option("--out", out_path, "Log destination (stdout by default)");

  // adversary
  auto* adv = app.add_subcommand("adversary", "Run the online adversary");
  std::string adv_log;
  heuristic = "dtr-full";
  adv->add_option("--n", n, "Total node count")->required();
  adv->add_option("--budget", budget, "Budget in nodes")->required();
  adv->add_option("--heuristic", heuristic, "Eviction heuristic");
  adv->add_option("--out", out_path, "JSON report destination (stdout by default)");
  adv->add_option("--log", adv_log, "Also write the revealed graph as a log");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostream& stream = e.get_exit_code() == 0 ? out : err;
    stream << (e.get_exit_code() == 0 ? app.help() : std::string(e.what()) + "\n");
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*replay) {
      if (budget_opt->count() == 0 && ratio_opt->count() == 0) {
        err << "replay needs --budget or --ratio\n";
        return kExitUsage;
      }
      OpLog log = read_log_file(log_path);
      Bytes b = budget_opt->count() ? budget : budget_for_ratio(log, ratio);
      HeuristicSpec h = HeuristicSpec::parse(heuristic, seed);
      ReplayOptions opts;
      std::ofstream trace_file;
      std::optional<detail::TraceWriter> trace;
      if (!trace_path.empty()) {
        trace_file.open(trace_path, std::ios::binary);
        if (!trace_file) throw std::runtime_error("cannot open " + trace_path);
        trace.emplace(trace_file);
        opts.observer = [&](const Replay& r, std::size_t step) { (*trace)(r, step); };
      }
      SweepRow row = replay_row(log, b, h, parse_policy(policy), thrash_factor, std::move(opts));
      if (format == "json") {
        out << row.json().dump() << '\n';
      } else {
        out << kSweepHeader << '\n' << row.csv() << '\n';
      }
      return row.status == Status::kOom ? kExitOom : kExitOk;
    }

    if (*sweep_cmd) {
      OpLog log = read_log_file(log_path);
      std::vector<SweepJob> jobs;
      for (const auto& hname : detail::split_heuristics(heuristics)) {
        HeuristicSpec h = HeuristicSpec::parse(hname, seed);
        for (const auto& pname : detail::split_list(policies)) {
          for (double r : detail::parse_doubles(ratios)) jobs.push_back({h, parse_policy(pname), r});
        }
      }
      std::vector<SweepRow> rows = sweep(log, jobs, thrash_factor, parallel);
      detail::OutputFile dest(out_path, out);
      *dest << kSweepHeader << '\n';
      for (const auto& row : rows) *dest << row.csv() << '\n';
      return kExitOk;
    }

    if (*verify) {
      nlohmann::json report;
      report["theorem"] = theorem;
      bool pass = true;
      nlohmann::json cases = nlohmann::json::array();
      if (theorem == 1) {
        std::vector<int> ns = sizes.empty() ? std::vector<int>{64, 128, 256, 512, 1024}
                                            : detail::parse_ints(sizes);
        std::optional<double> base_overhead;
        for (int size : ns) {
          LinearRun r = run_linear(size);
          double overhead = static_cast<double>(r.total()) / (2.0 * size);
          if (!base_overhead) base_overhead = overhead;
          bool bounded = overhead <= 1.25 * *base_overhead;
          nlohmann::json c = r.to_json();
          c["overhead_bounded"] = bounded;
          c["pass"] = r.ok() && r.forward_exact() && bounded && r.forward_gap_ok() &&
                      r.backward_gap_ok();
          pass = pass && c["pass"].get<bool>();
          cases.push_back(c);
        }
      } else {
        std::vector<int> ns = sizes.empty() ? std::vector<int>{512} : detail::parse_ints(sizes);
        for (int size : ns) {
          for (int b : detail::parse_ints(budgets)) {
            for (const auto& hname : detail::split_list(bound_heuristics)) {
              AdversaryReport a = run_adversary(size, b, HeuristicSpec::parse(hname, seed));
              nlohmann::json c = a.to_json();
              double bound = static_cast<double>(size) / (4.0 * b);
              c["bound"] = bound;
              c["pass"] = a.ratio >= bound && a.static_cost == size;
              pass = pass && c["pass"].get<bool>();
              cases.push_back(c);
            }
          }
        }
      }
      report["cases"] = cases;
      report["pass"] = pass;
      detail::OutputFile dest(out_path, out);
      *dest << report.dump(2) << '\n';
      return pass ? kExitOk : kExitBoundFailed;
    }

    if (*gen_lin || *gen_rand) {
      OpLog log = *gen_lin ? gen_linear(n) : gen_random_dag(nodes, max_fanin, gen_seed);
      if (out_path.empty() || out_path == "-") {
        out << serialize(log);
      } else {
        write_log_file(out_path, log);
      }
      return kExitOk;
    }

    if (*adv) {
      AdversaryReport a = run_adversary(n, budget, HeuristicSpec::parse(heuristic, seed));
      if (!adv_log.empty()) write_log_file(adv_log, a.log);
      detail::OutputFile dest(out_path, out);
      *dest << a.to_json().dump() << '\n';
      return kExitOk;
    }
  } catch (const LogError& e) {
    err << "malformed log: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << e.what() << '\n';
    return kExitUsage;
  } catch (const std::runtime_error& e) {
    err << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace dtr
