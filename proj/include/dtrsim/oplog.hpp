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

// Operation-log format. One JSON object per line; the "instr" field selects
// the record kind:
//
//   {"instr":"CALL","inputs":[..],"outputs":[..],"cost":C,"op":"name"}
//   {"instr":"MUTATE","inputs":[..],"mutated":[..],"cost":C,"op":"name"}
//   {"instr":"MEMORY","tensor":"t","size":S}
//   {"instr":"ALIAS","output":"t","source":"u" | null}
//   {"instr":"CONSTANT","tensor":"t"}
//   {"instr":"COPY","dst":"y","src":"x"}
//   {"instr":"COPYFROM","dst":"y","src":"x"}
//   {"instr":"RELEASE","tensor":"t"}
//
// Every CALL is followed, per output and in output order, by a MEMORY record
// then an ALIAS record. CONSTANT is followed by one MEMORY record. The
// canonical serialization sorts keys and uses no whitespace.

#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "dtrsim/graph.hpp"
#include "json.hpp"

namespace dtr {

namespace instr {
struct Call {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  Time cost = 0;
  std::string op;
};
struct Mutate {
  std::vector<std::string> inputs;
  std::vector<std::string> mutated;
  Time cost = 0;
  std::string op;
};
struct Memory {
  std::string tensor;
  Bytes size = 0;
};
struct Alias {
  std::string output;
  std::optional<std::string> source;
};
struct Constant {
  std::string tensor;
};
struct Copy {
  std::string dst;
  std::string src;
};
struct CopyFrom {
  std::string dst;
  std::string src;
};
struct Release {
  std::string tensor;
};
}  // namespace instr

using Instruction = std::variant<instr::Call, instr::Mutate, instr::Memory, instr::Alias,
                                 instr::Constant, instr::Copy, instr::CopyFrom,
                                 instr::Release>;

// Malformed log. line/column are 1-based; instruction is the 0-based index
// of the offending record when known.
class LogError : public std::runtime_error {
 public:
  LogError(const std::string& what, std::size_t line, std::size_t column = 1,
           std::optional<std::size_t> instruction = std::nullopt)
      : std::runtime_error("line " + std::to_string(line) + ", column " +
                           std::to_string(column) + ": " + what),
        line_(line),
        column_(column),
        instruction_(instruction) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }
  std::optional<std::size_t> instruction() const { return instruction_; }

 private:
  std::size_t line_;
  std::size_t column_;
  std::optional<std::size_t> instruction_;
};

struct OpLog {
  std::vector<Instruction> instructions;
  // Source line of each instruction (1-based).
  std::vector<std::size_t> lines;
  // Σ cost over CALL and MUTATE records: the unlimited-memory compute.
  Time base_compute = 0;
  // Peak bytes when storages are allocated at creation and freed as soon as
  // their external references drop to zero. Constants are never freed.
  Bytes unconstrained_peak = 0;

  std::size_t line_of(std::size_t i) const { return i < lines.size() ? lines[i] : i + 1; }
};

// ---------------------------------------------------------------------------
// JSON mapping

inline nlohmann::json to_json(const Instruction& ins) {
  using nlohmann::json;
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, instr::Call>) {
          return {{"instr", "CALL"}, {"inputs", x.inputs}, {"outputs", x.outputs},
                  {"cost", x.cost}, {"op", x.op}};
        } else if constexpr (std::is_same_v<T, instr::Mutate>) {
          return {{"instr", "MUTATE"}, {"inputs", x.inputs}, {"mutated", x.mutated},
                  {"cost", x.cost}, {"op", x.op}};
        } else if constexpr (std::is_same_v<T, instr::Memory>) {
          return {{"instr", "MEMORY"}, {"tensor", x.tensor}, {"size", x.size}};
        } else if constexpr (std::is_same_v<T, instr::Alias>) {
          json j = {{"instr", "ALIAS"}, {"output", x.output}};
          j["source"] = x.source ? json(*x.source) : json(nullptr);
          return j;
        } else if constexpr (std::is_same_v<T, instr::Constant>) {
          return {{"instr", "CONSTANT"}, {"tensor", x.tensor}};
        } else if constexpr (std::is_same_v<T, instr::Copy>) {
          return {{"instr", "COPY"}, {"dst", x.dst}, {"src", x.src}};
        } else if constexpr (std::is_same_v<T, instr::CopyFrom>) {
          return {{"instr", "COPYFROM"}, {"dst", x.dst}, {"src", x.src}};
        } else {
          return {{"instr", "RELEASE"}, {"tensor", x.tensor}};
        }
      },
      ins);
}

namespace detail {

class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::size_t line) : j_(j), line_(line) {}

  std::string str(const char* key) const {
    const auto& v = get(key);
    if (!v.is_string()) fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
  }
  std::optional<std::string> nullable_str(const char* key) const {
    const auto& v = get(key);
    if (v.is_null()) return std::nullopt;
    return str(key);
  }
  std::int64_t integer(const char* key) const {
    const auto& v = get(key);
    if (!v.is_number_integer()) fail(std::string("field '") + key + "' must be an integer");
    return v.get<std::int64_t>();
  }
  std::vector<std::string> str_list(const char* key) const {
    const auto& v = get(key);
    if (!v.is_array()) fail(std::string("field '") + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(std::string("field '") + key + "' must hold strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  void expect_fields(std::initializer_list<const char*> keys) const {
    if (j_.size() != keys.size() + 1) {
      for (auto it = j_.begin(); it != j_.end(); ++it) {
        if (it.key() == "instr") continue;
        if (std::none_of(keys.begin(), keys.end(),
                         [&](const char* k) { return it.key() == k; })) {
          fail("unexpected field '" + it.key() + "'");
        }
      }
    }
  }
  [[noreturn]] void fail(const std::string& what) const { throw LogError(what, line_); }

 private:
  const nlohmann::json& get(const char* key) const {
    auto it = j_.find(key);
    if (it == j_.end()) fail(std::string("missing field '") + key + "'");
    return *it;
  }
  const nlohmann::json& j_;
  std::size_t line_;
};

}  // namespace detail

inline Instruction from_json(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw LogError("record must be a JSON object", line);
  auto kind_it = j.find("instr");
  if (kind_it == j.end() || !kind_it->is_string()) {
    throw LogError("missing string field 'instr'", line);
  }
  const std::string kind = kind_it->get<std::string>();
  detail::FieldReader r(j, line);
  if (kind == "CALL") {
    r.expect_fields({"inputs", "outputs", "cost", "op"});
    return instr::Call{r.str_list("inputs"), r.str_list("outputs"), r.integer("cost"),
                       r.str("op")};
  }
  if (kind == "MUTATE") {
    r.expect_fields({"inputs", "mutated", "cost", "op"});
    return instr::Mutate{r.str_list("inputs"), r.str_list("mutated"), r.integer("cost"),
                         r.str("op")};
  }
  if (kind == "MEMORY") {
    r.expect_fields({"tensor", "size"});
    return instr::Memory{r.str("tensor"), r.integer("size")};
  }
  if (kind == "ALIAS") {
    r.expect_fields({"output", "source"});
    return instr::Alias{r.str("output"), r.nullable_str("source")};
  }
  if (kind == "CONSTANT") {
    r.expect_fields({"tensor"});
    return instr::Constant{r.str("tensor")};
  }
  if (kind == "COPY") {
    r.expect_fields({"dst", "src"});
    return instr::Copy{r.str("dst"), r.str("src")};
  }
  if (kind == "COPYFROM") {
    r.expect_fields({"dst", "src"});
    return instr::CopyFrom{r.str("dst"), r.str("src")};
  }
  if (kind == "RELEASE") {
    r.expect_fields({"tensor"});
    return instr::Release{r.str("tensor")};
  }
  throw LogError("unknown instr '" + kind + "'", line);
}

// ---------------------------------------------------------------------------
// Validation and derived quantities

namespace detail {

// Static replay of name bindings and storage reference counts. Checks
// well-formedness and measures the framework-semantics peak.
class LogChecker {
 public:
  void run(OpLog& log) {
    log_ = &log;
    const auto& ins = log.instructions;
    log.base_compute = 0;
    for (std::size_t i = 0; i < ins.size();) {
      i_ = i;
      const Instruction& x = ins[i];
      if (const auto* call = std::get_if<instr::Call>(&x)) {
        i = check_call(*call, i);
      } else if (const auto* mut = std::get_if<instr::Mutate>(&x)) {
        check_mutate(*mut);
        ++i;
      } else if (const auto* c = std::get_if<instr::Constant>(&x)) {
        i = check_constant(*c, i);
      } else if (const auto* cp = std::get_if<instr::Copy>(&x)) {
        require_fresh(cp->dst);
        StorageIdx s = storage_of(cp->src);
        names_[cp->dst] = names_.at(cp->src);
        seen_.insert(cp->dst);
        ++refs_[s];
        ++i;
      } else if (const auto* cf = std::get_if<instr::CopyFrom>(&x)) {
        StorageIdx old_s = storage_of(cf->dst);
        StorageIdx new_s = storage_of(cf->src);
        ++refs_[new_s];
        names_[cf->dst] = names_.at(cf->src);
        drop(old_s);
        ++i;
      } else if (const auto* rel = std::get_if<instr::Release>(&x)) {
        StorageIdx s = storage_of(rel->tensor);
        names_.erase(rel->tensor);
        drop(s);
        ++i;
      } else {
        fail("MEMORY/ALIAS record without a preceding CALL or CONSTANT");
      }
    }
    log.unconstrained_peak = peak_;
  }

 private:
  using StorageIdx = std::size_t;
  using TensorIdx = std::size_t;

  [[noreturn]] void fail(const std::string& what) const {
    throw LogError(what, log_->line_of(i_), 1, i_);
  }

  StorageIdx storage_of(const std::string& name) const {
    auto it = names_.find(name);
    if (it == names_.end()) fail("undefined tensor name '" + name + "'");
    return tensor_storage_[it->second];
  }
  void require_fresh(const std::string& name) const {
    if (seen_.count(name)) fail("duplicate definition of '" + name + "'");
  }

  TensorIdx new_tensor(StorageIdx s) {
    tensor_storage_.push_back(s);
    return tensor_storage_.size() - 1;
  }
  StorageIdx new_storage(Bytes size) {
    sizes_.push_back(size);
    refs_.push_back(0);
    constant_.push_back(false);
    memory_ += size;
    peak_ = std::max(peak_, memory_);
    return sizes_.size() - 1;
  }
  void drop(StorageIdx s) {
    if (--refs_[s] == 0 && !constant_[s]) memory_ -= sizes_[s];
  }

  std::size_t check_call(const instr::Call& call, std::size_t i) {
    if (call.cost <= 0) fail("CALL cost must be positive");
    std::vector<StorageIdx> in_storage;
    for (const auto& n : call.inputs) in_storage.push_back(storage_of(n));
    std::unordered_set<std::string> outs;
    for (const auto& n : call.outputs) {
      require_fresh(n);
      if (!outs.insert(n).second) fail("output '" + n + "' listed twice");
    }
    const auto& ins = log_->instructions;
    std::vector<Bytes> sizes(call.outputs.size());
    std::vector<std::optional<std::size_t>> alias(call.outputs.size());
    std::size_t j = i + 1;
    for (std::size_t k = 0; k < call.outputs.size(); ++k, j += 2) {
      i_ = j;
      const auto* mem = j < ins.size() ? std::get_if<instr::Memory>(&ins[j]) : nullptr;
      if (!mem || mem->tensor != call.outputs[k]) {
        i_ = std::min(j, ins.size() - 1);
        fail("expected MEMORY record for output '" + call.outputs[k] + "'");
      }
      if (mem->size < 0) fail("MEMORY size must be nonnegative");
      sizes[k] = mem->size;
      i_ = j + 1;
      const auto* al = j + 1 < ins.size() ? std::get_if<instr::Alias>(&ins[j + 1]) : nullptr;
      if (!al || al->output != call.outputs[k]) {
        i_ = std::min(j + 1, ins.size() - 1);
        fail("expected ALIAS record for output '" + call.outputs[k] + "'");
      }
      if (al->source) {
        auto pos = std::find(call.inputs.begin(), call.inputs.end(), *al->source);
        if (pos == call.inputs.end()) {
          fail("ALIAS source '" + *al->source + "' is not an input of the CALL");
        }
        alias[k] = static_cast<std::size_t>(pos - call.inputs.begin());
      }
    }
    log_->base_compute += call.cost;
    for (std::size_t k = 0; k < call.outputs.size(); ++k) {
      StorageIdx s = alias[k] ? in_storage[*alias[k]] : new_storage(sizes[k]);
      names_[call.outputs[k]] = new_tensor(s);
      seen_.insert(call.outputs[k]);
      ++refs_[s];
    }
    return j;
  }

  void check_mutate(const instr::Mutate& m) {
    if (m.cost <= 0) fail("MUTATE cost must be positive");
    for (const auto& n : m.inputs) storage_of(n);
    std::unordered_set<std::string> uniq;
    for (const auto& n : m.mutated) {
      if (std::find(m.inputs.begin(), m.inputs.end(), n) == m.inputs.end()) {
        fail("mutated tensor '" + n + "' is not an input");
      }
      if (!uniq.insert(n).second) fail("mutated tensor '" + n + "' listed twice");
    }
    log_->base_compute += m.cost;
    std::vector<StorageIdx> fresh;
    for (const auto& n : m.mutated) fresh.push_back(new_storage(sizes_[storage_of(n)]));
    for (std::size_t k = 0; k < m.mutated.size(); ++k) {
      StorageIdx old_s = storage_of(m.mutated[k]);
      names_[m.mutated[k]] = new_tensor(fresh[k]);
      ++refs_[fresh[k]];
      drop(old_s);
    }
  }

  std::size_t check_constant(const instr::Constant& c, std::size_t i) {
    require_fresh(c.tensor);
    const auto& ins = log_->instructions;
    i_ = i + 1 < ins.size() ? i + 1 : i;
    const auto* mem = i + 1 < ins.size() ? std::get_if<instr::Memory>(&ins[i + 1]) : nullptr;
    if (!mem || mem->tensor != c.tensor) {
      fail("expected MEMORY record for constant '" + c.tensor + "'");
    }
    if (mem->size < 0) fail("MEMORY size must be nonnegative");
    StorageIdx s = new_storage(mem->size);
    constant_[s] = true;
    names_[c.tensor] = new_tensor(s);
    seen_.insert(c.tensor);
    ++refs_[s];
    return i + 2;
  }

  OpLog* log_ = nullptr;
  std::size_t i_ = 0;
  std::unordered_map<std::string, TensorIdx> names_;
  std::unordered_set<std::string> seen_;
  std::vector<StorageIdx> tensor_storage_;
  std::vector<Bytes> sizes_;
  std::vector<int> refs_;
  std::vector<bool> constant_;
  Bytes memory_ = 0;
  Bytes peak_ = 0;
};

}  // namespace detail

// Checks well-formedness and fills base_compute / unconstrained_peak.
inline void validate(OpLog& log) { detail::LogChecker{}.run(log); }

inline OpLog parse(std::istream& in) {
  OpLog log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw LogError(std::string("invalid JSON: ") + e.what(), lineno,
                     std::max<std::size_t>(e.byte, 1));
    }
    log.instructions.push_back(from_json(j, lineno));
    log.lines.push_back(lineno);
  }
  validate(log);
  return log;
}

inline OpLog parse(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

// Builds a log from records (generators use this) and validates it.
inline OpLog make_log(std::vector<Instruction> instructions) {
  OpLog log;
  log.instructions = std::move(instructions);
  for (std::size_t i = 0; i < log.instructions.size(); ++i) log.lines.push_back(i + 1);
  validate(log);
  return log;
}

inline std::string serialize(const OpLog& log) {
  std::string out;
  for (const auto& ins : log.instructions) {
    out += to_json(ins).dump();
    out += '\n';
  }
  return out;
}

// Canonical form of arbitrary log text: every record re-dumped with sorted
// keys and no whitespace; blank lines dropped.
inline std::string canonicalize(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out += nlohmann::json::parse(line).dump();
    out += '\n';
  }
  return out;
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Reads a log file; gzip-compressed when the name ends in ".gz".
inline OpLog read_log_file(const std::string& path) {
  std::string text;
  if (has_suffix(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    char buf[1 << 15];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) text.append(buf, static_cast<std::size_t>(n));
    int err = 0;
    const char* msg = gzerror(f, &err);
    gzclose(f);
    if (n < 0 || err < 0) throw std::runtime_error("gzip read error in " + path + ": " + msg);
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return parse(text);
}

inline void write_log_file(const std::string& path, const OpLog& log) {
  const std::string text = serialize(log);
  if (has_suffix(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open " + path);
    int written = gzwrite(f, text.data(), static_cast<unsigned>(text.size()));
    gzclose(f);
    if (written != static_cast<int>(text.size())) throw std::runtime_error("gzip write failed");
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << text;
  }
}

// ---------------------------------------------------------------------------
// Name binding, copy semantics and mutation lowering

struct RefChange {
  TensorId tensor;
  int delta = 0;
};

// Maps live log names to simulator tensors. Each live binding holds exactly
// one external reference on the tensor it names.
class NameBinder {
 public:
  TensorId resolve(const std::string& name) const {
    auto it = names_.find(name);
    if (it == names_.end()) throw std::out_of_range("unbound tensor name '" + name + "'");
    return it->second;
  }
  bool bound(const std::string& name) const { return names_.count(name) != 0; }
  void bind(const std::string& name, TensorId t) { names_[name] = t; }
  std::size_t live_bindings() const { return names_.size(); }

  // COPY(dst, src): dst names the same tensor; +1 on it.
  std::vector<RefChange> copy(const instr::Copy& c) {
    TensorId t = resolve(c.src);
    names_[c.dst] = t;
    return {{t, +1}};
  }
  // COPYFROM(dst, src): -1 on the old target of dst, +1 on src's tensor.
  std::vector<RefChange> copy_from(const instr::CopyFrom& c) {
    TensorId old_t = resolve(c.dst);
    TensorId new_t = resolve(c.src);
    names_[c.dst] = new_t;
    return {{new_t, +1}, {old_t, -1}};
  }
  // RELEASE(t): -1 and the binding dies.
  std::vector<RefChange> release(const instr::Release& r) {
    TensorId t = resolve(r.tensor);
    names_.erase(r.tensor);
    return {{t, -1}};
  }

  // Tensors that currently have a name, in no particular order.
  std::vector<std::pair<std::string, TensorId>> bindings() const {
    return {names_.begin(), names_.end()};
  }

 private:
  std::unordered_map<std::string, TensorId> names_;
};

// A MUTATE rewritten as a pure operator producing one fresh non-aliasing
// output per mutated input: op(t) becomes t' = copy(t); op(t'); t = t'.
struct LoweredMutate {
  std::string op;
  Time cost = 0;
  std::vector<TensorId> inputs;
  std::vector<std::string> mutated;
  std::vector<OutputSpec> outputs;
};

inline LoweredMutate lower_mutate(const instr::Mutate& m, const NameBinder& names,
                                  const std::function<Bytes(TensorId)>& storage_size) {
  LoweredMutate out;
  out.op = m.op;
  out.cost = m.cost;
  for (const auto& n : m.inputs) out.inputs.push_back(names.resolve(n));
  for (const auto& n : m.mutated) {
    if (std::find(m.inputs.begin(), m.inputs.end(), n) == m.inputs.end()) {
      throw std::invalid_argument("mutated tensor '" + n + "' is not an input");
    }
    out.mutated.push_back(n);
    out.outputs.push_back(OutputSpec{storage_size(names.resolve(n)), std::nullopt});
  }
  return out;
}

// Rebinds each mutated name to its fresh tensor; returns the decrements on
// the old tensors. The fresh tensors start with the binding's single ref.
inline std::vector<RefChange> finish_mutate(const LoweredMutate& m,
                                            std::span<const TensorId> fresh,
                                            NameBinder& names) {
  std::vector<RefChange> changes;
  for (std::size_t k = 0; k < m.mutated.size(); ++k) {
    changes.push_back({names.resolve(m.mutated[k]), -1});
    names.bind(m.mutated[k], fresh[k]);
  }
  return changes;
}

}  // namespace dtr
