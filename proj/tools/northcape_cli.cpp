// Copyright 2026 The Northcape Emulator Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "northcape/fuzz.hpp"
#include "northcape/scenario.hpp"

namespace {

std::string slurp(const std::string& path, bool* ok) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    *ok = false;
    return {};
  }
  std::ostringstream os;
  os << in.rdbuf();
  *ok = true;
  return os.str();
}

int write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    std::cerr << "cannot write " << path << "\n";
    return 2;
  }
  out << text;
  return 0;
}

struct CommonFlags {
  bool no_cache = false;
  std::string trace_out;
  std::string golden;
  uint64_t seed = 0;
  bool seed_set = false;
  uint32_t l1_size = 0;
  uint32_t l2_size = 0;
  uint32_t l2_assoc = 0;
  uint32_t spin_limit = 0;

  northcape::RunOptions to_options() const {
    northcape::RunOptions opts;
    opts.no_cache = no_cache;
    if (seed_set) opts.seed = seed;
    if (l1_size) opts.l1_size = l1_size;
    if (l2_size) opts.l2_size = l2_size;
    if (l2_assoc) opts.l2_assoc = l2_assoc;
    opts.spin_limit = spin_limit;
    return opts;
  }
};

void add_common_flags(CLI::App* cmd, CommonFlags* flags) {
  cmd->add_flag("--no-cache", flags->no_cache,
                "bypass the NTLB (uncached oracle mode)");
  cmd->add_option("--seed", flags->seed, "override the scenario seed")
      ->each([flags](const std::string&) { flags->seed_set = true; });
  cmd->add_option("--trace-out", flags->trace_out, "write the trace to a file");
  cmd->add_option("--l1-size", flags->l1_size, "L1 NTLB entries (I and D)");
  cmd->add_option("--l2-size", flags->l2_size, "L2 NTLB entries");
  cmd->add_option("--l2-assoc", flags->l2_assoc, "L2 NTLB associativity");
  cmd->add_option("--spin-limit", flags->spin_limit,
                  "stack-pool claim retries before giving up");
}

int run_one(const std::string& path, const CommonFlags& flags,
            bool print_stats) {
  bool ok = false;
  std::string text = slurp(path, &ok);
  if (!ok) {
    std::cerr << "cannot read " << path << "\n";
    return 2;
  }
  northcape::RunOutcome out =
      northcape::run_scenario_text(text, flags.to_options());
  if (out.exit_code == 2) {
    std::cerr << "parse error: " << out.error << "\n";
    return 2;
  }
  if (!flags.trace_out.empty()) {
    int rc = write_file(flags.trace_out, out.trace);
    if (rc != 0) return rc;
  }
  if (!flags.golden.empty()) {
    bool gok = false;
    std::string want = slurp(flags.golden, &gok);
    if (!gok) {
      std::cerr << "cannot read golden " << flags.golden << "\n";
      return 2;
    }
    if (want != out.trace) {
      std::cerr << "trace differs from golden " << flags.golden << "\n";
      std::cout << out.trace;
      return 1;
    }
  }
  if (print_stats) {
    std::cout << out.stats;
  } else {
    std::cout << out.trace;
  }
  if (out.exit_code != 0) {
    std::cerr << out.error << "\n";
  }
  return out.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"northcape: capability-architecture emulator"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  std::string run_path;
  CLI::App* run_cmd =
      app.add_subcommand("run", "execute a scenario script and its asserts");
  run_cmd->add_option("scenario", run_path, "scenario JSON file")->required();
  add_common_flags(run_cmd, &run_flags);
  run_cmd->add_option("--golden", run_flags.golden,
                      "compare the trace against a golden file");

  CommonFlags stats_flags;
  std::string stats_path;
  CLI::App* stats_cmd =
      app.add_subcommand("stats", "run a scenario and print counters");
  stats_cmd->add_option("scenario", stats_path, "scenario JSON file")
      ->required();
  add_common_flags(stats_cmd, &stats_flags);

  CLI::App* fuzz_cmd = app.add_subcommand(
      "fuzz", "differential fuzz: cached machine vs uncached oracle");
  uint64_t fuzz_seed = 1;
  uint64_t fuzz_steps = 100000;
  uint32_t w_ops = 40, w_access = 40, w_lock = 10, w_irq = 10;
  uint32_t f_l1 = 0, f_l2 = 0, f_assoc = 0;
  bool inject_bug = false;
  std::string fuzz_trace_out;
  fuzz_cmd->add_option("--seed", fuzz_seed, "fuzz seed");
  fuzz_cmd->add_option("--steps", fuzz_steps, "number of events");
  fuzz_cmd->add_option("--w-ops", w_ops, "weight: capability operations");
  fuzz_cmd->add_option("--w-access", w_access, "weight: bus accesses");
  fuzz_cmd->add_option("--w-lock", w_lock, "weight: lock/revoke");
  fuzz_cmd->add_option("--w-irq", w_irq, "weight: interrupts");
  fuzz_cmd->add_option("--l1-size", f_l1, "L1 NTLB entries");
  fuzz_cmd->add_option("--l2-size", f_l2, "L2 NTLB entries");
  fuzz_cmd->add_option("--l2-assoc", f_assoc, "L2 NTLB associativity");
  fuzz_cmd->add_flag("--inject-skip-taint", inject_bug,
                     "fault injection: skip the global stale taint");
  fuzz_cmd->add_option("--trace-out", fuzz_trace_out,
                       "write the report to a file");

  CLI11_PARSE(app, argc, argv);

  if (run_cmd->parsed()) return run_one(run_path, run_flags, false);
  if (stats_cmd->parsed()) return run_one(stats_path, stats_flags, true);

  if (fuzz_cmd->parsed()) {
    northcape::FuzzConfig cfg;
    cfg.seed = fuzz_seed;
    cfg.steps = fuzz_steps;
    cfg.weights = {w_ops, w_access, w_lock, w_irq};
    if (f_l1) {
      cfg.machine.ntlb.l1i_entries = f_l1;
      cfg.machine.ntlb.l1d_entries = f_l1;
    }
    if (f_l2) cfg.machine.ntlb.l2_entries = f_l2;
    if (f_assoc) cfg.machine.ntlb.l2_assoc = f_assoc;
    cfg.inject_skip_taint = inject_bug;
    northcape::FuzzReport rep = northcape::run_fuzz(cfg);
    std::string text = rep.text();
    if (!fuzz_trace_out.empty()) {
      int rc = write_file(fuzz_trace_out, text);
      if (rc != 0) return rc;
    }
    std::cout << text;
    return rep.diverged ? 1 : 0;
  }
  return 2;
}
