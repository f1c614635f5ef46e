// Copyright 2026 The fedqs-sim Authors. All Rights Reserved.
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
// =============================================================================

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedqs/fedqs.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

// Flags shared by every experiment subcommand. Named flags beat --set, which
// beats the config file.
struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string strategy, mode, out, profile;
  std::optional<int> repeats, threads;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "config file (key = value lines)");
    app->add_option("--seed", seed, "base seed; repeat r uses seed + r");
    app->add_option("--strategy", strategy, "fedqs-sgd | fedqs-avg | fedsgd | fedavg");
    app->add_option("--mode", mode, "safl | sync");
    app->add_option("--out", out, "output directory");
    app->add_option("--repeats", repeats, "number of repeats");
    app->add_option("--profile", profile, "paper | desk defaults");
    app->add_option("--threads", threads, "worker threads (0 = all cores)");
    app->add_option("--set", sets, "extra override, key=value (repeatable)");
  }

  fedqs::ExperimentConfig load() const {
    fedqs::Overrides ov;
    if (!profile.empty()) ov.emplace_back("profile", profile);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw fedqs::ConfigError("--set expects key=value, got '" + kv + "'");
      ov.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) ov.emplace_back("seed", std::to_string(*seed));
    if (!strategy.empty()) ov.emplace_back("strategy", strategy);
    if (!mode.empty()) ov.emplace_back("mode", mode);
    if (!out.empty()) ov.emplace_back("out_dir", out);
    if (repeats) ov.emplace_back("repeats", std::to_string(*repeats));
    if (threads) ov.emplace_back("threads", std::to_string(*threads));
    return config.empty() ? fedqs::parse_config(ov) : fedqs::parse_config(config, ov);
  }
};

void print_repeats(const fedqs::ExperimentResult& res) {
  for (const auto& r : res.repeats) {
    const auto& s = r.summary;
    std::printf("repeat %d seed %llu  best_acc %.4f  conv_acc %.4f  T_f %s  oscillations %d  vtime %.2f\n", r.repeat,
                static_cast<unsigned long long>(r.seed), s.best_acc, s.convergence_acc,
                s.T_f ? std::to_string(*s.T_f).c_str() : "-", s.oscillations, s.final_vtime);
  }
}

template <class T>
std::vector<T> or_default(const std::vector<T>& given, std::vector<T> fallback) {
  return given.empty() ? fallback : given;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-asynchronous federated learning simulator"};
  app.require_subcommand(1);

  RunFlags run_flags, motivation_flags, compare_flags, sweep_flags;
  auto* run = app.add_subcommand("run", "run one configuration for all repeats");
  run_flags.attach(run);
  bool dump_config = false;
  run->add_flag("--print-config", dump_config, "print the resolved config and exit");

  auto* motivation = app.add_subcommand("motivation", "gradient vs model aggregation gap over {sync,SAFL} x {IID,non-IID}");
  motivation_flags.attach(motivation);

  auto* compare = app.add_subcommand("compare", "FedQS-SGD, FedSGD, FedQS-Avg, FedAvg on paired seeds");
  compare_flags.attach(compare);

  auto* sweep = app.add_subcommand("sweep", "one run per value of a config key");
  sweep_flags.attach(sweep);
  std::string sweep_key;
  std::vector<std::string> sweep_values;
  sweep->add_option("--param", sweep_key, "config key to vary")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->required()->delimiter(',');

  auto* bounds_cmd = app.add_subcommand("bounds", "convergence-bound constants over a grid (CSV on stdout)");
  std::vector<std::string> theorems;
  std::vector<int> grid_K, grid_E, grid_Q;
  std::vector<double> grid_theta, grid_beta;
  fedqs::bounds::BoundParams bp;
  bounds_cmd->add_option("--theorem", theorems, "sgd, avg (default both)")->delimiter(',');
  bounds_cmd->add_option("--K", grid_K, "K values")->delimiter(',');
  bounds_cmd->add_option("--E", grid_E, "E values")->delimiter(',');
  bounds_cmd->add_option("--theta", grid_theta, "theta values")->delimiter(',');
  bounds_cmd->add_option("--beta", grid_beta, "beta values")->delimiter(',');
  bounds_cmd->add_option("--Q", grid_Q, "Q_t values")->delimiter(',');
  bounds_cmd->add_option("--L", bp.L, "smoothness L");
  bounds_cmd->add_option("--delta", bp.delta, "heterogeneity delta");
  bounds_cmd->add_option("--Gc", bp.G_c, "gradient clip bound");
  bounds_cmd->add_option("--N", bp.N, "number of clients");
  bounds_cmd->add_option("--p", bp.p, "upper weight bound p");
  bounds_cmd->add_option("--q", bp.q, "lower weight bound q");
  bounds_cmd->add_option("--init-gap", bp.init_gap, "initial squared distance to the optimum");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) {
      const auto cfg = run_flags.load();
      if (dump_config) {
        std::cout << fedqs::emit_config(cfg);
        return kExitOk;
      }
      const auto res = fedqs::run_experiment(cfg);
      print_repeats(res);
      std::printf("wrote %s\n", (fedqs::run_dir(cfg) / "aggregate.json").string().c_str());
    } else if (motivation->parsed()) {
      const auto cfg = motivation_flags.load();
      const auto res = fedqs::preset_motivation(cfg);
      fedqs::write_motivation(cfg, res);
      std::cout << fedqs::motivation_table(res);
      std::printf("wrote %s\n", (fedqs::run_dir(cfg) / "motivation.csv").string().c_str());
    } else if (compare->parsed()) {
      const auto cfg = compare_flags.load();
      const auto res = fedqs::preset_comparison(cfg);
      fedqs::write_comparison(cfg, res);
      std::cout << fedqs::comparison_table(res);
      std::printf("wrote %s\n", (fedqs::run_dir(cfg) / "comparison.csv").string().c_str());
    } else if (sweep->parsed()) {
      const auto cfg = sweep_flags.load();
      const auto rows = fedqs::sweep(cfg, sweep_key, sweep_values);
      for (const auto& row : rows) {
        const auto best = fedqs::metric_stat(row.result.repeats, "best_acc");
        std::printf("%s = %-12s best_acc %.4f\n", sweep_key.c_str(), row.value.c_str(), best.mean);
      }
      std::printf("wrote %s\n", (fedqs::run_dir(cfg) / "sweep.csv").string().c_str());
    } else if (bounds_cmd->parsed()) {
      fedqs::BoundsGrid grid;
      grid.base = bp;
      if (!theorems.empty()) {
        grid.theorems.clear();
        for (const auto& t : theorems) {
          if (t == "sgd") grid.theorems.push_back(fedqs::bounds::Theorem::SGD);
          else if (t == "avg") grid.theorems.push_back(fedqs::bounds::Theorem::Avg);
          else throw fedqs::ConfigError("--theorem: expected sgd or avg, got '" + t + "'");
        }
      }
      grid.K = or_default(grid_K, grid.K);
      grid.E = or_default(grid_E, grid.E);
      grid.theta = or_default(grid_theta, grid.theta);
      grid.beta = or_default(grid_beta, grid.beta);
      grid.Q_t = or_default(grid_Q, grid.Q_t);
      std::cout << fedqs::bounds_table(grid);
    }
  } catch (const fedqs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
