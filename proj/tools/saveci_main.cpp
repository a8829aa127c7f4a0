#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "saveci/harness.hpp"

namespace {

using saveci::json;

struct CommonFlags {
  std::string config_path;
  std::optional<double> gamma, alpha, eta, ridge;
  std::optional<int> L, kn, kt, reps;
  std::optional<std::uint64_t> seed, permute_seed;
  std::string out;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--gamma", f.gamma, "discount factor");
  cmd->add_option("--alpha", f.alpha, "CI miscoverage level");
  cmd->add_option("--eta", f.eta, "basis-size exponent");
  cmd->add_option("--L", f.L, "fixed sieve dimension (overrides the eta rule)");
  cmd->add_option("--ridge", f.ridge, "ridge penalty lambda");
  cmd->add_option("--kn", f.kn, "number of trajectory blocks K_n");
  cmd->add_option("--kt", f.kt, "number of time blocks K_T");
  cmd->add_option("--reps", f.reps, "replication count");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--permute-seed", f.permute_seed, "trajectory permutation seed");
  cmd->add_option("--out", f.out, "output path (report JSON, or CSV for simulate)");
}

json resolve_config(const CommonFlags& f) {
  json config = json::object();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw saveci::InputError("cannot open config file: " + f.config_path);
    try {
      in >> config;
    } catch (const std::exception& e) {
      throw saveci::InputError("config parse error in " + f.config_path + ": " + e.what());
    }
  }
  if (f.gamma) config["estimator"]["gamma"] = *f.gamma;
  if (f.alpha) config["estimator"]["alpha"] = *f.alpha;
  if (f.eta) config["estimator"]["eta"] = *f.eta;
  if (f.L) config["estimator"]["L"] = *f.L;
  if (f.ridge) config["estimator"]["ridge"] = *f.ridge;
  if (f.kn) config["experiment"]["K_n"] = *f.kn;
  if (f.kt) config["experiment"]["K_T"] = *f.kt;
  if (f.reps) config["experiment"]["reps"] = *f.reps;
  if (f.seed) config["experiment"]["seed"] = *f.seed;
  if (f.permute_seed) config["experiment"]["permute_seed"] = *f.permute_seed;
  if (!f.out.empty()) config["out"] = f.out;
  return config;
}

void emit_report(const saveci::ExperimentReport& report, const json& config) {
  const std::string out = config.value("out", "");
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw saveci::InputError("cannot open output file: " + out);
    os << report.to_json().dump(2) << "\n";
  }
  std::cout << report.to_text();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sieve-based confidence intervals for policy values in infinite-horizon MDPs"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string mode;
  for (const char* name : {"evaluate-fixed", "evaluate-optimal", "onpolicy", "simulate",
                           "value-diff"}) {
    CLI::App* sub = app.add_subcommand(name);
    add_common_flags(sub, flags);
    sub->callback([&mode, name] { mode = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const json config = resolve_config(flags);
    if (mode == "evaluate-fixed") {
      emit_report(saveci::cmd_evaluate_fixed(config), config);
    } else if (mode == "evaluate-optimal") {
      emit_report(saveci::cmd_evaluate_optimal(config), config);
    } else if (mode == "onpolicy") {
      emit_report(saveci::cmd_onpolicy(config), config);
    } else if (mode == "value-diff") {
      emit_report(saveci::cmd_value_diff(config), config);
    } else if (mode == "simulate") {
      saveci::cmd_simulate(config);
    }
  } catch (const saveci::SingularSystemError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
