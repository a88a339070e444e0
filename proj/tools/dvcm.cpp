// dvcm: simulate, fit and combine distributed varying coefficient models.
#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dvcm/io.hpp"
#include "dvcm/runner.hpp"

namespace {

using dvcm::KeyValues;
using dvcm::RunConfig;

// Every RunConfig key is also a --flag (underscores become dashes).
const std::vector<std::string> kConfigKeys{
    "dataset",      "test",       "truth",     "output",          "n",           "n_test",
    "m",            "k",          "seed",      "kernel",          "prior_lower", "prior_upper",
    "fitc_rank",    "inducing",   "n_iterations", "burn_in",      "thin",        "ess_prior_scale",
    "joint_theta",  "methods",    "workers",   "block_policy",    "record_timing"};

struct Overrides {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;
};

void add_config_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_file, "key=value configuration file");
  cmd->add_option("--set", o.sets, "extra key=value override (repeatable)");
  for (const auto& key : kConfigKeys) {
    std::string flag = "--" + key;
    for (auto& ch : flag)
      if (ch == '_') ch = '-';
    cmd->add_option(flag, o.values[key]);
  }
}

// Precedence: command line > config file > `base`.
RunConfig resolve(const Overrides& o, RunConfig base, dvcm::RunMode mode) {
  if (!o.config_file.empty()) base = dvcm::apply_key_values(base, dvcm::read_key_values(o.config_file));
  KeyValues cli;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    cli[s.substr(0, eq)] = s.substr(eq + 1);
  }
  for (const auto& [k, v] : o.values)
    if (!v.empty()) cli[k] = v;
  RunConfig c = dvcm::apply_key_values(base, cli);
  c.mode = mode;
  c.validate();
  return c;
}

// combine and metrics start from the settings the run was produced with.
RunConfig run_dir_base(const Overrides& o) {
  RunConfig base;
  std::string out = o.values.at("output");
  if (out.empty() && !o.config_file.empty()) {
    const KeyValues file = dvcm::read_key_values(o.config_file);
    if (auto it = file.find("output"); it != file.end()) out = it->second;
  }
  const dvcm::fs::path saved = dvcm::fs::path(out.empty() ? "run" : out) / "config.txt";
  if (dvcm::fs::exists(saved)) {
    KeyValues kv = dvcm::read_key_values(saved);
    kv.erase("mode");
    base = dvcm::apply_key_values(base, kv);
  }
  return base;
}

std::optional<dvcm::TestTruth> load_test_truth(const RunConfig& c) {
  if (c.truth.empty()) return std::nullopt;
  if (c.test.empty()) throw std::invalid_argument("truth given without a test dataset");
  return dvcm::make_test_truth(dvcm::ingest_dataset(c.test), dvcm::read_truth(c.truth));
}

void print_metrics(const dvcm::RunResult& r, bool include_timing) {
  for (const auto& [name, m] : r.metrics) {
    std::cout << "[" << name << "]\n" << dvcm::key_values_text(dvcm::metric_report_values(m, include_timing));
  }
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}

int fail(int code, const std::string& kind, const std::string& msg) {
  std::cerr << "error kind=" << kind << " code=" << code << " message=" << quoted(msg) << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed Bayesian varying coefficient models"};
  app.require_subcommand(1);

  Overrides sim_o, full_o, dist_o, comb_o, met_o;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic train/test dataset with known truth");
  auto* fit_full = app.add_subcommand("fit-full", "run the full-data sampler");
  auto* fit_dist = app.add_subcommand("fit-distributed", "run k subset samplers and combine them");
  auto* combine = app.add_subcommand("combine", "recombine the subset draws of a run directory");
  auto* metrics = app.add_subcommand("metrics", "re-evaluate a run directory against known truth");
  auto* report = app.add_subcommand("report", "tabulate the metrics of one or more run directories");
  add_config_flags(simulate, sim_o);
  add_config_flags(fit_full, full_o);
  add_config_flags(fit_dist, dist_o);
  add_config_flags(combine, comb_o);
  add_config_flags(metrics, met_o);
  std::vector<std::string> report_dirs;
  report->add_option("dirs", report_dirs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(2, "usage", e.what());
  }

  try {
    if (*simulate) {
      const RunConfig c = resolve(sim_o, {}, dvcm::RunMode::Simulate);
      dvcm::run_simulate(c);
      std::cout << "wrote " << (c.output / "train.txt").string() << ", test.txt, truth.json\n";
    } else if (*fit_full || *fit_dist) {
      const bool full = fit_full->parsed();
      const RunConfig c = resolve(full ? full_o : dist_o, {}, full ? dvcm::RunMode::Full : dvcm::RunMode::Distributed);
      const dvcm::LoadedInputs in = dvcm::load_inputs(c);
      const dvcm::RunResult r = full ? dvcm::run_full(c, in.train, in.test, in.truth)
                                     : dvcm::run_distributed(c, in.train, in.test, in.truth);
      print_metrics(r, c.record_timing);
      std::cout << "run directory: " << r.dir.string() << "\n";
    } else if (*combine) {
      const RunConfig c = resolve(comb_o, run_dir_base(comb_o), dvcm::RunMode::Combine);
      const dvcm::RunResult r = dvcm::run_combine(c, load_test_truth(c));
      print_metrics(r, false);
    } else if (*metrics) {
      const RunConfig c = resolve(met_o, run_dir_base(met_o), dvcm::RunMode::Metrics);
      const auto truth = load_test_truth(c);
      if (!truth) throw std::invalid_argument("metrics needs --truth and --test");
      print_metrics(dvcm::run_metrics(c, *truth), false);
    } else if (*report) {
      std::vector<dvcm::fs::path> dirs(report_dirs.begin(), report_dirs.end());
      std::cout << dvcm::metrics_table(dirs);
    }
  } catch (const dvcm::FormatError& e) {
    return fail(3, "format", e.what());
  } catch (const dvcm::NumericalError& e) {
    return fail(4, "numerical", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(2, "config", e.what());
  } catch (const std::exception& e) {
    return fail(1, "runtime", e.what());
  }
  return EXIT_SUCCESS;
}
