// Acceptance suite. Prints one PASS/FAIL line per criterion; exits nonzero if
// any criterion fails. Every tolerance is a named constant below.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <thread>

#include "dvcm/runner.hpp"
#include "oracles.hpp"

using namespace dvcm;

namespace {

// 1. conjugacy
constexpr std::size_t kNigDraws = 20000;
constexpr double kNigKs = 0.05;
constexpr double kNigRelErr = 0.02;
// 2. conditioning
constexpr double kCondMean = 1e-10;
constexpr double kCondCov = 1e-8;
constexpr Eigen::Index kCondMaxDim = 30;
// 3. elliptical slice sampling vs quadrature
constexpr std::size_t kEssDraws = 100000;
constexpr double kEssKs = 0.02;
// 4. combiner algebra
constexpr double kIdentity = 1e-10;
constexpr double kMeanOfMeans = 1e-10;
constexpr double kAmcCov = 1e-8;
constexpr double kWasp1d = 1e-8;
constexpr double kWaspCommuting = 1e-6;
// 5. scaled simulation
constexpr std::size_t kSimN = 1000, kSimM = 250, kSimK = 4, kSimTest = 100, kSimReplicates = 3;
constexpr std::size_t kSimIterations = 10000, kSimBurnIn = 5000, kSimThin = 5;
constexpr std::size_t kFullFitcRank = 64;
constexpr double kCoverageLow = 0.85, kCoverageHigh = 1.0;
constexpr double kCmcGap = 0.15;
constexpr double kTau2True = 0.1;
constexpr double kMseRatio = 2.0;
constexpr std::uint64_t kSimSeed = 20240501;
// 6. degenerate equivalence
constexpr std::size_t kDegenN = 300, kDegenTest = 20;
// 7. determinism
constexpr std::size_t kDetN = 120, kDetTest = 10, kDetK = 3, kDetM = 40, kDetWorkers = 4;

int failures = 0;

void report(int id, bool ok, const std::string& detail, double seconds) {
  char t[32];
  std::snprintf(t, sizeof t, "%.1fs", seconds);
  std::cout << "criterion " << id << ": " << (ok ? "PASS" : "FAIL") << "  " << detail << "  (" << t << ")"
            << std::endl;
  if (!ok) ++failures;
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dvcm_acceptance_" + name);
  fs::remove_all(dir);
  return dir;
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
  return out;
}

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  double ks = 0.0, rel = 0.0;
  for (double delta : {1.0, 4.0}) {
    const auto r = oracle::nig_conjugacy(kNigDraws, delta, 9001 + static_cast<std::uint64_t>(delta));
    for (double v : r.ks) ks = std::max(ks, v);
    for (double v : r.mean_rel_err) rel = std::max(rel, v);
  }
  report(1, ks < kNigKs && rel < kNigRelErr,
         "max KS " + fmt("%.4f", ks) + " (< 0.05), max mean rel err " + fmt("%.4f", rel) + " (< 0.02), delta 1 and 4",
         since(t0));
}

void criterion_2() {
  const auto t0 = std::chrono::steady_clock::now();
  struct Case {
    std::size_t m, q;
    Eigen::Index s;
    std::size_t l;
  };
  double mean_err = 0.0, cov_err = 0.0;
  Eigen::Index dim = 0;
  std::uint64_t seed = 700;
  for (const Case& c : {Case{3, 1, 1, 2}, Case{4, 2, 2, 3}, Case{6, 2, 1, 4}, Case{5, 3, 2, 2}, Case{10, 1, 2, 5}}) {
    const auto e = oracle::conditioning_errors(c.m, c.q, c.s, c.l, seed++);
    mean_err = std::max({mean_err, e.impute_mean, e.conditional_mean, e.predict_mean});
    cov_err = std::max({cov_err, e.impute_cov, e.conditional_cov, e.predict_cov});
    dim = std::max(dim, e.dimension);
  }
  report(2, mean_err < kCondMean && cov_err < kCondCov && dim <= kCondMaxDim,
         "max mean err " + fmt("%.2e", mean_err) + " (< 1e-10), max cov err " + fmt("%.2e", cov_err) +
             " (< 1e-8), max dimension " + std::to_string(dim),
         since(t0));
}

void criterion_3() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = oracle::ess_grid(kEssDraws, 1.0, 4242);
  report(3, r.ks < kEssKs,
         "KS " + fmt("%.4f", r.ks) + " (< 0.02) at 1e5 draws, chain mean " + fmt("%.4f", r.chain_mean) +
             " vs grid mean " + fmt("%.4f", r.grid_mean),
         since(t0));
}

void criterion_4() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = oracle::combiner_algebra(77);
  const bool ok = a.identity < kIdentity && a.mean_of_means < kMeanOfMeans && a.amc_covariance < kAmcCov &&
                  a.wasp_1d < kWasp1d && a.wasp_commuting < kWaspCommuting;
  report(4, ok,
         "identity " + fmt("%.1e", a.identity) + ", mean " + fmt("%.1e", a.mean_of_means) + ", amc cov " +
             fmt("%.1e", a.amc_covariance) + ", wasp 1-d " + fmt("%.1e", a.wasp_1d) + ", wasp commuting " +
             fmt("%.1e", a.wasp_commuting),
         since(t0));
}

void criterion_5() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::string> names{"amc", "wasp", "dpmc", "pie", "cmc", "full"};
  std::map<std::string, MetricReport> avg;
  bool tau2_ok = true, mse_ok = true, eff_ok = true;
  const auto seeds = replicate_runs(kSimReplicates, kSimSeed);
  for (std::size_t rep = 0; rep < seeds.size(); ++rep) {
    const Simulation sim = generate_simulation(kSimN, kSimTest, seeds[rep]);
    RunConfig c;
    c.k = kSimK;
    c.m = kSimM;
    c.seed = seeds[rep];
    c.chain.n_iterations = kSimIterations;
    c.chain.burn_in = kSimBurnIn;
    c.chain.thin = kSimThin;
    c.worker_count = std::max(1u, std::thread::hardware_concurrency());
    const RunResult dist = run_distributed(c, sim.train, sim.test, sim.truth, false);
    RunConfig cf = c;
    cf.fitc_rank = kFullFitcRank;
    cf.inducing = InducingSelection::Grid;
    const RunResult full = run_full(cf, sim.train, sim.test, sim.truth, false);
    std::map<std::string, MetricReport> m = dist.metrics;
    m["full"] = full.metrics.at("full");
    for (const auto& n : names) {
      const MetricReport& r = m.at(n);
      std::cout << "  # rep " << rep << " " << n << ": mse " << r.mse << " coverage " << r.coverage << " tau2 ["
                << r.tau2_lower << ", " << r.tau2_upper << "] ess " << r.ess_total << " hours " << r.wall_hours
                << " efficiency " << r.comp_efficiency << std::endl;
      auto& a = avg[n];
      const double w = 1.0 / static_cast<double>(seeds.size());
      a.mse += w * r.mse;
      a.coverage += w * r.coverage;
      a.tau2_lower += w * r.tau2_lower;
      a.tau2_upper += w * r.tau2_upper;
      a.comp_efficiency += w * r.comp_efficiency;
    }
    const MetricReport& amc = m.at("amc");
    tau2_ok = tau2_ok && amc.tau2_lower <= kTau2True && kTau2True <= amc.tau2_upper;
    mse_ok = mse_ok && amc.mse <= kMseRatio * m.at("full").mse;
    eff_ok = eff_ok && amc.comp_efficiency > m.at("full").comp_efficiency;
  }
  bool cov_ok = true;
  for (const char* n : {"amc", "wasp", "dpmc", "pie"})
    cov_ok = cov_ok && avg[n].coverage >= kCoverageLow && avg[n].coverage <= kCoverageHigh;
  const bool cmc_ok = avg["cmc"].coverage <= avg["amc"].coverage - kCmcGap;
  std::string detail = "(a) " + std::string(cov_ok ? "ok" : "no") + " coverage amc/wasp/dpmc/pie " +
                       fmt("%.3f", avg["amc"].coverage) + "/" + fmt("%.3f", avg["wasp"].coverage) + "/" +
                       fmt("%.3f", avg["dpmc"].coverage) + "/" + fmt("%.3f", avg["pie"].coverage) + "; (b) " +
                       (cmc_ok ? "ok" : "no") + " cmc " + fmt("%.3f", avg["cmc"].coverage) + "; (c) " +
                       (tau2_ok ? "ok" : "no") + " amc tau2 mean interval [" + fmt("%.4f", avg["amc"].tau2_lower) +
                       ", " + fmt("%.4f", avg["amc"].tau2_upper) + "]; (d) " + (mse_ok ? "ok" : "no") + " mse amc " +
                       fmt("%.4f", avg["amc"].mse) + " full " + fmt("%.4f", avg["full"].mse) + "; (e) " +
                       (eff_ok ? "ok" : "no") + " efficiency amc " + fmt("%.2f", avg["amc"].comp_efficiency) +
                       " full " + fmt("%.2f", avg["full"].comp_efficiency);
  report(5, cov_ok && cmc_ok && tau2_ok && mse_ok && eff_ok, detail, since(t0));
}

void criterion_6() {
  const auto t0 = std::chrono::steady_clock::now();
  const Simulation sim = generate_simulation(kDegenN, kDegenTest, 606);
  const fs::path d = scratch("degenerate_dist"), f = scratch("degenerate_full");
  RunConfig c;
  c.k = 1;
  c.m = kDegenN;
  c.seed = 6;
  c.chain.n_iterations = 2000;
  c.chain.burn_in = 1000;
  c.chain.thin = 5;
  c.methods = {CombineMethod::AMC};
  c.output = d;
  run_distributed(c, sim.train, sim.test, sim.truth);
  c.output = f;
  run_full(c, sim.train, sim.test, sim.truth);
  const bool same = read_file(d / "subset_000.draws.txt") == read_file(f / "full.draws.txt");
  report(6, same, std::string("subset_000.draws.txt ") + (same ? "==" : "!=") + " full.draws.txt at n=300", since(t0));
  fs::remove_all(d);
  fs::remove_all(f);
}

void criterion_7() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  auto check = [&](const std::string& what, const fs::path& a, const fs::path& b) {
    const bool same = dir_contents(a) == dir_contents(b);
    ok = ok && same;
    detail += what + (same ? " identical; " : " DIFFER; ");
  };
  RunConfig base;
  base.n = kDetN;
  base.n_test = kDetTest;
  base.k = kDetK;
  base.m = kDetM;
  base.seed = 77;
  base.chain.n_iterations = 400;
  base.chain.burn_in = 200;
  base.chain.thin = 2;

  RunConfig s1 = base, s2 = base;
  s1.output = scratch("sim_a");
  s2.output = scratch("sim_b");
  const Simulation sim = run_simulate(s1);
  run_simulate(s2);
  check("simulate", s1.output, s2.output);

  RunConfig d1 = base, d2 = base;
  d1.output = scratch("dist_a");
  d2.output = scratch("dist_b");
  d1.worker_count = 1;
  d2.worker_count = kDetWorkers;
  run_distributed(d1, sim.train, sim.test, sim.truth);
  run_distributed(d2, sim.train, sim.test, sim.truth);
  check("fit-distributed (1 vs 4 workers)", d1.output, d2.output);

  const TestTruth tt = make_test_truth(sim.test, sim.truth);
  RunConfig c1 = d1, c2 = d2;
  c1.methods = c2.methods = {CombineMethod::WASP, CombineMethod::CMC};
  run_combine(c1, tt);
  run_combine(c2, tt);
  check("combine", d1.output, d2.output);
  run_metrics(c1, tt);
  run_metrics(c2, tt);
  check("metrics", d1.output, d2.output);

  RunConfig f1 = base, f2 = base;
  f1.output = scratch("full_a");
  f2.output = scratch("full_b");
  f2.worker_count = kDetWorkers;
  f1.fitc_rank = f2.fitc_rank = 16;
  run_full(f1, sim.train, sim.test, sim.truth);
  run_full(f2, sim.train, sim.test, sim.truth);
  check("fit-full", f1.output, f2.output);

  report(7, ok, detail, since(t0));
  for (const auto& p : {s1.output, s2.output, d1.output, d2.output, f1.output, f2.output}) fs::remove_all(p);
}

}  // namespace

int main(int argc, char** argv) {
  // optional list of criterion numbers to run, e.g. "acceptance 1 2 4"
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  const auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  const std::vector<void (*)()> criteria{criterion_1, criterion_2, criterion_3, criterion_4,
                                         criterion_5, criterion_6, criterion_7};
  for (int id = 1; id <= 7; ++id) {
    if (!wanted(id)) continue;
    try {
      criteria[static_cast<std::size_t>(id - 1)]();
    } catch (const std::exception& e) {
      report(id, false, std::string("error: ") + e.what(), 0.0);
    }
  }
  return failures == 0 ? 0 : 1;
}
