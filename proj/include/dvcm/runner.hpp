#ifndef DVCM_RUNNER_HPP
#define DVCM_RUNNER_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dvcm/combiner.hpp"
#include "dvcm/diagnostics.hpp"
#include "dvcm/io.hpp"
#include "dvcm/model.hpp"
#include "dvcm/partitioner.hpp"
#include "dvcm/sampler.hpp"
#include "dvcm/simgen.hpp"

namespace dvcm {

enum class RunMode { Full, Distributed, Simulate, Combine, Metrics };
enum class BlockPolicy { Auto, Joint, PerPoint };

inline std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::Full: return "full";
    case RunMode::Distributed: return "distributed";
    case RunMode::Simulate: return "simulate";
    case RunMode::Combine: return "combine";
    case RunMode::Metrics: return "metrics";
  }
  return "?";
}

inline RunMode parse_run_mode(const std::string& s) {
  if (s == "full") return RunMode::Full;
  if (s == "distributed") return RunMode::Distributed;
  if (s == "simulate") return RunMode::Simulate;
  if (s == "combine") return RunMode::Combine;
  if (s == "metrics") return RunMode::Metrics;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

inline std::string to_string(BlockPolicy b) {
  return b == BlockPolicy::Auto ? "auto" : b == BlockPolicy::Joint ? "joint" : "per_point";
}

inline BlockPolicy parse_block_policy(const std::string& s) {
  if (s == "auto") return BlockPolicy::Auto;
  if (s == "joint") return BlockPolicy::Joint;
  if (s == "per_point") return BlockPolicy::PerPoint;
  throw std::invalid_argument("unknown block policy '" + s + "'");
}

inline std::string to_string(InducingSelection s) { return s == InducingSelection::Grid ? "grid" : "random"; }

inline InducingSelection parse_inducing(const std::string& s) {
  if (s == "grid") return InducingSelection::Grid;
  if (s == "random") return InducingSelection::RandomSubsample;
  throw std::invalid_argument("unknown inducing-point selection '" + s + "'");
}

struct RunConfig {
  RunMode mode = RunMode::Distributed;
  fs::path dataset;
  fs::path test;
  fs::path truth;
  fs::path output = "run";
  std::size_t n = 1000;      // simulate only
  std::size_t n_test = 300;  // simulate only
  std::size_t m = 0;         // 0: n / k
  std::size_t k = 1;
  std::uint64_t seed = 1;
  std::vector<KernelFamily> kernels;  // empty: exponential for every coefficient
  std::vector<double> prior_lower{0.1};
  std::vector<double> prior_upper{10.0};
  std::size_t fitc_rank = 0;  // 0: dense
  InducingSelection inducing = InducingSelection::RandomSubsample;
  ChainConfig chain;
  std::vector<CombineMethod> methods{CombineMethod::AMC, CombineMethod::DPMC, CombineMethod::WASP,
                                     CombineMethod::PIE, CombineMethod::CMC};
  std::size_t worker_count = 1;
  BlockPolicy block_policy = BlockPolicy::Auto;
  bool record_timing = false;

  void validate() const {
    if (worker_count < 1) throw std::invalid_argument("worker_count must be at least 1");
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    if (prior_lower.empty() || prior_lower.size() != prior_upper.size())
      throw std::invalid_argument("prior_lower and prior_upper must have the same non-zero length");
    chain.validate();
  }
};

namespace detail {

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& s, Parse parse) {
  std::vector<T> out;
  std::string tok;
  std::istringstream is(s);
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(parse(tok));
  return out;
}

template <typename T, typename Fmt>
std::string join_list(const std::vector<T>& v, Fmt fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

inline bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw std::invalid_argument("expected a boolean, got '" + s + "'");
}

inline std::size_t parse_size(const std::string& s) {
  std::size_t used = 0;
  const unsigned long long v = std::stoull(s, &used);
  if (used != s.size() || s.front() == '-') throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Applies key=value settings on top of `base`. Unknown keys are rejected.
inline RunConfig apply_key_values(RunConfig c, const KeyValues& kv) {
  using detail::parse_size;
  for (const auto& [key, v] : kv) {
    try {
      if (key == "mode") c.mode = parse_run_mode(v);
      else if (key == "dataset") c.dataset = v;
      else if (key == "test") c.test = v;
      else if (key == "truth") c.truth = v;
      else if (key == "output") c.output = v;
      else if (key == "n") c.n = parse_size(v);
      else if (key == "n_test") c.n_test = parse_size(v);
      else if (key == "m") c.m = parse_size(v);
      else if (key == "k") c.k = parse_size(v);
      else if (key == "seed") c.seed = std::stoull(v);
      else if (key == "kernel") c.kernels = detail::parse_list<KernelFamily>(v, parse_kernel_family);
      else if (key == "prior_lower") c.prior_lower = detail::parse_list<double>(v, [](const std::string& t) { return std::stod(t); });
      else if (key == "prior_upper") c.prior_upper = detail::parse_list<double>(v, [](const std::string& t) { return std::stod(t); });
      else if (key == "fitc_rank") c.fitc_rank = parse_size(v);
      else if (key == "inducing") c.inducing = parse_inducing(v);
      else if (key == "n_iterations") c.chain.n_iterations = parse_size(v);
      else if (key == "burn_in") c.chain.burn_in = parse_size(v);
      else if (key == "thin") c.chain.thin = parse_size(v);
      else if (key == "ess_prior_scale") c.chain.ess_prior_scale = std::stod(v);
      else if (key == "joint_theta") c.chain.joint_theta = detail::parse_bool(v);
      else if (key == "methods") c.methods = detail::parse_list<CombineMethod>(v, parse_combine_method);
      else if (key == "workers" || key == "worker_count") c.worker_count = parse_size(v);
      else if (key == "block_policy") c.block_policy = parse_block_policy(v);
      else if (key == "record_timing") c.record_timing = detail::parse_bool(v);
      else throw std::invalid_argument("unknown configuration key");
    } catch (const std::exception& e) {
      throw std::invalid_argument("config key '" + key + "' = '" + v + "': " + e.what());
    }
  }
  return c;
}

/// The settings that determine run outputs. worker_count and paths are left
/// out so that the resolved config is identical across machines and pools.
inline KeyValues resolved_key_values(const RunConfig& c) {
  auto fmt_d = [](double x) { return format_double(x); };
  KeyValues kv{{"mode", to_string(c.mode)},
               {"n", std::to_string(c.n)},
               {"n_test", std::to_string(c.n_test)},
               {"m", std::to_string(c.m)},
               {"k", std::to_string(c.k)},
               {"seed", std::to_string(c.seed)},
               {"kernel", detail::join_list(c.kernels, [](KernelFamily f) { return to_string(f); })},
               {"prior_lower", detail::join_list(c.prior_lower, fmt_d)},
               {"prior_upper", detail::join_list(c.prior_upper, fmt_d)},
               {"fitc_rank", std::to_string(c.fitc_rank)},
               {"inducing", to_string(c.inducing)},
               {"n_iterations", std::to_string(c.chain.n_iterations)},
               {"burn_in", std::to_string(c.chain.burn_in)},
               {"thin", std::to_string(c.chain.thin)},
               {"ess_prior_scale", format_double(c.chain.ess_prior_scale)},
               {"joint_theta", c.chain.joint_theta ? "true" : "false"},
               {"methods", detail::join_list(c.methods, [](CombineMethod m) { return to_string(m); })},
               {"block_policy", to_string(c.block_policy)},
               {"record_timing", c.record_timing ? "true" : "false"}};
  return kv;
}

inline ModelSpec make_model_spec(const RunConfig& c, const Dataset& data, double delta) {
  ModelSpec spec;
  spec.p = data.p;
  spec.q = data.q;
  spec.d = data.d;
  spec.delta = delta;
  spec.kernels = c.kernels;
  if (spec.kernels.empty()) spec.kernels.assign(data.q, KernelFamily::Exponential);
  if (spec.kernels.size() == 1 && data.q > 1) spec.kernels.assign(data.q, spec.kernels.front());
  for (auto f : spec.kernels) {
    if (c.prior_lower.size() != arity(f))
      throw std::invalid_argument("prior_lower/prior_upper must list one bound per kernel parameter (" +
                                  std::to_string(arity(f)) + " for " + to_string(f) + ")");
    spec.priors.push_back(PriorRange{c.prior_lower, c.prior_upper});
  }
  if (c.fitc_rank > 0) spec.fitc = FitcOptions{c.fitc_rank, c.inducing, 1e-8};
  spec.validate();
  return spec;
}

/// Seed streams: the subset plan uses stream 1, chain j uses stream 100 + j.
/// The full-data chain shares stream 100 with subset 0, so k = 1, m = n
/// reproduces it exactly.
inline std::uint64_t plan_seed(std::uint64_t seed) { return derive_seed(seed, 1); }
inline std::uint64_t chain_seed(std::uint64_t seed, std::size_t j) { return derive_seed(seed, 100 + j); }

/// Runs task(0..n-1) on up to `workers` threads. Every task runs to
/// completion; afterwards the failure with the lowest index is rethrown.
template <typename Task>
void run_parallel(std::size_t n_tasks, std::size_t workers, Task&& task) {
  std::vector<std::exception_ptr> errors(n_tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < n_tasks; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(n_tasks, 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < n_tasks; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw std::runtime_error("subset " + std::to_string(i) + " failed: " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Combination over DrawStores

struct DrawLayout {
  std::size_t n_points = 0;
  std::size_t p = 0;
  std::vector<Eigen::Index> response_dims;

  Eigen::Index dim() const {
    Eigen::Index d = static_cast<Eigen::Index>(n_points * p);
    for (auto s : response_dims) d += s;
    return d;
  }
};

inline DrawLayout layout_of(const DrawStore& s) { return {s.test_points.size(), s.p, s.test_response_dims}; }

/// One block per test point holding its coefficients and responses.
inline CoordinateBlocks per_point_blocks(const DrawLayout& l) {
  CoordinateBlocks blocks(l.n_points);
  Eigen::Index ycol = static_cast<Eigen::Index>(l.n_points * l.p);
  for (std::size_t i = 0; i < l.n_points; ++i) {
    for (std::size_t j = 0; j < l.p; ++j) blocks[i].push_back(static_cast<Eigen::Index>(i * l.p + j));
    for (Eigen::Index c = 0; c < l.response_dims[i]; ++c) blocks[i].push_back(ycol++);
  }
  return blocks;
}

/// Joint combination needs more draws than coordinates for the subset
/// covariances to be nonsingular; otherwise fall back to per-point blocks.
inline CoordinateBlocks resolve_blocks(BlockPolicy policy, Eigen::Index draws, const DrawLayout& l) {
  if (policy == BlockPolicy::Joint || (policy == BlockPolicy::Auto && draws > l.dim())) return joint_block(l.dim());
  return per_point_blocks(l);
}

inline CombinedResult combine_stores(const std::vector<DrawStore>& stores, CombineMethod method,
                                     BlockPolicy policy = BlockPolicy::Auto) {
  if (stores.empty()) throw std::invalid_argument("combine_stores: no subset draws");
  const DrawLayout layout = layout_of(stores.front());
  std::vector<Matrix> by, lt;
  Eigen::Index t_min = stores.front().draws();
  for (const auto& s : stores) {
    if (s.test_points != stores.front().test_points || s.p != layout.p)
      throw std::invalid_argument("combine_stores: subsets disagree on test points");
    by.push_back(s.stacked_beta_y());
    lt.push_back(s.log_tau2_draws);
    t_min = std::min(t_min, s.draws());
  }
  CombinedResult r;
  r.method = method;
  if (method == CombineMethod::PIE) {
    r.pie_beta_y = pie_combine(by);
    r.pie_log_tau2 = pie_combine(lt);
    for (const auto& s : stores) r.chain_lengths.push_back(s.draws());
    return r;
  }
  const CoordinateBlocks blocks = resolve_blocks(policy, t_min, layout);
  r.beta_y = combine(method, by, blocks).draws;
  r.log_tau2 = combine(method, lt, joint_block(1)).draws.col(0);
  if (method == CombineMethod::CMC) {
    r.chain_lengths = {r.beta_y.rows()};
  } else {
    for (const auto& s : stores) r.chain_lengths.push_back(s.draws());
  }
  return r;
}

/// A single chain viewed as a combined result (full-data sampler).
inline CombinedResult single_chain_result(const DrawStore& s) {
  CombinedResult r;
  r.beta_y = s.stacked_beta_y();
  r.log_tau2 = s.log_tau2_draws;
  r.chain_lengths = {s.draws()};
  return r;
}

// ---------------------------------------------------------------------------
// Metrics

struct TestTruth {
  Vector beta;  // flattened (point, coefficient)
  Vector y;     // concatenated responses
  double tau2 = 0.0;
  std::size_t n_points = 0;
};

inline TestTruth make_test_truth(const Dataset& test, const SimTruth& truth) {
  const Matrix bt = truth.beta_test();
  if (static_cast<std::size_t>(bt.rows()) != test.size())
    throw std::invalid_argument("truth does not match the number of test points");
  TestTruth t;
  t.n_points = test.size();
  t.tau2 = truth.tau2_0;
  t.beta.resize(bt.size());
  for (Eigen::Index i = 0; i < bt.rows(); ++i) t.beta.segment(i * bt.cols(), bt.cols()) = bt.row(i).transpose();
  Eigen::Index ny = 0;
  for (const auto& o : test.observations) ny += o.s();
  t.y.resize(ny);
  ny = 0;
  for (const auto& o : test.observations) {
    t.y.segment(ny, o.s()) = o.y;
    ny += o.s();
  }
  return t;
}

/// Accuracy metrics; wall time (hours) enters the efficiency when positive.
inline MetricReport evaluate(const CombinedResult& r, const TestTruth& truth, double wall_hours) {
  const auto nb = truth.beta.size();
  const auto ny = truth.y.size();
  IntervalSummary by, lt;
  if (r.pie_beta_y) {
    by = summarize_quantiles(*r.pie_beta_y);
    lt = summarize_quantiles(*r.pie_log_tau2);
  } else {
    by = summarize_draws(r.beta_y);
    lt = summarize_draws(Matrix(r.log_tau2));
  }
  if (by.estimate.size() != nb + ny) throw std::invalid_argument("evaluate: draws do not match truth layout");
  auto part = [](const IntervalSummary& s, Eigen::Index off, Eigen::Index n) {
    return IntervalSummary{s.estimate.segment(off, n), s.lower.segment(off, n), s.upper.segment(off, n)};
  };
  const IntervalSummary b = part(by, 0, nb), y = part(by, nb, ny);
  MetricReport m;
  const auto l = static_cast<Eigen::Index>(truth.n_points);
  m.mse = mse(b.estimate, truth.beta, l);
  m.mspe = mse(y.estimate, truth.y, l);
  const CoverageResult cb = coverage_of(b, truth.beta), cy = coverage_of(y, truth.y);
  m.coverage = cb.coverage;
  m.mean_ci_length = cb.mean_length;
  m.y_coverage = cy.coverage;
  m.mean_pi_length = cy.mean_length;
  m.tau2_lower = std::exp(lt.lower[0]);
  m.tau2_upper = std::exp(lt.upper[0]);
  if (r.pie_log_tau2) {
    m.tau2_mean = r.pie_log_tau2->quantiles.col(0).array().exp().mean();
  } else {
    m.tau2_mean = r.log_tau2.array().exp().mean();
  }
  if (!r.pie_beta_y) {
    Matrix all(r.beta_y.rows(), r.beta_y.cols() + 1);
    all << r.beta_y, r.log_tau2;
    m.ess_total = total_effective_sample_size(all, r.chain_lengths);
  }
  m.wall_hours = wall_hours;
  if (wall_hours > 0.0 && m.ess_total > 0.0) m.comp_efficiency = computational_efficiency(m.ess_total, wall_hours);
  return m;
}

// ---------------------------------------------------------------------------
// Pipelines

struct RunResult {
  fs::path dir;
  SubsetPlan plan;
  std::vector<DrawStore> stores;
  std::map<std::string, CombinedResult> combined;  // keyed by method name, or "full"
  std::map<std::string, MetricReport> metrics;
  std::vector<double> chain_seconds;
  std::map<std::string, double> combine_seconds;
};

inline void write_run_manifest(const fs::path& dir, const RunConfig& c, const std::vector<std::uint64_t>& chain_seeds) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json j{{"seed", c.seed}, {"subset_plan_seed", plan_seed(c.seed)}, {"chain_seeds", chain_seeds}};
  json f = json::object();
  for (const auto& p : files) f[fs::relative(p, dir).generic_string()] = file_checksum(p);
  j["files"] = f;
  write_file(dir / "manifest.json", j.dump(1) + "\n");
}

inline void write_metrics(const RunResult& r, bool include_timing) {
  for (const auto& [name, m] : r.metrics)
    write_file(r.dir / ("metrics_" + name + ".txt"), key_values_text(metric_report_values(m, include_timing)));
}

inline void write_timing(const RunResult& r) {
  KeyValues kv;
  for (std::size_t j = 0; j < r.chain_seconds.size(); ++j) kv["chain_seconds." + std::to_string(j)] = format_double(r.chain_seconds[j]);
  for (const auto& [name, s] : r.combine_seconds) kv["combine_seconds." + name] = format_double(s);
  write_file(r.dir / "timing.txt", key_values_text(kv));
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Subset construction, k tempered chains (delta = n/m) and every requested
/// combination. Writes the run directory unless `persist` is false.
inline RunResult run_distributed(const RunConfig& c, const Dataset& train, const Dataset& test,
                                 const std::optional<SimTruth>& truth, bool persist = true) {
  c.validate();
  train.validate();
  test.validate();
  const std::size_t n = train.size();
  const std::size_t m = c.m ? c.m : n / c.k;
  if (m < 1 || m > n) throw std::invalid_argument("distributed mode requires 1 <= m <= n");
  const double delta = static_cast<double>(n) / static_cast<double>(m);
  const ModelSpec spec = make_model_spec(c, train, delta);

  RunResult r;
  r.dir = c.output;
  r.plan = make_subsets(n, c.k, m, plan_seed(c.seed));
  if (persist) {
    fs::create_directories(r.dir);
    write_file(r.dir / "config.txt", key_values_text(resolved_key_values(c)));
    std::ostringstream os;
    write_manifest(os, r.plan);
    write_file(r.dir / "subsets.txt", os.str());
  }
  r.stores.resize(c.k);
  r.chain_seconds.assign(c.k, 0.0);
  std::vector<std::uint64_t> seeds;
  for (std::size_t j = 0; j < c.k; ++j) seeds.push_back(chain_seed(c.seed, j));
  std::mutex log_mutex;
  run_parallel(c.k, c.worker_count, [&](std::size_t j) {
    ChainConfig cc = c.chain;
    cc.delta = delta;
    cc.rng_seed = seeds[j];
    const Dataset sub = train.subset(r.plan.assignments[j]);
    const auto t0 = std::chrono::steady_clock::now();
    DrawStore s = run_chain(sub.observations, spec, cc, test.observations, {}, static_cast<int>(j));
    r.chain_seconds[j] = seconds_since(t0);
    if (persist) {
      char name[32];
      std::snprintf(name, sizeof name, "subset_%03zu", j);
      write_draw_store(r.dir / name, s, c.record_timing);
    }
    r.stores[j] = std::move(s);
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cerr << "subset " << j << " finished\n";
  });

  const double slowest = *std::max_element(r.chain_seconds.begin(), r.chain_seconds.end());
  std::optional<TestTruth> tt;
  if (truth) tt = make_test_truth(test, *truth);
  for (auto method : c.methods) {
    const std::string name = to_string(method);
    const auto t0 = std::chrono::steady_clock::now();
    CombinedResult cr = combine_stores(r.stores, method, c.block_policy);
    r.combine_seconds[name] = seconds_since(t0);
    if (persist) write_combined(r.dir / ("combined_" + name), cr, layout_of(r.stores.front()).n_points, spec.p,
                                r.stores.front().test_response_dims);
    if (tt) r.metrics[name] = evaluate(cr, *tt, (slowest + r.combine_seconds[name]) / 3600.0);
    r.combined[name] = std::move(cr);
  }
  if (persist) {
    write_metrics(r, c.record_timing);
    if (c.record_timing) write_timing(r);
    write_run_manifest(r.dir, c, seeds);
  }
  return r;
}

/// The full-data sampler (delta = 1) on the whole dataset.
inline RunResult run_full(const RunConfig& c, const Dataset& train, const Dataset& test,
                          const std::optional<SimTruth>& truth, bool persist = true) {
  c.validate();
  train.validate();
  test.validate();
  const ModelSpec spec = make_model_spec(c, train, 1.0);
  RunResult r;
  r.dir = c.output;
  ChainConfig cc = c.chain;
  cc.delta = 1.0;
  cc.rng_seed = chain_seed(c.seed, 0);
  if (persist) {
    fs::create_directories(r.dir);
    write_file(r.dir / "config.txt", key_values_text(resolved_key_values(c)));
  }
  const auto t0 = std::chrono::steady_clock::now();
  r.stores.push_back(run_chain(train.observations, spec, cc, test.observations, {}, -1));
  r.chain_seconds.push_back(seconds_since(t0));
  if (persist) write_draw_store(r.dir / "full", r.stores.front(), c.record_timing);
  CombinedResult cr = single_chain_result(r.stores.front());
  if (truth) r.metrics["full"] = evaluate(cr, make_test_truth(test, *truth), r.chain_seconds.front() / 3600.0);
  r.combined["full"] = std::move(cr);
  if (persist) {
    write_metrics(r, c.record_timing);
    if (c.record_timing) write_timing(r);
    write_run_manifest(r.dir, c, {cc.rng_seed});
  }
  return r;
}

struct LoadedInputs {
  Dataset train;
  Dataset test;
  std::optional<SimTruth> truth;
};

inline LoadedInputs load_inputs(const RunConfig& c) {
  if (c.dataset.empty()) throw std::invalid_argument("no dataset path configured");
  if (c.test.empty()) throw std::invalid_argument("no test dataset path configured");
  LoadedInputs in{ingest_dataset(c.dataset), ingest_dataset(c.test), std::nullopt};
  if (in.train.p != in.test.p || in.train.q != in.test.q || in.train.d != in.test.d)
    throw std::invalid_argument("training and test datasets disagree on d, p or q");
  if (!c.truth.empty()) in.truth = read_truth(c.truth);
  return in;
}

/// Writes train.txt, test.txt and truth.json.
inline Simulation run_simulate(const RunConfig& c) {
  Simulation sim = generate_simulation(c.n, c.n_test, c.seed);
  fs::create_directories(c.output);
  write_dataset(c.output / "train.txt", sim.train);
  write_dataset(c.output / "test.txt", sim.test);
  write_truth(c.output / "truth.json", sim.truth);
  return sim;
}

/// Reads persisted subset draws from a run directory.
inline std::vector<DrawStore> read_subset_stores(const fs::path& dir) {
  std::vector<fs::path> stems;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string f = e.path().filename().string();
    if (f.rfind("subset_", 0) == 0 && f.size() > 10 && f.substr(f.size() - 10) == ".meta.json")
      stems.push_back(dir / f.substr(0, f.size() - 10));
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw std::runtime_error("no subset draws found in " + dir.string());
  std::vector<DrawStore> out;
  for (const auto& s : stems) out.push_back(read_draw_store(s));
  return out;
}

/// Recombines the subset draws stored in `c.output` with `c.methods`.
inline RunResult run_combine(const RunConfig& c, const std::optional<TestTruth>& truth) {
  RunResult r;
  r.dir = c.output;
  r.stores = read_subset_stores(r.dir);
  for (auto method : c.methods) {
    const std::string name = to_string(method);
    CombinedResult cr = combine_stores(r.stores, method, c.block_policy);
    write_combined(r.dir / ("combined_" + name), cr, r.stores.front().test_points.size(), r.stores.front().p,
                   r.stores.front().test_response_dims);
    if (truth) r.metrics[name] = evaluate(cr, *truth, 0.0);
    r.combined[name] = std::move(cr);
  }
  write_metrics(r, false);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : r.stores) seeds.push_back(s.metadata.config.rng_seed);
  write_run_manifest(r.dir, c, seeds);
  return r;
}

/// Re-evaluates the draws stored in `c.output` (a full-data run or a
/// distributed run) against the truth and rewrites the metrics files.
inline RunResult run_metrics(const RunConfig& c, const TestTruth& truth) {
  RunResult r;
  r.dir = c.output;
  if (fs::exists(r.dir / "full.meta.json")) {
    r.stores.push_back(read_draw_store(r.dir / "full"));
    r.metrics["full"] = evaluate(single_chain_result(r.stores.front()), truth, 0.0);
  } else {
    r.stores = read_subset_stores(r.dir);
    for (auto method : c.methods)
      r.metrics[to_string(method)] = evaluate(combine_stores(r.stores, method, c.block_policy), truth, 0.0);
  }
  write_metrics(r, false);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : r.stores) seeds.push_back(s.metadata.config.rng_seed);
  write_run_manifest(r.dir, c, seeds);
  return r;
}

/// Table of every metrics_*.txt file under the given run directories.
inline std::string metrics_table(const std::vector<fs::path>& dirs) {
  std::ostringstream os;
  os << "run\tmethod\tmse\tmspe\tcoverage\tmean_ci_length\ty_coverage\tmean_pi_length\ttau2_lower\ttau2_upper\tess_total\tcomp_efficiency\n";
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string f = e.path().filename().string();
      if (f.rfind("metrics_", 0) == 0 && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const MetricReport m = metric_report_from_values(read_key_values(f));
      std::string method = f.stem().string().substr(8);
      os << dir.string() << '\t' << method << '\t' << m.mse << '\t' << m.mspe << '\t' << m.coverage << '\t'
         << m.mean_ci_length << '\t' << m.y_coverage << '\t' << m.mean_pi_length << '\t' << m.tau2_lower << '\t'
         << m.tau2_upper << '\t' << m.ess_total << '\t' << m.comp_efficiency << '\n';
    }
  }
  return os.str();
}

}  // namespace dvcm

#endif  // DVCM_RUNNER_HPP
