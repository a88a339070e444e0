#ifndef DVCM_IO_HPP
#define DVCM_IO_HPP

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvcm/combiner.hpp"
#include "dvcm/diagnostics.hpp"
#include "dvcm/model.hpp"
#include "dvcm/sampler.hpp"
#include "dvcm/simgen.hpp"

namespace dvcm {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Error with the offending file and line attached.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& tok, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw FormatError(where + ": cannot parse number '" + tok + "'");
  }
  if (used != tok.size()) throw FormatError(where + ": cannot parse number '" + tok + "'");
  return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  return {std::istream_iterator<std::string>(is), std::istream_iterator<std::string>()};
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
inline std::string file_checksum(const fs::path& path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : read_file(path)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Dataset text format
//
//   # dvcm-dataset d=<d> p=<p> q=<q>
//   u_1 .. u_d  obs_id  component  y  x_1 .. x_p
//
// Rows sharing an observation id form one observation; ids appear in
// contiguous runs and components count up from 0.

inline void write_dataset(std::ostream& os, const Dataset& data) {
  os << "# dvcm-dataset d=" << data.d << " p=" << data.p << " q=" << data.q << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& o = data.observations[i];
    for (Eigen::Index c = 0; c < o.s(); ++c) {
      std::string line;
      for (double u : o.u.coords()) line += format_double(u) + ' ';
      line += std::to_string(i) + ' ' + std::to_string(c) + ' ' + format_double(o.y[c]);
      for (Eigen::Index k = 0; k < o.x.cols(); ++k) line += ' ' + format_double(o.x(c, k));
      os << line << '\n';
    }
  }
}

inline void write_dataset(const fs::path& path, const Dataset& data) {
  std::ostringstream os;
  write_dataset(os, data);
  write_file(path, os.str());
}

inline Dataset read_dataset(std::istream& is, const std::string& name = "dataset") {
  std::string line;
  std::size_t line_no = 0;
  Dataset data;
  bool have_header = false;
  long current_id = -1;
  std::vector<double> u_cur;
  std::vector<double> y_cur;
  std::vector<std::vector<double>> x_cur;
  std::size_t cur_line = 0;

  auto flush = [&]() {
    if (current_id < 0) return;
    Observation o;
    try {
      o.u = IndexPoint(u_cur);
    } catch (const std::invalid_argument& e) {
      throw FormatError(name + ":" + std::to_string(cur_line) + ": " + e.what());
    }
    o.y = Eigen::Map<const Vector>(y_cur.data(), static_cast<Eigen::Index>(y_cur.size()));
    o.x.resize(static_cast<Eigen::Index>(x_cur.size()), static_cast<Eigen::Index>(data.p));
    for (std::size_t r = 0; r < x_cur.size(); ++r)
      for (std::size_t k = 0; k < data.p; ++k) o.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = x_cur[r][k];
    data.observations.push_back(std::move(o));
    y_cur.clear();
    x_cur.clear();
  };

  while (std::getline(is, line)) {
    ++line_no;
    const std::string where = name + ":" + std::to_string(line_no);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line[0] == '#') {
      if (!have_header && line.rfind("# dvcm-dataset", 0) == 0) {
        if (std::sscanf(line.c_str(), "# dvcm-dataset d=%zu p=%zu q=%zu", &data.d, &data.p, &data.q) != 3)
          throw FormatError(where + ": malformed dataset header");
        if (data.d < 1 || data.p < 1 || data.q < 1 || data.q > data.p)
          throw FormatError(where + ": header requires d >= 1 and 1 <= q <= p");
        have_header = true;
      }
      continue;
    }
    if (!have_header) throw FormatError(where + ": data row before '# dvcm-dataset' header");
    const auto tok = split_ws(line);
    if (tok.size() != data.d + 3 + data.p)
      throw FormatError(where + ": expected " + std::to_string(data.d + 3 + data.p) + " columns (d + 3 + p), found " +
                        std::to_string(tok.size()));
    std::vector<double> u(data.d);
    for (std::size_t k = 0; k < data.d; ++k) {
      u[k] = parse_double(tok[k], where);
      if (!(u[k] >= 0.0 && u[k] <= 1.0))
        throw FormatError(where + ": index coordinate " + tok[k] + " outside [0,1]");
    }
    long id = 0, comp = 0;
    try {
      std::size_t used = 0;
      id = std::stol(tok[data.d], &used);
      if (used != tok[data.d].size()) throw std::invalid_argument("id");
      comp = std::stol(tok[data.d + 1], &used);
      if (used != tok[data.d + 1].size()) throw std::invalid_argument("comp");
    } catch (const std::exception&) {
      throw FormatError(where + ": observation id and component index must be integers");
    }
    if (id != current_id) {
      flush();
      if (comp != 0) throw FormatError(where + ": a new observation must start at component 0");
      current_id = id;
      u_cur = u;
      cur_line = line_no;
    } else {
      if (u != u_cur) throw FormatError(where + ": index differs within observation " + std::to_string(id));
      if (comp != static_cast<long>(y_cur.size()))
        throw FormatError(where + ": component index out of sequence");
    }
    y_cur.push_back(parse_double(tok[data.d + 2], where));
    std::vector<double> xr(data.p);
    for (std::size_t k = 0; k < data.p; ++k) xr[k] = parse_double(tok[data.d + 3 + k], where);
    x_cur.push_back(std::move(xr));
  }
  flush();
  if (data.observations.empty()) throw FormatError(name + ": no observations");
  data.validate();
  return data;
}

inline Dataset ingest_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  return read_dataset(in, path.string());
}

// ---------------------------------------------------------------------------
// Truth sidecar

inline json truth_to_json(const SimTruth& t) {
  auto mat = [](const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      json r = json::array();
      for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
      rows.push_back(r);
    }
    return rows;
  };
  return json{{"alpha0", std::vector<double>(t.alpha0.data(), t.alpha0.data() + t.alpha0.size())},
              {"gamma0", mat(t.gamma0)},
              {"tau2_0", t.tau2_0},
              {"phi0", t.phi0},
              {"nu0", mat(t.nu0)},
              {"beta0", mat(t.beta0)},
              {"seed", t.seed},
              {"n_train", t.n_train}};
}

inline SimTruth truth_from_json(const json& j) {
  auto mat = [](const json& rows) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k].get<double>();
    return m;
  };
  SimTruth t;
  const auto a = j.at("alpha0").get<std::vector<double>>();
  t.alpha0 = Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
  t.gamma0 = mat(j.at("gamma0"));
  t.tau2_0 = j.at("tau2_0").get<double>();
  t.phi0 = j.at("phi0").get<std::vector<double>>();
  t.nu0 = mat(j.at("nu0"));
  t.beta0 = mat(j.at("beta0"));
  t.seed = j.at("seed").get<std::uint64_t>();
  t.n_train = j.at("n_train").get<std::size_t>();
  return t;
}

inline void write_truth(const fs::path& path, const SimTruth& t) { write_file(path, truth_to_json(t).dump(1) + "\n"); }

inline SimTruth read_truth(const fs::path& path) { return truth_from_json(json::parse(read_file(path))); }

// ---------------------------------------------------------------------------
// Draw tables: one header line of column names, one row per draw.

struct DrawTable {
  std::vector<std::string> columns;
  Matrix values;
};

inline std::string draw_table_text(const DrawTable& t) {
  if (static_cast<Eigen::Index>(t.columns.size()) != t.values.cols())
    throw std::invalid_argument("draw table: column names do not match values");
  std::string out;
  for (std::size_t c = 0; c < t.columns.size(); ++c) out += (c ? " " : "") + t.columns[c];
  out += '\n';
  for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.values.cols(); ++c) {
      if (c) out += ' ';
      out += format_double(t.values(r, c));
    }
    out += '\n';
  }
  return out;
}

inline DrawTable parse_draw_table(const std::string& text, const std::string& name) {
  std::istringstream is(text);
  std::string line;
  DrawTable t;
  if (!std::getline(is, line)) throw FormatError(name + ": empty draw file");
  t.columns = split_ws(line);
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tok = split_ws(line);
    const std::string where = name + ":" + std::to_string(line_no);
    if (tok.size() != t.columns.size()) throw FormatError(where + ": wrong column count");
    std::vector<double> r;
    for (const auto& s : tok) r.push_back(parse_double(s, where));
    rows.push_back(std::move(r));
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < rows[i].size(); ++c) t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  return t;
}

inline std::vector<std::string> beta_y_column_names(std::size_t n_points, std::size_t p,
                                                    const std::vector<Eigen::Index>& response_dims) {
  std::vector<std::string> cols;
  for (std::size_t i = 0; i < n_points; ++i)
    for (std::size_t j = 0; j < p; ++j) cols.push_back("beta[" + std::to_string(i) + "," + std::to_string(j) + "]");
  for (std::size_t i = 0; i < response_dims.size(); ++i)
    for (Eigen::Index c = 0; c < response_dims[i]; ++c) cols.push_back("y[" + std::to_string(i) + "," + std::to_string(c) + "]");
  return cols;
}

inline json chain_config_to_json(const ChainConfig& c) {
  return json{{"n_iterations", c.n_iterations}, {"burn_in", c.burn_in},     {"thin", c.thin},
              {"delta", c.delta},               {"ess_prior_scale", c.ess_prior_scale},
              {"rng_seed", c.rng_seed},         {"joint_theta", c.joint_theta}};
}

inline ChainConfig chain_config_from_json(const json& j) {
  ChainConfig c;
  c.n_iterations = j.at("n_iterations").get<std::size_t>();
  c.burn_in = j.at("burn_in").get<std::size_t>();
  c.thin = j.at("thin").get<std::size_t>();
  c.delta = j.at("delta").get<double>();
  c.ess_prior_scale = j.at("ess_prior_scale").get<double>();
  c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  c.joint_theta = j.at("joint_theta").get<bool>();
  return c;
}

inline json points_to_json(const std::vector<IndexPoint>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back(p.coords());
  return a;
}

inline std::vector<IndexPoint> points_from_json(const json& a) {
  std::vector<IndexPoint> pts;
  for (const auto& p : a) pts.emplace_back(p.get<std::vector<double>>());
  return pts;
}

/// Draws to `<stem>.draws.txt` with metadata in `<stem>.meta.json`. Wall time
/// is only persisted when requested, since it is not reproducible.
inline void write_draw_store(const fs::path& stem, const DrawStore& s, bool include_timing = false) {
  DrawTable t;
  t.columns = beta_y_column_names(s.test_points.size(), s.p, s.test_response_dims);
  t.columns.push_back("log_tau2");
  for (Eigen::Index c = 0; c < s.theta_draws.cols(); ++c) t.columns.push_back("theta[" + std::to_string(c) + "]");
  for (Eigen::Index c = 0; c < s.b_draws.cols(); ++c) t.columns.push_back("b[" + std::to_string(c) + "]");
  t.values.resize(s.draws(), static_cast<Eigen::Index>(t.columns.size()));
  t.values << s.beta_draws, s.y_draws, s.log_tau2_draws, s.theta_draws, s.b_draws;
  write_file(stem.string() + ".draws.txt", draw_table_text(t));

  json meta{{"kind", "draw_store"},
            {"subset_id", s.metadata.subset_id},
            {"n_observations", s.metadata.n_observations},
            {"p", s.p},
            {"draws", s.draws()},
            {"theta_columns", s.theta_draws.cols()},
            {"b_columns", s.b_draws.cols()},
            {"test_response_dims", s.test_response_dims},
            {"test_points", points_to_json(s.test_points)},
            {"config", chain_config_to_json(s.metadata.config)}};
  if (include_timing) meta["wall_seconds"] = s.metadata.wall_seconds;
  write_file(stem.string() + ".meta.json", meta.dump(1) + "\n");
}

inline DrawStore read_draw_store(const fs::path& stem) {
  const json meta = json::parse(read_file(stem.string() + ".meta.json"));
  const std::string name = stem.string() + ".draws.txt";
  const DrawTable t = parse_draw_table(read_file(name), name);
  DrawStore s;
  s.p = meta.at("p").get<std::size_t>();
  s.test_points = points_from_json(meta.at("test_points"));
  s.test_response_dims = meta.at("test_response_dims").get<std::vector<Eigen::Index>>();
  s.metadata.subset_id = meta.at("subset_id").get<int>();
  s.metadata.n_observations = meta.at("n_observations").get<std::size_t>();
  s.metadata.config = chain_config_from_json(meta.at("config"));
  if (meta.contains("wall_seconds")) s.metadata.wall_seconds = meta.at("wall_seconds").get<double>();
  const auto nb = static_cast<Eigen::Index>(s.test_points.size() * s.p);
  Eigen::Index ny = 0;
  for (auto d : s.test_response_dims) ny += d;
  const auto nt = meta.at("theta_columns").get<Eigen::Index>();
  const auto nbc = meta.at("b_columns").get<Eigen::Index>();
  if (t.values.cols() != nb + ny + 1 + nt + nbc) throw FormatError(name + ": column count does not match metadata");
  s.beta_draws = t.values.leftCols(nb);
  s.y_draws = t.values.middleCols(nb, ny);
  s.log_tau2_draws = t.values.col(nb + ny);
  s.theta_draws = t.values.middleCols(nb + ny + 1, nt);
  s.b_draws = t.values.rightCols(nbc);
  return s;
}

/// Combined (beta, y) draws plus combined log tau^2 draws.
struct CombinedResult {
  CombineMethod method = CombineMethod::AMC;
  Matrix beta_y;       // rows are combined draws
  Vector log_tau2;
  std::vector<Eigen::Index> chain_lengths;  // row blocks originating from one subset chain
  std::optional<QuantileSummary> pie_beta_y;
  std::optional<QuantileSummary> pie_log_tau2;
};

inline void write_combined(const fs::path& stem, const CombinedResult& r, std::size_t n_points, std::size_t p,
                           const std::vector<Eigen::Index>& response_dims) {
  auto cols = beta_y_column_names(n_points, p, response_dims);
  cols.push_back("log_tau2");
  json meta{{"kind", "combined"}, {"method", to_string(r.method)}, {"p", p}, {"n_points", n_points},
            {"test_response_dims", response_dims}};
  if (r.method == CombineMethod::PIE) {
    DrawTable t;
    t.columns = {"prob"};
    t.columns.insert(t.columns.end(), cols.begin(), cols.end());
    const auto& g = r.pie_beta_y->grid;
    t.values.resize(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(t.columns.size()));
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      t.values(ii, 0) = g[i];
      t.values.row(ii).segment(1, r.pie_beta_y->quantiles.cols()) = r.pie_beta_y->quantiles.row(ii);
      t.values(ii, t.values.cols() - 1) = r.pie_log_tau2->quantiles(ii, 0);
    }
    meta["layout"] = "quantile_grid";
    write_file(stem.string() + ".quantiles.txt", draw_table_text(t));
  } else {
    DrawTable t{cols, Matrix(r.beta_y.rows(), r.beta_y.cols() + 1)};
    t.values << r.beta_y, r.log_tau2;
    meta["layout"] = "draws";
    meta["chain_lengths"] = r.chain_lengths;
    write_file(stem.string() + ".draws.txt", draw_table_text(t));
  }
  write_file(stem.string() + ".meta.json", meta.dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// key=value files

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(const std::string& text, const std::string& name) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw FormatError(name + ":" + std::to_string(line_no) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const fs::path& path) { return parse_key_values(read_file(path), path.string()); }

inline std::string key_values_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline KeyValues metric_report_values(const MetricReport& m, bool include_timing) {
  KeyValues kv{{"mse", format_double(m.mse)},
               {"mspe", format_double(m.mspe)},
               {"coverage", format_double(m.coverage)},
               {"mean_ci_length", format_double(m.mean_ci_length)},
               {"y_coverage", format_double(m.y_coverage)},
               {"mean_pi_length", format_double(m.mean_pi_length)},
               {"tau2_mean", format_double(m.tau2_mean)},
               {"tau2_lower", format_double(m.tau2_lower)},
               {"tau2_upper", format_double(m.tau2_upper)},
               {"ess_total", format_double(m.ess_total)}};
  if (include_timing) {
    kv["wall_hours"] = format_double(m.wall_hours);
    kv["comp_efficiency"] = format_double(m.comp_efficiency);
  }
  return kv;
}

inline MetricReport metric_report_from_values(const KeyValues& kv) {
  MetricReport m;
  auto get = [&](const char* k, double& dst) {
    if (auto it = kv.find(k); it != kv.end()) dst = parse_double(it->second, k);
  };
  get("mse", m.mse);
  get("mspe", m.mspe);
  get("coverage", m.coverage);
  get("mean_ci_length", m.mean_ci_length);
  get("y_coverage", m.y_coverage);
  get("mean_pi_length", m.mean_pi_length);
  get("tau2_mean", m.tau2_mean);
  get("tau2_lower", m.tau2_lower);
  get("tau2_upper", m.tau2_upper);
  get("ess_total", m.ess_total);
  get("wall_hours", m.wall_hours);
  get("comp_efficiency", m.comp_efficiency);
  return m;
}

}  // namespace dvcm

#endif  // DVCM_IO_HPP
