#pragma once
// Experiment driver: JSON configuration with per-algorithm defaults, the
// canonical scalar reproduction, seeded Monte-Carlo sweeps over the noise
// variance, and CSV/JSON emission with a fixed column contract.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "slqr/duality.hpp"
#include "slqr/off_policy.hpp"

namespace slqr {

enum class Algorithm { Pi, MfOppi, MbPd, MbPdMf };

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Pi: return "pi";
    case Algorithm::MfOppi: return "mf-oppi";
    case Algorithm::MbPd: return "mb-pd";
    case Algorithm::MbPdMf: return "mb-pd-mf";
  }
  throw ConfigError("unknown algorithm enumerator");
}

inline Algorithm algorithm_from_name(const std::string& name) {
  if (name == "pi") return Algorithm::Pi;
  if (name == "mf-oppi") return Algorithm::MfOppi;
  if (name == "mb-pd") return Algorithm::MbPd;
  if (name == "mb-pd-mf") return Algorithm::MbPdMf;
  throw ConfigError("config field 'algorithm' must be one of pi | mf-oppi | mb-pd | mb-pd-mf, got '" +
                    name + "'");
}

// Reference two-state benchmark plant used whenever a config omits the system.
inline LtiSystem<double> default_system() {
  LtiSystem<double> sys;
  sys.A = Matrix<double>(2, 2);
  sys.A << 0.5, 1.0, 0.25, 0.5;
  sys.B = Matrix<double>(2, 1);
  sys.B << 1.0, 1.0;
  sys.noise_cov = Matrix<double>::Zero(2, 2);
  return sys;
}

inline CostSpec<double> default_cost(Index n, Index m) {
  CostSpec<double> cost;
  cost.Q = Matrix<double>::Identity(n, n);
  cost.R = Matrix<double>::Identity(m, m);
  cost.gamma = 0.7;
  return cost;
}

inline Matrix<double> default_initial_gain() {
  Matrix<double> F0(1, 2);
  F0 << -1.0, 0.0;
  return F0;
}

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::Pi;
  LtiSystem<double> sys;
  CostSpec<double> cost;
  Matrix<double> F0;
  double epsilon = 1e-8;
  int max_iter = 100;
  Index K = 20;
  int N = 15;
  int r = 3;
  InitialPairSet<double> initial_pairs;  // empty: algorithm default excitation
  double probing_amplitude = 1.0;
  std::uint64_t seed = 0;
  int Y = 10;
  std::vector<double> alpha_grid = {0.0, 0.25, 0.5, 1.0};

  void validate() const {
    sys.validate();
    cost.validate(sys.state_dim(), sys.input_dim());
    if (F0.rows() != sys.input_dim() || F0.cols() != sys.state_dim())
      throw ConfigError("config field 'F0' must have input_dim rows and state_dim columns");
    if (epsilon < 0.0) throw ConfigError("config field 'epsilon' must be nonnegative");
    if (max_iter < 1) throw ConfigError("config field 'max_iter' must be at least 1");
    if (K < 0) throw ConfigError("config field 'K' must be nonnegative");
    if (N < 1) throw ConfigError("config field 'N' must be at least 1");
    if (r < 1) throw ConfigError("config field 'r' must be at least 1");
    if (Y < 1) throw ConfigError("config field 'Y' must be at least 1");
    if (alpha_grid.empty()) throw ConfigError("config field 'alpha_grid' must not be empty");
    for (double a : alpha_grid)
      if (!(a >= 0.0)) throw ConfigError("config field 'alpha_grid' entries must be nonnegative");
    if (!initial_pairs.pairs.empty()) {
      initial_pairs.validate(sys.state_dim(), sys.input_dim());
      if (static_cast<int>(initial_pairs.count()) != r)
        throw ConfigError("config field 'r' must equal the number of initial_pairs");
    }
  }
};

namespace detail {

inline void check_known_keys(const nlohmann::json& obj, const std::vector<std::string>& known,
                             const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("unknown config field '" + where + it.key() + "'");
  }
}

inline Matrix<double> parse_matrix(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array() || j.empty())
    throw ConfigError("config field '" + field + "' must be a nonempty array of rows");
  const auto& first = j.front();
  if (!first.is_array() || first.empty())
    throw ConfigError("config field '" + field + "' rows must be nonempty number arrays");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(first.size());
  Matrix<double> M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols)
      throw ConfigError("config field '" + field + "' rows must all have length " +
                        std::to_string(cols));
    for (Index k = 0; k < cols; ++k) {
      const auto& cell = row[static_cast<std::size_t>(k)];
      if (!cell.is_number())
        throw ConfigError("config field '" + field + "' entries must be numbers");
      M(i, k) = cell.get<double>();
    }
  }
  return M;
}

inline double parse_number(const nlohmann::json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError("config field '" + field + "' must be a number");
  return j.get<double>();
}

inline int parse_int(const nlohmann::json& j, const std::string& field) {
  if (!j.is_number_integer())
    throw ConfigError("config field '" + field + "' must be an integer");
  return j.get<int>();
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  detail::check_known_keys(
      j,
      {"algorithm", "system", "cost", "F0", "epsilon", "max_iter", "K", "N", "r",
       "initial_pairs", "probing_amplitude", "seed", "Y", "alpha_grid"},
      "");
  if (!j.contains("algorithm"))
    throw ConfigError("config field 'algorithm' is required (pi | mf-oppi | mb-pd | mb-pd-mf)");
  if (!j["algorithm"].is_string() || j["algorithm"].get<std::string>().empty())
    throw ConfigError("config field 'algorithm' must be a nonempty string");

  ExperimentConfig cfg;
  cfg.algorithm = algorithm_from_name(j["algorithm"].get<std::string>());
  switch (cfg.algorithm) {
    case Algorithm::Pi:
    case Algorithm::MbPd:
      cfg.epsilon = 1e-8;
      cfg.max_iter = 100;
      break;
    case Algorithm::MfOppi:
      cfg.epsilon = 1e-3;
      cfg.max_iter = 10;
      cfg.K = 20;
      cfg.N = 15;
      break;
    case Algorithm::MbPdMf:
      cfg.epsilon = 5e-3;
      cfg.max_iter = 15;
      cfg.K = 10;
      cfg.N = 15;
      break;
  }

  bool custom_system = false;
  cfg.sys = default_system();
  if (j.contains("system")) {
    custom_system = true;
    const auto& js = j["system"];
    if (!js.is_object()) throw ConfigError("config field 'system' must be an object");
    detail::check_known_keys(js, {"A", "B", "noise_cov"}, "system.");
    if (!js.contains("A") || !js.contains("B"))
      throw ConfigError("config field 'system' requires both 'A' and 'B'");
    cfg.sys.A = detail::parse_matrix(js["A"], "system.A");
    cfg.sys.B = detail::parse_matrix(js["B"], "system.B");
    cfg.sys.noise_cov = js.contains("noise_cov")
                            ? detail::parse_matrix(js["noise_cov"], "system.noise_cov")
                            : Matrix<double>(Matrix<double>::Zero(cfg.sys.A.rows(), cfg.sys.A.rows()));
  }
  const Index n = cfg.sys.A.rows();
  const Index m = cfg.sys.B.cols();

  cfg.cost = default_cost(n, m);
  if (j.contains("cost")) {
    const auto& jc = j["cost"];
    if (!jc.is_object()) throw ConfigError("config field 'cost' must be an object");
    detail::check_known_keys(jc, {"Q", "R", "gamma"}, "cost.");
    if (jc.contains("Q")) cfg.cost.Q = detail::parse_matrix(jc["Q"], "cost.Q");
    if (jc.contains("R")) cfg.cost.R = detail::parse_matrix(jc["R"], "cost.R");
    if (jc.contains("gamma")) cfg.cost.gamma = detail::parse_number(jc["gamma"], "cost.gamma");
  }

  cfg.F0 = custom_system ? Matrix<double>(Matrix<double>::Zero(m, n)) : default_initial_gain();
  if (j.contains("F0")) cfg.F0 = detail::parse_matrix(j["F0"], "F0");

  if (j.contains("epsilon")) {
    cfg.epsilon = detail::parse_number(j["epsilon"], "epsilon");
  }
  if (j.contains("max_iter")) cfg.max_iter = detail::parse_int(j["max_iter"], "max_iter");
  if (j.contains("K")) cfg.K = detail::parse_int(j["K"], "K");
  if (j.contains("N")) cfg.N = detail::parse_int(j["N"], "N");
  if (j.contains("probing_amplitude"))
    cfg.probing_amplitude = detail::parse_number(j["probing_amplitude"], "probing_amplitude");
  if (j.contains("seed")) {
    const auto& sj = j["seed"];
    if (!sj.is_number_integer() || (sj.is_number_integer() && !sj.is_number_unsigned() &&
                                    sj.get<long long>() < 0))
      throw ConfigError("config field 'seed' must be a nonnegative integer");
    cfg.seed = sj.get<std::uint64_t>();
  }
  if (j.contains("Y")) cfg.Y = detail::parse_int(j["Y"], "Y");
  if (j.contains("alpha_grid")) {
    const auto& ja = j["alpha_grid"];
    if (!ja.is_array() || ja.empty())
      throw ConfigError("config field 'alpha_grid' must be a nonempty number array");
    cfg.alpha_grid.clear();
    for (const auto& cell : ja)
      cfg.alpha_grid.push_back(detail::parse_number(cell, "alpha_grid"));
  }
  if (j.contains("initial_pairs")) {
    const auto& jp = j["initial_pairs"];
    if (!jp.is_array() || jp.empty())
      throw ConfigError("config field 'initial_pairs' must be a nonempty array of vectors");
    for (const auto& row : jp) {
      if (!row.is_array() || static_cast<Index>(row.size()) != n + m)
        throw ConfigError("config field 'initial_pairs' entries must have length state_dim + input_dim");
      Vector<double> v(n + m);
      for (Index k = 0; k < n + m; ++k) {
        const auto& cell = row[static_cast<std::size_t>(k)];
        if (!cell.is_number())
          throw ConfigError("config field 'initial_pairs' entries must be numbers");
        v(k) = cell.get<double>();
      }
      cfg.initial_pairs.pairs.push_back(v);
    }
  }
  // r is derived from the excitation set; an explicit value is a cross-check.
  const int expected_r = cfg.initial_pairs.pairs.empty()
                             ? static_cast<int>((n == 2 && m == 1) ? 3 : n + m)
                             : static_cast<int>(cfg.initial_pairs.count());
  if (j.contains("r")) {
    const int given = detail::parse_int(j["r"], "r");
    if (given != expected_r)
      throw ConfigError("config field 'r' must equal the excitation set size " +
                        std::to_string(expected_r) + ", got " + std::to_string(given));
  }
  cfg.r = expected_r;

  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

struct RunReport {
  std::string algorithm;
  std::uint64_t seed = 0;
  int iterations = 0;
  bool converged = false;
  Matrix<double> initial_gain;
  Matrix<double> terminal_gain;
  double terminal_error = 0.0;  // Frobenius distance to a fresh Riccati solve
  double wall_time_seconds = 0.0;
  IterateTrace<double> trace;
};

inline RunReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  IterateTrace<double> trace;
  switch (cfg.algorithm) {
    case Algorithm::Pi:
      trace = classical_pi(cfg.sys, cfg.cost, cfg.F0, cfg.epsilon, cfg.max_iter);
      break;
    case Algorithm::MbPd:
      trace = mb_pd_run(cfg.sys, cfg.cost, cfg.F0, cfg.epsilon, cfg.max_iter);
      break;
    case Algorithm::MfOppi: {
      OffPolicyOptions<double> opt;
      opt.probing_amplitude = cfg.probing_amplitude;
      opt.K = cfg.K;
      opt.N = cfg.N;
      opt.epsilon = cfg.epsilon;
      opt.max_iter = cfg.max_iter;
      opt.seed = cfg.seed;
      trace = mf_oppi_run(cfg.sys, cfg.cost, cfg.F0, opt);
      break;
    }
    case Algorithm::MbPdMf: {
      PdOptions<double> opt;
      opt.pairs = cfg.initial_pairs;
      opt.K = cfg.K;
      opt.N = cfg.N;
      opt.epsilon = cfg.epsilon;
      opt.max_iter = cfg.max_iter;
      opt.seed = cfg.seed;
      trace = mb_pd_model_free_run(cfg.sys, cfg.cost, cfg.F0, opt);
      break;
    }
  }
  const auto stop = std::chrono::steady_clock::now();

  RunReport rep;
  rep.algorithm = algorithm_name(cfg.algorithm);
  rep.seed = cfg.seed;
  rep.iterations = static_cast<int>(trace.steps.size());
  rep.converged = trace.converged;
  rep.initial_gain = trace.initial_gain;
  rep.terminal_gain = trace.terminal_gain();
  rep.wall_time_seconds = std::chrono::duration<double>(stop - start).count();
  const auto oracle = solve_are(cfg.sys, cfg.cost, cfg.F0);
  rep.terminal_error = (rep.terminal_gain - oracle.F).norm();
  rep.trace = std::move(trace);
  return rep;
}

// Frozen reference tables for the scalar benchmark (a=2, b=1, q=r=1, gamma=0.7,
// F0=-1, four exact iterations).  The dual table's step-4 leading entry is the
// analytically consistent 12.0166.
struct Example1Result {
  RunReport pi;
  RunReport pd;
  EquivalenceReport<double> equivalence;
  double pi_table_deviation = 0.0;
  double pd_table_deviation = 0.0;
  bool tables_match = false;
};

inline Example1Result run_example1() {
  LtiSystem<double> sys;
  sys.A = Matrix<double>::Constant(1, 1, 2.0);
  sys.B = Matrix<double>::Constant(1, 1, 1.0);
  sys.noise_cov = Matrix<double>::Zero(1, 1);
  CostSpec<double> cost;
  cost.Q = Matrix<double>::Identity(1, 1);
  cost.R = Matrix<double>::Identity(1, 1);
  cost.gamma = 0.7;
  const Matrix<double> F0 = Matrix<double>::Constant(1, 1, -1.0);

  const auto oracle = solve_are(sys, cost, F0);
  const auto stamp = [&](IterateTrace<double> trace, const std::string& name,
                         double seconds) {
    RunReport rep;
    rep.algorithm = name;
    rep.seed = 0;
    rep.iterations = static_cast<int>(trace.steps.size());
    rep.converged = trace.converged;
    rep.initial_gain = trace.initial_gain;
    rep.terminal_gain = trace.terminal_gain();
    rep.terminal_error = (rep.terminal_gain - oracle.F).norm();
    rep.wall_time_seconds = seconds;
    rep.trace = std::move(trace);
    return rep;
  };

  Example1Result out;
  auto t0 = std::chrono::steady_clock::now();
  auto pi_trace = classical_pi(sys, cost, F0, 0.0, 4);
  auto t1 = std::chrono::steady_clock::now();
  auto pd_trace = mb_pd_run(sys, cost, F0, 0.0, 4, StabilityPolicy::Discounted);
  auto t2 = std::chrono::steady_clock::now();
  out.equivalence = verify_equivalence(pi_trace, pd_trace);
  out.pi = stamp(std::move(pi_trace), "pi", std::chrono::duration<double>(t1 - t0).count());
  out.pd = stamp(std::move(pd_trace), "mb-pd", std::chrono::duration<double>(t2 - t1).count());

  const double X_ref[4] = {6.6666, 4.0675, 3.9353, 3.9345};
  const double F_ref[4] = {-1.6471, -1.4801, -1.4673, -1.4673};
  const double P_ref[4][3] = {{19.6666, 9.3333, 5.6667},
                              {12.3889, 5.6945, 3.8472},
                              {12.0188, 5.5094, 3.7547},
                              {12.0166, 5.5083, 3.7542}};
  const double Xp_ref[4] = {6.6667, 4.0675, 3.9353, 3.9345};

  for (int s = 0; s < 4; ++s) {
    const auto& pi_step = out.pi.trace.steps[static_cast<std::size_t>(s)];
    out.pi_table_deviation = std::max(out.pi_table_deviation,
                                      std::abs(pi_step.value(0, 0) - X_ref[s]));
    out.pi_table_deviation = std::max(out.pi_table_deviation,
                                      std::abs(pi_step.gain(0, 0) - F_ref[s]));
    const auto& pd_step = out.pd.trace.steps[static_cast<std::size_t>(s)];
    const Matrix<double>& P = pd_step.value;
    out.pd_table_deviation = std::max(out.pd_table_deviation,
                                      std::abs(P(0, 0) - P_ref[s][0]));
    out.pd_table_deviation = std::max(out.pd_table_deviation,
                                      std::abs(P(0, 1) - P_ref[s][1]));
    out.pd_table_deviation = std::max(out.pd_table_deviation,
                                      std::abs(P(1, 1) - P_ref[s][2]));
    const Matrix<double> Fbar = gain_stack(Matrix<double>(
        out.pd.trace.gain_before(static_cast<std::size_t>(s))));
    const Matrix<double> Xp = Fbar.transpose() * P * Fbar;
    out.pd_table_deviation = std::max(out.pd_table_deviation,
                                      std::abs(Xp(0, 0) - Xp_ref[s]));
  }
  out.tables_match = out.pi_table_deviation < 5e-4 && out.pd_table_deviation < 5e-4;
  return out;
}

// One Monte-Carlo cell is a single seeded run at one noise level.  Sweeps pin
// epsilon to zero so every successful run reports a gain at every step; a run
// that stops early has repeated its gain bit-exactly, so padding with the
// terminal gain is exact.
struct SweepAlphaResult {
  double alpha = 0.0;
  std::vector<Matrix<double>> mean_gain;  // step s = 1..steps
  std::vector<double> mean_error;         // E^s over successful runs
  std::vector<std::uint64_t> failed_seeds;
  std::vector<std::string> failures;
  int successes = 0;
};

struct SweepResult {
  std::string algorithm;
  Matrix<double> optimal_gain;
  int steps = 0;
  std::vector<SweepAlphaResult> per_alpha;

  std::vector<double> terminal_errors() const {
    std::vector<double> out;
    for (const auto& cell : per_alpha)
      out.push_back(cell.mean_error.empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : cell.mean_error.back());
    return out;
  }
};

inline SweepResult run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const Index n = cfg.sys.state_dim();
  const int A = static_cast<int>(cfg.alpha_grid.size());
  const int cells = A * cfg.Y;

  ExperimentConfig noiseless = cfg;
  noiseless.sys.noise_cov = Matrix<double>::Zero(n, n);
  const Matrix<double> F_star = solve_are(noiseless.sys, noiseless.cost, noiseless.F0).F;

  struct Cell {
    bool failed = false;
    std::string error;
    std::uint64_t seed = 0;
    std::vector<Matrix<double>> gains;
  };
  std::vector<Cell> results(static_cast<std::size_t>(cells));

  const auto run_cell = [&](int c) {
    const int a = c / cfg.Y;
    Cell& slot = results[static_cast<std::size_t>(c)];
    slot.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(c));
    ExperimentConfig local = cfg;
    local.sys.noise_cov =
        cfg.alpha_grid[static_cast<std::size_t>(a)] * Matrix<double>::Identity(n, n);
    local.seed = slot.seed;
    local.epsilon = 0.0;
    try {
      const RunReport rep = run_experiment(local);
      slot.gains.reserve(static_cast<std::size_t>(cfg.max_iter));
      for (const auto& step : rep.trace.steps) slot.gains.push_back(step.gain);
      while (static_cast<int>(slot.gains.size()) < cfg.max_iter)
        slot.gains.push_back(rep.trace.terminal_gain());
    } catch (const std::exception& e) {
      slot.failed = true;
      slot.error = e.what();
    }
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(cells)));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&, t] {
      for (int c = t; c < cells; c += workers) run_cell(c);
    });
  for (auto& th : pool) th.join();

  SweepResult sweep;
  sweep.algorithm = algorithm_name(cfg.algorithm);
  sweep.optimal_gain = F_star;
  sweep.steps = cfg.max_iter;
  for (int a = 0; a < A; ++a) {
    SweepAlphaResult agg;
    agg.alpha = cfg.alpha_grid[static_cast<std::size_t>(a)];
    const Matrix<double> zero = Matrix<double>::Zero(cfg.F0.rows(), cfg.F0.cols());
    agg.mean_gain.assign(static_cast<std::size_t>(cfg.max_iter), zero);
    agg.mean_error.assign(static_cast<std::size_t>(cfg.max_iter), 0.0);
    for (int i = 0; i < cfg.Y; ++i) {
      const Cell& slot = results[static_cast<std::size_t>(a * cfg.Y + i)];
      if (slot.failed) {
        agg.failed_seeds.push_back(slot.seed);
        agg.failures.push_back(slot.error);
        continue;
      }
      ++agg.successes;
      for (int s = 0; s < cfg.max_iter; ++s) {
        const auto& F = slot.gains[static_cast<std::size_t>(s)];
        agg.mean_gain[static_cast<std::size_t>(s)] += F;
        agg.mean_error[static_cast<std::size_t>(s)] += (F - F_star).norm();
      }
    }
    if (agg.successes > 0) {
      for (int s = 0; s < cfg.max_iter; ++s) {
        agg.mean_gain[static_cast<std::size_t>(s)] /= double(agg.successes);
        agg.mean_error[static_cast<std::size_t>(s)] /= double(agg.successes);
      }
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      for (int s = 0; s < cfg.max_iter; ++s) {
        agg.mean_gain[static_cast<std::size_t>(s)].setConstant(nan);
        agg.mean_error[static_cast<std::size_t>(s)] = nan;
      }
    }
    sweep.per_alpha.push_back(std::move(agg));
  }
  return sweep;
}

// Spearman rank correlation with midranks for ties; zero-variance input maps
// to zero by convention.
inline double spearman_rank_correlation(const std::vector<double>& x,
                                        const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ConfigError("rank correlation needs two equal-length samples of size >= 2");
  const auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double mid = 0.5 * (double(i) + double(j)) + 1.0;
      for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
      i = j + 1;
    }
    return rank;
  };
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// Serialization.  All numbers are printed with 17 significant digits so that
// parsing the text back reproduces every double bit for bit.
inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

enum class EmitFormat { Csv, Json };

inline EmitFormat emit_format_from_name(const std::string& name) {
  if (name == "csv") return EmitFormat::Csv;
  if (name == "json") return EmitFormat::Json;
  throw ConfigError("output format must be csv or json, got '" + name + "'");
}

inline std::string to_csv(const RunReport& rep) {
  const Index m = rep.initial_gain.rows();
  const Index n = rep.initial_gain.cols();
  const bool is_x = rep.trace.kind == ValueKind::X;
  const Index d = packed_size(is_x ? n : n + m);
  const std::string label = is_x ? "X" : "P";
  std::string out = "s";
  for (Index i = 1; i <= m; ++i)
    for (Index k = 1; k <= n; ++k)
      out += ",F_" + std::to_string(i) + "_" + std::to_string(k);
  for (Index k = 1; k <= d; ++k) out += "," + label + "_" + std::to_string(k);
  out += ",deviation\n";
  for (const auto& step : rep.trace.steps) {
    out += std::to_string(step.s);
    for (Index i = 0; i < m; ++i)
      for (Index k = 0; k < n; ++k) out += "," + format_number(step.gain(i, k));
    const Vector<double> packed = vech(step.value);
    for (Index k = 0; k < d; ++k) out += "," + format_number(packed(k));
    out += "," + format_number(step.deviation) + "\n";
  }
  return out;
}

inline std::string sweep_to_csv(const SweepResult& sweep) {
  const Index m = sweep.optimal_gain.rows();
  const Index n = sweep.optimal_gain.cols();
  std::string out = "alpha,s";
  for (Index i = 1; i <= m; ++i)
    for (Index k = 1; k <= n; ++k)
      out += ",F_" + std::to_string(i) + "_" + std::to_string(k);
  out += ",mean_error,failures\n";
  for (const auto& cell : sweep.per_alpha) {
    for (int s = 1; s <= sweep.steps; ++s) {
      out += format_number(cell.alpha) + "," + std::to_string(s);
      const auto& F = cell.mean_gain[static_cast<std::size_t>(s - 1)];
      for (Index i = 0; i < m; ++i)
        for (Index k = 0; k < n; ++k) out += "," + format_number(F(i, k));
      out += "," + format_number(cell.mean_error[static_cast<std::size_t>(s - 1)]);
      out += "," + std::to_string(cell.failed_seeds.size()) + "\n";
    }
  }
  return out;
}

namespace detail {

inline void append_json_string(std::string& out, const std::string& s) {
  out += '"';
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (static_cast<unsigned char>(c) < 0x20) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "\\u%04x", c);
      out += buf;
    } else {
      out += c;
    }
  }
  out += '"';
}

inline std::string matrix_to_json(const Matrix<double>& M) {
  std::string out = "[";
  for (Index i = 0; i < M.rows(); ++i) {
    if (i > 0) out += ",";
    out += "[";
    for (Index k = 0; k < M.cols(); ++k) {
      if (k > 0) out += ",";
      out += format_number(M(i, k));
    }
    out += "]";
  }
  out += "]";
  return out;
}

}  // namespace detail

inline std::string to_json(const RunReport& rep) {
  std::string out = "{\n  \"algorithm\": ";
  detail::append_json_string(out, rep.algorithm);
  out += ",\n  \"seed\": " + std::to_string(rep.seed);
  out += ",\n  \"iterations\": " + std::to_string(rep.iterations);
  out += ",\n  \"converged\": " + std::string(rep.converged ? "true" : "false");
  out += ",\n  \"value_kind\": \"" + std::string(rep.trace.kind == ValueKind::X ? "X" : "P") + "\"";
  out += ",\n  \"initial_gain\": " + detail::matrix_to_json(rep.initial_gain);
  out += ",\n  \"terminal_gain\": " + detail::matrix_to_json(rep.terminal_gain);
  out += ",\n  \"terminal_error\": " + format_number(rep.terminal_error);
  out += ",\n  \"wall_time_seconds\": " + format_number(rep.wall_time_seconds);
  out += ",\n  \"trace\": [";
  for (std::size_t i = 0; i < rep.trace.steps.size(); ++i) {
    const auto& step = rep.trace.steps[i];
    if (i > 0) out += ",";
    out += "\n    {\"s\": " + std::to_string(step.s);
    out += ", \"gain\": " + detail::matrix_to_json(step.gain);
    out += ", \"value\": " + detail::matrix_to_json(step.value);
    out += ", \"deviation\": " + format_number(step.deviation) + "}";
  }
  out += rep.trace.steps.empty() ? "]\n}\n" : "\n  ]\n}\n";
  return out;
}

inline RunReport read_report_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("report parse error: ") + e.what());
  }
  RunReport rep;
  rep.algorithm = j.at("algorithm").get<std::string>();
  rep.seed = j.at("seed").get<std::uint64_t>();
  rep.iterations = j.at("iterations").get<int>();
  rep.converged = j.at("converged").get<bool>();
  const std::string kind = j.at("value_kind").get<std::string>();
  if (kind != "X" && kind != "P")
    throw ConfigError("report field 'value_kind' must be X or P");
  rep.initial_gain = detail::parse_matrix(j.at("initial_gain"), "initial_gain");
  rep.terminal_gain = detail::parse_matrix(j.at("terminal_gain"), "terminal_gain");
  rep.terminal_error = j.at("terminal_error").get<double>();
  rep.wall_time_seconds = j.at("wall_time_seconds").get<double>();
  rep.trace.initial_gain = rep.initial_gain;
  rep.trace.kind = kind == "X" ? ValueKind::X : ValueKind::P;
  rep.trace.converged = rep.converged;
  for (const auto& js : j.at("trace")) {
    IterateStep<double> step;
    step.s = js.at("s").get<int>();
    step.gain = detail::parse_matrix(js.at("gain"), "trace.gain");
    step.value = detail::parse_matrix(js.at("value"), "trace.value");
    step.deviation = js.at("deviation").get<double>();
    rep.trace.steps.push_back(std::move(step));
  }
  return rep;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file '" + path + "'");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("failed writing output file '" + path + "'");
}

inline void emit(const RunReport& rep, EmitFormat format, const std::string& path) {
  write_text_file(path, format == EmitFormat::Csv ? to_csv(rep) : to_json(rep));
}

}  // namespace slqr
