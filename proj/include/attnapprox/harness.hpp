#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnapprox/attn.hpp"
#include "attnapprox/construct_multi.hpp"
#include "attnapprox/construct_single.hpp"
#include "attnapprox/grid_uap.hpp"
#include "attnapprox/hardmax.hpp"
#include "attnapprox/icl.hpp"
#include "attnapprox/interp.hpp"
#include "attnapprox/native_seq2seq.hpp"
#include "attnapprox/numkit.hpp"

namespace attnapprox {

enum class Experiment { hardmax, single, multi, grid_scalar, seq2seq, colwise, three_layer, icl, icgd };

inline const std::vector<std::pair<std::string, Experiment>>& experiment_names() {
  static const std::vector<std::pair<std::string, Experiment>> names = {
      {"hardmax", Experiment::hardmax},         {"single", Experiment::single},
      {"multi", Experiment::multi},             {"grid_scalar", Experiment::grid_scalar},
      {"seq2seq", Experiment::seq2seq},         {"colwise", Experiment::colwise},
      {"three_layer", Experiment::three_layer}, {"icl", Experiment::icl},
      {"icgd", Experiment::icgd}};
  return names;
}

inline Experiment parse_experiment(const std::string& s) {
  for (const auto& [name, e] : experiment_names())
    if (name == s) return e;
  throw std::invalid_argument("unknown experiment: " + s);
}

inline std::string experiment_name(Experiment e) {
  for (const auto& [name, x] : experiment_names())
    if (x == e) return name;
  return "?";
}

// Knobs shared by all experiments. p = 0 lets single/icl pick p from epsilon.
// hardmax reads p as the score-vector length; three_layer reads H as hidden units per row.
struct ExperimentParams {
  std::size_t n = 8;
  std::size_t d = 1;
  std::size_t p = 0;
  std::size_t H = 1;
  double a = -1.0;
  double b = 1.0;
  double epsilon = 0.01;
  std::optional<double> beta;  // overrides the computed temperature
  std::size_t g = 4;
  double delta = 0.25;
  std::size_t samples = 200;
  std::size_t steps = 1;
  double eta = 0.5;
  double B1 = 1.0;
  std::string target = "sine_of_sum";
  std::string table;    // grid_scalar: load center values from this file instead of tabulating target
  std::string gradnet;  // icgd: "r h a b c" file instead of a random net
};

struct SweepConfig {
  Experiment experiment = Experiment::single;
  std::string axis = "p";
  std::vector<double> values;
  std::size_t trials = 10;
  std::uint64_t seed = 1;
  ExperimentParams params;
  std::string out_csv;
  std::string out_svg;

  void validate() const {
    static const std::vector<std::string> axes = {"p", "H", "b_minus_a", "g", "T"};
    if (std::find(axes.begin(), axes.end(), axis) == axes.end())
      throw std::invalid_argument("invalid config: axis must be one of p, H, b_minus_a, g, T");
    if (values.empty()) throw std::invalid_argument("invalid config: values list is empty");
    for (std::size_t i = 1; i < values.size(); ++i)
      if (!(values[i] > values[i - 1])) throw std::invalid_argument("invalid config: values must be strictly increasing");
    for (double v : values)
      if (!(v > 0.0)) throw std::invalid_argument("invalid config: axis values must be positive");
    if (trials == 0) throw std::invalid_argument("invalid config: trials must be >= 1");
  }
};

struct ResultRow {
  std::string experiment;
  std::string axis;
  double value = 0.0;
  std::size_t n = 0, d = 0, p = 0, H = 0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  double err_inf = 0.0;
  double err_bound = 0.0;
  double err_lp = 0.0;
  bool pass = false;
};

inline const char* kCsvHeader = "experiment,axis,value,n,d,p,H,beta,seed,err_inf,err_bound,err_lp,pass";

// Seed of trial t at axis index i: splitmix64(splitmix64(master + i) + t).
inline std::uint64_t trial_seed(std::uint64_t master, std::size_t axis_index, std::size_t trial) {
  return splitmix64(splitmix64(master + axis_index) + trial);
}

inline ExperimentParams apply_axis(ExperimentParams p, Experiment e, const std::string& axis, double v) {
  const auto count = [&](double x) {
    if (x < 1.0 || std::floor(x) != x) throw std::invalid_argument("axis " + axis + " needs integer values");
    return static_cast<std::size_t>(x);
  };
  if (axis == "p") {
    p.p = count(v);
  } else if (axis == "H") {
    p.H = count(v);
  } else if (axis == "b_minus_a") {
    p.a = -v / 2.0;
    p.b = v / 2.0;
  } else if (axis == "g") {
    p.g = count(v);
  } else if (axis == "T") {
    if (e != Experiment::icgd && e != Experiment::colwise) throw std::invalid_argument("axis T applies to icgd and colwise");
    if (e == Experiment::icgd) p.steps = count(v);
  }
  return p;
}

// Random truncated-linear task: w, x ~ U(-1,1)^d, target value u ~ U(a,b), t = u - w^T x.
struct RandomTask {
  std::vector<TruncatedLinearModel> task;
  Matrix x;
};

inline RandomTask random_task(std::size_t n, std::size_t d, double a, double b, CounterRng& rng) {
  RandomTask r;
  r.x = random_uniform(d, n, -1.0, 1.0, rng);
  for (std::size_t i = 0; i < n; ++i) {
    TruncatedLinearModel m;
    m.a = a;
    m.b = b;
    m.w.resize(d);
    double wx = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      m.w[k] = rng.uniform(-1.0, 1.0);
      wx += m.w[k] * r.x(k, i);
    }
    m.t = rng.uniform(a, b) - wx;
    r.task.push_back(std::move(m));
  }
  return r;
}

// Prompt with ||x_i||_1, |y_i|, ||w||_1 <= B1.
inline ICLPrompt random_gd_prompt(std::size_t d, std::size_t n, double B1, CounterRng& rng) {
  ICLPrompt p;
  p.x = Matrix(d, n);
  const double per = B1 / static_cast<double>(d);
  for (double& v : p.x.data()) v = rng.uniform(-per, per);
  p.y.resize(n);
  for (double& v : p.y) v = rng.uniform(-B1, B1);
  p.w.resize(d);
  for (double& v : p.w) v = rng.uniform(-per, per);
  return p;
}

inline GradNetSpec random_gradnet(std::size_t d, std::size_t H, double bound, CounterRng& rng) {
  GradNetSpec s = GradNetSpec::zeros(d, H);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t h = 0; h < H; ++h) {
      s.a[r][h] = rng.uniform(-bound, bound);
      s.b[r][h] = rng.uniform(-bound, bound);
      s.c[r][h] = rng.uniform(-bound, bound);
    }
  return s;
}

inline ReluRowNet random_relu_row_net(std::size_t d, std::size_t n, std::size_t N, CounterRng& rng) {
  ReluRowNet net;
  net.N = N;
  net.a = Matrix(n, N);
  const double scale = 1.0 / static_cast<double>(d * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < N; ++k) {
      net.a(i, k) = rng.uniform() < 0.5 ? -1.0 : 1.0;
      net.w.push_back(random_uniform(d, n, -scale, scale, rng));
    }
  return net;
}

// Random-feature least squares: N random directions, output weights by least squares,
// then |coefficient| folded into the direction so that a(i,k) = +-1.
inline ReluRowNet fit_relu_row_net(const std::function<Matrix(const Matrix&)>& f, std::size_t d, std::size_t n,
                                   std::size_t N, std::size_t samples, double input_bound, std::uint64_t seed) {
  CounterRng rng(seed, 0xF17);
  ReluRowNet net;
  net.N = N;
  net.a = Matrix(n, N);
  std::vector<Matrix> xs;
  std::vector<Matrix> ys;
  for (std::size_t s = 0; s < samples; ++s) {
    xs.push_back(random_uniform(d, n, -input_bound, input_bound, rng));
    ys.push_back(f(xs.back()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Matrix> dirs;
    for (std::size_t k = 0; k < N; ++k) {
      Matrix w(d, n);
      for (double& v : w.data()) v = rng.normal();
      dirs.push_back(std::move(w));
    }
    Eigen::MatrixXd phi(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(N));
    Eigen::VectorXd target(static_cast<Eigen::Index>(samples));
    for (std::size_t s = 0; s < samples; ++s) {
      target(static_cast<Eigen::Index>(s)) = ys[s](0, i);
      for (std::size_t k = 0; k < N; ++k) {
        double u = 0.0;
        for (std::size_t e = 0; e < d * n; ++e) u += dirs[k].data()[e] * xs[s].data()[e];
        phi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = relu(u);
      }
    }
    const Eigen::VectorXd c = phi.colPivHouseholderQr().solve(target);
    for (std::size_t k = 0; k < N; ++k) {
      const double ck = c(static_cast<Eigen::Index>(k));
      net.a(i, k) = ck < 0.0 ? -1.0 : 1.0;
      net.w.push_back(dirs[k] * std::abs(ck));
    }
  }
  return net;
}

// Fraction of attention-column argmaxes on anchors {0, p-1} for prompts drawn as
// x ~ U(-5,5), w ~ N(0,1), t ~ N(0,1) (d = 1).
inline double boundary_selection_fraction(double a, double b, std::size_t n, std::size_t p, std::size_t trials,
                                          std::uint64_t seed) {
  std::size_t hits = 0, total = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    CounterRng rng(seed, trial);
    std::vector<TruncatedLinearModel> task(n);
    Matrix x(1, n);
    for (std::size_t i = 0; i < n; ++i) {
      x(0, i) = rng.uniform(-5.0, 5.0);
      task[i] = {{rng.normal()}, rng.normal(), a, b};
    }
    const SingleHeadPlan plan = make_single_head_plan(std::move(task), p, 0.01);
    for (std::size_t k : attention_column_argmax(plan, x)) {
      hits += (k == 0 || k + 1 == p);
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

namespace harness_detail {

inline ResultRow base_row(Experiment e, const std::string& axis, double value, const ExperimentParams& p,
                          std::uint64_t seed) {
  ResultRow r;
  r.experiment = experiment_name(e);
  r.axis = axis;
  r.value = value;
  r.n = p.n;
  r.d = p.d;
  r.p = p.p;
  r.H = p.H;
  r.seed = seed;
  return r;
}

inline double eps0_from(const ExperimentParams& p) {
  return p.epsilon / (2.0 * std::max(std::abs(p.a), std::abs(p.b)));
}

inline ResultRow run_hardmax(ResultRow r, const ExperimentParams& p, CounterRng& rng) {
  const std::size_t len = p.p ? p.p : p.n;
  if (len < 2) throw std::invalid_argument("hardmax: need at least 2 scores");
  std::vector<double> x(len);
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  const TopTwo t = top_two(x);
  r.p = len;
  r.beta = p.beta.value_or(beta_for_unique_max(len, t.delta, p.epsilon));
  r.err_inf = hardmax_deviation(x, r.beta, HardmaxMode::unique_max);
  r.err_bound = p.epsilon;
  r.pass = r.err_inf <= r.err_bound;
  return r;
}

inline ResultRow run_single(ResultRow r, const ExperimentParams& p, CounterRng& rng) {
  auto rt = random_task(p.n, p.d, p.a, p.b, rng);
  std::size_t pp = p.p;
  double eps0 = eps0_from(p);
  if (pp == 0) {
    const ParameterChoice c = choose_parameters(p.n, p.a, p.b, p.epsilon);
    pp = c.p;
    eps0 = c.epsilon0;
  }
  SingleHeadPlan plan = make_single_head_plan(std::move(rt.task), pp, eps0);
  if (p.beta) plan.beta = *p.beta;
  const ErrorReport rep = verify_single_head(plan, rt.x);
  r.p = pp;
  r.H = 1;
  r.beta = plan.beta;
  r.err_inf = rep.measured_inf;
  r.err_bound = rep.bound;
  r.pass = rep.pass;
  return r;
}

inline ResultRow run_multi(ResultRow r, const ExperimentParams& p, CounterRng& rng) {
  auto rt = random_task(p.n, p.d, p.a, p.b, rng);
  MultiHeadPlan plan = make_multi_head_plan(std::move(rt.task), p.H, eps0_from(p));
  if (p.beta) plan.beta = *p.beta;
  const ErrorReport rep = verify_multi_head(plan, rt.x);
  r.p = plan.grid.p;
  r.beta = plan.beta;
  r.err_inf = rep.measured_inf;
  r.err_bound = rep.bound;
  r.pass = rep.pass;
  return r;
}

inline ResultRow run_icl(ResultRow r, const ExperimentParams& p, CounterRng& rng) {
  std::size_t pp = p.p;
  double eps0 = eps0_from(p);
  if (pp == 0) {
    const ParameterChoice c = choose_parameters(p.n, p.a, p.b, p.epsilon);
    pp = c.p;
    eps0 = c.epsilon0;
  }
  IclTruncated m = build_icl_truncated(make_grid(p.a, p.b, pp), p.d, p.n, IndexMapG{}, eps0);
  if (p.beta) {
    m.beta = *p.beta;
    m.stack.heads.front().beta = *p.beta;
  }
  ICLPrompt prompt;
  prompt.x = random_uniform(p.d, p.n, -1.0, 1.0, rng);
  prompt.w.resize(p.d);
  for (double& v : prompt.w) v = rng.uniform(-1.0, 1.0);
  prompt.t = rng.uniform(p.a, p.b);
  const ErrorReport rep = verify_icl_truncated(m, prompt);
  r.p = pp;
  r.H = 1;
  r.beta = m.beta;
  r.err_inf = rep.measured_inf;
  r.err_bound = rep.bound;
  r.pass = rep.pass;
  return r;
}

// In-core samples are graded against the table value of their center; the L2 estimate
// is against f itself over the whole box.
inline ResultRow run_grid(ResultRow r, Experiment e, const ExperimentParams& p, CounterRng& rng) {
  const InputGrid grid = make_input_grid(1.0, p.g, p.d, p.n, p.delta);
  const UapEpsilons eps{};
  UapModel model;
  std::function<Matrix(const Matrix&)> f;
  std::vector<ScalarTargetTable> tables;
  double lipschitz = 1.0, sup = 1.0;
  if (e == Experiment::grid_scalar) {
    const ScalarTarget t = named_scalar_target(p.target, grid);
    tables.push_back(p.table.empty() ? tabulate(grid, t.f) : load_target_table(p.table, grid.count()));
    model = build_seq_to_scalar(grid, tables.front(), eps);
    f = [fn = t.f](const Matrix& x) { return Matrix(1, 1, fn(x)); };
    lipschitz = t.lipschitz_inf;
    sup = t.sup;
  } else {
    const std::string name = p.target == "sine_of_sum" || p.target == "swap" || p.target == "identity" ? p.target : "swap";
    const SeqTarget t = named_seq_target(name, grid);
    tables = tabulate_seq(grid, t.f);
    model = build_seq2seq(grid, tables, eps);
    f = t.f;
    lipschitz = t.lipschitz_inf;
    sup = t.sup;
  }
  double worst = 0.0;
  for (std::size_t s = 0; s < p.samples; ++s) {
    std::size_t c = 0;
    const Matrix x = sample_in_core(grid, rng, &c);
    const Matrix y = model(x);
    for (std::size_t k = 0; k < y.data().size(); ++k)
      worst = std::max(worst, std::abs(y.data()[k] - tables[k].values[c]));
  }
  r.p = grid.count();
  r.H = 0;
  r.beta = model.stage2_beta;
  r.err_inf = worst;
  r.err_lp = mc_lp_error(f, [&model](const Matrix& x) { return model(x); }, grid.box(), 2.0, p.samples, r.seed);
  if (e == Experiment::grid_scalar) {
    r.err_bound = model.in_core_budget();
    r.pass = r.err_inf <= r.err_bound;
  } else {
    r.err_bound = uap_lp_budget(model, lipschitz, sup, grid.dims(), 2.0);
    r.pass = r.err_lp <= r.err_bound && r.err_inf <= model.in_core_budget();
  }
  return r;
}

// Positive-B single head. Axis T sets the routing scalar directly; otherwise T is sized from
// epsilon. The bound is the padding leakage 3 M n ||AX|| 2^(-n T).
inline ResultRow run_colwise(ResultRow r, const std::string& axis, double value, const ExperimentParams& p,
                             CounterRng& rng) {
  const Matrix A = random_uniform(p.d, p.d, -1.0, 1.0, rng);
  const Matrix B = random_uniform(p.n, p.n, 0.1, 1.0, rng);
  const Matrix x = random_uniform(p.d, p.n, -1.0, 1.0, rng);
  ColwiseSpec spec{A, B, 1.0};
  const double ax = norm(matmul(A, x), NormKind::inf());
  spec.T = axis == "T" ? value : colwise_routing_T(spec.M(), p.n, std::max(ax, 1e-300), p.epsilon);
  AttentionStack s;
  s.heads.push_back(build_colwise(spec));
  const ColwiseCheck c = check_colwise(forward_stack(s, colwise_input(x)), A, x, B);
  const double nd = static_cast<double>(p.n);
  r.p = p.n + 1;
  r.H = 1;
  r.beta = spec.T;
  r.err_inf = c.padding_col;
  r.err_bound = std::max(3.0 * spec.M() * nd * ax * std::exp2(-nd * spec.T), 1e-300);
  r.err_lp = c.first_cols_err;
  r.pass = c.padding_col <= r.err_bound * (1.0 + 1e-9) + 1e-12 && c.first_cols_err <= 1e-8;
  return r;
}

inline ResultRow run_three_layer(ResultRow r, const ExperimentParams& p, CounterRng& rng) {
  const ReluRowNet net = random_relu_row_net(p.d, p.n, p.H, rng);
  ThreeLayerOptions opt;
  opt.epsilon = p.epsilon;
  const ThreeLayerModel model = build_three_layer_seq2seq({net}, opt);
  double worst = 0.0;
  for (std::size_t s = 0; s < p.samples; ++s) {
    const Matrix x = random_uniform(p.d, p.n, -1.0, 1.0, rng);
    worst = std::max(worst, max_abs_diff(model(x), net.evaluate(x)));
  }
  r.p = model.rows.front().layer1_p;
  r.beta = model.rows.front().layer1_beta;
  r.err_inf = worst;
  r.err_bound = model.composed_budget();
  r.pass = worst <= r.err_bound;
  return r;
}

inline ResultRow run_icgd(ResultRow r, const ExperimentParams& p, CounterRng& rng) {
  const GradNetSpec net = p.gradnet.empty() ? random_gradnet(p.d, p.H, 1.0, rng) : load_gradnet(p.gradnet);
  r.d = net.d;
  r.H = net.H;
  const IcgdLayer layer = build_icgd_layer(net, p.eta, p.n, p.B1, p.epsilon);
  const ICLPrompt prompt = random_gd_prompt(net.d, p.n, p.B1, rng);
  const TrajectoryReport t = stacked_icgd_trajectory(layer, prompt, p.steps);
  r.p = layer.p;
  r.beta = layer.beta;
  r.err_inf = t.cumulative_divergence.back();
  r.err_bound = t.cumulative_bound.back();
  r.pass = r.err_inf <= r.err_bound;
  return r;
}

}  // namespace harness_detail

inline ResultRow run_trial(Experiment e, const std::string& axis, double value, const ExperimentParams& base,
                           std::uint64_t seed) {
  const ExperimentParams p = apply_axis(base, e, axis, value);
  ResultRow r = harness_detail::base_row(e, axis, value, p, seed);
  CounterRng rng(seed);
  switch (e) {
    case Experiment::hardmax: return harness_detail::run_hardmax(r, p, rng);
    case Experiment::single: return harness_detail::run_single(r, p, rng);
    case Experiment::multi: return harness_detail::run_multi(r, p, rng);
    case Experiment::icl: return harness_detail::run_icl(r, p, rng);
    case Experiment::grid_scalar:
    case Experiment::seq2seq: return harness_detail::run_grid(r, e, p, rng);
    case Experiment::colwise: return harness_detail::run_colwise(r, axis, value, p, rng);
    case Experiment::three_layer: return harness_detail::run_three_layer(r, p, rng);
    case Experiment::icgd: return harness_detail::run_icgd(r, p, rng);
  }
  throw std::logic_error("unreachable");
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.experiment << ',' << r.axis << ',' << format_double(r.value) << ',' << r.n << ',' << r.d << ',' << r.p
       << ',' << r.H << ',' << format_double(r.beta) << ',' << r.seed << ',' << format_double(r.err_inf) << ','
       << format_double(r.err_bound) << ',' << format_double(r.err_lp) << ',' << (r.pass ? "true" : "false")
       << '\n';
  }
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

// Rows ordered by (axis index, trial index).
inline std::vector<ResultRow> run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  std::vector<ResultRow> rows;
  rows.reserve(cfg.values.size() * cfg.trials);
  for (std::size_t i = 0; i < cfg.values.size(); ++i)
    for (std::size_t t = 0; t < cfg.trials; ++t)
      rows.push_back(run_trial(cfg.experiment, cfg.axis, cfg.values[i], cfg.params, trial_seed(cfg.seed, i, t)));
  if (!cfg.out_csv.empty()) write_text_file(cfg.out_csv, to_csv(rows));
  return rows;
}

struct AxisSummary {
  double value = 0.0;
  double median = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

inline std::vector<AxisSummary> summarize(const std::vector<ResultRow>& rows) {
  std::map<double, std::vector<double>> by;
  for (const auto& r : rows) by[r.value].push_back(r.err_inf);
  std::vector<AxisSummary> out;
  for (const auto& [v, errs] : by)
    out.push_back({v, median(errs), *std::min_element(errs.begin(), errs.end()),
                   *std::max_element(errs.begin(), errs.end())});
  return out;
}

// Least-squares slope of log(median err_inf) against log(axis value).
inline double fit_loglog_slope(const std::vector<ResultRow>& rows) {
  const auto pts = summarize(rows);
  std::vector<std::pair<double, double>> xy;
  for (const auto& s : pts)
    if (s.value > 0.0 && s.median > 0.0) xy.emplace_back(std::log(s.value), std::log(s.median));
  if (xy.size() < 3) throw std::invalid_argument("fit_loglog_slope: need >= 3 axis values with positive error");
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : xy) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(xy.size());
  my /= static_cast<double>(xy.size());
  double sxy = 0.0, sxx = 0.0;
  for (const auto& [x, y] : xy) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
  }
  return sxy / sxx;
}

// Log-log plot of the per-value median err_inf with min/max bars.
inline std::string plot_svg(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("emit_plot: no rows");
  const auto pts = summarize(rows);
  const double W = 480, Hh = 360, L = 60, R = 20, T = 20, Bm = 50;
  const auto safe_log = [](double v) { return std::log10(std::max(v, 1e-300)); };
  double x0 = safe_log(pts.front().value), x1 = safe_log(pts.back().value);
  double y0 = 1e300, y1 = -1e300;
  for (const auto& s : pts) {
    y0 = std::min(y0, safe_log(s.lo));
    y1 = std::max(y1, safe_log(s.hi));
  }
  if (x1 - x0 < 1e-12) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 - y0 < 1e-12) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const auto px = [&](double v) { return L + (safe_log(v) - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double v) { return T + (y1 - safe_log(v)) / (y1 - y0) * (Hh - T - Bm); };
  std::string out;
  char buf[256];
  const auto add = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    out += buf;
  };
  add("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n", W, Hh,
      W, Hh);
  add("<rect x=\"0\" y=\"0\" width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", W, Hh);
  add("<line x1=\"%.0f\" y1=\"%.0f\" x2=\"%.0f\" y2=\"%.0f\" stroke=\"black\"/>\n", L, Hh - Bm, W - R, Hh - Bm);
  add("<line x1=\"%.0f\" y1=\"%.0f\" x2=\"%.0f\" y2=\"%.0f\" stroke=\"black\"/>\n", L, T, L, Hh - Bm);
  add("<text x=\"%.0f\" y=\"%.0f\" font-size=\"12\" text-anchor=\"middle\">%s: %s (log)</text>\n", (L + W - R) / 2,
      Hh - 12, rows.front().experiment.c_str(), rows.front().axis.c_str());
  add("<text x=\"14\" y=\"%.0f\" font-size=\"12\" transform=\"rotate(-90 14 %.0f)\" text-anchor=\"middle\">err_inf "
      "(log)</text>\n",
      (T + Hh - Bm) / 2, (T + Hh - Bm) / 2);
  for (const auto& s : pts) {
    add("<text x=\"%.2f\" y=\"%.0f\" font-size=\"10\" text-anchor=\"middle\">%g</text>\n", px(s.value), Hh - Bm + 14,
        s.value);
  }
  if (pts.size() > 1) {
    out += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) add("%s%.2f,%.2f", i ? " " : "", px(pts[i].value), py(pts[i].median));
    out += "\"/>\n";
  }
  for (const auto& s : pts) {
    add("<line class=\"errbar\" x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"gray\"/>\n", px(s.value),
        py(s.lo), px(s.value), py(s.hi));
    add("<circle class=\"marker\" cx=\"%.2f\" cy=\"%.2f\" r=\"3.5\" fill=\"steelblue\"/>\n", px(s.value),
        py(s.median));
  }
  out += "</svg>\n";
  return out;
}

inline void emit_plot(const std::vector<ResultRow>& rows, const std::string& path) {
  write_text_file(path, plot_svg(rows));
}

// Flat key=value lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::vector<double> parse_value_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("bad number in list: " + item);
    out.push_back(v);
  }
  return out;
}

inline void apply_key_values(SweepConfig& cfg, const std::map<std::string, std::string>& kv) {
  auto& p = cfg.params;
  for (const auto& [k, v] : kv) {
    if (k == "experiment") cfg.experiment = parse_experiment(v);
    else if (k == "axis") cfg.axis = v;
    else if (k == "values") cfg.values = parse_value_list(v);
    else if (k == "trials") cfg.trials = std::stoul(v);
    else if (k == "seed") cfg.seed = std::stoull(v);
    else if (k == "out_csv") cfg.out_csv = v;
    else if (k == "out_svg") cfg.out_svg = v;
    else if (k == "n") p.n = std::stoul(v);
    else if (k == "d") p.d = std::stoul(v);
    else if (k == "p") p.p = std::stoul(v);
    else if (k == "heads" || k == "H") p.H = std::stoul(v);
    else if (k == "a") p.a = std::stod(v);
    else if (k == "b") p.b = std::stod(v);
    else if (k == "epsilon") p.epsilon = std::stod(v);
    else if (k == "beta") p.beta = std::stod(v);
    else if (k == "g") p.g = std::stoul(v);
    else if (k == "delta") p.delta = std::stod(v);
    else if (k == "samples") p.samples = std::stoul(v);
    else if (k == "steps") p.steps = std::stoul(v);
    else if (k == "eta") p.eta = std::stod(v);
    else if (k == "B1") p.B1 = std::stod(v);
    else if (k == "target") p.target = v;
    else if (k == "table") p.table = v;
    else if (k == "gradnet") p.gradnet = v;
    else throw std::invalid_argument("unknown config key: " + k);
  }
}

inline SweepConfig load_sweep_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  SweepConfig cfg;
  apply_key_values(cfg, parse_key_values(in));
  return cfg;
}

}  // namespace attnapprox
