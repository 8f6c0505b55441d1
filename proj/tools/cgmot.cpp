// Command-line front end. Exit codes: 0 success, 1 solver did not converge,
// 2 I/O or malformed input, 3 bad configuration or invalid problem.

#include "cgmot/entropic_ot.hpp"
#include "cgmot/experiments.hpp"
#include "cgmot/interpolation.hpp"
#include "cgmot/io.hpp"
#include "cgmot/noisy_ot.hpp"
#include "cgmot/oracles.hpp"
#include "cgmot/tree_propagation.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace cgmot;

namespace {

enum ExitCode { kOk = 0, kNotConverged = 1, kIO = 2, kConfig = 3 };

struct Globals {
  double tolerance = 1e-9;
  int max_iters = 10000;
  bool log_domain = false;
  std::uint64_t seed = 1;
  std::string out_dir;

  SolverOptions options() const {
    SolverOptions o;
    o.tolerance = tolerance;
    o.max_iterations = max_iters;
    o.log_domain = log_domain;
    o.validate();
    return o;
  }
};

/// Writes to <out-dir>/<name> when --out-dir is set, else to stdout with a
/// "# name" banner.
void emit(const Globals& g, const std::string& name, const std::string& text) {
  if (g.out_dir.empty()) {
    std::cout << "# " << name << '\n' << text;
  } else {
    io::write_text(fs::path(g.out_dir) / name, text);
  }
}

std::string histogram_text(const Histogram<double>& h) {
  std::ostringstream os;
  io::write_histogram(os, h);
  return os.str();
}

std::string matrix_text(const Matrix<double>& m) {
  std::ostringstream os;
  io::write_dense_matrix(os, m);
  return os.str();
}

CostMatrix<double> load_cost(const std::string& cost_path, const std::string& psi_path) {
  if (!cost_path.empty() == !psi_path.empty()) throw ConfigError("give exactly one of --cost and --psi");
  if (!cost_path.empty()) return CostMatrix<double>(io::load_matrix(cost_path).to_dense());
  return cost_from_kernel(io::load_kernel(psi_path));
}

int report_status(const SolveReport& r) {
  std::cerr << "iterations " << r.iterations << ", residual " << r.residual
            << (r.converged ? "" : " (not converged)") << '\n';
  return r.converged ? kOk : kNotConverged;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("bad number '" + item + "' in list '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal transport as MAP inference in collective graphical models"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--tolerance", g.tolerance, "Convergence tolerance")->capture_default_str();
  app.add_option("--max-iters", g.max_iters, "Iteration cap")->capture_default_str();
  app.add_flag("--log-domain", g.log_domain, "Log-domain Sinkhorn iterations");
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Write outputs here instead of stdout");

  int status = kOk;

  // distance -----------------------------------------------------------------
  std::string a_path, b_path, cost_path, psi_path;
  double epsilon = 1.0;
  bool dump_plan = false;
  auto* distance = app.add_subcommand("distance", "Sinkhorn distance between two histograms");
  distance->add_option("--a", a_path, "Source histogram CSV")->required();
  distance->add_option("--b", b_path, "Target histogram CSV")->required();
  distance->add_option("--cost", cost_path, "Cost matrix CSV");
  distance->add_option("--psi", psi_path, "Kernel CSV (cost = -log psi)");
  distance->add_option("--epsilon", epsilon, "Entropic regularisation")->capture_default_str();
  distance->add_flag("--plan", dump_plan, "Also emit the transport plan");
  distance->callback([&] {
    const auto a = io::load_histogram(a_path);
    const auto b = io::load_histogram(b_path);
    const auto cost = load_cost(cost_path, psi_path);
    const auto result = sinkhorn_plan(a, b, cost, epsilon, g.options());
    emit(g, "distance.txt", io::format_double(transport_cost(result.plan, cost, epsilon).total) + "\n");
    if (dump_plan) emit(g, "plan.csv", matrix_text(result.plan.entries()));
    status = report_status(result.report);
  });

  // noisy-distance -----------------------------------------------------------
  std::string noise_a = "exact", noise_b = "exact";
  double mass = 0;
  auto* noisy = app.add_subcommand("noisy-distance", "OT with noisy marginal observations (epsilon = 1)");
  noisy->add_option("--a", a_path, "Observed source counts CSV")->required();
  noisy->add_option("--b", b_path, "Observed target counts CSV")->required();
  noisy->add_option("--cost", cost_path, "Cost matrix CSV");
  noisy->add_option("--psi", psi_path, "Kernel CSV (cost = -log psi)");
  noisy->add_option("--noise-a", noise_a, "none | exact | poisson | gaussian:sigma=S")->capture_default_str();
  noisy->add_option("--noise-b", noise_b, "none | exact | poisson | gaussian:sigma=S")->capture_default_str();
  noisy->add_option("--mass", mass, "Sample count F (default: mass of --a)");
  noisy->add_flag("--plan", dump_plan, "Also emit tau");
  noisy->callback([&] {
    const auto model_a = NoiseModel::parse(noise_a);
    const auto model_b = NoiseModel::parse(noise_b);
    const auto a = io::load_histogram(a_path);
    const auto b = io::load_histogram(b_path);
    const auto cost = load_cost(cost_path, psi_path);
    const double f = mass > 0 ? mass : a.mass();
    if (!(f > 0)) throw ConfigError("sample count F must be positive");
    const Histogram<double> alpha(a.values() / f), beta(b.values() / f);
    const auto result = noisy_ot_solve(alpha, beta, cost, model_a, model_b, f, g.options());
    emit(g, "objective.txt", io::format_double(result.report.objective) + "\n");
    if (dump_plan) emit(g, "tau.csv", matrix_text(result.plan.entries()));
    status = report_status(result.report);
  });

  // interpolate ----------------------------------------------------------------
  std::string method = "ctmc", q_path, grid_path, tree_path;
  double t = 0.5;
  Index nodes = 0, k = 0;
  bool dump_plans = false;
  auto* interp = app.add_subcommand("interpolate", "Histogram interpolation on a path, Markov chain or tree");
  interp->add_option("--method", method, "path | ctmc | tree")
      ->check(CLI::IsMember({"path", "ctmc", "tree"}))
      ->capture_default_str();
  interp->add_option("--t", t, "Interpolation time in [0, 1]")->capture_default_str();
  interp->add_option("--a", a_path, "Left endpoint histogram CSV");
  interp->add_option("--b", b_path, "Right endpoint histogram CSV");
  interp->add_option("--psi", psi_path, "Path kernel CSV (method path)");
  interp->add_option("--N", nodes, "Path length (method path)");
  interp->add_option("--k", k, "Interior node, default round(t (N - 1)) + 1 (method path)");
  interp->add_option("--Q", q_path, "Rate matrix CSV (method ctmc)");
  interp->add_option("--grid", grid_path, "Grid JSON {rows, cols, q} (method ctmc)");
  interp->add_option("--tree", tree_path, "Tree JSON (method tree)");
  interp->add_flag("--plans", dump_plans, "Also emit T1 and T2");
  interp->callback([&] {
    const auto options = g.options();
    if (method == "tree") {
      if (tree_path.empty()) throw ConfigError("--method tree needs --tree");
      const auto tree = io::load_tree(tree_path);
      const auto solution = solve_tree(tree, options);
      for (std::size_t v = 0; v < tree.nodes().size(); ++v)
        if (!tree.observed(static_cast<Index>(v)))
          emit(g, detail::concat("node_", tree.nodes()[v], ".csv"), histogram_text(solution.node_marginals[v]));
      status = report_status(solution.report);
      return;
    }
    if (a_path.empty() || b_path.empty()) throw ConfigError("--a and --b are required");
    PathInterpolationProblem<double> problem{io::load_histogram(a_path), io::load_histogram(b_path),
                                             CTMCPathKernel<double>{}, options, dump_plans};
    if (method == "path") {
      if (psi_path.empty() || nodes < 3) throw ConfigError("--method path needs --psi and --N >= 3");
      const Index interior = k > 0 ? k : static_cast<Index>(std::llround(t * double(nodes - 1))) + 1;
      problem.kernel = UndirectedPathKernel<double>{io::load_kernel(psi_path), nodes, interior};
    } else {
      if (q_path.empty() == grid_path.empty()) throw ConfigError("--method ctmc needs exactly one of --Q and --grid");
      CTMCModel<double> model;
      if (!q_path.empty()) {
        model = CTMCModel<double>(io::load_matrix(q_path).to_dense());
      } else {
        const auto spec = io::load_grid_spec(grid_path);
        model = build_grid_rate_matrix<double>(spec.rows, spec.cols, spec.q);
      }
      problem.kernel = CTMCPathKernel<double>{std::move(model), t};
    }
    const auto result = interpolate_path(problem);
    emit(g, "c.csv", histogram_text(result.c));
    if (dump_plans) {
      emit(g, "T1.csv", matrix_text(result.T1->entries()));
      emit(g, "T2.csv", matrix_text(result.T2->entries()));
    }
    std::cerr << "realized time " << result.realized_time << '\n';
    status = report_status(result.report);
  });

  // barycenter-line --------------------------------------------------------------
  Index cells = 10;
  double line_mass = 100;
  auto* wb = app.add_subcommand("barycenter-line", "Closed-form barycenter between the ends of a line");
  wb->add_option("--n", cells, "Number of cells")->capture_default_str();
  wb->add_option("--mass", line_mass, "Mass F")->capture_default_str();
  wb->add_option("--t", t, "Time in [0, 1]")->capture_default_str();
  wb->add_option("--epsilon", epsilon, "Entropic regularisation (0 allowed)")->capture_default_str();
  wb->callback([&] {
    const auto r = oracles::analytic_wb_line(cells, line_mass, t, epsilon);
    emit(g, "barycenter.csv", r.non_unique ? std::string("non-unique\n") : histogram_text(*r.histogram));
  });

  // experiment ---------------------------------------------------------------------
  ExperimentConfig config;
  std::string times = "0,0.25,0.5,0.75,1", qs = "0.1,1";
  auto* experiment = app.add_subcommand("experiment", "Reproducible experiments");
  experiment->require_subcommand(1);
  auto* line = experiment->add_subcommand("synthetic-line", "Interpolation between the ends of a line");
  line->add_option("--cells", config.cells)->capture_default_str();
  line->add_option("--mass", config.mass)->capture_default_str();
  line->add_option("--q", config.line_q, "Rate between neighbouring cells")->capture_default_str();
  line->add_option("--times", times, "Comma-separated times")->capture_default_str();
  line->callback([&] {
    config.scenario = ExperimentConfig::Scenario::synthetic_line;
    config.times = parse_list(times);
    config.solver = g.options();
    config.seed = g.seed;
    config.out_dir = g.out_dir;
    const auto table = run_synthetic_line(config);
    if (g.out_dir.empty()) std::cout << table.tsv();
  });
  auto* grid = experiment->add_subcommand("grid-mape", "Hourly interpolation error on a synthetic grid");
  grid->add_option("--rows", config.rows)->capture_default_str();
  grid->add_option("--cols", config.cols)->capture_default_str();
  grid->add_option("--population", config.population)->capture_default_str();
  grid->add_option("--generator-q", config.generator_q, "Rate of the generating chain")->capture_default_str();
  grid->add_option("--q", qs, "Comma-separated interpolation rates")->capture_default_str();
  grid->add_option("--first-hour", config.first_hour)->capture_default_str();
  grid->add_option("--last-hour", config.last_hour)->capture_default_str();
  grid->add_option("--days", config.days)->capture_default_str();
  grid->add_option("--noise-sigma", config.noise_sigma, "Log-normal observation noise")->capture_default_str();
  grid->add_flag("--inject-truth", config.inject_truth, "Debug: score the truth against itself");
  grid->callback([&] {
    config.scenario = ExperimentConfig::Scenario::grid_mape;
    config.interpolation_q = parse_list(qs);
    config.solver = g.options();
    config.seed = g.seed;
    config.out_dir = g.out_dir;
    const auto result = run_grid_mape(config);
    if (g.out_dir.empty()) std::cout << result.summary_tsv();
    for (const auto& r : result.records)
      if (!r.converged) status = kNotConverged;
  });

  // gen-data -------------------------------------------------------------------------
  std::string kind = "line";
  auto* gen = app.add_subcommand("gen-data", "Write example inputs (line endpoints or grid hours)");
  gen->add_option("--kind", kind, "line | grid")->check(CLI::IsMember({"line", "grid"}))->capture_default_str();
  gen->add_option("--cells", config.cells, "Line cells")->capture_default_str();
  gen->add_option("--mass", config.mass, "Line mass")->capture_default_str();
  gen->add_option("--rows", config.rows)->capture_default_str();
  gen->add_option("--cols", config.cols)->capture_default_str();
  gen->add_option("--population", config.population)->capture_default_str();
  gen->add_option("--generator-q", config.generator_q)->capture_default_str();
  gen->add_option("--noise-sigma", config.noise_sigma)->capture_default_str();
  gen->callback([&] {
    if (g.out_dir.empty()) throw ConfigError("gen-data needs --out-dir");
    const fs::path dir(g.out_dir);
    if (kind == "line") {
      config.scenario = ExperimentConfig::Scenario::synthetic_line;
      config.validate();
      Vector<double> a = Vector<double>::Zero(config.cells), b = a;
      a[0] = config.mass;
      b[config.cells - 1] = config.mass;
      io::save_histogram(dir / "a.csv", Histogram<double>(a));
      io::save_histogram(dir / "b.csv", Histogram<double>(b));
      io::save_matrix(dir / "Q.csv", build_grid_rate_matrix<double>(1, config.cells, config.line_q).rates());
      io::save_matrix(dir / "cost.csv", CostMatrix<double>::line(config.cells).entries());
      return;
    }
    config.scenario = ExperimentConfig::Scenario::grid_mape;
    config.seed = g.seed;
    const auto days = generate_grid_days(config);
    for (std::size_t d = 0; d < days.size(); ++d)
      for (std::size_t h = 0; h < days[d].size(); ++h)
        io::save_histogram(dir / detail::concat("day", d + 1, "_hour", config.first_hour + int(h), ".csv"),
                           days[d][h]);
    io::write_text(dir / "grid.json", detail::concat("{\"rows\": ", config.rows, ", \"cols\": ", config.cols,
                                                     ", \"q\": ", io::format_double(config.generator_q), "}\n"));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  } catch (const io::IOError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIO;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNotConverged;
  } catch (const Error& e) {
    std::cerr << "invalid problem: " << e.what() << '\n';
    return kConfig;
  }
  return status;
}
