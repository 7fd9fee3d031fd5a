// Command-line front end. Exit codes: 0 success, 1 usage or config error,
// 2 numerical failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "specequiv/specequiv.hpp"

namespace fs = std::filesystem;
using namespace specequiv;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

struct Common {
  std::string model;
  std::string out;
  double tol = 1e-12;
  std::size_t max_iter = 50'000;
  unsigned jobs = 1;

  SolverOptions solver() const {
    SolverOptions opts;
    opts.tol_ds = tol;
    opts.max_iter = max_iter;
    return opts;
  }
};

void setup_logging() {
  auto logger = spdlog::stderr_logger_mt("specequiv");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  const char* env = std::getenv("SPECTRA_LOG");
  if (!env || !*env) return;
  const std::string level(env);
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "warn") {
    spdlog::set_level(spdlog::level::warn);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    throw ConfigError("SPECTRA_LOG must be one of error, warn, info, debug (got '" + level + "')");
  }
}

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos) {
      throw ConfigError(what + ": cannot parse '" + item + "' as a number");
    }
    out.push_back(v);
  }
  return out;
}

cplx parse_z(const std::string& text) {
  const auto v = parse_numbers(text, "--z");
  if (v.size() != 2) throw ConfigError("--z expects re,im");
  const cplx z(v[0], v[1]);
  if (!(z.imag() > 0.0)) {
    throw ConfigError("--z: Im z must be > 0 (the solver works on the upper half-plane)");
  }
  return z;
}

ContourSpec parse_contour(const std::string& text) {
  const auto v = parse_numbers(text, "--contour");
  if (v.size() != 3 && v.size() != 4) throw ConfigError("--contour expects a,b,h[,nodes]");
  ContourSpec c{v[0], v[1], v[2], 64};
  if (v.size() == 4) {
    if (v[3] != static_cast<double>(static_cast<int>(v[3]))) {
      throw ConfigError("--contour: nodes must be an integer");
    }
    c.nodes_per_side = static_cast<int>(v[3]);
  }
  c.validate();
  return c;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

MatrixXd json_rows(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw ConfigError(what + " must be a non-empty array of arrays");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(what + ": ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

/// identity | ones | means | file:PATH (p x p rows) | uuT:PATH (list of p-vectors)
MatrixXcd parse_functional(const std::string& spec, const EnsembleModel& model) {
  const Eigen::Index p = model.p();
  if (spec == "identity") return MatrixXcd::Identity(p, p);
  if (spec == "ones") return MatrixXcd::Ones(p, p);
  if (spec == "means") return mean_projector(model).cast<cplx>();
  if (spec.rfind("file:", 0) == 0) {
    const MatrixXd a = json_rows(read_json(spec.substr(5)), spec);
    if (a.rows() != p || a.cols() != p) throw ConfigError(spec + ": matrix must be p x p");
    return a.cast<cplx>();
  }
  if (spec.rfind("uuT:", 0) == 0) {
    const MatrixXd vectors = json_rows(read_json(spec.substr(4)), spec);
    if (vectors.cols() != p) throw ConfigError(spec + ": each vector must have p entries");
    return (vectors.transpose() * vectors).cast<cplx>();
  }
  throw ConfigError("unknown functional '" + spec +
                    "' (expected identity, ones, means, file:PATH or uuT:PATH)");
}

EnsembleModel load_checked(const Common& c) {
  EnsembleModel model = load_model(c.model);
  spdlog::info("model {}: p = {}, n = {}, {} column groups", c.model, model.p(), model.n(),
               model.group_count());
  for (const auto& w : model.warnings()) spdlog::warn("{}", w);
  return model;
}

/// Writes to DIR/name when --out is set, else to stdout.
void emit(const Common& c, const std::string& name, const std::string& content) {
  if (c.out.empty()) {
    std::cout << content;
    return;
  }
  fs::create_directories(c.out);
  const fs::path path = fs::path(c.out) / name;
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  f << content;
  spdlog::info("wrote {}", path.string());
}

nlohmann::json to_json(cplx v) { return nlohmann::json::array({v.real(), v.imag()}); }

int cmd_solve(const Common& c, const std::string& z_text) {
  const cplx z = parse_z(z_text);
  const EnsembleModel model = load_checked(c);
  const FixedPointResult r = solve_lambda(model, z, c.solver());
  nlohmann::json lambda = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.lambda.size(); ++i) lambda.push_back(to_json(r.lambda[i]));
  const nlohmann::json doc = {{"z", to_json(z)},
                              {"g", to_json(stieltjes_g(model, r))},
                              {"lambda", lambda},
                              {"iterations", r.iterations},
                              {"residual_ds", r.residual_ds},
                              {"tolerance", r.tolerance},
                              {"contraction_estimate", r.contraction_estimate},
                              {"phi", r.phi},
                              {"warnings", model.warnings()}};
  emit(c, "solve.json", doc.dump(2) + "\n");
  return 0;
}

struct DensityArgs {
  double xlo = 0.0;
  std::optional<double> xhi;
  std::size_t count = 200;
  double y = 1e-3;
};

int cmd_density(const Common& c, const DensityArgs& a) {
  const EnsembleModel model = load_checked(c);
  const double xhi = a.xhi.value_or(support_upper_bound(model));
  const DensityGrid grid = density_grid(model, a.xlo, xhi, a.count, a.y, c.solver(), c.jobs);
  std::ostringstream os;
  write_density_csv(os, grid);
  emit(c, "density.csv", os.str());
  return 0;
}

struct ProjectArgs {
  std::vector<std::string> functionals{"identity"};
  std::string contour;
  bool margin_check = false;
  double y = 1e-3;
};

int cmd_project(const Common& c, const ProjectArgs& a) {
  const ContourSpec contour = parse_contour(a.contour);
  const EnsembleModel model = load_checked(c);
  std::vector<MatrixXcd> mats;
  for (const auto& f : a.functionals) mats.push_back(parse_functional(f, model));
  std::optional<SupportEstimate> support;
  if (a.margin_check) support = support_scan(model, a.y, 1e-3, c.solver(), c.jobs);
  const ContourSolution sol(model, contour, c.solver(), support ? &*support : nullptr, c.jobs);
  std::vector<ProjectionRow> rows;
  for (std::size_t k = 0; k < mats.size(); ++k) {
    rows.push_back({a.functionals[k], contour, sol.project(mats[k])});
    spdlog::info("{}: {}", a.functionals[k], rows.back().projection.value);
  }
  std::ostringstream os;
  write_projection_csv(os, rows);
  emit(c, "projection.csv", os.str());
  return 0;
}

struct ValidateArgs {
  std::uint64_t seed = 0;
  std::size_t trials = 10;
  double y = 1e-3;
  std::optional<double> bin_width;
  std::vector<std::string> functionals;
  std::string contour;
};

int cmd_validate(const Common& c, const ValidateArgs& a) {
  if (c.out.empty()) throw ConfigError("validate needs --out DIR");
  if (!a.functionals.empty() && a.contour.empty()) {
    throw ConfigError("--functional needs --contour");
  }
  const EnsembleModel model = load_checked(c);
  CompareConfig config;
  config.y = a.y;
  config.bin_width = a.bin_width;
  if (!a.functionals.empty()) {
    const ContourSpec contour = parse_contour(a.contour);
    for (const auto& f : a.functionals) {
      config.functionals.push_back({f, parse_functional(f, model), contour});
    }
  }
  const ComparisonReport report = compare(model, a.trials, a.seed, config, c.solver(), c.jobs);
  std::ostringstream hist, funcs, dens;
  write_histogram_csv(hist, report.histogram);
  write_functionals_csv(funcs, report.functionals);
  write_density_csv(dens, report.grid);
  const std::string summary = summary_json(report).dump(2) + "\n";
  emit(c, "histogram.csv", hist.str());
  emit(c, "functionals.csv", funcs.str());
  emit(c, "density.csv", dens.str());
  emit(c, "summary.json", summary);
  std::cout << summary;
  return 0;
}

int cmd_qve(const Common& c, const std::string& problem) {
  const QveProblem prob = qve_from_json(read_json(problem));
  const QveResult r = solve_qve(prob, c.solver());
  nlohmann::json m = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.m.size(); ++i) m.push_back(to_json(r.m(i)));
  const nlohmann::json doc = {{"m", m},
                              {"iterations", r.iterations},
                              {"residual_ds", r.residual_ds},
                              {"tolerance", r.tolerance},
                              {"residual", r.residual}};
  emit(c, "qve.json", doc.dump(2) + "\n");
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool needs_model) {
  auto* model = sub->add_option("--model", c.model, "Model config (JSON)");
  if (needs_model) model->required()->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Output directory (default: stdout)");
  sub->add_option("--tol", c.tol, "d_s stopping tolerance")->check(CLI::PositiveNumber);
  sub->add_option("--max-iter", c.max_iter, "Iteration budget per solve")
      ->check(CLI::PositiveNumber);
  sub->add_option("--jobs", c.jobs, "Worker threads, 0 = all cores");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic equivalents for sample covariance spectra"};
  app.require_subcommand(1);
  Common common;

  auto* solve = app.add_subcommand("solve", "Solve the fixed point at one z");
  add_common(solve, common, true);
  std::string z_text;
  solve->add_option("--z", z_text, "Point re,im with im > 0")->required();

  auto* density = app.add_subcommand("density", "Predicted spectral density on a grid");
  add_common(density, common, true);
  DensityArgs dargs;
  density->add_option("--xlo", dargs.xlo, "Grid start");
  density->add_option("--xhi", dargs.xhi, "Grid end (default: support bound x0)");
  density->add_option("--count", dargs.count, "Grid points (>= 2)");
  density->add_option("--y", dargs.y, "Imaginary offset")->check(CLI::PositiveNumber);

  auto* project = app.add_subcommand("project", "Contour projections tr(Pi A)");
  add_common(project, common, true);
  ProjectArgs pargs;
  project->add_option("--functional", pargs.functionals,
                      "identity | ones | means | file:PATH | uuT:PATH (repeatable)");
  project->add_option("--contour", pargs.contour, "a,b,h[,nodes]")->required();
  project->add_flag("--margin-check", pargs.margin_check,
                    "Reject contours closer than h/2 to the scanned support");
  project->add_option("--y", pargs.y, "Offset used by the margin scan")
      ->check(CLI::PositiveNumber);

  auto* validate = app.add_subcommand("validate", "Monte Carlo comparison report");
  add_common(validate, common, true);
  ValidateArgs vargs;
  validate->add_option("--seed", vargs.seed, "RNG seed")->required();
  validate->add_option("--trials", vargs.trials, "Number of sampled matrices")
      ->check(CLI::PositiveNumber);
  validate->add_option("--y", vargs.y, "Imaginary offset of the predicted density")
      ->check(CLI::PositiveNumber);
  validate->add_option("--bin-width", vargs.bin_width, "Histogram bin width")
      ->check(CLI::PositiveNumber);
  validate->add_option("--functional", vargs.functionals, "Functional to compare (repeatable)");
  validate->add_option("--contour", vargs.contour, "a,b,h[,nodes] for the functionals");

  auto* qve = app.add_subcommand("qve", "Solve -1/m = z 1 + a + S m");
  add_common(qve, common, false);
  std::string problem;
  qve->add_option("--problem", problem, "Problem file {z, a, S}")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    setup_logging();
    if (*solve) return cmd_solve(common, z_text);
    if (*density) return cmd_density(common, dargs);
    if (*project) return cmd_project(common, pargs);
    if (*validate) return cmd_validate(common, vargs);
    if (*qve) return cmd_qve(common, problem);
  } catch (const NonConvergence& e) {
    spdlog::error("{}", e.what());
    return kExitNumerical;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const DomainError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kExitNumerical;
  }
  return 0;
}
