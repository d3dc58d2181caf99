#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "perhom/lab.hpp"

namespace {

using namespace perhom;

json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse failure: ") + e.what());
  }
  return j;
}

struct Overrides {
  double eta = -1;
  double epsilon = -1;
  int resolution = -1;
  int k = -1;
  std::string out;
  std::string format;
  std::int64_t seed = -1;
};

ExperimentConfig apply_overrides(ExperimentConfig cfg, const Overrides& ov) {
  if (ov.eta > 0) cfg.etas = {ov.eta};
  if (ov.epsilon > 0) cfg.epsilons = {ov.epsilon};
  if (ov.resolution > 0) {
    cfg.cell_resolution = ov.resolution;
    cfg.macro_resolutions = {ov.resolution};
  }
  if (ov.k > 0) cfg.K = ov.k;
  if (!ov.out.empty()) cfg.out = ov.out;
  if (!ov.format.empty()) cfg.format = ov.format;
  if (ov.seed >= 0) cfg.seed = static_cast<std::uint64_t>(ov.seed);
  cfg.validate();
  return cfg;
}

void print_matrix(const char* name, const Eigen::Matrix3d& M, int d) {
  for (int r = 0; r < d; ++r) {
    std::cout << name << "," << r;
    for (int c = 0; c < d; ++c) std::cout << "," << detail::num12(M(r, c));
    std::cout << "\n";
  }
}

int cmd_cell(const ExperimentConfig& cfg) {
  PerforationSpec spec = cfg.spec_for(cfg.etas.front());
  CellData cd = compute_cell_data(spec, cfg.cell_resolution);

  std::cout << "lambda_bar," << detail::num12(cd.eigenpair.lambda_bar) << "\n";
  print_matrix("A_bar", cd.tensor.A_bar, spec.dim);
  std::cout << "agreement_gap," << detail::num12(cd.tensor.agreement_gap) << "\n";
  if (!cfg.out.empty()) save_cell_data(cfg.out, cd);

  const double vol = cd.eigenpair.phi.grid.cell_volume();
  double norm = std::sqrt(vol) * cd.eigenpair.phi.v.norm();
  bool ok = std::abs(norm - 1.0) <= 1e-10 || spec.holes.empty();
  ok = ok && cd.eigenpair.phi.v.minCoeff() >= 0;
  ok = ok && cd.eigenpair.lambda_bar >= 0;
  ok = ok && (spec.holes.empty() ? cd.eigenpair.lambda_bar == 0 : cd.eigenpair.lambda_bar > 0);
  ok = ok && (cd.tensor.A_bar.topLeftCorner(spec.dim, spec.dim) -
              cd.tensor.A_bar.topLeftCorner(spec.dim, spec.dim).transpose())
                     .cwiseAbs()
                     .maxCoeff() <= 1e-8;
  ok = ok && cd.tensor.min_eigenvalue() > 0;
  if (!ok) {
    std::cerr << "invariant violation in the cell data\n";
    return 2;
  }
  return 0;
}

int cmd_spectrum(const ExperimentConfig& cfg) {
  const double eta = cfg.etas.front();
  const double eps = cfg.epsilons.front();
  PerforationSpec spec = cfg.spec_for(eta);
  const int r = cfg.macro_resolutions.back();
  MacroContext mc = make_macro_context(cfg.box_for(eps), spec, r);
  SpectraOptions so;
  so.seed = cfg.seed;
  so.dof_budget = cfg.dof_budget;

  SpectralSet direct = direct_spectrum(mc.pd, cfg.K, so);
  SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, cfg.K, so);
  SpectralSet homog = homogenized_spectrum(mc.cell->tensor.A_bar, mc.pd.grid, cfg.K, so);
  Reassembled re = reassemble(mc.cell->eigenpair.lambda_bar, eps, degen, mc.phi_eps);

  for (int k = 0; k < cfg.K; ++k)
    std::cout << "eigenvalue," << k + 1 << ",direct," << detail::num12(direct.eig.values[k]) << ",degenerate,"
              << detail::num12(degen.eig.values[k]) << ",homogenized," << detail::num12(homog.eig.values[k])
              << ",reassembled," << detail::num12(re.lambdas[k]) << "\n";
  double resid = 0;
  for (int k = 0; k < cfg.K; ++k) resid = std::max(resid, std::abs(direct.eig.values[k] - re.lambdas[k]));
  std::cout << "reassembly_residual," << detail::num12(resid) << "\n";
  if (!cfg.out.empty()) {
    save_spectral_set(cfg.out + "/direct", direct);
    save_spectral_set(cfg.out + "/degenerate", degen);
    save_spectral_set(cfg.out + "/homogenized", homog);
  }
  return 0;
}

int run_and_report(const ExperimentConfig& cfg) {
  CellCache cache;
  RateReport rep = run_checks(cfg, cache);
  export_report(rep, cfg.format, cfg.out);
  int fails = 0;
  for (const auto& row : rep.rows) {
    if (row.pass >= 0) {
      std::cout << row.quantity << "," << detail::num12(row.epsilon) << "," << detail::num12(row.eta) << "," << row.k
                << "," << detail::num12(row.value) << "," << (row.pass ? "pass" : "FAIL") << "\n";
      fails += row.pass == 0;
    }
  }
  std::cout << "report," << cfg.out << "\n";
  std::cout << "claims_failed," << fails << "\n";
  return fails == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spectral homogenization laboratory for periodically perforated boxes"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file (json)")->required();
    sub->add_option("--eta", ov.eta, "override: single eta value");
    sub->add_option("--epsilon", ov.epsilon, "override: single epsilon value");
    sub->add_option("--resolution", ov.resolution, "override: cells per period");
    sub->add_option("--k", ov.k, "override: eigenvalue count");
    sub->add_option("--out", ov.out, "override: output path");
    sub->add_option("--format", ov.format, "override: report format (csv|json)");
    sub->add_option("--seed", ov.seed, "override: random seed");
  };

  CLI::App* cell = app.add_subcommand("cell", "compute the unit-cell eigenpair, correctors and effective tensor");
  add_common(cell);
  CLI::App* spectrum = app.add_subcommand("spectrum", "solve the eigenvalue problems and report the reassembly");
  add_common(spectrum);
  CLI::App* sweep = app.add_subcommand("sweep", "run the configured sweeps and write the report");
  add_common(sweep);
  CLI::App* verify = app.add_subcommand("verify", "run the configured checks and report pass/fail");
  add_common(verify);

  CLI::App* exp = app.add_subcommand("export", "convert a stored json report");
  std::string in_path, out_path, out_format = "csv";
  exp->add_option("--in", in_path, "stored report (json)")->required();
  exp->add_option("--out", out_path, "output file")->required();
  exp->add_option("--format", out_format, "output format (csv|json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (exp->parsed()) {
      perhom::RateReport rep = perhom::report_from_json(load_json(in_path));
      perhom::export_report(rep, out_format, out_path);
      return 0;
    }
    perhom::ExperimentConfig cfg = apply_overrides(perhom::config_from_json(load_json(config_path)), ov);
    if (cell->parsed()) return cmd_cell(cfg);
    if (spectrum->parsed()) return cmd_spectrum(cfg);
    if (sweep->parsed() || verify->parsed()) return run_and_report(cfg);
    return 1;
  } catch (const perhom::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const perhom::InvariantViolation& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
}
