#include "cli.hpp"

#include "igs/dynamics.hpp"
#include "igs/errors.hpp"
#include "igs/experiments.hpp"
#include "igs/learning.hpp"
#include "igs/linalg.hpp"
#include "igs/stability.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

namespace igs::cli {

namespace {

using nlohmann::json;

json psi_json(const IgsParams& p) {
  return {{"a", p.a},   {"a0", p.a0},       {"a1", p.a1},      {"b0", p.b0},
          {"b1", p.b1}, {"zeta", p.zeta}, {"gamma", p.gamma}};
}

Vector parse_vector(const std::string& s) {
  std::vector<double> values;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      values.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw PreconditionError("cannot parse '" + cell + "' as a number");
    }
  }
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

PolicyPtr read_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open policy " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw PreconditionError("policy " + path + ": " + e.what());
  }
  return policy_from_json(j);
}

// Writes to the file when a path is given, otherwise to `out`.
template <typename Writer>
void emit(const std::string& path, std::ostream& out, Writer write) {
  if (path.empty()) {
    write(out);
    return;
  }
  std::ofstream file(path);
  if (!file) throw PreconditionError("cannot write " + path);
  write(file);
}

struct SimulateArgs {
  std::string system = "prop6";
  double p = 1.0;
  double eta = 0.5;
  Eigen::Index dim = 1;
  Eigen::Index hidden = 32;
  std::size_t horizon = 50;
  std::string ic;
  std::uint64_t seed = 0;
  std::string policy;
  std::string a_path;
  std::string b_path;
  std::string out;
};

int run_simulate(const SimulateArgs& a, std::ostream& out) {
  SystemPtr system;
  PolicyPtr policy;
  if (a.system == "prop6" || a.system == "experiment") {
    PSystemSpec spec;
    if (a.system == "experiment") {
      PSweepConfig ps;
      ps.dim = a.dim;
      ps.expert_hidden = a.hidden;
      spec = p_sweep_system(ps, a.p, a.seed);
    } else {
      spec.p = a.p;
      spec.eta = a.eta;
      spec.dim = a.dim;
    }
    system = make_p_system(spec);
    policy = p_system_expert(spec);
  } else if (a.system == "lti") {
    if (a.a_path.empty() || a.b_path.empty())
      throw PreconditionError("simulate --system lti needs --A and --B");
    const Matrix A = linalg::read_matrix_csv_file(a.a_path);
    const Matrix B = linalg::read_matrix_csv_file(a.b_path);
    system = make_lti(A, B);
    policy = std::make_shared<const LinearPolicy>(Matrix::Zero(B.cols(), A.rows()));
  } else {
    throw PreconditionError("unknown system " + a.system + " (prop6, experiment, lti)");
  }
  if (!a.policy.empty()) policy = read_policy(a.policy);

  Vector xi;
  if (a.ic.empty()) {
    Rng rng = make_rng(a.seed);
    xi = gaussian_vector(rng, system->state_dim());
  } else {
    xi = parse_vector(a.ic);
  }
  const Trajectory t = rollout_closed(*system, *policy, xi, a.horizon);
  emit(a.out, out, [&](std::ostream& o) { write_trajectory_csv(o, t); });
  return kExitOk;
}

struct CertifyArgs {
  double p = 1.0;
  double eta = 0.5;
  std::size_t samples = 10000;
  std::size_t horizon = 200;
  std::uint64_t seed = 0;
  std::optional<double> zeta;
  std::optional<double> gamma;
};

int run_certify(const CertifyArgs& a, std::ostream& out) {
  PSystemSpec spec;
  spec.p = a.p;
  spec.eta = a.eta;
  const auto system = make_p_system(spec);
  IgsParams psi = p_system_igs_params(a.p, a.eta);
  if (a.zeta) psi.zeta = *a.zeta;
  if (a.gamma) psi.gamma = *a.gamma;
  const IncLyapunov cert = p_system_lyapunov(a.p, a.eta);

  const DecrementSampler dec_sampler = [](Rng& rng) {
    return DecrementSample{uniform_vector(rng, 1, -10, 10), uniform_vector(rng, 1, -10, 10),
                           uniform_vector(rng, 1, -10, 10)};
  };
  const std::size_t max_horizon = a.horizon;
  const IgsCaseSampler igs_sampler = [max_horizon](Rng& rng) {
    std::uniform_int_distribution<std::size_t> len(1, max_horizon);
    IgsCase c;
    c.xi1 = uniform_vector(rng, 1, -5, 5);
    c.xi2 = uniform_vector(rng, 1, -5, 5);
    c.inputs.resize(len(rng));
    for (auto& u : c.inputs) u = uniform_vector(rng, 1, -1, 1);
    return c;
  };
  const auto lyap = check_lyapunov_decrement(cert, *system, dec_sampler, a.samples, a.seed);
  const auto igs = check_igs_on_trajectories(psi, *system, igs_sampler, a.samples, a.seed);
  const bool ok = lyap.violations == 0 && igs.violations == 0;
  out << json{{"system", system->name()},
              {"psi", psi_json(psi)},
              {"lyapunov_decrement", lyap.to_json()},
              {"igs_trajectories", igs.to_json()},
              {"holds", ok}}
             .dump(2)
      << '\n';
  return ok ? kExitOk : kExitViolation;
}

struct BoundsArgs {
  double p = 1.0;
  double eta = 0.5;
  std::size_t horizon = 100;
  double loss = 1.0;
  double ic_gap = 0.0;
  std::optional<double> lipschitz;
  std::optional<double> bound;
};

int run_bounds(const BoundsArgs& a, std::ostream& out) {
  const BoundsInstance inst = prop6_bounds_instance(a.p, a.eta);
  const double L = a.lipschitz.value_or(inst.lipschitz);
  const double B = a.bound.value_or(inst.bound);
  const IcBound ic = disc_bound_ics(inst.psi, a.horizon, a.ic_gap);
  json j{{"psi", psi_json(inst.psi)},
         {"horizon", a.horizon},
         {"input_sum", a.loss},
         {"disc_bound_inputs", disc_bound_inputs(inst.psi, a.horizon, a.loss)},
         {"disc_bound_ics", {{"per_step", ic.per_step}, {"summed", ic.summed}}}};
  if (L * (1.0 + 2.0 * B) > 1.0)
    j["gronwall_bound"] = gronwall_bound(L, B, a.horizon, inst.gain * a.loss);
  else
    j["gronwall_bound"] = nullptr;
  out << j.dump(2) << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string algorithm = "cmile";
  std::string config;
  std::vector<std::string> overrides;
  double p = 1.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string checkpoint_dir;
};

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = load_experiment_config(a.config, a.overrides);
  const PSystemSpec spec = p_sweep_system(cfg.p_sweep, a.p, a.seed);
  CMILeConfig learn =
      p_sweep_learning_config(cfg.p_sweep, make_p_system(spec), p_system_expert(spec), a.seed);
  learn.checkpoint_dir = a.checkpoint_dir;
  if (!a.checkpoint_dir.empty()) std::filesystem::create_directories(a.checkpoint_dir);
  const LearnResult res = run_algorithm(a.algorithm, learn);
  write_audit_csv(err, res.records);
  emit(a.out, out, [&](std::ostream& o) { o << res.policy->to_json().dump() << '\n'; });
  return kExitOk;
}

struct ExperimentArgs {
  std::string study;
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> m;
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Largest divisor of m that does not exceed e.
std::size_t fitting_epochs(std::size_t m, std::size_t e) {
  for (std::size_t k = std::min(m, e); k > 1; --k)
    if (m % k == 0) return k;
  return 1;
}

int run_experiment_command(const ExperimentArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<std::string> overrides{"global.study=" + a.study};
  overrides.insert(overrides.end(), a.overrides.begin(), a.overrides.end());
  if (a.trials) overrides.push_back("global.trials=" + std::to_string(*a.trials));
  if (a.seed) overrides.push_back("global.seed=" + std::to_string(*a.seed));
  ExperimentConfig cfg = load_experiment_config(a.config, overrides);
  if (a.m) {
    if (cfg.study == Study::kLqStability) {
      cfg.lq.budgets = {*a.m};
      const std::size_t e = fitting_epochs(*a.m, static_cast<std::size_t>(cfg.lq.epochs));
      if (e != static_cast<std::size_t>(cfg.lq.epochs))
        err << "epochs lowered to " << e << " so that they divide m = " << *a.m << '\n';
      cfg.lq.epochs = static_cast<int>(e);
    } else {
      cfg.p_sweep.m = *a.m;
      const std::size_t e = fitting_epochs(*a.m, static_cast<std::size_t>(cfg.p_sweep.epochs));
      if (e != static_cast<std::size_t>(cfg.p_sweep.epochs))
        err << "epochs lowered to " << e << " so that they divide m = " << *a.m << '\n';
      cfg.p_sweep.epochs = static_cast<int>(e);
    }
  }
  const std::string path = a.out.empty() ? cfg.output : a.out;
  const auto records = run_experiment(cfg);
  emit(path == "-" ? "" : path, out, [&](std::ostream& o) { write_results_csv(o, records); });
  if (path != "-") err << "wrote " << records.size() << " records to " << path << '\n';
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Incremental gain stability tools and imitation learning experiments", "igs"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Roll out a closed loop and print the trajectory CSV");
  simulate->add_option("--system", sim.system, "prop6, experiment or lti");
  simulate->add_option("--p", sim.p);
  simulate->add_option("--eta", sim.eta);
  simulate->add_option("--dim", sim.dim);
  simulate->add_option("--hidden", sim.hidden, "width of h for the experiment system");
  simulate->add_option("--horizon", sim.horizon);
  simulate->add_option("--ic", sim.ic, "comma separated initial condition");
  simulate->add_option("--seed", sim.seed);
  simulate->add_option("--policy", sim.policy, "policy JSON; defaults to the expert");
  simulate->add_option("--A", sim.a_path, "matrix CSV");
  simulate->add_option("--B", sim.b_path, "matrix CSV");
  simulate->add_option("--out", sim.out);

  CertifyArgs cert;
  auto* certify = app.add_subcommand("certify", "Falsification checks for the scalar p-system");
  certify->add_option("--p", cert.p);
  certify->add_option("--eta", cert.eta);
  certify->add_option("--samples", cert.samples);
  certify->add_option("--horizon", cert.horizon, "longest sampled horizon");
  certify->add_option("--seed", cert.seed);
  certify->add_option("--zeta", cert.zeta, "replace zeta of Psi");
  certify->add_option("--gamma", cert.gamma, "replace gamma of Psi");

  BoundsArgs bnd;
  auto* bounds = app.add_subcommand("bounds", "Closed-form discrepancy bounds for the p-system");
  bounds->add_option("--p", bnd.p);
  bounds->add_option("--eta", bnd.eta);
  bounds->add_option("--horizon", bnd.horizon);
  bounds->add_option("--loss", bnd.loss, "sum of input norms");
  bounds->add_option("--ic-gap", bnd.ic_gap);
  bounds->add_option("--lipschitz", bnd.lipschitz);
  bounds->add_option("--bound", bnd.bound);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train one learner on the experiment p-system");
  train->add_option("--algorithm", tr.algorithm, "bc, cmile, cmile_agg or dagger");
  train->add_option("--config", tr.config);
  train->add_option("--p", tr.p);
  train->add_option("--seed", tr.seed);
  train->add_option("--out", tr.out, "policy JSON");
  train->add_option("--checkpoint-dir", tr.checkpoint_dir);
  train->add_option("overrides", tr.overrides, "section.key=value");

  ExperimentArgs ex;
  auto* experiment = app.add_subcommand("experiment", "Run a study and write the results CSV");
  experiment->add_option("study", ex.study, "p_sweep, lq_stability or bounds_demo")->required();
  experiment->add_option("overrides", ex.overrides, "section.key=value");
  experiment->add_option("--config", ex.config);
  experiment->add_option("--trials", ex.trials);
  experiment->add_option("--m", ex.m, "trajectory budget");
  experiment->add_option("--seed", ex.seed);
  experiment->add_option("--out", ex.out, "CSV path, - for stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*simulate) return run_simulate(sim, out);
    if (*certify) return run_certify(cert, out);
    if (*bounds) return run_bounds(bnd, out);
    if (*train) return run_train(tr, out, err);
    if (*experiment) return run_experiment_command(ex, out, err);
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitPrecondition;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace igs::cli
