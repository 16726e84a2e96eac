#include "igs/experiments.hpp"

#include "igs/errors.hpp"
#include "igs/linalg.hpp"
#include "igs/parallel.hpp"
#include "igs/rng.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

namespace igs {

namespace {

namespace pt = boost::property_tree;

constexpr std::uint64_t kExpertStream = 0xe4;
constexpr std::uint64_t kDataStream = 0xda7a;
constexpr std::uint64_t kTrainStream = 0x7a1;
constexpr std::uint64_t kTestStream = 0x7e57;
constexpr std::uint64_t kSystemStream = 0x5e5;
constexpr std::uint64_t kBoundsStream = 0xb0d;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw PreconditionError("config: " + key + " expects a number, got '" + s + "'");
}

long long parse_integer(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw PreconditionError("config: " + key + " expects an integer, got '" + s + "'");
}

std::size_t parse_count(const std::string& key, const std::string& s) {
  const long long v = parse_integer(key, s);
  if (v <= 0) throw PreconditionError("config: " + key + " must be positive");
  return static_cast<std::size_t>(v);
}

std::uint64_t parse_seed(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used == s.size() && s.find('-') == std::string::npos) return v;
  } catch (const std::exception&) {
  }
  throw PreconditionError("config: " + key + " expects an unsigned seed, got '" + s + "'");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& key, const std::string& s, F parse_one) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) out.push_back(parse_one(key, item));
  if (out.empty()) throw PreconditionError("config: " + key + " must not be empty");
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto count = [](auto member) {
      return [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
        member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_count(k, v));
      };
    };
    auto number = [](auto member) {
      return [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
        member(c) = parse_double(k, v);
      };
    };
    auto doubles = [](auto member) {
      return [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
        member(c) = parse_list<double>(k, v, parse_double);
      };
    };
    auto counts = [](auto member) {
      return [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
        member(c) = parse_list<std::size_t>(k, v, parse_count);
      };
    };

    t["global.study"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.study = study_from_string(v);
    };
    t["global.seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.seed = parse_seed(k, v);
    };
    t["global.seeds"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.seeds = parse_list<std::uint64_t>(k, v, parse_seed);
    };
    t["global.trials"] = count([](ExperimentConfig& c) -> std::size_t& { return c.trials; });
    t["global.output"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.output = v;
    };
    t["global.scale"] = [](ExperimentConfig&, const std::string&, const std::string&) {};

    t["p_sweep.p"] = doubles([](ExperimentConfig& c) -> auto& { return c.p_sweep.p; });
    t["p_sweep.m"] = count([](ExperimentConfig& c) -> auto& { return c.p_sweep.m; });
    t["p_sweep.horizon"] = count([](ExperimentConfig& c) -> auto& { return c.p_sweep.horizon; });
    t["p_sweep.epochs"] = count([](ExperimentConfig& c) -> auto& { return c.p_sweep.epochs; });
    t["p_sweep.alpha"] = number([](ExperimentConfig& c) -> auto& { return c.p_sweep.alpha; });
    t["p_sweep.dim"] = count([](ExperimentConfig& c) -> auto& { return c.p_sweep.dim; });
    t["p_sweep.expert_hidden"] =
        count([](ExperimentConfig& c) -> auto& { return c.p_sweep.expert_hidden; });
    t["p_sweep.learner_hidden"] =
        count([](ExperimentConfig& c) -> auto& { return c.p_sweep.learner_hidden; });
    t["p_sweep.train_epochs"] =
        count([](ExperimentConfig& c) -> auto& { return c.p_sweep.train_epochs; });
    t["p_sweep.learning_rate"] =
        number([](ExperimentConfig& c) -> auto& { return c.p_sweep.learning_rate; });
    t["p_sweep.batch_size"] =
        count([](ExperimentConfig& c) -> auto& { return c.p_sweep.batch_size; });
    t["p_sweep.test_rollouts"] =
        count([](ExperimentConfig& c) -> auto& { return c.p_sweep.test_rollouts; });
    t["p_sweep.loss_mode"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "model_based")
        c.p_sweep.loss_mode = LossMode::kModelBased;
      else if (v == "model_free")
        c.p_sweep.loss_mode = LossMode::kModelFree;
      else
        throw PreconditionError("config: " + k + " must be model_based or model_free");
    };
    t["p_sweep.algorithms"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.p_sweep.algorithms = split_list(v);
      if (c.p_sweep.algorithms.empty()) throw PreconditionError("config: " + k + " is empty");
    };

    t["lq_stability.n"] = count([](ExperimentConfig& c) -> auto& { return c.lq.n; });
    t["lq_stability.d"] = count([](ExperimentConfig& c) -> auto& { return c.lq.d; });
    t["lq_stability.horizon"] = count([](ExperimentConfig& c) -> auto& { return c.lq.horizon; });
    t["lq_stability.open_loop_rho"] =
        number([](ExperimentConfig& c) -> auto& { return c.lq.open_loop_rho; });
    t["lq_stability.ic_std"] = number([](ExperimentConfig& c) -> auto& { return c.lq.ic_std; });
    t["lq_stability.nu"] = doubles([](ExperimentConfig& c) -> auto& { return c.lq.nu; });
    t["lq_stability.budgets"] = counts([](ExperimentConfig& c) -> auto& { return c.lq.budgets; });
    t["lq_stability.epochs"] = count([](ExperimentConfig& c) -> auto& { return c.lq.epochs; });
    t["lq_stability.alpha"] = number([](ExperimentConfig& c) -> auto& { return c.lq.alpha; });
    t["lq_stability.hidden"] = count([](ExperimentConfig& c) -> auto& { return c.lq.hidden; });
    t["lq_stability.train_epochs"] =
        count([](ExperimentConfig& c) -> auto& { return c.lq.train_epochs; });
    t["lq_stability.learning_rate"] =
        number([](ExperimentConfig& c) -> auto& { return c.lq.learning_rate; });
    t["lq_stability.batch_size"] =
        count([](ExperimentConfig& c) -> auto& { return c.lq.batch_size; });
    t["lq_stability.penalty_weight"] =
        number([](ExperimentConfig& c) -> auto& { return c.lq.penalty_weight; });
    t["lq_stability.certificate_eps"] =
        number([](ExperimentConfig& c) -> auto& { return c.lq.certificate_eps; });
    t["lq_stability.test_rollouts"] =
        count([](ExperimentConfig& c) -> auto& { return c.lq.test_rollouts; });

    t["bounds_demo.p"] = number([](ExperimentConfig& c) -> auto& { return c.bounds.p; });
    t["bounds_demo.eta"] = number([](ExperimentConfig& c) -> auto& { return c.bounds.eta; });
    t["bounds_demo.horizons"] =
        counts([](ExperimentConfig& c) -> auto& { return c.bounds.horizons; });
    t["bounds_demo.magnitudes"] =
        doubles([](ExperimentConfig& c) -> auto& { return c.bounds.magnitudes; });
    t["bounds_demo.cases"] = count([](ExperimentConfig& c) -> auto& { return c.bounds.cases; });
    t["bounds_demo.ic_radius"] =
        number([](ExperimentConfig& c) -> auto& { return c.bounds.ic_radius; });
    return t;
  }();
  return table;
}

void apply_full_scale(ExperimentConfig& c) {
  c.full_scale = true;
  c.p_sweep.m = 250;
  c.p_sweep.horizon = 100;
  c.p_sweep.test_rollouts = 500;
  c.p_sweep.learner_hidden = 64;
  c.lq.hidden = 64;
}

ExperimentConfig config_from_tree(pt::ptree tree, const std::vector<std::string>& overrides) {
  bool seed_overridden = false;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos)
      throw PreconditionError("override '" + o + "' is not of the form section.key=value");
    const std::string key = trim(o.substr(0, eq));
    if (key.find('.') == std::string::npos)
      throw PreconditionError("override '" + o + "' needs a section prefix");
    if (key == "global.seed") seed_overridden = true;
    tree.put(key, trim(o.substr(eq + 1)));
  }
  if (const char* env = std::getenv("IGS_SEED"); env && !seed_overridden) {
    tree.put("global.seed", std::string(env));
    std::cerr << "IGS_SEED=" << env << " overrides the configured seed\n";
  }

  ExperimentConfig cfg;
  const std::string scale = tree.get<std::string>("global.scale", "desk");
  if (scale == "full")
    apply_full_scale(cfg);
  else if (scale != "desk")
    throw PreconditionError("config: global.scale must be desk or full");

  const auto& table = setters();
  for (const auto& [section, body] : tree) {
    if (body.empty())
      throw PreconditionError("config: key '" + section + "' is outside a section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = table.find(full);
      if (it == table.end()) throw PreconditionError("config: unknown key " + full);
      it->second(cfg, full, trim(value.get_value<std::string>()));
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<Vector> sample_ics(std::uint64_t seed, std::size_t n, Eigen::Index dim,
                               double stddev) {
  Rng rng = make_rng(seed);
  std::vector<Vector> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gaussian_vector(rng, dim, stddev));
  return out;
}

// Rollout that keeps the last finite state on divergence.
Trajectory scored_rollout(const DynamicsSystem& system, const Policy& policy, const Vector& xi,
                          std::size_t horizon, bool& diverged) {
  try {
    diverged = false;
    return rollout_closed(system, policy, xi, horizon);
  } catch (const RolloutDivergence& e) {
    diverged = true;
    return e.partial();
  }
}

template <typename Task>
std::vector<ResultRecord> run_tasks(std::size_t n, Task task) {
  std::vector<std::vector<ResultRecord>> parts(n);
  parallel_for(n, [&](std::size_t i) { parts[i] = task(i); });
  std::vector<ResultRecord> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

std::string to_string(Study s) {
  switch (s) {
    case Study::kPSweep:
      return "p_sweep";
    case Study::kLqStability:
      return "lq_stability";
    case Study::kBoundsDemo:
      return "bounds_demo";
  }
  return "unknown";
}

Study study_from_string(const std::string& s) {
  if (s == "p_sweep") return Study::kPSweep;
  if (s == "lq_stability") return Study::kLqStability;
  if (s == "bounds_demo") return Study::kBoundsDemo;
  throw PreconditionError("unknown study '" + s + "' (p_sweep, lq_stability, bounds_demo)");
}

std::vector<std::uint64_t> ExperimentConfig::trial_seeds() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < trials; ++i) out.push_back(seed + i);
  return out;
}

void ExperimentConfig::validate() const {
  if (trials == 0) throw PreconditionError("trials must be positive");
  const auto& ps = p_sweep;
  if (ps.p.empty()) throw PreconditionError("p_sweep.p is empty");
  for (double p : ps.p)
    if (!(p > 0.0)) throw PreconditionError("p_sweep.p entries must be positive");
  if (ps.m == 0 || ps.horizon == 0 || ps.epochs <= 0 || ps.test_rollouts == 0 ||
      ps.batch_size == 0 || ps.dim <= 0 || ps.expert_hidden <= 0 || ps.learner_hidden <= 0)
    throw PreconditionError("p_sweep counts must be positive");
  if (ps.m % static_cast<std::size_t>(ps.epochs) != 0)
    throw PreconditionError("p_sweep.epochs must divide p_sweep.m");
  if (!(ps.alpha > 0.0 && ps.alpha <= 1.0)) throw PreconditionError("p_sweep.alpha in (0, 1]");
  for (const auto& a : ps.algorithms)
    if (a != "bc" && a != "cmile" && a != "cmile_agg" && a != "dagger")
      throw PreconditionError("p_sweep.algorithms: unknown algorithm " + a);

  if (lq.n <= 0 || lq.d <= 0 || lq.horizon == 0 || lq.epochs <= 0 || lq.hidden <= 0 ||
      lq.test_rollouts == 0 || lq.batch_size == 0 || lq.budgets.empty() || lq.nu.empty())
    throw PreconditionError("lq_stability counts must be positive");
  for (std::size_t b : lq.budgets)
    if (b % static_cast<std::size_t>(lq.epochs) != 0)
      throw PreconditionError("lq_stability.epochs must divide every budget");
  for (double nu : lq.nu)
    if (!(nu > 0.0)) throw PreconditionError("lq_stability.nu entries must be positive");
  if (!(lq.open_loop_rho > 1.0))
    throw PreconditionError("lq_stability.open_loop_rho must exceed 1");
  if (!(lq.penalty_weight >= 0.0) || !(lq.certificate_eps > 0.0) || !(lq.ic_std > 0.0))
    throw PreconditionError("lq_stability: invalid penalty, eps or ic_std");

  if (bounds.horizons.empty() || bounds.magnitudes.empty() || bounds.cases == 0)
    throw PreconditionError("bounds_demo grids must be non-empty");
  for (double m : bounds.magnitudes)
    if (!(m >= 0.0)) throw PreconditionError("bounds_demo.magnitudes must be nonnegative");
}

ExperimentConfig parse_experiment_config(std::istream& in,
                                         const std::vector<std::string>& overrides) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw PreconditionError(std::string("config: ") + e.what());
  }
  return config_from_tree(std::move(tree), overrides);
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
  if (path.empty()) {
    std::istringstream empty;
    return parse_experiment_config(empty, overrides);
  }
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open config " + path);
  return parse_experiment_config(in, overrides);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw PreconditionError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

ResultRecord summarize(std::string study, std::uint64_t seed, std::string algorithm,
                       std::string param, std::string metric, const std::vector<double>& values) {
  ResultRecord r;
  r.study = std::move(study);
  r.seed = seed;
  r.algorithm = std::move(algorithm);
  r.param = std::move(param);
  r.metric = std::move(metric);
  r.median = percentile(values, 0.5);
  r.p20 = percentile(values, 0.2);
  r.p80 = percentile(values, 0.8);
  return r;
}

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

void write_results_csv(std::ostream& out, const std::vector<ResultRecord>& records) {
  out << "study,seed,algorithm,param,metric,median,p20,p80\n";
  for (const auto& r : records)
    out << r.study << ',' << r.seed << ',' << r.algorithm << ',' << r.param << ',' << r.metric
        << ',' << format_number(r.median) << ',' << format_number(r.p20) << ','
        << format_number(r.p80) << '\n';
}

// ---------------------------------------------------------------------------

PSystemSpec p_sweep_system(const PSweepConfig& cfg, double p, std::uint64_t seed) {
  PSystemSpec spec;
  spec.p = p;
  spec.variant = PSystemVariant::kExperiment;
  spec.dim = cfg.dim;
  spec.h = std::make_shared<const MlpPolicy>(random_mlp(cfg.dim, cfg.expert_hidden, cfg.dim,
                                                        Activation::kTanh,
                                                        derive_seed(seed, kExpertStream)));
  return spec;
}

CMILeConfig p_sweep_learning_config(const PSweepConfig& ps, SystemPtr system, PolicyPtr expert,
                                    std::uint64_t seed) {
  CMILeConfig base;
  base.trajectories = ps.m;
  base.epochs = ps.epochs;
  base.alpha = ps.alpha;
  base.horizon = ps.horizon;
  base.expert = std::move(expert);
  base.system = std::move(system);
  const Eigen::Index dim = ps.dim;
  base.ic_sampler = [dim](Rng& rng) { return gaussian_vector(rng, dim); };
  base.seed = derive_seed(seed, kDataStream);
  base.train.epochs = ps.train_epochs;
  base.train.learning_rate = ps.learning_rate;
  base.train.batch_size = ps.batch_size;
  base.train.seed = derive_seed(seed, kTrainStream);
  base.train.loss_mode = ps.loss_mode;
  base.train.hidden = ps.learner_hidden;
  base.train.activation = Activation::kTanh;
  return base;
}

LearnResult run_algorithm(const std::string& name, const CMILeConfig& cfg, const Learner& learner) {
  if (name == "bc") return behavior_cloning(cfg, learner);
  if (name == "cmile") return cmile(cfg, learner);
  if (name == "cmile_agg") return cmile_agg(cfg, learner);
  if (name == "dagger") return dagger(cfg, learner);
  throw PreconditionError("unknown algorithm " + name);
}

std::vector<ResultRecord> run_p_sweep(const ExperimentConfig& cfg, const Learner& learner) {
  cfg.validate();
  const PSweepConfig& ps = cfg.p_sweep;
  const auto seeds = cfg.trial_seeds();
  return run_tasks(ps.p.size() * seeds.size(), [&](std::size_t task) {
    const double p = ps.p[task / seeds.size()];
    const std::uint64_t seed = seeds[task % seeds.size()];
    const PSystemSpec spec = p_sweep_system(ps, p, seed);
    const auto system = make_p_system(spec);
    const PolicyPtr expert = p_system_expert(spec);

    const CMILeConfig base = p_sweep_learning_config(ps, system, expert, seed);
    const Eigen::Index dim = ps.dim;

    const auto ics = sample_ics(derive_seed(seed, kTestStream), ps.test_rollouts, dim, 1.0);
    std::vector<Vector> expert_final(ics.size());
    for (std::size_t i = 0; i < ics.size(); ++i)
      expert_final[i] = rollout_closed(*system, *expert, ics[i], ps.horizon).states.back();

    const std::string param = format_number(p);
    std::vector<ResultRecord> out;
    for (const auto& alg : ps.algorithms) {
      const PolicyPtr policy = run_algorithm(alg, base, learner).policy;
      std::vector<double> deviation(ics.size()), loss(ics.size());
      std::vector<char> diverged(ics.size(), 0);
      parallel_for(ics.size(), [&](std::size_t i) {
        bool div = false;
        const Trajectory t = scored_rollout(*system, *policy, ics[i], ps.horizon, div);
        diverged[i] = div;
        deviation[i] = (expert_final[i] - t.states.back()).norm();
        loss[i] = imitation_loss(*system, t, *policy, *expert, LossMode::kModelBased) /
                  static_cast<double>(ps.horizon);
      });
      const double frac = static_cast<double>(std::count(diverged.begin(), diverged.end(), 1)) /
                          static_cast<double>(ics.size());
      out.push_back(summarize("p_sweep", seed, alg, param, "goal_deviation", deviation));
      out.push_back(summarize("p_sweep", seed, alg, param, "avg_imitation_loss", loss));
      out.push_back(summarize("p_sweep", seed, alg, param, "divergent_fraction", {frac}));
    }
    return out;
  });
}

// ---------------------------------------------------------------------------

LqInstance make_lq_instance(const LqStabilityConfig& cfg, double nu, std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, kSystemStream));
  LqInstance inst;
  double rho = 0.0;
  do {
    inst.A = gaussian_matrix(rng, cfg.n, cfg.n, 1.0 / std::sqrt(static_cast<double>(cfg.n)));
    rho = linalg::spectral_radius(inst.A);
  } while (!(rho > 0.0));
  inst.A *= cfg.open_loop_rho / rho;
  inst.B = gaussian_matrix(rng, cfg.n, cfg.d, 1.0 / std::sqrt(static_cast<double>(cfg.n)));
  const Matrix Q = nu * Matrix::Identity(cfg.n, cfg.n);
  const Matrix R = Matrix::Identity(cfg.d, cfg.d);
  try {
    inst.p_star = linalg::solve_dare(inst.A, inst.B, Q, R);
    inst.K = linalg::lqr_gain(inst.A, inst.B, Q, R);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(std::string(e.what()) + " (system seed " + std::to_string(seed) + ")");
  }
  const Matrix closed = inst.A + inst.B * inst.K;
  const double rho_cl = linalg::spectral_radius(closed);
  const double gamma = std::sqrt(0.5 * (1.0 + rho_cl * rho_cl));
  inst.certificate = build_robust_lqr_certificate(closed, inst.p_star, gamma, cfg.certificate_eps);
  return inst;
}

std::vector<Vector> lq_test_initial_conditions(const LqStabilityConfig& cfg, std::uint64_t seed) {
  return sample_ics(derive_seed(seed, kTestStream), cfg.test_rollouts, cfg.n, cfg.ic_std);
}

std::vector<ResultRecord> run_lq_stability(const ExperimentConfig& cfg, const Learner& learner) {
  cfg.validate();
  const LqStabilityConfig& lq = cfg.lq;
  const auto seeds = cfg.trial_seeds();
  const std::size_t per_nu = lq.budgets.size() * seeds.size();
  return run_tasks(lq.nu.size() * per_nu, [&](std::size_t task) {
    const double nu = lq.nu[task / per_nu];
    const std::size_t b_index = (task % per_nu) / seeds.size();
    const std::size_t budget = lq.budgets[b_index];
    const std::uint64_t seed = seeds[task % seeds.size()];

    const LqInstance inst = make_lq_instance(lq, nu, seed);
    const auto system = make_lti(inst.A, inst.B);
    const PolicyPtr expert = std::make_shared<const LinearPolicy>(inst.K);
    const auto ics = lq_test_initial_conditions(lq, seed);

    const std::string nu_param = "nu=" + format_number(nu);
    auto goal_errors = [&](const Policy& policy, double& diverged_fraction) {
      std::vector<double> err(ics.size());
      std::vector<char> diverged(ics.size(), 0);
      parallel_for(ics.size(), [&](std::size_t i) {
        bool div = false;
        err[i] = scored_rollout(*system, policy, ics[i], lq.horizon, div).states.back().norm();
        diverged[i] = div;
      });
      diverged_fraction = static_cast<double>(std::count(diverged.begin(), diverged.end(), 1)) /
                          static_cast<double>(ics.size());
      return err;
    };

    std::vector<ResultRecord> out;
    if (b_index == 0) {
      double frac = 0.0;
      out.push_back(
          summarize("lq_stability", seed, "expert", nu_param, "goal_error", goal_errors(*expert, frac)));
    }

    CMILeConfig base;
    base.trajectories = budget;
    base.epochs = lq.epochs;
    base.alpha = lq.alpha;
    base.horizon = lq.horizon;
    base.expert = expert;
    base.system = system;
    const Eigen::Index n = lq.n;
    const double std_dev = lq.ic_std;
    base.ic_sampler = [n, std_dev](Rng& rng) { return gaussian_vector(rng, n, std_dev); };
    base.seed = derive_seed(seed, kDataStream, budget);
    base.train.epochs = lq.train_epochs;
    base.train.learning_rate = lq.learning_rate;
    base.train.batch_size = lq.batch_size;
    base.train.seed = derive_seed(seed, kTrainStream, budget);
    base.train.hidden = lq.hidden;
    base.train.activation = Activation::kRelu;

    const std::string param = nu_param + ";m=" + std::to_string(budget);
    for (int penalized = 0; penalized < 2; ++penalized) {
      CMILeConfig run = base;
      if (penalized) run.train.stability_penalty = StabilityPenalty{inst.certificate, lq.penalty_weight};
      const std::string alg = penalized ? "cmile_lyap" : "cmile";
      const PolicyPtr policy = cmile(run, learner).policy;
      double frac = 0.0;
      const auto err = goal_errors(*policy, frac);
      out.push_back(summarize("lq_stability", seed, alg, param, "goal_error", err));
      out.push_back(summarize("lq_stability", seed, alg, param, "divergent_fraction", {frac}));
    }
    return out;
  });
}

// ---------------------------------------------------------------------------

BoundsInstance prop6_bounds_instance(double p, double eta) {
  PSystemSpec spec;
  spec.p = p;
  spec.eta = eta;
  spec.variant = PSystemVariant::kProp6;
  BoundsInstance inst;
  inst.name = "prop6";
  inst.system = make_p_system(spec);
  inst.psi = p_system_igs_params(p, eta);
  inst.lipschitz = 1.0;
  inst.bound = eta;
  inst.gain = eta;
  return inst;
}

BoundsInstance contracting_bounds_instance() {
  BoundsInstance inst;
  inst.name = "contracting";
  inst.system = make_lti(Matrix::Constant(1, 1, 0.5), Matrix::Identity(1, 1));
  inst.psi = IgsParams{1, 1, 1, 1, 1, 2, 2};
  inst.lipschitz = 0.5;
  inst.bound = 1.0;
  inst.gain = 1.0;
  return inst;
}

InputBoundCase evaluate_input_case(const BoundsInstance& inst, const Vector& xi,
                                   const std::vector<Vector>& inputs) {
  const std::size_t T = inputs.size();
  const Trajectory driven = rollout_open(*inst.system, xi, inputs);
  const Trajectory free = rollout_open(
      *inst.system, xi, std::vector<Vector>(T, Vector::Zero(inst.system->input_dim())));
  double input_sum = 0.0;
  for (const auto& u : inputs) input_sum += u.norm();
  InputBoundCase c;
  c.measured = discrepancy_sum(driven, free);
  c.gronwall = gronwall_bound(inst.lipschitz, inst.bound, T, inst.gain * input_sum);
  c.igs = disc_bound_inputs(inst.psi, T, input_sum);
  return c;
}

IcBoundCase evaluate_ic_case(const BoundsInstance& inst, const Vector& xi1, const Vector& xi2,
                             std::size_t horizon) {
  const std::vector<Vector> zeros(horizon, Vector::Zero(inst.system->input_dim()));
  IcBoundCase c;
  c.measured = discrepancy_sum(rollout_open(*inst.system, xi1, zeros),
                               rollout_open(*inst.system, xi2, zeros));
  c.bound = disc_bound_ics(inst.psi, horizon, (xi1 - xi2).norm()).summed;
  return c;
}

std::vector<ResultRecord> run_bounds_demo(const ExperimentConfig& cfg) {
  cfg.validate();
  const BoundsDemoConfig& bd = cfg.bounds;
  const BoundsInstance prop6 = prop6_bounds_instance(bd.p, bd.eta);
  const BoundsInstance contracting = contracting_bounds_instance();
  const auto seeds = cfg.trial_seeds();
  const std::size_t grid = bd.horizons.size() * bd.magnitudes.size();
  return run_tasks(grid * seeds.size(), [&](std::size_t task) {
    const std::size_t point = task / seeds.size();
    const std::size_t T = bd.horizons[point / bd.magnitudes.size()];
    const double mag = bd.magnitudes[point % bd.magnitudes.size()];
    const std::uint64_t seed = seeds[task % seeds.size()];
    Rng rng = make_rng(derive_seed(seed, kBoundsStream, point));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    std::map<std::string, std::vector<double>> series;
    for (std::size_t c = 0; c < bd.cases; ++c) {
      const Vector xi = Vector::Constant(1, bd.ic_radius * unit(rng));
      std::vector<Vector> inputs(T);
      for (auto& u : inputs) u = Vector::Constant(1, mag * unit(rng));
      const Vector xi2 = xi + Vector::Constant(1, mag * unit(rng));
      for (const BoundsInstance* inst : {&prop6, &contracting}) {
        const InputBoundCase in = evaluate_input_case(*inst, xi, inputs);
        series[inst->name + ":measured"].push_back(in.measured);
        series[inst->name + ":gronwall"].push_back(in.gronwall);
        series[inst->name + ":igs"].push_back(in.igs);
        const IcBoundCase ic = evaluate_ic_case(*inst, xi, xi2, T);
        series[inst->name + ":ic_measured"].push_back(ic.measured);
        series[inst->name + ":ic_bound"].push_back(ic.bound);
      }
    }
    const std::string param = "T=" + std::to_string(T) + ";mag=" + format_number(mag);
    std::vector<ResultRecord> out;
    for (const auto& [name, values] : series)
      out.push_back(summarize("bounds_demo", seed, name, param, "disc", values));
    return out;
  });
}

std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.study) {
    case Study::kPSweep:
      return run_p_sweep(cfg);
    case Study::kLqStability:
      return run_lq_stability(cfg);
    case Study::kBoundsDemo:
      return run_bounds_demo(cfg);
  }
  throw PreconditionError("unknown study");
}

}  // namespace igs
