// Command-line surface: simulate, decompose, replicate, oracle-check.
// Every run writes its resolved configuration next to the outputs so the run
// can be reproduced with --config.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "vardecomp/dataset.hpp"
#include "vardecomp/decompose.hpp"
#include "vardecomp/errors.hpp"
#include "vardecomp/oracle.hpp"
#include "vardecomp/serialize.hpp"
#include "vardecomp/simulation.hpp"
#include "vardecomp/svg.hpp"
#include "vardecomp/uncertainty.hpp"

namespace vd = vardecomp;

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// JSON configuration reader for CLI11: {"command": {"option": value, ...}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json doc;
    try {
      input >> doc;
    } catch (const nlohmann::json::exception& err) {
      throw CLI::FileError(std::string("config JSON parse failure: ") + err.what());
    }
    std::vector<CLI::ConfigItem> items;
    walk(doc, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
    if (v.is_number_float()) return fmt17(v.get<double>());
    throw CLI::FileError("unsupported config value type");
  }

  static void walk(const nlohmann::json& node, std::vector<std::string> parents,
                   std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : node.items()) {
      if (value.is_object()) {
        auto deeper = parents;
        deeper.push_back(key);
        walk(value, deeper, items);
      } else {
        CLI::ConfigItem item;
        item.parents = parents;
        item.name = key;
        if (value.is_array()) {
          for (const auto& entry : value) item.inputs.push_back(scalar(entry));
        } else {
          item.inputs.push_back(scalar(value));
        }
        items.push_back(std::move(item));
      }
    }
  }
};

void apply_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  vd::SimConfig cfg;
  bool binary = true;
  long truth_mc = 200000;
  int threads = 0;
  std::string out = "sim";
};

void add_sim_options(CLI::App* cmd, SimulateArgs& args) {
  cmd->add_option("--n", args.cfg.n, "patients");
  cmd->add_option("--m", args.cfg.m, "hospitals");
  cmd->add_option("--q", args.cfg.q, "total surgeons (split evenly)");
  cmd->add_option("--seed", args.cfg.seed, "rng seed")->envname("VARDECOMP_SEED");
  cmd->add_flag("--binary,!--continuous", args.binary, "outcome kind (default binary)");
  cmd->add_option("--hospital-sd", args.cfg.hospital_effect_sd, "sd of hospital effects");
  cmd->add_option("--surgeon-sd", args.cfg.surgeon_effect_sd, "sd of surgeon effects");
  cmd->add_option("--assign-intercept-sd", args.cfg.assign_intercept_sd,
                  "sd of assignment intercepts");
  cmd->add_option("--assign-coef-sd", args.cfg.assign_coef_sd, "sd of assignment slopes");
  cmd->add_option("--beta1", args.cfg.beta[0], "fixed effect of x1");
  cmd->add_option("--beta2", args.cfg.beta[1], "fixed effect of x2");
  cmd->add_option("--truth-mc", args.truth_mc, "Monte Carlo draws for the truth");
  cmd->add_option("--threads", args.threads, "worker threads (0 = all)");
  cmd->add_option("--out", args.out, "output prefix");
}

nlohmann::ordered_json sim_config_json(const SimulateArgs& args) {
  nlohmann::ordered_json c;
  c["n"] = args.cfg.n;
  c["m"] = args.cfg.m;
  c["q"] = args.cfg.q;
  c["seed"] = args.cfg.seed;
  c["binary"] = args.binary;
  c["hospital-sd"] = args.cfg.hospital_effect_sd;
  c["surgeon-sd"] = args.cfg.surgeon_effect_sd;
  c["assign-intercept-sd"] = args.cfg.assign_intercept_sd;
  c["assign-coef-sd"] = args.cfg.assign_coef_sd;
  c["beta1"] = args.cfg.beta[0];
  c["beta2"] = args.cfg.beta[1];
  c["truth-mc"] = args.truth_mc;
  c["threads"] = args.threads;
  c["out"] = args.out;
  return c;
}

int run_simulate(SimulateArgs& args) {
  args.cfg.outcome_kind = args.binary ? vd::OutcomeKind::binary : vd::OutcomeKind::continuous;
  try {
    args.cfg.validate();
  } catch (const vd::DataError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 2;
  }
  apply_threads(args.threads);
  auto [data, mech] = vd::generate_population(args.cfg);
  vd::write_dataset(args.out + "_data.csv", data);
  const vd::TruthComponents truth =
      vd::true_components(mech, args.truth_mc, args.cfg.seed ^ 0x5eedULL);
  vd::write_text_file(args.out + "_truth.json", vd::dump_json17(vd::json_of(truth)));
  nlohmann::ordered_json config;
  config["simulate"] = sim_config_json(args);
  vd::write_text_file(args.out + "_config.json", vd::dump_json17(config));
  std::cout << "wrote " << args.out << "_data.csv (" << data.size() << " records), "
            << args.out << "_truth.json\n";
  return 0;
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

struct DecomposeArgs {
  std::string data_path;
  std::vector<std::string> methods{"model"};
  bool nested_assignment = false;
  std::string target = "uniform";
  std::string residual_mode;  // empty = per-method default
  bool reml = false;
  int bootstrap = 0;
  double level = 0.95;
  std::uint64_t seed = 1;
  int threads = 0;
  std::string out = "decomp";
};

void add_decompose_options(CLI::App* cmd, DecomposeArgs& args) {
  cmd->add_option("--data", args.data_path, "input dataset CSV")->required();
  cmd->add_option("--method", args.methods,
                  "decompositions to run: model|semi|threeway|hypothetical (repeatable)");
  cmd->add_flag("--nested-assignment", args.nested_assignment,
                "fit the nested multinomial instead of the joint one");
  cmd->add_option("--target", args.target,
                  "hypothetical target: uniform|volume|observed");
  cmd->add_option("--residual-mode", args.residual_mode,
                  "residual component: subtraction|model (default depends on method)");
  cmd->add_flag("--reml", args.reml, "REML for the identity-link outcome model");
  cmd->add_option("--bootstrap", args.bootstrap, "posterior draws R (0 = off)");
  cmd->add_option("--level", args.level, "interval level");
  cmd->add_option("--seed", args.seed, "rng seed")->envname("VARDECOMP_SEED");
  cmd->add_option("--threads", args.threads, "worker threads (0 = all)");
  cmd->add_option("--out", args.out, "output prefix");
}

int run_decompose(DecomposeArgs& args) {
  apply_threads(args.threads);
  for (const std::string& m : args.methods) {
    if (m != "model" && m != "semi" && m != "threeway" && m != "hypothetical") {
      std::cerr << "usage error: unknown method '" << m << "'\n";
      return 2;
    }
  }
  if (!args.residual_mode.empty() && args.residual_mode != "subtraction" &&
      args.residual_mode != "model") {
    std::cerr << "usage error: unknown residual mode '" << args.residual_mode << "'\n";
    return 2;
  }

  const vd::DataSet d = vd::load_dataset(args.data_path);
  const bool binary = d.outcome_kind() == vd::OutcomeKind::binary;

  const bool need_assignment =
      std::find(args.methods.begin(), args.methods.end(), "model") != args.methods.end() ||
      std::find(args.methods.begin(), args.methods.end(), "threeway") != args.methods.end() ||
      (std::find(args.methods.begin(), args.methods.end(), "hypothetical") !=
           args.methods.end() &&
       args.target == "observed") ||
      args.bootstrap > 0;

  std::optional<vd::AssignmentModel> eta;
  if (need_assignment) {
    eta = args.nested_assignment ? vd::fit_nested_multinomial(d) : vd::fit_joint_multinomial(d);
  }
  vd::OutcomeFitOptions fit_opts;
  fit_opts.reml = args.reml;
  auto theta = std::make_shared<vd::OutcomeParams>(binary ? vd::fit_logistic_mixed(d, fit_opts)
                                                          : vd::fit_linear_mixed(d, fit_opts));

  auto mode_or = [&](vd::ResidualMode fallback) {
    if (args.residual_mode == "subtraction") return vd::ResidualMode::by_subtraction;
    if (args.residual_mode == "model") return vd::ResidualMode::model_based;
    return fallback;
  };

  std::vector<vd::VarianceComponents> blocks;
  for (const std::string& m : args.methods) {
    if (m == "model") {
      blocks.push_back(
          vd::decompose_model_based(d, *theta, *eta, mode_or(vd::ResidualMode::model_based)));
    } else if (m == "threeway") {
      blocks.push_back(
          vd::decompose_three_way(d, *theta, *eta, mode_or(vd::ResidualMode::by_subtraction)));
    } else if (m == "semi") {
      const vd::MarginalModels mm = vd::fit_marginal_models(d, theta, fit_opts);
      blocks.push_back(
          vd::decompose_semiparametric(d, mm, mode_or(vd::ResidualMode::by_subtraction)));
    } else {
      vd::TargetAssignment target =
          args.target == "uniform" ? vd::TargetAssignment::uniform(d.hierarchy())
          : args.target == "volume"
              ? vd::TargetAssignment::volume_preserving(d)
              : vd::TargetAssignment::observed(
                    eta ? *eta
                        : (args.nested_assignment ? vd::fit_nested_multinomial(d)
                                                  : vd::fit_joint_multinomial(d)));
      blocks.push_back(vd::decompose_hypothetical(d, *theta, target));
    }
  }

  nlohmann::ordered_json components = nlohmann::ordered_json::array();
  for (const auto& block : blocks) components.push_back(vd::json_of(block));
  nlohmann::ordered_json doc;
  doc["components"] = components;
  vd::write_text_file(args.out + "_components.json", vd::dump_json17(doc));
  const std::string table = vd::components_table(blocks);
  vd::write_text_file(args.out + "_table.txt", table);
  std::cout << table;

  if (args.bootstrap > 0) {
    vd::PosteriorOptions popts;
    popts.level = args.level;
    popts.residual_mode = mode_or(vd::ResidualMode::model_based);
    const vd::PosteriorResult post =
        vd::component_posterior(d, *theta, *eta, args.bootstrap, args.seed, popts);
    vd::write_text_file(args.out + "_intervals.json", vd::dump_json17(vd::json_of(post.intervals)));
    vd::write_text_file(args.out + "_draws.csv", post.draws.to_csv());
    std::cout << "bootstrap: " << args.bootstrap - post.failed_replicates << "/"
              << args.bootstrap << " replicates fitted\n";
  }

  nlohmann::ordered_json config;
  nlohmann::ordered_json c;
  c["data"] = args.data_path;
  c["method"] = args.methods;
  c["nested-assignment"] = args.nested_assignment;
  c["target"] = args.target;
  if (!args.residual_mode.empty()) c["residual-mode"] = args.residual_mode;
  c["reml"] = args.reml;
  c["bootstrap"] = args.bootstrap;
  c["level"] = args.level;
  c["seed"] = args.seed;
  c["threads"] = args.threads;
  c["out"] = args.out;
  config["decompose"] = c;
  vd::write_text_file(args.out + "_config.json", vd::dump_json17(config));
  return 0;
}

// ---------------------------------------------------------------------------
// replicate
// ---------------------------------------------------------------------------

struct ReplicateArgs {
  std::vector<std::string> scenarios;  // "n=2000,m=5,q=25"
  int replications = 200;
  std::vector<std::string> estimators{"model"};
  bool binary = true;
  bool redraw_mechanism = false;
  long truth_mc = 200000;
  std::uint64_t seed = 1;
  int threads = 0;
  std::string out = "rep";
};

void add_replicate_options(CLI::App* cmd, ReplicateArgs& args) {
  cmd->add_option("--scenario", args.scenarios,
                  "scenario as n=N,m=M,q=Q (repeatable; default desk grid)");
  cmd->add_option("--replications", args.replications, "replicates per scenario");
  cmd->add_option("--estimators", args.estimators,
                  "estimators: model|threeway|semi (repeatable)");
  cmd->add_flag("--binary,!--continuous", args.binary, "outcome kind (default binary)");
  cmd->add_flag("--redraw-mechanism", args.redraw_mechanism,
                "redraw effects and assignment per replicate (no single truth)");
  cmd->add_option("--truth-mc", args.truth_mc, "Monte Carlo draws for the truth");
  cmd->add_option("--seed", args.seed, "rng seed")->envname("VARDECOMP_SEED");
  cmd->add_option("--threads", args.threads, "worker threads (0 = all)");
  cmd->add_option("--out", args.out, "output prefix");
}

bool parse_scenario(const std::string& text, vd::SimConfig& cfg) {
  int n = 0, m = 0, q = 0;
  if (std::sscanf(text.c_str(), "n=%d,m=%d,q=%d", &n, &m, &q) != 3) return false;
  cfg.n = n;
  cfg.m = m;
  cfg.q = q;
  return true;
}

int run_replicate(ReplicateArgs& args) {
  apply_threads(args.threads);
  std::vector<std::string> scenario_texts = args.scenarios;
  if (scenario_texts.empty()) {
    scenario_texts = {"n=1000,m=5,q=25", "n=2000,m=5,q=50", "n=5000,m=5,q=25"};
  }
  std::vector<vd::DecompositionMethod> methods;
  for (const std::string& e : args.estimators) {
    if (e == "model") methods.push_back(vd::DecompositionMethod::model_based);
    else if (e == "threeway") methods.push_back(vd::DecompositionMethod::three_way);
    else if (e == "semi") methods.push_back(vd::DecompositionMethod::semi_parametric);
    else {
      std::cerr << "usage error: unknown estimator '" << e << "'\n";
      return 2;
    }
  }

  for (std::size_t idx = 0; idx < scenario_texts.size(); ++idx) {
    vd::ReplicationConfig rc;
    if (!parse_scenario(scenario_texts[idx], rc.base)) {
      std::cerr << "usage error: bad scenario '" << scenario_texts[idx]
                << "' (expected n=N,m=M,q=Q)\n";
      return 2;
    }
    try {
      rc.base.validate();
    } catch (const vd::DataError& err) {
      std::cerr << "usage error: " << err.what() << "\n";
      return 2;
    }
    rc.base.outcome_kind = args.binary ? vd::OutcomeKind::binary : vd::OutcomeKind::continuous;
    rc.base.seed = args.seed;
    rc.replications = args.replications;
    rc.methods = methods;
    rc.redraw_mechanism = args.redraw_mechanism;
    rc.truth_mc = args.truth_mc;
    rc.seed = args.seed + idx;

    const vd::ReplicationResult result = vd::run_replications(rc);
    const std::string prefix = args.out + "_s" + std::to_string(idx + 1);
    vd::write_text_file(prefix + "_replicates.csv", result.rows_to_csv());
    vd::write_text_file(prefix + "_summary.json", vd::dump_json17(vd::json_of(result)));
    const std::string title = "scenario " + scenario_texts[idx];
    vd::write_text_file(prefix + "_components.svg", vd::components_bar_svg(result, title));
    vd::write_text_file(prefix + "_density.svg",
                        vd::density_svg(result, methods.front(), title + " (densities)"));
    const bool both = std::find(methods.begin(), methods.end(),
                                vd::DecompositionMethod::three_way) != methods.end() &&
                      std::find(methods.begin(), methods.end(),
                                vd::DecompositionMethod::model_based) != methods.end();
    if (both) {
      vd::write_text_file(prefix + "_threeway.svg",
                          vd::threeway_comparison_svg(result, title + " (three-way vs four-way)"));
    }
    std::cout << "scenario " << scenario_texts[idx] << ": " << result.replications_run
              << " replicates, " << result.failures << " failures\n";
  }

  nlohmann::ordered_json config;
  nlohmann::ordered_json c;
  c["scenario"] = scenario_texts;
  c["replications"] = args.replications;
  c["estimators"] = args.estimators;
  c["binary"] = args.binary;
  c["redraw-mechanism"] = args.redraw_mechanism;
  c["truth-mc"] = args.truth_mc;
  c["seed"] = args.seed;
  c["threads"] = args.threads;
  c["out"] = args.out;
  config["replicate"] = c;
  vd::write_text_file(args.out + "_config.json", vd::dump_json17(config));
  return 0;
}

// ---------------------------------------------------------------------------
// oracle-check
// ---------------------------------------------------------------------------

struct OracleArgs {
  std::vector<std::string> fixtures;
  std::string out;
};

int run_oracle_check(OracleArgs& args) {
  if (args.fixtures.empty()) {
    std::cerr << "usage error: at least one --fixture is required\n";
    return 2;
  }
  bool all_ok = true;
  nlohmann::ordered_json report = nlohmann::ordered_json::array();
  for (const std::string& path : args.fixtures) {
    const vd::DiscreteInstance inst = vd::load_instance(path);
    const vd::VarianceComponents oracle = vd::enumerate_decomposition(inst);
    const vd::VarianceComponents estimator = vd::decompose_instance_via_estimator(inst);
    const double marginal = vd::enumerate_marginal_variance(inst);
    double max_diff = 0.0;
    const auto oa = oracle.as_array();
    const auto ea = estimator.as_array();
    for (int j = 0; j < 4; ++j) max_diff = std::max(max_diff, std::abs(oa[j] - ea[j]));
    const double additivity = std::abs(oracle.total() - marginal);
    const bool ok = max_diff <= 1e-10 && additivity <= 1e-13;
    all_ok = all_ok && ok;

    nlohmann::ordered_json entry;
    entry["fixture"] = path;
    entry["oracle"] = vd::json_of(oracle);
    entry["estimator_path"] = vd::json_of(estimator);
    entry["marginal_variance"] = marginal;
    entry["max_component_diff"] = max_diff;
    entry["additivity_gap"] = additivity;
    entry["ok"] = ok;
    report.push_back(entry);
    std::cout << (ok ? "PASS " : "FAIL ") << path << "  max component diff " << fmt17(max_diff)
              << ", additivity gap " << fmt17(additivity) << "\n";
  }
  if (!args.out.empty()) {
    nlohmann::ordered_json doc;
    doc["checks"] = report;
    vd::write_text_file(args.out + "_oracle.json", vd::dump_json17(doc));
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical causal variance decomposition toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "JSON config file ({command: {option: value}})");
  app.config_formatter(std::make_shared<JsonConfig>());
  app.allow_config_extras(true);

  SimulateArgs sim_args;
  CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic population");
  add_sim_options(sim, sim_args);

  DecomposeArgs dec_args;
  CLI::App* dec = app.add_subcommand("decompose", "fit models and decompose variance");
  add_decompose_options(dec, dec_args);

  ReplicateArgs rep_args;
  CLI::App* rep = app.add_subcommand("replicate", "run a replication study grid");
  add_replicate_options(rep, rep_args);

  OracleArgs oracle_args;
  CLI::App* orc = app.add_subcommand("oracle-check", "verify estimator algebra on fixtures");
  orc->add_option("--fixture", oracle_args.fixtures, "DiscreteInstance JSON file (repeatable)");
  orc->add_option("--out", oracle_args.out, "output prefix for the JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (sim->parsed()) return run_simulate(sim_args);
    if (dec->parsed()) return run_decompose(dec_args);
    if (rep->parsed()) return run_replicate(rep_args);
    if (orc->parsed()) return run_oracle_check(oracle_args);
  } catch (const vd::DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return 3;
  } catch (const vd::ConvergenceError& err) {
    std::cerr << "convergence failure: " << err.what() << "\n";
    return 4;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
