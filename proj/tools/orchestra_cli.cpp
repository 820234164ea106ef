// orchestra: command-line front end for scenarios, exact evaluation,
// experiments, baselines and theory checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "orchestra/orchestra.hpp"

using namespace orchestra;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

// Scenario given by name or by a config file path.
nlohmann::json scenario_document(const std::string& spec) {
  if (fs::exists(spec)) return read_json(spec);
  return spec;
}

struct RunFlags {
  std::string config;
  std::string scenario;
  std::string scheme;
  std::string potential;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::optional<std::size_t> T;
  std::optional<std::size_t> H;
  std::optional<std::size_t> threads;
  std::string out = "out";
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)");
  cmd->add_option("--scenario", f.scenario, "scenario name or model config file");
  cmd->add_option("--potential", f.potential, "pp:P | epc:ETA | ept:ETA0");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--runs", f.runs, "independent runs");
  cmd->add_option("--T", f.T, "policy updates");
  cmd->add_option("--H", f.H, "estimation steps per update");
  cmd->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  cmd->add_option("--out", f.out, "output directory")->capture_default_str();
}

nlohmann::json merged_config(const RunFlags& f) {
  nlohmann::json j = f.config.empty() ? nlohmann::json::object() : read_json(f.config);
  if (!f.scenario.empty()) j["scenario"] = scenario_document(f.scenario);
  if (!f.scheme.empty()) j["scheme"] = f.scheme;
  if (!f.potential.empty()) j["potential"] = f.potential;
  if (f.seed) j["seed"] = *f.seed;
  if (f.runs) j["runs"] = *f.runs;
  if (f.T) j["T"] = *f.T;
  if (f.H) j["H"] = *f.H;
  if (f.threads) j["threads"] = *f.threads;
  return j;
}

int execute_run(const nlohmann::json& j, const std::string& out) {
  const auto cfg = experiment_from_json(j);
  const auto result = run_experiment(cfg);
  write_run_outputs(out, result);
  const auto& fin = result.aggregate.back();
  std::printf("%s %s: initial %.6g, final %.6g (stderr %.3g) over %zu runs -> %s\n", cfg.model.name.c_str(),
              cfg.scheme.c_str(), result.aggregate.front().mean, fin.mean, fin.stderr_, cfg.runs, out.c_str());
  return 0;
}

int report_check(const std::string& name, bool pass, const nlohmann::json& details, const std::string& out) {
  nlohmann::json doc = details;
  doc["check"] = name;
  doc["pass"] = pass;
  if (!out.empty()) write_text(fs::path(out) / ("check_" + name + ".json"), doc.dump(2) + "\n");
  std::printf("check %s: %s\n%s\n", name.c_str(), pass ? "PASS" : "FAIL", details.dump(2).c_str());
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expert orchestration for stochastic matching"};
  app.require_subcommand(1);
  int status = 0;

  // scenario list | export
  auto* scenario = app.add_subcommand("scenario", "built-in scenarios");
  scenario->require_subcommand(1);
  scenario->add_subcommand("list", "list scenario names")->callback([] {
    for (const auto& n : scenario_names()) {
      const auto c = build_scenario(n);
      std::printf("%-8s classes=%d capacity=%d edges=%zu discount=%g\n", n.c_str(), c.class_count, c.capacity,
                  c.edges.size(), c.discount);
    }
  });
  std::string export_name, export_out;
  auto* exp = scenario->add_subcommand("export", "print a scenario as a model config");
  exp->add_option("name", export_name, "scenario name")->required();
  exp->add_option("--out", export_out, "write to this file instead of stdout");
  exp->callback([&] {
    const std::string text = to_json(build_scenario(export_name)).dump(2) + "\n";
    if (export_out.empty()) std::fputs(text.c_str(), stdout);
    else write_text(export_out, text);
  });

  // eval-exact
  std::string ee_scenario = "diamond", ee_roster, ee_out;
  bool ee_values = false;
  auto* ee = app.add_subcommand("eval-exact", "exact values of experts, mixtures and the optimum");
  ee->add_option("--scenario", ee_scenario, "scenario name or model config file")->capture_default_str();
  ee->add_option("--roster", ee_roster, "comma-separated experts, e.g. pi1,pi2,pi4");
  ee->add_option("--out", ee_out, "directory for summary.json (and value tables with --values)");
  ee->add_flag("--values", ee_values, "also write per-state value tables");
  ee->callback([&] {
    const auto c = build_scenario(scenario_document(ee_scenario));
    Roster roster = default_roster(c);
    if (!ee_roster.empty()) {
      nlohmann::json names = nlohmann::json::array();
      std::stringstream ss(ee_roster);
      for (std::string item; std::getline(ss, item, ',');) names.push_back(item);
      roster = roster_from_json(names, c);
    }
    const ExactModel m(c, roster);
    nlohmann::json summary{{"scenario", c.name}, {"states", m.state_count()}, {"keys", m.key_count()}};
    nlohmann::json experts = nlohmann::json::array();
    for (std::size_t k = 0; k < roster.size(); ++k) {
      const auto ev = evaluate_expert(m, k);
      const double v = value_at_initial(m, ev.v);
      experts.push_back({{"expert", expert_name(roster[k])}, {"value", v}, {"residual", mixture_residual(m, ev)}});
      std::printf("%-18s %.6f\n", expert_name(roster[k]).c_str(), v);
      if (ee_values && !ee_out.empty()) {
        std::ostringstream os;
        write_value_csv(os, m, ev.v);
        write_text(fs::path(ee_out) / ("values_expert" + std::to_string(k) + ".csv"), os.str());
      }
    }
    const double uniform = value_at_initial(m, evaluate_mixture(m, WeightTable(roster.size())).v);
    const auto best = best_mixture(m);
    const double vbest = value_at_initial(m, best.evaluation.v);
    const auto star = optimal_value(m);
    const double vstar = value_at_initial(m, star);
    std::printf("%-18s %.6f\n%-18s %.6f (%d improvement rounds)\n%-18s %.6f\n", "uniform", uniform, "best_mixture",
                vbest, best.improvement_rounds, "optimal", vstar);
    summary["experts"] = experts;
    summary["uniform"] = uniform;
    summary["best_mixture"] = {{"value", vbest}, {"rounds", best.improvement_rounds}};
    summary["optimal"] = {{"value", vstar}, {"residual", optimal_residual(m, star)}};
    if (!ee_out.empty()) {
      write_text(fs::path(ee_out) / "summary.json", summary.dump(2) + "\n");
      write_text(fs::path(ee_out) / "best_mixture_weights.json", to_json(best.weights).dump() + "\n");
      if (ee_values) {
        std::ostringstream os;
        write_value_csv(os, m, star);
        write_text(fs::path(ee_out) / "values_optimal.csv", os.str());
      }
    }
  });

  // run
  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "run an orchestration experiment");
  add_run_flags(run, run_flags);
  run->add_option("--scheme", run_flags.scheme, "tab-tab | tab-nn | nn-nn");
  run->callback([&] {
    if (!run_flags.scheme.empty() && run_flags.scheme != "tab-tab" && run_flags.scheme != "tab-nn" &&
        run_flags.scheme != "nn-nn")
      throw CLI::ValidationError("--scheme", "expected tab-tab, tab-nn or nn-nn; use `baseline` for ql and ddqn");
    status = execute_run(merged_config(run_flags), run_flags.out);
  });

  // baseline
  RunFlags base_flags;
  std::string base_kind, base_space;
  auto* base = app.add_subcommand("baseline", "run a Q-learning or double-DQN baseline");
  add_run_flags(base, base_flags);
  base->add_option("--kind", base_kind, "ql | ddqn")->required()->check(CLI::IsMember({"ql", "ddqn"}));
  base->add_option("--space", base_space, "roster | primitive")->check(CLI::IsMember({"roster", "primitive"}));
  base->callback([&] {
    auto j = merged_config(base_flags);
    j["scheme"] = base_kind == "ql" ? "ql" : "ddqn-direct";
    if (!base_space.empty()) j[base_kind == "ql" ? "ql" : "ddqn"]["space"] = base_space;
    status = execute_run(j, base_flags.out);
  });

  // check
  auto* check = app.add_subcommand("check", "theory and numerics checks");
  check->require_subcommand(1);
  check->fallthrough();
  std::string check_out;
  std::uint64_t check_seed = 1;
  check->add_option("--out", check_out, "directory for the check report");
  check->add_option("--seed", check_seed, "seed")->capture_default_str();

  std::size_t regret_trials = 1000;
  auto* regret = check->add_subcommand("regret", "adversarial regret against the worst-case bounds");
  regret->add_option("--trials", regret_trials, "payoff sequences per (T, K, potential)")->capture_default_str();
  regret->callback([&] {
    Rng rng(check_seed);
    nlohmann::json cases = nlohmann::json::array();
    bool pass = true;
    for (std::size_t T : {10, 100, 1000})
      for (std::size_t K : {2, 3, 10})
        for (const auto& spec : {PotentialSpec::polynomial_for(K), PotentialSpec::exponential_fixed(0.1)}) {
          const auto r = adversarial_regret_check(spec, T, K, random_sign_payoffs(), regret_trials, rng);
          pass = pass && r.pass;
          cases.push_back({{"T", T}, {"K", K}, {"potential", to_string(spec)}, {"max_regret", r.max_regret},
                           {"bound", r.bound}, {"violations", r.violations}});
        }
    status = report_check("regret", pass, {{"cases", cases}}, check_out);
  });

  std::string theorem_scenario = "diamond";
  std::size_t theorem_T = 50;
  auto* theorem = check->add_subcommand("theorem", "value gap of exact-advantage orchestration against its bound");
  theorem->add_option("--scenario", theorem_scenario, "scenario name or model config file")->capture_default_str();
  theorem->add_option("--T", theorem_T, "rounds")->capture_default_str();
  theorem->callback([&] {
    const auto c = build_scenario(scenario_document(theorem_scenario));
    const auto r = theorem_check(c, default_roster(c), theorem_T);
    status = report_check("theorem", r.pass,
                          {{"T", r.T}, {"eta", r.eta}, {"regret_bound", r.regret}, {"best_mixture", r.best},
                           {"average_iterate", r.average}, {"gap", r.gap}, {"bound", r.bound},
                           {"units", "rewards normalized to [0, 1]"}},
                          check_out);
  });

  BiasTraceOptions bias_opt;
  auto* bias = check->add_subcommand("bias", "TD bias contraction on the diamond under uniform weights");
  bias->add_option("--runs", bias_opt.runs, "independent TD runs")->capture_default_str();
  bias->add_option("--steps", bias_opt.steps, "TD steps per run")->capture_default_str();
  bias->add_option("--alpha", bias_opt.alpha, "TD step size")->capture_default_str();
  bias->callback([&] {
    const ExactModel m(diamond_config(), default_roster(diamond_config()));
    const auto tr = bias_trace(m, WeightTable(m.experts()), bias_opt, check_seed);
    auto exact_opt = bias_opt;
    exact_opt.start_at_exact = true;
    const auto flat = bias_trace(m, WeightTable(m.experts()), exact_opt, derive_seed(check_seed, 1));
    double ratio = 0.0;
    for (std::size_t s = 0; s < flat.tau.size(); ++s)
      if (flat.stderr_max[s] > 0.0) ratio = std::max(ratio, flat.bias_inf[s] / (3.0 * flat.stderr_max[s]));
    const bool pass = tr.slope < 0.0 && tr.r_squared > 0.9 && ratio <= 1.0;
    status = report_check("bias", pass,
                          {{"tracked", tr.tracked}, {"slope", tr.slope}, {"r_squared", tr.r_squared},
                           {"decay_rate", tr.decay_rate}, {"tau", tr.tau}, {"bias_inf", tr.bias_inf},
                           {"stderr_max", tr.stderr_max}, {"exact_start_max_bias_over_3se", ratio}},
                          check_out);
  });

  auto* gradient = check->add_subcommand("gradient", "finite-difference gradient check of the network code");
  gradient->callback([&] {
    Rng rng(check_seed);
    nlohmann::json cases = nlohmann::json::array();
    double worst = 0.0;
    for (const auto& r : gradient_check_suite(rng)) {
      worst = std::max(worst, r.error);
      cases.push_back({{"widths", r.widths},
                       {"loss", r.loss == LossKind::SquaredError ? "squared" : "kl"},
                       {"relative_error", r.error}});
    }
    status = report_check("gradient", worst <= 1e-4, {{"cases", cases}, {"tolerance", 1e-4}}, check_out);
  });

  // report dominance
  auto* report = app.add_subcommand("report", "reports on saved artifacts");
  report->require_subcommand(1);
  std::string dom_weights;
  auto* dominance = report->add_subcommand("dominance", "share of keys where each expert has the largest weight");
  dominance->add_option("weights", dom_weights, "weights_runN.json from a tabular run")->required();
  dominance->callback([&] {
    const auto share = dominance_report(weight_table_from_json(read_json(dom_weights)));
    for (std::size_t k = 0; k < share.size(); ++k) std::printf("expert %zu: %.4f\n", k, share[k]);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error in '%s': %s\n", e.field().c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return status;
}
