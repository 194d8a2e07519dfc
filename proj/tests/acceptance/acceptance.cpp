// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <sys/wait.h>

#include "stratify/artifacts.hpp"
#include "stratify/pipeline.hpp"
#include "stratify/simulation.hpp"

using namespace stratify;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  std::size_t threads = 1;
  std::uint64_t seed = 20240601;
  fs::path out_dir;
  std::map<std::string, ExperimentResult> cache;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

ScenarioConfig scenario(int which, double sigma) {
  ScenarioConfig cfg;
  cfg.scenario = which;
  cfg.n = 450;
  cfg.sigma_y = sigma;
  cfg.sigma_x = sigma;
  cfg.replicates = 10;
  return cfg;
}

const ExperimentResult& experiment(Context& ctx, const std::string& key, ScenarioConfig cfg, RunConfig run) {
  if (auto it = ctx.cache.find(key); it != ctx.cache.end()) return it->second;
  cfg.seed = ctx.seed;
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult result = run_experiment(cfg, run, ctx.threads);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "  [" << key << "] " << cfg.replicates << " replicates in " << fmt(secs, 1) << " s\n";
  if (!ctx.out_dir.empty()) {
    fs::create_directories(ctx.out_dir);
    write_replicates(result, ctx.out_dir / (key + ".csv"));
  }
  return ctx.cache.emplace(key, std::move(result)).first->second;
}

std::vector<const ReplicateResult*> succeeded(const ExperimentResult& r, std::string& detail) {
  std::vector<const ReplicateResult*> ok;
  for (const auto& rep : r.replicates) {
    if (rep.error.empty())
      ok.push_back(&rep);
    else
      detail += " replicate " + std::to_string(rep.replicate) + " failed: " + rep.error + ";";
  }
  return ok;
}

double mean_ari(const std::vector<const ReplicateResult*>& reps) {
  double s = 0.0;
  for (const auto* r : reps) s += r->ari;
  return reps.empty() ? std::nan("") : s / static_cast<double>(reps.size());
}

Outcome criterion1(Context& ctx) {
  const auto& res = experiment(ctx, "s1_low", scenario(1, 0.5), preset_config("sim"));
  Outcome o;
  const auto reps = succeeded(res, o.detail);
  double hom = 0.0;
  std::size_t in_range = 0;
  std::string counts;
  for (const auto* r : reps) {
    hom += r->homogeneity;
    if (r->n_cluster >= 3 && r->n_cluster <= 6) ++in_range;
    counts += std::to_string(r->n_cluster) + " ";
  }
  hom /= static_cast<double>(reps.size());
  const double ari = mean_ari(reps);
  o.pass = reps.size() == 10 && ari >= 0.95 && hom >= 0.98 && in_range == reps.size();
  o.detail = "mean ARI " + fmt(ari) + ", mean homogeneity " + fmt(hom) + ", clusters [" + counts + "]" + o.detail;
  return o;
}

Outcome criterion2(Context& ctx) {
  const auto& res = experiment(ctx, "s1_high", scenario(1, 1.0), preset_config("sim"));
  Outcome o;
  const auto reps = succeeded(res, o.detail);
  std::size_t signature = 0;
  for (const auto* r : reps)
    if (r->homogeneity >= r->completeness) ++signature;
  const double ari = mean_ari(reps);
  o.pass = ari >= 0.75 && ari <= 0.97 && signature >= 8;
  o.detail = "mean ARI " + fmt(ari) + ", homogeneity >= completeness in " + std::to_string(signature) + "/10" + o.detail;
  return o;
}

Outcome criterion3(Context& ctx) {
  const auto& base = experiment(ctx, "s1_low", scenario(1, 0.5), preset_config("sim"));
  ScenarioConfig corr = scenario(1, 0.5);
  corr.rho_x = 0.8;
  const auto& res = experiment(ctx, "s1_low_rho08", corr, preset_config("sim"));
  Outcome o;
  const double a0 = mean_ari(succeeded(base, o.detail));
  const double a8 = mean_ari(succeeded(res, o.detail));
  o.pass = std::abs(a8 - a0) <= 0.05;
  o.detail = "mean ARI " + fmt(a0) + " at rho 0, " + fmt(a8) + " at rho 0.8" + o.detail;
  return o;
}

Outcome criterion4(Context& ctx) {
  const auto& low = experiment(ctx, "s2_low", scenario(2, 0.2), preset_config("sim"));
  const auto& high = experiment(ctx, "s2_high", scenario(2, 1.0), preset_config("sim"));
  Outcome o;
  const double al = mean_ari(succeeded(low, o.detail));
  const double ah = mean_ari(succeeded(high, o.detail));
  o.pass = al >= 0.95 && ah >= 0.25 && ah <= 0.55;
  o.detail = "mean ARI " + fmt(al) + " low noise, " + fmt(ah) + " high noise" + o.detail;
  return o;
}

Outcome criterion5(Context& ctx) {
  ScenarioConfig cfg = scenario(1, 0.5);
  cfg.n = 900;
  cfg.rho_x = 0.5;
  const auto& res = experiment(ctx, "s1_recovery", cfg, preset_config("sim"));
  const auto xm = scenario_covariate_means(1);
  const auto ym = scenario_outcome_means(1);
  Outcome o;
  const auto reps = succeeded(res, o.detail);
  std::size_t good = 0;
  double worst_overall = 0.0;
  for (const auto* r : reps) {
    double worst = 0.0;
    for (std::size_t g = 0; g < xm.size(); ++g) {
      std::vector<double> truth = xm[g];
      truth.insert(truth.end(), ym[g].begin(), ym[g].end());
      for (std::size_t p = 0; p < truth.size(); ++p) worst = std::max(worst, std::abs(r->recovered[g][p] - truth[p]));
    }
    if (worst <= 0.3) ++good;
    worst_overall = std::max(worst_overall, worst);
  }
  o.pass = good >= 8;
  o.detail = "all parameters within 0.3 in " + std::to_string(good) + "/10, largest error " + fmt(worst_overall) + o.detail;
  return o;
}

struct Child {
  int status = -1;
  std::string output;
};

Child run_child(const std::string& cmd) {
  Child c;
  FILE* pipe = ::popen((cmd + " 2>&1").c_str(), "r");
  if (pipe == nullptr) return c;
  char buf[4096];
  std::size_t got = 0;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) c.output.append(buf, got);
  const int status = ::pclose(pipe);
  c.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return c;
}

// Runs the named doctest cases of a suite; every pattern must match a case.
Outcome run_suite(const std::string& exe, const std::vector<std::string>& cases) {
  Outcome o;
  bool all = true;
  for (const auto& name : cases) {
    const Child c = run_child("'" + exe + "' --no-version --test-case='" + name + "'");
    std::smatch m;
    const bool matched = std::regex_search(c.output, m, std::regex(R"(test cases:\s+(\d+))")) && m[1] != "0";
    const bool ok = c.status == 0 && matched;
    if (!ok) {
      all = false;
      std::cerr << "  [" << fs::path(exe).filename().string() << "] '" << name << "' failed\n" << c.output;
      o.detail += " failed: " + fs::path(exe).filename().string() + " '" + name + "';";
    }
  }
  o.pass = all;
  return o;
}

Outcome criterion6(Context&) {
  Outcome o;
  const Outcome m = run_suite(TEST_METRICS, {"all partition pairs up to six subjects match the oracles"});
  const Outcome p = run_suite(TEST_POSTPROCESS, {"PAM reaches the exhaustive k-medoids optimum on small instances"});
  const Outcome c = run_suite(TEST_CONJUGATE, {"NIW update with no data returns the prior", "NIW update with one observation",
                                              "Dirichlet updates", "*numerical integration*"});
  o.pass = m.pass && p.pass && c.pass;
  o.detail = "metric oracles " + std::string(m.pass ? "ok" : "failed") + ", PAM vs exhaustive " +
             (p.pass ? "ok" : "failed") + ", conjugate oracles " + (c.pass ? "ok" : "failed");
  return o;
}

Outcome criterion7(Context&) {
  const Outcome s = run_suite(TEST_PROFILE_REGRESSION, {"prior reproduction without data",
                                                         "stick weights and allocations stay consistent after every sweep",
                                                         "retained iterations have contiguous labels and valid score matrices"});
  Outcome o;
  o.pass = s.pass;
  o.detail = s.pass ? "prior reproduction and per-iteration invariants hold" : s.detail;
  return o;
}

Outcome criterion8(Context& ctx) {
  ScenarioConfig cfg = scenario(2, 0.2);
  cfg.noise_covariates = 3;
  RunConfig run = preset_config("sim");
  run.variable_selection = true;
  const auto& res = experiment(ctx, "s2_selection", cfg, run);

  // Covariate order in the selection vector: continuous names, then discrete.
  ScenarioConfig probe = cfg;
  probe.seed = ctx.seed;
  const LabeledDataset sample = generate(probe, replicate_data_seed(ctx.seed, 0));
  std::vector<std::string> names = sample.data.continuous_names;
  names.insert(names.end(), sample.data.discrete_names.begin(), sample.data.discrete_names.end());

  Outcome o;
  const auto reps = succeeded(res, o.detail);
  std::size_t good = 0;
  double widest_noise = 0.0;
  double narrowest_active = 1.0;
  for (const auto* r : reps) {
    double max_noise = 0.0;
    double min_active = 1.0;
    for (std::size_t j = 0; j < names.size() && j < r->selection.size(); ++j) {
      if (names[j].rfind("noise", 0) == 0)
        max_noise = std::max(max_noise, r->selection[j]);
      else
        min_active = std::min(min_active, r->selection[j]);
    }
    if (r->selection.size() == names.size() && max_noise < min_active) ++good;
    widest_noise = std::max(widest_noise, max_noise);
    narrowest_active = std::min(narrowest_active, min_active);
  }
  o.pass = good >= 8;
  o.detail = "noise below every active covariate in " + std::to_string(good) + "/10 (max noise rho " + fmt(widest_noise) +
             ", min active rho " + fmt(narrowest_active) + ")" + o.detail;
  return o;
}

Outcome criterion9(Context& ctx) {
  const fs::path root = ctx.out_dir.empty() ? fs::temp_directory_path() / "stratify_acceptance" : ctx.out_dir / "determinism";
  fs::remove_all(root);
  const std::string cli = std::string("'") + STRATIFY_CLI + "'";
  auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
  Outcome o;
  const Child sim = run_child(cli + " simulate --scenario 1 --n 450 --replicates 1 --seed " + std::to_string(ctx.seed) + " --out-dir " +
                              q(root / "data"));
  const Child first = run_child(cli + " pipeline --data " + q(root / "data" / "data.csv") + " --schema " +
                                q(root / "data" / "schema.json") + " --truth " + q(root / "data" / "truth.csv") +
                                " --seed " + std::to_string(ctx.seed) + " --out-dir " + q(root / "first"));
  const Child again = run_child(cli + " pipeline --manifest " + q(root / "first" / "manifest.json") + " --out-dir " +
                                q(root / "second"));
  if (sim.status != 0 || first.status != 0 || again.status != 0) {
    o.detail = "a command failed: " + sim.output + first.output + again.output;
    return o;
  }
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  bool same = true;
  for (const char* f : {"representative.csv", "metrics.json"}) {
    const bool exists = fs::exists(root / "first" / f) && fs::exists(root / "second" / f);
    const bool equal = exists && bytes(root / "first" / f) == bytes(root / "second" / f);
    if (!equal) o.detail += std::string(" ") + f + (exists ? " differs;" : " missing;");
    same = same && equal;
  }
  o.pass = same;
  if (same) o.detail = "representative.csv and metrics.json identical after manifest rerun";
  if (ctx.out_dir.empty()) fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  Context ctx;
  ctx.threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<int> only;
  std::string out_dir;
  app.add_option("--threads", ctx.threads, "Replicates run concurrently")->capture_default_str();
  app.add_option("--seed", ctx.seed, "Base seed of every experiment")->capture_default_str();
  app.add_option("--out-dir", out_dir, "Keep replicate tables and determinism artifacts here");
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  if (!out_dir.empty()) ctx.out_dir = out_dir;

  using Check = Outcome (*)(Context&);
  const std::vector<Check> checks{criterion1, criterion2, criterion3, criterion4, criterion5,
                                  criterion6, criterion7, criterion8, criterion9};
  const std::set<int> selected(only.begin(), only.end());
  bool all = true;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.contains(id)) continue;
    Outcome o;
    try {
      o = checks[i](ctx);
    } catch (const std::exception& e) {
      o.detail = std::string("error: ") + e.what();
    }
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
