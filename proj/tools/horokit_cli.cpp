// Command-line driver.
//
//   horokit_cli phi|synthesize|classify|scatter|busemann --config FILE [--out DIR]
//               [--seed N] [--workers N] [--tol X]
//   horokit_cli replay --manifest FILE [--out DIR]
//
// Exit codes: 0 success, 2 numerical failure, 3 non-convergence, 64 usage or config error.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "horokit/horokit.hpp"
#include "horokit/manifest.hpp"

using namespace horokit;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kNumerical = 2, kNonConvergence = 3, kUsage = 64;

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  std::optional<double> tol;
};

class Run {
 public:
  Run(std::string command, io::Config cfg, fs::path out, unsigned workers)
      : command_(std::move(command)), cfg_(std::move(cfg)), out_(std::move(out)), workers_(workers) {}

  io::Config& cfg() { return cfg_; }
  unsigned workers() const { return workers_; }
  const fs::path& dir() const { return out_; }

  void write(const std::string& name, const std::string& content) {
    io::write_atomic(out_ / name, content);
    files_.push_back(name);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  void seed(std::uint64_t s) { seeds_.push_back(s); }

  void finish(int code) {
    RunManifest m;
    m.command = command_;
    m.config = cfg_.dump();
    m.seeds = seeds_;
    m.workers = workers_;
    m.tool_version = HOROKIT_VERSION;
    m.exit_code = code;
    m.notes = notes_;
    m.finalize(out_, files_);
  }

 private:
  std::string command_;
  io::Config cfg_;
  fs::path out_;
  unsigned workers_;
  std::vector<std::string> files_, notes_;
  std::vector<std::uint64_t> seeds_;
};

// Validation failures surface as config errors (exit 64).
void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

Configuration config_point(Run& run, const MassSystem& sys, const std::string& key) {
  return Configuration(io::phase_vector(run.cfg(), sys, key));
}

void emit(Run& run, const io::Record& rec) {
  run.write("summary.txt", rec.str());
  std::cout << rec.str();
}

// ---------------------------------------------------------------------------

int cmd_phi(Run& run) {
  auto& cfg = run.cfg();
  const auto sys = io::mass_system(cfg);
  const auto x = config_point(run, sys, "x");
  const auto y = config_point(run, sys, "y");
  const double h = cfg.number("h");
  const std::string mode = cfg.text("mode", "free");
  require(mode == "free" || mode == "fixed", "mode", "expected 'free' or 'fixed'");
  double tau = 0.0;
  if (mode == "fixed") {
    tau = cfg.number("tau");
    require(tau > 0.0, "tau", "transfer time must be positive");
  } else {
    require(h > 0.0, "h", "free-time potentials need h > 0");
  }
  MinimizeOptions opt;
  opt.nodes_per_char_time = cfg.number("minimize.nodes_per_char_time", opt.nodes_per_char_time);
  opt.max_nodes = static_cast<int>(cfg.integer("minimize.max_nodes", opt.max_nodes));
  opt.bowed_starts = static_cast<int>(cfg.integer("minimize.bowed_starts", opt.bowed_starts));
  opt.golden_rel_tol = cfg.number("tol", opt.golden_rel_tol);
  cfg.integer("seed", 0);
  cfg.reject_unused();

  const auto pv = mode == "free" ? free_time_minimize(sys, x, y, h, opt) : minimize_fixed_time(sys, x, y, tau, h, opt);
  io::Record rec;
  rec.add("mode", mode).add("value", pv.value).add("tau_star", pv.tau_star);
  if (pv.path.empty()) {
    run.note("x = y: the infimum 0 is not attained; empty path");
    rec.add("note", "coincident endpoints, value 0, empty path");
    run.write("path.csv", "t" + io::coordinate_header(sys, 'x') + "\n");
    emit(run, rec);
    return kOk;
  }
  if (mode == "free") rec.add("bracket_lo", pv.tau_minus).add("bracket_hi", pv.tau_plus);
  const auto phys = verify_minimizer(sys, pv, h);
  rec.add("multistart_spread", pv.multistart_spread)
      .add("value_coarse", pv.value_coarse)
      .add("value_fine", pv.value_fine)
      .add("richardson_error", std::abs(pv.value_fine - pv.value_coarse) / 3.0)
      .add("nodes", pv.nodes)
      .add("starts", pv.starts)
      .add("rejected_starts", pv.rejected_starts)
      .add("tau_evaluations", pv.tau_evaluations)
      .add("grad_norm", pv.grad_norm)
      .add("converged", pv.converged);
  if (mode == "free") {
    rec.add("node_energy_max_error", phys.max_energy_error).add("node_energy_median_error", phys.median_energy_error);
  } else {
    // A fixed-time minimizer conserves its own energy, not h.
    auto e = phys.node_energy;
    std::nth_element(e.begin(), e.begin() + e.size() / 2, e.end());
    const double mid = e[e.size() / 2];
    double spread = 0.0;
    for (double v : phys.node_energy) spread = std::max(spread, std::abs(v - mid));
    rec.add("motion_energy", mid).add("node_energy_spread", spread);
  }
  rec.add("shooting_miss_rel", phys.shooting_miss_rel)
      .add("min_separation", phys.min_sep);
  run.write("path.csv", io::path_csv(sys, pv.path));
  emit(run, rec);
  return pv.converged ? kOk : kNumerical;
}

int cmd_synthesize(Run& run) {
  auto& cfg = run.cfg();
  const auto sys = io::mass_system(cfg);
  const auto x0 = config_point(run, sys, "x0");
  const Vec a_in = io::phase_vector(cfg, sys, "a");
  const double h = cfg.number("h");
  require(h > 0.0, "h", "synthesis needs h > 0");
  const double an = mass_norm(sys, a_in);
  require(an > 0.0, "a", "direction must be nonzero");
  const Vec a = a_in / an;
  require(is_collision_free(sys, a), "a", "direction has a collision");
  if (std::abs(an - 1.0) > 1e-12) run.note("direction a normalized from mass norm " + io::fmt(an));

  SynthesisOptions opt;
  opt.t_max = cfg.number("t_max", opt.t_max);
  require(opt.t_max > 0.0, "t_max", "must be positive");
  opt.lambdas = cfg.list("lambdas", default_lambda_schedule(std::max(1.0, mass_norm(sys, x0.vec()))));
  require(opt.lambdas.size() >= 3, "lambdas", "need at least three entries");
  for (std::size_t k = 1; k < opt.lambdas.size(); ++k)
    require(opt.lambdas[k] > opt.lambdas[k - 1] && opt.lambdas[0] > 0.0, "lambdas", "must be positive and increasing");
  opt.vel_tol_rel = cfg.number("vel_tol", opt.vel_tol_rel);
  const double dir_tol = cfg.number("tol", 5e-3);
  const auto cal_times = cfg.list("calibration.times", {1.0, 5.0});
  cfg.integer("seed", 0);
  cfg.reject_unused();

  SynthesisResult syn;
  try {
    syn = synthesize_hyperbolic(sys, x0, Configuration(a), h, opt);
  } catch (const NonConvergence& e) {
    io::Record diag;
    diag.add("error", e.what()).add("lambdas", opt.lambdas).add("vel_tol", opt.vel_tol_rel);
    run.write("diagnostics.txt", diag.str());
    std::cerr << "synthesize: " << e.what() << "\n";
    return kNonConvergence;
  }
  run.write("trajectory.csv", io::trajectory_csv(sys, syn.trajectory));

  const auto cls = classify_expansion(sys, syn.trajectory);
  const double speed = std::sqrt(2.0 * h);
  io::Record rec;
  rec.add("start", syn.start.vec())
      .add("initial_velocity", syn.initial_velocity.vec())
      .add("t_offset", syn.t_offset)
      .add("from_collision", syn.from_collision)
      .add("lambda_used", syn.lambda_used)
      .add("velocity_deltas", syn.velocity_convergence)
      .add("target_velocity", Vec(speed * a))
      .add("classification", to_string(cls.label))
      .add("pair_exponents", cls.pair_exponents)
      .add("termination", to_string(syn.trajectory.terminated_reason()));
  double dir_err = std::numeric_limits<double>::infinity();
  if (syn.asymptotics) {
    const auto& fit = *syn.asymptotics;
    dir_err = mass_norm(sys, Vec(fit.direction.vec() - speed * a)) / speed;
    rec.add("fit_direction", fit.direction.vec())
        .add("fit_log_coeff", fit.log_coeff)
        .add("fit_offset", fit.offset)
        .add("fit_window", std::vector<double>{fit.window.first, fit.window.second})
        .add("fit_rms_residual", fit.rms_residual)
        .add("fit_condition", fit.condition)
        .add("direction_error", dir_err);
  } else {
    rec.add("fit_note", syn.fit_note);
  }
  double drift = 0.0;
  for (double t : detail::log_spaced(1.0, syn.trajectory.t_end() - syn.trajectory.t_begin(), 50)) {
    const Vec x = syn.trajectory.position_at(syn.trajectory.t_begin() + t);
    drift = std::max(drift, mass_norm(sys, Vec(x / mass_norm(sys, x) - a)));
  }
  rec.add("shape_drift", drift);
  if (!cal_times.empty()) {
    const HorofunctionApprox H(sys, Configuration(a), h, opt.lambdas);
    std::vector<double> defects;
    for (double t : cal_times) {
      require(t > 0.0 && t <= opt.t_max, "calibration.times", "entries must lie in (0, t_max]");
      defects.push_back(calibration_defect(sys, H, syn.trajectory, t));
    }
    rec.add("calibration_times", cal_times).add("calibration_defects", defects);
  }
  const bool ok = cls.label == ExpansionLabel::Hyperbolic && dir_err <= dir_tol;
  rec.add("direction_tol", dir_tol).add("accepted", ok);
  emit(run, rec);
  return ok ? kOk : kNumerical;
}

bool row_failed(const ScanRow& r) {
  return r.class_minus == ExpansionLabel::Undetermined || r.class_plus == ExpansionLabel::Undetermined;
}

int run_scan(Run& run, const MassSystem& sys) {
  auto& cfg = run.cfg();
  PerihelionSampler spec;
  const long count = cfg.integer("sampler.count");
  require(count >= 0, "sampler.count", "must be non-negative");
  spec.count = static_cast<std::size_t>(count);
  spec.seed = static_cast<std::uint64_t>(cfg.integer("sampler.seed", cfg.integer("seed", 0)));
  spec.scale = cfg.number("sampler.scale", 1.0);
  require(spec.scale > 0.0, "sampler.scale", "must be positive");
  const double h = cfg.number("h");
  require(h > 0.0, "h", "the section of perihelia needs h > 0");
  const double t_max = cfg.number("t_max", 1000.0);
  require(t_max > 0.0, "t_max", "must be positive");
  ScanOptions opt;
  opt.workers = run.workers();
  opt.section_tol = cfg.number("tol", opt.section_tol);
  cfg.reject_unused();
  run.seed(spec.seed);

  const auto rows = perihelia_scan(sys, spec, h, t_max, opt);
  run.write("scan.csv", io::scan_csv(sys, rows));
  run.write("scan_schema.txt", io::scan_schema(sys));
  io::Record rec;
  std::size_t failed = 0, bi = 0;
  double worst_norm = 0.0, worst_com = 0.0;
  for (const auto& r : rows) {
    if (row_failed(r)) {
      ++failed;
      rec.add("failed_row." + std::to_string(r.id), r.message);
    }
    if (r.ok) {
      ++bi;
      worst_norm = std::max(worst_norm, std::abs(r.norm_minus - r.norm_plus) / r.norm_plus);
      worst_com = std::max(worst_com, r.com_identity);
    }
  }
  rec.add("rows", rows.size()).add("bi_hyperbolic", bi).add("failed", failed);
  rec.add("worst_norm_identity", worst_norm).add("worst_com_identity", worst_com);
  emit(run, rec);
  return !rows.empty() && failed == rows.size() ? kNumerical : kOk;
}

int cmd_classify(Run& run) {
  auto& cfg = run.cfg();
  const auto sys = io::mass_system(cfg);
  if (cfg.has("sampler.count")) return run_scan(run, sys);
  const auto x = config_point(run, sys, "x");
  const Velocity v(io::phase_vector(cfg, sys, "v"));
  require(is_collision_free(sys, x), "x", "initial configuration has a collision");
  const double t_max = cfg.number("t_max", 1000.0);
  require(t_max > 0.0, "t_max", "must be positive");
  const bool write_traj = cfg.flag("write_trajectory", false);
  cfg.integer("seed", 0);
  cfg.reject_unused();

  const auto traj = integrate(sys, x, v, {0.0, t_max});
  const auto cls = classify_expansion(sys, traj);
  if (write_traj) run.write("trajectory.csv", io::trajectory_csv(sys, traj));
  io::Record rec;
  rec.add("energy", traj.energy0())
      .add("classification", to_string(cls.label))
      .add("pair_exponents", cls.pair_exponents)
      .add("potential_exponent", cls.evidence.potential_exponent)
      .add("window", std::vector<double>{cls.evidence.t_lo, cls.evidence.t_hi})
      .add("termination", to_string(cls.evidence.termination));
  if (!cls.evidence.note.empty()) rec.add("note", cls.evidence.note);
  emit(run, rec);
  return kOk;
}

int cmd_scatter(Run& run) {
  auto& cfg = run.cfg();
  const auto sys = io::mass_system(cfg);
  if (cfg.has("sampler.count")) return run_scan(run, sys);
  const auto x = config_point(run, sys, "x");
  const Velocity v(io::phase_vector(cfg, sys, "v"));
  require(is_collision_free(sys, x), "x", "initial configuration has a collision");
  require(energy(sys, x, v) > 0.0, "v", "the limit shape map needs positive energy");
  const double t_max = cfg.number("t_max", 1000.0);
  require(t_max > 0.0, "t_max", "must be positive");
  cfg.integer("seed", 0);
  cfg.reject_unused();

  const auto res = limit_shape_map(sys, x, v, t_max);
  io::Record rec;
  rec.add("energy", res.h)
      .add("class_minus", to_string(res.class_minus.label))
      .add("class_plus", to_string(res.class_plus.label))
      .add("bi_hyperbolic", res.complete());
  if (res.fit_minus_ok) rec.add("a_minus", res.a_minus.vec()).add("norm_minus", res.norm_minus);
  if (res.fit_plus_ok) rec.add("a_plus", res.a_plus.vec()).add("norm_plus", res.norm_plus);
  if (res.fit_minus_ok && res.fit_plus_ok) {
    rec.add("norm_identity", std::abs(res.norm_minus - res.norm_plus) / res.norm_plus)
        .add("com_identity", res.com_identity_error());
  }
  if (!res.note.empty()) rec.add("note", res.note);
  emit(run, rec);
  return res.class_minus.label == ExpansionLabel::Undetermined && res.class_plus.label == ExpansionLabel::Undetermined
             ? kNumerical
             : kOk;
}

int cmd_busemann(Run& run) {
  auto& cfg = run.cfg();
  const auto sys = io::mass_system(cfg);
  const Vec a_in = io::phase_vector(cfg, sys, "a");
  const double h = cfg.number("h");
  require(h > 0.0, "h", "horofunctions need h > 0");
  const double an = mass_norm(sys, a_in);
  require(an > 0.0, "a", "direction must be nonzero");
  require(is_collision_free(sys, Vec(a_in / an)), "a", "direction has a collision");
  if (std::abs(an - 1.0) > 1e-12) run.note("direction a normalized from mass norm " + io::fmt(an));

  std::vector<std::pair<std::string, Vec>> points;
  std::vector<std::string> keys;
  for (const auto& [k, v] : cfg.entries())
    if (k.rfind("points.", 0) == 0) keys.push_back(k);
  for (const auto& k : keys) points.emplace_back(k.substr(7), io::phase_vector(cfg, sys, k));
  const long n_random = cfg.integer("probe.count", 0);
  require(n_random >= 0, "probe.count", "must be non-negative");
  if (n_random > 0) {
    const Vec center = cfg.has("probe.center") ? io::phase_vector(cfg, sys, "probe.center") : Vec::Zero(sys.size());
    const double spread = cfg.number("probe.spread", 0.3);
    const double min_sep = cfg.number("probe.min_sep", 0.3);
    const auto seed = static_cast<std::uint64_t>(cfg.integer("seed", 0));
    run.seed(seed);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, spread);
    for (long i = 0; i < n_random; ++i) {
      Vec p;
      int tries = 0;
      do {
        require(++tries < 10000, "probe.min_sep", "cannot draw collision-free probes");
        p = center;
        for (Eigen::Index k = 0; k < p.size(); ++k) p[k] += g(rng);
      } while (min_separation(sys, p) < min_sep);
      points.emplace_back("probe" + std::to_string(i), p);
    }
  } else {
    cfg.integer("seed", 0);
  }
  require(!points.empty(), "points", "no query points (give [points] entries or probe.count)");
  const auto lambdas = cfg.list("lambdas", default_lambda_schedule(1.0));
  cfg.reject_unused();

  const HorofunctionApprox H(sys, Configuration(a_in), h, lambdas);
  std::vector<BusemannValue> vals(points.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < points.size();)
      vals[k] = busemann_eval(sys, H, Configuration(points[k].second));
  };
  const unsigned nw = std::max(1u, std::min<unsigned>(run.workers(), static_cast<unsigned>(points.size())));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < nw; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::string table = "point_id,lambda,u,cauchy_delta\n";
  io::Record rec;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t k = 0; k < lambdas.size(); ++k)
      table += points[i].first + "," + io::fmt(lambdas[k]) + "," + io::fmt(vals[i].per_lambda[k]) + "," +
               (k ? io::fmt(vals[i].cauchy[k - 1]) : std::string("nan")) + "\n";
    rec.add("u." + points[i].first, vals[i].value).add("error." + points[i].first, vals[i].error);
  }
  rec.add("base_error", vals.front().base_error);
  run.write("busemann.csv", table);
  emit(run, rec);
  return kOk;
}

using Command = int (*)(Run&);

Command lookup(const std::string& name) {
  if (name == "phi") return cmd_phi;
  if (name == "synthesize") return cmd_synthesize;
  if (name == "classify") return cmd_classify;
  if (name == "scatter") return cmd_scatter;
  if (name == "busemann") return cmd_busemann;
  return nullptr;
}

int execute(Run& run, Command cmd) {
  int code = kOk;
  try {
    code = cmd(run);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = kUsage;
  } catch (const NonConvergence& e) {
    std::cerr << "non-convergence: " << e.what() << "\n";
    run.write("diagnostics.txt", io::Record().add("error", e.what()).str());
    code = kNonConvergence;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    run.note(std::string("failure: ") + e.what());
    code = kNumerical;
  }
  run.finish(code);
  return code;
}

fs::path output_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("HOROKIT_OUT_DIR"); env && *env) return env;
  return "horokit_out";
}

int run_command(const std::string& name, const Flags& f) {
  io::Config cfg;
  try {
    cfg = io::Config::load(f.config);
    if (f.seed) cfg.set("seed", std::to_string(*f.seed));
    if (f.tol) cfg.set("tol", io::fmt(*f.tol));
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  Run run(name, std::move(cfg), output_dir(f.out), f.workers);
  return execute(run, lookup(name));
}

int replay(const std::string& manifest_path, const std::string& out_flag) {
  RunManifest m;
  io::Config cfg;
  try {
    m = RunManifest::load(manifest_path);
    cfg = io::Config::parse(m.config);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  const Command cmd = lookup(m.command);
  if (!cmd) {
    std::cerr << "error: manifest names unknown command '" << m.command << "'\n";
    return kUsage;
  }
  const fs::path out = out_flag.empty() ? fs::path(manifest_path).parent_path() / "replay" : fs::path(out_flag);
  Run run(m.command, std::move(cfg), out, m.workers);
  const int code = execute(run, cmd);
  const auto bad = m.mismatches(out);
  for (const auto& f : bad) std::cerr << "digest mismatch: " << f << "\n";
  const bool same = bad.empty() && code == m.exit_code;
  std::cout << "replay " << (same ? "reproduced" : "DIFFERS") << ": " << m.outputs.size() << " outputs, exit code "
            << code << " (recorded " << m.exit_code << ")\n";
  return same ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"horokit: action potentials, horofunctions and hyperbolic motions of the N-body problem"};
  app.require_subcommand(1);
  Flags flags;
  std::string manifest, replay_out;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"phi", "action potential between two configurations (free or fixed time)"},
      {"synthesize", "hyperbolic motion from x0 with prescribed asymptotic direction"},
      {"classify", "expansion class of a motion, or of a perihelia scan"},
      {"scatter", "limit shape map of a motion, or of a perihelia scan"},
      {"busemann", "horofunction values and Cauchy diagnostics over a lambda schedule"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "config file (key = value)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out, "output directory (default $HOROKIT_OUT_DIR or ./horokit_out)");
    sub->add_option("--seed", flags.seed, "seed for randomized procedures (default 0)");
    sub->add_option("--workers", flags.workers, "worker threads for batch commands")->check(CLI::PositiveNumber);
    sub->add_option("--tol", flags.tol, "command tolerance override");
  }
  auto* rep = app.add_subcommand("replay", "re-run a manifest and compare output digests");
  rep->add_option("--manifest", manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", replay_out, "output directory (default <manifest dir>/replay)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  if (rep->parsed()) return replay(manifest, replay_out);
  for (const auto& [name, help] : commands)
    if (app.got_subcommand(name)) return run_command(name, flags);
  return kUsage;
}
