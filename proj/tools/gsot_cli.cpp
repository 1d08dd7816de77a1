// gsot: simulate array covariances, estimate spatio-temporal spectra, run the
// MVDR baseline and the RMSE study, ingest multichannel WAV recordings.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gsot/gsot.hpp"

namespace fs = std::filesystem;
using namespace gsot;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string format;
  std::vector<double> snr;
  std::optional<std::size_t> trials;
  std::vector<std::string> methods;
  std::optional<int> threads;
  bool timing = false;
};

struct Run {
  Config cfg;
  fs::path base;  // relative paths in the config resolve against this
  Options opt;

  bool json() const {
    const std::string f = opt.format.empty() ? cfg.string("output.format", "csv") : opt.format;
    if (f != "csv" && f != "json") throw InvalidInput("unknown output format '" + f + "' (expected csv or json)");
    return f == "json";
  }

  fs::path out_dir() const {
    fs::path p = opt.out_dir.empty() ? fs::path(cfg.string("output.dir", ".")) : fs::path(opt.out_dir);
    if (opt.out_dir.empty() && p.is_relative()) p = base / p;
    fs::create_directories(p);
    return p;
  }

  std::string resolve(const std::string& key) const {
    fs::path p = cfg.string(key, "");
    if (p.is_relative()) p = base / p;
    return p.string();
  }

  int threads() const {
    if (opt.threads) return *opt.threads;
    return static_cast<int>(cfg.integer("solver.threads", 1));
  }
};

std::string fmt(double x) { return format_double(x); }

std::string join(const std::vector<double>& xs) {
  std::string s = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + fmt(xs[i]);
  return s + "]";
}

std::vector<double> degrees(const std::vector<double>& rad) {
  std::vector<double> out;
  for (double r : rad) out.push_back(rad2deg(r));
  return out;
}

AngularGrid grid_from(const Config& cfg, const std::string& key, const AngularGrid& fallback) {
  if (!cfg.has(key)) return fallback;
  const auto g = cfg.numbers(key);
  if (g.size() != 3) throw InvalidInput("config key '" + key + "' must be [lo_deg, hi_deg, n]");
  return AngularGrid::uniform_degrees(g[0], g[1], static_cast<std::size_t>(g[2]));
}

// ---------------------------------------------------------------------------
// config -> library types
// ---------------------------------------------------------------------------

ScenarioConfig scenario_from(const Run& run) {
  const Config& c = run.cfg;
  ScenarioConfig sc = two_target_scenario();

  if (c.has("scenario.positions")) {
    sc.geometry = ArrayGeometry(c.numbers("scenario.positions"), c.number("scenario.speed", 1.0));
  } else {
    sc.geometry = ArrayGeometry::uniform_linear(c.integer("scenario.sensors", sc.geometry.size()),
                                                c.number("scenario.spacing", 1.0),
                                                c.number("scenario.speed", 1.0));
  }
  sc.grid = grid_from(c, "scenario.grid_deg", sc.grid);
  if (c.has("scenario.freq")) {
    const auto f = c.numbers("scenario.freq");
    if (f.size() != 3) throw InvalidInput("config key 'scenario.freq' must be [lo, hi, n]");
    sc.bank = FrequencyBank::uniform(f[0], f[1], static_cast<std::size_t>(f[2]));
  }
  sc.num_times = c.integer("scenario.times", sc.num_times);
  sc.snapshots = c.integer("scenario.snapshots", sc.snapshots);
  sc.snr_db = c.number("scenario.snr_db", sc.snr_db);
  if (c.has("scenario.noise_power")) sc.noise_power = c.number("scenario.noise_power");
  sc.seed = c.integer("scenario.seed", sc.seed);
  if (run.opt.seed) sc.seed = *run.opt.seed;

  std::vector<std::string> names;
  for (const auto& s : c.sections())
    if (s.rfind("source.", 0) == 0) names.push_back(s);

  if (names.empty()) {
    // default pair, re-evaluated on the configured bank
    if (sc.num_times != 5)
      throw InvalidInput("the default sources have 5 time indices; define [source.*] sections for times = " +
                         std::to_string(sc.num_times));
    const auto def = two_target_scenario();
    const double bands[2][2] = {{0.3, 1.9}, {1.1, 2.7}};
    sc.sources.clear();
    for (std::size_t k = 0; k < 2; ++k) {
      SourceTrajectory s{def.sources[k].angles, {}};
      for (double w : sc.bank.omegas()) s.spectrum.push_back(raised_cosine(w, bands[k][0], bands[k][1]));
      sc.sources.push_back(std::move(s));
    }
  } else {
    sc.sources.clear();
    for (const auto& n : names) {
      SourceTrajectory s;
      for (double d : c.numbers(n + ".angles_deg")) s.angles.push_back(deg2rad(d));
      if (c.has(n + ".powers")) {
        s.spectrum = c.numbers(n + ".powers");
      } else {
        const auto band = c.numbers(n + ".band");
        if (band.size() != 2) throw InvalidInput("config key '" + n + ".band' must be [lo, hi]");
        const double power = c.number(n + ".power", 1.0);
        for (double w : sc.bank.omegas()) s.spectrum.push_back(power * raised_cosine(w, band[0], band[1]));
      }
      sc.sources.push_back(std::move(s));
    }
  }
  sc.validate();
  return sc;
}

SolverParams solver_from(const Run& run) {
  const Config& c = run.cfg;
  SolverParams p;
  p.epsilon = c.number("solver.epsilon", p.epsilon);
  p.gamma = c.number("solver.gamma", p.gamma);
  p.eta = c.number("solver.eta", p.eta);
  p.max_sweeps = static_cast<int>(c.integer("solver.max_sweeps", static_cast<std::uint64_t>(p.max_sweeps)));
  p.tol = c.number("solver.tol", p.tol);
  p.newton.max_iter =
      static_cast<int>(c.integer("solver.newton_max_iter", static_cast<std::uint64_t>(p.newton.max_iter)));
  p.newton.damping = c.number("solver.newton_damping", p.newton.damping);
  p.newton.tol = c.number("solver.newton_tol", p.newton.tol);
  p.fail_on_newton = c.boolean("solver.fail_on_newton", p.fail_on_newton);
  p.disable_sparsity = c.boolean("solver.disable_sparsity", p.disable_sparsity);
  p.threads = run.threads();
  p.validate();
  return p;
}

MvdrParams mvdr_from(const Run& run) {
  MvdrParams m;
  m.diagonal_loading = run.cfg.number("mvdr.diagonal_loading", m.diagonal_loading);
  m.validate();
  return m;
}

IngestConfig ingest_from(const Run& run, double sample_rate) {
  const Config& c = run.cfg;
  IngestConfig ic;
  ic.sample_rate = sample_rate;
  ic.window_seconds = c.number("ingest.window_seconds", ic.window_seconds);
  ic.overlap = c.number("ingest.overlap", ic.overlap);
  ic.f_lo = c.number("ingest.f_lo", 0.0);
  ic.f_hi = c.number("ingest.f_hi", sample_rate / 2.0);
  ic.num_bins = c.integer("ingest.bins", ic.num_bins);
  ic.rho = c.number("ingest.rho", ic.rho);
  ic.decimation = c.integer("ingest.decimation", ic.decimation);
  ic.threads = run.threads();
  ic.validate();
  return ic;
}

void add_solver_meta(Metadata& m, const SolverParams& p, double eps) {
  m.emplace_back("epsilon", fmt(eps));
  m.emplace_back("gamma", fmt(p.gamma));
  m.emplace_back("eta", fmt(p.eta));
  m.emplace_back("max_sweeps", std::to_string(p.max_sweeps));
  m.emplace_back("tol", fmt(p.tol));
  m.emplace_back("newton_max_iter", std::to_string(p.newton.max_iter));
  m.emplace_back("newton_damping", fmt(p.newton.damping));
  m.emplace_back("newton_tol", fmt(p.newton.tol));
  m.emplace_back("disable_sparsity", p.disable_sparsity ? "true" : "false");
}

void add_scenario_meta(Metadata& m, const ScenarioConfig& sc) {
  m.emplace_back("seed", std::to_string(sc.seed));
  m.emplace_back("positions", join(sc.geometry.positions()));
  m.emplace_back("propagation_speed", fmt(sc.geometry.propagation_speed()));
  m.emplace_back("grid_deg", "[" + fmt(rad2deg(sc.grid[0])) + ", " + fmt(rad2deg(sc.grid[sc.grid.size() - 1])) +
                                 ", " + std::to_string(sc.grid.size()) + "]");
  m.emplace_back("omegas", join(sc.bank.omegas()));
  m.emplace_back("times", std::to_string(sc.num_times));
  m.emplace_back("snapshots", std::to_string(sc.snapshots));
  m.emplace_back("snr_db", fmt(sc.snr_db));
  m.emplace_back("noise_power", fmt(sc.resolved_noise_power()));
  for (std::size_t k = 0; k < sc.sources.size(); ++k)
    m.emplace_back("source" + std::to_string(k + 1) + "_angles_deg", join(degrees(sc.sources[k].angles)));
}

// ---------------------------------------------------------------------------
// data sources
// ---------------------------------------------------------------------------

struct Dataset {
  CovarianceFile file;
  Metadata meta;
};

CovarianceFile ingest_wav(const Run& run, Metadata& meta) {
  const std::string wav_path = run.resolve("input.wav");
  if (!run.cfg.has("input.geometry")) throw InvalidInput("[input] wav needs a geometry sidecar (input.geometry)");
  const ArrayGeometry geom = read_geometry_json(run.resolve("input.geometry"));
  const WavData wav = read_wav(wav_path);
  if (wav.channels.size() != geom.size())
    throw InvalidInput("WAV has " + std::to_string(wav.channels.size()) + " channels but the geometry lists " +
                       std::to_string(geom.size()) + " sensors");
  const IngestConfig ic = ingest_from(run, wav.sample_rate);
  IngestResult res = stft_covariances(wav.channels, ic);
  const AngularGrid grid = grid_from(run.cfg, "input.grid_deg", AngularGrid::uniform_degrees(-90, 90, 101));
  meta.emplace_back("source", "wav");
  meta.emplace_back("sample_rate", fmt(ic.sample_rate));
  meta.emplace_back("window_seconds", fmt(ic.window_seconds));
  meta.emplace_back("overlap", fmt(ic.overlap));
  meta.emplace_back("f_lo", fmt(ic.f_lo));
  meta.emplace_back("f_hi", fmt(ic.f_hi));
  meta.emplace_back("bins", std::to_string(ic.num_bins));
  meta.emplace_back("rho", fmt(ic.rho));
  meta.emplace_back("decimation", std::to_string(res.decimation));
  meta.emplace_back("frames", std::to_string(res.frames));
  return CovarianceFile{geom, grid, res.bank, std::move(res.covariances), std::nullopt};
}

Dataset load_data(const Run& run) {
  const bool cov = run.cfg.has("input.covariance");
  const bool wav = run.cfg.has("input.wav");
  if (cov && wav) throw InvalidInput("config names both input.covariance and input.wav; choose one data source");
  Metadata meta;
  if (cov) {
    CovarianceFile f = read_covariance_file(run.resolve("input.covariance"));
    if (run.cfg.has("input.grid_deg")) f.grid = grid_from(run.cfg, "input.grid_deg", f.grid);
    meta.emplace_back("source", "covariance");
    meta.emplace_back("seed", f.seed ? std::to_string(*f.seed) : "none");
    return {std::move(f), std::move(meta)};
  }
  if (wav) {
    CovarianceFile f = ingest_wav(run, meta);
    return {std::move(f), std::move(meta)};
  }
  const ScenarioConfig sc = scenario_from(run);
  Simulation sim = simulate_covariances(sc);
  meta.emplace_back("source", "simulate");
  add_scenario_meta(meta, sc);
  return {CovarianceFile{sc.geometry, sc.grid, sc.bank, std::move(sim.covariances), sc.seed}, std::move(meta)};
}

// ---------------------------------------------------------------------------
// outputs
// ---------------------------------------------------------------------------

void write_spectrum(const Run& run, const fs::path& dir, const std::string& stem,
                    const SpatioTemporalSpectrum& spec, const AngularGrid& grid, const FrequencyBank& bank,
                    const Metadata& meta) {
  if (run.json()) {
    auto os = detail::open_out((dir / (stem + ".json")).string());
    os << spectrum_to_json(spec, grid, bank, meta).dump(1) << '\n';
    detail::finish(os, (dir / (stem + ".json")).string());
    return;
  }
  const std::string p = (dir / (stem + ".csv")).string();
  auto os = detail::open_out(p);
  write_spectrum_csv(os, spec, grid, bank, meta);
  detail::finish(os, p);
  const std::string ps = (dir / (stem + "_spatial.csv")).string();
  auto oss = detail::open_out(ps);
  write_spatial_csv(oss, spec, grid, meta);
  detail::finish(oss, ps);
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_simulate(const Run& run) {
  const ScenarioConfig sc = scenario_from(run);
  Simulation sim = simulate_covariances(sc);
  Metadata meta{{"command", "simulate"}};
  add_scenario_meta(meta, sc);
  const fs::path dir = run.out_dir();
  const bool json = run.json();
  const fs::path cov = dir / (json ? "covariance.json" : "covariance.gsotcov");
  write_covariance_file(cov.string(), CovarianceFile{sc.geometry, sc.grid, sc.bank, sim.covariances, sc.seed}, json);
  write_spectrum(run, dir, "truth", sim.truth, sc.grid, sc.bank, meta);
  std::cerr << "wrote " << cov.string() << "\n";
  return 0;
}

int cmd_estimate(const Run& run, Method method, const std::string& command) {
  Dataset ds = load_data(run);
  CovarianceFile& f = ds.file;
  const MeasurementModel model(f.geometry, f.grid, f.bank);
  Metadata meta{{"command", command}, {"method", method_name(method)}};
  meta.insert(meta.end(), ds.meta.begin(), ds.meta.end());
  const fs::path dir = run.out_dir();

  if (method == Method::Mvdr) {
    const MvdrParams mp = mvdr_from(run);
    meta.emplace_back("diagonal_loading", fmt(mp.diagonal_loading));
    const auto spec = mvdr_sequence(f.data, model, mp, run.threads());
    write_spectrum(run, dir, "spectrum", spec, f.grid, f.bank, meta);
    return 0;
  }

  SolverParams sp = solver_from(run);
  if (method == Method::Ot) {
    sp.eta = 0.0;
    sp.disable_sparsity = true;
  }

  // Optional rescaling to unit mean per-sensor power; the estimate is mapped
  // back to the input units afterwards.
  double scale = 1.0;
  const bool normalize = run.cfg.boolean("solver.normalize", false);
  CovarianceSequence data = f.data;
  if (normalize) {
    double tr = 0.0;
    for (const auto& R : data.matrices()) tr += R.trace().real();
    scale = tr / static_cast<double>(data.matrices().size() * data.num_sensors());
    if (!(scale > 0.0)) throw InvalidInput("cannot normalize covariances with zero power");
    std::vector<CMat> mats;
    for (const auto& R : data.matrices()) mats.push_back(R / scale);
    data = CovarianceSequence(data.num_freqs(), data.num_times(), std::move(mats));
  }

  SolveResult res = solve(data, model, f.grid, sp);
  add_solver_meta(meta, sp, res.report.epsilon);
  meta.emplace_back("normalize", normalize ? "true" : "false");
  if (normalize) meta.emplace_back("normalization_scale", fmt(scale));

  SpatioTemporalSpectrum spec = res.spectrum;
  if (normalize) {
    std::vector<Vec> phi;
    for (const auto& p : spec.values()) phi.push_back(p * scale);
    spec = SpatioTemporalSpectrum(spec.num_freqs(), spec.num_times(), std::move(phi));
  }
  write_spectrum(run, dir, "spectrum", spec, f.grid, f.bank, meta);
  const std::string rp = (dir / "report.json").string();
  auto os = detail::open_out(rp);
  os << report_to_json(res.report, meta, run.opt.timing).dump(1) << '\n';
  detail::finish(os, rp);

  if (!res.report.converged) {
    const std::string msg = "solver stopped after " + std::to_string(res.report.sweeps) +
                            " sweeps with relative change " + fmt(res.report.final_rel_change) +
                            " > tol " + fmt(sp.tol);
    if (run.cfg.string("solver.on_nonconvergence", "warn") == "fail") throw NumericalError(msg);
    std::cerr << "warning: " << msg << "\n";
  }
  if (res.report.newton_failures > 0)
    std::cerr << "warning: " << res.report.newton_failures << " inner Newton solves hit the iteration cap\n";
  return 0;
}

int cmd_rmse(const Run& run) {
  const Config& c = run.cfg;
  RmseStudyConfig rc;
  rc.scenario = scenario_from(run);
  rc.solver = solver_from(run);
  rc.mvdr = mvdr_from(run);
  rc.threads = run.threads();
  rc.solver.threads = 1;  // parallelism goes over trials
  if (c.has("rmse.snr_db")) rc.snr_db = c.numbers("rmse.snr_db");
  if (!run.opt.snr.empty()) rc.snr_db = run.opt.snr;
  rc.trials = run.opt.trials.value_or(c.integer("rmse.trials", rc.trials));
  std::vector<std::string> ms = c.has("rmse.methods") ? c.strings("rmse.methods") : std::vector<std::string>{};
  if (!run.opt.methods.empty()) ms = run.opt.methods;
  if (!ms.empty()) {
    rc.methods.clear();
    for (const auto& m : ms) rc.methods.push_back(parse_method(m));
  }
  const std::uint64_t t1 = c.integer("rmse.eval_time", 4);
  if (t1 < 1) throw InvalidInput("rmse.eval_time is 1-based");
  rc.eval_time = t1 - 1;

  const auto rows = rmse_study(rc);
  Metadata meta{{"command", "rmse"}};
  add_scenario_meta(meta, rc.scenario);
  meta.emplace_back("trials", std::to_string(rc.trials));
  meta.emplace_back("eval_time", std::to_string(t1));
  add_solver_meta(meta, rc.solver, rc.solver.resolve_epsilon(rc.scenario.grid));
  meta.emplace_back("diagonal_loading", fmt(rc.mvdr.diagonal_loading));

  const fs::path dir = run.out_dir();
  const std::string p = (dir / (run.json() ? "rmse.json" : "rmse.csv")).string();
  auto os = detail::open_out(p);
  if (run.json())
    os << rmse_to_json(rows, meta).dump(1) << '\n';
  else
    write_rmse_csv(os, rows, meta);
  detail::finish(os, p);
  for (const auto& r : rows)
    std::cout << fmt(r.snr_db) << " dB  " << method_name(r.method) << "  RMSE " << rad2deg(r.rmse) << " deg\n";
  return 0;
}

int cmd_ingest(const Run& run) {
  if (!run.cfg.has("input.wav")) throw InvalidInput("ingest needs input.wav in the config");
  if (run.cfg.has("input.covariance"))
    throw InvalidInput("config names both input.covariance and input.wav; choose one data source");
  Metadata meta;
  CovarianceFile f = ingest_wav(run, meta);
  const fs::path dir = run.out_dir();
  const fs::path p = dir / (run.json() ? "covariance.json" : "covariance.gsotcov");
  write_covariance_file(p.string(), f, run.json());
  std::cerr << "wrote " << p.string() << " (Q=" << f.data.num_sensors() << ", F=" << f.data.num_freqs()
            << ", T=" << f.data.num_times() << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-sparse optimal-transport spectrum tracking"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "Run configuration (TOML subset)")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Override the random seed");
    sub->add_option("--out", opt.out_dir, "Output directory");
    sub->add_option("--format", opt.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--threads", opt.threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  auto* sim = app.add_subcommand("simulate", "Simulate a covariance sequence and its ground truth");
  auto* est = app.add_subcommand("estimate", "Estimate the spatio-temporal spectrum");
  auto* mv = app.add_subcommand("mvdr", "MVDR baseline spectrum");
  auto* rm = app.add_subcommand("rmse", "Monte Carlo localization RMSE study");
  auto* ing = app.add_subcommand("ingest", "Covariances from a multichannel WAV recording");
  for (auto* s : {sim, est, mv, rm, ing}) add_common(s);
  std::string est_method = "gsot";
  est->add_option("--method", est_method, "Estimator")->check(CLI::IsMember({"gsot", "ot", "mvdr"}));
  est->add_flag("--timing", opt.timing, "Include wall-clock timings in report.json");
  rm->add_option("--snr", opt.snr, "SNR in dB (repeatable)");
  rm->add_option("--trials", opt.trials, "Trials per SNR")->check(CLI::PositiveNumber);
  rm->add_option("--method", opt.methods, "Method (repeatable)")->check(CLI::IsMember({"gsot", "ot", "mvdr"}));

  CLI11_PARSE(app, argc, argv);

  try {
    Run run{opt.config_path.empty() ? Config{} : Config::load(opt.config_path),
            opt.config_path.empty() ? fs::current_path() : fs::absolute(opt.config_path).parent_path(), opt};
    if (*sim) return cmd_simulate(run);
    if (*est) return cmd_estimate(run, parse_method(est_method), "estimate");
    if (*mv) return cmd_estimate(run, Method::Mvdr, "mvdr");
    if (*rm) return cmd_rmse(run);
    if (*ing) return cmd_ingest(run);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
