// prutf: change point detection in piecewise polynomial signals via the dual
// solution path of trend filtering, with a Gaussian-bridge stopping rule.
#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prutf/detect.hpp"
#include "prutf/sim.hpp"

namespace {

using nlohmann::json;

constexpr int kExitBadInput = 2;
constexpr int kExitDegenerateScale = 3;
constexpr int kExitCapExceeded = 4;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One numeric column (optional header); an optional second column is treated as an
// index and ignored.
std::vector<double> read_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw prutf::InvalidInput("cannot open input file: " + path);
  std::vector<double> y;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string field = line.substr(0, line.find(','));
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    const bool ok = end && *end == '\0' && end != field.c_str() && errno == 0;
    if (!ok) {
      if (lineno == 1) continue;  // header row
      throw prutf::InvalidInput("malformed numeric field at line " + std::to_string(lineno) +
                                ": '" + field + "'");
    }
    y.push_back(v);
  }
  if (y.empty()) throw prutf::InvalidInput("input file contains no data rows: " + path);
  return y;
}

json result_to_json(const prutf::DetectionResult& res, const std::string& method, int order) {
  json j;
  j["method"] = method;
  j["order"] = order;
  j["change_points"] = res.changePoints;
  j["signs"] = res.signs;
  j["lambda_stop"] = res.lambdaStop;
  j["sigma"] = res.sigmaUsed;
  j["fitted"] = res.fitted;
  j["path_fit"] = res.pathFit;
  j["terminated"] = res.terminated;
  json events = json::array();
  for (const auto& e : res.eventLog) {
    events.push_back({{"lambda", e.lambda},
                      {"kind", prutf::to_string(e.kind)},
                      {"coordinate", e.coord + 1},  // 1-based dual coordinate
                      {"sign", e.sign}});
  }
  j["events"] = events;
  json zeroed = json::array();
  for (auto c : res.zeroedSigns) zeroed.push_back(c + 1);
  j["zeroed_signs"] = zeroed;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw prutf::InvalidInput("cannot open output file: " + path);
  out << text;
}

struct DetectArgs {
  std::string input;
  std::string output;
  std::string format = "json";
  std::string method = "mprutf";
  std::string sigma = "mad";
  int order = 0;
  double alpha = 0.05;
  bool per_block = false;
  std::size_t max_steps = 0;
};

int cmd_detect(const DetectArgs& a) {
  const std::vector<double> y = read_series_csv(a.input);
  prutf::StoppingConfig cfg;
  cfg.alpha = a.alpha;
  cfg.per_block = a.per_block;
  cfg.max_events = a.max_steps;
  if (a.sigma != "mad") {
    errno = 0;
    char* end = nullptr;
    const double s = std::strtod(a.sigma.c_str(), &end);
    if (!end || *end != '\0' || errno != 0 || !(s > 0.0))
      throw prutf::InvalidInput("--sigma expects 'mad' or a positive number");
    cfg.sigma = s;
  }
  const auto res = a.method == "prutf" ? prutf::detect_prutf(y, a.order, cfg)
                                       : prutf::detect_mprutf(y, a.order, cfg);
  if (a.format == "json") {
    write_text(a.output, result_to_json(res, a.method, a.order).dump(2) + "\n");
  } else {
    std::ostringstream os;
    os << "index,y,fitted,is_change_point\n";
    std::vector<char> cp(y.size() + 1, 0);
    for (auto t : res.changePoints) cp[t] = 1;
    for (std::size_t i = 0; i < y.size(); ++i)
      os << (i + 1) << ',' << fmt17(y[i]) << ',' << fmt17(res.fitted[i]) << ','
         << int(cp[i + 1]) << "\n";
    write_text(a.output, os.str());
    std::cerr << "lambda_stop=" << fmt17(res.lambdaStop) << " sigma=" << fmt17(res.sigmaUsed)
              << " change_points=" << res.changePoints.size() << "\n";
  }
  return 0;
}

struct SimulateArgs {
  std::string scenario;
  std::string scenario_file;
  std::string method = "mprutf";
  std::string output;
  std::string detail;
  std::vector<double> sigma_grid;
  std::size_t replicates = 100;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  std::optional<double> rho;
  bool per_block = false;
  std::size_t threads = 0;
};

int cmd_simulate(const SimulateArgs& a) {
  prutf::Scenario scn;
  if (!a.scenario_file.empty()) {
    std::ifstream in(a.scenario_file);
    if (!in) throw prutf::InvalidInput("cannot open scenario file: " + a.scenario_file);
    scn = prutf::read_scenario_file(in);
  } else if (!a.scenario.empty()) {
    scn = prutf::named_scenario(a.scenario);
  } else {
    throw prutf::InvalidInput("simulate needs --scenario or --scenario-file");
  }
  scn.seed = a.seed;
  if (a.rho) {
    scn.noise.kind = prutf::NoiseSpec::Kind::Ar1;
    scn.noise.rho = *a.rho;
  }
  std::vector<double> grid = a.sigma_grid.empty() ? std::vector<double>{scn.noise.sigma}
                                                  : a.sigma_grid;
  prutf::StoppingConfig cfg;
  cfg.alpha = a.alpha;
  cfg.per_block = a.per_block;
  const auto res = prutf::run_experiment(scn, prutf::method_from_string(a.method), a.replicates,
                                         grid, cfg, a.threads);
  std::ostringstream os;
  os << "sigma,mean_ncpts,mean_mse,mean_hausdorff,mean_runtime_s\n";
  for (const auto& row : res.rows)
    os << fmt17(row.sigma) << ',' << fmt17(row.mean_ncpts) << ',' << fmt17(row.mean_mse) << ','
       << fmt17(row.mean_hausdorff) << ',' << fmt17(row.mean_runtime_s) << "\n";
  write_text(a.output, os.str());
  if (!a.detail.empty()) {
    std::ostringstream ds;
    ds << "sigma,replicate,seed,ncpts,mse,hausdorff,runtime_s\n";
    for (const auto& rec : res.detail)
      ds << fmt17(rec.sigma) << ',' << rec.replicate << ','
         << (a.seed ^ static_cast<std::uint64_t>(rec.replicate)) << ',' << rec.detected << ','
         << fmt17(rec.mse) << ',' << fmt17(rec.hausdorff) << ',' << fmt17(rec.runtime_s) << "\n";
    write_text(a.detail, ds.str());
  }
  return 0;
}

struct BenchArgs {
  std::vector<std::size_t> sizes{512, 1024, 2048};
  int order = 0;
  std::size_t events = 24;
  std::uint64_t seed = 1;
  bool as_json = false;
  std::string output;
};

int cmd_bench(const BenchArgs& a) {
  if (a.sizes.empty()) throw prutf::InvalidInput("bench needs a non-empty --sizes grid");
  struct Row {
    std::size_t n;
    std::size_t events;
    double setup_s;
    double path_s;
    double events_per_s;
    double detect_s;
  };
  std::vector<Row> rows;
  for (const std::size_t n : a.sizes) {
    prutf::CounterRng rng(a.seed ^ n);
    std::vector<double> y(n);
    for (auto& v : y) v = rng.next_gaussian();
    const prutf::DifferenceOperator D(n, a.order);
    const auto t0 = std::chrono::steady_clock::now();
    prutf::PathEngine engine(y, D);
    const auto t1 = std::chrono::steady_clock::now();
    std::size_t ev = 0;
    while (ev < a.events && engine.advance()) ++ev;
    const auto t2 = std::chrono::steady_clock::now();

    // a small two-jump detection gives the end-to-end wall time per call
    std::vector<double> y2(n, 0.0);
    for (std::size_t i = n / 3; i < n; ++i) y2[i] += 2.0;
    for (std::size_t i = 2 * n / 3; i < n; ++i) y2[i] -= 2.0;
    for (auto& v : y2) v += 0.25 * rng.next_gaussian();
    prutf::StoppingConfig cfg;
    cfg.sigma = 0.25;
    const auto t3 = std::chrono::steady_clock::now();
    (void)prutf::detect_mprutf(y2, a.order, cfg);
    const auto t4 = std::chrono::steady_clock::now();

    const double path_s = std::chrono::duration<double>(t2 - t1).count();
    rows.push_back({n, ev, std::chrono::duration<double>(t1 - t0).count(), path_s,
                    ev > 0 ? ev / path_s : 0.0, std::chrono::duration<double>(t4 - t3).count()});
  }
  std::ostringstream os;
  if (a.as_json) {
    json j = json::array();
    for (const auto& r : rows)
      j.push_back({{"n", r.n},
                   {"events", r.events},
                   {"setup_s", r.setup_s},
                   {"path_s", r.path_s},
                   {"events_per_s", r.events_per_s},
                   {"detect_s", r.detect_s}});
    os << j.dump(2) << "\n";
  } else {
    os << "n,events,setup_s,path_s,events_per_s,detect_s\n";
    for (const auto& r : rows)
      os << r.n << ',' << r.events << ',' << fmt17(r.setup_s) << ',' << fmt17(r.path_s) << ','
         << fmt17(r.events_per_s) << ',' << fmt17(r.detect_s) << "\n";
  }
  write_text(a.output, os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "prutf: change point detection in piecewise polynomial signals via the trend "
      "filtering dual path"};
  app.require_subcommand(1);

  DetectArgs da;
  auto* det = app.add_subcommand(
      "detect",
      "detect change points in a CSV series; reported change points, event\n"
      "coordinates and the index column are 1-based");
  det->add_option("--input,-i", da.input, "CSV input: one numeric column, optional header; "
                                          "an optional second column is treated as an index")
      ->required();
  det->add_option("--order,-r", da.order, "polynomial order r >= 0 (0 = piecewise constant)")
      ->check(CLI::NonNegativeNumber);
  det->add_option("--alpha", da.alpha, "significance level of the stopping rule");
  det->add_option("--sigma", da.sigma, "noise scale: 'mad' (default) or a positive value");
  det->add_option("--method", da.method, "prutf | mprutf (staircase-safe, default)")
      ->check(CLI::IsMember({"prutf", "mprutf"}));
  det->add_flag("--per-block", da.per_block, "per-segment stopping thresholds");
  det->add_option("--max-steps", da.max_steps, "stop after this many path events");
  det->add_option("--output,-o", da.output, "output path ('-' = stdout, default)");
  det->add_option("--format", da.format, "json (default) | csv")
      ->check(CLI::IsMember({"json", "csv"}));

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "run replicated experiments on a scenario");
  sim->add_option("--scenario", sa.scenario, "pwc | pwl | teeth | wave");
  sim->add_option("--scenario-file", sa.scenario_file, "scenario description file");
  sim->add_option("--method", sa.method, "prutf | mprutf")
      ->check(CLI::IsMember({"prutf", "mprutf"}));
  sim->add_option("--replicates,-N", sa.replicates, "replicates per sigma");
  sim->add_option("--seed", sa.seed, "base seed; replicate k uses seed XOR k");
  sim->add_option("--sigma-grid", sa.sigma_grid, "comma-separated noise levels")
      ->delimiter(',');
  sim->add_option("--alpha", sa.alpha, "significance level of the stopping rule");
  sim->add_option("--rho", sa.rho, "AR(1) correlation for the noise (default iid)");
  sim->add_flag("--per-block", sa.per_block, "per-segment stopping thresholds");
  sim->add_option("--threads", sa.threads, "worker threads (default: PRUTF_THREADS or cores)");
  sim->add_option("--output,-o", sa.output, "aggregate CSV path ('-' = stdout)");
  sim->add_option("--detail", sa.detail, "optional per-replicate CSV path");

  BenchArgs ba;
  auto* ben = app.add_subcommand("bench", "time path construction across signal sizes");
  ben->add_option("--sizes", ba.sizes, "comma-separated n grid")->delimiter(',');
  ben->add_option("--order,-r", ba.order, "polynomial order")->check(CLI::NonNegativeNumber);
  ben->add_option("--events", ba.events, "path events to time per size");
  ben->add_option("--seed", ba.seed, "noise seed");
  ben->add_flag("--json", ba.as_json, "machine-readable output");
  ben->add_option("--output,-o", ba.output, "output path ('-' = stdout)");

  try {
    app.parse(argc, argv);
    if (det->parsed()) return cmd_detect(da);
    if (sim->parsed()) return cmd_simulate(sa);
    if (ben->parsed()) return cmd_bench(ba);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitBadInput;
  } catch (const prutf::DegenerateScale& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDegenerateScale;
  } catch (const prutf::CapExceeded& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCapExceeded;
  } catch (const prutf::InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
