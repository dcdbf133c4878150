#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "prutf/detect.hpp"
#include "prutf/rng.hpp"

namespace prutf {

struct NoiseSpec {
  enum class Kind { Iid, Ar1 };
  Kind kind = Kind::Iid;
  double sigma = 1.0;
  double rho = 0.0;
};

struct Scenario {
  std::string name;
  std::size_t n = 0;
  int r = 0;
  std::vector<std::size_t> changePoints;             // 1-based, strictly increasing in (0, n)
  std::vector<std::vector<double>> coefficients;     // per segment, r+1 each, basis x = i/n
  NoiseSpec noise;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < static_cast<std::size_t>(r) + 2) throw InvalidInput("scenario: n too small for r");
    std::size_t prev = 0;
    for (std::size_t t : changePoints) {
      if (t <= prev || t >= n) throw InvalidInput("scenario: change points must increase in (0, n)");
      prev = t;
    }
    if (coefficients.size() != changePoints.size() + 1)
      throw InvalidInput("scenario: need one coefficient set per segment");
    for (const auto& c : coefficients)
      if (c.size() != static_cast<std::size_t>(r) + 1)
        throw InvalidInput("scenario: each segment needs r+1 coefficients");
    if (std::abs(noise.rho) >= 1.0) throw InvalidInput("scenario: |rho| must be < 1");
    if (noise.sigma < 0.0) throw InvalidInput("scenario: sigma must be nonnegative");
  }
};

inline std::vector<double> true_signal(const Scenario& s) {
  s.validate();
  std::vector<double> f(s.n);
  std::vector<std::size_t> bounds{0};
  bounds.insert(bounds.end(), s.changePoints.begin(), s.changePoints.end());
  bounds.push_back(s.n);
  for (std::size_t seg = 0; seg + 1 < bounds.size(); ++seg) {
    const auto& c = s.coefficients[seg];
    for (std::size_t i = bounds[seg]; i < bounds[seg + 1]; ++i) {
      const double x = static_cast<double>(i + 1) / static_cast<double>(s.n);
      double v = c.back();
      for (std::size_t j = c.size() - 1; j-- > 0;) v = v * x + c[j];
      f[i] = v;
    }
  }
  return f;
}

// y = f + eps. Iid: eps ~ N(0, sigma^2). Ar1: eps_1 ~ N(0, sigma^2) (stationary
// start), eps_i = rho*eps_{i-1} + e_i with e_i ~ N(0, (1-rho^2) sigma^2), so the
// marginal variance stays sigma^2. Deterministic given the scenario seed.
inline std::pair<std::vector<double>, std::vector<double>> generate(const Scenario& s) {
  std::vector<double> f = true_signal(s);
  std::vector<double> y(f);
  CounterRng rng(s.seed);
  const double rho = s.noise.kind == NoiseSpec::Kind::Ar1 ? s.noise.rho : 0.0;
  const double innov = s.noise.sigma * std::sqrt(1.0 - rho * rho);
  double eps = 0.0;
  for (std::size_t i = 0; i < s.n; ++i) {
    const double g = rng.next_gaussian();
    eps = (i == 0) ? s.noise.sigma * g : rho * eps + innov * g;
    y[i] += eps;
  }
  return {std::move(y), std::move(f)};
}

inline double metric_mse(std::span<const double> f_hat, std::span<const double> f_true) {
  if (f_hat.size() != f_true.size()) throw InvalidInput("metric_mse: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < f_hat.size(); ++i) {
    const double d = f_hat[i] - f_true[i];
    acc += d * d;
  }
  return acc / static_cast<double>(f_hat.size());
}

// Scaled Hausdorff distance between change point sets; one empty set against a
// nonempty one counts as n (worst case keeps averages finite).
inline double metric_hausdorff(std::span<const std::size_t> tau_hat,
                               std::span<const std::size_t> tau_true, std::size_t n) {
  if (tau_hat.empty() && tau_true.empty()) return 0.0;
  if (tau_hat.empty() || tau_true.empty()) return static_cast<double>(n);
  auto directed = [](std::span<const std::size_t> from, std::span<const std::size_t> to) {
    double worst = 0.0;
    for (std::size_t a : from) {
      double best = 1e300;
      for (std::size_t b : to)
        best = std::min(best, std::abs(static_cast<double>(a) - static_cast<double>(b)));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(tau_hat, tau_true), directed(tau_true, tau_hat));
}

// ---- built-in benchmark scenarios ----

inline Scenario scenario_pwc() {
  Scenario s;
  s.name = "pwc";
  s.n = 2024;
  s.r = 0;
  s.changePoints = {205, 308, 512, 820, 902, 1332, 1557, 1659};
  const double jumps[] = {1.464, -0.656, 0.098, 1.830, 0.537, 0.768, -0.574, -3.335};
  double level = 0.0;
  s.coefficients.push_back({level});
  for (double j : jumps) {
    level += j;
    s.coefficients.push_back({level});
  }
  s.noise = {NoiseSpec::Kind::Iid, 1.0, 0.0};
  return s;
}

inline Scenario scenario_pwl() {
  Scenario s;
  s.name = "pwl";
  s.n = 1408;
  s.r = 1;
  s.changePoints = {256, 512, 768, 1024, 1152, 1280, 1344};
  const double icpt[] = {0.111, 0.553, -0.481, 3.002, -7.169, -0.030, 7.217, -0.958};
  const double slope[] = {-8, 6, -3, -11, 12, 4, -7, 8};
  for (int k = 0; k < 8; ++k) s.coefficients.push_back({icpt[k], slope[k]});
  s.noise = {NoiseSpec::Kind::Iid, 1.0, 0.0};
  return s;
}

namespace detail {

// Shared modular regimes of the frequent-change signals: low branch when
// (t mod period) falls in {1, ..., period/2}, with period 10/20/40/100 on
// [1,50], [51,150], [151,250], [251,500].
inline bool low_branch(std::size_t t) {
  const std::size_t period = t <= 50 ? 10 : t <= 150 ? 20 : t <= 250 ? 40 : 100;
  const std::size_t md = t % period;
  return md >= 1 && md <= period / 2;
}

}  // namespace detail

// Teeth signal: f alternates between 0 and 1 on the modular regimes; 29 changes.
inline Scenario scenario_teeth() {
  Scenario s;
  s.name = "teeth";
  s.n = 500;
  s.r = 0;
  bool cur = detail::low_branch(1);
  for (std::size_t t = 2; t <= s.n + 1; ++t) {
    const bool b = t <= s.n ? detail::low_branch(t) : !cur;
    if (b != cur || t == s.n + 1) {
      s.coefficients.push_back({cur ? 0.0 : 1.0});
      if (t <= s.n && b != cur) s.changePoints.push_back(t - 1);
      cur = b;
    }
  }
  s.noise = {NoiseSpec::Kind::Iid, 1.0, 0.0};
  return s;
}

// Wave signal: f_t = -1 + c*t on the low branch and 1 - c*t on the high branch with
// c = 0.4, 0.2, 0.1, 0.04 per regime. Slopes are stored in the x = t/n basis (c*n).
inline Scenario scenario_wave() {
  Scenario s;
  s.name = "wave";
  s.n = 500;
  s.r = 1;
  const double n = 500.0;
  auto slope_of = [](std::size_t t) { return t <= 50 ? 0.4 : t <= 150 ? 0.2 : t <= 250 ? 0.1 : 0.04; };
  auto branch = [](std::size_t t) {
    const std::size_t period = t <= 50 ? 10 : t <= 150 ? 20 : t <= 250 ? 40 : 100;
    const std::size_t md = t % period;
    return md >= 1 && md <= period / 2;
  };
  bool cur = branch(1);
  std::size_t seg_start = 1;
  for (std::size_t t = 2; t <= s.n + 1; ++t) {
    const bool b = t <= s.n ? branch(t) : !cur;
    if (b != cur || t == s.n + 1) {
      const double c = slope_of(seg_start);
      if (cur)
        s.coefficients.push_back({-1.0, c * n});
      else
        s.coefficients.push_back({1.0, -c * n});
      if (t <= s.n) s.changePoints.push_back(t - 1);
      cur = b;
      seg_start = t;
    }
  }
  s.noise = {NoiseSpec::Kind::Iid, 1.0, 0.0};
  return s;
}

inline Scenario named_scenario(const std::string& name) {
  if (name == "pwc") return scenario_pwc();
  if (name == "pwl") return scenario_pwl();
  if (name == "teeth") return scenario_teeth();
  if (name == "wave") return scenario_wave();
  throw InvalidInput("unknown scenario: " + name);
}

// ---- scenario file format (versioned key = value text) ----

inline void write_scenario_file(const Scenario& s, std::ostream& os) {
  os << "prutf-scenario v1\n";
  os << "name = " << s.name << "\n";
  os << "n = " << s.n << "\n";
  os << "r = " << s.r << "\n";
  os << "changepoints =";
  for (std::size_t t : s.changePoints) os << ' ' << t;
  os << "\n";
  os << "coefficients =";
  char buf[64];
  for (std::size_t k = 0; k < s.coefficients.size(); ++k) {
    if (k) os << " ;";
    for (double c : s.coefficients[k]) {
      std::snprintf(buf, sizeof buf, " %.17g", c);
      os << buf;
    }
  }
  os << "\n";
  if (s.noise.kind == NoiseSpec::Kind::Iid) {
    std::snprintf(buf, sizeof buf, "%.17g", s.noise.sigma);
    os << "noise = iid " << buf << "\n";
  } else {
    os << "noise = ar1 ";
    std::snprintf(buf, sizeof buf, "%.17g", s.noise.rho);
    os << buf << ' ';
    std::snprintf(buf, sizeof buf, "%.17g", s.noise.sigma);
    os << buf << "\n";
  }
  os << "seed = " << s.seed << "\n";
}

inline Scenario read_scenario_file(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.find("prutf-scenario v1") != 0)
    throw InvalidInput("scenario file: missing 'prutf-scenario v1' header");
  Scenario s;
  bool have_coef = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidInput("scenario file: expected 'key = value'");
    auto trim = [](std::string t) {
      const auto a = t.find_first_not_of(" \t\r");
      const auto b = t.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : t.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    std::istringstream vs(val);
    if (key == "name") {
      s.name = val;
    } else if (key == "n") {
      if (!(vs >> s.n)) throw InvalidInput("scenario file: bad n");
    } else if (key == "r") {
      if (!(vs >> s.r)) throw InvalidInput("scenario file: bad r");
    } else if (key == "changepoints") {
      std::size_t t;
      while (vs >> t) s.changePoints.push_back(t);
    } else if (key == "coefficients") {
      std::vector<double> cur;
      std::string tok;
      while (vs >> tok) {
        if (tok == ";") {
          s.coefficients.push_back(cur);
          cur.clear();
        } else {
          try {
            cur.push_back(std::stod(tok));
          } catch (...) {
            throw InvalidInput("scenario file: bad coefficient '" + tok + "'");
          }
        }
      }
      s.coefficients.push_back(cur);
      have_coef = true;
    } else if (key == "noise") {
      std::string kind;
      vs >> kind;
      if (kind == "iid") {
        s.noise.kind = NoiseSpec::Kind::Iid;
        if (!(vs >> s.noise.sigma)) throw InvalidInput("scenario file: bad iid noise");
      } else if (kind == "ar1") {
        s.noise.kind = NoiseSpec::Kind::Ar1;
        if (!(vs >> s.noise.rho >> s.noise.sigma))
          throw InvalidInput("scenario file: bad ar1 noise");
      } else {
        throw InvalidInput("scenario file: unknown noise kind '" + kind + "'");
      }
    } else if (key == "seed") {
      if (!(vs >> s.seed)) throw InvalidInput("scenario file: bad seed");
    } else {
      throw InvalidInput("scenario file: unknown key '" + key + "'");
    }
  }
  if (!have_coef) throw InvalidInput("scenario file: missing coefficients");
  s.validate();
  return s;
}

// ---- replicated experiments ----

enum class Method { Prutf, Mprutf };

inline Method method_from_string(const std::string& m) {
  if (m == "prutf") return Method::Prutf;
  if (m == "mprutf") return Method::Mprutf;
  throw InvalidInput("unknown method: " + m);
}

struct ReplicateRecord {
  double sigma = 0.0;
  std::size_t replicate = 0;
  std::size_t detected = 0;
  double mse = 0.0;
  double hausdorff = 0.0;
  double runtime_s = 0.0;
};

struct ExperimentRow {
  double sigma = 0.0;
  double mean_ncpts = 0.0;
  double mean_mse = 0.0;
  double mean_hausdorff = 0.0;
  double mean_runtime_s = 0.0;
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;
  std::vector<ReplicateRecord> detail;  // grouped by sigma, replicate-ordered
};

// Pairwise summation keeps aggregation independent of worker scheduling.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.subspan(0, h)) + pairwise_sum(v.subspan(h));
}

inline std::size_t resolve_threads(std::size_t requested, std::size_t jobs) {
  std::size_t t = requested;
  if (t == 0) {
    t = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("PRUTF_THREADS")) {
      const long cap = std::strtol(env, nullptr, 10);
      if (cap > 0) t = std::min<std::size_t>(t, static_cast<std::size_t>(cap));
    }
  }
  return std::max<std::size_t>(1, std::min(t, jobs));
}

// Runs N replicates per sigma; replicate k draws with seed ^ k. Results are bitwise
// independent of the thread count: records land in preallocated slots and means use
// pairwise summation in replicate order.
inline ExperimentResult run_experiment(const Scenario& base, Method method, std::size_t replicates,
                                       std::span<const double> sigma_grid,
                                       const StoppingConfig& stop_base = {},
                                       std::size_t threads = 0) {
  if (replicates == 0) throw InvalidInput("run_experiment: need at least one replicate");
  if (sigma_grid.empty()) throw InvalidInput("run_experiment: empty sigma grid");
  base.validate();
  ExperimentResult out;
  out.detail.resize(sigma_grid.size() * replicates);
  const std::size_t nthreads = resolve_threads(threads, replicates);
  for (std::size_t gi = 0; gi < sigma_grid.size(); ++gi) {
    const double sigma = sigma_grid[gi];
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const std::size_t k = next.fetch_add(1);
        if (k >= replicates) return;
        Scenario s = base;
        s.noise.sigma = sigma;
        s.seed = base.seed ^ static_cast<std::uint64_t>(k);
        const auto [y, f_true] = generate(s);
        StoppingConfig cfg = stop_base;
        cfg.sigma = sigma;  // known noise scale in simulations
        const auto t0 = std::chrono::steady_clock::now();
        const DetectionResult res = method == Method::Mprutf ? detect_mprutf(y, s.r, cfg)
                                                             : detect_prutf(y, s.r, cfg);
        const auto t1 = std::chrono::steady_clock::now();
        ReplicateRecord rec;
        rec.sigma = sigma;
        rec.replicate = k;
        rec.detected = res.changePoints.size();
        rec.mse = metric_mse(res.fitted, f_true);
        rec.hausdorff = metric_hausdorff(res.changePoints, s.changePoints, s.n);
        rec.runtime_s = std::chrono::duration<double>(t1 - t0).count();
        out.detail[gi * replicates + k] = rec;
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    std::vector<double> counts(replicates), mses(replicates), hds(replicates), rts(replicates);
    for (std::size_t k = 0; k < replicates; ++k) {
      const auto& rec = out.detail[gi * replicates + k];
      counts[k] = static_cast<double>(rec.detected);
      mses[k] = rec.mse;
      hds[k] = rec.hausdorff;
      rts[k] = rec.runtime_s;
    }
    const double inv = 1.0 / static_cast<double>(replicates);
    out.rows.push_back({sigma, pairwise_sum(counts) * inv, pairwise_sum(mses) * inv,
                        pairwise_sum(hds) * inv, pairwise_sum(rts) * inv});
  }
  return out;
}

}  // namespace prutf
