#pragma once

// Prediction-error report: one row per test map, method, seed and direction,
// aggregated into a grid of per-dataset means.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace xscene::eval {

struct MetricsRow {
  double rho = 0.0;
  double alpha = 0.0;
  std::string method;
  std::uint64_t seed = 0;  // 0 for methods without training
  std::string direction;   // "a->b" or "b->a"
  std::size_t index = 0;   // test map index
  double timestamp = 0.0;  // minutes
  double error = 0.0;
  int pn_target = 0;       // PN_t of the target scene at the timestamp
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MetricsRow, rho, alpha, method, seed, direction, index, timestamp, error, pn_target)

struct CellSummary {
  double rho = 0.0;
  double alpha = 0.0;
  std::string method;
  bool available = false;
  double mean = 0.0;                 // over every row of the cell
  double median_over_seeds = 0.0;    // median of the per-seed means
  std::vector<double> seed_means;
  double a_to_b = 0.0;
  double b_to_a = 0.0;
  std::size_t rows = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CellSummary, rho, alpha, method, available, mean, median_over_seeds, seed_means,
                                   a_to_b, b_to_a, rows)

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::map<double, double> variance;  // rho -> V_d
  std::vector<double> rhos;
  std::vector<double> alphas;
  std::vector<std::string> methods;

  /// Aggregate of one (rho, alpha, method) cell; `available` is false when no
  /// row exists (E2E without pairwise data).
  CellSummary cell(double rho, double alpha, const std::string& method) const {
    CellSummary c;
    c.rho = rho;
    c.alpha = alpha;
    c.method = method;
    std::map<std::uint64_t, std::pair<double, std::size_t>> per_seed;
    double sum = 0.0, ab = 0.0, ba = 0.0;
    std::size_t nab = 0, nba = 0;
    for (const auto& r : rows) {
      if (r.rho != rho || r.alpha != alpha || r.method != method) continue;
      ++c.rows;
      sum += r.error;
      auto& s = per_seed[r.seed];
      s.first += r.error;
      ++s.second;
      if (r.direction == "a->b") {
        ab += r.error;
        ++nab;
      } else {
        ba += r.error;
        ++nba;
      }
    }
    if (c.rows == 0) return c;
    c.available = true;
    c.mean = sum / static_cast<double>(c.rows);
    for (const auto& [seed, s] : per_seed) c.seed_means.push_back(s.first / static_cast<double>(s.second));
    c.median_over_seeds = median(c.seed_means);
    c.a_to_b = nab ? ab / static_cast<double>(nab) : 0.0;
    c.b_to_a = nba ? ba / static_cast<double>(nba) : 0.0;
    return c;
  }

  std::vector<CellSummary> grid() const {
    std::vector<CellSummary> out;
    for (double rho : rhos)
      for (double alpha : alphas)
        for (const auto& m : methods) out.push_back(cell(rho, alpha, m));
    return out;
  }

  std::string csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "rho,alpha,method,seed,direction,index,timestamp,error,pn_target\n";
    for (const auto& r : rows)
      out << r.rho << ',' << r.alpha << ',' << r.method << ',' << r.seed << ',' << r.direction << ',' << r.index << ','
          << r.timestamp << ',' << r.error << ',' << r.pn_target << '\n';
    return out.str();
  }

  /// Per-map curves averaged over seeds, with the target scene's PN_t alongside.
  std::string curves_csv() const {
    using Key = std::tuple<double, double, std::string, std::string, std::size_t>;
    std::map<Key, std::tuple<double, std::size_t, double, int>> acc;
    for (const auto& r : rows) {
      auto& [sum, n, t, pn] = acc[{r.rho, r.alpha, r.method, r.direction, r.index}];
      sum += r.error;
      ++n;
      t = r.timestamp;
      pn = r.pn_target;
    }
    std::ostringstream out;
    out.precision(17);
    out << "rho,alpha,method,direction,index,timestamp,error,pn_target\n";
    for (const auto& [k, v] : acc) {
      const auto& [rho, alpha, method, dir, idx] = k;
      const auto& [sum, n, t, pn] = v;
      out << rho << ',' << alpha << ',' << method << ',' << dir << ',' << idx << ',' << t << ','
          << sum / static_cast<double>(n) << ',' << pn << '\n';
    }
    return out.str();
  }

  /// Grid summary: per-dataset variance and per-method cells.
  nlohmann::json table() const {
    nlohmann::json j;
    j["rhos"] = rhos;
    j["alphas"] = alphas;
    j["methods"] = methods;
    nlohmann::json var = nlohmann::json::array();
    for (const auto& [rho, v] : variance) var.push_back({{"rho", rho}, {"v_d", v}});
    j["variance"] = var;
    j["cells"] = grid();
    return j;
  }

  /// Fixed-width text rendering of the grid (rows: method, columns: datasets).
  static std::string fmt2(double v) {
    char b[16];
    std::snprintf(b, sizeof b, "%.2f", v);
    return b;
  }

  std::string text_table() const {
    std::ostringstream out;
    char buf[64];
    out << "method   ";
    for (double rho : rhos)
      for (double alpha : alphas) {
        std::snprintf(buf, sizeof buf, " %13s", ("r" + fmt2(rho) + "/a" + std::to_string(static_cast<int>(std::lround(alpha * 100.0))) + "%").c_str());
        out << buf;
      }
    out << '\n';
    auto row = [&](const std::string& name, auto value) {
      std::snprintf(buf, sizeof buf, "%-9s", name.c_str());
      out << buf;
      for (double rho : rhos)
        for (double alpha : alphas) {
          const auto v = value(rho, alpha);
          if (v) std::snprintf(buf, sizeof buf, " %13.4f", *v);
          else std::snprintf(buf, sizeof buf, " %13s", "-");
          out << buf;
        }
      out << '\n';
    };
    row("V_d", [&](double rho, double) -> std::optional<double> {
      auto it = variance.find(rho);
      if (it == variance.end()) return std::nullopt;
      return it->second;
    });
    for (const auto& m : methods)
      row(m, [&](double rho, double alpha) -> std::optional<double> {
        const auto c = cell(rho, alpha, m);
        if (!c.available) return std::nullopt;
        return c.mean;
      });
    return out.str();
  }
};

}  // namespace xscene::eval
