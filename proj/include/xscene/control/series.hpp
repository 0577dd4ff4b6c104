#pragma once

// Per-minute control schedules (people count PN_t and inbound fraction FD_t)
// and the correlated two-scene generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xscene/common/error.hpp"
#include "xscene/common/scene.hpp"

namespace xscene::control {

struct ControlSample {
  int people = 0;                 // PN_t
  double inbound_fraction = 0.5;  // FD_t
  friend bool operator==(const ControlSample&, const ControlSample&) = default;
};

struct ControlSeries {
  SceneId scene = SceneId::a;
  int start_minute = 480;  // wall clock, 480 = 8:00
  std::vector<ControlSample> samples;  // one per minute

  double duration_seconds() const { return 60.0 * static_cast<double>(samples.size()); }

  /// Sample governing simulation time `seconds` (measured from the series start).
  const ControlSample& at(double seconds) const {
    auto idx = static_cast<std::size_t>(std::floor(seconds / 60.0 + 1e-9));
    if (idx >= samples.size()) fail(ErrorKind::input, "control series does not cover t=" + std::to_string(seconds) + " s");
    return samples[idx];
  }

  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      require(s.people >= 0, ErrorKind::input, "negative PN at minute index " + std::to_string(i));
      require(s.inbound_fraction >= 0.0 && s.inbound_fraction <= 1.0, ErrorKind::input,
              "FD outside [0,1] at minute index " + std::to_string(i));
    }
  }

  std::vector<double> people_series() const {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.people);
    return out;
  }

  friend bool operator==(const ControlSeries&, const ControlSeries&) = default;
};

/// Gaussian bump in the shared people-count profile (minutes from series start).
struct Bump {
  double center = 0.0;
  double width = 30.0;
  double amplitude = 0.0;
};

/// FD_t schedule: constant `morning` until ramp_start, linear ramp to `evening` at ramp_end.
struct DirectionProfile {
  double morning = 0.7;
  double evening = 0.3;
  double ramp_start = 180.0;
  double ramp_end = 420.0;

  double at(double minute) const {
    if (minute <= ramp_start) return morning;
    if (minute >= ramp_end) return evening;
    const double u = (minute - ramp_start) / (ramp_end - ramp_start);
    return morning + u * (evening - morning);
  }
};

struct CorrelationPattern {
  double target_rho = 1.0;
  double baseline = 15.0;
  std::vector<Bump> shared_profile = {
      {30.0, 25.0, 45.0},   // morning rush
      {240.0, 30.0, 30.0},  // noon
      {360.0, 20.0, 25.0},  // early afternoon classes
      {570.0, 30.0, 45.0},  // evening rush
      {690.0, 20.0, 15.0},
  };
  double independent_noise_scale = 1.0;  // random-walk step std before smoothing
  int smoothing_minutes = 15;
  double forced_noise_weight = 0.0;  // lower bound on the noise share of the blend
  double tolerance = 0.03;
  DirectionProfile direction;
  int start_minute = 480;
  std::uint64_t rng_seed = 1;
};

struct GeneratedPair {
  ControlSeries a;
  ControlSeries b;
  double blend_weight = 1.0;  // share of the shared profile in scene b
  double achieved_rho = 1.0;
};

/// Sample Pearson correlation coefficient.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), ErrorKind::input, "pearson: series lengths differ");
  require(xs.size() >= 2, ErrorKind::input, "pearson: need at least two samples");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, ErrorKind::input, "pearson: correlation undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace detail {

inline std::vector<double> moving_average(const std::vector<double>& xs, int window) {
  if (window <= 1) return xs;
  const int half = window / 2;
  const int n = static_cast<int>(xs.size());
  std::vector<double> out(xs.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + (window - 1 - half));
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += xs[j];
    out[i] = s / (hi - lo + 1);
  }
  return out;
}

inline double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double stddev(const std::vector<double>& xs) {
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace detail

inline std::vector<double> shared_profile(const CorrelationPattern& pattern, int duration_minutes) {
  std::vector<double> out(duration_minutes, pattern.baseline);
  for (int m = 0; m < duration_minutes; ++m) {
    for (const auto& b : pattern.shared_profile) {
      const double z = (m - b.center) / b.width;
      out[m] += b.amplitude * std::exp(-0.5 * z * z);
    }
  }
  return out;
}

/// Generates the scene-a / scene-b control pair. Scene a follows the shared
/// profile; scene b blends it with smoothed independent noise, with the blend
/// weight bisected so that the Pearson correlation of the emitted integer
/// PN series lands within `tolerance` of `target_rho`.
inline GeneratedPair generate_pair(const CorrelationPattern& pattern, int duration_minutes) {
  require(duration_minutes >= 2, ErrorKind::input, "generate_pair: duration must be at least 2 minutes");
  require(pattern.target_rho >= 0.0 && pattern.target_rho <= 1.0, ErrorKind::config,
          "generate_pair: target_rho must lie in [0,1]");
  require(pattern.forced_noise_weight >= 0.0 && pattern.forced_noise_weight <= 1.0, ErrorKind::config,
          "generate_pair: forced_noise_weight must lie in [0,1]");

  const std::vector<double> profile = shared_profile(pattern, duration_minutes);
  const double p_mean = detail::mean(profile);
  const double p_std = detail::stddev(profile);
  require(p_std > 1e-9, ErrorKind::config, "generate_pair: shared profile is constant; correlation is undefined");

  std::mt19937_64 rng(pattern.rng_seed);
  std::normal_distribution<double> step(0.0, pattern.independent_noise_scale);
  std::vector<double> walk(duration_minutes);
  double x = 0.0;
  for (auto& w : walk) {
    x += step(rng);
    w = x;
  }
  std::vector<double> noise = detail::moving_average(walk, pattern.smoothing_minutes);

  // Remove the component along the centered profile so the noise is exactly
  // uncorrelated with it, then match the profile's spread.
  std::vector<double> pc(profile.size());
  for (std::size_t i = 0; i < profile.size(); ++i) pc[i] = profile[i] - p_mean;
  const double n_mean = detail::mean(noise);
  for (auto& v : noise) v -= n_mean;
  const double proj = std::inner_product(noise.begin(), noise.end(), pc.begin(), 0.0) /
                      std::inner_product(pc.begin(), pc.end(), pc.begin(), 0.0);
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] -= proj * pc[i];
  const double n_std = detail::stddev(noise);
  const bool have_noise = n_std > 1e-12;
  if (have_noise)
    for (auto& v : noise) v *= p_std / n_std;

  std::vector<double> a_people(profile.size());
  for (std::size_t i = 0; i < profile.size(); ++i) a_people[i] = std::max(0.0, std::round(profile[i]));

  auto blend = [&](double w) {
    std::vector<double> mixed(profile.size());
    for (std::size_t i = 0; i < profile.size(); ++i) mixed[i] = w * pc[i] + (1.0 - w) * (have_noise ? noise[i] : 0.0);
    const double m_std = detail::stddev(mixed);
    const double scale = m_std > 0.0 ? p_std / m_std : 0.0;
    for (auto& v : mixed) v = std::max(0.0, std::round(p_mean + scale * v));
    return mixed;
  };
  auto rho_at = [&](double w) {
    const auto b = blend(w);
    return pearson(a_people, b);
  };

  const double w_max = 1.0 - pattern.forced_noise_weight;
  double w = w_max;
  double rho = rho_at(w_max);
  if (!(pattern.target_rho >= 1.0 && w_max >= 1.0)) {
    double lo = 0.0, hi = w_max;
    // Pearson of the blend grows monotonically with w (noise is orthogonal to the profile).
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (rho_at(mid) < pattern.target_rho) lo = mid; else hi = mid;
    }
    const double r_lo = rho_at(lo), r_hi = rho_at(hi);
    if (std::abs(r_lo - pattern.target_rho) <= std::abs(r_hi - pattern.target_rho)) {
      w = lo; rho = r_lo;
    } else {
      w = hi; rho = r_hi;
    }
  }
  if (std::abs(rho - pattern.target_rho) > pattern.tolerance) {
    std::ostringstream msg;
    msg << "generate_pair: target rho " << pattern.target_rho << " unreachable; best achieved " << rho
        << " at blend weight " << w << " (max weight " << w_max << ", tolerance " << pattern.tolerance
        << "); widen the tolerance or lower forced_noise_weight";
    fail(ErrorKind::unreachable, msg.str());
  }

  const auto b_people = blend(w);
  GeneratedPair out;
  out.a.scene = SceneId::a;
  out.b.scene = SceneId::b;
  out.a.start_minute = out.b.start_minute = pattern.start_minute;
  for (int m = 0; m < duration_minutes; ++m) {
    const double fd = pattern.direction.at(m);
    out.a.samples.push_back({static_cast<int>(a_people[m]), fd});
    out.b.samples.push_back({static_cast<int>(b_people[m]), fd});
  }
  out.blend_weight = w;
  out.achieved_rho = rho;
  return out;
}

// ---- serialization ----------------------------------------------------------

inline std::string to_csv(const ControlSeries& s) {
  std::ostringstream out;
  out << "minute,PN,FD\n";
  out.precision(17);
  for (std::size_t i = 0; i < s.samples.size(); ++i)
    out << s.start_minute + static_cast<int>(i) << ',' << s.samples[i].people << ',' << s.samples[i].inbound_fraction << '\n';
  return out.str();
}

inline ControlSeries from_csv(const std::string& text, SceneId scene) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::input, "control CSV: empty input");
  require(line.rfind("minute,PN,FD", 0) == 0, ErrorKind::input, "control CSV: unexpected header '" + line + "'");
  ControlSeries s;
  s.scene = scene;
  int expected = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f0, f1, f2;
    std::getline(row, f0, ',');
    std::getline(row, f1, ',');
    std::getline(row, f2, ',');
    try {
      const int minute = std::stoi(f0);
      if (expected < 0) s.start_minute = minute;
      else require(minute == expected, ErrorKind::input, "control CSV: non-uniform minute spacing at " + f0);
      expected = minute + 1;
      s.samples.push_back({std::stoi(f1), std::stod(f2)});
    } catch (const std::invalid_argument&) {
      fail(ErrorKind::input, "control CSV: malformed row '" + line + "'");
    }
  }
  s.validate();
  return s;
}

inline void to_json(nlohmann::json& j, const Bump& b) {
  j = {{"center", b.center}, {"width", b.width}, {"amplitude", b.amplitude}};
}
inline void from_json(const nlohmann::json& j, Bump& b) {
  b.center = j.at("center");
  b.width = j.at("width");
  b.amplitude = j.at("amplitude");
}
inline void to_json(nlohmann::json& j, const DirectionProfile& d) {
  j = {{"morning", d.morning}, {"evening", d.evening}, {"ramp_start", d.ramp_start}, {"ramp_end", d.ramp_end}};
}
inline void from_json(const nlohmann::json& j, DirectionProfile& d) {
  d.morning = j.value("morning", d.morning);
  d.evening = j.value("evening", d.evening);
  d.ramp_start = j.value("ramp_start", d.ramp_start);
  d.ramp_end = j.value("ramp_end", d.ramp_end);
}
inline void to_json(nlohmann::json& j, const CorrelationPattern& p) {
  j = {{"target_rho", p.target_rho},
       {"baseline", p.baseline},
       {"shared_profile", p.shared_profile},
       {"independent_noise_scale", p.independent_noise_scale},
       {"smoothing_minutes", p.smoothing_minutes},
       {"forced_noise_weight", p.forced_noise_weight},
       {"tolerance", p.tolerance},
       {"direction", p.direction},
       {"start_minute", p.start_minute},
       {"rng_seed", p.rng_seed}};
}
inline void from_json(const nlohmann::json& j, CorrelationPattern& p) {
  p.target_rho = j.value("target_rho", p.target_rho);
  p.baseline = j.value("baseline", p.baseline);
  if (j.contains("shared_profile")) p.shared_profile = j.at("shared_profile").get<std::vector<Bump>>();
  p.independent_noise_scale = j.value("independent_noise_scale", p.independent_noise_scale);
  p.smoothing_minutes = j.value("smoothing_minutes", p.smoothing_minutes);
  p.forced_noise_weight = j.value("forced_noise_weight", p.forced_noise_weight);
  p.tolerance = j.value("tolerance", p.tolerance);
  if (j.contains("direction")) p.direction = j.at("direction").get<DirectionProfile>();
  p.start_minute = j.value("start_minute", p.start_minute);
  p.rng_seed = j.value("rng_seed", p.rng_seed);
}

}  // namespace xscene::control
