#pragma once

// Brute-force reference implementations used by the unit tests and the
// acceptance runner. They share no code with the library beyond plain data
// types, and favor obviousness over speed.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "xscene/eval/metrics.hpp"
#include "xscene/mapgen/scene_map.hpp"
#include "xscene/sim/simulation.hpp"

namespace oracle {

using xscene::Vec2;
using xscene::mapgen::SceneMap;

inline bool close(double a, double b, double rel = 1e-12) {
  return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

inline bool maps_close(const SceneMap& a, const SceneMap& b, double rel = 1e-12) {
  if (a.width != b.width || a.height != b.height || a.data.size() != b.data.size()) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    if (!close(a.data[i], b.data[i], rel)) return false;
  return true;
}

// ---- occupancy grid ------------------------------------------------------------

inline double cross(Vec2 o, Vec2 a, Vec2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

inline bool on_segment(Vec2 p, Vec2 q, Vec2 r) {
  return std::min(p.x, q.x) <= r.x && r.x <= std::max(p.x, q.x) && std::min(p.y, q.y) <= r.y &&
         r.y <= std::max(p.y, q.y);
}

// Closed segment-segment intersection by orientation tests.
inline bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
  const double d1 = cross(q1, q2, p1), d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1), d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  if (d1 == 0 && on_segment(q1, q2, p1)) return true;
  if (d2 == 0 && on_segment(q1, q2, p2)) return true;
  if (d3 == 0 && on_segment(p1, p2, q1)) return true;
  if (d4 == 0 && on_segment(p1, p2, q2)) return true;
  return false;
}

inline bool inside_box(Vec2 p, double x0, double y0, double x1, double y1) {
  return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1;
}

// Segment touches the closed box iff an endpoint lies inside or it crosses an edge.
inline bool touches_box(Vec2 p, Vec2 q, double x0, double y0, double x1, double y1) {
  if (inside_box(p, x0, y0, x1, y1) || inside_box(q, x0, y0, x1, y1)) return true;
  const Vec2 c[4] = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
  for (int k = 0; k < 4; ++k)
    if (segments_intersect(p, q, c[k], c[(k + 1) % 4])) return true;
  return false;
}

inline int direction_channel(double dx, double dy) {
  if (dx == 0.0 && dy == 0.0) return -1;
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? 0 : 1;  // east, west
  return dy > 0 ? 3 : 2;                                      // north, south
}

/// Every consecutive displacement of every agent is tested against every cell
/// of the grid; a (agent, cell, channel) triple counts once.
inline SceneMap ogm(std::vector<xscene::sim::Frame> frames, int width, double cell, Vec2 origin,
                    xscene::SceneId scene, double timestamp) {
  std::sort(frames.begin(), frames.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
  std::set<std::tuple<std::uint64_t, int, int, int>> seen;
  for (std::size_t f = 1; f < frames.size(); ++f)
    for (const auto& now : frames[f].agents)
      for (const auto& before : frames[f - 1].agents) {
        if (before.id != now.id) continue;
        const int ch = direction_channel(now.position.x - before.position.x, now.position.y - before.position.y);
        if (ch < 0) continue;
        const Vec2 p{before.position.x - origin.x, before.position.y - origin.y};
        const Vec2 q{now.position.x - origin.x, now.position.y - origin.y};
        for (int row = 0; row < width; ++row)
          for (int col = 0; col < width; ++col)
            if (touches_box(p, q, col * cell, row * cell, (col + 1) * cell, (row + 1) * cell))
              seen.insert({now.id, row, col, ch});
      }
  SceneMap m(scene, timestamp, width, width, cell);
  for (const auto& [id, row, col, ch] : seen) m.data[(static_cast<std::size_t>(row) * width + col) * 4 + ch] += 1.0;
  return m;
}

// ---- errors and variance -------------------------------------------------------------

inline double mse(const SceneMap& a, const SceneMap& b) {
  long double sum = 0.0L;
  for (int row = 0; row < a.height; ++row)
    for (int col = 0; col < a.width; ++col)
      for (int ch = 0; ch < 4; ++ch) {
        const long double d = static_cast<long double>(a.at(row, col, ch)) - b.at(row, col, ch);
        sum += d * d;
      }
  return static_cast<double>(sum / (static_cast<long double>(a.width) * a.height * 4));
}

/// (1/N) sum_k mean over entries of (x_k - mean)^2, accumulated entry by entry.
inline double sample_variance(const std::vector<SceneMap>& maps) {
  const std::size_t entries = maps.front().data.size();
  long double total = 0.0L;
  for (std::size_t i = 0; i < entries; ++i) {
    long double mean = 0.0L;
    for (const auto& m : maps) mean += m.data[i];
    mean /= static_cast<long double>(maps.size());
    for (const auto& m : maps) total += (m.data[i] - mean) * (m.data[i] - mean);
  }
  return static_cast<double>(total / (static_cast<long double>(entries) * maps.size()));
}

/// Reproduces the window sampling of series_variance from fully materialized
/// runs: each run is simulated to its end as a frame vector, windows are cut
/// out by index and rasterized with the brute-force ogm above.
inline double series_variance(const xscene::sim::SceneLayout& layout, const xscene::control::ControlSeries& series,
                              const xscene::sim::SimConfig& sim_cfg, const xscene::mapgen::MapConfig& map_cfg,
                              const xscene::eval::VarianceConfig& cfg) {
  const auto nf = static_cast<std::size_t>(std::llround(map_cfg.window * map_cfg.frame_rate * 60.0));
  const auto total = static_cast<std::size_t>(std::llround(60.0 * series.samples.size() / sim_cfg.dt));
  std::vector<std::size_t> minutes;
  for (int k = 0; k < cfg.sample_times; ++k)
    minutes.push_back(static_cast<std::size_t>((k + 0.5) * static_cast<double>(series.samples.size()) / cfg.sample_times));

  const bool is_a = series.scene == xscene::SceneId::a;
  std::mt19937_64 rng(cfg.seed ^ (is_a ? 0x0aULL : 0x0bULL));
  std::vector<std::vector<SceneMap>> samples(minutes.size());
  for (int run = 0; run < cfg.simulations; ++run) {
    std::vector<std::pair<std::size_t, std::size_t>> windows;  // (time index, start frame)
    for (std::size_t k = 0; k < minutes.size(); ++k) {
      const auto it = static_cast<std::size_t>(std::llround((minutes[k] + 0.5) * 60.0 / sim_cfg.dt));
      const std::size_t lo = it >= nf ? it - nf : 0;
      const std::size_t hi = std::min(it, total - nf);
      std::uniform_int_distribution<std::size_t> pick(std::min(lo, hi), hi);
      for (int w = 0; w < cfg.windows; ++w) windows.push_back({k, pick(rng)});
    }
    xscene::sim::SimConfig run_cfg = sim_cfg;
    run_cfg.rng_seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(run) * 7919ULL + (is_a ? 1 : 2);
    const auto frames = xscene::sim::run_simulation(layout, series, run_cfg, series.duration_seconds());
    for (const auto& [k, start] : windows) {
      std::vector<xscene::sim::Frame> slice(frames.begin() + static_cast<std::ptrdiff_t>(start),
                                            frames.begin() + static_cast<std::ptrdiff_t>(start + nf));
      samples[k].push_back(ogm(std::move(slice), map_cfg.width, map_cfg.cell_size, map_cfg.origin, series.scene,
                               series.start_minute + static_cast<double>(minutes[k])));
    }
  }
  double v = 0.0;
  for (const auto& s : samples) v += sample_variance(s);
  return v / static_cast<double>(samples.size());
}

// ---- linear interpolation -------------------------------------------------------------

/// Picks the nearest and second-nearest (distinct time) history maps by
/// periodic distance, unrolls their times to the copy closest to t, and
/// evaluates the line through them at t, clamped at zero.
inline SceneMap linear(const std::vector<SceneMap>& history, double t, double period) {
  auto pdist = [&](double x, double y) {
    double best = std::abs(x - y);
    for (int k = -3; k <= 3; ++k) best = std::min(best, std::abs(x + k * period - y));
    return best;
  };
  auto unroll = [&](double x) {
    double best = x;
    for (int k = -3; k <= 3; ++k)
      if (std::abs(x + k * period - t) < std::abs(best - t)) best = x + k * period;
    return best;
  };
  std::size_t i2 = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (pdist(history[i].timestamp, t) < pdist(history[i2].timestamp, t)) i2 = i;
  std::size_t i1 = history.size();
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (pdist(history[i].timestamp, history[i2].timestamp) == 0.0) continue;
    if (i1 == history.size() || pdist(history[i].timestamp, t) < pdist(history[i1].timestamp, t)) i1 = i;
  }
  const double t1 = unroll(history[i1].timestamp), t2 = unroll(history[i2].timestamp);
  SceneMap out = history[i2];
  out.timestamp = t;
  for (std::size_t e = 0; e < out.data.size(); ++e) {
    const double s1 = history[i1].data[e], s2 = history[i2].data[e];
    out.data[e] = std::max(0.0, s1 + (s2 - s1) * (t - t1) / (t2 - t1));
  }
  return out;
}

// ---- statistics ------------------------------------------------------------------------

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const double cov = sxy - sx * sy / n;
  return cov / std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
}

}  // namespace oracle
