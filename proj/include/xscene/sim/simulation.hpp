#pragma once

// Social-force pedestrian simulator. One Simulator instance is a single
// deterministic run: the same layout, control series, config and seed always
// produce the same frame stream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "xscene/common/error.hpp"
#include "xscene/common/geometry.hpp"
#include "xscene/control/series.hpp"
#include "xscene/sim/layout.hpp"

namespace xscene::sim {

struct SimConfig {
  double dt = 0.1;
  double relaxation_time = 0.5;
  double repulsion_strength = 2.1;
  double repulsion_range = 0.35;
  double wall_strength = 2.1;
  double wall_range = 0.35;
  double interaction_cutoff = 3.5;  // pairs farther apart than this exert no force
  double min_distance = 0.05;
  double capture_radius = 0.5;
  double speed_cap_factor = 1.3;
  double desired_speed_mean = 1.34;
  double desired_speed_std = 0.26;
  double min_desired_speed = 0.1;
  double path_jitter = 1.5;  // per-agent uniform offset of spawn point and interior waypoints
  std::uint64_t rng_seed = 1;

  void validate() const {
    require(dt > 0.0, ErrorKind::config, "sim: dt must be positive");
    require(relaxation_time > 0.0, ErrorKind::config, "sim: relaxation_time must be positive");
    require(repulsion_strength >= 0.0 && repulsion_range >= 0.0, ErrorKind::config, "sim: repulsion terms must be non-negative");
    require(wall_strength >= 0.0 && wall_range >= 0.0, ErrorKind::config, "sim: wall terms must be non-negative");
    require(interaction_cutoff >= 0.0 && min_distance > 0.0, ErrorKind::config, "sim: distances must be non-negative");
    require(capture_radius > 0.0, ErrorKind::config, "sim: capture_radius must be positive");
    require(speed_cap_factor >= 1.0, ErrorKind::config, "sim: speed_cap_factor must be >= 1");
    require(desired_speed_mean > 0.0 && desired_speed_std >= 0.0, ErrorKind::config, "sim: desired speed distribution invalid");
    require(min_desired_speed > 0.0, ErrorKind::config, "sim: min_desired_speed must be positive");
    require(path_jitter >= 0.0, ErrorKind::config, "sim: path_jitter must be non-negative");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SimConfig, dt, relaxation_time, repulsion_strength, repulsion_range,
                                                wall_strength, wall_range, interaction_cutoff, min_distance,
                                                capture_radius, speed_cap_factor, desired_speed_mean,
                                                desired_speed_std, min_desired_speed, path_jitter, rng_seed)

struct AgentState {
  std::uint64_t id = 0;
  Vec2 position;
  Vec2 velocity;
  double desired_speed = 1.34;
  std::vector<Vec2> path;  // this agent's (jittered) waypoint chain
  std::size_t waypoint_cursor = 0;
  bool inbound = true;

  bool exhausted() const { return waypoint_cursor >= path.size(); }
};

/// What a frame records about an agent.
struct AgentSample {
  std::uint64_t id = 0;
  Vec2 position;
  Vec2 velocity;
  friend bool operator==(const AgentSample&, const AgentSample&) = default;
};

struct Frame {
  double time = 0.0;
  std::vector<AgentSample> agents;
  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Advances every agent by one dt: goal attraction toward the current
/// waypoint, pairwise exponential repulsion and wall repulsion, integrated
/// with semi-implicit Euler and a per-agent speed cap.
inline std::vector<AgentState> social_force_step(std::vector<AgentState> agents, const SceneLayout& layout,
                                                 const SimConfig& cfg) {
  const std::size_t n = agents.size();
  std::vector<Vec2> accel(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = agents[i];
    if (a.exhausted()) continue;
    const Vec2 to_goal = a.path[a.waypoint_cursor] - a.position;
    const double dist = norm(to_goal);
    const Vec2 heading = dist > 0.0 ? to_goal * (1.0 / dist) : Vec2{};
    accel[i] += (heading * a.desired_speed - a.velocity) * (1.0 / cfg.relaxation_time);
  }

  const double cutoff_sq = cfg.interaction_cutoff * cfg.interaction_cutoff;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      Vec2 d = agents[i].position - agents[j].position;
      const double d_sq = norm_sq(d);
      if (d_sq > cutoff_sq) continue;
      double dist = std::sqrt(d_sq);
      Vec2 dir;
      if (dist > 0.0) {
        dir = d * (1.0 / dist);
      } else {
        // Coincident agents: push apart along x, lower id to the west.
        dir = agents[i].id < agents[j].id ? Vec2{-1.0, 0.0} : Vec2{1.0, 0.0};
      }
      dist = std::max(dist, cfg.min_distance);
      const Vec2 f = dir * (cfg.repulsion_strength * std::exp(-dist / cfg.repulsion_range));
      accel[i] += f;
      accel[j] -= f;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& wall : layout.walls) {
      const Vec2 d = agents[i].position - closest_point(wall, agents[i].position);
      const double raw = norm(d);
      if (raw > cfg.interaction_cutoff) continue;
      if (raw == 0.0) continue;  // on the wall line: no defined normal
      const double dist = std::max(raw, cfg.min_distance);
      accel[i] += d * (cfg.wall_strength * std::exp(-dist / cfg.wall_range) / raw);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    auto& a = agents[i];
    a.velocity += accel[i] * cfg.dt;
    const double speed = norm(a.velocity);
    const double cap = cfg.speed_cap_factor * a.desired_speed;
    if (speed > cap) a.velocity *= cap / speed;
    a.position += a.velocity * cfg.dt;
    while (!a.exhausted() && norm(a.path[a.waypoint_cursor] - a.position) < cfg.capture_radius) ++a.waypoint_cursor;
  }
  return agents;
}

/// Tops the population up to `pn_target`. Each new agent is inbound with
/// probability `fd_fraction` and starts at the entrance of a uniformly chosen
/// flow of its direction.
inline std::vector<AgentState> spawn_agents(std::size_t current_count, std::size_t pn_target, double fd_fraction,
                                            const SceneLayout& layout, const SimConfig& cfg, std::mt19937_64& rng,
                                            std::uint64_t& next_id) {
  require(fd_fraction >= 0.0 && fd_fraction <= 1.0, ErrorKind::input, "spawn: fd_fraction outside [0,1]");
  std::vector<AgentState> out;
  if (pn_target <= current_count) return out;

  std::vector<std::size_t> inbound, outbound;
  for (std::size_t f = 0; f < layout.flows.size(); ++f)
    (layout.flows[f].direction == FlowDirection::inbound ? inbound : outbound).push_back(f);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-cfg.path_jitter, cfg.path_jitter);
  std::normal_distribution<double> speed(cfg.desired_speed_mean, cfg.desired_speed_std);
  const auto clamp_in = [&](Vec2 p) {
    return Vec2{std::clamp(p.x, layout.bounds.min_x, layout.bounds.max_x),
                std::clamp(p.y, layout.bounds.min_y, layout.bounds.max_y)};
  };

  const std::size_t deficit = pn_target - current_count;
  out.reserve(deficit);
  for (std::size_t k = 0; k < deficit; ++k) {
    const bool is_inbound = unit(rng) < fd_fraction;
    const auto& pool = is_inbound ? inbound : outbound;
    if (pool.empty())
      fail(ErrorKind::config, std::string("layout '") + layout.name + "' has no " +
                                  (is_inbound ? "inbound" : "outbound") + " flow to spawn on");
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const Flow& flow = layout.flows[pool[pick(rng)]];

    AgentState a;
    a.id = next_id++;
    a.inbound = is_inbound;
    a.desired_speed = std::max(cfg.min_desired_speed, speed(rng));
    a.path.reserve(flow.waypoints.size());
    a.path.push_back(flow.waypoints.front());
    for (std::size_t w = 1; w + 1 < flow.waypoints.size(); ++w) {
      const double jx = jitter(rng), jy = jitter(rng);
      a.path.push_back(clamp_in(flow.waypoints[w] + Vec2{jx, jy}));
    }
    a.path.push_back(flow.waypoints.back());
    const double sx = jitter(rng), sy = jitter(rng);
    a.position = clamp_in(flow.waypoints.front() + Vec2{sx, sy});
    a.waypoint_cursor = 1;  // already standing at the entrance
    out.push_back(std::move(a));
  }
  return out;
}

class Simulator {
 public:
  Simulator(SceneLayout layout, control::ControlSeries series, SimConfig cfg)
      : layout_(std::move(layout)), series_(std::move(series)), cfg_(cfg), rng_(cfg.rng_seed) {
    layout_.validate();
    series_.validate();
    cfg_.validate();
  }

  std::size_t frames_emitted() const { return frame_index_; }
  double time() const { return static_cast<double>(frame_index_) * cfg_.dt; }
  const std::vector<AgentState>& agents() const { return agents_; }

  /// Removes finished or escaped agents, tops up to PN_t, records the frame,
  /// then integrates one step.
  Frame next() {
    const double t = time();
    std::erase_if(agents_, [&](const AgentState& a) { return a.exhausted() || !layout_.bounds.contains(a.position); });
    const auto& control = series_.at(t);
    auto fresh = spawn_agents(agents_.size(), static_cast<std::size_t>(control.people), control.inbound_fraction,
                              layout_, cfg_, rng_, next_id_);
    for (auto& a : fresh) agents_.push_back(std::move(a));

    Frame frame;
    frame.time = t;
    frame.agents.reserve(agents_.size());
    for (const auto& a : agents_) frame.agents.push_back({a.id, a.position, a.velocity});

    agents_ = social_force_step(std::move(agents_), layout_, cfg_);
    ++frame_index_;
    return frame;
  }

 private:
  SceneLayout layout_;
  control::ControlSeries series_;
  SimConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<AgentState> agents_;
  std::uint64_t next_id_ = 0;
  std::size_t frame_index_ = 0;
};

inline std::size_t frame_count(double duration, double dt) {
  return static_cast<std::size_t>(std::llround(duration / dt));
}

/// Streams duration/dt frames into `sink`.
template <class Sink>
void run_simulation(const SceneLayout& layout, const control::ControlSeries& series, const SimConfig& cfg,
                    double duration, Sink&& sink) {
  require(duration >= 0.0, ErrorKind::input, "simulation duration must be non-negative");
  require(series.duration_seconds() + 1e-9 >= duration, ErrorKind::input,
          "control series covers " + std::to_string(series.duration_seconds()) + " s but simulation needs " +
              std::to_string(duration) + " s");
  Simulator sim(layout, series, cfg);
  const std::size_t n = frame_count(duration, cfg.dt);
  for (std::size_t k = 0; k < n; ++k) sink(sim.next());
}

inline std::vector<Frame> run_simulation(const SceneLayout& layout, const control::ControlSeries& series,
                                         const SimConfig& cfg, double duration) {
  std::vector<Frame> frames;
  run_simulation(layout, series, cfg, duration, [&](Frame f) { frames.push_back(std::move(f)); });
  return frames;
}

}  // namespace xscene::sim
