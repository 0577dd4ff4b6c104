#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/common/error.hpp"
#include "xscene/common/geometry.hpp"
#include "xscene/common/hash.hpp"

namespace xscene {

inline void to_json(nlohmann::json& j, const Vec2& v) { j = nlohmann::json::array({v.x, v.y}); }
inline void from_json(const nlohmann::json& j, Vec2& v) {
  v.x = j.at(0);
  v.y = j.at(1);
}

}  // namespace xscene

namespace xscene::sim {

enum class FlowDirection { inbound, outbound };

struct Endpoint {
  std::string name;
  Vec2 position;
};

/// Directed waypoint path between two endpoints.
struct Flow {
  FlowDirection direction = FlowDirection::inbound;
  std::vector<Vec2> waypoints;
};

struct SceneLayout {
  std::string name;
  Rect bounds;
  std::vector<Segment> walls;
  std::vector<Endpoint> endpoints;
  std::vector<Flow> flows;

  bool is_endpoint(Vec2 p) const {
    for (const auto& e : endpoints)
      if (norm(e.position - p) <= 1e-9) return true;
    return false;
  }

  void validate() const {
    require(bounds.width() > 0.0 && bounds.height() > 0.0, ErrorKind::config, "layout '" + name + "': empty bounds");
    bool inbound = false, outbound = false;
    for (std::size_t f = 0; f < flows.size(); ++f) {
      const auto& flow = flows[f];
      const std::string where = "layout '" + name + "' flow " + std::to_string(f);
      require(flow.waypoints.size() >= 2, ErrorKind::config, where + ": needs at least two waypoints");
      require(is_endpoint(flow.waypoints.front()), ErrorKind::config, where + ": first waypoint is not an endpoint");
      require(is_endpoint(flow.waypoints.back()), ErrorKind::config, where + ": last waypoint is not an endpoint");
      for (const auto& w : flow.waypoints)
        require(bounds.contains(w), ErrorKind::config, where + ": waypoint outside bounds");
      (flow.direction == FlowDirection::inbound ? inbound : outbound) = true;
    }
    require(inbound, ErrorKind::config, "layout '" + name + "': no inbound flow");
    require(outbound, ErrorKind::config, "layout '" + name + "': no outbound flow");
  }
};

inline void to_json(nlohmann::json& j, const SceneLayout& l) {
  j["name"] = l.name;
  j["bounds"] = {l.bounds.min_x, l.bounds.min_y, l.bounds.max_x, l.bounds.max_y};
  j["walls"] = nlohmann::json::array();
  for (const auto& w : l.walls) j["walls"].push_back(nlohmann::json::array({w.a, w.b}));
  j["endpoints"] = nlohmann::json::array();
  for (const auto& e : l.endpoints) j["endpoints"].push_back(nlohmann::json{{"name", e.name}, {"position", e.position}});
  j["flows"] = nlohmann::json::array();
  for (const auto& f : l.flows)
    j["flows"].push_back(nlohmann::json{{"direction", f.direction == FlowDirection::inbound ? "inbound" : "outbound"},
                                        {"waypoints", f.waypoints}});
}

inline void from_json(const nlohmann::json& j, SceneLayout& l) {
  l.name = j.value("name", std::string{});
  const auto& b = j.at("bounds");
  l.bounds = {b.at(0), b.at(1), b.at(2), b.at(3)};
  l.walls.clear();
  for (const auto& w : j.value("walls", nlohmann::json::array())) l.walls.push_back({w.at(0).get<Vec2>(), w.at(1).get<Vec2>()});
  l.endpoints.clear();
  for (const auto& e : j.at("endpoints")) l.endpoints.push_back({e.at("name"), e.at("position").get<Vec2>()});
  l.flows.clear();
  for (const auto& f : j.at("flows")) {
    const std::string dir = f.at("direction");
    require(dir == "inbound" || dir == "outbound", ErrorKind::config, "flow direction must be inbound or outbound, got " + dir);
    l.flows.push_back({dir == "inbound" ? FlowDirection::inbound : FlowDirection::outbound,
                       f.at("waypoints").get<std::vector<Vec2>>()});
  }
}

inline std::string layout_hash(const SceneLayout& l) {
  nlohmann::json j = l;
  return sha256_hex(j.dump());
}

namespace detail {

// Builds inbound flows street -> gate -> campus destination and their reverses.
inline void add_gate_flows(SceneLayout& l, const std::vector<std::string>& outside,
                           const std::vector<Vec2>& gate_path,
                           const std::vector<std::pair<std::string, std::vector<Vec2>>>& inside) {
  auto pos = [&](const std::string& n) {
    for (const auto& e : l.endpoints)
      if (e.name == n) return e.position;
    fail(ErrorKind::config, "unknown endpoint " + n);
  };
  for (const auto& o : outside) {
    for (const auto& [dest, via] : inside) {
      Flow in{FlowDirection::inbound, {pos(o)}};
      in.waypoints.insert(in.waypoints.end(), gate_path.begin(), gate_path.end());
      in.waypoints.insert(in.waypoints.end(), via.begin(), via.end());
      in.waypoints.push_back(pos(dest));
      Flow out{FlowDirection::outbound, {in.waypoints.rbegin(), in.waypoints.rend()}};
      l.flows.push_back(std::move(in));
      l.flows.push_back(std::move(out));
    }
  }
}

}  // namespace detail

/// Schematic south gate: a street along the south edge, the campus fence at
/// y = 30 m with an opening around x = 51 m, three campus destinations.
inline SceneLayout gate_scene_a() {
  SceneLayout l;
  l.name = "gate_a";
  l.bounds = {0.0, 0.0, 102.4, 102.4};
  l.walls = {{{0.0, 30.0}, {46.0, 30.0}}, {{56.0, 30.0}, {102.4, 30.0}}};
  l.endpoints = {{"street_west", {2.0, 14.0}}, {"street_east", {100.4, 16.0}},
                 {"library", {18.0, 100.0}},   {"dormitory", {84.0, 100.0}},
                 {"lab", {100.0, 62.0}}};
  detail::add_gate_flows(l, {"street_west", "street_east"}, {{51.0, 22.0}, {51.0, 30.0}, {51.0, 40.0}},
                         {{"library", {{30.0, 70.0}}}, {"dormitory", {{70.0, 75.0}}}, {"lab", {{75.0, 55.0}}}});
  return l;
}

/// Schematic west gate: a street along the west edge, the fence at x = 25 m
/// with an opening around y = 60 m, destinations spread over the campus.
inline SceneLayout gate_scene_b() {
  SceneLayout l;
  l.name = "gate_b";
  l.bounds = {0.0, 0.0, 102.4, 102.4};
  l.walls = {{{25.0, 0.0}, {25.0, 55.0}}, {{25.0, 65.0}, {25.0, 102.4}}};
  l.endpoints = {{"street_south", {12.0, 2.0}}, {"street_north", {12.0, 100.4}},
                 {"canteen", {100.0, 90.0}},    {"gym", {100.0, 20.0}},
                 {"teaching", {60.0, 2.0}}};
  detail::add_gate_flows(l, {"street_south", "street_north"}, {{18.0, 60.0}, {25.0, 60.0}, {35.0, 60.0}},
                         {{"canteen", {{65.0, 80.0}}}, {"gym", {{60.0, 35.0}}}, {"teaching", {{50.0, 30.0}}}});
  return l;
}

}  // namespace xscene::sim
