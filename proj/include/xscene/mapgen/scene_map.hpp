#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/common/binary_io.hpp"
#include "xscene/common/error.hpp"
#include "xscene/common/geometry.hpp"
#include "xscene/common/scene.hpp"

namespace xscene::mapgen {

/// Channel order is fixed: East, West, South, North.
enum Channel : int { east = 0, west = 1, south = 2, north = 3 };
inline constexpr int kChannels = 4;

struct MapConfig {
  int width = 64;           // pixels; square maps
  double cell_size = 1.6;   // meters
  double window = 1.0;      // minutes
  double frame_rate = 10.0; // Hz
  Vec2 origin{};            // world position of the map's south-west corner

  std::size_t frames_per_map() const { return static_cast<std::size_t>(std::llround(window * frame_rate * 60.0)); }

  void validate() const {
    require(width >= 1 && (width & (width - 1)) == 0, ErrorKind::config, "map width must be a power of two");
    require(cell_size > 0.0, ErrorKind::config, "map cell_size must be positive");
    require(window > 0.0 && frame_rate > 0.0, ErrorKind::config, "map window and frame_rate must be positive");
    require(frames_per_map() >= 1, ErrorKind::config, "map window holds no frames");
  }

  static MapConfig desk() { return {}; }
  static MapConfig paper() { return {512, 0.2, 1.0, 10.0, {}}; }
};

inline void to_json(nlohmann::json& j, const MapConfig& c) {
  j = {{"width", c.width}, {"cell_size", c.cell_size}, {"window", c.window}, {"frame_rate", c.frame_rate},
       {"origin", {c.origin.x, c.origin.y}}};
}

inline void from_json(const nlohmann::json& j, MapConfig& c) {
  c.width = j.value("width", c.width);
  c.cell_size = j.value("cell_size", c.cell_size);
  c.window = j.value("window", c.window);
  c.frame_rate = j.value("frame_rate", c.frame_rate);
  if (j.contains("origin")) c.origin = {j.at("origin").at(0).get<double>(), j.at("origin").at(1).get<double>()};
}

/// W x H x 4 directional pass-count grid. Index (row, col, channel) with row
/// along +y (south to north) and col along +x.
struct SceneMap {
  SceneId scene = SceneId::a;
  double timestamp = 0.0;  // minutes, wall clock
  int width = 0;
  int height = 0;
  double cell_size = 1.0;
  std::vector<double> data;

  SceneMap() = default;
  SceneMap(SceneId s, double t, int w, int h, double cell)
      : scene(s), timestamp(t), width(w), height(h), cell_size(cell),
        data(static_cast<std::size_t>(w) * h * kChannels, 0.0) {}

  std::size_t index(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * width + col) * kChannels + ch;
  }
  double& at(int row, int col, int ch) { return data[index(row, col, ch)]; }
  double at(int row, int col, int ch) const { return data[index(row, col, ch)]; }

  bool same_shape(const SceneMap& o) const { return width == o.width && height == o.height; }

  double mass() const {
    double s = 0.0;
    for (double v : data) s += v;
    return s;
  }
};

inline void require_same_shape(const SceneMap& a, const SceneMap& b, const std::string& what) {
  if (!a.same_shape(b))
    fail(ErrorKind::input, what + ": shape mismatch " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                               " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
}

// ---- file format: JSON header line + little-endian f32 payload (row-major, channel-minor)

inline void write_map(const std::string& path, const SceneMap& m, double window_minutes) {
  auto out = io::open_out(path);
  io::write_header_line(out, {{"format", "xscene-map"},
                              {"version", 1},
                              {"scene_id", to_string(m.scene)},
                              {"timestamp", m.timestamp},
                              {"width", m.width},
                              {"height", m.height},
                              {"channels", kChannels},
                              {"cell_size", m.cell_size},
                              {"window", window_minutes}});
  for (double v : m.data) io::put_f32(out, static_cast<float>(v));
  if (!out) fail(ErrorKind::input, "failed writing map file " + path);
}

inline SceneMap read_map(const std::string& path) {
  auto in = io::open_in(path);
  const auto h = io::read_header_line(in);
  require(h.value("format", "") == "xscene-map", ErrorKind::input, path + ": not a scene map file");
  require(h.value("channels", 0) == kChannels, ErrorKind::input, path + ": unsupported channel count");
  SceneMap m(scene_from_string(h.at("scene_id").get<std::string>()), h.at("timestamp"), h.at("width"),
             h.at("height"), h.at("cell_size"));
  for (auto& v : m.data) v = io::get_f32(in);
  return m;
}

/// Several same-shape maps of one scene in a single file: header lists the
/// timestamps, payload is the maps back to back.
inline void write_map_stack(const std::string& path, const std::vector<SceneMap>& maps, double window_minutes) {
  require(!maps.empty(), ErrorKind::input, "write_map_stack: no maps for " + path);
  std::vector<double> times;
  for (const auto& m : maps) {
    require_same_shape(maps.front(), m, "write_map_stack");
    require(m.scene == maps.front().scene, ErrorKind::input, "write_map_stack: mixed scenes");
    times.push_back(m.timestamp);
  }
  const auto& f = maps.front();
  auto out = io::open_out(path);
  io::write_header_line(out, {{"format", "xscene-map-stack"},
                              {"version", 1},
                              {"scene_id", to_string(f.scene)},
                              {"count", maps.size()},
                              {"timestamps", times},
                              {"width", f.width},
                              {"height", f.height},
                              {"channels", kChannels},
                              {"cell_size", f.cell_size},
                              {"window", window_minutes}});
  for (const auto& m : maps)
    for (double v : m.data) io::put_f32(out, static_cast<float>(v));
  if (!out) fail(ErrorKind::input, "failed writing map stack " + path);
}

inline std::vector<SceneMap> read_map_stack(const std::string& path) {
  auto in = io::open_in(path);
  const auto h = io::read_header_line(in);
  require(h.value("format", "") == "xscene-map-stack", ErrorKind::input, path + ": not a map stack file");
  require(h.value("channels", 0) == kChannels, ErrorKind::input, path + ": unsupported channel count");
  const auto scene = scene_from_string(h.at("scene_id").get<std::string>());
  const auto times = h.at("timestamps").get<std::vector<double>>();
  require(times.size() == h.at("count").get<std::size_t>(), ErrorKind::input, path + ": timestamp count mismatch");
  std::vector<SceneMap> maps;
  maps.reserve(times.size());
  for (double t : times) {
    SceneMap m(scene, t, h.at("width"), h.at("height"), h.at("cell_size"));
    for (auto& v : m.data) v = io::get_f32(in);
    maps.push_back(std::move(m));
  }
  require(static_cast<bool>(in), ErrorKind::input, path + ": truncated map stack");
  return maps;
}

}  // namespace xscene::mapgen
