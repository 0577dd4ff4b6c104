#pragma once

// Frame stream file: one JSON header line, then per frame
//   f64 time | u64 agent count | count x (f64 id, f64 x, f64 y, f64 vx, f64 vy)
// all little-endian.

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "xscene/common/binary_io.hpp"
#include "xscene/sim/simulation.hpp"

namespace xscene::sim {

struct FrameFileHeader {
  std::string layout_hash;
  std::uint64_t seed = 0;
  double dt = 0.1;
  double duration = 0.0;
};

inline nlohmann::json to_json(const FrameFileHeader& h) {
  return {{"format", "xscene-frames"}, {"version", 1},  {"layout_hash", h.layout_hash},
          {"seed", h.seed},            {"dt", h.dt},     {"duration", h.duration}};
}

class FrameWriter {
 public:
  FrameWriter(const std::string& path, const FrameFileHeader& header) : out_(io::open_out(path)) {
    io::write_header_line(out_, to_json(header));
  }

  void write(const Frame& f) {
    io::put_f64(out_, f.time);
    io::put_u64(out_, f.agents.size());
    for (const auto& a : f.agents) {
      io::put_f64(out_, static_cast<double>(a.id));
      io::put_f64(out_, a.position.x);
      io::put_f64(out_, a.position.y);
      io::put_f64(out_, a.velocity.x);
      io::put_f64(out_, a.velocity.y);
    }
  }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
};

class FrameReader {
 public:
  explicit FrameReader(const std::string& path) : in_(io::open_in(path)) {
    const auto j = io::read_header_line(in_);
    if (j.value("format", "") != "xscene-frames") fail(ErrorKind::input, path + ": not a frame stream file");
    header_.layout_hash = j.at("layout_hash");
    header_.seed = j.at("seed");
    header_.dt = j.at("dt");
    header_.duration = j.at("duration");
  }

  const FrameFileHeader& header() const { return header_; }

  std::optional<Frame> next() {
    if (in_.peek() == std::char_traits<char>::eof()) return std::nullopt;
    Frame f;
    f.time = io::get_f64(in_);
    const auto count = io::get_u64(in_);
    f.agents.resize(count);
    for (auto& a : f.agents) {
      a.id = static_cast<std::uint64_t>(io::get_f64(in_));
      a.position.x = io::get_f64(in_);
      a.position.y = io::get_f64(in_);
      a.velocity.x = io::get_f64(in_);
      a.velocity.y = io::get_f64(in_);
    }
    return f;
  }

 private:
  std::ifstream in_;
  FrameFileHeader header_;
};

}  // namespace xscene::sim
