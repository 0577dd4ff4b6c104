#pragma once

// Checkpoint file: a JSON header line (architecture descriptor plus an
// offset table of named tensors) followed by the concatenated little-endian
// f64 payload.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/common/binary_io.hpp"
#include "xscene/nn/tensor.hpp"

namespace xscene::nn {

struct NamedTensor {
  std::string name;
  const Tensor* tensor = nullptr;
};

struct Checkpoint {
  nlohmann::json architecture;
  std::map<std::string, Tensor> tensors;
  std::vector<std::string> order;
};

inline void write_checkpoint(const std::string& path, const nlohmann::json& architecture,
                             const std::vector<NamedTensor>& tensors) {
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    table.push_back({{"name", t.name}, {"shape", t.tensor->shape()}, {"offset", offset}, {"count", t.tensor->size()}});
    offset += t.tensor->size();
  }
  auto out = io::open_out(path);
  io::write_header_line(out, {{"format", "xscene-checkpoint"},
                              {"version", 1},
                              {"architecture", architecture},
                              {"tensors", table},
                              {"payload_doubles", offset}});
  for (const auto& t : tensors)
    for (double v : t.tensor->data()) io::put_f64(out, v);
  if (!out) fail(ErrorKind::input, "failed writing checkpoint " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  auto in = io::open_in(path);
  const auto header = io::read_header_line(in);
  require(header.value("format", "") == "xscene-checkpoint", ErrorKind::input, path + ": not a checkpoint file");
  const std::size_t total = header.at("payload_doubles");
  std::vector<double> payload(total);
  for (auto& v : payload) v = io::get_f64(in);
  Checkpoint ck;
  ck.architecture = header.at("architecture");
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name");
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset"), count = entry.at("count");
    require(offset + count <= total && count == element_count(shape), ErrorKind::input,
            path + ": inconsistent offset table entry for " + name);
    ck.tensors.emplace(name, Tensor(shape, std::vector<double>(payload.begin() + offset, payload.begin() + offset + count)));
    ck.order.push_back(name);
  }
  return ck;
}

}  // namespace xscene::nn
