#pragma once

// Stage manifests: every stage directory holds manifest.json listing the
// stage parameters, the hashes of the upstream files it consumed and the
// hashes of the files it wrote. A stage is skipped when all three still
// match, and refuses to run when an upstream file no longer matches the
// manifest that produced it.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/common/error.hpp"
#include "xscene/common/hash.hpp"

namespace xscene::pipeline {

namespace fs = std::filesystem;

struct Manifest {
  std::string stage;
  nlohmann::json params;
  std::map<std::string, std::string> inputs;   // path relative to the workspace root -> sha256
  std::map<std::string, std::string> outputs;  // file name inside the stage directory -> sha256
};

inline void to_json(nlohmann::json& j, const Manifest& m) {
  j = {{"stage", m.stage}, {"params", m.params}, {"inputs", m.inputs}, {"outputs", m.outputs}};
}

inline void from_json(const nlohmann::json& j, Manifest& m) {
  m.stage = j.at("stage");
  m.params = j.at("params");
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
}

inline constexpr const char* kManifestName = "manifest.json";

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::input, "cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::missing, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Result of Workspace::run.
enum class StageOutcome { ran, skipped };

class Workspace {
 public:
  explicit Workspace(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  const fs::path& root() const { return root_; }
  fs::path dir(const std::string& rel) const { return root_ / rel; }
  bool has_manifest(const std::string& rel) const { return fs::exists(dir(rel) / kManifestName); }

  Manifest load(const std::string& rel) const {
    const fs::path p = dir(rel) / kManifestName;
    require(fs::exists(p), ErrorKind::missing, "'" + rel + "' has no manifest; run the stage that produces it first");
    try {
      return nlohmann::json::parse(read_text(p)).get<Manifest>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::input, p.string() + ": malformed manifest (" + e.what() + ")");
    }
  }

  /// Hashes of a finished stage's outputs, keyed by workspace-relative path.
  /// Throws a stale error when a file no longer matches its manifest.
  std::map<std::string, std::string> verified_outputs(const std::string& rel) {
    const Manifest m = load(rel);
    std::map<std::string, std::string> out;
    for (const auto& [name, recorded] : m.outputs) {
      const fs::path p = dir(rel) / name;
      require(fs::exists(p), ErrorKind::stale,
              rel + "/" + name + " listed in its manifest is gone; rerun stage '" + m.stage + "'");
      const std::string now = hash(p);
      require(now == recorded, ErrorKind::stale,
              rel + "/" + name + " changed since stage '" + m.stage + "' wrote it (manifest " + recorded.substr(0, 12) +
                  ", file " + now.substr(0, 12) + "); rerun that stage");
      out[rel + "/" + name] = recorded;
    }
    return out;
  }

  /// Runs `produce(stage_dir)` unless `rel` already holds a manifest with the
  /// same stage, params and upstream hashes whose outputs are intact.
  /// `produce` returns the names of the files it wrote.
  StageOutcome run(const std::string& rel, const std::string& stage, const nlohmann::json& params,
                   const std::vector<std::string>& upstream,
                   const std::function<std::vector<std::string>(const fs::path&)>& produce) {
    std::map<std::string, std::string> inputs;
    for (const auto& u : upstream) inputs.merge(verified_outputs(u));
    if (has_manifest(rel) && up_to_date(rel, stage, params, inputs)) return StageOutcome::skipped;

    const fs::path d = dir(rel);
    fs::remove_all(d);
    fs::create_directories(d);
    Manifest m{stage, params, inputs, {}};
    for (const auto& name : produce(d)) m.outputs[name] = hash(d / name);
    write_text_atomic(d / kManifestName, nlohmann::json(m).dump(2) + "\n");
    return StageOutcome::ran;
  }

 private:
  bool up_to_date(const std::string& rel, const std::string& stage, const nlohmann::json& params,
                  const std::map<std::string, std::string>& inputs) {
    Manifest m;
    try {
      m = load(rel);
    } catch (const Error&) {
      return false;
    }
    if (m.stage != stage || m.params != params || m.inputs != inputs) return false;
    for (const auto& [name, recorded] : m.outputs) {
      const fs::path p = dir(rel) / name;
      if (!fs::exists(p) || hash(p) != recorded) return false;
    }
    return true;
  }

  // Files are hashed repeatedly by downstream stages; cache by size and mtime.
  std::string hash(const fs::path& p) {
    const auto key = fs::absolute(p).string();
    const auto size = fs::file_size(p);
    const auto mtime = fs::last_write_time(p);
    {
      std::lock_guard lock(mutex_);
      auto it = cache_.find(key);
      if (it != cache_.end() && it->second.size == size && it->second.mtime == mtime) return it->second.sha;
    }
    std::string sha = sha256_file(p);
    std::lock_guard lock(mutex_);
    cache_[key] = {size, mtime, sha};
    return sha;
  }

  struct CacheEntry {
    std::uintmax_t size = 0;
    fs::file_time_type mtime;
    std::string sha;
  };

  fs::path root_;
  std::mutex mutex_;
  std::map<std::string, CacheEntry> cache_;
};

}  // namespace xscene::pipeline
