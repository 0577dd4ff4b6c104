#pragma once

#include <string>
#include <string_view>

#include "xscene/common/error.hpp"

namespace xscene {

enum class SceneId { a, b };

inline std::string_view to_string(SceneId id) { return id == SceneId::a ? "a" : "b"; }

inline SceneId scene_from_string(std::string_view s) {
  if (s == "a") return SceneId::a;
  if (s == "b") return SceneId::b;
  fail(ErrorKind::input, "unknown scene id '" + std::string(s) + "' (expected a or b)");
}

inline SceneId other(SceneId id) { return id == SceneId::a ? SceneId::b : SceneId::a; }

}  // namespace xscene
