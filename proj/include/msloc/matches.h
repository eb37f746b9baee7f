#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "msloc/geometry.h"

namespace msloc {

// Which session-map reconstruction a 2D-3D match was drawn from.
enum class MatchSource { kSfm, kSlam, kDense, kDisparity, kSim };

std::string_view to_string(MatchSource source);
std::optional<MatchSource> parse_match_source(std::string_view name);

struct Match2D3D {
  Vector2 query_point = Vector2::Zero();
  Vector3 world_point = Vector3::Zero();
  MatchSource source = MatchSource::kSim;
  int session_id = 0;
};

struct Match2D2D {
  Vector2 a = Vector2::Zero();
  Vector2 b = Vector2::Zero();
};

// Tracked correspondences between frame_a and frame_b.
struct MatchSet2D2D {
  int frame_a = 0;
  int frame_b = 0;
  std::vector<Match2D2D> matches;
};

}  // namespace msloc
