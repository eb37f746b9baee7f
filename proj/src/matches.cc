#include "msloc/matches.h"

namespace msloc {

std::string_view to_string(MatchSource source) {
  switch (source) {
    case MatchSource::kSfm: return "SFM";
    case MatchSource::kSlam: return "SLAM";
    case MatchSource::kDense: return "DENSE";
    case MatchSource::kDisparity: return "DISPARITY";
    case MatchSource::kSim: return "SIM";
  }
  return "SIM";
}

std::optional<MatchSource> parse_match_source(std::string_view name) {
  if (name == "SFM") return MatchSource::kSfm;
  if (name == "SLAM") return MatchSource::kSlam;
  if (name == "DENSE") return MatchSource::kDense;
  if (name == "DISPARITY") return MatchSource::kDisparity;
  if (name == "SIM") return MatchSource::kSim;
  return std::nullopt;
}

}  // namespace msloc
