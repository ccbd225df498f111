#pragma once

#include <string>
#include <vector>

#include "kpt/datagen.hpp"
#include "kpt/model.hpp"

namespace kpt {

inline constexpr std::size_t kGutter = 8;

/// Side-by-side composite (width 2W + gutter). Segments join keypoints to
/// their predictions: green when correct, red otherwise. Keypoints predicted
/// occluded get a blue cross in the left image. `sampled[k]` is the pair
/// keypoint index of results[k].
RgbImage render_matches(const ScenePair& pair, const std::vector<std::size_t>& sampled,
                        const std::vector<TrackResult>& results);

void write_match_rendering(const std::string& path, const ScenePair& pair, const std::vector<std::size_t>& sampled,
                           const std::vector<TrackResult>& results);

}  // namespace kpt
