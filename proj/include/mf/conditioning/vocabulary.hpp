#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "mf/geometry/image.hpp"

namespace mf::cond {

// Entity labels understood by the toy model. Index 0 is the generic label used
// for user selections that carry no color name.
inline constexpr std::array<std::string_view, 5> kLabelVocabulary{"object", "red cube", "green cube",
                                                                   "blue cube", "yellow cube"};

std::optional<int> label_index(std::string_view label);
std::string_view label_text(int index);

// Render color of the synthetic object a label names; nullopt for "object".
std::optional<geom::Rgb> label_color(int index);

// Overlay outline colors, cycled by object id. Every entry is farther than
// 60/255 (RGB Euclidean) from every label color.
inline constexpr std::array<geom::Rgb, 3> kOverlayPalette{geom::Rgb{1, 1, 1}, geom::Rgb{1, 0, 1},
                                                          geom::Rgb{0, 1, 1}};
geom::Rgb overlay_color(int object_id);

}  // namespace mf::cond
