#include "mf/conditioning/vocabulary.hpp"

#include "mf/common/error.hpp"

namespace mf::cond {

std::optional<int> label_index(std::string_view label) {
  for (std::size_t i = 0; i < kLabelVocabulary.size(); ++i)
    if (kLabelVocabulary[i] == label) return static_cast<int>(i);
  return std::nullopt;
}

std::string_view label_text(int index) {
  if (index < 0 || index >= static_cast<int>(kLabelVocabulary.size()))
    throw ContractError("label index " + std::to_string(index) + " outside vocabulary of " +
                        std::to_string(kLabelVocabulary.size()));
  return kLabelVocabulary[static_cast<std::size_t>(index)];
}

std::optional<geom::Rgb> label_color(int index) {
  switch (index) {
    case 1: return geom::Rgb{1, 0, 0};
    case 2: return geom::Rgb{0, 1, 0};
    case 3: return geom::Rgb{0, 0, 1};
    case 4: return geom::Rgb{1, 1, 0};
    default: return std::nullopt;
  }
}

geom::Rgb overlay_color(int object_id) {
  const auto n = static_cast<int>(kOverlayPalette.size());
  return kOverlayPalette[static_cast<std::size_t>(((object_id % n) + n) % n)];
}

}  // namespace mf::cond
