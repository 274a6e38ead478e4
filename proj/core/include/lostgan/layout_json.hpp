#pragma once

#include <json.hpp>

#include "lostgan/layout.hpp"

namespace lostgan {

nlohmann::json layout_to_json(const Layout& layout, const CategorySet& cats,
                              const std::optional<StyleState>& style = std::nullopt);
ParsedLayout layout_from_json(const nlohmann::json& doc, const CategorySet& cats);

nlohmann::json style_to_json(const StyleState& style);
StyleState style_from_json(const nlohmann::json& doc);

}  // namespace lostgan
