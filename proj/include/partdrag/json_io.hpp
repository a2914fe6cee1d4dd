#pragma once

#include <string>

#include <json.hpp>

#include "partdrag/core_types.hpp"

namespace partdrag {

/// Pixels are [h, w] pairs; a drag is {"origin": [h, w], "trajectory": [[h, w], ...]}.
nlohmann::json pixel_to_json(Pixel p);
Pixel pixel_from_json(const nlohmann::json& j);

nlohmann::json drag_to_json(const Drag& d);
Drag drag_from_json(const nlohmann::json& j);

/// A JSON array of drags. Parsing errors carry the offending drag index.
nlohmann::json drag_set_to_json(const DragSet& set);
DragSet drag_set_from_json(const nlohmann::json& j);

/// Like drag_set_from_json, but a drag may instead give {"origin", "terminus"},
/// interpolated linearly over the frame count.
DragSet drag_set_from_json(const nlohmann::json& j, int frames);

nlohmann::json read_json_file(const std::string& path);
/// Writes through a temporary file and renames it into place.
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace partdrag
