#include "partdrag/json_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace partdrag {

using nlohmann::json;

json pixel_to_json(Pixel p) { return json::array({p.h, p.w}); }

Pixel pixel_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw ValidationError("pixel must be an [h, w] integer pair");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}

json drag_to_json(const Drag& d) {
  json traj = json::array();
  for (const Pixel& p : d.trajectory) traj.push_back(pixel_to_json(p));
  return {{"origin", pixel_to_json(d.origin)}, {"trajectory", traj}};
}

Drag drag_from_json(const json& j) {
  if (!j.is_object() || !j.contains("origin") || !j.contains("trajectory") || !j["trajectory"].is_array()) {
    throw ValidationError("drag needs \"origin\" and a \"trajectory\" array");
  }
  Drag d;
  d.origin = pixel_from_json(j["origin"]);
  for (const auto& p : j["trajectory"]) d.trajectory.push_back(pixel_from_json(p));
  return d;
}

json drag_set_to_json(const DragSet& set) {
  json out = json::array();
  for (const Drag& d : set.drags) out.push_back(drag_to_json(d));
  return out;
}

DragSet drag_set_from_json(const json& j) {
  if (!j.is_array()) throw ValidationError("drags must be an array");
  DragSet set;
  for (std::size_t k = 0; k < j.size(); ++k) {
    try {
      set.drags.push_back(drag_from_json(j[k]));
    } catch (const ValidationError& e) {
      throw ValidationError("drag " + std::to_string(k) + ": " + e.what(), static_cast<int>(k));
    }
  }
  return set;
}

DragSet drag_set_from_json(const json& j, int frames) {
  if (!j.is_array()) throw ValidationError("drags must be an array");
  DragSet set;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const json& d = j[k];
    try {
      if (!d.is_object() || !d.contains("origin")) throw ValidationError("drag needs an \"origin\"");
      if (d.contains("trajectory") && d.contains("terminus")) {
        throw ValidationError("drag gives both \"terminus\" and \"trajectory\"");
      }
      if (d.contains("trajectory")) {
        set.drags.push_back(drag_from_json(d));
      } else if (d.contains("terminus")) {
        set.drags.push_back(Drag::straight(pixel_from_json(d["origin"]), pixel_from_json(d["terminus"]), frames));
      } else {
        throw ValidationError("drag needs a \"terminus\" or a \"trajectory\"");
      }
    } catch (const ValidationError& e) {
      throw ValidationError("drag " + std::to_string(k) + ": " + e.what(), static_cast<int>(k));
    }
  }
  return set;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("malformed JSON in " + path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << j.dump(1) << '\n';
    if (!out) throw Error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace partdrag
