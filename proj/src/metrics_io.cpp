#include <fstream>
#include <sstream>

#include <json.hpp>

#include "star/metrics.hpp"

namespace star::metrics {

namespace {

using json = nlohmann::json;

Annotation annotation_from(const json& j) {
  if (!j.is_object() || j.size() != 1 || !j.contains("points")) {
    throw ParseError("annotation must be an object with exactly one key, \"points\"");
  }
  const json& pts = j["points"];
  if (!pts.is_array()) throw ParseError("\"points\" must be an array");
  Annotation a;
  for (const auto& p : pts) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw ParseError("each point must be [x, y]");
    }
    a.points.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  try {
    a.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("invalid annotation: ") + e.what());
  }
  return a;
}

}  // namespace

std::vector<Annotation> parse_annotations(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("annotation file is not valid JSON: ") + e.what());
  }
  std::vector<Annotation> out;
  if (root.is_array()) {
    for (const auto& item : root) out.push_back(annotation_from(item));
  } else {
    out.push_back(annotation_from(root));
  }
  if (out.empty()) throw EmptyInput("annotation file holds no images");
  return out;
}

std::vector<Annotation> read_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open annotation file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_annotations(ss.str());
}

}  // namespace star::metrics
