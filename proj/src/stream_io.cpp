#include "sgf/stream_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sgf {

namespace {

using nlohmann::json;

Point point_from_json(const json& j) {
  if (!j.is_array() || j.size() != 9) throw DataError("point must be an array of 9 numbers");
  double v[9];
  for (int i = 0; i < 9; ++i) {
    if (!j[i].is_number()) throw DataError("point component is not a number");
    v[i] = j[i].get<double>();
  }
  Point p;
  p.position = {v[0], v[1], v[2]};
  p.normal = {v[3], v[4], v[5]};
  p.color = {v[6], v[7], v[8]};
  return p;
}

void append_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v == 0.0 ? 0.0 : v);
  out += buf;
}

}  // namespace

FrameUpdate parse_frame_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("frame") || !j["frame"].is_number_integer())
    throw DataError("frame object must carry an integer 'frame'");
  FrameUpdate u;
  u.frame = j["frame"].get<FrameIndex>();
  try {
    if (j.contains("segments")) {
      for (const auto& [key, pts] : j["segments"].items()) {
        std::size_t used = 0;
        SegmentId id = std::stoll(key, &used);
        if (used != key.size()) throw DataError("segment key '" + key + "' is not an integer");
        auto& dst = u.additions[id];
        for (const auto& p : pts) dst.push_back(point_from_json(p));
      }
    }
    if (j.contains("merges")) {
      for (const auto& m : j["merges"]) {
        if (!m.is_array() || m.size() != 2) throw DataError("merge entry must be [src, dst]");
        u.merges.emplace_back(m[0].get<SegmentId>(), m[1].get<SegmentId>());
      }
    }
    if (j.contains("removed")) {
      for (const auto& r : j["removed"]) u.removals.push_back(r.get<SegmentId>());
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad field type: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw DataError("segment key is not an integer");
  }
  return u;
}

std::string format_frame_line(const FrameUpdate& u) {
  std::string out = "{\"frame\":" + std::to_string(u.frame) + ",\"segments\":{";
  bool first_seg = true;
  for (const auto& [id, pts] : u.additions) {
    if (!first_seg) out += ',';
    first_seg = false;
    out += '"' + std::to_string(id) + "\":[";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) out += ',';
      out += '[';
      const Point& p = pts[i];
      const double v[9] = {p.position.x(), p.position.y(), p.position.z(), p.normal.x(), p.normal.y(),
                           p.normal.z(),   p.color.x(),    p.color.y(),    p.color.z()};
      for (int k = 0; k < 9; ++k) {
        if (k) out += ',';
        append_double(out, v[k]);
      }
      out += ']';
    }
    out += ']';
  }
  out += "},\"merges\":[";
  for (std::size_t i = 0; i < u.merges.size(); ++i) {
    if (i) out += ',';
    out += '[' + std::to_string(u.merges[i].first) + ',' + std::to_string(u.merges[i].second) + ']';
  }
  out += "],\"removed\":[";
  for (std::size_t i = 0; i < u.removals.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(u.removals[i]);
  }
  out += "]}";
  return out;
}

std::vector<FrameUpdate> read_stream(std::istream& in) {
  std::vector<FrameUpdate> frames;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      frames.push_back(parse_frame_line(line));
    } catch (const DataError& e) {
      throw DataError("stream line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return frames;
}

std::vector<FrameUpdate> read_stream_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stream file " + path);
  return read_stream(in);
}

void write_stream(std::ostream& out, const std::vector<FrameUpdate>& frames) {
  for (const auto& f : frames) out << format_frame_line(f) << '\n';
}

void write_stream_file(const std::string& path, const std::vector<FrameUpdate>& frames) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write stream file " + path);
  write_stream(out, frames);
}

}  // namespace sgf
