#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sgf/scene_map.hpp"

namespace sgf {

/// Scene stream: one JSON object per line,
///   {"frame": 3, "segments": {"12": [[x,y,z,nx,ny,nz,r,g,b], ...]},
///    "merges": [[src, dst], ...], "removed": [id, ...]}
/// `segments`, `merges` and `removed` are optional.
FrameUpdate parse_frame_line(const std::string& line);
std::string format_frame_line(const FrameUpdate& update);

/// Reads a whole stream. Malformed lines raise DataError naming the 1-based line number.
std::vector<FrameUpdate> read_stream(std::istream& in);
std::vector<FrameUpdate> read_stream_file(const std::string& path);
void write_stream(std::ostream& out, const std::vector<FrameUpdate>& frames);
void write_stream_file(const std::string& path, const std::vector<FrameUpdate>& frames);

}  // namespace sgf
