#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ocean/error.hpp"
#include "ocean/geometry.hpp"
#include "ocean/image.hpp"
#include "ocean/synthetic.hpp"

namespace ocean {

// Box log: one "x0,y0,x1,y1" line per frame.

inline std::vector<BBox> parse_box_log(std::istream& is, const std::string& source) {
  std::vector<BBox> boxes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    double v[4];
    char sep = 0;
    bool ok = static_cast<bool>(ls >> v[0]);
    for (int k = 1; ok && k < 4; ++k) ok = (ls >> sep >> v[k]) && sep == ',';
    ls >> std::ws;
    if (!ok || !ls.eof()) {
      throw IngestionError(source + ":" + std::to_string(lineno) + ": expected x0,y0,x1,y1");
    }
    const BBox b{v[0], v[1], v[2], v[3]};
    if (!b.valid()) {
      throw IngestionError(source + ":" + std::to_string(lineno) + ": invalid box " + to_string(b));
    }
    boxes.push_back(b);
  }
  return boxes;
}

inline std::vector<BBox> read_box_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open box log " + path.string());
  return parse_box_log(is, path.string());
}

inline void write_box_log(std::ostream& os, const std::vector<BBox>& boxes) {
  char buf[160];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", b.x0, b.y0, b.x1, b.y1);
    os << buf;
  }
}

inline void write_box_log(const std::filesystem::path& path, const std::vector<BBox>& boxes) {
  std::ofstream os(path);
  if (!os) throw ArtifactError("cannot write " + path.string());
  write_box_log(os, boxes);
  if (!os) throw ArtifactError("failed writing " + path.string());
}

// Sequence directory: 00001.ppm, 00002.ppm, ... plus groundtruth.txt.

inline std::filesystem::path frame_path(const std::filesystem::path& dir, std::size_t t) {
  char name[32];
  std::snprintf(name, sizeof name, "%05zu.ppm", t + 1);
  return dir / name;
}

inline void save_sequence(const std::filesystem::path& dir, const Sequence& seq) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) write_ppm(frame_path(dir, t), seq.frames[t]);
  write_box_log(dir / "groundtruth.txt", seq.gt);
}

inline Sequence load_sequence(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ArtifactError("sequence directory " + dir.string() + " does not exist");
  }
  Sequence seq;
  for (std::size_t t = 0; std::filesystem::exists(frame_path(dir, t)); ++t) {
    seq.frames.push_back(read_ppm(frame_path(dir, t)));
  }
  if (seq.frames.empty()) throw ArtifactError("no frames in " + dir.string());
  const auto gt = dir / "groundtruth.txt";
  if (!std::filesystem::exists(gt)) throw IngestionError("missing ground truth " + gt.string());
  seq.gt = read_box_log(gt);
  if (seq.gt.size() != seq.frames.size()) {
    throw IngestionError(gt.string() + " has " + std::to_string(seq.gt.size()) +
                         " boxes for " + std::to_string(seq.frames.size()) + " frames");
  }
  return seq;
}

}  // namespace ocean
