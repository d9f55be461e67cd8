// SPDX-License-Identifier: Apache-2.0

#include "varkit/manifest.hpp"

#include "varkit/binary_io.hpp"
#include "varkit/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace varkit {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::int64_t parse_int(const std::string& s, const std::string& what) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError(what + ": not an integer: '" + s + "'");
  return v;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }
std::string to_string(Label l) { return l == Label::kNormal ? "normal" : "anomalous"; }

void VideoManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& v : videos) {
    const std::string where = "manifest entry '" + v.video_id + "'";
    if (v.video_id.empty()) throw DataError("manifest entry with empty video_id");
    if (!ids.insert(v.video_id).second) throw DataError(where + ": duplicate video_id");
    if (v.frame_count <= 0) throw DataError(where + ": frame_count must be positive");
    if (v.anomalous() != (v.class_name != kNormalClassName)) {
      throw DataError(where + ": anomalous label requires a class and normal label requires NONE");
    }
    if (v.split == Split::kTrain && !v.gt_intervals.empty()) {
      throw DataError(where + ": training entries carry no frame-level intervals");
    }
    for (const auto& iv : v.gt_intervals) {
      if (iv.start < 0 || iv.end > v.frame_count || iv.start >= iv.end) {
        throw DataError(where + ": interval [" + std::to_string(iv.start) + ", " + std::to_string(iv.end) +
                        ") outside [0, " + std::to_string(v.frame_count) + ")");
      }
    }
  }
}

const VideoEntry* VideoManifest::find(const std::string& video_id) const {
  auto it = std::find_if(videos.begin(), videos.end(), [&](const VideoEntry& e) { return e.video_id == video_id; });
  return it == videos.end() ? nullptr : &*it;
}

std::vector<const VideoEntry*> VideoManifest::split(Split s) const {
  std::vector<const VideoEntry*> out;
  for (const auto& v : videos) {
    if (v.split == s) out.push_back(&v);
  }
  return out;
}

std::vector<std::string> VideoManifest::training_classes() const {
  std::set<std::string> names;
  for (const auto& v : videos) {
    if (v.split == Split::kTrain && v.anomalous()) names.insert(v.class_name);
  }
  return {names.begin(), names.end()};
}

VideoManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestFileName;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  VideoManifest m;
  m.base_dir = dir;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty manifest " + path.string());
  if (strip_cr(line) != "video_id,split,label,class,frame_count,feature_path") {
    throw DataError("manifest " + path.string() + ": unexpected header '" + line + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 6) throw DataError(where + ": expected 6 fields");
    VideoEntry e;
    e.video_id = f[0];
    if (f[1] == "train") {
      e.split = Split::kTrain;
    } else if (f[1] == "test") {
      e.split = Split::kTest;
    } else {
      throw DataError(where + ": bad split '" + f[1] + "'");
    }
    if (f[2] == "normal") {
      e.label = Label::kNormal;
    } else if (f[2] == "anomalous") {
      e.label = Label::kAnomalous;
    } else {
      throw DataError(where + ": bad label '" + f[2] + "'");
    }
    e.class_name = f[3];
    e.frame_count = parse_int(f[4], where);
    e.feature_path = f[5];
    m.videos.push_back(std::move(e));
  }

  const auto ipath = dir / kIntervalsFileName;
  if (std::filesystem::exists(ipath)) {
    std::ifstream iin(ipath);
    if (!std::getline(iin, line) || strip_cr(line) != "video_id,start,end,class") {
      throw DataError("intervals file " + ipath.string() + ": unexpected header");
    }
    lineno = 1;
    while (std::getline(iin, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      const auto f = split_csv(line);
      const std::string where = ipath.string() + ":" + std::to_string(lineno);
      if (f.size() != 4) throw DataError(where + ": expected 4 fields");
      auto it = std::find_if(m.videos.begin(), m.videos.end(), [&](const VideoEntry& e) { return e.video_id == f[0]; });
      if (it == m.videos.end()) throw DataError(where + ": unknown video '" + f[0] + "'");
      it->gt_intervals.push_back(Interval{parse_int(f[1], where), parse_int(f[2], where), f[3]});
    }
  }
  m.validate();
  return m;
}

void write_manifest(const VideoManifest& manifest, const std::filesystem::path& dir) {
  manifest.validate();
  std::ostringstream out;
  out << "video_id,split,label,class,frame_count,feature_path\n";
  std::ostringstream iv;
  iv << "video_id,start,end,class\n";
  for (const auto& v : manifest.videos) {
    out << v.video_id << ',' << to_string(v.split) << ',' << to_string(v.label) << ',' << v.class_name << ','
        << v.frame_count << ',' << v.feature_path << '\n';
    for (const auto& i : v.gt_intervals) iv << v.video_id << ',' << i.start << ',' << i.end << ',' << i.class_name << '\n';
  }
  io::write_text_atomic(dir / kManifestFileName, out.str());
  io::write_text_atomic(dir / kIntervalsFileName, iv.str());
}

std::vector<int> frame_labels(const VideoEntry& entry, const std::vector<std::string>& classes) {
  std::vector<int> labels(static_cast<std::size_t>(entry.frame_count), -1);
  for (const auto& iv : entry.gt_intervals) {
    auto it = std::find(classes.begin(), classes.end(), iv.class_name);
    if (it == classes.end()) {
      throw DataError("video '" + entry.video_id + "': ground-truth class '" + iv.class_name +
                      "' is not among the model's classes");
    }
    const int c = static_cast<int>(it - classes.begin());
    for (auto f = iv.start; f < iv.end; ++f) labels[static_cast<std::size_t>(f)] = c;
  }
  return labels;
}

}  // namespace varkit
