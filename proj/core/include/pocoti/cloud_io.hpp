#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pocoti/dataset.hpp"

namespace pocoti::data {

/// Raw (un-normalized) points as read from disk.
struct RawCloud {
  std::string id;
  std::vector<Point> points;
  bool has_color = false;
};

/// PLY reader: `format ascii 1.0` or `format binary_little_endian 1.0`, one
/// vertex element with float/double x,y,z and optional uchar red,green,blue.
/// Other vertex properties are skipped; other elements after vertex ignored.
RawCloud parse_ply(std::string_view bytes, std::string id);
RawCloud read_ply(const std::filesystem::path& path);

/// Writes binary little-endian PLY (float xyz, uchar rgb when colored).
std::string encode_ply(const RawCloud& cloud);

/// Raw float32 stream: N x 6 little-endian floats (x,y,z,r,g,b). The sidecar
/// is a JSON object {"id": string, "count": N}.
RawCloud parse_raw_f32(std::string_view bytes, std::string_view sidecar_json);
RawCloud read_raw_f32(const std::filesystem::path& data_path);  // sidecar: same stem + ".json"
std::string encode_raw_f32(const RawCloud& cloud);
std::string raw_sidecar_json(const RawCloud& cloud);

/// Directory of point clouds keyed by id: `<id>.ply` files and `<stem>.bin`
/// raw streams with `<stem>.json` sidecars.
class CloudStore {
 public:
  explicit CloudStore(std::filesystem::path dir);

  const std::set<std::string>& ids() const { return ids_; }
  bool contains(const std::string& id) const { return ids_.count(id) != 0; }
  RawCloud load_raw(const std::string& id) const;
  PointCloud load(const std::string& id) const;

 private:
  std::filesystem::path dir_;
  std::set<std::string> ids_;
  std::map<std::string, std::filesystem::path> paths_;
};

}  // namespace pocoti::data
