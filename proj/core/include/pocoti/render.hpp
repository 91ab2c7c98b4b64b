#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pocoti/dataset.hpp"

namespace pocoti::render {

enum class Projection { orthographic, perspective };

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

/// Camera on a sphere around the origin, aimed at the origin, +z up.
/// Azimuth is counter-clockwise seen from +z: 0° sits on +x, 90° on +y.
struct CameraSpec {
  double azimuth_deg = 0;
  double elevation_deg = 20;
  Projection projection = Projection::orthographic;
  double fov_deg = 60;      // perspective only
  int image_size = 512;     // square
  double distance = 3.0;    // camera distance from origin
  double ortho_half_extent = 1.0;  // world units mapped to half the image width

  void validate() const;
};

/// Orthonormal camera frame.
struct CameraBasis {
  Vec3 position;
  Vec3 forward;  // toward the origin
  Vec3 right;
  Vec3 up;
};

CameraBasis camera_basis(const CameraSpec& camera);

/// Continuous pixel coordinates: x grows right, y grows down. A point is on
/// screen when 0 <= x < size and 0 <= y < size.
struct Projected {
  double pixel_x = 0;
  double pixel_y = 0;
  double depth = 0;  // distance along the view axis from the camera
};

/// Returns nullopt for points off screen or behind a perspective camera.
std::optional<Projected> project_point(const Vec3& point, const CameraSpec& camera);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(int w, int h, Rgb fill = {});
  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb c);
  bool operator==(const Image&) const = default;
};

struct View {
  Image image;
  CameraSpec camera;
};

inline constexpr std::size_t kViewCount = 4;

struct ViewSet {
  std::string cloud_id;
  std::array<View, kViewCount> views;
};

struct RenderConfig {
  std::array<double, kViewCount> azimuths_deg{0, 90, 180, 270};
  double elevation_deg = 20;
  Projection projection = Projection::orthographic;
  double fov_deg = 60;
  int image_size = 512;
  int splat_radius = 2;
  Rgb background{255, 255, 255};
  double distance = 3.0;

  CameraSpec camera(std::size_t view_index) const;
  void validate() const;
};

/// Painter's-order splatting: far to near, ties by point index. Uncolored
/// clouds get grayscale depth shading.
ViewSet render_views(const data::PointCloud& cloud, const RenderConfig& config);

/// Lossless PNG (8-bit RGB, no alpha).
std::string encode_png(const Image& image);
Image decode_png(const std::string& bytes);

/// Four encoded PNGs for model requests.
struct EncodedViews {
  std::string cloud_id;
  std::array<std::string, kViewCount> png;
};

EncodedViews encode_views(const ViewSet& views);

/// `{cloud_id}_v{1..4}.png`
std::string view_filename(const std::string& cloud_id, std::size_t view_number);
void write_views(const EncodedViews& views, const std::filesystem::path& dir);
EncodedViews read_views(const std::string& cloud_id, const std::filesystem::path& dir);

}  // namespace pocoti::render
