#include "pocoti/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "pocoti/util.hpp"

namespace pocoti::render {

namespace {

struct SinCos {
  double s, c;
};

// Quadrant-exact sine/cosine in degrees so that views 90° apart have frames
// that are exact permutations of each other.
SinCos sincos_deg(double deg) {
  double a = std::fmod(deg, 360.0);
  if (a < 0) a += 360.0;
  const int q = static_cast<int>(a / 90.0) % 4;
  const double r = (a - 90.0 * q) * std::numbers::pi / 180.0;
  const double s = r == 0 ? 0.0 : std::sin(r);
  const double c = r == 0 ? 1.0 : std::cos(r);
  switch (q) {
    case 0: return {s, c};
    case 1: return {c, -s};
    case 2: return {-s, -c};
    default: return {-c, s};
  }
}

double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

}  // namespace

void CameraSpec::validate() const {
  if (!(azimuth_deg >= 0 && azimuth_deg < 360)) throw ValidationError("camera azimuth must be in [0,360)");
  if (!(elevation_deg >= -90 && elevation_deg <= 90)) throw ValidationError("camera elevation must be in [-90,90]");
  if (image_size < 64) throw ValidationError("camera image_size must be >= 64");
  if (projection == Projection::perspective && !(fov_deg > 0 && fov_deg < 180)) {
    throw ValidationError("camera fov must be in (0,180)");
  }
  if (!(distance > 0)) throw ValidationError("camera distance must be positive");
  if (!(ortho_half_extent > 0)) throw ValidationError("orthographic half extent must be positive");
}

CameraBasis camera_basis(const CameraSpec& camera) {
  const auto az = sincos_deg(camera.azimuth_deg);
  const auto el = sincos_deg(camera.elevation_deg);
  const Vec3 dir{el.c * az.c, el.c * az.s, el.s};
  CameraBasis b;
  b.position = {camera.distance * dir.x, camera.distance * dir.y, camera.distance * dir.z};
  b.forward = {-dir.x, -dir.y, -dir.z};
  b.right = {-az.s, az.c, 0.0};
  b.up = {-el.s * az.c, -el.s * az.s, el.c};
  return b;
}

std::optional<Projected> project_point(const Vec3& point, const CameraSpec& camera) {
  const auto basis = camera_basis(camera);
  const Vec3 rel{point.x - basis.position.x, point.y - basis.position.y, point.z - basis.position.z};
  const double depth = dot(rel, basis.forward);
  double u = dot(rel, basis.right);
  double v = dot(rel, basis.up);
  if (camera.projection == Projection::perspective) {
    if (depth <= 1e-9) return std::nullopt;
    const double t = std::tan(camera.fov_deg * std::numbers::pi / 360.0);
    u /= depth * t;
    v /= depth * t;
  } else {
    u /= camera.ortho_half_extent;
    v /= camera.ortho_half_extent;
  }
  const double half = camera.image_size / 2.0;
  Projected p{(u + 1.0) * half, (1.0 - v) * half, depth};
  const double size = camera.image_size;
  if (!(p.pixel_x >= 0 && p.pixel_x < size && p.pixel_y >= 0 && p.pixel_y < size)) {
    return std::nullopt;
  }
  return p;
}

Image::Image(int w, int h, Rgb fill)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3) {
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill.r;
    rgb[i + 1] = fill.g;
    rgb[i + 2] = fill.b;
  }
}

Rgb Image::at(int x, int y) const {
  const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void Image::set(int x, int y, Rgb c) {
  const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3;
  rgb[i] = c.r;
  rgb[i + 1] = c.g;
  rgb[i + 2] = c.b;
}

CameraSpec RenderConfig::camera(std::size_t view_index) const {
  CameraSpec c;
  c.azimuth_deg = azimuths_deg.at(view_index);
  c.elevation_deg = elevation_deg;
  c.projection = projection;
  c.fov_deg = fov_deg;
  c.image_size = image_size;
  c.distance = distance;
  return c;
}

void RenderConfig::validate() const {
  for (std::size_t i = 0; i < kViewCount; ++i) camera(i).validate();
  if (splat_radius < 0) throw ValidationError("splat_radius must be >= 0");
}

namespace {

std::uint8_t to_byte(double v) {
  const double c = v < 0 ? 0 : (v > 1 ? 1 : v);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

Image render_one(const data::PointCloud& cloud, const CameraSpec& camera, const RenderConfig& config) {
  Image image(camera.image_size, camera.image_size, config.background);
  struct Splat {
    int x, y;
    double depth;
    std::size_t index;
  };
  std::vector<Splat> splats;
  splats.reserve(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    if (auto proj = project_point({p.x, p.y, p.z}, camera)) {
      splats.push_back({static_cast<int>(std::floor(proj->pixel_x)),
                        static_cast<int>(std::floor(proj->pixel_y)), proj->depth, i});
    }
  }
  std::stable_sort(splats.begin(), splats.end(),
                   [](const Splat& a, const Splat& b) { return a.depth > b.depth; });
  const int r = config.splat_radius;
  const int size = camera.image_size;
  for (const auto& s : splats) {
    const auto& p = cloud.points[s.index];
    Rgb color;
    if (cloud.has_color) {
      color = {to_byte(p.r), to_byte(p.g), to_byte(p.b)};
    } else {
      const double t = std::clamp((s.depth - (camera.distance - 1.0)) / 2.0, 0.0, 1.0);
      const auto g = static_cast<std::uint8_t>(std::lround(40.0 + 160.0 * t));
      color = {g, g, g};
    }
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        if (dx * dx + dy * dy > r * r) continue;
        const int x = s.x + dx, y = s.y + dy;
        if (x < 0 || y < 0 || x >= size || y >= size) continue;
        image.set(x, y, color);
      }
    }
  }
  return image;
}

}  // namespace

ViewSet render_views(const data::PointCloud& cloud, const RenderConfig& config) {
  config.validate();
  ViewSet set;
  set.cloud_id = cloud.id;
  for (std::size_t i = 0; i < kViewCount; ++i) {
    const auto camera = config.camera(i);
    set.views[i] = View{render_one(cloud, camera, config), camera};
  }
  return set;
}

std::string encode_png(const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
    throw Error(std::string("PNG sizing failed: ") + png.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
    throw Error(std::string("PNG encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(const std::string& bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw ValidationError(std::string("PNG decode failed: ") + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image image(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, image.rgb.data(), 0, nullptr)) {
    png_image_free(&png);
    throw ValidationError(std::string("PNG decode failed: ") + png.message);
  }
  return image;
}

EncodedViews encode_views(const ViewSet& views) {
  EncodedViews out;
  out.cloud_id = views.cloud_id;
  for (std::size_t i = 0; i < kViewCount; ++i) out.png[i] = encode_png(views.views[i].image);
  return out;
}

std::string view_filename(const std::string& cloud_id, std::size_t view_number) {
  return cloud_id + "_v" + std::to_string(view_number) + ".png";
}

void write_views(const EncodedViews& views, const std::filesystem::path& dir) {
  for (std::size_t i = 0; i < kViewCount; ++i) {
    write_file_atomic(dir / view_filename(views.cloud_id, i + 1), views.png[i]);
  }
}

EncodedViews read_views(const std::string& cloud_id, const std::filesystem::path& dir) {
  EncodedViews out;
  out.cloud_id = cloud_id;
  for (std::size_t i = 0; i < kViewCount; ++i) {
    const auto path = dir / view_filename(cloud_id, i + 1);
    if (!std::filesystem::exists(path)) {
      throw ValidationError("missing rendered view " + path.string());
    }
    out.png[i] = read_file(path);
  }
  return out;
}

}  // namespace pocoti::render
