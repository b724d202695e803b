#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mufasa {

using Vec3 = std::array<double, 3>;

/// One radar return in the sensor frame (x forward, y left, z up).
struct RadarPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double rcs = 0.0;  ///< radar cross section, dB
  double v_r = 0.0;  ///< radial Doppler velocity, m/s

  Vec3 position() const { return {x, y, z}; }
  bool finite() const;
  friend bool operator==(const RadarPoint&, const RadarPoint&) = default;
};

struct PointCloud {
  std::vector<RadarPoint> points;
  std::string frame_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

enum class ObjectClass : int { Car = 0, Pedestrian = 1, Cyclist = 2, Truck = 3 };

inline constexpr int kNumClasses = 4;
inline constexpr std::array<ObjectClass, kNumClasses> kAllClasses = {
    ObjectClass::Car, ObjectClass::Pedestrian, ObjectClass::Cyclist, ObjectClass::Truck};

std::string_view class_name(ObjectClass c);
/// Throws std::invalid_argument on unknown names.
ObjectClass class_from_name(std::string_view name);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

struct BoundingBox3D {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;  ///< length along heading, width, height
  double yaw = 0.0;                  ///< radians in (-pi, pi]
  ObjectClass class_id = ObjectClass::Car;

  bool valid() const;
  /// Inclusive containment test in the yaw-rotated box frame, optionally grown by `margin`.
  bool contains(const Vec3& p, double margin = 0.0) const;
  /// BEV corners, counter-clockwise.
  std::array<std::array<double, 2>, 4> bev_corners() const;
  double volume() const { return l * w * h; }
  friend bool operator==(const BoundingBox3D&, const BoundingBox3D&) = default;
};

struct Frame {
  PointCloud cloud;
  std::vector<BoundingBox3D> gt_boxes;
  friend bool operator==(const Frame&, const Frame&) = default;
};

enum class CloudFormat { Csv, Binary };

CloudFormat format_from_path(const std::filesystem::path& path);

/// Errors are reported as std::runtime_error; malformed CSV rows name the 1-based data row.
PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format);
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format);

/// KITTI-style label lines: `class cx cy cz l w h yaw`.
std::vector<BoundingBox3D> read_labels(const std::filesystem::path& path);
void write_labels(const std::vector<BoundingBox3D>& boxes, const std::filesystem::path& path);
std::string format_label(const BoundingBox3D& box);
BoundingBox3D parse_label(std::string_view line);

// Binary cloud layout: 16-byte header then count records of 5 little-endian float64.
inline constexpr std::array<char, 4> kCloudMagic = {'M', 'R', 'P', 'C'};
inline constexpr std::uint32_t kCloudVersion = 1;

}  // namespace mufasa
