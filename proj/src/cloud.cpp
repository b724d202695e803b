#include "mufasa/cloud.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace mufasa {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

bool RadarPoint::finite() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && std::isfinite(rcs) &&
         std::isfinite(v_r);
}

std::string_view class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::Car: return "Car";
    case ObjectClass::Pedestrian: return "Pedestrian";
    case ObjectClass::Cyclist: return "Cyclist";
    case ObjectClass::Truck: return "Truck";
  }
  throw std::invalid_argument("unknown class id");
}

ObjectClass class_from_name(std::string_view name) {
  for (ObjectClass c : kAllClasses)
    if (class_name(c) == name) return c;
  throw std::invalid_argument("unknown class name '" + std::string(name) + "'");
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  if (a > -pi && a <= pi) return a;
  double r = std::remainder(a, 2.0 * pi);  // [-pi, pi]
  if (r <= -pi) r += 2.0 * pi;
  return r;
}

bool BoundingBox3D::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(cz) && l > 0.0 && w > 0.0 &&
         h > 0.0 && std::isfinite(yaw) && yaw > -std::numbers::pi && yaw <= std::numbers::pi;
}

bool BoundingBox3D::contains(const Vec3& p, double margin) const {
  const double dx = p[0] - cx;
  const double dy = p[1] - cy;
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * l + margin && std::abs(ly) <= 0.5 * w + margin &&
         std::abs(p[2] - cz) <= 0.5 * h + margin;
}

std::array<std::array<double, 2>, 4> BoundingBox3D::bev_corners() const {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  const double hl = 0.5 * l;
  const double hw = 0.5 * w;
  const std::array<std::array<double, 2>, 4> local = {{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<std::array<double, 2>, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {cx + c * local[i][0] - s * local[i][1], cy + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

CloudFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return CloudFormat::Csv;
  if (ext == ".bin" || ext == ".mrpc") return CloudFormat::Binary;
  throw std::invalid_argument("cannot infer cloud format from '" + path.string() + "'");
}

namespace {

PointCloud read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  PointCloud cloud;
  cloud.frame_id = path.stem().string();
  std::string line;
  std::size_t row = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("x,", 0) == 0) continue;
    }
    ++row;
    std::vector<std::string> tokens;
    std::stringstream ss(line);
    std::string token;
    while (std::getline(ss, token, ',')) tokens.push_back(token);
    if (tokens.size() != 5)
      throw std::runtime_error("csv row " + std::to_string(row) + " must have 5 fields");
    std::array<double, 5> v{};
    for (std::size_t f = 0; f < 5; ++f) {
      char* end = nullptr;
      v[f] = std::strtod(tokens[f].c_str(), &end);
      if (tokens[f].empty() || end == tokens[f].c_str() || *end != '\0')
        throw std::runtime_error("malformed csv row " + std::to_string(row) + ": '" + line + "'");
      if (!std::isfinite(v[f]))
        throw std::runtime_error("non-finite value in csv row " + std::to_string(row));
    }
    cloud.points.push_back({v[0], v[1], v[2], v[3], v[4]});
  }
  return cloud;
}

void write_csv(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "x,y,z,rcs,v_r\n";
  char buf[256];
  for (const auto& p : cloud.points) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f\n", p.x, p.y, p.z, p.rcs, p.v_r);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

PointCloud read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  PointCloud cloud;
  cloud.frame_id = path.stem().string();
  in.peek();
  if (in.eof()) return cloud;
  char header[16];
  if (!in.read(header, sizeof(header))) throw std::runtime_error("truncated cloud header");
  if (std::memcmp(header, kCloudMagic.data(), 4) != 0) throw std::runtime_error("bad cloud magic");
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  std::memcpy(&version, header + 4, 4);
  std::memcpy(&count, header + 8, 8);
  if (version != kCloudVersion)
    throw std::runtime_error("unsupported cloud version " + std::to_string(version));
  cloud.points.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    double rec[5];
    if (!in.read(reinterpret_cast<char*>(rec), sizeof(rec)))
      throw std::runtime_error("truncated cloud record " + std::to_string(i));
    RadarPoint p{rec[0], rec[1], rec[2], rec[3], rec[4]};
    if (!p.finite()) throw std::runtime_error("non-finite value in record " + std::to_string(i));
    cloud.points[i] = p;
  }
  return cloud;
}

void write_binary(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  char header[16];
  std::memcpy(header, kCloudMagic.data(), 4);
  const std::uint32_t version = kCloudVersion;
  const std::uint64_t count = cloud.points.size();
  std::memcpy(header + 4, &version, 4);
  std::memcpy(header + 8, &count, 8);
  out.write(header, sizeof(header));
  for (const auto& p : cloud.points) {
    const double rec[5] = {p.x, p.y, p.z, p.rcs, p.v_r};
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace

PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format) {
  return format == CloudFormat::Csv ? read_csv(path) : read_binary(path);
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
  if (format == CloudFormat::Csv)
    write_csv(cloud, path);
  else
    write_binary(cloud, path);
}

std::string format_label(const BoundingBox3D& b) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s %.6f %.6f %.6f %.6f %.6f %.6f %.6f",
                std::string(class_name(b.class_id)).c_str(), b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw);
  return buf;
}

BoundingBox3D parse_label(std::string_view line) {
  std::istringstream in{std::string(line)};
  std::string name;
  BoundingBox3D b;
  if (!(in >> name >> b.cx >> b.cy >> b.cz >> b.l >> b.w >> b.h >> b.yaw))
    throw std::runtime_error("malformed label line: '" + std::string(line) + "'");
  b.class_id = class_from_name(name);
  b.yaw = wrap_angle(b.yaw);
  if (!b.valid()) throw std::runtime_error("invalid box in label line: '" + std::string(line) + "'");
  return b;
}

std::vector<BoundingBox3D> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<BoundingBox3D> boxes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    boxes.push_back(parse_label(line));
  }
  return boxes;
}

void write_labels(const std::vector<BoundingBox3D>& boxes, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (const auto& b : boxes) out << format_label(b) << '\n';
}

}  // namespace mufasa
