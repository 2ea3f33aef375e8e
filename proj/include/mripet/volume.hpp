#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mripet {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Index3 = Eigen::Vector3i;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Grid geometry of a volume. Axes are always aligned with world x/y/z;
/// voxel centers sit at origin + index * spacing.
struct Geometry {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t num_voxels() const {
    return static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
  }

  Vec3 index_to_world(const Vec3 &index) const {
    return origin + index.cwiseProduct(spacing);
  }
  Vec3 world_to_index(const Vec3 &world) const {
    return (world - origin).cwiseQuotient(spacing);
  }
  /// Physical distance between the first and last voxel centers per axis.
  Vec3 extent() const {
    return (dims.cast<double>() - Vec3::Ones()).cwiseProduct(spacing);
  }

  bool operator==(const Geometry &other) const {
    return dims == other.dims && spacing == other.spacing
           && origin == other.origin;
  }

  void validate() const;
};

/// Inclusive voxel-index box.
struct BoundingBox {
  Index3 lo{0, 0, 0};
  Index3 hi{0, 0, 0};

  static BoundingBox full(const Geometry &geom) {
    return {Index3::Zero(), geom.dims - Index3::Ones()};
  }
};

/// Scalar 3D image stored as doubles in x-fastest order.
class Volume {
 public:
  Volume() = default;
  explicit Volume(const Geometry &geom, double fill = 0.0);
  Volume(const Geometry &geom, std::vector<double> data);

  const Geometry &geometry() const { return geom_; }
  const Index3 &dims() const { return geom_.dims; }
  const Vec3 &spacing() const { return geom_.spacing; }
  const Vec3 &origin() const { return geom_.origin; }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  std::size_t linear_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i)
           + static_cast<std::size_t>(geom_.dims.x())
                 * (static_cast<std::size_t>(j)
                    + static_cast<std::size_t>(geom_.dims.y()) * k);
  }
  double operator()(int i, int j, int k) const {
    return data_[linear_index(i, j, k)];
  }
  double &operator()(int i, int j, int k) {
    return data_[linear_index(i, j, k)];
  }

  Vec3 index_to_world(const Vec3 &index) const {
    return geom_.index_to_world(index);
  }
  Vec3 voxel_world(int i, int j, int k) const {
    return geom_.index_to_world(Vec3(i, j, k));
  }
  Vec3 world_to_index(const Vec3 &world) const {
    return geom_.world_to_index(world);
  }

  double min_value() const;
  double max_value() const;

 private:
  Geometry geom_;
  std::vector<double> data_;
};

/// Reads a MetaImage header (.mhd/.mha) and its raw payload. Integer and
/// floating element types are widened to double.
Volume load_metaimage(const std::filesystem::path &path);

/// Writes `path` (.mhd) plus a sibling .raw file holding little-endian
/// float32 samples. Header lines are emitted in a fixed order.
void save_metaimage(const Volume &vol, const std::filesystem::path &path);

Volume extract_voi(const Volume &vol, const BoundingBox &box);

/// Parses "i0,j0,k0,i1,j1,k1".
BoundingBox parse_bounding_box(const std::string &text);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

}  // namespace mripet
