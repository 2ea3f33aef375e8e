#include "mripet/volume.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mripet {

void Geometry::validate() const {
  if ((dims.array() < 1).any())
    throw Error("volume dims must be >= 1 on every axis");
  if ((spacing.array() <= 0.0).any() || !spacing.allFinite())
    throw Error("volume spacing must be > 0 on every axis");
  if (!origin.allFinite()) throw Error("volume origin must be finite");
}

Volume::Volume(const Geometry &geom, double fill)
    : geom_(geom), data_((geom.validate(), geom.num_voxels()), fill) { }

Volume::Volume(const Geometry &geom, std::vector<double> data)
    : geom_(geom), data_(std::move(data)) {
  geom_.validate();
  if (data_.size() != geom_.num_voxels())
    throw Error("volume data length " + std::to_string(data_.size())
                + " does not match dims product "
                + std::to_string(geom_.num_voxels()));
}

double Volume::min_value() const {
  return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

double Volume::max_value() const {
  return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {
  std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::vector<double> parse_numbers(const std::string &key,
                                    const std::string &value,
                                    std::size_t expected) {
    std::istringstream in(value);
    std::vector<double> out;
    double v;
    while (in >> v) out.push_back(v);
    if (!in.eof() || out.size() != expected)
      throw IoError("MetaImage key '" + key + "' expects " + std::to_string(expected)
                    + " numbers, got '" + value + "'");
    return out;
  }

  bool parse_bool(const std::string &key, const std::string &value) {
    if (value == "True" || value == "true" || value == "1") return true;
    if (value == "False" || value == "false" || value == "0") return false;
    throw IoError("MetaImage key '" + key + "' has non-boolean value '" + value + "'");
  }

  struct ElementInfo {
    std::size_t bytes;
    double (*read)(const unsigned char *p);
  };

  template <class T>
  double read_as(const unsigned char *p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
  }

  ElementInfo element_info(const std::string &type) {
    static const std::map<std::string, ElementInfo> table = {
      {"MET_UCHAR", {1, &read_as<std::uint8_t>}},
      {"MET_CHAR", {1, &read_as<std::int8_t>}},
      {"MET_SHORT", {2, &read_as<std::int16_t>}},
      {"MET_USHORT", {2, &read_as<std::uint16_t>}},
      {"MET_INT", {4, &read_as<std::int32_t>}},
      {"MET_UINT", {4, &read_as<std::uint32_t>}},
      {"MET_FLOAT", {4, &read_as<float>}},
      {"MET_DOUBLE", {8, &read_as<double>}},
    };
    auto it = table.find(type);
    if (it == table.end())
      throw IoError("unsupported MetaImage ElementType '" + type + "'");
    return it->second;
  }

  void check_identity_matrix(const std::string &key, const std::string &value) {
    auto m = parse_numbers(key, value, 9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        if (std::abs(m[r * 3 + c] - (r == c ? 1.0 : 0.0)) > 1e-6)
          throw IoError("MetaImage key '" + key + "' = '" + value
                        + "' is not the identity; direction cosines are not supported");
  }
}  // namespace

Volume load_metaimage(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open MetaImage header " + path.string());

  Geometry geom;
  bool have_dims = false;
  std::string element_type;
  std::string data_file;
  bool msb = false;
  long header_skip = 0;

  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("malformed MetaImage header line '" + line + "' in "
                    + path.string());
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw IoError("malformed MetaImage header line '" + line + "'");

    if (key == "NDims") {
      if (value != "3")
        throw IoError("MetaImage NDims = " + value + " unsupported (need 3)");
    } else if (key == "DimSize") {
      auto v = parse_numbers(key, value, 3);
      for (int a = 0; a < 3; ++a) {
        if (v[a] < 1 || v[a] != static_cast<int>(v[a]))
          throw IoError("MetaImage DimSize = '" + value + "' is invalid");
        geom.dims[a] = static_cast<int>(v[a]);
      }
      have_dims = true;
    } else if (key == "ElementSpacing" || key == "ElementSize") {
      auto v = parse_numbers(key, value, 3);
      geom.spacing = Vec3(v[0], v[1], v[2]);
    } else if (key == "Offset" || key == "Origin" || key == "Position") {
      auto v = parse_numbers(key, value, 3);
      geom.origin = Vec3(v[0], v[1], v[2]);
    } else if (key == "ElementType") {
      element_type = value;
    } else if (key == "ElementByteOrderMSB" || key == "BinaryDataByteOrderMSB") {
      msb = parse_bool(key, value);
    } else if (key == "TransformMatrix" || key == "Rotation" || key == "Orientation") {
      check_identity_matrix(key, value);
    } else if (key == "CompressedData") {
      if (parse_bool(key, value))
        throw IoError("MetaImage CompressedData = True is not supported");
    } else if (key == "BinaryData") {
      if (!parse_bool(key, value))
        throw IoError("MetaImage BinaryData = False (ASCII data) is not supported");
    } else if (key == "ElementNumberOfChannels") {
      if (value != "1")
        throw IoError("MetaImage ElementNumberOfChannels = " + value + " unsupported");
    } else if (key == "HeaderSize") {
      header_skip = std::stol(value);
      if (header_skip < 0)
        throw IoError("MetaImage HeaderSize = " + value + " unsupported");
    } else if (key == "ElementDataFile") {
      data_file = value;
      break;  // by convention the last header key
    }
  }

  if (!have_dims) throw IoError("MetaImage header " + path.string() + " lacks DimSize");
  if (element_type.empty())
    throw IoError("MetaImage header " + path.string() + " lacks ElementType");
  if (data_file.empty())
    throw IoError("MetaImage header " + path.string() + " lacks ElementDataFile");
  geom.validate();
  const ElementInfo info = element_info(element_type);
  const std::size_t expected = geom.num_voxels() * info.bytes;

  std::vector<unsigned char> bytes;
  if (data_file == "LOCAL") {
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  } else {
    const auto raw_path = path.parent_path() / data_file;
    std::ifstream raw(raw_path, std::ios::binary);
    if (!raw) throw IoError("cannot open MetaImage data file " + raw_path.string());
    bytes.assign(std::istreambuf_iterator<char>(raw), std::istreambuf_iterator<char>());
  }
  if (header_skip > 0) {
    if (static_cast<std::size_t>(header_skip) > bytes.size())
      throw IoError("MetaImage HeaderSize exceeds data file size");
    bytes.erase(bytes.begin(), bytes.begin() + header_skip);
  }
  if (bytes.size() != expected)
    throw IoError("MetaImage data size mismatch for " + data_file + ": DimSize x "
                  + element_type + " needs " + std::to_string(expected)
                  + " bytes, file has " + std::to_string(bytes.size()));

  const bool swap = msb != (std::endian::native == std::endian::big);
  std::vector<double> data(geom.num_voxels());
  unsigned char tmp[8];
  for (std::size_t n = 0; n < data.size(); ++n) {
    const unsigned char *p = bytes.data() + n * info.bytes;
    if (swap && info.bytes > 1) {
      std::reverse_copy(p, p + info.bytes, tmp);
      p = tmp;
    }
    data[n] = info.read(p);
  }
  return Volume(geom, std::move(data));
}

void save_metaimage(const Volume &vol, const std::filesystem::path &path) {
  auto raw_path = path;
  raw_path.replace_extension(".raw");
  const Geometry &g = vol.geometry();

  std::ostringstream header;
  auto triple = [](const auto &v) {
    return format_double(v[0]) + " " + format_double(v[1]) + " " + format_double(v[2]);
  };
  header << "ObjectType = Image\n"
         << "NDims = 3\n"
         << "BinaryData = True\n"
         << "DimSize = " << g.dims.x() << " " << g.dims.y() << " " << g.dims.z() << "\n"
         << "ElementSpacing = " << triple(g.spacing) << "\n"
         << "Offset = " << triple(g.origin) << "\n"
         << "ElementType = MET_FLOAT\n"
         << "ElementByteOrderMSB = False\n"
         << "ElementDataFile = " << raw_path.filename().string() << "\n";

  std::ofstream hdr(path, std::ios::binary | std::ios::trunc);
  if (!hdr) throw IoError("cannot write MetaImage header " + path.string());
  hdr << header.str();
  if (!hdr) throw IoError("failed writing " + path.string());

  std::vector<unsigned char> bytes(vol.size() * 4);
  for (std::size_t n = 0; n < vol.size(); ++n) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(vol.data()[n]));
    for (int b = 0; b < 4; ++b) bytes[n * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
  if (!raw) throw IoError("cannot write MetaImage data " + raw_path.string());
  raw.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!raw) throw IoError("failed writing " + raw_path.string());
}

Volume extract_voi(const Volume &vol, const BoundingBox &box) {
  const Index3 &d = vol.dims();
  if ((box.lo.array() < 0).any() || (box.hi.array() >= d.array()).any()
      || (box.lo.array() > box.hi.array()).any()) {
    std::ostringstream msg;
    msg << "VOI box lo=(" << box.lo.transpose() << ") hi=(" << box.hi.transpose()
        << ") out of range for dims (" << d.transpose() << ")";
    throw Error(msg.str());
  }
  Geometry g = vol.geometry();
  g.dims = box.hi - box.lo + Index3::Ones();
  g.origin = vol.origin() + box.lo.cast<double>().cwiseProduct(vol.spacing());
  Volume out(g);
  for (int k = 0; k < g.dims.z(); ++k)
    for (int j = 0; j < g.dims.y(); ++j)
      for (int i = 0; i < g.dims.x(); ++i)
        out(i, j, k) = vol(i + box.lo.x(), j + box.lo.y(), k + box.lo.z());
  return out;
}

BoundingBox parse_bounding_box(const std::string &text) {
  std::vector<int> v;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    int x = 0;
    auto res = std::from_chars(item.data(), item.data() + item.size(), x);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size())
      throw Error("bounding box '" + text + "' must be six comma-separated integers");
    v.push_back(x);
  }
  if (v.size() != 6)
    throw Error("bounding box '" + text + "' must be six comma-separated integers");
  return {Index3(v[0], v[1], v[2]), Index3(v[3], v[4], v[5])};
}

}  // namespace mripet
