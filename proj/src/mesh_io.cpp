#include "skelfuse/mesh_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "skelfuse/errors.hpp"

namespace skelfuse {
namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

// ---------------------------------------------------------------------------
// OBJ

long parse_obj_index(std::string_view token, std::size_t vertex_count) {
  const auto slash = token.find('/');
  if (slash != std::string_view::npos) token = token.substr(0, slash);
  long idx = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), idx);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw ParseError("bad OBJ face index '" + std::string(token) + "'");
  if (idx < 0) return static_cast<long>(vertex_count) + idx;
  if (idx == 0) throw ParseError("OBJ indices are 1-based; found 0");
  return idx - 1;
}

// ---------------------------------------------------------------------------
// PLY

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::Int8;
  if (name == "uchar" || name == "uint8") return PlyType::UInt8;
  if (name == "short" || name == "int16") return PlyType::Int16;
  if (name == "ushort" || name == "uint16") return PlyType::UInt16;
  if (name == "int" || name == "int32") return PlyType::Int32;
  if (name == "uint" || name == "uint32") return PlyType::UInt32;
  if (name == "float" || name == "float32") return PlyType::Float32;
  if (name == "double" || name == "float64") return PlyType::Float64;
  throw ParseError("unknown PLY type '" + name + "'");
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

enum class PlyFormat { Ascii, BinaryLE, BinaryBE };

// Reads scalar values from either encoding.
class PlyReader {
 public:
  PlyReader(std::span<const std::uint8_t> body, PlyFormat format)
      : body_(body), format_(format) {
    if (format_ == PlyFormat::Ascii)
      text_.str(std::string(reinterpret_cast<const char*>(body.data()), body.size()));
  }

  double read(PlyType t) {
    if (format_ == PlyFormat::Ascii) {
      std::string token;
      if (!(text_ >> token)) throw ParseError("unexpected end of PLY ASCII body");
      try {
        std::size_t used = 0;
        const double v = std::stod(token, &used);
        if (used != token.size()) throw ParseError("bad PLY value '" + token + "'");
        return v;
      } catch (const std::logic_error&) {
        throw ParseError("bad PLY value '" + token + "'");
      }
    }
    const std::size_t n = ply_size(t);
    if (pos_ + n > body_.size()) throw ParseError("unexpected end of PLY binary body");
    std::uint8_t raw[8];
    std::memcpy(raw, body_.data() + pos_, n);
    pos_ += n;
    const bool swap = (format_ == PlyFormat::BinaryBE) != (std::endian::native == std::endian::big);
    if (swap) std::reverse(raw, raw + n);
    switch (t) {
      case PlyType::Int8: { std::int8_t v; std::memcpy(&v, raw, 1); return v; }
      case PlyType::UInt8: return raw[0];
      case PlyType::Int16: { std::int16_t v; std::memcpy(&v, raw, 2); return v; }
      case PlyType::UInt16: { std::uint16_t v; std::memcpy(&v, raw, 2); return v; }
      case PlyType::Int32: { std::int32_t v; std::memcpy(&v, raw, 4); return v; }
      case PlyType::UInt32: { std::uint32_t v; std::memcpy(&v, raw, 4); return v; }
      case PlyType::Float32: { float v; std::memcpy(&v, raw, 4); return v; }
      case PlyType::Float64: { double v; std::memcpy(&v, raw, 8); return v; }
    }
    return 0.0;
  }

 private:
  std::span<const std::uint8_t> body_;
  PlyFormat format_;
  std::size_t pos_ = 0;
  std::istringstream text_;
};

long as_index(double v) {
  if (v != std::floor(v)) throw ParseError("non-integer PLY index");
  return static_cast<long>(v);
}

template <typename T>
void put(std::string& out, T value) {
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.append(raw, sizeof(T));
}

}  // namespace

TriMesh parse_obj(std::string_view text) {
  TriMesh mesh;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z()))
        throw ParseError("malformed vertex on OBJ line " + std::to_string(line_no));
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<long> poly;
      std::string token;
      while (ls >> token) poly.push_back(parse_obj_index(token, mesh.vertices.size()));
      if (poly.size() < 3)
        throw ParseError("face with fewer than 3 vertices on OBJ line " + std::to_string(line_no));
      for (std::size_t k = 1; k + 1 < poly.size(); ++k)
        mesh.faces.push_back({static_cast<int>(poly[0]), static_cast<int>(poly[k]),
                              static_cast<int>(poly[k + 1])});
    }
  }
  check_topology(mesh);
  return mesh;
}

TriMesh parse_ply(std::span<const std::uint8_t> bytes) {
  // Header is ASCII up to and including "end_header\n".
  const std::string_view all(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const auto header_end = all.find("end_header");
  if (all.substr(0, 3) != "ply" || header_end == std::string_view::npos)
    throw ParseError("not a PLY file");
  auto body_start = all.find('\n', header_end);
  if (body_start == std::string_view::npos) throw ParseError("truncated PLY header");
  ++body_start;

  std::istringstream header{std::string(all.substr(0, header_end))};
  std::vector<PlyElement> elements;
  std::optional<PlyFormat> format;
  std::string line;
  std::getline(header, line);  // "ply"
  while (std::getline(header, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "format") {
      std::string name;
      ls >> name;
      if (name == "ascii") format = PlyFormat::Ascii;
      else if (name == "binary_little_endian") format = PlyFormat::BinaryLE;
      else if (name == "binary_big_endian") format = PlyFormat::BinaryBE;
      else throw ParseError("unknown PLY format '" + name + "'");
    } else if (tag == "element") {
      PlyElement e;
      if (!(ls >> e.name >> e.count)) throw ParseError("malformed PLY element line");
      elements.push_back(std::move(e));
    } else if (tag == "property") {
      if (elements.empty()) throw ParseError("PLY property before element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> p.name;
        p.is_list = true;
        p.count_type = ply_type(count_type);
        p.type = ply_type(item_type);
      } else {
        p.type = ply_type(type);
        ls >> p.name;
      }
      if (p.name.empty()) throw ParseError("PLY property without a name");
      elements.back().properties.push_back(p);
    } else if (tag == "comment" || tag == "obj_info") {
      continue;
    } else {
      throw ParseError("unexpected PLY header line '" + line + "'");
    }
  }
  if (!format) throw ParseError("PLY header lacks a format line");

  TriMesh mesh;
  std::vector<int> labels;
  bool has_labels = false;
  PlyReader reader(bytes.subspan(body_start), *format);
  for (const PlyElement& e : elements) {
    if (e.name == "vertex") {
      mesh.vertices.reserve(e.count);
      for (std::size_t i = 0; i < e.count; ++i) {
        Vec3 p = Vec3::Zero();
        for (const PlyProperty& prop : e.properties) {
          if (prop.is_list) {
            const auto n = as_index(reader.read(prop.count_type));
            for (long k = 0; k < n; ++k) reader.read(prop.type);
            continue;
          }
          const double v = reader.read(prop.type);
          if (prop.name == "x") p.x() = v;
          else if (prop.name == "y") p.y() = v;
          else if (prop.name == "z") p.z() = v;
        }
        mesh.vertices.push_back(p);
      }
    } else if (e.name == "face") {
      mesh.faces.reserve(e.count);
      for (const PlyProperty& prop : e.properties)
        if (prop.name == "label" && !prop.is_list) has_labels = true;
      for (std::size_t i = 0; i < e.count; ++i) {
        std::vector<long> poly;
        int label = 0;
        for (const PlyProperty& prop : e.properties) {
          if (prop.is_list) {
            const auto n = as_index(reader.read(prop.count_type));
            std::vector<long> items;
            for (long k = 0; k < n; ++k) items.push_back(as_index(reader.read(prop.type)));
            if (prop.name == "vertex_indices" || prop.name == "vertex_index") poly = std::move(items);
            continue;
          }
          const double v = reader.read(prop.type);
          if (prop.name == "label") label = static_cast<int>(as_index(v));
        }
        if (poly.size() < 3) throw ParseError("PLY face with fewer than 3 vertices");
        for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
          mesh.faces.push_back({static_cast<int>(poly[0]), static_cast<int>(poly[k]),
                                static_cast<int>(poly[k + 1])});
          if (has_labels) labels.push_back(label);
        }
      }
    } else {
      for (std::size_t i = 0; i < e.count; ++i)
        for (const PlyProperty& prop : e.properties) {
          const long n = prop.is_list ? as_index(reader.read(prop.count_type)) : 1;
          for (long k = 0; k < n; ++k) reader.read(prop.type);
        }
    }
  }
  if (has_labels) mesh.face_labels = std::move(labels);
  return mesh;
}

TriMesh load_mesh(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string ext = lower_ext(path);
  TriMesh mesh;
  if (ext == ".obj")
    mesh = parse_obj(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  else if (ext == ".ply")
    mesh = parse_ply(bytes);
  else
    throw ParseError("unsupported mesh extension '" + ext + "'");
  check_topology(mesh);
  return mesh;
}

std::array<std::uint8_t, 3> label_color(int label) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 20> kPalette{{
      {200, 120, 120}, {31, 119, 180},  {255, 127, 14}, {44, 160, 44},   {214, 39, 40},
      {148, 103, 189}, {140, 86, 75},   {227, 119, 194}, {127, 127, 127}, {188, 189, 34},
      {23, 190, 207},  {174, 199, 232}, {255, 187, 120}, {152, 223, 138}, {255, 152, 150},
      {197, 176, 213}, {196, 156, 148}, {247, 182, 210}, {199, 199, 199}, {219, 219, 141},
  }};
  const auto n = static_cast<int>(kPalette.size());
  return kPalette[static_cast<std::size_t>(((label % n) + n) % n)];
}

void export_labeled_ply(const TriMesh& mesh, std::span<const int> labels,
                        const std::filesystem::path& path, PlyEncoding encoding) {
  if (labels.size() != mesh.faces.size())
    throw LengthMismatch("labels length " + std::to_string(labels.size()) + " != face count " +
                         std::to_string(mesh.faces.size()));
  std::string out;
  out += "ply\n";
  out += encoding == PlyEncoding::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n";
  out += "element vertex " + std::to_string(mesh.vertices.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  out += "element face " + std::to_string(mesh.faces.size()) + "\n";
  out += "property list uchar int vertex_indices\nproperty int label\n";
  out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  if (encoding == PlyEncoding::Ascii) {
    std::ostringstream body;
    body.precision(17);
    for (const Vec3& v : mesh.vertices) body << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      const auto rgb = label_color(labels[f]);
      body << "3 " << mesh.faces[f][0] << ' ' << mesh.faces[f][1] << ' ' << mesh.faces[f][2] << ' '
           << labels[f] << ' ' << int(rgb[0]) << ' ' << int(rgb[1]) << ' ' << int(rgb[2]) << '\n';
    }
    out += body.str();
  } else {
    for (const Vec3& v : mesh.vertices) {
      put(out, v.x());
      put(out, v.y());
      put(out, v.z());
    }
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      put(out, std::uint8_t{3});
      for (int v : mesh.faces[f]) put(out, static_cast<std::int32_t>(v));
      put(out, static_cast<std::int32_t>(labels[f]));
      for (std::uint8_t c : label_color(labels[f])) put(out, c);
    }
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed for " + path.string());
}

void save_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream file(path);
  if (!file) throw IoError("cannot write " + path.string());
  file.precision(17);
  for (const Vec3& v : mesh.vertices) file << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const Face& t : mesh.faces) file << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!file) throw IoError("write failed for " + path.string());
}

}  // namespace skelfuse
