#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <zlib.h>

#include "json.hpp"
#include "skelfuse/errors.hpp"
#include "skelfuse/render.hpp"

namespace skelfuse {
namespace {

static_assert(std::endian::native == std::endian::little,
              "sidecar I/O assumes a little-endian host");

void put_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

void png_chunk(std::string& out, const char* type, const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_be32(out, static_cast<std::uint32_t>(
                    crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 json_vec(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

std::string view_stem(std::size_t i) {
  std::ostringstream s;
  s << "view_" << std::setw(3) << std::setfill('0') << i;
  return s.str();
}

}  // namespace

void write_png_gray(const std::filesystem::path& path, int width, int height,
                    std::span<const std::uint8_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw LengthMismatch("PNG pixel buffer does not match its dimensions");
  std::string raw;
  raw.reserve(static_cast<std::size_t>(width + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(pixels.data()) + static_cast<std::size_t>(y) * width, width);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("zlib compression failed");
  packed.resize(packed_size);

  std::string ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit greyscale

  std::string out("\x89PNG\r\n\x1a\n", 8);
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", packed);
  png_chunk(out, "IEND", "");
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

void save_views(const ViewSet& views, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["endianness"] = "little";
  manifest["layout"] = "face_id:int32[h*w], depth:float32[h*w], intensity:float32[h*w]; row-major";
  manifest["views"] = nlohmann::json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    const Camera& cam = views.cameras[i];
    const FrameBuffer& fb = views.frames[i];
    const std::string stem = view_stem(i);

    std::vector<std::uint8_t> gray(fb.intensity.size());
    for (std::size_t k = 0; k < gray.size(); ++k)
      gray[k] = static_cast<std::uint8_t>(std::lround(255.0 * fb.intensity[k]));
    write_png_gray(dir / (stem + ".png"), fb.width, fb.height, gray);

    std::ofstream bin(dir / (stem + ".bin"), std::ios::binary);
    if (!bin) throw IoError("cannot write " + (dir / (stem + ".bin")).string());
    bin.write(reinterpret_cast<const char*>(fb.face_id.data()),
              static_cast<std::streamsize>(fb.face_id.size() * sizeof(std::int32_t)));
    bin.write(reinterpret_cast<const char*>(fb.depth.data()),
              static_cast<std::streamsize>(fb.depth.size() * sizeof(float)));
    bin.write(reinterpret_cast<const char*>(fb.intensity.data()),
              static_cast<std::streamsize>(fb.intensity.size() * sizeof(float)));
    if (!bin) throw IoError("write failed for " + stem + ".bin");

    manifest["views"].push_back({
        {"index", i},
        {"width", fb.width},
        {"height", fb.height},
        {"intensity_png", stem + ".png"},
        {"buffers", stem + ".bin"},
        {"camera",
         {{"eye", vec_json(cam.eye)},
          {"look_at", vec_json(cam.look_at)},
          {"up", vec_json(cam.up)},
          {"fov_y", cam.fov_y},
          {"near", cam.near},
          {"far", cam.far}}},
    });
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest.dump(1) << '\n';
}

ViewSet load_views(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  ViewSet views;
  try {
    nlohmann::json manifest;
    in >> manifest;
    if (manifest.value("endianness", "") != "little") throw ParseError("unsupported sidecar endianness");
    for (const auto& v : manifest.at("views")) {
      Camera cam;
      const auto& c = v.at("camera");
      cam.eye = json_vec(c.at("eye"));
      cam.look_at = json_vec(c.at("look_at"));
      cam.up = json_vec(c.at("up"));
      cam.fov_y = c.at("fov_y").get<double>();
      cam.near = c.at("near").get<double>();
      cam.far = c.at("far").get<double>();
      cam.width = v.at("width").get<int>();
      cam.height = v.at("height").get<int>();
      cam.check();

      FrameBuffer fb(cam.width, cam.height);
      const auto path = dir / v.at("buffers").get<std::string>();
      std::ifstream bin(path, std::ios::binary);
      if (!bin) throw IoError("cannot open " + path.string());
      bin.read(reinterpret_cast<char*>(fb.face_id.data()),
               static_cast<std::streamsize>(fb.face_id.size() * sizeof(std::int32_t)));
      bin.read(reinterpret_cast<char*>(fb.depth.data()),
               static_cast<std::streamsize>(fb.depth.size() * sizeof(float)));
      bin.read(reinterpret_cast<char*>(fb.intensity.data()),
               static_cast<std::streamsize>(fb.intensity.size() * sizeof(float)));
      if (!bin) throw ParseError("truncated view sidecar " + path.string());
      views.cameras.push_back(cam);
      views.frames.push_back(std::move(fb));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("malformed view manifest: ") + ex.what());
  }
  return views;
}

}  // namespace skelfuse
