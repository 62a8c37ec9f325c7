#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>

#include "skelfuse/mesh.hpp"

namespace skelfuse {

enum class PlyEncoding { Ascii, BinaryLittleEndian };

/// Loads an OBJ or PLY file (chosen by extension) and runs check_topology.
/// PLY per-face "label" properties populate face_labels.
/// Throws ParseError, TopologyError, IoError.
TriMesh load_mesh(const std::filesystem::path& path);

TriMesh parse_obj(std::string_view text);
TriMesh parse_ply(std::span<const std::uint8_t> bytes);

/// Writes vertices (double), faces, per-face int32 "label" and palette RGB.
/// Throws LengthMismatch when labels.size() != face count, IoError on write.
void export_labeled_ply(const TriMesh& mesh, std::span<const int> labels,
                        const std::filesystem::path& path,
                        PlyEncoding encoding = PlyEncoding::BinaryLittleEndian);

/// Geometry-only OBJ writer.
void save_obj(const TriMesh& mesh, const std::filesystem::path& path);

/// Fixed label palette; ids wrap modulo the palette size.
std::array<std::uint8_t, 3> label_color(int label);

}  // namespace skelfuse
