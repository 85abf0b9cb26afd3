#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace met {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

/// Triangle mesh. Faces are counter-clockwise vertex index triples.
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::vector<Vec3> normals;  // optional, one per face when present

    std::size_t num_vertices() const { return vertices.size(); }
    std::size_t num_faces() const { return faces.size(); }

    /// Throws DataError when an index is out of range, a face repeats an
    /// index, or a normal is not unit length.
    void validate() const;
};

/// Per-face class indices in [0, num_classes).
struct LabelVec {
    std::vector<int> labels;
    int num_classes = 0;
};

/// Dense remapping of raw label ids in first-appearance order. Shared across
/// files when a dataset needs one consistent class numbering.
class LabelMap {
public:
    int map(long raw);
    int size() const { return static_cast<int>(order_.size()); }
    const std::vector<long>& raw_labels() const { return order_; }

private:
    std::map<long, int> index_;
    std::vector<long> order_;
};

using Rgb = std::array<std::uint8_t, 3>;

Mesh parse_off(std::istream& in);
Mesh parse_obj(std::istream& in);
Mesh parse_off(std::string_view text);
Mesh parse_obj(std::string_view text);

/// ASCII PLY reader for the subset written by write_ply_colored. Face colors,
/// when present, are returned through `face_colors`.
Mesh parse_ply(std::istream& in, std::vector<Rgb>* face_colors = nullptr);
Mesh parse_ply(std::string_view text, std::vector<Rgb>* face_colors = nullptr);

/// Reads OFF, OBJ or PLY depending on the file extension.
Mesh load_mesh(const std::string& path);

/// One integer per non-empty line. With `shared` the dense ids come from (and
/// extend) the shared map; num_classes is then the map size after parsing.
LabelVec parse_face_labels(std::istream& in, std::size_t n_faces, LabelMap* shared = nullptr);
LabelVec parse_face_labels(std::string_view text, std::size_t n_faces, LabelMap* shared = nullptr);

std::string write_off(const Mesh& mesh);
std::string write_ply_face_colors(const Mesh& mesh, const std::vector<Rgb>& colors);
std::string write_ply_colored(const Mesh& mesh, const LabelVec& labels, const std::vector<Rgb>& palette);

/// Deterministic palette of `n` pairwise distinct colors.
std::vector<Rgb> make_palette(std::size_t n);

/// Collapse vertices within `eps` of an earlier vertex onto it, remap faces
/// and drop faces that become degenerate. Normals are dropped.
Mesh merge_duplicate_vertices(const Mesh& mesh, double eps);

/// Same as above, also reporting for each surviving face its original index.
Mesh merge_duplicate_vertices(const Mesh& mesh, double eps, std::vector<int>& kept_faces);

}  // namespace met
