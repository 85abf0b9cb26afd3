#include "met/sample_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "met/error.hpp"

namespace met {

static_assert(std::endian::native == std::endian::little, "sample files are written in host byte order");

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'E', 'T', 'S', 'M', 'P', 'L', '\n'};

struct Blob {
    std::string bytes;
    json index = json::object();

    template <typename T>
    void add(const std::string& name, const char* dtype, const T* data, std::vector<std::int64_t> shape) {
        std::size_t count = 1;
        for (auto d : shape) count *= static_cast<std::size_t>(d);
        // 8-byte aligned offsets keep the layout friendly to memory mapping
        while (bytes.size() % 8) bytes.push_back('\0');
        index[name] = {{"dtype", dtype}, {"shape", shape}, {"offset", bytes.size()}};
        if (count) bytes.append(reinterpret_cast<const char*>(data), count * sizeof(T));
    }
};

template <typename T>
std::vector<T> take(const json& index, const std::string& bytes, const std::string& name, const char* dtype,
                    std::vector<std::int64_t>* shape_out = nullptr) {
    if (!index.contains(name)) throw DataError("sample file lacks array '" + name + "'");
    const auto& e = index.at(name);
    if (e.at("dtype") != dtype) throw DataError("array '" + name + "' has dtype " + e.at("dtype").dump());
    std::size_t count = 1;
    std::vector<std::int64_t> shape = e.at("shape").get<std::vector<std::int64_t>>();
    for (auto d : shape) {
        if (d < 0) throw DataError("array '" + name + "' has a negative extent");
        count *= static_cast<std::size_t>(d);
    }
    const auto offset = e.at("offset").get<std::size_t>();
    if (offset > bytes.size() || count * sizeof(T) > bytes.size() - offset)
        throw DataError("array '" + name + "' runs past the end of the file");
    std::vector<T> out(count);
    if (count) std::memcpy(out.data(), bytes.data() + offset, count * sizeof(T));
    if (shape_out) *shape_out = shape;
    return out;
}

}  // namespace

void write_sample(std::ostream& out, const SampleRecord& record) {
    const Sample& s = record.sample;
    const auto n = static_cast<std::int64_t>(s.num_faces());
    const auto w = static_cast<std::int64_t>(s.features.cols());

    Blob blob;
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> T = s.features;
    blob.add("T", "f64", T.data(), {n, w});
    std::vector<std::int32_t> pairs;
    for (const auto& [i, j] : s.adjacency.edges()) pairs.insert(pairs.end(), {i, j});
    blob.add("A", "i32", pairs.data(), {static_cast<std::int64_t>(s.adjacency.edges().size()), 2});
    const std::vector<std::int32_t> J(s.cluster_ids.begin(), s.cluster_ids.end());
    blob.add("J", "i32", J.data(), {n});
    const std::vector<std::int32_t> labels(s.labels.labels.begin(), s.labels.labels.end());
    blob.add("labels", "i32", labels.data(), {n});
    blob.add("areas", "f64", s.face_areas.data(), {n});
    blob.add("weights", "f64", s.area_weights.data(), {n});
    blob.add("mask", "u8", s.real_mask.data(), {n});
    blob.add("eigenvalues", "f64", s.eigenvalues.data(), {static_cast<std::int64_t>(s.eigenvalues.size())});
    std::vector<double> verts;
    for (const auto& v : s.mesh.vertices) verts.insert(verts.end(), {v.x(), v.y(), v.z()});
    blob.add("vertices", "f64", verts.data(), {static_cast<std::int64_t>(s.mesh.vertices.size()), 3});
    std::vector<std::int32_t> faces;
    for (const auto& f : s.mesh.faces) faces.insert(faces.end(), {f[0], f[1], f[2]});
    blob.add("faces", "i32", faces.data(), {static_cast<std::int64_t>(s.mesh.faces.size()), 3});

    json manifest = {
        {"format_version", kSampleFormatVersion},
        {"name", s.name},
        {"num_faces", n},
        {"num_real", s.num_real()},
        {"num_clusters", s.num_clusters},
        {"num_classes", s.labels.num_classes},
        {"eigen_count", s.eigen_count},
        {"raw_labels", record.raw_labels},
        {"config", record.config.is_null() ? json::object() : record.config},
        {"arrays", blob.index},
    };
    const std::string text = manifest.dump();
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(blob.bytes.data(), static_cast<std::streamsize>(blob.bytes.size()));
    if (!out) throw DataError("failed to write sample '" + s.name + "'");
}

void write_sample(const std::filesystem::path& path, const SampleRecord& record) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    write_sample(out, record);
}

SampleRecord read_sample(std::istream& in) {
    char magic[8];
    std::uint64_t len = 0;
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw DataError("not a sample file (bad magic)");
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1ull << 32))
        throw DataError("sample file has a corrupt header");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw DataError("sample manifest is truncated");
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

    SampleRecord rec;
    Sample& s = rec.sample;
    try {
        const json m = json::parse(text);
        if (m.at("format_version") != kSampleFormatVersion)
            throw DataError("unsupported sample format version " + m.at("format_version").dump());
        const json& idx = m.at("arrays");
        s.name = m.at("name").get<std::string>();
        s.num_clusters = m.at("num_clusters").get<int>();
        s.eigen_count = m.at("eigen_count").get<int>();
        s.labels.num_classes = m.at("num_classes").get<int>();
        rec.raw_labels = m.at("raw_labels").get<std::vector<long>>();
        rec.config = m.at("config");

        std::vector<std::int64_t> shape;
        const auto T = take<double>(idx, bytes, "T", "f64", &shape);
        if (shape.size() != 2) throw DataError("array 'T' must be two-dimensional");
        const auto n = static_cast<Eigen::Index>(shape[0]);
        s.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            T.data(), n, static_cast<Eigen::Index>(shape[1]));

        const auto pairs = take<std::int32_t>(idx, bytes, "A", "i32");
        std::vector<std::pair<int, int>> edges;
        for (std::size_t k = 0; k + 1 < pairs.size(); k += 2) {
            if (pairs[k] < 0 || pairs[k + 1] < 0 || pairs[k] >= n || pairs[k + 1] >= n)
                throw DataError("adjacency index out of range");
            edges.emplace_back(pairs[k], pairs[k + 1]);
        }
        s.adjacency = AdjacencyMatrix(static_cast<int>(n), std::move(edges));

        const auto J = take<std::int32_t>(idx, bytes, "J", "i32");
        s.cluster_ids.assign(J.begin(), J.end());
        const auto labels = take<std::int32_t>(idx, bytes, "labels", "i32");
        s.labels.labels.assign(labels.begin(), labels.end());
        const auto areas = take<double>(idx, bytes, "areas", "f64");
        s.face_areas = Eigen::Map<const Eigen::VectorXd>(areas.data(), static_cast<Eigen::Index>(areas.size()));
        const auto weights = take<double>(idx, bytes, "weights", "f64");
        s.area_weights = Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
        s.real_mask = take<char>(idx, bytes, "mask", "u8");
        const auto ev = take<double>(idx, bytes, "eigenvalues", "f64");
        s.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
        const auto verts = take<double>(idx, bytes, "vertices", "f64");
        for (std::size_t k = 0; k + 2 < verts.size(); k += 3) s.mesh.vertices.emplace_back(verts[k], verts[k + 1], verts[k + 2]);
        const auto faces = take<std::int32_t>(idx, bytes, "faces", "i32");
        for (std::size_t k = 0; k + 2 < faces.size(); k += 3) s.mesh.faces.push_back({faces[k], faces[k + 1], faces[k + 2]});
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed sample manifest: ") + e.what());
    }
    s.validate();
    s.mesh.validate();
    if (!s.mesh.faces.empty()) s.mesh.normals = compute_normals(s.mesh);
    return rec;
}

SampleRecord read_sample(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return read_sample(in);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace met
