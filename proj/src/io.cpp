#include "cageadv/io.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cageadv::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = {}) {
    std::ifstream in(path, mode);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = {}) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    return out;
}

Points3d to_matrix(const std::vector<double>& flat) {
    Points3d pts(static_cast<Eigen::Index>(flat.size() / 3), 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        for (int a = 0; a < 3; ++a) {
            pts(i, a) = flat[static_cast<std::size_t>(3 * i + a)];
        }
    }
    return pts;
}

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw FormatError("truncated file " + path.string());
    }
    return value;
}

}  // namespace

Points3d read_xyz(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<double> flat;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line[start] == '#') {
            continue;
        }
        std::istringstream ss(line);
        double x = 0;
        double y = 0;
        double z = 0;
        if (!(ss >> x >> y >> z)) {
            throw FormatError(fmt::format("{}:{}: expected three coordinates", path.string(), lineno));
        }
        flat.insert(flat.end(), {x, y, z});
    }
    return to_matrix(flat);
}

void write_xyz(const std::filesystem::path& path, const Points3d& points) {
    auto out = open_out(path);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        out << fmt::format("{} {} {}\n", points(i, 0), points(i, 1), points(i, 2));
    }
}

Points3d read_ply(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::binary);
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
        throw FormatError(path.string() + ": missing ply magic");
    }

    struct Property {
        std::string name;
        int size;
        bool is_double;
    };
    std::vector<Property> props;
    bool binary_le = false;
    bool in_vertex = false;
    bool vertex_seen = false;
    std::int64_t count = -1;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "format") {
            std::string kind;
            ss >> kind;
            binary_le = kind == "binary_little_endian";
        } else if (key == "element") {
            std::string name;
            ss >> name;
            if (name == "vertex") {
                if (vertex_seen) {
                    throw FormatError(path.string() + ": duplicate vertex element");
                }
                ss >> count;
                in_vertex = true;
                vertex_seen = true;
            } else {
                if (!vertex_seen) {
                    throw FormatError(path.string() + ": vertex element must come first");
                }
                in_vertex = false;
            }
        } else if (key == "property" && in_vertex) {
            std::string type;
            std::string name;
            ss >> type >> name;
            if (type == "list") {
                throw FormatError(path.string() + ": list properties on vertices not supported");
            }
            int size = 0;
            if (type == "float" || type == "float32" || type == "int" || type == "int32" ||
                type == "uint" || type == "uint32") {
                size = 4;
            } else if (type == "double" || type == "float64") {
                size = 8;
            } else if (type == "uchar" || type == "char" || type == "uint8" || type == "int8") {
                size = 1;
            } else if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") {
                size = 2;
            } else {
                throw FormatError(path.string() + ": unknown property type " + type);
            }
            const bool is_float = type == "float" || type == "float32" || type == "double" ||
                                  type == "float64";
            if ((name == "x" || name == "y" || name == "z") && !is_float) {
                throw FormatError(path.string() + ": coordinates must be floating point");
            }
            props.push_back({name, size, size == 8});
        } else if (key == "end_header") {
            break;
        }
    }
    if (!binary_le) {
        throw FormatError(path.string() + ": only binary_little_endian PLY is supported");
    }
    if (count < 0) {
        throw FormatError(path.string() + ": no vertex element");
    }
    int offsets[3] = {-1, -1, -1};
    bool doubles[3] = {false, false, false};
    int stride = 0;
    for (const auto& p : props) {
        const int axis = p.name == "x" ? 0 : p.name == "y" ? 1 : p.name == "z" ? 2 : -1;
        if (axis >= 0) {
            offsets[axis] = stride;
            doubles[axis] = p.is_double;
        }
        stride += p.size;
    }
    if (offsets[0] < 0 || offsets[1] < 0 || offsets[2] < 0) {
        throw FormatError(path.string() + ": missing x/y/z properties");
    }

    Points3d pts(count, 3);
    std::vector<char> record(static_cast<std::size_t>(stride));
    for (std::int64_t i = 0; i < count; ++i) {
        if (!in.read(record.data(), stride)) {
            throw FormatError("truncated file " + path.string());
        }
        for (int a = 0; a < 3; ++a) {
            if (doubles[a]) {
                double v = 0;
                std::memcpy(&v, record.data() + offsets[a], sizeof v);
                pts(i, a) = v;
            } else {
                float v = 0;
                std::memcpy(&v, record.data() + offsets[a], sizeof v);
                pts(i, a) = v;
            }
        }
    }
    return pts;
}

void write_ply(const std::filesystem::path& path, const Points3d& points) {
    auto out = open_out(path, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << points.rows() << "\n"
        << "property float x\nproperty float y\nproperty float z\nend_header\n";
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        for (int a = 0; a < 3; ++a) {
            put(out, static_cast<float>(points(i, a)));
        }
    }
}

Points3d read_points(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".ply") {
        return read_ply(path);
    }
    if (ext == ".xyz" || ext == ".txt") {
        return read_xyz(path);
    }
    throw FormatError("unsupported point file extension: " + path.string());
}

TriMesh read_obj(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<double> verts;
    std::vector<int> faces;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "v") {
            double x = 0;
            double y = 0;
            double z = 0;
            if (!(ss >> x >> y >> z)) {
                throw FormatError(fmt::format("{}:{}: bad vertex", path.string(), lineno));
            }
            verts.insert(verts.end(), {x, y, z});
        } else if (key == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ss >> tok) {
                const int v = std::stoi(tok.substr(0, tok.find('/')));
                const int nv = static_cast<int>(verts.size() / 3);
                idx.push_back(v > 0 ? v - 1 : nv + v);
            }
            if (idx.size() < 3) {
                throw FormatError(fmt::format("{}:{}: face needs 3 indices", path.string(), lineno));
            }
            // Fan-triangulate polygons.
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
                faces.insert(faces.end(), {idx[0], idx[k], idx[k + 1]});
            }
        }
    }
    TriMesh mesh;
    mesh.vertices = to_matrix(verts);
    mesh.faces.resize(static_cast<Eigen::Index>(faces.size() / 3), 3);
    for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
        for (int c = 0; c < 3; ++c) {
            mesh.faces(f, c) = faces[static_cast<std::size_t>(3 * f + c)];
        }
    }
    if (mesh.faces.size() > 0 &&
        (mesh.faces.minCoeff() < 0 || mesh.faces.maxCoeff() >= mesh.vertices.rows())) {
        throw FormatError(path.string() + ": face index out of range");
    }
    return mesh;
}

void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
    auto out = open_out(path);
    for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v) {
        out << fmt::format("v {} {} {}\n", mesh.vertices(v, 0), mesh.vertices(v, 1),
                           mesh.vertices(v, 2));
    }
    for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
        out << fmt::format("f {} {} {}\n", mesh.faces(f, 0) + 1, mesh.faces(f, 1) + 1,
                           mesh.faces(f, 2) + 1);
    }
}

void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& matrix) {
    auto out = open_out(path, std::ios::binary);
    put(out, static_cast<std::uint64_t>(matrix.rows()));
    put(out, static_cast<std::uint64_t>(matrix.cols()));
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = matrix;
    out.write(reinterpret_cast<const char*>(rm.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(rm.size())));
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::binary);
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    const auto expected = std::filesystem::file_size(path);
    if (rows != 0 && cols > (expected / 8) / rows) {
        throw FormatError(path.string() + ": header does not match file size");
    }
    if (16 + rows * cols * 8 != expected) {
        throw FormatError(path.string() + ": header does not match file size");
    }
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
        static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(rm.data()),
                 static_cast<std::streamsize>(sizeof(double) * rows * cols))) {
        throw FormatError("truncated file " + path.string());
    }
    return rm;
}

}  // namespace cageadv::io
