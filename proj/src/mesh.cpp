#include "avatarfield/mesh.hpp"

#include <fstream>
#include <unordered_map>

#include "avatarfield/errors.hpp"

namespace avatarfield {

namespace {

// Corner c of a cube sits at (c & 1, (c >> 1) & 1, (c >> 2) & 1); the six
// tetrahedra share the 0-7 diagonal.
constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7}, {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};

}  // namespace

TriMesh marching_tetrahedra(const std::function<Mat(const Mat&)>& sdf, const Box& box, int resolution) {
  if (resolution < 1) throw ContractError("marching tetrahedra: resolution must be positive");
  if (!(box.extent().minCoeff() > 0.0)) throw ContractError("marching tetrahedra: degenerate box");
  const std::int64_t n = resolution + 1;
  const Eigen::Vector3d step = box.extent() / resolution;
  auto point = [&](std::int64_t i, std::int64_t j, std::int64_t k) -> Eigen::Vector3d {
    return box.lo + Eigen::Vector3d(static_cast<double>(i) * step.x(), static_cast<double>(j) * step.y(),
                                    static_cast<double>(k) * step.z());
  };
  auto id = [n](std::int64_t i, std::int64_t j, std::int64_t k) { return (k * n + j) * n + i; };

  // one z slab at a time keeps the batch small
  std::vector<double> value(static_cast<std::size_t>(n * n * n));
  Mat slab(n * n, 3);
  for (std::int64_t k = 0; k < n; ++k) {
    for (std::int64_t j = 0; j < n; ++j) {
      for (std::int64_t i = 0; i < n; ++i) slab.row(j * n + i) = point(i, j, k).transpose();
    }
    const Mat v = sdf(slab);
    if (v.rows() != slab.rows() || v.cols() != 1) throw ContractError("marching tetrahedra: sdf must return N x 1");
    for (std::int64_t r = 0; r < n * n; ++r) value[static_cast<std::size_t>(k * n * n + r)] = v(r, 0);
  }

  std::vector<Eigen::Vector3d> verts;
  std::unordered_map<std::int64_t, int> edge_vertex;
  TriMesh mesh;
  auto edge = [&](std::int64_t a, std::int64_t b, const Eigen::Vector3d& pa, const Eigen::Vector3d& pb) {
    const std::int64_t lo = std::min(a, b), hi = std::max(a, b);
    const std::int64_t key = lo * n * n * n + hi;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double va = value[static_cast<std::size_t>(a)], vb = value[static_cast<std::size_t>(b)];
    const double t = va / (va - vb);
    verts.push_back(pa + t * (pb - pa));
    const int idx = static_cast<int>(verts.size()) - 1;
    edge_vertex.emplace(key, idx);
    return idx;
  };
  auto emit = [&](int a, int b, int c, const Eigen::Vector3d& outward) {
    const Eigen::Vector3d nrm = (verts[static_cast<std::size_t>(b)] - verts[static_cast<std::size_t>(a)])
                                    .cross(verts[static_cast<std::size_t>(c)] - verts[static_cast<std::size_t>(a)]);
    if (nrm.dot(outward) < 0.0) std::swap(b, c);
    mesh.faces.push_back({a, b, c});
  };

  for (std::int64_t k = 0; k < resolution; ++k) {
    for (std::int64_t j = 0; j < resolution; ++j) {
      for (std::int64_t i = 0; i < resolution; ++i) {
        std::int64_t cid[8];
        Eigen::Vector3d cp[8];
        for (int c = 0; c < 8; ++c) {
          const std::int64_t ci = i + (c & 1), cj = j + ((c >> 1) & 1), ck = k + ((c >> 2) & 1);
          cid[c] = id(ci, cj, ck);
          cp[c] = point(ci, cj, ck);
        }
        for (const auto& tet : kTets) {
          int in[4], out[4], ni = 0, no = 0;
          for (int v : tet) {
            if (value[static_cast<std::size_t>(cid[v])] < 0.0) in[ni++] = v;
            else out[no++] = v;
          }
          if (ni == 0 || no == 0) continue;
          Eigen::Vector3d ci = Eigen::Vector3d::Zero(), co = Eigen::Vector3d::Zero();
          for (int q = 0; q < ni; ++q) ci += cp[in[q]] / ni;
          for (int q = 0; q < no; ++q) co += cp[out[q]] / no;
          const Eigen::Vector3d outward = co - ci;
          auto e = [&](int a, int b) { return edge(cid[a], cid[b], cp[a], cp[b]); };
          if (ni == 1) {
            emit(e(in[0], out[0]), e(in[0], out[1]), e(in[0], out[2]), outward);
          } else if (no == 1) {
            emit(e(out[0], in[0]), e(out[0], in[1]), e(out[0], in[2]), outward);
          } else {
            const int a = e(in[0], out[0]), b = e(in[0], out[1]), c = e(in[1], out[1]), d = e(in[1], out[0]);
            emit(a, b, c, outward);
            emit(a, c, d, outward);
          }
        }
      }
    }
  }
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t v = 0; v < verts.size(); ++v) mesh.vertices.row(static_cast<Eigen::Index>(v)) = verts[v].transpose();
  return mesh;
}

void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f.precision(9);
  for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v) {
    f << "v " << mesh.vertices(v, 0) << ' ' << mesh.vertices(v, 1) << ' ' << mesh.vertices(v, 2) << '\n';
  }
  for (const auto& t : mesh.faces) f << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!f) throw IoError("cannot write " + path.string());
}

}  // namespace avatarfield
