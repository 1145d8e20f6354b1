#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <vector>

#include "avatarfield/body.hpp"

namespace avatarfield {

struct TriMesh {
  Mat vertices;  // V x 3
  std::vector<std::array<int, 3>> faces;
};

// Zero level set of `sdf` (N x 3 points -> N x 1 values) over `box` sampled on
// a resolution^3 cell grid. Each cube is split into six tetrahedra; faces are
// oriented with normals towards positive values. Vertices on shared edges are
// merged.
TriMesh marching_tetrahedra(const std::function<Mat(const Mat&)>& sdf, const Box& box, int resolution);

void write_obj(const std::filesystem::path& path, const TriMesh& mesh);

}  // namespace avatarfield
