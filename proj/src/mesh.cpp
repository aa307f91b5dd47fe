#include "mbtrack/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mbtrack {

double TriangleMesh::surface_area() const {
  double area = 0.0;
  for (int f = 0; f < face_count(); ++f) area += face_area(f);
  return area;
}

Vec3 TriangleMesh::centroid() const {
  Vec3 c = Vec3::Zero();
  double area = 0.0;
  for (int f = 0; f < face_count(); ++f) {
    const double a = face_area(f);
    c += a * (v0(f) + v1(f) + v2(f)) / 3.0;
    area += a;
  }
  return area > 0.0 ? Vec3(c / area) : c;
}

double TriangleMesh::bbox_diagonal() const {
  if (vertices.empty()) return 0.0;
  Vec3 lo = vertices.front(), hi = vertices.front();
  for (const Vec3& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return (hi - lo).norm();
}

int TriangleMesh::finalize() {
  std::vector<std::array<int, 3>> kept;
  kept.reserve(faces.size());
  int dropped = 0;
  for (const auto& f : faces) {
    for (int idx : f) {
      if (idx < 0 || idx >= vertex_count()) {
        throw std::runtime_error("mesh face references missing vertex");
      }
    }
    const Vec3 a = vertices[f[0]], b = vertices[f[1]], c = vertices[f[2]];
    if (0.5 * (b - a).cross(c - a).norm() <= 1e-12) {
      ++dropped;
      continue;
    }
    kept.push_back(f);
  }
  faces = std::move(kept);
  face_normals.resize(faces.size());
  for (int f = 0; f < face_count(); ++f) {
    face_normals[f] = (v1(f) - v0(f)).cross(v2(f) - v0(f)).normalized();
  }
  face_colors.assign(faces.size(), Vec3{128.0, 128.0, 128.0});
  face_weights.assign(faces.size(), 0.0);
  return dropped;
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  TriangleMesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x() >> v.y() >> v.z())) parse_fail(path, lineno, "bad vertex record");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        // "i", "i/j", "i/j/k", "i//k" forms; only the vertex index is used.
        const size_t slash = tok.find('/');
        int i = 0;
        try {
          i = std::stoi(slash == std::string::npos ? tok : tok.substr(0, slash));
        } catch (const std::exception&) {
          parse_fail(path, lineno, "bad face index '" + tok + "'");
        }
        if (i < 0) i = int(mesh.vertices.size()) + i + 1;  // relative indexing
        if (i < 1 || i > int(mesh.vertices.size())) {
          parse_fail(path, lineno, "face index out of range");
        }
        idx.push_back(i - 1);
      }
      if (idx.size() < 3) parse_fail(path, lineno, "face with fewer than 3 vertices");
      for (size_t j = 1; j + 1 < idx.size(); ++j) {
        mesh.faces.push_back({idx[0], idx[j], idx[j + 1]});
      }
    }
    // vn/vt/usemtl and friends are ignored.
  }
  return mesh;
}

TriangleMesh load_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::string line;
  int lineno = 0;

  auto next_line = [&]() -> std::string& {
    if (!std::getline(in, line)) parse_fail(path, lineno, "unexpected end of file");
    ++lineno;
    return line;
  };

  if (next_line() != "ply") parse_fail(path, lineno, "missing ply magic");

  struct Element {
    std::string name;
    long count = 0;
    std::vector<std::string> properties;  // scalar property names, in order
    bool has_list = false;
  };
  std::vector<Element> elements;
  bool ascii = false;
  while (true) {
    std::istringstream ss(next_line());
    std::string tag;
    ss >> tag;
    if (tag == "comment") continue;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      ascii = (fmt == "ascii");
      if (!ascii) parse_fail(path, lineno, "only ascii PLY supported");
    } else if (tag == "element") {
      Element e;
      ss >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) parse_fail(path, lineno, "property before element");
      std::string type;
      ss >> type;
      if (type == "list") {
        elements.back().has_list = true;
      } else {
        std::string name;
        ss >> name;
        elements.back().properties.push_back(name);
      }
    } else if (tag == "end_header") {
      break;
    } else {
      parse_fail(path, lineno, "unknown header record '" + tag + "'");
    }
  }

  TriangleMesh mesh;
  for (const Element& e : elements) {
    if (e.name == "vertex") {
      int ix = -1, iy = -1, iz = -1;
      for (size_t i = 0; i < e.properties.size(); ++i) {
        if (e.properties[i] == "x") ix = int(i);
        if (e.properties[i] == "y") iy = int(i);
        if (e.properties[i] == "z") iz = int(i);
      }
      if (ix < 0 || iy < 0 || iz < 0) parse_fail(path, lineno, "vertex element lacks x/y/z");
      for (long n = 0; n < e.count; ++n) {
        std::istringstream ss(next_line());
        std::vector<double> vals(e.properties.size());
        for (double& v : vals) {
          if (!(ss >> v)) parse_fail(path, lineno, "short vertex record");
        }
        mesh.vertices.push_back({vals[ix], vals[iy], vals[iz]});
      }
    } else if (e.name == "face") {
      for (long n = 0; n < e.count; ++n) {
        std::istringstream ss(next_line());
        int cnt = 0;
        if (!(ss >> cnt) || cnt < 3) parse_fail(path, lineno, "bad face list");
        std::vector<int> idx(cnt);
        for (int& i : idx) {
          if (!(ss >> i)) parse_fail(path, lineno, "short face record");
          if (i < 0 || i >= int(mesh.vertices.size())) {
            parse_fail(path, lineno, "face index out of range");
          }
        }
        for (int j = 1; j + 1 < cnt; ++j) {
          mesh.faces.push_back({idx[0], idx[j], idx[j + 1]});
        }
      }
    } else {
      for (long n = 0; n < e.count; ++n) next_line();  // skip unknown elements
    }
  }
  return mesh;
}

bool has_suffix(const std::string& s, const char* suf) {
  const std::string t(suf);
  return s.size() >= t.size() && s.compare(s.size() - t.size(), t.size(), t) == 0;
}

}  // namespace

TriangleMesh load_mesh(const std::string& path, LoadReport* report) {
  TriangleMesh mesh = has_suffix(path, ".ply") ? load_ply(path) : load_obj(path);
  if (mesh.vertices.empty() || mesh.faces.empty()) {
    throw std::runtime_error(path + ": empty mesh");
  }
  const int dropped = mesh.finalize();
  if (mesh.faces.empty()) throw std::runtime_error(path + ": no non-degenerate faces");
  if (report) report->dropped_degenerate = dropped;
  return mesh;
}

void save_mesh_ply(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for write");
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << mesh.vertex_count() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "element face " << mesh.face_count() << "\n";
  out << "property list uchar int vertex_indices\n";
  out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  for (const Vec3& v : mesh.vertices) {
    out << float(v.x()) << " " << float(v.y()) << " " << float(v.z()) << "\n";
  }
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Vec3& c = mesh.face_colors[f];
    auto ch = [](double x) { return std::clamp(int(std::lround(x)), 0, 255); };
    out << "3 " << mesh.faces[f][0] << " " << mesh.faces[f][1] << " " << mesh.faces[f][2]
        << " " << ch(c.x()) << " " << ch(c.y()) << " " << ch(c.z()) << "\n";
  }
}

namespace {

// Icosahedron subdivided on the unit sphere.
void subdivide_on_sphere(std::vector<Vec3>& verts, std::vector<std::array<int, 3>>& faces) {
  std::map<std::pair<int, int>, int> midpoints;
  auto midpoint = [&](int a, int b) {
    const auto key = std::minmax(a, b);
    auto it = midpoints.find(key);
    if (it != midpoints.end()) return it->second;
    verts.push_back(((verts[a] + verts[b]) * 0.5).normalized());
    midpoints.emplace(key, int(verts.size()) - 1);
    return int(verts.size()) - 1;
  };
  std::vector<std::array<int, 3>> next;
  next.reserve(faces.size() * 4);
  for (const auto& f : faces) {
    const int ab = midpoint(f[0], f[1]);
    const int bc = midpoint(f[1], f[2]);
    const int ca = midpoint(f[2], f[0]);
    next.push_back({f[0], ab, ca});
    next.push_back({f[1], bc, ab});
    next.push_back({f[2], ca, bc});
    next.push_back({ab, bc, ca});
  }
  faces = std::move(next);
}

TriangleMesh unit_icosphere(int subdivisions) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  for (Vec3& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},   {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4},  {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},   {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11},  {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int i = 0; i < subdivisions; ++i) subdivide_on_sphere(verts, faces);
  TriangleMesh mesh;
  mesh.vertices = std::move(verts);
  mesh.faces = std::move(faces);
  return mesh;
}

}  // namespace

TriangleMesh make_icosphere(int subdivisions, double radius) {
  TriangleMesh mesh = unit_icosphere(subdivisions);
  for (Vec3& v : mesh.vertices) v *= radius;
  mesh.finalize();
  return mesh;
}

TriangleMesh make_ellipsoid(int subdivisions, const Vec3& radii) {
  TriangleMesh mesh = unit_icosphere(subdivisions);
  for (Vec3& v : mesh.vertices) v = v.cwiseProduct(radii);
  mesh.finalize();
  return mesh;
}

TriangleMesh make_bumpy_ellipsoid(int subdivisions, const Vec3& radii,
                                  double bump_amplitude, uint64_t seed) {
  TriangleMesh mesh = unit_icosphere(subdivisions);
  // Smooth displacement from a small bank of random directional sinusoids.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> freq(1.5, 4.0);
  struct Wave {
    Vec3 dir;
    double f, phase;
  };
  std::vector<Wave> waves(6);
  for (Wave& w : waves) {
    w.dir = Vec3{u(rng), u(rng), u(rng)}.normalized();
    w.f = freq(rng);
    w.phase = u(rng) * M_PI;
  }
  for (Vec3& v : mesh.vertices) {
    double d = 0.0;
    for (const Wave& w : waves) d += std::sin(w.f * w.dir.dot(v) + w.phase);
    const double scale = 1.0 + bump_amplitude * d / double(waves.size());
    v = (v * scale).cwiseProduct(radii);
  }
  mesh.finalize();
  return mesh;
}

MeshBvh::MeshBvh(const TriangleMesh& mesh) : mesh_(mesh) {
  const int n = mesh.face_count();
  order_.resize(n);
  std::vector<Vec3> centers(n);
  for (int f = 0; f < n; ++f) {
    order_[f] = f;
    centers[f] = (mesh.v0(f) + mesh.v1(f) + mesh.v2(f)) / 3.0;
  }
  nodes_.reserve(size_t(2) * n);
  if (n > 0) build(order_, 0, n, centers);
}

int MeshBvh::build(std::vector<int>& tris, int begin, int end, std::vector<Vec3>& centers) {
  const int node_id = int(nodes_.size());
  nodes_.emplace_back();
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
  Vec3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    const int f = tris[i];
    for (const Vec3& v : {mesh_.v0(f), mesh_.v1(f), mesh_.v2(f)}) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
  }
  nodes_[node_id].bb_min = lo;
  nodes_[node_id].bb_max = hi;

  const int count = end - begin;
  if (count <= 4) {
    nodes_[node_id].first = begin;
    nodes_[node_id].count = count;
    return node_id;
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + count / 2;
  std::nth_element(tris.begin() + begin, tris.begin() + mid, tris.begin() + end,
                   [&](int a, int b) { return centers[a][axis] < centers[b][axis]; });
  const int left = build(tris, begin, mid, centers);
  const int right = build(tris, mid, end, centers);
  nodes_[node_id].left = left;
  nodes_[node_id].right = right;
  return node_id;
}

namespace {

bool slab_hit(const Ray& ray, const Vec3& lo, const Vec3& hi, double t_max) {
  double t0 = 0.0, t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    const double inv = 1.0 / ray.direction[a];  // inf on zero is fine for slabs
    double near = (lo[a] - ray.origin[a]) * inv;
    double far = (hi[a] - ray.origin[a]) * inv;
    if (inv < 0.0) std::swap(near, far);
    t0 = std::max(t0, near);
    t1 = std::min(t1, far);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

std::optional<MeshBvh::Hit> MeshBvh::intersect(const Ray& ray) const {
  if (nodes_.empty()) return std::nullopt;
  Hit best;
  double best_t = std::numeric_limits<double>::max();
  int stack[64];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[stack[--sp]];
    if (!slab_hit(ray, node.bb_min, node.bb_max, best_t)) continue;
    if (node.count > 0) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const int f = order_[i];
        const auto hit = ray_triangle_intersect(ray, mesh_.v0(f), mesh_.v1(f), mesh_.v2(f));
        if (hit && hit->t < best_t) {
          best_t = hit->t;
          best = Hit{f, hit->t, hit->barycentric};
        }
      }
    } else {
      stack[sp++] = node.left;
      stack[sp++] = node.right;
    }
  }
  if (best.face < 0) return std::nullopt;
  return best;
}

}  // namespace mbtrack
