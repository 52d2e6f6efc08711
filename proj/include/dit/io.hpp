#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "dit/geometry.hpp"

namespace dit {

using json = nlohmann::json;

namespace detail {

inline std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) throw DitError(Errc::io, "cannot open for reading: " + path);
  return f;
}

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw DitError(Errc::io, "cannot open for writing: " + path);
  return f;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& ctx) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DitError(Errc::io, "truncated file while reading " + ctx);
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mesh I/O: ASCII OBJ read/write, ASCII PLY read
// ---------------------------------------------------------------------------

inline void write_obj(const Mesh& mesh, const std::string& path) {
  auto f = detail::open_out(path);
  f.precision(9);
  for (const auto& v : mesh.vertices)
    f << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& t : mesh.triangles)
    f << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  if (!f) throw DitError(Errc::io, "failed writing " + path);
}

inline Mesh read_obj(const std::string& path) {
  auto f = detail::open_in(path);
  Mesh mesh;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 v;
      ss >> v.x() >> v.y() >> v.z();
      if (!ss) throw DitError(Errc::io, "malformed vertex line in " + path);
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> tri{};
      for (int i = 0; i < 3; ++i) {
        std::string tok;
        ss >> tok;
        if (tok.empty()) throw DitError(Errc::io, "malformed face line in " + path);
        tri[i] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      mesh.triangles.push_back(tri);
    }
  }
  for (const auto& t : mesh.triangles)
    for (int i : t)
      if (i < 0 || i >= static_cast<int>(mesh.vertices.size()))
        throw DitError(Errc::io, "face index out of range in " + path);
  return mesh;
}

inline Mesh read_ply(const std::string& path) {
  auto f = detail::open_in(path);
  std::string line;
  std::getline(f, line);
  if (line.rfind("ply", 0) != 0) throw DitError(Errc::io, "not a PLY file: " + path);
  size_t n_vertices = 0, n_faces = 0;
  int vertex_props = 0;
  std::string current_element;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii") throw DitError(Errc::io, "only ASCII PLY supported: " + path);
    } else if (tag == "element") {
      std::string name;
      size_t count;
      ss >> name >> count;
      current_element = name;
      if (name == "vertex") n_vertices = count;
      if (name == "face") n_faces = count;
    } else if (tag == "property" && current_element == "vertex") {
      std::string type;
      ss >> type;
      if (type != "list") ++vertex_props;
    } else if (tag == "end_header") {
      break;
    }
  }
  if (vertex_props < 3) throw DitError(Errc::io, "PLY vertices need x y z: " + path);
  Mesh mesh;
  mesh.vertices.reserve(n_vertices);
  for (size_t i = 0; i < n_vertices; ++i) {
    if (!std::getline(f, line)) throw DitError(Errc::io, "truncated PLY: " + path);
    std::istringstream ss(line);
    Vec3 v;
    ss >> v.x() >> v.y() >> v.z();
    if (!ss) throw DitError(Errc::io, "malformed PLY vertex: " + path);
    mesh.vertices.push_back(v);
  }
  for (size_t i = 0; i < n_faces; ++i) {
    if (!std::getline(f, line)) throw DitError(Errc::io, "truncated PLY: " + path);
    std::istringstream ss(line);
    int n;
    ss >> n;
    std::vector<int> idx(n);
    for (int& k : idx) ss >> k;
    if (!ss || n < 3) throw DitError(Errc::io, "malformed PLY face: " + path);
    for (int k = 2; k < n; ++k)  // fan-triangulate polygons
      mesh.triangles.push_back({idx[0], idx[k - 1], idx[k]});
  }
  for (const auto& t : mesh.triangles)
    for (int i : t)
      if (i < 0 || i >= static_cast<int>(mesh.vertices.size()))
        throw DitError(Errc::io, "PLY face index out of range: " + path);
  return mesh;
}

// ---------------------------------------------------------------------------
// SampleSet persistence: "DITS" flat binary, f32 records, bit-exact round trip
// ---------------------------------------------------------------------------

inline constexpr uint32_t kSampleFileVersion = 1;

inline void save_sample_sets(const std::vector<SampleSet>& sets,
                             const std::string& path) {
  auto f = detail::open_out(path, true);
  f.write("DITS", 4);
  detail::write_pod<uint32_t>(f, kSampleFileVersion);
  detail::write_pod<uint32_t>(f, static_cast<uint32_t>(sets.size()));
  for (const auto& set : sets) {
    detail::write_pod<int32_t>(f, set.shape_id);
    detail::write_pod<uint32_t>(f, static_cast<uint32_t>(set.n_surface));
    detail::write_pod<uint32_t>(f, static_cast<uint32_t>(set.n_uniform));
    for (const auto& s : set.samples) {
      float rec[4] = {static_cast<float>(s.point.x()),
                      static_cast<float>(s.point.y()),
                      static_cast<float>(s.point.z()),
                      static_cast<float>(s.sdf)};
      f.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
  }
  if (!f) throw DitError(Errc::io, "failed writing " + path);
}

inline std::vector<SampleSet> load_sample_sets(const std::string& path) {
  auto f = detail::open_in(path, true);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "DITS", 4) != 0)
    throw DitError(Errc::io, "bad magic in sample file: " + path);
  auto version = detail::read_pod<uint32_t>(f, "version");
  if (version != kSampleFileVersion)
    throw DitError(Errc::mismatch, "unsupported sample file version: " + path);
  auto count = detail::read_pod<uint32_t>(f, "shape count");
  std::vector<SampleSet> sets(count);
  for (auto& set : sets) {
    set.shape_id = detail::read_pod<int32_t>(f, "shape id");
    set.n_surface = detail::read_pod<uint32_t>(f, "surface count");
    set.n_uniform = detail::read_pod<uint32_t>(f, "uniform count");
    size_t n = static_cast<size_t>(set.n_surface) + set.n_uniform;
    set.samples.resize(n);
    for (auto& s : set.samples) {
      float rec[4];
      f.read(reinterpret_cast<char*>(rec), sizeof(rec));
      if (!f) throw DitError(Errc::io, "truncated sample records: " + path);
      s.point = Vec3(rec[0], rec[1], rec[2]);
      s.sdf = rec[3];
    }
  }
  return sets;
}

// ---------------------------------------------------------------------------
// ShapeSpec dataset JSON
// ---------------------------------------------------------------------------

inline json shape_spec_to_json(const ShapeSpec& s) {
  json j;
  auto vec = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
  switch (s.kind) {
    case ShapeSpec::Kind::Sphere:
      j["kind"] = "sphere";
      j["radius"] = s.radius;
      break;
    case ShapeSpec::Kind::Box:
      j["kind"] = "box";
      j["half_extents"] = vec(s.half_extents);
      break;
    case ShapeSpec::Kind::Ellipsoid:
      j["kind"] = "ellipsoid";
      j["radii"] = vec(s.radii);
      break;
    case ShapeSpec::Kind::Capsule:
      j["kind"] = "capsule";
      j["radius"] = s.radius;
      j["half_length"] = s.half_length;
      break;
    case ShapeSpec::Kind::Union: {
      j["kind"] = "union";
      j["members"] = json::array();
      for (const auto& m : s.members) j["members"].push_back(shape_spec_to_json(m));
      break;
    }
  }
  if (s.center.squaredNorm() > 0) j["center"] = vec(s.center);
  if (s.euler.squaredNorm() > 0) j["rotation_euler_xyz"] = vec(s.euler);
  return j;
}

inline ShapeSpec shape_spec_from_json(const json& j) {
  auto vec = [&](const char* key) {
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 3)
      throw DitError(Errc::config, std::string("expected 3-array for ") + key);
    return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
  };
  ShapeSpec s;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "sphere") {
    s.kind = ShapeSpec::Kind::Sphere;
    s.radius = j.at("radius").get<double>();
  } else if (kind == "box") {
    s.kind = ShapeSpec::Kind::Box;
    s.half_extents = vec("half_extents");
  } else if (kind == "ellipsoid") {
    s.kind = ShapeSpec::Kind::Ellipsoid;
    s.radii = vec("radii");
  } else if (kind == "capsule") {
    s.kind = ShapeSpec::Kind::Capsule;
    s.radius = j.at("radius").get<double>();
    s.half_length = j.at("half_length").get<double>();
  } else if (kind == "union") {
    s.kind = ShapeSpec::Kind::Union;
    for (const auto& m : j.at("members")) s.members.push_back(shape_spec_from_json(m));
  } else {
    throw DitError(Errc::config, "unknown shape kind: " + kind);
  }
  if (j.contains("center")) s.center = vec("center");
  if (j.contains("rotation_euler_xyz")) s.euler = vec("rotation_euler_xyz");
  validate_shape_spec(s);
  return s;
}

inline std::vector<ShapeSpec> load_shape_specs(const std::string& path) {
  auto f = detail::open_in(path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DitError(Errc::config, "malformed JSON in " + path + ": " + e.what());
  }
  if (!j.contains("shapes") || !j["shapes"].is_array())
    throw DitError(Errc::config, "dataset JSON needs a \"shapes\" array: " + path);
  std::vector<ShapeSpec> specs;
  try {
    for (const auto& sj : j["shapes"]) specs.push_back(shape_spec_from_json(sj));
  } catch (const json::exception& e) {
    throw DitError(Errc::config, "bad shape entry in " + path + ": " + e.what());
  }
  return specs;
}

inline void save_shape_specs(const std::vector<ShapeSpec>& specs,
                             const std::string& path) {
  json j;
  j["shapes"] = json::array();
  for (const auto& s : specs) j["shapes"].push_back(shape_spec_to_json(s));
  auto f = detail::open_out(path);
  f << j.dump(2) << "\n";
}

}  // namespace dit
