#include "avatarforge/mesh_io.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <json.hpp>

namespace avatarforge {

namespace {

using nlohmann::json;

// Negative zero is written as 0 so that it survives integer-typed JSON parsing.
std::string num(double v) { return fmt::format("{:.17g}", v == 0.0 ? 0.0 : v); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, fmt::format("write failed on {}", path.string()));
}

struct ObjData {
  std::vector<Eigen::Vector3d> v;
  std::vector<Eigen::Vector2d> vt;
  std::vector<std::array<int, 3>> f;
  std::vector<std::array<int, 3>> ft;
};

ObjData parse_obj(const std::string& text, const std::string& name) {
  ObjData obj;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::kParse, fmt::format("{}:{}: {}", name, line_no, why));
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Eigen::Vector3d p;
      if (!(ls >> p.x() >> p.y() >> p.z())) fail("malformed v record");
      obj.v.push_back(p);
    } else if (tag == "vt") {
      Eigen::Vector2d t;
      if (!(ls >> t.x() >> t.y())) fail("malformed vt record");
      obj.vt.push_back(t);
    } else if (tag == "f") {
      std::array<int, 3> vi{}, ti{};
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        if (!(ls >> tok)) fail("face with fewer than 3 corners");
        const auto slash = tok.find('/');
        try {
          vi[k] = std::stoi(tok.substr(0, slash)) - 1;
          ti[k] = slash == std::string::npos ? vi[k] : std::stoi(tok.substr(slash + 1)) - 1;
        } catch (const std::exception&) {
          fail(fmt::format("bad face index '{}'", tok));
        }
      }
      std::string extra;
      if (ls >> extra) fail("only triangles are supported");
      obj.f.push_back(vi);
      obj.ft.push_back(ti);
    } else {
      fail(fmt::format("unsupported record '{}'", tag));
    }
  }
  return obj;
}

template <typename T>
T get_checked(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::kParse, fmt::format("rig sidecar lacks '{}'", key));
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, fmt::format("rig sidecar key '{}': {}", key, e.what()));
  }
}

}  // namespace

std::filesystem::path rig_sidecar_path(const std::filesystem::path& obj_path) {
  auto p = obj_path;
  p.replace_extension(".rig.json");
  return p;
}

RiggedMesh load_mesh(const std::filesystem::path& obj_path) {
  const ObjData obj = parse_obj(read_file(obj_path), obj_path.string());
  const auto n = static_cast<Eigen::Index>(obj.v.size());
  RiggedMesh mesh;
  mesh.vertices.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) mesh.vertices.row(i) = obj.v[static_cast<std::size_t>(i)].transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(obj.f.size()), 3);
  // Per-vertex uv: vt indices must agree with v indices for every corner.
  mesh.uv = UvCoords::Zero(n, 2);
  std::vector<char> uv_set(static_cast<std::size_t>(n), 0);
  if (obj.vt.size() == obj.v.size()) {
    for (Eigen::Index i = 0; i < n; ++i) mesh.uv.row(i) = obj.vt[static_cast<std::size_t>(i)].transpose();
    std::fill(uv_set.begin(), uv_set.end(), 1);
  }
  for (std::size_t f = 0; f < obj.f.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int vi = obj.f[f][k], ti = obj.ft[f][k];
      if (vi < 0 || vi >= n) throw Error(ErrorCode::kParse, fmt::format("face {} vertex index out of range", f));
      if (ti < 0 || ti >= static_cast<int>(obj.vt.size()))
        throw Error(ErrorCode::kParse, fmt::format("face {} uv index out of range", f));
      mesh.faces(static_cast<Eigen::Index>(f), k) = vi;
      const Eigen::Vector2d t = obj.vt[static_cast<std::size_t>(ti)];
      if (uv_set[static_cast<std::size_t>(vi)] && (mesh.uv.row(vi).transpose() - t).norm() != 0.0)
        throw Error(ErrorCode::kParse, fmt::format("vertex {} has more than one uv", vi));
      mesh.uv.row(vi) = t.transpose();
      uv_set[static_cast<std::size_t>(vi)] = 1;
    }
  }

  json rig;
  try {
    rig = json::parse(read_file(rig_sidecar_path(obj_path)));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, fmt::format("rig sidecar: {}", e.what()));
  }
  const auto weights = get_checked<std::vector<std::vector<double>>>(rig, "skin_weights");
  const auto shapes = get_checked<std::vector<std::vector<std::vector<double>>>>(rig, "blendshapes");
  const auto regressor = get_checked<std::vector<std::vector<double>>>(rig, "joint_regressor");
  const auto labels = get_checked<std::vector<std::string>>(rig, "part_labels");
  mesh.joint_parents = get_checked<std::vector<int>>(rig, "joint_parents");

  const auto num_joints = static_cast<Eigen::Index>(mesh.joint_parents.size());
  if (static_cast<Eigen::Index>(weights.size()) != n)
    throw Error(ErrorCode::kInvariant, fmt::format("skin_weights has {} rows, expected {}", weights.size(), n));
  mesh.skin_weights.resize(n, num_joints);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = weights[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != num_joints)
      throw Error(ErrorCode::kInvariant, fmt::format("skin_weights row {} has {} entries", i, row.size()));
    for (Eigen::Index j = 0; j < num_joints; ++j) mesh.skin_weights(i, j) = row[static_cast<std::size_t>(j)];
  }
  for (const auto& shape : shapes) {
    if (static_cast<Eigen::Index>(shape.size()) != n)
      throw Error(ErrorCode::kInvariant, "blendshape vertex count mismatch");
    Points b(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& xyz = shape[static_cast<std::size_t>(i)];
      if (xyz.size() != 3) throw Error(ErrorCode::kParse, "blendshape offsets must have 3 components");
      b.row(i) << xyz[0], xyz[1], xyz[2];
    }
    mesh.blendshapes.push_back(std::move(b));
  }
  if (static_cast<Eigen::Index>(regressor.size()) != num_joints)
    throw Error(ErrorCode::kInvariant, "joint_regressor row count differs from joint count");
  mesh.joint_regressor.resize(num_joints, n);
  for (Eigen::Index j = 0; j < num_joints; ++j) {
    const auto& row = regressor[static_cast<std::size_t>(j)];
    if (static_cast<Eigen::Index>(row.size()) != n)
      throw Error(ErrorCode::kInvariant, "joint_regressor column count differs from vertex count");
    for (Eigen::Index i = 0; i < n; ++i) mesh.joint_regressor(j, i) = row[static_cast<std::size_t>(i)];
  }
  mesh.part_labels.reserve(labels.size());
  for (const auto& l : labels) {
    try {
      mesh.part_labels.push_back(part_from_name(l));
    } catch (const Error& e) {
      throw Error(ErrorCode::kParse, e.what());
    }
  }
  validate(mesh);
  return mesh;
}

void save_mesh(const RiggedMesh& mesh, const std::filesystem::path& obj_path) {
  validate(mesh);
  std::string obj;
  obj.reserve(static_cast<std::size_t>(mesh.num_vertices()) * 96);
  for (Eigen::Index i = 0; i < mesh.num_vertices(); ++i)
    obj += fmt::format("v {} {} {}\n", num(mesh.vertices(i, 0)), num(mesh.vertices(i, 1)), num(mesh.vertices(i, 2)));
  for (Eigen::Index i = 0; i < mesh.num_vertices(); ++i)
    obj += fmt::format("vt {} {}\n", num(mesh.uv(i, 0)), num(mesh.uv(i, 1)));
  for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
    const int a = mesh.faces(f, 0) + 1, b = mesh.faces(f, 1) + 1, c = mesh.faces(f, 2) + 1;
    obj += fmt::format("f {}/{} {}/{} {}/{}\n", a, a, b, b, c, c);
  }

  // Hand-written so that the number format is fixed regardless of the JSON library.
  std::string rig = "{\n";
  auto matrix = [&](const char* key, const Matrix& m) {
    rig += fmt::format("  \"{}\": [", key);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      rig += r ? ",\n    [" : "\n    [";
      for (Eigen::Index c = 0; c < m.cols(); ++c) rig += (c ? ", " : "") + num(m(r, c));
      rig += "]";
    }
    rig += "\n  ],\n";
  };
  matrix("skin_weights", mesh.skin_weights);
  rig += "  \"blendshapes\": [";
  for (std::size_t k = 0; k < mesh.blendshapes.size(); ++k) {
    rig += k ? ",\n    [" : "\n    [";
    const Points& b = mesh.blendshapes[k];
    for (Eigen::Index i = 0; i < b.rows(); ++i)
      rig += fmt::format("{}[{}, {}, {}]", i ? ", " : "", num(b(i, 0)), num(b(i, 1)), num(b(i, 2)));
    rig += "]";
  }
  rig += "\n  ],\n";
  matrix("joint_regressor", mesh.joint_regressor);
  rig += "  \"part_labels\": [";
  for (std::size_t i = 0; i < mesh.part_labels.size(); ++i)
    rig += fmt::format("{}\"{}\"", i ? ", " : "", part_name(mesh.part_labels[i]));
  rig += "],\n  \"joint_parents\": [";
  for (std::size_t j = 0; j < mesh.joint_parents.size(); ++j)
    rig += fmt::format("{}{}", j ? ", " : "", mesh.joint_parents[j]);
  rig += "]\n}\n";

  write_file(obj_path, obj);
  write_file(rig_sidecar_path(obj_path), rig);
}

}  // namespace avatarforge
