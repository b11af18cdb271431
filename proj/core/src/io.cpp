#include "ktpr/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "ktpr/error.hpp"

namespace ktpr {
namespace {

using nlohmann::json;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IOFailure("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw MalformedHeader(path.string() + ": " + e.what());
  }
}

void write_json(const json& doc, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IOFailure("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IOFailure("write failed for " + path.string());
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw MalformedHeader(what + " must be a 3-element array");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw MalformedHeader(what + " must contain numbers");
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

Eigen::MatrixX3d points_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw MalformedHeader(what + " must be an array of points");
  Eigen::MatrixX3d m(static_cast<Eigen::Index>(j.size()), 3);
  for (std::size_t i = 0; i < j.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = json_vec(j[i], what).transpose();
  return m;
}

json points_to_json(const Eigen::MatrixX3d& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(vec_json(m.row(i).transpose()));
  return out;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

template <typename T>
T get_field(const json& header, const char* key, const fs::path& path) {
  if (!header.contains(key)) throw MalformedHeader(path.string() + ": missing \"" + key + "\"");
  try {
    return header.at(key).get<T>();
  } catch (const json::exception&) {
    throw MalformedHeader(path.string() + ": bad \"" + key + "\"");
  }
}

}  // namespace

fs::path volume_header_path(const fs::path& path) {
  if (path.extension() == ".json") return path;
  fs::path p = path;
  p += ".json";
  return p;
}

fs::path volume_payload_path(const fs::path& path) {
  fs::path p = volume_header_path(path);
  p.replace_extension(".raw");
  return p;
}

void write_volume(const VolumeGrid& volume, const fs::path& path) {
  volume.validate();
  const auto& g = volume.grid;
  json header = {
      {"dims", {g.dims[0], g.dims[1], g.dims[2]}},
      {"spacing", vec_json(g.spacing)},
      {"origin", vec_json(g.origin)},
      {"channels", volume.channels},
      {"dtype", "f32"},
      {"order", "x-fastest"},
      {"encoding", "raw-little-endian"},
  };
  write_json(header, volume_header_path(path));
  std::vector<std::uint32_t> bits(volume.data.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    bits[i] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(volume.data[i])));
  }
  const fs::path payload = volume_payload_path(path);
  std::ofstream out(payload, std::ios::binary);
  if (!out) throw IOFailure("cannot write " + payload.string());
  out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size() * 4));
  if (!out) throw IOFailure("write failed for " + payload.string());
}

VolumeGrid read_volume(const fs::path& path) {
  const fs::path header_path = volume_header_path(path);
  const json header = read_json(header_path);
  if (!header.is_object()) throw MalformedHeader(header_path.string() + ": header must be an object");
  const auto dtype = get_field<std::string>(header, "dtype", header_path);
  if (dtype != "f32") throw MalformedHeader(header_path.string() + ": dtype \"" + dtype + "\" unsupported (only f32)");
  if (header.contains("order") && header["order"] != "x-fastest") {
    throw MalformedHeader(header_path.string() + ": order must be x-fastest");
  }
  if (header.contains("encoding") && header["encoding"] != "raw-little-endian") {
    throw MalformedHeader(header_path.string() + ": encoding must be raw-little-endian");
  }
  const auto dims = get_field<std::vector<int>>(header, "dims", header_path);
  if (dims.size() != 3) throw MalformedHeader(header_path.string() + ": dims must have 3 entries");
  VolumeGrid volume;
  volume.grid.dims = {dims[0], dims[1], dims[2]};
  volume.grid.spacing = json_vec(header.at("spacing"), "spacing");
  volume.grid.origin = header.contains("origin") ? json_vec(header.at("origin"), "origin") : Vec3::Zero();
  volume.channels = header.contains("channels") ? get_field<int>(header, "channels", header_path) : 1;
  if (volume.channels < 1) throw MalformedHeader(header_path.string() + ": channels must be positive");
  try {
    volume.grid.validate();
  } catch (const SpecInvalid& e) {
    throw MalformedHeader(header_path.string() + ": " + e.what());
  }
  const std::size_t count = volume.grid.voxel_count() * static_cast<std::size_t>(volume.channels);
  const fs::path payload = volume_payload_path(path);
  std::ifstream in(payload, std::ios::binary);
  if (!in) throw IOFailure("cannot open " + payload.string());
  in.seekg(0, std::ios::end);
  const auto actual = static_cast<std::uintmax_t>(in.tellg());
  const std::uintmax_t expected = count * 4;
  if (actual != expected) {
    std::ostringstream msg;
    msg << payload.string() << ": expected " << expected << " bytes, found " << actual;
    throw SizeMismatch(msg.str());
  }
  in.seekg(0);
  std::vector<std::uint32_t> bits(count);
  in.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(expected));
  if (!in) throw IOFailure("read failed for " + payload.string());
  volume.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) volume.data[i] = std::bit_cast<float>(to_little(bits[i]));
  return volume;
}

void write_mask(const Mask& mask, const GridSpec& grid, const fs::path& path) {
  if (mask.size() != grid.voxel_count()) throw SizeMismatch("mask size differs from grid");
  VolumeGrid v = VolumeGrid::zeros(grid, 1);
  for (std::size_t i = 0; i < mask.size(); ++i) v.data[i] = mask[i] ? 1.0 : 0.0;
  write_volume(v, path);
}

Mask read_mask(const fs::path& path, GridSpec* grid) {
  const VolumeGrid v = read_volume(path);
  if (v.channels != 1) throw MalformedHeader(path.string() + ": mask must have one channel");
  Mask mask(v.voxel_count());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = v.data[i] > 0.5 ? 1 : 0;
  if (grid) *grid = v.grid;
  return mask;
}

SurfaceMesh read_mesh(const fs::path& path, bool validate) {
  std::ifstream in(path);
  if (!in) throw IOFailure("cannot open " + path.string());
  std::vector<Vec3> vertices;
  std::vector<std::array<long long, 3>> faces;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) {
        throw MalformedHeader(path.string() + ":" + std::to_string(line_number) + ": bad vertex record");
      }
      vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<long long> idx;
      std::string token;
      while (ls >> token) {
        try {
          idx.push_back(std::stoll(token.substr(0, token.find('/'))));
        } catch (const std::exception&) {
          throw BadIndex(path.string() + ":" + std::to_string(line_number) + ": bad face index \"" + token + "\"");
        }
      }
      if (idx.size() != 3) {
        throw NonTriangleFace(path.string() + ":" + std::to_string(line_number) + ": face has " +
                              std::to_string(idx.size()) + " vertices");
      }
      faces.push_back({idx[0], idx[1], idx[2]});
    }
  }
  SurfaceMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(vertices.size()), 3);
  for (std::size_t i = 0; i < vertices.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = vertices[i].transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  const long long n = static_cast<long long>(vertices.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int c = 0; c < 3; ++c) {
      long long i = faces[f][static_cast<std::size_t>(c)];
      if (i < 0) i = n + i + 1;  // OBJ relative index
      if (i < 1 || i > n) {
        throw BadIndex(path.string() + ": face " + std::to_string(f + 1) + " references vertex " +
                       std::to_string(faces[f][static_cast<std::size_t>(c)]) + " of " + std::to_string(n));
      }
      mesh.faces(static_cast<Eigen::Index>(f), c) = static_cast<int>(i - 1);
    }
  }
  if (validate) mesh.validate();
  return mesh;
}

void write_mesh(const SurfaceMesh& mesh, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IOFailure("cannot write " + path.string());
  out.precision(17);
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  }
  for (int f = 0; f < mesh.face_count(); ++f) {
    out << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' ' << mesh.faces(f, 2) + 1 << '\n';
  }
  if (!out) throw IOFailure("write failed for " + path.string());
}

ModelFile read_model(const fs::path& path) {
  const json doc = read_json(path);
  if (!doc.is_object() || !doc.contains("parts") || !doc["parts"].is_array()) {
    throw MalformedHeader(path.string() + ": model needs a \"parts\" array");
  }
  ModelFile model;
  for (const json& part : doc["parts"]) {
    model.tree.names.push_back(part.value("name", std::string()));
    if (!part.contains("parent") || !part["parent"].is_number_integer()) {
      throw MalformedHeader(path.string() + ": part needs an integer \"parent\"");
    }
    model.tree.parents.push_back(part["parent"].get<int>());
    if (!part.contains("joint")) throw MalformedHeader(path.string() + ": part needs a \"joint\"");
    model.tree.rest_joints.push_back(json_vec(part["joint"], "joint"));
  }
  model.tree.validate();
  if (doc.contains("shape_basis") && !doc["shape_basis"].is_null()) {
    const json& sb = doc["shape_basis"];
    ShapeBasis basis;
    basis.mean_vertices = points_from_json(sb.at("mean_vertices"), "mean_vertices");
    for (const json& c : sb.value("components", json::array())) {
      basis.components.push_back(points_from_json(c, "component"));
      if (basis.components.back().rows() != basis.mean_vertices.rows()) {
        throw DimensionMismatch(path.string() + ": shape component vertex count differs from the mean");
      }
    }
    model.shape = std::move(basis);
  }
  return model;
}

void write_model(const ModelFile& model, const fs::path& path) {
  json parts = json::array();
  for (int k = 0; k < model.tree.size(); ++k) {
    const std::string name = static_cast<std::size_t>(k) < model.tree.names.size()
                                 ? model.tree.names[static_cast<std::size_t>(k)]
                                 : std::string();
    parts.push_back({{"name", name},
                     {"parent", model.tree.parents[static_cast<std::size_t>(k)]},
                     {"joint", vec_json(model.tree.rest_joints[static_cast<std::size_t>(k)])}});
  }
  json doc = {{"parts", parts}};
  if (model.shape) {
    json comps = json::array();
    for (const auto& c : model.shape->components) comps.push_back(points_to_json(c));
    doc["shape_basis"] = {{"mean_vertices", points_to_json(model.shape->mean_vertices)}, {"components", comps}};
  }
  write_json(doc, path);
}

Pose read_pose(const fs::path& path) {
  const json doc = read_json(path);
  if (!doc.is_array()) throw MalformedHeader(path.string() + ": pose must be an array of [x,y,z]");
  Pose pose;
  for (const json& t : doc) pose.theta.push_back(json_vec(t, "pose entry"));
  return pose;
}

void write_pose(const Pose& pose, const fs::path& path) {
  json doc = json::array();
  for (const Vec3& t : pose.theta) doc.push_back(vec_json(t));
  write_json(doc, path);
}

Eigen::MatrixXd read_vertex_weights(const fs::path& path) {
  const json doc = read_json(path);
  if (!doc.is_array() || doc.empty() || !doc[0].is_array()) {
    throw MalformedHeader(path.string() + ": vertex weights must be an N x K array");
  }
  const std::size_t k = doc[0].size();
  Eigen::MatrixXd w(static_cast<Eigen::Index>(doc.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < doc.size(); ++i) {
    if (!doc[i].is_array() || doc[i].size() != k) throw MalformedHeader(path.string() + ": ragged weight rows");
    for (std::size_t j = 0; j < k; ++j) w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = doc[i][j].get<double>();
  }
  return w;
}

void write_vertex_weights(const Eigen::MatrixXd& weights, const fs::path& path) {
  json doc = json::array();
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < weights.cols(); ++j) row.push_back(weights(i, j));
    doc.push_back(row);
  }
  write_json(doc, path);
}

std::vector<ManifestEntry> read_manifest(const fs::path& path, bool check_files) {
  const json doc = read_json(path);
  const json* list = &doc;
  if (doc.is_object()) {
    if (!doc.contains("subjects")) throw MalformedHeader(path.string() + ": manifest needs \"subjects\"");
    list = &doc["subjects"];
  }
  if (!list->is_array()) throw MalformedHeader(path.string() + ": manifest subjects must be an array");
  const fs::path base = path.parent_path();
  auto resolve = [&](const json& entry, const char* key, bool required) -> std::optional<fs::path> {
    if (!entry.contains(key) || entry[key].is_null()) {
      if (required) throw MalformedHeader(path.string() + ": subject missing \"" + key + "\"");
      return std::nullopt;
    }
    fs::path p = entry[key].get<std::string>();
    if (p.is_relative()) p = base / p;
    if (check_files) {
      const fs::path probe = std::string(key) == "image" || std::string(key) == "weights" ? volume_header_path(p) : p;
      if (!fs::exists(probe)) throw IOFailure(path.string() + ": missing file " + probe.string());
    }
    return p;
  };
  std::vector<ManifestEntry> entries;
  for (const json& e : *list) {
    ManifestEntry entry;
    entry.image = *resolve(e, "image", true);
    entry.tree = *resolve(e, "tree", true);
    entry.pose = *resolve(e, "pose", true);
    entry.mesh = *resolve(e, "mesh", true);
    entry.weights = resolve(e, "weights", false);
    entry.vertex_weights = resolve(e, "vertex_weights", false);
    const auto beta = e.value("beta", std::vector<double>{});
    entry.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    entries.push_back(std::move(entry));
  }
  return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) { return p.lexically_relative(base.empty() ? fs::path(".") : base).generic_string(); };
  json list = json::array();
  for (const ManifestEntry& e : entries) {
    json j = {{"image", rel(e.image)}, {"tree", rel(e.tree)}, {"pose", rel(e.pose)}, {"mesh", rel(e.mesh)}};
    if (e.weights) j["weights"] = rel(*e.weights);
    if (e.vertex_weights) j["vertex_weights"] = rel(*e.vertex_weights);
    j["beta"] = std::vector<double>(e.beta.data(), e.beta.data() + e.beta.size());
    list.push_back(j);
  }
  write_json({{"subjects", list}}, path);
}

void write_twists(const TwistBank& bank, const fs::path& path) {
  json xi = json::array();
  for (const auto& row : bank.xi) {
    json parts = json::array();
    for (const Twist& t : row) {
      parts.push_back({t.omega.x(), t.omega.y(), t.omega.z(), t.v.x(), t.v.y(), t.v.z()});
    }
    xi.push_back(parts);
  }
  write_json({{"lambda", bank.lambda}, {"xi", xi}}, path);
}

TwistBank read_twists(const fs::path& path) {
  const json doc = read_json(path);
  TwistBank bank;
  bank.lambda = doc.value("lambda", 0.0);
  for (const json& row : doc.at("xi")) {
    std::vector<Twist> parts;
    for (const json& t : row) {
      if (!t.is_array() || t.size() != 6) throw MalformedHeader(path.string() + ": twist must have 6 entries");
      Vec6 v;
      for (int i = 0; i < 6; ++i) v[i] = t[static_cast<std::size_t>(i)].get<double>();
      parts.push_back(Twist::from_vector(v));
    }
    bank.xi.push_back(std::move(parts));
  }
  return bank;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOFailure("cannot write " + path.string());
  out << text;
  if (!out) throw IOFailure("write failed for " + path.string());
}

}  // namespace ktpr
