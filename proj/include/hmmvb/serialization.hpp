#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "hmmvb/model.hpp"
#include "json.hpp"

namespace hmmvb {

using Json = nlohmann::json;

namespace detail {

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

/// Row-major flat array.
inline Json matrix_to_json(const Matrix& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

inline const Json& require(const Json& obj, const char* key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) throw ValidationError(path + key, "missing field");
  return obj.at(key);
}

inline Vector json_to_vector(const Json& j, Eigen::Index expected, const std::string& field) {
  if (!j.is_array()) throw ValidationError(field, "expected an array");
  if (expected >= 0 && static_cast<Eigen::Index>(j.size()) != expected)
    throw ValidationError(field, "expected " + std::to_string(expected) + " values, got " + std::to_string(j.size()));
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError(field, "entry " + std::to_string(i) + " is not a number");
    v[i] = j[i].get<double>();
  }
  return v;
}

inline Matrix json_to_matrix(const Json& j, Eigen::Index rows, Eigen::Index cols, const std::string& field) {
  Vector flat = json_to_vector(j, rows * cols, field);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[r * cols + c];
  return m;
}

inline std::vector<int> json_to_ints(const Json& j, const std::string& field) {
  if (!j.is_array()) throw ValidationError(field, "expected an array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number_integer()) throw ValidationError(field, "entry " + std::to_string(i) + " is not an integer");
    out.push_back(j[i].get<int>());
  }
  return out;
}

}  // namespace detail

inline Json structure_to_json(const BlockStructure& s) {
  return Json{{"block_dims", std::vector<int>(s.block_dims().begin(), s.block_dims().end())},
              {"state_counts", std::vector<int>(s.state_counts().begin(), s.state_counts().end())},
              {"column_permutation",
               std::vector<int>(s.column_permutation().begin(), s.column_permutation().end())}};
}

inline BlockStructure structure_from_json(const Json& j) {
  using namespace detail;
  auto dims = json_to_ints(require(j, "block_dims", "structure."), "structure.block_dims");
  auto counts = json_to_ints(require(j, "state_counts", "structure."), "structure.state_counts");
  std::vector<int> perm;
  if (j.contains("column_permutation"))
    perm = json_to_ints(j.at("column_permutation"), "structure.column_permutation");
  return BlockStructure(std::move(dims), std::move(counts), std::move(perm));
}

/// Self-describing JSON document: structure, initial probabilities,
/// row-major transitions and per-state mean and row-major covariance.
inline Json model_to_json(const HmmVbModel& m) {
  using namespace detail;
  Json j;
  j["format"] = "hmmvb-model";
  j["version"] = 1;
  j["structure"] = structure_to_json(m.structure);
  j["initial_probs"] = vector_to_json(m.initial_probs);
  j["transitions"] = Json::array();
  for (const Matrix& a : m.transitions) j["transitions"].push_back(matrix_to_json(a));
  j["emissions"] = Json::array();
  for (const auto& block : m.emissions) {
    Json states = Json::array();
    for (const GaussianParams& g : block)
      states.push_back(Json{{"mean", vector_to_json(g.mean)}, {"covariance", matrix_to_json(g.covariance)}});
    j["emissions"].push_back(std::move(states));
  }
  if (m.standardization)
    j["standardization"] = Json{{"center", vector_to_json(m.standardization->center)},
                                {"scale", vector_to_json(m.standardization->scale)}};
  return j;
}

/// Parses and validates a model document. Errors name the offending field.
inline HmmVbModel model_from_json(const Json& j) {
  using namespace detail;
  if (!j.is_object()) throw ValidationError("model", "expected a JSON object");
  if (j.contains("format") && j.at("format") != "hmmvb-model")
    throw ValidationError("format", "expected \"hmmvb-model\"");
  if (j.contains("version") && j.at("version") != 1) throw ValidationError("version", "unsupported version");
  HmmVbModel m;
  m.structure = structure_from_json(require(j, "structure", ""));
  const BlockStructure& s = m.structure;
  const int T = s.num_blocks();
  m.initial_probs = json_to_vector(require(j, "initial_probs", ""), s.states(0), "initial_probs");

  const Json& trans = require(j, "transitions", "");
  if (!trans.is_array() || static_cast<int>(trans.size()) != T - 1)
    throw ValidationError("transitions", "expected " + std::to_string(T - 1) + " matrices");
  for (int t = 0; t + 1 < T; ++t)
    m.transitions.push_back(json_to_matrix(trans[t], s.states(t), s.states(t + 1),
                                           "transitions[" + std::to_string(t) + "]"));

  const Json& emis = require(j, "emissions", "");
  if (!emis.is_array() || static_cast<int>(emis.size()) != T)
    throw ValidationError("emissions", "expected " + std::to_string(T) + " blocks");
  m.emissions.resize(T);
  for (int t = 0; t < T; ++t) {
    const std::string bf = "emissions[" + std::to_string(t) + "]";
    if (!emis[t].is_array() || static_cast<int>(emis[t].size()) != s.states(t))
      throw ValidationError(bf, "expected M_t = " + std::to_string(s.states(t)) + " states");
    const int d = s.block_dim(t);
    for (int k = 0; k < s.states(t); ++k) {
      const std::string sf = bf + "[" + std::to_string(k) + "]";
      GaussianParams g;
      g.mean = json_to_vector(require(emis[t][k], "mean", sf + "."), d, sf + ".mean");
      g.covariance = json_to_matrix(require(emis[t][k], "covariance", sf + "."), d, d, sf + ".covariance");
      m.emissions[t].push_back(std::move(g));
    }
  }
  if (j.contains("standardization")) {
    const Json& st = j.at("standardization");
    Standardization z;
    z.center = json_to_vector(require(st, "center", "standardization."), s.dim(), "standardization.center");
    z.scale = json_to_vector(require(st, "scale", "standardization."), s.dim(), "standardization.scale");
    m.standardization = std::move(z);
  }
  m.validate();
  return m;
}

inline std::string serialize_model(const HmmVbModel& m) { return model_to_json(m).dump(2); }

inline HmmVbModel deserialize_model(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError("model", std::string("malformed JSON: ") + e.what());
  }
  try {
    return model_from_json(j);
  } catch (const Json::exception& e) {
    throw ValidationError("model", e.what());
  }
}

inline void save_model(const HmmVbModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("out", "cannot write " + path);
  out << serialize_model(m) << '\n';
}

inline HmmVbModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("model", "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str());
}

}  // namespace hmmvb
