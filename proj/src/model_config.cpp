#include "svdkf/model_config.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "svdkf/errors.hpp"

namespace svdkf {

namespace {

using nlohmann::json;

struct Term {
  double coef = 0.0;
  std::vector<int> exponents;
};

using Polynomial = std::vector<Term>;

struct PolyMatrix {
  Eigen::Index rows = 0, cols = 0;
  std::vector<Polynomial> entries;  // row-major

  [[nodiscard]] MatrixXd value(const VectorXd& theta) const {
    MatrixXd M(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = eval(entries[r * cols + c], theta, -1);
    }
    return M;
  }

  [[nodiscard]] MatrixXd partial(const VectorXd& theta, int i) const {
    MatrixXd M(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = eval(entries[r * cols + c], theta, i);
    }
    return M;
  }

  // wrt < 0: value; otherwise d/dtheta_wrt.
  static double eval(const Polynomial& poly, const VectorXd& theta, int wrt) {
    double sum = 0.0;
    for (const Term& t : poly) {
      double v = t.coef;
      for (std::size_t j = 0; j < t.exponents.size(); ++j) {
        const int e = t.exponents[j];
        const double th = theta(static_cast<Eigen::Index>(j));
        if (static_cast<int>(j) == wrt) {
          v *= e == 0 ? 0.0 : e * std::pow(th, e - 1);
        } else {
          v *= std::pow(th, e);
        }
      }
      sum += v;
    }
    return sum;
  }
};

Polynomial parse_entry(const json& j, int p) {
  if (j.is_number()) return {Term{j.get<double>(), std::vector<int>(p, 0)}};
  if (!j.is_object() || !j.contains("poly")) {
    throw ConfigError("matrix entry must be a number or {\"poly\": [...]}");
  }
  Polynomial poly;
  for (const json& t : j.at("poly")) {
    if (!t.is_array() || static_cast<int>(t.size()) != p + 1) {
      throw ConfigError("polynomial term must be [coefficient, e_1, ..., e_p] with p = " +
                        std::to_string(p));
    }
    Term term;
    term.coef = t[0].get<double>();
    for (int i = 0; i < p; ++i) {
      const int e = t[i + 1].get<int>();
      if (e < 0) throw ConfigError("polynomial exponents must be nonnegative");
      term.exponents.push_back(e);
    }
    poly.push_back(std::move(term));
  }
  return poly;
}

PolyMatrix parse_matrix(const json& j, Eigen::Index rows, Eigen::Index cols, int p,
                        const std::string& name) {
  PolyMatrix M{rows, cols, {}};
  if (rows == 0 || cols == 0) return M;
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw ConfigError(name + " must have " + std::to_string(rows) + " rows");
  }
  for (const json& row : j) {
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(name + " must have " + std::to_string(cols) + " columns");
    }
    for (const json& e : row) M.entries.push_back(parse_entry(e, p));
  }
  return M;
}

PolyMatrix constant_matrix(const MatrixXd& value, int p) {
  PolyMatrix M{value.rows(), value.cols(), {}};
  for (Eigen::Index r = 0; r < value.rows(); ++r) {
    for (Eigen::Index c = 0; c < value.cols(); ++c) {
      M.entries.push_back({Term{value(r, c), std::vector<int>(p, 0)}});
    }
  }
  return M;
}

std::optional<VectorXd> parse_theta(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  const json& v = j.at(key);
  if (v.is_number()) return VectorXd::Constant(1, v.get<double>());
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  return out;
}

LoadedModel parse_polynomial_model(const json& j) {
  const json& jd = j.at("dims");
  ModelDims dims;
  dims.n = jd.at("n").get<int>();
  dims.m = jd.at("m").get<int>();
  dims.d = jd.value("d", 0);
  dims.q = jd.value("q", dims.n);
  dims.p = jd.at("p").get<int>();
  if (dims.n < 1 || dims.m < 1 || dims.d < 0 || dims.q < 0 || dims.p < 0) {
    throw ConfigError("invalid dims");
  }
  const json& jm = j.at("matrices");
  const int p = dims.p;

  auto get = [&](const char* key, Eigen::Index rows, Eigen::Index cols,
                 const MatrixXd& fallback) {
    if (jm.contains(key)) return parse_matrix(jm.at(key), rows, cols, p, key);
    return constant_matrix(fallback, p);
  };
  auto required = [&](const char* key, Eigen::Index rows, Eigen::Index cols) {
    if (!jm.contains(key)) throw ConfigError(std::string("missing matrix ") + key);
    return parse_matrix(jm.at(key), rows, cols, p, key);
  };

  std::map<std::string, PolyMatrix> mats;
  mats["F"] = required("F", dims.n, dims.n);
  mats["H"] = required("H", dims.m, dims.n);
  mats["R"] = required("R", dims.m, dims.m);
  mats["B"] = get("B", dims.n, dims.d, MatrixXd::Zero(dims.n, dims.d));
  if (!jm.contains("G") && dims.q != dims.n) throw ConfigError("G is required when q != n");
  mats["G"] = get("G", dims.n, dims.q, MatrixXd::Identity(dims.n, dims.q));
  mats["Omega"] = get("Omega", dims.q, dims.q, MatrixXd::Zero(dims.q, dims.q));
  mats["Pi0"] = get("Pi0", dims.n, dims.n, MatrixXd::Zero(dims.n, dims.n));
  PolyMatrix x0 = jm.contains("x0")
                      ? parse_matrix(json::array({jm.at("x0")}), 1, dims.n, p, "x0")
                      : constant_matrix(MatrixXd::Zero(1, dims.n), p);

  LoadedModel out;
  out.name = j.value("name", std::string("polynomial"));
  out.model.dims = dims;
  out.model.matrices = [mats, x0](const VectorXd& theta) {
    SystemMatrices s;
    s.F = mats.at("F").value(theta);
    s.B = mats.at("B").value(theta);
    s.G = mats.at("G").value(theta);
    s.H = mats.at("H").value(theta);
    s.Omega = mats.at("Omega").value(theta);
    s.R = mats.at("R").value(theta);
    s.Pi0 = mats.at("Pi0").value(theta);
    s.x0 = x0.value(theta).transpose();
    return s;
  };
  out.model.partials = [mats, x0, p](const VectorXd& theta) {
    std::vector<SystemMatrices> ds;
    for (int i = 0; i < p; ++i) {
      SystemMatrices s;
      s.F = mats.at("F").partial(theta, i);
      s.B = mats.at("B").partial(theta, i);
      s.G = mats.at("G").partial(theta, i);
      s.H = mats.at("H").partial(theta, i);
      s.Omega = mats.at("Omega").partial(theta, i);
      s.R = mats.at("R").partial(theta, i);
      s.Pi0 = mats.at("Pi0").partial(theta, i);
      s.x0 = x0.partial(theta, i).transpose();
      ds.push_back(std::move(s));
    }
    return ds;
  };
  out.theta_true = parse_theta(j, "theta_true");
  if (out.theta_true && out.theta_true->size() != p) {
    throw ConfigError("theta_true must have p entries");
  }
  return out;
}

}  // namespace

LoadedModel parse_model_config(const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    if (j.contains("template")) {
      const auto name = j.at("template").get<std::string>();
      if (name != "satellite") throw ConfigError("unknown model template '" + name + "'");
      LoadedModel out;
      out.name = name;
      out.model = satellite_model(j.value("delta", 0.1), j.value("q1", 0.63e-2));
      out.theta_true = parse_theta(j, "theta_true");
      if (!out.theta_true) out.theta_true = VectorXd::Constant(1, 5.0);
      return out;
    }
    return parse_polynomial_model(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

LoadedModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model_config(buf.str());
}

}  // namespace svdkf
