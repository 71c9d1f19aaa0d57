#pragma once

#include <optional>
#include <string>

#include "svdkf/model.hpp"

namespace svdkf {

// A model read from a JSON description. Two forms are accepted:
//
//   {"template": "satellite", "delta": 0.1, "q1": 0.0063, "theta_true": 5}
//
//   {"dims": {"n": 1, "m": 1, "p": 1},
//    "matrices": {"F": [[1]], "H": [[1]],
//                 "R": [[{"poly": [[1.0, 1]]}]], "Pi0": [[1]]},
//    "theta_true": [1.0]}
//
// Matrix entries are numbers or polynomials in theta, written as a list of
// terms [coefficient, exponent_1, ..., exponent_p]. Omitted matrices default to
// zero (G defaults to the identity when q == n). Covariance factors are
// computed by the library for polynomial models.
struct LoadedModel {
  std::string name;
  ParametrizedModel model;
  std::optional<VectorXd> theta_true;
};

LoadedModel parse_model_config(const std::string& json_text);
LoadedModel load_model_file(const std::string& path);

}  // namespace svdkf
