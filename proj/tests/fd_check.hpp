#pragma once

// Central finite-difference oracle for gradient checks. Lives in test code
// and stays independent of the backward implementations it verifies.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tcts/rng.hpp"
#include "tcts/tensor.hpp"

namespace fd {

using tcts::ad::Graph;
using tcts::ad::Shape;
using tcts::ad::TensorPtr;

// Builds the expression under test from freshly materialized inputs.
using Builder = std::function<TensorPtr(Graph&, const std::vector<TensorPtr>&)>;

struct Spec {
  std::string name;
  std::vector<Shape> shapes;
  Builder build;
  double lo = -1.5, hi = 1.5;             // input sampling range
  std::vector<int> positive_inputs = {};  // indices sampled in [0.4, 2.0]
};

struct Result {
  bool ok = true;
  double worst_err = 0.0;
  std::string detail;
};

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (size_t e : s) n *= e;
  return n;
}

// Scalar probe: sum of (out .* fixed random weights). Perturbing inputs and
// re-running the forward gives the numeric derivative of the same scalar the
// backward pass differentiates.
inline double eval_probe(const Spec& spec, const std::vector<std::vector<double>>& vals,
                         const std::vector<double>& probe_w) {
  Graph g;
  std::vector<TensorPtr> inputs;
  inputs.reserve(vals.size());
  for (size_t i = 0; i < vals.size(); ++i)
    inputs.push_back(tcts::ad::Tensor::from(spec.shapes[i], vals[i]));
  auto out = spec.build(g, inputs);
  double s = 0.0;
  for (size_t i = 0; i < out->size(); ++i) s += out->values()[i] * probe_w[i];
  return s;
}

inline Result check(const Spec& spec, tcts::Rng& rng, int trials,
                    double step = 1e-3, double tol = 1e-4) {
  Result res;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<std::vector<double>> vals(spec.shapes.size());
    for (size_t i = 0; i < spec.shapes.size(); ++i) {
      bool pos = false;
      for (int pi : spec.positive_inputs) pos |= (static_cast<size_t>(pi) == i);
      vals[i].resize(numel(spec.shapes[i]));
      for (auto& v : vals[i])
        v = pos ? rng.uniform(0.4, 2.0) : rng.uniform(spec.lo, spec.hi);
    }

    // Analytic gradients through one taped forward+backward.
    Graph g;
    std::vector<TensorPtr> inputs;
    for (size_t i = 0; i < vals.size(); ++i)
      inputs.push_back(tcts::ad::Tensor::from(spec.shapes[i], vals[i]));
    auto out = spec.build(g, inputs);
    std::vector<double> probe_w(out->size());
    for (auto& w : probe_w) w = rng.uniform(-1.0, 1.0);
    auto probe_t = tcts::ad::Tensor::from(out->shape(), probe_w);
    probe_t->is_const = true;
    auto loss = g.sum(g.mul(out, probe_t));
    g.backward(loss);

    for (size_t i = 0; i < vals.size(); ++i) {
      auto analytic = inputs[i]->grad_or_zeros();
      for (size_t j = 0; j < vals[i].size(); ++j) {
        double keep = vals[i][j];
        vals[i][j] = keep + step;
        double up = eval_probe(spec, vals, probe_w);
        vals[i][j] = keep - step;
        double dn = eval_probe(spec, vals, probe_w);
        vals[i][j] = keep;
        double numeric = (up - dn) / (2.0 * step);
        double denom = std::max({1.0, std::fabs(analytic[j]), std::fabs(numeric)});
        double err = std::fabs(analytic[j] - numeric) / denom;
        res.worst_err = std::max(res.worst_err, err);
        if (err > tol) {
          res.ok = false;
          res.detail = spec.name + ": input " + std::to_string(i) + " elem " +
                       std::to_string(j) + " analytic " + std::to_string(analytic[j]) +
                       " numeric " + std::to_string(numeric);
          return res;
        }
      }
    }
  }
  return res;
}

}  // namespace fd
