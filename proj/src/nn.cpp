#include "unishape/nn.hpp"

#include <cmath>

namespace unishape::nn {

Matrix uniform(ag::Index rows, ag::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix normal(ag::Index rows, ag::Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Matrix m(rows, cols);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(ag::ParamStore& store, const std::string& prefix, ag::Index in, ag::Index out,
               std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = store.add(prefix + ".weight", uniform(in, out, bound, rng));
  bias = store.add(prefix + ".bias", uniform(1, out, bound, rng));
}

Conv1d::Conv1d(ag::ParamStore& store, const std::string& prefix, ag::Index in, ag::Index out, int k,
               std::mt19937_64& rng)
    : kernel(k) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k));
  weight = store.add(prefix + ".weight", uniform(in * k, out, bound, rng));
  bias = store.add(prefix + ".bias", uniform(1, out, bound, rng));
}

LayerNorm::LayerNorm(ag::ParamStore& store, const std::string& prefix, ag::Index dim) {
  gamma = store.add(prefix + ".gamma", Matrix::Ones(1, dim));
  beta = store.add(prefix + ".beta", Matrix::Zero(1, dim));
}

}  // namespace unishape::nn
