#pragma once

// Parameterized layers shared by the adapter, encoder and heads. Each layer
// registers its leaves in a ParamStore under "<prefix>.<leaf>" and keeps
// handles to them, so the store stays the single owner of the values.

#include <random>
#include <string>

#include "unishape/autograd.hpp"

namespace unishape::nn {

using ag::Matrix;
using ag::Var;

/// Uniform(-bound, bound) matrix.
Matrix uniform(ag::Index rows, ag::Index cols, double bound, std::mt19937_64& rng);
/// Normal(0, std) matrix.
Matrix normal(ag::Index rows, ag::Index cols, double std, std::mt19937_64& rng);

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out

  Linear() = default;
  Linear(ag::ParamStore& store, const std::string& prefix, ag::Index in, ag::Index out, std::mt19937_64& rng);
  Var operator()(const Var& x) const { return ag::add_row(ag::matmul(x, weight), bias); }
};

struct Conv1d {
  Var weight;  // (kernel * in) x out
  Var bias;    // 1 x out
  int kernel = 1;

  Conv1d() = default;
  Conv1d(ag::ParamStore& store, const std::string& prefix, ag::Index in, ag::Index out, int kernel,
         std::mt19937_64& rng);
  Var operator()(const Var& x, ag::Index segment = 0) const {
    return ag::conv1d_same(x, weight, bias, kernel, segment);
  }
};

struct LayerNorm {
  Var gamma;
  Var beta;

  LayerNorm() = default;
  LayerNorm(ag::ParamStore& store, const std::string& prefix, ag::Index dim);
  Var operator()(const Var& x) const { return ag::layer_norm_rows(x, gamma, beta); }
};

}  // namespace unishape::nn
