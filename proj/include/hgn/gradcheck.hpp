#pragma once

#include "hgn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

namespace hgn {

struct GradInput {
  Shape shape;
  Eigen::VectorXd value;
  bool check = true;  // include in the comparison
};

/// Builds the op under test on a fresh tape from leaves created for each input.
using GradBuilder = std::function<Tensor(Tape& tape, const std::vector<Tensor>& inputs)>;

/// Compares reverse-mode gradients of <build(inputs), probe> against central
/// differences with step h, for a fixed random probe. Returns the largest
/// norm-wise relative error over the checked inputs.
double gradient_relative_error(const GradBuilder& build, const std::vector<GradInput>& inputs,
                               std::uint64_t probe_seed, double h = 1e-5,
                               const std::set<std::string>& flipped = {});

struct GradcheckResult {
  std::string name;
  int trials = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int trials = 20;
  std::set<std::string> flipped;  // backward rules negated on every tape
};

/// Finite-difference check of every differentiable op on random small shapes.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options = {});

}  // namespace hgn
