#pragma once

// Helpers shared by the unit tests and the acceptance driver: a central
// finite-difference gradient checker and a loop-only reference forward pass.

#include <functional>
#include <string>
#include <vector>

#include "acn/corpus.hpp"
#include "acn/model.hpp"
#include "acn/random.hpp"
#include "acn/textcodec.hpp"

namespace acn::testing {

// |a - b| / max(|a|, |b|, floor)
double rel_err(double a, double b, double floor = 1e-6);

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true);
// Entries with magnitude in [margin, margin + scale).
Tensor away_from_zero(Shape shape, Rng& rng, double margin, double scale = 1.0);

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;  // scalar entries compared
};

// Analytic gradient of f at `leaves` (via backward) against central
// differences with step h, over every entry of every leaf.
GradCheck grad_check(const std::string& name, const std::vector<Tensor>& leaves, const ScalarFn& f, double h = 1e-5);

// One check per differentiable op and two end-to-end model losses (copy head
// on and off), each repeated for `seeds` seeds. Names carry the seed.
std::vector<GradCheck> gradient_suite(std::size_t seeds);

// Tiny configuration for exhaustive checks.
ModelConfig tiny_config();
// Overwrites every parameter with N(0, scale^2) draws, layer-norm gains
// around 1, so that zero-initialised adapter and copy weights are live.
void randomize(Model& model, Rng& rng, double scale = 0.3);

struct Reference {
  std::vector<std::vector<double>> gen, copy, mixed;  // [T][V]
  std::vector<double> gate;                          // [T]
  std::vector<double> adapter_preacts;               // every ReLU input
};

// Plain loops over std::vector, written from the model equations and the
// parameter names only.
Reference reference_forward(const Model& model, const std::vector<TokenId>& tokens);

// One synthetic dialogue with a small model fully fine-tuned on it until
// greedy decoding reproduces it. Built once per process.
struct OverfitFixture {
  SyntheticData data;
  Vocab vocab;
  Model model;
  double final_loss = 0.0;
};
const OverfitFixture& overfit_fixture();

}  // namespace acn::testing
