#pragma once

#include "sonar/model.hpp"

namespace sonar {

// Baseline SGD update on the RFF-linearized one-class SVM objective
//   (lambda/2) ||w||^2 - lambda rho + E[(rho - <w,x>)_+]:
//   Z   = 1{ rho >= <w, x> }
//   w  <- w - eta * (lambda w - x Z)
//   rho<- rho - eta * (-lambda + Z)
// Returns Z. No box invariant is claimed; throws DivergenceError if
// ||w|| exceeds 10 after the update.
bool ocsvm_step(ModelState& state, const FeatureVector& x, const SonarParams& params);

} // namespace sonar
