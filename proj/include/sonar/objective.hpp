#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "sonar/rff.hpp"

namespace sonar {

// A finite weighted set of unit-norm points; the probability measures all
// population-level statements are evaluated against.
struct EmpiricalMeasure {
    Eigen::MatrixXd points;    // n x dim, rows unit norm
    Eigen::VectorXd weights;   // n, nonnegative, sums to 1

    static EmpiricalMeasure uniform(Eigen::MatrixXd pts);
    static EmpiricalMeasure weighted(Eigen::MatrixXd pts, Eigen::VectorXd w);
    static EmpiricalMeasure from_features(const std::vector<FeatureVector>& pts);

    int size() const { return static_cast<int>(points.rows()); }
    int dim() const { return static_cast<int>(points.cols()); }
    void validate() const;
};

struct Solution {
    Eigen::VectorXd w;
    double rho = 0.0;
    double objective_value = 0.0;
    std::optional<double> margin;   // rho/||w|| when ||w|| > 0
    bool converged = true;
    double certificate = 0.0;       // min-norm subgradient at the returned point
    long iterations = 0;
};

// F(w,rho) = (||w||^2 + rho^2)/2 - lambda*rho + E[(rho - <w,X>)_+].
double eval_F(const Eigen::Ref<const Eigen::VectorXd>& w, double rho,
              const EmpiricalMeasure& measure, double lambda);

// (w + E[-X 1{rho >= <w,X>}], rho - lambda + P(rho >= <w,X>)); upper selection
// at ties.
std::pair<Eigen::VectorXd, double>
subgradient_F(const Eigen::Ref<const Eigen::VectorXd>& w, double rho,
              const EmpiricalMeasure& measure, double lambda);

// Projected subgradient descent with steps 1/t over {||w||<=1, |rho|<=1},
// with periodic active-set polishing; stops when the min-norm subgradient at
// the best candidate drops below tol (which certifies the same distance to
// the unique minimizer, by 1-strong convexity).
Solution minimize_F(const EmpiricalMeasure& measure, double lambda,
                    long max_iters = 200000, double tol = 1e-8);

// (1/2)||w||^2 - rho + (1/lambda) E[(rho - <w,X>)_+]; requires lambda in (0,1].
double eval_soft_ocsvm(const Eigen::Ref<const Eigen::VectorXd>& w, double rho,
                       const EmpiricalMeasure& measure, double lambda);

// Averaged subgradient descent with steps base/sqrt(t), plus the same
// active-set polishing. The rho-section of this objective is piecewise
// linear, so minimizers can form an interval on atomic measures; the returned
// point sits at the lower kink (the boundary atom), which keeps both the
// strict Type I bound and the margin bound sharp.
Solution minimize_soft_ocsvm(const EmpiricalMeasure& measure, double lambda,
                             long max_iters = 200000, double tol = 1e-8);

// (lambda/2)||w||^2 - lambda*rho + E[(rho - <w,X>)_+]; the ERM-form objective
// the SGD baseline targets (the soft objective scaled by lambda).
double eval_ocsvm_rff(const Eigen::Ref<const Eigen::VectorXd>& w, double rho,
                      const EmpiricalMeasure& measure, double lambda);
std::pair<Eigen::VectorXd, double>
subgradient_ocsvm_rff(const Eigen::Ref<const Eigen::VectorXd>& w, double rho,
                      const EmpiricalMeasure& measure, double lambda);

struct SupportMargin {
    double r_star = 0.0;
    Eigen::VectorXd v_star;     // maximizing unit direction; zero when flagged
    bool origin_in_hull = false;
};

// Distance from the origin to the convex hull of the support, computed by a
// pairwise Frank-Wolfe (Gilbert) iteration on min_{alpha in simplex}
// ||points^T alpha||^2 with exact line search; duality-gap stop.
SupportMargin support_margin(const EmpiricalMeasure& measure,
                             long max_iters = 10000, double gap_tol = 1e-8);

// Max over random triples (theta1, theta2, alpha) of
//   f(mid) - [alpha f(theta1) + (1-alpha) f(theta2)
//             - (modulus/2) alpha (1-alpha) ||theta1-theta2||^2].
// Nonpositive (up to float error) iff f is modulus-strongly convex along the
// sampled segments. theta = (w, rho) with dim(w) = dim.
using ParamObjective = std::function<double(const Eigen::VectorXd&, double)>;
double convexity_gap_probe(const ParamObjective& f, int dim, double modulus,
                           int num_trials, std::uint64_t seed);

// The probe specialized to F (modulus 1).
double strong_convexity_probe(const EmpiricalMeasure& measure, double lambda,
                              int num_trials, std::uint64_t seed);

// Segment probe along the rho direction at fixed w: the construction that
// exhibits the missing curvature of the ERM-form objective.
double rho_segment_convexity_gap(const ParamObjective& f, const Eigen::VectorXd& w,
                                 double rho1, double rho2, double modulus,
                                 int alpha_steps = 9);

} // namespace sonar
