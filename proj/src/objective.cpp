#include "sonar/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "sonar/errors.hpp"

namespace sonar {

namespace {

constexpr double kCertBoundaryBand = 1e-11;  // |rho - <w,X>| below this counts as an exact kink
constexpr int kMaxBoundarySet = 60;

void check_lambda_closed(double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("lambda must lie in [0,1]");
}

void check_lambda_soft(double lambda) {
    if (!(lambda > 0.0 && lambda <= 1.0))
        throw ConfigError("soft objective requires lambda in (0,1]");
}

void check_dims(const EmpiricalMeasure& measure, const Eigen::Ref<const Eigen::VectorXd>& w) {
    if (w.size() != measure.dim())
        throw InputError("w dimension does not match measure");
}

// Index partition of the hinge terms at a parameter point.
struct Partition {
    std::vector<int> active;     // rho - <w,X> > band
    std::vector<int> boundary;   // |rho - <w,X>| <= band
};

Partition build_partition(const Eigen::VectorXd& hinge_margins, double band, int max_boundary) {
    Partition part;
    const int n = static_cast<int>(hinge_margins.size());
    std::vector<std::pair<double, int>> near;
    for (int i = 0; i < n; ++i) {
        const double m = hinge_margins(i);
        if (std::abs(m) <= band) near.emplace_back(std::abs(m), i);
        else if (m > band) part.active.push_back(i);
    }
    if (static_cast<int>(near.size()) > max_boundary) {
        std::sort(near.begin(), near.end());
        for (int i = max_boundary; i < static_cast<int>(near.size()); ++i) {
            const int idx = near[i].second;
            if (hinge_margins(idx) > 0) part.active.push_back(idx);
        }
        near.resize(max_boundary);
    }
    for (const auto& [dist, idx] : near) part.boundary.push_back(idx);
    return part;
}

// Min-norm subgradient over the boundary coefficients c in [0,1]^k of
// || a + sum_i c_i b_i ||. Least-squares seed (exact when the optimum is
// interior, the typical partial-tie case) polished by box coordinate descent.
double min_norm_subgradient(const Eigen::VectorXd& a_w, double a_rho,
                            const Eigen::MatrixXd& b_w, const Eigen::VectorXd& b_rho) {
    const int k = static_cast<int>(b_rho.size());
    if (k == 0) return std::sqrt(a_w.squaredNorm() + a_rho * a_rho);

    const int dim = static_cast<int>(a_w.size());
    Eigen::MatrixXd B(dim + 1, k);
    B.topRows(dim) = b_w;
    B.row(dim) = b_rho.transpose();
    Eigen::VectorXd a(dim + 1);
    a << a_w, a_rho;

    Eigen::VectorXd c = B.colPivHouseholderQr().solve(-a);
    if (!c.allFinite()) c.setZero();
    for (int i = 0; i < k; ++i) c(i) = std::clamp(c(i), 0.0, 1.0);

    Eigen::VectorXd res = a + B * c;
    Eigen::VectorXd b_sq(k);
    for (int i = 0; i < k; ++i) b_sq(i) = B.col(i).squaredNorm();
    for (int sweep = 0; sweep < 1000; ++sweep) {
        double max_delta = 0.0;
        for (int i = 0; i < k; ++i) {
            if (b_sq(i) <= 0.0) continue;
            const double grad = B.col(i).dot(res);
            const double target = std::clamp(c(i) - grad / b_sq(i), 0.0, 1.0);
            const double delta = target - c(i);
            if (delta != 0.0) {
                res += delta * B.col(i);
                c(i) = target;
                max_delta = std::max(max_delta, std::abs(delta));
            }
        }
        if (max_delta < 1e-15) break;
    }
    return res.norm();
}

enum class ObjectiveKind { Regularized, Soft };

// Certificate at (w, rho): the smallest subgradient norm over tie selections.
// For the 1-strongly convex objective this bounds the distance to the unique
// minimizer; for the soft objective it certifies stationarity.
double certificate_at(const EmpiricalMeasure& measure, const Eigen::VectorXd& w,
                      double rho, double lambda, ObjectiveKind kind) {
    const Eigen::VectorXd scores = measure.points * w;
    const double scale = std::max({1.0, std::abs(rho), scores.cwiseAbs().maxCoeff()});
    const double band = kCertBoundaryBand * scale;

    Eigen::VectorXd a_w;
    double a_rho = 0.0;
    std::vector<int> boundary;
    Eigen::VectorXd active_w = Eigen::VectorXd::Zero(measure.size());
    for (int i = 0; i < measure.size(); ++i) {
        const double m = rho - scores(i);
        if (std::abs(m) <= band) boundary.push_back(i);
        else if (m > band) active_w(i) = measure.weights(i);
    }
    const double p_active = active_w.sum();
    const Eigen::VectorXd s_active = measure.points.transpose() * active_w;
    const int k = static_cast<int>(boundary.size());
    Eigen::MatrixXd b_w(measure.dim(), k);
    Eigen::VectorXd b_rho(k);
    if (kind == ObjectiveKind::Regularized) {
        a_w = w - s_active;
        a_rho = rho - lambda + p_active;
        for (int j = 0; j < k; ++j) {
            const int idx = boundary[j];
            b_w.col(j) = -measure.weights(idx) * measure.points.row(idx).transpose();
            b_rho(j) = measure.weights(idx);
        }
    } else {
        a_w = w - s_active / lambda;
        a_rho = -1.0 + p_active / lambda;
        for (int j = 0; j < k; ++j) {
            const int idx = boundary[j];
            b_w.col(j) = (-measure.weights(idx) / lambda) * measure.points.row(idx).transpose();
            b_rho(j) = measure.weights(idx) / lambda;
        }
    }
    return min_norm_subgradient(a_w, a_rho, b_w, b_rho);
}

struct Candidate {
    Eigen::VectorXd w;
    double rho = 0.0;
    double cert = std::numeric_limits<double>::infinity();
};

// Exact minimizer of the regularized objective restricted to a guessed
// active/boundary split: stationarity plus <w,X_i> = rho on the boundary
// reduce to a k x k linear system in the tie coefficients.
std::optional<Candidate> kkt_candidate_regularized(const EmpiricalMeasure& measure,
                                                   double lambda, const Partition& part) {
    const int dim = measure.dim();
    double p_active = 0.0;
    Eigen::VectorXd s_active = Eigen::VectorXd::Zero(dim);
    for (int idx : part.active) {
        p_active += measure.weights(idx);
        s_active += measure.weights(idx) * measure.points.row(idx).transpose();
    }
    const int k = static_cast<int>(part.boundary.size());
    Candidate cand;
    if (k == 0) {
        cand.w = s_active;
        cand.rho = lambda - p_active;
    } else {
        Eigen::MatrixXd M(k, k);
        Eigen::VectorXd rhs(k);
        for (int i = 0; i < k; ++i) {
            const int bi = part.boundary[i];
            for (int j = 0; j < k; ++j) {
                const int bj = part.boundary[j];
                M(i, j) = measure.weights(bj) *
                          (1.0 + measure.points.row(bj).dot(measure.points.row(bi)));
            }
            rhs(i) = lambda - p_active - s_active.dot(measure.points.row(bi));
        }
        const auto lu = M.partialPivLu();
        Eigen::VectorXd c = lu.solve(rhs);
        if (!c.allFinite()) return std::nullopt;
        // Iterative refinement: the boundary equations are enforced through a
        // possibly ill-conditioned system and the certificate needs their
        // residuals at roundoff level.
        for (int round = 0; round < 3; ++round) c += lu.solve(rhs - M * c);
        if (!c.allFinite()) return std::nullopt;
        cand.w = s_active;
        double mass = 0.0;
        for (int j = 0; j < k; ++j) {
            cand.w += c(j) * measure.weights(part.boundary[j]) *
                      measure.points.row(part.boundary[j]).transpose();
            mass += c(j) * measure.weights(part.boundary[j]);
        }
        cand.rho = lambda - p_active - mass;
    }
    cand.cert = certificate_at(measure, cand.w, cand.rho, lambda, ObjectiveKind::Regularized);
    return cand;
}

// Same idea for the soft objective; the tie mass must complete P(active) to
// exactly lambda and rho solves the boundary equations jointly.
std::optional<Candidate> kkt_candidate_soft(const EmpiricalMeasure& measure,
                                            double lambda, const Partition& part) {
    const int dim = measure.dim();
    const int k = static_cast<int>(part.boundary.size());
    if (k == 0) return std::nullopt;
    double p_active = 0.0;
    Eigen::VectorXd s_active = Eigen::VectorXd::Zero(dim);
    for (int idx : part.active) {
        p_active += measure.weights(idx);
        s_active += measure.weights(idx) * measure.points.row(idx).transpose();
    }

    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(k + 1, k + 1);
    Eigen::VectorXd rhs(k + 1);
    for (int i = 0; i < k; ++i) {
        const int bi = part.boundary[i];
        for (int j = 0; j < k; ++j) {
            const int bj = part.boundary[j];
            M(i, j) = -(measure.weights(bj) / lambda) *
                      measure.points.row(bj).dot(measure.points.row(bi));
        }
        M(i, k) = 1.0;
        rhs(i) = s_active.dot(measure.points.row(bi)) / lambda;
    }
    for (int j = 0; j < k; ++j) M(k, j) = measure.weights(part.boundary[j]);
    M(k, k) = 0.0;
    rhs(k) = lambda - p_active;

    const auto lu = M.partialPivLu();
    Eigen::VectorXd u = lu.solve(rhs);
    if (!u.allFinite()) return std::nullopt;
    for (int round = 0; round < 3; ++round) u += lu.solve(rhs - M * u);
    if (!u.allFinite()) return std::nullopt;

    Candidate cand;
    cand.w = s_active;
    for (int j = 0; j < k; ++j)
        cand.w += u(j) * measure.weights(part.boundary[j]) *
                  measure.points.row(part.boundary[j]).transpose();
    cand.w /= lambda;
    cand.rho = u(k);
    cand.cert = certificate_at(measure, cand.w, cand.rho, lambda, ObjectiveKind::Soft);
    return cand;
}

void project_box(Eigen::VectorXd& w, double& rho, double w_radius, double rho_bound) {
    const double norm = w.norm();
    if (norm > w_radius) w *= w_radius / norm;
    rho = std::clamp(rho, -rho_bound, rho_bound);
}

std::optional<Candidate> kkt_candidate(const EmpiricalMeasure& measure, double lambda,
                                       const Partition& part, ObjectiveKind kind) {
    if (kind == ObjectiveKind::Regularized)
        return kkt_candidate_regularized(measure, lambda, part);
    return kkt_candidate_soft(measure, lambda, part);
}

Partition partition_at(const EmpiricalMeasure& measure, const Eigen::VectorXd& w, double rho,
                       double band) {
    const Eigen::VectorXd scores = measure.points * w;
    const Eigen::VectorXd margins = Eigen::VectorXd::Constant(measure.size(), rho) - scores;
    return build_partition(margins, band, kMaxBoundarySet);
}

// The soft objective's stationarity forces the hinge-active mass to equal
// lambda exactly, so its partitions come from the sorted-score mass prefix:
// active atoms strictly under lambda mass, one partial atom at the quantile.
Partition quantile_partition(const EmpiricalMeasure& measure, const Eigen::VectorXd& w,
                             double lambda) {
    const Eigen::VectorXd scores = measure.points * w;
    std::vector<int> order(measure.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores(a) < scores(b); });
    Partition part;
    double mass = 0.0;
    for (int idx : order) {
        if (mass + measure.weights(idx) < lambda - 1e-15) {
            part.active.push_back(idx);
            mass += measure.weights(idx);
        } else {
            part.boundary.push_back(idx);
            break;
        }
    }
    return part;
}

// Active-set fixed point: re-derive the hinge partition at the current
// exact-KKT candidate and re-solve until the partition repeats. A cycle
// means the contested points sit exactly on the kink at the optimum, so they
// are moved into the boundary set and solved once more.
Candidate fixed_point_walk(const EmpiricalMeasure& measure, double lambda, Candidate start,
                           double tol, ObjectiveKind kind) {
    Candidate best = start;
    Candidate cur = std::move(start);
    std::vector<int> prev_active;
    std::vector<std::vector<int>> history;

    for (int round = 0; round < 20 && best.cert > tol; ++round) {
        const double scale = std::max(1.0, cur.w.norm() + std::abs(cur.rho));
        Partition part = kind == ObjectiveKind::Soft
                             ? quantile_partition(measure, cur.w, lambda)
                             : partition_at(measure, cur.w, cur.rho, 1e-12 * scale);

        std::vector<int> key = part.active;
        std::sort(key.begin(), key.end());

        // Atoms flipping between consecutive partitions sit on the kink at
        // the optimum: solve once more with them tied to the boundary.
        if (!prev_active.empty() && key != prev_active) {
            std::vector<int> contested;
            std::set_symmetric_difference(key.begin(), key.end(), prev_active.begin(),
                                          prev_active.end(), std::back_inserter(contested));
            if (!contested.empty() && static_cast<int>(contested.size()) <= kMaxBoundarySet) {
                Partition tied;
                std::set_intersection(key.begin(), key.end(), prev_active.begin(),
                                      prev_active.end(), std::back_inserter(tied.active));
                tied.boundary = part.boundary;
                for (int idx : contested)
                    if (std::find(tied.boundary.begin(), tied.boundary.end(), idx) ==
                        tied.boundary.end())
                        tied.boundary.push_back(idx);
                if (auto cand = kkt_candidate(measure, lambda, tied, kind)) {
                    if (cand->cert < best.cert) best = *cand;
                    if (best.cert <= tol) break;
                }
            }
        }

        if (std::find(history.begin(), history.end(), key) != history.end()) break;
        history.push_back(key);
        prev_active = std::move(key);

        auto cand = kkt_candidate(measure, lambda, part, kind);
        if (!cand) break;
        if (cand->cert < best.cert) best = *cand;
        cur = std::move(*cand);
    }
    return best;
}

// Candidate search from a warm point. Near convergence several atoms can sit
// almost tied at the kink (partial boundary coefficients at the optimum), so
// the seed partition is probed over a descending ladder of tie bands before
// each fixed-point walk.
// Dual route for the soft objective: with caps alpha_i <= p_i/lambda and
// sum(alpha) = 1, the dual is min ||points^T alpha||^2 over the capped
// simplex; w* = points^T alpha and rho* sits at the kink atom. Solved by
// pairwise Frank-Wolfe with exact line search, then polished through the
// primal KKT system derived from the dual's support structure.
Candidate soft_dual_candidate(const EmpiricalMeasure& measure, double lambda, double tol) {
    const int n = measure.size();
    const Eigen::VectorXd caps = measure.weights / lambda;
    Eigen::VectorXd alpha = measure.weights;   // feasible: sum 1, within caps
    Eigen::VectorXd g = measure.points.transpose() * alpha;

    const double eps = 1e-14;
    for (long iter = 0; iter < 50000; ++iter) {
        const Eigen::VectorXd scores = measure.points * g;
        int fw = -1, aw = -1;
        double fw_score = std::numeric_limits<double>::infinity();
        double aw_score = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            if (alpha(i) < caps(i) - eps && scores(i) < fw_score) {
                fw_score = scores(i);
                fw = i;
            }
            if (alpha(i) > eps && scores(i) > aw_score) {
                aw_score = scores(i);
                aw = i;
            }
        }
        if (fw < 0 || aw < 0 || fw == aw) break;
        const double gap = aw_score - fw_score;   // pairwise optimality residual
        if (gap <= 1e-15) break;
        const Eigen::VectorXd dir =
            (measure.points.row(fw) - measure.points.row(aw)).transpose();
        const double denom = dir.squaredNorm();
        if (denom <= 1e-18) break;
        const double step =
            std::clamp(gap / denom, 0.0, std::min(alpha(aw), caps(fw) - alpha(fw)));
        if (step <= 0.0) break;
        alpha(fw) += step;
        alpha(aw) -= step;
        g += step * dir;
        if ((iter & 255) == 255) g = measure.points.transpose() * alpha;
    }

    // Primal partition from the dual support: capped atoms are strictly
    // active, interior atoms sit on the kink. Without interior atoms the
    // minimizing rho is an interval; its lower endpoint is the top capped
    // atom, which joins the boundary with coefficient one.
    Partition part;
    const Eigen::VectorXd scores = measure.points * g;
    int top_capped = -1;
    double top_score = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        if (alpha(i) >= caps(i) - 1e-9 * caps(i)) {
            part.active.push_back(i);
            if (scores(i) > top_score) {
                top_score = scores(i);
                top_capped = i;
            }
        } else if (alpha(i) > 1e-9 * caps(i)) {
            part.boundary.push_back(i);
        }
    }
    if (part.boundary.empty() && top_capped >= 0) {
        part.active.erase(std::remove(part.active.begin(), part.active.end(), top_capped),
                          part.active.end());
        part.boundary.push_back(top_capped);
    }
    if (part.boundary.empty()) return Candidate{g, 0.0, std::numeric_limits<double>::infinity()};

    auto cand = kkt_candidate_soft(measure, lambda, part);
    if (cand) {
        const Candidate walked = fixed_point_walk(measure, lambda, *cand, tol, ObjectiveKind::Soft);
        return walked.cert < cand->cert ? walked : *cand;
    }
    return Candidate{g, 0.0, std::numeric_limits<double>::infinity()};
}

Candidate refine_candidate(const EmpiricalMeasure& measure, double lambda, Candidate seed,
                           double tol, ObjectiveKind kind) {
    if (kind == ObjectiveKind::Soft)
        return fixed_point_walk(measure, lambda, std::move(seed), tol, kind);

    Candidate best = seed;
    const double scale = std::max(1.0, seed.w.norm() + std::abs(seed.rho));
    for (double band : {1e-3, 1e-4, 1e-5, 1e-6, 1e-8, 1e-10, 1e-12}) {
        Partition part = partition_at(measure, seed.w, seed.rho, band * scale);
        auto cand = kkt_candidate(measure, lambda, part, kind);
        if (!cand) continue;
        if (cand->cert < best.cert) best = *cand;
        const Candidate walked = fixed_point_walk(measure, lambda, std::move(*cand), tol, kind);
        if (walked.cert < best.cert) best = walked;
        if (best.cert <= tol) break;
    }
    return best;
}

Solution finalize(const EmpiricalMeasure& measure, double lambda, Candidate best,
                  long iters, long max_iters, double tol, ObjectiveKind kind) {
    Solution sol;
    sol.w = std::move(best.w);
    sol.rho = best.rho;
    sol.certificate = best.cert;
    sol.converged = best.cert <= tol;
    sol.iterations = iters;
    sol.objective_value = kind == ObjectiveKind::Regularized
                              ? eval_F(sol.w, sol.rho, measure, lambda)
                              : eval_soft_ocsvm(sol.w, sol.rho, measure, lambda);
    const double norm = sol.w.norm();
    if (norm > 1e-12) sol.margin = sol.rho / norm;
    (void)max_iters;
    return sol;
}

} // namespace

EmpiricalMeasure EmpiricalMeasure::uniform(Eigen::MatrixXd pts) {
    EmpiricalMeasure m;
    m.points = std::move(pts);
    const int n = static_cast<int>(m.points.rows());
    m.weights = Eigen::VectorXd::Constant(n, n > 0 ? 1.0 / n : 0.0);
    m.validate();
    return m;
}

EmpiricalMeasure EmpiricalMeasure::weighted(Eigen::MatrixXd pts, Eigen::VectorXd w) {
    EmpiricalMeasure m;
    m.points = std::move(pts);
    if (w.size() != m.points.rows())
        throw InputError("measure: weight count does not match point count");
    if ((w.array() < 0).any())
        throw InputError("measure: weights must be nonnegative");
    const double total = w.sum();
    if (!(total > 0)) throw InputError("measure: weights must have positive mass");
    m.weights = w / total;
    m.validate();
    return m;
}

EmpiricalMeasure EmpiricalMeasure::from_features(const std::vector<FeatureVector>& pts) {
    if (pts.empty()) throw InputError("measure: needs at least one point");
    Eigen::MatrixXd mat(static_cast<int>(pts.size()), pts.front().size());
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        if (pts[i].size() != mat.cols())
            throw InputError("measure: inconsistent point dimensions");
        mat.row(i) = pts[i].transpose();
    }
    return uniform(std::move(mat));
}

void EmpiricalMeasure::validate() const {
    if (points.rows() == 0) throw InputError("measure: needs at least one point");
    for (int i = 0; i < points.rows(); ++i) {
        const double norm = points.row(i).norm();
        if (std::abs(norm - 1.0) > 1e-6) {
            std::ostringstream msg;
            msg << "measure: point " << i << " has norm " << norm << ", expected 1";
            throw InputError(msg.str());
        }
    }
}

double eval_F(const Eigen::Ref<const Eigen::VectorXd>& w, double rho,
              const EmpiricalMeasure& measure, double lambda) {
    check_lambda_closed(lambda);
    check_dims(measure, w);
    const Eigen::VectorXd scores = measure.points * w;
    const double hinge =
        ((rho - scores.array()).max(0.0) * measure.weights.array()).sum();
    return 0.5 * (w.squaredNorm() + rho * rho) - lambda * rho + hinge;
}

std::pair<Eigen::VectorXd, double>
subgradient_F(const Eigen::Ref<const Eigen::VectorXd>& w, double rho,
              const EmpiricalMeasure& measure, double lambda) {
    check_lambda_closed(lambda);
    check_dims(measure, w);
    const Eigen::VectorXd scores = measure.points * w;
    const Eigen::VectorXd active =
        (scores.array() <= rho).select(measure.weights, Eigen::VectorXd::Zero(measure.size()));
    const Eigen::VectorXd g_w = w - measure.points.transpose() * active;
    return {g_w, rho - lambda + active.sum()};
}

Solution minimize_F(const EmpiricalMeasure& measure, double lambda,
                    long max_iters, double tol) {
    check_lambda_closed(lambda);
    measure.validate();

    Eigen::VectorXd w = Eigen::VectorXd::Zero(measure.dim());
    double rho = 0.0;
    Candidate best;
    best.w = w;
    best.rho = rho;
    best.cert = certificate_at(measure, w, rho, lambda, ObjectiveKind::Regularized);

    long iters = 0;
    long poll = 25;
    while (best.cert > tol && iters < max_iters) {
        for (long inner = 0; inner < poll && iters < max_iters; ++inner) {
            ++iters;
            auto [g_w, g_rho] = subgradient_F(w, rho, measure, lambda);
            const double eta = 1.0 / static_cast<double>(iters);
            w -= eta * g_w;
            rho -= eta * g_rho;
            project_box(w, rho, 1.0, 1.0);
        }
        poll = std::min<long>(poll * 2, 4000);
        // Exact minimizers of the linear pieces reachable from the iterate,
        // refined by the active-set fixed point.
        const double iter_cert = certificate_at(measure, w, rho, lambda, ObjectiveKind::Regularized);
        if (iter_cert < best.cert) best = Candidate{w, rho, iter_cert};
        Candidate seed{w, rho, iter_cert};
        const Candidate refined =
            refine_candidate(measure, lambda, std::move(seed), tol, ObjectiveKind::Regularized);
        if (refined.cert < best.cert) best = refined;
    }
    return finalize(measure, lambda, std::move(best), iters, max_iters, tol,
                    ObjectiveKind::Regularized);
}

double eval_soft_ocsvm(const Eigen::Ref<const Eigen::VectorXd>& w, double rho,
                       const EmpiricalMeasure& measure, double lambda) {
    check_lambda_soft(lambda);
    check_dims(measure, w);
    const Eigen::VectorXd scores = measure.points * w;
    const double hinge =
        ((rho - scores.array()).max(0.0) * measure.weights.array()).sum();
    return 0.5 * w.squaredNorm() - rho + hinge / lambda;
}

Solution minimize_soft_ocsvm(const EmpiricalMeasure& measure, double lambda,
                             long max_iters, double tol) {
    check_lambda_soft(lambda);
    measure.validate();

    const int dim = measure.dim();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);
    double rho = 0.0;
    Eigen::VectorXd w_avg = w;
    double rho_avg = rho;

    Candidate best;
    best.w = w;
    best.rho = rho;
    best.cert = certificate_at(measure, w, rho, lambda, ObjectiveKind::Soft);

    // The dual route usually certifies outright; the primal loop below picks
    // up anything it leaves unresolved.
    {
        const Candidate dual = soft_dual_candidate(measure, lambda, tol);
        if (dual.cert < best.cert) best = dual;
    }

    long iters = 0;
    long poll = 25;
    while (best.cert > tol && iters < max_iters) {
        for (long inner = 0; inner < poll && iters < max_iters; ++inner) {
            ++iters;
            const Eigen::VectorXd scores = measure.points * w;
            const Eigen::VectorXd active = (scores.array() <= rho)
                                               .select(measure.weights,
                                                       Eigen::VectorXd::Zero(measure.size()));
            Eigen::VectorXd g_w = w - measure.points.transpose() * (active / lambda);
            const double g_rho = -1.0 + active.sum() / lambda;
            const double eta = 0.5 / std::sqrt(static_cast<double>(iters));
            w -= eta * g_w;
            rho -= eta * g_rho;
            project_box(w, rho, 1.5, 1.5);
            const double k = static_cast<double>(iters);
            w_avg = ((k - 1.0) / k) * w_avg + (1.0 / k) * w;
            rho_avg = ((k - 1.0) / k) * rho_avg + (1.0 / k) * rho;
        }
        poll = std::min<long>(poll * 2, 4000);
        const double iter_cert = certificate_at(measure, w, rho, lambda, ObjectiveKind::Soft);
        if (iter_cert < best.cert) best = Candidate{w, rho, iter_cert};
        for (const auto& [cw, crho] : {std::pair{w, rho}, std::pair{w_avg, rho_avg}}) {
            Candidate seed{cw, crho, certificate_at(measure, cw, crho, lambda, ObjectiveKind::Soft)};
            const Candidate refined =
                refine_candidate(measure, lambda, std::move(seed), tol, ObjectiveKind::Soft);
            if (refined.cert < best.cert) best = refined;
        }
    }

    // On exact-quantile measures the rho-minimizers form an interval; return
    // its lower endpoint (the kink at the strictly-below atom) so the strict
    // Type I mass stays under lambda.
    if (best.cert <= tol) {
        const Eigen::VectorXd scores = measure.points * best.w;
        const double scale = std::max({1.0, std::abs(best.rho), scores.cwiseAbs().maxCoeff()});
        double lower_kink = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < measure.size(); ++i)
            if (scores(i) < best.rho - 1e-9 * scale) lower_kink = std::max(lower_kink, scores(i));
        if (std::isfinite(lower_kink) && lower_kink < best.rho - 1e-9 * scale) {
            const double cert =
                certificate_at(measure, best.w, lower_kink, lambda, ObjectiveKind::Soft);
            if (cert <= tol) best = Candidate{best.w, lower_kink, cert};
        }
    }
    return finalize(measure, lambda, std::move(best), iters, max_iters, tol, ObjectiveKind::Soft);
}

double eval_ocsvm_rff(const Eigen::Ref<const Eigen::VectorXd>& w, double rho,
                      const EmpiricalMeasure& measure, double lambda) {
    check_lambda_soft(lambda);
    check_dims(measure, w);
    const Eigen::VectorXd scores = measure.points * w;
    const double hinge =
        ((rho - scores.array()).max(0.0) * measure.weights.array()).sum();
    return 0.5 * lambda * w.squaredNorm() - lambda * rho + hinge;
}

std::pair<Eigen::VectorXd, double>
subgradient_ocsvm_rff(const Eigen::Ref<const Eigen::VectorXd>& w, double rho,
                      const EmpiricalMeasure& measure, double lambda) {
    check_lambda_soft(lambda);
    check_dims(measure, w);
    const Eigen::VectorXd scores = measure.points * w;
    Eigen::VectorXd g_w = lambda * w;
    double prob = 0.0;
    for (int i = 0; i < measure.size(); ++i) {
        if (rho >= scores(i)) {
            g_w -= measure.weights(i) * measure.points.row(i).transpose();
            prob += measure.weights(i);
        }
    }
    return {g_w, -lambda + prob};
}

SupportMargin support_margin(const EmpiricalMeasure& measure, long max_iters, double gap_tol) {
    measure.validate();
    const int n = measure.size();
    const int dim = measure.dim();

    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
    alpha(0) = 1.0;
    Eigen::VectorXd g = measure.points.row(0).transpose();

    for (long iter = 0; iter < max_iters; ++iter) {
        const Eigen::VectorXd scores = measure.points * g;
        int fw = 0;
        scores.minCoeff(&fw);
        const double gap = g.squaredNorm() - scores(fw);
        if (gap <= gap_tol) break;

        int away = -1;
        double away_score = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            if (alpha(i) > 0 && scores(i) > away_score) {
                away_score = scores(i);
                away = i;
            }
        }
        const Eigen::VectorXd dir =
            (measure.points.row(fw) - measure.points.row(away)).transpose();
        const double denom = dir.squaredNorm();
        if (denom <= 1e-18) break;
        const double step = std::clamp(-g.dot(dir) / denom, 0.0, alpha(away));
        if (step <= 0.0) break;
        alpha(fw) += step;
        alpha(away) -= step;
        if (alpha(away) < 1e-16) alpha(away) = 0.0;
        g += step * dir;
        if ((iter & 127) == 127) g = measure.points.transpose() * alpha;  // drift control
    }

    SupportMargin result;
    const double norm = g.norm();
    if (norm <= 1e-7) {
        result.r_star = 0.0;
        result.v_star = Eigen::VectorXd::Zero(dim);
        result.origin_in_hull = true;
    } else {
        result.r_star = norm;
        result.v_star = g / norm;
        result.origin_in_hull = false;
    }
    return result;
}

double convexity_gap_probe(const ParamObjective& f, int dim, double modulus,
                           int num_trials, std::uint64_t seed) {
    if (dim < 1) throw ConfigError("convexity probe needs dim >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto sample_theta = [&](Eigen::VectorXd& w, double& rho) {
        w.resize(dim);
        for (int i = 0; i < dim; ++i) w(i) = gauss(rng);
        const double target = 1.5 * unit(rng);
        const double norm = w.norm();
        if (norm > 0) w *= target / norm;
        rho = 3.0 * unit(rng) - 1.5;
    };

    double worst = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd w1, w2;
    double rho1 = 0.0, rho2 = 0.0;
    for (int trial = 0; trial < num_trials; ++trial) {
        sample_theta(w1, rho1);
        sample_theta(w2, rho2);
        const double alpha = 0.01 + 0.98 * unit(rng);
        const Eigen::VectorXd wm = alpha * w1 + (1.0 - alpha) * w2;
        const double rhom = alpha * rho1 + (1.0 - alpha) * rho2;
        const double dist_sq = (w1 - w2).squaredNorm() + (rho1 - rho2) * (rho1 - rho2);
        const double gap = f(wm, rhom) -
                           (alpha * f(w1, rho1) + (1.0 - alpha) * f(w2, rho2) -
                            0.5 * modulus * alpha * (1.0 - alpha) * dist_sq);
        worst = std::max(worst, gap);
    }
    return worst;
}

double strong_convexity_probe(const EmpiricalMeasure& measure, double lambda,
                              int num_trials, std::uint64_t seed) {
    check_lambda_closed(lambda);
    return convexity_gap_probe(
        [&](const Eigen::VectorXd& w, double rho) { return eval_F(w, rho, measure, lambda); },
        measure.dim(), 1.0, num_trials, seed);
}

double rho_segment_convexity_gap(const ParamObjective& f, const Eigen::VectorXd& w,
                                 double rho1, double rho2, double modulus,
                                 int alpha_steps) {
    if (alpha_steps < 1) throw ConfigError("rho segment probe needs alpha_steps >= 1");
    double worst = -std::numeric_limits<double>::infinity();
    const double f1 = f(w, rho1);
    const double f2 = f(w, rho2);
    const double dist_sq = (rho1 - rho2) * (rho1 - rho2);
    for (int i = 1; i <= alpha_steps; ++i) {
        const double alpha = static_cast<double>(i) / (alpha_steps + 1);
        const double gap = f(w, alpha * rho1 + (1.0 - alpha) * rho2) -
                           (alpha * f1 + (1.0 - alpha) * f2 -
                            0.5 * modulus * alpha * (1.0 - alpha) * dist_sq);
        worst = std::max(worst, gap);
    }
    return worst;
}

} // namespace sonar
