#include "prevmap/lgm.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

namespace prevmap::lgm {

// ---------------------------------------------------------------------------
// Pointwise likelihood terms

namespace {

// The two p-dependent rising products of the beta-binomial pmf, differentiated in eta.
PointwiseTerm bb_products(int y, int n, double eta, double r, bool derivs) {
    PointwiseTerm t;
    const double p = expit(eta);
    const double q = expit(-eta);
    const double s = p * q;
    const double qmp = q - p;
    const double log_p = log_expit(eta);
    const double log_q = log_expit(-eta);
    for (int k = 0; k < y; ++k) {
        if (k == 0 || r == 0.0) {
            t.value += log_p;
            if (derivs) {
                t.gradient += q;
                t.hessian -= s;
            }
            continue;
        }
        const double a = p + k * r;
        t.value += std::log(a);
        if (derivs) {
            t.gradient += s / a;
            t.hessian += (s * qmp * a - s * s) / (a * a);
        }
    }
    for (int k = 0; k < n - y; ++k) {
        if (k == 0 || r == 0.0) {
            t.value += log_q;
            if (derivs) {
                t.gradient -= p;
                t.hessian -= s;
            }
            continue;
        }
        const double b = q + k * r;
        t.value += std::log(b);
        if (derivs) {
            t.gradient -= s / b;
            t.hessian -= (s * qmp * b + s * s) / (b * b);
        }
    }
    return t;
}

double log_choose(int n, int y) {
    return std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
}

double bb_normaliser(int n, double r) {
    double acc = 0.0;
    for (int k = 1; k < n; ++k) {
        acc += std::log1p(k * r);
    }
    return acc;
}

void check_overdispersion(double d) {
    if (!(d >= 0.0 && d < 1.0)) {
        throw ParameterError("overdispersion d must lie in [0, 1)");
    }
}

}  // namespace

PointwiseTerm betabinom_eta_term(int y, int n, double eta, double d) {
    if (n < 0 || y < 0 || y > n) {
        throw ParameterError("betabinom_eta_term: need 0 <= y <= n");
    }
    check_overdispersion(d);
    const double r = d / (1.0 - d);
    PointwiseTerm t = bb_products(y, n, eta, r, true);
    t.value += log_choose(n, y) - bb_normaliser(n, r);
    return t;
}

PointwiseTerm gaussian_term(double observed, double variance, double eta) {
    const double e = observed - eta;
    return {-0.5 * (kLog2Pi + std::log(variance)) - 0.5 * e * e / variance, e / variance,
            -1.0 / variance};
}

// ---------------------------------------------------------------------------
// Model specification

int LatentModelSpec::fixed_dim() const {
    int n = 0;
    for (const auto& b : fixed) {
        n += b.size;
    }
    return n;
}

int LatentModelSpec::fixed_offset(std::size_t block) const {
    int n = 0;
    for (std::size_t i = 0; i < block && i < fixed.size(); ++i) {
        n += fixed[i].size;
    }
    return n;
}

void LatentModelSpec::check() const {
    for (const auto& b : fixed) {
        if (b.size < 0 || !(b.prior_precision > 0.0)) {
            throw ParameterError("fixed-effect block '" + b.name +
                                 "' needs a non-negative size and positive precision");
        }
    }
    if (iid_size < 0) {
        throw ParameterError("iid block size must be non-negative");
    }
    if (design.cols() != dim()) {
        throw ParameterError("design has " + std::to_string(design.cols()) +
                             " columns, latent dimension is " + std::to_string(dim()));
    }
    if (offset.size() != 0 && offset.size() != design.rows()) {
        throw ParameterError("offset length does not match the number of observations");
    }
    if (dim() == 0) {
        throw ParameterError("latent model has no components");
    }
}

namespace {

void check_hyper(const LatentModelSpec& spec, const Hyper& h) {
    if (spec.bym2) {
        if (!(h.sigma > 0.0) || !std::isfinite(h.sigma)) {
            throw ParameterError("BYM2 sigma must be positive and finite");
        }
        if (!(h.phi >= 0.0 && h.phi < 1.0)) {
            throw ParameterError("BYM2 phi must lie in [0, 1)");
        }
    }
    if (spec.iid_size > 0 && (!(h.iid_sigma > 0.0) || !std::isfinite(h.iid_sigma))) {
        throw ParameterError("IID sigma must be positive and finite");
    }
    if (spec.likelihood == Likelihood::beta_binomial) {
        check_overdispersion(h.overdispersion);
    }
}

using Triplets = std::vector<Eigen::Triplet<double>>;

void prior_triplets(const LatentModelSpec& spec, const Hyper& h, Triplets& t) {
    int pos = 0;
    for (const auto& b : spec.fixed) {
        for (int j = 0; j < b.size; ++j) {
            t.emplace_back(pos, pos, b.prior_precision);
            ++pos;
        }
    }
    if (spec.bym2) {
        const ScaledIcar& icar = *spec.bym2;
        const int b0 = spec.bym2_offset();
        const int s0 = spec.spatial_offset();
        const double s2 = h.sigma * h.sigma;
        const double a = 1.0 / (s2 * (1.0 - h.phi));
        const double c = -std::sqrt(h.phi) / (h.sigma * (1.0 - h.phi));
        const double e = h.phi / (1.0 - h.phi);
        for (int i = 0; i < spec.n_nodes(); ++i) {
            t.emplace_back(b0 + i, b0 + i, a);
            const int si = icar.spatial_index[i];
            if (si >= 0) {
                t.emplace_back(b0 + i, s0 + si, c);
                t.emplace_back(s0 + si, b0 + i, c);
                t.emplace_back(s0 + si, s0 + si, e);
            }
        }
        for (int k = 0; k < icar.structure.outerSize(); ++k) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(icar.structure, k); it; ++it) {
                t.emplace_back(s0 + static_cast<int>(it.row()), s0 + static_cast<int>(it.col()),
                               it.value());
            }
        }
    }
    if (spec.iid_size > 0) {
        const int o = spec.iid_offset();
        const double p = 1.0 / (h.iid_sigma * h.iid_sigma);
        for (int j = 0; j < spec.iid_size; ++j) {
            t.emplace_back(o + j, o + j, p);
        }
    }
}

}  // namespace

Eigen::SparseMatrix<double> LatentModelSpec::prior_precision(const Hyper& h) const {
    check_hyper(*this, h);
    Triplets t;
    prior_triplets(*this, h, t);
    Eigen::SparseMatrix<double> q(dim(), dim());
    q.setFromTriplets(t.begin(), t.end());
    return q;
}

double LatentModelSpec::log_prior(const Eigen::VectorXd& x, const Hyper& h) const {
    check_hyper(*this, h);
    double lp = 0.0;
    int pos = 0;
    for (const auto& b : fixed) {
        for (int j = 0; j < b.size; ++j) {
            lp += 0.5 * (std::log(b.prior_precision) - kLog2Pi) -
                  0.5 * b.prior_precision * x[pos] * x[pos];
            ++pos;
        }
    }
    if (bym2) {
        const ScaledIcar& icar = *bym2;
        const int b0 = bym2_offset();
        const int s0 = spatial_offset();
        const double v = h.sigma * h.sigma * (1.0 - h.phi);
        const double scale = h.sigma * std::sqrt(h.phi);
        for (int i = 0; i < n_nodes(); ++i) {
            const int si = icar.spatial_index[i];
            const double mean = si >= 0 ? scale * x[s0 + si] : 0.0;
            const double r = x[b0 + i] - mean;
            lp += -0.5 * (kLog2Pi + std::log(v)) - 0.5 * r * r / v;
        }
        if (icar.n_spatial > 0) {
            const Eigen::VectorXd s = x.segment(s0, icar.n_spatial);
            const double quad = s.dot(icar.structure * s);
            lp += 0.5 * icar.log_pseudo_determinant -
                  0.5 * (icar.n_spatial - icar.rank_deficiency()) * kLog2Pi - 0.5 * quad;
        }
    }
    if (iid_size > 0) {
        const int o = iid_offset();
        const double v = h.iid_sigma * h.iid_sigma;
        for (int j = 0; j < iid_size; ++j) {
            lp += -0.5 * (kLog2Pi + std::log(v)) - 0.5 * x[o + j] * x[o + j] / v;
        }
    }
    return lp;
}

// ---------------------------------------------------------------------------
// Axes

Axis sigma_axis(const PcPriorSigma& prior, int points, std::string name) {
    if (points < 1) {
        throw ParameterError("sigma axis needs at least one point");
    }
    Axis ax;
    ax.name = std::move(name);
    const double lo = std::log(prior.quantile(0.001));
    const double hi = std::log(prior.quantile(0.999));
    for (int j = 0; j < points; ++j) {
        const double ls = points == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * j / (points - 1);
        const double s = std::exp(ls);
        ax.values.push_back(s);
        // Density of log(sigma) times the uniform log-scale spacing.
        ax.log_weight.push_back(prior.log_density(s) + ls);
    }
    return ax;
}

Axis phi_axis(const PcPriorPhi& prior, int points) {
    if (points < 1) {
        throw ParameterError("phi axis needs at least one point");
    }
    Axis ax;
    ax.name = "phi";
    for (int j = 0; j < points; ++j) {
        const double phi = (j + 0.5) / points;
        ax.values.push_back(phi);
        ax.log_weight.push_back(prior.log_density(phi));
    }
    return ax;
}

Axis overdispersion_axis(int points, double lo, double hi) {
    if (points < 1 || !(lo > 0.0) || !(hi < 1.0) || !(lo <= hi)) {
        throw ParameterError("overdispersion axis needs points >= 1 and 0 < lo <= hi < 1");
    }
    constexpr double kPrecision = 0.4;
    Axis ax;
    ax.name = "d";
    for (int j = 0; j < points; ++j) {
        const double ld =
            points == 1 ? 0.5 * (std::log(lo) + std::log(hi))
                        : std::log(lo) + (std::log(hi) - std::log(lo)) * j / (points - 1);
        const double d = std::exp(ld);
        const double z = logit(d);
        // logit(d) ~ N(0, 1/0.4), expressed as a density in log(d).
        const double log_density =
            0.5 * (std::log(kPrecision) - kLog2Pi) - 0.5 * kPrecision * z * z - std::log1p(-d);
        ax.values.push_back(d);
        ax.log_weight.push_back(log_density);
    }
    return ax;
}

Axis fixed_axis(std::string name, double value) {
    return Axis{std::move(name), {value}, {0.0}};
}

// ---------------------------------------------------------------------------
// Engine

namespace {

struct Problem {
    const LatentModelSpec& spec;
    const ObservationData& data;
    Eigen::SparseMatrix<double> A;   // n_obs x dim
    Eigen::SparseMatrix<double> At;  // dim x n_obs
    std::vector<std::vector<int>> constraint_index;
    std::vector<char> component_has_data;
    Eigen::MatrixXd Ct;  // dim x K
    double log_cct = 0.0;
    std::vector<double> log_choose_terms;
    int max_trials = 0;

    Problem(const LatentModelSpec& s, const ObservationData& d) : spec(s), data(d) {
        spec.check();
        A = spec.design;
        A.makeCompressed();
        At = A.transpose();
        const int n_obs = spec.n_obs();
        if (spec.likelihood == Likelihood::gaussian_known_variance) {
            const auto* g = std::get_if<GaussianData>(&data);
            if (!g) {
                throw ParameterError("gaussian likelihood needs Gaussian observations");
            }
            if (g->value.size() != n_obs || g->variance.size() != n_obs) {
                throw ParameterError("observation count does not match the design");
            }
            for (int i = 0; i < n_obs; ++i) {
                if (!std::isfinite(g->value[i]) || !(g->variance[i] > 0.0)) {
                    throw ParameterError("Gaussian observations need finite values and V > 0");
                }
            }
        } else {
            const auto* b = std::get_if<BinomialData>(&data);
            if (!b) {
                throw ParameterError("beta-binomial likelihood needs count observations");
            }
            if (static_cast<int>(b->successes.size()) != n_obs ||
                static_cast<int>(b->trials.size()) != n_obs) {
                throw ParameterError("observation count does not match the design");
            }
            log_choose_terms.resize(n_obs);
            for (int i = 0; i < n_obs; ++i) {
                const int y = b->successes[i];
                const int n = b->trials[i];
                if (n < 0 || y < 0 || y > n) {
                    throw ParameterError("counts need 0 <= Y <= n");
                }
                log_choose_terms[i] = log_choose(n, y);
                max_trials = std::max(max_trials, n);
            }
        }
        const int dim = spec.dim();
        std::vector<char> touched(dim, 0);
        for (int k = 0; k < A.outerSize(); ++k) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it) {
                if (it.value() != 0.0) {
                    touched[it.col()] = 1;
                }
            }
        }
        if (spec.bym2) {
            const ScaledIcar& icar = *spec.bym2;
            std::vector<int> node_of(icar.n_spatial, -1);
            for (int i = 0; i < spec.n_nodes(); ++i) {
                if (icar.spatial_index[i] >= 0) {
                    node_of[icar.spatial_index[i]] = i;
                }
            }
            const int K = icar.rank_deficiency();
            Ct = Eigen::MatrixXd::Zero(dim, K);
            for (int k = 0; k < K; ++k) {
                std::vector<int> idx;
                bool has = false;
                for (int si : icar.spatial_components[k]) {
                    idx.push_back(spec.spatial_offset() + si);
                    Ct(spec.spatial_offset() + si, k) = 1.0;
                    has = has || touched[spec.bym2_offset() + node_of[si]] ||
                          touched[spec.spatial_offset() + si];
                }
                log_cct += std::log(static_cast<double>(idx.size()));
                constraint_index.push_back(std::move(idx));
                component_has_data.push_back(has ? 1 : 0);
            }
        } else {
            Ct = Eigen::MatrixXd::Zero(dim, 0);
        }
    }

    int K() const { return static_cast<int>(constraint_index.size()); }

    Eigen::VectorXd apply_c(const Eigen::VectorXd& x) const {
        Eigen::VectorXd out(K());
        for (int k = 0; k < K(); ++k) {
            double acc = 0.0;
            for (int j : constraint_index[k]) {
                acc += x[j];
            }
            out[k] = acc;
        }
        return out;
    }

    void project(Eigen::VectorXd& x) const {
        for (const auto& idx : constraint_index) {
            double mean = 0.0;
            for (int j : idx) {
                mean += x[j];
            }
            mean /= static_cast<double>(idx.size());
            for (int j : idx) {
                x[j] -= mean;
            }
        }
    }

    /// Prior precision plus an exact-on-the-plane regulariser along constraint directions.
    Eigen::SparseMatrix<double> regularised_precision(const Hyper& h) const {
        check_hyper(spec, h);
        Triplets t;
        prior_triplets(spec, h, t);
        for (int k = 0; k < K(); ++k) {
            const auto& idx = constraint_index[k];
            const bool dense = static_cast<int>(idx.size()) <= spec.dense_constraint_max ||
                               !component_has_data[k] || h.phi == 0.0;
            if (!dense) {
                continue;
            }
            const double v = 1.0 / static_cast<double>(idx.size());
            for (int a : idx) {
                for (int b : idx) {
                    t.emplace_back(a, b, v);
                }
            }
        }
        Eigen::SparseMatrix<double> q(spec.dim(), spec.dim());
        q.setFromTriplets(t.begin(), t.end());
        return q;
    }

    Eigen::VectorXd eta(const Eigen::VectorXd& x) const {
        Eigen::VectorXd e = A * x;
        if (spec.offset.size() != 0) {
            e += spec.offset;
        }
        return e;
    }
};

struct LikelihoodEval {
    double value = 0.0;
    Eigen::VectorXd gradient;   // d/d eta
    Eigen::VectorXd curvature;  // -d2/d eta2
    bool concave = true;        // all curvatures non-negative

    Eigen::VectorXd clamped() const { return curvature.cwiseMax(0.0); }
};

class LikelihoodFn {
public:
    LikelihoodFn(const Problem& pb, const Hyper& h) : pb_(pb) {
        if (pb.spec.likelihood == Likelihood::beta_binomial) {
            r_ = h.overdispersion / (1.0 - h.overdispersion);
            normaliser_.resize(pb.max_trials + 1);
            for (int n = 0; n <= pb.max_trials; ++n) {
                normaliser_[n] = bb_normaliser(n, r_);
            }
        }
    }

    LikelihoodEval operator()(const Eigen::VectorXd& eta, bool derivs) const {
        LikelihoodEval ev;
        const int n_obs = static_cast<int>(eta.size());
        if (derivs) {
            ev.gradient.resize(n_obs);
            ev.curvature.resize(n_obs);
        }
        if (const auto* g = std::get_if<GaussianData>(&pb_.data)) {
            for (int i = 0; i < n_obs; ++i) {
                const PointwiseTerm t = gaussian_term(g->value[i], g->variance[i], eta[i]);
                ev.value += t.value;
                if (derivs) {
                    ev.gradient[i] = t.gradient;
                    ev.curvature[i] = -t.hessian;
                }
            }
            return ev;
        }
        const auto& b = std::get<BinomialData>(pb_.data);
        for (int i = 0; i < n_obs; ++i) {
            const int n = b.trials[i];
            const PointwiseTerm t = bb_products(b.successes[i], n, eta[i], r_, derivs);
            ev.value += t.value + pb_.log_choose_terms[i] - normaliser_[n];
            if (derivs) {
                ev.gradient[i] = t.gradient;
                ev.curvature[i] = -t.hessian;
                ev.concave = ev.concave && t.hessian <= 0.0;
            }
        }
        return ev;
    }

private:
    const Problem& pb_;
    double r_ = 0.0;
    std::vector<double> normaliser_;
};

Eigen::SparseMatrix<double> posterior_precision(const Problem& pb,
                                                const Eigen::SparseMatrix<double>& q,
                                                const Eigen::VectorXd& w) {
    Eigen::SparseMatrix<double> aw = pb.At * w.asDiagonal();
    Eigen::SparseMatrix<double> h = q + aw * pb.A;
    h.makeCompressed();
    return h;
}

/// Factorisation of a posterior precision with the pieces needed for constrained solves.
struct Factor {
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    Eigen::MatrixXd V;  // H^-1 C^T
    Eigen::LLT<Eigen::MatrixXd> S;
    double log_det = 0.0;
    double log_det_s = 0.0;
    bool ok = false;

    bool compute(const Problem& pb, const Eigen::SparseMatrix<double>& h) {
        ldlt.compute(h);
        ok = false;
        if (ldlt.info() != Eigen::Success) {
            return false;
        }
        const Eigen::VectorXd d = ldlt.vectorD();
        if (!(d.minCoeff() > 0.0) || !d.allFinite()) {
            return false;
        }
        log_det = d.array().log().sum();
        if (pb.K() > 0) {
            V = ldlt.solve(pb.Ct);
            const Eigen::MatrixXd s = pb.Ct.transpose() * V;
            S.compute(s);
            if (S.info() != Eigen::Success) {
                return false;
            }
            log_det_s = 2.0 * S.matrixLLT().diagonal().array().log().sum();
        }
        ok = true;
        return true;
    }

    /// Solves H z = r restricted to the constraint plane.
    Eigen::VectorXd constrained_solve(const Problem& pb, const Eigen::VectorXd& r) const {
        Eigen::VectorXd z = ldlt.solve(r);
        if (pb.K() > 0) {
            z -= V * S.solve(pb.apply_c(z));
        }
        return z;
    }
};

/// Factorises Q + A' W A with the exact curvature when that is positive definite, otherwise
/// with negative curvatures clamped to zero.
bool factor_posterior(Factor& f, const Problem& pb, const Eigen::SparseMatrix<double>& q,
                      const LikelihoodEval& ev) {
    if (f.compute(pb, posterior_precision(pb, q, ev.curvature))) {
        return true;
    }
    return !ev.concave && f.compute(pb, posterior_precision(pb, q, ev.clamped()));
}

Eigen::SparseMatrix<double> hessian_at(const Problem& pb, const Eigen::SparseMatrix<double>& q,
                                       const LikelihoodEval& ev, Factor* probe = nullptr) {
    Factor local;
    Factor& f = probe ? *probe : local;
    Eigen::SparseMatrix<double> h = posterior_precision(pb, q, ev.curvature);
    if (ev.concave || f.compute(pb, h)) {
        return h;
    }
    return posterior_precision(pb, q, ev.clamped());
}

double max_abs(const Eigen::VectorXd& v) {
    return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

PointEvaluation evaluate(const Problem& pb, const Hyper& h, const Eigen::VectorXd* start,
                         const NewtonOptions& opts) {
    PointEvaluation out;
    const int dim = pb.spec.dim();
    const Eigen::SparseMatrix<double> q = pb.regularised_precision(h);
    const LikelihoodFn lik(pb, h);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
    if (start && start->size() == dim && start->allFinite()) {
        x = *start;
        pb.project(x);
    }
    auto objective = [&](const Eigen::VectorXd& v, LikelihoodEval* ev) {
        LikelihoodEval e = lik(pb.eta(v), ev != nullptr);
        const double f = e.value - 0.5 * v.dot(q * v);
        if (ev) {
            *ev = std::move(e);
        }
        return f;
    };

    LikelihoodEval ev;
    double f = objective(x, &ev);
    Factor factor;
    bool converged = false;
    for (int iter = 0;; ++iter) {
        Eigen::VectorXd g = pb.At * ev.gradient - q * x;
        pb.project(g);
        out.max_gradient = max_abs(g);
        out.iterations = iter;
        if (out.max_gradient < opts.gradient_tolerance) {
            converged = true;
            break;
        }
        if (iter >= opts.max_iterations) {
            out.message = "no convergence after " + std::to_string(iter) + " Newton iterations";
            break;
        }
        if (!factor_posterior(factor, pb, q, ev)) {
            out.message = "posterior precision is not positive definite";
            break;
        }
        const Eigen::VectorXd step = factor.constrained_solve(pb, g);
        // Newton decrement: predicted gain of a full step, below round-off of the objective.
        if (0.5 * g.dot(step) < 1e-15 * std::max(1.0, std::abs(f))) {
            converged = true;
            break;
        }
        double t = 1.0;
        bool accepted = false;
        for (int k = 0; k <= opts.max_halvings; ++k, t *= 0.5) {
            Eigen::VectorXd xn = x + t * step;
            LikelihoodEval evn;
            const double fn = objective(xn, &evn);
            if (std::isfinite(fn) && fn >= f) {
                x = std::move(xn);
                ev = std::move(evn);
                f = fn;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // Round-off floor: the gradient is as small as this precision scaling allows.
            if (out.max_gradient < std::sqrt(opts.gradient_tolerance)) {
                converged = true;
            } else {
                out.message = "step halving exhausted";
            }
            break;
        }
    }
    out.mode = x;
    if (!converged) {
        return out;
    }
    if (!factor_posterior(factor, pb, q, ev)) {
        out.message = "posterior precision at the mode is not positive definite";
        return out;
    }
    const int K = pb.K();
    const double log_approx = -0.5 * dim * kLog2Pi + 0.5 * factor.log_det + 0.5 * K * kLog2Pi +
                              0.5 * factor.log_det_s - 0.5 * pb.log_cct;
    out.log_mlik = ev.value + pb.spec.log_prior(x, h) - log_approx;
    out.ok = std::isfinite(out.log_mlik);
    if (!out.ok) {
        out.message = "non-finite marginal likelihood";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Grid layout and exploration

struct Layout {
    std::vector<Axis> axes;
    std::array<int, 4> slot{-1, -1, -1, -1};  // axis position of sigma, phi, d, iid
    std::vector<std::size_t> sizes;
    std::size_t total = 1;

    std::vector<int> multi(std::size_t linear) const {
        std::vector<int> m(axes.size());
        for (std::size_t a = axes.size(); a-- > 0;) {
            m[a] = static_cast<int>(linear % sizes[a]);
            linear /= sizes[a];
        }
        return m;
    }

    std::size_t linear(const std::vector<int>& m) const {
        std::size_t l = 0;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            l = l * sizes[a] + static_cast<std::size_t>(m[a]);
        }
        return l;
    }

    GridPoint point(std::size_t linear_index) const {
        const auto m = multi(linear_index);
        GridPoint p;
        double* fields[4] = {&p.hyper.sigma, &p.hyper.phi, &p.hyper.overdispersion,
                             &p.hyper.iid_sigma};
        for (int k = 0; k < 4; ++k) {
            if (slot[k] >= 0) {
                const int j = m[slot[k]];
                p.index[k] = j;
                *fields[k] = axes[slot[k]].values[j];
                p.log_prior += axes[slot[k]].log_weight[j];
            } else {
                p.index[k] = -1;
            }
        }
        return p;
    }

    std::vector<std::size_t> neighbours(std::size_t linear_index) const {
        std::vector<std::size_t> out;
        auto m = multi(linear_index);
        for (std::size_t a = 0; a < axes.size(); ++a) {
            for (int delta : {-1, 1}) {
                const int v = m[a] + delta;
                if (v < 0 || v >= static_cast<int>(sizes[a])) {
                    continue;
                }
                auto n = m;
                n[a] = v;
                out.push_back(linear(n));
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }
};

Layout make_layout(const LatentModelSpec& spec, const GridSpec& gs) {
    Layout lay;
    auto add = [&](const std::optional<Axis>& ax, int k, bool needed, const char* what) {
        if (!needed) {
            if (ax) {
                throw ParameterError(std::string("grid axis '") + what +
                                     "' given but the model has no such hyperparameter");
            }
            return;
        }
        if (!ax || ax->values.empty() || ax->values.size() != ax->log_weight.size()) {
            throw ParameterError(std::string("model needs a non-empty '") + what + "' grid axis");
        }
        lay.slot[k] = static_cast<int>(lay.axes.size());
        lay.axes.push_back(*ax);
        lay.sizes.push_back(ax->values.size());
        lay.total *= ax->values.size();
    };
    add(gs.sigma, 0, spec.bym2 != nullptr, "sigma");
    add(gs.phi, 1, spec.bym2 != nullptr, "phi");
    add(gs.overdispersion, 2, spec.likelihood == Likelihood::beta_binomial, "d");
    add(gs.iid_sigma, 3, spec.iid_size > 0, "iid_sigma");
    return lay;
}

std::string describe(const GridPoint& p) {
    std::ostringstream os;
    os << "grid point (";
    const char* names[4] = {"sigma", "phi", "d", "iid_sigma"};
    const double values[4] = {p.hyper.sigma, p.hyper.phi, p.hyper.overdispersion,
                              p.hyper.iid_sigma};
    bool first = true;
    for (int k = 0; k < 4; ++k) {
        if (p.index[k] >= 0) {
            os << (first ? "" : ", ") << names[k] << "=" << csv::format_number(values[k]);
            first = false;
        }
    }
    os << ")";
    return os.str();
}

HyperGrid explore(const Problem& pb, const GridSpec& gs, const NewtonOptions& opts,
                  bool fail_hard) {
    const Layout lay = make_layout(pb.spec, gs);
    std::vector<GridPoint> pts(lay.total);
    std::vector<char> done(lay.total, 0);

    auto run = [&](std::size_t idx, long from) {
        GridPoint p = lay.point(idx);
        const Eigen::VectorXd* start =
            from >= 0 && pts[from].ok ? &pts[static_cast<std::size_t>(from)].mode : nullptr;
        PointEvaluation e = evaluate(pb, p.hyper, start, opts);
        p.ok = e.ok;
        p.log_mlik = e.log_mlik;
        p.iterations = e.iterations;
        p.mode = std::move(e.mode);
        if (!e.ok && fail_hard) {
            throw NumericalError(describe(p) + ": " + e.message);
        }
        if (!e.ok) {
            p.log_mlik = kNaN;
            p.mode.resize(0);
        }
        pts[idx] = std::move(p);
        done[idx] = 1;
        return e.message;
    };
    std::vector<std::string> messages(lay.total);
    auto run_batch = [&](const std::vector<std::pair<std::size_t, long>>& batch) {
        parallel_for(batch.size(), [&](std::size_t b) {
            messages[batch[b].first] = run(batch[b].first, batch[b].second);
        });
    };
    auto log_post = [&](std::size_t i) { return pts[i].log_mlik + pts[i].log_prior; };

    if (!std::isfinite(gs.prune_log_drop)) {
        // Exhaustive: rows along the first axis, warm-started sequentially within a row.
        const std::size_t rows = lay.sizes.empty() ? 1 : lay.sizes[0];
        const std::size_t per_row = lay.total / rows;
        parallel_for(rows, [&](std::size_t r) {
            long prev = -1;
            for (std::size_t j = 0; j < per_row; ++j) {
                const std::size_t idx = r * per_row + j;
                messages[idx] = run(idx, prev);
                if (pts[idx].ok) {
                    prev = static_cast<long>(idx);
                }
            }
        });
    } else {
        std::vector<int> centre(lay.axes.size());
        for (std::size_t a = 0; a < lay.axes.size(); ++a) {
            centre[a] = static_cast<int>(lay.sizes[a] / 2);
        }
        std::size_t current = lay.linear(centre);
        run_batch({{current, -1}});
        // Hill climb to a local maximum.
        while (pts[current].ok) {
            std::vector<std::pair<std::size_t, long>> batch;
            for (std::size_t n : lay.neighbours(current)) {
                if (!done[n]) {
                    batch.emplace_back(n, static_cast<long>(current));
                }
            }
            run_batch(batch);
            std::size_t best = current;
            for (std::size_t n : lay.neighbours(current)) {
                if (pts[n].ok && log_post(n) > log_post(best)) {
                    best = n;
                }
            }
            if (best == current) {
                break;
            }
            current = best;
        }
        // Flood fill over points within prune_log_drop of the running maximum.
        std::vector<char> expanded(lay.total, 0);
        for (;;) {
            double max_lp = -kInf;
            for (std::size_t i = 0; i < lay.total; ++i) {
                if (done[i] && pts[i].ok) {
                    max_lp = std::max(max_lp, log_post(i));
                }
            }
            std::set<std::size_t> cand;
            for (std::size_t i = 0; i < lay.total; ++i) {
                if (!done[i] || !pts[i].ok || expanded[i] ||
                    log_post(i) < max_lp - gs.prune_log_drop) {
                    continue;
                }
                expanded[i] = 1;
                for (std::size_t n : lay.neighbours(i)) {
                    if (!done[n]) {
                        cand.insert(n);
                    }
                }
            }
            if (cand.empty()) {
                break;
            }
            std::vector<std::pair<std::size_t, long>> batch;
            for (std::size_t c : cand) {
                long from = -1;
                for (std::size_t n : lay.neighbours(c)) {
                    if (done[n] && pts[n].ok && (from < 0 || log_post(n) > log_post(from))) {
                        from = static_cast<long>(n);
                    }
                }
                batch.emplace_back(c, from);
            }
            run_batch(batch);
        }
    }

    HyperGrid grid;
    grid.axes = lay.axes;
    grid.full_size = lay.total;
    double max_lp = -kInf;
    for (std::size_t i = 0; i < lay.total; ++i) {
        if (!done[i]) {
            continue;
        }
        if (pts[i].ok) {
            max_lp = std::max(max_lp, log_post(i));
        } else {
            grid.warnings.push_back(describe(pts[i]) + " excluded: " + messages[i]);
        }
        grid.points.push_back(std::move(pts[i]));
    }
    if (!std::isfinite(max_lp)) {
        throw NumericalError("all hyperparameter grid points failed" +
                             (grid.warnings.empty() ? std::string()
                                                    : ": " + grid.warnings.front()));
    }
    double total = 0.0;
    for (auto& p : grid.points) {
        p.weight = p.ok ? std::exp(p.log_mlik + p.log_prior - max_lp) : 0.0;
        total += p.weight;
    }
    for (auto& p : grid.points) {
        p.weight /= total;
    }
    return grid;
}

}  // namespace

PointEvaluation evaluate_point(const LatentModelSpec& spec, const ObservationData& data,
                               const Hyper& h, const Eigen::VectorXd* start,
                               const NewtonOptions& opts) {
    const Problem pb(spec, data);
    return evaluate(pb, h, start, opts);
}

csv::Table HyperGrid::table() const {
    std::vector<std::string> header;
    for (const auto& a : axes) {
        header.push_back(a.name);
    }
    for (const char* c : {"log_prior", "log_mlik", "weight", "iterations", "ok"}) {
        header.emplace_back(c);
    }
    csv::Table t(header);
    for (const auto& p : points) {
        std::vector<std::string> row;
        const double values[4] = {p.hyper.sigma, p.hyper.phi, p.hyper.overdispersion,
                                  p.hyper.iid_sigma};
        for (int k = 0; k < 4; ++k) {
            if (p.index[k] >= 0) {
                row.push_back(csv::format_number(values[k]));
            }
        }
        row.push_back(csv::format_number(p.log_prior));
        row.push_back(csv::format_number(p.log_mlik));
        row.push_back(csv::format_number(p.weight));
        row.push_back(std::to_string(p.iterations));
        row.push_back(p.ok ? "true" : "false");
        t.add_row(std::move(row));
    }
    return t;
}

Eigen::MatrixXd ConditionalGaussian::constrained_covariance() const {
    const Eigen::MatrixXd dense(precision);
    const Eigen::MatrixXd sigma = dense.ldlt().solve(
        Eigen::MatrixXd::Identity(dense.rows(), dense.cols()));
    if (constraints.rows() == 0) {
        return sigma;
    }
    const Eigen::MatrixXd sc = sigma * constraints.transpose();
    const Eigen::MatrixXd s = constraints * sc;
    return sigma - sc * s.ldlt().solve(sc.transpose());
}

ConditionalGaussian LgmFit::conditional(std::size_t point) const {
    if (point >= grid.points.size() || !grid.points[point].ok) {
        throw ParameterError("grid point index out of range or failed");
    }
    const Problem pb(spec, data);
    const GridPoint& p = grid.points[point];
    const LikelihoodFn lik(pb, p.hyper);
    const LikelihoodEval ev = lik(pb.eta(p.mode), true);
    ConditionalGaussian cg;
    cg.mean = p.mode;
    cg.precision = hessian_at(pb, pb.regularised_precision(p.hyper), ev);
    cg.constraints = pb.Ct.transpose();
    return cg;
}

std::size_t LgmFit::map_point() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < grid.points.size(); ++i) {
        if (grid.points[i].weight > grid.points[best].weight) {
            best = i;
        }
    }
    return best;
}

LgmFit fit_gaussian_lgm(LatentModelSpec spec, GaussianData observations, const GridSpec& grid,
                        const NewtonOptions& opts) {
    if (spec.likelihood != Likelihood::gaussian_known_variance) {
        throw ParameterError("fit_gaussian_lgm needs the gaussian_known_variance likelihood");
    }
    LgmFit fit{std::move(spec), std::move(observations), {}};
    const Problem pb(fit.spec, fit.data);
    GridSpec exhaustive = grid;
    exhaustive.prune_log_drop = kInf;
    fit.grid = explore(pb, exhaustive, opts, true);
    return fit;
}

LgmFit fit_laplace_lgm(LatentModelSpec spec, BinomialData observations, const GridSpec& grid,
                       const NewtonOptions& opts) {
    if (spec.likelihood != Likelihood::beta_binomial) {
        throw ParameterError("fit_laplace_lgm needs the beta_binomial likelihood");
    }
    LgmFit fit{std::move(spec), std::move(observations), {}};
    const Problem pb(fit.spec, fit.data);
    fit.grid = explore(pb, grid, opts, false);
    return fit;
}

Eigen::MatrixXd PosteriorSamples::matrix() const {
    Eigen::MatrixXd m(latent.cols(), latent.rows() + 4);
    for (int j = 0; j < latent.cols(); ++j) {
        m.row(j).head(latent.rows()) = latent.col(j).transpose();
        m(j, latent.rows()) = hyper[j].sigma;
        m(j, latent.rows() + 1) = hyper[j].phi;
        m(j, latent.rows() + 2) = hyper[j].overdispersion;
        m(j, latent.rows() + 3) = hyper[j].iid_sigma;
    }
    return m;
}

PosteriorSamples sample_posterior(const LgmFit& fit, int n_draws, std::uint64_t seed) {
    if (n_draws <= 0) {
        throw ParameterError("n_draws must be positive");
    }
    const Problem pb(fit.spec, fit.data);
    const auto& points = fit.grid.points;
    std::vector<double> cumulative(points.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        acc += points[i].weight;
        cumulative[i] = acc;
    }
    if (!(acc > 0.0)) {
        throw ParameterError("fit has no positive-weight grid points");
    }
    const int dim = fit.spec.dim();
    PosteriorSamples out;
    out.seed = seed;
    out.latent.resize(dim, n_draws);
    out.hyper.resize(n_draws);
    out.grid_point.resize(n_draws);

    std::map<std::size_t, std::unique_ptr<Factor>> cache;
    Rng rng(seed);
    Eigen::VectorXd z(dim);
    for (int k = 0; k < n_draws; ++k) {
        const double u = uniform01(rng) * acc;
        std::size_t idx = static_cast<std::size_t>(
            std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        idx = std::min(idx, points.size() - 1);
        while (points[idx].weight <= 0.0 && idx > 0) {
            --idx;
        }
        auto& slot = cache[idx];
        if (!slot) {
            const GridPoint& p = points[idx];
            const LikelihoodFn lik(pb, p.hyper);
            const LikelihoodEval ev = lik(pb.eta(p.mode), true);
            slot = std::make_unique<Factor>();
            if (!factor_posterior(*slot, pb, pb.regularised_precision(p.hyper), ev)) {
                throw NumericalError("cannot factorise the posterior precision at " +
                                     describe(p));
            }
        }
        const Factor& f = *slot;
        for (int j = 0; j < dim; ++j) {
            z[j] = standard_normal(rng);
        }
        z.array() /= f.ldlt.vectorD().array().sqrt();
        Eigen::VectorXd x = f.ldlt.permutationPinv() * f.ldlt.matrixU().solve(z);
        if (pb.K() > 0) {
            x -= f.V * f.S.solve(pb.apply_c(x));
        }
        out.latent.col(k) = points[idx].mode + x;
        out.hyper[k] = points[idx].hyper;
        out.grid_point[k] = static_cast<int>(idx);
    }
    return out;
}

}  // namespace prevmap::lgm
