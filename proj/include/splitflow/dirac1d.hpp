// dirac1d.hpp — Exactly solvable model operators J(d/dx + A(x)) on a split
// circle: transfer matrices, Cauchy data spaces, boundary conditions, and the
// eigenvalue-tracking spectral-flow oracle.
//
// The circle has circumference c with cut points p < q; X = [p,q], Y = the
// complementary arc.  Solutions of (D - λ)ψ = 0 satisfy ψ' = -(A(x) + λJ)ψ,
// so transfer across a constant segment of length ℓ is exp(-ℓ(A + λJ)).
// Boundary traces live in fiber_p ⊕ fiber_q with J_Σ = J ⊕ (-J) and
// S_Σ = (-S_p) ⊕ S_q; stretching X by r is the linear flow e^{-r S_Σ} on
// Cauchy data (Y stretches by e^{+r S_Σ}).

#pragma once

#include "splitflow/hsymp.hpp"
#include "splitflow/pathindex.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <functional>
#include <limits>
#include <map>

namespace splitflow {

enum class Side { X, Y };

inline double flow_sign(Side s) { return s == Side::X ? -1.0 : +1.0; }

// ------------------------------ geometry ------------------------------------

struct ModelGeometry {
    double circumference = 2.0 * M_PI;
    double p = 0.0;
    double q = M_PI;
    double collar_width = 0.25;

    void validate() const {
        if (!(circumference > 0))
            throw std::invalid_argument("ModelGeometry: circumference must be positive");
        if (!(0 <= p && p < q && q < circumference))
            throw std::invalid_argument("ModelGeometry: need 0 <= p < q < circumference");
        if (!(collar_width > 0))
            throw std::invalid_argument("ModelGeometry: collar width must be positive");
        const double lenX = q - p;
        const double lenY = circumference - lenX;
        if (2 * collar_width >= lenX || 2 * collar_width >= lenY)
            throw std::invalid_argument("ModelGeometry: collars overlap inside an arc");
    }

    double arc_length(Side s) const {
        return s == Side::X ? q - p : circumference - (q - p);
    }
};

// ------------------------------ potential -----------------------------------
//
// Piecewise potential on the circle [0, c); a segment is constant or carries a
// smooth profile (transfer by embedded Runge-Kutta).  Keyframe fleets use
// constant segments only, which keeps every transfer matrix a product of
// exact exponentials.

struct PotentialSegment {
    double x0 = 0, x1 = 0;
    Matrix value;                           // constant value (or fallback sample)
    std::function<Matrix(double)> profile;  // optional smooth x-profile
    bool smooth() const { return static_cast<bool>(profile); }
};

class CirclePotential {
public:
    CirclePotential(double circumference, std::vector<PotentialSegment> segments)
        : c_(circumference), segs_(std::move(segments)) {
        if (segs_.empty()) throw std::invalid_argument("CirclePotential: no segments");
        double cursor = 0;
        for (const auto& s : segs_) {
            if (std::abs(s.x0 - cursor) > 1e-12 || !(s.x1 > s.x0))
                throw std::invalid_argument("CirclePotential: segments must tile [0, c)");
            cursor = s.x1;
        }
        if (std::abs(cursor - c_) > 1e-12)
            throw std::invalid_argument("CirclePotential: segments must end at the circumference");
    }

    static CirclePotential constant(double circumference, const Matrix& A) {
        PotentialSegment s;
        s.x0 = 0;
        s.x1 = circumference;
        s.value = A;
        return CirclePotential(circumference, {s});
    }

    double circumference() const { return c_; }
    const std::vector<PotentialSegment>& segments() const { return segs_; }

    Matrix at(double x) const {
        double xm = std::fmod(x, c_);
        if (xm < 0) xm += c_;
        for (const auto& s : segs_) {
            if (xm >= s.x0 - 1e-12 && xm < s.x1 - 1e-12)
                return s.smooth() ? s.profile(xm) : s.value;
        }
        const auto& last = segs_.back();
        return last.smooth() ? last.profile(xm) : last.value;
    }

private:
    double c_;
    std::vector<PotentialSegment> segs_;
};

// ------------------------- scaled matrix products ----------------------------
//
// Transfer matrices over stretched arcs have entries like e^{±r‖S‖}; we track
// a power-of-two scale so products never overflow.  Positive rescaling leaves
// determinant phases (and winding numbers) untouched.

struct ScaledMatrix {
    Matrix m;
    double log2scale = 0;

    void renormalize() {
        const double a = m.cwiseAbs().maxCoeff();
        if (a <= 0 || !std::isfinite(a)) return;
        const int e = static_cast<int>(std::floor(std::log2(a)));
        if (std::abs(e) >= 1) {
            m *= std::ldexp(1.0, -e);
            log2scale += e;
        }
    }
    Matrix unscaled() const { return std::ldexp(1.0, static_cast<int>(std::round(log2scale))) * m; }
};

namespace detail {

// exp for 2x2 complex matrices in closed form
inline Matrix exp2x2(const Matrix& M) {
    const cd s = 0.5 * (M(0, 0) + M(1, 1));
    Matrix N = M;
    N(0, 0) -= s;
    N(1, 1) -= s;
    const cd delta = N(0, 0) * N(0, 0) + N(0, 1) * N(1, 0);  // N^2 = delta Id
    const cd mu = std::sqrt(delta);
    cd ch, shm;
    if (std::abs(mu) < 1e-8) {
        ch = 1.0 + delta / 2.0;
        shm = 1.0 + delta / 6.0;
    } else {
        ch = std::cosh(mu);
        shm = std::sinh(mu) / mu;
    }
    Matrix E = ch * Matrix::Identity(2, 2) + shm * N;
    return std::exp(s) * E;
}

inline Matrix mat_exp(const Matrix& M) {
    if (M.rows() == 2) return exp2x2(M);
    return M.exp();
}

// exp(-len (A + λJ)) with norm-capped substeps
inline void apply_constant_factor(ScaledMatrix& acc, const Matrix& A, const Matrix& J,
                                  cd lambda, double len) {
    Matrix B = -(A + lambda * J);
    const double scale = B.cwiseAbs().maxCoeff() * static_cast<double>(B.rows());
    int steps = 1 + static_cast<int>(len * scale / 40.0);
    const double h = len / steps;
    Matrix E = mat_exp(Matrix(h * B));
    for (int k = 0; k < steps; ++k) {
        acc.m = E * acc.m;
        acc.renormalize();
    }
}

// Dormand-Prince 5(4) on Ψ' = -(A(x)+λJ)Ψ for smooth segments
inline void apply_smooth_factor(ScaledMatrix& acc, const PotentialSegment& seg,
                                const Matrix& J, cd lambda, double a, double b,
                                double tol = 1e-12) {
    auto rhs = [&](double x, const Matrix& Psi) -> Matrix {
        return -((seg.profile(x) + lambda * J) * Psi);
    };
    static const double c2 = 1. / 5, c3 = 3. / 10, c4 = 4. / 5, c5 = 8. / 9;
    double x = a;
    double h = (b - a) / 16.0;
    Matrix Psi = Matrix::Identity(J.rows(), J.cols());
    int guard = 0;
    while (x < b - 1e-15) {
        if (++guard > 200000)
            throw std::runtime_error("transfer: integrator tolerance breach");
        if (x + h > b) h = b - x;
        Matrix k1 = rhs(x, Psi);
        Matrix k2 = rhs(x + c2 * h, Matrix(Psi + h * (k1 / 5.)));
        Matrix k3 = rhs(x + c3 * h, Matrix(Psi + h * (3. / 40 * k1 + 9. / 40 * k2)));
        Matrix k4 = rhs(x + c4 * h, Matrix(Psi + h * (44. / 45 * k1 - 56. / 15 * k2 + 32. / 9 * k3)));
        Matrix k5 = rhs(x + c5 * h,
                        Matrix(Psi + h * (19372. / 6561 * k1 - 25360. / 2187 * k2 +
                                          64448. / 6561 * k3 - 212. / 729 * k4)));
        Matrix k6 = rhs(x + h, Matrix(Psi + h * (9017. / 3168 * k1 - 355. / 33 * k2 +
                                                 46732. / 5247 * k3 + 49. / 176 * k4 -
                                                 5103. / 18656 * k5)));
        Matrix y5 = Psi + h * (35. / 384 * k1 + 500. / 1113 * k3 + 125. / 192 * k4 -
                               2187. / 6784 * k5 + 11. / 84 * k6);
        Matrix k7 = rhs(x + h, y5);
        Matrix y4 = Psi + h * (5179. / 57600 * k1 + 7571. / 16695 * k3 + 393. / 640 * k4 -
                               92097. / 339200 * k5 + 187. / 2100 * k6 + 1. / 40 * k7);
        const double err = (y5 - y4).cwiseAbs().maxCoeff() / std::max(1.0, y5.cwiseAbs().maxCoeff());
        if (err <= tol) {
            Psi = y5;
            x += h;
        }
        const double f = std::clamp(0.9 * std::pow(tol / std::max(err, 1e-300), 0.2), 0.2, 5.0);
        h *= f;
    }
    acc.m = Psi * acc.m;
    acc.renormalize();
}

}  // namespace detail

// --------------------------- model Dirac operator ---------------------------

class ModelDiracOperator {
public:
    ModelDiracOperator(SpacePtr fiber, ModelGeometry geo, CirclePotential A,
                       int j_sigma_sign = +1, double tol = 1e-9)
        : fiber_(std::move(fiber)), geo_(geo), A_(std::move(A)), jsign_(j_sigma_sign) {
        geo_.validate();
        if (std::abs(A_.circumference() - geo_.circumference) > 1e-12)
            throw std::invalid_argument("ModelDiracOperator: potential/geometry length mismatch");
        if (jsign_ != 1 && jsign_ != -1)
            throw std::invalid_argument("ModelDiracOperator: j_sigma_sign must be ±1");
        const Matrix& J = fiber_->J();
        for (const auto& seg : A_.segments()) {
            auto check = [&](const Matrix& V, const char* what) {
                if (V.rows() != fiber_->dim() || V.cols() != fiber_->dim())
                    throw std::invalid_argument(std::string("ModelDiracOperator: ") + what +
                                                " has wrong dimension");
                const double scale = std::max(1.0, V.cwiseAbs().maxCoeff());
                if (!nearly_hermitian(V, tol * scale))
                    throw std::invalid_argument(std::string("ModelDiracOperator: ") + what +
                                                " not Hermitian");
                if ((V * J + J * V).cwiseAbs().maxCoeff() > tol * scale)
                    throw std::invalid_argument(std::string("ModelDiracOperator: ") + what +
                                                " does not anticommute with J");
            };
            if (seg.smooth()) {
                for (double u : {0.0, 0.25, 0.5, 0.75, 1.0})
                    check(seg.profile(seg.x0 + u * (seg.x1 - seg.x0) * (1 - 1e-9)),
                          "potential sample");
            } else {
                check(seg.value, "potential segment");
            }
        }
        Sp_ = A_.at(geo_.p);
        Sq_ = A_.at(geo_.q);
        // cylindrical: A constant on the (open) collar around each cut
        const double win = geo_.collar_width * (1.0 - 1e-9);
        for (int k = -4; k <= 4; ++k) {
            const double u = win * k / 4.0;
            if ((A_.at(geo_.p + u) - Sp_).cwiseAbs().maxCoeff() > tol)
                throw std::invalid_argument("ModelDiracOperator: potential not constant on the p collar");
            if ((A_.at(geo_.q + u) - Sq_).cwiseAbs().maxCoeff() > tol)
                throw std::invalid_argument("ModelDiracOperator: potential not constant on the q collar");
        }
        build_boundary();
    }

    const SpacePtr& fiber() const { return fiber_; }
    const ModelGeometry& geometry() const { return geo_; }
    const CirclePotential& potential() const { return A_; }
    const Matrix& tangential_p() const { return Sp_; }
    const Matrix& tangential_q() const { return Sq_; }
    int j_sigma_sign() const { return jsign_; }

    // boundary symplectic space fiber_p ⊕ fiber_q
    const SpacePtr& boundary_space() const { return bspace_; }
    const Matrix& S_sigma() const { return Ssigma_; }
    const RealVector& S_sigma_eigs() const { return bs_eigs_; }
    const Matrix& S_sigma_vecs() const { return bs_vecs_; }

    // transfer with ψ(b) = T ψ(a) along increasing x (b >= a, b - a <= c + tol)
    ScaledMatrix transfer_scaled(double a, double b, cd lambda = 0.0) const {
        const double c = geo_.circumference;
        if (b < a - 1e-12 || b - a > c + 1e-9)
            throw std::invalid_argument("transfer: need a <= b <= a + circumference");
        ScaledMatrix acc{Matrix::Identity(fiber_->dim(), fiber_->dim()), 0};
        double cursor = a;
        double remaining = b - a;
        const auto& segs = A_.segments();
        while (remaining > 1e-14) {
            double xm = std::fmod(cursor, c);
            if (xm < 0) xm += c;
            const PotentialSegment* seg = &segs.back();
            for (const auto& s : segs)
                if (xm >= s.x0 - 1e-12 && xm < s.x1 - 1e-12) { seg = &s; break; }
            const double step = std::min(seg->x1 - xm, remaining);
            if (seg->smooth())
                detail::apply_smooth_factor(acc, *seg, fiber_->J(), lambda, xm, xm + step);
            else
                detail::apply_constant_factor(acc, seg->value, fiber_->J(), lambda, step);
            cursor += step;
            remaining -= step;
        }
        return acc;
    }

    Matrix transfer(double a, double b, cd lambda = 0.0) const {
        return transfer_scaled(a, b, lambda).unscaled();
    }

    // analytic d/dλ of the transfer matrix (piecewise-constant potentials)
    Matrix transfer_dlambda(double a, double b, cd lambda = 0.0) const {
        const double c = geo_.circumference;
        const Matrix& J = fiber_->J();
        const Index d = fiber_->dim();
        Matrix T = Matrix::Identity(d, d);
        Matrix dT = Matrix::Zero(d, d);
        double cursor = a;
        double remaining = b - a;
        const auto& segs = A_.segments();
        while (remaining > 1e-14) {
            double xm = std::fmod(cursor, c);
            if (xm < 0) xm += c;
            const PotentialSegment* seg = &segs.back();
            for (const auto& s : segs)
                if (xm >= s.x0 - 1e-12 && xm < s.x1 - 1e-12) { seg = &s; break; }
            if (seg->smooth())
                throw std::invalid_argument("transfer_dlambda: smooth segments unsupported");
            const double step = std::min(seg->x1 - xm, remaining);
            // Fréchet derivative of the factor via the block-triangular exponential
            Matrix M = -step * (seg->value + lambda * J);
            Matrix E = -step * J;
            Matrix blk = Matrix::Zero(2 * d, 2 * d);
            blk.topLeftCorner(d, d) = M;
            blk.bottomRightCorner(d, d) = M;
            blk.topRightCorner(d, d) = E;
            Matrix eblk = blk.exp();
            Matrix F = eblk.topLeftCorner(d, d);
            Matrix dF = eblk.topRightCorner(d, d);
            dT = F * dT + dF * T;
            T = F * T;
            cursor += step;
            remaining -= step;
        }
        return dT;
    }

private:
    void build_boundary() {
        const Index d = fiber_->dim();
        const Matrix& J = fiber_->J();
        Matrix Js = Matrix::Zero(2 * d, 2 * d);
        Js.topLeftCorner(d, d) = static_cast<double>(jsign_) * J;
        Js.bottomRightCorner(d, d) = -static_cast<double>(jsign_) * J;
        bspace_ = make_space(std::move(Js));
        Ssigma_ = Matrix::Zero(2 * d, 2 * d);
        Ssigma_.topLeftCorner(d, d) = -Sp_;
        Ssigma_.bottomRightCorner(d, d) = Sq_;
        Eigen::SelfAdjointEigenSolver<Matrix> es(Ssigma_);
        bs_eigs_ = es.eigenvalues();
        bs_vecs_ = es.eigenvectors();
    }

    SpacePtr fiber_;
    ModelGeometry geo_;
    CirclePotential A_;
    int jsign_;
    Matrix Sp_, Sq_;
    SpacePtr bspace_;
    Matrix Ssigma_;
    RealVector bs_eigs_;
    Matrix bs_vecs_;
};

// ------------------------------ Cauchy data ---------------------------------

namespace detail {

// apply e^{sign * r * S_sigma} to a frame, renormalizing in capped steps
inline Matrix flow_frame(const ModelDiracOperator& op, Matrix frame, double sign_r) {
    const RealVector& ev = op.S_sigma_eigs();
    const Matrix& V = op.S_sigma_vecs();
    const double spread = std::max(1.0, ev.cwiseAbs().maxCoeff());
    double remaining = std::abs(sign_r);
    const double dir = sign_r >= 0 ? 1.0 : -1.0;
    Matrix C = V.adjoint() * frame;  // coordinates in the S_sigma eigenbasis
    while (remaining > 0) {
        const double step = std::min(remaining, 40.0 / spread);
        for (Index i = 0; i < ev.size(); ++i)
            C.row(i) *= std::exp(dir * step * ev(i));
        C = sub::orthonormalize(C);
        remaining -= step;
    }
    return sub::orthonormalize(V * C);
}

}  // namespace detail

// Boundary traces (ψ(p-end), ψ(q-end)) of solutions on the stretched arc.
// For λ = 0 the stretch acts as the exact flow e^{∓ r S_Σ} on the r = 0 space;
// for λ != 0 the collar factors e^{-r(S + λJ)} are appended per end.
inline Lagrangian cauchy_data(const ModelDiracOperator& op, Side side, double r = 0.0,
                              double lambda = 0.0) {
    const auto& geo = op.geometry();
    const Index d = op.fiber()->dim();
    Matrix G(2 * d, d);
    if (lambda == 0.0) {
        ScaledMatrix T = side == Side::X
                             ? op.transfer_scaled(geo.p, geo.q, 0.0)
                             : op.transfer_scaled(geo.q, geo.p + geo.circumference, 0.0);
        if (side == Side::X) {
            // span of {(v, T v)}; the scaled representative {(2^{-k} v, T_s v)}
            G.topRows(d) = Matrix::Identity(d, d) * std::ldexp(1.0, static_cast<int>(-std::round(T.log2scale)));
            G.bottomRows(d) = T.m;
        } else {
            G.topRows(d) = T.m;
            G.bottomRows(d) = Matrix::Identity(d, d) * std::ldexp(1.0, static_cast<int>(-std::round(T.log2scale)));
        }
        Matrix F = sub::orthonormalize(G);
        if (r > 0) F = detail::flow_frame(op, F, flow_sign(side) * r);
        return Lagrangian::from_span(op.boundary_space(), F, 1e-8);
    }
    // λ != 0: graph of the stretched transfer with collar factors
    ScaledMatrix acc{Matrix::Identity(d, d), 0};
    const cd lam(lambda, 0.0);
    if (side == Side::X) {
        detail::apply_constant_factor(acc, op.tangential_p(), op.fiber()->J(), lam, r);
        ScaledMatrix mid = op.transfer_scaled(geo.p, geo.q, lam);
        acc.m = mid.m * acc.m;
        acc.log2scale += mid.log2scale;
        acc.renormalize();
        detail::apply_constant_factor(acc, op.tangential_q(), op.fiber()->J(), lam, r);
        G.topRows(d) = Matrix::Identity(d, d) * std::ldexp(1.0, static_cast<int>(-std::round(acc.log2scale)));
        G.bottomRows(d) = acc.m;
    } else {
        detail::apply_constant_factor(acc, op.tangential_q(), op.fiber()->J(), lam, r);
        ScaledMatrix mid = op.transfer_scaled(geo.q, geo.p + geo.circumference, lam);
        acc.m = mid.m * acc.m;
        acc.log2scale += mid.log2scale;
        acc.renormalize();
        detail::apply_constant_factor(acc, op.tangential_p(), op.fiber()->J(), lam, r);
        G.topRows(d) = acc.m;
        G.bottomRows(d) = Matrix::Identity(d, d) * std::ldexp(1.0, static_cast<int>(-std::round(acc.log2scale)));
    }
    return Lagrangian::from_span(op.boundary_space(), sub::orthonormalize(G), 1e-8);
}

// dim ker D on the closed circle = dim(Λ_X ∩ Λ_Y)
inline int kernel_dim_closed(const ModelDiracOperator& op, double tol_rank = 1e-8) {
    return intersection_dim(cauchy_data(op, Side::X), cauchy_data(op, Side::Y), tol_rank);
}

// --------------------------- boundary conditions -----------------------------

struct BoundaryCondition {
    Lagrangian lagr;
    Side side = Side::X;
    double nu = 0;
    bool structured = false;  // of the form A ⊕ P^+_ν (X) or P^-_ν ⊕ A (Y)

    BoundaryCondition(Lagrangian L) : lagr(std::move(L)) {}
    BoundaryCondition(Lagrangian L, Side s, double nu_)
        : lagr(std::move(L)), side(s), nu(nu_), structured(true) {}
};

// A_int ⊕ P^+_ν(S_Σ) on the X side, P^-_ν(S_Σ) ⊕ A_int on the Y side.
// A_int is a Lagrangian of the reduced space H_ν.
inline BoundaryCondition make_aps_condition(const SpectralSplit& split,
                                            const Lagrangian& A_int, Side side) {
    Matrix ambientA = split.ambient_frame(A_int.frame());
    Lagrangian B = side == Side::X
                       ? direct_sum_lagrangian(split.space(), {ambientA, split.pplus()}, 1e-8)
                       : direct_sum_lagrangian(split.space(), {split.pminus(), ambientA}, 1e-8);
    return BoundaryCondition(std::move(B), side, split.nu());
}

// H_ν = 0 case: B is P^+_ν itself (X side) or P^-_ν (Y side).
inline BoundaryCondition make_aps_condition(const SpectralSplit& split, Side side) {
    if (split.hnu().cols() != 0)
        throw std::invalid_argument("make_aps_condition: interior part required when H_nu != 0");
    Lagrangian B(split.space(), side == Side::X ? split.pplus() : split.pminus());
    return BoundaryCondition(std::move(B), side, split.nu());
}

// Detect whether B contains P^+_ν (X side) / P^-_ν (Y side); if so B splits as
// A ⊕ P^±_ν with A = B ∩ H_ν, returned in reduced coordinates.
inline std::optional<Lagrangian> aps_interior_part(const BoundaryCondition& B,
                                                   const SpectralSplit& split,
                                                   double tol = 1e-8) {
    const Matrix& P = B.side == Side::X ? split.pplus() : split.pminus();
    if (!sub::contains(B.lagr.frame(), P, 1e-7)) return std::nullopt;
    Matrix meet = sub::intersection(B.lagr.frame(), split.hnu(), tol);
    if (meet.cols() != split.hnu().cols() / 2) return std::nullopt;
    return Lagrangian::from_span(split.reduced_space(), split.reduced_frame(meet), 1e-8);
}

// ------------------------- analytic zero counting ---------------------------
//
// Eigenvalues are located as real zeros of an analytic determinant
// h(λ) = det M(λ); the count inside a rectangle is the winding number of the
// determinant phase along its boundary (argument principle).  Matrices reach
// the counter pre-scaled by powers of two, which changes |h| but never its
// phase.

namespace detail {

struct DetPhase {
    double phase = 0;     // arg of det, in (-pi, pi]
    double smin = 0;      // smallest singular value (scaled)
    double smax = 0;
};

inline DetPhase det_phase(const Matrix& M) {
    DetPhase out;
    Eigen::PartialPivLU<Matrix> lu(M);
    cd ph(1, 0);
    double logmag = 0;
    for (Index i = 0; i < M.rows(); ++i) {
        cd u = lu.matrixLU()(i, i);
        double a = std::abs(u);
        if (a == 0) { out.phase = std::numeric_limits<double>::quiet_NaN(); break; }
        ph *= u / a;
        logmag += std::log(a);
    }
    int sign = lu.permutationP().determinant();
    if (sign < 0) ph = -ph;
    out.phase = std::arg(ph);
    Eigen::JacobiSVD<Matrix> svd(M);
    out.smin = svd.singularValues()(M.rows() - 1);
    out.smax = svd.singularValues()(0);
    (void)logmag;
    return out;
}

class AnalyticZeroFinder {
public:
    using MatrixFn = std::function<Matrix(cd)>;

    explicit AnalyticZeroFinder(MatrixFn fn, double resolution = 1e-9)
        : fn_(std::move(fn)), resolution_(resolution) {}

    struct Root {
        double lambda;
        int multiplicity;
    };

    // winding number of det along the rectangle [lo,hi] x [-delta, delta]
    int count_in(double lo, double hi, double delta) const {
        std::vector<cd> corners = {cd(lo, -delta), cd(hi, -delta), cd(hi, delta),
                                   cd(lo, delta), cd(lo, -delta)};
        double total = 0;
        for (int e = 0; e < 4; ++e)
            total += edge_phase(corners[e], corners[e + 1], 0);
        const double w = total / (2 * M_PI);
        const int wi = static_cast<int>(std::lround(w));
        if (std::abs(w - wi) > 0.25)
            throw std::runtime_error("zero counting: winding not integral");
        return wi;
    }

    // all real zeros with multiplicities in [lo, hi] (edges nudged zero-free)
    std::vector<Root> find(double lo, double hi) const {
        double a = clear_vertical(lo, -1);
        double b = clear_vertical(hi, +1);
        std::vector<Root> roots;
        subdivide(a, b, count_in(a, b, height(b - a)), roots, 0);
        std::sort(roots.begin(), roots.end(),
                  [](const Root& x, const Root& y) { return x.lambda < y.lambda; });
        return roots;
    }

    // warm restart from previous roots; radius bounds the per-step movement
    std::vector<Root> find_warm(double lo, double hi, const std::vector<Root>& hints,
                                double radius) const {
        // merge overlapping hint brackets
        std::vector<std::pair<double, double>> brackets;
        for (const auto& h : hints) {
            double a = h.lambda - 2 * radius, b = h.lambda + 2 * radius;
            if (!brackets.empty() && a <= brackets.back().second)
                brackets.back().second = b;
            else
                brackets.emplace_back(a, b);
        }
        std::vector<Root> roots;
        int total = 0;
        try {
            for (auto& [a, b] : brackets) {
                a = std::max(a, lo);
                b = std::min(b, hi);
                if (b - a < 4 * resolution_) continue;
                a = clear_vertical(a, -1);
                b = clear_vertical(b, +1);
                int c = count_in(a, b, height(b - a));
                subdivide(a, b, c, roots, 0);
                total += c;
            }
            double ga = clear_vertical(lo, -1), gb = clear_vertical(hi, +1);
            if (count_in(ga, gb, height(gb - ga)) != total)
                return find(lo, hi);  // births/deaths: cold restart
        } catch (const std::runtime_error&) {
            return find(lo, hi);
        }
        std::sort(roots.begin(), roots.end(),
                  [](const Root& x, const Root& y) { return x.lambda < y.lambda; });
        return roots;
    }

    int kernel_dim_at(double lambda, double rel_tol = 1e-7) const {
        Matrix M = fn_(cd(lambda, 0));
        Eigen::JacobiSVD<Matrix> svd(M);
        const auto& sv = svd.singularValues();
        int k = 0;
        for (Index i = 0; i < sv.size(); ++i)
            if (sv(i) <= rel_tol * std::max(1e-300, sv(0))) ++k;
        return k;
    }

private:
    // low contours: zeros sit on the real axis, so a short rectangle keeps the
    // phase variation concentrated and trackable
    static double height(double width) { return std::clamp(0.25 * width, 1e-7, 0.1); }

    // nudge a vertical line (real part) until det is comfortably nonzero on it
    double clear_vertical(double x, int dir) const {
        double xx = x;
        for (int attempt = 0; attempt < 40; ++attempt) {
            bool ok = true;
            for (double y : {0.0, 1e-5, -1e-5, 1e-3, -1e-3}) {
                DetPhase d = det_phase(fn_(cd(xx, y)));
                if (!std::isfinite(d.phase) || d.smin <= 1e-12 * std::max(1.0, d.smax)) {
                    ok = false;
                    break;
                }
            }
            if (ok) return xx;
            xx += dir * std::max(resolution_, std::abs(xx) * 1e-12) * (1 << std::min(attempt, 20));
        }
        throw std::runtime_error("zero counting: could not clear a contour line");
    }

    // adaptive phase tracking along one straight edge; a segment is accepted
    // only when its half-splits agree with it, which defeats 2π aliasing
    double edge_phase(cd z0, cd z1, int depth) const {
        DetPhase d0 = det_phase(fn_(z0));
        DetPhase d1 = det_phase(fn_(z1));
        return edge_phase_rec(z0, d0, z1, d1, depth);
    }

    double edge_phase_rec(cd z0, const DetPhase& d0, cd z1, const DetPhase& d1,
                          int depth) const {
        if (depth > 48)
            throw std::runtime_error("zero counting: phase refinement failed "
                                     "(root isolation below resolution)");
        cd zm = 0.5 * (z0 + z1);
        DetPhase dm = det_phase(fn_(zm));
        if (!std::isfinite(dm.phase) || dm.smin <= 1e-13 * std::max(1.0, dm.smax))
            throw std::runtime_error("zero counting: contour hits a zero");
        const double dp = std::remainder(d1.phase - d0.phase, 2 * M_PI);
        const double dpl = std::remainder(dm.phase - d0.phase, 2 * M_PI);
        const double dpr = std::remainder(d1.phase - dm.phase, 2 * M_PI);
        if (depth >= 3 && std::abs(dpl) < 1.2 && std::abs(dpr) < 1.2 &&
            std::abs(dpl + dpr - dp) < 1e-9)
            return dpl + dpr;
        return edge_phase_rec(z0, d0, zm, dm, depth + 1) +
               edge_phase_rec(zm, dm, z1, d1, depth + 1);
    }

    void subdivide(double a, double b, int count, std::vector<Root>& out, int depth) const {
        if (count == 0) return;
        if (b - a <= resolution_ || depth > 60) {
            out.push_back({0.5 * (a + b), count});
            return;
        }
        double mid = clear_vertical(0.5 * (a + b), +1);
        if (mid >= b || mid <= a) mid = clear_vertical(0.5 * (a + b), -1);
        if (mid >= b || mid <= a) {
            out.push_back({0.5 * (a + b), count});
            return;
        }
        const int left = count_in(a, mid, height(mid - a));
        subdivide(a, mid, left, out, depth + 1);
        subdivide(mid, b, count - left, out, depth + 1);
    }

    MatrixFn fn_;
    double resolution_;
};

}  // namespace detail

// ------------------------------ eigenvalues ---------------------------------

struct EigenvalueList {
    std::vector<std::pair<double, int>> lines;  // (λ, multiplicity), ascending

    std::vector<double> expanded() const {
        std::vector<double> v;
        for (auto& [lam, m] : lines)
            for (int k = 0; k < m; ++k) v.push_back(lam);
        return v;
    }
};

namespace detail {

// det([Λ_X frame | Λ_Y frame])(λ) = det(Id - T_X T_Y); zeros are the closed
// eigenvalues, with multiplicity dim(Λ_X ∩ Λ_Y).
inline AnalyticZeroFinder::MatrixFn closed_det_fn(const ModelDiracOperator& op, double r = 0.0) {
    return [&op, r](cd lambda) -> Matrix {
        const auto& geo = op.geometry();
        const Index d = op.fiber()->dim();
        ScaledMatrix Tx = op.transfer_scaled(geo.p, geo.q, lambda);
        ScaledMatrix Ty = op.transfer_scaled(geo.q, geo.p + geo.circumference, lambda);
        if (r > 0) {
            ScaledMatrix cp{Matrix::Identity(d, d), 0}, cq{Matrix::Identity(d, d), 0};
            apply_constant_factor(cp, op.tangential_p(), op.fiber()->J(), lambda, 2 * r);
            apply_constant_factor(cq, op.tangential_q(), op.fiber()->J(), lambda, 2 * r);
            Matrix txm = cq.m * Tx.m;
            Matrix tym = cp.m * Ty.m;
            Tx.m = txm; Tx.log2scale += cq.log2scale; Tx.renormalize();
            Ty.m = tym; Ty.log2scale += cp.log2scale; Ty.renormalize();
        }
        Matrix M(2 * d, 2 * d);
        M.topLeftCorner(d, d) = Matrix::Identity(d, d) *
                                std::ldexp(1.0, static_cast<int>(-std::round(Tx.log2scale)));
        M.bottomLeftCorner(d, d) = Tx.m;
        M.topRightCorner(d, d) = Ty.m;
        M.bottomRightCorner(d, d) = Matrix::Identity(d, d) *
                                    std::ldexp(1.0, static_cast<int>(-std::round(Ty.log2scale)));
        return M;
    };
}

// det([Λ_side(λ) frame | B frame]); zeros are the eigenvalues of (D|side, B).
inline AnalyticZeroFinder::MatrixFn boundary_det_fn(const ModelDiracOperator& op, Side side,
                                                    Matrix b_frame, double r = 0.0) {
    return [&op, side, b_frame, r](cd lambda) -> Matrix {
        const auto& geo = op.geometry();
        const Index d = op.fiber()->dim();
        ScaledMatrix acc{Matrix::Identity(d, d), 0};
        if (side == Side::X) {
            apply_constant_factor(acc, op.tangential_p(), op.fiber()->J(), lambda, r);
            ScaledMatrix mid = op.transfer_scaled(geo.p, geo.q, lambda);
            Matrix m = mid.m * acc.m;
            acc.m = m; acc.log2scale += mid.log2scale; acc.renormalize();
            apply_constant_factor(acc, op.tangential_q(), op.fiber()->J(), lambda, r);
        } else {
            apply_constant_factor(acc, op.tangential_q(), op.fiber()->J(), lambda, r);
            ScaledMatrix mid = op.transfer_scaled(geo.q, geo.p + geo.circumference, lambda);
            Matrix m = mid.m * acc.m;
            acc.m = m; acc.log2scale += mid.log2scale; acc.renormalize();
            apply_constant_factor(acc, op.tangential_p(), op.fiber()->J(), lambda, r);
        }
        Matrix M(2 * d, 2 * d);
        const Matrix scaledId =
            Matrix::Identity(d, d) * std::ldexp(1.0, static_cast<int>(-std::round(acc.log2scale)));
        if (side == Side::X) {
            M.topLeftCorner(d, d) = scaledId;
            M.bottomLeftCorner(d, d) = acc.m;
        } else {
            M.topLeftCorner(d, d) = acc.m;
            M.bottomLeftCorner(d, d) = scaledId;
        }
        M.rightCols(d) = b_frame;
        return M;
    };
}

inline EigenvalueList roots_to_list(const std::vector<AnalyticZeroFinder::Root>& roots,
                                    double lo, double hi) {
    EigenvalueList out;
    for (const auto& r : roots)
        if (r.lambda >= lo && r.lambda <= hi) out.lines.emplace_back(r.lambda, r.multiplicity);
    return out;
}

}  // namespace detail

// All eigenvalues of the closed operator in the window, with multiplicities.
inline EigenvalueList eigenvalues_closed(const ModelDiracOperator& op, double lo, double hi,
                                         double resolution = 1e-9) {
    detail::AnalyticZeroFinder finder(detail::closed_det_fn(op), resolution);
    return detail::roots_to_list(finder.find(lo, hi), lo, hi);
}

// Eigenvalues of D restricted to one side under the boundary condition B.
inline EigenvalueList eigenvalues_with_boundary(const ModelDiracOperator& op, Side side,
                                                const BoundaryCondition& B, double lo,
                                                double hi, double r = 0.0,
                                                double resolution = 1e-9) {
    if (!B.lagr.space()->same_as(*op.boundary_space()))
        throw std::invalid_argument("eigenvalues_with_boundary: condition in wrong space");
    detail::AnalyticZeroFinder finder(detail::boundary_det_fn(op, side, B.lagr.frame(), r),
                                      resolution);
    return detail::roots_to_list(finder.find(lo, hi), lo, hi);
}

// --------------------------- spectral-flow oracle ---------------------------

struct EigencurveTable {
    // per sample: (t, expanded eigenvalues ascending)
    std::vector<std::pair<double, std::vector<double>>> rows;

    void to_csv(std::ostream& os) const {
        os << "t,branch_id,lambda\n";
        char buf[128];
        for (const auto& [t, ev] : rows)
            for (std::size_t b = 0; b < ev.size(); ++b) {
                std::snprintf(buf, sizeof(buf), "%.17g,%zu,%.17g\n", t, b, ev[b]);
                os << buf;
            }
    }
};

struct OracleResult {
    IndexResult sf;
    EigencurveTable curves;
    double window = 0;
};

struct OracleOptions {
    double initial_window = 0;   // 0: derive from the operator
    double resolution = 1e-7;
    double edge_clearance = 0.2;
    double pair_step = 0.12;     // max per-branch movement between samples
    double speed_bound = 10.0;   // eigenvalue speed bound for warm restarts
    int initial_samples = 17;
    int max_depth = 26;
};

namespace detail {

struct SpectrumProvider {
    std::function<AnalyticZeroFinder::MatrixFn(double)> fn_at;
    double resolution;
    double speed_bound;  // max eigenvalue movement per unit of t
    mutable std::map<double, std::vector<AnalyticZeroFinder::Root>> cache;

    std::vector<AnalyticZeroFinder::Root> spectrum(double t, double lo, double hi) const {
        auto it = cache.find(t);
        if (it != cache.end()) return it->second;
        AnalyticZeroFinder finder(fn_at(t), resolution);
        std::vector<AnalyticZeroFinder::Root> roots;
        // warm start from the nearest cached neighbor; the movement radius is
        // conservative, and find_warm falls back cold on any mismatch
        auto best = cache.end();
        double bestd = 1e300;
        for (auto jt = cache.begin(); jt != cache.end(); ++jt) {
            double dd = std::abs(jt->first - t);
            if (dd < bestd) { bestd = dd; best = jt; }
        }
        const double radius =
            best == cache.end() ? 0.0 : speed_bound * bestd + 10 * resolution;
        if (best != cache.end() && !best->second.empty() && radius < 0.2 * (hi - lo))
            roots = finder.find_warm(lo, hi, best->second, radius);
        else
            roots = finder.find(lo, hi);
        cache[t] = roots;
        return roots;
    }
};

inline std::vector<double> expand_roots(const std::vector<AnalyticZeroFinder::Root>& roots) {
    std::vector<double> v;
    for (const auto& r : roots)
        for (int k = 0; k < r.multiplicity; ++k) v.push_back(r.lambda);
    return v;
}

inline OracleResult sf_from_provider(const SpectrumProvider& prov, double window_hint,
                                     const OracleOptions& opt) {
    double W = window_hint;
    for (int attempt = 0;; ++attempt) {
        if (attempt > 8)
            throw std::runtime_error("sf_oracle: window enlargement did not stabilize");
        prov.cache.clear();
        bool widen = false;

        auto spectrum_at = [&](double t) {
            return expand_roots(prov.spectrum(t, -W, W));
        };

        // endpoint spectra fix epsilon
        std::vector<double> e0 = spectrum_at(0.0);
        std::vector<double> e1 = spectrum_at(1.0);
        double cap = std::numeric_limits<double>::infinity();
        for (double v : e0)
            if (v > 1e-9) cap = std::min(cap, v);
        for (double v : e1)
            if (v > 1e-9) cap = std::min(cap, v);
        if (std::isinf(cap)) {
            widen = true;  // no positive spectrum seen: window too small
            W = 2 * W + 0.7;
            continue;
        }
        const double eps = 0.5 * std::min(cap, W);

        struct Node {
            double t;
            std::vector<double> ev;
        };
        auto mk = [&](double t) { return Node{t, spectrum_at(t)}; };

        std::vector<Node> nodes;
        for (int i = 0; i < opt.initial_samples; ++i)
            nodes.push_back(mk(static_cast<double>(i) / (opt.initial_samples - 1)));

        auto edge_ok = [&](const Node& n) {
            for (double v : n.ev)
                if (std::abs(std::abs(v) - W) < opt.edge_clearance) return false;
            return true;
        };

        IndexResult sf;
        sf.epsilon = eps;
        int total = 0;
        std::function<int(const Node&, const Node&, int)> sweep =
            [&](const Node& a, const Node& b, int depth) -> int {
            if (widen) return 0;
            if (!edge_ok(a) || !edge_ok(b)) { widen = true; return 0; }
            bool fine = a.ev.size() == b.ev.size();
            if (fine) {
                for (std::size_t i = 0; i < a.ev.size(); ++i)
                    if (std::abs(a.ev[i] - b.ev[i]) > opt.pair_step) fine = false;
            }
            auto below = [&](const Node& n) {
                int k = 0;
                for (double v : n.ev)
                    if (v < eps) ++k;
                return k;
            };
            const int count = below(a) - below(b);
            const bool isolate = count != 0 && (b.t - a.t) > 1e-6;
            if ((!fine || isolate) && depth < opt.max_depth) {
                Node m = mk(0.5 * (a.t + b.t));
                return sweep(a, m, depth + 1) + sweep(m, b, depth + 1);
            }
            if (!fine)
                throw std::runtime_error("sf_oracle: branch pairing failed at max depth");
            if (count != 0)
                sf.log.records.push_back({0.5 * (a.t + b.t), count > 0 ? 1 : -1,
                                          std::abs(count)});
            return count;
        };
        for (std::size_t i = 0; i + 1 < nodes.size() && !widen; ++i)
            total += sweep(nodes[i], nodes[i + 1], 0);
        if (widen) {
            W = 2 * W + 0.7;
            continue;
        }
        sf.value = total;

        OracleResult out;
        out.sf = sf;
        out.window = W;
        for (const auto& [t, roots] : prov.cache)
            out.curves.rows.emplace_back(t, expand_roots(roots));
        std::sort(out.curves.rows.begin(), out.curves.rows.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        return out;
    }
}

}  // namespace detail

// Path of model operators; the callable must return a validated operator.
using DiracPath = std::function<ModelDiracOperator(double)>;

inline double default_window(const ModelDiracOperator& op) {
    double s = 0;
    for (const auto& seg : op.potential().segments())
        s = std::max(s, seg.value.size() ? operator_norm(seg.value) : 0.0);
    return 1.0 + s + 2.0 * M_PI / op.geometry().circumference;
}

// SF of the closed family by eigenvalue-curve tracking; r stretches both
// collars (the family lives on the stretched circle M^r).
inline OracleResult sf_oracle_closed(const DiracPath& D, double r = 0.0,
                                     const OracleOptions& opt = {}) {
    auto ops = std::make_shared<std::map<double, ModelDiracOperator>>();
    auto op_at = [D, ops](double t) -> const ModelDiracOperator& {
        auto it = ops->find(t);
        if (it == ops->end()) it = ops->emplace(t, D(t)).first;
        return it->second;
    };
    detail::SpectrumProvider prov{
        [op_at, r](double t) { return detail::closed_det_fn(op_at(t), r); },
        opt.resolution, opt.speed_bound, {}};
    const double W = opt.initial_window > 0 ? opt.initial_window : default_window(op_at(0.0));
    return detail::sf_from_provider(prov, W, opt);
}

// SF of (D|side, B) for a path of boundary conditions.
inline OracleResult sf_oracle_boundary(const DiracPath& D, Side side,
                                       const LagrangianPath& B, double r = 0.0,
                                       const OracleOptions& opt = {}) {
    auto ops = std::make_shared<std::map<double, ModelDiracOperator>>();
    auto op_at = [D, ops](double t) -> const ModelDiracOperator& {
        auto it = ops->find(t);
        if (it == ops->end()) it = ops->emplace(t, D(t)).first;
        return it->second;
    };
    detail::SpectrumProvider prov{
        [op_at, side, B, r](double t) {
            return detail::boundary_det_fn(op_at(t), side, B.at(t).frame(), r);
        },
        opt.resolution, opt.speed_bound, {}};
    const double W = opt.initial_window > 0 ? opt.initial_window : default_window(op_at(0.0));
    return detail::sf_from_provider(prov, W, opt);
}

// --------------------- Fourier (Galerkin) discretization --------------------
//
// Hermitian matrix of the closed operator in the truncated Fourier basis
// {e^{2πikx/c} e_j : |k| <= K}; the independent finite-dimensional shadow used
// to cross-check the transfer-matrix oracle.

inline Matrix fourier_discretization(const ModelDiracOperator& op, int K) {
    const double c = op.geometry().circumference;
    const Index d = op.fiber()->dim();
    const Matrix& J = op.fiber()->J();
    const int modes = 2 * K + 1;
    Matrix H = Matrix::Zero(modes * d, modes * d);

    auto fourier_coeff = [&](int m) -> Matrix {
        Matrix Am = Matrix::Zero(d, d);
        for (const auto& seg : op.potential().segments()) {
            if (seg.smooth()) {
                const int nq = 64;
                const double h = (seg.x1 - seg.x0) / nq;
                for (int i = 0; i < nq; ++i) {
                    double x = seg.x0 + (i + 0.5) * h;
                    Am += seg.profile(x) * std::polar(1.0, -2 * M_PI * m * x / c) * (h / c);
                }
            } else if (m == 0) {
                Am += seg.value * ((seg.x1 - seg.x0) / c);
            } else {
                const cd itheta(0, 2 * M_PI * m / c);
                Am += seg.value *
                      ((std::exp(-itheta * seg.x0) - std::exp(-itheta * seg.x1)) / (itheta * c));
            }
        }
        return Am;
    };

    std::map<int, Matrix> coeffs;
    for (int m = -(modes - 1); m <= modes - 1; ++m) coeffs[m] = fourier_coeff(m);

    for (int a = 0; a < modes; ++a) {
        const int k = a - K;
        for (int b = 0; b < modes; ++b) {
            const int kp = b - K;
            Matrix blk = J * coeffs[k - kp];
            if (k == kp) blk += J * cd(0, 2 * M_PI * k / c) * Matrix::Identity(d, d);
            H.block(a * d, b * d, d, d) = blk;
        }
    }
    return H;
}

}  // namespace splitflow
