// hsymp.hpp — Hermitian symplectic linear algebra: spaces, Lagrangian frames,
// spectral splits, gap metric, symplectic reduction.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace splitflow {

using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using Index = Eigen::Index;
using cd = std::complex<double>;

struct Tolerances {
    double alg = 1e-10;    // algebraic identities (J^2=-Id, frames, isotropy)
    double rank = 1e-8;    // rank / intersection / subspace-equality decisions
    double gap = 1e-6;     // minimum distance of a split level nu from spec(S)
    double conv = 1e-8;    // iterative-limit convergence
};

// --------------------------- small helpers ----------------------------------

inline double operator_norm(const Matrix& M) {
    if (M.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(M);
    return svd.singularValues()(0);
}

inline bool nearly_hermitian(const Matrix& M, double tol) {
    return (M - M.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

// Nearest unitary (polar factor).
inline Matrix unitarize(const Matrix& M) {
    Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().adjoint();
}

// ------------------------------ subspaces -----------------------------------
//
// Subspaces of C^d are handled as d x k matrices with orthonormal columns.
// Rank decisions use singular-value thresholds; a zero-dimensional subspace is
// a d x 0 matrix.

namespace sub {

// Orthonormal basis of the column span; columns below tol (relative to the
// largest singular value) are dropped.
inline Matrix orthonormalize(const Matrix& cols, double tol = 1e-12) {
    if (cols.cols() == 0) return Matrix(cols.rows(), 0);
    Eigen::JacobiSVD<Matrix> svd(cols, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    const double cut = sv.size() ? sv(0) * tol : 0.0;
    Index r = 0;
    while (r < sv.size() && sv(r) > cut && sv(r) > 1e-300) ++r;
    return svd.matrixU().leftCols(r);
}

inline Matrix zero(Index dim) { return Matrix(dim, 0); }

// Orthogonal projection matrix onto span(F).
inline Matrix projector(const Matrix& F) {
    if (F.cols() == 0) return Matrix::Zero(F.rows(), F.rows());
    return F * F.adjoint();
}

// Operator-norm distance between the orthogonal projections ("gap metric").
inline double gap(const Matrix& F1, const Matrix& F2) {
    Matrix D = projector(F1) - projector(F2);
    if (D.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(D, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

// dim(span F1 ∩ span F2): singular values of F1* F2 within tol of 1.
inline int intersection_dim(const Matrix& F1, const Matrix& F2, double tol) {
    if (F1.cols() == 0 || F2.cols() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(F1.adjoint() * F2);
    const auto& sv = svd.singularValues();
    int k = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) >= 1.0 - tol) ++k;
    return k;
}

// Orthonormal basis of span F1 ∩ span F2 via the nullspace of [F1 | -F2].
inline Matrix intersection(const Matrix& F1, const Matrix& F2, double tol) {
    if (F1.cols() == 0 || F2.cols() == 0) return zero(F1.rows());
    Matrix stacked(F1.rows(), F1.cols() + F2.cols());
    stacked << F1, -F2;
    Eigen::JacobiSVD<Matrix> svd(stacked, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    std::vector<Index> null_idx;
    for (Index i = 0; i < stacked.cols(); ++i)
        if (i >= sv.size() || sv(i) <= tol) null_idx.push_back(i);
    if (null_idx.empty()) return zero(F1.rows());
    Matrix basis(F1.rows(), static_cast<Index>(null_idx.size()));
    for (std::size_t j = 0; j < null_idx.size(); ++j) {
        Vector x = svd.matrixV().col(null_idx[j]).head(F1.cols());
        basis.col(static_cast<Index>(j)) = F1 * x;
    }
    return orthonormalize(basis);
}

// Orthogonal projection of span(F) into span(E): orthonormal basis of
// proj_E(span F), with rank decided at tol.
inline Matrix project_into(const Matrix& F, const Matrix& E, double tol) {
    if (F.cols() == 0 || E.cols() == 0) return zero(F.rows());
    Matrix coords = E.adjoint() * F;   // e x k
    Eigen::JacobiSVD<Matrix> svd(coords, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    Index r = 0;
    while (r < sv.size() && sv(r) > tol) ++r;
    return E * svd.matrixU().leftCols(r);
}

// Whether span(F_small) ⊆ span(F_big) to tolerance tol.
inline bool contains(const Matrix& F_big, const Matrix& F_small, double tol) {
    if (F_small.cols() == 0) return true;
    Matrix resid = F_small - projector(F_big) * F_small;
    return resid.cwiseAbs().maxCoeff() <= tol;
}

// Orthogonal complement of span(F_inner) within span(F_outer).
inline Matrix complement_within(const Matrix& F_outer, const Matrix& F_inner,
                                double tol = 1e-10) {
    if (F_inner.cols() == 0) return F_outer;
    Matrix resid = F_outer - projector(F_inner) * F_outer;
    Matrix basis = orthonormalize(resid, tol);
    // dimension bookkeeping must close exactly
    if (basis.cols() != F_outer.cols() - F_inner.cols())
        throw std::runtime_error("sub::complement_within: dimension mismatch");
    return basis;
}

inline Matrix concat(const Matrix& A, const Matrix& B) {
    Matrix M(A.rows(), A.cols() + B.cols());
    M << A, B;
    return M;
}

}  // namespace sub

// ----------------------- HermitianSymplecticSpace ---------------------------
//
// A finite-dimensional complex inner-product space C^{2n} with a complex
// structure J (J^2 = -Id, J unitary, balanced ±i eigenspaces) and the form
// ω(x,y) = <x, Jy>.  The ±i eigenbases of J are fixed at construction; every
// Lagrangian then corresponds to a unitary from the +i to the -i eigenspace
// (its graph description), which is what the Maslov machinery consumes.

class HermitianSymplecticSpace {
public:
    HermitianSymplecticSpace(Matrix J, double tol = 1e-10) : J_(std::move(J)) {
        const Index d = J_.rows();
        if (d == 0 || J_.cols() != d)
            throw std::invalid_argument("make_space: J must be square and nonempty");
        if (d % 2 != 0)
            throw std::invalid_argument("make_space: dimension must be even");
        if ((J_ * J_ + Matrix::Identity(d, d)).cwiseAbs().maxCoeff() > tol)
            throw std::invalid_argument("make_space: J^2 != -Id");
        if ((J_.adjoint() * J_ - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() > tol)
            throw std::invalid_argument("make_space: J not unitary");
        // -iJ is Hermitian with eigenvalues ±1; equal multiplicities required.
        Matrix K = cd(0, -1) * J_;
        Eigen::SelfAdjointEigenSolver<Matrix> es(K);
        if (es.info() != Eigen::Success)
            throw std::runtime_error("make_space: eigendecomposition failed");
        const auto& ev = es.eigenvalues();
        Index n_minus = 0;
        for (Index i = 0; i < d; ++i)
            if (ev(i) < 0) ++n_minus;
        if (n_minus != d / 2 || std::abs(ev.cwiseAbs().minCoeff() - 1.0) > 1e-8)
            throw std::invalid_argument("make_space: unequal ±i eigenspace dimensions");
        basis_minus_ = es.eigenvectors().leftCols(d / 2);   // J v = -i v
        basis_plus_  = es.eigenvectors().rightCols(d / 2);  // J v = +i v
    }

    Index dim() const { return J_.rows(); }
    Index half() const { return J_.rows() / 2; }
    const Matrix& J() const { return J_; }
    const Matrix& plus_basis() const { return basis_plus_; }
    const Matrix& minus_basis() const { return basis_minus_; }

    cd omega(const Vector& x, const Vector& y) const { return x.dot(J_ * y); }

    // exp(tJ) = cos(t) Id + sin(t) J, exactly.
    Matrix rotation(double t) const {
        return std::cos(t) * Matrix::Identity(dim(), dim()) + std::sin(t) * J_;
    }

    bool same_as(const HermitianSymplecticSpace& other, double tol = 1e-9) const {
        return dim() == other.dim() &&
               (J_ - other.J_).cwiseAbs().maxCoeff() <= tol;
    }

private:
    Matrix J_;
    Matrix basis_plus_, basis_minus_;
};

using SpacePtr = std::shared_ptr<const HermitianSymplecticSpace>;

inline SpacePtr make_space(Matrix J, double tol = 1e-10) {
    return std::make_shared<const HermitianSymplecticSpace>(std::move(J), tol);
}

// The standard complex structure on C^{2n}: n diagonal blocks [[0,-1],[1,0]].
inline SpacePtr standard_space(Index n) {
    Matrix J = Matrix::Zero(2 * n, 2 * n);
    for (Index k = 0; k < n; ++k) {
        J(2 * k, 2 * k + 1) = -1.0;
        J(2 * k + 1, 2 * k) = 1.0;
    }
    return make_space(std::move(J));
}

// ------------------------------- Lagrangian ---------------------------------

class Lagrangian {
public:
    Lagrangian(SpacePtr space, Matrix frame, double tol = 1e-10)
        : space_(std::move(space)), frame_(std::move(frame)) {
        validate(tol);
    }

    // Orthonormalize an arbitrary spanning set, then validate.
    static Lagrangian from_span(SpacePtr space, const Matrix& cols, double tol = 1e-10) {
        return Lagrangian(std::move(space), sub::orthonormalize(cols), tol);
    }

    const SpacePtr& space() const { return space_; }
    const Matrix& frame() const { return frame_; }
    Index dim() const { return frame_.cols(); }

private:
    void validate(double tol) const {
        const auto& V = *space_;
        if (frame_.rows() != V.dim() || frame_.cols() != V.half())
            throw std::invalid_argument("Lagrangian: frame must be 2n x n");
        if ((frame_.adjoint() * frame_ - Matrix::Identity(V.half(), V.half()))
                .cwiseAbs().maxCoeff() > tol)
            throw std::invalid_argument("Lagrangian: frame not orthonormal");
        if ((frame_.adjoint() * V.J() * frame_).cwiseAbs().maxCoeff() > tol)
            throw std::invalid_argument("Lagrangian: span not isotropic");
        // F*F = Id and F*JF = 0 make [F | JF] orthonormal, so JL = L^perp holds.
    }

    SpacePtr space_;
    Matrix frame_;
};

inline bool is_lagrangian(const SpacePtr& space, const Matrix& subspace_cols,
                          double tol = 1e-10) {
    Matrix F = sub::orthonormalize(subspace_cols);
    if (F.cols() != space->half()) return false;
    if ((F.adjoint() * F - Matrix::Identity(F.cols(), F.cols())).cwiseAbs().maxCoeff() > tol)
        return false;
    return (F.adjoint() * space->J() * F).cwiseAbs().maxCoeff() <= tol;
}

inline void require_same_space(const Lagrangian& a, const Lagrangian& b) {
    if (!a.space()->same_as(*b.space()))
        throw std::invalid_argument("Lagrangians live in different spaces");
}

inline int intersection_dim(const Lagrangian& a, const Lagrangian& b,
                            double tol_rank = 1e-8) {
    require_same_space(a, b);
    return sub::intersection_dim(a.frame(), b.frame(), tol_rank);
}

inline double gap_distance(const Lagrangian& a, const Lagrangian& b) {
    require_same_space(a, b);
    return sub::gap(a.frame(), b.frame());
}

// e^{tJ} L; the flow of J is unitary and ω-preserving, so the result is
// Lagrangian by construction.
inline Lagrangian rotate(const Lagrangian& L, double t) {
    return Lagrangian(L.space(), sub::orthonormalize(L.space()->rotation(t) * L.frame()));
}

// ------------------------ graph unitaries of Lagrangians --------------------
//
// For x in a Lagrangian L, the ±i components satisfy |x_+| = |x_-|, so L is
// the graph of a unitary E_+ -> E_-.  In the fixed eigenbases this is the
// n x n matrix returned here; it is invariant under frame gauge changes.

inline Matrix lagrangian_unitary(const Lagrangian& L) {
    const auto& V = *L.space();
    Matrix A = V.plus_basis().adjoint() * L.frame();   // n x n, = unitary/sqrt2
    Matrix B = V.minus_basis().adjoint() * L.frame();
    return B * A.inverse();
}

// Reconstruct the Lagrangian with graph unitary W (polar-projected, so inputs
// that are unitary only to roundoff are accepted).
inline Lagrangian lagrangian_from_unitary(const SpacePtr& space, const Matrix& W) {
    Matrix Wu = unitarize(W);
    Matrix F = (space->plus_basis() + space->minus_basis() * Wu) / std::sqrt(2.0);
    return Lagrangian(space, std::move(F));
}

// Relative unitary of an ordered pair: U = W_M^* W_L.  dim(L ∩ M) equals the
// multiplicity of the eigenvalue 1 of U, and rotating L by e^{tJ} multiplies
// U by e^{-2it}.
inline Matrix relative_unitary(const Lagrangian& L, const Lagrangian& M) {
    require_same_space(L, M);
    return lagrangian_unitary(M).adjoint() * lagrangian_unitary(L);
}

// Eigenvalue angles of a unitary matrix, each in [0, 2π), ascending.
inline std::vector<double> unitary_angles(const Matrix& U) {
    Eigen::ComplexEigenSolver<Matrix> es(U);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("unitary_angles: eigensolver failed");
    std::vector<double> ang;
    ang.reserve(static_cast<std::size_t>(U.rows()));
    const double two_pi = 2.0 * M_PI;
    for (Index i = 0; i < U.rows(); ++i) {
        double a = std::arg(es.eigenvalues()(i));
        if (a < 0) a += two_pi;
        if (a >= two_pi) a -= two_pi;
        ang.push_back(a);
    }
    std::sort(ang.begin(), ang.end());
    return ang;
}

// ------------------------------ SpectralSplit -------------------------------
//
// Eigenspace split of a Hermitian, J-anticommuting S at a level nu >= 0:
//   Pminus = span{Sφ = λφ, λ < -ν},  Hnu = span{|λ| <= ν},  Pplus = span{λ > ν}.
// Eigenvalues are clustered (width tol.alg relative to scale) and a cluster is
// never split; nu must sit in a spectral gap (distance > tol.gap from every
// cluster), so the split is a function of (S, nu) alone.

class SpectralSplit {
public:
    SpectralSplit(SpacePtr space, Matrix S, double nu, Tolerances tol = {})
        : space_(std::move(space)), S_(std::move(S)), nu_(nu), tol_(tol) {
        const auto& V = *space_;
        const Index d = V.dim();
        if (S_.rows() != d || S_.cols() != d)
            throw std::invalid_argument("SpectralSplit: S has wrong dimension");
        const double scale = std::max(1.0, S_.cwiseAbs().maxCoeff());
        if (!nearly_hermitian(S_, tol_.alg * scale * 10))
            throw std::invalid_argument("SpectralSplit: S not Hermitian");
        if ((S_ * V.J() + V.J() * S_).cwiseAbs().maxCoeff() > tol_.alg * scale * 10)
            throw std::invalid_argument("SpectralSplit: S does not anticommute with J");
        if (nu < 0)
            throw std::invalid_argument("SpectralSplit: nu must be nonnegative");

        Eigen::SelfAdjointEigenSolver<Matrix> es(S_);
        if (es.info() != Eigen::Success)
            throw std::runtime_error("SpectralSplit: eigendecomposition failed");
        eigs_ = es.eigenvalues();
        vecs_ = es.eigenvectors();

        // cluster boundaries
        const double cw = tol_.alg * scale * 100;
        std::vector<std::pair<Index, Index>> clusters;  // [first, last]
        Index i = 0;
        while (i < d) {
            Index j = i;
            while (j + 1 < d && eigs_(j + 1) - eigs_(j) <= cw) ++j;
            clusters.emplace_back(i, j);
            i = j + 1;
        }
        for (const auto& c : clusters) {
            double val = eigs_.segment(c.first, c.second - c.first + 1).mean();
            if (std::abs(std::abs(val) - nu_) <= tol_.gap && std::abs(val) > tol_.gap)
                throw std::invalid_argument(
                    "SpectralSplit: nu within tol_gap of an eigenvalue of S (no spectral gap)");
        }

        std::vector<Index> im, ih, ip;
        for (const auto& c : clusters) {
            double val = eigs_.segment(c.first, c.second - c.first + 1).mean();
            double mag = std::abs(val);
            for (Index k = c.first; k <= c.second; ++k) {
                if (mag <= nu_ + tol_.gap) ih.push_back(k);
                else if (val < 0) im.push_back(k);
                else ip.push_back(k);
            }
        }
        auto pick = [&](const std::vector<Index>& idx) {
            Matrix B(d, static_cast<Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k)
                B.col(static_cast<Index>(k)) = vecs_.col(idx[k]);
            return B;
        };
        pminus_ = pick(im);
        hnu_ = pick(ih);
        pplus_ = pick(ip);

        if (pminus_.cols() != pplus_.cols())
            throw std::runtime_error("SpectralSplit: dim Pminus != dim Pplus");
        // J interchanges the ±λ eigenspaces and preserves Hnu.
        if (!sub::contains(pminus_, V.J() * pplus_, 1e-7) && pplus_.cols() > 0)
            throw std::runtime_error("SpectralSplit: J does not map Pplus onto Pminus");
        if (hnu_.cols() > 0 && !sub::contains(hnu_, V.J() * hnu_, 1e-7))
            throw std::runtime_error("SpectralSplit: J does not preserve Hnu");
        if (hnu_.cols() > 0)
            reduced_ = make_space(hnu_.adjoint() * V.J() * hnu_, 1e-8);
    }

    const SpacePtr& space() const { return space_; }
    const Matrix& S() const { return S_; }
    double nu() const { return nu_; }
    const Matrix& pminus() const { return pminus_; }
    const Matrix& hnu() const { return hnu_; }
    const Matrix& pplus() const { return pplus_; }
    const RealVector& eigenvalues() const { return eigs_; }

    // H_nu with its induced symplectic structure (throws if H_nu = 0).
    const SpacePtr& reduced_space() const {
        if (!reduced_)
            throw std::runtime_error("SpectralSplit: H_nu is zero-dimensional");
        return reduced_;
    }

    // Lagrangian of H_nu (in reduced coordinates) -> ambient frame, and back.
    Matrix ambient_frame(const Matrix& reduced_frame) const { return hnu_ * reduced_frame; }
    Matrix reduced_frame(const Matrix& ambient) const { return hnu_.adjoint() * ambient; }

private:
    SpacePtr space_;
    Matrix S_;
    double nu_;
    Tolerances tol_;
    RealVector eigs_;
    Matrix vecs_;
    Matrix pminus_, hnu_, pplus_;
    SpacePtr reduced_;
};

// -------------------------- assembled Lagrangians ---------------------------

// Concatenate frames of mutually orthogonal pieces and validate the result as
// a Lagrangian of the ambient space.
inline Lagrangian direct_sum_lagrangian(const SpacePtr& space,
                                        const std::vector<Matrix>& parts,
                                        double tol = 1e-10) {
    Index total = 0;
    for (const auto& P : parts) total += P.cols();
    Matrix F(space->dim(), total);
    Index at = 0;
    for (const auto& P : parts) {
        if (P.cols() == 0) continue;
        if (P.rows() != space->dim())
            throw std::invalid_argument("direct_sum_lagrangian: wrong ambient dimension");
        F.middleCols(at, P.cols()) = P;
        at += P.cols();
    }
    if ((F.adjoint() * F - Matrix::Identity(total, total)).cwiseAbs().maxCoeff() > 1e-8)
        throw std::invalid_argument("direct_sum_lagrangian: summands not orthonormal");
    return Lagrangian(space, std::move(F), tol);
}

// ---------------------------- symplectic reduction --------------------------
//
// proj_{Hnu}( L ∩ (Hnu ⊕ Pplus) ), returned as a Lagrangian of the reduced
// space.  Requires L ∩ Pplus = 0 (nonresonance); otherwise the reduction is
// not clean and we signal resonance.

struct ResonanceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline Lagrangian symplectic_reduce(const Lagrangian& L, const SpectralSplit& split,
                                    double tol_rank = 1e-8) {
    if (!L.space()->same_as(*split.space()))
        throw std::invalid_argument("symplectic_reduce: split lives in a different space");
    if (sub::intersection_dim(L.frame(), split.pplus(), tol_rank) > 0)
        throw ResonanceError("symplectic_reduce: L meets Pplus (resonance)");
    Matrix hp = sub::concat(split.hnu(), split.pplus());
    Matrix meet = sub::intersection(L.frame(), hp, tol_rank);
    Matrix proj = sub::project_into(meet, split.hnu(), tol_rank);
    Matrix red = split.reduced_frame(proj);
    return Lagrangian::from_span(split.reduced_space(), red, 1e-8);
}

// Deterministic frame representative for I/O: column-pivoted QR of the
// projector with per-column phase fixing.  Never used in identity tests.
inline Matrix canonical_frame(const Lagrangian& L) {
    Matrix P = sub::projector(L.frame());
    Eigen::ColPivHouseholderQR<Matrix> qr(P);
    Matrix Q = qr.householderQ();
    Matrix F = Q.leftCols(L.dim());
    for (Index j = 0; j < F.cols(); ++j) {
        Index imax = 0;
        double best = 0;
        for (Index i = 0; i < F.rows(); ++i)
            if (std::abs(F(i, j)) > best) { best = std::abs(F(i, j)); imax = i; }
        cd ph = F(imax, j) / std::abs(F(imax, j));
        F.col(j) /= ph;
    }
    return F;
}

}  // namespace splitflow
