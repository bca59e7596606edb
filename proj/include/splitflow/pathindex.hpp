// pathindex.hpp — Maslov index of Lagrangian path pairs and spectral flow of
// Hermitian paths, under the e^{Jε} endpoint convention.
//
// A Lagrangian corresponds to a unitary from the +i to the -i eigenspace of J;
// for an ordered pair (L, M) the intersections are the eigenvalue-1 directions
// of the relative unitary U = W_M^* W_L, and rotating L by e^{sJ} multiplies U
// by e^{-2is}.  The index counts eigenvalues of U(t) crossing the point
// e^{2iε} on the unit circle, counterclockwise positive; the calibration
// μ(L, e^{tJ}M) = dim(L ∩ M) on t ∈ [-ε₀, ε₀] pins this orientation.

#pragma once

#include "splitflow/hsymp.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>

namespace splitflow {

// ------------------------------ crossing log --------------------------------

struct CrossingRecord {
    double t_star = 0;
    int sign = 0;
    int multiplicity = 0;
};

struct CrossingLog {
    std::vector<CrossingRecord> records;

    int total() const {
        int s = 0;
        for (const auto& r : records) s += r.sign * r.multiplicity;
        return s;
    }
    void to_csv(std::ostream& os) const {
        os << "t_star,sign,multiplicity\n";
        char buf[96];
        for (const auto& r : records) {
            std::snprintf(buf, sizeof(buf), "%.17g,%d,%d\n", r.t_star, r.sign,
                          r.multiplicity);
            os << buf;
        }
    }
};

// -------------------------------- path types --------------------------------

struct PathError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Sampled continuous path of Lagrangians on [0,1].  Consecutive samples are
// refined until gap_distance < step_cap; failure to converge signals a
// discontinuous evaluator.
class LagrangianPath {
public:
    using Evaluator = std::function<Lagrangian(double)>;

    LagrangianPath(Evaluator eval, double step_cap = 0.2, int initial = 9,
                   int max_depth = 26)
        : eval_(std::make_shared<Evaluator>(std::move(eval))), step_cap_(step_cap) {
        build_samples(initial, max_depth);
    }

    static LagrangianPath constant(const Lagrangian& L) {
        return LagrangianPath([L](double) { return L; }, 0.5, 2);
    }

    Lagrangian at(double t) const { return (*eval_)(t); }
    const SpacePtr& space() const { return samples_.front().second.space(); }
    const std::vector<std::pair<double, Lagrangian>>& samples() const { return samples_; }
    double step_cap() const { return step_cap_; }

    Lagrangian start() const { return samples_.front().second; }
    Lagrangian end() const { return samples_.back().second; }

private:
    void build_samples(int initial, int max_depth) {
        if (initial < 2) initial = 2;
        for (int i = 0; i < initial; ++i) {
            double t = static_cast<double>(i) / (initial - 1);
            samples_.emplace_back(t, (*eval_)(t));
        }
        for (const auto& s : samples_)
            if (!s.second.space()->same_as(*samples_.front().second.space()))
                throw PathError("LagrangianPath: samples in different spaces");
        bool changed = true;
        int depth = 0;
        while (changed) {
            if (++depth > max_depth)
                throw PathError("LagrangianPath: refinement did not converge (discontinuous path?)");
            changed = false;
            std::vector<std::pair<double, Lagrangian>> next;
            next.reserve(samples_.size() * 2);
            for (std::size_t i = 0; i + 1 < samples_.size(); ++i) {
                next.push_back(samples_[i]);
                if (gap_distance(samples_[i].second, samples_[i + 1].second) > step_cap_) {
                    double tm = 0.5 * (samples_[i].first + samples_[i + 1].first);
                    next.emplace_back(tm, (*eval_)(tm));
                    changed = true;
                }
            }
            next.push_back(samples_.back());
            samples_.swap(next);
        }
    }

    std::shared_ptr<Evaluator> eval_;
    double step_cap_;
    std::vector<std::pair<double, Lagrangian>> samples_;
};

// Sampled continuous path of Hermitian matrices on [0,1].
class HermitianPath {
public:
    using Evaluator = std::function<Matrix(double)>;

    HermitianPath(Evaluator eval, double step_cap = 0.25, int initial = 9,
                  int max_depth = 26, double tol_herm = 1e-10)
        : eval_(std::make_shared<Evaluator>(std::move(eval))), step_cap_(step_cap) {
        for (int i = 0; i < initial; ++i) {
            double t = static_cast<double>(i) / (initial - 1);
            samples_.emplace_back(t, fetch(t, tol_herm));
        }
        bool changed = true;
        int depth = 0;
        while (changed) {
            if (++depth > max_depth)
                throw PathError("HermitianPath: refinement did not converge");
            changed = false;
            std::vector<std::pair<double, Matrix>> next;
            const double scale = 1.0 + samples_.front().second.cwiseAbs().maxCoeff();
            for (std::size_t i = 0; i + 1 < samples_.size(); ++i) {
                next.push_back(samples_[i]);
                if (operator_norm(samples_[i].second - samples_[i + 1].second) >
                    step_cap_ * scale) {
                    double tm = 0.5 * (samples_[i].first + samples_[i + 1].first);
                    next.emplace_back(tm, fetch(tm, tol_herm));
                    changed = true;
                }
            }
            next.push_back(samples_.back());
            samples_.swap(next);
        }
    }

    Matrix at(double t) const { return (*eval_)(t); }
    const std::vector<std::pair<double, Matrix>>& samples() const { return samples_; }

private:
    Matrix fetch(double t, double tol) const {
        Matrix H = (*eval_)(t);
        const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
        if (!nearly_hermitian(H, tol * scale * 10))
            throw PathError("HermitianPath: sample not Hermitian");
        return H;
    }

    std::shared_ptr<Evaluator> eval_;
    double step_cap_;
    std::vector<std::pair<double, Matrix>> samples_;
};

// ----------------------- concatenation and reversal -------------------------

inline LagrangianPath reverse(const LagrangianPath& p) {
    return LagrangianPath([p](double t) { return p.at(1.0 - t); }, p.step_cap(),
                          static_cast<int>(p.samples().size()));
}

inline LagrangianPath concatenate(const std::vector<LagrangianPath>& parts,
                                  double tol_rank = 1e-8) {
    if (parts.empty()) throw std::invalid_argument("concatenate: no paths");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (gap_distance(parts[i].end(), parts[i + 1].start()) > tol_rank)
            throw PathError("concatenate: endpoint mismatch at junction " +
                            std::to_string(i));
    }
    const auto k = parts.size();
    auto eval = [parts, k](double t) {
        double scaled = t * static_cast<double>(k);
        auto idx = static_cast<std::size_t>(scaled);
        if (idx >= k) idx = k - 1;
        return parts[idx].at(scaled - static_cast<double>(idx));
    };
    int initial = 0;
    for (const auto& p : parts) initial += static_cast<int>(p.samples().size());
    return LagrangianPath(eval, parts.front().step_cap(), std::max(initial, 9));
}

// ---------------------------- index computations ----------------------------

struct IndexOptions {
    double unitary_step = 0.0;        // 0: choose from the matrix size
    double isolate_window = 1e-6;     // parameter width of logged crossings
    double eps_start = 1e-3;
    double eps_cap = 1e-9;
    double angle_floor = 1e-7;        // endpoint angles below this count as 0
    int max_depth = 34;
    std::optional<double> force_epsilon;  // testing hook: use this admissible ε
};

struct IndexResult {
    int value = 0;
    double epsilon = 0;
    CrossingLog log;
};

namespace detail {

// signed angular distance from alpha, in (-pi, pi]
inline double svalue(double theta, double alpha) {
    double s = std::remainder(theta - alpha, 2.0 * M_PI);
    if (s <= -M_PI) s += 2.0 * M_PI;
    return s;
}

struct UnitaryNode {
    double t;
    Matrix U;
    std::vector<double> s;  // sorted s-values of the eigenangles
};

class MaslovSweep {
public:
    MaslovSweep(std::function<Matrix(double)> U_of, double alpha, double u_cap,
                const IndexOptions& opt)
        : U_of_(std::move(U_of)), alpha_(alpha), u_cap_(u_cap), opt_(opt) {}

    UnitaryNode make_node(double t, double shift_room) const {
        // keep eigenangles of interior nodes off the crossing point
        static constexpr double kNodeTol = 1e-10;
        double tt = t;
        for (int attempt = 0; attempt < 6; ++attempt) {
            UnitaryNode node;
            node.t = tt;
            node.U = U_of_(tt);
            for (double a : unitary_angles(node.U)) node.s.push_back(svalue(a, alpha_));
            std::sort(node.s.begin(), node.s.end());
            bool clean = true;
            for (double s : node.s)
                if (std::abs(s) < kNodeTol) clean = false;
            if (clean || shift_room == 0.0) return node;
            tt = t + shift_room * (attempt + 1) / 37.0;
        }
        throw PathError("maslov_index: could not move a sample off the crossing point");
    }

    int sweep(const UnitaryNode& a, const UnitaryNode& b, int depth, CrossingLog& log) {
        const double du = operator_norm(b.U - a.U);
        const double width = b.t - a.t;
        if (du > u_cap_) {
            if (depth >= opt_.max_depth)
                throw PathError("maslov_index: refinement exceeded max depth (discontinuous path?)");
            UnitaryNode mid = make_node(0.5 * (a.t + b.t), 0.1 * width);
            return sweep(a, mid, depth + 1, log) + sweep(mid, b, depth + 1, log);
        }
        // admissible counting-band edge beta in [-3pi/4, -pi/4], kept clear of
        // every eigenangle of both ends
        const double motion = 2.0 * std::asin(std::min(1.0, du / 2.0)) + 1e-9;
        double best_beta = 0, best_clear = -1;
        for (int k = 0; k <= 200; ++k) {
            double beta = -0.75 * M_PI + 0.5 * M_PI * k / 200.0;
            double clear = 1e300;
            for (double s : a.s) clear = std::min(clear, std::abs(s - beta));
            for (double s : b.s) clear = std::min(clear, std::abs(s - beta));
            if (clear > best_clear) { best_clear = clear; best_beta = beta; }
        }
        if (best_clear <= 2.0 * motion) {
            if (depth >= opt_.max_depth)
                throw PathError("maslov_index: no admissible counting band (clustered spectrum)");
            UnitaryNode mid = make_node(0.5 * (a.t + b.t), 0.1 * width);
            return sweep(a, mid, depth + 1, log) + sweep(mid, b, depth + 1, log);
        }
        auto in_band = [&](const std::vector<double>& s) {
            int n = 0;
            for (double v : s)
                if (v > best_beta && v < 0.0) ++n;
            return n;
        };
        const int count = in_band(a.s) - in_band(b.s);
        if (count == 0) return 0;
        if (width > opt_.isolate_window && depth < opt_.max_depth) {
            UnitaryNode mid = make_node(0.5 * (a.t + b.t), 0.1 * width);
            return sweep(a, mid, depth + 1, log) + sweep(mid, b, depth + 1, log);
        }
        CrossingRecord rec;
        rec.t_star = 0.5 * (a.t + b.t);
        rec.sign = count > 0 ? 1 : -1;
        rec.multiplicity = std::abs(count);
        log.records.push_back(rec);
        return count;
    }

private:
    std::function<Matrix(double)> U_of_;
    double alpha_;
    double u_cap_;
    IndexOptions opt_;
};

inline double smallest_positive_angle(const Matrix& U, double floor_) {
    double amin = 2.0 * M_PI;
    for (double a : unitary_angles(U))
        if (a > floor_ && a < 2.0 * M_PI - floor_) amin = std::min(amin, a);
    return amin;
}

}  // namespace detail

// Maslov index of the ordered pair of paths (L, M), with crossing log.
inline IndexResult maslov_index(const LagrangianPath& L, const LagrangianPath& M,
                                const IndexOptions& opt = {}) {
    if (!L.space()->same_as(*M.space()))
        throw std::invalid_argument("maslov_index: paths in different spaces");
    auto U_of = [&L, &M](double t) { return relative_unitary(L.at(t), M.at(t)); };

    const Index N = L.space()->half();
    const double u_cap =
        opt.unitary_step > 0 ? opt.unitary_step
                             : std::min(0.08, M_PI / (5.0 * (2.0 * static_cast<double>(N) + 1.0)));

    // ε with the §4 endpoint admissibility: no eigenangle of U(0), U(1) in (0, 2ε]
    const double amin = std::min(detail::smallest_positive_angle(U_of(0.0), opt.angle_floor),
                                 detail::smallest_positive_angle(U_of(1.0), opt.angle_floor));
    if (amin < 4.0 * opt.eps_cap)
        throw PathError("maslov_index: degenerate endpoint family (no admissible epsilon)");
    double eps = std::min(opt.eps_start, amin / 4.0);
    if (opt.force_epsilon) {
        eps = *opt.force_epsilon;
        if (!(eps > 0) || 2.0 * eps >= amin)
            throw std::invalid_argument("maslov_index: forced epsilon not admissible");
    }

    IndexResult res;
    res.epsilon = eps;
    detail::MaslovSweep sweeper(U_of, 2.0 * eps, u_cap, opt);

    // merge the sample grids of both paths
    std::vector<double> ts;
    for (const auto& s : L.samples()) ts.push_back(s.first);
    for (const auto& s : M.samples()) ts.push_back(s.first);
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-12; }),
             ts.end());

    std::vector<detail::UnitaryNode> nodes;
    nodes.reserve(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double room =
            (i == 0 || i + 1 == ts.size()) ? 0.0 : 0.05 * (ts[i + 1] - ts[i]);
        nodes.push_back(sweeper.make_node(ts[i], room));
    }
    int total = 0;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
        total += sweeper.sweep(nodes[i], nodes[i + 1], 0, res.log);
    res.value = total;
    return res;
}

// μ of the stabilized pair (P⁻_ν ⊕ L, M ⊕ P⁺_ν) for paths L, M of Lagrangians
// in H_ν of the split; equals the index computed inside H_ν.
inline IndexResult stabilized_maslov(const LagrangianPath& L, const LagrangianPath& M,
                                     const SpectralSplit& split,
                                     const IndexOptions& opt = {}) {
    const SpacePtr ambient = split.space();
    Matrix pm = split.pminus(), pp = split.pplus();
    auto lift_L = [ambient, pm, &split, L](double t) {
        return direct_sum_lagrangian(ambient,
                                     {pm, split.ambient_frame(L.at(t).frame())}, 1e-8);
    };
    auto lift_M = [ambient, pp, &split, M](double t) {
        return direct_sum_lagrangian(ambient,
                                     {split.ambient_frame(M.at(t).frame()), pp}, 1e-8);
    };
    LagrangianPath La(lift_L, L.step_cap(), static_cast<int>(L.samples().size()));
    LagrangianPath Ma(lift_M, M.step_cap(), static_cast<int>(M.samples().size()));
    return maslov_index(La, Ma, opt);
}

// ------------------------------ spectral flow -------------------------------
//
// Signed count of eigenvalue branches of H(t) crossing the level ε, where ε is
// chosen strictly between 0 and the smallest positive eigenvalue of both H(0)
// and H(1) ("count the eigenvalues that cross ε").

struct SpectralFlowOptions {
    double isolate_window = 1e-6;
    double kernel_floor = 1e-9;
    int max_depth = 34;
    std::optional<double> force_epsilon;
};

namespace detail {

inline RealVector herm_eigs(const Matrix& H) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("spectral_flow: eigensolver failed");
    return es.eigenvalues();
}

inline int count_below(const RealVector& ev, double level) {
    int n = 0;
    for (Index i = 0; i < ev.size(); ++i)
        if (ev(i) < level) ++n;
    return n;
}

struct SfNode {
    double t;
    RealVector ev;
};

class SfSweep {
public:
    SfSweep(std::function<Matrix(double)> H_of, double eps, double step,
            const SpectralFlowOptions& opt)
        : H_of_(std::move(H_of)), eps_(eps), step_(step), opt_(opt) {}

    SfNode make_node(double t, double shift_room) const {
        double tt = t;
        for (int attempt = 0; attempt < 6; ++attempt) {
            SfNode n{tt, herm_eigs(H_of_(tt))};
            bool clean = true;
            for (Index i = 0; i < n.ev.size(); ++i)
                if (std::abs(n.ev(i) - eps_) < 1e-12 * (1.0 + std::abs(eps_))) clean = false;
            if (clean || shift_room == 0.0) return n;
            tt = t + shift_room * (attempt + 1) / 37.0;
        }
        throw PathError("spectral_flow: could not move a sample off the level");
    }

    int sweep(const SfNode& a, const SfNode& b, int depth, CrossingLog& log) {
        const double width = b.t - a.t;
        double move = 0;
        for (Index i = 0; i < a.ev.size(); ++i)
            move = std::max(move, std::abs(a.ev(i) - b.ev(i)));
        if (move > step_ && depth < opt_.max_depth) {
            SfNode mid = make_node(0.5 * (a.t + b.t), 0.1 * width);
            return sweep(a, mid, depth + 1, log) + sweep(mid, b, depth + 1, log);
        }
        const int count = count_below(a.ev, eps_) - count_below(b.ev, eps_);
        if (count == 0) return 0;
        if (width > opt_.isolate_window && depth < opt_.max_depth) {
            SfNode mid = make_node(0.5 * (a.t + b.t), 0.1 * width);
            return sweep(a, mid, depth + 1, log) + sweep(mid, b, depth + 1, log);
        }
        log.records.push_back({0.5 * (a.t + b.t), count > 0 ? 1 : -1, std::abs(count)});
        return count;
    }

private:
    std::function<Matrix(double)> H_of_;
    double eps_;
    double step_;
    SpectralFlowOptions opt_;
};

// smallest eigenvalue above the kernel floor; +inf if none
inline double smallest_positive(const RealVector& ev, double floor_) {
    double m = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < ev.size(); ++i)
        if (ev(i) > floor_) m = std::min(m, ev(i));
    return m;
}

inline bool has_kernel(const RealVector& ev, double floor_) {
    for (Index i = 0; i < ev.size(); ++i)
        if (std::abs(ev(i)) <= floor_) return true;
    return false;
}

}  // namespace detail

inline IndexResult spectral_flow(const HermitianPath& H,
                                 const SpectralFlowOptions& opt = {}) {
    auto H_of = [&H](double t) { return H.at(t); };
    RealVector e0 = detail::herm_eigs(H.at(0.0));
    RealVector e1 = detail::herm_eigs(H.at(1.0));
    const double scale = 1.0 + std::max(e0.cwiseAbs().maxCoeff(), e1.cwiseAbs().maxCoeff());
    const double floor_ = opt.kernel_floor * scale;

    const double sp0 = detail::smallest_positive(e0, floor_);
    const double sp1 = detail::smallest_positive(e1, floor_);
    double cap = std::min(sp0, sp1);
    if (std::isinf(cap)) {
        if (detail::has_kernel(e0, floor_) || detail::has_kernel(e1, floor_))
            throw PathError("spectral_flow: endpoint with kernel and no positive spectrum "
                            "(no admissible epsilon)");
        cap = 2.0;  // any positive level works; all branches start and end negative
    }
    double eps = 0.5 * cap;
    if (opt.force_epsilon) {
        eps = *opt.force_epsilon;
        if (!(eps > 0) || eps >= cap)
            throw std::invalid_argument("spectral_flow: forced epsilon not admissible");
    }

    IndexResult res;
    res.epsilon = eps;
    detail::SfSweep sweeper(H_of, eps, 0.02 * scale, opt);
    const auto& samples = H.samples();
    std::vector<detail::SfNode> nodes;
    nodes.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double room = (i == 0 || i + 1 == samples.size())
                                ? 0.0
                                : 0.05 * (samples[i + 1].first - samples[i].first);
        nodes.push_back(sweeper.make_node(samples[i].first, room));
    }
    int total = 0;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
        total += sweeper.sweep(nodes[i], nodes[i + 1], 0, res.log);
    res.value = total;
    return res;
}

// ----------------------------- geodesic paths -------------------------------

// Grassmannian geodesic from L0 to L1 through the relative-unitary logarithm;
// the eigenvalue -1 branch is sent to +pi.
inline LagrangianPath geodesic_path(const Lagrangian& L0, const Lagrangian& L1,
                                    double step_cap = 0.2) {
    require_same_space(L0, L1);
    const SpacePtr sp = L0.space();
    Matrix W0 = lagrangian_unitary(L0);
    Matrix V = W0.adjoint() * lagrangian_unitary(L1);
    Eigen::ComplexEigenSolver<Matrix> es(V);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("geodesic_path: eigensolver failed");
    Matrix Q = es.eigenvectors();
    Vector lambda = es.eigenvalues();
    auto eval = [sp, W0, Q, lambda](double t) {
        Vector powers(lambda.size());
        for (Index i = 0; i < lambda.size(); ++i) {
            double a = std::arg(lambda(i));
            if (a <= -M_PI + 1e-14) a = M_PI;
            powers(i) = std::polar(1.0, a * t);
        }
        Matrix Vt = Q * powers.asDiagonal() * Q.inverse();
        return lagrangian_from_unitary(sp, W0 * Vt);
    };
    return LagrangianPath(eval, step_cap);
}

}  // namespace splitflow
