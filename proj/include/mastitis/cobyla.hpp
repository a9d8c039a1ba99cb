#pragma once

// COBYLA: derivative-free minimisation under inequality constraints g_i(x) >= 0.
//
// Powell's method keeps n+1 interpolation points (a simplex), fits linear
// models of the objective and every constraint through them, and steps to the
// minimiser of the linearised problem inside a trust region of radius rho.
// Steps are accepted on an l-infinity merit function f + mu * max violation
// whose penalty mu grows whenever the linear model says it has to. When no
// more progress is possible at the current radius, rho is halved, down to
// rho_end.
//
// The control flow follows Powell's reference implementation; the step
// subproblem (trust_region_step) is his TRSTLP routine.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace mastitis::cobyla {

using Function = std::function<double(std::span<const double>)>;

struct OptProblem {
    std::vector<double> x0;
    Function objective;
    std::vector<Function> constraints;  // feasible when every g_i(x) >= 0
    double rho_begin = 0.25;
    double rho_end = 1e-6;
    std::size_t max_evals = 0;  // 0 selects 2000 * n

    std::size_t dimension() const { return x0.size(); }
    std::size_t budget() const { return max_evals ? max_evals : 2000 * std::max<std::size_t>(1, x0.size()); }
};

enum class Status { Converged, MaxEvals, DegenerateSimplex };

struct OptResult {
    std::vector<double> x_best;
    double f_best = std::numeric_limits<double>::quiet_NaN();
    double max_violation = 0.0;  // max_i max(0, -g_i(x_best))
    Status status = Status::Converged;
    std::size_t n_evals = 0;
    double final_rho = 0.0;
    /// Merit f + mu * violation of the best vertex, recorded with mu each time
    /// the best vertex is (re)selected.
    std::vector<std::pair<double, double>> merit_trace;
};

inline bool check_feasible(const OptProblem& problem, std::span<const double> x, double tol) {
    for (const auto& g : problem.constraints)
        if (!(g(x) >= -tol)) return false;
    return true;
}

namespace detail {

/// Column-major dense matrix with bounds-free element access.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), data_(rows * cols, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return data_[j * rows_ + i]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[j * rows_ + i]; }

private:
    std::size_t rows_ = 0;
    std::vector<double> data_;
};

/// Step dx for the linearised problem: constraints a_k . dx >= b_k (k < m),
/// objective -a_m . dx, with |dx| <= rho. Stage one minimises the largest
/// violation; any remaining freedom then reduces the objective without making
/// the largest violation worse. Returns false when degeneracy stopped dx short
/// of the trust-region boundary.
inline bool trust_region_step(std::size_t n, std::size_t m, const Matrix& a, std::span<const double> b, double rho,
                              std::vector<double>& dx) {
    Matrix z(n, n);
    std::vector<double> zdota(n + 1, 0.0), vmultc(m + 1, 0.0), vmultd(m + 1, 0.0), sdirn(n, 0.0), dxnew(n, 0.0);
    std::vector<std::size_t> iact(m + 1, 0);
    for (std::size_t i = 0; i < n; ++i) z(i, i) = 1.0;
    dx.assign(n, 0.0);

    bool full = true;
    std::size_t mcon = m;  // number of rows in play; m + 1 once the objective joins
    std::size_t nact = 0;
    double resmax = 0.0, resold = 0.0;
    std::ptrdiff_t icon = -1;
    for (std::size_t k = 0; k < m; ++k)
        if (b[k] > resmax) {
            resmax = b[k];
            icon = std::ptrdiff_t(k);
        }
    for (std::size_t k = 0; k < m; ++k) {
        iact[k] = k;
        vmultc[k] = resmax - b[k];
    }

    auto negligible = [](double sum, double abs_sum) {
        const double acca = abs_sum + 0.1 * std::abs(sum);
        const double accb = abs_sum + 0.2 * std::abs(sum);
        return abs_sum >= acca || acca >= accb;
    };
    auto rotate = [&](std::size_t k, std::size_t kp, double alpha, double beta) {
        for (std::size_t i = 0; i < n; ++i) {
            const double t = alpha * z(i, kp) + beta * z(i, k);
            z(i, kp) = alpha * z(i, k) - beta * z(i, kp);
            z(i, k) = t;
        }
    };
    // Moves active position `from` to the end of the active list.
    auto cycle_to_end = [&](std::size_t from) {
        if (from + 1 >= nact) return;
        const std::size_t isave = iact[from];
        const double vsave = vmultc[from];
        std::size_t k = from;
        do {
            const std::size_t kp = k + 1;
            const std::size_t kk = iact[kp];
            double sp = 0.0;
            for (std::size_t i = 0; i < n; ++i) sp += z(i, k) * a(i, kk);
            const double temp = std::sqrt(sp * sp + zdota[kp] * zdota[kp]);
            const double alpha = zdota[kp] / temp, beta = sp / temp;
            zdota[kp] = alpha * zdota[k];
            zdota[k] = temp;
            rotate(k, kp, alpha, beta);
            iact[k] = kk;
            vmultc[k] = vmultc[kp];
            k = kp;
        } while (k + 1 < nact);
        iact[k] = isave;
        vmultc[k] = vsave;
    };

    enum class Next { StartStage, Iterate, SecondStage, Finish, Short };
    Next next = resmax == 0.0 ? Next::SecondStage : Next::StartStage;
    double optold = 0.0;
    int icount = 0;
    std::size_t nactx = 0;

    while (true) {
        if (next == Next::SecondStage) {
            mcon = m + 1;
            icon = std::ptrdiff_t(m);
            iact[m] = m;
            vmultc[m] = 0.0;
            next = Next::StartStage;
        }
        if (next == Next::Short) {
            if (mcon == m) {
                next = Next::SecondStage;
                continue;
            }
            full = false;
            break;
        }
        if (next == Next::Finish) break;
        if (next == Next::StartStage) {
            optold = 0.0;
            icount = 0;
            next = Next::Iterate;
        }

        // Stop a stage after three iterations without improvement.
        double optnew = 0.0;
        if (mcon == m) {
            optnew = resmax;
        } else {
            for (std::size_t i = 0; i < n; ++i) optnew -= dx[i] * a(i, m);
        }
        if (icount == 0 || optnew < optold) {
            optold = optnew;
            nactx = nact;
            icount = 3;
        } else if (nact > nactx) {
            nactx = nact;
            icount = 3;
        } else if (--icount == 0) {
            next = Next::Short;
            continue;
        }

        if (icon >= std::ptrdiff_t(nact)) {
            // Add constraint iact[icon] to the active set.
            const std::size_t kk = iact[std::size_t(icon)];
            for (std::size_t i = 0; i < n; ++i) dxnew[i] = a(i, kk);
            double tot = 0.0;
            for (std::size_t k = n; k-- > nact;) {
                double sp = 0.0, spabs = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double t = z(i, k) * dxnew[i];
                    sp += t;
                    spabs += std::abs(t);
                }
                if (negligible(sp, spabs)) sp = 0.0;
                if (tot == 0.0) {
                    tot = sp;
                } else {
                    const std::size_t kp = k + 1;
                    const double temp = std::sqrt(sp * sp + tot * tot);
                    const double alpha = sp / temp, beta = tot / temp;
                    tot = temp;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double t = alpha * z(i, k) + beta * z(i, kp);
                        z(i, kp) = alpha * z(i, kp) - beta * z(i, k);
                        z(i, k) = t;
                    }
                }
            }

            if (tot != 0.0) {
                ++nact;
                zdota[nact - 1] = tot;
                vmultc[std::size_t(icon)] = vmultc[nact - 1];
                vmultc[nact - 1] = 0.0;
            } else {
                // The new gradient is a combination of active ones: drop one.
                double ratio = -1.0;
                std::size_t iout = 0;
                for (std::size_t k = nact; k-- > 0;) {
                    double zdotv = 0.0, zdvabs = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double t = z(i, k) * dxnew[i];
                        zdotv += t;
                        zdvabs += std::abs(t);
                    }
                    if (!negligible(zdotv, zdvabs)) {
                        const double temp = zdotv / zdota[k];
                        if (temp > 0.0 && iact[k] < m) {
                            const double tempa = vmultc[k] / temp;
                            if (ratio < 0.0 || tempa < ratio) {
                                ratio = tempa;
                                iout = k;
                            }
                        }
                        if (k >= 1) {
                            const std::size_t kw = iact[k];
                            for (std::size_t i = 0; i < n; ++i) dxnew[i] -= temp * a(i, kw);
                        }
                        vmultd[k] = temp;
                    } else {
                        vmultd[k] = 0.0;
                    }
                }
                if (ratio < 0.0) {
                    next = Next::Short;
                    continue;
                }
                for (std::size_t k = 0; k < nact; ++k) vmultc[k] = std::max(0.0, vmultc[k] - ratio * vmultd[k]);
                cycle_to_end(iout);
                double temp = 0.0;
                for (std::size_t i = 0; i < n; ++i) temp += z(i, nact - 1) * a(i, kk);
                if (temp == 0.0) {
                    next = Next::Short;
                    continue;
                }
                zdota[nact - 1] = temp;
                vmultc[std::size_t(icon)] = 0.0;
                vmultc[nact - 1] = ratio;
            }

            iact[std::size_t(icon)] = iact[nact - 1];
            iact[nact - 1] = kk;
            // In stage two the objective stays the last active row.
            if (mcon > m && kk != m) {
                const std::size_t k = nact - 2;
                double sp = 0.0;
                for (std::size_t i = 0; i < n; ++i) sp += z(i, k) * a(i, kk);
                const double temp = std::sqrt(sp * sp + zdota[nact - 1] * zdota[nact - 1]);
                const double alpha = zdota[nact - 1] / temp, beta = sp / temp;
                zdota[nact - 1] = alpha * zdota[k];
                zdota[k] = temp;
                rotate(k, nact - 1, alpha, beta);
                iact[nact - 1] = iact[k];
                iact[k] = kk;
                std::swap(vmultc[k], vmultc[nact - 1]);
            }
            if (mcon == m) {
                const std::size_t last = iact[nact - 1];
                double temp = 0.0;
                for (std::size_t i = 0; i < n; ++i) temp += sdirn[i] * a(i, last);
                temp = (temp - 1.0) / zdota[nact - 1];
                for (std::size_t i = 0; i < n; ++i) sdirn[i] -= temp * z(i, nact - 1);
            }
        } else {
            // Delete constraint iact[icon] from the active set.
            cycle_to_end(std::size_t(icon));
            --nact;
            if (mcon == m) {
                double temp = 0.0;
                for (std::size_t i = 0; i < n; ++i) temp += sdirn[i] * z(i, nact);
                for (std::size_t i = 0; i < n; ++i) sdirn[i] -= temp * z(i, nact);
            }
        }
        if (mcon > m) {
            const double temp = 1.0 / zdota[nact - 1];
            for (std::size_t i = 0; i < n; ++i) sdirn[i] = temp * z(i, nact - 1);
        }

        // Step to the trust-region boundary, or far enough to clear the
        // largest violation in stage one.
        double dd = rho * rho, sd = 0.0, ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(dx[i]) >= 1e-6 * rho) dd -= dx[i] * dx[i];
            sd += dx[i] * sdirn[i];
            ss += sdirn[i] * sdirn[i];
        }
        if (dd <= 0.0) {
            next = Next::Short;
            continue;
        }
        double temp = std::sqrt(ss * dd);
        if (std::abs(sd) >= 1e-6 * temp) temp = std::sqrt(ss * dd + sd * sd);
        const double stpful = dd / (temp + sd);
        double step = stpful;
        if (mcon == m) {
            const double acca = step + 0.1 * resmax, accb = step + 0.2 * resmax;
            if (step >= acca || acca >= accb) {
                next = Next::SecondStage;
                continue;
            }
            step = std::min(step, resmax);
        }

        for (std::size_t i = 0; i < n; ++i) dxnew[i] = dx[i] + step * sdirn[i];
        if (mcon == m) {
            resold = resmax;
            resmax = 0.0;
            for (std::size_t k = 0; k < nact; ++k) {
                const std::size_t kk = iact[k];
                double t = b[kk];
                for (std::size_t i = 0; i < n; ++i) t -= a(i, kk) * dxnew[i];
                resmax = std::max(resmax, t);
            }
        }

        // Multipliers the active rows would have at dxnew.
        for (std::size_t k = nact; k-- > 0;) {
            double zdotw = 0.0, zdwabs = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double t = z(i, k) * dxnew[i];
                zdotw += t;
                zdwabs += std::abs(t);
            }
            if (negligible(zdotw, zdwabs)) zdotw = 0.0;
            vmultd[k] = zdotw / zdota[k];
            if (k >= 1) {
                const std::size_t kk = iact[k];
                for (std::size_t i = 0; i < n; ++i) dxnew[i] -= vmultd[k] * a(i, kk);
            }
        }
        if (mcon > m) vmultd[nact - 1] = std::max(0.0, vmultd[nact - 1]);

        // Residuals of the inactive rows at dxnew.
        for (std::size_t i = 0; i < n; ++i) dxnew[i] = dx[i] + step * sdirn[i];
        for (std::size_t k = nact; k < mcon; ++k) {
            const std::size_t kk = iact[k];
            double sum = resmax - b[kk];
            double sumabs = resmax + std::abs(b[kk]);
            for (std::size_t i = 0; i < n; ++i) {
                const double t = a(i, kk) * dxnew[i];
                sum += t;
                sumabs += std::abs(t);
            }
            if (negligible(sum, sumabs)) sum = 0.0;
            vmultd[k] = sum;
        }

        // Largest fraction of the step that keeps every multiplier and
        // residual nonnegative.
        double ratio = 1.0;
        icon = -1;
        for (std::size_t k = 0; k < mcon; ++k)
            if (vmultd[k] < 0.0) {
                const double t = vmultc[k] / (vmultc[k] - vmultd[k]);
                if (t < ratio) {
                    ratio = t;
                    icon = std::ptrdiff_t(k);
                }
            }
        const double keep = 1.0 - ratio;
        for (std::size_t i = 0; i < n; ++i) dx[i] = keep * dx[i] + ratio * dxnew[i];
        for (std::size_t k = 0; k < mcon; ++k) vmultc[k] = std::max(0.0, keep * vmultc[k] + ratio * vmultd[k]);
        if (mcon == m) resmax = resold + ratio * (resmax - resold);

        if (icon >= 0) {
            next = Next::Iterate;
        } else if (step == stpful) {
            next = Next::Finish;
        } else {
            next = Next::SecondStage;
        }
    }
    return full;
}

/// Gauss-Jordan inverse with partial pivoting; false when singular.
inline bool invert(std::size_t n, const Matrix& in, Matrix& out) {
    Matrix work = in;
    out = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(work(r, c)) > std::abs(work(piv, c))) piv = r;
        if (work(piv, c) == 0.0 || !std::isfinite(work(piv, c))) return false;
        if (piv != c)
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(work(c, j), work(piv, j));
                std::swap(out(c, j), out(piv, j));
            }
        const double d = work(c, c);
        for (std::size_t j = 0; j < n; ++j) {
            work(c, j) /= d;
            out(c, j) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c || work(r, c) == 0.0) continue;
            const double f = work(r, c);
            for (std::size_t j = 0; j < n; ++j) {
                work(r, j) -= f * work(c, j);
                out(r, j) -= f * out(c, j);
            }
        }
    }
    return true;
}

class Solver {
public:
    explicit Solver(const OptProblem& p)
        : p_(p),
          n_(p.dimension()),
          m_(p.constraints.size()),
          budget_(p.budget()),
          sim_(n_, n_ + 1),
          simi_(n_, n_),
          datmat_(m_ + 2, n_ + 1),
          a_(n_, m_ + 1),
          vertex_eval_(n_ + 1, 0),
          con_(m_ + 2, 0.0),
          vsig_(n_),
          veta_(n_),
          sigbar_(n_),
          dx_(n_),
          w_(n_),
          x_(p.x0) {}

    OptResult run() {
        OptResult result;
        rho_ = p_.rho_begin;
        for (std::size_t i = 0; i < n_; ++i) {
            sim_(i, i) = rho_;
            simi_(i, i) = 1.0 / rho_;
            sim_(i, n_) = x_[i];
        }
        jdrop_ = n_;

        Stage stage = Stage::Evaluate;
        while (stage != Stage::Done) {
            switch (stage) {
                case Stage::Evaluate: stage = evaluate(); break;
                case Stage::SelectPole: stage = select_pole(result); break;
                case Stage::TrustRegionStep: stage = trust_region(); break;
                case Stage::UpdateSimplex: stage = update_simplex(); break;
                case Stage::ReduceRadius: stage = reduce_radius(); break;
                case Stage::Done: break;
            }
        }

        result.status = status_;
        result.n_evals = nfvals_;
        result.final_rho = rho_;
        if (have_pole_) {
            result.x_best.resize(n_);
            for (std::size_t i = 0; i < n_; ++i) result.x_best[i] = sim_(i, n_);
            result.f_best = datmat_(m_, n_);
            result.max_violation = datmat_(m_ + 1, n_);
        } else {
            result.x_best = p_.x0;
        }
        return result;
    }

private:
    enum class Stage { Evaluate, SelectPole, TrustRegionStep, UpdateSimplex, ReduceRadius, Done };

    static constexpr double kAlpha = 0.25, kBeta = 2.1, kGamma = 0.5, kDelta = 1.1;

    double merit(std::size_t j) const { return datmat_(m_, j) + parmu_ * datmat_(m_ + 1, j); }

    /// Vertex j is a strictly better pole than `best`: lower merit, then lower
    /// violation, then lower objective, then earlier evaluation.
    bool better_vertex(std::size_t j, std::size_t best) const {
        const double mj = merit(j), mb = merit(best);
        if (mj != mb) return mj < mb;
        if (datmat_(m_ + 1, j) != datmat_(m_ + 1, best)) return datmat_(m_ + 1, j) < datmat_(m_ + 1, best);
        if (datmat_(m_, j) != datmat_(m_, best)) return datmat_(m_, j) < datmat_(m_, best);
        return vertex_eval_[j] < vertex_eval_[best];
    }

    Stage evaluate() {
        if (nfvals_ >= budget_) {
            status_ = Status::MaxEvals;
            return Stage::Done;
        }
        ++nfvals_;
        f_ = p_.objective(x_);
        resmax_ = 0.0;
        bool finite = std::isfinite(f_);
        for (std::size_t k = 0; k < m_; ++k) {
            con_[k] = p_.constraints[k](x_);
            finite = finite && std::isfinite(con_[k]);
            resmax_ = std::max(resmax_, -con_[k]);
        }
        if (!finite) {
            status_ = Status::DegenerateSimplex;
            return Stage::Done;
        }
        con_[m_] = f_;
        con_[m_ + 1] = resmax_;
        if (ibrnch_) return Stage::UpdateSimplex;

        // Building the initial simplex, or completing a geometry step.
        for (std::size_t k = 0; k < m_ + 2; ++k) datmat_(k, jdrop_) = con_[k];
        vertex_eval_[jdrop_] = nfvals_;
        if (jdrop_ == n_) have_pole_ = true;
        if (nfvals_ <= n_ + 1) {
            if (jdrop_ < n_) {
                if (datmat_(m_, n_) <= f_) {
                    x_[jdrop_] = sim_(jdrop_, n_);
                } else {
                    // The new point becomes the pole.
                    sim_(jdrop_, n_) = x_[jdrop_];
                    for (std::size_t k = 0; k < m_ + 2; ++k) {
                        datmat_(k, jdrop_) = datmat_(k, n_);
                        datmat_(k, n_) = con_[k];
                    }
                    std::swap(vertex_eval_[jdrop_], vertex_eval_[n_]);
                    for (std::size_t k = 0; k <= jdrop_; ++k) {
                        sim_(jdrop_, k) = -rho_;
                        double temp = 0.0;
                        for (std::size_t i = k; i <= jdrop_; ++i) temp -= simi_(i, k);
                        simi_(jdrop_, k) = temp;
                    }
                }
            }
            if (nfvals_ <= n_) {
                jdrop_ = nfvals_ - 1;
                x_[jdrop_] += rho_;
                return Stage::Evaluate;
            }
        }
        ibrnch_ = true;
        return Stage::SelectPole;
    }

    Stage select_pole(OptResult& result) {
        std::size_t nbest = n_;
        for (std::size_t j = 0; j < n_; ++j)
            if (better_vertex(j, nbest)) nbest = j;
        if (nbest < n_) {
            for (std::size_t k = 0; k < m_ + 2; ++k) std::swap(datmat_(k, nbest), datmat_(k, n_));
            std::swap(vertex_eval_[nbest], vertex_eval_[n_]);
            for (std::size_t i = 0; i < n_; ++i) {
                const double temp = sim_(i, nbest);
                sim_(i, nbest) = 0.0;
                sim_(i, n_) += temp;
                double tempa = 0.0;
                for (std::size_t k = 0; k < n_; ++k) {
                    sim_(i, k) -= temp;
                    tempa -= simi_(k, i);
                }
                simi_(nbest, i) = tempa;
            }
        }
        result.merit_trace.emplace_back(parmu_, merit(n_));

        if (inverse_error() > 0.1) {
            // Rounding has spoiled simi; rebuild it from sim.
            Matrix fresh;
            Matrix displacement(n_, n_);
            for (std::size_t i = 0; i < n_; ++i)
                for (std::size_t j = 0; j < n_; ++j) displacement(i, j) = sim_(i, j);
            if (!invert(n_, displacement, fresh) || (simi_ = fresh, inverse_error() > 0.1)) {
                if (++repair_failures_ >= 2) {
                    status_ = Status::DegenerateSimplex;
                    return Stage::Done;
                }
            }
        }

        // Linear models: a(:,k) is the gradient of constraint k and
        // a(:,m) minus the gradient of the objective.
        for (std::size_t k = 0; k <= m_; ++k) {
            con_[k] = -datmat_(k, n_);
            for (std::size_t j = 0; j < n_; ++j) w_[j] = datmat_(k, j) + con_[k];
            for (std::size_t i = 0; i < n_; ++i) {
                double temp = 0.0;
                for (std::size_t j = 0; j < n_; ++j) temp += w_[j] * simi_(j, i);
                a_(i, k) = k == m_ ? -temp : temp;
            }
        }

        // Is the simplex acceptably shaped?
        iflag_ = true;
        parsig_ = kAlpha * rho_;
        const double pareta = kBeta * rho_;
        for (std::size_t j = 0; j < n_; ++j) {
            double wsig = 0.0, weta = 0.0;
            for (std::size_t i = 0; i < n_; ++i) {
                wsig += simi_(j, i) * simi_(j, i);
                weta += sim_(i, j) * sim_(i, j);
            }
            vsig_[j] = 1.0 / std::sqrt(wsig);
            veta_[j] = std::sqrt(weta);
            if (vsig_[j] < parsig_ || veta_[j] > pareta) iflag_ = false;
        }
        if (ibrnch_ || iflag_) return Stage::TrustRegionStep;

        // Geometry step: replace the vertex that spoils the simplex most.
        std::ptrdiff_t jdrop = -1;
        double temp = pareta;
        for (std::size_t j = 0; j < n_; ++j)
            if (veta_[j] > temp) {
                jdrop = std::ptrdiff_t(j);
                temp = veta_[j];
            }
        if (jdrop < 0)
            for (std::size_t j = 0; j < n_; ++j)
                if (vsig_[j] < temp) {
                    jdrop = std::ptrdiff_t(j);
                    temp = vsig_[j];
                }
        jdrop_ = std::size_t(jdrop);

        temp = kGamma * rho_ * vsig_[jdrop_];
        for (std::size_t i = 0; i < n_; ++i) dx_[i] = temp * simi_(jdrop_, i);
        double cvmaxp = 0.0, cvmaxm = 0.0, sum = 0.0;
        for (std::size_t k = 0; k <= m_; ++k) {
            sum = 0.0;
            for (std::size_t i = 0; i < n_; ++i) sum += a_(i, k) * dx_[i];
            if (k < m_) {
                const double c = datmat_(k, n_);
                cvmaxp = std::max(cvmaxp, -sum - c);
                cvmaxm = std::max(cvmaxm, sum - c);
            }
        }
        const double dxsign = parmu_ * (cvmaxp - cvmaxm) > sum + sum ? -1.0 : 1.0;

        temp = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            dx_[i] *= dxsign;
            sim_(i, jdrop_) = dx_[i];
            temp += simi_(jdrop_, i) * dx_[i];
        }
        replace_vertex_inverse(temp);
        for (std::size_t i = 0; i < n_; ++i) x_[i] = sim_(i, n_) + dx_[i];
        return Stage::Evaluate;
    }

    Stage trust_region() {
        const bool full = trust_region_step(n_, m_, a_, con_, rho_, dx_);
        if (!full) {
            double temp = 0.0;
            for (double d : dx_) temp += d * d;
            if (temp < 0.25 * rho_ * rho_) {
                ibrnch_ = true;
                return Stage::ReduceRadius;
            }
        }

        // Predicted change of the objective and of the largest violation.
        double resnew = 0.0, sum = 0.0;
        con_[m_] = 0.0;
        for (std::size_t k = 0; k <= m_; ++k) {
            sum = con_[k];
            for (std::size_t i = 0; i < n_; ++i) sum -= a_(i, k) * dx_[i];
            if (k < m_) resnew = std::max(resnew, sum);
        }

        double barmu = 0.0;
        prerec_ = datmat_(m_ + 1, n_) - resnew;
        if (prerec_ > 0.0) barmu = sum / prerec_;
        if (parmu_ < 1.5 * barmu) {
            parmu_ = 2.0 * barmu;
            for (std::size_t j = 0; j < n_; ++j)
                if (better_vertex(j, n_)) return Stage::SelectPole;
        }
        prerem_ = parmu_ * prerec_ - sum;

        for (std::size_t i = 0; i < n_; ++i) x_[i] = sim_(i, n_) + dx_[i];
        ibrnch_ = true;
        return Stage::Evaluate;
    }

    Stage update_simplex() {
        const double vmold = merit(n_);
        const double vmnew = f_ + parmu_ * resmax_;
        double trured = vmold - vmnew;
        if (parmu_ == 0.0 && f_ == datmat_(m_, n_)) {
            prerem_ = prerec_;
            trured = datmat_(m_ + 1, n_) - resmax_;
        }

        // Pick the vertex to replace; mandatory when the merit improved.
        double ratio = trured <= 0.0 ? 1.0 : 0.0;
        std::ptrdiff_t jdrop = -1;
        for (std::size_t j = 0; j < n_; ++j) {
            double temp = 0.0;
            for (std::size_t i = 0; i < n_; ++i) temp += simi_(j, i) * dx_[i];
            temp = std::abs(temp);
            if (temp > ratio) {
                jdrop = std::ptrdiff_t(j);
                ratio = temp;
            }
            sigbar_[j] = temp * vsig_[j];
        }
        double edgmax = kDelta * rho_;
        std::ptrdiff_t l = -1;
        for (std::size_t j = 0; j < n_; ++j)
            if (sigbar_[j] >= parsig_ || sigbar_[j] >= vsig_[j]) {
                double temp = veta_[j];
                if (trured > 0.0) {
                    temp = 0.0;
                    for (std::size_t i = 0; i < n_; ++i) temp += (dx_[i] - sim_(i, j)) * (dx_[i] - sim_(i, j));
                    temp = std::sqrt(temp);
                }
                if (temp > edgmax) {
                    l = std::ptrdiff_t(j);
                    edgmax = temp;
                }
            }
        if (l >= 0) jdrop = l;
        if (jdrop < 0) return Stage::ReduceRadius;
        jdrop_ = std::size_t(jdrop);

        double temp = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            sim_(i, jdrop_) = dx_[i];
            temp += simi_(jdrop_, i) * dx_[i];
        }
        replace_vertex_inverse(temp);
        for (std::size_t k = 0; k < m_ + 2; ++k) datmat_(k, jdrop_) = con_[k];
        vertex_eval_[jdrop_] = nfvals_;

        if (trured > 0.0 && trured >= 0.1 * prerem_) return Stage::SelectPole;
        return Stage::ReduceRadius;
    }

    Stage reduce_radius() {
        if (!iflag_) {
            ibrnch_ = false;
            return Stage::SelectPole;
        }
        if (rho_ > p_.rho_end) {
            rho_ *= 0.5;
            if (rho_ <= 1.5 * p_.rho_end) rho_ = p_.rho_end;
            if (parmu_ > 0.0) {
                double denom = 0.0, cmin = 0.0, cmax = 0.0;
                for (std::size_t k = 0; k <= m_; ++k) {
                    cmin = cmax = datmat_(k, n_);
                    for (std::size_t i = 0; i < n_; ++i) {
                        cmin = std::min(cmin, datmat_(k, i));
                        cmax = std::max(cmax, datmat_(k, i));
                    }
                    if (k < m_ && cmin < 0.5 * cmax) {
                        const double temp = std::max(cmax, 0.0) - cmin;
                        denom = denom <= 0.0 ? temp : std::min(denom, temp);
                    }
                }
                // cmin/cmax now describe the objective values on the simplex.
                if (denom == 0.0) {
                    parmu_ = 0.0;
                } else if (cmax - cmin < parmu_ * denom) {
                    parmu_ = (cmax - cmin) / denom;
                }
            }
            return Stage::SelectPole;
        }
        status_ = Status::Converged;
        return Stage::Done;
    }

    /// Rank-one update of simi after column jdrop_ of sim became dx_.
    void replace_vertex_inverse(double pivot) {
        for (std::size_t i = 0; i < n_; ++i) simi_(jdrop_, i) /= pivot;
        for (std::size_t j = 0; j < n_; ++j) {
            if (j == jdrop_) continue;
            double temp = 0.0;
            for (std::size_t i = 0; i < n_; ++i) temp += simi_(j, i) * dx_[i];
            for (std::size_t i = 0; i < n_; ++i) simi_(j, i) -= temp * simi_(jdrop_, i);
        }
    }

    double inverse_error() const {
        double error = 0.0;
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < n_; ++j) {
                double temp = i == j ? -1.0 : 0.0;
                for (std::size_t k = 0; k < n_; ++k) temp += simi_(i, k) * sim_(k, j);
                error = std::max(error, std::abs(temp));
            }
        return error;
    }

    const OptProblem& p_;
    std::size_t n_, m_, budget_;
    Matrix sim_, simi_, datmat_, a_;
    std::vector<std::size_t> vertex_eval_;
    std::vector<double> con_, vsig_, veta_, sigbar_, dx_, w_, x_;
    double rho_ = 0.0, parmu_ = 0.0, parsig_ = 0.0, prerec_ = 0.0, prerem_ = 0.0;
    double f_ = 0.0, resmax_ = 0.0;
    std::size_t nfvals_ = 0, jdrop_ = 0;
    int repair_failures_ = 0;
    bool ibrnch_ = false, iflag_ = false, have_pole_ = false;
    Status status_ = Status::Converged;
};

}  // namespace detail

/// Runs COBYLA. Deterministic: identical problems give identical results.
inline OptResult minimize(const OptProblem& problem) {
    if (problem.x0.empty()) throw std::invalid_argument("cobyla: dimension must be >= 1");
    for (double v : problem.x0)
        if (!std::isfinite(v)) throw std::invalid_argument("cobyla: x0 must be finite");
    if (!(problem.rho_begin > problem.rho_end && problem.rho_end > 0))
        throw std::invalid_argument("cobyla: need rho_begin > rho_end > 0");
    if (!problem.objective) throw std::invalid_argument("cobyla: objective missing");
    return detail::Solver(problem).run();
}

}  // namespace mastitis::cobyla
