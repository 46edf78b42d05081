#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "statdiff/errors.hpp"
#include "statdiff/kernel.hpp"
#include "statdiff/models.hpp"
#include "statdiff/parallel.hpp"

namespace statdiff {

/// N x d sample matrix, one sample per row.
using Samples = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// L_x L_x' k(x, x') at a single pair, with the kernel quantities it was built from.
struct PairTerm {
  double value = 0.0;
  double k = 0.0;
  double sq_dist = 0.0;
};

/// Partial derivatives of L_x L_x' k with respect to f(x), f(x'), Sigma(x), Sigma(x').
struct PairGradient {
  PairTerm term;
  Eigen::VectorXd d_fx;
  Eigen::VectorXd d_fxp;
  Eigen::VectorXd d_sx;
  Eigen::VectorXd d_sxp;
};

struct UStatEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

struct KdsGradient {
  double value = 0.0;
  Eigen::VectorXd theta;     // same layout as the model parameters
  Eigen::VectorXd delta;     // one entry per intervention target
  Eigen::VectorXd log_beta;  // one entry per intervention target
};

namespace detail {

inline constexpr Eigen::Index kPairBlockRows = 32;

// Generator bilinear form for constant diagonal diffusions.
//
// With g = 1/gamma^2, r = x - x', a = Sigma(x), c = Sigma(x'),
// P_a = g^2 sum a_i r_i^2 - g sum a_i (and P_c likewise):
//   f.H.f'          = g k (f.f' - g (r.f)(r.f'))
//   1/2 f.grad Lap' = 1/2 g k (2 g sum c_i r_i f_i - P_c (r.f))
//   1/2 f'.grad Lap = 1/2 g k (-2 g sum a_i r_i f'_i + P_a (r.f'))
//   1/4 Lap Lap'    = 1/4 k (2 g^2 sum a_i c_i - 4 g^3 sum a_i c_i r_i^2 + P_a P_c)
//
// When the gradient pointers are non-null, scale * (partial derivative) is
// added to them. gsx and gsxp may alias.
inline PairTerm pair_kernel(Eigen::Index d, double g, const double* x, const double* xp,
                            const double* fx, const double* fxp, const double* sx,
                            const double* sxp, double* r, double scale = 0.0,
                            double* gfx = nullptr, double* gfxp = nullptr,
                            double* gsx = nullptr, double* gsxp = nullptr) {
  double rsq = 0.0, rf = 0.0, rfp = 0.0, ff = 0.0;
  double qa = 0.0, qc = 0.0, ca = 0.0, cc = 0.0;
  double crf = 0.0, arfp = 0.0, ac = 0.0, acr = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double ri = x[i] - xp[i];
    const double ri2 = ri * ri;
    r[i] = ri;
    rsq += ri2;
    rf += ri * fx[i];
    rfp += ri * fxp[i];
    ff += fx[i] * fxp[i];
    qa += sx[i] * ri2;
    qc += sxp[i] * ri2;
    ca += sx[i];
    cc += sxp[i];
    crf += sxp[i] * ri * fx[i];
    arfp += sx[i] * ri * fxp[i];
    const double sac = sx[i] * sxp[i];
    ac += sac;
    acr += sac * ri2;
  }
  const double k = std::exp(-0.5 * g * rsq);
  const double gk = g * k;
  const double pa = g * g * qa - g * ca;
  const double pc = g * g * qc - g * cc;
  const double t1 = gk * (ff - g * rf * rfp);
  const double t2 = 0.5 * gk * (2.0 * g * crf - pc * rf);
  const double t3 = 0.5 * gk * (-2.0 * g * arfp + pa * rfp);
  const double t4 = 0.25 * k * (2.0 * g * g * ac - 4.0 * g * g * g * acr + pa * pc);
  if (gfx != nullptr) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double ri = r[i];
      const double ri2 = ri * ri;
      gfx[i] += scale * (gk * (fxp[i] - g * ri * rfp) + 0.5 * gk * ri * (2.0 * g * sxp[i] - pc));
      gfxp[i] += scale * (gk * (fx[i] - g * ri * rf) - 0.5 * gk * ri * (2.0 * g * sx[i] - pa));
      const double lap_w = g * g * ri2 - g;
      const double d_c = 0.5 * gk * (2.0 * g * ri * fx[i] - lap_w * rf) +
                         0.25 * k * (2.0 * g * g * sx[i] - 4.0 * g * g * g * sx[i] * ri2 + lap_w * pa);
      const double d_a = 0.5 * gk * (-2.0 * g * ri * fxp[i] + lap_w * rfp) +
                         0.25 * k * (2.0 * g * g * sxp[i] - 4.0 * g * g * g * sxp[i] * ri2 + lap_w * pc);
      gsx[i] += scale * d_a;
      gsxp[i] += scale * d_c;
    }
  }
  return PairTerm{t1 + t2 + t3 + t4, k, rsq};
}

inline void require_samples(const Samples& data, Eigen::Index dim, const char* what) {
  if (data.rows() < 2) {
    throw NumericError(std::string(what) + ": estimator undefined for fewer than 2 samples");
  }
  if (data.cols() != dim) {
    throw DomainError(std::string(what) + ": sample dimension " + std::to_string(data.cols()) +
                      " does not match model dimension " + std::to_string(dim));
  }
}

template <DiffusionModel M>
Samples drift_rows(const M& model, const Samples& data) {
  Samples out(data.rows(), data.cols());
  Eigen::VectorXd x(data.cols()), f(data.cols());
  for (Eigen::Index m = 0; m < data.rows(); ++m) {
    x = data.row(m).transpose();
    model.drift_into(x, f);
    out.row(m) = f.transpose();
  }
  return out;
}

// Sum with four interleaved accumulators: vectorizes and has a fixed order.
inline double lane_sum(const double* v, std::size_t len) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
  std::size_t t = 0;
  for (; t + 4 <= len; t += 4) {
    a0 += v[t];
    a1 += v[t + 1];
    a2 += v[t + 2];
    a3 += v[t + 3];
  }
  for (; t < len; ++t) a0 += v[t];
  return (a0 + a1) + (a2 + a3);
}

// Per-partner contractions of r = x_m - x_q (q = base + t) used by the pair term.
struct PairMoments {
  double* rsq;   // sum r_i^2
  double* rf;    // sum r_i f_m,i
  double* rfp;   // sum r_i f_q,i
  double* ff;    // sum f_m,i f_q,i
  double* qs;    // sum S_i r_i^2
  double* crf;   // sum S_i r_i f_m,i
  double* arfp;  // sum S_i r_i f_q,i
  double* acr;   // sum S_i^2 r_i^2
};

// D > 0 fixes the dimension at compile time so the coordinate loop unrolls and
// the partner loop vectorizes; D = 0 handles any dimension.
template <int D>
void pair_moments(Eigen::Index d_runtime, const Eigen::MatrixXd& Xc, const Eigen::MatrixXd& Fc,
                  const Eigen::VectorXd& S, Eigen::Index m, Eigen::Index base, std::size_t len,
                  const PairMoments& out) {
  const Eigen::Index d = D > 0 ? D : d_runtime;
  constexpr int kMax = D > 0 ? D : 1;
  if constexpr (D > 0) {
    double xi[kMax], fi[kMax], si[kMax];
    const double* xq[kMax];
    const double* fq[kMax];
    for (int i = 0; i < D; ++i) {
      xi[i] = Xc(m, i);
      fi[i] = Fc(m, i);
      si[i] = S[i];
      xq[i] = Xc.col(i).data() + base;
      fq[i] = Fc.col(i).data() + base;
    }
    for (std::size_t t = 0; t < len; ++t) {
      double rsq = 0, rf = 0, rfp = 0, ff = 0, qs = 0, crf = 0, arfp = 0, acr = 0;
      for (int i = 0; i < D; ++i) {
        const double r = xi[i] - xq[i][t];
        const double r2 = r * r;
        const double f = fq[i][t];
        rsq += r2;
        rf += r * fi[i];
        rfp += r * f;
        ff += fi[i] * f;
        qs += si[i] * r2;
        crf += si[i] * fi[i] * r;
        arfp += si[i] * r * f;
        acr += si[i] * si[i] * r2;
      }
      out.rsq[t] = rsq;
      out.rf[t] = rf;
      out.rfp[t] = rfp;
      out.ff[t] = ff;
      out.qs[t] = qs;
      out.crf[t] = crf;
      out.arfp[t] = arfp;
      out.acr[t] = acr;
    }
  } else {
    for (double* p : {out.rsq, out.rf, out.rfp, out.ff, out.qs, out.crf, out.arfp, out.acr}) {
      std::fill_n(p, len, 0.0);
    }
    for (Eigen::Index i = 0; i < d; ++i) {
      const double xi = Xc(m, i), fi = Fc(m, i), si = S[i];
      const double* xq = Xc.col(i).data() + base;
      const double* fq = Fc.col(i).data() + base;
      for (std::size_t t = 0; t < len; ++t) {
        const double r = xi - xq[t];
        const double r2 = r * r;
        out.rsq[t] += r2;
        out.rf[t] += r * fi;
        out.rfp[t] += r * fq[t];
        out.ff[t] += fi * fq[t];
        out.qs[t] += si * r2;
        out.crf[t] += si * fi * r;
        out.arfp[t] += si * r * fq[t];
        out.acr[t] += si * si * r2;
      }
    }
  }
}

inline void pair_moments_dispatch(Eigen::Index d, const Eigen::MatrixXd& Xc,
                                  const Eigen::MatrixXd& Fc, const Eigen::VectorXd& S,
                                  Eigen::Index m, Eigen::Index base, std::size_t len,
                                  const PairMoments& out) {
  switch (d) {
    case 1: return pair_moments<1>(d, Xc, Fc, S, m, base, len, out);
    case 2: return pair_moments<2>(d, Xc, Fc, S, m, base, len, out);
    case 3: return pair_moments<3>(d, Xc, Fc, S, m, base, len, out);
    case 4: return pair_moments<4>(d, Xc, Fc, S, m, base, len, out);
    case 5: return pair_moments<5>(d, Xc, Fc, S, m, base, len, out);
    case 6: return pair_moments<6>(d, Xc, Fc, S, m, base, len, out);
    case 8: return pair_moments<8>(d, Xc, Fc, S, m, base, len, out);
    default: return pair_moments<0>(d, Xc, Fc, S, m, base, len, out);
  }
}

struct PairCoefficients {
  const double* k;
  const double* rf;
  const double* rfp;
  const double* P;
  double g;
};

template <int D>
void pair_gradient_pass(Eigen::Index d_runtime, const Eigen::MatrixXd& Xc,
                        const Eigen::MatrixXd& Fc, const Eigen::VectorXd& S, Eigen::Index m,
                        Eigen::Index base, std::size_t len, const PairCoefficients& pc,
                        Eigen::MatrixXd& drift_cot, Eigen::VectorXd& diffusion_cot,
                        double* scratch_m, double* scratch_s) {
  const double g = pc.g, g2 = g * g, g3 = g2 * g;
  if constexpr (D > 0) {
    double xi[D], fi[D], si[D], gm[D], gs[D];
    const double* xq[D];
    const double* fq[D];
    double* cq[D];
    for (int i = 0; i < D; ++i) {
      xi[i] = Xc(m, i);
      fi[i] = Fc(m, i);
      si[i] = S[i];
      xq[i] = Xc.col(i).data() + base;
      fq[i] = Fc.col(i).data() + base;
      cq[i] = drift_cot.col(i).data() + base;
      gm[i] = 0.0;
      gs[i] = 0.0;
    }
    for (std::size_t t = 0; t < len; ++t) {
      const double k = pc.k[t];
      const double gk = g * k;
      const double c2 = -g * gk * pc.rfp[t] - 0.5 * gk * pc.P[t];
      const double c3 = -g * gk * pc.rf[t] + 0.5 * gk * pc.P[t];
      const double e1 = -0.5 * gk * (pc.rf[t] - pc.rfp[t]) + 0.5 * k * pc.P[t];
      for (int i = 0; i < D; ++i) {
        const double r = xi[i] - xq[i][t];
        const double f = fq[i][t];
        gm[i] += gk * f + r * (c2 + g * si[i] * gk);
        cq[i][t] += gk * fi[i] + r * (c3 - g * si[i] * gk);
        gs[i] += r * r * (g2 * e1 - 2.0 * g3 * si[i] * k) - g * e1 + g * gk * r * (fi[i] - f) +
                 g2 * si[i] * k;
      }
    }
    for (int i = 0; i < D; ++i) {
      drift_cot(m, i) += gm[i];
      diffusion_cot[i] += gs[i];
    }
  } else {
    for (Eigen::Index i = 0; i < d_runtime; ++i) {
      const double xi = Xc(m, i), fi = Fc(m, i), si = S[i];
      const double* xq = Xc.col(i).data() + base;
      const double* fq = Fc.col(i).data() + base;
      double* cq = drift_cot.col(i).data() + base;
      for (std::size_t t = 0; t < len; ++t) {
        const double k = pc.k[t];
        const double gk = g * k;
        const double c2 = -g * gk * pc.rfp[t] - 0.5 * gk * pc.P[t];
        const double c3 = -g * gk * pc.rf[t] + 0.5 * gk * pc.P[t];
        const double e1 = -0.5 * gk * (pc.rf[t] - pc.rfp[t]) + 0.5 * k * pc.P[t];
        const double r = xi - xq[t];
        scratch_m[t] = gk * fq[t] + r * (c2 + g * si * gk);
        cq[t] += gk * fi + r * (c3 - g * si * gk);
        scratch_s[t] = r * r * (g2 * e1 - 2.0 * g3 * si * k) - g * e1 +
                       g * gk * r * (fi - fq[t]) + g2 * si * k;
      }
      drift_cot(m, i) += lane_sum(scratch_m, len);
      diffusion_cot[i] += lane_sum(scratch_s, len);
    }
  }
}

inline void pair_gradient_dispatch(Eigen::Index d, const Eigen::MatrixXd& Xc,
                                   const Eigen::MatrixXd& Fc, const Eigen::VectorXd& S,
                                   Eigen::Index m, Eigen::Index base, std::size_t len,
                                   const PairCoefficients& pc, Eigen::MatrixXd& drift_cot,
                                   Eigen::VectorXd& diffusion_cot, double* scratch_m,
                                   double* scratch_s) {
  switch (d) {
#define STATDIFF_GRAD_CASE(D) \
  case D: return pair_gradient_pass<D>(d, Xc, Fc, S, m, base, len, pc, drift_cot, diffusion_cot, scratch_m, scratch_s);
    STATDIFF_GRAD_CASE(1)
    STATDIFF_GRAD_CASE(2)
    STATDIFF_GRAD_CASE(3)
    STATDIFF_GRAD_CASE(4)
    STATDIFF_GRAD_CASE(5)
    STATDIFF_GRAD_CASE(6)
    STATDIFF_GRAD_CASE(8)
#undef STATDIFF_GRAD_CASE
    default: return pair_gradient_pass<0>(d, Xc, Fc, S, m, base, len, pc, drift_cot, diffusion_cot, scratch_m, scratch_s);
  }
}

struct PairSums {
  double sum = 0.0;              // sum over unordered pairs m < n
  Eigen::VectorXd row_sums;      // per sample: sum over partners
  Samples drift_cot;             // per sample: sum over partners of dh/df
  Eigen::VectorXd diffusion_cot; // sum over pairs of dh/dSigma
};

// Accumulates h over all unordered pairs of the rows of X, all sharing the diffusion S.
//
// Rows are cut into fixed blocks of kPairBlockRows; for each row m the partners
// q > m are processed as contiguous column slices so the inner loops vectorize.
// Per-block partial sums are reduced in block order, independent of the worker count.
inline PairSums accumulate_pairs(const KernelConfig& kernel, const Samples& X, const Samples& F,
                                 const Eigen::VectorXd& S, bool want_rows, bool want_grad,
                                 Parallelism par) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  const double g = kernel.inv_sq();
  const double g2 = g * g, g3 = g2 * g;
  const double trace_s = S.sum();
  const double trace_s2 = S.squaredNorm();
  const Eigen::MatrixXd Xc = X;  // column-major: coordinate i of all samples is contiguous
  const Eigen::MatrixXd Fc = F;
  const auto n_blocks = static_cast<std::size_t>((n + kPairBlockRows - 1) / kPairBlockRows);

  struct Partial {
    double sum = 0.0;
    Eigen::VectorXd row_sums;
    Eigen::MatrixXd drift_cot;  // n x d, column-major
    Eigen::VectorXd diffusion_cot;
  };
  std::vector<Partial> partial(n_blocks);

  for_each_block(n_blocks, par, [&](std::size_t b) {
    Partial& out = partial[b];
    if (want_rows) out.row_sums = Eigen::VectorXd::Zero(n);
    if (want_grad) {
      out.drift_cot = Eigen::MatrixXd::Zero(n, d);
      out.diffusion_cot = Eigen::VectorXd::Zero(d);
    }
    const auto len_max = static_cast<std::size_t>(n);
    std::vector<double> rsq(len_max), rf(len_max), rfp(len_max), ff(len_max), qs(len_max),
        crf(len_max), arfp(len_max), acr(len_max), kv(len_max), pv(len_max),
        vals(len_max), tm(len_max), ts(len_max);
    const Eigen::Index lo = static_cast<Eigen::Index>(b) * kPairBlockRows;
    const Eigen::Index hi = std::min(n, lo + kPairBlockRows);
    for (Eigen::Index m = lo; m < hi; ++m) {
      const Eigen::Index base = m + 1;
      const std::size_t len = static_cast<std::size_t>(n - base);
      if (len == 0) continue;
      const PairMoments pm{rsq.data(), rf.data(), rfp.data(), ff.data(),
                           qs.data(), crf.data(), arfp.data(), acr.data()};
      pair_moments_dispatch(d, Xc, Fc, S, m, base, len, pm);
      for (std::size_t t = 0; t < len; ++t) kv[t] = std::exp(-0.5 * g * rsq[t]);
      for (std::size_t t = 0; t < len; ++t) {
        const double k = kv[t];
        const double gk = g * k;
        const double P = g2 * qs[t] - g * trace_s;
        vals[t] = gk * (ff[t] - g * rf[t] * rfp[t]) +
                  0.5 * gk * (2.0 * g * crf[t] - P * rf[t]) +
                  0.5 * gk * (-2.0 * g * arfp[t] + P * rfp[t]) +
                  0.25 * k * (2.0 * g2 * trace_s2 - 4.0 * g3 * acr[t] + P * P);
        pv[t] = P;
      }
      const double row_acc = lane_sum(vals.data(), len);
      if (want_rows) {
        double* rows = out.row_sums.data() + base;
        for (std::size_t t = 0; t < len; ++t) rows[t] += vals[t];
        out.row_sums[m] += row_acc;
      }
      out.sum += row_acc;
      if (!want_grad) continue;

      // d h / d f(x_m)_i  = gk f(x_q)_i + r_i (c2 + g S_i gk)
      // d h / d f(x_q)_i  = gk f(x_m)_i + r_i (c3 - g S_i gk)
      // d h / d S_i       = r_i^2 (g^2 e1 - 2 g^3 S_i k) - g e1 + g gk r_i (f_m,i - f_q,i) + g^2 S_i k
      // with c2 = -g gk (r.f_q) - gk P / 2, c3 = -g gk (r.f_m) + gk P / 2,
      // e1 = -gk (r.f_m - r.f_q) / 2 + k P / 2.
      const PairCoefficients pc{kv.data(), rf.data(), rfp.data(), pv.data(), g};
      pair_gradient_dispatch(d, Xc, Fc, S, m, base, len, pc, out.drift_cot, out.diffusion_cot,
                             tm.data(), ts.data());
    }
  });

  PairSums total;
  if (want_rows) total.row_sums = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd drift_cot;
  if (want_grad) {
    drift_cot = Eigen::MatrixXd::Zero(n, d);
    total.diffusion_cot = Eigen::VectorXd::Zero(d);
  }
  for (const Partial& p : partial) {
    total.sum += p.sum;
    if (want_rows) total.row_sums += p.row_sums;
    if (want_grad) {
      drift_cot += p.drift_cot;
      total.diffusion_cot += p.diffusion_cot;
    }
  }
  if (want_grad) total.drift_cot = drift_cot;
  return total;
}

}  // namespace detail

/// L_x L_x' k for explicit drift values and diffusion diagonals at x and x'.
inline double generator_pair(const KernelConfig& kernel, ConstVec x, ConstVec xp, ConstVec fx,
                             ConstVec fxp, ConstVec sx, ConstVec sxp) {
  const Eigen::Index d = x.size();
  if (xp.size() != d || fx.size() != d || fxp.size() != d || sx.size() != d || sxp.size() != d) {
    throw DomainError("generator_pair: dimension mismatch");
  }
  const Eigen::VectorXd x_(x), xp_(xp), fx_(fx), fxp_(fxp), sx_(sx), sxp_(sxp);
  std::vector<double> r(static_cast<std::size_t>(d));
  return detail::pair_kernel(d, kernel.inv_sq(), x_.data(), xp_.data(), fx_.data(), fxp_.data(),
                             sx_.data(), sxp_.data(), r.data())
      .value;
}

/// L_x L_x' k(x, x'), where L_x uses model_x and L_x' uses model_xp.
template <DiffusionModel Mx, DiffusionModel Mxp>
double generator_pair(const KernelConfig& kernel, const Mx& model_x, const Mxp& model_xp,
                      ConstVec x, ConstVec xp) {
  if (model_x.dim() != model_xp.dim() || x.size() != model_x.dim()) {
    throw DomainError("generator_pair: dimension mismatch");
  }
  return generator_pair(kernel, x, xp, eval_drift(model_x, x), eval_drift(model_xp, xp),
                        model_x.diffusion(), model_xp.diffusion());
}

/// Value and partial derivatives of L_x L_x' k at one pair.
inline PairGradient pair_gradient(const KernelConfig& kernel, ConstVec x, ConstVec xp,
                                  ConstVec fx, ConstVec fxp, ConstVec sx, ConstVec sxp) {
  const Eigen::Index d = x.size();
  if (xp.size() != d || fx.size() != d || fxp.size() != d || sx.size() != d || sxp.size() != d) {
    throw DomainError("pair_gradient: dimension mismatch");
  }
  const Eigen::VectorXd x_(x), xp_(xp), fx_(fx), fxp_(fxp), sx_(sx), sxp_(sxp);
  PairGradient out;
  out.d_fx = Eigen::VectorXd::Zero(d);
  out.d_fxp = Eigen::VectorXd::Zero(d);
  out.d_sx = Eigen::VectorXd::Zero(d);
  out.d_sxp = Eigen::VectorXd::Zero(d);
  std::vector<double> r(static_cast<std::size_t>(d));
  out.term = detail::pair_kernel(d, kernel.inv_sq(), x_.data(), xp_.data(), fx_.data(),
                                 fxp_.data(), sx_.data(), sxp_.data(), r.data(), 1.0,
                                 out.d_fx.data(), out.d_fxp.data(), out.d_sx.data(),
                                 out.d_sxp.data());
  return out;
}

/// Quadratic-time unbiased U-statistic: mean of L_x L_x' k over ordered pairs m != n.
///
/// Not clamped at zero; negative estimates are returned as-is.
template <DiffusionModel M>
double kds_ustat(const KernelConfig& kernel, const M& model, const Samples& data,
                 Parallelism par = {}) {
  detail::require_samples(data, model.dim(), "kds_ustat");
  const Samples F = detail::drift_rows(model, data);
  const auto sums =
      detail::accumulate_pairs(kernel, data, F, model.diffusion(), false, false, par);
  const auto n = static_cast<double>(data.rows());
  return 2.0 * sums.sum / (n * (n - 1.0));
}

/// U-statistic together with its standard error from the Hoeffding projection:
/// SE = 2 sd(hbar_m) / sqrt(N), hbar_m the mean of the pair term over partners of m.
template <DiffusionModel M>
UStatEstimate kds_ustat_estimate(const KernelConfig& kernel, const M& model, const Samples& data,
                                 Parallelism par = {}) {
  detail::require_samples(data, model.dim(), "kds_ustat_estimate");
  const Samples F = detail::drift_rows(model, data);
  const auto sums = detail::accumulate_pairs(kernel, data, F, model.diffusion(), true, false, par);
  const auto n = static_cast<double>(data.rows());
  const Eigen::VectorXd row_means = sums.row_sums / (n - 1.0);
  const double value = 2.0 * sums.sum / (n * (n - 1.0));
  const double var = (row_means.array() - row_means.mean()).square().sum() / (n - 1.0);
  return UStatEstimate{value, 2.0 * std::sqrt(var / n)};
}

/// Linear-time estimator over the disjoint pairs (x1, x2), (x3, x4), ... in row order.
template <DiffusionModel M>
double kds_linear(const KernelConfig& kernel, const M& model, const Samples& data) {
  detail::require_samples(data, model.dim(), "kds_linear");
  const Eigen::Index d = data.cols();
  const Eigen::Index pairs = data.rows() / 2;
  const Eigen::VectorXd S = model.diffusion();
  Eigen::VectorXd x(d), fx(d), fxp(d);
  std::vector<double> r(static_cast<std::size_t>(d));
  double sum = 0.0;
  for (Eigen::Index m = 0; m < pairs; ++m) {
    x = data.row(2 * m).transpose();
    model.drift_into(x, fx);
    x = data.row(2 * m + 1).transpose();
    model.drift_into(x, fxp);
    sum += detail::pair_kernel(d, kernel.inv_sq(), data.row(2 * m).data(),
                               data.row(2 * m + 1).data(), fx.data(), fxp.data(), S.data(),
                               S.data(), r.data())
               .value;
  }
  return sum / static_cast<double>(pairs);
}

/// Gradient of kds_ustat of the phi-intervened model with respect to the
/// trainable model parameters and to the intervention parameters.
template <DifferentiableModel M>
KdsGradient kds_grad(const KernelConfig& kernel, const M& model, const InterventionParams& phi,
                     const Samples& data, Parallelism par = {}) {
  detail::require_samples(data, model.dim(), "kds_grad");
  const Intervened<M> intervened(model, phi);
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  const Samples F = detail::drift_rows(intervened, data);
  const Eigen::VectorXd S = intervened.diffusion();
  auto sums = detail::accumulate_pairs(kernel, data, F, S, false, true, par);

  const double scale = 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
  KdsGradient out;
  out.value = scale * sums.sum;
  out.theta = Eigen::VectorXd::Zero(model.num_params());
  sums.drift_cot *= scale;
  Eigen::VectorXd x(d), cot(d);
  for (Eigen::Index m = 0; m < n; ++m) {
    x = data.row(m).transpose();
    cot = sums.drift_cot.row(m).transpose();
    model.add_drift_vjp(x, cot, out.theta);
  }
  // dSigma_j / ds_j = 2 Sigma_j, and likewise for log beta_j.
  const Eigen::VectorXd ds = (scale * sums.diffusion_cot).cwiseProduct(2.0 * S);
  model.add_log_scale_vjp(ds, out.theta);

  const Eigen::VectorXd drift_total = sums.drift_cot.colwise().sum().transpose();
  out.delta = Eigen::VectorXd::Zero(phi.size());
  out.log_beta = Eigen::VectorXd::Zero(phi.size());
  for (Eigen::Index a = 0; a < phi.size(); ++a) {
    const int j = phi.targets[static_cast<std::size_t>(a)];
    out.delta[a] = drift_total[j];
    out.log_beta[a] = ds[j];
  }
  return out;
}

}  // namespace statdiff
