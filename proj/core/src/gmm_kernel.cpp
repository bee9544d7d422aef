#include "gmmlab/gmm_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gmmlab/errors.hpp"

namespace gmmlab {

namespace {

constexpr int kMaxBalanceIterations = 200000;
constexpr double kTolerance = 1e-8;

void check_args(Eigen::Index dimension, Eigen::Index components, const Vec& priors, double scale) {
  if (components < 1) throw ParameterError("components", "must be >= 1");
  if (components >= dimension) throw ParameterError("components", "must be smaller than the data dimension");
  if (!(scale >= 0.0)) throw ParameterError("scale", "must be >= 0");
  if (priors.size() != components) throw ParameterError("priors", "length must equal the component count");
  if ((priors.array() <= 0.0).any()) throw ParameterError("priors", "must be positive");
  if (std::abs(priors.sum() - 1.0) > 1e-12) throw ParameterError("priors", "must sum to 1");
}

Mat standard_normal(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  Mat o(rows, cols);
  for (Eigen::Index k = 0; k < cols; ++k)
    for (Eigen::Index d = 0; d < rows; ++d) o(d, k) = rng.normal();
  return o;
}

/// diag(Delta^k) for every k without materializing D x D matrices.
Mat diagonal_offsets(const Vec& priors, const Mat& deltas) {
  const Eigen::Index k_count = deltas.cols();
  const Vec weighted_sq = deltas.array().square().matrix() * priors;  // sum_l pi^l delta^l_j^2
  Mat out(deltas.rows(), k_count);
  for (Eigen::Index k = 0; k < k_count; ++k)
    out.col(k) = weighted_sq / (static_cast<double>(k_count) * priors[k]);
  return out;
}

/// Orthonormal D x K basis of the column space of `o`, with a positive
/// diagonal in R. Empty optional on numerical rank deficiency.
std::optional<Mat> orthonormal_basis(const Mat& o) {
  const Eigen::Index d = o.rows();
  const Eigen::Index k = o.cols();
  Eigen::HouseholderQR<Mat> qr(o);
  const Mat r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  Mat q = qr.householderQ() * Mat::Identity(d, k);
  const double norm = o.norm();
  for (Eigen::Index j = 0; j < k; ++j) {
    if (std::abs(r(j, j)) <= 1e-10 * norm) return std::nullopt;
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

GmmKernelParams ortho_offsets(Eigen::Index dimension, Eigen::Index components, const Vec& priors, double scale,
                              RngStream& rng) {
  check_args(dimension, components, priors, scale);
  std::optional<Mat> u = orthonormal_basis(standard_normal(dimension, components, rng));
  if (!u) u = orthonormal_basis(standard_normal(dimension, components, rng));
  if (!u) throw std::runtime_error("make_ortho: random matrix is rank deficient after redraw");
  const Vec u_bar = (*u) * priors;
  GmmKernelParams p;
  p.priors = priors;
  p.deltas = scale * (u->colwise() - u_bar);
  p.scale = scale;
  p.frame = std::move(*u);
  return p;
}

}  // namespace

std::string to_string(KernelScheme scheme) {
  switch (scheme) {
    case KernelScheme::rand: return "gmm_rand";
    case KernelScheme::ortho: return "gmm_ortho";
    case KernelScheme::ortho_vub: return "gmm_ortho_vub";
    case KernelScheme::explicit_offsets: return "explicit";
  }
  return "explicit";
}

KernelScheme parse_kernel_scheme(const std::string& name) {
  if (name == "gmm_rand" || name == "rand") return KernelScheme::rand;
  if (name == "gmm_ortho" || name == "ortho") return KernelScheme::ortho;
  if (name == "gmm_ortho_vub" || name == "ortho_vub" || name == "vub") return KernelScheme::ortho_vub;
  throw ParameterError("kernel.scheme", "unknown scheme '" + name + "'");
}

Mat GmmKernelParams::covariance_offset(Eigen::Index k) const {
  const Eigen::Index k_count = components();
  Mat acc = Mat::Zero(dim(), dim());
  for (Eigen::Index l = 0; l < k_count; ++l) acc.noalias() += priors[l] * deltas.col(l) * deltas.col(l).transpose();
  return acc / (static_cast<double>(k_count) * priors[k]);
}

GmmKernelParams GmmKernelParams::from_offsets(Vec priors, Mat deltas) {
  if (priors.size() != deltas.cols()) throw ParameterError("priors", "length must equal the component count");
  if ((priors.array() <= 0.0).any()) throw ParameterError("priors", "must be positive");
  GmmKernelParams p;
  p.scheme = KernelScheme::explicit_offsets;
  p.cov_diag_offsets = diagonal_offsets(priors, deltas);
  p.scale = deltas.colwise().norm().maxCoeff();
  p.priors = std::move(priors);
  p.deltas = std::move(deltas);
  return p;
}

Vec uniform_priors(Eigen::Index components) {
  if (components < 1) throw ParameterError("components", "must be >= 1");
  return Vec::Constant(components, 1.0 / static_cast<double>(components));
}

/// Normalizes centered columns, then alternates removing the pi-weighted mean
/// and renormalizing until both constraints hold. nullopt for a zero column or
/// when the alternation stalls.
std::optional<Mat> balanced_unit_columns(const Mat& o, const Vec& priors) {
  const Mat c = o.colwise() - o * priors;
  if (!(c.colwise().norm().array() > 0.0).all()) return std::nullopt;
  Mat d = c.array().rowwise() / c.colwise().norm().array();
  for (int it = 0; it < kMaxBalanceIterations; ++it) {
    const Vec m = d * priors;
    if (m.lpNorm<Eigen::Infinity>() < 1e-16) break;
    d = d.colwise() - m;
    d = d.array().rowwise() / d.colwise().norm().array();
  }
  d = d.colwise() - d * priors;
  if ((d.colwise().norm().array() - 1.0).abs().maxCoeff() > 1e-12) return std::nullopt;
  return d;
}

GmmKernelParams make_rand(Eigen::Index dimension, Eigen::Index components, const Vec& priors, double scale,
                          RngStream& rng) {
  check_args(dimension, components, priors, scale);
  GmmKernelParams p;
  p.priors = priors;
  p.scheme = KernelScheme::rand;
  p.scale = scale;
  if (components == 1) {
    // Centering a single column leaves nothing.
    standard_normal(dimension, 1, rng);
    p.deltas = Mat::Zero(dimension, 1);
    p.cov_diag_offsets = Mat::Zero(dimension, 1);
    return p;
  }
  // Equal-norm offsets with a zero weighted sum exist only when no prior
  // outweighs all the others together.
  if (priors.maxCoeff() > 0.5 + 1e-12)
    throw ParameterError("priors", "gmm_rand needs every prior <= 1/2 for equal-norm balanced offsets");

  std::optional<Mat> d;
  for (int attempt = 0; attempt < 2 && !d; ++attempt) d = balanced_unit_columns(standard_normal(dimension, components, rng), priors);
  if (!d) throw std::runtime_error("make_rand: offsets did not balance after redraw");
  p.deltas = scale * *d;
  p.cov_diag_offsets = diagonal_offsets(p.priors, p.deltas);
  return p;
}

GmmKernelParams make_ortho(Eigen::Index dimension, Eigen::Index components, const Vec& priors, double scale,
                           RngStream& rng) {
  GmmKernelParams p = ortho_offsets(dimension, components, priors, scale, rng);
  p.scheme = KernelScheme::ortho;
  p.cov_diag_offsets = diagonal_offsets(p.priors, p.deltas);
  return p;
}

GmmKernelParams make_ortho_vub(Eigen::Index dimension, Eigen::Index components, const Vec& priors, double scale,
                               RngStream& rng) {
  GmmKernelParams p = ortho_offsets(dimension, components, priors, scale, rng);
  p.scheme = KernelScheme::ortho_vub;
  p.cov_diag_offsets = Mat::Zero(dimension, components);
  // A single component has Delta == 0 exactly; its 1x1 frame matrix has no slack.
  if (components > 1) {
    // s^2/K * (pi^i / pi^k): equal priors give exactly s^2/K.
    const double base = scale * scale / static_cast<double>(components);
    for (Eigen::Index k = 0; k < components; ++k)
      p.cov_diag_offsets.col(k).head(components) = base * (priors / priors[k]);
  }
  return p;
}

GmmKernelParams make_kernel(KernelScheme scheme, Eigen::Index dimension, Eigen::Index components, const Vec& priors,
                            double scale, RngStream& rng) {
  switch (scheme) {
    case KernelScheme::rand: return make_rand(dimension, components, priors, scale, rng);
    case KernelScheme::ortho: return make_ortho(dimension, components, priors, scale, rng);
    case KernelScheme::ortho_vub: return make_ortho_vub(dimension, components, priors, scale, rng);
    case KernelScheme::explicit_offsets: break;
  }
  throw ParameterError("kernel.scheme", "explicit offsets cannot be drawn at random");
}

std::vector<std::pair<double, double>> eigenvalue_brackets(const Vec& priors, Eigen::Index k, double scale) {
  const Eigen::Index k_count = priors.size();
  if (k < 0 || k >= k_count) throw ParameterError("k", "component index out of range");
  std::vector<double> p(priors.data(), priors.data() + k_count);
  std::sort(p.begin(), p.end());
  const double c = scale * scale / (static_cast<double>(k_count) * priors[k]);
  const double sum_sq = priors.squaredNorm();
  std::vector<std::pair<double, double>> out;
  out.emplace_back(c * (p[0] - sum_sq), c * p[0]);
  for (std::size_t i = 1; i < p.size(); ++i) out.emplace_back(c * p[i - 1], c * p[i]);
  return out;
}

ClippedVariances clip_variances(double sigma_sq, const GmmKernelParams& params) {
  if (!(sigma_sq >= 0.0)) throw ParameterError("sigma_sq", "must be >= 0");
  ClippedVariances out;
  out.variances = (sigma_sq - params.cov_diag_offsets.array()).max(0.0).matrix();
  out.clipped = static_cast<int>((params.cov_diag_offsets.array() > sigma_sq).count());
  return out;
}

Vec component_stddev(double sigma, const GmmKernelParams& params, Eigen::Index k, int* clipped) {
  const double sigma_sq = sigma * sigma;
  const auto offsets = params.cov_diag_offsets.col(k);
  Vec out(offsets.size());
  for (Eigen::Index j = 0; j < offsets.size(); ++j) {
    const double b = offsets[j];
    if (b == 0.0) {
      out[j] = sigma;
    } else {
      if (clipped && b > sigma_sq) ++*clipped;
      out[j] = std::sqrt(std::max(0.0, sigma_sq - b));
    }
  }
  return out;
}

KernelBank build_kernel_bank(const KernelBankSpec& spec, int steps, RngStream& rng) {
  if (steps < 1) throw ParameterError("steps", "must be >= 1");
  const Vec priors = spec.priors.size() == 0 ? uniform_priors(spec.components) : spec.priors;
  KernelBank bank;
  if (spec.share_across_steps) {
    RngStream sub = rng.split(0);
    bank.push_back(make_kernel(spec.scheme, spec.dimension, spec.components, priors, spec.scale, sub));
    bank.back().shared_across_steps = true;
    return bank;
  }
  bank.reserve(static_cast<std::size_t>(steps));
  for (int j = 1; j <= steps; ++j) {
    RngStream sub = rng.split(static_cast<std::uint64_t>(j));
    bank.push_back(make_kernel(spec.scheme, spec.dimension, spec.components, priors, spec.scale, sub));
  }
  return bank;
}

const GmmKernelParams& kernel_for_step(const KernelBank& bank, int j) {
  if (bank.empty()) throw ParameterError("kernel_bank", "empty bank");
  if (bank.size() == 1) return bank.front();
  if (j < 1 || static_cast<std::size_t>(j) > bank.size()) throw ParameterError("step_index", "outside the kernel bank");
  return bank[static_cast<std::size_t>(j - 1)];
}

ConstraintReport validate_constraints(const GmmKernelParams& params) {
  ConstraintReport r;
  const Eigen::Index k_count = params.components();
  const Eigen::Index d = params.dim();
  r.prior_sum_residual = std::abs(params.priors.sum() - 1.0);
  r.mean_residual = k_count == 0 ? 0.0 : (params.deltas * params.priors).lpNorm<Eigen::Infinity>();

  std::vector<Mat> offsets;
  offsets.reserve(static_cast<std::size_t>(k_count));
  Mat moment = Mat::Zero(d, d);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    offsets.push_back(params.covariance_offset(k));
    moment += params.priors[k] * (params.deltas.col(k) * params.deltas.col(k).transpose() - offsets.back());
  }
  r.covariance_residual = moment.cwiseAbs().maxCoeff();

  auto record = [&r](double excess) {
    if (excess > kTolerance) {
      ++r.bound_violations;
      r.max_bound_excess = std::max(r.max_bound_excess, excess);
    }
  };

  if (params.scheme != KernelScheme::ortho_vub) {
    for (Eigen::Index k = 0; k < k_count; ++k)
      r.diagonal_residual = std::max(
          r.diagonal_residual, (params.cov_diag_offsets.col(k) - offsets[static_cast<std::size_t>(k)].diagonal())
                                   .lpNorm<Eigen::Infinity>());
  }

  if (params.frame) {
    for (Eigen::Index k = 0; k < k_count; ++k) {
      Eigen::SelfAdjointEigenSolver<Mat> es(offsets[static_cast<std::size_t>(k)], Eigen::EigenvaluesOnly);
      const Vec& ev = es.eigenvalues();  // ascending
      const auto brackets = eigenvalue_brackets(params.priors, k, params.scale);
      for (Eigen::Index i = 0; i < k_count; ++i) {
        const double lambda = ev[d - k_count + i];
        const auto [lo, hi] = brackets[static_cast<std::size_t>(i)];
        record(std::max(lo - lambda, lambda - hi));
      }
      for (Eigen::Index i = 0; i < d - k_count; ++i) record(std::abs(ev[i]));
    }
  }

  if (params.scheme == KernelScheme::ortho_vub && params.frame) {
    const Mat& u = *params.frame;
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const auto b = params.cov_diag_offsets.col(k);
      const double c = params.scale * params.scale / (static_cast<double>(k_count) * params.priors[k]);
      for (Eigen::Index i = 0; i < k_count; ++i) record(b[i] - c * params.priors[i]);
      for (Eigen::Index i = k_count; i < d; ++i) record(std::abs(b[i]));
      const Mat bound = u * b.head(k_count).asDiagonal() * u.transpose();
      Eigen::SelfAdjointEigenSolver<Mat> es(bound - offsets[static_cast<std::size_t>(k)], Eigen::EigenvaluesOnly);
      record(-es.eigenvalues().minCoeff());
    }
  }

  r.pass = r.prior_sum_residual < kTolerance && r.mean_residual < kTolerance && r.covariance_residual < kTolerance &&
           r.diagonal_residual < kTolerance && r.bound_violations == 0;
  return r;
}

}  // namespace gmmlab
