//! Effective-Hamiltonian estimation for a one-dimensional Gibbs manifold.
//!
//! The hypothesis is `H(ξ) = −Σ_b ξ^b F_b`. Vectors `ξ` carry an upper index
//! and are normalized in the correlation metric; the mean `f̄`, the mismatch
//! `δf` and the covariance `Γ` carry lower indices.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::reference_exponent;
use crate::operator::{
    centered_kubo_mori_matrix, expectation, gibbs_with_log_partition, kubo_mori, matrix_log,
    spectral_decompose, DensityMatrix, HermitianOperator,
};
use crate::selection::{generalized_eigen, Analysis, CorrelationMetric};

/// Traces of `Γ` below this count as no spread at all.
pub const MIN_SPREAD: f64 = 1e-14;

/// Target Riemannian gradient norm of the ascent.
pub const GRADIENT_TOLERANCE: f64 = 1e-10;

/// Above this gradient norm the optimizer reports failure.
pub const GRADIENT_FAILURE: f64 = 1e-6;

const RANDOM_STARTS: usize = 4;
const START_SEED: u64 = 0x7468_6572_6d6f;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum XiMethod {
    #[default]
    Exact,
    Perturbative,
}

/// Gibbs state `exp(base + β G)/Z` with `⟨G⟩ = target`.
#[derive(Clone, Debug)]
pub struct CanonicalSolution {
    pub beta: f64,
    pub state: DensityMatrix,
}

/// Solves the one-parameter moment condition by bracketing, bisection and Newton steps.
pub fn solve_inverse_temperature(
    base: &HermitianOperator,
    generator: &HermitianOperator,
    target: f64,
) -> Result<CanonicalSolution> {
    let spec = spectral_decompose(generator)?;
    let (lo_e, hi_e) = (spec.values[0], *spec.values.last().unwrap());
    let scale = lo_e.abs().max(hi_e.abs()).max(1.0);
    if !target.is_finite() || target <= lo_e || target >= hi_e {
        return Err(Error::BisectionFailed { target });
    }
    let tol = 1e-13 * scale;
    let eval = |beta: f64| -> Result<(f64, DensityMatrix)> {
        let (state, _) = gibbs_with_log_partition(&base.add_scaled(beta, generator))?;
        Ok((expectation(generator, &state)? - target, state))
    };

    let (f0, s0) = eval(0.0)?;
    if f0.abs() <= tol {
        return Ok(CanonicalSolution { beta: 0.0, state: s0 });
    }
    // bracket the root; the residual is increasing in β
    let (mut lo, mut hi) = if f0 < 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    let mut found = false;
    for _ in 0..80 {
        if f0 < 0.0 {
            if eval(hi)?.0 >= 0.0 {
                found = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
        } else {
            if eval(lo)?.0 <= 0.0 {
                found = true;
                break;
            }
            hi = lo;
            lo *= 2.0;
        }
    }
    if !found {
        return Err(Error::BisectionFailed { target });
    }

    let mut beta = if f0 < 0.0 { lo.max(0.0) } else { hi.min(0.0) };
    let mut best: Option<(f64, f64, DensityMatrix)> = None;
    for _ in 0..300 {
        let (f, state) = eval(beta)?;
        if best.as_ref().is_none_or(|b| f.abs() < b.1.abs()) {
            best = Some((beta, f, state.clone()));
        }
        if f.abs() <= tol {
            return Ok(CanonicalSolution { beta, state });
        }
        if f < 0.0 {
            lo = beta;
        } else {
            hi = beta;
        }
        if hi - lo <= 4.0 * f64::EPSILON * beta.abs().max(1.0) {
            break;
        }
        let slope = kubo_mori(generator, generator, &state)? - expectation(generator, &state)?.powi(2);
        let newton = beta - f / slope;
        beta = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    match best {
        Some((beta, f, state)) if f.abs() <= 1e3 * tol => Ok(CanonicalSolution { beta, state }),
        _ => Err(Error::BisectionFailed { target }),
    }
}

/// Objective `J(ξ) = ⟨Γ⟩_ξ − δf(ξ)·δf(ξ)` with `δf` from exact Gibbs solves.
pub struct XiObjective<'a> {
    analysis: &'a Analysis,
    base: HermitianOperator,
}

/// Everything computed at one `ξ`.
#[derive(Clone, Debug)]
pub struct XiEvaluation {
    /// `ξ`, normalized in the correlation metric.
    pub xi: DVector<f64>,
    pub objective: f64,
    pub gamma_mean: f64,
    pub delta_f: DVector<f64>,
    /// Inverse temperature of `π̄(ξ)` along `ξ·F`.
    pub beta: f64,
    pub state: DensityMatrix,
}

impl<'a> XiObjective<'a> {
    pub fn new(analysis: &'a Analysis) -> Result<Self> {
        Ok(Self {
            analysis,
            base: reference_exponent(analysis.reference())?,
        })
    }

    fn metric(&self) -> &CorrelationMetric {
        &self.analysis.metric
    }

    fn generator(&self, xi: &DVector<f64>) -> Result<HermitianOperator> {
        HermitianOperator::linear_combination(xi.as_slice(), self.analysis.dataset.observable_operators())
    }

    pub fn evaluate(&self, xi: &DVector<f64>) -> Result<XiEvaluation> {
        let metric = self.metric();
        let xi = metric.normalize(xi);
        let f_bar = &self.analysis.covariance.mean;
        let gamma = &self.analysis.covariance.gamma;
        let generator = self.generator(&xi)?;
        let sol = solve_inverse_temperature(&self.base, &generator, xi.dot(f_bar))?;
        let means = self
            .analysis
            .dataset
            .observable_operators()
            .iter()
            .map(|f| expectation(f, &sol.state))
            .collect::<Result<Vec<_>>>()?;
        let delta_f = DVector::from_vec(means) - f_bar;
        let gamma_mean = xi.dot(&(gamma * &xi));
        let objective = gamma_mean - metric.dual_dot(&delta_f, &delta_f);
        Ok(XiEvaluation {
            xi,
            objective,
            gamma_mean,
            delta_f,
            beta: sol.beta,
            state: sol.state,
        })
    }

    /// Euclidean gradient (a covector) of `J` at a normalized point.
    pub fn gradient(&self, at: &XiEvaluation) -> Result<DVector<f64>> {
        let metric = self.metric();
        let gamma = &self.analysis.covariance.gamma;
        let xi = &at.xi;
        let k = centered_kubo_mori_matrix(self.analysis.dataset.observable_operators(), &at.state)?;
        let k_xi = &k * xi;
        let curvature = xi.dot(&k_xi);
        let d_beta = -(&at.delta_f + &k_xi * at.beta) / curvature;
        let d_delta_f = &k * at.beta + &k_xi * d_beta.transpose();
        let gamma_part = (gamma * xi - metric.lower(xi) * at.gamma_mean) * 2.0;
        Ok(gamma_part - d_delta_f.transpose() * metric.raise(&at.delta_f) * 2.0)
    }

    /// Gradient projected onto the tangent space of the unit sphere, as an upper-index vector.
    pub fn tangent_gradient(&self, at: &XiEvaluation) -> Result<DVector<f64>> {
        let g = self.gradient(at)?;
        let raised = self.metric().raise(&g);
        let along = at.xi.dot(&g);
        Ok(raised - &at.xi * along)
    }

    fn step(&self, at: &XiEvaluation, direction: &DVector<f64>, t: f64) -> Result<XiEvaluation> {
        self.evaluate(&(&at.xi + direction * t))
    }

    /// Projected-gradient ascent with step halving.
    fn ascend(&self, start: &DVector<f64>, max_iterations: usize) -> Result<(XiEvaluation, f64)> {
        let metric = self.metric();
        let mut current = self.evaluate(start)?;
        let mut t: f64 = 1.0;
        let mut grad = self.tangent_gradient(&current)?;
        let mut gnorm = metric.norm(&grad);
        for _ in 0..max_iterations {
            if gnorm <= GRADIENT_TOLERANCE {
                break;
            }
            // keep trial steps a modest rotation
            let cap = 0.5 / gnorm;
            t = (2.0 * t).min(cap).max(1e-300);
            let mut accepted = None;
            for _ in 0..60 {
                let trial = self.step(&current, &grad, t)?;
                if trial.objective > current.objective {
                    accepted = Some(trial);
                    break;
                }
                t *= 0.5;
            }
            let Some(next) = accepted else { break };
            current = next;
            grad = self.tangent_gradient(&current)?;
            gnorm = metric.norm(&grad);
        }
        Ok((current, gnorm))
    }

    /// C-orthonormal basis of the tangent space at `xi`.
    fn tangent_basis(&self, xi: &DVector<f64>) -> Vec<DVector<f64>> {
        let metric = self.metric();
        let m = xi.len();
        let mut basis: Vec<DVector<f64>> = vec![xi.clone()];
        for j in 0..m {
            let mut v = DVector::from_fn(m, |i, _| if i == j { 1.0 } else { 0.0 });
            for b in &basis {
                let o = metric.dot(b, &v);
                v -= b * o;
            }
            let n = metric.norm(&v);
            if n > 1e-8 {
                basis.push(v / n);
            }
            if basis.len() == m {
                break;
            }
        }
        basis.remove(0);
        basis
    }

    /// Gradient of `s ↦ J(normalize(ξ + Σ s_k u_k))`.
    fn chart_gradient(&self, xi: &DVector<f64>, basis: &[DVector<f64>], s: &DVector<f64>) -> Result<(XiEvaluation, DVector<f64>)> {
        let metric = self.metric();
        let mut raw = xi.clone();
        for (u, sk) in basis.iter().zip(s.iter()) {
            raw += u * *sk;
        }
        let norm = metric.norm(&raw);
        let at = self.evaluate(&raw)?;
        let g = self.gradient(&at)?;
        let grad = DVector::from_iterator(
            basis.len(),
            basis.iter().map(|u| {
                let tangent = (u - &at.xi * metric.dot(&at.xi, u)) / norm;
                g.dot(&tangent)
            }),
        );
        Ok((at, grad))
    }

    /// Newton iterations in tangent coordinates with a finite-difference Hessian.
    fn polish(&self, start: XiEvaluation) -> Result<(XiEvaluation, f64)> {
        let metric = self.metric();
        let mut current = start;
        let mut gnorm = metric.norm(&self.tangent_gradient(&current)?);
        for _ in 0..12 {
            if gnorm <= GRADIENT_TOLERANCE * 1e-2 {
                break;
            }
            let basis = self.tangent_basis(&current.xi);
            let k = basis.len();
            if k == 0 {
                break;
            }
            let zero = DVector::zeros(k);
            let (_, g0) = self.chart_gradient(&current.xi, &basis, &zero)?;
            let h = 1e-5;
            let mut hess = DMatrix::zeros(k, k);
            for j in 0..k {
                let mut e = DVector::zeros(k);
                e[j] = h;
                let (_, gp) = self.chart_gradient(&current.xi, &basis, &e)?;
                let (_, gm) = self.chart_gradient(&current.xi, &basis, &(-e))?;
                hess.set_column(j, &((gp - gm) / (2.0 * h)));
            }
            hess = (&hess + hess.transpose()) * 0.5;
            let Some(step) = hess.clone().lu().solve(&(-&g0)) else {
                break;
            };
            let mut t = 1.0;
            let mut improved = None;
            for _ in 0..30 {
                let (trial, _) = self.chart_gradient(&current.xi, &basis, &(&step * t))?;
                let tg = metric.norm(&self.tangent_gradient(&trial)?);
                if tg < gnorm && trial.objective >= current.objective - 1e-15 * current.objective.abs().max(1e-300) {
                    improved = Some((trial, tg));
                    break;
                }
                t *= 0.5;
            }
            match improved {
                Some((trial, tg)) => {
                    current = trial;
                    gnorm = tg;
                }
                None => break,
            }
        }
        Ok((current, gnorm))
    }
}

/// Result of the general maximum-likelihood search for `ξ`.
#[derive(Clone, Debug)]
pub struct XiEstimate {
    pub evaluation: XiEvaluation,
    pub gradient_norm: f64,
    /// Norm of `(Γ − ⟨Γ⟩_ξ C)ξ − β δf`, the linearized stationarity condition.
    pub mle_condition_residual: f64,
    pub starts: usize,
}

fn gauge_fix(xi: DVector<f64>, anchor: &DVector<f64>) -> DVector<f64> {
    let s = xi.dot(anchor);
    if s.abs() > MIN_SPREAD {
        return if s < 0.0 { -xi } else { xi };
    }
    match xi.iter().find(|x| x.abs() > 1e-12) {
        Some(first) if *first < 0.0 => -xi,
        _ => xi,
    }
}

/// Starting directions: top generalized eigenvectors of `(Γ, C)`, `C⁻¹Δf̄`, and seeded random vectors.
fn starting_points(analysis: &Analysis) -> Result<Vec<DVector<f64>>> {
    let m = analysis.dataset.m();
    let (_, vectors) = generalized_eigen(&analysis.covariance.gamma, &analysis.metric.matrix)?;
    let mut starts: Vec<DVector<f64>> = vectors.into_iter().take(3).collect();
    let anchor = analysis.anchored_mean();
    if anchor.norm() > MIN_SPREAD {
        starts.push(analysis.metric.raise(&anchor));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    for _ in 0..RANDOM_STARTS {
        let v = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        starts.push(v);
    }
    Ok(starts)
}

/// Maximizes `J(ξ)` on the unit sphere of the correlation metric.
pub fn estimate_xi_general(analysis: &Analysis) -> Result<XiEstimate> {
    let m = analysis.dataset.m();
    if m < 2 {
        return Err(Error::InvalidArgument("at least two observables are required to estimate a direction".into()));
    }
    let trace = analysis.metric.trace(&analysis.covariance.gamma);
    if trace < MIN_SPREAD {
        return Err(Error::DegenerateSpread { trace });
    }
    let objective = XiObjective::new(analysis)?;
    let starts = starting_points(analysis)?;
    let n_starts = starts.len();
    let results: Vec<Result<(XiEvaluation, f64)>> = starts
        .par_iter()
        .map(|s| objective.ascend(s, 400))
        .collect();
    let mut best: Option<(XiEvaluation, f64)> = None;
    let mut last_err = None;
    for r in results {
        match r {
            Ok((e, g)) => {
                if best.as_ref().is_none_or(|b| e.objective > b.0.objective + 1e-15 * e.objective.abs()) {
                    best = Some((e, g));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((best, _)) = best else {
        return Err(last_err.unwrap_or(Error::NonConvergence { residual: f64::NAN }));
    };
    let (best, gradient_norm) = objective.polish(best)?;
    if !(gradient_norm <= GRADIENT_FAILURE) {
        return Err(Error::NonConvergence { residual: gradient_norm });
    }
    let xi = gauge_fix(best.xi.clone(), &analysis.anchored_mean());
    let evaluation = objective.evaluate(&xi)?;
    let mle_condition_residual = mle_condition_residual(analysis, &evaluation);
    Ok(XiEstimate {
        evaluation,
        gradient_norm,
        mle_condition_residual,
        starts: n_starts,
    })
}

/// `‖(Γ − ⟨Γ⟩_ξ C)ξ − β δf‖` using the inverse temperature of `π̄(ξ)`.
pub fn mle_condition_residual(analysis: &Analysis, at: &XiEvaluation) -> f64 {
    let gamma = &analysis.covariance.gamma;
    let lhs = gamma * &at.xi - analysis.metric.lower(&at.xi) * at.gamma_mean;
    (lhs - &at.delta_f * at.beta).norm()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BetaEstimate {
    /// `sqrt⟨δ ln μ̄; δ ln μ̄⟩_μ̄`, only for a uniform reference state.
    pub beta_bar: Option<f64>,
    pub per_sample_beta: Vec<f64>,
    /// `U_i = ⟨H(ξ)⟩_{μ_i}`
    pub internal_energies: Vec<f64>,
    pub mean_energy: f64,
}

/// Inverse temperatures for a fixed direction `ξ`.
pub fn estimate_beta(analysis: &Analysis, xi: &DVector<f64>) -> Result<BetaEstimate> {
    let metric = &analysis.metric;
    let xi = metric.normalize(xi);
    let base = reference_exponent(analysis.reference())?;
    let generator =
        HermitianOperator::linear_combination(xi.as_slice(), analysis.dataset.observable_operators())?;
    let energies: Vec<f64> = analysis
        .dataset
        .samples()
        .iter()
        .map(|s| -xi.dot(&DVector::from_column_slice(&s.means)))
        .collect();
    let per_sample_beta = energies
        .par_iter()
        .map(|u| solve_inverse_temperature(&base, &generator, -u).map(|s| s.beta))
        .collect::<Result<Vec<_>>>()?;
    let mean_energy = energies.iter().zip(&analysis.weights).map(|(u, w)| u * w).sum();
    let beta_bar = if analysis.dataset.is_uniform_reference() {
        Some(closed_form_beta(&analysis.center)?)
    } else {
        None
    };
    Ok(BetaEstimate {
        beta_bar,
        per_sample_beta,
        internal_energies: energies,
        mean_energy,
    })
}

/// `sqrt⟨δ ln ρ; δ ln ρ⟩_ρ`
pub fn closed_form_beta(rho: &DensityMatrix) -> Result<f64> {
    let l = matrix_log(rho)?;
    let var = kubo_mori(&l, &l, rho)? - expectation(&l, rho)?.powi(2);
    Ok(var.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ThermalCondition {
    pub pass: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs / lhs`, infinite for a perfect fit.
    pub margin: f64,
    pub margin_factor: f64,
}

/// `[tr Γ − ⟨Γ⟩_ξ] + δf·δf ≤ (Λ/N)(m − 1) / margin_factor`
pub fn thermalization_condition(analysis: &Analysis, at: &XiEvaluation, margin_factor: f64) -> ThermalCondition {
    let metric = &analysis.metric;
    let lhs = (metric.trace(&analysis.covariance.gamma) - at.gamma_mean).max(0.0)
        + metric.dual_dot(&at.delta_f, &at.delta_f);
    let rhs = analysis.log_size_sum() / analysis.total_size() * (analysis.dataset.m() as f64 - 1.0);
    let margin = if lhs > 0.0 { rhs / lhs } else { f64::INFINITY };
    ThermalCondition {
        pass: margin >= margin_factor,
        lhs,
        rhs,
        margin,
        margin_factor,
    }
}

/// Anisotropic description of a qubit dataset.
#[derive(Clone, Debug)]
pub struct QubitGeometry {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    /// Dominant direction `γ`, unit in the metric.
    pub gamma_dir: DVector<f64>,
    /// Mean `f̄` relative to the reference state (lower index).
    pub f_bar: DVector<f64>,
    /// `C⁻¹f̄ / |f̄|`
    pub f_hat: DVector<f64>,
    pub eta: DVector<f64>,
    pub theta: f64,
    pub metric: DMatrix<f64>,
}

impl QubitGeometry {
    pub fn new(gamma: &DMatrix<f64>, metric: &DMatrix<f64>, f_bar: &DVector<f64>) -> Result<Self> {
        if gamma.shape() != (3, 3) || metric.shape() != (3, 3) || f_bar.len() != 3 {
            return Err(Error::DimMismatch {
                expected: 3,
                found: f_bar.len(),
            });
        }
        let (values, vectors) = generalized_eigen(gamma, metric)?;
        let gamma_plus = values[0].max(0.0);
        let gamma_minus = (0.5 * (values[1] + values[2])).max(0.0);
        let c_inv = metric.clone().cholesky().expect("metric already factored").inverse();
        let dot = |x: &DVector<f64>, y: &DVector<f64>| x.dot(&(metric * y));
        let ff = f_bar.dot(&(&c_inv * f_bar));
        let mut gamma_dir = vectors[0].clone();
        let f_hat = if ff > 0.0 {
            &c_inv * f_bar / ff.sqrt()
        } else {
            gamma_dir.clone()
        };
        if dot(&gamma_dir, &f_hat) < 0.0 {
            gamma_dir = -gamma_dir;
        }
        let cos = dot(&gamma_dir, &f_hat);
        let perp = &f_hat - &gamma_dir * cos;
        let perp_norm = dot(&perp, &perp).max(0.0).sqrt();
        let eta = if perp_norm > 1e-14 {
            perp / perp_norm
        } else {
            vectors[1].clone()
        };
        let sin = dot(&eta, &f_hat);
        Ok(Self {
            gamma_plus,
            gamma_minus,
            gamma_dir,
            f_bar: f_bar.clone(),
            f_hat,
            eta,
            theta: sin.atan2(cos.clamp(-1.0, 1.0)),
            metric: metric.clone(),
        })
    }

    /// Geometry with identity metric, `γ = ẑ` and `f̂` tilted towards `x̂` by `theta`.
    pub fn synthetic(gamma_plus: f64, gamma_minus: f64, f_bar_sq: f64, theta: f64) -> Self {
        let f_hat = DVector::from_vec(vec![theta.sin(), 0.0, theta.cos()]);
        Self {
            gamma_plus,
            gamma_minus,
            gamma_dir: DVector::from_vec(vec![0.0, 0.0, 1.0]),
            f_bar: &f_hat * f_bar_sq.sqrt(),
            f_hat,
            eta: DVector::from_vec(vec![1.0, 0.0, 0.0]),
            theta,
            metric: DMatrix::identity(3, 3),
        }
    }

    pub fn from_analysis(analysis: &Analysis) -> Result<Self> {
        Self::new(&analysis.covariance.gamma, &analysis.metric.matrix, &analysis.anchored_mean())
    }

    /// `f̄·f̄`
    pub fn f_bar_sq(&self) -> f64 {
        let c_inv = self.metric.clone().cholesky().expect("metric is positive definite").inverse();
        self.f_bar.dot(&(c_inv * &self.f_bar))
    }

    pub fn dot(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.metric * y))
    }

    /// Covariance of the anisotropic model, `Γ₊ γγ + Γ₋ (C − γγ)` with lowered indices.
    pub fn model_covariance(&self) -> DMatrix<f64> {
        let g = &self.metric * &self.gamma_dir;
        let gg = &g * g.transpose();
        &gg * self.gamma_plus + (&self.metric - &gg) * self.gamma_minus
    }

    /// Angle between two directions in the metric, in radians.
    pub fn angle(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let c = self.dot(x, y) / (self.dot(x, x) * self.dot(y, y)).sqrt();
        c.clamp(-1.0, 1.0).acos()
    }
}

/// Lowered-index gradient of `−δf·δf` for qubits, where the Bloch relation gives
/// `δf = −(f̄ − (ξᵀf̄/ξᵀξ) ξ)` in Euclidean components. Scaled so that
/// stationarity reads `(Γ − ⟨Γ⟩_ξ C)ξ + b = 0`.
fn qubit_penalty_term(metric: &DMatrix<f64>, c_inv: &DMatrix<f64>, f_bar: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
    let e2 = xi.dot(xi);
    let s = xi.dot(&(metric * xi));
    let xf = xi.dot(f_bar);
    let q = f_bar - xi * (xf / e2);
    let u = c_inv * q;
    let xu = xi.dot(&u);
    (f_bar * xu + &u * xf - xi * (2.0 * xf * xu / e2)) * (s / e2)
}

fn qubit_objective(metric: &DMatrix<f64>, c_inv: &DMatrix<f64>, gamma: &DMatrix<f64>, f_bar: &DVector<f64>, xi: &DVector<f64>) -> f64 {
    let q = f_bar - xi * (xi.dot(f_bar) / xi.dot(xi));
    xi.dot(&(gamma * xi)) / xi.dot(&(metric * xi)) - q.dot(&(c_inv * &q))
}

/// Residual of the qubit likelihood condition. When `C ∝ 1` this is
/// `(Γ − ⟨Γ⟩_ξ C)ξ = (ξ·f̄)²/(ξ·ξ) Cξ − (ξ·f̄) f̄`; otherwise the Bloch relation
/// is kept exact in Euclidean components.
pub fn qubit_mle_residual(metric: &DMatrix<f64>, gamma: &DMatrix<f64>, f_bar: &DVector<f64>, xi: &DVector<f64>) -> f64 {
    let Some(c_inv) = metric.clone().try_inverse() else {
        return f64::INFINITY;
    };
    let c_xi = metric * xi;
    let norm2 = xi.dot(&c_xi);
    let gm = xi.dot(&(gamma * xi)) / norm2;
    let r = gamma * xi - &c_xi * gm + qubit_penalty_term(metric, &c_inv, f_bar, xi);
    r.norm() / norm2.sqrt()
}

/// Fixed-point solution of the qubit likelihood condition.
///
/// Iterates `ξ ← normalize(C⁻¹(Γξ + b(ξ)) + κξ)`. For `C = 1` and `κ = 0` this is
/// power iteration on `Γ + f̄f̄ᵀ`. The shift `κ` grows whenever a step would lower
/// the likelihood.
pub fn qubit_mle_fixed_point(geometry: &QubitGeometry, gamma: &DMatrix<f64>, f_bar: &DVector<f64>) -> Result<DVector<f64>> {
    let metric = &geometry.metric;
    let c_inv = metric
        .clone()
        .cholesky()
        .ok_or(Error::SingularMetric { min_eigenvalue: 0.0 })?
        .inverse();
    let normalize = |v: DVector<f64>| {
        let n = v.dot(&(metric * &v)).sqrt();
        v / n
    };
    let objective = |x: &DVector<f64>| qubit_objective(metric, &c_inv, gamma, f_bar, x);
    let scale = (gamma.norm() + f_bar.norm_squared()).max(f64::MIN_POSITIVE) * c_inv.norm();
    let mut xi = normalize(geometry.gamma_dir.clone());
    let mut value = objective(&xi);
    let mut residual = qubit_mle_residual(metric, gamma, f_bar, &xi);
    let mut kappa = 0.0;
    let mut iterations = 0;
    while residual > 1e-12 && iterations < 100_000 {
        let mut next = &c_inv * (gamma * &xi + qubit_penalty_term(metric, &c_inv, f_bar, &xi)) + &xi * kappa;
        if next.dot(&(metric * &xi)) < 0.0 {
            next = -next;
        }
        if next.norm() == 0.0 {
            break;
        }
        let next = normalize(next);
        let next_value = objective(&next);
        iterations += 1;
        if next_value < value - 1e-15 * value.abs().max(scale) {
            kappa = if kappa == 0.0 { scale } else { 2.0 * kappa };
            continue;
        }
        xi = next;
        value = next_value;
        residual = qubit_mle_residual(metric, gamma, f_bar, &xi);
    }
    if residual > 1e-10 {
        return Err(Error::NonConvergence { residual });
    }
    Ok(gauge_fix(xi, f_bar))
}

/// Lowest-order perturbative solution in the tilt of `f̂` away from `γ`.
pub fn qubit_xi_perturbative(geometry: &QubitGeometry) -> DVector<f64> {
    let ff = geometry.f_bar_sq();
    let sin = geometry.theta.sin();
    let spread = geometry.gamma_plus - geometry.gamma_minus;
    let eta_xi = if ff > 0.0 { sin / (1.0 + spread / ff) } else { 0.0 };
    let gamma_xi = (1.0 - eta_xi * eta_xi).max(0.0).sqrt();
    let xi = &geometry.gamma_dir * gamma_xi + &geometry.eta * eta_xi;
    let n = geometry.dot(&xi, &xi).sqrt();
    xi / n
}

/// `[1/(f̄·f̄) + 1/(Γ₊ − Γ₋)]⁻¹`, zero when either term diverges.
fn reduced_spread(ff: f64, spread: f64) -> f64 {
    if ff <= 0.0 || spread <= 0.0 {
        0.0
    } else {
        1.0 / (1.0 / ff + 1.0 / spread)
    }
}

/// `(N/2){Γ₊ − [1/(f̄·f̄) + 1/(Γ₊−Γ₋)]⁻¹ sin²θ} − Λ/2`
pub fn qubit_max_likelihood(geometry: &QubitGeometry, n: f64, log_size_sum: f64) -> f64 {
    let ff = geometry.f_bar_sq();
    let c = reduced_spread(ff, geometry.gamma_plus - geometry.gamma_minus);
    0.5 * n * (geometry.gamma_plus - c * geometry.theta.sin().powi(2)) - 0.5 * log_size_sum
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct QubitThermal {
    pub pass: bool,
    /// `(Λ/N)/Γ₋` and `(Λ/N)[1/(f̄·f̄) + 1/(Γ₊−Γ₋)]/(θ²/2)`.
    pub margins: [f64; 2],
    pub margin_factor: f64,
}

pub fn qubit_thermal_conditions(geometry: &QubitGeometry, n: f64, log_size_sum: f64, margin_factor: f64) -> QubitThermal {
    let scale = log_size_sum / n;
    let first = if geometry.gamma_minus > 0.0 {
        scale / geometry.gamma_minus
    } else {
        f64::INFINITY
    };
    let ff = geometry.f_bar_sq();
    let spread = geometry.gamma_plus - geometry.gamma_minus;
    let tilt = 0.5 * geometry.theta * geometry.theta;
    let second = if ff <= 0.0 || spread <= 0.0 || tilt == 0.0 {
        f64::INFINITY
    } else {
        scale * (1.0 / ff + 1.0 / spread) / tilt
    };
    QubitThermal {
        pass: first >= margin_factor && second >= margin_factor,
        margins: [first, second],
        margin_factor,
    }
}

/// Serializable view of the qubit specialization.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct QubitSummary {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub f_bar_sq: f64,
    pub theta_degrees: f64,
    pub gamma_dir: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub eta: Vec<f64>,
    pub fixed_point_xi: Option<Vec<f64>>,
    pub perturbative_xi: Vec<f64>,
    /// Angle between the reported `ξ` and `γ`, degrees.
    pub xi_gamma_angle_degrees: f64,
    /// Angle between the reported `ξ` and `f̂`, degrees.
    pub xi_f_hat_angle_degrees: f64,
    pub max_log_likelihood: f64,
    pub thermal: QubitThermal,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HamiltonianEstimate {
    pub method: XiMethod,
    /// `ξ^b`, unit in the correlation metric, gauge `ξ·(f̄ − ⟨F⟩_σ) ≥ 0`.
    pub xi: Vec<f64>,
    /// True when the observables are informationally incomplete, so `H(ξ)`
    /// is only the effective Hamiltonian within their span.
    pub effective: bool,
    pub beta_bar: Option<f64>,
    pub per_sample_beta: Vec<f64>,
    pub internal_energies: Vec<f64>,
    pub mean_energy: f64,
    /// `J(ξ) = ⟨Γ⟩_ξ − δf·δf`
    pub objective: f64,
    /// `(N/2) J(ξ) − Λ/2`
    pub max_log_likelihood: f64,
    pub delta_f: Vec<f64>,
    pub gradient_norm: Option<f64>,
    pub mle_condition_residual: f64,
    pub thermal: ThermalCondition,
    pub qubit: Option<QubitSummary>,
    pub thermal_verdict: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
pub struct EstimateOptions {
    pub method: XiMethod,
    pub margin_factor: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            method: XiMethod::Exact,
            margin_factor: 3.0,
        }
    }
}

/// Whether the closed qubit formulas apply.
pub fn is_qubit(analysis: &Analysis) -> bool {
    analysis.dataset.dim() == 2 && analysis.dataset.m() == 3 && analysis.dataset.is_uniform_reference()
}

/// Runs the full `p = 1` estimation: direction, temperatures and thermal conditions.
pub fn estimate_hamiltonian(analysis: &Analysis, options: EstimateOptions) -> Result<HamiltonianEstimate> {
    let mut warnings = Vec::new();
    let objective = XiObjective::new(analysis)?;
    let qubit = is_qubit(analysis);
    let geometry = if qubit { Some(QubitGeometry::from_analysis(analysis)?) } else { None };

    let (evaluation, gradient_norm) = match options.method {
        XiMethod::Exact => {
            let est = estimate_xi_general(analysis)?;
            (est.evaluation, Some(est.gradient_norm))
        }
        XiMethod::Perturbative => {
            let geometry = geometry.as_ref().ok_or_else(|| {
                Error::InvalidArgument("the perturbative method needs a qubit dataset with three observables and a uniform reference".into())
            })?;
            if geometry.theta.sin().abs() > 0.3 {
                warnings.push(format!(
                    "tilt angle {:.2} degrees is large for the perturbative solution",
                    geometry.theta.to_degrees()
                ));
            }
            let xi = gauge_fix(qubit_xi_perturbative(geometry), &analysis.anchored_mean());
            (objective.evaluate(&xi)?, None)
        }
    };
    let xi = evaluation.xi.clone();
    let beta = match estimate_beta(analysis, &xi) {
        Ok(b) => b,
        Err(e) => return Err(e),
    };
    if beta.beta_bar.is_none() {
        warnings.push(Error::NonUniformReference.to_string());
    }
    let thermal = thermalization_condition(analysis, &evaluation, options.margin_factor);
    let n = analysis.total_size();
    let lambda = analysis.log_size_sum();

    let qubit_summary = match &geometry {
        Some(g) => {
            let fixed = match qubit_mle_fixed_point(g, &analysis.covariance.gamma, &analysis.anchored_mean()) {
                Ok(v) => Some(v),
                Err(e) => {
                    warnings.push(format!("qubit fixed point: {e}"));
                    None
                }
            };
            let thermal = qubit_thermal_conditions(g, n, lambda, options.margin_factor);
            Some(QubitSummary {
                gamma_plus: g.gamma_plus,
                gamma_minus: g.gamma_minus,
                f_bar_sq: g.f_bar_sq(),
                theta_degrees: g.theta.to_degrees(),
                gamma_dir: g.gamma_dir.iter().copied().collect(),
                f_hat: g.f_hat.iter().copied().collect(),
                eta: g.eta.iter().copied().collect(),
                fixed_point_xi: fixed.map(|v| v.iter().copied().collect()),
                perturbative_xi: qubit_xi_perturbative(g).iter().copied().collect(),
                xi_gamma_angle_degrees: g.angle(&xi, &g.gamma_dir).to_degrees(),
                xi_f_hat_angle_degrees: g.angle(&xi, &g.f_hat).to_degrees(),
                max_log_likelihood: qubit_max_likelihood(g, n, lambda),
                thermal,
            })
        }
        None => None,
    };
    let thermal_verdict = match &qubit_summary {
        Some(q) => q.thermal.pass,
        None => thermal.pass,
    };
    let effective = !analysis.dataset.informationally_complete();
    if effective {
        warnings.push("observables are informationally incomplete: H(xi) is an effective Hamiltonian within their span".into());
    }
    Ok(HamiltonianEstimate {
        method: options.method,
        xi: xi.iter().copied().collect(),
        effective,
        beta_bar: beta.beta_bar,
        per_sample_beta: beta.per_sample_beta,
        internal_energies: beta.internal_energies,
        mean_energy: beta.mean_energy,
        objective: evaluation.objective,
        max_log_likelihood: 0.5 * n * evaluation.objective - 0.5 * lambda,
        delta_f: evaluation.delta_f.iter().copied().collect(),
        gradient_norm,
        mle_condition_residual: mle_condition_residual(analysis, &evaluation),
        thermal,
        qubit: qubit_summary,
        thermal_verdict,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{pauli_observables, Dataset, ReferenceState, Sample};
    use crate::operator::HermitianOperator;

    fn example_geometry() -> QubitGeometry {
        QubitGeometry::synthetic(0.01, 1e-4, 0.01, std::f64::consts::PI / 16.0)
    }

    #[test]
    fn example_margins() {
        let g = example_geometry();
        let n = 10.0 * 20000.0;
        let lambda = 10.0 * 20000f64.ln();
        let t = qubit_thermal_conditions(&g, n, lambda, 3.0);
        assert!(t.pass);
        assert!((t.margins[0] - 4.9517).abs() < 1e-3, "{:?}", t.margins);
        assert!((t.margins[1] - 5.1638).abs() < 1e-3, "{:?}", t.margins);
        assert!(!qubit_thermal_conditions(&g, n, lambda, 5.0).pass);
    }

    #[test]
    fn example_perturbative_angle() {
        let g = example_geometry();
        let xi = qubit_xi_perturbative(&g);
        let eta_xi = xi[0];
        assert!((eta_xi - (std::f64::consts::PI / 16.0).sin() / 1.99).abs() < 1e-12);
        let angle = g.angle(&xi, &g.gamma_dir).to_degrees();
        assert!((angle - 5.63).abs() < 0.05, "{angle}");
    }

    #[test]
    fn thermal_condition_limits() {
        let n = 2e5;
        let lambda = 10.0 * 20000f64.ln();
        let g = QubitGeometry::synthetic(0.01, 0.01, 0.01, std::f64::consts::PI / 16.0);
        let t = qubit_thermal_conditions(&g, n, lambda, 3.0);
        assert!(!t.pass);
        assert!((t.margins[0] - 0.0495).abs() < 1e-3);

        let g = QubitGeometry::synthetic(0.01, 0.0, 0.01, 0.0);
        let t = qubit_thermal_conditions(&g, n, lambda, 3.0);
        assert!(t.pass && t.margins[0].is_infinite() && t.margins[1].is_infinite());

        let g = QubitGeometry::synthetic(0.01, 1e-4, 0.01, std::f64::consts::PI / 4.0);
        let t = qubit_thermal_conditions(&g, n, lambda, 3.0);
        assert!(!t.pass && t.margins[1] < 1.0);
    }

    #[test]
    fn perturbative_limits() {
        let g = QubitGeometry::synthetic(0.01, 0.01, 0.01, 0.2);
        let xi = qubit_xi_perturbative(&g);
        assert!(g.angle(&xi, &g.f_hat) < 1e-12);
        let g = QubitGeometry::synthetic(1.0, 1e-4, 1e-4, 0.2);
        let xi = qubit_xi_perturbative(&g);
        assert!(g.angle(&xi, &g.gamma_dir) < 1e-3);
    }

    #[test]
    fn max_likelihood_limits() {
        let g = QubitGeometry::synthetic(0.01, 1e-4, 0.01, 0.0);
        assert!((qubit_max_likelihood(&g, 1000.0, 7.0) - (5.0 - 3.5)).abs() < 1e-12);
        let g = QubitGeometry::synthetic(0.01, 0.01, 0.01, 0.3);
        assert!((qubit_max_likelihood(&g, 1000.0, 7.0) - (5.0 - 3.5)).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_examples() {
        let g = QubitGeometry::synthetic(0.01, 1e-4, 0.01, 0.0);
        let gamma = g.model_covariance();
        let xi = qubit_mle_fixed_point(&g, &gamma, &g.f_bar).unwrap();
        assert!(g.angle(&xi, &g.gamma_dir) < 1e-9);

        let g = QubitGeometry::synthetic(0.01, 1e-4, 0.0, 0.3);
        let xi = qubit_mle_fixed_point(&g, &g.model_covariance(), &DVector::zeros(3)).unwrap();
        assert!(g.angle(&xi, &g.gamma_dir) < 1e-9);
    }

    #[test]
    fn geometry_invariants() {
        let metric = DMatrix::from_row_slice(3, 3, &[1.0, 0.05, 0.0, 0.05, 0.98, 0.02, 0.0, 0.02, 0.95]);
        let gamma = DMatrix::from_row_slice(3, 3, &[2e-4, 1e-4, 3e-4, 1e-4, 5e-4, 0.0, 3e-4, 0.0, 8e-3]);
        let f_bar = DVector::from_vec(vec![0.02, -0.01, 0.09]);
        let g = QubitGeometry::new(&gamma, &metric, &f_bar).unwrap();
        assert!(g.gamma_plus >= g.gamma_minus && g.gamma_minus >= 0.0);
        assert!((g.dot(&g.gamma_dir, &g.gamma_dir) - 1.0).abs() < 1e-10);
        assert!(g.dot(&g.eta, &g.gamma_dir).abs() < 1e-10);
        assert!((g.theta.sin() - g.dot(&g.eta, &g.f_hat)).abs() < 1e-10);
    }

    #[test]
    fn inverse_temperature_solver() {
        let base = HermitianOperator::zeros(2);
        let z = HermitianOperator::pauli_z();
        let sol = solve_inverse_temperature(&base, &z, 0.3).unwrap();
        assert!((sol.beta - 0.3f64.atanh()).abs() < 1e-12);
        let sol = solve_inverse_temperature(&base, &z, -0.999).unwrap();
        assert!((sol.beta + 0.999f64.atanh()).abs() < 1e-9);
        assert!(solve_inverse_temperature(&base, &z, 1.0).is_err());
    }

    fn z_family_dataset(betas: &[f64]) -> Dataset {
        let samples = betas
            .iter()
            .map(|b| Sample {
                size: 20000,
                means: vec![0.0, 0.0, b.tanh()],
            })
            .collect();
        Dataset::new(pauli_observables(), ReferenceState::Uniform, samples, None).unwrap()
    }

    #[test]
    fn noiseless_line_is_thermal() {
        let ds = z_family_dataset(&[0.16, 0.18, 0.2, 0.22, 0.24]);
        let an = Analysis::new(&ds).unwrap();
        let est = estimate_hamiltonian(&an, EstimateOptions::default()).unwrap();
        assert!(est.xi[2] > 0.0);
        assert!(est.xi[0].abs() < 1e-8 && est.xi[1].abs() < 1e-8);
        assert!(est.thermal.lhs < 1e-12);
        assert!(est.thermal.pass && est.thermal_verdict);
        for (b, want) in est.per_sample_beta.iter().zip([0.16, 0.18, 0.2, 0.22, 0.24]) {
            // ξ is unit in the metric, so β carries the inverse norm of ẑ
            let scale = an.metric.norm(&DVector::from_vec(vec![0.0, 0.0, 1.0]));
            assert!((b / scale - want).abs() < 1e-9, "{b}");
        }
    }

    #[test]
    fn zero_spread_is_rejected() {
        let ds = z_family_dataset(&[0.2, 0.2, 0.2]);
        let an = Analysis::new(&ds).unwrap();
        assert!(matches!(estimate_xi_general(&an), Err(Error::DegenerateSpread { .. })));
    }

    #[test]
    fn closed_form_beta_matches_qubit_formula() {
        let b = 0.3;
        let rho = DensityMatrix::from_bloch([0.0, 0.0, b]).unwrap();
        let beta = closed_form_beta(&rho).unwrap();
        assert!((beta - b.atanh() * (1.0 - b * b).sqrt()).abs() < 1e-12);
        assert!(closed_form_beta(&DensityMatrix::maximally_mixed(2)).unwrap() < 1e-12);
    }
}
