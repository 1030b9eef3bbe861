//! Gibbs manifolds and the relative-entropy projection onto them.
//!
//! A [`LevelOfDescription`] spans `{1, G_1, ..., G_p}`; together with a reference
//! state `σ` it fixes the manifold of states
//! `ω ∝ exp[(ln σ − ⟨ln σ⟩_σ) − Σ_a λ^a G_a]`. Projecting a state onto that
//! manifold means finding the Lagrange parameters that reproduce its
//! expectation values of the `G_a`; this is done with a damped Newton
//! iteration whose Jacobian is the Kubo–Mori correlation matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::operator::{
    centered_kubo_mori_matrix, check_dims, expectation, gibbs_with_log_partition, matrix_log,
    relative_entropy, spectral_decompose, DensityMatrix, HermitianOperator,
};

/// Largest Gram condition number accepted for `{1, G_a}`.
pub const MAX_GRAM_CONDITION: f64 = 1e8;

/// Relative residual below which an operator counts as lying in a span.
pub const SPAN_TOLERANCE: f64 = 1e-8;

/// Pairwise `S(μ_i‖μ_j)` bound for the Gaussian regime.
pub const GAUSSIAN_PAIRWISE_RADIUS: f64 = 0.5;

/// `S(μ_i‖μ̄)` bound for the Gaussian regime.
pub const GAUSSIAN_CENTER_RADIUS: f64 = 0.25;

/// A candidate set of constants of the motion.
#[derive(Clone, Debug)]
pub struct LevelOfDescription {
    label: String,
    dim: usize,
    observables: Vec<HermitianOperator>,
}

impl LevelOfDescription {
    pub fn new(label: impl Into<String>, observables: Vec<HermitianOperator>) -> Result<Self> {
        let label = label.into();
        let dim = observables
            .first()
            .map(HermitianOperator::dim)
            .ok_or_else(|| Error::InvalidArgument(format!("level '{label}' has no observables; use LevelOfDescription::empty")))?;
        for op in &observables {
            check_dims(dim, op.dim())?;
        }
        let level = Self {
            label,
            dim,
            observables,
        };
        let condition = level.gram_condition();
        if !condition.is_finite() || condition > MAX_GRAM_CONDITION {
            return Err(Error::DependentLevel {
                label: level.label,
                condition,
            });
        }
        Ok(level)
    }

    /// The trivial level `span{1}`; its manifold is the reference state alone.
    pub fn empty(label: impl Into<String>, dim: usize) -> Self {
        Self {
            label: label.into(),
            dim,
            observables: Vec::new(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Manifold dimension `p`.
    pub fn p(&self) -> usize {
        self.observables.len()
    }

    pub fn observables(&self) -> &[HermitianOperator] {
        &self.observables
    }

    /// `{1, G_1, ..., G_p}` scaled to unit Hilbert–Schmidt norm.
    fn normalized_basis(&self) -> Vec<HermitianOperator> {
        std::iter::once(HermitianOperator::identity(self.dim))
            .chain(self.observables.iter().cloned())
            .map(|op| {
                let n = op.frobenius_norm();
                if n > 0.0 {
                    op.scale(1.0 / n)
                } else {
                    op
                }
            })
            .collect()
    }

    fn gram_condition(&self) -> f64 {
        let basis = self.normalized_basis();
        let n = basis.len();
        let gram = DMatrix::from_fn(n, n, |i, j| basis[i].hs_inner(&basis[j]));
        let eig = SymmetricEigen::new(gram);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Relative Hilbert–Schmidt distance of `op` from `span{1, G_a}`.
    pub fn span_residual(&self, op: &HermitianOperator) -> f64 {
        let basis = self.normalized_basis();
        let n = basis.len();
        let gram = DMatrix::from_fn(n, n, |i, j| basis[i].hs_inner(&basis[j]));
        let rhs = DVector::from_fn(n, |i, _| basis[i].hs_inner(op));
        let coeffs = match gram.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => return f64::INFINITY,
        };
        let fit = HermitianOperator::linear_combination(coeffs.as_slice(), &basis)
            .expect("basis is nonempty");
        let norm = op.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        op.add_scaled(-1.0, &fit).frobenius_norm() / norm
    }

    /// Largest span residual of this level's observables with respect to `larger`.
    pub fn containment_residual(&self, larger: &LevelOfDescription) -> f64 {
        self.observables
            .iter()
            .map(|op| larger.span_residual(op))
            .fold(0.0, f64::max)
    }

    pub fn is_contained_in(&self, larger: &LevelOfDescription) -> bool {
        self.dim == larger.dim
            && self.p() <= larger.p()
            && self.containment_residual(larger) <= SPAN_TOLERANCE
    }
}

/// `ln σ − ⟨ln σ⟩_σ · 1`
pub fn reference_exponent(reference: &DensityMatrix) -> Result<HermitianOperator> {
    let log_sigma = matrix_log(reference)?;
    let mean = expectation(&log_sigma, reference)?;
    Ok(log_sigma.shifted(-mean))
}

/// A state on the Gibbs manifold of `level` relative to `reference`.
#[derive(Clone, Debug)]
pub struct GibbsState {
    pub reference: DensityMatrix,
    pub level: LevelOfDescription,
    pub lagrange: Vec<f64>,
    pub state: DensityMatrix,
    pub log_partition: f64,
}

impl GibbsState {
    pub fn from_lagrange(
        reference: &DensityMatrix,
        level: &LevelOfDescription,
        lagrange: Vec<f64>,
    ) -> Result<Self> {
        check_dims(reference.dim(), level.dim())?;
        if lagrange.len() != level.p() {
            return Err(Error::DimMismatch {
                expected: level.p(),
                found: lagrange.len(),
            });
        }
        let base = reference_exponent(reference)?;
        Self::assemble(reference, level, &base, lagrange)
    }

    fn assemble(
        reference: &DensityMatrix,
        level: &LevelOfDescription,
        base: &HermitianOperator,
        lagrange: Vec<f64>,
    ) -> Result<Self> {
        let mut exponent = base.clone();
        for (l, g) in lagrange.iter().zip(level.observables()) {
            exponent = exponent.add_scaled(-l, g);
        }
        let (state, log_partition) = gibbs_with_log_partition(&exponent)?;
        Ok(Self {
            reference: reference.clone(),
            level: level.clone(),
            lagrange,
            state,
            log_partition,
        })
    }

    pub fn moments(&self) -> Result<Vec<f64>> {
        self.level
            .observables()
            .iter()
            .map(|g| expectation(g, &self.state))
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol_moment: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_moment: 1e-10,
            max_iterations: 200,
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Finds the Gibbs state on `level`'s manifold with `⟨G_a⟩ = targets[a]`.
pub fn solve_moments(
    reference: &DensityMatrix,
    level: &LevelOfDescription,
    targets: &[f64],
    options: SolverOptions,
) -> Result<GibbsState> {
    check_dims(reference.dim(), level.dim())?;
    let p = level.p();
    if targets.len() != p {
        return Err(Error::DimMismatch {
            expected: p,
            found: targets.len(),
        });
    }
    let base = reference_exponent(reference)?;
    if p == 0 {
        return GibbsState::assemble(reference, level, &base, Vec::new());
    }

    // each target must lie strictly inside the spectral range of its observable
    for (g, &t) in level.observables().iter().zip(targets) {
        let spec = spectral_decompose(g)?;
        let lo = spec.values[0];
        let hi = *spec.values.last().unwrap();
        if !t.is_finite() || t <= lo || t >= hi {
            let outside = if t <= lo { lo - t } else { t - hi };
            return Err(Error::InfeasibleMoments {
                max_residual: outside.abs(),
            });
        }
    }

    let residual_of = |gs: &GibbsState| -> Result<Vec<f64>> {
        Ok(gs
            .moments()?
            .iter()
            .zip(targets)
            .map(|(m, t)| m - t)
            .collect())
    };
    // convex dual whose gradient is minus the residual
    let dual = |gs: &GibbsState| -> f64 {
        gs.log_partition
            + gs.lagrange
                .iter()
                .zip(targets)
                .map(|(l, t)| l * t)
                .sum::<f64>()
    };

    let mut current = GibbsState::assemble(reference, level, &base, vec![0.0; p])?;
    let mut residual = residual_of(&current)?;
    let mut history = vec![max_abs(&residual)];

    for iteration in 0..options.max_iterations {
        if max_abs(&residual) <= options.tol_moment {
            return Ok(current);
        }
        let jac = centered_kubo_mori_matrix(level.observables(), &current.state)?;
        let rhs = DVector::from_column_slice(&residual);
        let step = match jac.clone().cholesky() {
            Some(ch) => Some(ch.solve(&rhs)),
            None => jac.lu().solve(&rhs),
        };
        let Some(step) = step.filter(|s| s.iter().all(|x| x.is_finite())) else {
            return Err(failure(&current, &residual, iteration, history));
        };

        let r_norm = norm2(&residual);
        let phi = dual(&current);
        let descent: f64 = step.iter().zip(&residual).map(|(s, r)| s * r).sum();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = current
                .lagrange
                .iter()
                .zip(step.iter())
                .map(|(l, s)| l + t * s)
                .collect();
            let candidate = GibbsState::assemble(reference, level, &base, trial)?;
            let r = residual_of(&candidate)?;
            if norm2(&r) < r_norm || dual(&candidate) <= phi - 1e-4 * t * descent {
                accepted = Some((candidate, r));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((candidate, r)) => {
                current = candidate;
                residual = r;
                history.push(max_abs(&residual));
            }
            None => return Err(failure(&current, &residual, iteration, history)),
        }
    }
    if max_abs(&residual) <= options.tol_moment {
        return Ok(current);
    }
    Err(failure(&current, &residual, options.max_iterations, history))
}

fn failure(current: &GibbsState, residual: &[f64], iterations: usize, history: Vec<f64>) -> Error {
    let max_residual = max_abs(residual);
    let near_boundary = current.state.min_eigenvalue() < 1e-7
        || current.lagrange.iter().any(|l| l.abs() > 1e3);
    if near_boundary {
        Error::InfeasibleMoments { max_residual }
    } else {
        let tail = history.len().saturating_sub(10);
        Error::SolverDiverged {
            iterations,
            residuals: history[tail..].to_vec(),
        }
    }
}

/// The coarse graining `π^σ_G(μ)`.
pub fn project(
    mu: &DensityMatrix,
    level: &LevelOfDescription,
    reference: &DensityMatrix,
) -> Result<GibbsState> {
    project_with(mu, level, reference, SolverOptions::default())
}

pub fn project_with(
    mu: &DensityMatrix,
    level: &LevelOfDescription,
    reference: &DensityMatrix,
    options: SolverOptions,
) -> Result<GibbsState> {
    check_dims(level.dim(), mu.dim())?;
    let targets = level
        .observables()
        .iter()
        .map(|g| expectation(g, mu))
        .collect::<Result<Vec<_>>>()?;
    solve_moments(reference, level, &targets, options)
}

/// State on the measured manifold reproducing one sample's means.
pub fn tomographic_image(
    means: &[f64],
    observables: &LevelOfDescription,
    reference: &DensityMatrix,
) -> Result<DensityMatrix> {
    solve_moments(reference, observables, means, SolverOptions::default()).map(|g| g.state)
}

/// Normalization of `exp[(1 − x) ln π + x ln σ]`.
pub fn interpolate(projection: &GibbsState, reference: &DensityMatrix, x: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!("mixing parameter {x} outside [0, 1]")));
    }
    check_dims(projection.state.dim(), reference.dim())?;
    let lp = matrix_log(&projection.state)?;
    let ls = matrix_log(reference)?;
    let exponent = lp.scale(1.0 - x).add_scaled(x, &ls);
    gibbs_with_log_partition(&exponent).map(|(s, _)| s)
}

#[derive(Clone, Debug)]
pub struct CenterOfMass {
    /// Normalized `exp(Σ w_i ln ρ_i)`.
    pub exponential_mean: DensityMatrix,
    /// `Σ w_i ρ_i`.
    pub mixture_mean: DensityMatrix,
}

fn check_weights(weights: &[f64], count: usize) -> Result<()> {
    if weights.len() != count {
        return Err(Error::DimMismatch {
            expected: count,
            found: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "weights must be nonnegative and sum to 1 (sum = {total})"
        )));
    }
    Ok(())
}

pub fn center_of_mass(states: &[DensityMatrix], weights: &[f64]) -> Result<CenterOfMass> {
    check_weights(weights, states.len())?;
    let first = states
        .first()
        .ok_or_else(|| Error::InvalidArgument("no states".into()))?;
    let mut exponent = HermitianOperator::zeros(first.dim());
    for (s, w) in states.iter().zip(weights) {
        exponent = exponent.add_scaled(*w, &matrix_log(s)?);
    }
    let exponential_mean = gibbs_with_log_partition(&exponent)?.0;
    let refs: Vec<&DensityMatrix> = states.iter().collect();
    let mixture_mean = DensityMatrix::mixture(&refs, weights)?;
    Ok(CenterOfMass {
        exponential_mean,
        mixture_mean,
    })
}

/// `S(μ‖ω) − S(μ‖π^σ_G(μ)) − S(π^σ_G(μ)‖ω)`, zero for any `ω` on the manifold.
pub fn pythagoras_residual(
    mu: &DensityMatrix,
    level: &LevelOfDescription,
    reference: &DensityMatrix,
    omega: &GibbsState,
) -> Result<f64> {
    let pi = project(mu, level, reference)?;
    Ok(relative_entropy(mu, &omega.state)?
        - relative_entropy(mu, &pi.state)?
        - relative_entropy(&pi.state, &omega.state)?)
}

/// Per-sample geometry entering the full log-likelihood.
#[derive(Clone, Debug)]
pub struct SampleGeometry {
    pub image: DensityMatrix,
    pub projection: GibbsState,
    pub interpolant: DensityMatrix,
    pub mixing: f64,
    pub weight: f64,
}

pub fn sample_geometries(
    images: &[DensityMatrix],
    sizes: &[u64],
    level: &LevelOfDescription,
    reference: &DensityMatrix,
    alpha: f64,
) -> Result<Vec<SampleGeometry>> {
    if images.len() != sizes.len() {
        return Err(Error::DimMismatch {
            expected: images.len(),
            found: sizes.len(),
        });
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let total: f64 = sizes.iter().map(|&n| n as f64).sum();
    images
        .iter()
        .zip(sizes)
        .map(|(image, &n)| {
            let n = n as f64;
            let mixing = alpha / (alpha + n);
            let projection = project(image, level, reference)?;
            let interpolant = interpolate(&projection, reference, mixing)?;
            Ok(SampleGeometry {
                image: image.clone(),
                projection,
                interpolant,
                mixing,
                weight: n / total,
            })
        })
        .collect()
}

/// Whether a set of states is tight enough for the quadratic approximations.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianRegime {
    pub is_gaussian: bool,
    pub max_pairwise_entropy: f64,
    pub max_center_entropy: f64,
}

pub fn gaussian_regime(images: &[DensityMatrix], center: &DensityMatrix) -> Result<GaussianRegime> {
    let mut pairwise = 0.0_f64;
    for (i, a) in images.iter().enumerate() {
        for (j, b) in images.iter().enumerate() {
            if i != j {
                pairwise = pairwise.max(relative_entropy(a, b)?);
            }
        }
    }
    let mut to_center = 0.0_f64;
    for a in images {
        to_center = to_center.max(relative_entropy(a, center)?);
    }
    Ok(GaussianRegime {
        is_gaussian: pairwise <= GAUSSIAN_PAIRWISE_RADIUS && to_center <= GAUSSIAN_CENTER_RADIUS,
        max_pairwise_entropy: pairwise,
        max_center_entropy: to_center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::gibbs_normalize;

    fn pauli_level() -> LevelOfDescription {
        LevelOfDescription::new("F", HermitianOperator::paulis().to_vec()).unwrap()
    }

    fn z_level() -> LevelOfDescription {
        LevelOfDescription::new("Z", vec![HermitianOperator::pauli_z()]).unwrap()
    }

    #[test]
    fn rejects_dependent_levels() {
        let z = HermitianOperator::pauli_z();
        let err = LevelOfDescription::new("bad", vec![z.clone(), z.scale(2.0)]).unwrap_err();
        assert!(matches!(err, Error::DependentLevel { .. }));
        // the unit operator is implicit, so adding it is a dependency too
        let err = LevelOfDescription::new("bad", vec![HermitianOperator::identity(2)]).unwrap_err();
        assert!(matches!(err, Error::DependentLevel { .. }));
    }

    #[test]
    fn containment_check() {
        let f = pauli_level();
        let z = z_level();
        assert!(z.is_contained_in(&f));
        assert!(!f.is_contained_in(&z));
        let shifted = LevelOfDescription::new("Z+1", vec![HermitianOperator::pauli_z().shifted(3.0)]).unwrap();
        assert!(shifted.is_contained_in(&z));
    }

    #[test]
    fn tomography_of_qubit_means() {
        let sigma = DensityMatrix::maximally_mixed(2);
        let f = pauli_level();
        let mu = tomographic_image(&[0.0, 0.0, 0.0], &f, &sigma).unwrap();
        assert!(mu.frobenius_distance(&sigma) < 1e-12);

        let mu = tomographic_image(&[0.1, 0.0, 0.02], &f, &sigma).unwrap();
        let b = mu.bloch_vector().unwrap();
        assert!((b[0] - 0.1).abs() < 1e-10 && b[1].abs() < 1e-10 && (b[2] - 0.02).abs() < 1e-10);

        let err = tomographic_image(&[0.99999, 0.99999, 0.99999], &f, &sigma).unwrap_err();
        assert!(matches!(err, Error::InfeasibleMoments { .. }), "{err:?}");

        let err = tomographic_image(&[0.1, 0.0], &f, &sigma).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { .. }));
    }

    #[test]
    fn projection_examples() {
        let sigma = DensityMatrix::maximally_mixed(2);
        let mu = DensityMatrix::from_bloch([0.1, 0.0, 0.02]).unwrap();

        let pi = project(&mu, &z_level(), &sigma).unwrap();
        let b = pi.state.bloch_vector().unwrap();
        assert!(b[0].abs() < 1e-10 && b[1].abs() < 1e-10 && (b[2] - 0.02).abs() < 1e-10);

        let empty = LevelOfDescription::empty("empty", 2);
        let pi = project(&mu, &empty, &sigma).unwrap();
        assert!(pi.state.frobenius_distance(&sigma) < 1e-14);

        // idempotence on a state already on the manifold
        let on = GibbsState::from_lagrange(&sigma, &z_level(), vec![0.4]).unwrap();
        let again = project(&on.state, &z_level(), &sigma).unwrap();
        assert!(again.state.frobenius_distance(&on.state) < 1e-9);
        assert!((again.lagrange[0] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn projection_with_nonuniform_reference_keeps_reference_direction() {
        let sigma = DensityMatrix::from_bloch([0.3, 0.0, 0.0]).unwrap();
        let mu = DensityMatrix::from_bloch([0.0, 0.2, 0.1]).unwrap();
        let pi = project(&mu, &z_level(), &sigma).unwrap();
        let z = expectation(&HermitianOperator::pauli_z(), &pi.state).unwrap();
        assert!((z - 0.1).abs() < 1e-10);
        let state = gibbs_normalize(
            &reference_exponent(&sigma)
                .unwrap()
                .add_scaled(-pi.lagrange[0], &HermitianOperator::pauli_z()),
        )
        .unwrap();
        assert!(state.frobenius_distance(&pi.state) < 1e-12);
    }

    #[test]
    fn interpolation_endpoints_and_diagonal_case() {
        let sigma = DensityMatrix::from_operator(&HermitianOperator::diagonal(&[0.5, 0.3, 0.2])).unwrap();
        let level = LevelOfDescription::new("D", vec![HermitianOperator::diagonal(&[1.0, 0.0, -1.0])]).unwrap();
        let pi = GibbsState::from_lagrange(&sigma, &level, vec![-0.7]).unwrap();

        let at0 = interpolate(&pi, &sigma, 0.0).unwrap();
        assert!(at0.frobenius_distance(&pi.state) < 1e-12);
        let at1 = interpolate(&pi, &sigma, 1.0).unwrap();
        assert!(at1.frobenius_distance(&sigma) < 1e-12);

        let x = 0.3_f64;
        let mid = interpolate(&pi, &sigma, x).unwrap();
        let p = (0..3).map(|i| pi.state.matrix()[(i, i)].re).collect::<Vec<_>>();
        let s = [0.5_f64, 0.3, 0.2];
        let raw: Vec<f64> = (0..3).map(|i| p[i].powf(1.0 - x) * s[i].powf(x)).collect();
        let total: f64 = raw.iter().sum();
        for i in 0..3 {
            assert!((mid.matrix()[(i, i)].re - raw[i] / total).abs() < 1e-12);
        }
        assert!(interpolate(&pi, &sigma, 1.5).is_err());
    }

    #[test]
    fn center_of_mass_examples() {
        let a = DensityMatrix::from_bloch([0.1, 0.05, -0.2]).unwrap();
        let single = center_of_mass(std::slice::from_ref(&a), &[1.0]).unwrap();
        assert!(single.exponential_mean.frobenius_distance(&a) < 1e-12);
        assert!(single.mixture_mean.frobenius_distance(&a) < 1e-12);

        let p = DensityMatrix::from_operator(&HermitianOperator::diagonal(&[0.7, 0.2, 0.1])).unwrap();
        let q = DensityMatrix::from_operator(&HermitianOperator::diagonal(&[0.2, 0.5, 0.3])).unwrap();
        let com = center_of_mass(&[p, q], &[0.5, 0.5]).unwrap();
        let geo: Vec<f64> = [(0.7, 0.2), (0.2, 0.5), (0.1, 0.3)]
            .iter()
            .map(|(x, y): &(f64, f64)| (x * y).sqrt())
            .collect();
        let total: f64 = geo.iter().sum();
        let arith = [0.45, 0.35, 0.2];
        for i in 0..3 {
            assert!((com.exponential_mean.matrix()[(i, i)].re - geo[i] / total).abs() < 1e-12);
            assert!((com.mixture_mean.matrix()[(i, i)].re - arith[i]).abs() < 1e-14);
        }
        assert!(center_of_mass(&[a.clone(), a], &[0.6, 0.6]).is_err());
    }

    #[test]
    fn pythagoras_vanishes_at_the_projection() {
        let sigma = DensityMatrix::maximally_mixed(2);
        let mu = DensityMatrix::from_bloch([0.2, -0.1, 0.3]).unwrap();
        let pi = project(&mu, &z_level(), &sigma).unwrap();
        let r = pythagoras_residual(&mu, &z_level(), &sigma, &pi).unwrap();
        assert!(r.abs() < 1e-14);
    }

    #[test]
    fn sample_geometry_weights_and_mixing() {
        let sigma = DensityMatrix::maximally_mixed(2);
        let images = vec![
            DensityMatrix::from_bloch([0.1, 0.0, 0.2]).unwrap(),
            DensityMatrix::from_bloch([0.0, 0.1, 0.25]).unwrap(),
            DensityMatrix::from_bloch([0.05, 0.0, 0.15]).unwrap(),
        ];
        let sizes = [100, 300, 600];
        let geo = sample_geometries(&images, &sizes, &z_level(), &sigma, 5.0).unwrap();
        let total: f64 = geo.iter().map(|g| g.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (g, &n) in geo.iter().zip(&sizes) {
            assert!((g.mixing - 5.0 / (5.0 + n as f64)).abs() < 1e-15);
            let a = expectation(&HermitianOperator::pauli_z(), &g.image).unwrap();
            let b = expectation(&HermitianOperator::pauli_z(), &g.projection.state).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }
}
