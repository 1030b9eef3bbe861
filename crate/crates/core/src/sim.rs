//! Synthetic tomography datasets and Monte Carlo recovery studies.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{
    parse_observables, parse_reference, pauli_observables, Dataset, NamedObservable, ObservableEntry, ReferenceEntry,
    ReferenceState, Sample,
};
use crate::error::{Error, Result};
use crate::gibbs::reference_exponent;
use crate::operator::{expectation, gibbs_normalize, spectral_decompose, DensityMatrix, HermitianOperator, MatrixRows};
use crate::report::{assess, AssessOptions, VerdictStatus};

pub const RNG_NAME: &str = "ChaCha20 (rand_chacha), seed_from_u64(seed), stream = trial index";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    #[default]
    Multinomial,
    Gaussian,
}

impl NoiseModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Multinomial => "multinomial",
            Self::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for NoiseModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(Self::Multinomial),
            "gaussian" => Ok(Self::Gaussian),
            _ => Err(Error::InvalidArgument(format!("unknown noise model '{s}'"))),
        }
    }
}

/// Generating states of a simulation.
#[derive(Clone, Debug)]
pub enum Truth {
    /// `ρ_i ∝ exp[(ln σ − ⟨ln σ⟩_σ) + β_i Σ_b ξ^b F_b]`
    Canonical { xi: Vec<f64>, betas: Vec<f64> },
    /// Fixed states, one per sample.
    States(Vec<DensityMatrix>),
    /// Qubit states drawn uniformly from a Bloch ball, fresh for every trial.
    BlochBall { center: [f64; 3], radius: f64, count: usize },
}

#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub observables: Vec<NamedObservable>,
    pub reference: ReferenceState,
    pub truth: Truth,
    pub sizes: Vec<u64>,
    pub noise: NoiseModel,
    pub seed: u64,
}

/// On-disk simulation setup. Observables default to the Pauli operators.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFile {
    #[serde(default)]
    pub observables: Option<Vec<ObservableEntry>>,
    #[serde(default = "uniform_entry")]
    pub reference_state: ReferenceEntry,
    pub truth: TruthEntry,
    pub sizes: Vec<u64>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
}

fn uniform_entry() -> ReferenceEntry {
    ReferenceEntry::Named("uniform".into())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthEntry {
    Canonical { xi: Vec<f64>, betas: Vec<f64> },
    States(Vec<MatrixRows>),
    BlochBall { center: [f64; 3], radius: f64 },
}

impl SimulationFile {
    pub fn into_config(self) -> Result<SimulationConfig> {
        let observables = match self.observables {
            Some(entries) => parse_observables(entries)?,
            None => pauli_observables(),
        };
        let reference = parse_reference(self.reference_state)?;
        let truth = match self.truth {
            TruthEntry::Canonical { xi, betas } => Truth::Canonical { xi, betas },
            TruthEntry::States(rows) => Truth::States(
                rows.iter()
                    .enumerate()
                    .map(|(i, r)| {
                        DensityMatrix::from_rows(r)
                            .map_err(|e| Error::InvalidArgument(format!("truth.states[{i}]: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            TruthEntry::BlochBall { center, radius } => Truth::BlochBall {
                center,
                radius,
                count: self.sizes.len(),
            },
        };
        let config = SimulationConfig {
            observables,
            reference,
            truth,
            sizes: self.sizes,
            noise: self.noise,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

impl SimulationConfig {
    pub fn dim(&self) -> usize {
        self.observables.first().map_or(0, |o| o.operator.dim())
    }

    pub fn samples(&self) -> usize {
        self.sizes.len()
    }

    fn validate(&self) -> Result<()> {
        let r = self.sizes.len();
        if r == 0 {
            return Err(Error::InvalidArgument("simulation needs at least one sample".into()));
        }
        if self.sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument("sample sizes must be at least 1".into()));
        }
        let m = self.observables.len();
        if self.noise == NoiseModel::Multinomial && self.sizes.iter().any(|&n| (n as usize) < m) {
            return Err(Error::InvalidArgument(format!(
                "multinomial sampling needs at least {m} copies per sample"
            )));
        }
        match &self.truth {
            Truth::Canonical { xi, betas } => {
                if xi.len() != m {
                    return Err(Error::DimMismatch { expected: m, found: xi.len() });
                }
                if betas.len() != r {
                    return Err(Error::DimMismatch { expected: r, found: betas.len() });
                }
                if betas.iter().chain(xi).any(|x| !x.is_finite()) {
                    return Err(Error::InvalidArgument("truth parameters must be finite".into()));
                }
            }
            Truth::States(states) => {
                if states.len() != r {
                    return Err(Error::DimMismatch { expected: r, found: states.len() });
                }
                if let Some(s) = states.iter().find(|s| s.dim() != self.dim()) {
                    return Err(Error::DimMismatch { expected: self.dim(), found: s.dim() });
                }
            }
            Truth::BlochBall { center, radius, count } => {
                if self.dim() != 2 {
                    return Err(Error::InvalidArgument("Bloch-ball truth needs a qubit".into()));
                }
                if *count != r {
                    return Err(Error::DimMismatch { expected: r, found: *count });
                }
                let c = center.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(*radius >= 0.0) || c + radius >= 1.0 {
                    return Err(Error::InvalidArgument("Bloch ball must lie inside the unit ball".into()));
                }
            }
        }
        Ok(())
    }

    /// The generating states for one trial; draws from `rng` only for random truths.
    pub fn true_states(&self, rng: &mut ChaCha20Rng) -> Result<Vec<DensityMatrix>> {
        match &self.truth {
            Truth::Canonical { xi, betas } => {
                let sigma = self.reference_state();
                let base = reference_exponent(&sigma)?;
                let ops: Vec<HermitianOperator> = self.observables.iter().map(|o| o.operator.clone()).collect();
                let generator = HermitianOperator::linear_combination(xi, &ops)?;
                betas
                    .iter()
                    .map(|b| gibbs_normalize(&base.add_scaled(*b, &generator)))
                    .collect()
            }
            Truth::States(states) => Ok(states.clone()),
            Truth::BlochBall { center, radius, count } => (0..*count)
                .map(|_| {
                    let u = uniform_in_ball(rng);
                    DensityMatrix::from_bloch([
                        center[0] + radius * u[0],
                        center[1] + radius * u[1],
                        center[2] + radius * u[2],
                    ])
                })
                .collect(),
        }
    }

    pub fn reference_state(&self) -> DensityMatrix {
        match &self.reference {
            ReferenceState::Uniform => DensityMatrix::maximally_mixed(self.dim()),
            ReferenceState::Explicit(s) => s.clone(),
        }
    }

    /// Constants of the motion of the generating family, when known.
    pub fn true_p(&self) -> Option<usize> {
        match &self.truth {
            Truth::Canonical { .. } => Some(1),
            Truth::BlochBall { .. } => Some(self.observables.len()),
            Truth::States(_) => None,
        }
    }
}

fn uniform_in_ball(rng: &mut ChaCha20Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        if v.iter().map(|x: &f64| x * x).sum::<f64>() <= 1.0 {
            return v;
        }
    }
}

/// Generator for one trial's independent stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Empirical mean of `copies` projective measurements of `op` on `rho`.
fn measure_multinomial(op: &HermitianOperator, rho: &DensityMatrix, copies: u64, rng: &mut ChaCha20Rng) -> Result<f64> {
    let spec = spectral_decompose(op)?;
    let d = op.dim();
    let probs: Vec<f64> = (0..d)
        .map(|j| {
            let v = spec.vectors.column(j);
            (v.adjoint() * rho.matrix() * v)[(0, 0)].re.max(0.0)
        })
        .collect();
    let total: f64 = probs.iter().sum();
    let mut remaining = copies;
    let mut mass = 1.0;
    let mut sum = 0.0;
    for j in 0..d {
        if remaining == 0 {
            break;
        }
        let p = probs[j] / total;
        let count = if j == d - 1 || mass <= 0.0 {
            remaining
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, q)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(rng)
        };
        sum += count as f64 * spec.values[j];
        remaining -= count;
        mass -= p;
    }
    Ok(sum / copies as f64)
}

fn variance(op: &HermitianOperator, rho: &DensityMatrix) -> Result<f64> {
    let sq = HermitianOperator::new(op.matrix() * op.matrix())?;
    Ok((expectation(&sq, rho)? - expectation(op, rho)?.powi(2)).max(0.0))
}

/// Simulates one trial on its own stream.
pub fn simulate_trial(config: &SimulationConfig, trial: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = trial_rng(config.seed, trial);
    let states = config.true_states(&mut rng)?;
    let m = config.observables.len();
    let mut samples = Vec::with_capacity(states.len());
    let mut exact = Vec::with_capacity(states.len());
    for (rho, &n) in states.iter().zip(&config.sizes) {
        let mut means = Vec::with_capacity(m);
        let mut truth = Vec::with_capacity(m);
        for o in &config.observables {
            let mean = expectation(&o.operator, rho)?;
            truth.push(mean);
            let value = match config.noise {
                NoiseModel::Multinomial => measure_multinomial(&o.operator, rho, n / m as u64, &mut rng)?,
                NoiseModel::Gaussian => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + z * (variance(&o.operator, rho)? / n as f64).sqrt()
                }
            };
            means.push(value);
        }
        samples.push(Sample { size: n, means });
        exact.push(truth);
    }
    let mut meta = json!({
        "generator": "thermoscope simulate",
        "rng": RNG_NAME,
        "seed": config.seed,
        "stream": trial,
        "noise_model": config.noise.as_str(),
        "true_means": exact,
    });
    if let Truth::Canonical { xi, betas } = &config.truth {
        meta["truth"] = json!({"xi": xi, "betas": betas});
    }
    Dataset::new(config.observables.clone(), config.reference.clone(), samples, Some(meta))
}

/// Simulates the dataset described by `config` (stream 0).
pub fn simulate_dataset(config: &SimulationConfig) -> Result<Dataset> {
    simulate_trial(config, 0)
}

/// Named configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Anisotropic qubit spread with `Γ₊ = f̄·f̄ = 0.01`, `Γ₋ = 1e-4`, tilt `π/16`.
    #[serde(rename = "paper-qubit")]
    TiltedQubit,
    /// One-parameter family along `Z`, `β_i` within ±20% of 0.2.
    ZAxis,
    /// Generic qubit states in a Bloch ball of radius 0.1.
    Isotropic,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-qubit" => Ok(Self::TiltedQubit),
            "z-axis" => Ok(Self::ZAxis),
            "isotropic" => Ok(Self::Isotropic),
            _ => Err(Error::InvalidArgument(format!(
                "unknown preset '{s}' (expected paper-qubit, z-axis or isotropic)"
            ))),
        }
    }
}

pub const PRESET_SAMPLES: usize = 10;
pub const PRESET_SIZE: u64 = 20000;

/// Zero-mean, mutually orthogonal patterns over `r` samples with unit mean square.
pub fn orthogonal_patterns(r: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    if r < count + 1 {
        return Err(Error::InvalidArgument(format!("need at least {} samples for {count} patterns", count + 1)));
    }
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(r, 1.0 / (r as f64).sqrt())];
    let mut out = Vec::new();
    let mut k = 1;
    while out.len() < count {
        let c = (r as f64 - 1.0) / 2.0;
        let mut v = if k <= 3 {
            DVector::from_fn(r, |i, _| ((i as f64 - c) / r as f64).powi(k as i32))
        } else {
            DVector::from_fn(r, |i, _| (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / r as f64).cos())
        };
        for b in &basis {
            let o = b.dot(&v);
            v -= b * o;
        }
        let n = v.norm();
        if n > 1e-8 {
            let unit = v / n;
            basis.push(unit.clone());
            out.push((unit * (r as f64).sqrt()).iter().copied().collect());
        }
        k += 1;
    }
    Ok(out)
}

/// States whose Bloch vectors reproduce the anisotropic example exactly,
/// with the expected noise variance subtracted from the spread.
pub fn tilted_qubit_states(noise_variance: f64) -> Result<Vec<DensityMatrix>> {
    let theta = std::f64::consts::PI / 16.0;
    let center = [0.1 * theta.sin(), 0.0, 0.1 * theta.cos()];
    let along = (0.01 - noise_variance).max(0.0).sqrt();
    let across = (1e-4 - noise_variance).max(0.0).sqrt();
    let patterns = orthogonal_patterns(PRESET_SAMPLES, 3)?;
    (0..PRESET_SAMPLES)
        .map(|i| {
            DensityMatrix::from_bloch([
                center[0] + across * patterns[1][i],
                center[1] + across * patterns[2][i],
                center[2] + along * patterns[0][i],
            ])
        })
        .collect()
}

impl Preset {
    pub fn config(&self, seed: u64, noise: Option<NoiseModel>) -> Result<SimulationConfig> {
        let sizes = vec![PRESET_SIZE; PRESET_SAMPLES];
        let (truth, default_noise) = match self {
            Preset::TiltedQubit => {
                let noise = noise.unwrap_or(NoiseModel::Gaussian);
                // per-axis variance of a mean over N copies (gaussian) or N/3 copies (multinomial)
                let copies = match noise {
                    NoiseModel::Gaussian => PRESET_SIZE as f64,
                    NoiseModel::Multinomial => (PRESET_SIZE / 3) as f64,
                };
                (Truth::States(tilted_qubit_states(1.0 / copies)?), noise)
            }
            Preset::ZAxis => {
                let r = PRESET_SAMPLES as f64;
                let betas = (0..PRESET_SAMPLES)
                    .map(|i| 0.2 * (1.0 + 0.2 * (2.0 * i as f64 / (r - 1.0) - 1.0)))
                    .collect();
                (
                    Truth::Canonical {
                        xi: vec![0.0, 0.0, 1.0],
                        betas,
                    },
                    NoiseModel::Gaussian,
                )
            }
            Preset::Isotropic => (
                Truth::BlochBall {
                    center: [0.0, 0.0, 0.2f64.tanh()],
                    radius: 0.1,
                    count: PRESET_SAMPLES,
                },
                NoiseModel::Gaussian,
            ),
        };
        Ok(SimulationConfig {
            observables: pauli_observables(),
            reference: ReferenceState::Uniform,
            truth,
            sizes,
            noise: noise.unwrap_or(default_noise),
            seed,
        })
    }
}

/// One row of a recovery study.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrialOutcome {
    pub trial: u64,
    pub selected_p: Option<usize>,
    pub winner: Option<String>,
    pub verdict: Option<VerdictStatus>,
    /// Angle between estimated and generating `ξ` in degrees.
    pub xi_angle_degrees: Option<f64>,
    /// Mean relative error of `β_i` against the generating values.
    pub beta_relative_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StudySummary {
    pub trials: usize,
    pub failures: usize,
    pub true_p: Option<usize>,
    pub recovery_fraction: Option<f64>,
    pub xi_angle_median: Option<f64>,
    pub xi_angle_p90: Option<f64>,
    pub beta_error_median: Option<f64>,
    pub beta_error_p90: Option<f64>,
    pub thermalized: usize,
    pub not_thermalized: usize,
    pub inconclusive: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Study {
    pub rows: Vec<TrialOutcome>,
    pub summary: StudySummary,
}

fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

fn run_trial(config: &SimulationConfig, trial: u64, options: &AssessOptions) -> TrialOutcome {
    let mut row = TrialOutcome {
        trial,
        selected_p: None,
        winner: None,
        verdict: None,
        xi_angle_degrees: None,
        beta_relative_error: None,
        error: None,
    };
    let result = simulate_trial(config, trial).and_then(|ds| assess(&ds, options));
    match result {
        Ok(a) => {
            row.selected_p = Some(a.report.winner_p);
            row.winner = Some(a.report.winner.clone());
            row.verdict = Some(a.report.verdict.status);
            if let (Some(h), Truth::Canonical { xi, betas }) = (&a.report.hamiltonian, &config.truth) {
                let metric = &a.analysis.metric;
                let est = DVector::from_column_slice(&h.xi);
                let truth = DVector::from_column_slice(xi);
                let cos = metric.dot(&est, &truth) / metric.norm(&truth);
                row.xi_angle_degrees = Some(cos.abs().clamp(-1.0, 1.0).acos().to_degrees());
                let scale = metric.norm(&truth) * cos.signum();
                let errs: Vec<f64> = h
                    .per_sample_beta
                    .iter()
                    .zip(betas)
                    .map(|(b, t)| ((b - t * scale) / (t * scale)).abs())
                    .collect();
                row.beta_relative_error = Some(errs.iter().sum::<f64>() / errs.len() as f64);
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Simulates and assesses `trials` independent datasets.
pub fn recovery_study(config: &SimulationConfig, trials: usize, options: &AssessOptions) -> Result<Study> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    config.validate()?;
    let rows: Vec<TrialOutcome> = (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(config, t, options))
        .collect();
    let ok: Vec<&TrialOutcome> = rows.iter().filter(|r| r.error.is_none()).collect();
    let true_p = config.true_p();
    let recovery_fraction = true_p.map(|p| {
        ok.iter().filter(|r| r.selected_p == Some(p)).count() as f64 / trials as f64
    });
    let angles: Vec<f64> = ok.iter().filter_map(|r| r.xi_angle_degrees).collect();
    let betas: Vec<f64> = ok.iter().filter_map(|r| r.beta_relative_error).collect();
    let count = |s: VerdictStatus| ok.iter().filter(|r| r.verdict == Some(s)).count();
    let summary = StudySummary {
        trials,
        failures: rows.len() - ok.len(),
        true_p,
        recovery_fraction,
        xi_angle_median: quantile(&angles, 0.5),
        xi_angle_p90: quantile(&angles, 0.9),
        beta_error_median: quantile(&betas, 0.5),
        beta_error_p90: quantile(&betas, 0.9),
        thermalized: count(VerdictStatus::Thermalized),
        not_thermalized: count(VerdictStatus::NotThermalized),
        inconclusive: count(VerdictStatus::Inconclusive),
    };
    Ok(Study { rows, summary })
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

impl Study {
    /// One row per trial followed by a summary row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record([
            "trial",
            "selected_p",
            "winner",
            "verdict",
            "xi_angle_degrees",
            "beta_relative_error",
            "error",
        ])
        .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.trial.to_string(),
                opt(&r.selected_p),
                opt(&r.winner),
                r.verdict.map(|v| v.as_str().to_string()).unwrap_or_default(),
                opt(&r.xi_angle_degrees),
                opt(&r.beta_relative_error),
                opt(&r.error),
            ])
            .map_err(io)?;
        }
        let s = &self.summary;
        w.write_record([
            "summary".to_string(),
            opt(&s.recovery_fraction),
            format!("true_p={}", opt(&s.true_p)),
            format!(
                "thermalized={} not-thermalized={} inconclusive={}",
                s.thermalized, s.not_thermalized, s.inconclusive
            ),
            format!("median={} p90={}", opt(&s.xi_angle_median), opt(&s.xi_angle_p90)),
            format!("median={} p90={}", opt(&s.beta_error_median), opt(&s.beta_error_p90)),
            format!("failures={}", s.failures),
        ])
        .map_err(io)?;
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
