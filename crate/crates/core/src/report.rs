//! The assessment pipeline: score candidates, pick a winner, estimate the
//! Hamiltonian when one constant of the motion remains, and issue a verdict.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gibbs::{project, GaussianRegime, LevelOfDescription};
use crate::hamiltonian::{estimate_hamiltonian, EstimateOptions, HamiltonianEstimate, XiMethod, MIN_SPREAD};
use crate::operator::expectation;
use crate::selection::{Analysis, ModelScore, Orientation};

pub const DEFAULT_MARGIN_FACTOR: f64 = 3.0;

#[derive(Clone, Debug, Default)]
pub enum Candidates {
    #[default]
    Auto,
    Explicit(Vec<LevelOfDescription>),
}

#[derive(Clone, Debug)]
pub struct AssessOptions {
    pub candidates: Candidates,
    /// `None` estimates `α` per candidate from the evidence condition.
    pub alpha: Option<f64>,
    pub margin_factor: f64,
    pub method: XiMethod,
}

impl Default for AssessOptions {
    fn default() -> Self {
        Self {
            candidates: Candidates::Auto,
            alpha: None,
            margin_factor: DEFAULT_MARGIN_FACTOR,
            method: XiMethod::Exact,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictStatus {
    Thermalized,
    NotThermalized,
    Inconclusive,
}

impl VerdictStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Thermalized => "thermalized",
            Self::NotThermalized => "not-thermalized",
            Self::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub reason: String,
    pub margin_factor: f64,
    /// `rhs/lhs` of the general thermalization condition.
    pub margin: Option<f64>,
    /// The two qubit margins, when the qubit specialization applies.
    pub qubit_margins: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Comparison {
    pub smaller: String,
    pub larger: String,
    /// `L(larger) − L(smaller)` via the reference-shifted route.
    pub delta_log_likelihood: f64,
    /// The same difference taken directly from the two scores.
    pub direct_difference: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CandidateFailure {
    pub label: String,
    pub p: usize,
    pub error: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Settings {
    pub candidates: String,
    pub alpha: Option<f64>,
    pub margin_factor: f64,
    pub method: XiMethod,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub dataset_digest: String,
    pub dimension: usize,
    pub observables: Vec<String>,
    pub samples: usize,
    pub total_size: f64,
    pub log_size_sum: f64,
    pub gaussian_regime: GaussianRegime,
    pub scores: Vec<ModelScore>,
    pub failures: Vec<CandidateFailure>,
    pub winner: String,
    pub winner_p: usize,
    pub comparisons: Vec<Comparison>,
    pub hamiltonian: Option<HamiltonianEstimate>,
    pub verdict: Verdict,
    pub warnings: Vec<String>,
    pub settings: Settings,
    pub note: String,
}

impl AssessmentReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    pub fn winner_score(&self) -> Option<&ModelScore> {
        self.scores.iter().find(|s| s.label == self.winner)
    }
}

/// Report plus the intermediate objects needed for plot data.
#[derive(Clone, Debug)]
pub struct Assessment {
    pub report: AssessmentReport,
    pub analysis: Analysis,
    pub winner_level: LevelOfDescription,
}

struct Candidate {
    level: LevelOfDescription,
    orientation: Orientation,
    directions: Option<Vec<Vec<f64>>>,
}

fn auto_candidates(analysis: &Analysis, warnings: &mut Vec<String>) -> Vec<Candidate> {
    let m = analysis.dataset.m();
    let dim = analysis.dataset.dim();
    let mut out = vec![Candidate {
        level: LevelOfDescription::empty("empty-p0", dim),
        orientation: Orientation::Empty,
        directions: None,
    }];
    for p in 1..m {
        let pca = analysis.pca_orientation(p);
        let anchored = analysis.anchored_orientation(p);
        let mut pca_level = None;
        for oriented in [pca, anchored] {
            match oriented {
                Ok(o) => {
                    if let Some(prev) = &pca_level {
                        let same = o.level.is_contained_in(prev)
                            && LevelOfDescription::is_contained_in(prev, &o.level);
                        if same {
                            continue;
                        }
                    } else {
                        pca_level = Some(o.level.clone());
                    }
                    out.push(Candidate {
                        directions: Some(o.directions.iter().map(|v| v.iter().copied().collect()).collect()),
                        level: o.level,
                        orientation: o.orientation,
                    });
                }
                Err(e) => warnings.push(format!("orientation for p = {p}: {e}")),
            }
        }
    }
    out.push(Candidate {
        level: analysis.dataset.level().clone().with_label("full-F"),
        orientation: Orientation::Full,
        directions: None,
    });
    out
}

/// Runs the complete assessment of one dataset.
pub fn assess(dataset: &Dataset, options: &AssessOptions) -> Result<Assessment> {
    if !(options.margin_factor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin factor must be positive, got {}",
            options.margin_factor
        )));
    }
    if let Some(a) = options.alpha {
        if !(a > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {a}")));
        }
    }
    let analysis = Analysis::new(dataset)?;
    let mut warnings = Vec::new();
    if !analysis.regime.is_gaussian {
        warnings.push(format!(
            "data outside the Gaussian regime (max pairwise entropy {:.3e}, max entropy to center {:.3e}); quadratic approximations may be inaccurate",
            analysis.regime.max_pairwise_entropy, analysis.regime.max_center_entropy
        ));
    }
    let spread = analysis.metric.trace(&analysis.covariance.gamma);
    let degenerate = spread < MIN_SPREAD;
    if degenerate {
        warnings.push(format!("degenerate spread: samples carry no variance (tr Gamma = {spread:.3e})"));
    }

    let candidates = match &options.candidates {
        Candidates::Auto => auto_candidates(&analysis, &mut warnings),
        Candidates::Explicit(levels) => {
            if levels.is_empty() {
                return Err(Error::InvalidArgument("no candidate levels given".into()));
            }
            levels
                .iter()
                .map(|l| Candidate {
                    level: l.clone(),
                    orientation: Orientation::Explicit,
                    directions: None,
                })
                .collect()
        }
    };

    let outcomes: Vec<_> = candidates
        .par_iter()
        .map(|c| analysis.score(&c.level, c.orientation, options.alpha))
        .collect();
    let mut scored: Vec<(usize, ModelScore)> = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (i, (c, outcome)) in candidates.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok((mut score, alpha_err)) => {
                score.directions = c.directions.clone();
                if let Some(e) = alpha_err {
                    if c.level.p() > 0 {
                        warnings.push(format!("alpha for '{}': {e}", c.level.label()));
                    }
                }
                if let Some(a) = &score.alpha {
                    if !a.reliable {
                        warnings.push(format!(
                            "alpha for '{}' is unreliable (curvature {:.3} below half of pR/2 = {:.3})",
                            score.label, a.curvature, a.nominal_curvature
                        ));
                    }
                }
                scored.push((i, score));
            }
            Err(e) => {
                failures.push(CandidateFailure {
                    label: c.level.label().to_string(),
                    p: c.level.p(),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if scored.is_empty() {
        return Err(first_error.unwrap_or(Error::InvalidArgument("no candidates".into())));
    }

    // ties go to the earlier (smaller) candidate
    let mut best = 0;
    for (k, (_, s)) in scored.iter().enumerate() {
        if s.asymptotic_log_likelihood > scored[best].1.asymptotic_log_likelihood {
            best = k;
        }
    }
    let winner_index = scored[best].0;
    let winner_level = candidates[winner_index].level.clone();
    let winner_score = scored[best].1.clone();

    let mut pairs = Vec::new();
    for (gi, gs) in &scored {
        for (hi, hs) in &scored {
            if hs.p == gs.p + 1 && candidates[*gi].level.is_contained_in(&candidates[*hi].level) {
                pairs.push((*gi, *hi, hs.asymptotic_log_likelihood - gs.asymptotic_log_likelihood));
            }
        }
    }
    let compared: Vec<_> = pairs
        .par_iter()
        .map(|(gi, hi, direct)| {
            let (g, h) = (&candidates[*gi].level, &candidates[*hi].level);
            analysis.compare_levels(g, h).map(|delta| Comparison {
                smaller: g.label().to_string(),
                larger: h.label().to_string(),
                delta_log_likelihood: delta,
                direct_difference: *direct,
            })
        })
        .collect();
    let mut comparisons = Vec::new();
    for c in compared {
        match c {
            Ok(c) => comparisons.push(c),
            Err(e) => warnings.push(format!("comparison failed: {e}")),
        }
    }

    let m = dataset.m();
    let mut hamiltonian = None;
    let verdict = if winner_score.p == 1 && m >= 2 && !degenerate {
        match estimate_hamiltonian(
            &analysis,
            EstimateOptions {
                method: options.method,
                margin_factor: options.margin_factor,
            },
        ) {
            Ok(est) => {
                warnings.extend(est.warnings.iter().cloned());
                let qubit_margins = est.qubit.as_ref().map(|q| q.thermal.margins);
                let v = if est.thermal_verdict {
                    Verdict {
                        status: VerdictStatus::Thermalized,
                        reason: "one constant of the motion explains the data within the thermalization margins".into(),
                        margin_factor: options.margin_factor,
                        margin: Some(est.thermal.margin),
                        qubit_margins,
                    }
                } else {
                    Verdict {
                        status: VerdictStatus::Inconclusive,
                        reason: "one constant of the motion is preferred but the thermalization margins are not met".into(),
                        margin_factor: options.margin_factor,
                        margin: Some(est.thermal.margin),
                        qubit_margins,
                    }
                };
                hamiltonian = Some(est);
                v
            }
            Err(e) => {
                warnings.push(format!("hamiltonian estimation failed: {e}"));
                Verdict {
                    status: VerdictStatus::Inconclusive,
                    reason: format!("hamiltonian estimation failed: {e}"),
                    margin_factor: options.margin_factor,
                    margin: None,
                    qubit_margins: None,
                }
            }
        }
    } else if winner_score.p >= 2 {
        Verdict {
            status: VerdictStatus::NotThermalized,
            reason: format!("the data call for {} constants of the motion", winner_score.p),
            margin_factor: options.margin_factor,
            margin: None,
            qubit_margins: None,
        }
    } else {
        let reason = if winner_score.p == 0 {
            warnings.push("winner has no constants of the motion: the data are explained by the reference state".into());
            "no constant of the motion is supported by the data".to_string()
        } else if degenerate {
            "the samples show no spread to explain".to_string()
        } else {
            warnings.push("a single observable admits no dimensional reduction".into());
            "a single measured observable cannot be reduced further".to_string()
        };
        Verdict {
            status: VerdictStatus::Inconclusive,
            reason,
            margin_factor: options.margin_factor,
            margin: None,
            qubit_margins: None,
        }
    };

    let report = AssessmentReport {
        dataset_digest: dataset.digest(),
        dimension: dataset.dim(),
        observables: dataset.observables().iter().map(|o| o.name.clone()).collect(),
        samples: dataset.r(),
        total_size: dataset.total_size(),
        log_size_sum: dataset.log_size_sum(),
        gaussian_regime: analysis.regime,
        scores: scored.into_iter().map(|(_, s)| s).collect(),
        failures,
        winner: winner_score.label.clone(),
        winner_p: winner_score.p,
        comparisons,
        hamiltonian,
        verdict,
        warnings,
        settings: Settings {
            candidates: match options.candidates {
                Candidates::Auto => "auto".into(),
                Candidates::Explicit(_) => "explicit".into(),
            },
            alpha: options.alpha,
            margin_factor: options.margin_factor,
            method: options.method,
        },
        note: "log-likelihoods omit additive constants that depend on neither the reference state nor the level; only differences within this report are meaningful".into(),
    };
    Ok(Assessment {
        report,
        analysis,
        winner_level,
    })
}

impl Assessment {
    /// Tidy CSV with one row per sample: measured means, the means of the
    /// projection onto the winning level, and their differences.
    pub fn plot_csv(&self) -> Result<String> {
        let ds = &self.analysis.dataset;
        let names: Vec<&str> = ds.observables().iter().map(|o| o.name.as_str()).collect();
        let mut header = vec!["sample".to_string(), "size".into(), "weight".into()];
        for prefix in ["mean", "projected", "residual"] {
            header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
        }
        let ham = self.report.hamiltonian.as_ref();
        if ham.is_some() {
            header.push("beta".into());
            header.push("energy".into());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).map_err(csv_error)?;
        for (i, (sample, mu)) in ds.samples().iter().zip(&self.analysis.images).enumerate() {
            let pi = project(mu, &self.winner_level, ds.reference_state())?;
            let projected = ds
                .observable_operators()
                .iter()
                .map(|f| expectation(f, &pi.state))
                .collect::<Result<Vec<_>>>()?;
            let mut row = vec![i.to_string(), sample.size.to_string(), self.analysis.weights[i].to_string()];
            row.extend(sample.means.iter().map(|x| x.to_string()));
            row.extend(projected.iter().map(|x| x.to_string()));
            row.extend(sample.means.iter().zip(&projected).map(|(a, b)| (a - b).to_string()));
            if let Some(h) = ham {
                row.push(h.per_sample_beta[i].to_string());
                row.push(h.internal_energies[i].to_string());
            }
            w.write_record(&row).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}
