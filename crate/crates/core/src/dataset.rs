//! Tomography datasets: measured observables, reference state and per-sample means.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gibbs::{tomographic_image, LevelOfDescription};
use crate::operator::{DensityMatrix, HermitianOperator, MatrixRows};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableEntry {
    pub name: String,
    pub matrix: MatrixRows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceEntry {
    Named(String),
    Matrix(MatrixRows),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub size: u64,
    pub means: Vec<f64>,
}

/// On-disk layout of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub dimension: usize,
    pub observables: Vec<ObservableEntry>,
    pub reference_state: ReferenceEntry,
    pub samples: Vec<Sample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct NamedObservable {
    pub name: String,
    pub operator: HermitianOperator,
}

#[derive(Clone, Debug)]
pub enum ReferenceState {
    Uniform,
    Explicit(DensityMatrix),
}

/// Converts on-disk observables, naming the failing entry on error.
pub fn parse_observables(entries: Vec<ObservableEntry>) -> Result<Vec<NamedObservable>> {
    entries
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            let operator = HermitianOperator::from_rows(&o.matrix)
                .map_err(|e| invalid(format!("observables[{i}].matrix"), e))?;
            Ok(NamedObservable {
                name: o.name,
                operator,
            })
        })
        .collect()
}

pub fn parse_reference(entry: ReferenceEntry) -> Result<ReferenceState> {
    match entry {
        ReferenceEntry::Named(s) if s == "uniform" => Ok(ReferenceState::Uniform),
        ReferenceEntry::Named(s) => Err(invalid(
            "reference_state",
            format!("expected \"uniform\" or a matrix, found \"{s}\""),
        )),
        ReferenceEntry::Matrix(rows) => Ok(ReferenceState::Explicit(
            DensityMatrix::from_rows(&rows).map_err(|e| invalid("reference_state", e))?,
        )),
    }
}

/// A validated dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    dim: usize,
    observables: Vec<NamedObservable>,
    reference: ReferenceState,
    sigma: DensityMatrix,
    level: LevelOfDescription,
    samples: Vec<Sample>,
    metadata: Option<serde_json::Value>,
}

fn invalid(path: impl std::fmt::Display, msg: impl std::fmt::Display) -> Error {
    Error::InvalidDataset(format!("{path}: {msg}"))
}

impl Dataset {
    pub fn new(
        observables: Vec<NamedObservable>,
        reference: ReferenceState,
        samples: Vec<Sample>,
        metadata: Option<serde_json::Value>,
    ) -> Result<Self> {
        let dim = observables
            .first()
            .map(|o| o.operator.dim())
            .ok_or_else(|| invalid("observables", "at least one observable is required"))?;
        Self::build(dim, observables, reference, samples, metadata)
    }

    fn build(
        dim: usize,
        observables: Vec<NamedObservable>,
        reference: ReferenceState,
        samples: Vec<Sample>,
        metadata: Option<serde_json::Value>,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("dimension", format!("must be at least 2, got {dim}")));
        }
        let m = observables.len();
        if m == 0 {
            return Err(invalid("observables", "at least one observable is required"));
        }
        if m > dim * dim - 1 {
            return Err(invalid(
                "observables",
                format!("{m} observables exceed d^2 - 1 = {}", dim * dim - 1),
            ));
        }
        for (i, o) in observables.iter().enumerate() {
            if o.operator.dim() != dim {
                return Err(invalid(
                    format!("observables[{i}].matrix"),
                    format!("expected {dim}x{dim}, found {0}x{0}", o.operator.dim()),
                ));
            }
        }
        let level = LevelOfDescription::new("F", observables.iter().map(|o| o.operator.clone()).collect())
            .map_err(|e| invalid("observables", e))?;
        let sigma = match &reference {
            ReferenceState::Uniform => DensityMatrix::maximally_mixed(dim),
            ReferenceState::Explicit(s) => {
                if s.dim() != dim {
                    return Err(invalid(
                        "reference_state",
                        format!("expected {dim}x{dim}, found {0}x{0}", s.dim()),
                    ));
                }
                s.clone()
            }
        };
        if samples.is_empty() {
            return Err(invalid("samples", "at least one sample is required"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.size == 0 {
                return Err(invalid(format!("samples[{i}].size"), "must be at least 1"));
            }
            if s.means.len() != m {
                return Err(invalid(
                    format!("samples[{i}].means"),
                    format!("expected {m} values, found {}", s.means.len()),
                ));
            }
            if let Some(j) = s.means.iter().position(|x| !x.is_finite()) {
                return Err(invalid(format!("samples[{i}].means[{j}]"), "not a finite number"));
            }
        }
        Ok(Self {
            dim,
            observables,
            reference,
            sigma,
            level,
            samples,
            metadata,
        })
    }

    pub fn from_file(file: DatasetFile) -> Result<Self> {
        let observables = parse_observables(file.observables)?;
        let reference = parse_reference(file.reference_state)?;
        Self::build(file.dimension, observables, reference, file.samples, file.metadata)
    }

    pub fn to_file(&self) -> DatasetFile {
        DatasetFile {
            dimension: self.dim,
            observables: self
                .observables
                .iter()
                .map(|o| ObservableEntry {
                    name: o.name.clone(),
                    matrix: o.operator.to_rows(),
                })
                .collect(),
            reference_state: match &self.reference {
                ReferenceState::Uniform => ReferenceEntry::Named("uniform".into()),
                ReferenceState::Explicit(s) => ReferenceEntry::Matrix(s.to_rows()),
            },
            samples: self.samples.clone(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: DatasetFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidDataset(e.to_string()))?;
        Self::from_file(file)
    }

    /// Compact JSON, the form hashed by [`Dataset::digest`].
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("dataset serialization is infallible")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("dataset serialization is infallible")
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of measured observables `m`.
    pub fn m(&self) -> usize {
        self.observables.len()
    }

    /// Number of samples `R`.
    pub fn r(&self) -> usize {
        self.samples.len()
    }

    pub fn observables(&self) -> &[NamedObservable] {
        &self.observables
    }

    pub fn observable_operators(&self) -> &[HermitianOperator] {
        self.level.observables()
    }

    /// The experimental level `F`.
    pub fn level(&self) -> &LevelOfDescription {
        &self.level
    }

    pub fn reference(&self) -> &ReferenceState {
        &self.reference
    }

    pub fn reference_state(&self) -> &DensityMatrix {
        &self.sigma
    }

    pub fn is_uniform_reference(&self) -> bool {
        matches!(self.reference, ReferenceState::Uniform)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.size).collect()
    }

    /// `N = Σ N_i`
    pub fn total_size(&self) -> f64 {
        self.samples.iter().map(|s| s.size as f64).sum()
    }

    /// `Λ = Σ ln N_i`
    pub fn log_size_sum(&self) -> f64 {
        self.samples.iter().map(|s| (s.size as f64).ln()).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        let n = self.total_size();
        self.samples.iter().map(|s| s.size as f64 / n).collect()
    }

    pub fn informationally_complete(&self) -> bool {
        self.m() == self.dim * self.dim - 1
    }

    /// Tomographic images `μ_i`, one per sample.
    pub fn images(&self) -> Result<Vec<DensityMatrix>> {
        use rayon::prelude::*;
        self.samples
            .par_iter()
            .map(|s| tomographic_image(&s.means, &self.level, &self.sigma))
            .collect()
    }

    pub fn with_metadata(mut self, metadata: Option<serde_json::Value>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn with_samples(&self, samples: Vec<Sample>) -> Result<Self> {
        Self::build(
            self.dim,
            self.observables.clone(),
            self.reference.clone(),
            samples,
            self.metadata.clone(),
        )
    }
}

/// Pauli observables named `X`, `Y`, `Z`.
pub fn pauli_observables() -> Vec<NamedObservable> {
    ["X", "Y", "Z"]
        .iter()
        .zip(HermitianOperator::paulis())
        .map(|(n, op)| NamedObservable {
            name: n.to_string(),
            operator: op,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qubit_json() -> String {
        r#"{
          "dimension": 2,
          "observables": [
            {"name": "X", "matrix": [[[0,0],[1,0]],[[1,0],[0,0]]]},
            {"name": "Y", "matrix": [[[0,0],[0,-1]],[[0,1],[0,0]]]},
            {"name": "Z", "matrix": [[[1,0],[0,0]],[[0,0],[-1,0]]]}
          ],
          "reference_state": "uniform",
          "samples": [
            {"size": 100, "means": [0.1, 0.0, 0.2]},
            {"size": 300, "means": [0.0, 0.1, 0.3]}
          ]
        }"#
        .to_string()
    }

    #[test]
    fn parses_and_derives_quantities() {
        let ds = Dataset::from_json_str(&qubit_json()).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.m(), 3);
        assert_eq!(ds.r(), 2);
        assert!(ds.informationally_complete());
        assert!(ds.is_uniform_reference());
        assert_eq!(ds.total_size(), 400.0);
        assert!((ds.log_size_sum() - (100f64.ln() + 300f64.ln())).abs() < 1e-14);
        assert_eq!(ds.weights(), vec![0.25, 0.75]);
        let images = ds.images().unwrap();
        let b = images[1].bloch_vector().unwrap();
        assert!((b[2] - 0.3).abs() < 1e-10);
    }

    #[test]
    fn json_round_trip_preserves_digest() {
        let ds = Dataset::from_json_str(&qubit_json()).unwrap();
        let again = Dataset::from_json_str(&ds.to_json_pretty()).unwrap();
        assert_eq!(ds.to_json(), again.to_json());
        assert_eq!(ds.digest(), again.digest());
        assert_eq!(ds.digest().len(), 64);
    }

    #[test]
    fn validation_errors_name_the_field() {
        let text = qubit_json().replace("[0.0, 0.1, 0.3]", "[0.0, 0.1]");
        let err = Dataset::from_json_str(&text).unwrap_err().to_string();
        assert!(err.contains("samples[1].means"), "{err}");

        let text = qubit_json().replace("\"size\": 100", "\"size\": 0");
        let err = Dataset::from_json_str(&text).unwrap_err().to_string();
        assert!(err.contains("samples[0].size"), "{err}");

        let text = qubit_json().replace("[[0,0],[0,-1]]", "[[0,0],[0,1]]");
        let err = Dataset::from_json_str(&text).unwrap_err().to_string();
        assert!(err.contains("observables[1].matrix"), "{err}");

        let text = qubit_json().replace("\"uniform\"", "\"thermal\"");
        let err = Dataset::from_json_str(&text).unwrap_err().to_string();
        assert!(err.contains("reference_state"), "{err}");

        let text = qubit_json().replace("\"samples\"", "\"sample\"");
        assert!(Dataset::from_json_str(&text).is_err());
    }

    #[test]
    fn rejects_dependent_observables() {
        let mut obs = pauli_observables();
        obs.push(NamedObservable {
            name: "Z2".into(),
            operator: HermitianOperator::pauli_z().scale(2.0),
        });
        obs.remove(0);
        let err = Dataset::new(
            obs,
            ReferenceState::Uniform,
            vec![Sample {
                size: 10,
                means: vec![0.0; 3],
            }],
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("observables"), "{err}");
    }
}
