//! Level files: one level or an array of levels, each a list of observables
//! given by name, by coefficients over the dataset observables, or as a matrix.

use serde::Deserialize;
use thermoscope::operator::MatrixRows;
use thermoscope::{Dataset, HermitianOperator, LevelOfDescription};

use crate::error::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum LevelFile {
    Many(Vec<LevelEntry>),
    One(LevelEntry),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelEntry {
    #[serde(default)]
    pub label: Option<String>,
    pub observables: Vec<OperatorEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum OperatorEntry {
    Name { name: String },
    Coefficients { coefficients: Vec<f64> },
    Matrix { matrix: MatrixRows },
}

impl LevelFile {
    pub fn into_entries(self) -> Vec<LevelEntry> {
        match self {
            LevelFile::Many(v) => v,
            LevelFile::One(e) => vec![e],
        }
    }
}

fn invalid(msg: String) -> CliError {
    CliError::Core(thermoscope::Error::InvalidArgument(msg))
}

fn operator(entry: OperatorEntry, dataset: &Dataset, at: &str) -> CliResult<HermitianOperator> {
    match entry {
        OperatorEntry::Name { name } => dataset
            .observables()
            .iter()
            .find(|o| o.name == name)
            .map(|o| o.operator.clone())
            .ok_or_else(|| invalid(format!("{at}: no observable named '{name}' in the dataset"))),
        OperatorEntry::Coefficients { coefficients } => {
            if coefficients.len() != dataset.m() {
                return Err(invalid(format!(
                    "{at}: expected {} coefficients, found {}",
                    dataset.m(),
                    coefficients.len()
                )));
            }
            Ok(HermitianOperator::linear_combination(&coefficients, dataset.observable_operators())?)
        }
        OperatorEntry::Matrix { matrix } => {
            HermitianOperator::from_rows(&matrix).map_err(|e| invalid(format!("{at}: {e}")))
        }
    }
}

pub fn resolve(file: LevelFile, dataset: &Dataset) -> CliResult<Vec<LevelOfDescription>> {
    file.into_entries()
        .into_iter()
        .enumerate()
        .map(|(i, entry)| {
            let label = entry.label.unwrap_or_else(|| format!("level-{i}"));
            let ops = entry
                .observables
                .into_iter()
                .enumerate()
                .map(|(j, o)| operator(o, dataset, &format!("levels[{i}].observables[{j}]")))
                .collect::<CliResult<Vec<_>>>()?;
            if ops.is_empty() {
                return Ok(LevelOfDescription::empty(label, dataset.dim()));
            }
            Ok(LevelOfDescription::new(label, ops)?)
        })
        .collect()
}
