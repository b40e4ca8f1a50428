use serde::{Deserialize, Serialize};

use super::MelSpectrogram;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyLevel {
    Frame,
    Phoneme,
}

impl std::fmt::Display for EnergyLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnergyLevel::Frame => "frame",
            EnergyLevel::Phoneme => "phoneme",
        })
    }
}

impl std::str::FromStr for EnergyLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(EnergyLevel::Frame),
            "phoneme" => Ok(EnergyLevel::Phoneme),
            other => Err(Error::InvalidInput(format!("unknown energy level `{other}`"))),
        }
    }
}

/// Non-negative energy values tagged with their time resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySequence {
    values: Vec<f64>,
    level: EnergyLevel,
}

impl EnergySequence {
    pub fn new(values: Vec<f64>, level: EnergyLevel) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "energy values must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { values, level })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn level(&self) -> EnergyLevel {
        self.level
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multiplies every value by `gamma >= 0`.
    pub fn scaled(&self, gamma: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * gamma).collect(), self.level)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Root-mean-square of the linear mel amplitudes of each frame:
/// `E[t] = sqrt(mean_n exp(S[t, n])^2)`.
pub fn frame_energy(mel: &MelSpectrogram) -> EnergySequence {
    let n = mel.n_mels() as f64;
    let values = mel
        .data()
        .rows()
        .into_iter()
        .map(|row| (row.iter().map(|&s| (2.0 * s).exp()).sum::<f64>() / n).sqrt())
        .collect();
    EnergySequence {
        values,
        level: EnergyLevel::Frame,
    }
}
