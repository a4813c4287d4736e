//! Device technologies, crossbar geometry and experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// ON/OFF resistance pair of an eNVM device technology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnologyProfile {
    pub name: String,
    pub r_on: f64,
    pub r_off: f64,
}

impl TechnologyProfile {
    pub fn new(name: impl Into<String>, r_on: f64, r_off: f64) -> Result<Self> {
        let t = Self {
            name: name.into(),
            r_on,
            r_off,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn taox() -> Self {
        Self::new("TaOx", 20e3, 200e3).unwrap()
    }

    pub fn pcm() -> Self {
        Self::new("PCM", 60e3, 600e3).unwrap()
    }

    pub fn ag_si() -> Self {
        Self::new("Ag/Si", 100e3, 1e6).unwrap()
    }

    pub fn builtin() -> [Self; 3] {
        [Self::taox(), Self::pcm(), Self::ag_si()]
    }

    /// Look up a built-in technology by name (case-insensitive, `/` optional).
    pub fn by_name(name: &str) -> Option<Self> {
        let key = name.to_ascii_lowercase().replace(['/', '-', '_'], "");
        Self::builtin()
            .into_iter()
            .find(|t| t.name.to_ascii_lowercase().replace('/', "") == key)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_on > 0.0 && self.r_on.is_finite()) {
            return Err(Error::Domain(format!("r_on must be positive, got {}", self.r_on)));
        }
        if !(self.r_off > self.r_on && self.r_off.is_finite()) {
            return Err(Error::Domain(format!(
                "r_off ({}) must exceed r_on ({})",
                self.r_off, self.r_on
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn g_on(&self) -> f64 {
        1.0 / self.r_on
    }

    #[inline]
    pub fn g_off(&self) -> f64 {
        1.0 / self.r_off
    }
}

/// Physical crossbar parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossbarGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Lumped wire resistance per cell pitch, identical on bit- and source-lines.
    pub r_line: f64,
    /// Series resistance of the access device in each cell.
    pub r_access: f64,
    /// Largest drive voltage a DAC can put on a bit-line.
    pub v_max: f64,
}

impl Default for CrossbarGeometry {
    fn default() -> Self {
        Self {
            rows: 128,
            cols: 128,
            r_line: 2.0,
            r_access: 1e3,
            v_max: 0.5,
        }
    }
}

impl CrossbarGeometry {
    pub fn new(rows: usize, cols: usize, r_line: f64, r_access: f64, v_max: f64) -> Result<Self> {
        let g = Self {
            rows,
            cols,
            r_line,
            r_access,
            v_max,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_size(&self, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            ..self.clone()
        }
    }

    pub fn with_parasitics(&self, r_line: f64, r_access: f64) -> Self {
        Self {
            r_line,
            r_access,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Domain(format!(
                "crossbar must be at least 1x1, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.r_line >= 0.0 && self.r_line.is_finite()) {
            return Err(Error::Domain(format!("r_line must be finite and >= 0, got {}", self.r_line)));
        }
        if !(self.r_access >= 0.0 && self.r_access.is_finite()) {
            return Err(Error::Domain(format!(
                "r_access must be finite and >= 0, got {}",
                self.r_access
            )));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::Domain(format!("v_max must be positive, got {}", self.v_max)));
        }
        Ok(())
    }
}

/// What an error model was fitted against. Models only apply to the
/// technology and geometry they were characterized on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub technology: TechnologyProfile,
    pub geometry: CrossbarGeometry,
}

impl Fingerprint {
    pub fn new(technology: &TechnologyProfile, geometry: &CrossbarGeometry) -> Self {
        Self {
            technology: technology.clone(),
            geometry: geometry.clone(),
        }
    }

    pub fn ensure_matches(&self, other: &Fingerprint) -> Result<()> {
        if self != other {
            return Err(Error::Contract(format!(
                "fingerprint mismatch: model is for {} on {}x{} (r_line={}, r_access={}), \
                 active crossbar is {} on {}x{} (r_line={}, r_access={})",
                self.technology.name,
                self.geometry.rows,
                self.geometry.cols,
                self.geometry.r_line,
                self.geometry.r_access,
                other.technology.name,
                other.geometry.rows,
                other.geometry.cols,
                other.geometry.r_line,
                other.geometry.r_access,
            )));
        }
        Ok(())
    }
}

/// Map a normalized weight in `[0, 1]` to a device conductance by linear
/// interpolation between `1/r_off` and `1/r_on`.
pub fn weight_to_conductance(w: f64, tech: &TechnologyProfile) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Domain(format!("normalized weight {w} outside [0, 1]")));
    }
    let (g_on, g_off) = (tech.g_on(), tech.g_off());
    Ok(g_off + w * (g_on - g_off))
}

/// Inverse of [`weight_to_conductance`].
pub fn conductance_to_weight(g: f64, tech: &TechnologyProfile) -> f64 {
    (g - tech.g_off()) / (tech.g_on() - tech.g_off())
}

/// Scale a non-negative matrix into `[0, 1]` by its largest entry.
///
/// Returns the normalized matrix and the scale (1 for an all-zero matrix).
pub fn normalize_weights(w: &Matrix) -> Result<(Matrix, f64)> {
    if let Some(bad) = w.as_slice().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "weights must be finite and non-negative before normalization, found {bad}"
        )));
    }
    let max = w.as_slice().iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    Ok((w.map(|v| v / scale), scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnologySection {
    pub name: String,
    #[serde(default)]
    pub r_on: Option<f64>,
    #[serde(default)]
    pub r_off: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Mini-batch size of the dynamic remapping strategy.
    pub drs_batch_size: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 16,
            drs_batch_size: 8,
            train_samples: 1000,
            validation_samples: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    /// Random (V, R) draws; each draw is probed on every column.
    pub samples: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self { samples: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    technology: Option<TechnologySection>,
    #[serde(default)]
    geometry: Option<CrossbarGeometry>,
    #[serde(default)]
    training: Option<TrainingConfig>,
    #[serde(default)]
    campaign: Option<CampaignConfig>,
}

/// Everything a pipeline run needs besides its input artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub technology: TechnologyProfile,
    pub geometry: CrossbarGeometry,
    pub training: TrainingConfig,
    pub campaign: CampaignConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            technology: TechnologyProfile::taox(),
            geometry: CrossbarGeometry::default(),
            training: TrainingConfig::default(),
            campaign: CampaignConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML config. Missing sections fall back to defaults; unknown
    /// keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::default();
        if let Some(seed) = file.seed {
            cfg.seed = seed;
        }
        if let Some(t) = file.technology {
            let base = TechnologyProfile::by_name(&t.name);
            let (r_on, r_off) = match (&base, t.r_on, t.r_off) {
                (_, Some(on), Some(off)) => (on, off),
                (Some(b), on, off) => (on.unwrap_or(b.r_on), off.unwrap_or(b.r_off)),
                (None, _, _) => {
                    return Err(Error::Config(format!(
                        "technology.name = {:?} is not built in (TaOx, PCM, Ag/Si); give r_on and r_off",
                        t.name
                    )))
                }
            };
            let name = base.map_or(t.name, |b| b.name);
            cfg.technology =
                TechnologyProfile::new(name, r_on, r_off).map_err(|e| Error::Config(format!("[technology] {e}")))?;
        }
        if let Some(g) = file.geometry {
            g.validate().map_err(|e| Error::Config(format!("[geometry] {e}")))?;
            cfg.geometry = g;
        }
        if let Some(t) = file.training {
            cfg.training = t;
        }
        if let Some(c) = file.campaign {
            cfg.campaign = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        let file = ConfigFile {
            seed: Some(self.seed),
            technology: Some(TechnologySection {
                name: self.technology.name.clone(),
                r_on: Some(self.technology.r_on),
                r_off: Some(self.technology.r_off),
            }),
            geometry: Some(self.geometry.clone()),
            training: Some(self.training.clone()),
            campaign: Some(self.campaign.clone()),
        };
        toml::to_string(&file).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.campaign.samples == 0 {
            return Err(Error::Config("[campaign] samples must be >= 1".into()));
        }
        if self.training.drs_batch_size == 0 {
            return Err(Error::Config("[training] drs_batch_size must be >= 1".into()));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("[training] batch_size must be >= 1".into()));
        }
        if !(self.training.learning_rate >= 0.0 && self.training.learning_rate.is_finite()) {
            return Err(Error::Config("[training] learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::new(&self.technology, &self.geometry)
    }
}
