use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optics::{AnglePreset, PlateOffsets, Setup};
use crate::{Error, Result};

/// Parameters of a simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub photons_per_run: u64,
    pub runs: u64,
    /// Relative efficiency of `D1, D2, D3`.
    pub detector_efficiency: [f64; 3],
    pub pre_detector_loss: f64,
    /// Probability per detected photon of a spurious second click.
    pub accidental_rate: f64,
    pub angles: AnglePreset,
    /// Degrees, ordered `WP_A, WP_B, WP_1..WP_4`.
    pub angle_offsets: PlateOffsets,
    /// Radians, on the separate spatial mode.
    pub spatial_phase_error: f64,
    pub rng_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            photons_per_run: 3500,
            runs: 20,
            detector_efficiency: [1.0; 3],
            pre_detector_loss: 0.0,
            accidental_rate: 0.0,
            angles: AnglePreset::Exact,
            angle_offsets: [0.0; 6],
            spatial_phase_error: 0.0,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    experiment: ExperimentSection,
    #[serde(default)]
    detectors: DetectorSection,
    #[serde(default)]
    optics: OpticsSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentSection {
    photons_per_run: u64,
    runs: u64,
    rng_seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            photons_per_run: d.photons_per_run,
            runs: d.runs,
            rng_seed: d.rng_seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DetectorSection {
    efficiency: [f64; 3],
    pre_detector_loss: f64,
    accidental_rate: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            efficiency: [1.0; 3],
            pre_detector_loss: 0.0,
            accidental_rate: 0.0,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OpticsSection {
    angles: AnglePreset,
    angle_offsets: PlateOffsets,
    spatial_phase_error: f64,
}

impl ExperimentConfig {
    /// Parses the sectioned TOML format; missing keys take their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = Self {
            photons_per_run: file.experiment.photons_per_run,
            runs: file.experiment.runs,
            rng_seed: file.experiment.rng_seed,
            detector_efficiency: file.detectors.efficiency,
            pre_detector_loss: file.detectors.pre_detector_loss,
            accidental_rate: file.detectors.accidental_rate,
            angles: file.optics.angles,
            angle_offsets: file.optics.angle_offsets,
            spatial_phase_error: file.optics.spatial_phase_error,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.photons_per_run == 0 || self.runs == 0 {
            return bad("photons_per_run and runs must be at least 1".into());
        }
        for (i, e) in self.detector_efficiency.iter().enumerate() {
            if !(*e > 0.0 && *e <= 1.0) {
                return bad(format!("detector efficiency D{} = {e} not in (0, 1]", i + 1));
            }
        }
        if !(0.0..1.0).contains(&self.pre_detector_loss) {
            return bad(format!(
                "pre_detector_loss = {} not in [0, 1)",
                self.pre_detector_loss
            ));
        }
        if !(0.0..=1.0).contains(&self.accidental_rate) {
            return bad(format!(
                "accidental_rate = {} not in [0, 1]",
                self.accidental_rate
            ));
        }
        if !self.angle_offsets.iter().all(|a| a.is_finite()) || !self.spatial_phase_error.is_finite() {
            return bad("angle offsets and phase must be finite".into());
        }
        Ok(())
    }

    pub fn setup(&self) -> Setup {
        Setup::new(self.angles.settings())
            .with_offsets(self.angle_offsets)
            .with_spatial_phase(self.spatial_phase_error)
    }

    pub fn to_toml_string(&self) -> String {
        let fmt = |v: &[f64]| {
            let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            format!("[{}]", parts.join(", "))
        };
        let angles = match self.angles {
            AnglePreset::Exact => "exact",
            AnglePreset::Nominal => "nominal",
        };
        format!(
            "[experiment]\nphotons_per_run = {}\nruns = {}\nrng_seed = {}\n\n\
             [detectors]\nefficiency = {}\npre_detector_loss = {:?}\naccidental_rate = {:?}\n\n\
             [optics]\nangles = \"{angles}\"\nangle_offsets = {}\nspatial_phase_error = {:?}\n",
            self.photons_per_run,
            self.runs,
            self.rng_seed,
            fmt(&self.detector_efficiency),
            self.pre_detector_loss,
            self.accidental_rate,
            fmt(&self.angle_offsets),
            self.spatial_phase_error,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!((cfg.photons_per_run, cfg.runs), (3500, 20));
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig {
            detector_efficiency: [0.8, 0.6, 0.7],
            angles: AnglePreset::Nominal,
            angle_offsets: [1.0, 1.0, -1.0, 1.0, -1.0, 2.0],
            spatial_phase_error: 0.25,
            rng_seed: 99,
            ..Default::default()
        };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::from_toml_str("[experiment]\nruns = 20\nphotons_per_run = \"many\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = ExperimentConfig::from_toml_str("[optics]\nwobble = 1\n").unwrap_err();
        assert!(err.to_string().contains("wobble"), "{err}");
    }

    #[test]
    fn range_checks() {
        for text in [
            "[detectors]\nefficiency = [0.0, 1.0, 1.0]",
            "[detectors]\nefficiency = [1.0, 1.2, 1.0]",
            "[detectors]\npre_detector_loss = 1.0",
            "[detectors]\naccidental_rate = -0.1",
            "[experiment]\nruns = 0",
        ] {
            assert!(matches!(
                ExperimentConfig::from_toml_str(text),
                Err(Error::Config(_))
            ));
        }
    }
}
