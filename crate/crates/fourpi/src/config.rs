//! Declarative run configuration (JSON) with command-line overrides.

use std::path::{Path, PathBuf};

use fourpi_core::experiment::{SceneConfig, SceneKind};
use fourpi_core::fourpi::{CosinePsfSpec, Optics};
use fourpi_core::irgnm::{IrgnmConfig, Variant};
use fourpi_core::scene::SineArctanPhase;
use fourpi_core::tikhonov::SsnConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::read_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Constrained,
    Unconstrained,
    Projected,
}

impl From<VariantName> for Variant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::Constrained => Variant::Constrained,
            VariantName::Unconstrained => Variant::Unconstrained,
            VariantName::Projected => Variant::Projected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsSection {
    pub numerical_aperture: f64,
    pub lambda_excitation_nm: f64,
    pub lambda_emission_nm: f64,
    pub refractive_index: f64,
}

impl Default for OpticsSection {
    fn default() -> Self {
        let o = Optics::default();
        Self {
            numerical_aperture: o.numerical_aperture,
            lambda_excitation_nm: o.lambda_excitation,
            lambda_emission_nm: o.lambda_emission,
            refractive_index: o.refractive_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectSection {
    Filaments { count: usize, width_nm: f64 },
    Block { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseSection {
    Flat,
    SineArctan { sine_amplitude: f64, sine_period_nm: f64, arctan_amplitude: f64, arctan_scale_nm: f64, shift: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub object_voxels: Vec<usize>,
    pub pad_voxels: Vec<usize>,
    pub spacing_nm: Vec<f64>,
    pub optics: OpticsSection,
    pub exponent: u32,
    /// Overrides the optics-derived Gaussian widths.
    pub psf_widths_nm: Option<Vec<f64>>,
    /// Overrides the optics-derived fringe wavenumber (1/nm).
    pub wavenumber: Option<f64>,
    pub phase_degrees: Vec<usize>,
    pub object: ObjectSection,
    pub phase: PhaseSection,
    pub peak: f64,
    pub weight_floor: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        let d = SceneConfig::desk_2d(0);
        let p = SineArctanPhase::default();
        Self {
            object_voxels: d.object_voxels,
            pad_voxels: d.pad_voxels,
            spacing_nm: d.spacing,
            optics: OpticsSection::default(),
            exponent: d.psf.exponent,
            psf_widths_nm: None,
            wavenumber: None,
            phase_degrees: d.phase_degrees,
            object: ObjectSection::Filaments { count: 4, width_nm: 30.0 },
            phase: PhaseSection::SineArctan {
                sine_amplitude: p.sine_amplitude,
                sine_period_nm: p.sine_period,
                arctan_amplitude: p.arctan_amplitude,
                arctan_scale_nm: p.arctan_scale,
                shift: p.shift,
            },
            peak: d.peak,
            weight_floor: d.weight_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerSection {
    pub complementarity_scale: f64,
    pub max_outer: usize,
    pub kkt_tol: f64,
    pub cg_tol: f64,
    pub cg_max: usize,
    pub backup_patience: usize,
    pub adjoint_trials: usize,
}

impl Default for InnerSection {
    fn default() -> Self {
        let s = SsnConfig::default();
        Self {
            complementarity_scale: s.complementarity_scale,
            max_outer: s.max_outer,
            kkt_tol: s.kkt_tol,
            cg_tol: s.cg_tol,
            cg_max: s.cg_max,
            backup_patience: s.backup_patience,
            adjoint_trials: s.adjoint_trials,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrgnmSection {
    pub alpha0: f64,
    pub decay: f64,
    pub eta: f64,
    pub delta_bar: f64,
    pub max_iters: usize,
    pub variant: VariantName,
    pub inner: InnerSection,
}

impl Default for IrgnmSection {
    fn default() -> Self {
        let c = IrgnmConfig::default();
        Self {
            alpha0: c.alpha0,
            decay: c.decay,
            eta: c.eta,
            delta_bar: c.delta_bar,
            max_iters: c.max_iters,
            variant: VariantName::Constrained,
            inner: InnerSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    pub size: usize,
    /// Gaussian width of T in samples.
    pub width: f64,
    pub gain: f64,
    pub beta: f64,
    /// ‖ω‖ values to sweep.
    pub rhos: Vec<f64>,
    pub anchor_offset: f64,
    /// log10 range and count of the linear α sweep.
    pub linear_log10_alpha: (f64, f64),
    pub linear_points: usize,
    pub linear_tolerance: f64,
    pub noise_free_iters: usize,
    /// Iterations entering the noise-free fit.
    pub fit_range: (usize, usize),
    pub noise_free_tolerance: f64,
    /// log10 range and count of the δ̄ sweep.
    pub noisy_log10_delta: (f64, f64),
    pub noisy_points: usize,
    pub noisy_max_iters: usize,
    pub noisy_tolerance: f64,
}

impl Default for RatesSection {
    fn default() -> Self {
        Self {
            size: 256,
            width: 2.5,
            gain: 3.0,
            beta: 0.05,
            rhos: vec![1.0],
            anchor_offset: 1.0,
            linear_log10_alpha: (-6.0, -1.0),
            linear_points: 11,
            linear_tolerance: 0.05,
            noise_free_iters: 20,
            fit_range: (3, 18),
            noise_free_tolerance: 0.15,
            noisy_log10_delta: (-5.0, -2.0),
            noisy_points: 7,
            noisy_max_iters: 200,
            noisy_tolerance: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsfSection {
    pub phis: Vec<f64>,
    pub exponents: Vec<u32>,
    pub scale_bar_nm: f64,
}

impl Default for PsfSection {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self { phis: vec![0.0, 0.5 * PI, PI], exponents: vec![2, 4], scale_bar_nm: 800.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory. Not echoed: it does not influence results.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    /// Worker threads for independent runs. Not echoed for the same reason.
    #[serde(skip_serializing)]
    pub threads: usize,
    pub scene: SceneSection,
    /// Kernel manifest replacing the cosine model.
    pub kernel_manifest: Option<PathBuf>,
    /// Data field replacing the simulated g_δ in `reconstruct`.
    pub data: Option<PathBuf>,
    pub irgnm: IrgnmSection,
    pub rates: RatesSection,
    pub psf: PsfSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            threads: 1,
            scene: SceneSection::default(),
            kernel_manifest: None,
            data: None,
            irgnm: IrgnmSection::default(),
            rates: RatesSection::default(),
            psf: PsfSection::default(),
        }
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variant: Option<VariantName>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg: RunConfig = match path {
            Some(p) => read_json(p)?,
            None => RunConfig::default(),
        };
        // referenced files are relative to the config file
        if let Some(base) = path.and_then(Path::parent) {
            for rel in [&mut cfg.kernel_manifest, &mut cfg.data].into_iter().flatten() {
                if rel.is_relative() {
                    *rel = base.join(&*rel);
                }
            }
        }
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(v) = o.variant {
            self.irgnm.variant = v;
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.kernel_manifest, &self.data].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        let s = &self.scene;
        let nd = s.object_voxels.len();
        if nd == 0 || s.pad_voxels.len() != nd || s.spacing_nm.len() != nd || s.phase_degrees.len() != nd {
            return Err(Error::Config(
                "object_voxels, pad_voxels, spacing_nm and phase_degrees need one entry per axis".into(),
            ));
        }
        self.psf_spec().validate()?;
        self.irgnm_config().validate()?;
        let r = &self.rates;
        if r.rhos.iter().any(|&v| v.is_nan() || v <= 0.0) || r.linear_points < 5 || r.noisy_points < 5 {
            return Err(Error::Config("rates: rhos must be positive and sweeps need at least 5 points".into()));
        }
        Ok(())
    }

    pub fn optics(&self) -> Optics {
        let o = &self.scene.optics;
        Optics {
            numerical_aperture: o.numerical_aperture,
            lambda_excitation: o.lambda_excitation_nm,
            lambda_emission: o.lambda_emission_nm,
            refractive_index: o.refractive_index,
        }
    }

    pub fn psf_spec_with(&self, exponent: u32) -> CosinePsfSpec {
        let mut spec = CosinePsfSpec::from_optics(self.scene.object_voxels.len(), &self.optics(), exponent);
        if let Some(w) = &self.scene.psf_widths_nm {
            spec.widths = w.clone();
        }
        if let Some(c) = self.scene.wavenumber {
            spec.wavenumber = c;
        }
        spec
    }

    pub fn psf_spec(&self) -> CosinePsfSpec {
        self.psf_spec_with(self.scene.exponent)
    }

    pub fn scene_config(&self) -> SceneConfig {
        let s = &self.scene;
        SceneConfig {
            object_voxels: s.object_voxels.clone(),
            pad_voxels: s.pad_voxels.clone(),
            spacing: s.spacing_nm.clone(),
            psf: self.psf_spec(),
            phase_degrees: s.phase_degrees.clone(),
            scene: match s.object {
                ObjectSection::Filaments { count, width_nm } => SceneKind::Filaments { count, width: width_nm },
                ObjectSection::Block { fraction } => SceneKind::Block { fraction },
            },
            phase: match s.phase {
                PhaseSection::Flat => None,
                PhaseSection::SineArctan {
                    sine_amplitude,
                    sine_period_nm,
                    arctan_amplitude,
                    arctan_scale_nm,
                    shift,
                } => Some(SineArctanPhase {
                    sine_amplitude,
                    sine_period: sine_period_nm,
                    arctan_amplitude,
                    arctan_scale: arctan_scale_nm,
                    shift,
                }),
            },
            peak: s.peak,
            weight_floor: s.weight_floor,
            seed: self.seed,
        }
    }

    pub fn irgnm_config(&self) -> IrgnmConfig {
        let i = &self.irgnm;
        let n = &i.inner;
        IrgnmConfig {
            alpha0: i.alpha0,
            decay: i.decay,
            eta: i.eta,
            delta_bar: i.delta_bar,
            max_iters: i.max_iters,
            variant: i.variant.into(),
            inner: SsnConfig {
                complementarity_scale: n.complementarity_scale,
                max_outer: n.max_outer,
                kkt_tol: n.kkt_tol,
                cg_tol: n.cg_tol,
                cg_max: n.cg_max,
                backup_patience: n.backup_patience,
                adjoint_trials: n.adjoint_trials,
            },
        }
    }

    /// The effective configuration as compact JSON, for log headers.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_core() {
        let c = RunConfig::default();
        assert_eq!(c.scene_config(), SceneConfig::desk_2d(1));
        assert_eq!(c.irgnm_config(), IrgnmConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn echo_round_trips_and_hides_paths() {
        let mut c = RunConfig { out: "somewhere".into(), ..RunConfig::default() };
        c.irgnm.variant = VariantName::Projected;
        let text = c.echo();
        assert!(!text.contains("somewhere"));
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.irgnm, c.irgnm);
        assert_eq!(back.scene, c.scene);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"irgnm": {"variant": "projected"}}"#).unwrap();
        assert_eq!(c.irgnm.variant, VariantName::Projected);
        assert_eq!(c.irgnm.alpha0, 1.0);
    }
}
