//! End-to-end simulated 4Pi experiment: scene, data, weighted operator,
//! solver scaling and IRGNM reconstruction.

use alloc::vec::Vec;

use crate::chebyshev::build_phase_basis;
use crate::error::{Error, Result};
use crate::fourpi::{
    build_cosine_expansion, CosinePsfSpec, FourPiOperator, FourPiProblem, FourPiTruth, JointState, KernelExpansion,
    Optics, PhaseCoeffs, SolverScaling,
};
use crate::grid::{weight_from_data, DomainBox, ScalarField, WeightField};
use crate::irgnm::{run, IrgnmConfig, IrgnmOutcome};
use crate::scene::{block, filaments, simulate, Simulation, SineArctanPhase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneKind {
    Filaments { count: usize, width: f64 },
    Block { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub object_voxels: Vec<usize>,
    pub pad_voxels: Vec<usize>,
    /// nm per axis
    pub spacing: Vec<f64>,
    pub psf: CosinePsfSpec,
    pub phase_degrees: Vec<usize>,
    pub scene: SceneKind,
    /// `None` means φ† ≡ 0.
    pub phase: Option<SineArctanPhase>,
    /// Peak of the exact data in counts.
    pub peak: f64,
    pub weight_floor: f64,
    pub seed: u64,
}

impl SceneConfig {
    /// 64² filament scene on a 1.6 µm field, 800 nm of kernel padding,
    /// n = 2 psf, degree-7 phase and peak 100 counts.
    pub fn desk_2d(seed: u64) -> Self {
        Self {
            object_voxels: alloc::vec![64, 64],
            pad_voxels: alloc::vec![32, 32],
            spacing: alloc::vec![25.0, 25.0],
            psf: CosinePsfSpec::from_optics(2, &Optics::default(), 2),
            phase_degrees: alloc::vec![7, 7],
            scene: SceneKind::Filaments { count: 4, width: 30.0 },
            phase: Some(SineArctanPhase::default()),
            peak: 100.0,
            weight_floor: 1.0,
            seed,
        }
    }
}

/// A problem instance ready for reconstruction.
#[derive(Debug, Clone)]
pub struct Instance {
    pub domain: DomainBox,
    /// Ground truth and exact data; `None` for externally supplied data.
    pub simulation: Option<Simulation>,
    /// g_δ.
    pub noisy: ScalarField,
    /// Operator with the data weight w = 1/(2 max(g_δ, c)).
    pub operator: FourPiOperator,
    pub problem: FourPiProblem,
    /// Whitened g_δ.
    pub data: Vec<f64>,
}

impl Instance {
    /// Physical state for the zero initial guess (f₀ = 0, φ₀ = 0).
    pub fn zero_state(&self) -> JointState {
        JointState {
            object: ScalarField::zeros(self.operator.object_grid().clone()),
            phase: PhaseCoeffs::zeros(self.operator.basis().len()),
        }
    }

    pub fn truth(&self) -> Option<FourPiTruth<'_>> {
        let s = self.simulation.as_ref()?;
        Some(FourPiTruth { problem: &self.problem, object: &s.object, phase: &s.phase })
    }

    /// Runs the IRGNM from (f₀, φ₀) = (0, 0).
    pub fn reconstruct(&self, cfg: &IrgnmConfig) -> Result<IrgnmOutcome> {
        let x0 = self.problem.encode(&self.zero_state())?;
        match self.truth() {
            Some(t) => run(&self.problem, &self.data, &x0, cfg, Some(&t)),
            None => run(&self.problem, &self.data, &x0, cfg, None),
        }
    }
}

/// Builds the kernel expansion, simulates data, and sets up the weighted
/// problem. The solver units are balanced at the pilot state
/// (f = 2·g_δ restricted to Ω, φ = 0), so α₀ = 1 is a sensible start.
pub fn build_instance(cfg: &SceneConfig) -> Result<Instance> {
    let domain = DomainBox::from_voxels(&cfg.object_voxels, &cfg.pad_voxels, &cfg.spacing)?;
    let kernel = build_cosine_expansion(&cfg.psf, &domain)?;
    build_instance_with_kernel(cfg, domain, kernel)
}

/// As [`build_instance`] with an externally supplied kernel expansion.
pub fn build_instance_with_kernel(cfg: &SceneConfig, domain: DomainBox, kernel: KernelExpansion) -> Result<Instance> {
    let plain = plain_operator(cfg, &domain, kernel)?;
    let object_grid = plain.object_grid().clone();
    let data_grid = plain.data_grid().clone();
    let truth_object = match cfg.scene {
        SceneKind::Filaments { count, width } => filaments(&object_grid, count, width, cfg.seed),
        SceneKind::Block { fraction } => block(&object_grid, fraction),
    };
    let phase = match &cfg.phase {
        Some(p) => p.sample(&data_grid),
        None => alloc::vec![0.0; data_grid.len()],
    };
    let simulation = simulate(&plain, &truth_object, &phase, cfg.peak, cfg.seed.wrapping_add(1))?;
    let noisy = simulation.noisy.clone();
    finish(cfg, domain, plain, Some(simulation), noisy)
}

/// Instance for measured (or externally simulated) data g_δ on Ω′.
/// The scene fields of `cfg` are ignored.
pub fn build_instance_from_data(
    cfg: &SceneConfig,
    domain: DomainBox,
    kernel: KernelExpansion,
    noisy: ScalarField,
) -> Result<Instance> {
    let plain = plain_operator(cfg, &domain, kernel)?;
    noisy.grid().check_same(plain.data_grid(), "data")?;
    finish(cfg, domain, plain, None, noisy)
}

fn plain_operator(cfg: &SceneConfig, domain: &DomainBox, kernel: KernelExpansion) -> Result<FourPiOperator> {
    let object_grid = domain.object_grid()?;
    let data_grid = domain.extended_grid()?;
    kernel.grid().check_same(&data_grid, "kernel")?;
    let basis = build_phase_basis(&cfg.phase_degrees, domain)?;
    FourPiOperator::new(kernel, basis, &object_grid, WeightField::uniform(data_grid))
}

fn finish(
    cfg: &SceneConfig,
    domain: DomainBox,
    plain: FourPiOperator,
    simulation: Option<Simulation>,
    noisy: ScalarField,
) -> Result<Instance> {
    let weight = weight_from_data(&noisy, cfg.weight_floor)?;
    let operator = plain.with_weight(weight)?;
    let pilot_values: Vec<f64> = operator.convolver().crop(noisy.values()).iter().map(|v| 2.0 * v).collect();
    let pilot = JointState {
        object: ScalarField::new(operator.object_grid().clone(), pilot_values)?,
        phase: PhaseCoeffs::zeros(operator.basis().len()),
    };
    let scaling = if pilot.object.max() > 0.0 {
        SolverScaling::balanced(&operator, &pilot, 50, cfg.seed)?
    } else {
        SolverScaling::default()
    };
    let problem = FourPiProblem::new(operator.clone(), scaling)?;
    let data = problem.whiten_data(&noisy)?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("whitened data"));
    }
    Ok(Instance { domain, simulation, noisy, operator, problem, data })
}
