//! The four subcommands as library functions. Each writes its outputs and a
//! run log into the configured output directory and returns the names of
//! failed checks (empty on success).

use std::fs;
use std::path::Path;
use std::time::Instant;

use fourpi_core::chebyshev::build_phase_basis;
use fourpi_core::experiment::{build_instance_from_data, build_instance_with_kernel, Instance};
use fourpi_core::fourpi::{build_cosine_expansion, synthesize_psf, KernelExpansion};
use fourpi_core::grid::{DomainBox, ScalarField};
use fourpi_core::irgnm::{run, stopping_index, EuclideanTruth, IrgnmConfig, NoiseBudget, Variant};
use fourpi_core::linalg;
use fourpi_core::tikhonov::verify_approximation;
use fourpi_core::toy::{build_linear_toy, build_nonlinear_toy, measure_rate, perturb, ToySpec};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{io, Error, Result};
use crate::field::{read_field_of, write_field, write_json, FieldKind};
use crate::image::{axial_plane, write_pgm};
use crate::log::{Cell, RunLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Simulate ground truth, exact and Poisson-noisy 4Pi data.
    Simulate,
    /// Run the IRGNM on simulated or supplied data.
    Reconstruct,
    /// Rate experiments on the synthetic toy problems.
    Rates,
    /// Export psf slices for a list of relative phases.
    Psf,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Reconstruct => "reconstruct",
            Command::Rates => "rates",
            Command::Psf => "psf",
        }
    }
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<Vec<String>> {
    io(&cfg.out, fs::create_dir_all(&cfg.out))?;
    let started = Instant::now();
    let mut log = RunLog::create(&cfg.out.join(format!("{}.log", command.name())), command.name(), &cfg.echo())?;
    let body = match command {
        Command::Simulate => simulate(cfg, &mut log),
        Command::Reconstruct => reconstruct(cfg, &mut log),
        Command::Rates => rates(cfg, &mut log),
        Command::Psf => psf(cfg, &mut log),
    };
    if let Err(e) = body {
        log.error(&e.to_string())?;
    }
    let failed = log.finish()?;
    // wall-clock lives outside the log so logs stay bit-identical
    write_json(
        &cfg.out.join("timings.json"),
        &Timings { command: command.name(), seconds: started.elapsed().as_secs_f64() },
    )?;
    Ok(failed)
}

#[derive(Serialize)]
struct Timings {
    command: &'static str,
    seconds: f64,
}

fn domain(cfg: &RunConfig) -> Result<DomainBox> {
    let s = &cfg.scene;
    Ok(DomainBox::from_voxels(&s.object_voxels, &s.pad_voxels, &s.spacing_nm)?)
}

fn kernel(cfg: &RunConfig, domain: &DomainBox) -> Result<KernelExpansion> {
    match &cfg.kernel_manifest {
        Some(p) => crate::kernel::load_expansion(p),
        None => Ok(build_cosine_expansion(&cfg.psf_spec(), domain)?),
    }
}

/// Simulated instance (ignores `cfg.data`).
pub fn simulated_instance(cfg: &RunConfig) -> Result<Instance> {
    let d = domain(cfg)?;
    let k = kernel(cfg, &d)?;
    Ok(build_instance_with_kernel(&cfg.scene_config(), d, k)?)
}

/// Instance on `cfg.data` when given, otherwise simulated.
pub fn instance(cfg: &RunConfig) -> Result<Instance> {
    match &cfg.data {
        Some(p) => {
            let d = domain(cfg)?;
            let k = kernel(cfg, &d)?;
            let g = read_field_of(p, FieldKind::Data)?;
            Ok(build_instance_from_data(&cfg.scene_config(), d, k, g)?)
        }
        None => simulated_instance(cfg),
    }
}

fn image(out: &Path, name: &str, field: &ScalarField, scale_bar: f64) -> Result<()> {
    write_pgm(&out.join(name), &axial_plane(field)?, Some(scale_bar))?;
    Ok(())
}

fn simulate(cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let inst = simulated_instance(cfg)?;
    let sim = inst.simulation.as_ref().expect("simulated");
    let out = &cfg.out;
    let phase = ScalarField::new(inst.operator.data_grid().clone(), sim.phase.clone())?;
    write_field(&out.join("object_true"), &sim.object, FieldKind::Object)?;
    write_field(&out.join("phase_true"), &phase, FieldKind::Phase)?;
    write_field(&out.join("data_exact"), &sim.exact, FieldKind::Data)?;
    write_field(&out.join("data_noisy"), &sim.noisy, FieldKind::Data)?;
    write_field(&out.join("weight"), inst.operator.weight().field(), FieldKind::Weight)?;
    let bar = cfg.psf.scale_bar_nm;
    image(out, "object_true", &sim.object, bar)?;
    image(out, "phase_true", &phase, bar)?;
    image(out, "data_noisy", &sim.noisy, bar)?;
    log.metric("peak_exact", sim.exact.max())?;
    log.metric("peak_noisy", sim.noisy.max())?;
    log.metric("relative_noise", sim.relative_noise)?;
    log.metric("clamped_voxels", sim.clamped)?;
    let s = inst.problem.scaling();
    log.metric("scaling_object", s.object)?;
    log.metric("scaling_phase", s.phase)?;
    let counts = sim.noisy.values().iter().all(|&v| v >= 0.0 && v.fract() == 0.0);
    log.check("data_are_counts", counts, "")?;
    Ok(())
}

#[derive(Serialize)]
struct PhaseCoefficients<'a> {
    degrees: &'a [usize],
    /// Multi-indices of the Chebyshev tensor basis, last axis fastest.
    multi_indices: &'a [Vec<usize>],
    halfwidths_nm: &'a [f64],
    coefficients: &'a [f64],
}

fn reconstruct(cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let inst = instance(cfg)?;
    let irgnm = cfg.irgnm_config();
    let s = inst.problem.scaling();
    log.metric("scaling_object", s.object)?;
    log.metric("scaling_phase", s.phase)?;
    if let Some(sim) = &inst.simulation {
        log.metric("relative_noise", sim.relative_noise)?;
    }
    let outcome = inst.reconstruct(&irgnm)?;
    log.trace("trace", &outcome.trace)?;
    let state = inst.problem.decode(&outcome.x)?;
    let out = &cfg.out;
    let phase = ScalarField::new(inst.operator.data_grid().clone(), inst.operator.phase_field(&state.phase)?)?;
    let fit = inst.operator.forward(&state)?;
    write_field(&out.join("object_rec"), &state.object, FieldKind::Object)?;
    write_field(&out.join("phase_rec"), &phase, FieldKind::Phase)?;
    write_field(&out.join("data_fit"), &fit, FieldKind::Data)?;
    let basis = inst.operator.basis();
    write_json(
        &out.join("phase_coeffs.json"),
        &PhaseCoefficients {
            degrees: basis.degrees(),
            multi_indices: basis.multi_indices(),
            halfwidths_nm: basis.halfwidths(),
            coefficients: &state.phase.0,
        },
    )?;
    let bar = cfg.psf.scale_bar_nm;
    image(out, "object_rec", &state.object, bar)?;
    image(out, "phase_rec", &phase, bar)?;
    image(out, "data", &inst.noisy, bar)?;
    if let Some(last) = outcome.trace.records.last() {
        if let Some(e) = last.errors {
            log.metric("final_object_error", e.object)?;
            log.metric("final_phase_error", e.phase)?;
        }
        log.metric("final_residual", last.residual)?;
    }
    let fmin = state.object.min();
    log.metric("object_min", fmin)?;
    log.check("finite", outcome.x.iter().all(|v| v.is_finite()), "")?;
    if irgnm.variant != Variant::Unconstrained {
        log.check("object_nonnegative", fmin >= 0.0, &format!("min={fmin:e}"))?;
    }
    Ok(())
}

fn logspace(range: (f64, f64), points: usize) -> Vec<f64> {
    let step = (range.1 - range.0) / (points - 1) as f64;
    (0..points).map(|k| 10f64.powf(range.0 + step * k as f64)).collect()
}

/// Runs `work` on `0..count` across `threads` workers; results in index order.
fn parallel<T: Send>(count: usize, threads: usize, work: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, count.max(1));
    let mut out: Vec<Option<T>> = (0..count).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let work = &work;
                s.spawn(move || (t..count).step_by(threads).map(|i| (i, work(i))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("worker panicked") {
                out[i] = Some(v);
            }
        }
    });
    out.into_iter().map(|v| v.unwrap()).collect()
}

fn rates(cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let r = &cfg.rates;
    let base = cfg.irgnm_config();
    for (k, &rho) in r.rhos.iter().enumerate() {
        // the first ρ is the reference run; the rest only report where fits degrade
        let tagged = k == 0;
        let verdict = |log: &mut RunLog, name: String, ok: bool, detail: String| -> Result<()> {
            if tagged {
                log.check(&name, ok, &detail)?;
            } else {
                log.note("sweep", &format!("{name} {} {detail}", if ok { "within" } else { "outside" }))?;
            }
            Ok(())
        };

        let spec = ToySpec::standard(r.size, r.width, r.gain, 0.0, rho, r.anchor_offset, cfg.seed)?;
        let lin = build_linear_toy(&spec)?;
        let alphas = logspace(r.linear_log10_alpha, r.linear_points);
        let table =
            verify_approximation(lin.exact.blur(), &spec.omega, &spec.anchor, &spec.constrained, &alphas, &base.inner)?;
        log.section(
            &format!("linear rho={rho:e}"),
            &["alpha", "error", "residual", "error_ratio", "residual_ratio", "converged"],
        )?;
        for row in &table.rows {
            log.row(&[
                row.alpha.into(),
                row.error.into(),
                row.residual.into(),
                row.error_ratio.into(),
                row.residual_ratio.into(),
                row.converged.into(),
            ])?;
        }
        let errs: Vec<f64> = table.rows.iter().map(|row| row.error).collect();
        let fit = measure_rate(&alphas, &errs)?;
        log.metric(&format!("linear_slope rho={rho:e}"), fit.slope)?;
        verdict(
            log,
            format!("linear_rate rho={rho:e}"),
            fit.within(0.5, r.linear_tolerance),
            format!("slope={:e}", fit.slope),
        )?;
        verdict(log, format!("linear_bounds rho={rho:e}"), table.bounds_hold(1e-6), String::new())?;

        let spec = ToySpec { beta: r.beta, ..spec };
        let toy = build_nonlinear_toy(&spec)?;
        log.metric(&format!("fixed_point_iters rho={rho:e}"), toy.fixed_point_iters)?;
        let free = IrgnmConfig { max_iters: r.noise_free_iters, delta_bar: 0.0, variant: Variant::Constrained, ..base };
        let outcome = run(&toy.operator, &toy.data, &spec.anchor, &free, Some(&EuclideanTruth(&toy.x_dagger)))?;
        log.trace(&format!("noise_free rho={rho:e}"), &outcome.trace)?;
        let fit = outcome.trace.rate_fit(r.fit_range.0, r.fit_range.1)?;
        log.metric(&format!("noise_free_slope rho={rho:e}"), fit.slope)?;
        verdict(
            log,
            format!("noise_free_rate rho={rho:e}"),
            fit.within(1.0, r.noise_free_tolerance),
            format!("slope={:e}", fit.slope),
        )?;

        let levels = logspace(r.noisy_log10_delta, r.noisy_points);
        let runs = parallel(levels.len(), cfg.threads, |i| -> Result<(usize, f64)> {
            let d = levels[i];
            let budget = NoiseBudget { delta_g: 0.5 * d, delta_f: 0.5 * d, delta_fprime: 0.5 * d.sqrt() };
            let q = perturb(&toy, budget, cfg.seed.wrapping_mul(1000).wrapping_add(100 + i as u64))?;
            let c = IrgnmConfig {
                delta_bar: budget.combined()?,
                max_iters: r.noisy_max_iters,
                variant: Variant::Constrained,
                ..base
            };
            let out = run(&q.operator, &q.data, &spec.anchor, &c, None)?;
            Ok((out.trace.stopping_index, linalg::dist(&out.x, &toy.x_dagger)))
        });
        log.section(&format!("noisy rho={rho:e}"), &["delta_bar", "stopping_index", "predicted_index", "error"])?;
        let mut errs = Vec::new();
        for (&d, res) in levels.iter().zip(runs) {
            let (n, e) = res?;
            let predicted =
                stopping_index(&(0..r.noisy_max_iters).map(|k| base.alpha(k)).collect::<Vec<_>>(), base.eta, d)?;
            log.row(&[d.into(), n.into(), predicted.into(), e.into()])?;
            errs.push(e);
        }
        let fit = measure_rate(&levels, &errs)?;
        log.metric(&format!("noisy_slope rho={rho:e}"), fit.slope)?;
        verdict(
            log,
            format!("noisy_rate rho={rho:e}"),
            fit.within(0.5, r.noisy_tolerance),
            format!("slope={:e}", fit.slope),
        )?;
    }
    Ok(())
}

/// Full width at half maximum of the central lobe along the last axis.
fn axial_fwhm(p: &ScalarField) -> f64 {
    let g = p.grid();
    let centre: Vec<usize> = g.dims().iter().map(|n| n / 2).collect();
    let last = g.ndim() - 1;
    let at = |k: usize| {
        let mut idx = centre.clone();
        idx[last] = k;
        p.values()[g.ravel(&idx)]
    };
    let c = centre[last];
    let half = 0.5 * at(c);
    let mut lo = c;
    while lo > 0 && at(lo - 1) >= half {
        lo -= 1;
    }
    let mut hi = c;
    while hi + 1 < g.dims()[last] && at(hi + 1) >= half {
        hi += 1;
    }
    (hi - lo + 1) as f64 * g.spacing()[last]
}

fn psf(cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let d = domain(cfg)?;
    let kernels: Vec<(String, KernelExpansion)> = match &cfg.kernel_manifest {
        Some(p) => vec![("file".into(), crate::kernel::load_expansion(p)?)],
        None => cfg
            .psf
            .exponents
            .iter()
            .map(|&n| Ok((format!("n{n}"), build_cosine_expansion(&cfg.psf_spec_with(n), &d)?)))
            .collect::<Result<_>>()?,
    };
    // the basis is unused here, but building it validates the degrees
    build_phase_basis(&cfg.scene.phase_degrees, &d)?;
    for (i, (tag, _)) in kernels.iter().enumerate() {
        log.note("kernel", &format!("{i} {tag}"))?;
    }
    let mut rows = Vec::new();
    for (ki, (tag, k)) in kernels.iter().enumerate() {
        for (i, &phi) in cfg.psf.phis.iter().enumerate() {
            let p = synthesize_psf(k, phi);
            write_pgm(&cfg.out.join(format!("psf_{tag}_phi{i}")), &axial_plane(&p)?, Some(cfg.psf.scale_bar_nm))?;
            let centre = p.values()[p.grid().ravel(&p.grid().dims().iter().map(|n| n / 2).collect::<Vec<_>>())];
            rows.push((ki, phi, p.min(), p.max(), centre, axial_fwhm(&p)));
        }
    }
    log.section("psf", &["kernel", "phi", "min", "max", "centre", "axial_fwhm_nm"])?;
    for &(ki, phi, lo, hi, c, w) in &rows {
        log.row(&[Cell::U(ki), phi.into(), lo.into(), hi.into(), c.into(), w.into()])?;
    }
    let ok = rows.iter().all(|r| r.2 >= -1e-12 * r.3);
    log.check("psf_nonnegative", ok, "")?;
    if !ok {
        return Err(Error::Config("synthesized psf has negative values".into()));
    }
    Ok(())
}
