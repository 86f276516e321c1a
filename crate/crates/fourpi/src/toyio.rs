//! Replayable toy problems: the spec, ω, x₀, x†, g and g_δ as vector fields
//! plus a manifest. Loading rebuilds the problem and checks it against the
//! stored fields bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use fourpi_core::irgnm::NoiseBudget;
use fourpi_core::toy::{build_linear_toy, build_nonlinear_toy, perturb, ToyProblem, ToySpec};
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};
use crate::field::{read_json, read_vector, write_json, write_vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyManifest {
    pub size: usize,
    pub width: f64,
    pub gain: f64,
    pub beta: f64,
    pub constrained: Vec<bool>,
    pub delta_g: f64,
    pub delta_f: f64,
    pub delta_fprime: f64,
    /// Seed passed to the perturbation; absent for unperturbed problems.
    pub perturb_seed: Option<u64>,
    pub omega: String,
    pub anchor: String,
    pub x_dagger: String,
    pub exact_data: String,
    pub data: String,
}

pub fn save_toy(dir: &Path, problem: &ToyProblem, perturb_seed: Option<u64>) -> Result<PathBuf> {
    io(dir, fs::create_dir_all(dir))?;
    let put = |name: &str, v: &[f64]| -> Result<String> {
        let p = write_vector(&dir.join(name), v)?;
        Ok(p.file_name().unwrap().to_string_lossy().into_owned())
    };
    let manifest = ToyManifest {
        size: problem.spec.size,
        width: problem.spec.width,
        gain: problem.spec.gain,
        beta: problem.spec.beta,
        constrained: problem.spec.constrained.clone(),
        delta_g: problem.noise.delta_g,
        delta_f: problem.noise.delta_f,
        delta_fprime: problem.noise.delta_fprime,
        perturb_seed,
        omega: put("omega", &problem.spec.omega)?,
        anchor: put("anchor", &problem.spec.anchor)?,
        x_dagger: put("x_dagger", &problem.x_dagger)?,
        exact_data: put("exact_data", &problem.exact_data)?,
        data: put("data", &problem.data)?,
    };
    let path = dir.join("toy.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn load_toy(manifest_path: &Path) -> Result<ToyProblem> {
    let m: ToyManifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let spec = ToySpec {
        size: m.size,
        width: m.width,
        gain: m.gain,
        beta: m.beta,
        omega: read_vector(&base.join(&m.omega))?,
        anchor: read_vector(&base.join(&m.anchor))?,
        constrained: m.constrained.clone(),
    };
    let mut problem = if spec.beta == 0.0 { build_linear_toy(&spec)? } else { build_nonlinear_toy(&spec)? };
    if let Some(seed) = m.perturb_seed {
        let budget = NoiseBudget { delta_g: m.delta_g, delta_f: m.delta_f, delta_fprime: m.delta_fprime };
        problem = perturb(&problem, budget, seed)?;
    }
    let checks = [
        ("x_dagger", &m.x_dagger, &problem.x_dagger),
        ("exact_data", &m.exact_data, &problem.exact_data),
        ("data", &m.data, &problem.data),
    ];
    for (what, file, rebuilt) in checks {
        if read_vector(&base.join(file))? != *rebuilt {
            return Err(Error::Format {
                path: manifest_path.into(),
                reason: format!("rebuilt {what} differs from stored"),
            });
        }
    }
    Ok(problem)
}
