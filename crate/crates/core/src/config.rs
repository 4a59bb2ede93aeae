//! Simulation configuration: a TOML tree with one section per module.
//! Unknown keys are rejected; every default is materialized so that the
//! serialized config is a complete record of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::LoadData;
use crate::error::{Error, Result};
use crate::material::{Isotropic, MaterialLaws, Potential, ViscosityProfile};
use crate::mesh::{generate_unit_square, load_mesh_with, Mesh2D, Side};
use crate::thermomech_step::CoupledOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeshConfig {
    /// Unit square with `n × n` cells, Dirichlet on the listed sides.
    Generated { n: usize, dirichlet: Vec<Side> },
    File {
        path: PathBuf,
        #[serde(default)]
        repair_orientation: bool,
    },
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig::Generated {
            n: 8,
            dirichlet: vec![Side::Left],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    pub lambda: f64,
    pub mu: f64,
    pub delta: f64,
    pub viscous_lambda: f64,
    pub viscous_mu: f64,
    pub viscosity_profile: ViscosityProfile,
    pub expansion: f64,
    pub k0: f64,
    pub kappa: f64,
    pub q: f64,
    pub gradient_prefactor: f64,
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub density: f64,
    /// Exponent of the strain regularization, `> 4`.
    pub gamma: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self::from_laws(&MaterialLaws::default(), 5.0)
    }
}

impl MaterialConfig {
    pub fn from_laws(m: &MaterialLaws, gamma: f64) -> Self {
        Self {
            lambda: m.elastic.lambda,
            mu: m.elastic.mu,
            delta: m.delta,
            viscous_lambda: m.viscous.lambda,
            viscous_mu: m.viscous.mu,
            viscosity_profile: m.viscosity_profile,
            expansion: m.expansion,
            k0: m.k0,
            kappa: m.kappa,
            q: m.q,
            gradient_prefactor: m.gradient_prefactor,
            w0: m.potential.w0,
            w1: m.potential.w1,
            w2: m.potential.w2,
            density: m.density,
            gamma,
        }
    }

    pub fn laws(&self) -> MaterialLaws {
        MaterialLaws {
            elastic: Isotropic {
                lambda: self.lambda,
                mu: self.mu,
            },
            delta: self.delta,
            viscous: Isotropic {
                lambda: self.viscous_lambda,
                mu: self.viscous_mu,
            },
            viscosity_profile: self.viscosity_profile,
            expansion: self.expansion,
            k0: self.k0,
            kappa: self.kappa,
            q: self.q,
            gradient_prefactor: self.gradient_prefactor,
            potential: Potential {
                w0: self.w0,
                w1: self.w1,
                w2: self.w2,
            },
            density: self.density,
        }
    }
}

/// A nodal scalar field: a constant or a file with one value per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarField {
    Constant(f64),
    File { file: PathBuf },
}

/// A nodal vector field: a constant pair or a file with two values per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorField {
    Constant([f64; 2]),
    File { file: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub u0: VectorField,
    pub u_dot0: VectorField,
    pub z0: ScalarField,
    pub theta0: ScalarField,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            u0: VectorField::Constant([0.0, 0.0]),
            u_dot0: VectorField::Constant([0.0, 0.0]),
            z0: ScalarField::Constant(1.0),
            theta0: ScalarField::Constant(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    /// Energy inequalities: residual ≥ −energy × (max energy magnitude).
    pub energy: f64,
    /// Damage stationarity, relative to the objective density.
    pub damage: f64,
    pub damage_max_iter: usize,
    /// Semistability: residual ≥ −semistability × (energy scale).
    pub semistability: f64,
    /// Unidirectionality: max (z_k − z_{k−1}) ≤ unidirectionality.
    pub unidirectionality: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            energy: 1e-8,
            damage: 1e-9,
            damage_max_iter: 10_000,
            semistability: 1e-8,
            unidirectionality: 1e-14,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PositivityConfig {
    pub theta_star: f64,
    /// Lower bound of the volumetric heat source, enabling the enhanced floor.
    pub h_star: Option<f64>,
}

impl Default for PositivityConfig {
    fn default() -> Self {
        Self {
            theta_star: 1.0,
            h_star: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemistabilityConfig {
    pub samples: usize,
    /// Sampling cadence in steps; the final step is always sampled.
    pub every: usize,
}

impl Default for SemistabilityConfig {
    fn default() -> Self {
        Self { samples: 100, every: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// VTK snapshot cadence in steps (0: initial and final state only).
    pub every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { every: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescalingConfig {
    pub eps: Vec<f64>,
    pub beta: f64,
    /// Run the sweep members concurrently.
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_true() -> bool {
    true
}

fn default_seed() -> u64 {
    42
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub loads: LoadData,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub solver: CoupledOptions,
    #[serde(default)]
    pub positivity: PositivityConfig,
    #[serde(default)]
    pub semistability: SemistabilityConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub rescaling: Option<RescalingConfig>,
    /// Directory against which relative file paths are resolved.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mesh: MeshConfig::default(),
            time: TimeConfig::default(),
            material: MaterialConfig::default(),
            loads: LoadData::default(),
            initial: InitialConfig::default(),
            tolerances: ToleranceConfig::default(),
            solver: CoupledOptions::default(),
            positivity: PositivityConfig::default(),
            semistability: SemistabilityConfig::default(),
            output: OutputConfig::default(),
            seed: default_seed(),
            rescaling: None,
            base_dir: PathBuf::new(),
        }
    }
}

fn cfg_err(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

fn scalar_range(f: &ScalarField) -> Option<(f64, f64)> {
    match f {
        ScalarField::Constant(v) => Some((*v, *v)),
        ScalarField::File { .. } => None,
    }
}

impl SimConfig {
    pub fn tau(&self) -> f64 {
        self.time.horizon / self.time.steps as f64
    }

    pub fn laws(&self) -> MaterialLaws {
        self.material.laws()
    }

    /// Checks every invariant that does not need the mesh; errors name the
    /// offending field.
    pub fn validate(&self) -> Result<()> {
        if !(self.time.horizon > 0.0 && self.time.horizon.is_finite()) {
            return Err(cfg_err("time.horizon", format!("must be positive, got {}", self.time.horizon)));
        }
        if self.time.steps == 0 {
            return Err(cfg_err("time.steps", "must be at least 1"));
        }
        if let MeshConfig::Generated { n, dirichlet } = &self.mesh {
            if *n == 0 {
                return Err(cfg_err("mesh.n", "must be at least 1"));
            }
            if dirichlet.is_empty() {
                return Err(cfg_err("mesh.dirichlet", "at least one side must be clamped"));
            }
        }
        self.laws().validate()?;
        if !(self.material.gamma > 4.0) {
            return Err(cfg_err("material.gamma", format!("must exceed 4, got {}", self.material.gamma)));
        }
        self.loads.validate(self.time.horizon)?;
        let ts = self.positivity.theta_star;
        if !(ts > 0.0) {
            return Err(cfg_err("positivity.theta_star", format!("requires θ_* > 0, got {ts}")));
        }
        if let Some((lo, _)) = scalar_range(&self.initial.theta0) {
            if !(lo >= ts) {
                return Err(cfg_err(
                    "initial.theta0",
                    format!("requires θ₀ ≥ θ_* > 0, got θ₀ = {lo} with θ_* = {ts}"),
                ));
            }
        }
        if let Some((lo, hi)) = scalar_range(&self.initial.z0) {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
                return Err(cfg_err("initial.z0", format!("must lie in [0, 1], got {lo}")));
            }
        }
        if let Some(h) = self.positivity.h_star {
            if !(h >= 0.0) {
                return Err(cfg_err("positivity.h_star", "must be nonnegative"));
            }
            let hmin = self.loads.heat_source.min_on(self.time.horizon);
            if hmin < h {
                return Err(cfg_err(
                    "positivity.h_star",
                    format!("the heat source must satisfy H ≥ H_* = {h}, but its minimum is {hmin}"),
                ));
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.energy", t.energy),
            ("tolerances.damage", t.damage),
            ("tolerances.semistability", t.semistability),
        ] {
            if !(v > 0.0) {
                return Err(cfg_err(name, "must be positive"));
            }
        }
        if !(t.unidirectionality >= 0.0) {
            return Err(cfg_err("tolerances.unidirectionality", "must be nonnegative"));
        }
        if self.solver.truncation_levels.is_empty() || self.solver.truncation_levels.iter().any(|m| !(*m > 0.0)) {
            return Err(cfg_err("solver.truncation_levels", "must be a nonempty list of positive levels"));
        }
        if let Some(r) = &self.rescaling {
            if r.eps.is_empty() || r.eps.iter().any(|e| !(*e > 0.0)) {
                return Err(cfg_err("rescaling.eps", "must be a nonempty list of positive values"));
            }
            if !(r.beta > 0.0) {
                return Err(cfg_err("rescaling.beta", format!("must be positive, got {}", r.beta)));
            }
            if r.beta < 2.0 {
                log::warn!("rescaling.beta = {} < 2: the limit temperature equation check is outside its hypotheses", r.beta);
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn build_mesh(&self) -> Result<Mesh2D> {
        match &self.mesh {
            MeshConfig::Generated { n, dirichlet } => generate_unit_square(*n, dirichlet),
            MeshConfig::File { path, repair_orientation } => load_mesh_with(self.resolve(path), *repair_orientation),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
    }
}

pub fn parse_config_str(text: &str) -> Result<SimConfig> {
    let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses and validates a configuration file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

fn read_columns(path: &Path, columns: usize, n: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::with_capacity(n * columns);
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != columns {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected {columns} values, found {}", vals.len()),
            });
        }
        for v in vals {
            out.push(v.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("invalid number {v:?}"),
            })?);
        }
    }
    if out.len() != n * columns {
        return Err(Error::Input(format!(
            "{}: expected {n} nodal rows, found {}",
            path.display(),
            out.len() / columns
        )));
    }
    Ok(out)
}

impl SimConfig {
    pub fn scalar_field(&self, f: &ScalarField, n: usize) -> Result<Vec<f64>> {
        match f {
            ScalarField::Constant(v) => Ok(vec![*v; n]),
            ScalarField::File { file } => read_columns(&self.resolve(file), 1, n),
        }
    }

    pub fn vector_field(&self, f: &VectorField, n: usize) -> Result<Vec<f64>> {
        match f {
            VectorField::Constant(v) => Ok((0..n).flat_map(|_| *v).collect()),
            VectorField::File { file } => read_columns(&self.resolve(file), 2, n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[mesh]\nkind = \"generated\"\nn = 8\ndirichlet = [\"left\"]\n[time]\nhorizon = 1.0\nsteps = 10\n";

    #[test]
    fn minimal_config_is_valid() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.time.steps, 10);
        assert_eq!(c.material.gamma, 5.0);
        assert_eq!(c.semistability.every, 5);
        // defaults survive a round trip through the echoed form
        let again = parse_config_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn zero_initial_temperature_rejected() {
        let e = parse_config_str(&format!("{MINIMAL}[initial]\ntheta0 = 0.0\n")).unwrap_err();
        let m = e.to_string();
        assert!(m.contains("initial.theta0") && m.contains("θ_* > 0"), "{m}");
    }

    #[test]
    fn negative_heat_source_rejected() {
        let e = parse_config_str(&format!(
            "{MINIMAL}[loads]\nheat_source = {{ kind = \"constant\", value = -1.0 }}\n"
        ))
        .unwrap_err();
        assert!(e.to_string().contains("loads.heat_source"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse_config_str(&format!("{MINIMAL}[material]\nlamda = 2.0\n")).unwrap_err();
        assert!(e.to_string().contains("lamda"), "{e}");
        assert!(parse_config_str("tyme = 3\n").is_err());
    }

    #[test]
    fn loads_and_fields_parse() {
        let c = parse_config_str(&format!(
            "{MINIMAL}[loads]\ntraction = [{{ kind = \"ramp\", start = 0.0, slope = 0.5 }}, {{ kind = \"constant\", value = 0.0 }}]\ntraction_sides = [\"right\"]\n[initial]\nz0 = 0.5\nu_dot0 = [0.1, 0.0]\n[rescaling]\neps = [1.0, 0.5]\nbeta = 2.0\n"
        ))
        .unwrap();
        assert_eq!(c.loads.traction[0].value(1.0), 0.5);
        assert_eq!(c.scalar_field(&c.initial.z0, 3).unwrap(), vec![0.5; 3]);
        assert_eq!(c.vector_field(&c.initial.u_dot0, 2).unwrap(), vec![0.1, 0.0, 0.1, 0.0]);
        assert_eq!(c.rescaling.unwrap().eps.len(), 2);
    }

    #[test]
    fn heat_floor_requires_matching_source() {
        let e = parse_config_str(&format!("{MINIMAL}[positivity]\ntheta_star = 1.0\nh_star = 1.0\n")).unwrap_err();
        assert!(e.to_string().contains("positivity.h_star"));
        parse_config_str(&format!(
            "{MINIMAL}[positivity]\ntheta_star = 1.0\nh_star = 1.0\n[loads]\nheat_source = {{ kind = \"constant\", value = 1.0 }}\n"
        ))
        .unwrap();
    }
}
