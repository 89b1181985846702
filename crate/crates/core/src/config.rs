//! The run configuration: one JSON document with sections `grid`,
//! `hamiltonian`, `exponents`, `solver` and `certify`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certify::{certify, CertifyOptions, CertifyRun};
use crate::error::Result;
use crate::exponents::ExponentProfile;
use crate::field::{make_grid, TorusGrid};
use crate::hamiltonian::HamiltonianSpec;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    pub n: usize,
}

/// `(r, γ, r₁, γ₁)`; the dimension comes from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct ExponentsConfig {
    pub r: f64,
    pub gamma: f64,
    pub r1: f64,
    pub gamma1: f64,
}

impl Default for ExponentsConfig {
    fn default() -> Self {
        Self {
            r: 4.0,
            gamma: 4.0,
            r1: 8.0,
            gamma1: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub hamiltonian: HamiltonianSpec,
    #[serde(default)]
    pub exponents: ExponentsConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub certify: CertifyOptions,
}

impl RunConfig {
    pub fn new(grid: GridConfig, hamiltonian: HamiltonianSpec) -> Self {
        Self {
            grid,
            hamiltonian,
            exponents: ExponentsConfig::default(),
            solver: SolverOptions::default(),
            certify: CertifyOptions::default(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.torus()?;
        self.hamiltonian.validate()?;
        self.hamiltonian.check_grid(grid)?;
        self.profile()?;
        self.solver.validate()?;
        self.certify.validate()
    }

    pub fn torus(&self) -> Result<TorusGrid> {
        make_grid(self.grid.d, self.grid.n)
    }

    pub fn profile(&self) -> Result<ExponentProfile> {
        let e = &self.exponents;
        ExponentProfile::new(e.r, e.gamma, e.r1, e.gamma1, self.grid.d)
    }

    pub fn run_certify(&self) -> Result<CertifyRun> {
        certify(&self.hamiltonian, self.torus()?, &self.profile()?, &self.solver, &self.certify)
    }
}
