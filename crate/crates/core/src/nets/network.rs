use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{ConvLayer, InversionSettings, ProximalBlock, ResidualBlock};
use crate::autodiff::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::physics::{cg_inverse, Measurement, DEFAULT_CG_ITERS};
use crate::tensor::ComplexTensor;

/// Standard deviation of the Gaussian kernel initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// Gradient-step data consistency, two residual blocks of two convs.
    Pgd,
    /// CG data consistency, one residual block of five convs.
    Modl,
}

impl NetKind {
    /// (residual blocks, convs per block) of each proximal operator.
    pub fn layout(self) -> (usize, usize) {
        match self {
            NetKind::Pgd => (2, 2),
            NetKind::Modl => (1, 5),
        }
    }
}

fn default_kernel() -> usize {
    3
}
fn default_cg_iters() -> usize {
    DEFAULT_CG_ITERS
}
fn default_bound() -> f64 {
    0.9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetKind,
    /// Unrolled iterations `N`.
    pub iterations: usize,
    /// Greedy modules `M`; must divide `N`.
    pub modules: usize,
    /// Hidden channels `N_f`.
    pub features: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default)]
    pub invertible: bool,
    #[serde(default = "default_cg_iters")]
    pub cg_iters: usize,
    /// Lipschitz bound imposed on each residual branch when `invertible`.
    #[serde(default = "default_bound")]
    pub lipschitz_bound: f64,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(kind: NetKind, iterations: usize, modules: usize, features: usize, seed: u64) -> Self {
        Self {
            kind,
            iterations,
            modules,
            features,
            kernel: default_kernel(),
            invertible: false,
            cg_iters: default_cg_iters(),
            lipschitz_bound: default_bound(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.modules == 0 || self.features == 0 {
            return Err(Error::config("N, M and N_f must all be positive"));
        }
        check_divides(self.iterations, self.modules)?;
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!("kernel extent must be odd, got {}", self.kernel)));
        }
        if self.kind == NetKind::Modl && self.cg_iters == 0 {
            return Err(Error::config("MoDL needs at least one CG iteration"));
        }
        if self.invertible && !(self.lipschitz_bound > 0.0 && self.lipschitz_bound < 1.0) {
            return Err(Error::config(format!(
                "invertible blocks need a Lipschitz bound in (0, 1), got {}",
                self.lipschitz_bound
            )));
        }
        Ok(())
    }

    pub fn iterations_per_module(&self) -> usize {
        self.iterations / self.modules
    }

    /// Trainable scalars per unrolled iteration.
    pub fn params_per_iteration(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let conv = |cin: usize, cout: usize| cout * cin * k2 + cout;
        let f = self.features;
        let (blocks, convs) = self.kind.layout();
        let mut per_block = conv(2, f) + conv(f, 2);
        if convs > 2 {
            per_block += (convs - 2) * conv(f, f);
        }
        blocks * per_block
    }

    pub fn param_count(&self) -> usize {
        self.iterations * self.params_per_iteration()
    }
}

fn check_divides(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n || n % m != 0 {
        return Err(Error::config(format!(
            "M = {m} must divide N = {n} (each module owns N/M iterations)"
        )));
    }
    Ok(())
}

fn build_block(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> ProximalBlock {
    let (blocks, convs) = spec.kind.layout();
    let f = spec.features;
    let k = spec.kernel;
    let blocks = (0..blocks)
        .map(|_| {
            let mut layers = Vec::with_capacity(convs);
            for i in 0..convs {
                let cin = if i == 0 { 2 } else { f };
                let cout = if i + 1 == convs { 2 } else { f };
                layers.push(if i + 1 == convs {
                    ConvLayer::zeroed(cin, cout, k)
                } else {
                    ConvLayer::gaussian(cin, cout, k, INIT_STD, rng)
                });
            }
            ResidualBlock::new(layers).expect("consistent layout")
        })
        .collect();
    let mut block = ProximalBlock { blocks };
    if spec.invertible {
        block.enforce_lipschitz(spec.lipschitz_bound);
    }
    block
}

/// One unrolled iteration on a tape: data consistency then the proximal
/// block.
pub fn iteration_var(
    tape: &mut Tape<'_>,
    kind: NetKind,
    cg_iters: usize,
    block: &ProximalBlock,
    x: Var,
    meas: &Measurement,
) -> Result<Var> {
    let dc = match kind {
        NetKind::Pgd => {
            let y = tape.constant(meas.kspace.clone());
            meas.model.dc_step_var(tape, x, y)?
        }
        NetKind::Modl => tape.cg_solve(x, meas.model.clone(), &meas.aty, cg_iters)?,
    };
    block.forward_var(tape, dc)
}

/// Recover an iteration's input from its output: invert the proximal
/// block by fixed-point iteration, then undo the CG solve in closed form.
pub fn invert_iteration(
    kind: NetKind,
    block: &ProximalBlock,
    x_out: &ComplexTensor,
    meas: &Measurement,
    settings: InversionSettings,
) -> Result<ComplexTensor> {
    match kind {
        NetKind::Pgd => Err(Error::config(
            "the PGD data-consistency step with t = 1/2 is not invertible; use a MoDL network",
        )),
        NetKind::Modl => {
            let u = block.invert(x_out, settings)?;
            cg_inverse(&meas.model, &meas.aty, &u)
        }
    }
}

/// A contiguous run of unrolled iterations with its own parameters.
#[derive(Clone, Debug)]
pub struct NetModule {
    /// Zero-based module index.
    pub index: usize,
    /// Global index of the first iteration this module owns.
    pub first_iteration: usize,
    pub kind: NetKind,
    pub cg_iters: usize,
    pub blocks: Vec<ProximalBlock>,
}

impl NetModule {
    pub fn forward_var(&self, tape: &mut Tape<'_>, x: Var, meas: &Measurement) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = iteration_var(tape, self.kind, self.cg_iters, b, h, meas)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &ComplexTensor, meas: &Measurement) -> Result<ComplexTensor> {
        let mut tape = Tape::no_grad();
        let v = tape.constant(x.clone());
        let out = self.forward_var(&mut tape, v, meas)?;
        Ok(tape.complex(out)?.clone())
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.blocks.iter().flat_map(ProximalBlock::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.blocks.iter_mut().flat_map(ProximalBlock::params_mut).collect()
    }

    pub fn enforce_lipschitz(&mut self, bound: f64) {
        for b in &mut self.blocks {
            b.enforce_lipschitz(bound);
        }
    }
}

/// An unrolled PGD or MoDL network with per-iteration parameters.
#[derive(Clone, Debug)]
pub struct UnrolledNetwork {
    pub spec: NetworkSpec,
    pub iterations: Vec<ProximalBlock>,
}

impl UnrolledNetwork {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let iterations = (0..spec.iterations).map(|_| build_block(&spec, &mut rng)).collect();
        Ok(Self { spec, iterations })
    }

    pub fn param_count(&self) -> usize {
        self.iterations
            .iter()
            .flat_map(ProximalBlock::params)
            .map(Parameter::numel)
            .sum()
    }

    /// Partition into `m` modules of `N/m` consecutive iterations each.
    pub fn split_modules(&self, m: usize) -> Result<Vec<NetModule>> {
        check_divides(self.spec.iterations, m)?;
        let per = self.spec.iterations / m;
        Ok((0..m)
            .map(|i| NetModule {
                index: i,
                first_iteration: i * per,
                kind: self.spec.kind,
                cg_iters: self.spec.cg_iters,
                blocks: self.iterations[i * per..(i + 1) * per].to_vec(),
            })
            .collect())
    }

    /// Modules at the configured `M`.
    pub fn modules(&self) -> Vec<NetModule> {
        self.split_modules(self.spec.modules).expect("validated spec")
    }

    /// Reassemble from modules covering every iteration in order.
    pub fn from_modules(spec: NetworkSpec, modules: Vec<NetModule>) -> Result<Self> {
        spec.validate()?;
        let mut iterations = Vec::with_capacity(spec.iterations);
        for m in modules {
            if m.first_iteration != iterations.len() {
                return Err(Error::config("modules do not cover the iterations contiguously"));
            }
            iterations.extend(m.blocks);
        }
        if iterations.len() != spec.iterations {
            return Err(Error::config(format!(
                "modules hold {} iterations, spec wants {}",
                iterations.len(),
                spec.iterations
            )));
        }
        Ok(Self { spec, iterations })
    }

    /// Module `m` (one-based) recorded on `tape`.
    pub fn forward_module(&self, tape: &mut Tape<'_>, m: usize, x: Var, meas: &Measurement) -> Result<Var> {
        if m == 0 || m > self.spec.modules {
            return Err(Error::config(format!(
                "module index {m} outside 1..={}",
                self.spec.modules
            )));
        }
        let per = self.spec.iterations_per_module();
        let mut h = x;
        for b in &self.iterations[(m - 1) * per..m * per] {
            h = iteration_var(tape, self.spec.kind, self.spec.cg_iters, b, h, meas)?;
        }
        Ok(h)
    }

    /// First `n_inf` iterations from the zero-filled start `A^H y`.
    pub fn forward_full(&self, meas: &Measurement, n_inf: usize) -> Result<ComplexTensor> {
        if n_inf == 0 || n_inf > self.spec.iterations {
            return Err(Error::config(format!(
                "n_inf = {n_inf} outside 1..={}",
                self.spec.iterations
            )));
        }
        let mut tape = Tape::no_grad();
        let mut h = tape.constant(meas.aty.clone());
        for b in &self.iterations[..n_inf] {
            h = iteration_var(&mut tape, self.spec.kind, self.spec.cg_iters, b, h, meas)?;
        }
        Ok(tape.complex(h)?.clone())
    }

    /// Every `n_inf` from 1 to `N` in one pass.
    pub fn forward_stages(&self, meas: &Measurement) -> Result<Vec<ComplexTensor>> {
        let mut out = Vec::with_capacity(self.spec.iterations);
        let mut x = meas.aty.clone();
        for b in &self.iterations {
            let mut tape = Tape::no_grad();
            let h = tape.constant(x);
            let next = iteration_var(&mut tape, self.spec.kind, self.spec.cg_iters, b, h, meas)?;
            x = tape.complex(next)?.clone();
            out.push(x.clone());
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.iterations.iter().flat_map(ProximalBlock::params).collect()
    }
}
