//! Fibered Vlasov equation in one state dimension: finite-volume transport
//! per label fiber, the continuum-limit label ODE and the coupled system of
//! a finite hypergraph.

use std::io::{BufRead, BufReader, Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{parse_err, Error, Result};
use crate::hypergraph::Hypergraph;
use crate::hypergraphon::{step_from_hypergraph, URHypergraphon};
use crate::kernels::{Factor, InteractionKernel, KernelFamily};
use crate::metrics::{DiscreteMeasure, FiberedAtoms};

/// Uniform cells on `[x_min, x_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub x_min: f64,
    pub x_max: f64,
}

impl Grid {
    pub fn new(nx: usize, x_min: f64, x_max: f64) -> Result<Self> {
        if nx == 0 || !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Parameter(format!("invalid grid nx={nx} on [{x_min}, {x_max}]")));
        }
        Ok(Self { nx, x_min, x_max })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.x_min + (k as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.nx).map(|k| self.center(k)).collect()
    }

    /// Left edge of cell `k`; `face(nx)` is `x_max`.
    pub fn face(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.dx()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            nx: 64,
            x_min: -0.1,
            x_max: 1.1,
        }
    }
}

/// Cell densities `ρ[fiber][cell]` of a fibered probability measure.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberedDensity {
    grid: Grid,
    nxi: usize,
    values: Vec<f64>,
}

impl FiberedDensity {
    /// Checks non-negativity and unit mass per fiber.
    pub fn new(grid: Grid, nxi: usize, values: Vec<f64>) -> Result<Self> {
        if nxi == 0 || values.len() != nxi * grid.nx {
            return Err(Error::Parameter(format!(
                "expected {} values for {nxi} fibers of {} cells, got {}",
                nxi * grid.nx,
                grid.nx,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!(
                "density value {v} is negative or not finite"
            )));
        }
        let d = Self { grid, nxi, values };
        for i in 0..nxi {
            let m = d.mass(i);
            if (m - 1.0).abs() > 1e-10 {
                return Err(Error::Validation(format!("fiber {i} has mass {m}")));
            }
        }
        Ok(d)
    }

    /// `ρ(x, ξ) = f(x, ξ)` at cell centers and fiber midpoints, normalized
    /// per fiber.
    pub fn from_fn(grid: Grid, nxi: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let dx = grid.dx();
        let mut values = Vec::with_capacity(nxi * grid.nx);
        for i in 0..nxi {
            let xi = (i as f64 + 0.5) / nxi as f64;
            let row: Vec<f64> = grid.centers().iter().map(|&x| f(x, xi)).collect();
            let m: f64 = row.iter().sum::<f64>() * dx;
            if !(m > 0.0) {
                return Err(Error::Parameter(format!("fiber {i} has no mass")));
            }
            values.extend(row.iter().map(|v| v / m));
        }
        Self::new(grid, nxi, values)
    }

    /// Uniform law on `[lo, hi]` in every fiber, using exact cell overlaps.
    pub fn uniform(grid: Grid, nxi: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::uniform_by_fiber(grid, nxi, |_| (lo, hi))
    }

    /// Uniform law on an interval depending on the fiber label.
    pub fn uniform_by_fiber(grid: Grid, nxi: usize, interval: impl Fn(f64) -> (f64, f64)) -> Result<Self> {
        let dx = grid.dx();
        let mut values = Vec::with_capacity(nxi * grid.nx);
        for i in 0..nxi {
            let (lo, hi) = interval((i as f64 + 0.5) / nxi as f64);
            if !(hi > lo) || lo < grid.x_min - 1e-12 || hi > grid.x_max + 1e-12 {
                return Err(Error::Parameter(format!(
                    "interval [{lo}, {hi}] is empty or leaves the grid"
                )));
            }
            for k in 0..grid.nx {
                let overlap = (grid.face(k + 1).min(hi) - grid.face(k).max(lo)).max(0.0);
                values.push(overlap / (dx * (hi - lo)));
            }
        }
        Self::new(grid, nxi, values)
    }

    /// Unit mass split between the two cell centers around `m(ξ)`, which
    /// keeps the fiber mean exactly at `m(ξ)`.
    pub fn point_masses(grid: Grid, nxi: usize, m: impl Fn(f64) -> f64) -> Result<Self> {
        let dx = grid.dx();
        let mut values = vec![0.0; nxi * grid.nx];
        for i in 0..nxi {
            let x = m((i as f64 + 0.5) / nxi as f64);
            let s = (x - grid.center(0)) / dx;
            if !(s >= 0.0 && s <= (grid.nx - 1) as f64) {
                return Err(Error::Parameter(format!("point {x} outside the cell centers")));
            }
            let k = (s.floor() as usize).min(grid.nx.saturating_sub(2));
            let frac = s - k as f64;
            values[i * grid.nx + k] += (1.0 - frac) / dx;
            if grid.nx > 1 {
                values[i * grid.nx + k + 1] += frac / dx;
            }
        }
        Self::new(grid, nxi, values)
    }

    /// Stacks one-fiber densities.
    pub fn from_fibers(grid: Grid, fibers: &[Vec<f64>]) -> Result<Self> {
        Self::new(grid, fibers.len(), fibers.concat())
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn nxi(&self) -> usize {
        self.nxi
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fiber(&self, i: usize) -> &[f64] {
        &self.values[i * self.grid.nx..(i + 1) * self.grid.nx]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.fiber(i).iter().sum::<f64>() * self.grid.dx()
    }

    pub fn moment(&self, i: usize, k: i32) -> f64 {
        let dx = self.grid.dx();
        self.fiber(i)
            .iter()
            .enumerate()
            .map(|(c, &r)| r * dx * self.grid.center(c).powi(k))
            .sum()
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.moment(i, 1) / self.mass(i)
    }

    pub fn variance(&self, i: usize) -> f64 {
        let m = self.mean(i);
        let dx = self.grid.dx();
        self.fiber(i)
            .iter()
            .enumerate()
            .map(|(c, &r)| r * dx * (self.grid.center(c) - m).powi(2))
            .sum::<f64>()
            / self.mass(i)
    }

    /// Fiber index containing label `ξ`.
    pub fn fiber_index(&self, xi: f64) -> usize {
        crate::hypergraphon::cell_of(xi, self.nxi)
    }

    /// Atoms at cell centers with masses `ρ Δx`.
    pub fn to_atoms(&self) -> FiberedAtoms {
        let dx = self.grid.dx();
        FiberedAtoms {
            fibers: (0..self.nxi)
                .map(|i| {
                    let atoms: Vec<(f64, f64)> = self
                        .fiber(i)
                        .iter()
                        .enumerate()
                        .filter(|(_, &r)| r > 0.0)
                        .map(|(c, &r)| (self.grid.center(c), r * dx))
                        .collect();
                    DiscreteMeasure::new(atoms).expect("densities are non-negative and finite")
                })
                .collect(),
        }
    }

    /// State marginal as cell densities.
    pub fn marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.nx];
        for i in 0..self.nxi {
            for (o, r) in out.iter_mut().zip(self.fiber(i)) {
                *o += r / self.nxi as f64;
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "density v1 nx={} nxi={} xmin={:e} xmax={:e}",
            self.grid.nx, self.nxi, self.grid.x_min, self.grid.x_max
        )?;
        for i in 0..self.nxi {
            let row: Vec<String> = self.fiber(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty density file"))?;
        let header = header?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("density") || fields.next() != Some("v1") {
            return Err(parse_err(1, "expected header 'density v1'"));
        }
        let (mut nx, mut nxi, mut xmin, mut xmax) = (None, None, None, None);
        for f in fields {
            let (key, value) = f
                .split_once('=')
                .ok_or_else(|| parse_err(1, format!("bad field '{f}'")))?;
            let bad = || parse_err(1, format!("bad value in '{f}'"));
            match key {
                "nx" => nx = Some(value.parse::<usize>().map_err(|_| bad())?),
                "nxi" => nxi = Some(value.parse::<usize>().map_err(|_| bad())?),
                "xmin" => xmin = Some(value.parse::<f64>().map_err(|_| bad())?),
                "xmax" => xmax = Some(value.parse::<f64>().map_err(|_| bad())?),
                _ => return Err(parse_err(1, format!("unknown field '{key}'"))),
            }
        }
        let (Some(nx), Some(nxi), Some(xmin), Some(xmax)) = (nx, nxi, xmin, xmax) else {
            return Err(parse_err(1, "header needs nx, nxi, xmin and xmax"));
        };
        let grid = Grid::new(nx, xmin, xmax)?;
        let mut values = Vec::with_capacity(nx * nxi);
        let mut rows = 0;
        for (idx, line) in lines {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let row: Vec<f64> = trimmed
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| parse_err(idx + 1, format!("bad number '{t}'")))
                })
                .collect::<Result<_>>()?;
            if row.len() != nx {
                return Err(parse_err(idx + 1, format!("expected {nx} values, got {}", row.len())));
            }
            values.extend(row);
            rows += 1;
        }
        if rows != nxi {
            return Err(parse_err(0, format!("expected {nxi} fiber rows, got {rows}")));
        }
        Self::new(grid, nxi, values)
    }
}

/// States `X(ξ)` on the midpoints of a uniform label grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelField {
    pub values: Vec<f64>,
    pub time: f64,
}

impl LabelField {
    pub fn new(values: Vec<f64>, time: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("label field needs at least one fiber".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(*v));
        }
        Ok(Self { values, time })
    }

    /// `X(ξ) = f(ξ)` at `n` label midpoints.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new((0..n).map(|i| f((i as f64 + 0.5) / n as f64)).collect(), 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fiber laws as weights on a shared support: `weights[η·ns + s]` is the
/// mass of fiber `η` at `support[s]`.
#[derive(Clone, Debug)]
struct Mixture {
    support: Vec<f64>,
    weights: Vec<f64>,
    nxi: usize,
}

impl Mixture {
    fn from_density(rho: &FiberedDensity) -> Self {
        let dx = rho.grid.dx();
        Self {
            support: rho.grid.centers(),
            weights: rho.values.iter().map(|r| r * dx).collect(),
            nxi: rho.nxi,
        }
    }

    fn from_points(x: &[f64]) -> Self {
        let n = x.len();
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        Self {
            support: x.to_vec(),
            weights,
            nxi: n,
        }
    }

    fn ns(&self) -> usize {
        self.support.len()
    }

    /// `∫ b dμ^η` for every fiber.
    fn moments(&self, b: Factor) -> Vec<Complex64> {
        let vals: Vec<Complex64> = self.support.iter().map(|&x| b.eval(x)).collect();
        self.weights
            .chunks_exact(self.ns())
            .map(|row| {
                row.iter()
                    .zip(&vals)
                    .filter(|(w, _)| **w != 0.0)
                    .map(|(w, v)| v * *w)
                    .sum()
            })
            .collect()
    }
}

/// Controls the force assembly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceOptions {
    /// Ignore separable decompositions and use nested quadrature.
    pub generic: bool,
    /// Largest admissible generic-path work estimate for orders `ℓ ≥ 3`.
    pub budget: usize,
}

impl Default for ForceOptions {
    fn default() -> Self {
        Self {
            generic: false,
            budget: 1_000_000_000,
        }
    }
}

/// Precomputed label quadrature for one hypergraphon, kernel family and
/// label grid.
#[derive(Clone, Debug)]
pub struct FieldPlan {
    nxi: usize,
    levels: Vec<(InteractionKernel, Vec<f64>, bool)>,
    options: ForceOptions,
}

impl FieldPlan {
    /// Samples every needed level on the midpoint label grid and checks the
    /// separable decompositions on 100 random tuples.
    pub fn new(w: &URHypergraphon, k: &KernelFamily, nxi: usize, options: ForceOptions) -> Result<Self> {
        if nxi == 0 {
            return Err(Error::Parameter("label grid needs at least one fiber".into()));
        }
        let mut levels = Vec::new();
        for kernel in k.iter() {
            let l = kernel.order;
            if !w.is_active(l) {
                return Err(Error::Config(format!(
                    "kernel order {l} is not an active order of the hypergraphon"
                )));
            }
            let fast = !options.generic && kernel.separable.is_some();
            if fast {
                kernel.verify_separable(100, 0x5eed ^ l as u64)?;
            }
            levels.push((kernel.clone(), w.level_grid(l, nxi), fast));
        }
        Ok(Self { nxi, levels, options })
    }

    pub fn nxi(&self) -> usize {
        self.nxi
    }

    fn field(&self, mix: &Mixture) -> Result<ForceField> {
        assert_eq!(mix.nxi, self.nxi);
        let n = self.nxi;
        let mut orders = Vec::with_capacity(self.levels.len());
        for (kernel, wgrid, fast) in &self.levels {
            let l = kernel.order;
            let scale = 1.0 / (n as f64).powi(l as i32);
            if *fast {
                let terms = kernel.separable.as_ref().expect("fast path needs terms");
                let mut out = Vec::with_capacity(terms.len());
                for t in terms {
                    let moments: Vec<Vec<Complex64>> = t.heads.iter().map(|&b| mix.moments(b)).collect();
                    let g: Vec<Complex64> = wgrid
                        .par_chunks(n.pow(l as u32))
                        .map(|row| contract_complex(row, n, &moments) * scale)
                        .collect();
                    out.push((t.coef, t.tail, g));
                }
                orders.push(OrderField::Separable(out));
            } else {
                let ns = mix.ns();
                let work = n
                    .saturating_mul(ns.saturating_pow(l as u32 + 1))
                    .saturating_add(n.saturating_pow(l as u32 + 1).saturating_mul(ns));
                if l >= 3 && work > self.options.budget {
                    return Err(Error::Resource(format!(
                        "generic quadrature for order {l} needs about {work} operations (budget {})",
                        self.options.budget
                    )));
                }
                let joint: Vec<Vec<f64>> = wgrid
                    .par_chunks(n.pow(l as u32))
                    .map(|row| {
                        let mut t: Vec<f64> = row.iter().map(|v| v * scale).collect();
                        // Replace label axes by support axes, last axis first.
                        for axis in (0..l).rev() {
                            t = replace_axis(&t, n, ns, l, axis, &mix.weights);
                        }
                        t
                    })
                    .collect();
                orders.push(OrderField::Generic {
                    kernel: kernel.clone(),
                    support: mix.support.clone(),
                    joint,
                });
            }
        }
        Ok(ForceField { nxi: n, orders })
    }

    /// Force field of a fibered density.
    pub fn field_of_density(&self, rho: &FiberedDensity) -> Result<ForceField> {
        if rho.nxi != self.nxi {
            return Err(Error::Config(format!(
                "density has {} fibers, plan has {}",
                rho.nxi, self.nxi
            )));
        }
        self.field(&Mixture::from_density(rho))
    }

    /// Force field of Dirac fibers located at `x`.
    pub fn field_of_points(&self, x: &[f64]) -> Result<ForceField> {
        if x.len() != self.nxi {
            return Err(Error::Config(format!("{} points for {} fibers", x.len(), self.nxi)));
        }
        self.field(&Mixture::from_points(x))
    }
}

/// `Σ_{η⃗} row[η⃗] Π_k m_k(η_k)` over a row-major `n^ℓ` block.
fn contract_complex(row: &[f64], n: usize, moments: &[Vec<Complex64>]) -> Complex64 {
    let l = moments.len();
    if l == 1 {
        return row
            .iter()
            .zip(&moments[0])
            .filter(|(w, _)| **w != 0.0)
            .map(|(w, m)| m * *w)
            .sum();
    }
    let last = &moments[l - 1];
    let reduced: Vec<Complex64> = row
        .chunks_exact(n)
        .map(|c| {
            c.iter()
                .zip(last)
                .filter(|(w, _)| **w != 0.0)
                .map(|(w, m)| m * *w)
                .sum()
        })
        .collect();
    contract_complex_c(&reduced, n, &moments[..l - 1])
}

fn contract_complex_c(row: &[Complex64], n: usize, moments: &[Vec<Complex64>]) -> Complex64 {
    let l = moments.len();
    let last = &moments[l - 1];
    if l == 1 {
        return row.iter().zip(last).map(|(a, b)| a * b).sum();
    }
    let reduced: Vec<Complex64> = row
        .chunks_exact(n)
        .map(|c| c.iter().zip(last).map(|(a, b)| a * b).sum())
        .collect();
    contract_complex_c(&reduced, n, &moments[..l - 1])
}

/// Tensor with axes `0..axis` of size `n` (labels) and `axis+1..l` of size
/// `ns`; axis `axis` of size `n` is replaced by a support axis of size `ns`.
fn replace_axis(t: &[f64], n: usize, ns: usize, l: usize, axis: usize, weights: &[f64]) -> Vec<f64> {
    let pre = n.pow(axis as u32);
    let post = ns.pow((l - axis - 1) as u32);
    let mut out = vec![0.0; pre * ns * post];
    for a in 0..pre {
        for eta in 0..n {
            let src = &t[(a * n + eta) * post..(a * n + eta + 1) * post];
            if src.iter().all(|v| *v == 0.0) {
                continue;
            }
            let wrow = &weights[eta * ns..(eta + 1) * ns];
            for (s, &m) in wrow.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let dst = &mut out[(a * ns + s) * post..(a * ns + s + 1) * post];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += m * v;
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
enum OrderField {
    Separable(Vec<(Complex64, Factor, Vec<Complex64>)>),
    Generic {
        kernel: InteractionKernel,
        support: Vec<f64>,
        joint: Vec<Vec<f64>>,
    },
}

/// Mean-field force `F(x, ξ)` frozen at one time, evaluable at any state.
#[derive(Clone, Debug)]
pub struct ForceField {
    nxi: usize,
    orders: Vec<OrderField>,
}

impl ForceField {
    pub fn nxi(&self) -> usize {
        self.nxi
    }

    /// `F(x, ξ_fiber)`.
    pub fn eval(&self, x: f64, fiber: usize) -> f64 {
        let mut total = 0.0;
        for o in &self.orders {
            match o {
                OrderField::Separable(terms) => {
                    for (coef, tail, g) in terms {
                        total += (coef * tail.eval(x) * g[fiber]).re;
                    }
                }
                OrderField::Generic { kernel, support, joint } => {
                    let l = kernel.order;
                    let ns = support.len();
                    let mut heads = vec![0.0; l];
                    for (flat, &p) in joint[fiber].iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let mut rem = flat;
                        for k in (0..l).rev() {
                            heads[k] = support[rem % ns];
                            rem /= ns;
                        }
                        total += p * kernel.eval(x, &heads);
                    }
                }
            }
        }
        total
    }

    /// Values at every `(fiber, x)` pair, fiber-major.
    pub fn on_grid(&self, xs: &[f64]) -> Vec<f64> {
        (0..self.nxi)
            .into_par_iter()
            .flat_map_iter(|i| xs.iter().map(move |&x| self.eval(x, i)).collect::<Vec<_>>())
            .collect()
    }
}

/// `F[fiber][cell]` at cell centers.
pub fn mean_field_force(w: &URHypergraphon, rho: &FiberedDensity, k: &KernelFamily) -> Result<Vec<f64>> {
    mean_field_force_with(w, rho, k, ForceOptions::default())
}

pub fn mean_field_force_with(
    w: &URHypergraphon,
    rho: &FiberedDensity,
    k: &KernelFamily,
    options: ForceOptions,
) -> Result<Vec<f64>> {
    let plan = FieldPlan::new(w, k, rho.nxi, options)?;
    Ok(plan.field_of_density(rho)?.on_grid(&rho.grid.centers()))
}

/// Largest per-cell outflow speed `max_k (u⁺_{k+½} + |u⁻_{k−½}|)` and
/// `max |F|` over cell centers.
fn outflow_speed(force: &[f64], nx: usize) -> (f64, f64) {
    let mut worst = 0.0f64;
    let mut fmax = 0.0f64;
    for row in force.chunks_exact(nx) {
        for k in 0..nx {
            fmax = fmax.max(row[k].abs());
            let right = if k + 1 < nx {
                (0.5 * (row[k] + row[k + 1])).max(0.0)
            } else {
                0.0
            };
            let left = if k > 0 {
                (-0.5 * (row[k - 1] + row[k])).max(0.0)
            } else {
                0.0
            };
            worst = worst.max(right + left);
        }
    }
    (worst, fmax)
}

/// Largest stable step for a cell-centered force under CFL number `cfl`.
pub fn cfl_dt(force: &[f64], grid: Grid, cfl: f64) -> f64 {
    let (speed, _) = outflow_speed(force, grid.nx);
    if speed == 0.0 {
        f64::INFINITY
    } else {
        cfl * grid.dx() / speed
    }
}

/// One forward-Euler upwind finite-volume step per fiber with zero-flux
/// boundaries; face velocities average the neighbouring cell forces.
///
/// The CFL condition is enforced on the per-cell outflow
/// `dt·max_k(u⁺_{k+½} + |u⁻_{k−½}|) ≤ cfl·Δx`, which implies
/// `dt·max|F| ≤ cfl·Δx` and keeps densities non-negative.
pub fn step_transport(rho: &FiberedDensity, force: &[f64], dt: f64, cfl: f64) -> Result<FiberedDensity> {
    let nx = rho.grid.nx;
    if force.len() != rho.values.len() {
        return Err(Error::Config("force array does not match the density".into()));
    }
    if !(dt >= 0.0) {
        return Err(Error::Parameter(format!("dt = {dt} must be non-negative")));
    }
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::Parameter(format!("CFL number {cfl} must lie in (0, 1]")));
    }
    let dx = rho.grid.dx();
    let (speed, fmax) = outflow_speed(force, nx);
    if dt * speed > cfl * dx {
        return Err(Error::Cfl {
            max_force: fmax,
            required_dt: cfl * dx / speed,
            dt,
        });
    }
    let lambda = dt / dx;
    let mut values = vec![0.0; rho.values.len()];
    values
        .par_chunks_mut(nx)
        .zip(rho.values.par_chunks(nx))
        .zip(force.par_chunks(nx))
        .for_each(|((out, r), f)| {
            let mut flux_left = 0.0;
            for k in 0..nx {
                let flux_right = if k + 1 < nx {
                    let u = 0.5 * (f[k] + f[k + 1]);
                    u.max(0.0) * r[k] + u.min(0.0) * r[k + 1]
                } else {
                    0.0
                };
                out[k] = (r[k] - lambda * (flux_right - flux_left)).max(0.0);
                flux_left = flux_right;
            }
        });
    Ok(FiberedDensity {
        grid: rho.grid,
        nxi: rho.nxi,
        values,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensitySnapshot {
    pub time: f64,
    pub density: FiberedDensity,
}

/// Time stepping for the transport solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    /// Fixed step, or the largest step when `adaptive`.
    pub dt: f64,
    /// Shrink steps to satisfy the CFL condition instead of failing.
    pub adaptive: bool,
    pub cfl: f64,
    pub force: ForceOptions,
}

impl SolveOptions {
    pub fn fixed(dt: f64) -> Self {
        Self {
            dt,
            adaptive: false,
            cfl: 0.9,
            force: ForceOptions::default(),
        }
    }

    pub fn adaptive(max_dt: f64) -> Self {
        Self {
            adaptive: true,
            ..Self::fixed(max_dt)
        }
    }
}

/// Forward loop recomputing the force every step; records the density at
/// each time in `record` (sorted, non-negative, steps land exactly on them).
pub fn solve(
    w: &URHypergraphon,
    k: &KernelFamily,
    rho0: &FiberedDensity,
    record: &[f64],
    opts: SolveOptions,
) -> Result<Vec<DensitySnapshot>> {
    let plan = FieldPlan::new(w, k, rho0.nxi, opts.force)?;
    solve_with_plan(&plan, rho0, record, opts)
}

pub fn solve_with_plan(
    plan: &FieldPlan,
    rho0: &FiberedDensity,
    record: &[f64],
    opts: SolveOptions,
) -> Result<Vec<DensitySnapshot>> {
    if !(opts.dt > 0.0) {
        return Err(Error::Parameter(format!("dt = {} must be positive", opts.dt)));
    }
    let centers = rho0.grid.centers();
    let mut rho = rho0.clone();
    let mut t = 0.0f64;
    let mut out = Vec::with_capacity(record.len());
    for &target in record {
        if target < t - 1e-12 {
            return Err(Error::Parameter(format!(
                "record times must be sorted ({target} after {t})"
            )));
        }
        while target - t > 1e-12 * target.max(1.0) {
            let force = plan.field_of_density(&rho)?.on_grid(&centers);
            let mut h = opts.dt.min(target - t);
            if opts.adaptive {
                h = h.min(cfl_dt(&force, rho.grid, opts.cfl));
                // Avoid a sliver step just before the target.
                if target - t - h < 1e-9 * h {
                    h = target - t;
                }
            } else {
                let remaining = target - t;
                let steps = (remaining / opts.dt - 1e-9).ceil().max(1.0);
                h = remaining / steps;
                h = h.min(opts.dt);
            }
            rho = step_transport(&rho, &force, h, opts.cfl)?;
            t = if (target - (t + h)).abs() <= 1e-12 * target.max(1.0) {
                target
            } else {
                t + h
            };
            if rho.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(t));
            }
        }
        t = target;
        out.push(DensitySnapshot {
            time: target,
            density: rho.clone(),
        });
    }
    Ok(out)
}

/// RK4 on the label-grid ODE `∂_t X(ξ) = Σ_ℓ ∫ w_ℓ(ξ, ξ⃗) K_ℓ(X(ξ), X(ξ⃗)) dξ⃗`.
pub fn solve_continuum(
    w: &URHypergraphon,
    k: &KernelFamily,
    x0: &LabelField,
    record: &[f64],
    dt: f64,
) -> Result<Vec<LabelField>> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt = {dt} must be positive")));
    }
    let plan = FieldPlan::new(w, k, x0.len(), ForceOptions::default())?;
    let rhs = |x: &[f64]| -> Result<Vec<f64>> {
        let field = plan.field_of_points(x)?;
        Ok((0..x.len()).into_par_iter().map(|i| field.eval(x[i], i)).collect())
    };
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u + s * v).collect() };
    let mut x = x0.values.clone();
    let mut t = x0.time;
    let mut out = Vec::with_capacity(record.len());
    for &target in record {
        if target < t - 1e-12 {
            return Err(Error::Parameter(format!(
                "record times must be sorted ({target} after {t})"
            )));
        }
        let span = target - t;
        let steps = (span / dt - 1e-9).ceil().max(0.0) as u64;
        for s in 0..steps {
            let t_next = if s + 1 == steps { target } else { t + dt };
            let h = t_next - t;
            let k1 = rhs(&x)?;
            let k2 = rhs(&axpy(&x, 0.5 * h, &k1))?;
            let k3 = rhs(&axpy(&x, 0.5 * h, &k2))?;
            let k4 = rhs(&axpy(&x, h, &k3))?;
            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t = t_next;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(t));
            }
        }
        t = target;
        out.push(LabelField {
            values: x.clone(),
            time: target,
        });
    }
    Ok(out)
}

/// Coupled per-agent system of a finite hypergraph: one fiber per agent
/// with the step hypergraphon of `h`.
pub fn solve_coupled_pde(
    h: &Hypergraph,
    k: &KernelFamily,
    grid: Grid,
    initial_laws: &[Vec<f64>],
    record: &[f64],
    opts: SolveOptions,
) -> Result<Vec<DensitySnapshot>> {
    if initial_laws.len() != h.num_nodes() {
        return Err(Error::Config(format!(
            "{} initial laws for {} agents",
            initial_laws.len(),
            h.num_nodes()
        )));
    }
    let rho0 = FiberedDensity::from_fibers(grid, initial_laws)?;
    let mut w = step_from_hypergraph(h);
    // Kernel orders without stored entries still need a (zero) level.
    for kern in k.iter() {
        w.levels.entry(kern.order).or_insert_with(|| {
            crate::hypergraphon::StepLevel::dense(
                kern.order,
                h.num_nodes(),
                vec![0.0; h.num_nodes().pow(kern.order as u32 + 1)],
            )
        });
    }
    solve(&URHypergraphon::Step(w), k, &rho0, record, opts)
}

/// Constants of the limit equation computed on the midpoint label grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VlasovConstants {
    /// `sup_ξ Σ_ℓ B_ℓ ‖w_ℓ(ξ,·)‖_{L¹}`.
    pub b_f: f64,
    /// `sup_ξ Σ_ℓ L_ℓ ‖w_ℓ(ξ,·)‖_{L¹}`.
    pub l_f: f64,
    /// `‖Σ_ℓ BL_ℓ Σ_k ‖w_ℓ(ξ,·)‖_{L^q_{ξ_k} L¹_{rest}}‖_{L^p_ξ}`.
    pub c_p: f64,
}

pub fn vlasov_constants(w: &URHypergraphon, k: &KernelFamily, nxi: usize, p: f64) -> Result<VlasovConstants> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p = {p} must lie in [1, ∞)")));
    }
    let q = if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) };
    let n = nxi;
    let mut row_b = vec![0.0; n];
    let mut row_l = vec![0.0; n];
    let mut row_c = vec![0.0; n];
    for kernel in k.iter() {
        let l = kernel.order;
        if !w.is_active(l) {
            continue;
        }
        let grid = w.level_grid(l, n);
        let block = n.pow(l as u32);
        let scale = 1.0 / block as f64;
        let rest = 1.0 / n.pow(l as u32 - 1) as f64;
        let per: Vec<(f64, f64)> = grid
            .par_chunks(block)
            .map(|row| {
                let l1 = row.iter().sum::<f64>() * scale;
                let mut mixed = 0.0;
                for axis in 0..l {
                    let stride = n.pow((l - 1 - axis) as u32);
                    let mut g = vec![0.0; n];
                    for (flat, &v) in row.iter().enumerate() {
                        g[(flat / stride) % n] += v;
                    }
                    let g: Vec<f64> = g.into_iter().map(|v| v * rest).collect();
                    mixed += if q.is_infinite() {
                        g.iter().copied().fold(0.0, f64::max)
                    } else {
                        (g.iter().map(|v| v.powf(q)).sum::<f64>() / n as f64).powf(1.0 / q)
                    };
                }
                (l1, mixed)
            })
            .collect();
        for (a, (l1, mixed)) in per.into_iter().enumerate() {
            row_b[a] += kernel.bound * l1;
            row_l[a] += kernel.lipschitz * l1;
            row_c[a] += kernel.bl() * mixed;
        }
    }
    Ok(VlasovConstants {
        b_f: row_b.iter().copied().fold(0.0, f64::max),
        l_f: row_l.iter().copied().fold(0.0, f64::max),
        c_p: (row_c.iter().map(|v| v.powf(p)).sum::<f64>() / n as f64).powf(1.0 / p),
    })
}

/// Integrates `dx/dt = F(x, ξ_fiber)` in a frozen field with RK4.
pub fn characteristic(field: &ForceField, fiber: usize, x0: f64, t: f64, steps: usize) -> f64 {
    let h = t / steps.max(1) as f64;
    let f = |x: f64| field.eval(x, fiber);
    let mut x = x0;
    for _ in 0..steps.max(1) {
        let k1 = f(x);
        let k2 = f(x + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h * k2);
        let k4 = f(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}
