//! Distances between measures, fibered measures and hypergraphon levels.

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypergraphon::{cell_average, flat_index, StepHypergraphon, URHypergraphon};

/// Finite positive combination of Dirac masses on the line.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteMeasure {
    /// Atoms `(position, mass)`; masses must be positive and finite.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, m) in &atoms {
            if !x.is_finite() || !(m > 0.0) || !m.is_finite() {
                return Err(Error::Parameter(format!("invalid atom ({x}, {m})")));
            }
        }
        Ok(Self { atoms })
    }

    pub fn dirac(x: f64) -> Self {
        Self { atoms: vec![(x, 1.0)] }
    }

    /// Uniform empirical measure of the given points.
    pub fn empirical(points: &[f64]) -> Self {
        let m = 1.0 / points.len() as f64;
        Self {
            atoms: points.iter().map(|&x| (x, m)).collect(),
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= 1e-12
    }

    pub fn moment(&self, k: i32) -> f64 {
        self.atoms.iter().map(|&(x, m)| m * x.powi(k)).sum()
    }
}

/// Bounded-Lipschitz distance
/// `sup { ∫ φ d(μ1 − μ2) : |φ| ≤ 1, Lip(φ) ≤ 1 }`.
///
/// Exact: the supremum is a linear program over the values of `φ` on the
/// sorted union support with box and neighbour constraints, solved by a
/// dynamic program over concave piecewise-linear value functions.
pub fn d_bl(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> Result<f64> {
    if mu1.is_empty() || mu2.is_empty() {
        return Err(Error::Parameter("d_BL of an empty measure".into()));
    }
    let mut pts: Vec<(f64, f64)> = mu1
        .atoms
        .iter()
        .copied()
        .chain(mu2.atoms.iter().map(|&(x, m)| (x, -m)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut xs: Vec<f64> = Vec::with_capacity(pts.len());
    let mut cs: Vec<f64> = Vec::with_capacity(pts.len());
    for (x, c) in pts {
        if xs.last() == Some(&x) {
            *cs.last_mut().unwrap() += c;
        } else {
            xs.push(x);
            cs.push(c);
        }
    }
    Ok(chain_lp(&xs, &cs).max(0.0))
}

/// `max Σ c_k φ_k` subject to `|φ_k| ≤ 1` and `|φ_{k+1} − φ_k| ≤ x_{k+1} − x_k`.
fn chain_lp(xs: &[f64], cs: &[f64]) -> f64 {
    let mut v: Vec<(f64, f64)> = vec![(-1.0, -cs[0]), (1.0, cs[0])];
    for k in 1..xs.len() {
        v = window_max(&v, xs[k] - xs[k - 1]);
        for p in v.iter_mut() {
            p.1 += cs[k] * p.0;
        }
    }
    v.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
}

/// `h(ψ) = max_{|φ−ψ| ≤ g, |φ| ≤ 1} f(φ)` for concave piecewise-linear `f`
/// given by breakpoints on `[−1, 1]`; the result is again on `[−1, 1]`.
fn window_max(f: &[(f64, f64)], g: f64) -> Vec<(f64, f64)> {
    let (jstar, _) = f.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (j, p)| if p.1 > acc.1 { (j, p.1) } else { acc },
    );
    let mut shifted: Vec<(f64, f64)> = Vec::with_capacity(f.len() + 1);
    shifted.extend(f[..=jstar].iter().map(|&(x, y)| (x - g, y)));
    shifted.extend(f[jstar..].iter().map(|&(x, y)| (x + g, y)));
    let at = |t: f64| -> f64 {
        let k = shifted.partition_point(|p| p.0 < t);
        if k == 0 {
            return shifted[0].1;
        }
        if k == shifted.len() {
            return shifted[k - 1].1;
        }
        let (x0, y0) = shifted[k - 1];
        let (x1, y1) = shifted[k];
        if x1 - x0 <= 0.0 {
            y1.max(y0)
        } else {
            y0 + (y1 - y0) * (t - x0) / (x1 - x0)
        }
    };
    let mut out = Vec::with_capacity(shifted.len() + 2);
    out.push((-1.0, at(-1.0)));
    for &(x, y) in &shifted {
        if x > -1.0 && x < 1.0 && x - out.last().unwrap().0 > 1e-15 {
            out.push((x, y));
        }
    }
    let right = at(1.0);
    if 1.0 - out.last().unwrap().0 > 1e-15 {
        out.push((1.0, right));
    } else {
        out.last_mut().unwrap().1 = right;
    }
    out
}

/// Probability measures `μ^ξ` on a uniform label grid: fiber `i` covers
/// `[i/n, (i+1)/n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberedAtoms {
    pub fibers: Vec<DiscreteMeasure>,
}

impl FiberedAtoms {
    pub fn new(fibers: Vec<DiscreteMeasure>) -> Result<Self> {
        if fibers.is_empty() {
            return Err(Error::Parameter("fibered measure needs at least one fiber".into()));
        }
        for (i, f) in fibers.iter().enumerate() {
            if !f.is_probability() {
                return Err(Error::Parameter(format!("fiber {i} has mass {}", f.total_mass())));
            }
        }
        Ok(Self { fibers })
    }

    pub fn len(&self) -> usize {
        self.fibers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fibers.is_empty()
    }

    /// Fiber containing label `ξ` (right-open cells, last closed at 1).
    pub fn fiber_at(&self, xi: f64) -> &DiscreteMeasure {
        &self.fibers[crate::hypergraphon::cell_of(xi, self.fibers.len())]
    }

    /// State marginal `∫ μ^ξ dξ`.
    pub fn marginal(&self) -> DiscreteMeasure {
        let w = 1.0 / self.fibers.len() as f64;
        DiscreteMeasure {
            atoms: self
                .fibers
                .iter()
                .flat_map(|f| f.atoms.iter().map(move |&(x, m)| (x, m * w)))
                .collect(),
        }
    }
}

/// `(∫_0^1 d_BL(μ^ξ, μ̄^ξ)^p dξ)^{1/p}`, exact for the piecewise-constant
/// label families by summing over the common refinement of both grids.
pub fn d_p_nu(mu: &FiberedAtoms, nu: &FiberedAtoms, p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p = {p} must lie in [1, ∞)")));
    }
    Ok(per_interval(mu, nu)?
        .into_iter()
        .map(|(len, d)| len * d.powf(p))
        .sum::<f64>()
        .powf(1.0 / p))
}

/// Per-fiber distances on the common refinement as `(length, d_BL)` pairs.
pub fn per_interval(mu: &FiberedAtoms, nu: &FiberedAtoms) -> Result<Vec<(f64, f64)>> {
    let (na, nb) = (mu.len(), nu.len());
    if na == 0 || nb == 0 {
        return Err(Error::Parameter("empty fibered measure".into()));
    }
    let mut pieces = Vec::with_capacity(na + nb);
    let (mut i, mut j) = (0usize, 0usize);
    let mut left = 0.0f64;
    while i < na && j < nb {
        // Integer cross-multiplication keeps breakpoints exact.
        let (ra, rb) = ((i + 1) * nb, (j + 1) * na);
        let right = (ra.min(rb)) as f64 / (na * nb) as f64;
        pieces.push((right - left, i, j));
        left = right;
        match ra.cmp(&rb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    pieces
        .into_par_iter()
        .map(|(len, i, j)| Ok((len, d_bl(&mu.fibers[i], &nu.fibers[j])?)))
        .collect()
}

/// How a cut norm was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutMode {
    Exact,
    Heuristic,
}

impl CutMode {
    pub fn label(self) -> &'static str {
        match self {
            CutMode::Exact => "exact",
            CutMode::Heuristic => "heuristic",
        }
    }
}

/// Size limits for exhaustive cut-norm enumeration.
pub fn exact_feasible(parts: usize, order: usize) -> bool {
    match order {
        1 => parts <= 20,
        2 => parts <= 8,
        _ => parts * order <= 16,
    }
}

fn check_level(values: &[f64], parts: usize, order: usize) -> Result<()> {
    if parts == 0 || order == 0 || values.len() != parts.pow(order as u32 + 1) {
        return Err(Error::Parameter(format!(
            "level of order {order} on {parts} parts needs {} values, got {}",
            parts.pow(order as u32 + 1),
            values.len()
        )));
    }
    Ok(())
}

/// Contracted row sums `r_i = Σ_{j⃗ ∈ S_1×…×S_ℓ} A_{i j⃗}` for 0/1 masks.
fn contract(values: &[f64], parts: usize, order: usize, masks: &[Vec<f64>]) -> Vec<f64> {
    let mut cur = values.to_vec();
    // Contract the last index repeatedly against the matching mask.
    for k in (0..order).rev() {
        let m = &masks[k];
        cur = cur
            .chunks_exact(parts)
            .map(|row| row.iter().zip(m).map(|(a, b)| a * b).sum())
            .collect();
    }
    cur
}

fn best_outer(r: &[f64]) -> f64 {
    let pos: f64 = r.iter().filter(|&&v| v > 0.0).sum();
    let neg: f64 = -r.iter().filter(|&&v| v < 0.0).sum::<f64>();
    pos.max(neg)
}

/// Exact `ℓ`-th order cut norm of a step level given as `parts^{ℓ+1}`
/// row-major cell values: enumerate `S_1, …, S_ℓ` and choose `S` optimally.
pub fn cut_norm_exact(values: &[f64], parts: usize, order: usize) -> Result<f64> {
    check_level(values, parts, order)?;
    if !exact_feasible(parts, order) {
        return Err(Error::Resource(format!(
            "exact cut norm for order {order} on {parts} parts is too large; use the heuristic"
        )));
    }
    let bits = parts * order;
    let norm = (parts as f64).powi(order as i32 + 1);
    let best = (0usize..1 << bits)
        .into_par_iter()
        .with_min_len(256)
        .map(|code| {
            let masks: Vec<Vec<f64>> = (0..order)
                .map(|k| (0..parts).map(|j| ((code >> (k * parts + j)) & 1) as f64).collect())
                .collect();
            best_outer(&contract(values, parts, order, &masks))
        })
        .reduce(|| 0.0, f64::max);
    Ok(best / norm)
}

/// Coordinate-ascent lower bound on the cut norm with random restarts.
pub fn cut_norm_heuristic(values: &[f64], parts: usize, order: usize, restarts: usize, seed: u64) -> Result<f64> {
    check_level(values, parts, order)?;
    let norm = (parts as f64).powi(order as i32 + 1);
    let best = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = crate::rng::seeded(seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut best = 0.0f64;
            for sign in [1.0, -1.0] {
                let mut sets: Vec<Vec<f64>> = (0..=order)
                    .map(|_| {
                        (0..parts)
                            .map(|_| if r == 0 || rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                            .collect()
                    })
                    .collect();
                let mut value = f64::NEG_INFINITY;
                for _sweep in 0..100 {
                    let before = value;
                    for k in 0..=order {
                        let g = axis_gradient(values, parts, order, &sets, k);
                        sets[k] = g.iter().map(|&v| if sign * v > 0.0 { 1.0 } else { 0.0 }).collect();
                        value = g.iter().map(|&v| (sign * v).max(0.0)).sum();
                    }
                    if value <= before + 1e-15 {
                        break;
                    }
                }
                best = best.max(value);
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(best / norm)
}

/// Sums of the level over all sets except axis `k`, as a function of the
/// index on axis `k`.
fn axis_gradient(values: &[f64], parts: usize, order: usize, sets: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut g = vec![0.0; parts];
    for (flat, &a) in values.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let mut rem = flat;
        let mut weight = a;
        let mut own = 0;
        for axis in (0..=order).rev() {
            let idx = rem % parts;
            rem /= parts;
            if axis == k {
                own = idx;
            } else {
                weight *= sets[axis][idx];
                if weight == 0.0 {
                    break;
                }
            }
        }
        if weight != 0.0 {
            g[own] += weight;
        }
    }
    g
}

/// Cut norm using exact enumeration when feasible, else the heuristic.
pub fn cut_norm(values: &[f64], parts: usize, order: usize, restarts: usize, seed: u64) -> Result<(f64, CutMode)> {
    if exact_feasible(parts, order) {
        Ok((cut_norm_exact(values, parts, order)?, CutMode::Exact))
    } else {
        Ok((
            cut_norm_heuristic(values, parts, order, restarts, seed)?,
            CutMode::Heuristic,
        ))
    }
}

/// `sup ‖T^A[ψ_1, …, ψ_ℓ]‖_{L¹}` over step inputs `ψ_k : [0,1] → [0,1]`.
///
/// The map is multilinear and convex in each input, so the supremum is
/// attained at `{0,1}`-valued inputs; the outer `L¹` norm is evaluated in
/// closed form. With this input class `d_□,ℓ ≤ ‖T‖ ≤ 2 d_□,ℓ`.
pub fn operator_norm_infty_to_1(values: &[f64], parts: usize, order: usize) -> Result<f64> {
    operator_norm(values, parts, order, [0.0, 1.0])
}

/// Same supremum over inputs `ψ_k : [0,1] → [−1,1]` (the unit ball of
/// `L^∞`), bounded by `2^{ℓ+1} d_□,ℓ`.
pub fn operator_norm_signed(values: &[f64], parts: usize, order: usize) -> Result<f64> {
    operator_norm(values, parts, order, [-1.0, 1.0])
}

fn operator_norm(values: &[f64], parts: usize, order: usize, levels: [f64; 2]) -> Result<f64> {
    check_level(values, parts, order)?;
    if !exact_feasible(parts, order) {
        return Err(Error::Resource(format!(
            "operator norm for order {order} on {parts} parts is too large"
        )));
    }
    let bits = parts * order;
    let norm = (parts as f64).powi(order as i32 + 1);
    let best = (0usize..1 << bits)
        .into_par_iter()
        .with_min_len(256)
        .map(|code| {
            let inputs: Vec<Vec<f64>> = (0..order)
                .map(|k| (0..parts).map(|j| levels[(code >> (k * parts + j)) & 1]).collect())
                .collect();
            contract(values, parts, order, &inputs)
                .iter()
                .map(|v| v.abs())
                .sum::<f64>()
        })
        .reduce(|| 0.0, f64::max);
    Ok(best / norm)
}

/// Positive summable weights `α_ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub enum Alpha {
    /// `α_ℓ = r^ℓ` with `0 < r < 1`.
    Geometric(f64),
    /// `α_1, α_2, …`; orders beyond the list get weight 0.
    Explicit(Vec<f64>),
}

impl Default for Alpha {
    fn default() -> Self {
        Alpha::Geometric(0.5)
    }
}

impl Alpha {
    pub fn weight(&self, order: usize) -> f64 {
        match self {
            Alpha::Geometric(r) => r.powi(order as i32),
            Alpha::Explicit(v) => v.get(order - 1).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutTerm {
    pub order: usize,
    pub alpha: f64,
    pub value: f64,
    pub mode: CutMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutDistance {
    pub total: f64,
    pub terms: Vec<CutTerm>,
}

/// Dense values of level `order` refined to `parts` cells per axis.
pub fn dense_level(w: &StepHypergraphon, order: usize, parts: usize) -> Vec<f64> {
    let len = parts.pow(order as u32 + 1);
    let Some(level) = w.levels.get(&order) else {
        return vec![0.0; len];
    };
    assert_eq!(parts % w.parts, 0, "target grid must refine the step grid");
    let src = level.to_values();
    if parts == w.parts {
        return src;
    }
    let ratio = parts / w.parts;
    (0..len)
        .map(|flat| {
            let mut rem = flat;
            let mut idx = vec![0; order + 1];
            for slot in idx.iter_mut().rev() {
                *slot = (rem % parts) / ratio;
                rem /= parts;
            }
            src[flat_index(&idx, w.parts)]
        })
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Midpoint samples of any hypergraphon on a `parts`-grid.
pub fn sample_step(w: &URHypergraphon, parts: usize) -> StepHypergraphon {
    w.active_orders()
        .into_iter()
        .fold(StepHypergraphon::new(parts), |s, l| {
            s.with_level(crate::hypergraphon::StepLevel::dense(l, parts, w.level_grid(l, parts)))
        })
}

/// Labeled cut distance `Σ_ℓ α_ℓ d_□,ℓ(w_ℓ, w̄_ℓ)` between step
/// hypergraphons, refined to a common grid.
pub fn d_square(
    w: &StepHypergraphon,
    wb: &StepHypergraphon,
    alpha: &Alpha,
    restarts: usize,
    seed: u64,
) -> Result<CutDistance> {
    let parts = w.parts / gcd(w.parts, wb.parts) * wb.parts;
    let orders: Vec<usize> = w
        .levels
        .keys()
        .chain(wb.levels.keys())
        .copied()
        .sorted()
        .dedup()
        .collect();
    let mut terms = Vec::new();
    let mut total = 0.0;
    for l in orders {
        let a = dense_level(w, l, parts);
        let b = dense_level(wb, l, parts);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let (value, mode) = cut_norm(&diff, parts, l, restarts, seed.wrapping_add(l as u64))?;
        let alpha_l = alpha.weight(l);
        total += alpha_l * value;
        terms.push(CutTerm {
            order: l,
            alpha: alpha_l,
            value,
            mode,
        });
    }
    Ok(CutDistance { total, terms })
}

/// Minimum of `d_□(w, w̄^σ)` over relabelings `σ` of the `N ≤ 8` blocks.
pub fn delta_square_perm(
    w: &StepHypergraphon,
    wb: &StepHypergraphon,
    alpha: &Alpha,
    restarts: usize,
    seed: u64,
) -> Result<(CutDistance, Vec<usize>)> {
    let n = w.parts;
    if wb.parts != n || n > 8 {
        return Err(Error::Resource(format!(
            "block permutation search needs equal grids with at most 8 parts (got {} and {})",
            n, wb.parts
        )));
    }
    let orders: Vec<usize> = w
        .levels
        .keys()
        .chain(wb.levels.keys())
        .copied()
        .sorted()
        .dedup()
        .collect();
    let a: Vec<Vec<f64>> = orders.iter().map(|&l| dense_level(w, l, n)).collect();
    let b: Vec<Vec<f64>> = orders.iter().map(|&l| dense_level(wb, l, n)).collect();
    let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let results: Vec<Result<(CutDistance, Vec<usize>)>> = perms
        .into_par_iter()
        .map(|sigma| {
            let mut terms = Vec::new();
            let mut total = 0.0;
            for (k, &l) in orders.iter().enumerate() {
                let len = n.pow(l as u32 + 1);
                let diff: Vec<f64> = (0..len)
                    .map(|flat| {
                        let mut rem = flat;
                        let mut idx = vec![0; l + 1];
                        for slot in idx.iter_mut().rev() {
                            *slot = sigma[rem % n];
                            rem /= n;
                        }
                        a[k][flat] - b[k][flat_index(&idx, n)]
                    })
                    .collect();
                let (value, mode) = if exact_feasible(n, l) && n.pow(l as u32) <= 4096 && n * l <= 12 {
                    (cut_norm_exact(&diff, n, l)?, CutMode::Exact)
                } else {
                    (cut_norm_heuristic(&diff, n, l, restarts, seed)?, CutMode::Heuristic)
                };
                total += alpha.weight(l) * value;
                terms.push(CutTerm {
                    order: l,
                    alpha: alpha.weight(l),
                    value,
                    mode,
                });
            }
            Ok((CutDistance { total, terms }, sigma))
        })
        .collect();
    let mut best: Option<(CutDistance, Vec<usize>)> = None;
    for r in results {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.0.total < b.0.total) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// Quadrature estimate of `‖w_ℓ − w̄_ℓ‖_{L¹([0,1]^{ℓ+1})}`.
///
/// The cell grid is the common refinement of the step grids involved, or
/// `cells` per axis when both are closed-form; each cell is integrated with
/// `nodes` midpoints per axis unless both levels are constant on it.
pub fn l1_level_distance(w: &URHypergraphon, wb: &URHypergraphon, order: usize, cells: usize, nodes: usize) -> f64 {
    let grid = match (w.parts(), wb.parts()) {
        (Some(a), Some(b)) => a / gcd(a, b) * b,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => cells.max(1),
    };
    let width = 1.0 / grid as f64;
    let symmetric = w.is_symmetric(order) && wb.is_symmetric(order);
    let arity = order + 1;
    let cell_diff = |idx: &[usize]| -> f64 {
        let lo: Vec<f64> = idx.iter().map(|&k| k as f64 * width).collect();
        let hi: Vec<f64> = lo.iter().map(|&a| a + width).collect();
        match (w.constant_on_box(order, &lo, &hi), wb.constant_on_box(order, &lo, &hi)) {
            (Some(a), Some(b)) => (a - b).abs(),
            (Some(a), None) => cell_average(|p| (a - wb.evaluate(order, p)).abs(), |_, _| None, &lo, width, nodes),
            (None, Some(b)) => cell_average(|p| (w.evaluate(order, p) - b).abs(), |_, _| None, &lo, width, nodes),
            (None, None) => cell_average(
                |p| (w.evaluate(order, p) - wb.evaluate(order, p)).abs(),
                |_, _| None,
                &lo,
                width,
                nodes,
            ),
        }
    };
    let total: f64 = (0..grid)
        .into_par_iter()
        .map(|first| {
            let mut acc = 0.0;
            if symmetric {
                for rest in (first..grid).combinations_with_replacement(order) {
                    let mut idx = vec![first];
                    idx.extend(rest);
                    acc += multiplicity(&idx) * cell_diff(&idx);
                }
            } else {
                for rest in (0..order).map(|_| 0..grid).multi_cartesian_product() {
                    let mut idx = vec![first];
                    idx.extend(rest);
                    acc += cell_diff(&idx);
                }
            }
            acc
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total * width.powi(arity as i32)
}

/// Number of distinct orderings of a sorted multi-index.
fn multiplicity(sorted: &[usize]) -> f64 {
    let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    let groups = sorted.iter().dedup_with_count().map(|(c, _)| fact(c)).product::<f64>();
    fact(sorted.len()) / groups
}

/// Rooted directed hypertree on nodes `0..V`; each hyperedge attaches new
/// head nodes to an existing tail node.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectedHypertree {
    pub num_nodes: usize,
    pub edges: Vec<(usize, Vec<usize>)>,
}

impl DirectedHypertree {
    pub fn new(num_nodes: usize, edges: Vec<(usize, Vec<usize>)>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::Parameter("hypertree needs a node".into()));
        }
        let mut seen = vec![false; num_nodes];
        seen[0] = true;
        for (tail, heads) in &edges {
            if *tail >= num_nodes || !seen[*tail] {
                return Err(Error::Parameter(format!("tail {tail} is not an existing node")));
            }
            if heads.is_empty() {
                return Err(Error::Parameter("hyperedge without heads".into()));
            }
            for &h in heads {
                if h >= num_nodes || seen[h] {
                    return Err(Error::Parameter(format!("head {h} is not a new node")));
                }
                seen[h] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Parameter("hypertree is not connected".into()));
        }
        Ok(Self { num_nodes, edges })
    }
}

/// `∫ Π_e w_{ℓ_e}(ξ_tail, ξ_heads) Π_i m_{e_i}(ξ_i) dξ` over the fiber grid of
/// `μ`, where `m_k(ξ)` is the `k`-th moment of `μ^ξ`. Evaluated by summing
/// out leaves first, which equals the full grid quadrature.
pub fn hypertree_moment(
    tree: &DirectedHypertree,
    w: &URHypergraphon,
    mu: &FiberedAtoms,
    exponents: &[u32],
    budget: usize,
) -> Result<f64> {
    if exponents.len() != tree.num_nodes {
        return Err(Error::Parameter("one exponent per node required".into()));
    }
    let n = mu.len();
    let work: usize = tree
        .edges
        .iter()
        .map(|(_, h)| n.saturating_pow(h.len() as u32 + 1))
        .sum();
    if work > budget {
        return Err(Error::Resource(format!(
            "hypertree quadrature needs {work} > {budget} evaluations"
        )));
    }
    let xi: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let mut msg: Vec<Vec<f64>> = (0..tree.num_nodes)
        .map(|v| mu.fibers.iter().map(|f| f.moment(exponents[v] as i32)).collect())
        .collect();
    for (tail, heads) in tree.edges.iter().rev() {
        let l = heads.len();
        let scale = 1.0 / (n as f64).powi(l as i32);
        let factor: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|a| {
                let mut p = vec![xi[a]; l + 1];
                let mut acc = 0.0;
                for combo in (0..l).map(|_| 0..n).multi_cartesian_product() {
                    let mut prod = 1.0;
                    for (k, &c) in combo.iter().enumerate() {
                        p[k + 1] = xi[c];
                        prod *= msg[heads[k]][c];
                    }
                    if prod != 0.0 {
                        acc += w.evaluate(l, &p) * prod;
                    }
                }
                acc * scale
            })
            .collect();
        for (m, f) in msg[*tail].iter_mut().zip(factor) {
            *m *= f;
        }
    }
    Ok(msg[0].iter().sum::<f64>() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::build_homogeneous;
    use crate::hypergraphon::{step_from_hypergraph, AnalyticHypergraphon, StepLevel};
    use approx::assert_abs_diff_eq;

    /// Independent oracle: for atoms on the grid `hZ`, optimal `φ` values
    /// also lie on `hZ ∩ [−1, 1]`, so a DP over that finite set is exact.
    fn grid_oracle(a: &[(i64, f64)], b: &[(i64, f64)], inv_h: i64) -> f64 {
        let mut pts: std::collections::BTreeMap<i64, f64> = Default::default();
        for &(x, m) in a {
            *pts.entry(x).or_default() += m;
        }
        for &(x, m) in b {
            *pts.entry(x).or_default() -= m;
        }
        let levels: Vec<i64> = (-inv_h..=inv_h).collect();
        let mut best: Vec<f64> = vec![0.0; levels.len()];
        let mut prev: Option<i64> = None;
        for (&x, &c) in &pts {
            let next: Vec<f64> = levels
                .iter()
                .map(|&phi| {
                    let reach = match prev {
                        None => 0.0,
                        Some(px) => {
                            let gap = x - px;
                            levels
                                .iter()
                                .zip(&best)
                                .filter(|(&q, _)| (q - phi).abs() <= gap)
                                .map(|(_, &v)| v)
                                .fold(f64::NEG_INFINITY, f64::max)
                        }
                    };
                    reach + c * phi as f64 / inv_h as f64
                })
                .collect();
            best = next;
            prev = Some(x);
        }
        best.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    fn w1(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
        let mut xs: Vec<f64> = a.atoms.iter().chain(&b.atoms).map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |m: &DiscreteMeasure, t: f64| m.atoms.iter().filter(|p| p.0 <= t).map(|p| p.1).sum::<f64>();
        xs.windows(2)
            .map(|w| (w[1] - w[0]) * (cdf(a, w[0]) - cdf(b, w[0])).abs())
            .sum()
    }

    #[test]
    fn dirac_examples() {
        let d = |a: f64, b: f64| d_bl(&DiscreteMeasure::dirac(a), &DiscreteMeasure::dirac(b)).unwrap();
        assert_eq!(d(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(d(0.0, 0.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d(0.0, 3.0), 2.0, epsilon = 1e-15);
        assert!(d_bl(&DiscreteMeasure::new(vec![]).unwrap(), &DiscreteMeasure::dirac(0.0)).is_err());
    }

    #[test]
    fn matches_grid_oracle_on_random_instances() {
        let mut rng = crate::rng::seeded(21);
        for _ in 0..300 {
            let inv_h = 8;
            let (na, nb) = (1 + rng.gen_range(0..5), 1 + rng.gen_range(0..5));
            let mut gen = |k: usize| -> Vec<(i64, f64)> {
                (0..k)
                    .map(|_| (rng.gen_range(-30..30), rng.gen_range(0.05..1.0)))
                    .collect()
            };
            let (a, b) = (gen(na), gen(nb));
            let to_m = |v: &[(i64, f64)]| {
                DiscreteMeasure::new(v.iter().map(|&(x, m)| (x as f64 / inv_h as f64, m)).collect()).unwrap()
            };
            let got = d_bl(&to_m(&a), &to_m(&b)).unwrap();
            let expect = grid_oracle(&a, &b, inv_h);
            assert_abs_diff_eq!(got, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn metric_properties_and_w1_bound() {
        let mut rng = crate::rng::seeded(5);
        let mut rand_prob = |k: usize, spread: f64| {
            let pts: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..spread)).collect();
            DiscreteMeasure::empirical(&pts)
        };
        for _ in 0..200 {
            let (a, b, c) = (rand_prob(4, 3.0), rand_prob(3, 3.0), rand_prob(5, 3.0));
            let ab = d_bl(&a, &b).unwrap();
            assert_abs_diff_eq!(ab, d_bl(&b, &a).unwrap(), epsilon = 1e-12);
            assert!(ab <= 2.0 + 1e-12);
            assert!(ab <= d_bl(&a, &c).unwrap() + d_bl(&c, &b).unwrap() + 1e-9);
            assert!(ab <= w1(&a, &b) + 1e-12);
            assert!(d_bl(&a, &a).unwrap().abs() < 1e-12);
        }
        for _ in 0..200 {
            let (a, b) = (rand_prob(4, 2.0), rand_prob(6, 2.0));
            assert_abs_diff_eq!(d_bl(&a, &b).unwrap(), w1(&a, &b), epsilon = 1e-12);
        }
    }

    fn fibered(points: &[f64]) -> FiberedAtoms {
        FiberedAtoms::new(points.iter().map(|&x| DiscreteMeasure::dirac(x)).collect()).unwrap()
    }

    #[test]
    fn d_p_nu_examples() {
        let a = fibered(&[0.1, 0.4, 0.9]);
        assert_eq!(d_p_nu(&a, &a, 2.0).unwrap(), 0.0);
        let alpha = DiscreteMeasure::new(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let beta = DiscreteMeasure::dirac(0.25);
        let ca = FiberedAtoms::new(vec![alpha.clone(); 4]).unwrap();
        let cb = FiberedAtoms::new(vec![beta.clone(); 3]).unwrap();
        let direct = d_bl(&alpha, &beta).unwrap();
        for p in [1.0, 2.0, 3.5] {
            assert_abs_diff_eq!(d_p_nu(&ca, &cb, p).unwrap(), direct, epsilon = 1e-14);
        }
        let x = fibered(&[0.0, 0.0]);
        let y = fibered(&[0.2, 0.4]);
        assert_abs_diff_eq!(d_p_nu(&x, &y, 2.0).unwrap(), 0.1f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(0.1f64.sqrt(), 0.31623, epsilon = 1e-5);
        assert!(d_p_nu(&x, &y, 0.5).is_err());
    }

    #[test]
    fn refinement_handles_non_dividing_grids() {
        // Grids of 2 and 3 fibers: pieces [0,1/3),[1/3,1/2),[1/2,2/3),[2/3,1).
        let a = fibered(&[0.0, 1.0]);
        let b = fibered(&[0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(d_p_nu(&a, &b, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        let c = fibered(&[0.3, 0.0, 0.0]);
        assert_abs_diff_eq!(d_p_nu(&a, &c, 1.0).unwrap(), 0.3 / 3.0 + 0.5, epsilon = 1e-14);
    }

    #[test]
    fn marginal_distance_and_monotonicity() {
        let mut rng = crate::rng::seeded(8);
        for _ in 0..100 {
            let n = 1 + rng.gen_range(0..6);
            let m = 1 + rng.gen_range(0..6);
            let a = FiberedAtoms::new(
                (0..n)
                    .map(|_| DiscreteMeasure::empirical(&[rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)]))
                    .collect(),
            )
            .unwrap();
            let b = fibered(&(0..m).map(|_| rng.gen_range(0.0..2.0)).collect::<Vec<_>>());
            let d1 = d_p_nu(&a, &b, 1.0).unwrap();
            let d2 = d_p_nu(&a, &b, 2.0).unwrap();
            assert!(d1 <= d2 + 1e-12);
            assert!(d_bl(&a.marginal(), &b.marginal()).unwrap() <= d1 + 1e-12);
        }
    }

    #[test]
    fn empirical_fiber_lookup() {
        let a = fibered(&[0.2, 0.8]);
        assert_eq!(a.fiber_at(0.3).atoms()[0].0, 0.2);
        assert_eq!(a.fiber_at(0.6).atoms()[0].0, 0.8);
        let m = a.marginal();
        assert_eq!(m.atoms(), &[(0.2, 0.5), (0.8, 0.5)]);
    }

    /// Brute force over all subset tuples including `S`.
    fn cut_oracle(values: &[f64], parts: usize, order: usize) -> f64 {
        let bits = parts * (order + 1);
        let mut best = 0.0f64;
        for code in 0u64..1 << bits {
            let mut s = 0.0;
            for (flat, &v) in values.iter().enumerate() {
                let mut rem = flat;
                let mut inside = true;
                for axis in (0..=order).rev() {
                    let idx = rem % parts;
                    rem /= parts;
                    if (code >> (axis * parts + idx)) & 1 == 0 {
                        inside = false;
                        break;
                    }
                }
                if inside {
                    s += v;
                }
            }
            best = best.max(s.abs());
        }
        best / (parts as f64).powi(order as i32 + 1)
    }

    #[test]
    fn cut_norm_examples() {
        let diff = [1.0, -1.0, -1.0, 1.0];
        assert_abs_diff_eq!(cut_norm_exact(&diff, 2, 1).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(cut_norm_heuristic(&diff, 2, 1, 4, 1).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(operator_norm_infty_to_1(&diff, 2, 1).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(operator_norm_signed(&diff, 2, 1).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cut_norm_exact(&[0.0; 8], 2, 2).unwrap(), 0.0);
        assert_eq!(cut_norm_heuristic(&[0.0; 8], 2, 2, 3, 1).unwrap(), 0.0);
        assert_eq!(operator_norm_infty_to_1(&[0.0; 4], 2, 1).unwrap(), 0.0);
        assert_abs_diff_eq!(cut_norm_exact(&[0.3; 27], 3, 2).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(
            operator_norm_infty_to_1(&[-0.3; 27], 3, 2).unwrap(),
            0.3,
            epsilon = 1e-15
        );
        assert!(cut_norm_exact(&vec![0.0; 9usize.pow(3)], 9, 2).is_err());
    }

    #[test]
    fn cut_norm_matches_full_enumeration() {
        let mut rng = crate::rng::seeded(13);
        for _ in 0..60 {
            let order = 1 + rng.gen_range(0..2);
            let parts: usize = 1 + rng.gen_range(0..3);
            let values: Vec<f64> = (0..parts.pow(order as u32 + 1))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let exact = cut_norm_exact(&values, parts, order).unwrap();
            assert_abs_diff_eq!(exact, cut_oracle(&values, parts, order), epsilon = 1e-12);
            let heur = cut_norm_heuristic(&values, parts, order, 8, 3).unwrap();
            assert!(heur <= exact + 1e-12);
            let op = operator_norm_infty_to_1(&values, parts, order).unwrap();
            assert!(exact <= op + 1e-12 && op <= 2f64.powi(order as i32) * exact + 1e-12);
            let signed = operator_norm_signed(&values, parts, order).unwrap();
            assert!(op <= signed + 1e-12 && signed <= 2f64.powi(order as i32 + 1) * exact + 1e-12);
        }
    }

    #[test]
    fn cut_norm_below_l1() {
        let mut rng = crate::rng::seeded(2);
        for _ in 0..30 {
            let parts = 2 + rng.gen_range(0..3);
            let a: Vec<f64> = (0..parts * parts).map(|_| rng.gen_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..parts * parts).map(|_| rng.gen_range(0.0..1.0)).collect();
            let wa =
                URHypergraphon::Step(StepHypergraphon::new(parts).with_level(StepLevel::dense(1, parts, a.clone())));
            let wb =
                URHypergraphon::Step(StepHypergraphon::new(parts).with_level(StepLevel::dense(1, parts, b.clone())));
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let l1 = l1_level_distance(&wa, &wb, 1, parts, 2);
            let direct: f64 = diff.iter().map(|d| d.abs()).sum::<f64>() / (parts * parts) as f64;
            assert_abs_diff_eq!(l1, direct, epsilon = 1e-12);
            assert!(cut_norm_exact(&diff, parts, 1).unwrap() <= l1 + 1e-12);
        }
    }

    #[test]
    fn l1_constants_and_identity() {
        let a = URHypergraphon::Analytic(AnalyticHypergraphon::constant(0.7, [1, 2]));
        let b = URHypergraphon::Analytic(AnalyticHypergraphon::constant(0.2, [1, 2]));
        assert_abs_diff_eq!(l1_level_distance(&a, &b, 2, 4, 2), 0.5, epsilon = 1e-12);
        assert_eq!(l1_level_distance(&a, &a, 1, 4, 2), 0.0);
    }

    #[test]
    fn l1_homogeneous_within_band_bound() {
        let w = URHypergraphon::Analytic(AnalyticHypergraphon::homogeneous(0.1, [1, 2]));
        let n = 50;
        let h = crate::hypergraphon::discretize_pointwise(&w, n, 0.0).unwrap();
        let s = URHypergraphon::Step(step_from_hypergraph(&h));
        let d = l1_level_distance(&w, &s, 2, n, 8);
        assert!(d <= 12.0 / n as f64, "{d}");
    }

    #[test]
    fn d_square_examples() {
        let s = step_from_hypergraph(&build_homogeneous(6, 0.5, 3).unwrap());
        let d = d_square(&s, &s, &Alpha::default(), 4, 1).unwrap();
        assert_eq!(d.total, 0.0);
        let a = StepHypergraphon::new(2).with_level(StepLevel::dense(2, 2, vec![0.6; 8]));
        let b = StepHypergraphon::new(2).with_level(StepLevel::dense(2, 2, vec![0.5; 8]));
        let d = d_square(&a, &b, &Alpha::default(), 4, 1).unwrap();
        assert_abs_diff_eq!(d.total, 0.25 * 0.1, epsilon = 1e-15);
        assert_eq!(d.terms[0].mode, CutMode::Exact);
    }

    #[test]
    fn d_square_refines_to_common_grid() {
        let a = StepHypergraphon::new(2).with_level(StepLevel::dense(1, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let b = StepHypergraphon::new(4).with_level(StepLevel::dense(1, 4, dense_level(&a, 1, 4)));
        let d = d_square(&a, &b, &Alpha::default(), 4, 1).unwrap();
        assert_eq!(d.total, 0.0);
    }

    #[test]
    fn homogeneous_cut_distance_decreases() {
        let w = URHypergraphon::Analytic(AnalyticHypergraphon::homogeneous(0.1, [1]));
        let mut last = f64::INFINITY;
        for n in [5, 10, 20] {
            let s = step_from_hypergraph(&build_homogeneous(n, 0.1, 2).unwrap());
            let d = d_square(&s, &sample_step(&w, n), &Alpha::default(), 8, 1)
                .unwrap()
                .total;
            assert!(d < last, "{n}: {d}");
            last = d;
        }
    }

    #[test]
    fn permutation_search_finds_relabeling() {
        let a = StepHypergraphon::new(3).with_level(StepLevel::dense(
            1,
            3,
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0],
        ));
        // Relabel 0 <-> 2.
        let b = StepHypergraphon::new(3).with_level(StepLevel::dense(
            1,
            3,
            vec![0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0, 1.0, 0.0],
        ));
        assert!(d_square(&a, &b, &Alpha::default(), 4, 1).unwrap().total > 0.0);
        let (d, sigma) = delta_square_perm(&a, &b, &Alpha::default(), 4, 1).unwrap();
        assert_abs_diff_eq!(d.total, 0.0, epsilon = 1e-15);
        assert_eq!(sigma, vec![2, 1, 0]);
    }

    #[test]
    fn hypertree_examples() {
        let mu = FiberedAtoms::new((0..8).map(|i| DiscreteMeasure::dirac((i as f64 + 0.5) / 8.0)).collect()).unwrap();
        let w = URHypergraphon::Analytic(AnalyticHypergraphon::constant(1.0, [1]));
        let single = DirectedHypertree::new(1, vec![]).unwrap();
        assert_abs_diff_eq!(
            hypertree_moment(&single, &w, &mu, &[0], 1000).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let edge = DirectedHypertree::new(2, vec![(0, vec![1])]).unwrap();
        assert_abs_diff_eq!(
            hypertree_moment(&edge, &w, &mu, &[0, 1], 1000).unwrap(),
            0.5,
            epsilon = 1e-15
        );

        let step = URHypergraphon::Step(step_from_hypergraph(&build_homogeneous(8, 0.1, 2).unwrap()));
        let got = hypertree_moment(&edge, &step, &mu, &[1, 1], 1000).unwrap();
        let mut oracle = 0.0;
        for a in 0..8 {
            for b in 0..8 {
                let (x, y) = ((a as f64 + 0.5) / 8.0, (b as f64 + 0.5) / 8.0);
                oracle += step.evaluate(1, &[x, y]) * x * y;
            }
        }
        assert_abs_diff_eq!(got, oracle / 64.0, epsilon = 1e-10);
        assert!(DirectedHypertree::new(3, vec![(0, vec![1]), (0, vec![1, 2])]).is_err());
        assert!(hypertree_moment(&edge, &w, &mu, &[0, 1], 10).is_err());
    }

    #[test]
    fn hypertree_matches_full_grid_sum() {
        let n = 5;
        let mu = FiberedAtoms::new(
            (0..n)
                .map(|i| DiscreteMeasure::new(vec![(i as f64 * 0.1, 0.5), (1.0 - i as f64 * 0.05, 0.5)]).unwrap())
                .collect(),
        )
        .unwrap();
        let w = URHypergraphon::Analytic(AnalyticHypergraphon::balanced(
            crate::hypergraphon::Profile::quadratic(),
            [1, 2],
        ));
        let tree = DirectedHypertree::new(4, vec![(0, vec![1, 2]), (2, vec![3])]).unwrap();
        let e = [1u32, 2, 0, 1];
        let got = hypertree_moment(&tree, &w, &mu, &e, 100_000).unwrap();
        let xi = |i: usize| (i as f64 + 0.5) / n as f64;
        let mut oracle = 0.0;
        for idx in (0..4).map(|_| 0..n).multi_cartesian_product() {
            let mut v = w.evaluate(2, &[xi(idx[0]), xi(idx[1]), xi(idx[2])]) * w.evaluate(1, &[xi(idx[2]), xi(idx[3])]);
            for (k, &i) in idx.iter().enumerate() {
                v *= mu.fibers[i].moment(e[k] as i32);
            }
            oracle += v;
        }
        assert_abs_diff_eq!(got, oracle / (n as f64).powi(4), epsilon = 1e-12);
    }
}
