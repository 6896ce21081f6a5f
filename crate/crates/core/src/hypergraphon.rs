//! Hypergraphons of unbounded rank.
//!
//! A hypergraphon is a finite family of symmetric non-negative levels
//! `w_ℓ : [0,1]^{ℓ+1} → ℝ₊`. Levels are either closed-form functions or step
//! functions on the uniform partition `I_i = [(i−1)/N, i/N)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::Arc;

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{parse_err, Error, Result};
use crate::hypergraph::{AdjacencyTensor, Hypergraph, DIAM_TOL};

/// Decreasing profile `f : [0, 1/2] → ℝ₊` for the balanced family.
#[derive(Clone)]
pub struct Profile {
    pub name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Bound on `|f'|`.
    pub lipschitz: f64,
    /// Bound on `f`.
    pub sup: f64,
}

impl Profile {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        sup: f64,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            lipschitz,
            sup,
        }
    }

    /// `f(x) = 4 (x − 1/2)²`.
    pub fn quadratic() -> Self {
        Self::new("quadratic", |x| 4.0 * (x - 0.5) * (x - 0.5), 4.0, 1.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant({c})"), move |_| c, 0.0, c)
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Profile({})", self.name)
    }
}

type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum LevelFn {
    Constant(f64),
    /// Indicator of `max |ξ_a − ξ_b| ≤ θ`.
    Homogeneous {
        theta: f64,
    },
    /// `f(|mean(ξ) − 1/2|)`.
    Balanced(Profile),
    Custom(PointFn),
}

impl fmt::Debug for LevelFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelFn::Constant(c) => write!(f, "Constant({c})"),
            LevelFn::Homogeneous { theta } => write!(f, "Homogeneous(theta={theta})"),
            LevelFn::Balanced(p) => write!(f, "Balanced({})", p.name),
            LevelFn::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// One closed-form level with its declared bounds.
#[derive(Clone, Debug)]
pub struct AnalyticLevel {
    pub func: LevelFn,
    pub sup: f64,
    /// Euclidean Lipschitz constant, when the level is Lipschitz.
    pub lipschitz: Option<f64>,
}

impl AnalyticLevel {
    pub fn eval(&self, p: &[f64]) -> f64 {
        match &self.func {
            LevelFn::Constant(c) => *c,
            LevelFn::Homogeneous { theta } => {
                let (lo, hi) = min_max(p);
                if hi - lo <= theta + DIAM_TOL {
                    1.0
                } else {
                    0.0
                }
            }
            LevelFn::Balanced(prof) => {
                let m = p.iter().sum::<f64>() / p.len() as f64;
                prof.eval((m - 0.5).abs())
            }
            LevelFn::Custom(f) => f(p),
        }
    }

    /// Value of the level if it is constant on the open box `(lo, hi)`.
    pub fn constant_on_box(&self, lo: &[f64], hi: &[f64]) -> Option<f64> {
        match &self.func {
            LevelFn::Constant(c) => Some(*c),
            LevelFn::Homogeneous { theta } => {
                let max_diam = max_of(hi) - min_of(lo);
                let min_diam = (max_of(lo) - min_of(hi)).max(0.0);
                if max_diam <= theta + DIAM_TOL {
                    Some(1.0)
                } else if min_diam >= theta + DIAM_TOL {
                    Some(0.0)
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

fn min_max(p: &[f64]) -> (f64, f64) {
    (min_of(p), max_of(p))
}

fn min_of(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Closed-form hypergraphon with finitely many active levels.
#[derive(Clone, Debug, Default)]
pub struct AnalyticHypergraphon {
    pub levels: BTreeMap<usize, AnalyticLevel>,
}

impl AnalyticHypergraphon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_level(mut self, order: usize, level: AnalyticLevel) -> Self {
        assert!(order >= 1);
        self.levels.insert(order, level);
        self
    }

    /// Homogeneous-group levels on the given orders.
    pub fn homogeneous(theta: f64, orders: impl IntoIterator<Item = usize>) -> Self {
        orders.into_iter().fold(Self::new(), |w, l| {
            w.with_level(
                l,
                AnalyticLevel {
                    func: LevelFn::Homogeneous { theta },
                    sup: 1.0,
                    lipschitz: None,
                },
            )
        })
    }

    /// Balanced-group levels; Lipschitz constant `Lip(f)/√(ℓ+1)`.
    pub fn balanced(profile: Profile, orders: impl IntoIterator<Item = usize>) -> Self {
        orders.into_iter().fold(Self::new(), |w, l| {
            let lip = profile.lipschitz / ((l + 1) as f64).sqrt();
            w.with_level(
                l,
                AnalyticLevel {
                    sup: profile.sup,
                    lipschitz: Some(lip),
                    func: LevelFn::Balanced(profile.clone()),
                },
            )
        })
    }

    pub fn constant(c: f64, orders: impl IntoIterator<Item = usize>) -> Self {
        orders.into_iter().fold(Self::new(), |w, l| {
            w.with_level(
                l,
                AnalyticLevel {
                    func: LevelFn::Constant(c),
                    sup: c,
                    lipschitz: Some(0.0),
                },
            )
        })
    }

    pub fn custom(
        self,
        order: usize,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        sup: f64,
        lipschitz: Option<f64>,
    ) -> Self {
        self.with_level(
            order,
            AnalyticLevel {
                func: LevelFn::Custom(Arc::new(f)),
                sup,
                lipschitz,
            },
        )
    }

    /// Spot-checks the declared sup bound and symmetry on random points.
    pub fn check_invariants(&self, samples: usize, seed: u64) -> Vec<String> {
        let mut rng = crate::rng::seeded(seed);
        let mut problems = Vec::new();
        for (&l, level) in &self.levels {
            for _ in 0..samples {
                let p: Vec<f64> = (0..=l).map(|_| rng.gen::<f64>()).collect();
                let v = level.eval(&p);
                if !(v >= 0.0 && v <= level.sup * (1.0 + 1e-12)) {
                    problems.push(format!("order {l}: value {v} outside [0, {}]", level.sup));
                }
                let mut q = p.clone();
                for k in (1..q.len()).rev() {
                    q.swap(k, rng.gen_range(0..=k));
                }
                let vq = level.eval(&q);
                if (v - vq).abs() > 1e-12 * (1.0 + v.abs()) {
                    problems.push(format!("order {l}: asymmetric at {p:?}"));
                }
            }
        }
        problems
    }
}

/// Piecewise-constant level on the uniform `parts`-partition.
#[derive(Clone, Debug, PartialEq)]
pub enum StepLevel {
    Dense {
        order: usize,
        parts: usize,
        values: Vec<f64>,
    },
    /// Sparse tensor whose stored weights are multiplied by `scale`.
    Sparse {
        tensor: AdjacencyTensor,
        parts: usize,
        scale: f64,
    },
}

impl StepLevel {
    pub fn dense(order: usize, parts: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), parts.pow(order as u32 + 1));
        StepLevel::Dense { order, parts, values }
    }

    pub fn order(&self) -> usize {
        match self {
            StepLevel::Dense { order, .. } => *order,
            StepLevel::Sparse { tensor, .. } => tensor.order(),
        }
    }

    pub fn parts(&self) -> usize {
        match self {
            StepLevel::Dense { parts, .. } | StepLevel::Sparse { parts, .. } => *parts,
        }
    }

    pub fn cell(&self, idx: &[usize]) -> f64 {
        match self {
            StepLevel::Dense { parts, values, .. } => values[flat_index(idx, *parts)],
            StepLevel::Sparse { tensor, scale, .. } => tensor.get(idx) * scale,
        }
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        let n = self.parts();
        let idx: Vec<usize> = p.iter().map(|&x| cell_of(x, n)).collect();
        self.cell(&idx)
    }

    pub fn sup(&self) -> f64 {
        match self {
            StepLevel::Dense { values, .. } => values.iter().copied().fold(0.0, f64::max),
            StepLevel::Sparse { tensor, scale, .. } => tensor.max_weight() * scale,
        }
    }

    /// Dense row-major values.
    pub fn to_values(&self) -> Vec<f64> {
        match self {
            StepLevel::Dense { values, .. } => values.clone(),
            StepLevel::Sparse { tensor, parts, scale } => {
                let mut v = vec![0.0; parts.pow(tensor.arity() as u32)];
                tensor.for_each_ordered(|key, w| {
                    let idx: Vec<usize> = key.iter().map(|&k| k as usize).collect();
                    v[flat_index(&idx, *parts)] = w * scale;
                });
                v
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            StepLevel::Sparse { tensor, .. } => tensor.is_symmetric(),
            StepLevel::Dense { order, parts, values } => {
                (0..order + 1).map(|_| 0..*parts).multi_cartesian_product().all(|idx| {
                    let v = values[flat_index(&idx, *parts)];
                    let mut s = idx.clone();
                    s.sort_unstable();
                    values[flat_index(&s, *parts)] == v
                })
            }
        }
    }
}

/// Row-major flat index of a cell multi-index.
pub fn flat_index(idx: &[usize], parts: usize) -> usize {
    idx.iter().fold(0, |acc, &k| acc * parts + k)
}

/// Cell containing `x` for right-open cells with the last one closed at 1.
pub fn cell_of(x: f64, parts: usize) -> usize {
    let k = (x * parts as f64).floor();
    if k < 0.0 {
        0
    } else {
        (k as usize).min(parts - 1)
    }
}

/// Step hypergraphon on a uniform partition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepHypergraphon {
    pub parts: usize,
    pub levels: BTreeMap<usize, StepLevel>,
}

impl StepHypergraphon {
    pub fn new(parts: usize) -> Self {
        Self {
            parts,
            levels: BTreeMap::new(),
        }
    }

    pub fn with_level(mut self, level: StepLevel) -> Self {
        assert_eq!(level.parts(), self.parts);
        self.levels.insert(level.order(), level);
        self
    }

    pub fn sup(&self) -> f64 {
        self.levels.values().map(StepLevel::sup).fold(0.0, f64::max)
    }

    /// Writes the `hypergraphon v1` text format.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let orders = self.levels.keys().map(|l| l.to_string()).join(",");
        writeln!(out, "hypergraphon v1 parts={} orders={}", self.parts, orders)?;
        for level in self.levels.values() {
            for row in level.to_values().chunks(self.parts) {
                let line = row.iter().map(|v| format!("{v:e}")).join(" ");
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut header: Option<(usize, Vec<usize>)> = None;
        let mut values: Vec<f64> = Vec::new();
        for (lineno, line) in BufReader::new(input).lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if header.is_none() {
                header = Some(parse_step_header(content).map_err(|m| parse_err(lineno, m))?);
                continue;
            }
            for tok in content.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad value `{tok}`")))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(parse_err(lineno, format!("negative or non-finite value {v}")));
                }
                values.push(v);
            }
        }
        let (parts, orders) = header.ok_or_else(|| parse_err(0, "missing `hypergraphon v1` header"))?;
        let mut w = Self::new(parts);
        let mut offset = 0;
        for l in orders {
            let len = parts.pow(l as u32 + 1);
            if offset + len > values.len() {
                return Err(parse_err(0, format!("value block for order {l} is truncated")));
            }
            w = w.with_level(StepLevel::dense(l, parts, values[offset..offset + len].to_vec()));
            offset += len;
        }
        if offset != values.len() {
            return Err(parse_err(0, "trailing values after the last block"));
        }
        Ok(w)
    }
}

fn parse_step_header(s: &str) -> std::result::Result<(usize, Vec<usize>), String> {
    let mut it = s.split_whitespace();
    if it.next() != Some("hypergraphon") || it.next() != Some("v1") {
        return Err("expected header `hypergraphon v1 parts=.. orders=..`".into());
    }
    let (mut parts, mut orders) = (None, None);
    for kv in it {
        match kv.split_once('=') {
            Some(("parts", v)) => parts = v.parse::<usize>().ok().filter(|&p| p > 0),
            Some(("orders", v)) => {
                let parsed: std::result::Result<Vec<usize>, _> =
                    v.split(',').filter(|t| !t.is_empty()).map(str::parse).collect();
                orders = parsed.ok().filter(|o| o.iter().all(|&l| l >= 1));
            }
            _ => return Err(format!("bad header field `{kv}`")),
        }
    }
    match (parts, orders) {
        (Some(p), Some(o)) => Ok((p, o)),
        _ => Err("header must set parts and orders".into()),
    }
}

/// Step or closed-form hypergraphon.
#[derive(Clone, Debug)]
pub enum URHypergraphon {
    Step(StepHypergraphon),
    Analytic(AnalyticHypergraphon),
}

impl URHypergraphon {
    pub fn active_orders(&self) -> Vec<usize> {
        match self {
            URHypergraphon::Step(s) => s.levels.keys().copied().collect(),
            URHypergraphon::Analytic(a) => a.levels.keys().copied().collect(),
        }
    }

    pub fn is_active(&self, order: usize) -> bool {
        match self {
            URHypergraphon::Step(s) => s.levels.contains_key(&order),
            URHypergraphon::Analytic(a) => a.levels.contains_key(&order),
        }
    }

    /// `w_ℓ(point)`; inactive orders evaluate to 0.
    pub fn evaluate(&self, order: usize, point: &[f64]) -> f64 {
        assert_eq!(point.len(), order + 1, "point must have ℓ + 1 coordinates");
        match self {
            URHypergraphon::Step(s) => s.levels.get(&order).map_or(0.0, |lv| lv.eval(point)),
            URHypergraphon::Analytic(a) => a.levels.get(&order).map_or(0.0, |lv| lv.eval(point)),
        }
    }

    /// Declared (analytic) or attained (step) sup over all levels.
    pub fn sup_bound(&self) -> f64 {
        match self {
            URHypergraphon::Step(s) => s.sup(),
            URHypergraphon::Analytic(a) => a.levels.values().map(|l| l.sup).fold(0.0, f64::max),
        }
    }

    pub fn lipschitz(&self, order: usize) -> Option<f64> {
        match self {
            URHypergraphon::Step(_) => None,
            URHypergraphon::Analytic(a) => a.levels.get(&order).and_then(|l| l.lipschitz),
        }
    }

    /// Partition size of a step hypergraphon.
    pub fn parts(&self) -> Option<usize> {
        match self {
            URHypergraphon::Step(s) => Some(s.parts),
            URHypergraphon::Analytic(_) => None,
        }
    }

    pub fn is_symmetric(&self, order: usize) -> bool {
        match self {
            URHypergraphon::Step(s) => s.levels.get(&order).is_none_or(StepLevel::is_symmetric),
            URHypergraphon::Analytic(_) => true,
        }
    }

    /// Value of `w_ℓ` if it is constant on the open box `(lo, hi)`.
    pub fn constant_on_box(&self, order: usize, lo: &[f64], hi: &[f64]) -> Option<f64> {
        match self {
            URHypergraphon::Step(s) => {
                let Some(level) = s.levels.get(&order) else {
                    return Some(0.0);
                };
                let n = s.parts;
                let mut idx = Vec::with_capacity(lo.len());
                for (&a, &b) in lo.iter().zip(hi) {
                    let k = cell_of(a + 1e-12 * (b - a), n);
                    if cell_of(b - 1e-12 * (b - a), n) != k {
                        return None;
                    }
                    idx.push(k);
                }
                Some(level.cell(&idx))
            }
            URHypergraphon::Analytic(a) => match a.levels.get(&order) {
                None => Some(0.0),
                Some(level) => level.constant_on_box(lo, hi),
            },
        }
    }

    /// Midpoint samples `w_ℓ((i_0+½)/n, …, (i_ℓ+½)/n)` in row-major order.
    pub fn level_grid(&self, order: usize, n: usize) -> Vec<f64> {
        let len = n.pow(order as u32 + 1);
        let mut out = vec![0.0; len];
        if !self.is_active(order) {
            return out;
        }
        let stride = n.pow(order as u32);
        out.par_chunks_mut(stride).enumerate().for_each(|(i0, chunk)| {
            let mut p = vec![0.0; order + 1];
            p[0] = (i0 as f64 + 0.5) / n as f64;
            for (r, slot) in chunk.iter_mut().enumerate() {
                let mut rem = r;
                for k in (1..=order).rev() {
                    p[k] = ((rem % n) as f64 + 0.5) / n as f64;
                    rem /= n;
                }
                *slot = self.evaluate(order, &p);
            }
        });
        out
    }
}

/// Step hypergraphon `w_ℓ^{H}` with cell values `N^ℓ w^{ℓ,N}`.
pub fn step_from_hypergraph(h: &Hypergraph) -> StepHypergraphon {
    let n = h.num_nodes();
    let mut s = StepHypergraphon::new(n);
    for t in h.tensors().iter().filter(|t| !t.is_empty()) {
        s = s.with_level(StepLevel::Sparse {
            tensor: t.clone(),
            parts: n,
            scale: (n as f64).powi(t.order() as i32),
        });
    }
    s
}

fn max_rank_for(w: &URHypergraphon, n: usize) -> Result<usize> {
    let max_order = w.active_orders().into_iter().max().unwrap_or(0);
    let max_rank = (max_order + 1).max(2).min(n.max(1));
    if max_order + 1 > n {
        return Err(Error::Parameter(format!(
            "order {max_order} needs at least {} nodes, got {n}",
            max_order + 1
        )));
    }
    Ok(max_rank)
}

/// Pointwise discretization: `w_{i j⃗} = w_ℓ(ξ̄_i, ξ̄_{j⃗}) / N^ℓ` with
/// `ξ̄_k = (k + offset)/N` (0-based `k`), zeroing multi-indices with a
/// repeated node.
pub fn discretize_pointwise(w: &URHypergraphon, n: usize, offset: f64) -> Result<Hypergraph> {
    if n < 2 {
        return Err(Error::Parameter("N must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&offset) {
        return Err(Error::Parameter(format!("grid offset {offset} outside [0, 1)")));
    }
    if let Some(parts) = w.parts() {
        if !n.is_multiple_of(parts) {
            return Err(Error::Parameter(format!("step parts {parts} must divide N = {n}")));
        }
    }
    let mut h = Hypergraph::empty(n, max_rank_for(w, n)?, true)?;
    let xi: Vec<f64> = (0..n).map(|k| (k as f64 + offset) / n as f64).collect();
    for l in w.active_orders() {
        let scale = 1.0 / (n as f64).powi(l as i32);
        let rows = collect_by_first(n, l, |key| {
            let p: Vec<f64> = key.iter().map(|&k| xi[k as usize]).collect();
            scale * w.evaluate(l, &p)
        });
        h.set_tensor(rows)?;
    }
    Ok(h)
}

/// L¹ discretization: `w_{i j⃗} = N ∫_{I_i×I_{j⃗}} w_ℓ`, i.e. the cell average
/// over `N^ℓ`, by tensor midpoint quadrature with `nodes` points per axis.
pub fn discretize_l1(w: &URHypergraphon, n: usize, nodes: usize) -> Result<Hypergraph> {
    if nodes == 0 {
        return Err(Error::Parameter("quadrature needs at least one node".into()));
    }
    let mut h = Hypergraph::empty(n, max_rank_for(w, n)?, true)?;
    let width = 1.0 / n as f64;
    for l in w.active_orders() {
        let scale = 1.0 / (n as f64).powi(l as i32);
        let rows = collect_by_first(n, l, |key| {
            let lo: Vec<f64> = key.iter().map(|&k| k as f64 * width).collect();
            scale
                * cell_average(
                    |p| w.evaluate(l, p),
                    |a, b| w.constant_on_box(l, a, b),
                    &lo,
                    width,
                    nodes,
                )
        });
        h.set_tensor(rows)?;
    }
    Ok(h)
}

/// Evaluates `value` on every sorted tuple of distinct nodes, in parallel
/// over the first node, and assembles a symmetric tensor.
fn collect_by_first(n: usize, order: usize, value: impl Fn(&[u32]) -> f64 + Sync) -> AdjacencyTensor {
    let chunks: Vec<Vec<(Vec<u32>, f64)>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut out = Vec::new();
            let mut key = vec![a as u32; order + 1];
            for combo in (a + 1..n).combinations(order) {
                for (slot, &c) in key[1..].iter_mut().zip(&combo) {
                    *slot = c as u32;
                }
                let v = value(&key);
                if v != 0.0 {
                    out.push((key.clone(), v));
                }
            }
            out
        })
        .collect();
    let mut t = AdjacencyTensor::new(order, true);
    for (key, v) in chunks.into_iter().flatten() {
        t.push_sorted(&key, v);
    }
    t
}

/// Midpoint-rule average of `f` over the cube `lo + [0, width]^d`, with a
/// shortcut when `constant` reports a constant value on the cube.
pub fn cell_average(
    f: impl Fn(&[f64]) -> f64,
    constant: impl Fn(&[f64], &[f64]) -> Option<f64>,
    lo: &[f64],
    width: f64,
    nodes: usize,
) -> f64 {
    let hi: Vec<f64> = lo.iter().map(|&a| a + width).collect();
    if let Some(c) = constant(lo, &hi) {
        return c;
    }
    let d = lo.len();
    let h = width / nodes as f64;
    let mut counter = vec![0usize; d];
    let mut p: Vec<f64> = lo.iter().map(|&a| a + 0.5 * h).collect();
    let mut sum = 0.0;
    loop {
        sum += f(&p);
        let mut k = d;
        loop {
            if k == 0 {
                return sum / (nodes as f64).powi(d as i32);
            }
            k -= 1;
            counter[k] += 1;
            if counter[k] < nodes {
                p[k] = lo[k] + (counter[k] as f64 + 0.5) * h;
                break;
            }
            counter[k] = 0;
            p[k] = lo[k] + 0.5 * h;
        }
    }
}
