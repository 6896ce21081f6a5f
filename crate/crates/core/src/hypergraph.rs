//! Finite weighted hypergraphs.
//!
//! A hypergraph on `N` nodes carries one sparse adjacency tensor per order
//! `ℓ = 1, …, max_rank − 1`. The tensor of order `ℓ` stores the weights
//! `w_{i j_1 … j_ℓ}` of hyperedges with `ℓ + 1` nodes, already including the
//! `1/N^ℓ` scaling. Indices are 0-based in the API and 1-based in files.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use itertools::Itertools;

use crate::error::{parse_err, Error, Result};

/// Tolerance used when comparing label diameters against `θ`.
pub const DIAM_TOL: f64 = 1e-12;

/// Sparse adjacency tensor of a single order.
///
/// Fully symmetric tensors store one sorted representative per hyperedge.
/// Other tensors store ordered tuples `(i, j_1, …, j_ℓ)` exactly as given.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyTensor {
    order: usize,
    symmetric: bool,
    keys: Vec<u32>,
    weights: Vec<f64>,
}

impl AdjacencyTensor {
    pub fn new(order: usize, symmetric: bool) -> Self {
        assert!(order >= 1, "order must be at least 1");
        Self {
            order,
            symmetric,
            keys: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Builds a tensor from arbitrary entries. Symmetric keys are sorted,
    /// zero weights dropped and later duplicates overwrite earlier ones.
    /// No invariant is enforced; see [`Hypergraph::validate`].
    pub fn from_entries<I>(order: usize, symmetric: bool, entries: I) -> Self
    where
        I: IntoIterator<Item = (Vec<usize>, f64)>,
    {
        let arity = order + 1;
        let mut rows: Vec<(Vec<u32>, f64)> = entries
            .into_iter()
            .map(|(idx, w)| {
                assert_eq!(idx.len(), arity, "multi-index length must be order + 1");
                let mut key: Vec<u32> = idx.iter().map(|&k| k as u32).collect();
                if symmetric {
                    key.sort_unstable();
                }
                (key, w)
            })
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let mut t = Self::new(order, symmetric);
        for (key, w) in rows {
            if t.last_key() == Some(&key[..]) {
                let n = t.weights.len();
                t.weights[n - 1] = w;
            } else {
                t.keys.extend_from_slice(&key);
                t.weights.push(w);
            }
        }
        let keep: Vec<bool> = t.weights.iter().map(|&w| w != 0.0).collect();
        if keep.iter().any(|k| !k) {
            let mut keys = Vec::with_capacity(t.keys.len());
            let mut weights = Vec::with_capacity(t.weights.len());
            for (e, &k) in keep.iter().enumerate() {
                if k {
                    keys.extend_from_slice(&t.keys[e * arity..(e + 1) * arity]);
                    weights.push(t.weights[e]);
                }
            }
            t.keys = keys;
            t.weights = weights;
        }
        t
    }

    fn last_key(&self) -> Option<&[u32]> {
        let a = self.arity();
        if self.weights.is_empty() {
            None
        } else {
            Some(&self.keys[self.keys.len() - a..])
        }
    }

    /// Appends an entry whose key is strictly greater than every stored key.
    pub(crate) fn push_sorted(&mut self, key: &[u32], w: f64) {
        debug_assert_eq!(key.len(), self.arity());
        debug_assert!(self.last_key().is_none_or(|k| k < key));
        if w != 0.0 {
            self.keys.extend_from_slice(key);
            self.weights.push(w);
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn arity(&self) -> usize {
        self.order + 1
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Stored entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&[u32], f64)> + '_ {
        self.keys.chunks_exact(self.arity()).zip(self.weights.iter().copied())
    }

    pub fn key(&self, e: usize) -> &[u32] {
        let a = self.arity();
        &self.keys[e * a..(e + 1) * a]
    }

    pub fn weight_at(&self, e: usize) -> f64 {
        self.weights[e]
    }

    fn find(&self, key: &[u32]) -> Option<usize> {
        let (mut lo, mut hi) = (0usize, self.weights.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.key(mid).cmp(key) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Weight of the ordered multi-index `(i, j_1, …, j_ℓ)`.
    pub fn get(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.arity());
        let mut key: Vec<u32> = idx.iter().map(|&k| k as u32).collect();
        if self.symmetric {
            key.sort_unstable();
        }
        self.find(&key).map_or(0.0, |e| self.weights[e])
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Calls `f(tuple, w)` for every ordered tuple `(i, j_1, …, j_ℓ)` with a
    /// nonzero weight, expanding symmetric storage over distinct permutations.
    pub fn for_each_ordered(&self, mut f: impl FnMut(&[u32], f64)) {
        for (key, w) in self.iter() {
            if self.symmetric {
                for p in distinct_permutations(key) {
                    f(&p, w);
                }
            } else {
                f(key, w);
            }
        }
    }
}

/// All distinct orderings of `key`.
pub fn distinct_permutations(key: &[u32]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = key.iter().copied().permutations(key.len()).collect();
    if !key.iter().all_unique() {
        out.sort_unstable();
        out.dedup();
    }
    out
}

/// A kind of invariant violation found by [`Hypergraph::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Loop {
        order: usize,
        index: Vec<usize>,
    },
    HeadSymmetry {
        order: usize,
        index: Vec<usize>,
        permuted: Vec<usize>,
        value: f64,
        permuted_value: f64,
    },
    FullSymmetry {
        order: usize,
        index: Vec<usize>,
        permuted: Vec<usize>,
        value: f64,
        permuted_value: f64,
    },
    Weight {
        order: usize,
        index: Vec<usize>,
        value: f64,
    },
    OutOfRange {
        order: usize,
        index: Vec<usize>,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn loops(&self) -> usize {
        self.count(|v| matches!(v, Violation::Loop { .. }))
    }

    pub fn head_symmetry(&self) -> usize {
        self.count(|v| matches!(v, Violation::HeadSymmetry { .. }))
    }

    pub fn full_symmetry(&self) -> usize {
        self.count(|v| matches!(v, Violation::FullSymmetry { .. }))
    }

    fn count(&self, pred: impl Fn(&Violation) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(v)).count()
    }
}

/// Weighted hypergraph with adjacency tensors for orders `1..max_rank`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypergraph {
    n: usize,
    max_rank: usize,
    tensors: Vec<AdjacencyTensor>,
}

impl Hypergraph {
    /// Hypergraph with all-zero tensors. `max_rank` may exceed `N`; orders
    /// `ℓ ≥ N` then have no admissible tuples.
    pub fn empty(n: usize, max_rank: usize, symmetric: bool) -> Result<Self> {
        if n == 0 || max_rank == 0 {
            return Err(Error::Parameter(format!(
                "need N ≥ 1 and max_rank ≥ 1 (got {n}, {max_rank})"
            )));
        }
        let tensors = (1..max_rank).map(|l| AdjacencyTensor::new(l, symmetric)).collect();
        Ok(Self { n, max_rank, tensors })
    }

    /// Assembles a hypergraph from tensors; missing orders are left empty.
    pub fn from_tensors(n: usize, max_rank: usize, tensors: Vec<AdjacencyTensor>) -> Result<Self> {
        let symmetric = tensors.iter().all(|t| t.is_symmetric());
        let mut h = Self::empty(n, max_rank, symmetric)?;
        for t in tensors {
            h.set_tensor(t)?;
        }
        Ok(h)
    }

    pub fn set_tensor(&mut self, t: AdjacencyTensor) -> Result<()> {
        let l = t.order();
        if l >= self.max_rank {
            return Err(Error::Parameter(format!(
                "order {l} exceeds max_rank {} - 1",
                self.max_rank
            )));
        }
        self.tensors[l - 1] = t;
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn max_rank(&self) -> usize {
        self.max_rank
    }

    /// Largest hyperedge cardinality carrying a nonzero weight (0 if none).
    pub fn rank(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| !t.is_empty())
            .map(|t| t.arity())
            .max()
            .unwrap_or(0)
    }

    pub fn tensor(&self, order: usize) -> Option<&AdjacencyTensor> {
        if order == 0 {
            return None;
        }
        self.tensors.get(order - 1)
    }

    pub fn tensors(&self) -> &[AdjacencyTensor] {
        &self.tensors
    }

    /// Orders with at least one stored entry.
    pub fn active_orders(&self) -> Vec<usize> {
        self.tensors
            .iter()
            .filter(|t| !t.is_empty())
            .map(|t| t.order())
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.tensors.iter().all(|t| t.is_symmetric())
    }

    pub fn weight(&self, idx: &[usize]) -> f64 {
        match self.tensor(idx.len().saturating_sub(1)) {
            Some(t) => t.get(idx),
            None => 0.0,
        }
    }

    /// `W = max_{ℓ, i, j⃗} N^ℓ w_{i j⃗}`.
    pub fn scaling_bound(&self) -> f64 {
        let n = self.n as f64;
        self.tensors
            .iter()
            .map(|t| n.powi(t.order() as i32) * t.max_weight())
            .fold(0.0, f64::max)
    }

    /// Exhaustive check of range, sign, loop and symmetry invariants over
    /// every stored entry.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for t in &self.tensors {
            let l = t.order();
            for (key, w) in t.iter() {
                let index: Vec<usize> = key.iter().map(|&k| k as usize).collect();
                if index.iter().any(|&k| k >= self.n) {
                    report.violations.push(Violation::OutOfRange { order: l, index });
                    continue;
                }
                if !w.is_finite() || w < 0.0 {
                    report.violations.push(Violation::Weight {
                        order: l,
                        index: index.clone(),
                        value: w,
                    });
                }
                let is_loop = if t.is_symmetric() {
                    !key.iter().all_unique()
                } else {
                    key[1..].contains(&key[0])
                };
                if is_loop {
                    report.violations.push(Violation::Loop {
                        order: l,
                        index: index.clone(),
                    });
                }
                if t.is_symmetric() {
                    continue;
                }
                for heads in key[1..].iter().copied().permutations(l) {
                    let mut p = vec![index[0]];
                    p.extend(heads.iter().map(|&k| k as usize));
                    let pw = t.get(&p);
                    if pw != w {
                        report.violations.push(Violation::HeadSymmetry {
                            order: l,
                            index: index.clone(),
                            permuted: p,
                            value: w,
                            permuted_value: pw,
                        });
                        break;
                    }
                }
                for perm in key.iter().copied().permutations(l + 1) {
                    let p: Vec<usize> = perm.iter().map(|&k| k as usize).collect();
                    let pw = t.get(&p);
                    if pw != w {
                        report.violations.push(Violation::FullSymmetry {
                            order: l,
                            index: index.clone(),
                            permuted: p,
                            value: w,
                            permuted_value: pw,
                        });
                        break;
                    }
                }
            }
        }
        report
    }

    /// Serializes to the `hypergraph v1` text format.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let symmetric = u8::from(self.is_symmetric());
        writeln!(
            out,
            "hypergraph v1 N={} max_rank={} symmetric={}",
            self.n, self.max_rank, symmetric
        )?;
        let mut line = String::new();
        for t in &self.tensors {
            for (key, w) in t.iter() {
                line.clear();
                write!(line, "{}", t.order()).unwrap();
                for &k in key {
                    write!(line, " {}", k + 1).unwrap();
                }
                writeln!(out, "{line} {w:e}")?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parses the `hypergraph v1` text format.
    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut header: Option<(usize, usize, bool)> = None;
        let mut entries: Vec<Vec<(Vec<usize>, f64)>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((n, max_rank, symmetric)) = header else {
                let h = parse_header(content).map_err(|m| parse_err(lineno, m))?;
                check_rank(h.0, h.1).map_err(|e| parse_err(lineno, e.to_string()))?;
                entries = vec![Vec::new(); h.1.saturating_sub(1)];
                header = Some(h);
                continue;
            };
            let fields: Vec<&str> = content.split_whitespace().collect();
            let l: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad order `{}`", fields[0])))?;
            if l == 0 || l >= max_rank {
                return Err(parse_err(lineno, format!("order {l} outside 1..{}", max_rank - 1)));
            }
            if fields.len() != l + 3 {
                return Err(parse_err(lineno, format!("expected {} indices and a weight", l + 1)));
            }
            let mut idx = Vec::with_capacity(l + 1);
            for f in &fields[1..l + 2] {
                let k: usize = f.parse().map_err(|_| parse_err(lineno, format!("bad index `{f}`")))?;
                if k == 0 || k > n {
                    return Err(parse_err(lineno, format!("index {k} out of range 1..{n}")));
                }
                idx.push(k - 1);
            }
            let w: f64 = fields[l + 2]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad weight `{}`", fields[l + 2])))?;
            if !w.is_finite() || w < 0.0 {
                return Err(parse_err(lineno, format!("negative or non-finite weight {w}")));
            }
            let is_loop = if symmetric {
                !idx.iter().all_unique()
            } else {
                idx[1..].contains(&idx[0])
            };
            if is_loop {
                return Err(parse_err(lineno, "loop: node repeated in hyperedge"));
            }
            let mut key = idx.clone();
            if symmetric {
                key.sort_unstable();
            }
            if !seen.insert(key) {
                return Err(parse_err(lineno, "duplicate hyperedge"));
            }
            entries[l - 1].push((idx, w));
        }
        let (n, max_rank, symmetric) = header.ok_or_else(|| parse_err(0, "missing `hypergraph v1` header"))?;
        let tensors = entries
            .into_iter()
            .enumerate()
            .map(|(e, rows)| AdjacencyTensor::from_entries(e + 1, symmetric, rows))
            .collect();
        Ok(Self { n, max_rank, tensors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

fn parse_header(s: &str) -> std::result::Result<(usize, usize, bool), String> {
    let mut it = s.split_whitespace();
    if it.next() != Some("hypergraph") || it.next() != Some("v1") {
        return Err("expected header `hypergraph v1 N=.. max_rank=.. symmetric=..`".into());
    }
    let (mut n, mut r, mut sym) = (None, None, None);
    for kv in it {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad header field `{kv}`"))?;
        let parsed: usize = v.parse().map_err(|_| format!("bad header value `{kv}`"))?;
        match k {
            "N" => n = Some(parsed),
            "max_rank" => r = Some(parsed),
            "symmetric" if parsed <= 1 => sym = Some(parsed == 1),
            _ => return Err(format!("unknown header field `{kv}`")),
        }
    }
    match (n, r, sym) {
        (Some(n), Some(r), Some(s)) => Ok((n, r, s)),
        _ => Err("header must set N, max_rank and symmetric".into()),
    }
}

fn check_rank(n: usize, max_rank: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Parameter("N must be positive".into()));
    }
    if max_rank == 0 || max_rank > n {
        return Err(Error::Parameter(format!(
            "max_rank {max_rank} must lie in 1..=N (N = {n})"
        )));
    }
    Ok(())
}

fn scale(n: usize, l: usize) -> f64 {
    1.0 / (n as f64).powi(l as i32)
}

/// `true` when an integer label diameter `d` satisfies `d ≤ θ N`.
pub fn within_diameter(d: usize, theta: f64, n: usize) -> bool {
    (d as f64) <= (theta + DIAM_TOL) * n as f64
}

/// Homogeneous-group hypergraph: weight `1/N^ℓ` on every set of distinct
/// nodes whose label diameter is at most `θ N`.
pub fn build_homogeneous(n: usize, theta: f64, max_rank: usize) -> Result<Hypergraph> {
    check_rank(n, max_rank)?;
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Parameter(format!("theta = {theta} must lie in (0, 1]")));
    }
    let mut h = Hypergraph::empty(n, max_rank, true)?;
    let span = (0..n).take_while(|&d| within_diameter(d, theta, n)).last().unwrap_or(0);
    for l in 1..max_rank {
        let w = scale(n, l);
        let t = &mut h.tensors[l - 1];
        let mut key = vec![0u32; l + 1];
        for a in 0..n {
            let hi = (a + span).min(n - 1);
            for combo in (a + 1..=hi).combinations(l) {
                key[0] = a as u32;
                for (slot, &c) in key[1..].iter_mut().zip(&combo) {
                    *slot = c as u32;
                }
                t.push_sorted(&key, w);
            }
        }
    }
    Ok(h)
}

/// Balanced-group hypergraph: weight
/// `f(|mean(j_k)/N − (N+1)/(2N)|) / N^ℓ` on sets of distinct nodes
/// (1-based labels `j_k`).
pub fn build_balanced(n: usize, f: impl Fn(f64) -> f64, max_rank: usize) -> Result<Hypergraph> {
    check_rank(n, max_rank)?;
    let mut h = Hypergraph::empty(n, max_rank, true)?;
    let nf = n as f64;
    let centre = (nf + 1.0) / (2.0 * nf);
    for l in 1..max_rank {
        let s = scale(n, l);
        let t = &mut h.tensors[l - 1];
        let mut key = vec![0u32; l + 1];
        for combo in (0..n).combinations(l + 1) {
            let sum: usize = combo.iter().map(|&k| k + 1).sum();
            let x = (sum as f64 / (l + 1) as f64 / nf - centre).abs();
            let fx = f(x);
            if !fx.is_finite() || fx < 0.0 {
                return Err(Error::Parameter(format!("f({x}) = {fx} is not a weight")));
            }
            for (slot, &c) in key.iter_mut().zip(&combo) {
                *slot = c as u32;
            }
            t.push_sorted(&key, s * fx);
        }
    }
    Ok(h)
}

/// Clique lift of a simple graph: weight `1/N^ℓ` on every `(ℓ+1)`-clique.
pub fn build_clique_lift(adjacency: &[Vec<bool>], max_rank: usize) -> Result<Hypergraph> {
    let n = adjacency.len();
    for (i, row) in adjacency.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Validation(format!("row {i} has length {}", row.len())));
        }
        if row[i] {
            return Err(Error::Validation(format!("nonzero diagonal at node {i}")));
        }
        for (j, &a) in row.iter().enumerate() {
            if a != adjacency[j][i] {
                return Err(Error::Validation(format!("asymmetric entry ({i}, {j})")));
            }
        }
    }
    check_rank(n, max_rank)?;
    let mut h = Hypergraph::empty(n, max_rank, true)?;
    let mut clique = Vec::with_capacity(max_rank);
    for v in 0..n {
        clique.push(v as u32);
        let cands: Vec<u32> = ((v + 1)..n).filter(|&u| adjacency[v][u]).map(|u| u as u32).collect();
        extend_cliques(&mut h, adjacency, &mut clique, &cands);
        clique.pop();
    }
    Ok(h)
}

fn extend_cliques(h: &mut Hypergraph, adj: &[Vec<bool>], clique: &mut Vec<u32>, cands: &[u32]) {
    if clique.len() == h.max_rank {
        return;
    }
    let n = h.n;
    for (pos, &u) in cands.iter().enumerate() {
        clique.push(u);
        let l = clique.len() - 1;
        h.tensors[l - 1].push_sorted(clique, scale(n, l));
        let next: Vec<u32> = cands[pos + 1..]
            .iter()
            .copied()
            .filter(|&x| adj[u as usize][x as usize])
            .collect();
        extend_cliques(h, adj, clique, &next);
        clique.pop();
    }
}
