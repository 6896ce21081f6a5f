//! N-agent ODE system on a weighted hypergraph with scalar states.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypergraph::{distinct_permutations, Hypergraph};
use crate::kernels::{InteractionKernel, KernelFamily};
use crate::metrics::{DiscreteMeasure, FiberedAtoms};

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub states: Vec<f64>,
    pub time: f64,
}

impl ParticleState {
    pub fn new(states: Vec<f64>, time: f64) -> Result<Self> {
        if let Some(bad) = states.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(*bad));
        }
        if !(time >= 0.0) {
            return Err(Error::Parameter(format!("time {time} must be non-negative")));
        }
        Ok(Self { states, time })
    }

    /// `n` i.i.d. uniform states on `[lo, hi)` for replica `replica`; agent `i`
    /// always receives the same draw for a given `(seed, replica)`.
    pub fn uniform(n: usize, lo: f64, hi: f64, seed: u64, replica: u64) -> Self {
        Self {
            states: crate::rng::uniform_vec(seed, replica, n, lo, hi),
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.states.iter().sum::<f64>() / self.states.len() as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    snapshots: Vec<ParticleState>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, s: ParticleState) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(s.time > last) {
                return Err(Error::Parameter(format!(
                    "snapshot time {} does not follow {last}",
                    s.time
                )));
            }
        }
        self.times.push(s.time);
        self.snapshots.push(s);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[ParticleState] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&ParticleState> {
        self.snapshots.last()
    }

    /// Snapshot whose time is within `1e-9` of `t`.
    pub fn at(&self, t: f64) -> Option<&ParticleState> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .map(|k| &self.snapshots[k])
    }
}

/// Per-agent rows of one order: heads and pre-multiplied coefficients.
#[derive(Clone, Debug)]
struct OrderPlan {
    kernel: InteractionKernel,
    offsets: Vec<usize>,
    heads: Vec<u32>,
    coefs: Vec<f64>,
}

/// Interaction lists for every agent, expanded from canonical hyperedge
/// storage once so that each force evaluation is a flat scan.
#[derive(Clone, Debug)]
pub struct ForcePlan {
    n: usize,
    orders: Vec<OrderPlan>,
}

impl ForcePlan {
    /// Rows are merged over head orderings when the kernel is symmetric in
    /// its heads.
    pub fn new(h: &Hypergraph, k: &KernelFamily) -> Result<Self> {
        Self::build(h, k, false)
    }

    /// One row per ordered head tuple with coefficient `w_{i j⃗}`.
    pub fn ordered(h: &Hypergraph, k: &KernelFamily) -> Result<Self> {
        Self::build(h, k, true)
    }

    fn build(h: &Hypergraph, fam: &KernelFamily, expand: bool) -> Result<Self> {
        let n = h.num_nodes();
        let mut orders = Vec::new();
        for kernel in fam.iter() {
            let l = kernel.order;
            if h.tensor(l).is_none() {
                return Err(Error::Config(format!(
                    "kernel of order {l} but the hypergraph has max rank {}",
                    h.max_rank()
                )));
            }
            let merge = kernel.symmetric_head && !expand;
            let mut rows: Vec<Vec<(Vec<u32>, f64)>> = vec![Vec::new(); n];
            if let Some(t) = h.tensor(l) {
                for (key, w) in t.iter() {
                    if t.is_symmetric() {
                        let mut agents: Vec<u32> = key.to_vec();
                        agents.dedup();
                        for &a in &agents {
                            let pos = key.iter().position(|&v| v == a).unwrap();
                            let mut rest: Vec<u32> = key.to_vec();
                            rest.remove(pos);
                            let perms = distinct_permutations(&rest);
                            if merge {
                                rows[a as usize].push((rest, w * perms.len() as f64));
                            } else {
                                for p in perms {
                                    rows[a as usize].push((p, w));
                                }
                            }
                        }
                    } else {
                        rows[key[0] as usize].push((key[1..].to_vec(), w));
                    }
                }
            }
            let mut offsets = Vec::with_capacity(n + 1);
            offsets.push(0);
            let total: usize = rows.iter().map(Vec::len).sum();
            let mut heads = Vec::with_capacity(total * l);
            let mut coefs = Vec::with_capacity(total);
            for r in rows {
                for (hd, c) in r {
                    heads.extend_from_slice(&hd);
                    coefs.push(c);
                }
                offsets.push(coefs.len());
            }
            orders.push(OrderPlan {
                kernel: kernel.clone(),
                offsets,
                heads,
                coefs,
            });
        }
        Ok(Self { n, orders })
    }

    pub fn num_agents(&self) -> usize {
        self.n
    }

    /// Total number of stored rows.
    pub fn rows(&self) -> usize {
        self.orders.iter().map(|o| o.coefs.len()).sum()
    }

    fn force_on(&self, i: usize, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        let xi = x[i];
        let mut total = 0.0;
        for o in &self.orders {
            let l = o.kernel.order;
            buf.resize(l, 0.0);
            let mut acc = 0.0;
            for r in o.offsets[i]..o.offsets[i + 1] {
                for (b, &j) in buf.iter_mut().zip(&o.heads[r * l..(r + 1) * l]) {
                    *b = x[j as usize];
                }
                acc += o.coefs[r] * o.kernel.eval(xi, buf);
            }
            total += acc;
        }
        total
    }

    /// `F_i = Σ_ℓ Σ_{j⃗} w_{i j⃗} K_ℓ(x_i, x_{j⃗})` for every agent.
    pub fn force(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "state length must match the hypergraph");
        (0..self.n)
            .into_par_iter()
            .map_init(Vec::new, |buf, i| self.force_on(i, x, buf))
            .collect()
    }
}

/// One-shot force evaluation.
pub fn force_particles(h: &Hypergraph, k: &KernelFamily, x: &ParticleState) -> Result<Vec<f64>> {
    if x.len() != h.num_nodes() {
        return Err(Error::Config(format!("{} states for {} nodes", x.len(), h.num_nodes())));
    }
    Ok(ForcePlan::new(h, k)?.force(&x.states))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Euler,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "euler" => Ok(Method::Euler),
            _ => Err(Error::Config(format!("unknown integrator '{s}'"))),
        }
    }
}

/// Time grid `0, dt, 2dt, …, T` with the last step shortened to hit `T`.
pub fn time_grid(t_end: f64, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut k = 1u64;
    loop {
        let t = k as f64 * dt;
        if t >= t_end - 1e-12 * t_end.max(1.0) {
            break;
        }
        out.push(t);
        k += 1;
    }
    if t_end > 0.0 {
        out.push(t_end);
    }
    out
}

fn step(plan: &ForcePlan, x: &[f64], h: f64, method: Method, drift: Option<&[f64]>) -> Vec<f64> {
    let rhs = |y: &[f64]| -> Vec<f64> {
        let mut f = plan.force(y);
        if let Some(d) = drift {
            for (a, b) in f.iter_mut().zip(d) {
                *a += b;
            }
        }
        f
    };
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u + s * v).collect() };
    match method {
        Method::Euler => axpy(x, h, &rhs(x)),
        Method::Rk4 => {
            let k1 = rhs(x);
            let k2 = rhs(&axpy(x, 0.5 * h, &k1));
            let k3 = rhs(&axpy(x, 0.5 * h, &k2));
            let k4 = rhs(&axpy(x, h, &k3));
            (0..x.len())
                .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        }
    }
}

/// Integrates from `x0` and records the state at each of `record` (sorted,
/// within `[x0.time, T]`), using steps of at most `dt` that land exactly on
/// every recorded time.
pub fn integrate_at(
    plan: &ForcePlan,
    x0: &ParticleState,
    record: &[f64],
    dt: f64,
    method: Method,
    drift: Option<&[f64]>,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt = {dt} must be positive")));
    }
    if x0.len() != plan.num_agents() {
        return Err(Error::Config(format!(
            "{} states for {} agents",
            x0.len(),
            plan.num_agents()
        )));
    }
    if let Some(d) = drift {
        if d.len() != x0.len() {
            return Err(Error::Config("drift length must match the number of agents".into()));
        }
    }
    let mut traj = Trajectory::new();
    let mut x = x0.states.clone();
    let mut t = x0.time;
    for &target in record {
        if target < t - 1e-12 {
            return Err(Error::Parameter(format!("record time {target} precedes {t}")));
        }
        let span = target - t;
        let steps = (span / dt - 1e-9).ceil().max(0.0) as u64;
        for s in 0..steps {
            let t_next = if s + 1 == steps { target } else { t + dt };
            x = step(plan, &x, t_next - t, method, drift);
            t = t_next;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(t));
            }
        }
        t = target;
        traj.push(ParticleState {
            states: x.clone(),
            time: t,
        })?;
    }
    Ok(traj)
}

/// Snapshots at `0, dt, 2dt, …, T`.
pub fn integrate(
    h: &Hypergraph,
    k: &KernelFamily,
    x0: &ParticleState,
    t_end: f64,
    dt: f64,
    method: Method,
    drift: Option<&[f64]>,
) -> Result<Trajectory> {
    if !(t_end >= 0.0) {
        return Err(Error::Parameter(format!("T = {t_end} must be non-negative")));
    }
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt = {dt} must be positive")));
    }
    let plan = ForcePlan::new(h, k)?;
    let times: Vec<f64> = time_grid(t_end, dt).into_iter().map(|s| s + x0.time).collect();
    integrate_at(&plan, x0, &times, dt, method, drift)
}

/// Fiber `i` of `N` carries `δ_{X_i}`.
pub fn empirical_fibered(x: &ParticleState) -> FiberedAtoms {
    FiberedAtoms {
        fibers: x.states.iter().map(|&v| DiscreteMeasure::dirac(v)).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McKeanConstants {
    pub c_tilde_inf: f64,
    pub c_p: f64,
    pub eps_p: f64,
}

/// Constants of the particle-to-surrogate error estimate; at `p = 1` the
/// inner `ℓ_q` sums become maxima.
pub fn mckean_error_constants(h: &Hypergraph, k: &KernelFamily, p: f64) -> Result<McKeanConstants> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::Parameter(format!("p = {p} must lie in [1, 2]")));
    }
    let q = if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) };
    let plan = ForcePlan::ordered(h, k)?;
    let per_agent: Vec<(f64, f64, f64)> = (0..plan.n)
        .into_par_iter()
        .map(|i| {
            let (mut lip_sum, mut cp, mut eps) = (0.0, 0.0, 0.0);
            for o in &plan.orders {
                let l = o.kernel.order;
                let range = o.offsets[i]..o.offsets[i + 1];
                let rows: Vec<(&[u32], f64)> = range.map(|r| (&o.heads[r * l..(r + 1) * l], o.coefs[r])).collect();
                lip_sum += o.kernel.lipschitz * rows.iter().map(|r| r.1).sum::<f64>();
                let mut mixed = 0.0;
                for kk in 0..l {
                    let mut groups: Vec<(Vec<u32>, f64)> = rows
                        .iter()
                        .map(|(hd, w)| {
                            let mut rest = hd.to_vec();
                            rest.remove(kk);
                            (rest, *w)
                        })
                        .collect();
                    groups.sort_by(|a, b| a.0.cmp(&b.0));
                    let mut start = 0;
                    while start < groups.len() {
                        let mut end = start;
                        while end < groups.len() && groups[end].0 == groups[start].0 {
                            end += 1;
                        }
                        let block = &groups[start..end];
                        mixed += if q.is_infinite() {
                            block.iter().map(|g| g.1).fold(0.0, f64::max)
                        } else {
                            block.iter().map(|g| g.1.powf(q)).sum::<f64>().powf(1.0 / q)
                        };
                        start = end;
                    }
                }
                cp += o.kernel.lipschitz * mixed;
                let fact: f64 = (1..=l).map(|v| v as f64).product();
                eps += fact.sqrt() * o.kernel.bound * rows.iter().map(|r| r.1 * r.1).sum::<f64>().sqrt();
            }
            (lip_sum, cp, eps)
        })
        .collect();
    let n = plan.n.max(1) as f64;
    Ok(McKeanConstants {
        c_tilde_inf: per_agent.iter().map(|a| a.0).fold(0.0, f64::max),
        c_p: per_agent.iter().map(|a| a.1.powf(p)).sum::<f64>().powf(1.0 / p),
        eps_p: 2.0 * (per_agent.iter().map(|a| a.2.powf(p)).sum::<f64>() / n).powf(1.0 / p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::{build_homogeneous, AdjacencyTensor};
    use crate::kernels::{kuramoto_kernel, linear_mean_kernel, opinion_diam_kernel, skardal_kernels};
    use approx::assert_abs_diff_eq;
    use itertools::Itertools;
    use rand::Rng;

    fn pair_graph() -> Hypergraph {
        let t = AdjacencyTensor::from_entries(1, false, [(vec![0, 1], 0.5), (vec![1, 0], 0.5)]);
        Hypergraph::from_tensors(2, 2, vec![t]).unwrap()
    }

    fn all_to_all(n: usize, order: usize) -> Hypergraph {
        let w = 1.0 / (n as f64).powi(order as i32);
        let t = AdjacencyTensor::from_entries(order, true, (0..n).combinations(order + 1).map(|c| (c, w)));
        let mut h = Hypergraph::empty(n, order + 1, true).unwrap();
        h.set_tensor(t).unwrap();
        h
    }

    /// Dense loop over every ordered tuple.
    fn naive_force(h: &Hypergraph, k: &KernelFamily, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut f = 0.0;
                for kernel in k.iter() {
                    let l = kernel.order;
                    for js in (0..l).map(|_| 0..n).multi_cartesian_product() {
                        let mut idx = vec![i];
                        idx.extend(&js);
                        let w = h.weight(&idx);
                        if w != 0.0 {
                            let heads: Vec<f64> = js.iter().map(|&j| x[j]).collect();
                            f += w * kernel.eval(x[i], &heads);
                        }
                    }
                }
                f
            })
            .collect()
    }

    #[test]
    fn force_examples() {
        let k = KernelFamily::single(linear_mean_kernel(1));
        let f = force_particles(&pair_graph(), &k, &ParticleState::new(vec![0.0, 1.0], 0.0).unwrap()).unwrap();
        assert_eq!(f, vec![0.5, -0.5]);

        let k2 = KernelFamily::single(linear_mean_kernel(2));
        let f = force_particles(&all_to_all(6, 2), &k2, &ParticleState::new(vec![0.3; 6], 0.0).unwrap()).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-15));

        let h = build_homogeneous(3, 1.0, 3).unwrap();
        let f = force_particles(&h, &k2, &ParticleState::new(vec![0.0, 0.0, 3.0], 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(f[0], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn kernel_order_must_exist() {
        let k = KernelFamily::single(linear_mean_kernel(3));
        assert!(matches!(ForcePlan::new(&pair_graph(), &k), Err(Error::Config(_))));
        let k = KernelFamily::single(linear_mean_kernel(1));
        assert!(force_particles(&pair_graph(), &k, &ParticleState::new(vec![0.0; 3], 0.0).unwrap()).is_err());
    }

    #[test]
    fn force_matches_dense_oracle() {
        let mut rng = crate::rng::seeded(4);
        let families = [
            KernelFamily::new(vec![
                linear_mean_kernel(1),
                linear_mean_kernel(2),
                linear_mean_kernel(3),
            ])
            .unwrap(),
            KernelFamily::new(vec![kuramoto_kernel(1), kuramoto_kernel(2), kuramoto_kernel(3)]).unwrap(),
            skardal_kernels(),
            KernelFamily::new(vec![opinion_diam_kernel(2, -0.7), opinion_diam_kernel(3, 0.4)]).unwrap(),
        ];
        for n in [4usize, 7, 10] {
            for fam in &families {
                let h = crate::hypergraph::build_balanced(n, |x| 1.0 - x, 4).unwrap();
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
                let fast = force_particles(&h, fam, &ParticleState::new(x.clone(), 0.0).unwrap()).unwrap();
                for (a, b) in fast.iter().zip(naive_force(&h, fam, &x)) {
                    assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
                }
            }
        }
        // Non-symmetric storage.
        let n = 5;
        let entries: Vec<(Vec<usize>, f64)> = (0..40)
            .map(|_| {
                let i = rng.gen_range(0..n);
                let mut j1 = rng.gen_range(0..n);
                while j1 == i {
                    j1 = rng.gen_range(0..n);
                }
                let mut j2 = rng.gen_range(0..n);
                while j2 == i || j2 == j1 {
                    j2 = rng.gen_range(0..n);
                }
                (vec![i, j1, j2], rng.gen_range(0.0..0.2))
            })
            .collect();
        let t = AdjacencyTensor::from_entries(2, false, entries);
        let h = Hypergraph::from_tensors(n, 3, vec![t]).unwrap();
        let fam = skardal_kernels();
        let fam2 = KernelFamily::single(fam.get(2).unwrap().clone());
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
        let fast = force_particles(&h, &fam2, &ParticleState::new(x.clone(), 0.0).unwrap()).unwrap();
        for (a, b) in fast.iter().zip(naive_force(&h, &fam2, &x)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn translation_invariance() {
        let h = build_homogeneous(12, 0.3, 3).unwrap();
        let k = KernelFamily::new(vec![linear_mean_kernel(1), linear_mean_kernel(2)]).unwrap();
        let x = ParticleState::uniform(12, 0.0, 1.0, 3, 0);
        let shifted = ParticleState::new(x.states.iter().map(|v| v + 0.25).collect(), 0.0).unwrap();
        let a = force_particles(&h, &k, &x).unwrap();
        let b = force_particles(&h, &k, &shifted).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-14);
        }
        let ta = integrate(&h, &k, &x, 1.0, 0.1, Method::Rk4, None).unwrap();
        let tb = integrate(&h, &k, &shifted, 1.0, 0.1, Method::Rk4, None).unwrap();
        for (u, v) in ta.last().unwrap().states.iter().zip(&tb.last().unwrap().states) {
            assert_abs_diff_eq!(u + 0.25, *v, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_agent_contraction() {
        let k = KernelFamily::single(linear_mean_kernel(1));
        let x0 = ParticleState::new(vec![0.0, 1.0], 0.0).unwrap();
        let tr = integrate(&pair_graph(), &k, &x0, 1.0, 0.01, Method::Rk4, None).unwrap();
        assert_eq!(tr.len(), 101);
        assert_abs_diff_eq!(tr.last().unwrap().time, 1.0);
        let expect = 0.5 * (1.0 - (-1.0f64).exp());
        assert_abs_diff_eq!(tr.last().unwrap().states[0], expect, epsilon = 1e-6);
        assert_abs_diff_eq!(expect, 0.31606, epsilon = 1e-5);
    }

    #[test]
    fn final_step_is_shortened() {
        let k = KernelFamily::single(linear_mean_kernel(1));
        let x0 = ParticleState::new(vec![0.0, 1.0], 0.0).unwrap();
        let tr = integrate(&pair_graph(), &k, &x0, 0.25, 0.1, Method::Rk4, None).unwrap();
        assert_eq!(tr.times(), &[0.0, 0.1, 0.2, 0.25]);
        let tr = integrate(&pair_graph(), &k, &x0, 0.0, 0.1, Method::Rk4, None).unwrap();
        assert_eq!(tr.len(), 1);
        assert!(integrate(&pair_graph(), &k, &x0, 1.0, 0.0, Method::Rk4, None).is_err());
    }

    #[test]
    fn rk4_local_error_order_five() {
        // Step-halving on a smooth problem: one-step error scales like h^5.
        let k = KernelFamily::single(kuramoto_kernel(1));
        let h = pair_graph();
        let plan = ForcePlan::new(&h, &k).unwrap();
        let x0 = vec![0.1, 1.3];
        let reference = |t: f64| {
            let x = ParticleState::new(x0.clone(), 0.0).unwrap();
            integrate_at(&plan, &x, &[t], t / 512.0, Method::Rk4, None)
                .unwrap()
                .last()
                .unwrap()
                .states[0]
        };
        let one = |t: f64| step(&plan, &x0, t, Method::Rk4, None)[0];
        let e1 = (one(0.4) - reference(0.4)).abs();
        let e2 = (one(0.2) - reference(0.2)).abs();
        let ratio = (e1 / e2).log2();
        assert!((ratio - 5.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn zero_hypergraph_is_stationary() {
        let h = Hypergraph::empty(5, 3, true).unwrap();
        let k = KernelFamily::new(vec![linear_mean_kernel(1), linear_mean_kernel(2)]).unwrap();
        let x0 = ParticleState::uniform(5, 0.0, 1.0, 1, 0);
        let tr = integrate(&h, &k, &x0, 2.0, 0.1, Method::Euler, None).unwrap();
        assert!(tr.snapshots().iter().all(|s| s.states == x0.states));
    }

    #[test]
    fn drift_moves_agents() {
        let h = Hypergraph::empty(3, 2, true).unwrap();
        let k = KernelFamily::single(kuramoto_kernel(1));
        let x0 = ParticleState::new(vec![0.0; 3], 0.0).unwrap();
        let tr = integrate(&h, &k, &x0, 1.0, 0.1, Method::Rk4, Some(&[1.0, 2.0, -1.0])).unwrap();
        for (a, b) in tr.last().unwrap().states.iter().zip([1.0, 2.0, -1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_finite_states_abort() {
        let k = KernelFamily::single(crate::kernels::custom_kernel(
            1,
            |x, _| x * x,
            1.0,
            1.0,
            false,
            (0.0, 1.0),
        ));
        let x0 = ParticleState::new(vec![10.0, 10.0], 0.0).unwrap();
        let err = integrate(&pair_graph(), &k, &x0, 10.0, 0.5, Method::Euler, None).unwrap_err();
        assert!(matches!(err, Error::NonFinite(t) if t > 0.0));
        assert!(ParticleState::new(vec![f64::NAN], 0.0).is_err());
    }

    #[test]
    fn mean_conservation() {
        let k = KernelFamily::single(linear_mean_kernel(1));
        let h = all_to_all(20, 1);
        let x0 = ParticleState::uniform(20, 0.0, 1.0, 9, 0);
        let tr = integrate(&h, &k, &x0, 10.0, 0.05, Method::Rk4, None).unwrap();
        assert_abs_diff_eq!(tr.last().unwrap().mean(), x0.mean(), epsilon = 1e-12);
    }

    #[test]
    fn pairwise_identity_at_three_agents() {
        // Σ_i F_i vanishes for all-to-all order 2 by exchanging indices.
        let h = all_to_all(3, 2);
        let k = KernelFamily::single(linear_mean_kernel(2));
        let mut rng = crate::rng::seeded(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let f = naive_force(&h, &k, &x);
            let s = x.iter().sum::<f64>();
            for i in 0..3 {
                assert_abs_diff_eq!(f[i], 2.0 * (s - 3.0 * x[i]) / 18.0, epsilon = 1e-12);
            }
            assert!(f.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_fibers() {
        let e = empirical_fibered(&ParticleState::new(vec![0.2, 0.8], 0.0).unwrap());
        assert_eq!(e.fiber_at(0.3).atoms(), &[(0.2, 1.0)]);
        assert_eq!(e.fiber_at(0.6).atoms(), &[(0.8, 1.0)]);
        assert_eq!(e.marginal().atoms(), &[(0.2, 0.5), (0.8, 0.5)]);
    }

    #[test]
    fn mckean_all_to_all() {
        let k = KernelFamily::single(kuramoto_kernel(1));
        let h = all_to_all(100, 1);
        let c = mckean_error_constants(&h, &k, 2.0).unwrap();
        assert_abs_diff_eq!(c.eps_p, 2.0 * 99f64.sqrt() / 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.eps_p, 0.1989975, epsilon = 1e-7);
        assert_abs_diff_eq!(c.c_tilde_inf, 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(c.c_p, (100.0 * 99.0 / 1e4f64).sqrt(), epsilon = 1e-12);
        let c1 = mckean_error_constants(&h, &k, 1.0).unwrap();
        assert_abs_diff_eq!(c1.c_p, 1.0, epsilon = 1e-12);
        assert!(mckean_error_constants(&h, &k, 2.5).is_err());
        let zero = Hypergraph::empty(10, 2, true).unwrap();
        let c = mckean_error_constants(&zero, &k, 1.5).unwrap();
        assert_eq!((c.c_tilde_inf, c.c_p, c.eps_p), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mckean_homogeneous_matches_dense_loop() {
        let n = 100;
        let h = build_homogeneous(n, 0.1, 3).unwrap();
        let kern = linear_mean_kernel(2);
        let k = KernelFamily::single(kern.clone());
        for p in [1.0, 1.5, 2.0] {
            let c = mckean_error_constants(&h, &k, p).unwrap();
            let q = if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) };
            let (mut ctil, mut cp, mut eps) = (0.0f64, 0.0, 0.0);
            for i in 0..n {
                let (mut s1, mut s2) = (0.0, 0.0);
                let mut mixed = 0.0;
                for a in 0..n {
                    let mut col = 0.0f64;
                    let mut col_max = 0.0f64;
                    for b in 0..n {
                        let w = h.weight(&[i, a, b]);
                        s1 += w;
                        s2 += w * w;
                        col += w.powf(q.min(1e300));
                        col_max = col_max.max(w);
                    }
                    // Heads are exchangeable, so both k contribute equally.
                    mixed += 2.0 * if q.is_infinite() { col_max } else { col.powf(1.0 / q) };
                }
                ctil = ctil.max(kern.lipschitz * s1);
                cp += (kern.lipschitz * mixed).powf(p);
                eps += (2f64.sqrt() * kern.bound * s2.sqrt()).powf(p);
            }
            assert_abs_diff_eq!(c.c_tilde_inf, ctil, epsilon = 1e-12);
            assert_abs_diff_eq!(c.c_p, cp.powf(1.0 / p), epsilon = 1e-10);
            assert_abs_diff_eq!(c.eps_p, 2.0 * (eps / n as f64).powf(1.0 / p), epsilon = 1e-12);
        }
    }

    #[test]
    fn trajectory_requires_increasing_times() {
        let mut t = Trajectory::new();
        t.push(ParticleState::new(vec![0.0], 0.0).unwrap()).unwrap();
        assert!(t.push(ParticleState::new(vec![0.0], 0.0).unwrap()).is_err());
        assert!(t.at(0.0).is_some());
    }
}
