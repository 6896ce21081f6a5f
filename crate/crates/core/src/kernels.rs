//! Interaction kernels `K_ℓ(x, x_1, …, x_ℓ)` for scalar states.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Scalar factor of a separable term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Factor {
    One,
    Linear,
    /// `e^{i c x}`.
    Phase(f64),
}

impl Factor {
    #[inline]
    pub fn eval(self, x: f64) -> Complex64 {
        match self {
            Factor::One => Complex64::new(1.0, 0.0),
            Factor::Linear => Complex64::new(x, 0.0),
            Factor::Phase(c) => Complex64::from_polar(1.0, c * x),
        }
    }
}

/// Rank-one term `coef · a(x) · Π_k b_k(x_k)`; a kernel with a separable
/// decomposition equals the real part of the sum of its terms.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableTerm {
    pub coef: Complex64,
    pub tail: Factor,
    pub heads: Vec<Factor>,
}

impl SeparableTerm {
    pub fn eval(&self, x: f64, heads: &[f64]) -> Complex64 {
        let mut v = self.coef * self.tail.eval(x);
        for (b, &y) in self.heads.iter().zip(heads) {
            v *= b.eval(y);
        }
        v
    }
}

type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelKind {
    LinearMean,
    Kuramoto,
    /// Phase-reduction kernels of orders 1, 2 and 3.
    Skardal,
    Opinion {
        lambda: f64,
    },
    Custom(ScalarFn),
}

impl fmt::Debug for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::LinearMean => write!(f, "LinearMean"),
            KernelKind::Kuramoto => write!(f, "Kuramoto"),
            KernelKind::Skardal => write!(f, "Skardal"),
            KernelKind::Opinion { lambda } => write!(f, "Opinion(lambda={lambda})"),
            KernelKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// A kernel of one order with its bounded-Lipschitz constants relative to a
/// declared state box.
#[derive(Clone, Debug)]
pub struct InteractionKernel {
    pub order: usize,
    pub kind: KernelKind,
    /// `B_ℓ`.
    pub bound: f64,
    /// `L_ℓ`.
    pub lipschitz: f64,
    pub symmetric_head: bool,
    pub separable: Option<Vec<SeparableTerm>>,
    pub state_box: (f64, f64),
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn diameter(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    hi - lo
}

fn linear_terms(order: usize) -> Vec<SeparableTerm> {
    let mut terms: Vec<SeparableTerm> = (0..order)
        .map(|k| {
            let mut heads = vec![Factor::One; order];
            heads[k] = Factor::Linear;
            SeparableTerm {
                coef: Complex64::new(1.0 / order as f64, 0.0),
                tail: Factor::One,
                heads,
            }
        })
        .collect();
    terms.push(SeparableTerm {
        coef: Complex64::new(-1.0, 0.0),
        tail: Factor::Linear,
        heads: vec![Factor::One; order],
    });
    terms
}

/// `sin(c_0 x + Σ c_k x_k)` as a single complex term.
fn sine_term(tail: f64, heads: &[f64]) -> Vec<SeparableTerm> {
    vec![SeparableTerm {
        coef: Complex64::new(0.0, -1.0),
        tail: Factor::Phase(tail),
        heads: heads.iter().map(|&c| Factor::Phase(c)).collect(),
    }]
}

impl InteractionKernel {
    #[inline]
    pub fn eval(&self, x: f64, heads: &[f64]) -> f64 {
        debug_assert_eq!(heads.len(), self.order);
        match &self.kind {
            KernelKind::LinearMean => mean(heads) - x,
            KernelKind::Kuramoto => (heads.iter().sum::<f64>() - self.order as f64 * x).sin(),
            KernelKind::Skardal => match self.order {
                1 => (heads[0] - x).sin(),
                2 => (2.0 * heads[0] - heads[1] - x).sin(),
                _ => (heads[0] + heads[1] - heads[2] - x).sin(),
            },
            KernelKind::Opinion { lambda } => (lambda * diameter(heads)).exp() * (mean(heads) - x),
            KernelKind::Custom(f) => f(x, heads),
        }
    }

    /// `BL_ℓ = max(B_ℓ, L_ℓ)`.
    pub fn bl(&self) -> f64 {
        self.bound.max(self.lipschitz)
    }

    /// Recomputes the box-relative constants of the built-in kernels.
    pub fn on_box(mut self, lo: f64, hi: f64) -> Self {
        assert!(hi > lo, "empty state box");
        self.state_box = (lo, hi);
        let width = hi - lo;
        match self.kind {
            KernelKind::LinearMean => {
                self.bound = width;
                self.lipschitz = 2.0;
            }
            KernelKind::Opinion { lambda } => {
                let e = (lambda.max(0.0) * width).exp();
                self.bound = width * e;
                self.lipschitz = e * (2.0 + 2.0 * lambda.abs() * width);
            }
            _ => {}
        }
        self
    }

    /// Checks the declared separable decomposition against `eval`.
    pub fn verify_separable(&self, samples: usize, seed: u64) -> Result<()> {
        let Some(terms) = &self.separable else {
            return Ok(());
        };
        let mut rng = crate::rng::seeded(seed);
        let (lo, hi) = self.state_box;
        let mut heads = vec![0.0; self.order];
        for _ in 0..samples {
            let x = rng.gen_range(lo..hi);
            for h in heads.iter_mut() {
                *h = rng.gen_range(lo..hi);
            }
            let direct = self.eval(x, &heads);
            let sep: f64 = terms.iter().map(|t| t.eval(x, &heads).re).sum();
            if (direct - sep).abs() > 1e-12 * (1.0 + direct.abs()) {
                return Err(Error::Config(format!(
                    "separable decomposition of order-{} kernel disagrees: {direct} vs {sep}",
                    self.order
                )));
            }
        }
        Ok(())
    }
}

/// `K_ℓ = mean(x_k) − x` on the state box `[0, 1]`.
pub fn linear_mean_kernel(order: usize) -> InteractionKernel {
    assert!(order >= 1);
    InteractionKernel {
        order,
        kind: KernelKind::LinearMean,
        bound: 1.0,
        lipschitz: 2.0,
        symmetric_head: true,
        separable: Some(linear_terms(order)),
        state_box: (0.0, 1.0),
    }
}

/// `K_ℓ = sin(x_1 + … + x_ℓ − ℓ x)`.
pub fn kuramoto_kernel(order: usize) -> InteractionKernel {
    assert!(order >= 1);
    InteractionKernel {
        order,
        kind: KernelKind::Kuramoto,
        bound: 1.0,
        lipschitz: order as f64,
        symmetric_head: true,
        separable: Some(sine_term(-(order as f64), &vec![1.0; order])),
        state_box: (-std::f64::consts::PI, std::f64::consts::PI),
    }
}

/// `{sin(x_1 − x), sin(2x_1 − x_2 − x), sin(x_1 + x_2 − x_3 − x)}`.
pub fn skardal_kernels() -> KernelFamily {
    let make = |order: usize, lip: f64, heads: &[f64], symmetric_head: bool| InteractionKernel {
        order,
        kind: KernelKind::Skardal,
        bound: 1.0,
        lipschitz: lip,
        symmetric_head,
        separable: Some(sine_term(-1.0, heads)),
        state_box: (-std::f64::consts::PI, std::f64::consts::PI),
    };
    KernelFamily::new(vec![
        make(1, 1.0, &[1.0], true),
        make(2, 2.0, &[2.0, -1.0], false),
        make(3, 1.0, &[1.0, 1.0, -1.0], false),
    ])
    .expect("distinct orders")
}

/// `K_ℓ = exp(λ·diam(x_1..x_ℓ)) (mean(x_k) − x)` on the state box `[0, 1]`.
pub fn opinion_diam_kernel(order: usize, lambda: f64) -> InteractionKernel {
    assert!(order >= 1);
    InteractionKernel {
        order,
        kind: KernelKind::Opinion { lambda },
        bound: 0.0,
        lipschitz: 0.0,
        symmetric_head: true,
        separable: (lambda == 0.0).then(|| linear_terms(order)),
        state_box: (0.0, 1.0),
    }
    .on_box(0.0, 1.0)
}

/// User-supplied kernel with declared constants.
pub fn custom_kernel(
    order: usize,
    f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    bound: f64,
    lipschitz: f64,
    symmetric_head: bool,
    state_box: (f64, f64),
) -> InteractionKernel {
    InteractionKernel {
        order,
        kind: KernelKind::Custom(Arc::new(f)),
        bound,
        lipschitz,
        symmetric_head,
        separable: None,
        state_box,
    }
}

/// Kernels with distinct orders, sorted by order.
#[derive(Clone, Debug, Default)]
pub struct KernelFamily {
    kernels: Vec<InteractionKernel>,
}

impl KernelFamily {
    pub fn new(mut kernels: Vec<InteractionKernel>) -> Result<Self> {
        kernels.sort_by_key(|k| k.order);
        if kernels.windows(2).any(|w| w[0].order == w[1].order) {
            return Err(Error::Parameter("kernel orders must be distinct".into()));
        }
        Ok(Self { kernels })
    }

    pub fn single(k: InteractionKernel) -> Self {
        Self { kernels: vec![k] }
    }

    pub fn get(&self, order: usize) -> Option<&InteractionKernel> {
        self.kernels.iter().find(|k| k.order == order)
    }

    pub fn orders(&self) -> Vec<usize> {
        self.kernels.iter().map(|k| k.order).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &InteractionKernel> {
        self.kernels.iter()
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Applies [`InteractionKernel::on_box`] to every kernel.
    pub fn on_box(self, lo: f64, hi: f64) -> Self {
        Self {
            kernels: self.kernels.into_iter().map(|k| k.on_box(lo, hi)).collect(),
        }
    }
}

/// Outcome of [`check_assumption1`].
#[derive(Clone, Debug, Default)]
pub struct Assumption1Report {
    /// `Σ_ℓ √(ℓ!) B_ℓ / η^ℓ`.
    pub bound_sum: f64,
    /// `Σ_ℓ ℓ L_ℓ`.
    pub lipschitz_sum: f64,
    /// `(order, observed |K|)` samples exceeding `B_ℓ`.
    pub bound_violations: Vec<(usize, f64)>,
    /// `(order, observed difference quotient)` samples exceeding `L_ℓ`.
    pub lipschitz_violations: Vec<(usize, f64)>,
    /// Orders where a head permutation changed the value.
    pub asymmetric: Vec<usize>,
    /// Orders declared head-symmetric but observed asymmetric.
    pub symmetry_violations: Vec<usize>,
}

impl Assumption1Report {
    pub fn is_ok(&self) -> bool {
        self.bound_violations.is_empty() && self.lipschitz_violations.is_empty() && self.symmetry_violations.is_empty()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Scaling sums of the kernel family plus sampled bound, Lipschitz and
/// head-symmetry checks inside each kernel's state box.
pub fn check_assumption1(family: &KernelFamily, eta: f64, samples: usize, seed: u64) -> Result<Assumption1Report> {
    if eta <= 0.0 && family.len() > 1 {
        return Err(Error::Parameter(format!(
            "eta = {eta} must be positive for a family with several orders"
        )));
    }
    let mut r = Assumption1Report::default();
    let mut rng = crate::rng::seeded(seed);
    const SLACK: f64 = 1e-9;
    for k in family.iter() {
        let l = k.order;
        r.bound_sum += if eta > 0.0 {
            factorial(l).sqrt() * k.bound / eta.powi(l as i32)
        } else if k.bound > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        r.lipschitz_sum += l as f64 * k.lipschitz;

        let (lo, hi) = k.state_box;
        let width = hi - lo;
        let mut p = vec![0.0; l + 1];
        let mut q = vec![0.0; l + 1];
        let (mut worst_b, mut worst_l) = (0.0f64, 0.0f64);
        let mut asym = false;
        for s in 0..samples {
            for v in p.iter_mut() {
                *v = rng.gen_range(lo..hi);
            }
            let scale = if s % 2 == 0 { width } else { 1e-3 * width };
            for (a, &b) in q.iter_mut().zip(&p) {
                *a = (b + scale * rng.gen_range(-0.5..0.5)).clamp(lo, hi);
            }
            let vp = k.eval(p[0], &p[1..]);
            let vq = k.eval(q[0], &q[1..]);
            if vp.abs() > k.bound + SLACK {
                worst_b = worst_b.max(vp.abs());
            }
            let dist: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
            if (vp - vq).abs() > k.lipschitz * dist + SLACK {
                worst_l = worst_l.max((vp - vq).abs() / dist);
            }
            if l >= 2 {
                let mut heads = p[1..].to_vec();
                let a = rng.gen_range(0..l);
                let b = (a + 1 + rng.gen_range(0..l - 1)) % l;
                heads.swap(a, b);
                if (k.eval(p[0], &heads) - vp).abs() > 1e-12 * (1.0 + vp.abs()) {
                    asym = true;
                }
            }
        }
        if worst_b > 0.0 {
            r.bound_violations.push((l, worst_b));
        }
        if worst_l > 0.0 {
            r.lipschitz_violations.push((l, worst_l));
        }
        if asym {
            r.asymmetric.push(l);
            if k.symmetric_head {
                r.symmetry_violations.push(l);
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn linear_mean_examples() {
        let k = linear_mean_kernel(2);
        assert_eq!(k.eval(0.0, &[1.0, 0.0]), 0.5);
        assert_eq!(k.eval(0.3, &[0.3, 0.3]), 0.0);
        assert_eq!(linear_mean_kernel(3).eval(0.0, &[1.0, 1.0, 1.0]), 1.0);
        let k = k.on_box(-0.1, 1.1);
        assert!((k.bound - 1.2).abs() < 1e-15);
        assert_eq!(k.lipschitz, 2.0);
    }

    #[test]
    fn kuramoto_examples() {
        assert!((kuramoto_kernel(1).eval(0.0, &[PI / 2.0]) - 1.0).abs() < 1e-15);
        assert!(kuramoto_kernel(2).eval(0.7, &[0.7, 0.7]).abs() < 1e-15);
        assert!((kuramoto_kernel(2).eval(0.0, &[PI / 4.0, PI / 4.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn skardal_examples() {
        let f = skardal_kernels();
        let k2 = f.get(2).unwrap();
        assert!(k2.eval(0.0, &[PI / 4.0, PI / 2.0]).abs() < 1e-15);
        assert!(k2.eval(0.4, &[0.4, 0.4]).abs() < 1e-15);
        let k3 = f.get(3).unwrap();
        assert!((k3.eval(0.0, &[1.0, 0.0, 0.0]) - 1f64.sin()).abs() < 1e-15);
        assert!((k3.eval(0.0, &[0.0, 0.0, 1.0]) + 1f64.sin()).abs() < 1e-15);
        assert!(!k2.symmetric_head && !k3.symmetric_head);
    }

    #[test]
    fn opinion_examples() {
        assert_eq!(opinion_diam_kernel(2, 0.0).eval(0.0, &[1.0, 0.0]), 0.5);
        assert_eq!(opinion_diam_kernel(2, -1.0).eval(0.0, &[1.0, 1.0]), 1.0);
        let v = opinion_diam_kernel(2, -1.0).eval(0.0, &[0.0, 2.0]);
        assert!((v - 0.135_335_283_236_612_7).abs() < 1e-12);
    }

    #[test]
    fn opinion_lambda_zero_equals_linear_mean() {
        let mut rng = crate::rng::seeded(9);
        let a = opinion_diam_kernel(3, 0.0);
        let b = linear_mean_kernel(3);
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-2.0..2.0);
            let h: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert_eq!(a.eval(x, &h), b.eval(x, &h));
        }
    }

    #[test]
    fn separable_decompositions_match() {
        let mut ks = vec![
            linear_mean_kernel(1),
            linear_mean_kernel(2),
            linear_mean_kernel(3),
            kuramoto_kernel(1),
            kuramoto_kernel(3),
            opinion_diam_kernel(2, 0.0),
        ];
        ks.extend(skardal_kernels().iter().cloned());
        for k in &ks {
            k.verify_separable(1000, 4).unwrap();
        }
    }

    #[test]
    fn wrong_decomposition_is_caught() {
        let mut k = linear_mean_kernel(2);
        k.separable = Some(
            linear_terms(1)
                .into_iter()
                .map(|mut t| {
                    t.heads.push(Factor::One);
                    t
                })
                .collect(),
        );
        assert!(k.verify_separable(100, 1).is_err());
    }

    #[test]
    fn builtin_kernels_respect_constants() {
        let families = [
            KernelFamily::new(vec![
                linear_mean_kernel(1),
                linear_mean_kernel(2),
                linear_mean_kernel(3),
            ])
            .unwrap(),
            KernelFamily::new(vec![kuramoto_kernel(1), kuramoto_kernel(2), kuramoto_kernel(3)]).unwrap(),
            skardal_kernels(),
            KernelFamily::new(vec![
                opinion_diam_kernel(1, -1.0),
                opinion_diam_kernel(2, -1.0),
                opinion_diam_kernel(3, 0.5),
            ])
            .unwrap(),
            KernelFamily::single(linear_mean_kernel(2)).on_box(-0.1, 1.1),
        ];
        for f in &families {
            let r = check_assumption1(f, 2.0, 10_000, 17).unwrap();
            assert!(r.bound_violations.is_empty(), "{:?}", r.bound_violations);
            assert!(r.lipschitz_violations.is_empty(), "{:?}", r.lipschitz_violations);
            assert!(r.symmetry_violations.is_empty());
        }
    }

    #[test]
    fn single_order_sums() {
        let f = KernelFamily::single(linear_mean_kernel(2));
        let r = check_assumption1(&f, 1.0, 1000, 1).unwrap();
        assert!((r.bound_sum - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.lipschitz_sum, 4.0);
        assert!(r.is_ok());
    }

    #[test]
    fn understated_bound_is_reported() {
        let mut k = linear_mean_kernel(2);
        k.bound = 0.5;
        let r = check_assumption1(&KernelFamily::single(k), 1.0, 1000, 2).unwrap();
        assert_eq!(r.bound_violations.len(), 1);
        assert!(!r.is_ok());
    }

    #[test]
    fn skardal_asymmetry_detected() {
        let r = check_assumption1(&skardal_kernels(), 2.0, 1000, 3).unwrap();
        assert!(r.bound_sum.is_finite() && r.lipschitz_sum.is_finite());
        assert_eq!(r.asymmetric, vec![2, 3]);
        assert!(r.symmetry_violations.is_empty());
    }

    #[test]
    fn eta_must_be_positive_for_families() {
        assert!(check_assumption1(&skardal_kernels(), 0.0, 10, 1).is_err());
    }

    #[test]
    fn duplicate_orders_rejected() {
        assert!(KernelFamily::new(vec![linear_mean_kernel(2), kuramoto_kernel(2)]).is_err());
    }
}
