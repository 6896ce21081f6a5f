//! Resolution of spec strings into library objects.

use hypermf::hypergraph::AdjacencyTensor;
use hypermf::kernels::{kuramoto_kernel, linear_mean_kernel, opinion_diam_kernel, skardal_kernels};
use hypermf::metrics::Alpha;
use hypermf::{
    build_balanced, build_homogeneous, AnalyticHypergraphon, Error, FiberedDensity, Grid, Hypergraph, KernelFamily,
    LabelField, ParticleState, Profile, StepHypergraphon, URHypergraphon,
};

use crate::config::{parse_list, Config, Result, Spec};

pub const DEFAULT_HYPERGRAPH: &str = "homogeneous theta=0.1";
pub const DEFAULT_KERNEL: &str = "order=2 type=linear_mean";

pub fn profile(spec: &Spec) -> Result<Profile> {
    match spec.params.get("f").map(String::as_str).unwrap_or("quadratic") {
        "quadratic" => Ok(Profile::quadratic()),
        "constant" => Ok(Profile::constant(spec.f64("c", None)?)),
        other => Err(Error::Config(format!("unknown profile '{other}'"))),
    }
}

/// Kernel family from the repeated `kernel` key, declared on the state box.
pub fn kernels(cfg: &Config, x_min: f64, x_max: f64) -> Result<KernelFamily> {
    let mut list = Vec::new();
    for line in cfg.all("kernel", &[DEFAULT_KERNEL]) {
        let spec = Spec::parse(&line)?;
        if !spec.name.is_empty() {
            return Err(Error::Config(format!(
                "kernel spec '{line}' must be 'order=<ℓ> type=<name> ...'"
            )));
        }
        let ty = spec.string("type")?;
        if ty == "skardal" {
            spec.only(&["type"])?;
            list.extend(skardal_kernels().iter().cloned());
            continue;
        }
        let order = spec.usize("order", None)?;
        if order == 0 {
            return Err(Error::Config("kernel order must be at least 1".into()));
        }
        let k = match ty {
            "linear_mean" => {
                spec.only(&["type", "order"])?;
                linear_mean_kernel(order)
            }
            "kuramoto" => {
                spec.only(&["type", "order"])?;
                kuramoto_kernel(order)
            }
            "opinion" => {
                spec.only(&["type", "order", "lambda"])?;
                opinion_diam_kernel(order, spec.f64("lambda", Some(-1.0))?)
            }
            other => return Err(Error::Config(format!("unknown kernel type '{other}'"))),
        };
        list.push(k);
    }
    Ok(KernelFamily::new(list)?.on_box(x_min, x_max))
}

/// Orders carried by the interaction structure: `orders` or the kernel
/// orders.
pub fn orders(cfg: &Config, family: &KernelFamily) -> Result<Vec<usize>> {
    let default = family
        .orders()
        .iter()
        .map(|o| o.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let orders: Vec<usize> = cfg.list("orders", &default)?;
    if orders.is_empty() || orders.contains(&0) {
        return Err(Error::Config(
            "orders must be a non-empty list of positive integers".into(),
        ));
    }
    Ok(orders)
}

/// Finite hypergraph on `n` nodes keeping only the listed orders.
pub fn hypergraph(spec_str: &str, n: usize, orders: &[usize]) -> Result<Hypergraph> {
    let spec = Spec::parse(spec_str)?;
    let max_rank = orders.iter().max().copied().unwrap_or(1) + 1;
    let few_nodes = n < max_rank && spec.name != "file";
    let mut h = match spec.name.as_str() {
        // Too few nodes for any tuple of distinct nodes at the top order.
        _ if few_nodes => {
            let mut h = Hypergraph::empty(n, max_rank, true)?;
            if n >= 2 {
                let small = hypergraph(
                    spec_str,
                    n,
                    &orders.iter().copied().filter(|&l| l < n).collect::<Vec<_>>(),
                )?;
                for t in small.tensors() {
                    h.set_tensor(t.clone())?;
                }
            }
            return Ok(h);
        }
        "homogeneous" => {
            spec.only(&["theta"])?;
            build_homogeneous(n, spec.f64("theta", None)?, max_rank)?
        }
        "balanced" => {
            spec.only(&["f", "c"])?;
            let f = profile(&spec)?;
            build_balanced(n, move |x| f.eval(x), max_rank)?
        }
        "allto1" => {
            spec.only(&[])?;
            build_homogeneous(n, 1.0, max_rank)?
        }
        "zero" => {
            spec.only(&[])?;
            Hypergraph::empty(n, max_rank, true)?
        }
        "file" => {
            spec.only(&["path"])?;
            let h = Hypergraph::load(spec.string("path")?)?;
            if h.num_nodes() != n {
                return Err(Error::Config(format!(
                    "file has {} nodes, config asks for {n}",
                    h.num_nodes()
                )));
            }
            return Ok(h);
        }
        other => return Err(Error::Config(format!("unknown hypergraph '{other}'"))),
    };
    for l in 1..max_rank {
        if !orders.contains(&l) {
            h.set_tensor(AdjacencyTensor::new(l, true))?;
        }
    }
    Ok(h)
}

/// Limit object on the listed orders.
pub fn hypergraphon(spec_str: &str, orders: &[usize]) -> Result<URHypergraphon> {
    let spec = Spec::parse(spec_str)?;
    let o = orders.iter().copied();
    let w = match spec.name.as_str() {
        "homogeneous" => {
            spec.only(&["theta"])?;
            AnalyticHypergraphon::homogeneous(spec.f64("theta", None)?, o)
        }
        "balanced" => {
            spec.only(&["f", "c"])?;
            AnalyticHypergraphon::balanced(profile(&spec)?, o)
        }
        "allto1" => {
            spec.only(&[])?;
            AnalyticHypergraphon::constant(1.0, o)
        }
        "constant" => {
            spec.only(&["c"])?;
            AnalyticHypergraphon::constant(spec.f64("c", None)?, o)
        }
        "zero" => {
            spec.only(&[])?;
            AnalyticHypergraphon::constant(0.0, o)
        }
        "file" => {
            spec.only(&["path"])?;
            let s = StepHypergraphon::read_from(std::fs::File::open(spec.string("path")?)?)?;
            return Ok(URHypergraphon::Step(s));
        }
        other => return Err(Error::Config(format!("unknown hypergraphon '{other}'"))),
    };
    Ok(URHypergraphon::Analytic(w))
}

/// The limit of the configured hypergraph family unless `hypergraphon` is
/// given explicitly.
pub fn limit_spec(cfg: &Config) -> String {
    match cfg.opt_str("hypergraphon") {
        Some(s) => s,
        None => cfg.str_or("hypergraph", DEFAULT_HYPERGRAPH),
    }
}

pub fn grid(cfg: &Config) -> Result<Grid> {
    Grid::new(cfg.get("nx", 64usize)?, cfg.get("x_min", -0.1)?, cfg.get("x_max", 1.1)?)
}

pub fn alpha(cfg: &Config) -> Result<Alpha> {
    let spec = Spec::parse(&cfg.str_or("alpha", "geometric r=0.5"))?;
    match spec.name.as_str() {
        "geometric" => {
            let r = spec.f64("r", Some(0.5))?;
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("geometric ratio {r} must lie in (0, 1)")));
            }
            Ok(Alpha::Geometric(r))
        }
        "explicit" => {
            let w: Vec<f64> = parse_list(spec.string("weights")?)
                .ok_or_else(|| Error::Config("cannot parse alpha weights".into()))?;
            if w.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config("alpha weights must be positive".into()));
            }
            Ok(Alpha::Explicit(w))
        }
        other => Err(Error::Config(format!("unknown alpha '{other}'"))),
    }
}

fn uniform_bounds(spec: &Spec) -> Result<(f64, f64)> {
    let lo = spec.f64("lo", Some(0.0))?;
    let hi = spec.f64("hi", Some(1.0))?;
    if !(hi > lo) {
        return Err(Error::Config(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
    }
    Ok((lo, hi))
}

/// I.i.d. initial states; replica `r` of seed `s` is reproducible.
pub fn particle_init(cfg: &Config) -> Result<(f64, f64)> {
    let spec = Spec::parse(&cfg.str_or("init", "uniform lo=0 hi=1"))?;
    match spec.name.as_str() {
        "uniform" => {
            spec.only(&["lo", "hi"])?;
            uniform_bounds(&spec)
        }
        other => Err(Error::Config(format!(
            "particle initial data '{other}' is not supported"
        ))),
    }
}

pub fn sample_particles(n: usize, bounds: (f64, f64), seed: u64, replica: u64) -> ParticleState {
    ParticleState::uniform(n, bounds.0, bounds.1, seed, replica)
}

pub fn density_init(cfg: &Config, grid: Grid, nxi: usize) -> Result<FiberedDensity> {
    let spec = Spec::parse(&cfg.str_or("init", "uniform lo=0 hi=1"))?;
    match spec.name.as_str() {
        "uniform" => {
            spec.only(&["lo", "hi"])?;
            let (lo, hi) = uniform_bounds(&spec)?;
            FiberedDensity::uniform(grid, nxi, lo, hi)
        }
        "gaussian" => {
            spec.only(&["mean", "slope", "sd"])?;
            let m = spec.f64("mean", Some(0.5))?;
            let slope = spec.f64("slope", Some(0.0))?;
            let sd = spec.f64("sd", Some(0.1))?;
            FiberedDensity::from_fn(grid, nxi, move |x, xi| {
                (-(x - m - slope * (xi - 0.5)).powi(2) / (2.0 * sd * sd)).exp()
            })
        }
        "file" => {
            spec.only(&["path"])?;
            let d = FiberedDensity::read_from(std::fs::File::open(spec.string("path")?)?)?;
            if d.grid() != grid || d.nxi() != nxi {
                return Err(Error::Config(
                    "density file grid differs from nx/nxi/x_min/x_max".into(),
                ));
            }
            Ok(d)
        }
        other => Err(Error::Config(format!(
            "density initial data '{other}' is not supported"
        ))),
    }
}

pub fn label_init(cfg: &Config, nxi: usize) -> Result<LabelField> {
    let spec = Spec::parse(&cfg.str_or("init", "affine a=0 b=1"))?;
    match spec.name.as_str() {
        "affine" => {
            spec.only(&["a", "b"])?;
            let a = spec.f64("a", Some(0.0))?;
            let b = spec.f64("b", Some(1.0))?;
            LabelField::from_fn(nxi, |xi| a + b * xi)
        }
        other => Err(Error::Config(format!("label initial data '{other}' is not supported"))),
    }
}

/// Sorted snapshot times inside `[0, T]`.
pub fn snapshots(cfg: &Config, t_end: f64, default: &str) -> Result<Vec<f64>> {
    let times: Vec<f64> = cfg.list("snapshots", default)?;
    if times.is_empty() {
        return Err(Error::Config("at least one snapshot time is required".into()));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Config("snapshot times must be strictly increasing".into()));
        }
    }
    if times[0] < 0.0 || *times.last().unwrap() > t_end + 1e-12 {
        return Err(Error::Config(format!("snapshot times must lie in [0, {t_end}]")));
    }
    Ok(times)
}
