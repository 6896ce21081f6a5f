//! Convergence and discretization studies and figure reproduction.

use rayon::prelude::*;

use hypermf::metrics::{cut_norm, dense_level, l1_level_distance, sample_step, CutMode};
use hypermf::particle::{integrate_at, mckean_error_constants};
use hypermf::vlasov::{solve, DensitySnapshot, SolveOptions};
use hypermf::{
    d_bl, d_p_nu, discretize_l1, discretize_pointwise, empirical_fibered, step_from_hypergraph, DiscreteMeasure, Error,
    FiberedDensity, ForcePlan, Grid, Hypergraph, KernelFamily, Method, ParticleState, URHypergraphon,
};

use crate::config::{Config, Result};
use crate::output::{cell, num, Table};
use crate::specs;
use crate::svg::{self, Frame};

/// Least-squares slope of `log y` against `log x` over positive pairs.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Marginal of a fibered density as atoms at cell centers.
pub fn density_marginal(rho: &FiberedDensity) -> DiscreteMeasure {
    let g = rho.grid();
    let atoms = g
        .centers()
        .into_iter()
        .zip(rho.marginal())
        .filter(|(_, m)| *m > 0.0)
        .map(|(x, m)| (x, m * g.dx()))
        .collect();
    DiscreteMeasure::new(atoms).expect("densities are non-negative")
}

#[derive(Clone, Debug)]
pub struct ConvergenceSettings {
    pub hypergraph: String,
    pub limit: URHypergraphon,
    pub kernels: KernelFamily,
    pub orders: Vec<usize>,
    pub n_list: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub p: f64,
    pub t_end: f64,
    pub dt: f64,
    pub method: Method,
    pub snapshots: Vec<f64>,
    pub grid: Grid,
    pub nxi: usize,
    pub init: (f64, f64),
}

impl ConvergenceSettings {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let grid = Grid::new(
            cfg.get("nx", 128usize)?,
            cfg.get("x_min", -0.1)?,
            cfg.get("x_max", 1.1)?,
        )?;
        let kernels = specs::kernels(cfg, grid.x_min, grid.x_max)?;
        let orders = specs::orders(cfg, &kernels)?;
        let hypergraph = cfg.str_or("hypergraph", specs::DEFAULT_HYPERGRAPH);
        let limit = specs::hypergraphon(&specs::limit_spec(cfg), &orders)?;
        let t_end: f64 = cfg.get("t_end", 1.0)?;
        let p: f64 = cfg.get("p", 1.0)?;
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::Config(format!("p = {p} must lie in [1, ∞)")));
        }
        let replicas: usize = cfg.get("replicas", 8)?;
        let n_list: Vec<usize> = cfg.list("n_list", "50,100,200,400")?;
        if replicas == 0 || n_list.is_empty() || n_list.contains(&0) {
            return Err(Error::Config("replicas and every N must be positive".into()));
        }
        Ok(Self {
            hypergraph,
            limit,
            orders,
            n_list,
            replicas,
            seed: cfg.get("seed", 1u64)?,
            p,
            t_end,
            dt: cfg.get("dt", 0.01)?,
            method: cfg.str_or("method", "rk4").parse()?,
            snapshots: specs::snapshots(
                cfg,
                t_end,
                &format!("0,{},{},{},{}", t_end / 4.0, t_end / 2.0, 3.0 * t_end / 4.0, t_end),
            )?,
            grid,
            nxi: cfg.get("nxi", 64usize)?,
            init: specs::particle_init(cfg)?,
            kernels,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaRow {
    pub n: usize,
    pub replica: usize,
    pub t: f64,
    pub d_pnu: f64,
    pub d_marginal: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub mean_sup: f64,
    pub stderr_sup: f64,
    pub mean_sup_marginal: f64,
    pub stderr_marginal: f64,
    pub eps_p: f64,
    pub c_tilde_inf: f64,
    pub c_p: f64,
}

pub struct ConvergenceResult {
    pub rows: Vec<ReplicaRow>,
    pub summary: Vec<SummaryRow>,
    pub reference: Vec<DensitySnapshot>,
}

/// Particle systems on the finite hypergraphs against the Vlasov solution
/// of the limit object, replica-averaged.
pub fn run_convergence_study(s: &ConvergenceSettings) -> Result<ConvergenceResult> {
    let rho0 = FiberedDensity::uniform(s.grid, s.nxi, s.init.0, s.init.1)?;
    let reference = solve(&s.limit, &s.kernels, &rho0, &s.snapshots, SolveOptions::adaptive(s.dt))?;
    let ref_atoms: Vec<_> = reference.iter().map(|r| r.density.to_atoms()).collect();
    let ref_marg: Vec<_> = reference.iter().map(|r| density_marginal(&r.density)).collect();

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &n in &s.n_list {
        let h = specs::hypergraph(&s.hypergraph, n, &s.orders)?;
        let plan = ForcePlan::new(&h, &s.kernels)?;
        let per_replica: Vec<Result<Vec<ReplicaRow>>> = (0..s.replicas)
            .into_par_iter()
            .map(|r| {
                let x0 = specs::sample_particles(n, s.init, s.seed, r as u64);
                let traj = integrate_at(&plan, &x0, &s.snapshots, s.dt, s.method, None)?;
                traj.snapshots()
                    .iter()
                    .enumerate()
                    .map(|(k, x)| {
                        Ok(ReplicaRow {
                            n,
                            replica: r,
                            t: s.snapshots[k],
                            d_pnu: d_p_nu(&empirical_fibered(x), &ref_atoms[k], s.p)?,
                            d_marginal: d_bl(&DiscreteMeasure::empirical(&x.states), &ref_marg[k])?,
                        })
                    })
                    .collect()
            })
            .collect();
        let mut sups = Vec::new();
        let mut sups_m = Vec::new();
        for rep in per_replica {
            let rep = rep?;
            sups.push(rep.iter().map(|r| r.d_pnu).fold(0.0, f64::max));
            sups_m.push(rep.iter().map(|r| r.d_marginal).fold(0.0, f64::max));
            rows.extend(rep);
        }
        let (mean_sup, stderr_sup) = mean_stderr(&sups);
        let (mean_sup_marginal, stderr_marginal) = mean_stderr(&sups_m);
        let mk = if s.p <= 2.0 {
            Some(mckean_error_constants(&h, &s.kernels, s.p)?)
        } else {
            None
        };
        summary.push(SummaryRow {
            n,
            mean_sup,
            stderr_sup,
            mean_sup_marginal,
            stderr_marginal,
            eps_p: mk.map_or(f64::NAN, |m| m.eps_p),
            c_tilde_inf: mk.map_or(f64::NAN, |m| m.c_tilde_inf),
            c_p: mk.map_or(f64::NAN, |m| m.c_p),
        });
    }
    Ok(ConvergenceResult {
        rows,
        summary,
        reference,
    })
}

impl ConvergenceResult {
    pub fn tables(&self) -> (Table, Table) {
        let mut per = Table::new(&["n", "replica", "t", "d_pnu", "d_bl_marginal"]);
        for r in &self.rows {
            per.push(vec![
                cell(r.n),
                cell(r.replica),
                num(r.t),
                num(r.d_pnu),
                num(r.d_marginal),
            ]);
        }
        let mut sum = Table::new(&[
            "n",
            "mean_sup_d_pnu",
            "stderr_sup_d_pnu",
            "mean_sup_d_bl_marginal",
            "stderr_sup_d_bl_marginal",
            "eps_p",
            "c_tilde_inf",
            "c_p",
        ]);
        for r in &self.summary {
            sum.push(vec![
                cell(r.n),
                num(r.mean_sup),
                num(r.stderr_sup),
                num(r.mean_sup_marginal),
                num(r.stderr_marginal),
                num(r.eps_p),
                num(r.c_tilde_inf),
                num(r.c_p),
            ]);
        }
        (per, sum)
    }

    pub fn plot(&self) -> String {
        let series = |f: fn(&SummaryRow) -> f64| -> Vec<(f64, f64)> {
            self.summary
                .iter()
                .map(|r| ((r.n as f64).log10(), f(r).log10()))
                .collect()
        };
        let all: Vec<(String, Vec<(f64, f64)>)> = vec![
            ("sup d_pnu".into(), series(|r| r.mean_sup)),
            ("sup d_BL marginal".into(), series(|r| r.mean_sup_marginal)),
            ("eps_p".into(), series(|r| r.eps_p)),
        ];
        let frame = Frame {
            title: "mean-field convergence".into(),
            x_label: "log10 N".into(),
            y_label: "log10 distance".into(),
            x_range: svg::padded_range(all.iter().flat_map(|s| s.1.iter().map(|p| p.0))),
            y_range: svg::padded_range(all.iter().flat_map(|s| s.1.iter().map(|p| p.1))),
        };
        svg::lines(&frame, &all)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// The family's finite-hypergraph builder.
    Hypergraph,
    Pointwise,
    L1,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Hypergraph => "hypergraph",
            Scheme::Pointwise => "pointwise",
            Scheme::L1 => "l1",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CutdistSettings {
    pub family: String,
    pub limit: URHypergraphon,
    pub orders: Vec<usize>,
    pub n_list: Vec<usize>,
    pub schemes: Vec<Scheme>,
    pub nodes: usize,
    pub offset: f64,
    pub cut: bool,
    pub max_cut_entries: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl CutdistSettings {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let family = cfg.str_or("family", specs::DEFAULT_HYPERGRAPH);
        let orders: Vec<usize> = cfg.list("orders", "1,2")?;
        if orders.is_empty() || orders.contains(&0) {
            return Err(Error::Config("orders must be positive".into()));
        }
        let limit = specs::hypergraphon(&family, &orders)?;
        let default_schemes = match specs_name(&family).as_str() {
            "homogeneous" | "balanced" | "allto1" | "zero" => "hypergraph,pointwise,l1",
            _ => "pointwise,l1",
        };
        let schemes = cfg
            .str_or("scheme", default_schemes)
            .split(',')
            .map(|s| match s.trim() {
                "hypergraph" => Ok(Scheme::Hypergraph),
                "pointwise" => Ok(Scheme::Pointwise),
                "l1" => Ok(Scheme::L1),
                other => Err(Error::Config(format!("unknown scheme '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            family,
            limit,
            orders,
            n_list: cfg.list("n_list", "10,20,40,80")?,
            schemes,
            nodes: cfg.get("nodes", 16usize)?,
            offset: cfg.get("offset", 0.5)?,
            cut: cfg.get::<u8>("cut", 1)? != 0,
            max_cut_entries: cfg.get("max_cut_entries", 100_000usize)?,
            restarts: cfg.get("restarts", 8usize)?,
            seed: cfg.get("seed", 1u64)?,
        })
    }
}

fn specs_name(spec: &str) -> String {
    spec.split_whitespace().next().unwrap_or("").to_string()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutdistRow {
    pub scheme: Scheme,
    pub order: usize,
    pub n: usize,
    pub l1: f64,
    pub bound: f64,
    pub cut: f64,
    pub cut_mode: Option<CutMode>,
}

/// Theoretical `L¹` bound at `N`: `2ℓ(ℓ+1)/N` for homogeneous groups,
/// `√(ℓ+1)·Lip(w_ℓ)/N` for Lipschitz levels.
pub fn l1_bound(family: &str, limit: &URHypergraphon, order: usize, n: usize) -> f64 {
    let nf = n as f64;
    if specs_name(family) == "homogeneous" {
        return 2.0 * (order * (order + 1)) as f64 / nf;
    }
    match limit.lipschitz(order) {
        Some(lip) => ((order + 1) as f64).sqrt() * lip / nf,
        None => f64::NAN,
    }
}

pub fn run_cutdist_study(s: &CutdistSettings) -> Result<Vec<CutdistRow>> {
    let mut rows = Vec::new();
    for &n in &s.n_list {
        for &scheme in &s.schemes {
            let h: Hypergraph = match scheme {
                Scheme::Hypergraph => specs::hypergraph(&s.family, n, &s.orders)?,
                Scheme::Pointwise => discretize_pointwise(&s.limit, n, s.offset)?,
                Scheme::L1 => discretize_l1(&s.limit, n, s.nodes)?,
            };
            let step = step_from_hypergraph(&h);
            let sampled = sample_step(&s.limit, n);
            let wh = URHypergraphon::Step(step.clone());
            for &l in &s.orders {
                let l1 = l1_level_distance(&s.limit, &wh, l, n, s.nodes);
                let (cut, mode) = if s.cut && n.saturating_pow(l as u32 + 1) <= s.max_cut_entries {
                    let a = dense_level(&sampled, l, n);
                    let b = dense_level(&step, l, n);
                    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                    let (v, m) = cut_norm(&diff, n, l, s.restarts, s.seed)?;
                    (v, Some(m))
                } else {
                    (f64::NAN, None)
                };
                rows.push(CutdistRow {
                    scheme,
                    order: l,
                    n,
                    l1,
                    bound: l1_bound(&s.family, &s.limit, l, n),
                    cut,
                    cut_mode: mode,
                });
            }
        }
    }
    Ok(rows)
}

pub fn cutdist_tables(rows: &[CutdistRow]) -> (Table, Table) {
    let mut t = Table::new(&["scheme", "order", "n", "l1", "bound", "cut_midpoint", "cut_mode"]);
    for r in rows {
        t.push(vec![
            r.scheme.label().into(),
            cell(r.order),
            cell(r.n),
            num(r.l1),
            num(r.bound),
            num(r.cut),
            r.cut_mode
                .map_or("none", |m| if m == CutMode::Exact { "exact" } else { "heuristic" })
                .into(),
        ]);
    }
    let mut slopes = Table::new(&["scheme", "order", "loglog_slope"]);
    let mut keys: Vec<(Scheme, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.scheme, r.order)) {
            keys.push((r.scheme, r.order));
        }
    }
    for (scheme, order) in keys {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.scheme == scheme && r.order == order)
            .map(|r| (r.n as f64, r.l1))
            .collect();
        slopes.push(vec![scheme.label().into(), cell(order), num(loglog_slope(&pts))]);
    }
    (t, slopes)
}

/// Counts of agents in the `bins × bins` squares of `[0,1]²`
/// (state horizontally, label `ξ_i = i/N` vertically); states outside
/// `[0,1]` go to the edge bins.
pub fn bin_counts(x: &ParticleState, bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut counts = vec![0usize; bins * bins];
    for (i, &v) in x.states.iter().enumerate() {
        let xi = i as f64 / n as f64;
        let r = ((xi * bins as f64) as usize).min(bins - 1);
        let c = if v.is_finite() {
            ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        counts[r * bins + c] += 1;
    }
    counts
}

#[derive(Clone, Debug)]
pub struct FigureSettings {
    pub n_homogeneous: usize,
    pub n_balanced: usize,
    pub compare_n: Vec<usize>,
    pub grid: Grid,
    pub nxi: usize,
    pub dt: f64,
    pub seed: u64,
    pub homogeneous_times: Vec<f64>,
    pub balanced_times: Vec<f64>,
}

impl FigureSettings {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(Self {
            n_homogeneous: cfg.get("n_homogeneous", 600usize)?,
            n_balanced: cfg.get("n_balanced", 300usize)?,
            compare_n: cfg.list("compare_n", "100,200,400,600")?,
            grid: specs::grid(cfg)?,
            nxi: cfg.get("nxi", 64usize)?,
            dt: cfg.get("dt", 0.02)?,
            seed: cfg.get("seed", 1u64)?,
            homogeneous_times: vec![0.0, 4.0, 8.0, 10.0],
            balanced_times: vec![0.0, 0.8, 1.6, 2.4],
        })
    }
}

pub struct Figures {
    pub svgs: Vec<(String, String)>,
    pub binned: Table,
}

fn xi_frame(title: String, grid: Grid) -> Frame {
    Frame {
        title,
        x_label: "x".into(),
        y_label: "ξ".into(),
        x_range: (grid.x_min, grid.x_max),
        y_range: (0.0, 1.0),
    }
}

/// Fibered densities over the label axis, `ξ` rows by `x` columns.
fn density_rows(rho: &FiberedDensity) -> Vec<f64> {
    rho.values().to_vec()
}

pub fn reproduce_figures(s: &FigureSettings) -> Result<Figures> {
    let mut svgs = Vec::new();
    let mut binned = Table::new(&["family", "n", "t", "xi_bin", "x_bin", "count"]);
    let k2 = KernelFamily::single(hypermf::kernels::linear_mean_kernel(2)).on_box(s.grid.x_min, s.grid.x_max);
    let families = [
        (
            "homogeneous",
            "homogeneous theta=0.1",
            s.n_homogeneous,
            &s.homogeneous_times,
        ),
        ("balanced", "balanced f=quadratic", s.n_balanced, &s.balanced_times),
    ];
    for (name, spec, n_main, times) in families {
        let limit = specs::hypergraphon(spec, &[2])?;
        let pix_n = 50;
        let h = specs::hypergraph(spec, pix_n, &[1, 2])?;
        let t1 = h.tensor(1).expect("order 1");
        let mut m = vec![0.0; pix_n * pix_n];
        let t2 = h.tensor(2).expect("order 2");
        let mut slice = vec![0.0; pix_n * pix_n];
        for i in 0..pix_n {
            for j in 0..pix_n {
                m[i * pix_n + j] = t1.get(&[i, j]);
                slice[i * pix_n + j] = t2.get(&[pix_n / 2, i, j]);
            }
        }
        let pix_frame = |t: &str| Frame {
            title: format!("{name} hypergraph, {t}"),
            x_label: "j".into(),
            y_label: "i".into(),
            x_range: (0.0, pix_n as f64),
            y_range: (0.0, pix_n as f64),
        };
        svgs.push((
            format!("tensor_{name}_order1.svg"),
            svg::heatmap(&pix_frame("order 1"), &m, pix_n, pix_n),
        ));
        svgs.push((
            format!("tensor_{name}_order2.svg"),
            svg::heatmap(&pix_frame("order 2, first index N/2"), &slice, pix_n, pix_n),
        ));

        let rho0 = FiberedDensity::uniform(s.grid, s.nxi, 0.0, 1.0)?;
        let pde = solve(&limit, &k2, &rho0, times, SolveOptions::adaptive(s.dt))?;

        let mut ns: Vec<usize> = vec![n_main];
        if name == "homogeneous" {
            for &n in &s.compare_n {
                if !ns.contains(&n) {
                    ns.push(n);
                }
            }
        }
        let t_end = *times.last().expect("snapshot times");
        let runs: Vec<Result<(usize, Vec<ParticleState>)>> = ns
            .par_iter()
            .map(|&n| {
                let h = specs::hypergraph(spec, n, &[2])?;
                let plan = ForcePlan::new(&h, &k2)?;
                let x0 = specs::sample_particles(n, (0.0, 1.0), s.seed, 0);
                let tr = integrate_at(&plan, &x0, times, s.dt, Method::Rk4, None)?;
                Ok((n, tr.snapshots().to_vec()))
            })
            .collect();
        let runs: Vec<(usize, Vec<ParticleState>)> = runs.into_iter().collect::<Result<_>>()?;
        for (n, snaps) in &runs {
            for (k, x) in snaps.iter().enumerate() {
                let t = times[k];
                let main = *n == n_main;
                if !main && (t - t_end).abs() > 1e-12 {
                    continue;
                }
                let counts = bin_counts(x, 10);
                debug_assert_eq!(counts.iter().sum::<usize>(), *n);
                for r in 0..10 {
                    for c in 0..10 {
                        binned.push(vec![
                            name.into(),
                            cell(n),
                            num(t),
                            cell(r),
                            cell(c),
                            cell(counts[r * 10 + c]),
                        ]);
                    }
                }
                let bin_frame = Frame {
                    title: format!("{name}, N={n}, binned agents at t={}", num(t)),
                    x_label: "x".into(),
                    y_label: "ξ".into(),
                    x_range: (0.0, 1.0),
                    y_range: (0.0, 1.0),
                };
                let cf: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
                let tag = crate::output::time_tag(t);
                if main {
                    svgs.push((
                        format!("binned_{name}_N{n}_{tag}.svg"),
                        svg::heatmap(&bin_frame, &cf, 10, 10),
                    ));
                    let pts: Vec<(f64, f64)> = x
                        .states
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| (v, i as f64 / *n as f64))
                        .collect();
                    let rho = &pde[k].density;
                    svgs.push((
                        format!("overlay_{name}_N{n}_{tag}.svg"),
                        svg::heatmap_with_points(
                            &xi_frame(format!("{name}, N={n}, t={}", num(t)), s.grid),
                            &density_rows(rho),
                            s.nxi,
                            s.grid.nx,
                            &pts,
                        ),
                    ));
                }
                if name == "homogeneous" && s.compare_n.contains(n) && (t - t_end).abs() <= 1e-12 {
                    svgs.push((
                        format!("compare_{name}_N{n}_{tag}.svg"),
                        svg::heatmap(&bin_frame, &cf, 10, 10),
                    ));
                }
            }
        }
        for snap in &pde {
            svgs.push((
                format!("vlasov_{name}_{}.svg", crate::output::time_tag(snap.time)),
                svg::heatmap(
                    &xi_frame(format!("{name} Vlasov density, t={}", num(snap.time)), s.grid),
                    &density_rows(&snap.density),
                    s.nxi,
                    s.grid.nx,
                ),
            ));
        }
    }
    Ok(Figures { svgs, binned })
}
