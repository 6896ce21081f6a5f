//! Subcommand implementations. Each reads every setting before writing
//! output so the config hash covers all of them.

use std::path::Path;

use hypermf::hypergraph::Violation;
use hypermf::kernels::check_assumption1;
use hypermf::metrics::{
    d_square, delta_square_perm, dense_level, hypertree_moment, l1_level_distance, operator_norm_infty_to_1,
    sample_step, CutMode, DirectedHypertree,
};
use hypermf::particle::{integrate_at, time_grid};
use hypermf::vlasov::{solve, solve_continuum, SolveOptions};
use hypermf::{
    d_bl, d_p_nu, DiscreteMeasure, Error, FiberedDensity, ForcePlan, Method, StepHypergraphon, URHypergraphon,
};

use crate::config::{parse_list, Config, Result};
use crate::output::{cell, num, time_tag, OutDir, Table};
use crate::specs;
use crate::studies;
use crate::svg::{self, Frame};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Vlasov,
    Continuum,
    Distance,
    ConvergenceStudy,
    CutdistStudy,
    Figures,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Vlasov => "vlasov",
            Command::Continuum => "continuum",
            Command::Distance => "distance",
            Command::ConvergenceStudy => "convergence-study",
            Command::CutdistStudy => "cutdist-study",
            Command::Figures => "figures",
            Command::Validate => "validate",
        }
    }
}

/// Human-readable lines plus whether a validation check failed.
#[derive(Debug, Default)]
pub struct Report {
    pub lines: Vec<String>,
    pub failed: bool,
}

pub fn run(cmd: Command, cfg: &Config, out: &Path) -> Result<Report> {
    match cmd {
        Command::Simulate => simulate(cfg, out),
        Command::Vlasov => vlasov(cfg, out),
        Command::Continuum => continuum(cfg, out),
        Command::Distance => distance(cfg, out),
        Command::ConvergenceStudy => convergence(cfg, out),
        Command::CutdistStudy => cutdist(cfg, out),
        Command::Figures => figures(cfg, out),
        Command::Validate => validate(cfg, out),
    }
}

fn evenly(t_end: f64, k: usize) -> String {
    (0..=k)
        .map(|i| num(t_end * i as f64 / k as f64))
        .collect::<Vec<_>>()
        .join(",")
}

fn simulate(cfg: &Config, out: &Path) -> Result<Report> {
    let (x_min, x_max) = (cfg.get("x_min", -0.1)?, cfg.get("x_max", 1.1)?);
    let kernels = specs::kernels(cfg, x_min, x_max)?;
    let orders = specs::orders(cfg, &kernels)?;
    let n: usize = cfg.get("n", 100)?;
    let h = specs::hypergraph(&cfg.str_or("hypergraph", specs::DEFAULT_HYPERGRAPH), n, &orders)?;
    let t_end: f64 = cfg.get("t_end", 10.0)?;
    let dt: f64 = cfg.get("dt", 0.01)?;
    let method: Method = cfg.str_or("method", "rk4").parse()?;
    let snaps = specs::snapshots(cfg, t_end, &evenly(t_end, 4))?;
    let init = specs::particle_init(cfg)?;
    let seed: u64 = cfg.get("seed", 1)?;

    let plan = ForcePlan::new(&h, &kernels)?;
    let x0 = specs::sample_particles(n, init, seed, 0);
    let traj = integrate_at(&plan, &x0, &snaps, dt, method, None)?;

    let mut o = OutDir::create(out, cfg.hash("simulate"))?;
    let mut t = Table::new(&["t", "i", "x"]);
    for s in traj.snapshots() {
        for (i, &x) in s.states.iter().enumerate() {
            t.push(vec![num(s.time), cell(i + 1), num(x)]);
        }
    }
    o.csv("trajectory.csv", &t)?;
    for s in traj.snapshots() {
        let pts: Vec<(f64, f64)> = s
            .states
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, i as f64 / n as f64))
            .collect();
        let frame = Frame {
            title: format!("agents, N={n}, t={}", num(s.time)),
            x_label: "x".into(),
            y_label: "ξ".into(),
            x_range: (x_min, x_max),
            y_range: (0.0, 1.0),
        };
        o.text(
            &format!("snapshot_{}.svg", time_tag(s.time)),
            &svg::scatter(&frame, &pts),
        )?;
    }
    let last = traj.last().expect("at least one snapshot");
    Ok(Report {
        lines: vec![
            format!(
                "simulated N={n} to t={}: mean {:.6} -> {:.6}",
                num(last.time),
                x0.mean(),
                last.mean()
            ),
            format!("wrote {} files to {}", o.written().len(), out.display()),
        ],
        failed: false,
    })
}

fn solve_options(cfg: &Config) -> Result<SolveOptions> {
    let dt: f64 = cfg.get("dt", 0.05)?;
    let mut o = if cfg.get::<u8>("adaptive", 1)? != 0 {
        SolveOptions::adaptive(dt)
    } else {
        SolveOptions::fixed(dt)
    };
    o.cfl = cfg.get("cfl", 0.9)?;
    o.force.budget = cfg.get("budget", o.force.budget)?;
    Ok(o)
}

fn vlasov(cfg: &Config, out: &Path) -> Result<Report> {
    let grid = specs::grid(cfg)?;
    let kernels = specs::kernels(cfg, grid.x_min, grid.x_max)?;
    let orders = specs::orders(cfg, &kernels)?;
    let w = specs::hypergraphon(&specs::limit_spec(cfg), &orders)?;
    let nxi: usize = cfg.get("nxi", 64)?;
    let t_end: f64 = cfg.get("t_end", 10.0)?;
    let snaps = specs::snapshots(cfg, t_end, &evenly(t_end, 4))?;
    let opts = solve_options(cfg)?;
    let rho0 = specs::density_init(cfg, grid, nxi)?;

    let res = solve(&w, &kernels, &rho0, &snaps, opts)?;

    let mut o = OutDir::create(out, cfg.hash("vlasov"))?;
    let mut t = Table::new(&["t", "xi_index", "x_index", "rho"]);
    for s in &res {
        for i in 0..nxi {
            for (k, &r) in s.density.fiber(i).iter().enumerate() {
                t.push(vec![num(s.time), cell(i), cell(k), num(r)]);
            }
        }
    }
    o.csv("density.csv", &t)?;
    let mut m = Table::new(&["t", "xi_index", "mass", "mean", "variance"]);
    for s in &res {
        for i in 0..nxi {
            m.push(vec![
                num(s.time),
                cell(i),
                num(s.density.mass(i)),
                num(s.density.mean(i)),
                num(s.density.variance(i)),
            ]);
        }
    }
    o.csv("moments.csv", &m)?;
    for s in &res {
        let frame = Frame {
            title: format!("density, t={}", num(s.time)),
            x_label: "x".into(),
            y_label: "ξ".into(),
            x_range: (grid.x_min, grid.x_max),
            y_range: (0.0, 1.0),
        };
        o.text(
            &format!("density_{}.svg", time_tag(s.time)),
            &svg::heatmap(&frame, s.density.values(), nxi, grid.nx),
        )?;
    }
    let last = &res.last().expect("snapshots").density;
    let mut buf = Vec::new();
    last.write_to(&mut buf)?;
    o.text("density_final.txt", &String::from_utf8(buf).expect("ascii"))?;
    let mid = nxi / 2;
    Ok(Report {
        lines: vec![
            format!(
                "central fiber variance {:.6e} -> {:.6e}",
                rho0.variance(mid),
                last.variance(mid)
            ),
            format!("wrote {} files to {}", o.written().len(), out.display()),
        ],
        failed: false,
    })
}

fn continuum(cfg: &Config, out: &Path) -> Result<Report> {
    let (x_min, x_max) = (cfg.get("x_min", -0.1)?, cfg.get("x_max", 1.1)?);
    let kernels = specs::kernels(cfg, x_min, x_max)?;
    let orders = specs::orders(cfg, &kernels)?;
    let w = specs::hypergraphon(&specs::limit_spec(cfg), &orders)?;
    let nxi: usize = cfg.get("nxi", 64)?;
    let t_end: f64 = cfg.get("t_end", 10.0)?;
    let dt: f64 = cfg.get("dt", 0.01)?;
    let snaps = specs::snapshots(cfg, t_end, &evenly(t_end, 4))?;
    let x0 = specs::label_init(cfg, nxi)?;

    let res = solve_continuum(&w, &kernels, &x0, &snaps, dt)?;

    let mut o = OutDir::create(out, cfg.hash("continuum"))?;
    let mut t = Table::new(&["t", "xi_index", "x"]);
    for s in &res {
        for (i, &x) in s.values.iter().enumerate() {
            t.push(vec![num(s.time), cell(i), num(x)]);
        }
    }
    o.csv("continuum.csv", &t)?;
    let series: Vec<(String, Vec<(f64, f64)>)> = res
        .iter()
        .map(|s| {
            (
                format!("t={}", num(s.time)),
                s.values
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| ((i as f64 + 0.5) / nxi as f64, x))
                    .collect(),
            )
        })
        .collect();
    let frame = Frame {
        title: "continuum limit X(t, ξ)".into(),
        x_label: "ξ".into(),
        y_label: "x".into(),
        x_range: (0.0, 1.0),
        y_range: svg::padded_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1))),
    };
    o.text("continuum.svg", &svg::lines(&frame, &series))?;
    Ok(Report {
        lines: vec![format!("wrote {} files to {}", o.written().len(), out.display())],
        failed: false,
    })
}

/// `x:m, x:m, …` atoms; a bare `x` gets equal weight.
pub fn parse_measure(s: &str) -> Result<DiscreteMeasure> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    let k = items.len() as f64;
    let atoms = items
        .iter()
        .map(|it| {
            let bad = || Error::Config(format!("cannot parse atom '{it}'"));
            match it.split_once(':') {
                Some((x, m)) => Ok((
                    x.trim().parse().map_err(|_| bad())?,
                    m.trim().parse().map_err(|_| bad())?,
                )),
                None => Ok((it.parse().map_err(|_| bad())?, 1.0 / k)),
            }
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    DiscreteMeasure::new(atoms)
}

/// `tail>head,head;tail>head` with node 0 as the root.
pub fn parse_tree(s: &str) -> Result<DirectedHypertree> {
    let mut edges = Vec::new();
    let mut max_node = 0;
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (tail, heads) = part
            .split_once('>')
            .ok_or_else(|| Error::Config(format!("hyperedge '{part}' must be 'tail>head,...'")))?;
        let tail: usize = tail
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad tail in '{part}'")))?;
        let heads: Vec<usize> = parse_list(heads).ok_or_else(|| Error::Config(format!("bad heads in '{part}'")))?;
        max_node = heads.iter().copied().chain([tail, max_node]).max().unwrap_or(0);
        edges.push((tail, heads));
    }
    DirectedHypertree::new(max_node + 1, edges)
}

fn as_step(w: &URHypergraphon, parts: usize) -> StepHypergraphon {
    match w {
        URHypergraphon::Step(s) => s.clone(),
        URHypergraphon::Analytic(_) => sample_step(w, parts),
    }
}

fn mode_label(m: CutMode) -> &'static str {
    match m {
        CutMode::Exact => "exact",
        CutMode::Heuristic => "heuristic",
    }
}

fn distance(cfg: &Config, out: &Path) -> Result<Report> {
    let kind = cfg.str_or("kind", "bl");
    let mut t = Table::new(&["kind", "order", "value", "mode"]);
    let mut lines = Vec::new();
    let hypergraphons = |cfg: &Config| -> Result<(URHypergraphon, URHypergraphon, Vec<usize>, usize)> {
        let orders: Vec<usize> = cfg.list("orders", "1,2")?;
        let a = specs::hypergraphon(&cfg.str_or("hypergraphon_a", "homogeneous theta=0.1"), &orders)?;
        let b = specs::hypergraphon(&cfg.str_or("hypergraphon_b", "balanced f=quadratic"), &orders)?;
        let parts: usize = cfg.get("parts", a.parts().or(b.parts()).unwrap_or(4))?;
        let mut all: Vec<usize> = a.active_orders();
        all.extend(b.active_orders());
        all.sort_unstable();
        all.dedup();
        Ok((a, b, all, parts))
    };
    match kind.as_str() {
        "bl" => {
            let a = parse_measure(&cfg.str_or("measure_a", "0"))?;
            let b = parse_measure(&cfg.str_or("measure_b", "1"))?;
            t.push(vec![kind.clone(), "-".into(), num(d_bl(&a, &b)?), "exact".into()]);
        }
        "dpnu" => {
            let p: f64 = cfg.get("p", 1.0)?;
            let load = |key: &str| -> Result<FiberedDensity> {
                let path = cfg
                    .opt_str(key)
                    .ok_or_else(|| Error::Config(format!("distance kind dpnu needs '{key}'")))?;
                FiberedDensity::read_from(std::fs::File::open(path)?)
            };
            let (a, b) = (load("density_a")?, load("density_b")?);
            t.push(vec![
                kind.clone(),
                "-".into(),
                num(d_p_nu(&a.to_atoms(), &b.to_atoms(), p)?),
                "exact".into(),
            ]);
        }
        "cut" => {
            let (a, b, _, parts) = hypergraphons(cfg)?;
            let alpha = specs::alpha(cfg)?;
            let restarts: usize = cfg.get("restarts", 16)?;
            let seed: u64 = cfg.get("seed", 1)?;
            let d = d_square(&as_step(&a, parts), &as_step(&b, parts), &alpha, restarts, seed)?;
            for term in &d.terms {
                t.push(vec![
                    kind.clone(),
                    cell(term.order),
                    num(term.value),
                    mode_label(term.mode).into(),
                ]);
            }
            let all_exact = d.terms.iter().all(|x| x.mode == CutMode::Exact);
            t.push(vec![
                kind.clone(),
                "total".into(),
                num(d.total),
                if all_exact { "exact" } else { "heuristic" }.into(),
            ]);
            if !all_exact {
                lines.push("heuristic cut norms are lower bounds".into());
            }
        }
        "opnorm" => {
            let (a, b, orders, parts) = hypergraphons(cfg)?;
            let (sa, sb) = (as_step(&a, parts), as_step(&b, parts));
            for l in orders {
                let diff: Vec<f64> = dense_level(&sa, l, parts)
                    .iter()
                    .zip(dense_level(&sb, l, parts))
                    .map(|(x, y)| x - y)
                    .collect();
                t.push(vec![
                    kind.clone(),
                    cell(l),
                    num(operator_norm_infty_to_1(&diff, parts, l)?),
                    "exact".into(),
                ]);
            }
        }
        "l1" => {
            let (a, b, orders, parts) = hypergraphons(cfg)?;
            let nodes: usize = cfg.get("nodes", 16)?;
            let cells: usize = cfg.get("cells", parts)?;
            for l in orders {
                t.push(vec![
                    kind.clone(),
                    cell(l),
                    num(l1_level_distance(&a, &b, l, cells, nodes)),
                    "quadrature".into(),
                ]);
            }
        }
        "delta-perm" => {
            let (a, b, _, parts) = hypergraphons(cfg)?;
            let alpha = specs::alpha(cfg)?;
            let restarts: usize = cfg.get("restarts", 8)?;
            let seed: u64 = cfg.get("seed", 1)?;
            let (d, sigma) = delta_square_perm(&as_step(&a, parts), &as_step(&b, parts), &alpha, restarts, seed)?;
            for term in &d.terms {
                t.push(vec![
                    kind.clone(),
                    cell(term.order),
                    num(term.value),
                    mode_label(term.mode).into(),
                ]);
            }
            t.push(vec![
                kind.clone(),
                "total".into(),
                num(d.total),
                "block-permutation".into(),
            ]);
            lines.push(format!("best block permutation {sigma:?}"));
        }
        "hypertree" => {
            let orders: Vec<usize> = cfg.list("orders", "1,2")?;
            let w = specs::hypergraphon(&cfg.str_or("hypergraphon_a", "homogeneous theta=0.1"), &orders)?;
            let tree = parse_tree(&cfg.str_or("tree", "0>1"))?;
            let exps: Vec<u32> = cfg.list("exponents", &vec!["1"; tree.num_nodes].join(","))?;
            let budget: usize = cfg.get("budget", 100_000_000)?;
            let path = cfg
                .opt_str("density_a")
                .ok_or_else(|| Error::Config("distance kind hypertree needs 'density_a'".into()))?;
            let mu = FiberedDensity::read_from(std::fs::File::open(path)?)?.to_atoms();
            t.push(vec![
                kind.clone(),
                "-".into(),
                num(hypertree_moment(&tree, &w, &mu, &exps, budget)?),
                "exact".into(),
            ]);
        }
        other => return Err(Error::Config(format!("unknown distance kind '{other}'"))),
    }
    let mut o = OutDir::create(out, cfg.hash("distance"))?;
    o.csv("distance.csv", &t)?;
    for r in &t.rows {
        lines.push(format!("{} order={} value={} mode={}", r[0], r[1], r[2], r[3]));
    }
    Ok(Report { lines, failed: false })
}

fn convergence(cfg: &Config, out: &Path) -> Result<Report> {
    let s = studies::ConvergenceSettings::from_config(cfg)?;
    let res = studies::run_convergence_study(&s)?;
    let mut o = OutDir::create(out, cfg.hash("convergence-study"))?;
    let (per, sum) = res.tables();
    o.csv("convergence_replicas.csv", &per)?;
    o.csv("convergence_summary.csv", &sum)?;
    o.text("convergence.svg", &res.plot())?;
    let lines = res
        .summary
        .iter()
        .map(|r| {
            format!(
                "N={:>5}  sup d_pnu {:.5} ± {:.5}   sup d_BL(marginal) {:.5} ± {:.5}   eps_p {:.5}",
                r.n, r.mean_sup, r.stderr_sup, r.mean_sup_marginal, r.stderr_marginal, r.eps_p
            )
        })
        .collect();
    Ok(Report { lines, failed: false })
}

fn cutdist(cfg: &Config, out: &Path) -> Result<Report> {
    let s = studies::CutdistSettings::from_config(cfg)?;
    let rows = studies::run_cutdist_study(&s)?;
    let (t, slopes) = studies::cutdist_tables(&rows);
    let mut o = OutDir::create(out, cfg.hash("cutdist-study"))?;
    o.csv("cutdist.csv", &t)?;
    o.csv("cutdist_slopes.csv", &slopes)?;
    let over = rows.iter().filter(|r| r.bound.is_finite() && r.l1 > r.bound).count();
    let mut lines: Vec<String> = slopes
        .rows
        .iter()
        .map(|r| format!("scheme={} order={} slope={}", r[0], r[1], r[2]))
        .collect();
    lines.push(format!("{over} of {} rows exceed their L1 bound", rows.len()));
    Ok(Report { lines, failed: false })
}

fn figures(cfg: &Config, out: &Path) -> Result<Report> {
    let s = studies::FigureSettings::from_config(cfg)?;
    let f = studies::reproduce_figures(&s)?;
    let mut o = OutDir::create(out, cfg.hash("figures"))?;
    o.csv("binned.csv", &f.binned)?;
    for (name, body) in &f.svgs {
        o.text(name, body)?;
    }
    Ok(Report {
        lines: vec![format!("wrote {} files to {}", o.written().len(), out.display())],
        failed: false,
    })
}

fn violation_text(v: &Violation) -> String {
    match v {
        Violation::Loop { order, index } => format!("order {order}: loop at {index:?}"),
        Violation::HeadSymmetry {
            order, index, permuted, ..
        } => {
            format!("order {order}: head symmetry broken between {index:?} and {permuted:?}")
        }
        Violation::FullSymmetry {
            order, index, permuted, ..
        } => {
            format!("order {order}: full symmetry broken between {index:?} and {permuted:?}")
        }
        Violation::Weight { order, index, value } => format!("order {order}: weight {value} at {index:?}"),
        Violation::OutOfRange { order, index } => format!("order {order}: index out of range {index:?}"),
    }
}

fn validate(cfg: &Config, out: &Path) -> Result<Report> {
    let (x_min, x_max) = (cfg.get("x_min", -0.1)?, cfg.get("x_max", 1.1)?);
    let kernels = specs::kernels(cfg, x_min, x_max)?;
    let orders = specs::orders(cfg, &kernels)?;
    let n: usize = cfg.get("n", 100)?;
    let h = specs::hypergraph(&cfg.str_or("hypergraph", specs::DEFAULT_HYPERGRAPH), n, &orders)?;
    let w = specs::hypergraphon(&specs::limit_spec(cfg), &orders)?;
    let t_end: f64 = cfg.get("t_end", 10.0)?;
    let dt: f64 = cfg.get("dt", 0.01)?;
    let snaps = specs::snapshots(cfg, t_end, &evenly(t_end, 4))?;
    let seed: u64 = cfg.get("seed", 1)?;

    let mut t = Table::new(&["check", "status", "detail"]);
    let mut failed = false;
    let mut check = |name: &str, ok: bool, detail: String| {
        failed |= !ok;
        t.push(vec![
            name.into(),
            if ok { "ok" } else { "fail" }.into(),
            detail.replace(',', ";"),
        ]);
    };

    let report = h.validate();
    let detail = report
        .violations
        .iter()
        .take(5)
        .map(violation_text)
        .collect::<Vec<_>>()
        .join("; ");
    check(
        "hypergraph",
        report.is_ok(),
        format!(
            "{} violations (loops {}) {detail}",
            report.violations.len(),
            report.loops()
        ),
    );
    let bound = h.scaling_bound();
    check(
        "hypergraph_scaling",
        bound.is_finite(),
        format!("max_i sum |w| = {}", num(bound)),
    );
    match &w {
        URHypergraphon::Analytic(a) => {
            let problems = a.check_invariants(1000, seed);
            check("hypergraphon", problems.is_empty(), problems.join("; "));
        }
        URHypergraphon::Step(_) => {
            let asym: Vec<usize> = w.active_orders().into_iter().filter(|&l| !w.is_symmetric(l)).collect();
            check("hypergraphon", asym.is_empty(), format!("asymmetric orders {asym:?}"));
        }
    }
    let missing: Vec<usize> = kernels
        .orders()
        .into_iter()
        .filter(|&l| h.tensor(l).is_none())
        .collect();
    check(
        "kernel_orders",
        missing.is_empty(),
        format!("kernel orders without tensors {missing:?}"),
    );
    let a1 = check_assumption1(&kernels, 1.0, 1000, seed)?;
    check(
        "kernels",
        a1.is_ok(),
        format!(
            "bound violations {} lipschitz violations {} symmetry violations {}",
            a1.bound_violations.len(),
            a1.lipschitz_violations.len(),
            a1.symmetry_violations.len()
        ),
    );
    let steps = time_grid(t_end, dt).len();
    check(
        "time_grid",
        dt > 0.0 && steps >= 1,
        format!("{} steps; snapshots {:?}", steps, snaps),
    );

    let mut o = OutDir::create(out, cfg.hash("validate"))?;
    o.csv("validate.csv", &t)?;
    let lines = t
        .rows
        .iter()
        .map(|r| format!("{:<20} {:<5} {}", r[0], r[1], r[2]))
        .collect();
    Ok(Report { lines, failed })
}
