//! One PASS/FAIL line per acceptance criterion.
//!
//! Run with `cargo test -p hypermf-cli --test acceptance`.

use std::time::Instant;

use hypermf::kernels::linear_mean_kernel;
use hypermf::metrics::{cut_norm_exact, operator_norm_infty_to_1};
use hypermf::particle::{integrate, mckean_error_constants};
use hypermf::rng::unit;
use hypermf::vlasov::characteristic;
use hypermf::{
    build_homogeneous, d_p_nu, mean_field_force, solve, solve_continuum, step_transport, vlasov_constants,
    AnalyticHypergraphon, FiberedDensity, FieldPlan, ForceOptions, Grid, KernelFamily, LabelField, Method,
    ParticleState, SolveOptions, URHypergraphon,
};
use hypermf_cli::studies::{
    loglog_slope, run_convergence_study, run_cutdist_study, ConvergenceSettings, CutdistSettings, Scheme,
};
use hypermf_cli::{specs, Config};

/// Criteria known not to hold under the stated setup; see the README.
const EXPECTED_FAIL: &[usize] = &[5, 10];

struct Verdict {
    pass: bool,
    detail: String,
}

type Check = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn cutdist(family: &str, schemes: &[Scheme]) -> Vec<hypermf_cli::studies::CutdistRow> {
    let orders = vec![1, 2];
    let s = CutdistSettings {
        family: family.into(),
        limit: specs::hypergraphon(family, &orders).unwrap(),
        orders,
        n_list: vec![10, 20, 40, 80],
        schemes: schemes.to_vec(),
        nodes: 16,
        offset: 0.5,
        cut: false,
        max_cut_entries: 0,
        restarts: 1,
        seed: 1,
    };
    run_cutdist_study(&s).unwrap()
}

fn c1_homogeneous_rate() -> Verdict {
    let mut worst: f64 = 0.0;
    for theta in [0.1, 0.3] {
        for r in cutdist(&format!("homogeneous theta={theta}"), &[Scheme::Hypergraph]) {
            worst = worst.max(r.l1 / r.bound);
        }
    }
    verdict(worst <= 1.0, format!("max L1/bound = {worst:.4}"))
}

fn c2_lipschitz_rate() -> Verdict {
    let rows = cutdist("balanced f=quadratic", &[Scheme::Pointwise]);
    let mut worst: f64 = 0.0;
    let mut slopes = Vec::new();
    for l in [1, 2] {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.order == l)
            .map(|r| {
                worst = worst.max(r.l1 / r.bound);
                (r.n as f64, r.l1)
            })
            .collect();
        slopes.push(loglog_slope(&pts));
    }
    let ok = worst <= 1.0 && slopes.iter().all(|s| (s + 1.0).abs() <= 0.15);
    verdict(
        ok,
        format!("max L1/bound = {worst:.4}, slopes = {:.3}, {:.3}", slopes[0], slopes[1]),
    )
}

/// Random symmetric `[0,1]`-valued level on `parts` cells.
fn random_level(order: usize, parts: usize, seed: u64, stream: u64) -> Vec<f64> {
    let len = parts.pow(order as u32 + 1);
    (0..len)
        .map(|flat| {
            let mut idx = Vec::with_capacity(order + 1);
            let mut rem = flat;
            for _ in 0..=order {
                idx.push(rem % parts);
                rem /= parts;
            }
            idx.sort_unstable();
            let key = idx.iter().fold(0u64, |a, &v| a * parts as u64 + v as u64);
            unit(seed, stream, key)
        })
        .collect()
}

fn c3_sandwich() -> Verdict {
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for inst in 0..200u64 {
        let parts = 1 + (inst % 4) as usize;
        let order = 1 + ((inst / 4) % 2) as usize;
        let a = random_level(order, parts, 7, 2 * inst);
        let b = random_level(order, parts, 7, 2 * inst + 1);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let cut = cut_norm_exact(&diff, parts, order).unwrap();
        let op = operator_norm_infty_to_1(&diff, parts, order).unwrap();
        let upper = 2f64.powi(order as i32) * cut;
        if cut > op + 1e-12 || op > upper + 1e-12 {
            violations += 1;
        }
        if cut > 0.0 {
            worst_ratio = worst_ratio.max(op / upper);
        }
    }
    verdict(
        violations == 0,
        format!("200 instances, {violations} violations, max op/(2^l cut) = {worst_ratio:.4}"),
    )
}

fn c4_mckean() -> Verdict {
    let k1 = KernelFamily::single(linear_mean_kernel(1));
    let mut err: f64 = 0.0;
    for n in [10usize, 50, 100, 400] {
        let h = specs::hypergraph("allto1", n, &[1]).unwrap();
        let eps = mckean_error_constants(&h, &k1, 2.0).unwrap().eps_p;
        err = err.max((eps - 2.0 * ((n - 1) as f64).sqrt() / n as f64).abs());
    }
    let k = KernelFamily::single(linear_mean_kernel(2));
    let pts: Vec<(f64, f64)> = [50usize, 100, 200, 400]
        .iter()
        .map(|&n| {
            let h = build_homogeneous(n, 0.1, 3).unwrap();
            (n as f64, mckean_error_constants(&h, &k, 2.0).unwrap().eps_p)
        })
        .collect();
    let slope = loglog_slope(&pts);
    let ok = err <= 1e-9 && (slope + 1.0).abs() <= 0.1;
    verdict(
        ok,
        format!("all-to-all max error = {err:.2e}, homogeneous slope = {slope:.4}"),
    )
}

fn c5_convergence() -> Verdict {
    let s = ConvergenceSettings::from_config(&Config::default()).unwrap();
    let res = run_convergence_study(&s).unwrap();
    let means: Vec<f64> = res.summary.iter().map(|r| r.mean_sup).collect();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let halved = means[3] < 0.5 * means[0];
    let marginal: Vec<String> = res
        .summary
        .iter()
        .map(|r| format!("{:.4}", r.mean_sup_marginal))
        .collect();
    verdict(
        decreasing && halved,
        format!(
            "mean sup d_1nu = {:?}, marginal d_BL = [{}]",
            means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>(),
            marginal.join(", ")
        ),
    )
}

fn benchmark() -> (URHypergraphon, KernelFamily, Grid) {
    let grid = Grid::new(64, -0.1, 1.1).unwrap();
    let w = URHypergraphon::Analytic(AnalyticHypergraphon::homogeneous(0.1, [2]));
    let k = KernelFamily::single(linear_mean_kernel(2)).on_box(grid.x_min, grid.x_max);
    (w, k, grid)
}

fn c6_conservation() -> Verdict {
    let n = 50;
    let h = specs::hypergraph("allto1", n, &[2]).unwrap();
    let k = KernelFamily::single(linear_mean_kernel(2));
    let x0 = ParticleState::uniform(n, 0.0, 1.0, 3, 0);
    let s0: f64 = x0.states.iter().sum();
    let traj = integrate(&h, &k, &x0, 10.0, 0.01, Method::Rk4, None).unwrap();
    let drift = traj
        .snapshots()
        .iter()
        .map(|x| (x.states.iter().sum::<f64>() - s0).abs())
        .fold(0.0, f64::max);

    let (w, k, grid) = benchmark();
    let mut rho = FiberedDensity::uniform(grid, 64, 0.0, 1.0).unwrap();
    let mut mass_err: f64 = 0.0;
    for _ in 0..1000 {
        let force = mean_field_force(&w, &rho, &k).unwrap();
        rho = step_transport(&rho, &force, 0.01, 0.9).unwrap();
    }
    for i in 0..rho.nxi() {
        mass_err = mass_err.max((rho.mass(i) - 1.0).abs());
    }
    verdict(
        drift <= 1e-10 && mass_err <= 1e-12,
        format!("particle sum drift = {drift:.2e}, fiber mass error after 1000 steps = {mass_err:.2e}"),
    )
}

fn c7_closed_forms() -> Verdict {
    let h = specs::hypergraph("allto1", 2, &[1]).unwrap();
    let k = KernelFamily::single(linear_mean_kernel(1));
    let x0 = ParticleState::new(vec![0.0, 1.0], 0.0).unwrap();
    let traj = integrate(&h, &k, &x0, 1.0, 0.01, Method::Rk4, None).unwrap();
    let x1 = traj.last().unwrap().states[0];
    let two_agent = (x1 - 0.5 * (1.0 - (-1f64).exp())).abs();

    let w = URHypergraphon::Analytic(AnalyticHypergraphon::constant(1.0, [1]));
    let field = LabelField::from_fn(64, |xi| xi).unwrap();
    let times = [0.5, 1.0, 2.0];
    let sol = solve_continuum(&w, &k, &field, &times, 0.01).unwrap();
    let mut cont: f64 = 0.0;
    for (snap, &t) in sol.iter().zip(&times) {
        for (i, &x) in snap.values.iter().enumerate() {
            let xi = (i as f64 + 0.5) / 64.0;
            cont = cont.max((x - (0.5 + (xi - 0.5) * (-t).exp())).abs());
        }
    }
    verdict(
        two_agent <= 1e-6 && cont <= 1e-4,
        format!("two-agent error = {two_agent:.2e}, continuum error = {cont:.2e}"),
    )
}

fn c8_force_and_flow() -> Verdict {
    let (w, k, grid) = benchmark();
    let consts = vlasov_constants(&w, &k, 64, 1.0).unwrap();
    let rho0 = FiberedDensity::uniform(grid, 64, 0.0, 1.0).unwrap();
    let snaps = solve(&w, &k, &rho0, &[0.0, 1.0, 2.0], SolveOptions::adaptive(0.01)).unwrap();
    let plan = FieldPlan::new(&w, &k, 64, ForceOptions::default()).unwrap();
    let mut max_f: f64 = 0.0;
    let mut flow_excess = f64::NEG_INFINITY;
    for snap in &snaps {
        let f = mean_field_force(&w, &snap.density, &k).unwrap();
        max_f = f.iter().fold(max_f, |m, v| m.max(v.abs()));
        let field = plan.field_of_density(&snap.density).unwrap();
        for s in 0..40u64 {
            let fiber = (s as usize * 13) % 64;
            let x = unit(11, s, 0);
            let y = unit(11, s, 1);
            for t in [0.5, 1.0, 2.0] {
                let dx = (characteristic(&field, fiber, x, t, 200) - characteristic(&field, fiber, y, t, 200)).abs();
                flow_excess = flow_excess.max(dx - (consts.l_f * t).exp() * (x - y).abs());
            }
        }
    }
    verdict(
        max_f <= consts.b_f && flow_excess <= 1e-6,
        format!(
            "max |F| = {max_f:.4} <= B_F = {:.4}, max flow excess = {flow_excess:.2e}",
            consts.b_f
        ),
    )
}

fn shifted(grid: Grid, s: f64) -> FiberedDensity {
    FiberedDensity::uniform(grid, 64, s, 1.0 + s).unwrap()
}

fn c9_stability() -> Verdict {
    let (w, k, grid) = benchmark();
    let consts = vlasov_constants(&w, &k, 64, 1.0).unwrap();
    let rate = consts.c_p + consts.l_f;
    let rho = shifted(grid, 0.0);
    let atoms = rho.to_atoms();
    let times: Vec<f64> = (1..=8).map(|i| 0.25 * i as f64).collect();
    let base = solve(&w, &k, &rho, &times, SolveOptions::adaptive(0.01)).unwrap();
    let mut worst: f64 = 0.0;
    for delta0 in [0.05, 0.1] {
        let (mut lo, mut hi) = (0.0, 0.1);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if d_p_nu(&atoms, &shifted(grid, mid).to_atoms(), 1.0).unwrap() < delta0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let other = shifted(grid, hi);
        let d0 = d_p_nu(&atoms, &other.to_atoms(), 1.0).unwrap();
        let moved = solve(&w, &k, &other, &times, SolveOptions::adaptive(0.01)).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            let d = d_p_nu(&a.density.to_atoms(), &b.density.to_atoms(), 1.0).unwrap();
            worst = worst.max(d / ((rate * a.time).exp() * d0 * 1.05));
        }
    }
    verdict(
        worst <= 1.0,
        format!("max d/(e^((C_p+L_F)t) d0 1.05) = {worst:.4}, C_p + L_F = {rate:.4}"),
    )
}

fn c10_figure() -> Verdict {
    let (w, k, grid) = benchmark();
    let rho0 = FiberedDensity::uniform(grid, 64, 0.0, 1.0).unwrap();
    let snaps = solve(&w, &k, &rho0, &[0.0, 4.0, 8.0, 10.0], SolveOptions::adaptive(0.02)).unwrap();
    let centre = rho0.fiber_index(0.5);
    let edge = rho0.fiber_index(0.05);
    let last = &snaps[3].density;
    let ratio = last.variance(centre) / rho0.variance(centre);
    let ordered = last.variance(centre) < last.variance(edge);
    verdict(
        ratio < 0.2 && ordered,
        format!(
            "centre variance ratio = {ratio:.4}, centre {:.5} < edge {:.5}: {ordered}",
            last.variance(centre),
            last.variance(edge)
        ),
    )
}

fn main() {
    let criteria: [Check; 10] = [
        ("homogeneous L1 rate", c1_homogeneous_rate),
        ("Lipschitz pointwise rate", c2_lipschitz_rate),
        ("cut-norm sandwich", c3_sandwich),
        ("McKean error constant", c4_mckean),
        ("mean-field convergence trend", c5_convergence),
        ("exact conservation", c6_conservation),
        ("closed-form oracles", c7_closed_forms),
        ("force bound and flow contraction", c8_force_and_flow),
        ("initial-data stability", c9_stability),
        ("benchmark concentration", c10_figure),
    ];
    let mut unexpected = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        let start = Instant::now();
        let v = run();
        let expected = EXPECTED_FAIL.contains(&id);
        let status = match (v.pass, expected) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        println!(
            "criterion {id:2} {name}: {status} [{:.1}s] {}",
            start.elapsed().as_secs_f64(),
            v.detail
        );
        if !v.pass && !expected {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("criteria failed: {unexpected:?}");
        std::process::exit(1);
    }
}
