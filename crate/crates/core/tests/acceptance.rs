mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{both_open_probability, field, fkg_pairs, open_probability};
use epishape::epidemic::run_epidemic;
use epishape::shape::{estimate_shape, kappa_tail, radial_limit, sandwich_check, RadialParams, ShapeParams};
use epishape::stats::{
    estimate_lambda_c, fkg_check, survival_profile, tail_fit, tail_fit_curves, LambdaBracket, MonotoneEvent,
    SurvivalCurve, TailFit, TailModel,
};
use epishape::verify::{
    epidemic_oracle_mismatches, small_box_backbone_agrees, small_box_paths_agree, triangle_check, TriangleOutcome,
};
use epishape::{Dim, Direction, FieldConfig, LatticeBox, Orientation, OrientedBond, RecoveryDist, Site};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

const LAWS: [&str; 4] = ["const:1.0", "exp:1.0", "uniform:0.2,1.8", "pareto:1.5,0.5"];

struct Suite {
    filters: Vec<String>,
    results: Vec<(&'static str, bool)>,
}

impl Suite {
    fn wants(&self, name: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| name.contains(f.as_str()))
    }

    fn run(&mut self, name: &'static str, f: impl FnOnce() -> Outcome) {
        if !self.wants(name) {
            return;
        }
        let start = Instant::now();
        let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        let tag = if passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {detail} ({:.1} s)", start.elapsed().as_secs_f64());
        self.results.push((name, passed));
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn oracle_equivalence() -> Outcome {
    let (mut runs, mut mismatches) = (0, 0);
    for d in [2, 3] {
        for s in 0..100u64 {
            let f = field(d, 0.9, LAWS[s as usize % 4], 10_000 + s);
            for horizon in [1e9, 1.5] {
                mismatches += epidemic_oracle_mismatches(&f, 4, horizon).map_err(err)?;
                runs += 1;
            }
        }
    }
    Ok((mismatches == 0, format!("{mismatches} mismatching sites over {runs} runs on B(o,4), d in {{2,3}}")))
}

fn small_box_oracles() -> Outcome {
    let mut bad = Vec::new();
    for s in 0..50u64 {
        if !small_box_paths_agree(&field(2, 0.8, LAWS[s as usize % 4], 20_000 + s)).map_err(err)? {
            bad.push(format!("paths seed {s}"));
        }
        if !small_box_backbone_agrees(&field(2, 0.7, LAWS[s as usize % 4], 30_000 + s), 6, 2).map_err(err)? {
            bad.push(format!("backbone seed {s}"));
        }
    }
    let detail = format!("cluster, D, passage times, C~, roots and kappa on 50 + 50 seeds; {} disagreements", bad.len());
    Ok((bad.is_empty(), if bad.is_empty() { detail } else { format!("{detail}: {}", bad.join(", ")) }))
}

fn coupling_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let dim = Dim::new(3).map_err(err)?;
    let dirs: Vec<Direction> = dim.directions().collect();
    let mut bond_failures = 0;
    for k in 0..10_000 {
        let f = field(3, rng.random_range(0.05..3.0), LAWS[k % 4], 41);
        let g = f.with_lambda(f.lambda + rng.random_range(0.0..3.0));
        let x = Site::new(&[rng.random_range(-50..50), rng.random_range(-50..50), rng.random_range(-50..50)]).map_err(err)?;
        let b = OrientedBond::from_step(x, dirs[rng.random_range(0..dirs.len())]);
        if (f.is_open(&b) && !g.is_open(&b)) || g.edge_clock(&b) > f.edge_clock(&b) {
            bond_failures += 1;
        }
    }
    let mut time_failures = 0;
    for s in 0..20u64 {
        let f = field(3, 0.6, LAWS[s as usize % 4], 42 + s);
        let g = f.with_lambda(1.2);
        let b = LatticeBox::centered(f.dim, 6).map_err(err)?;
        let (a, c) = (run_epidemic(&f, b, 1e9).map_err(err)?, run_epidemic(&g, b, 1e9).map_err(err)?);
        time_failures += b.sites().filter(|x| c.infection_time(x) > a.infection_time(x)).count();
    }
    Ok((
        bond_failures == 0 && time_failures == 0,
        format!("{bond_failures} bond and {time_failures} site violations over 10^4 bonds and 20 trajectories"),
    ))
}

fn marginal_law() -> Outcome {
    let n = 100_000i64;
    let dim = Dim::new(3).map_err(err)?;
    let e2 = dim.directions().nth(2).ok_or("no direction")?;
    let mut parts = Vec::new();
    let mut ok = true;
    for rec in LAWS {
        let f = field(3, 0.7, rec, 50);
        let dist: RecoveryDist = rec.parse().map_err(err)?;
        let hits = (0..n)
            .filter(|&k| {
                let x = Site::new(&[k % 317, k / 317, -3]).expect("valid site");
                f.is_open(&OrientedBond::from_step(x, e2))
            })
            .count();
        let p_hat = hits as f64 / n as f64;
        let p = open_probability(&dist, 0.7);
        let z = (p_hat - p) / (p * (1.0 - p) / n as f64).sqrt();
        ok &= z.abs() <= 3.0;
        parts.push(format!("{rec} z={z:+.2}"));
    }
    Ok((ok, parts.join(", ")))
}

fn fkg_positivity() -> Outcome {
    let f = field(3, 0.8, "exp:1.0", 60);
    let mut worst = f64::INFINITY;
    let mut failed = 0;
    for (u, v) in fkg_pairs(f.dim, 20, 61) {
        let r = fkg_check(&f, &u, &v, 20_000).map_err(err)?;
        if !r.passed {
            failed += 1;
        }
        if r.se > 0.0 {
            worst = worst.min(r.cov / r.se);
        }
    }
    let dist: RecoveryDist = "uniform:0.2,3.0".parse().map_err(err)?;
    let g = field(3, 0.9, "uniform:0.2,3.0", 62);
    let u: MonotoneEvent = "(0,0,0)->(1,0,0)".parse().map_err(err)?;
    let v: MonotoneEvent = "(0,0,0)->(0,1,0)".parse().map_err(err)?;
    let r = fkg_check(&g, &u, &v, 100_000).map_err(err)?;
    let cov = both_open_probability(&dist, 0.9) - open_probability(&dist, 0.9).powi(2);
    let z = (r.cov - cov) / r.se;
    Ok((
        failed == 0 && z.abs() <= 3.0,
        format!("{failed} of 20 pairs below -3 SE (min cov/SE {worst:.2}); same-site pair z={z:+.2} against quadrature"),
    ))
}

fn triangles() -> Outcome {
    let mut total = TriangleOutcome::default();
    for s in 0..30u64 {
        total.add(&triangle_check(&field(3, 1.0, "exp:1.0", 70 + s), 16, 3, 4, 25).map_err(err)?);
    }
    let ok = total.triples >= 500
        && total.pairs >= 500
        && total.subadditivity_violations == 0
        && total.sandwich_violations == 0
        && total.root_escapes == 0;
    Ok((
        ok,
        format!(
            "{} triples with {} subadditivity violations, {} pairs with {} sandwich violations, {} truncated",
            total.triples, total.subadditivity_violations, total.pairs, total.sandwich_violations, total.truncated
        ),
    ))
}

struct Brackets {
    out8: LambdaBracket,
    in8: LambdaBracket,
    out12: LambdaBracket,
}

fn brackets(rec: &str) -> Result<Brackets, String> {
    let f = field(3, 1.0, rec, 80);
    Ok(Brackets {
        out8: estimate_lambda_c(&f, 8, Orientation::Out, 0.05, 400).map_err(err)?,
        in8: estimate_lambda_c(&f, 8, Orientation::In, 0.05, 400).map_err(err)?,
        out12: estimate_lambda_c(&f, 12, Orientation::Out, 0.05, 400).map_err(err)?,
    })
}

fn show(b: &LambdaBracket) -> String {
    format!("[{:.4}, {:.4}]", b.lo, b.hi)
}

fn lambda_c_consistency(all: &[(&str, Brackets)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (rec, b) in all {
        let sym = b.out8.overlaps(&b.in8);
        let size = b.out8.overlaps(&b.out12);
        ok &= sym && size;
        parts.push(format!(
            "{rec}: out {} in {} ({}), n=12 out {} ({})",
            show(&b.out8),
            show(&b.in8),
            if sym { "overlap" } else { "disjoint" },
            show(&b.out12),
            if size { "overlap" } else { "disjoint" },
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn fit_text(f: &TailFit) -> String {
    format!("rate {:.3}±{:.3} R2 {:.3}", f.rate, f.rate_se, f.r2)
}

fn subcritical_decay(all: &[(&str, Brackets)]) -> Outcome {
    let ns: Vec<i64> = (2..=8).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (rec, b) in all {
        let f = field(3, 0.5 * b.out8.midpoint(), rec, 90);
        let out = survival_profile(&f, &ns, Orientation::Out, 4000).map_err(err)?;
        let inc = survival_profile(&f, &ns, Orientation::In, 4000).map_err(err)?;
        // Both directions are fitted on the radii where both curves are positive.
        let keep = |c: &[SurvivalCurve]| -> Vec<SurvivalCurve> {
            c.iter().zip(&out).zip(&inc).filter(|((_, o), i)| o.p_hat > 0.0 && i.p_hat > 0.0).map(|((c, _), _)| *c).collect()
        };
        let fo = tail_fit_curves(&keep(&out), TailModel::Exp).map_err(err)?;
        let fi = tail_fit_curves(&keep(&inc), TailModel::Exp).map_err(err)?;
        for (orient, fit) in [("out", &fo), ("in", &fi)] {
            ok &= fit.rate > 0.0 && fit.r2 >= 0.9;
            parts.push(format!("{rec} {orient} {} on n {}..{}", fit_text(fit), fit.support.0, fit.support.1));
        }
        if rec.starts_with("const") {
            let joint = 1.96 * (fo.rate_se.powi(2) + fi.rate_se.powi(2)).sqrt();
            ok &= (fo.rate - fi.rate).abs() <= joint;
            parts.push(format!("constant T out/in gap {:.3} vs joint CI {joint:.3}", (fo.rate - fi.rate).abs()));
        }
    }
    Ok((ok, parts.join("; ")))
}

fn kappa_tail_decay(lambda_c: f64) -> Outcome {
    let f = field(3, 1.5 * lambda_c, "exp:1.0", 100);
    let k = kappa_tail(&f, 32, 4, 1000, 0).map_err(err)?;
    let fit = k.fit.as_ref().ok_or("too few positive survival points to fit")?;
    Ok((
        fit.rate > 0.0 && fit.r2 >= 0.9,
        format!(
            "lambda {:.3}, L=32, C'=4, l_max {}, {} truncated of 1000; {}",
            f.lambda,
            k.l_max,
            k.truncated(),
            fit_text(fit)
        ),
    ))
}

fn radial_limits(lambda_c: f64) -> Outcome {
    let f = field(3, 1.0, "exp:1.0", 110);
    let mut p = RadialParams::new(32, 100);
    p.c_prime = 4;
    p.lambda_c = Some(lambda_c);
    let e1 = Site::new(&[1, 0, 0]).map_err(err)?;
    let r1 = radial_limit(&f, &e1, &[7, 14, 21, 28], &p).map_err(err)?;
    let (half, last) = (r1.point(14).ok_or("n=14")?, r1.point(28).ok_or("n=28")?);
    let joint = (half.half_width().powi(2) + last.half_width().powi(2)).sqrt();
    let flat = (last.mean - half.mean).abs() <= 2.0 * joint;

    p.first_replica = 100;
    let r2 = radial_limit(&f, &e1.scale(2), &[7, 14], &p).map_err(err)?;
    let m2 = r2.point(14).ok_or("n=14")?;
    let ci = (m2.half_width().powi(2) + (2.0 * last.half_width()).powi(2)).sqrt();
    let homogeneous = (m2.mean - 2.0 * last.mean).abs() <= 3.0 * ci;
    Ok((
        flat && homogeneous,
        format!(
            "e1 means {}; |m28 - m14| {:.4} vs 2 joint CI {:.4}; mu(2e1) {:.4} vs 2 mu(e1) {:.4}, 3 CI {:.4}",
            r1.points.iter().map(|q| format!("{:.4}", q.mean)).collect::<Vec<_>>().join(" "),
            (last.mean - half.mean).abs(),
            2.0 * joint,
            m2.mean,
            2.0 * last.mean,
            3.0 * ci
        ),
    ))
}

fn sandwich_run(f: &FieldConfig, replicas: u64) -> Result<epishape::shape::SandwichReport, String> {
    let reference = estimate_shape(f, 6.0, &ShapeParams::new(32, 60)).map_err(err)?;
    let mut p = ShapeParams::new(32, replicas);
    p.first_replica = 1000;
    sandwich_check(f, 0.3, &[1.5, 3.0, 4.5, 6.0], &reference, &p).map_err(err)
}

fn shape_sandwich() -> Outcome {
    let c = sandwich_run(&field(3, 1.0, "const:1.0", 120), 100)?;
    let trend = |get: fn(&epishape::shape::SandwichRow) -> (f64, f64)| {
        c.rows.windows(2).all(|w| {
            let ((a, sa), (b, sb)) = (get(&w[0]), get(&w[1]));
            b <= a + 2.0 * (sa * sa + sb * sb).sqrt()
        })
    };
    let inner_trend = trend(|r| (r.inner_violation, r.inner_se));
    let outer_trend = trend(|r| (r.outer_violation, r.outer_se));
    let last = c.rows.last().ok_or("empty ladder")?;
    let const_ok = inner_trend
        && outer_trend
        && last.inner_violation < 0.05
        && last.outer_violation < 0.05
        && last.annulus_fraction < 0.05;
    let heavy = sandwich_run(&field(3, 1.0, "pareto:0.5,2.0", 121), 50)?;
    let h = heavy.rows.last().ok_or("empty ladder")?;
    let contrast = h.annulus_fraction > 0.2;
    let fmt = |f: fn(&epishape::shape::SandwichRow) -> f64| {
        c.rows.iter().map(|r| format!("{:.4}", f(r))).collect::<Vec<_>>().join(" ")
    };
    Ok((
        const_ok && contrast,
        format!(
            "constant T, t 1.5..6: inner {}, outer {}, annulus {}; pareto(0.5,2.0) annulus at t=6 {:.3}",
            fmt(|r| r.inner_violation),
            fmt(|r| r.outer_violation),
            fmt(|r| r.annulus_fraction),
            h.annulus_fraction
        ),
    ))
}

fn synthetic_tail_fits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(130);
    let n = 200_000;
    let exp: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln() / 0.7).collect();
    let stretched: Vec<f64> = (0..n).map(|_| (-(1.0 - rng.random::<f64>()).ln()).powi(3)).collect();
    let survival = |xs: &[f64], grid: &[f64]| -> Vec<(f64, f64)> {
        grid.iter().map(|&g| (g, xs.iter().filter(|&&x| x >= g).count() as f64 / xs.len() as f64)).collect()
    };
    let grid_e: Vec<f64> = (1..=8).map(f64::from).collect();
    let grid_s: Vec<f64> = (1..=40).map(|k| f64::from(k) * 1.5).collect();
    let fe = tail_fit(&survival(&exp, &grid_e), TailModel::Exp).map_err(err)?;
    let fs = tail_fit(&survival(&stretched, &grid_s), TailModel::Stretched { root: 3 }).map_err(err)?;
    let ok = (fe.rate - 0.7).abs() <= 0.05 && fe.r2 > 0.99 && (fs.rate - 1.0).abs() <= 0.05 && fs.r2 > 0.99;
    Ok((ok, format!("exp target 0.7: {}; stretched 1/3 target 1.0: {}", fit_text(&fe), fit_text(&fs))))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let filters = args.into_iter().filter(|a| !a.starts_with('-')).collect();
    let mut suite = Suite {
        filters,
        results: Vec::new(),
    };
    suite.run("oracle equivalence", oracle_equivalence);
    suite.run("small-box oracles", small_box_oracles);
    suite.run("coupling monotonicity", coupling_monotonicity);
    suite.run("marginal law", marginal_law);
    suite.run("FKG positivity", fkg_positivity);
    suite.run("subadditivity and sandwich", triangles);

    let dependent = ["subcritical decay", "lambda_c consistency", "kappa tail", "radial limits"];
    let all: Result<Vec<(&str, Brackets)>, String> = if dependent.iter().any(|n| suite.wants(n)) {
        let start = Instant::now();
        let all = ["exp:1.0", "const:1.0"].into_iter().map(|rec| Ok((rec, brackets(rec)?))).collect();
        println!("bracket estimation took {:.1} s", start.elapsed().as_secs_f64());
        all
    } else {
        Ok(Vec::new())
    };
    match &all {
        Ok(all) if all.is_empty() => {}
        Ok(all) => {
            let lambda_c = all[0].1.out8.midpoint();
            suite.run("subcritical decay", || subcritical_decay(all));
            suite.run("lambda_c consistency", || lambda_c_consistency(all));
            suite.run("kappa tail", || kappa_tail_decay(lambda_c));
            suite.run("radial limits", || radial_limits(lambda_c));
        }
        Err(e) => {
            for name in dependent {
                suite.run(name, || Err(e.clone()));
            }
        }
    }
    suite.run("shape sandwich", shape_sandwich);
    suite.run("tail_fit harness", synthetic_tail_fits);

    let passed = suite.results.iter().filter(|r| r.1).count();
    println!("acceptance: {passed}/{} criteria passed", suite.results.len());
    for (name, _) in suite.results.iter().filter(|r| !r.1) {
        println!("  failed: {name}");
    }
    if strict && passed < suite.results.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
