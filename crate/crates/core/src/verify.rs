//! Exact invariants checked against the oracles, shared by the `verify`
//! command and the test suites.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cluster::{chemical_distance_in, cluster, cluster_in, kappa, roots, tilde_c, u_weight, Region};
use crate::epidemic::{passage_time, passage_time_in, run_epidemic};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, RecoveryDist};
use crate::graph::{bfs, Orientation, UNREACHED};
use crate::lattice::{Dim, LatticeBox, OrientedBond, Site};
use crate::oracle;
use crate::shape::Backbone;
use crate::stats::{critical_threshold, reach_radius, tail_fit, TailModel};

/// Relative slack for inequalities whose two sides add the same clocks in
/// different orders.
pub const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub detail: String,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

fn field(d: usize, lambda: f64, rec: &str, seed: u64) -> FieldConfig {
    let dim = Dim::new(d).expect("valid dimension");
    FieldConfig::new(dim, lambda, rec.parse::<RecoveryDist>().expect("valid law"), seed).expect("valid field")
}

fn tally(name: &'static str, outcomes: impl IntoIterator<Item = Result<bool>>) -> Check {
    let (mut cases, mut failures) = (0, 0);
    let mut detail = String::new();
    for o in outcomes {
        cases += 1;
        match o {
            Ok(true) => {}
            Ok(false) => failures += 1,
            Err(e) => {
                failures += 1;
                if detail.is_empty() {
                    detail = e.to_string();
                }
            }
        }
    }
    Check {
        name,
        cases,
        failures,
        detail,
    }
}

/// Number of sites whose infection or recovery time differs between
/// [`run_epidemic`] and the event-driven oracle.
pub fn epidemic_oracle_mismatches(cfg: &FieldConfig, radius: i64, horizon: f64) -> Result<usize> {
    let b = LatticeBox::centered(cfg.dim, radius)?;
    let tr = run_epidemic(cfg, b, horizon)?;
    let ev = oracle::event_epidemic(cfg, &b, horizon);
    Ok(b.sites()
        .filter(|x| {
            let (inf, rec) = ev.get(x).copied().unwrap_or((f64::INFINITY, f64::INFINITY));
            tr.infection_time(x).to_bits() != inf.to_bits() || tr.recovery_time(x).to_bits() != rec.to_bits()
        })
        .count())
}

/// Compares cluster, chemical distance and passage times with exhaustive
/// path enumeration: window `B(o, 3)`, regions `B(o, 2)` and everything.
pub fn small_box_paths_agree(cfg: &FieldConfig) -> Result<bool> {
    let o = Site::origin(cfg.dim);
    let window = LatticeBox::centered(cfg.dim, 3)?;
    let inner = LatticeBox::centered(cfg.dim, 2)?;
    let g = crate::graph::OpenGraph::build(cfg, window)?;
    let x = o.step(cfg.dim.directions().next().expect("d >= 2"));
    for region in [Region::Box(inner), Region::All] {
        let interior = |s: &Site| region.contains(s);
        for orient in [Orientation::Out, Orientation::In] {
            let rep = cluster_in(&g, &x, orient, &region, None)?;
            if matches!(region, Region::Box(_)) {
                let direct = cluster(cfg, &x, orient, &region, None)?;
                if direct.hops != rep.hops || direct.exits != rep.exits {
                    return Ok(false);
                }
            }
            let brute = oracle::brute_hops(cfg, &x, orient, &interior, &window);
            let brute_in: BTreeMap<Site, u32> = brute
                .iter()
                .filter(|(s, _)| region.contains(s))
                .map(|(s, &h)| (*s, h))
                .collect();
            let exits: BTreeSet<Site> = brute.keys().filter(|s| !region.contains(s)).copied().collect();
            if rep.hops != brute_in || rep.exits != exits || rep.sites.len() != rep.hops.len() {
                return Ok(false);
            }
        }
        let brute = oracle::brute_hops(cfg, &x, Orientation::Out, &interior, &window);
        for y in window.sites() {
            let d = chemical_distance_in(&g, &x, &y, &region)?;
            if d != brute.get(&y).copied() {
                return Ok(false);
            }
        }
    }
    let times = oracle::brute_times(cfg, &x, &|_| true, &inner);
    for y in inner.sites() {
        let t = passage_time(cfg, &x, &y, &Region::All, inner)?;
        let want = times.get(&y).copied().unwrap_or(f64::INFINITY);
        if t.to_bits() != want.to_bits() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Compares `C̃`, roots and `κ` with their definitions, by brute force, in
/// `B_L` for every `x ∈ B_1`.
pub fn small_box_backbone_agrees(cfg: &FieldConfig, radius: i64, c_prime: i64) -> Result<bool> {
    let (g, tc) = tilde_c(cfg, radius)?;
    let bounds = *g.window().bounds();
    let brute_tc = oracle::brute_tilde_c(cfg, &bounds);
    if tc.members(&g) != brute_tc {
        return Ok(false);
    }
    for x in LatticeBox::centered(cfg.dim, 1)?.sites() {
        let r = roots(&g, &tc, &x)?;
        let (bo, bi) = oracle::brute_roots(cfg, &x, &brute_tc, &bounds);
        if r.outgoing != bo || r.incoming != bi {
            return Ok(false);
        }
        let ours = match kappa(&g, &tc, &x, c_prime) {
            Ok(nb) => Some((nb.kappa, nb.v, nb.gamma_bar)),
            Err(Error::Truncated(_)) => None,
            Err(e) => return Err(e),
        };
        if ours != oracle::brute_kappa(cfg, &x, &brute_tc, &bounds, c_prime) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TriangleOutcome {
    pub triples: usize,
    pub subadditivity_violations: usize,
    pub pairs: usize,
    pub sandwich_violations: usize,
    /// Neighbourhoods of sampled points with roots outside `B(x, κ)`.
    pub root_escapes: usize,
    /// Samples skipped because a neighbourhood did not fit in the box.
    pub truncated: usize,
}

impl TriangleOutcome {
    pub fn add(&mut self, o: &TriangleOutcome) {
        self.triples += o.triples;
        self.subadditivity_violations += o.subadditivity_violations;
        self.pairs += o.pairs;
        self.sandwich_violations += o.sandwich_violations;
        self.root_escapes += o.root_escapes;
        self.truncated += o.truncated;
    }
}

fn within_slack(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + ROUNDING_SLACK * (1.0 + rhs.abs())
}

/// Samples `samples` triples `(x, y, z)` uniformly from `B_r` in one window
/// `B_L` and checks `τ̂(x,z) <= τ̂(x,y) + u(y) + τ̂(y,z)`. For each
/// `(x, y)` with `y ∈ C_x^o \ R_x^o` it also checks
/// `τ̂(x,y) <= τ(x,y) <= u(x) + τ̂(x,y) + u(y)`.
pub fn triangle_check(cfg: &FieldConfig, box_radius: i64, sample_radius: i64, c_prime: i64, samples: usize) -> Result<TriangleOutcome> {
    let bb = Backbone::new(cfg, box_radius)?;
    let w = bb.graph.window();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6961);
    let d = cfg.dim.get();
    let mut pick = || -> Site {
        let c: Vec<i64> = (0..d).map(|_| rng.random_range(-sample_radius..=sample_radius)).collect();
        Site::new(&c).expect("small coordinates")
    };
    let mut out = TriangleOutcome::default();
    let mut nbs = BTreeMap::new();
    let mut times: BTreeMap<Site, Vec<f64>> = BTreeMap::new();
    for _ in 0..samples {
        let pts = [pick(), pick(), pick()];
        let mut ok = true;
        for p in &pts {
            if !nbs.contains_key(p) {
                let nb = match bb.neighborhood(p, c_prime) {
                    Ok(nb) => {
                        let r = roots(&bb.graph, &bb.tilde_c, p)?;
                        let ball = LatticeBox { center: *p, radius: nb.kappa };
                        if r.outgoing.iter().chain(&r.incoming).any(|s| !ball.contains(s)) {
                            out.root_escapes += 1;
                        }
                        Some(nb)
                    }
                    Err(Error::Truncated(_)) => None,
                    Err(e) => return Err(e),
                };
                nbs.insert(*p, nb);
            }
            ok &= nbs[p].is_some();
        }
        if !ok {
            out.truncated += 1;
            continue;
        }
        let [x, y, z] = pts;
        for p in [x, y] {
            times
                .entry(p)
                .or_insert_with(|| bb.times_from(nbs[&p].as_ref().expect("checked")));
        }
        let nb = |p: &Site| nbs[p].as_ref().expect("checked");
        let th = |a: &Site, b: &Site| crate::shape::min_over(&times[a], nb(b));
        let lhs = th(&x, &z);
        let rhs = th(&x, &y) + bb.u(nb(&y)) + th(&y, &z);
        out.triples += 1;
        if !within_slack(lhs, rhs) {
            out.subadditivity_violations += 1;
        }

        let xi = w.index(&x).expect("inside");
        let yi = w.index(&y).expect("inside");
        let reach = bfs(&bb.graph, &[xi], Orientation::Out, None, None);
        if reach[yi] == UNREACHED {
            continue;
        }
        let rx = roots(&bb.graph, &bb.tilde_c, &x)?;
        if rx.outgoing.contains(&y) {
            continue;
        }
        let tau = passage_time_in(&bb.graph, &x, &y, &Region::All)?;
        let hat = th(&x, &y);
        out.pairs += 1;
        if !(hat <= tau && within_slack(tau, bb.u(nb(&x)) + hat + bb.u(nb(&y)))) {
            out.sandwich_violations += 1;
        }
    }
    Ok(out)
}

/// Runs every exact check. `quick` shrinks the number of seeds.
pub fn run(quick: bool) -> VerifyReport {
    let scale = |full: u64, q: u64| if quick { q } else { full };
    let mut checks = Vec::new();

    checks.push(tally(
        "box boundary sizes",
        (2..=4).flat_map(|d| {
            (1..=5).map(move |n| -> Result<bool> {
                let b = LatticeBox::centered(Dim::new(d)?, n)?;
                let want = (2 * n + 1).pow(d as u32) - (2 * n - 1).pow(d as u32);
                Ok(b.boundary()?.len() as i64 == want)
            })
        }),
    ));

    checks.push(tally(
        "field determinism and clock scaling",
        (0..scale(200, 40)).map(|s| -> Result<bool> {
            let f = field(3, 0.8, "exp:1.5", s);
            let x = Site::new(&[s as i64 % 7, -3, 2])?;
            let b = OrientedBond::from_step(x, f.dim.directions().nth((s % 6) as usize).expect("6 directions"));
            Ok(f.recovery_time(&x).to_bits() == f.recovery_time(&x).to_bits()
                && f.with_lambda(1.6).edge_clock(&b) == f.edge_clock(&b) / 2.0)
        }),
    ));

    checks.push(tally(
        "open bonds monotone in λ",
        (0..scale(10_000, 2_000)).map(|s| -> Result<bool> {
            let f = field(3, 0.3, "uniform:0.5,2.0", 11);
            let x = Site::new(&[(s % 97) as i64, (s / 97) as i64, 1])?;
            let b = OrientedBond::from_step(x, f.dim.directions().nth((s % 6) as usize).expect("6 directions"));
            let open: Vec<bool> = [0.3, 0.45, 0.9, 2.0].iter().map(|&l| f.with_lambda(l).is_open(&b)).collect();
            Ok(open.windows(2).all(|w| !w[0] || w[1]))
        }),
    ));

    checks.push(tally(
        "infection times monotone in λ",
        (0..scale(20, 5)).map(|s| -> Result<bool> {
            let f = field(3, 0.5, "exp:1.0", s);
            let b = LatticeBox::centered(f.dim, 6)?;
            let a = run_epidemic(&f, b, 1e9)?;
            let c = run_epidemic(&f.with_lambda(0.8), b, 1e9)?;
            Ok(a.infection_times().iter().zip(c.infection_times()).all(|(x, y)| y <= x))
        }),
    ));

    checks.push(tally(
        "epidemic matches event simulation",
        [2usize, 3].into_iter().flat_map(|d| {
            (0..scale(100, 20)).map(move |s| -> Result<bool> {
                let f = field(d, 0.9, ["const:1.0", "exp:1.0", "uniform:0.2,1.8", "pareto:1.5,0.5"][s as usize % 4], s);
                Ok(epidemic_oracle_mismatches(&f, 4, 1e9)? == 0 && epidemic_oracle_mismatches(&f, 4, 1.5)? == 0)
            })
        }),
    ));

    checks.push(tally(
        "cluster, D and τ match path enumeration",
        (0..scale(50, 10)).map(|s| small_box_paths_agree(&field(2, 0.8, "exp:1.0", s))),
    ));

    checks.push(tally(
        "C̃, roots and κ match their definitions",
        (0..scale(50, 10)).map(|s| small_box_backbone_agrees(&field(2, 0.7, "exp:1.0", s), 6, 2)),
    ));

    let mut tri = TriangleOutcome::default();
    let tri_check = (0..scale(10, 3)).map(|s| -> Result<bool> {
        let o = triangle_check(&field(3, 1.0, "exp:1.0", s), 16, 3, 4, 25)?;
        tri.add(&o);
        Ok(o.subadditivity_violations == 0 && o.sandwich_violations == 0 && o.root_escapes == 0)
    });
    let mut c = tally("τ̂ subadditivity and sandwich", tri_check.collect::<Vec<_>>());
    c.detail = format!(
        "{} triples, {} pairs, {} truncated",
        tri.triples, tri.pairs, tri.truncated
    );
    checks.push(c);

    checks.push(tally(
        "infected sets nested in t and snapshots consistent",
        (0..scale(20, 5)).map(|s| -> Result<bool> {
            let f = field(2, 1.2, "exp:1.0", s);
            let tr = run_epidemic(&f, LatticeBox::centered(f.dim, 12)?, 8.0)?;
            let ts = [0.5, 1.0, 2.0, 4.0, 8.0];
            let nested = ts.windows(2).all(|w| tr.ever_infected_by(w[0]).is_subset(&tr.ever_infected_by(w[1])));
            let snaps = ts.iter().all(|&t| {
                let s = tr.snapshot(t);
                s.xi.is_disjoint(&s.zeta) && s.xi.union(&s.zeta).copied().collect::<BTreeSet<_>>() == tr.ever_infected_by(t)
            });
            Ok(nested && snaps)
        }),
    ));

    checks.push(tally(
        "survival events monotone in λ",
        (0..scale(100, 20)).map(|s| -> Result<bool> {
            let f = field(3, 0.2, "exp:1.0", s);
            let o = Site::origin(f.dim);
            let mut ok = true;
            for orient in [Orientation::Out, Orientation::In] {
                let m = critical_threshold(&f, 5, orient)?;
                let mut prev = 0;
                for l in [0.2, 0.3, 0.4, 0.6, 1.0] {
                    let r = reach_radius(&f.with_lambda(l), &o, orient, 5)?;
                    ok &= r >= prev && (r >= 5) == (m < l);
                    prev = r;
                }
            }
            Ok(ok)
        }),
    ));

    checks.push(tally(
        "tail fit recovers synthetic rates",
        [(TailModel::Exp, 0.7), (TailModel::Stretched { root: 3 }, 1.0)].map(|(m, rate)| -> Result<bool> {
            let pts: Vec<(f64, f64)> = (1..=12).map(|n| (n as f64, (-rate * m.abscissa(n as f64)).exp())).collect();
            let fit = tail_fit(&pts, m)?;
            Ok((fit.rate - rate).abs() <= 0.05 && fit.r2 > 0.99)
        }),
    ));

    checks.push(tally(
        "u(x) equals re-summed clocks",
        (0..scale(20, 5)).map(|s| -> Result<bool> {
            let f = field(2, 1.0, "exp:1.0", s);
            let bb = Backbone::new(&f, 12)?;
            let nb = match bb.neighborhood(&Site::origin(f.dim), 4) {
                Ok(nb) => nb,
                Err(Error::Truncated(_)) => return Ok(true),
                Err(e) => return Err(e),
            };
            let direct: f64 = nb.gamma_bar.iter().map(|b| f.edge_clock(b)).sum();
            Ok(u_weight(&f, &nb).to_bits() == direct.to_bits() && bb.u(&nb).to_bits() == direct.to_bits())
        }),
    ));

    VerifyReport { checks }
}
