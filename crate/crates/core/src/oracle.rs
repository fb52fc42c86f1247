//! Slow reference implementations that share no search code with the rest
//! of the crate. They query the field one entity at a time through
//! [`FieldConfig`] and are meant for small boxes only.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::field::FieldConfig;
use crate::graph::Orientation;
use crate::lattice::{LatticeBox, OrientedBond, Site};

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Germ,
    Recovery,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    kind: EventKind,
    site: Site,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        let rank = |k: EventKind| match k {
            EventKind::Germ => 0,
            EventKind::Recovery => 1,
        };
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| rank(other.kind).cmp(&rank(self.kind)))
            .then_with(|| other.site.cmp(&self.site))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Health {
    Infected,
    Immune,
}

/// Discrete-event SIR run from the origin inside `bounds` up to `horizon`.
///
/// An infected site `x` emits, towards each neighbour `y`, a first germ at
/// `e(x, y)` after its own infection, provided that happens before it
/// recovers after `T_x`. A germ landing on a healthy site inside the box
/// infects it. Returns `(infection, recovery)` times of infected sites.
pub fn event_epidemic(cfg: &FieldConfig, bounds: &LatticeBox, horizon: f64) -> BTreeMap<Site, (f64, f64)> {
    let mut state: BTreeMap<Site, Health> = BTreeMap::new();
    let mut times: BTreeMap<Site, (f64, f64)> = BTreeMap::new();
    let mut queue = BinaryHeap::new();
    queue.push(Event {
        time: 0.0,
        kind: EventKind::Germ,
        site: Site::origin(cfg.dim),
    });
    while let Some(ev) = queue.pop() {
        if ev.time > horizon {
            break;
        }
        match ev.kind {
            EventKind::Recovery => {
                state.insert(ev.site, Health::Immune);
            }
            EventKind::Germ => {
                if state.contains_key(&ev.site) || !bounds.contains(&ev.site) {
                    continue;
                }
                let x = ev.site;
                let t_x = cfg.recovery_time(&x);
                state.insert(x, Health::Infected);
                times.insert(x, (ev.time, ev.time + t_x));
                queue.push(Event {
                    time: ev.time + t_x,
                    kind: EventKind::Recovery,
                    site: x,
                });
                for dir in cfg.dim.directions() {
                    let e = cfg.edge_clock(&OrientedBond::from_step(x, dir));
                    if e < t_x {
                        queue.push(Event {
                            time: ev.time + e,
                            kind: EventKind::Germ,
                            site: x.step(dir),
                        });
                    }
                }
            }
        }
    }
    times
}

/// Open bond from `a` to `b`, read in the direction of travel.
fn step_open(cfg: &FieldConfig, a: &Site, b: &Site, orient: Orientation) -> bool {
    let bond = match orient {
        Orientation::Out => OrientedBond { from: *a, to: *b },
        Orientation::In => OrientedBond { from: *b, to: *a },
    };
    cfg.is_open(&bond)
}

fn travel_clock(cfg: &FieldConfig, a: &Site, b: &Site) -> f64 {
    cfg.edge_clock(&OrientedBond { from: *a, to: *b })
}

/// Visits every self-avoiding open path from `x` inside `bounds` whose
/// interior satisfies `interior`, calling `visit(path)` for each prefix.
/// `visit` returns false to stop extending a prefix.
fn walk<F>(cfg: &FieldConfig, bounds: &LatticeBox, orient: Orientation, interior: &dyn Fn(&Site) -> bool, path: &mut Vec<Site>, visit: &mut F)
where
    F: FnMut(&[Site]) -> bool,
{
    if !visit(path) {
        return;
    }
    let last = *path.last().expect("non-empty path");
    if path.len() > 1 && !interior(&last) {
        return;
    }
    for y in last.neighbors() {
        if !bounds.contains(&y) || path.contains(&y) || !step_open(cfg, &last, &y, orient) {
            continue;
        }
        path.push(y);
        walk(cfg, bounds, orient, interior, path, visit);
        path.pop();
    }
}

/// Minimal hop counts from `x` over all self-avoiding open paths in
/// `bounds` with interior in `interior`, including end points outside it.
pub fn brute_hops(
    cfg: &FieldConfig,
    x: &Site,
    orient: Orientation,
    interior: &dyn Fn(&Site) -> bool,
    bounds: &LatticeBox,
) -> BTreeMap<Site, u32> {
    let mut best: BTreeMap<Site, u32> = BTreeMap::new();
    let mut path = vec![*x];
    walk(cfg, bounds, orient, interior, &mut path, &mut |p| {
        let h = (p.len() - 1) as u32;
        let end = *p.last().expect("non-empty");
        match best.get(&end) {
            Some(&b) if b < h => false,
            _ => {
                best.insert(end, h);
                true
            }
        }
    });
    best
}

/// Minimal passage times from `x` over all self-avoiding open paths in
/// `bounds` with interior in `interior`, summing clocks along the path.
pub fn brute_times(cfg: &FieldConfig, x: &Site, interior: &dyn Fn(&Site) -> bool, bounds: &LatticeBox) -> BTreeMap<Site, f64> {
    let mut best: BTreeMap<Site, f64> = BTreeMap::new();
    let mut path = vec![*x];
    let mut acc = vec![0.0];
    walk(cfg, bounds, Orientation::Out, interior, &mut path, &mut |p| {
        acc.truncate(p.len() - 1);
        let t = match p.len() {
            1 => 0.0,
            k => acc[k - 2] + travel_clock(cfg, &p[k - 2], &p[k - 1]),
        };
        acc.push(t);
        let end = *p.last().expect("non-empty");
        match best.get(&end) {
            Some(&b) if b < t => false,
            _ => {
                best.insert(end, t);
                true
            }
        }
    });
    best
}

/// Sites `x` with `x → ∂B` (`Out`) and `∂B → x` (`In`) inside `bounds`
/// along paths of at least one bond, each tested by its own search.
pub fn brute_tilde_c(cfg: &FieldConfig, bounds: &LatticeBox) -> BTreeSet<Site> {
    let all = |_: &Site| true;
    bounds
        .sites()
        .filter(|x| {
            [Orientation::Out, Orientation::In].into_iter().all(|o| {
                x.neighbors()
                    .into_iter()
                    .filter(|y| bounds.contains(y) && step_open(cfg, x, y, o))
                    .any(|y| reachable(cfg, &y, o, &all, bounds).iter().any(|z| bounds.on_boundary(z)))
            })
        })
        .collect()
}

/// Plain depth-first reachability, interior in `interior`.
pub fn reachable(
    cfg: &FieldConfig,
    x: &Site,
    orient: Orientation,
    interior: &dyn Fn(&Site) -> bool,
    bounds: &LatticeBox,
) -> BTreeSet<Site> {
    let mut seen = BTreeSet::from([*x]);
    let mut stack = vec![*x];
    while let Some(s) = stack.pop() {
        if s != *x && !interior(&s) {
            continue;
        }
        for y in s.neighbors() {
            if bounds.contains(&y) && !seen.contains(&y) && step_open(cfg, &s, &y, orient) {
                seen.insert(y);
                stack.push(y);
            }
        }
    }
    seen
}

/// `(R_x^o, R_x^i)`: every site of an open path from (to) `x` avoiding `tc`.
pub fn brute_roots(cfg: &FieldConfig, x: &Site, tc: &BTreeSet<Site>, bounds: &LatticeBox) -> (BTreeSet<Site>, BTreeSet<Site>) {
    if tc.contains(x) {
        return (BTreeSet::new(), BTreeSet::new());
    }
    let outside = |y: &Site| !tc.contains(y);
    let side = |o| {
        reachable(cfg, x, o, &outside, bounds)
            .into_iter()
            .filter(|y| outside(y))
            .collect()
    };
    (side(Orientation::Out), side(Orientation::In))
}

/// The least hop count and lexicographically least site sequence of an
/// open path `y → z` with every site in `region`, by iterative deepening.
pub fn brute_lex_path(cfg: &FieldConfig, y: &Site, z: &Site, region: &LatticeBox, max_hops: usize) -> Option<Vec<Site>> {
    fn dfs(cfg: &FieldConfig, z: &Site, region: &LatticeBox, left: usize, path: &mut Vec<Site>) -> bool {
        let last = *path.last().expect("non-empty");
        if last == *z {
            return true;
        }
        if left == 0 || last.dist_l1(z) as usize > left {
            return false;
        }
        let mut next = last.neighbors();
        next.sort();
        for s in next {
            if region.contains(&s) && !path.contains(&s) && cfg.is_open(&OrientedBond { from: last, to: s }) {
                path.push(s);
                if dfs(cfg, z, region, left - 1, path) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
    (0..=max_hops).find_map(|h| {
        let mut path = vec![*y];
        dfs(cfg, z, region, h, &mut path).then_some(path)
    })
}

/// `(κ, V, Γ̄)` straight from the definition, or `None` when no
/// `l <= l_max` qualifies.
pub fn brute_kappa(
    cfg: &FieldConfig,
    x: &Site,
    tc: &BTreeSet<Site>,
    bounds: &LatticeBox,
    c_prime: i64,
) -> Option<(i64, BTreeSet<Site>, BTreeSet<OrientedBond>)> {
    let (r_out, r_in) = brute_roots(cfg, x, tc, bounds);
    let l_max = (bounds.radius - x.dist_inf(&bounds.center)) / c_prime;
    for l in 1..=l_max {
        let ball = LatticeBox { center: *x, radius: l };
        if r_out.iter().chain(&r_in).any(|r| ball.on_boundary(r)) {
            continue;
        }
        let v: BTreeSet<Site> = ball.sites().filter(|s| tc.contains(s)).collect();
        if v.is_empty() {
            continue;
        }
        let outer = LatticeBox { center: *x, radius: c_prime * l };
        let within = |s: &Site| outer.contains(s);
        let connected = v.iter().all(|a| {
            let r = reachable(cfg, a, Orientation::Out, &within, bounds);
            v.iter().all(|b| r.contains(b))
        });
        if !connected {
            continue;
        }
        let mut gamma: BTreeSet<OrientedBond> = BTreeSet::new();
        for a in ball.sites() {
            for b in a.neighbors() {
                let bond = OrientedBond { from: a, to: b };
                if ball.contains(&b) && cfg.is_open(&bond) {
                    gamma.insert(bond);
                }
            }
        }
        let cap = outer.len();
        for a in &v {
            for b in &v {
                if a == b {
                    continue;
                }
                let p = brute_lex_path(cfg, a, b, &outer, cap).expect("connected pair");
                for w in p.windows(2) {
                    gamma.insert(OrientedBond { from: w[0], to: w[1] });
                }
            }
        }
        return Some((l, v, gamma));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::RecoveryDist;
    use crate::lattice::Dim;

    fn field(d: usize, lambda: f64, rec: &str, seed: u64) -> FieldConfig {
        FieldConfig::new(Dim::new(d).unwrap(), lambda, rec.parse::<RecoveryDist>().unwrap(), seed).unwrap()
    }

    #[test]
    fn closed_field_event_run() {
        let f = field(2, 1e-12, "const:2.0", 1);
        let b = LatticeBox::centered(f.dim, 3).unwrap();
        let r = event_epidemic(&f, &b, 10.0);
        assert_eq!(r.len(), 1);
        assert_eq!(r[&Site::origin(f.dim)], (0.0, 2.0));
    }

    #[test]
    fn open_field_hops_are_l1() {
        let f = field(2, 1e9, "const:1e9", 1);
        let b = LatticeBox::centered(f.dim, 2).unwrap();
        let h = brute_hops(&f, &Site::origin(f.dim), Orientation::Out, &|_| true, &b);
        assert_eq!(h.len(), 25);
        assert!(h.iter().all(|(s, &k)| k as i64 == s.norm_l1()));
    }

    #[test]
    fn lex_path_prefers_smaller_sites() {
        let f = field(2, 1e9, "const:1e9", 1);
        let b = LatticeBox::centered(f.dim, 2).unwrap();
        let y = Site::new(&[0, 0]).unwrap();
        let z = Site::new(&[1, 1]).unwrap();
        let p = brute_lex_path(&f, &y, &z, &b, 4).unwrap();
        assert_eq!(p, vec![y, Site::new(&[0, 1]).unwrap(), z]);
    }
}
