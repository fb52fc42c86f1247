//! Searches over the open digraph: constrained clusters, chemical
//! distances, the finite-volume backbone `C̃`, roots, and the
//! neighbourhoods `κ(x)`, `V(x)`, `Γ̄(x)`.
//!
//! "x → y within A" constrains the interior sites of a path to A but lets
//! its end point leave A. "Outside A" excludes every site of the path,
//! end points included.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::graph::{bfs, OpenGraph, Orientation, UNREACHED};
use crate::lattice::{Direction, LatticeBox, OrientedBond, Site, Slab};

/// Constraint on the interior sites of an exploration.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Box(LatticeBox),
    /// A slab clipped to a box.
    Slab { slab: Slab, bounds: LatticeBox },
    /// Everything except the given sites.
    Complement(BTreeSet<Site>),
    All,
}

impl Region {
    pub fn contains(&self, y: &Site) -> bool {
        match self {
            Region::Box(b) => b.contains(y),
            Region::Slab { slab, bounds } => slab.contains(y) && bounds.contains(y),
            Region::Complement(set) => !set.contains(y),
            Region::All => true,
        }
    }

    /// Membership over the sites of `g`'s window.
    pub fn mask(&self, g: &OpenGraph) -> Vec<bool> {
        let w = g.window();
        match self {
            Region::Box(b) => w.mask_of(b),
            Region::Slab { slab, bounds } => {
                let mut m = w.mask_of(bounds);
                for (i, v) in m.iter_mut().enumerate() {
                    if *v {
                        *v = slab.contains(&w.site(i));
                    }
                }
                m
            }
            Region::Complement(set) => {
                let mut m = vec![true; w.len()];
                for s in set {
                    if let Some(i) = w.index(s) {
                        m[i] = false;
                    }
                }
                m
            }
            Region::All => vec![true; w.len()],
        }
    }

    /// A box containing the region plus its outer shell, when bounded.
    fn bounding_box(&self) -> Option<LatticeBox> {
        match self {
            Region::Box(b) | Region::Slab { bounds: b, .. } => Some(LatticeBox {
                center: b.center,
                radius: b.radius + 1,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterReport {
    pub root: Site,
    pub orientation: Orientation,
    /// `C_x^o(A)` or `C_x^i(A)`: reached sites inside the region.
    pub sites: BTreeSet<Site>,
    /// Minimal bond counts, for the sites above.
    pub hops: BTreeMap<Site, u32>,
    /// End points of region-interior paths that lie outside the region.
    pub exits: BTreeSet<Site>,
    /// The exploration left the region or hit the edge of the sampled box.
    pub touched_boundary: bool,
}

/// Cluster of `x` over the open bonds of an already-sampled window.
pub fn cluster_in(g: &OpenGraph, x: &Site, orient: Orientation, region: &Region, hop_budget: Option<u32>) -> Result<ClusterReport> {
    let w = g.window();
    let src = w
        .index(x)
        .ok_or_else(|| Error::InvalidArgument(format!("root {x} outside the sampled box")))?;
    let mask = region.mask(g);
    let hops = bfs(g, &[src], orient, Some(&mask), hop_budget);
    let mut report = ClusterReport {
        root: *x,
        orientation: orient,
        sites: BTreeSet::new(),
        hops: BTreeMap::new(),
        exits: BTreeSet::new(),
        touched_boundary: false,
    };
    for (i, &h) in hops.iter().enumerate() {
        if h == UNREACHED {
            continue;
        }
        let y = w.site(i);
        if mask[i] {
            report.sites.insert(y);
            report.hops.insert(y, h);
            if w.on_boundary(i) {
                report.touched_boundary = true;
            }
        } else if i != src {
            report.exits.insert(y);
            report.touched_boundary = true;
        }
    }
    Ok(report)
}

/// Cluster of `x` for the field `cfg`. Unbounded regions need a hop budget,
/// which sizes the sampled box.
pub fn cluster(cfg: &FieldConfig, x: &Site, orient: Orientation, region: &Region, hop_budget: Option<u32>) -> Result<ClusterReport> {
    let bounds = match (region.bounding_box(), hop_budget) {
        (Some(b), _) => b,
        (None, Some(h)) => LatticeBox::new(*x, h as i64 + 1)?,
        (None, None) => {
            return Err(Error::InvalidArgument(
                "an unbounded region needs a hop budget".into(),
            ))
        }
    };
    if !bounds.contains(x) {
        return Err(Error::InvalidArgument(format!("root {x} is not in or next to the region")));
    }
    let g = OpenGraph::build(cfg, bounds)?;
    cluster_in(&g, x, orient, region, hop_budget)
}

/// `D(x, y)` restricted to paths with interior in `region`; `None` is ∞.
pub fn chemical_distance_in(g: &OpenGraph, x: &Site, y: &Site, region: &Region) -> Result<Option<u32>> {
    let w = g.window();
    let (src, dst) = match (w.index(x), w.index(y)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidArgument("end points outside the sampled box".into())),
    };
    let mask = region.mask(g);
    let hops = bfs(g, &[src], Orientation::Out, Some(&mask), None);
    Ok((hops[dst] != UNREACHED).then_some(hops[dst]))
}

/// `D(x, y)` for the field `cfg`, exploring the box `bounds`.
pub fn chemical_distance(cfg: &FieldConfig, x: &Site, y: &Site, region: &Region, bounds: LatticeBox) -> Result<Option<u32>> {
    let g = OpenGraph::build(cfg, bounds)?;
    chemical_distance_in(&g, x, y, region)
}

/// Finite-volume proxy for `C̃`: the sites of the window `B_L` joined to
/// `∂B_L` in both directions by open paths of at least one bond within
/// `B_L`. A site of `∂B_L` with no open bonds is not a member.
#[derive(Debug, Clone)]
pub struct TildeC {
    bounds: LatticeBox,
    mask: Vec<bool>,
}

impl TildeC {
    pub fn compute(g: &OpenGraph) -> Result<Self> {
        let w = g.window();
        if w.bounds().radius < 2 {
            return Err(Error::InvalidArgument("the backbone proxy needs L >= 2".into()));
        }
        let boundary: Vec<usize> = (0..w.len()).filter(|&i| w.on_boundary(i)).collect();
        let to_boundary = bfs(g, &boundary, Orientation::In, None, None);
        let from_boundary = bfs(g, &boundary, Orientation::Out, None, None);
        let joined = |i: usize, orient: Orientation, dist: &[u32]| {
            if w.on_boundary(i) {
                g.steps(i, orient).any(|(j, _, _)| dist[j] != UNREACHED)
            } else {
                dist[i] != UNREACHED
            }
        };
        let mask = (0..w.len())
            .map(|i| joined(i, Orientation::Out, &to_boundary) && joined(i, Orientation::In, &from_boundary))
            .collect();
        Ok(TildeC {
            bounds: *w.bounds(),
            mask,
        })
    }

    pub fn bounds(&self) -> &LatticeBox {
        &self.bounds
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains_index(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn contains(&self, g: &OpenGraph, x: &Site) -> bool {
        g.window().index(x).is_some_and(|i| self.mask[i])
    }

    pub fn members(&self, g: &OpenGraph) -> BTreeSet<Site> {
        let w = g.window();
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| w.site(i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `C̃` for `cfg` in `B_L`, returned with the graph it was computed on.
pub fn tilde_c(cfg: &FieldConfig, radius: i64) -> Result<(OpenGraph, TildeC)> {
    let g = OpenGraph::build(cfg, LatticeBox::centered(cfg.dim, radius)?)?;
    let tc = TildeC::compute(&g)?;
    Ok((g, tc))
}

#[derive(Debug, Clone, Serialize)]
pub struct RootPair {
    pub x: Site,
    /// `R_x^o`: sites reachable from x by open paths outside `C̃`.
    pub outgoing: BTreeSet<Site>,
    /// `R_x^i`: sites reaching x by open paths outside `C̃`.
    pub incoming: BTreeSet<Site>,
    /// A root came within one step of the box edge, so it may continue
    /// outside; enlarge the box.
    pub truncated: bool,
}

pub(crate) struct RootIdx {
    pub outgoing: Vec<usize>,
    pub incoming: Vec<usize>,
    pub truncated: bool,
}

pub(crate) fn roots_idx(g: &OpenGraph, tc: &TildeC, x: usize) -> RootIdx {
    let w = g.window();
    if tc.mask[x] {
        return RootIdx {
            outgoing: Vec::new(),
            incoming: Vec::new(),
            truncated: false,
        };
    }
    let outside: Vec<bool> = tc.mask.iter().map(|&m| !m).collect();
    let collect = |orient| -> Vec<usize> {
        bfs(g, &[x], orient, Some(&outside), None)
            .iter()
            .enumerate()
            .filter(|&(i, &h)| h != UNREACHED && outside[i])
            .map(|(i, _)| i)
            .collect()
    };
    let outgoing = collect(Orientation::Out);
    let incoming = collect(Orientation::In);
    let limit = w.bounds().radius - 1;
    let truncated = outgoing
        .iter()
        .chain(&incoming)
        .any(|&i| w.radius_of(i) >= limit);
    RootIdx {
        outgoing,
        incoming,
        truncated,
    }
}

/// Outgoing and incoming roots of `x`.
pub fn roots(g: &OpenGraph, tc: &TildeC, x: &Site) -> Result<RootPair> {
    let w = g.window();
    let inner = w.bounds().radius - 1;
    if x.dist_inf(&w.bounds().center) > inner {
        return Err(Error::InvalidArgument(format!("{x} must lie in B_(L-1)")));
    }
    let xi = w.index(x).expect("checked above");
    let r = roots_idx(g, tc, xi);
    let to_set = |v: &[usize]| v.iter().map(|&i| w.site(i)).collect();
    Ok(RootPair {
        x: *x,
        outgoing: to_set(&r.outgoing),
        incoming: to_set(&r.incoming),
        truncated: r.truncated,
    })
}

/// `κ(x)`, `V(x) = B(x, κ) ∩ C̃` and the bond neighbourhood `Γ̄(x)`.
#[derive(Debug, Clone, Serialize)]
pub struct Neighborhood {
    pub x: Site,
    pub kappa: i64,
    pub c_prime: i64,
    pub v: BTreeSet<Site>,
    pub gamma_bar: BTreeSet<OrientedBond>,
    #[serde(skip)]
    pub(crate) v_idx: Vec<usize>,
}

impl Neighborhood {
    pub fn v_indices(&self) -> &[usize] {
        &self.v_idx
    }
}

/// Largest `l` for which `B(x, C'l)` fits in the window.
fn kappa_limit(g: &OpenGraph, x: &Site, c_prime: i64) -> i64 {
    let w = g.window();
    (w.bounds().radius - x.dist_inf(&w.bounds().center)) / c_prime
}

/// Whether every pair of `v` is connected within `region`: all of `v` lies
/// in one strongly connected component of the region's induced subgraph.
fn pairwise_connected(g: &OpenGraph, v: &[usize], region: &[bool]) -> bool {
    let Some(&first) = v.first() else {
        return false;
    };
    [Orientation::Out, Orientation::In].into_iter().all(|orient| {
        let h = bfs(g, &[first], orient, Some(region), None);
        v.iter().all(|&i| h[i] != UNREACHED)
    })
}

/// Computes `κ(x)` as the least `l ≥ 1` such that no root of `x` meets
/// `∂B(x, l)`, `B(x, l)` meets `C̃`, and every ordered pair of
/// `B(x, l) ∩ C̃` is joined by an open path within `B(x, C'l)`.
pub fn kappa(g: &OpenGraph, tc: &TildeC, x: &Site, c_prime: i64) -> Result<Neighborhood> {
    if c_prime < 2 {
        return Err(Error::InvalidArgument(format!("C' must be at least 2, got {c_prime}")));
    }
    let w = g.window();
    let xi = w
        .index(x)
        .ok_or_else(|| Error::InvalidArgument(format!("{x} outside the sampled box")))?;
    let l_max = kappa_limit(g, x, c_prime);
    if l_max < 1 {
        return Err(Error::Truncated(format!(
            "B({x}, C') does not fit in B_{}",
            w.bounds().radius
        )));
    }
    let roots = roots_idx(g, tc, xi);
    let root_radii: BTreeSet<i64> = roots
        .outgoing
        .iter()
        .chain(&roots.incoming)
        .map(|&i| w.site(i).dist_inf(x))
        .collect();

    for l in 1..=l_max {
        if root_radii.contains(&l) {
            continue;
        }
        let ball = LatticeBox { center: *x, radius: l };
        let v: Vec<usize> = w
            .indices_in(&ball)
            .into_iter()
            .filter(|&i| tc.mask[i])
            .collect();
        if v.is_empty() {
            continue;
        }
        let outer = w.mask_of(&LatticeBox {
            center: *x,
            radius: c_prime * l,
        });
        if !pairwise_connected(g, &v, &outer) {
            continue;
        }
        return Ok(build_neighborhood(g, x, l, c_prime, v, &ball, &outer));
    }
    Err(Error::Truncated(format!(
        "no κ <= {l_max} for {x} in B_{} with C' = {c_prime}",
        w.bounds().radius
    )))
}

fn build_neighborhood(
    g: &OpenGraph,
    x: &Site,
    kappa: i64,
    c_prime: i64,
    v: Vec<usize>,
    ball: &LatticeBox,
    outer: &[bool],
) -> Neighborhood {
    let w = g.window();
    let mut bonds: BTreeSet<(usize, Direction)> = BTreeSet::new();
    // Open bonds inside B(x, κ).
    let inner = w.mask_of(ball);
    for i in w.indices_in(ball) {
        for (j, from, dir) in g.steps(i, Orientation::Out) {
            if inner[j] {
                bonds.insert((from, dir));
            }
        }
    }
    // Γ*_{y,z}: fewest hops, then lexicographically least site sequence,
    // within B(x, C'κ). Greedy descent on the distance-to-target field picks
    // the least admissible next site at every step.
    for &z in &v {
        let to_z = bfs(g, &[z], Orientation::In, Some(outer), None);
        for &y in &v {
            if y == z {
                continue;
            }
            let mut cur = y;
            while cur != z {
                let h = to_z[cur];
                let (next, dir) = g
                    .steps(cur, Orientation::Out)
                    .filter(|&(j, _, _)| to_z[j] != UNREACHED && to_z[j] + 1 == h && (outer[j] || j == z))
                    .map(|(j, _, d)| (j, d))
                    .min_by_key(|&(j, _)| j)
                    .expect("pairwise connectivity was verified");
                bonds.insert((cur, dir));
                cur = next;
            }
        }
    }
    Neighborhood {
        x: *x,
        kappa,
        c_prime,
        v: v.iter().map(|&i| w.site(i)).collect(),
        gamma_bar: bonds
            .into_iter()
            .map(|(i, d)| OrientedBond::from_step(w.site(i), d))
            .collect(),
        v_idx: v,
    }
}

/// `u(x)`: the total passage time of the bonds of `Γ̄(x)`. Every such bond is
/// open, so its passage time is its clock.
pub fn u_weight(cfg: &FieldConfig, nb: &Neighborhood) -> f64 {
    nb.gamma_bar.iter().map(|b| cfg.edge_clock(b)).sum()
}

/// [`u_weight`] reading clocks from a sampled window; bitwise equal to it.
pub fn u_weight_in(g: &OpenGraph, nb: &Neighborhood) -> f64 {
    let w = g.window();
    nb.gamma_bar
        .iter()
        .map(|b| {
            let i = w.index(&b.from).expect("Γ̄ lies in the window");
            g.clock(i, b.direction())
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::RecoveryDist;
    use crate::lattice::Dim;

    fn field(d: usize, lambda: f64, rec: &str, seed: u64) -> FieldConfig {
        FieldConfig::new(Dim::new(d).unwrap(), lambda, rec.parse::<RecoveryDist>().unwrap(), seed).unwrap()
    }

    fn open_field(d: usize) -> FieldConfig {
        field(d, 1e9, "const:1e9", 1)
    }

    fn closed_field(d: usize) -> FieldConfig {
        field(d, 1e-12, "const:1e-3", 1)
    }

    #[test]
    fn fully_open_cluster_is_the_box_with_l1_hops() {
        let f = open_field(3);
        let o = Site::origin(f.dim);
        let b = LatticeBox::centered(f.dim, 3).unwrap();
        let r = cluster(&f, &o, Orientation::Out, &Region::Box(b), None).unwrap();
        assert_eq!(r.sites.len(), b.len());
        for (y, h) in &r.hops {
            assert_eq!(*h as i64, y.norm_l1());
        }
        assert!(r.touched_boundary);
        assert!(!r.exits.is_empty());
    }

    #[test]
    fn closed_field_cluster_is_the_root() {
        let f = closed_field(3);
        let o = Site::origin(f.dim);
        let b = LatticeBox::centered(f.dim, 3).unwrap();
        let r = cluster(&f, &o, Orientation::Out, &Region::Box(b), None).unwrap();
        assert_eq!(r.sites, [o].into());
        assert_eq!(r.hops[&o], 0);
        assert!(!r.touched_boundary);
    }

    #[test]
    fn unbounded_region_needs_budget() {
        let f = open_field(2);
        let o = Site::origin(f.dim);
        assert!(cluster(&f, &o, Orientation::Out, &Region::All, None).is_err());
        let r = cluster(&f, &o, Orientation::Out, &Region::All, Some(2)).unwrap();
        assert_eq!(r.sites.len(), 13);
    }

    #[test]
    fn chemical_distance_trivial_cases() {
        let f = open_field(3);
        let b = LatticeBox::centered(f.dim, 3).unwrap();
        let x = Site::new(&[-1, 2, 0]).unwrap();
        let y = Site::new(&[2, -1, 1]).unwrap();
        assert_eq!(chemical_distance(&f, &x, &x, &Region::All, b).unwrap(), Some(0));
        assert_eq!(chemical_distance(&f, &x, &y, &Region::All, b).unwrap(), Some(7));
        let g = closed_field(3);
        assert_eq!(chemical_distance(&g, &x, &y, &Region::All, b).unwrap(), None);
    }

    #[test]
    fn tilde_c_extremes() {
        let (g, tc) = tilde_c(&open_field(2), 4).unwrap();
        assert_eq!(tc.len(), g.window().len());
        let (_, tc) = tilde_c(&closed_field(2), 4).unwrap();
        assert!(tc.is_empty());
    }

    #[test]
    fn roots_extremes() {
        let (g, tc) = tilde_c(&open_field(2), 4).unwrap();
        let o = Site::origin(g.window().dim());
        let r = roots(&g, &tc, &o).unwrap();
        assert!(r.outgoing.is_empty() && r.incoming.is_empty());

        let (g, tc) = tilde_c(&closed_field(2), 4).unwrap();
        let r = roots(&g, &tc, &o).unwrap();
        assert_eq!(r.outgoing, [o].into());
        assert_eq!(r.incoming, [o].into());
        assert!(!r.truncated);
    }

    #[test]
    fn kappa_in_open_field_is_one() {
        let (g, tc) = tilde_c(&open_field(3), 10).unwrap();
        let o = Site::origin(g.window().dim());
        let nb = kappa(&g, &tc, &o, 8).unwrap();
        assert_eq!(nb.kappa, 1);
        assert_eq!(nb.v.len(), 27);
        assert!(nb.gamma_bar.iter().all(|b| b.from.norm_inf() <= 8 && b.to.norm_inf() <= 8));
    }

    #[test]
    fn kappa_truncates_when_box_too_small() {
        let (g, tc) = tilde_c(&closed_field(2), 6).unwrap();
        let o = Site::origin(g.window().dim());
        assert!(matches!(kappa(&g, &tc, &o, 8), Err(Error::Truncated(_))));
        // All closed: nothing inside reaches C̃, which only holds ∂B_L.
        assert!(matches!(kappa(&g, &tc, &o, 2), Err(Error::Truncated(_))));
    }

    #[test]
    fn u_weight_sums_clocks() {
        let f = field(2, 1.0, "exp:1.0", 3);
        let mut nb = Neighborhood {
            x: Site::origin(f.dim),
            kappa: 1,
            c_prime: 8,
            v: BTreeSet::new(),
            gamma_bar: BTreeSet::new(),
            v_idx: vec![],
        };
        assert_eq!(u_weight(&f, &nb), 0.0);
        let b = OrientedBond::from_step(Site::origin(f.dim), Direction::new(0, true));
        nb.gamma_bar.insert(b);
        assert_eq!(u_weight(&f, &nb), f.edge_clock(&b));
    }

    #[test]
    fn region_monotonicity_of_clusters() {
        let f = field(3, 0.6, "exp:1.0", 9);
        let o = Site::origin(f.dim);
        let g = OpenGraph::build(&f, LatticeBox::centered(f.dim, 6).unwrap()).unwrap();
        let small = Region::Box(LatticeBox::centered(f.dim, 3).unwrap());
        let large = Region::Box(LatticeBox::centered(f.dim, 5).unwrap());
        let a = cluster_in(&g, &o, Orientation::Out, &small, None).unwrap();
        let b = cluster_in(&g, &o, Orientation::Out, &large, None).unwrap();
        assert!(a.sites.is_subset(&b.sites));
    }
}
