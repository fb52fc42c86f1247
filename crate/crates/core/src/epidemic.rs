//! SIR dynamics through the percolation representation.
//!
//! A site is infected at the first-passage time from the origin over open
//! bonds weighted by their clocks, and recovers `T_x` later. Sites outside
//! the box never become infected.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::cluster::Region;
use crate::error::{Error, Result};
use crate::export::format_time;
use crate::field::FieldConfig;
use crate::graph::{dijkstra, DijkstraLimits, OpenGraph, Orientation, Window};
use crate::lattice::{LatticeBox, Site};

#[derive(Debug, Clone)]
pub struct EpidemicTrajectory {
    window: Window,
    horizon: f64,
    infection: Vec<f64>,
    recovery: Vec<f64>,
    touched_boundary: bool,
}

/// `ξ_t` (immune) and `ζ_t` (infected) at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSnapshot {
    pub t: f64,
    pub xi: BTreeSet<Site>,
    pub zeta: BTreeSet<Site>,
}

impl EpidemicTrajectory {
    pub fn bounds(&self) -> &LatticeBox {
        self.window.bounds()
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The infected set reached the edge of the box before the horizon, so
    /// growth was clipped and shape data from this run is biased.
    pub fn touched_boundary(&self) -> bool {
        self.touched_boundary
    }

    /// Infection time by window index; `∞` if never infected.
    pub fn infection_times(&self) -> &[f64] {
        &self.infection
    }

    pub fn recovery_times(&self) -> &[f64] {
        &self.recovery
    }

    pub fn infection_time(&self, x: &Site) -> f64 {
        self.window.index(x).map_or(f64::INFINITY, |i| self.infection[i])
    }

    pub fn recovery_time(&self, x: &Site) -> f64 {
        self.window.index(x).map_or(f64::INFINITY, |i| self.recovery[i])
    }

    /// `{x : infection_time(x) <= t}`, the set `ξ_t ∪ ζ_t`.
    pub fn ever_infected_by(&self, t: f64) -> BTreeSet<Site> {
        self.infection
            .iter()
            .enumerate()
            .filter(|(_, &s)| s <= t)
            .map(|(i, _)| self.window.site(i))
            .collect()
    }

    pub fn snapshot(&self, t: f64) -> StateSnapshot {
        let mut xi = BTreeSet::new();
        let mut zeta = BTreeSet::new();
        for (i, (&inf, &rec)) in self.infection.iter().zip(&self.recovery).enumerate() {
            if inf <= t {
                if rec <= t {
                    xi.insert(self.window.site(i));
                } else {
                    zeta.insert(self.window.site(i));
                }
            }
        }
        StateSnapshot { t, xi, zeta }
    }

    pub fn infected_count(&self) -> usize {
        self.infection.iter().filter(|t| t.is_finite()).count()
    }

    /// CSV with columns `x_1..x_d, infection_time, recovery_time` in site
    /// order, `∞` written as an empty field. Never-infected sites are listed
    /// only when `all_sites` is set.
    pub fn to_csv(&self, all_sites: bool) -> String {
        let d = self.window.dim().get();
        let mut out = String::new();
        for a in 1..=d {
            let _ = write!(out, "x_{a},");
        }
        out.push_str("infection_time,recovery_time\n");
        for (i, (&inf, &rec)) in self.infection.iter().zip(&self.recovery).enumerate() {
            if !inf.is_finite() && !all_sites {
                continue;
            }
            for c in self.window.site(i).coords() {
                let _ = write!(out, "{c},");
            }
            let _ = writeln!(out, "{},{}", format_time(inf), format_time(rec));
        }
        out
    }
}

/// Runs the epidemic from the origin on an already-built graph.
pub fn run_epidemic_on(g: &OpenGraph, horizon: f64) -> Result<EpidemicTrajectory> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let w = g.window();
    let o = Site::origin(w.dim());
    if w.bounds().dist_to_edge(&o) < 1 {
        return Err(Error::InvalidArgument("the origin must be interior to the box".into()));
    }
    let src = w.index(&o).expect("origin is interior");
    let infection = dijkstra(
        g,
        &[src],
        Orientation::Out,
        DijkstraLimits {
            horizon: Some(horizon),
            ..Default::default()
        },
    );
    let recovery: Vec<f64> = infection
        .iter()
        .enumerate()
        .map(|(i, &t)| if t.is_finite() { t + g.sample().recovery(i) } else { f64::INFINITY })
        .collect();
    let touched_boundary = infection
        .iter()
        .enumerate()
        .any(|(i, t)| t.is_finite() && w.on_boundary(i));
    Ok(EpidemicTrajectory {
        window: w.clone(),
        horizon,
        infection,
        recovery,
        touched_boundary,
    })
}

/// Runs the epidemic started at the origin inside `bounds` up to `horizon`.
pub fn run_epidemic(cfg: &FieldConfig, bounds: LatticeBox, horizon: f64) -> Result<EpidemicTrajectory> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let g = OpenGraph::build(cfg, bounds)?;
    run_epidemic_on(&g, horizon)
}

/// `τ(x, y)` over open paths whose interior lies in `region`, on an
/// already-built graph. `0` for `x = y`, `∞` when unreachable.
pub fn passage_time_in(g: &OpenGraph, x: &Site, y: &Site, region: &Region) -> Result<f64> {
    let w = g.window();
    let (src, dst) = match (w.index(x), w.index(y)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidArgument("end points outside the sampled box".into())),
    };
    if src == dst {
        return Ok(0.0);
    }
    let mask = region.mask(g);
    let mut target = vec![false; w.len()];
    target[dst] = true;
    let dist = dijkstra(
        g,
        &[src],
        Orientation::Out,
        DijkstraLimits {
            allowed: Some(&mask),
            targets: Some(&target),
            ..Default::default()
        },
    );
    Ok(dist[dst])
}

/// `τ(x, y)` for the field `cfg`, exploring the box `bounds`.
pub fn passage_time(cfg: &FieldConfig, x: &Site, y: &Site, region: &Region, bounds: LatticeBox) -> Result<f64> {
    let g = OpenGraph::build(cfg, bounds)?;
    passage_time_in(&g, x, y, region)
}
