//! The darned space: Euclidean components, the compact `K` described by
//! concentric shells, the radial level function `g`, its level sets and the
//! hole-counting stability classifier.
//!
//! Each shell is an open annulus `{x : |x - c|` strictly between the K-side
//! radius and the W0-side radius`}`. On it `g` is the radial harmonic function
//! equal to 0 on the K-side sphere and 1 on the W0-side sphere. Level sets
//! `S_r = {g = r}` are therefore spheres, one per shell (two points per shell in
//! dimension 1).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the K-side sphere the shell lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// `{a < |x - c| < b}` with `a < b`; `K` is on the inside.
    Outward,
    /// `{b < |x - c| < a}` with `b < a`; the shell fills a hole of `K` around
    /// a puncture at the center.
    Inward,
}

/// An annular face of `K` together with its piece of `W0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub component: i64,
    pub dim: usize,
    pub center: Vec<f64>,
    /// Radius of the sphere on `∂K` (where `g = 0`).
    pub inner_radius: f64,
    /// Radius of the sphere on `∂W0` (where `g = 1`).
    pub outer_radius: f64,
    pub orientation: Orientation,
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Monotone radial potential: `g` is an affine image of this function.
fn potential(dim: usize, rho: f64) -> f64 {
    match dim {
        1 => rho,
        2 => rho.ln(),
        d => -rho.powi(2 - d as i32),
    }
}

fn potential_inverse(dim: usize, value: f64) -> f64 {
    match dim {
        1 => value,
        2 => value.exp(),
        d => (-value).powf(1.0 / (2.0 - d as f64)),
    }
}

impl Shell {
    pub fn new(
        component: i64,
        center: Vec<f64>,
        inner_radius: f64,
        outer_radius: f64,
        orientation: Orientation,
    ) -> Result<Self> {
        let shell = Self {
            component,
            dim: center.len(),
            center,
            inner_radius,
            outer_radius,
            orientation,
        };
        shell.validate()?;
        Ok(shell)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invariant(
                "shell-dim",
                "dimension must be at least 1",
            ));
        }
        if self.center.len() != self.dim {
            return Err(Error::invariant(
                "shell-center",
                format!(
                    "center has {} coordinates but dim is {}",
                    self.center.len(),
                    self.dim
                ),
            ));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invariant("shell-center", "center must be finite"));
        }
        let (a, b) = (self.inner_radius, self.outer_radius);
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return Err(Error::invariant(
                "shell-radii",
                format!("radii must be positive and finite (a = {a}, b = {b})"),
            ));
        }
        if a == b {
            return Err(Error::invariant(
                "shell-radii",
                format!("inner and outer radius coincide (a = b = {a})"),
            ));
        }
        match self.orientation {
            Orientation::Outward if a > b => Err(Error::invariant(
                "shell-orientation",
                format!("outward shell needs inner < outer (a = {a}, b = {b})"),
            )),
            Orientation::Inward if a < b => Err(Error::invariant(
                "shell-orientation",
                format!("inward shell needs outer < inner (a = {a}, b = {b})"),
            )),
            _ => Ok(()),
        }
    }

    /// Smallest and largest radius of the closed shell.
    pub fn radial_band(&self) -> (f64, f64) {
        let (a, b) = (self.inner_radius, self.outer_radius);
        (a.min(b), a.max(b))
    }

    pub fn thickness(&self) -> f64 {
        (self.outer_radius - self.inner_radius).abs()
    }

    pub fn radius_of(&self, x: &[f64]) -> f64 {
        distance(x, &self.center)
    }

    /// Distance of a radius from the K-side sphere, measured into the shell.
    pub fn depth(&self, rho: f64) -> f64 {
        match self.orientation {
            Orientation::Outward => rho - self.inner_radius,
            Orientation::Inward => self.inner_radius - rho,
        }
    }

    pub fn profile(&self) -> RadialProfile<'_> {
        RadialProfile { shell: self }
    }
}

/// `g` restricted to one shell, with its inverse.
#[derive(Debug, Clone, Copy)]
pub struct RadialProfile<'a> {
    shell: &'a Shell,
}

impl RadialProfile<'_> {
    /// `g` at radius `rho`; no range check.
    pub fn eval(&self, rho: f64) -> f64 {
        let s = self.shell;
        let p0 = potential(s.dim, s.inner_radius);
        let p1 = potential(s.dim, s.outer_radius);
        (potential(s.dim, rho) - p0) / (p1 - p0)
    }

    /// Radius at which `g` equals `level`; no range check.
    pub fn inverse(&self, level: f64) -> f64 {
        let s = self.shell;
        if level <= 0.0 {
            return s.inner_radius;
        }
        if level >= 1.0 {
            return s.outer_radius;
        }
        let p0 = potential(s.dim, s.inner_radius);
        let p1 = potential(s.dim, s.outer_radius);
        potential_inverse(s.dim, p0 + level * (p1 - p0))
    }

    /// `dg/drho`, used for error budgets near the absorbing sphere.
    pub fn slope(&self, rho: f64) -> f64 {
        let s = self.shell;
        let p0 = potential(s.dim, s.inner_radius);
        let p1 = potential(s.dim, s.outer_radius);
        let dp = match s.dim {
            1 => 1.0,
            2 => 1.0 / rho,
            d => (d as f64 - 2.0) * rho.powi(1 - d as i32),
        };
        dp / (p1 - p0)
    }
}

/// Value of the level function on `shell` at radius `rho`.
pub fn radial_g(shell: &Shell, rho: f64) -> Result<f64> {
    let (lo, hi) = shell.radial_band();
    let slack = 1e-12 * hi;
    if !rho.is_finite() || rho < lo - slack || rho > hi + slack {
        return Err(Error::Domain(format!(
            "radius {rho} outside shell band [{lo}, {hi}]"
        )));
    }
    Ok(shell.profile().eval(rho).clamp(0.0, 1.0))
}

/// Radius of the level sphere `S_r` within `shell`.
pub fn level_radius(shell: &Shell, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level {level} outside (0, 1)")));
    }
    Ok(shell.profile().inverse(level))
}

/// Run-wide numerical defaults. Missing values fall back to geometry-derived
/// choices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Defaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

/// A connected piece of `K`: the concentric shells sharing a center.
///
/// The piece occupies the radial interval `[lo, hi]`: a closed ball when
/// there is no inward shell (`lo = 0`), otherwise a closed shell whose hole is
/// filled by the inward shell.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub component: i64,
    pub center: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub outward: usize,
    pub inward: Option<usize>,
    /// Radius of the ball enclosing this piece's part of `W0`.
    pub reach: f64,
}

impl Piece {
    fn distance_to(&self, x: &[f64]) -> f64 {
        let rho = distance(x, &self.center);
        if rho > self.hi {
            rho - self.hi
        } else if rho < self.lo {
            self.lo - rho
        } else {
            0.0
        }
    }
}

/// The darned space: shells across components plus shell weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    shells: Vec<Shell>,
    weights: Vec<f64>,
    defaults: Defaults,
    pieces: Vec<Piece>,
    dims: BTreeMap<i64, usize>,
}

/// Tolerance on the weight sum.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

impl Configuration {
    pub fn new(shells: Vec<Shell>, weights: Vec<f64>, defaults: Defaults) -> Result<Self> {
        if shells.is_empty() {
            return Err(Error::invariant("shells-nonempty", "no shells given"));
        }
        if weights.len() != shells.len() {
            return Err(Error::invariant(
                "weight-count",
                format!("{} weights for {} shells", weights.len(), shells.len()),
            ));
        }
        for (j, s) in shells.iter().enumerate() {
            s.validate().map_err(|e| match e {
                Error::Invariant {
                    constraint,
                    message,
                } => Error::Invariant {
                    constraint,
                    message: format!("shell {j}: {message}"),
                },
                other => other,
            })?;
        }
        for (j, w) in weights.iter().enumerate() {
            if !(0.0..=1.0).contains(w) {
                return Err(Error::invariant(
                    "weight-range",
                    format!("weight of shell {j} is {w}, outside [0, 1]"),
                ));
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::invariant(
                "weight-sum",
                format!("shell weights must sum to 1, got {total}"),
            ));
        }
        if let Some(eps) = defaults.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::invariant("defaults", "epsilon must be positive"));
            }
        }
        if let Some(r0) = defaults.r0 {
            if !(r0 > 0.0 && r0 < 1.0) {
                return Err(Error::invariant("defaults", "r0 must lie in (0, 1)"));
            }
        }
        if defaults.max_steps == Some(0) {
            return Err(Error::invariant("defaults", "max_steps must be positive"));
        }

        let mut dims = BTreeMap::new();
        for (j, s) in shells.iter().enumerate() {
            let d = *dims.entry(s.component).or_insert(s.dim);
            if d != s.dim {
                return Err(Error::invariant(
                    "component-dim",
                    format!(
                        "shell {j} has dim {} but component {} has dim {d}",
                        s.dim, s.component
                    ),
                ));
            }
        }
        let pieces = build_pieces(&shells)?;
        Ok(Self {
            shells,
            weights,
            defaults,
            pieces,
            dims,
        })
    }

    pub fn shells(&self) -> &[Shell] {
        &self.shells
    }

    pub fn shell(&self, j: usize) -> Result<&Shell> {
        self.shells
            .get(j)
            .ok_or_else(|| Error::Precondition(format!("no shell with index {j}")))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn defaults(&self) -> &Defaults {
        &self.defaults
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Dimension of a component, if any shell lives there.
    pub fn component_dim(&self, component: i64) -> Option<usize> {
        self.dims.get(&component).copied()
    }

    pub fn components(&self) -> impl Iterator<Item = (i64, usize)> + '_ {
        self.dims.iter().map(|(c, d)| (*c, *d))
    }

    pub fn max_dim(&self) -> usize {
        self.dims.values().copied().max().unwrap_or(1)
    }

    /// Absorption half-width: the configured value, else `1e-4` times the
    /// thinnest shell.
    pub fn epsilon(&self) -> f64 {
        self.defaults.epsilon.unwrap_or_else(|| {
            1e-4 * self
                .shells
                .iter()
                .map(Shell::thickness)
                .fold(f64::INFINITY, f64::min)
        })
    }

    /// Resurrection level: configured, else `1e-2`.
    pub fn r0(&self) -> f64 {
        self.defaults.r0.unwrap_or(1e-2)
    }

    pub fn max_steps(&self) -> u64 {
        self.defaults.max_steps.unwrap_or(1_000_000)
    }

    /// Distance from `x` in `component` to `K`, with the nearest piece.
    pub fn distance_to_k(&self, component: i64, x: &[f64]) -> (f64, Option<usize>) {
        let mut best = (f64::INFINITY, None);
        for (i, p) in self.pieces.iter().enumerate() {
            if p.component != component {
                continue;
            }
            let d = p.distance_to(x);
            if d < best.0 {
                best = (d, Some(i));
            }
        }
        best
    }

    /// The shell whose closed band contains `x`, with the radius of `x`.
    pub fn locate_shell(&self, component: i64, x: &[f64]) -> Option<(usize, f64)> {
        self.shells.iter().enumerate().find_map(|(j, s)| {
            if s.component != component {
                return None;
            }
            let rho = s.radius_of(x);
            let (lo, hi) = s.radial_band();
            (rho >= lo && rho <= hi).then_some((j, rho))
        })
    }

    /// `g(x)` when `x` lies in a shell.
    pub fn level_at(&self, component: i64, x: &[f64]) -> Option<(usize, f64)> {
        self.locate_shell(component, x)
            .map(|(j, rho)| (j, self.shells[j].profile().eval(rho).clamp(0.0, 1.0)))
    }

    /// Whether `x` lies in the closed compact `K`.
    pub fn in_k(&self, component: i64, x: &[f64]) -> bool {
        self.distance_to_k(component, x).0 == 0.0
    }

    /// The compact `K` as a list of balls and closed shells.
    pub fn compact_description(&self) -> CompactDescription {
        let pieces = self
            .pieces
            .iter()
            .map(|p| CompactPiece {
                component: p.component,
                center: p.center.clone(),
                kind: if p.inward.is_some() {
                    PieceKind::Shell {
                        inner: p.lo,
                        outer: p.hi,
                    }
                } else {
                    PieceKind::Ball { radius: p.hi }
                },
            })
            .collect();
        CompactDescription { pieces }
    }
}

fn build_pieces(shells: &[Shell]) -> Result<Vec<Piece>> {
    // Group by component and exact center.
    let mut groups: Vec<(i64, Vec<f64>, Vec<usize>)> = Vec::new();
    for (j, s) in shells.iter().enumerate() {
        match groups
            .iter_mut()
            .find(|(c, center, _)| *c == s.component && *center == s.center)
        {
            Some(g) => g.2.push(j),
            None => groups.push((s.component, s.center.clone(), vec![j])),
        }
    }
    let mut pieces = Vec::with_capacity(groups.len());
    for (component, center, members) in groups {
        let mut outward = None;
        let mut inward = None;
        for &j in &members {
            let slot = match shells[j].orientation {
                Orientation::Outward => &mut outward,
                Orientation::Inward => &mut inward,
            };
            if let Some(prev) = slot.replace(j) {
                return Err(Error::invariant(
                    "shell-disjoint",
                    format!(
                        "shells {prev} and {j} share a center and orientation; \
                         only one face of each kind per piece of K is supported"
                    ),
                ));
            }
        }
        let outward = outward.ok_or_else(|| {
            Error::invariant(
                "compact",
                format!(
                    "inward shell {} has no outward partner, so K would be unbounded",
                    members[0]
                ),
            )
        })?;
        let hi = shells[outward].inner_radius;
        let lo = inward.map_or(0.0, |i| shells[i].inner_radius);
        if lo >= hi {
            return Err(Error::invariant(
                "shell-disjoint",
                format!(
                    "inward shell {} (radius {lo}) overlaps outward shell {outward} (radius {hi})",
                    inward.unwrap_or(outward)
                ),
            ));
        }
        pieces.push(Piece {
            component,
            center,
            lo,
            hi,
            outward,
            inward,
            reach: shells[outward].outer_radius,
        });
    }
    for (i, p) in pieces.iter().enumerate() {
        for q in &pieces[i + 1..] {
            if p.component == q.component && distance(&p.center, &q.center) <= p.reach + q.reach {
                return Err(Error::invariant(
                    "shell-disjoint",
                    format!(
                        "shells around {:?} and {:?} in component {} overlap",
                        p.center, q.center, p.component
                    ),
                ));
            }
        }
    }
    Ok(pieces)
}

/// Side of a one-dimensional shell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Negative,
    Positive,
}

/// A connected piece of `W0 \ K`: a shell, or one side of a 1-d shell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub shell: usize,
    pub side: Option<Side>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub label: String,
    pub parent: Option<usize>,
    pub face: Option<Face>,
}

/// Connected components of the sublevel sets `A_eta` over decreasing levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTree {
    levels: Vec<f64>,
    nodes: Vec<Vec<TreeNode>>,
}

impl ComponentTree {
    /// Builds a tree from explicit parent links; level 0 nodes have no parent.
    pub fn from_parents(levels: Vec<f64>, parents: Vec<Vec<Option<usize>>>) -> Result<Self> {
        check_levels(&levels)?;
        if parents.len() != levels.len() {
            return Err(Error::Precondition(format!(
                "{} node rows for {} levels",
                parents.len(),
                levels.len()
            )));
        }
        let mut nodes = Vec::with_capacity(parents.len());
        for (n, row) in parents.into_iter().enumerate() {
            let prev_width = if n == 0 { 0 } else { nodes_len(&nodes, n - 1) };
            let mut level_nodes = Vec::with_capacity(row.len());
            for (i, parent) in row.into_iter().enumerate() {
                match (n, parent) {
                    (0, Some(_)) => {
                        return Err(Error::Precondition(
                            "root-level nodes have no parent".into(),
                        ))
                    }
                    (0, None) => {}
                    (_, Some(p)) if p < prev_width => {}
                    _ => {
                        return Err(Error::Precondition(format!(
                            "node {i} at level {n} has no valid parent"
                        )))
                    }
                }
                level_nodes.push(TreeNode {
                    label: format!("L{n}.{i}"),
                    parent,
                    face: None,
                });
            }
            nodes.push(level_nodes);
        }
        Ok(Self { levels, nodes })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level_nodes(&self, n: usize) -> &[TreeNode] {
        &self.nodes[n]
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn children(&self, n: usize, i: usize) -> Vec<usize> {
        match self.nodes.get(n + 1) {
            Some(row) => row
                .iter()
                .enumerate()
                .filter(|(_, node)| node.parent == Some(i))
                .map(|(k, _)| k)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Width at every level; `None` if it varies.
    pub fn width(&self) -> Option<usize> {
        let w = self.nodes.first().map_or(0, Vec::len);
        self.nodes.iter().all(|row| row.len() == w).then_some(w)
    }
}

fn nodes_len(nodes: &[Vec<TreeNode>], n: usize) -> usize {
    nodes[n].len()
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Precondition("no levels given".into()));
    }
    if !(levels[0] > 0.0 && levels[0] <= 1.0) {
        return Err(Error::Precondition(format!(
            "first level {} outside (0, 1]",
            levels[0]
        )));
    }
    for w in levels.windows(2) {
        if !(w[1] < w[0] && w[1] > 0.0) {
            return Err(Error::Precondition(format!(
                "levels must decrease strictly within (0, 1]: {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Component tree of the sublevel sets. Every shell face stays connected at
/// every level, so each node's only child is its own continuation.
pub fn component_tree(config: &Configuration, levels: &[f64]) -> Result<ComponentTree> {
    check_levels(levels)?;
    let mut faces = Vec::new();
    for (j, s) in config.shells().iter().enumerate() {
        if s.dim == 1 {
            faces.push(Face {
                shell: j,
                side: Some(Side::Negative),
            });
            faces.push(Face {
                shell: j,
                side: Some(Side::Positive),
            });
        } else {
            faces.push(Face {
                shell: j,
                side: None,
            });
        }
    }
    let nodes = (0..levels.len())
        .map(|n| {
            faces
                .iter()
                .enumerate()
                .map(|(i, f)| TreeNode {
                    label: face_label(f),
                    parent: (n > 0).then_some(i),
                    face: Some(*f),
                })
                .collect()
        })
        .collect();
    Ok(ComponentTree {
        levels: levels.to_vec(),
        nodes,
    })
}

fn face_label(face: &Face) -> String {
    match face.side {
        None => format!("shell{}", face.shell),
        Some(Side::Negative) => format!("shell{}-", face.shell),
        Some(Side::Positive) => format!("shell{}+", face.shell),
    }
}

/// One closed piece of a compact: a ball or a closed spherical shell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PieceKind {
    Ball { radius: f64 },
    Shell { inner: f64, outer: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactPiece {
    pub component: i64,
    pub center: Vec<f64>,
    #[serde(flatten)]
    pub kind: PieceKind,
}

impl CompactPiece {
    pub fn ball(component: i64, center: Vec<f64>, radius: f64) -> Self {
        Self {
            component,
            center,
            kind: PieceKind::Ball { radius },
        }
    }

    pub fn shell(component: i64, center: Vec<f64>, inner: f64, outer: f64) -> Self {
        Self {
            component,
            center,
            kind: PieceKind::Shell { inner, outer },
        }
    }

    /// Whether `x` (in this piece's component) lies in the closed piece.
    pub fn contains(&self, x: &[f64]) -> bool {
        let rho = distance(x, &self.center);
        match self.kind {
            PieceKind::Ball { radius } => rho <= radius,
            PieceKind::Shell { inner, outer } => rho >= inner && rho <= outer,
        }
    }

    fn spheres(&self) -> Vec<f64> {
        match self.kind {
            PieceKind::Ball { radius } => vec![radius],
            PieceKind::Shell { inner, outer } => vec![inner, outer],
        }
    }
}

/// A compact given as a finite union of balls and closed shells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompactDescription {
    pub pieces: Vec<CompactPiece>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub hole_count: usize,
    pub strongly_stable: bool,
}

#[derive(Debug, Clone)]
struct Sphere {
    center: Vec<f64>,
    radius: f64,
}

impl Sphere {
    /// Strict containment of `other` inside the open ball of `self`.
    fn encloses(&self, other: &Sphere) -> bool {
        distance(&self.center, &other.center) + other.radius < self.radius
    }
}

/// Counts the holes (bounded components of the complement) of a finite union
/// of balls and shells. Finite unions always have finitely many holes, so the
/// compact is reported strongly stable.
pub fn classify_stability(compact: &CompactDescription) -> Result<StabilityReport> {
    let mut by_component: BTreeMap<i64, Vec<&CompactPiece>> = BTreeMap::new();
    for p in &compact.pieces {
        let radii_ok = match p.kind {
            PieceKind::Ball { radius } => radius > 0.0 && radius.is_finite(),
            PieceKind::Shell { inner, outer } => inner > 0.0 && outer > inner && outer.is_finite(),
        };
        if !radii_ok || p.center.is_empty() {
            return Err(Error::invariant(
                "compact-piece",
                format!("piece {p:?} needs positive radii and a center"),
            ));
        }
        by_component.entry(p.component).or_default().push(p);
    }
    let mut holes = 0;
    for (component, pieces) in by_component {
        let dim = pieces[0].center.len();
        if pieces.iter().any(|p| p.center.len() != dim) {
            return Err(Error::invariant(
                "component-dim",
                format!("mixed dimensions in component {component}"),
            ));
        }
        holes += count_holes(&pieces)?;
    }
    Ok(StabilityReport {
        hole_count: holes,
        strongly_stable: true,
    })
}

fn count_holes(pieces: &[&CompactPiece]) -> Result<usize> {
    let spheres: Vec<Sphere> = pieces
        .iter()
        .flat_map(|p| {
            p.spheres().into_iter().map(|radius| Sphere {
                center: p.center.clone(),
                radius,
            })
        })
        .collect();
    for (i, s) in spheres.iter().enumerate() {
        for t in &spheres[i + 1..] {
            if !(s.encloses(t) || t.encloses(s) || separated(s, t)) {
                return Err(Error::UnsupportedGeometry(format!(
                    "boundary spheres (center {:?}, radius {}) and (center {:?}, radius {}) touch or cross",
                    s.center, s.radius, t.center, t.radius
                )));
            }
        }
    }
    if pieces[0].center.len() == 1 {
        return Ok(count_holes_1d(pieces));
    }
    // Spheres form a laminar family. The open region inside sphere `i` and
    // outside its children is connected; it is a hole unless some piece covers
    // it. A point there lies inside exactly the spheres enclosing-or-equal `i`.
    let n = spheres.len();
    let inside: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|k| k == i || spheres[k].encloses(&spheres[i]))
                .collect()
        })
        .collect();
    let mut offsets = Vec::with_capacity(pieces.len());
    let mut acc = 0;
    for p in pieces {
        offsets.push(acc);
        acc += p.spheres().len();
    }
    let holes = (0..n)
        .filter(|&i| {
            !pieces.iter().zip(&offsets).any(|(p, &o)| match p.kind {
                PieceKind::Ball { .. } => inside[i][o],
                PieceKind::Shell { .. } => inside[i][o + 1] && !inside[i][o],
            })
        })
        .count();
    Ok(holes)
}

fn separated(s: &Sphere, t: &Sphere) -> bool {
    distance(&s.center, &t.center) > s.radius + t.radius
}

fn count_holes_1d(pieces: &[&CompactPiece]) -> usize {
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for p in pieces {
        let c = p.center[0];
        match p.kind {
            PieceKind::Ball { radius } => intervals.push((c - radius, c + radius)),
            PieceKind::Shell { inner, outer } => {
                intervals.push((c - outer, c - inner));
                intervals.push((c + inner, c + outer));
            }
        }
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in intervals {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    merged.len().saturating_sub(1)
}
