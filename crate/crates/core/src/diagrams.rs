//! Symbolic Wick algebra with Friedrichs denominators.
//!
//! A [`Diagram`] is a normal-ordered monomial built from interaction vertices:
//! every line carries a momentum label, internal lines join an annihilation leg
//! of one vertex to a creation leg of another, and each application of `Γ`
//! appends one signed energy sum to the denominator list. Terms live in a
//! [`DiagramExpression`], a multiset keyed by canonical form, so two
//! algebraically equal terms always merge.
//!
//! `Γ(X) = X/Δ` with `Δ = Σω(creators) − Σω(annihilators)`, which is what the
//! ε-regularized integral `−i∫₀^∞ e^{−εt} e^{itH₀} X e^{−itH₀} dt` evaluates to.
//!
//! The numeric half compiles one-particle terms against a [`ModelSpec`] of the
//! translation-invariant trilinear family and evaluates `m₂(p)`, `Z₂(p)` and
//! `C₂(p, t)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::model::{Family, ModelSpec};
use crate::quad::{composite_rule, Integral, QuadratureSettings, PANEL_ORDER, TENSOR_CAP};
use crate::{Error, Result};

pub type Line = u32;

/// Signed energy sum `Σ cᵢ ω(kᵢ)` as `(line, cᵢ)` pairs.
pub type EnergySum = Vec<(Line, i32)>;

pub const MAX_RECURSION_ORDER: usize = 4;

const MAX_VERTICES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    /// `v̂(p|q₁,q₂) δ(p−q₁−q₂) a*(p) a(q₁) a(q₂)`.
    Absorb,
    /// `v̂(p|q₁,q₂)‾ δ(p−q₁−q₂) a*(q₁) a*(q₂) a(p)`.
    Emit,
    /// `v(p₁,p₂) a*(p₁) a*(p₂)`, no momentum conservation.
    Create,
    /// `v(p₁,p₂)‾ a(p₁) a(p₂)`.
    Annihilate,
}

impl VertexKind {
    pub fn conserves_momentum(self) -> bool {
        matches!(self, Self::Absorb | Self::Emit)
    }

    pub fn adjoint(self) -> Self {
        match self {
            Self::Absorb => Self::Emit,
            Self::Emit => Self::Absorb,
            Self::Create => Self::Annihilate,
            Self::Annihilate => Self::Create,
        }
    }

    /// Whether the symmetric pair of legs sits on the creation side.
    fn pair_is_out(self) -> bool {
        matches!(self, Self::Emit | Self::Create)
    }

    fn symbol(self) -> &'static str {
        match self {
            Self::Absorb => "vh",
            Self::Emit => "vh*",
            Self::Create => "v",
            Self::Annihilate => "v*",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vertex {
    pub kind: VertexKind,
    /// Creation legs.
    pub out: Vec<Line>,
    /// Annihilation legs.
    pub inn: Vec<Line>,
}

impl Vertex {
    fn new(kind: VertexKind, out: Vec<Line>, inn: Vec<Line>) -> Self {
        Self { kind, out, inn }
    }

    fn adjoint(&self) -> Self {
        Self { kind: self.kind.adjoint(), out: self.inn.clone(), inn: self.out.clone() }
    }
}

/// A Wick monomial without its coefficient. The derived ordering is only
/// meaningful between canonical forms.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Diagram {
    pub vertices: Vec<Vertex>,
    pub creators: Vec<Line>,
    pub annihilators: Vec<Line>,
    /// One entry per `Γ` application.
    pub denominators: Vec<EnergySum>,
    /// Energies `E` of accumulated interaction-picture phases `e^{itE}`.
    pub phases: Vec<EnergySum>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WickTerm {
    pub coeff: Rational64,
    pub diagram: Diagram,
}

impl WickTerm {
    pub fn connected(&self) -> bool {
        self.diagram.is_connected()
    }
}

impl Diagram {
    /// The unit monomial `1`.
    pub fn unit() -> Self {
        Self::default()
    }

    pub fn lines(&self) -> BTreeSet<Line> {
        self.vertices.iter().flat_map(|v| v.out.iter().chain(&v.inn).copied()).collect()
    }

    fn next_line(&self) -> Line {
        self.lines().iter().next_back().map_or(0, |l| l + 1)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.vertices.len();
        if n <= 1 {
            return true;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let mut owner: BTreeMap<Line, usize> = BTreeMap::new();
        for (i, v) in self.vertices.iter().enumerate() {
            for &l in v.out.iter().chain(&v.inn) {
                if let Some(&j) = owner.get(&l) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                } else {
                    owner.insert(l, i);
                }
            }
        }
        let root = find(&mut parent, 0);
        (1..n).all(|i| find(&mut parent, i) == root)
    }

    /// `Σω(creators) − Σω(annihilators)`.
    pub fn external_energy(&self) -> EnergySum {
        self.creators.iter().map(|&l| (l, 1)).chain(self.annihilators.iter().map(|&l| (l, -1))).collect()
    }

    /// Renames every line through `f`, which must be injective.
    pub fn relabeled(&self, f: impl Fn(Line) -> Line) -> Self {
        let es = |e: &EnergySum| e.iter().map(|&(l, c)| (f(l), c)).collect::<EnergySum>();
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| Vertex::new(v.kind, v.out.iter().map(|&l| f(l)).collect(), v.inn.iter().map(|&l| f(l)).collect()))
                .collect(),
            creators: self.creators.iter().map(|&l| f(l)).collect(),
            annihilators: self.annihilators.iter().map(|&l| f(l)).collect(),
            denominators: self.denominators.iter().map(es).collect(),
            phases: self.phases.iter().map(es).collect(),
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            vertices: self.vertices.iter().map(Vertex::adjoint).collect(),
            creators: self.annihilators.clone(),
            annihilators: self.creators.clone(),
            denominators: self.denominators.clone(),
            phases: self.phases.iter().map(|e| e.iter().map(|&(l, c)| (l, -c)).collect()).collect(),
        }
    }

    /// Whether `Σ cᵢ ω(kᵢ)` cancels identically under the momentum constraints.
    pub fn energy_vanishes(&self, e: &EnergySum) -> bool {
        let classes = MomentumSpace::new(self).classes();
        let mut acc: BTreeMap<usize, i32> = BTreeMap::new();
        for &(l, c) in e {
            *acc.entry(classes[&l]).or_default() += c;
        }
        acc.values().all(|&c| c == 0)
    }

    /// Unique representative of the isomorphism class: vertices reordered,
    /// symmetric leg pairs swapped and lines renumbered so that the result is
    /// lexicographically minimal. Energy sums are rewritten on the smallest
    /// label of each momentum class.
    pub fn canonical(&self) -> Self {
        let nv = self.vertices.len();
        assert!(nv <= MAX_VERTICES, "diagram with {nv} vertices exceeds the canonicalization cap");
        let classes = MomentumSpace::new(self).classes();
        let ext_c: BTreeSet<Line> = self.creators.iter().copied().collect();
        let ext_a: BTreeSet<Line> = self.annihilators.iter().copied().collect();
        let colors: Vec<(VertexKind, usize, usize)> = self
            .vertices
            .iter()
            .map(|v| {
                (
                    v.kind,
                    v.out.iter().filter(|l| ext_c.contains(l)).count(),
                    v.inn.iter().filter(|l| ext_a.contains(l)).count(),
                )
            })
            .collect();
        let mut target = colors.clone();
        target.sort();

        let mut best: Option<Diagram> = None;
        let mut order = Vec::with_capacity(nv);
        let mut used = vec![false; nv];
        let mut visit = |order: &[usize]| {
            for mask in 0..(1u32 << nv) {
                let cand = self.encode(order, mask, &classes);
                if best.as_ref().is_none_or(|b| cand < *b) {
                    best = Some(cand);
                }
            }
        };
        vertex_orders(&colors, &target, &mut order, &mut used, &mut visit);
        best.unwrap_or_default()
    }

    fn encode(&self, order: &[usize], mask: u32, classes: &BTreeMap<Line, usize>) -> Diagram {
        let mut relabel: BTreeMap<Line, Line> = BTreeMap::new();
        let mut vertices = Vec::with_capacity(order.len());
        for (pos, &vi) in order.iter().enumerate() {
            let v = &self.vertices[vi];
            let (mut out, mut inn) = (v.out.clone(), v.inn.clone());
            if mask & (1 << pos) != 0 {
                let side = if v.kind.pair_is_out() { &mut out } else { &mut inn };
                side.reverse();
            }
            for &l in out.iter().chain(&inn) {
                let next = relabel.len() as Line;
                relabel.entry(l).or_insert(next);
            }
            vertices.push(Vertex::new(v.kind, out.iter().map(|l| relabel[l]).collect(), inn.iter().map(|l| relabel[l]).collect()));
        }
        let mut rep: BTreeMap<usize, Line> = BTreeMap::new();
        for (l, &c) in classes {
            let r = rep.entry(c).or_insert(Line::MAX);
            *r = (*r).min(relabel[l]);
        }
        let energy = |e: &EnergySum| -> EnergySum {
            let mut acc: BTreeMap<Line, i32> = BTreeMap::new();
            for &(l, c) in e {
                *acc.entry(rep[&classes[&l]]).or_default() += c;
            }
            acc.into_iter().filter(|&(_, c)| c != 0).collect()
        };
        let sorted = |ls: &[Line]| {
            let mut v: Vec<Line> = ls.iter().map(|l| relabel[l]).collect();
            v.sort_unstable();
            v
        };
        let mut denominators: Vec<EnergySum> = self.denominators.iter().map(energy).collect();
        denominators.sort();
        let mut phases: Vec<EnergySum> = self.phases.iter().map(energy).collect();
        phases.sort();
        Diagram {
            vertices,
            creators: sorted(&self.creators),
            annihilators: sorted(&self.annihilators),
            denominators,
            phases,
        }
    }
}

fn vertex_orders(
    colors: &[(VertexKind, usize, usize)],
    target: &[(VertexKind, usize, usize)],
    order: &mut Vec<usize>,
    used: &mut [bool],
    visit: &mut impl FnMut(&[usize]),
) {
    let pos = order.len();
    if pos == colors.len() {
        visit(order);
        return;
    }
    for i in 0..colors.len() {
        if !used[i] && colors[i] == target[pos] {
            used[i] = true;
            order.push(i);
            vertex_orders(colors, target, order, used, visit);
            order.pop();
            used[i] = false;
        }
    }
}

/// Row space of the vertex conservation constraints, in reduced echelon form.
struct MomentumSpace {
    lines: Vec<Line>,
    index: BTreeMap<Line, usize>,
    rows: Vec<Vec<Rational64>>,
    pivots: Vec<usize>,
}

fn zero() -> Rational64 {
    Rational64::from_integer(0)
}

fn is_zero(r: &Rational64) -> bool {
    *r.numer() == 0
}

fn rref(mut rows: Vec<Vec<Rational64>>, ncols: usize) -> (Vec<Vec<Rational64>>, Vec<usize>) {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        let Some(p) = (r..rows.len()).find(|&i| !is_zero(&rows[i][c])) else { continue };
        rows.swap(r, p);
        let lead = rows[r][c];
        for x in rows[r].iter_mut() {
            *x /= lead;
        }
        for i in 0..rows.len() {
            if i != r && !is_zero(&rows[i][c]) {
                let f = rows[i][c];
                let (pr, row) = if i < r {
                    let (a, b) = rows.split_at_mut(r);
                    (&b[0], &mut a[i])
                } else {
                    let (a, b) = rows.split_at_mut(i);
                    (&a[r], &mut b[0])
                };
                for (x, y) in row.iter_mut().zip(pr) {
                    *x -= f * y;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    rows.truncate(r);
    (rows, pivots)
}

impl MomentumSpace {
    fn new(d: &Diagram) -> Self {
        let lines: Vec<Line> = d.lines().into_iter().collect();
        let index: BTreeMap<Line, usize> = lines.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let rows: Vec<Vec<Rational64>> = d
            .vertices
            .iter()
            .filter(|v| v.kind.conserves_momentum())
            .map(|v| {
                let mut row = vec![zero(); lines.len()];
                for l in &v.out {
                    row[index[l]] += 1;
                }
                for l in &v.inn {
                    row[index[l]] -= 1;
                }
                row
            })
            .collect();
        let (rows, pivots) = rref(rows, lines.len());
        Self { lines, index, rows, pivots }
    }

    fn in_span(&self, v: &[Rational64]) -> bool {
        let mut v = v.to_vec();
        for (row, &c) in self.rows.iter().zip(&self.pivots) {
            if !is_zero(&v[c]) {
                let f = v[c];
                for (x, y) in v.iter_mut().zip(row) {
                    *x -= f * y;
                }
            }
        }
        v.iter().all(is_zero)
    }

    /// Lines whose momenta agree up to sign share a class id; identically
    /// vanishing momenta form their own class.
    fn classes(&self) -> BTreeMap<Line, usize> {
        let n = self.lines.len();
        let unit = |i: usize, s: i64| {
            let mut v = vec![zero(); n];
            v[i] = Rational64::from_integer(s);
            v
        };
        let mut class = vec![usize::MAX; n];
        for i in 0..n {
            if self.in_span(&unit(i, 1)) {
                class[i] = n;
            }
        }
        for i in 0..n {
            if class[i] != usize::MAX {
                continue;
            }
            class[i] = i;
            for j in i + 1..n {
                if class[j] != usize::MAX {
                    continue;
                }
                let (mut minus, mut plus) = (unit(i, 1), unit(i, 1));
                minus[j] -= 1;
                plus[j] += 1;
                if self.in_span(&minus) || self.in_span(&plus) {
                    class[j] = i;
                }
            }
        }
        self.lines.iter().map(|&l| (l, class[self.index[&l]])).collect()
    }
}

// ---------------------------------------------------------------------------
// Expressions
// ---------------------------------------------------------------------------

/// Canonical multiset of terms homogeneous of degree `order` in the coupling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagramExpression {
    pub order: usize,
    terms: BTreeMap<Diagram, Rational64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Every partial pairing, including none: the full Wick product.
    Full,
    /// Pairings whose result is connected, `A ⊻ B`.
    AllConnected,
    /// Exactly one contracted line, `A −∘− B`.
    OneLine,
}

impl DiagramExpression {
    pub fn zero(order: usize) -> Self {
        Self { order, terms: BTreeMap::new() }
    }

    pub fn one() -> Self {
        let mut e = Self::zero(0);
        e.insert(Diagram::unit(), Rational64::from_integer(1));
        e
    }

    pub fn from_terms(order: usize, terms: impl IntoIterator<Item = WickTerm>) -> Self {
        let mut e = Self::zero(order);
        for t in terms {
            e.insert(t.diagram, t.coeff);
        }
        e
    }

    /// Adds `coeff · d` after canonicalizing `d`.
    pub fn insert(&mut self, d: Diagram, coeff: Rational64) {
        self.insert_canonical(d.canonical(), coeff);
    }

    fn insert_canonical(&mut self, d: Diagram, coeff: Rational64) {
        if is_zero(&coeff) {
            return;
        }
        let slot = self.terms.entry(d).or_insert_with(zero);
        *slot += coeff;
        if is_zero(slot) {
            self.terms.retain(|_, c| !is_zero(c));
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = WickTerm> + '_ {
        self.terms.iter().map(|(d, &c)| WickTerm { coeff: c, diagram: d.clone() })
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.order = self.order.max(other.order);
        for (d, &c) in &other.terms {
            out.insert_canonical(d.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(Rational64::from_integer(-1)))
    }

    pub fn neg(&self) -> Self {
        self.scale(Rational64::from_integer(-1))
    }

    pub fn scale(&self, s: Rational64) -> Self {
        let mut out = Self::zero(self.order);
        for (d, &c) in &self.terms {
            out.insert_canonical(d.clone(), c * s);
        }
        out
    }

    pub fn project(&self, keep: impl Fn(&Diagram) -> bool) -> Self {
        Self { order: self.order, terms: self.terms.iter().filter(|(d, _)| keep(d)).map(|(d, &c)| (d.clone(), c)).collect() }
    }

    /// `(X)₁,₁`: one creator and one annihilator.
    pub fn one_one(&self) -> Self {
        self.project(|d| d.creators.len() == 1 && d.annihilators.len() == 1)
    }

    /// `(X)_c`.
    pub fn connected(&self) -> Self {
        self.project(Diagram::is_connected)
    }

    pub fn vacuum(&self) -> Self {
        self.project(|d| d.creators.is_empty() && d.annihilators.is_empty())
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero(self.order);
        for (d, &c) in &self.terms {
            out.insert(d.adjoint(), c);
        }
        out
    }

    /// `e^{itH₀} X e^{−itH₀}`: every term gains the phase of its external energy.
    pub fn time_evolved(&self) -> Self {
        let mut out = Self::zero(self.order);
        for (d, &c) in &self.terms {
            let mut d = d.clone();
            let e = d.external_energy();
            d.phases.push(e);
            out.insert(d, c);
        }
        out
    }

    /// Deterministic text form, one term per line:
    /// `coeff | creators | annihilators | kernels | denominators [| phases]`.
    pub fn serialize(&self) -> String {
        self.to_string()
    }
}

fn fmt_lines(ls: &[Line]) -> String {
    if ls.is_empty() {
        "-".into()
    } else {
        ls.iter().map(|l| format!("k{l}")).collect::<Vec<_>>().join(",")
    }
}

fn fmt_energy(e: &EnergySum) -> String {
    let mut s = String::new();
    for &(l, c) in e {
        s.push(if c < 0 { '-' } else { '+' });
        if c.abs() != 1 {
            s.push_str(&c.abs().to_string());
        }
        s.push_str(&format!("k{l}"));
    }
    format!("[{s}]")
}

impl fmt::Display for DiagramExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# order {} terms {}", self.order, self.terms.len())?;
        for (d, c) in &self.terms {
            let kernels: Vec<String> = d
                .vertices
                .iter()
                .map(|v| match v.kind {
                    VertexKind::Absorb | VertexKind::Create => {
                        format!("{}({}|{})", v.kind.symbol(), fmt_lines(&v.out), fmt_lines(&v.inn))
                    }
                    // Kernel arguments keep the order (single leg | pair).
                    VertexKind::Emit | VertexKind::Annihilate => {
                        format!("{}({}|{})", v.kind.symbol(), fmt_lines(&v.inn), fmt_lines(&v.out))
                    }
                })
                .collect();
            let dens: Vec<String> = d.denominators.iter().map(fmt_energy).collect();
            write!(
                f,
                "{} | {} | {} | {} | {}",
                c,
                fmt_lines(&d.creators),
                fmt_lines(&d.annihilators),
                if kernels.is_empty() { "1".into() } else { kernels.join(" ") },
                if dens.is_empty() { "-".into() } else { dens.join(" ") },
            )?;
            if !d.phases.is_empty() {
                let ph: Vec<String> = d.phases.iter().map(fmt_energy).collect();
                write!(f, " | exp(it{})", ph.join(""))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// `V = V₁,₂ + V₂,₁` of the translation-invariant trilinear family.
pub fn trilinear_interaction() -> DiagramExpression {
    let one = Rational64::from_integer(1);
    DiagramExpression::from_terms(
        1,
        [
            WickTerm {
                coeff: one,
                diagram: Diagram {
                    vertices: vec![Vertex::new(VertexKind::Absorb, vec![0], vec![1, 2])],
                    creators: vec![0],
                    annihilators: vec![1, 2],
                    ..Diagram::default()
                },
            },
            WickTerm {
                coeff: one,
                diagram: Diagram {
                    vertices: vec![Vertex::new(VertexKind::Emit, vec![1, 2], vec![0])],
                    creators: vec![1, 2],
                    annihilators: vec![0],
                    ..Diagram::default()
                },
            },
        ],
    )
}

/// `V = V₂,₀ + V₀,₂`, the two-leg pair-creation interaction.
pub fn pair_interaction() -> DiagramExpression {
    let one = Rational64::from_integer(1);
    DiagramExpression::from_terms(
        1,
        [
            WickTerm {
                coeff: one,
                diagram: Diagram {
                    vertices: vec![Vertex::new(VertexKind::Create, vec![0, 1], vec![])],
                    creators: vec![0, 1],
                    ..Diagram::default()
                },
            },
            WickTerm {
                coeff: one,
                diagram: Diagram {
                    vertices: vec![Vertex::new(VertexKind::Annihilate, vec![], vec![0, 1])],
                    annihilators: vec![0, 1],
                    ..Diagram::default()
                },
            },
        ],
    )
}

/// Friedrichs `Γ`: divides each term by its external energy difference.
pub fn gamma_op(x: &DiagramExpression) -> Result<DiagramExpression> {
    let mut out = DiagramExpression::zero(x.order);
    for (d, &c) in &x.terms {
        let delta = d.external_energy();
        if d.energy_vanishes(&delta) {
            let mut single = DiagramExpression::zero(x.order);
            single.insert_canonical(d.clone(), c);
            return Err(Error::Symbolic(format!(
                "Γ applied to a term with identically vanishing energy difference: {}",
                single.to_string().lines().nth(1).unwrap_or_default()
            )));
        }
        let mut d = d.clone();
        d.denominators.push(delta);
        out.insert(d, c);
    }
    Ok(out)
}

/// `Γ_r(X) = Γ(X − X₁,₁)`.
pub fn gamma_r(x: &DiagramExpression) -> Result<DiagramExpression> {
    gamma_op(&x.sub(&x.one_one()))
}

/// Partial injective matchings of `n_ann` annihilators onto `n_cre` creators.
fn pairings(n_ann: usize, n_cre: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(i: usize, n_ann: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if i == n_ann {
            out.push(cur.clone());
            return;
        }
        go(i + 1, n_ann, used, cur, out);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur.push((i, j));
                go(i + 1, n_ann, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, n_ann, &mut vec![false; n_cre], &mut Vec::new(), &mut out);
    out
}

/// Product `A·B` with the given annihilator(A)/creator(B) contractions.
fn contract(a: &Diagram, b: &Diagram, pairs: &[(usize, usize)]) -> Diagram {
    let off = a.next_line().max(a.creators.iter().chain(&a.annihilators).map(|l| l + 1).max().unwrap_or(0));
    let mut merge: BTreeMap<Line, Line> = BTreeMap::new();
    for &(i, j) in pairs {
        merge.insert(b.creators[j] + off, a.annihilators[i]);
    }
    let b = b.relabeled(|l| {
        let l = l + off;
        merge.get(&l).copied().unwrap_or(l)
    });
    let paired_a: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
    let paired_b: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
    let mut out = a.clone();
    out.vertices.extend(b.vertices);
    out.creators.extend(b.creators.iter().enumerate().filter(|(j, _)| !paired_b.contains(j)).map(|(_, &l)| l));
    out.annihilators = a
        .annihilators
        .iter()
        .enumerate()
        .filter(|(i, _)| !paired_a.contains(i))
        .map(|(_, &l)| l)
        .chain(b.annihilators)
        .collect();
    out.denominators.extend(b.denominators);
    out.phases.extend(b.phases);
    out
}

/// Wick product of `a` and `b` restricted by `mode`.
pub fn wick_connect(a: &DiagramExpression, b: &DiagramExpression, mode: Pairing) -> DiagramExpression {
    let mut out = DiagramExpression::zero(a.order + b.order);
    for (da, &ca) in &a.terms {
        for (db, &cb) in &b.terms {
            for pairs in pairings(da.annihilators.len(), db.creators.len()) {
                if mode == Pairing::OneLine && pairs.len() != 1 {
                    continue;
                }
                let d = contract(da, db, &pairs);
                if mode == Pairing::AllConnected && !d.is_connected() {
                    continue;
                }
                out.insert(d, ca * cb);
            }
        }
    }
    out
}

/// Normal product `:A B:`, no contractions.
pub fn normal_product(a: &DiagramExpression, b: &DiagramExpression) -> DiagramExpression {
    let mut out = DiagramExpression::zero(a.order + b.order);
    for (da, &ca) in &a.terms {
        for (db, &cb) in &b.terms {
            out.insert(contract(da, db, &[]), ca * cb);
        }
    }
    out
}

fn factorial(n: usize) -> i64 {
    (1..=n as i64).product()
}

/// Non-decreasing sequences of positive integers summing to `s`.
fn partitions(s: usize) -> Vec<Vec<usize>> {
    fn go(rest: usize, min: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        for j in min..=rest {
            cur.push(j);
            go(rest - j, j, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(s, 1, &mut Vec::new(), &mut out);
    out
}

// ---------------------------------------------------------------------------
// Intertwining recursion
// ---------------------------------------------------------------------------

/// Order-by-order solution of `Q + V⊻T − (V⊻T)₁,₁ − W−∘−M = 0`,
/// `M = (V⊻T)₁,₁` with `T = :exp W:`, `W = Γ(Q)`. Index `k` holds the
/// coefficient of `λᵏ`; index 0 is empty.
#[derive(Debug, Clone)]
pub struct Recursion {
    pub q: Vec<DiagramExpression>,
    pub m: Vec<DiagramExpression>,
    pub w: Vec<DiagramExpression>,
}

impl Recursion {
    pub fn max_order(&self) -> usize {
        self.q.len() - 1
    }
}

/// `(V⊻T)ₖ` from the multiset expansion `:exp W: = Σ :ΠW_j:/Π mult!`.
fn v_dot_t(v: &DiagramExpression, w: &[DiagramExpression], k: usize) -> DiagramExpression {
    let mut out = DiagramExpression::zero(k);
    for parts in partitions(k - 1) {
        let mut prod = DiagramExpression::one();
        let mut denom = 1i64;
        let mut run = 0;
        for (i, &j) in parts.iter().enumerate() {
            prod = normal_product(&prod, &w[j]);
            run = if i > 0 && parts[i - 1] == j { run + 1 } else { 1 };
            denom *= run as i64;
        }
        out = out.add(&wick_connect(v, &prod, Pairing::AllConnected).scale(Rational64::new(1, denom)));
    }
    out.order = k;
    out
}

/// `(W−∘−M)ₖ = Σⱼ Wⱼ −∘− M_{k−j}`.
fn w_line_m(w: &[DiagramExpression], m: &[DiagramExpression], k: usize) -> DiagramExpression {
    let mut out = DiagramExpression::zero(k);
    for j in 1..k {
        if j < w.len() && k - j < m.len() {
            out = out.add(&wick_connect(&w[j], &m[k - j], Pairing::OneLine));
        }
    }
    out.order = k;
    out
}

pub fn solve_recursion(max_order: usize) -> Result<Recursion> {
    if max_order == 0 {
        return Err(Error::InvalidInput("max_order must be at least 1".into()));
    }
    if max_order > MAX_RECURSION_ORDER {
        return Err(Error::Unsupported(format!("recursion implemented through order {MAX_RECURSION_ORDER}")));
    }
    let v = trilinear_interaction();
    let mut rec = Recursion { q: vec![DiagramExpression::zero(0)], m: vec![DiagramExpression::zero(0)], w: vec![DiagramExpression::zero(0)] };
    for k in 1..=max_order {
        let vt = v_dot_t(&v, &rec.w, k);
        let mk = vt.one_one();
        let qk = mk.sub(&vt).add(&w_line_m(&rec.w, &rec.m, k));
        // W_k only feeds higher orders.
        let wk = if k < max_order { gamma_op(&qk)? } else { DiagramExpression::zero(k) };
        rec.q.push(qk);
        rec.m.push(mk);
        rec.w.push(wk);
    }
    Ok(rec)
}

#[derive(Debug, Clone)]
pub struct RecursionResidual {
    pub order: usize,
    /// `Q + V⊻T − (V⊻T)₁,₁ − W−∘−M` at this order.
    pub intertwining: DiagramExpression,
    /// `M − (V⊻T)₁,₁` at this order.
    pub energy_shift: DiagramExpression,
}

impl RecursionResidual {
    pub fn is_empty(&self) -> bool {
        self.intertwining.is_zero() && self.energy_shift.is_zero()
    }
}

/// Substitutes `Q`, `M` back into the defining equations. `W` is rebuilt from
/// `Q` and `T` is expanded as `Σ :W^m:/m!` over ordered powers, independently
/// of the multiset expansion used by the solver.
pub fn recursion_residual(rec: &Recursion) -> Result<Vec<RecursionResidual>> {
    let n = rec.max_order();
    let v = trilinear_interaction();
    let mut w = vec![DiagramExpression::zero(0)];
    for k in 1..n {
        w.push(gamma_op(&rec.q[k])?);
    }
    // powers[m][s]: order-s part of :W^m:.
    let mut t = vec![DiagramExpression::one()];
    t.extend((1..n).map(DiagramExpression::zero));
    let mut prev: Vec<DiagramExpression> = t.clone();
    for m in 1..n {
        let mut next: Vec<DiagramExpression> = (0..n).map(DiagramExpression::zero).collect();
        for (s, slot) in next.iter_mut().enumerate() {
            for j in 1..=s {
                if !prev[s - j].is_zero() && j < w.len() {
                    *slot = slot.add(&normal_product(&prev[s - j], &w[j]));
                }
            }
        }
        let inv = Rational64::new(1, factorial(m));
        for s in 0..n {
            t[s] = t[s].add(&next[s].scale(inv));
        }
        prev = next;
    }
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let vt = wick_connect(&v, &t[k - 1], Pairing::AllConnected);
        let vt11 = vt.one_one();
        let mut wm = DiagramExpression::zero(k);
        for j in 1..k {
            if j < w.len() {
                wm = wm.add(&wick_connect(&w[j], &rec.m[k - j], Pairing::OneLine));
            }
        }
        out.push(RecursionResidual {
            order: k,
            intertwining: rec.q[k].add(&vt).sub(&vt11).sub(&wm),
            energy_shift: rec.m[k].sub(&vt11),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Closed-form ladder
// ---------------------------------------------------------------------------

fn v_gamma_v_connected() -> Result<DiagramExpression> {
    let v = trilinear_interaction();
    Ok(wick_connect(&v, &gamma_op(&v)?, Pairing::AllConnected))
}

/// `Q₁ = −V`.
pub fn ladder_q1() -> DiagramExpression {
    trilinear_interaction().neg()
}

/// `M₂ = −(VΓV)₁,₁`.
pub fn ladder_m2() -> Result<DiagramExpression> {
    let v = trilinear_interaction();
    Ok(wick_connect(&v, &gamma_op(&v)?, Pairing::Full).one_one().neg())
}

/// `Q₂ = (VΓV)_c − (VΓV)₁,₁`.
pub fn ladder_q2() -> Result<DiagramExpression> {
    let vgv = v_gamma_v_connected()?;
    Ok(vgv.sub(&vgv.one_one()))
}

/// The three summands of `Q₃`:
/// `−(VΓ_r(VΓV))_c`, `−½ V⊻:Γ(V)²:` and `−ΓV −∘− M₂`.
pub fn ladder_q3_summands() -> Result<[DiagramExpression; 3]> {
    let v = trilinear_interaction();
    let gv = gamma_op(&v)?;
    let first = wick_connect(&v, &gamma_r(&v_gamma_v_connected()?)?, Pairing::AllConnected).neg();
    let second = wick_connect(&v, &normal_product(&gv, &gv), Pairing::AllConnected).scale(Rational64::new(-1, 2));
    let third = wick_connect(&gv, &ladder_m2()?, Pairing::OneLine).neg();
    Ok([first, second, third])
}

pub fn ladder_q3() -> Result<DiagramExpression> {
    let [a, b, c] = ladder_q3_summands()?;
    Ok(a.add(&b).add(&c))
}

/// `(VΓ(VΓ_r(VΓV)))₁,₁` with plain products throughout.
fn m4_chain() -> Result<DiagramExpression> {
    let v = trilinear_interaction();
    let vgv = wick_connect(&v, &gamma_op(&v)?, Pairing::Full);
    let inner = wick_connect(&v, &gamma_r(&vgv)?, Pairing::Full);
    Ok(wick_connect(&v, &gamma_op(&inner)?, Pairing::Full).one_one())
}

/// `M₄ = −(VΓ(VΓ_r(VΓV)))₁,₁ − (VΓ²(V)M₂)₁,₁`.
pub fn ladder_m4() -> Result<DiagramExpression> {
    let v = trilinear_interaction();
    let g2v = gamma_op(&gamma_op(&v)?)?;
    let tail = wick_connect(&wick_connect(&v, &g2v, Pairing::Full), &ladder_m2()?, Pairing::Full).one_one();
    Ok(m4_chain()?.neg().sub(&tail))
}

/// `M₄` with `M₂` written out: `−(VΓ(VΓ_r(VΓV)))₁,₁ + (VΓ²(V)(VΓV)₁,₁)₁,₁`.
pub fn ladder_m4_expanded() -> Result<DiagramExpression> {
    let v = trilinear_interaction();
    let g2v = gamma_op(&gamma_op(&v)?)?;
    let vgv11 = wick_connect(&v, &gamma_op(&v)?, Pairing::Full).one_one();
    let tail = wick_connect(&wick_connect(&v, &g2v, Pairing::Full), &vgv11, Pairing::Full).one_one();
    Ok(m4_chain()?.neg().add(&tail))
}

// ---------------------------------------------------------------------------
// Numeric evaluation of one-particle terms
// ---------------------------------------------------------------------------

/// A one-particle term with line momenta solved as `k = a·p + Σ bⱼ ℓⱼ`.
#[derive(Debug, Clone)]
struct CompiledTerm {
    coeff: f64,
    loops: usize,
    forms: Vec<(f64, Vec<f64>)>,
    kernels: Vec<[usize; 2]>,
    denominators: Vec<Vec<(usize, f64)>>,
    phase: Vec<(usize, f64)>,
}

fn to_f64(r: &Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn compile_one_one(d: &Diagram, coeff: Rational64) -> Result<CompiledTerm> {
    if d.creators.len() != 1 || d.annihilators.len() != 1 {
        return Err(Error::Symbolic("only one-particle (1,1) terms can be compiled".into()));
    }
    if d.vertices.iter().any(|v| !v.kind.conserves_momentum()) {
        return Err(Error::Symbolic("one-particle compilation needs momentum-conserving vertices".into()));
    }
    let lines: Vec<Line> = d.lines().into_iter().collect();
    let index: BTreeMap<Line, usize> = lines.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let n = lines.len();
    // Columns: lines, then the external momentum p.
    let mut rows: Vec<Vec<Rational64>> = Vec::new();
    for v in &d.vertices {
        let mut row = vec![zero(); n + 1];
        for l in &v.out {
            row[index[l]] += 1;
        }
        for l in &v.inn {
            row[index[l]] -= 1;
        }
        rows.push(row);
    }
    for l in d.creators.iter().chain(&d.annihilators) {
        let mut row = vec![zero(); n + 1];
        row[index[l]] = Rational64::from_integer(1);
        row[n] = Rational64::from_integer(1);
        rows.push(row);
    }
    let (rows, pivots) = rref(rows, n + 1);
    if pivots.contains(&n) {
        return Err(Error::Symbolic("inconsistent momentum constraints".into()));
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    let mut forms = vec![(0.0, vec![0.0; free.len()]); n];
    for (j, &c) in free.iter().enumerate() {
        forms[c].1[j] = 1.0;
    }
    for (row, &c) in rows.iter().zip(&pivots) {
        forms[c].0 = to_f64(&row[n]);
        for (j, &f) in free.iter().enumerate() {
            forms[c].1[j] = -to_f64(&row[f]);
        }
    }
    let kernels = d
        .vertices
        .iter()
        .map(|v| {
            let pair = if v.kind.pair_is_out() { &v.out } else { &v.inn };
            [index[&pair[0]], index[&pair[1]]]
        })
        .collect();
    let energy = |e: &EnergySum| e.iter().map(|&(l, c)| (index[&l], c as f64)).collect::<Vec<_>>();
    Ok(CompiledTerm {
        coeff: to_f64(&coeff),
        loops: free.len(),
        forms,
        kernels,
        denominators: d.denominators.iter().map(energy).collect(),
        phase: d.phases.iter().flat_map(energy).collect(),
    })
}

impl CompiledTerm {
    /// Returns the static value and the phase energy at one loop point.
    fn eval(&self, spec: &ModelSpec, p: &[f64], loops: &[f64], scratch: &mut Vec<Vec<f64>>, ranges: &mut [(f64, f64)]) -> (f64, f64) {
        let d = spec.d;
        scratch.resize(self.forms.len(), Vec::new());
        for (k, (a, b)) in scratch.iter_mut().zip(&self.forms) {
            k.clear();
            k.extend((0..d).map(|x| a * p[x] + b.iter().enumerate().map(|(j, bj)| bj * loops[j * d + x]).sum::<f64>()));
        }
        let omega: Vec<f64> = scratch.iter().map(|k| spec.dispersion.eval(k)).collect();
        let mut value = self.coeff;
        let mut pair = vec![0.0; 2 * d];
        for &[a, b] in &self.kernels {
            pair[..d].copy_from_slice(&scratch[a]);
            pair[d..].copy_from_slice(&scratch[b]);
            value *= spec.form_factor_flat(&pair);
        }
        for (den, range) in self.denominators.iter().zip(ranges.iter_mut()) {
            let e: f64 = den.iter().map(|&(l, c)| c * omega[l]).sum();
            range.0 = range.0.min(e);
            range.1 = range.1.max(e);
            value /= e;
        }
        let phase = self.phase.iter().map(|&(l, c)| c * omega[l]).sum();
        (value, phase)
    }
}

fn require_trilinear(spec: &ModelSpec, p: &[f64]) -> Result<()> {
    spec.check()?;
    if spec.family != Family::TranslationInvariantTrilinear {
        return Err(Error::Unsupported(format!("one-particle quantities need the trilinear family, got {:?}", spec.family)));
    }
    if p.len() != spec.d {
        return Err(Error::DimensionMismatch { expected: spec.d, got: p.len() });
    }
    Ok(())
}

/// Tensor nodes over the loop momenta and the summed static values and
/// phase energies of an expression of one-particle terms.
fn tabulate(
    expr: &DiagramExpression,
    spec: &ModelSpec,
    p: &[f64],
    settings: &QuadratureSettings,
    panels: usize,
) -> Result<Vec<(f64, f64)>> {
    let terms: Vec<CompiledTerm> = expr.terms().map(|t| compile_one_one(&t.diagram, t.coeff)).collect::<Result<_>>()?;
    let pn = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cut = settings.cutoff_for(&spec.form_factor) + pn;
    let (x, w) = composite_rule(-cut, cut, panels);
    let mut out = Vec::new();
    let mut scratch = Vec::new();
    for term in &terms {
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); term.denominators.len()];
        let dims = term.loops * spec.d;
        if dims > TENSOR_CAP {
            return Err(Error::TensorCap { dims, cap: TENSOR_CAP });
        }
        let total = x.len().pow(dims as u32);
        let mut point = vec![0.0; dims];
        for idx in 0..total {
            let mut rest = idx;
            let mut weight = 1.0;
            for c in point.iter_mut() {
                let i = rest % x.len();
                rest /= x.len();
                *c = x[i];
                weight *= w[i];
            }
            let (value, phase) = term.eval(spec, p, &point, &mut scratch, &mut ranges);
            out.push((weight * value, phase));
        }
        // A denominator that changes sign or touches zero on the support is a decay channel.
        for &(lo, hi) in &ranges {
            let closest = if lo > 0.0 { lo } else if hi < 0.0 { -hi } else { 0.0 };
            if closest < 1e-12 {
                return Err(Error::DecayModel {
                    inf_energy: lo.abs().min(hi.abs()).min(closest),
                    hint: "one-particle recursion requires ω(p) < ω(q) + ω(p−q)",
                });
            }
        }
        if let Some(&(v, _)) = out.iter().find(|n| !n.0.is_finite()) {
            return Err(Error::Numeric(format!("non-finite one-particle integrand value {v}")));
        }
    }
    Ok(out)
}

fn base_panels(settings: &QuadratureSettings) -> usize {
    settings.points_per_axis.div_ceil(PANEL_ORDER).max(1)
}

/// Panels so that `e^{itD}` is resolved up to `t_max` on `[−Λ, Λ]`.
fn oscillation_panels(spec: &ModelSpec, p: &[f64], settings: &QuadratureSettings, t_max: f64) -> usize {
    let pn = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cut = settings.cutoff_for(&spec.form_factor) + pn;
    let slope = (0..=200)
        .map(|i| spec.dispersion.radial_d1(2.0 * cut * i as f64 / 200.0).abs())
        .fold(0.0f64, f64::max);
    let rate = 2.0 * slope * t_max.abs();
    base_panels(settings).max((rate * 2.0 * cut / 6.0).ceil() as usize)
}

/// `m₂(p)` from the symbolic `M₂` of the recursion.
#[allow(non_snake_case)]
pub fn evaluate_M2(spec: &ModelSpec, p: &[f64], settings: &QuadratureSettings) -> Result<Integral> {
    require_trilinear(spec, p)?;
    settings.check()?;
    let m2 = solve_recursion(2)?.m.swap_remove(2);
    let panels = base_panels(settings);
    let sum = |panels| -> Result<f64> { Ok(tabulate(&m2, spec, p, settings, panels)?.iter().map(|n| n.0).sum()) };
    let fine = sum(panels)?;
    let coarse = sum((panels / 2).max(1))?;
    Ok(Integral { value: Complex64::new(fine, 0.0), err: if panels >= 2 { (fine - coarse).abs() } else { 0.0 } })
}

/// `⟨p|T(t)T*|p⟩` at order `λ²`, from `T = :exp W:` truncated at order 2.
pub fn tt_star_second_order() -> Result<DiagramExpression> {
    let rec = solve_recursion(3)?;
    let (w1, w2) = (&rec.w[1], &rec.w[2]);
    let t2 = w2.add(&normal_product(w1, w1).scale(Rational64::new(1, 2)));
    let cross = wick_connect(&w1.time_evolved(), &w1.adjoint(), Pairing::Full);
    Ok(cross.add(&t2.time_evolved()).add(&t2.adjoint()).one_one())
}

/// Order-`λ²` one-particle amplitude `e^{−iλ²m₂t} Z₂ (1 + C₂(t))` at fixed `p`,
/// tabulated once for times up to `t_max`.
#[derive(Debug, Clone)]
pub struct OneParticle {
    pub p: Vec<f64>,
    pub lambda: f64,
    pub m2: Integral,
    /// `B₂` with `Z = 1 + λ²B₂`.
    pub b2: f64,
    nodes: Vec<(f64, f64)>,
}

impl OneParticle {
    pub fn new(spec: &ModelSpec, p: &[f64], t_max: f64, settings: &QuadratureSettings) -> Result<Self> {
        require_trilinear(spec, p)?;
        settings.check()?;
        let m2 = evaluate_M2(spec, p, settings)?;
        let g = tt_star_second_order()?;
        let nodes = tabulate(&g, spec, p, settings, oscillation_panels(spec, p, settings, t_max))?;
        let g0: f64 = nodes.iter().map(|n| n.0).sum();
        Ok(Self { p: p.to_vec(), lambda: spec.lambda, m2, b2: -g0, nodes })
    }

    /// Coefficient of `λ²` in `⟨p|T(t)T*|p⟩`.
    pub fn g(&self, t: f64) -> Complex64 {
        self.nodes.iter().map(|&(s, e)| Complex64::from_polar(s, e * t)).sum()
    }

    /// `C₂(p, t) = λ² g(t)`.
    pub fn c2(&self, t: f64) -> Complex64 {
        self.lambda * self.lambda * self.g(t)
    }

    pub fn z2(&self) -> f64 {
        1.0 + self.lambda * self.lambda * self.b2
    }

    /// `e^{−iλ²m₂t} Z₂ (1 + C₂(t))`.
    pub fn amplitude(&self, t: f64) -> Complex64 {
        let l2 = self.lambda * self.lambda;
        Complex64::from_polar(1.0, -l2 * self.m2.value.re * t) * self.z2() * (1.0 + self.c2(t))
    }

    /// The `λ²` part alone: `λ²(−i m₂ t + B₂ + g(t))`.
    pub fn second_order(&self, t: f64) -> Complex64 {
        let l2 = self.lambda * self.lambda;
        l2 * (Complex64::new(self.b2, -self.m2.value.re * t) + self.g(t))
    }
}

/// `⟨p|U(t)|p⟩` at order `λ²` through the recursion.
pub fn one_particle_u(spec: &ModelSpec, p: &[f64], t: f64, settings: &QuadratureSettings) -> Result<Complex64> {
    Ok(OneParticle::new(spec, p, t, settings)?.amplitude(t))
}
