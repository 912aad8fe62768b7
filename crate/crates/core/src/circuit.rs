//! Two-domain circuit graph and modified-nodal-analysis assembly.
//!
//! Electrical nodes carry volts, magnetic nodes carry amp-turns. Two-terminal
//! elements live inside one domain; the only coupling between domains is the
//! winding gyrator, stamped through two auxiliary branch rows.
//!
//! Unknown vector layout: one entry per non-ground node (in node order),
//! followed by auxiliary branch currents in element order (voltage sources
//! and inductors one each, gyrators two: electrical current then magnetic
//! flow).

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt;

use crate::analysis::WaveformSet;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::magnetics::{
    differential_permeance, flux_of_mmf, CoreLegGeometry, SaturationCurve, WindingGyrator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Electrical,
    Magnetic,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Electrical => f.write_str("electrical"),
            Domain::Magnetic => f.write_str("magnetic"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub id: usize,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementKind {
    Resistor {
        ohms: f64,
    },
    Inductor {
        henries: f64,
    },
    /// Linear capacitor; in the magnetic domain this is a constant permeance.
    Capacitor {
        farads: f64,
    },
    /// Saturating permeance of a core leg.
    FluxCapacitor {
        curve: SaturationCurve,
        geometry: CoreLegGeometry,
    },
    /// Terminals: electrical (p, n) then magnetic (a, b).
    Gyrator(WindingGyrator),
    SourceDc {
        volts: f64,
        ramp_s: Option<f64>,
    },
    SourceSine {
        amplitude: f64,
        frequency_hz: f64,
        phase_rad: f64,
    },
    /// Drives `amps` out of the first terminal into the circuit.
    SourceCurrentDc {
        amps: f64,
        ramp_s: Option<f64>,
    },
}

impl ElementKind {
    fn terminal_count(&self) -> usize {
        match self {
            ElementKind::Gyrator(_) => 4,
            _ => 2,
        }
    }

    fn aux_count(&self) -> usize {
        match self {
            ElementKind::Inductor { .. }
            | ElementKind::SourceDc { .. }
            | ElementKind::SourceSine { .. } => 1,
            ElementKind::Gyrator(_) => 2,
            _ => 0,
        }
    }

    pub fn is_reactive(&self) -> bool {
        matches!(
            self,
            ElementKind::Inductor { .. }
                | ElementKind::Capacitor { .. }
                | ElementKind::FluxCapacitor { .. }
        )
    }

    pub fn is_source(&self) -> bool {
        matches!(
            self,
            ElementKind::SourceDc { .. }
                | ElementKind::SourceSine { .. }
                | ElementKind::SourceCurrentDc { .. }
        )
    }

    fn parameters(&self) -> Vec<(&'static str, f64, bool)> {
        // (name, value, must be strictly positive)
        match *self {
            ElementKind::Resistor { ohms } => vec![("ohms", ohms, true)],
            ElementKind::Inductor { henries } => vec![("henries", henries, true)],
            ElementKind::Capacitor { farads } => vec![("farads", farads, true)],
            ElementKind::FluxCapacitor { curve, geometry } => vec![
                ("b_sat", curve.b_sat, true),
                ("mu_r_initial", curve.mu_r_initial, true),
                ("length_m", geometry.length_m, true),
                ("area_m2", geometry.area_m2, true),
            ],
            ElementKind::Gyrator(w) => vec![("turns", f64::from(w.turns), true)],
            ElementKind::SourceDc { volts, ramp_s } => {
                let mut v = vec![("volts", volts, false)];
                if let Some(r) = ramp_s {
                    v.push(("ramp_s", r, false));
                }
                v
            }
            ElementKind::SourceSine {
                amplitude,
                frequency_hz,
                phase_rad,
            } => vec![
                ("amplitude", amplitude, false),
                ("frequency_hz", frequency_hz, true),
                ("phase_rad", phase_rad, false),
            ],
            ElementKind::SourceCurrentDc { amps, ramp_s } => {
                let mut v = vec![("amps", amps, false)];
                if let Some(r) = ramp_s {
                    v.push(("ramp_s", r, false));
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub label: String,
    pub kind: ElementKind,
    pub terminals: Vec<NodeRef>,
}

/// Named alias of an element channel, optionally rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub channel: String,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Circuit {
    nodes: Vec<NodeRef>,
    elements: Vec<Element>,
    grounds: Vec<NodeRef>,
    probes: Vec<Probe>,
}

impl Circuit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, domain: Domain) -> NodeRef {
        let n = NodeRef {
            id: self.nodes.len(),
            domain,
        };
        self.nodes.push(n);
        n
    }

    /// Declares `node` as the reference of its domain.
    pub fn set_ground(&mut self, node: NodeRef) {
        self.grounds.push(node);
    }

    /// Creates a node and declares it the ground of `domain`.
    pub fn add_ground(&mut self, domain: Domain) -> NodeRef {
        let n = self.add_node(domain);
        self.set_ground(n);
        n
    }

    pub fn add(
        &mut self,
        label: impl Into<String>,
        kind: ElementKind,
        terminals: &[NodeRef],
    ) -> ElementId {
        self.elements.push(Element {
            label: label.into(),
            kind,
            terminals: terminals.to_vec(),
        });
        ElementId(self.elements.len() - 1)
    }

    pub fn add_probe(&mut self, name: impl Into<String>, channel: impl Into<String>, scale: f64) {
        self.probes.push(Probe {
            name: name.into(),
            channel: channel.into(),
            scale,
        });
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, id: ElementId) -> &Element {
        &self.elements[id.0]
    }

    pub fn find(&self, label: &str) -> Option<ElementId> {
        self.elements
            .iter()
            .position(|e| e.label == label)
            .map(ElementId)
    }

    pub fn grounds(&self) -> &[NodeRef] {
        &self.grounds
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    pub fn ground_of(&self, domain: Domain) -> Option<NodeRef> {
        self.grounds.iter().copied().find(|g| g.domain == domain)
    }

    pub fn is_ground(&self, node: NodeRef) -> bool {
        self.grounds.iter().any(|g| g.id == node.id)
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

/// One broken rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, text: &str) -> bool {
        self.violations.iter().any(|v| v.to_string().contains(text))
    }

    fn push(&mut self, subject: impl Into<String>, rule: impl Into<String>) {
        self.violations.push(Violation {
            subject: subject.into(),
            rule: rule.into(),
        });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidCircuit(self.violations))
        }
    }
}

pub fn validate(circuit: &Circuit) -> ValidationReport {
    let mut report = ValidationReport::default();
    let node_ok = |n: &NodeRef| {
        circuit
            .nodes
            .get(n.id)
            .is_some_and(|m| m.domain == n.domain)
    };

    let mut grounded = HashSet::new();
    for g in &circuit.grounds {
        if !node_ok(g) {
            report.push(
                format!("ground node {}", g.id),
                "does not exist in its domain",
            );
        } else if !grounded.insert(g.domain) {
            report.push(
                format!("ground node {}", g.id),
                format!("second ground in {} domain", g.domain),
            );
        }
    }
    for domain in [Domain::Electrical, Domain::Magnetic] {
        if circuit.nodes.iter().any(|n| n.domain == domain) && !grounded.contains(&domain) {
            report.push("missing ground", domain.to_string());
        }
    }

    let mut labels = HashSet::new();
    for e in &circuit.elements {
        let who = format!("element {}", e.label);
        if e.label.is_empty() {
            report.push(&who, "empty label");
        } else if !labels.insert(e.label.as_str()) {
            report.push(&who, "duplicate label");
        }
        if e.terminals.len() != e.kind.terminal_count() {
            report.push(
                &who,
                format!(
                    "expects {} terminals, has {}",
                    e.kind.terminal_count(),
                    e.terminals.len()
                ),
            );
            continue;
        }
        for t in &e.terminals {
            if !node_ok(t) {
                report.push(&who, format!("terminal references missing node {}", t.id));
            }
        }
        match e.kind {
            ElementKind::Gyrator(_) => {
                let t = &e.terminals;
                if t[0].domain != Domain::Electrical || t[1].domain != Domain::Electrical {
                    report.push(
                        &who,
                        "domain mismatch: first terminal pair must be electrical",
                    );
                }
                if t[2].domain != Domain::Magnetic || t[3].domain != Domain::Magnetic {
                    report.push(
                        &who,
                        "domain mismatch: second terminal pair must be magnetic",
                    );
                }
            }
            ElementKind::FluxCapacitor { .. } => {
                if e.terminals.iter().any(|t| t.domain != Domain::Magnetic) {
                    report.push(
                        &who,
                        "domain mismatch: flux capacitor must join magnetic nodes",
                    );
                }
            }
            _ => {
                if e.terminals[0].domain != e.terminals[1].domain {
                    report.push(&who, "domain mismatch: terminals in different domains");
                }
            }
        }
        if matches!(
            e.kind,
            ElementKind::SourceDc { .. } | ElementKind::SourceSine { .. }
        ) && e.terminals[0] == e.terminals[1]
        {
            report.push(&who, "voltage source terminals shorted");
        }
        for (name, value, positive) in e.kind.parameters() {
            if !value.is_finite() {
                report.push(&who, format!("{name} is not finite"));
            } else if positive && value <= 0.0 {
                report.push(&who, format!("{name} must be > 0"));
            } else if name == "ramp_s" && value < 0.0 {
                report.push(&who, "ramp_s must be >= 0");
            }
        }
        if let ElementKind::FluxCapacitor { curve, .. } = e.kind {
            if curve.mu_r_initial.is_finite() && curve.mu_r_initial <= 1.0 {
                report.push(&who, "mu_r_initial must be > 1");
            }
        }
    }

    // Connectivity: every node must share a component with its domain ground.
    if report.is_empty() {
        let mut parent: Vec<usize> = (0..circuit.nodes.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let join = |p: &mut Vec<usize>, a: usize, b: usize| {
            let (ra, rb) = (find(p, a), find(p, b));
            if ra != rb {
                p[ra] = rb;
            }
        };
        for e in &circuit.elements {
            for pair in e.terminals.chunks(2) {
                join(&mut parent, pair[0].id, pair[1].id);
            }
        }
        for n in &circuit.nodes {
            let g = circuit.ground_of(n.domain).expect("checked above");
            if find(&mut parent, n.id) != find(&mut parent, g.id) {
                report.push(
                    format!("node {}", n.id),
                    "floating: not connected to its domain ground",
                );
            }
        }
    }
    report
}

/// Mapping from nodes and element branches to unknown indices.
#[derive(Debug, Clone)]
pub struct Layout {
    node_index: Vec<Option<usize>>,
    aux_base: Vec<usize>,
    size: usize,
}

impl Layout {
    pub fn new(circuit: &Circuit) -> Self {
        let mut next = 0;
        let node_index = circuit
            .nodes
            .iter()
            .map(|n| {
                if circuit.is_ground(*n) {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect();
        let aux_base = circuit
            .elements
            .iter()
            .map(|e| {
                let base = next;
                next += e.kind.aux_count();
                base
            })
            .collect();
        Self {
            node_index,
            aux_base,
            size: next,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn node(&self, n: NodeRef) -> Option<usize> {
        self.node_index[n.id]
    }

    pub fn aux(&self, element: ElementId) -> usize {
        self.aux_base[element.0]
    }

    pub fn potential(&self, x: &[f64], n: NodeRef) -> f64 {
        self.node(n).map_or(0.0, |i| x[i])
    }
}

/// Integrator memory of one reactive element.
///
/// `charge` is the stored quantity (coulombs, webers, or flux linkage for an
/// inductor); `current` and `voltage` are the branch values at the last
/// accepted point; `integrated` is the running integral of `current`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct History {
    pub charge: f64,
    pub current: f64,
    pub voltage: f64,
    pub integrated: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub time: f64,
    pub unknowns: Vec<f64>,
    pub history: Vec<Option<History>>,
    /// Accepted steps so far; the first step uses backward Euler because the
    /// branch currents of the initial point are not known.
    pub steps: u64,
}

impl SystemState {
    /// All potentials and currents zero at t = 0.
    pub fn at_rest(circuit: &Circuit) -> Self {
        let size = Layout::new(circuit).size();
        Self::from_unknowns(circuit, vec![0.0; size])
    }

    /// Initial point from a given unknown vector; reactive elements take the
    /// charge implied by their terminal voltage (or branch current).
    pub fn from_unknowns(circuit: &Circuit, unknowns: Vec<f64>) -> Self {
        let layout = Layout::new(circuit);
        assert_eq!(
            unknowns.len(),
            layout.size(),
            "unknown vector has wrong length"
        );
        let history = circuit
            .elements
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let v = layout.potential(&unknowns, e.terminals[0])
                    - layout.potential(&unknowns, e.terminals[1]);
                match e.kind {
                    ElementKind::Inductor { henries } => {
                        let i = unknowns[layout.aux(ElementId(k))];
                        Some(History {
                            charge: henries * i,
                            current: i,
                            voltage: v,
                            integrated: 0.0,
                        })
                    }
                    ElementKind::Capacitor { .. } | ElementKind::FluxCapacitor { .. } => {
                        let q = charge(&e.kind, v).0;
                        Some(History {
                            charge: q,
                            current: 0.0,
                            voltage: v,
                            integrated: q,
                        })
                    }
                    _ => None,
                }
            })
            .collect();
        Self {
            time: 0.0,
            unknowns,
            history,
            steps: 0,
        }
    }
}

/// Jacobian `matrix` and right-hand side `rhs = −F(candidate)` of one Newton
/// iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub matrix: DenseMatrix,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn residual_norm(&self) -> f64 {
        crate::linalg::norm2(&self.rhs)
    }
}

/// Timing of dc source start-up.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SourceSchedule {
    /// Ramp applied to dc sources that do not carry their own ramp time.
    pub dc_ramp_s: Option<f64>,
}

fn ramp_factor(t: f64, ramp: Option<f64>) -> f64 {
    match ramp {
        Some(r) if r > 0.0 => (t / r).clamp(0.0, 1.0),
        _ => 1.0,
    }
}

/// Source value (V or A) of a source element at time `t`.
pub fn source_value(kind: &ElementKind, t: f64, schedule: &SourceSchedule) -> f64 {
    match *kind {
        ElementKind::SourceDc { volts, ramp_s } => {
            volts * ramp_factor(t, ramp_s.or(schedule.dc_ramp_s))
        }
        ElementKind::SourceCurrentDc { amps, ramp_s } => {
            amps * ramp_factor(t, ramp_s.or(schedule.dc_ramp_s))
        }
        ElementKind::SourceSine {
            amplitude,
            frequency_hz,
            phase_rad,
        } => amplitude * (2.0 * PI * frequency_hz * t + phase_rad).sin(),
        _ => 0.0,
    }
}

/// Stored quantity and its derivative with respect to terminal voltage.
fn charge(kind: &ElementKind, v: f64) -> (f64, f64) {
    match *kind {
        ElementKind::Capacitor { farads } => (farads * v, farads),
        ElementKind::FluxCapacitor { curve, geometry } => (
            flux_of_mmf(v, geometry, curve),
            differential_permeance(v, geometry, curve).value(),
        ),
        _ => unreachable!("charge() on a non-capacitive element"),
    }
}

/// True when the step from `state` must restart with backward Euler: the
/// first step, and any step that begins where a dc ramp ends. Trapezoidal
/// integration carries a slope discontinuity forward as an undamped
/// alternating error in the reactive currents; one Euler step discards it.
pub(crate) fn restarts(
    circuit: &Circuit,
    state: &SystemState,
    dt: f64,
    schedule: &SourceSchedule,
) -> bool {
    state.steps == 0
        || circuit.elements.iter().any(|e| {
            let ramp = match e.kind {
                ElementKind::SourceDc { ramp_s, .. }
                | ElementKind::SourceCurrentDc { ramp_s, .. } => ramp_s.or(schedule.dc_ramp_s),
                _ => None,
            };
            ramp.is_some_and(|r| r > 0.0 && (state.time - r).abs() <= 0.5 * dt)
        })
}

/// `(α, β)` of the companion `i₊ = α(q₊ − q) − β·i`.
fn integration_coefficients(restart: bool, dt: f64) -> (f64, f64) {
    if restart {
        (1.0 / dt, 0.0)
    } else {
        (2.0 / dt, 1.0)
    }
}

struct Assembler<'a> {
    layout: &'a Layout,
    x: &'a [f64],
    matrix: DenseMatrix,
    residual: Vec<f64>,
}

impl Assembler<'_> {
    fn pot(&self, n: NodeRef) -> f64 {
        self.layout.potential(self.x, n)
    }

    fn f(&mut self, row: Option<usize>, v: f64) {
        if let Some(r) = row {
            self.residual[r] += v;
        }
    }

    fn j(&mut self, row: Option<usize>, col: Option<usize>, v: f64) {
        if let (Some(r), Some(c)) = (row, col) {
            self.matrix.add(r, c, v);
        }
    }

    /// Two-terminal branch with current `i` from p to n and conductance `g`.
    fn branch(&mut self, p: NodeRef, n: NodeRef, i: f64, g: f64) {
        let (rp, rn) = (self.layout.node(p), self.layout.node(n));
        self.f(rp, i);
        self.f(rn, -i);
        self.j(rp, rp, g);
        self.j(rp, rn, -g);
        self.j(rn, rp, -g);
        self.j(rn, rn, g);
    }

    /// Auxiliary current `k` flowing from p to n.
    fn aux_branch(&mut self, p: NodeRef, n: NodeRef, k: usize) {
        let (rp, rn) = (self.layout.node(p), self.layout.node(n));
        let i = self.x[k];
        self.f(rp, i);
        self.f(rn, -i);
        self.j(rp, Some(k), 1.0);
        self.j(rn, Some(k), -1.0);
    }

    /// Adds `v_p − v_n` to row `k`.
    fn aux_voltage(&mut self, k: usize, p: NodeRef, n: NodeRef) {
        let v = self.pot(p) - self.pot(n);
        self.residual[k] += v;
        let (rp, rn) = (self.layout.node(p), self.layout.node(n));
        self.j(Some(k), rp, 1.0);
        self.j(Some(k), rn, -1.0);
    }
}

/// Assembles the Newton system of the implicit companion network for the
/// step from `state` to `state.time + dt`, evaluated at `candidate`.
pub fn stamp_system(
    circuit: &Circuit,
    state: &SystemState,
    candidate: &[f64],
    dt: f64,
    schedule: &SourceSchedule,
) -> Result<LinearSystem> {
    stamp_with_layout(
        circuit,
        &Layout::new(circuit),
        state,
        candidate,
        dt,
        schedule,
    )
}

pub(crate) fn stamp_with_layout(
    circuit: &Circuit,
    layout: &Layout,
    state: &SystemState,
    candidate: &[f64],
    dt: f64,
    schedule: &SourceSchedule,
) -> Result<LinearSystem> {
    if candidate.len() != layout.size() {
        return Err(Error::LengthMismatch {
            left: layout.size(),
            right: candidate.len(),
        });
    }
    if let Some(index) = candidate.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "newton candidate",
            index,
        });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            value: dt,
            rule: "must be finite and > 0",
        });
    }
    let n = layout.size();
    let t = state.time + dt;
    let (alpha, beta) = integration_coefficients(restarts(circuit, state, dt, schedule), dt);
    let mut asm = Assembler {
        layout,
        x: candidate,
        matrix: DenseMatrix::zeros(n),
        residual: vec![0.0; n],
    };

    for (k, e) in circuit.elements.iter().enumerate() {
        let id = ElementId(k);
        let (p, m) = (e.terminals[0], e.terminals[1]);
        match &e.kind {
            ElementKind::Resistor { ohms } => {
                let g = 1.0 / ohms;
                let i = g * (asm.pot(p) - asm.pot(m));
                asm.branch(p, m, i, g);
            }
            ElementKind::Capacitor { .. } | ElementKind::FluxCapacitor { .. } => {
                let h = state.history[k].expect("capacitive history exists from t = 0");
                let (q, dq) = charge(&e.kind, asm.pot(p) - asm.pot(m));
                let i = alpha * (q - h.charge) - beta * h.current;
                asm.branch(p, m, i, alpha * dq);
            }
            ElementKind::Inductor { henries } => {
                let h = state.history[k].expect("inductor history exists from t = 0");
                let row = layout.aux(id);
                asm.aux_branch(p, m, row);
                // v₊ + β·v = α·L·(i₊ − i)
                asm.aux_voltage(row, p, m);
                asm.residual[row] +=
                    beta * h.voltage - alpha * henries * (candidate[row] - h.current);
                asm.matrix.add(row, row, -alpha * henries);
            }
            ElementKind::SourceDc { .. } | ElementKind::SourceSine { .. } => {
                let row = layout.aux(id);
                asm.aux_branch(p, m, row);
                asm.aux_voltage(row, p, m);
                asm.residual[row] -= source_value(&e.kind, t, schedule);
            }
            ElementKind::SourceCurrentDc { .. } => {
                let i = source_value(&e.kind, t, schedule);
                let (rp, rm) = (layout.node(p), layout.node(m));
                asm.f(rp, -i);
                asm.f(rm, i);
            }
            ElementKind::Gyrator(w) => {
                let r = w.ratio();
                let (a, b) = (e.terminals[2], e.terminals[3]);
                let ke = layout.aux(id);
                let km = ke + 1;
                asm.aux_branch(p, m, ke);
                asm.aux_branch(a, b, km);
                // v_e = r·f
                asm.aux_voltage(ke, p, m);
                asm.residual[ke] -= r * candidate[km];
                asm.matrix.add(ke, km, -r);
                // M_a − M_b = −r·i_e
                asm.aux_voltage(km, a, b);
                asm.residual[km] += r * candidate[ke];
                asm.matrix.add(km, ke, r);
            }
        }
    }

    let Assembler {
        matrix, residual, ..
    } = asm;
    if let Some(index) = residual.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "residual",
            index,
        });
    }
    Ok(LinearSystem {
        matrix,
        rhs: residual.into_iter().map(|v| -v).collect(),
    })
}

/// Builds the accepted state at `state.time + dt` from the converged
/// unknowns, updating every reactive element's history.
pub fn advance(
    circuit: &Circuit,
    layout: &Layout,
    state: &SystemState,
    solution: Vec<f64>,
    dt: f64,
    schedule: &SourceSchedule,
) -> SystemState {
    let restart = restarts(circuit, state, dt, schedule);
    let (alpha, beta) = integration_coefficients(restart, dt);
    let trapezoidal = !restart;
    let history = circuit
        .elements
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let prev = state.history[k]?;
            let v = layout.potential(&solution, e.terminals[0])
                - layout.potential(&solution, e.terminals[1]);
            let (q, i) = match e.kind {
                ElementKind::Inductor { henries } => {
                    let i = solution[layout.aux(ElementId(k))];
                    (henries * i, i)
                }
                _ => {
                    let q = charge(&e.kind, v).0;
                    (q, alpha * (q - prev.charge) - beta * prev.current)
                }
            };
            let increment = if trapezoidal {
                0.5 * dt * (i + prev.current)
            } else {
                dt * i
            };
            Some(History {
                charge: q,
                current: i,
                voltage: v,
                integrated: prev.integrated + increment,
            })
        })
        .collect();
    SystemState {
        time: (state.steps + 1) as f64 * dt + state_origin(state, dt),
        unknowns: solution,
        history,
        steps: state.steps + 1,
    }
}

/// Time of step zero, so that `time = origin + steps·dt` without drift.
pub(crate) fn state_origin(state: &SystemState, dt: f64) -> f64 {
    state.time - state.steps as f64 * dt
}

/// Per-element channel values at one state, keyed by channel name.
fn element_values(
    circuit: &Circuit,
    layout: &Layout,
    state: &SystemState,
    schedule: &SourceSchedule,
    out: &mut Vec<(String, f64)>,
) {
    let x = &state.unknowns;
    for (k, e) in circuit.elements.iter().enumerate() {
        let id = ElementId(k);
        let v = layout.potential(x, e.terminals[0]) - layout.potential(x, e.terminals[1]);
        let l = &e.label;
        match &e.kind {
            ElementKind::Resistor { ohms } => {
                out.push((format!("{l}.v"), v));
                out.push((format!("{l}.i"), v / ohms));
            }
            ElementKind::Inductor { .. } => {
                out.push((format!("{l}.v"), v));
                out.push((format!("{l}.i"), x[layout.aux(id)]));
            }
            ElementKind::Capacitor { .. } | ElementKind::FluxCapacitor { .. } => {
                let h = state.history[k].expect("capacitive history");
                let stored = if e.terminals[0].domain == Domain::Magnetic {
                    "phi"
                } else {
                    "q"
                };
                out.push((format!("{l}.v"), v));
                out.push((format!("{l}.i"), h.current));
                out.push((format!("{l}.{stored}"), h.charge));
                out.push((format!("{l}.{stored}_int"), h.integrated));
            }
            ElementKind::SourceDc { .. } | ElementKind::SourceSine { .. } => {
                // delivered current: out of the positive terminal
                out.push((format!("{l}.v"), v));
                out.push((format!("{l}.i"), -x[layout.aux(id)]));
            }
            ElementKind::SourceCurrentDc { .. } => {
                let i = source_value(&e.kind, state.time, schedule);
                out.push((format!("{l}.v"), v));
                out.push((format!("{l}.i"), i));
            }
            ElementKind::Gyrator(_) => {
                let ke = layout.aux(id);
                let mmf = layout.potential(x, e.terminals[3]) - layout.potential(x, e.terminals[2]);
                out.push((format!("{l}.v"), v));
                out.push((format!("{l}.i"), x[ke]));
                out.push((format!("{l}.mmf"), mmf));
                out.push((format!("{l}.dphi"), x[ke + 1]));
            }
        }
    }
}

/// Named channels for every element, plus the circuit's probes.
///
/// Per element `<label>.v` (terminal potential difference) and `<label>.i`
/// (branch current or flow) are always present. Capacitive elements add the
/// stored charge (`.phi` in the magnetic domain, `.q` otherwise) and its
/// running integral (`.phi_int` / `.q_int`); gyrators add `.mmf` and `.dphi`
/// for the magnetic port.
pub fn extract_channels(circuit: &Circuit, states: &[SystemState]) -> Result<WaveformSet> {
    extract_channels_with(circuit, states, &SourceSchedule::default())
}

pub fn extract_channels_with(
    circuit: &Circuit,
    states: &[SystemState],
    schedule: &SourceSchedule,
) -> Result<WaveformSet> {
    let first = states.first().ok_or(Error::Empty("state sequence"))?;
    let last = states.last().expect("nonempty");
    let dt = if states.len() > 1 {
        (last.time - first.time) / (states.len() - 1) as f64
    } else {
        0.0
    };
    let mut rec = Recorder::new(circuit, *schedule);
    for s in states {
        rec.push(s);
    }
    rec.finish(first.time, dt)
}

/// Accumulates element channels state by state.
#[derive(Debug)]
pub struct Recorder<'a> {
    circuit: &'a Circuit,
    layout: Layout,
    schedule: SourceSchedule,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    row: Vec<(String, f64)>,
}

impl<'a> Recorder<'a> {
    pub fn new(circuit: &'a Circuit, schedule: SourceSchedule) -> Self {
        Self {
            circuit,
            layout: Layout::new(circuit),
            schedule,
            names: Vec::new(),
            columns: Vec::new(),
            row: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, state: &SystemState) {
        self.row.clear();
        element_values(
            self.circuit,
            &self.layout,
            state,
            &self.schedule,
            &mut self.row,
        );
        if self.names.is_empty() {
            self.names = self.row.iter().map(|(n, _)| n.clone()).collect();
            self.columns = vec![Vec::new(); self.names.len()];
        }
        for (col, (_, v)) in self.columns.iter_mut().zip(&self.row) {
            col.push(*v);
        }
    }

    /// Channels restricted to samples `start..start + len`.
    pub fn window(&self, start: usize, len: usize, t0: f64, dt: f64) -> Result<WaveformSet> {
        if len == 0 {
            return Err(Error::Empty("recording window"));
        }
        let mut channels: BTreeMap<String, Vec<f64>> = self
            .names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| (n.clone(), c[start..start + len].to_vec()))
            .collect();
        for p in &self.circuit.probes {
            let src = channels
                .get(&p.channel)
                .ok_or_else(|| Error::MissingChannel(p.channel.clone()))?;
            let scaled = src.iter().map(|v| v * p.scale).collect();
            channels.insert(p.name.clone(), scaled);
        }
        Ok(WaveformSet { t0, dt, channels })
    }

    pub fn finish(&self, t0: f64, dt: f64) -> Result<WaveformSet> {
        self.window(0, self.len(), t0, dt)
    }
}
