//! Shared test machinery: randomized hybrid ac/dc systems and an independent
//! scalar-equation integrator used as the assembly oracle. Each test binary
//! compiles its own copy, so parts may go unused per binary.
#![allow(dead_code)]
//!
//! The oracle composes the per-device differential equations node by node
//! from the graph description; it never touches the assembled matrices.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::Rng;

use dualport_core::control::{ControlGains, GainSet};
use dualport_core::devices::{
    default_pv_params, default_wt_params, DcBusDevice, DcBusParams, DcSource, DeviceSet,
    FirstOrderSource, MachineDevice, MachineParams, MachineSource, PvDevice, WtDevice,
};
use dualport_core::network::{build_graph, NetworkDescription, NodeKind, SystemGraph};

pub struct RandomSystem {
    pub graph: SystemGraph,
    pub devices: DeviceSet,
    pub gains: GainSet,
}

/// A wind turbine record with prescribed linear sensitivities; the linear
/// model only ever reads those, so the aerodynamic fields are placeholders.
fn fabricated_wt(k_w: f64, k_beta: f64, k_bp: f64, t_g: f64) -> WtDevice {
    WtDevice {
        params: default_wt_params(),
        omega_star: 1.0,
        beta_star: 0.0,
        t_g,
        k_bp,
        k_w,
        k_beta,
        p_star: 0.0,
    }
}

fn fabricated_pv(k_pv: f64) -> PvDevice {
    PvDevice {
        params: default_pv_params(),
        v_op: 1.0,
        k_pv,
        p_star: 0.5,
    }
}

/// Build a random connected system by attaching nodes one at a time through
/// kind-legal edges (the ac side stays a forest, so no cycle modes appear).
pub fn random_system(
    rng: &mut StdRng,
    min_nodes: usize,
    max_nodes: usize,
    strict: bool,
) -> RandomSystem {
    loop {
        if let Some(s) = try_random_system(rng, min_nodes, max_nodes, strict) {
            return s;
        }
    }
}

fn try_random_system(
    rng: &mut StdRng,
    min_nodes: usize,
    max_nodes: usize,
    strict: bool,
) -> Option<RandomSystem> {
    let n = rng.random_range(min_nodes..=max_nodes);
    let mut kinds: Vec<NodeKind> = Vec::new();
    let mut ac_edges: Vec<(String, String, f64)> = Vec::new();
    let mut dc_edges: Vec<(String, String, f64)> = Vec::new();
    let id = |i: usize| format!("n{i:02}");

    kinds.push(if rng.random_bool(0.6) {
        NodeKind::Machine
    } else {
        NodeKind::Converter
    });
    for i in 1..n {
        let kind = match rng.random_range(0..3) {
            0 => NodeKind::Machine,
            1 => NodeKind::Converter,
            _ => NodeKind::DcNode,
        };
        // pick an attachment point compatible with some edge kind
        let ac_partners: Vec<usize> = (0..i).filter(|&j| kinds[j].has_ac_terminal()).collect();
        let dc_partners: Vec<usize> = (0..i).filter(|&j| kinds[j].has_dc_terminal()).collect();
        match kind {
            NodeKind::Machine => {
                if ac_partners.is_empty() {
                    return None;
                }
                let p = ac_partners[rng.random_range(0..ac_partners.len())];
                ac_edges.push((id(i), id(p), rng.random_range(4.0..20.0)));
            }
            NodeKind::DcNode => {
                if dc_partners.is_empty() {
                    return None;
                }
                let p = dc_partners[rng.random_range(0..dc_partners.len())];
                dc_edges.push((id(i), id(p), rng.random_range(5.0..40.0)));
            }
            NodeKind::Converter => {
                let use_ac =
                    !ac_partners.is_empty() && (dc_partners.is_empty() || rng.random_bool(0.5));
                if use_ac {
                    let p = ac_partners[rng.random_range(0..ac_partners.len())];
                    ac_edges.push((id(i), id(p), rng.random_range(4.0..20.0)));
                } else if !dc_partners.is_empty() {
                    let p = dc_partners[rng.random_range(0..dc_partners.len())];
                    dc_edges.push((id(i), id(p), rng.random_range(5.0..40.0)));
                } else {
                    return None;
                }
            }
        }
        kinds.push(kind);
    }

    let desc = NetworkDescription {
        nodes: (0..n).map(|i| (id(i), kinds[i])).collect(),
        ac_edges,
        dc_edges,
    };
    let graph = build_graph(&desc).ok()?;

    let mut devices = DeviceSet::default();
    let mut has_responsive = false;
    for (i, kind) in kinds.iter().enumerate() {
        let nid = id(i);
        match kind {
            NodeKind::Machine => {
                let source = match rng.random_range(0..10) {
                    0..=4 => {
                        has_responsive = true;
                        MachineSource::Governor(FirstOrderSource {
                            t_g: rng.random_range(0.3..2.0),
                            k_g: rng.random_range(2.0..25.0),
                        })
                    }
                    5 if !strict => MachineSource::Governor(FirstOrderSource {
                        t_g: rng.random_range(0.3..2.0),
                        k_g: 0.0,
                    }),
                    6..=7 => {
                        has_responsive = true;
                        fabricated_wt(
                            rng.random_range(0.2..2.0),
                            rng.random_range(0.5..2.0),
                            if rng.random_bool(0.5) {
                                0.0
                            } else {
                                rng.random_range(0.1..1.0)
                            },
                            rng.random_range(0.3..2.0),
                        )
                        .into_source()
                    }
                    _ => MachineSource::None,
                };
                devices.machines.insert(
                    nid,
                    MachineDevice {
                        params: MachineParams {
                            inertia: rng.random_range(3.0..12.0),
                            omega_star: 1.0,
                        },
                        source,
                    },
                );
            }
            NodeKind::Converter => {
                let isolated = graph.dc_degree_weight(graph.node_index(&nid).unwrap()) == 0.0;
                // an isolated dc link sometimes carries a direct-fed
                // source; the certificate suite keeps sources on dc buses
                let source = if isolated && !strict && rng.random_bool(0.4) {
                    has_responsive = true;
                    DcSource::Controllable(FirstOrderSource {
                        t_g: rng.random_range(0.3..2.0),
                        k_g: rng.random_range(1.0..10.0),
                    })
                } else {
                    DcSource::None
                };
                devices.dc_buses.insert(
                    nid.clone(),
                    DcBusDevice {
                        params: DcBusParams {
                            capacitance: rng.random_range(0.05..0.4),
                            v_star: 1.0,
                        },
                        source,
                        direct_feed: isolated,
                    },
                );
            }
            NodeKind::DcNode => {
                let source = match rng.random_range(0..10) {
                    0..=3 => {
                        has_responsive = true;
                        DcSource::Controllable(FirstOrderSource {
                            t_g: rng.random_range(0.3..2.0),
                            k_g: rng.random_range(1.0..10.0),
                        })
                    }
                    4 if !strict => DcSource::Controllable(FirstOrderSource {
                        t_g: rng.random_range(0.3..2.0),
                        k_g: 0.0,
                    }),
                    5..=7 => {
                        has_responsive = true;
                        DcSource::Pv(fabricated_pv(rng.random_range(0.5..5.0)))
                    }
                    _ => DcSource::None,
                };
                devices.dc_buses.insert(
                    nid,
                    DcBusDevice {
                        params: DcBusParams {
                            capacitance: rng.random_range(0.05..0.4),
                            v_star: 1.0,
                        },
                        source,
                        direct_feed: false,
                    },
                );
            }
        }
    }

    if strict && !has_responsive {
        return None;
    }

    // gains: one common proportional gain under strict consistent droop
    let common_k_omega = rng.random_range(0.05..0.6);
    let mut gains = GainSet::default();
    for &c in &graph.nodes_of_kind(NodeKind::Converter) {
        let nid = graph.node_id(c).to_string();
        let k_omega = if strict {
            common_k_omega
        } else {
            rng.random_range(0.05..0.6)
        };
        let ccap = devices.dc_bus(&nid).unwrap().params.scaled_capacitance();
        let g_sum = graph.dc_degree_weight(c);
        let bound = if g_sum > 0.0 {
            2.0 * k_omega * ccap / g_sum
        } else {
            0.02
        };
        let k_p = bound * rng.random_range(0.05..0.8);
        gains.by_node.insert(
            nid,
            ControlGains {
                k_p,
                k_omega,
                m_p: None,
            },
        );
    }

    Some(RandomSystem {
        graph,
        devices,
        gains,
    })
}

trait IntoSource {
    fn into_source(self) -> MachineSource;
}
impl IntoSource for WtDevice {
    fn into_source(self) -> MachineSource {
        MachineSource::WindTurbine(self)
    }
}

// ---------------------------------------------------------------------------
// Scalar-equation oracle
// ---------------------------------------------------------------------------

/// Independent integrator of the composed per-device differential equations.
/// State: phase angle per ac-terminal node, speed per machine, dc voltage per
/// dc-terminal node, one power state per first-order source.
pub struct ScalarOracle<'a> {
    graph: &'a SystemGraph,
    /// (node idx, swing coefficient, k_w damping)
    machines: Vec<(usize, f64, f64)>,
    dc_buses: Vec<(usize, f64)>,
    /// (host node idx, T_g, k_g, ac side)
    sources: Vec<(usize, f64, f64, bool)>,
    /// host -> shunt sensitivity (curtailed PV)
    shunts: HashMap<usize, f64>,
    /// converter idx -> gains
    conv_gains: HashMap<usize, (f64, f64)>,
}

pub struct OracleState {
    pub theta: HashMap<usize, f64>,
    pub omega: HashMap<usize, f64>,
    pub v: HashMap<usize, f64>,
    /// keyed by host node
    pub psrc: HashMap<usize, f64>,
}

impl<'a> ScalarOracle<'a> {
    pub fn new(graph: &'a SystemGraph, devices: &DeviceSet, gains: &GainSet) -> Self {
        let mut machines = Vec::new();
        let mut sources = Vec::new();
        let mut shunts = HashMap::new();
        for &m in &graph.nodes_of_kind(NodeKind::Machine) {
            let dev = devices.machine(graph.node_id(m)).unwrap();
            let mut k_w = 0.0;
            match &dev.source {
                MachineSource::Governor(g) => sources.push((m, g.t_g, g.k_g, true)),
                MachineSource::WindTurbine(wt) => {
                    k_w = wt.k_w;
                    if wt.k_bp > 0.0 {
                        sources.push((m, wt.t_g, wt.pitch_k_g(), true));
                    }
                }
                MachineSource::None => {}
            }
            machines.push((m, dev.params.swing_coefficient(), k_w));
        }
        let mut dc_buses = Vec::new();
        for &d in &graph.dc_side_nodes() {
            let dev = devices.dc_bus(graph.node_id(d)).unwrap();
            dc_buses.push((d, dev.params.scaled_capacitance()));
            match &dev.source {
                DcSource::Controllable(s) => sources.push((d, s.t_g, s.k_g, false)),
                DcSource::Pv(pv) => {
                    shunts.insert(d, pv.k_pv);
                }
                DcSource::None => {}
            }
        }
        let conv_gains = graph
            .nodes_of_kind(NodeKind::Converter)
            .into_iter()
            .map(|c| {
                let g = gains.get(graph.node_id(c)).unwrap();
                (c, (g.k_p, g.k_omega))
            })
            .collect();
        ScalarOracle {
            graph,
            machines,
            dc_buses,
            sources,
            shunts,
            conv_gains,
        }
    }

    pub fn source_hosts(&self) -> Vec<usize> {
        self.sources.iter().map(|(h, _, _, _)| *h).collect()
    }

    fn derivatives(
        &self,
        s: &OracleState,
        ac_loads: &HashMap<usize, f64>,
        dc_loads: &HashMap<usize, f64>,
    ) -> OracleState {
        // network flows
        let mut p_ac: HashMap<usize, f64> = HashMap::new();
        for e in self.graph.ac_edges() {
            let f = e.weight * (s.theta[&e.a] - s.theta[&e.b]);
            *p_ac.entry(e.a).or_insert(0.0) += f;
            *p_ac.entry(e.b).or_insert(0.0) -= f;
        }
        for (n, dp) in ac_loads {
            *p_ac.entry(*n).or_insert(0.0) += dp;
        }
        let mut p_dc: HashMap<usize, f64> = HashMap::new();
        for e in self.graph.dc_edges() {
            let f = e.weight * (s.v[&e.a] - s.v[&e.b]);
            *p_dc.entry(e.a).or_insert(0.0) += f;
            *p_dc.entry(e.b).or_insert(0.0) -= f;
        }
        for (n, dp) in dc_loads {
            *p_dc.entry(*n).or_insert(0.0) += dp;
        }

        let mut d = OracleState {
            theta: HashMap::new(),
            omega: HashMap::new(),
            v: HashMap::new(),
            psrc: HashMap::new(),
        };

        // dc buses first: converters need dv/dt for their angle dynamics
        for (n, c) in &self.dc_buses {
            let mut inj = -p_dc.get(n).copied().unwrap_or(0.0);
            if let Some(k_pv) = self.shunts.get(n) {
                inj -= k_pv * s.v[n];
            }
            if let Some(p) = s.psrc.get(n) {
                if self.sources.iter().any(|(h, _, _, ac)| h == n && !ac) {
                    inj += p;
                }
            }
            if self.graph.kind(*n) == NodeKind::Converter {
                inj -= p_ac.get(n).copied().unwrap_or(0.0);
            }
            d.v.insert(*n, inj / c);
        }

        for (m, swing, k_w) in &self.machines {
            d.theta.insert(*m, s.omega[m]);
            let mut p_mech = -k_w * s.omega[m];
            if let Some(p) = s.psrc.get(m) {
                if self.sources.iter().any(|(h, _, _, ac)| h == m && *ac) {
                    p_mech += p;
                }
            }
            d.omega
                .insert(*m, (p_mech - p_ac.get(m).copied().unwrap_or(0.0)) / swing);
        }

        for (c, (k_p, k_omega)) in &self.conv_gains {
            d.theta.insert(*c, k_p * d.v[c] + k_omega * s.v[c]);
        }

        for (h, t_g, k_g, ac) in &self.sources {
            let drive = if *ac { s.omega[h] } else { s.v[h] };
            d.psrc.insert(*h, (-s.psrc[h] - k_g * drive) / t_g);
        }
        d
    }

    /// Classical fourth-order integration, sampling every state each step.
    pub fn simulate(
        &self,
        x0: OracleState,
        ac_loads: &HashMap<usize, f64>,
        dc_loads: &HashMap<usize, f64>,
        h: f64,
        t_end: f64,
    ) -> Vec<OracleState> {
        let steps = (t_end / h).round() as usize;
        let mut out = Vec::with_capacity(steps + 1);
        let mut s = x0;
        for _ in 0..=steps {
            out.push(clone_state(&s));
            let k1 = self.derivatives(&s, ac_loads, dc_loads);
            let s2 = advance(&s, &k1, 0.5 * h);
            let k2 = self.derivatives(&s2, ac_loads, dc_loads);
            let s3 = advance(&s, &k2, 0.5 * h);
            let k3 = self.derivatives(&s3, ac_loads, dc_loads);
            let s4 = advance(&s, &k3, h);
            let k4 = self.derivatives(&s4, ac_loads, dc_loads);
            s = combine(&s, &k1, &k2, &k3, &k4, h);
        }
        out
    }
}

fn clone_state(s: &OracleState) -> OracleState {
    OracleState {
        theta: s.theta.clone(),
        omega: s.omega.clone(),
        v: s.v.clone(),
        psrc: s.psrc.clone(),
    }
}

fn advance(s: &OracleState, d: &OracleState, h: f64) -> OracleState {
    let mut out = clone_state(s);
    for (k, v) in &d.theta {
        *out.theta.get_mut(k).unwrap() += h * v;
    }
    for (k, v) in &d.omega {
        *out.omega.get_mut(k).unwrap() += h * v;
    }
    for (k, v) in &d.v {
        *out.v.get_mut(k).unwrap() += h * v;
    }
    for (k, v) in &d.psrc {
        *out.psrc.get_mut(k).unwrap() += h * v;
    }
    out
}

fn combine(
    s: &OracleState,
    k1: &OracleState,
    k2: &OracleState,
    k3: &OracleState,
    k4: &OracleState,
    h: f64,
) -> OracleState {
    let mut out = clone_state(s);
    let upd = |x: &mut f64, a: f64, b: f64, c: f64, d: f64| {
        *x += h / 6.0 * (a + 2.0 * b + 2.0 * c + d);
    };
    for k in s.theta.keys() {
        upd(
            out.theta.get_mut(k).unwrap(),
            k1.theta[k],
            k2.theta[k],
            k3.theta[k],
            k4.theta[k],
        );
    }
    for k in s.omega.keys() {
        upd(
            out.omega.get_mut(k).unwrap(),
            k1.omega[k],
            k2.omega[k],
            k3.omega[k],
            k4.omega[k],
        );
    }
    for k in s.v.keys() {
        upd(
            out.v.get_mut(k).unwrap(),
            k1.v[k],
            k2.v[k],
            k3.v[k],
            k4.v[k],
        );
    }
    for k in s.psrc.keys() {
        upd(
            out.psrc.get_mut(k).unwrap(),
            k1.psrc[k],
            k2.psrc[k],
            k3.psrc[k],
            k4.psrc[k],
        );
    }
    out
}

/// Map an oracle state onto the matrix state (eta, omega, v, P_r, P_zs).
pub fn oracle_to_matrix_state(
    s: &OracleState,
    ss: &dualport_core::assembly::StateSpace,
    graph: &SystemGraph,
) -> DVector<f64> {
    let mut x = DVector::zeros(ss.dims.n());
    let mut i = 0;
    for (a, b) in &ss.ordering.eta_edges {
        let na = graph.node_index(a).unwrap();
        let nb = graph.node_index(b).unwrap();
        x[i] = s.theta[&na] - s.theta[&nb];
        i += 1;
    }
    for id in &ss.ordering.omega_nodes {
        x[i] = s.omega[&graph.node_index(id).unwrap()];
        i += 1;
    }
    for id in &ss.ordering.v_nodes {
        x[i] = s.v[&graph.node_index(id).unwrap()];
        i += 1;
    }
    for id in &ss.ordering.p_r_nodes {
        x[i] = s.psrc[&graph.node_index(id).unwrap()];
        i += 1;
    }
    for id in &ss.ordering.p_zs_nodes {
        x[i] = s.psrc[&graph.node_index(id).unwrap()];
        i += 1;
    }
    x
}
