//! Stability conditions, the LaSalle certificate, spectra, and steady states
//! for the assembled closed loop.
//!
//! The gain conditions act per dc subnetwork, the topology conditions per ac
//! subnetwork; relaxations for point-to-point HVDC links and PMSG wind
//! turbine back-to-back links are detected from the topology and applied only
//! when the caller opts in.

use std::collections::{BTreeSet, HashSet};

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::assembly::StateSpace;
use crate::control::GainSet;
use crate::devices::{DcSource, DeviceSet, MachineSource};
use crate::network::{
    DeviceClassification, NodeId, NodeKind, Subnet, SubnetworkDecomposition, SystemGraph,
};

/// Tolerance for strict inequalities: double-precision floor with headroom.
pub const STRICT_TOL: f64 = 1e-12;
/// Eigenvalue threshold separating stable from not-provably-stable.
pub const EIG_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("converter `{0}` has no dc edges and no direct-feed flag; its equivalent dc resistance is undefined")]
    IsolatedDcNode(NodeId),
    #[error("LaSalle certificate violated: {0}")]
    CertificateViolated(String),
    #[error("the certificate requires strict consistent droop: {0}")]
    CertificateUndefined(String),
    #[error("eigenvalue computation failed to converge")]
    EigenFailure,
    #[error("A is singular; the stability conditions are likely violated")]
    SingularA,
    #[error("no device provides a sustained response; the droop sum D is zero")]
    ZeroD,
    #[error("converter `{0}` has no control gains")]
    MissingGains(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "PASS"),
            Verdict::Fail => write!(f, "FAIL"),
        }
    }
}

// ---------------------------------------------------------------------------
// Condition 1: consistent v-f droop per dc subnetwork
// ---------------------------------------------------------------------------

/// Why a dc subnet with unequal gains may still be acceptable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxKind {
    /// Two converters joining ac areas that have no other connection:
    /// point-to-point HVDC between asynchronous areas.
    PointToPoint,
    /// Same shape, with a PMSG wind turbine on one side.
    PmsgBackToBack,
}

impl std::fmt::Display for RelaxKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RelaxKind::PointToPoint => write!(f, "point-to-point link between asynchronous areas"),
            RelaxKind::PmsgBackToBack => write!(f, "PMSG wind turbine back-to-back link"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cond1Subnet {
    pub subnet: usize,
    pub converters: Vec<NodeId>,
    pub k_omegas: Vec<f64>,
    pub strict: Verdict,
    /// Common gain when strict holds.
    pub common_k_omega: Option<f64>,
    pub relax_eligible: Option<RelaxKind>,
    /// True when the subnet passes only via an applied relaxation.
    pub relaxed: bool,
}

#[derive(Debug, Clone)]
pub struct Cond1Report {
    pub subnets: Vec<Cond1Subnet>,
    pub strict: Verdict,
    /// Verdict with the allowed relaxations applied.
    pub effective: Verdict,
    pub witnesses: Vec<String>,
}

/// Is `dc_subnet` the only path between the ac areas it joins?
fn only_link_between_areas(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    dc_subnet: usize,
) -> bool {
    let areas_of = |s: &Subnet| -> BTreeSet<usize> {
        s.nodes
            .iter()
            .filter(|&&n| graph.kind(n) == NodeKind::Converter)
            .filter_map(|&n| decomp.ac_subnet_of(n))
            .collect()
    };
    let target = areas_of(&decomp.dc_subnets[dc_subnet]);
    if target.len() < 2 {
        return false;
    }
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    let mut parent: Vec<usize> = (0..decomp.ac_subnets.len()).collect();
    for (k, s) in decomp.dc_subnets.iter().enumerate() {
        if k == dc_subnet {
            continue;
        }
        let areas: Vec<usize> = areas_of(s).into_iter().collect();
        for w in areas.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a] = b;
        }
    }
    let mut roots: HashSet<usize> = HashSet::new();
    for &a in &target {
        roots.insert(find(&mut parent, a));
    }
    roots.len() == target.len()
}

fn subnet_has_wt_machine(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    devices: &DeviceSet,
    dc_subnet: usize,
) -> bool {
    decomp.dc_subnets[dc_subnet]
        .nodes
        .iter()
        .filter(|&&n| graph.kind(n) == NodeKind::Converter)
        .filter_map(|&n| decomp.ac_subnet_of(n))
        .flat_map(|a| decomp.ac_subnets[a].nodes.iter())
        .any(|&n| {
            graph.kind(n) == NodeKind::Machine
                && devices
                    .machine(graph.node_id(n))
                    .map(|m| matches!(m.source, MachineSource::WindTurbine(_)))
                    .unwrap_or(false)
        })
}

fn detect_relaxation(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    devices: &DeviceSet,
    dc_subnet: usize,
) -> Option<RelaxKind> {
    let conv: Vec<usize> = decomp.dc_subnets[dc_subnet]
        .nodes
        .iter()
        .copied()
        .filter(|&n| graph.kind(n) == NodeKind::Converter)
        .collect();
    if conv.len() != 2 {
        return None;
    }
    if !only_link_between_areas(graph, decomp, dc_subnet) {
        return None;
    }
    if subnet_has_wt_machine(graph, decomp, devices, dc_subnet) {
        Some(RelaxKind::PmsgBackToBack)
    } else {
        Some(RelaxKind::PointToPoint)
    }
}

/// Condition 1: inside every dc subnetwork all converter proportional gains
/// agree (relative tolerance 1e-12). Eligible point-to-point links are
/// flagged, and pass when `allow_relaxations` is set.
pub fn check_cond1(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    devices: &DeviceSet,
    gains: &GainSet,
    allow_relaxations: bool,
) -> Result<Cond1Report, AnalysisError> {
    let mut subnets = Vec::new();
    let mut witnesses = Vec::new();
    for (i, s) in decomp.dc_subnets.iter().enumerate() {
        let conv_nodes: Vec<usize> = s
            .nodes
            .iter()
            .copied()
            .filter(|&n| graph.kind(n) == NodeKind::Converter)
            .collect();
        let converters: Vec<NodeId> = conv_nodes
            .iter()
            .map(|&n| graph.node_id(n).to_string())
            .collect();
        let mut k_omegas = Vec::new();
        for id in &converters {
            let g = gains
                .get(id)
                .ok_or_else(|| AnalysisError::MissingGains(id.clone()))?;
            k_omegas.push(g.k_omega);
        }
        let strict = if k_omegas.is_empty() {
            Verdict::Pass
        } else {
            let k0 = k_omegas[0];
            if k_omegas
                .iter()
                .all(|&k| (k - k0).abs() <= STRICT_TOL * k0.abs().max(1.0))
            {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        };
        let relax_eligible = if strict == Verdict::Fail {
            detect_relaxation(graph, decomp, devices, i)
        } else {
            None
        };
        let relaxed = strict == Verdict::Fail && allow_relaxations && relax_eligible.is_some();
        if strict == Verdict::Fail && !relaxed {
            witnesses.push(format!(
                "dc subnet {i} mixes gains {k_omegas:?} across {converters:?}"
            ));
        }
        subnets.push(Cond1Subnet {
            subnet: i,
            converters,
            common_k_omega: if strict == Verdict::Pass {
                k_omegas.first().copied()
            } else {
                None
            },
            k_omegas,
            strict,
            relax_eligible,
            relaxed,
        });
    }
    let strict = if subnets.iter().all(|s| s.strict == Verdict::Pass) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let effective = if subnets
        .iter()
        .all(|s| s.strict == Verdict::Pass || s.relaxed)
    {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(Cond1Report {
        subnets,
        strict,
        effective,
        witnesses,
    })
}

// ---------------------------------------------------------------------------
// Condition 2: stabilizing control gains
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Cond2Rule {
    /// `k_p < 2 k_omega^i c r_eq` with the subnet's common gain.
    General { k_omega: f64, r_eq: f64 },
    /// Point-to-point link: the converter's own gain applies.
    PointToPoint { r_eq: f64 },
    /// PMSG WT or LFAC converter: any positive derivative gain.
    PmsgWt,
    /// Direct-fed source with sensitivity `k`: `k_p < 4 c / k`.
    DirectFedCurtailed { k: f64 },
    /// Direct-fed constant-power or MPP source: any positive derivative gain.
    DirectFedMpp,
}

#[derive(Debug, Clone)]
pub struct Cond2Entry {
    pub node: NodeId,
    pub rule: Cond2Rule,
    /// Upper bound on k_p (infinite for the `k_p > 0` rules).
    pub bound: f64,
    pub k_p: f64,
    pub margin: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct Cond2Report {
    pub entries: Vec<Cond2Entry>,
    pub verdict: Verdict,
    pub witnesses: Vec<String>,
}

/// Condition 2 per converter, with the HVDC / PMSG / direct-feed special
/// cases applied where detected and allowed.
pub fn check_cond2(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    devices: &DeviceSet,
    gains: &GainSet,
    allow_relaxations: bool,
) -> Result<Cond2Report, AnalysisError> {
    let mut entries = Vec::new();
    let mut witnesses = Vec::new();
    for (i, s) in decomp.dc_subnets.iter().enumerate() {
        let conv_nodes: Vec<usize> = s
            .nodes
            .iter()
            .copied()
            .filter(|&n| graph.kind(n) == NodeKind::Converter)
            .collect();
        if conv_nodes.is_empty() {
            continue;
        }
        let relax = if allow_relaxations {
            detect_relaxation(graph, decomp, devices, i)
        } else {
            None
        };
        // under strict consistent droop the gains coincide; otherwise bound
        // against the smallest gain in the subnet
        let k_omega_common = conv_nodes
            .iter()
            .map(|&n| {
                gains
                    .get(graph.node_id(n))
                    .map(|g| g.k_omega)
                    .ok_or_else(|| AnalysisError::MissingGains(graph.node_id(n).to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        for &n in &conv_nodes {
            let id = graph.node_id(n).to_string();
            let g = gains
                .get(&id)
                .ok_or_else(|| AnalysisError::MissingGains(id.clone()))?;
            let bus = devices
                .dc_bus(&id)
                .ok_or_else(|| AnalysisError::IsolatedDcNode(id.clone()))?;
            let c = bus.params.scaled_capacitance();
            let g_sum = graph.dc_degree_weight(n);
            let direct = bus.direct_feed || !matches!(bus.source, DcSource::None);

            let rule = if matches!(relax, Some(RelaxKind::PmsgBackToBack)) {
                Cond2Rule::PmsgWt
            } else if matches!(relax, Some(RelaxKind::PointToPoint)) {
                Cond2Rule::PointToPoint { r_eq: 1.0 / g_sum }
            } else if g_sum == 0.0 {
                if !direct {
                    return Err(AnalysisError::IsolatedDcNode(id));
                }
                match &bus.source {
                    DcSource::Controllable(src) if src.k_g > 0.0 => {
                        Cond2Rule::DirectFedCurtailed { k: src.k_g }
                    }
                    DcSource::Pv(pv) if pv.k_pv > 0.0 => {
                        Cond2Rule::DirectFedCurtailed { k: pv.k_pv }
                    }
                    _ => Cond2Rule::DirectFedMpp,
                }
            } else {
                Cond2Rule::General {
                    k_omega: k_omega_common,
                    r_eq: 1.0 / g_sum,
                }
            };

            let bound = match &rule {
                Cond2Rule::General { k_omega, r_eq } => 2.0 * k_omega * c * r_eq,
                Cond2Rule::PointToPoint { r_eq } => 2.0 * g.k_omega * c * r_eq,
                Cond2Rule::PmsgWt | Cond2Rule::DirectFedMpp => f64::INFINITY,
                Cond2Rule::DirectFedCurtailed { k } => 4.0 * c / k,
            };
            let margin = bound - g.k_p;
            let verdict = if g.k_p > 0.0 && margin > STRICT_TOL {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            if verdict == Verdict::Fail {
                witnesses.push(format!(
                    "converter {id}: k_p = {} violates bound {bound} (margin {margin})",
                    g.k_p
                ));
            }
            entries.push(Cond2Entry {
                node: id,
                rule,
                bound,
                k_p: g.k_p,
                margin,
                verdict,
            });
        }
    }
    let verdict = if entries.iter().all(|e| e.verdict == Verdict::Pass) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(Cond2Report {
        entries,
        verdict,
        witnesses,
    })
}

/// Left- and right-hand sides of the Gershgorin bound implied by the gain
/// condition on one dc subnet: for every converter l,
/// `sum g_lk e_l + sum over converter-converter edges g_lk sqrt(e_l e_k)`
/// stays below `4 k_omega^i`, with `e_l = k_p,l / c_l`.
pub fn gershgorin_bound_terms(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    devices: &DeviceSet,
    gains: &GainSet,
    dc_subnet: usize,
) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let s = &decomp.dc_subnets[dc_subnet];
    let e_of = |n: usize| -> Result<f64, AnalysisError> {
        let id = graph.node_id(n);
        let g = gains
            .get(id)
            .ok_or_else(|| AnalysisError::MissingGains(id.to_string()))?;
        let bus = devices
            .dc_bus(id)
            .ok_or_else(|| AnalysisError::IsolatedDcNode(id.to_string()))?;
        Ok(g.k_p / bus.params.scaled_capacitance())
    };
    let mut out = Vec::new();
    for &n in &s.nodes {
        if graph.kind(n) != NodeKind::Converter {
            continue;
        }
        let id = graph.node_id(n);
        let k_omega = gains
            .get(id)
            .ok_or_else(|| AnalysisError::MissingGains(id.to_string()))?
            .k_omega;
        let e_l = e_of(n)?;
        let mut lhs = 0.0;
        for e in graph.dc_edges_at(n) {
            lhs += e.weight * e_l;
            let other = if e.a == n { e.b } else { e.a };
            if graph.kind(other) == NodeKind::Converter {
                lhs += e.weight * (e_l * e_of(other)?).sqrt();
            }
        }
        out.push((lhs, 4.0 * k_omega));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Condition 3: at least one responsive device
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Cond3Report {
    pub verdict: Verdict,
    pub responsive: Vec<NodeId>,
}

pub fn check_cond3(class: &DeviceClassification) -> Cond3Report {
    let mut responsive: Vec<NodeId> = class
        .r_sources
        .iter()
        .map(|(id, _, _)| id.clone())
        .chain(class.pv_nodes.iter().map(|(id, _)| id.clone()))
        .chain(class.wt_machines.iter().map(|(id, _)| id.clone()))
        .collect();
    responsive.sort();
    responsive.dedup();
    Cond3Report {
        verdict: if responsive.is_empty() {
            Verdict::Fail
        } else {
            Verdict::Pass
        },
        responsive,
    }
}

// ---------------------------------------------------------------------------
// Condition 4: synchronizing ac connections
// ---------------------------------------------------------------------------

/// For every node of `n3` there must be a neighbour in `n1` whose degree
/// within the `n1`-`n2` edge set is exactly one. Returns the first failing
/// node (in id order) otherwise.
pub fn check_syncac(
    graph: &SystemGraph,
    subnet: &Subnet,
    n1: &BTreeSet<usize>,
    n2: &BTreeSet<usize>,
    n3: &BTreeSet<usize>,
) -> Result<(), NodeId> {
    let bridge: Vec<(usize, usize)> = subnet
        .edges
        .iter()
        .map(|&ei| &graph.ac_edges()[ei])
        .filter_map(|e| {
            if n1.contains(&e.a) && n2.contains(&e.b) {
                Some((e.a, e.b))
            } else if n1.contains(&e.b) && n2.contains(&e.a) {
                Some((e.b, e.a))
            } else {
                None
            }
        })
        .collect();
    let degree = |l: usize| bridge.iter().filter(|(a, b)| *a == l || *b == l).count();
    for &k in n3 {
        let anchored = bridge
            .iter()
            .filter(|(_, kk)| *kk == k)
            .any(|(l, _)| degree(*l) == 1);
        if !anchored {
            return Err(graph.node_id(k).to_string());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Condition 5 and the topology shortcut cases
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cor2Case {
    OnlySgs,
    OnlyVscs,
    VscsAndSgs,
    VscsAndOneSm,
    VscsAndOneSc,
}

impl std::fmt::Display for Cor2Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Cor2Case::OnlySgs => "i (only SGs with primary control)",
            Cor2Case::OnlyVscs => "ii (only VSCs)",
            Cor2Case::VscsAndSgs => "iii (VSCs and SGs)",
            Cor2Case::VscsAndOneSm => "iv (VSCs and one SM)",
            Cor2Case::VscsAndOneSc => "v (VSCs and one SC)",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyncOutcome {
    Shortcut(Cor2Case),
    /// Full condition satisfied with responsive nodes anchoring the rest.
    CaseI,
    /// Full condition satisfied with converters anchoring the machines.
    CaseII,
    Fail {
        witness: NodeId,
    },
}

#[derive(Debug, Clone)]
pub struct Cond5Subnet {
    pub subnet: usize,
    pub outcome: SyncOutcome,
}

#[derive(Debug, Clone)]
pub struct Cond5Report {
    pub subnets: Vec<Cond5Subnet>,
    pub verdict: Verdict,
    pub witnesses: Vec<String>,
}

fn machine_is_sg_with_control(devices: &DeviceSet, id: &str) -> bool {
    devices
        .machine(id)
        .map(|m| matches!(&m.source, MachineSource::Governor(g) if g.k_g > 0.0))
        .unwrap_or(false)
}

fn machine_has_any_source(devices: &DeviceSet, id: &str) -> bool {
    devices
        .machine(id)
        .map(|m| !matches!(m.source, MachineSource::None))
        .unwrap_or(false)
}

fn machine_is_responsive(class: &DeviceClassification, id: &str) -> bool {
    class.r_sources.iter().any(|(h, _, _)| h == id)
        || class.wt_machines.iter().any(|(h, _)| h == id)
}

/// Converters attached to a dc subnet with at least one bus whose source or
/// curtailed PV controls the dc voltage.
fn converter_sees_dc_control(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    class: &DeviceClassification,
    conv: usize,
) -> bool {
    let Some(d) = decomp.dc_subnet_of(conv) else {
        return false;
    };
    decomp.dc_subnets[d].nodes.iter().any(|&n| {
        let id = graph.node_id(n);
        graph.kind(n) != NodeKind::Machine
            && (class.r_sources.iter().any(|(h, _, _)| h == id)
                || class.pv_nodes.iter().any(|(h, _)| h == id))
    })
}

/// Condition 5 per ac subnetwork: try the shortcut cases first, then the
/// full synchronizing-connection check in both arrangements.
pub fn check_cond5(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    devices: &DeviceSet,
    class: &DeviceClassification,
) -> Cond5Report {
    let mut subnets = Vec::new();
    let mut witnesses = Vec::new();
    for (i, s) in decomp.ac_subnets.iter().enumerate() {
        let machines: Vec<usize> = s
            .nodes
            .iter()
            .copied()
            .filter(|&n| graph.kind(n) == NodeKind::Machine)
            .collect();
        let converters: Vec<usize> = s
            .nodes
            .iter()
            .copied()
            .filter(|&n| graph.kind(n) == NodeKind::Converter)
            .collect();

        let all_sg = machines
            .iter()
            .all(|&n| machine_is_sg_with_control(devices, graph.node_id(n)));

        let shortcut = if converters.is_empty() && !machines.is_empty() && all_sg {
            Some(Cor2Case::OnlySgs)
        } else if machines.is_empty() {
            Some(Cor2Case::OnlyVscs)
        } else if all_sg {
            Some(Cor2Case::VscsAndSgs)
        } else if machines.len() == 1 && !converters.is_empty() {
            if machine_has_any_source(devices, graph.node_id(machines[0])) {
                Some(Cor2Case::VscsAndOneSm)
            } else {
                Some(Cor2Case::VscsAndOneSc)
            }
        } else {
            None
        };

        let outcome = if let Some(case) = shortcut {
            SyncOutcome::Shortcut(case)
        } else {
            let ac_r: BTreeSet<usize> = machines
                .iter()
                .copied()
                .filter(|&n| machine_is_responsive(class, graph.node_id(n)))
                .collect();
            let cac_r: BTreeSet<usize> = converters
                .iter()
                .copied()
                .filter(|&n| converter_sees_dc_control(graph, decomp, class, n))
                .collect();
            let ac_o: BTreeSet<usize> = machines
                .iter()
                .copied()
                .filter(|n| !ac_r.contains(n))
                .collect();
            let cac_o: BTreeSet<usize> = converters
                .iter()
                .copied()
                .filter(|n| !cac_r.contains(n))
                .collect();
            let n1: BTreeSet<usize> = ac_r.union(&cac_r).copied().collect();
            let n2: BTreeSet<usize> = ac_o.union(&cac_o).copied().collect();
            match check_syncac(graph, s, &n1, &n2, &ac_o) {
                Ok(()) => SyncOutcome::CaseI,
                Err(wit_i) => {
                    let n1: BTreeSet<usize> = converters.iter().copied().collect();
                    let n23: BTreeSet<usize> = machines.iter().copied().collect();
                    match check_syncac(graph, s, &n1, &n23, &n23) {
                        Ok(()) => SyncOutcome::CaseII,
                        Err(_) => SyncOutcome::Fail { witness: wit_i },
                    }
                }
            }
        };

        if let SyncOutcome::Fail { witness } = &outcome {
            witnesses.push(format!(
                "ac subnet {i}: node {witness} has no degree-one anchor"
            ));
        }
        subnets.push(Cond5Subnet { subnet: i, outcome });
    }
    let verdict = if subnets
        .iter()
        .all(|s| !matches!(s.outcome, SyncOutcome::Fail { .. }))
    {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Cond5Report {
        subnets,
        verdict,
        witnesses,
    }
}

/// Re-run Condition 5 after each single ac line or machine outage.
#[derive(Debug, Clone)]
pub struct NMinusOneReport {
    /// (description of the deletion, verdict, witnesses)
    pub cases: Vec<(String, Verdict, Vec<String>)>,
    pub verdict: Verdict,
}

pub fn check_cond5_n_minus_one(
    graph: &SystemGraph,
    devices: &DeviceSet,
    class: &DeviceClassification,
) -> NMinusOneReport {
    let mut cases = Vec::new();
    for (ei, e) in graph.ac_edges().iter().enumerate() {
        let g = graph.without_ac_edge(ei);
        let d = crate::network::decompose_subnetworks(&g);
        let rep = check_cond5(&g, &d, devices, class);
        cases.push((
            format!(
                "loss of ac line {}-{}",
                graph.node_id(e.a),
                graph.node_id(e.b)
            ),
            rep.verdict,
            rep.witnesses,
        ));
    }
    for n in 0..graph.node_count() {
        if graph.kind(n) != NodeKind::Machine {
            continue;
        }
        let g = graph.without_node(n);
        let d = crate::network::decompose_subnetworks(&g);
        let rep = check_cond5(&g, &d, devices, class);
        cases.push((
            format!("loss of machine {}", graph.node_id(n)),
            rep.verdict,
            rep.witnesses,
        ));
    }
    let verdict = if cases.iter().all(|(_, v, _)| v.passed()) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    NMinusOneReport { cases, verdict }
}

// ---------------------------------------------------------------------------
// LaSalle certificate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LasalleReport {
    /// Smallest diagonal entry of the certificate weight M.
    pub min_eig_m: f64,
    /// Largest eigenvalue of the symmetrized derivative form; decay is
    /// certified when it sits at or below the numerical floor.
    pub max_eig_sym: f64,
    /// Largest dV/dt over the sampled unit-norm states.
    pub max_sampled_dvdt: f64,
}

/// Restriction of the system to `P_zs = 0`: drops the trailing block.
fn restricted_a(ss: &StateSpace) -> (DMatrix<f64>, DVector<f64>) {
    let n = ss.dims.n() - ss.dims.n_zs;
    let a = ss.a.view((0, 0), (n, n)).into_owned();
    let t = ss.t.diagonal().rows(0, n).into_owned();
    (a, t)
}

/// Diagonal of the LaSalle weight `M` over the restricted state
/// (eta, omega, v, P_r), requiring strict consistent droop.
///
/// Defined for sources hosted on machines and dc buses proper. A source
/// feeding a converter dc link directly couples into the angle-difference
/// rows through the derivative gain, and this weight no longer cancels that
/// cross term, so such systems are reported as outside the certificate's
/// scope (their spectra still decide stability).
pub fn lasalle_weight(
    ss: &StateSpace,
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    gains: &GainSet,
) -> Result<DVector<f64>, AnalysisError> {
    for (host, _, _) in &ss.class.r_sources {
        let idx = graph.node_index(host).expect("source host exists");
        if graph.kind(idx) == NodeKind::Converter {
            return Err(AnalysisError::CertificateUndefined(format!(
                "source on converter dc link `{host}` couples into the angle dynamics"
            )));
        }
    }
    for (host, _) in &ss.class.pv_nodes {
        let idx = graph.node_index(host).expect("pv host exists");
        if graph.kind(idx) == NodeKind::Converter {
            return Err(AnalysisError::CertificateUndefined(format!(
                "curtailed source on converter dc link `{host}` couples into the angle dynamics"
            )));
        }
    }
    // common gain per dc subnet
    let mut subnet_gain = vec![None; decomp.dc_subnets.len()];
    for (i, s) in decomp.dc_subnets.iter().enumerate() {
        let ks: Vec<f64> = s
            .nodes
            .iter()
            .filter(|&&n| graph.kind(n) == NodeKind::Converter)
            .map(|&n| {
                gains
                    .get(graph.node_id(n))
                    .map(|g| g.k_omega)
                    .ok_or_else(|| AnalysisError::MissingGains(graph.node_id(n).to_string()))
            })
            .collect::<Result<_, _>>()?;
        if let Some(&k0) = ks.first() {
            if ks
                .iter()
                .any(|&k| (k - k0).abs() > STRICT_TOL * k0.abs().max(1.0))
            {
                return Err(AnalysisError::CertificateUndefined(format!(
                    "dc subnet {i} mixes proportional gains"
                )));
            }
            subnet_gain[i] = Some(k0);
        }
    }

    let dims = &ss.dims;
    let n = dims.n() - dims.n_zs;
    let mut m_diag = DVector::zeros(n);
    for (k, i) in dims.eta_range().enumerate() {
        m_diag[i] = 0.5 * ss.w_ac_diag[k];
    }
    for (k, i) in dims.omega_range().enumerate() {
        m_diag[i] = 0.5 * ss.j_diag[k];
    }
    for (k, i) in dims.v_range().enumerate() {
        let node = graph
            .node_index(&ss.ordering.v_nodes[k])
            .expect("state ordering references a graph node");
        let sub = decomp
            .dc_subnet_of(node)
            .expect("every dc-side node lies in a dc subnet");
        let k_omega = subnet_gain[sub].ok_or_else(|| {
            AnalysisError::CertificateUndefined(format!("dc subnet {sub} has no converter"))
        })?;
        m_diag[i] = 0.5 * k_omega * ss.c_diag[k];
    }
    // ac-side sources weigh 1/k_g, dc-side sources k_omega^i / k_g
    for (k, i) in dims.p_r_range().enumerate() {
        let host = &ss.ordering.p_r_nodes[k];
        let host_idx = graph.node_index(host).expect("source host exists");
        let k_g = ss.k_g_diag[k];
        let weight = match graph.kind(host_idx) {
            NodeKind::Machine => 1.0 / k_g,
            _ => {
                let sub = decomp.dc_subnet_of(host_idx).expect("dc host has a subnet");
                let k_omega = subnet_gain[sub].ok_or_else(|| {
                    AnalysisError::CertificateUndefined(format!("dc subnet {sub} has no converter"))
                })?;
                k_omega / k_g
            }
        };
        m_diag[i] = 0.5 * weight * ss.t_r_diag[k];
    }
    Ok(m_diag)
}

/// Evaluate the quadratic LaSalle certificate of the restricted system under
/// strict consistent droop: builds the weight `M`, forms the symmetrized
/// derivative `M A~ + A~^T M` with `A~ = T^-1 A`, and checks its spectrum
/// plus sampled decay rates.
pub fn lasalle_certificate(
    ss: &StateSpace,
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    gains: &GainSet,
) -> Result<LasalleReport, AnalysisError> {
    let m_diag = lasalle_weight(ss, graph, decomp, gains)?;
    let n = ss.dims.n() - ss.dims.n_zs;

    let min_eig_m = m_diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig_m <= 0.0 {
        return Err(AnalysisError::CertificateViolated(format!(
            "certificate weight not positive definite (min diag {min_eig_m})"
        )));
    }

    let (a_res, t_res) = restricted_a(ss);
    let a_tilde = DMatrix::from_fn(n, n, |i, j| a_res[(i, j)] / t_res[i]);
    let m = DMatrix::from_diagonal(&m_diag);
    let s = &m * &a_tilde + a_tilde.transpose() * &m;
    let sym = 0.5 * (&s + s.transpose());
    let eig = sym.clone().symmetric_eigen();
    let max_eig_sym = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if max_eig_sym > EIG_TOL {
        return Err(AnalysisError::CertificateViolated(format!(
            "symmetrized derivative has positive eigenvalue {max_eig_sym}"
        )));
    }

    let mut rng = rand::rngs::StdRng::seed_from_u64(0x1a5a11e);
    let mut max_sampled = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let dvdt = (x.transpose() * &sym * &x)[(0, 0)];
        max_sampled = max_sampled.max(dvdt);
        if dvdt > EIG_TOL {
            return Err(AnalysisError::CertificateViolated(format!(
                "sampled state with dV/dt = {dvdt}"
            )));
        }
    }

    Ok(LasalleReport {
        min_eig_m,
        max_eig_sym,
        max_sampled_dvdt: max_sampled,
    })
}

// ---------------------------------------------------------------------------
// Spectrum, steady state, quasi-synchronous frequency
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<Complex<f64>>,
    pub restricted_eigenvalues: Vec<Complex<f64>>,
    pub max_re_restricted: f64,
    pub stable: bool,
}

/// Eigenvalues of `T^-1 A`, full and with the decoupled `P_zs` block removed;
/// the stability verdict uses the restricted set.
pub fn spectrum(ss: &StateSpace) -> Result<SpectrumReport, AnalysisError> {
    let solve = |m: DMatrix<f64>| -> Result<Vec<Complex<f64>>, AnalysisError> {
        if m.is_empty() {
            return Ok(Vec::new());
        }
        let schur =
            nalgebra::Schur::try_new(m, 1e-14, 100_000).ok_or(AnalysisError::EigenFailure)?;
        let mut v: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().cloned().collect();
        v.sort_by(|a, b| {
            a.re.partial_cmp(&b.re)
                .unwrap()
                .then(a.im.partial_cmp(&b.im).unwrap())
        });
        Ok(v)
    };
    let n_full = ss.dims.n();
    let t_inv_a = DMatrix::from_fn(n_full, n_full, |i, j| ss.a[(i, j)] / ss.t[(i, i)]);
    let eigenvalues = solve(t_inv_a)?;
    let (a_res, t_res) = restricted_a(ss);
    let n = a_res.nrows();
    let restricted = solve(DMatrix::from_fn(n, n, |i, j| a_res[(i, j)] / t_res[i]))?;
    let max_re_restricted = restricted
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectrumReport {
        eigenvalues,
        restricted_eigenvalues: restricted,
        stable: max_re_restricted < -EIG_TOL,
        max_re_restricted,
    })
}

/// Steady state under a constant disturbance: `x_ss = -A^-1 B P_d`.
pub fn steady_state(ss: &StateSpace, p_d: &DVector<f64>) -> Result<DVector<f64>, AnalysisError> {
    let rhs = -(&ss.b * p_d);
    let lu = ss.a.clone().lu();
    let x = lu.solve(&rhs).ok_or(AnalysisError::SingularA)?;
    let residual = (&ss.a * &x - &rhs).amax();
    if residual > 1e-10 * rhs.amax().max(1.0) {
        return Err(AnalysisError::SingularA);
    }
    Ok(x)
}

/// Per-device effective droops resolved against the topology, and their
/// inverse sum D.
#[derive(Debug, Clone)]
pub struct DroopLedger {
    /// (node, kappa_P) per responsive node, relative to the reference area's
    /// frequency.
    pub entries: Vec<(NodeId, f64)>,
    pub d_total: f64,
    /// Steady frequency ratio of each ac subnet to the reference area in the
    /// lossless-dc limit.
    pub area_scales: Vec<f64>,
    pub reference_area: usize,
}

/// In the lossless-dc limit, voltages equalize across each dc subnet and
/// every converter ties its area frequency to that voltage through its gain,
/// so area frequencies relate by products of gain ratios. Walk the area
/// graph outward from the reference area and accumulate them. Under strict
/// consistent droop every scale is one.
pub fn area_frequency_scales(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    gains: &GainSet,
    reference_area: usize,
) -> Result<Vec<f64>, AnalysisError> {
    let n_areas = decomp.ac_subnets.len();
    let mut scale = vec![None; n_areas];
    scale[reference_area] = Some(1.0);
    let mut queue = std::collections::VecDeque::from([reference_area]);
    while let Some(area) = queue.pop_front() {
        let s_area = scale[area].unwrap();
        // converters of this area and the dc subnets they stand on
        for &c in decomp.ac_subnets[area]
            .nodes
            .iter()
            .filter(|&&n| graph.kind(n) == NodeKind::Converter)
        {
            let k_c = gains
                .get(graph.node_id(c))
                .map(|g| g.k_omega)
                .ok_or_else(|| AnalysisError::MissingGains(graph.node_id(c).to_string()))?;
            let Some(d) = decomp.dc_subnet_of(c) else {
                continue;
            };
            for &other in decomp.dc_subnets[d]
                .nodes
                .iter()
                .filter(|&&n| graph.kind(n) == NodeKind::Converter && n != c)
            {
                let k_o = gains
                    .get(graph.node_id(other))
                    .map(|g| g.k_omega)
                    .ok_or_else(|| AnalysisError::MissingGains(graph.node_id(other).to_string()))?;
                let Some(a_o) = decomp.ac_subnet_of(other) else {
                    continue;
                };
                let s_new = s_area * k_o / k_c;
                match scale[a_o] {
                    None => {
                        scale[a_o] = Some(s_new);
                        queue.push_back(a_o);
                    }
                    Some(existing) => {
                        if (existing - s_new).abs() > 1e-9 * existing.abs().max(1.0) {
                            return Err(AnalysisError::CertificateUndefined(format!(
                                "ac areas {area} and {a_o} are tied through inconsistent gain ratios"
                            )));
                        }
                    }
                }
            }
        }
    }
    // areas unreachable through dc links keep no defined relation; a
    // connected union graph never produces one
    Ok(scale.into_iter().map(|s| s.unwrap_or(1.0)).collect())
}

/// Inverse effective droops of every responsive device, all expressed
/// against the reference area's frequency. `reference` defaults to the
/// largest ac subnet (the bulk grid).
pub fn droop_ledger(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    gains: &GainSet,
    class: &DeviceClassification,
    reference: Option<&str>,
) -> Result<DroopLedger, AnalysisError> {
    let reference_area = match reference {
        Some(id) => {
            let idx = graph.node_index(id).ok_or(AnalysisError::ZeroD)?;
            decomp.ac_subnet_of(idx).ok_or(AnalysisError::ZeroD)?
        }
        None => {
            let mut best = 0;
            for (i, s) in decomp.ac_subnets.iter().enumerate() {
                if s.nodes.len() > decomp.ac_subnets[best].nodes.len() {
                    best = i;
                }
            }
            best
        }
    };
    let scales = area_frequency_scales(graph, decomp, gains, reference_area)?;

    // the dc voltage of a subnet maps to the reference frequency through any
    // of its converters
    let subnet_voltage_scale = |sub: usize| -> Result<f64, AnalysisError> {
        let conv = decomp.dc_subnets[sub]
            .nodes
            .iter()
            .copied()
            .find(|&n| graph.kind(n) == NodeKind::Converter)
            .ok_or(AnalysisError::ZeroD)?;
        let k_omega = gains
            .get(graph.node_id(conv))
            .map(|g| g.k_omega)
            .ok_or_else(|| AnalysisError::MissingGains(graph.node_id(conv).to_string()))?;
        let area = decomp.ac_subnet_of(conv).ok_or(AnalysisError::ZeroD)?;
        Ok(scales[area] / k_omega)
    };

    let mut responsive: BTreeSet<NodeId> = BTreeSet::new();
    for (id, _, _) in &class.r_sources {
        responsive.insert(id.clone());
    }
    for (id, _) in &class.pv_nodes {
        responsive.insert(id.clone());
    }
    for (id, _) in &class.wt_machines {
        responsive.insert(id.clone());
    }

    let mut entries = Vec::new();
    for id in responsive {
        let idx = graph.node_index(&id).expect("classified node exists");
        let inv_kappa = match graph.kind(idx) {
            NodeKind::Machine => {
                let k_g: f64 = class
                    .r_sources
                    .iter()
                    .filter(|(h, _, _)| *h == id)
                    .map(|(_, k, _)| *k)
                    .sum();
                let k_w: f64 = class
                    .wt_machines
                    .iter()
                    .filter(|(h, _)| *h == id)
                    .map(|(_, k)| *k)
                    .sum();
                let area = decomp.ac_subnet_of(idx).ok_or(AnalysisError::ZeroD)?;
                (k_g + k_w) * scales[area]
            }
            _ => {
                let sub = decomp.dc_subnet_of(idx).ok_or(AnalysisError::ZeroD)?;
                let k: f64 = class
                    .r_sources
                    .iter()
                    .filter(|(h, _, _)| *h == id)
                    .map(|(_, kg, _)| *kg)
                    .sum::<f64>()
                    + class
                        .pv_nodes
                        .iter()
                        .filter(|(h, _)| *h == id)
                        .map(|(_, k)| *k)
                        .sum::<f64>();
                k * subnet_voltage_scale(sub)?
            }
        };
        if inv_kappa > 0.0 {
            entries.push((id, 1.0 / inv_kappa));
        }
    }
    let d_total: f64 = entries.iter().map(|(_, kappa)| 1.0 / kappa).sum();
    if d_total <= 0.0 {
        return Err(AnalysisError::ZeroD);
    }
    Ok(DroopLedger {
        entries,
        d_total,
        area_scales: scales,
        reference_area,
    })
}

/// Quasi-synchronous steady frequency of the reference area in the
/// lossless-dc limit: `omega_ss = -sum(P_d) / D` with `D` the sum of inverse
/// effective droops. Under strict consistent droop every area shares this
/// frequency; relaxed links scale it by the recorded area ratios.
pub fn quasi_sync_frequency(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    gains: &GainSet,
    class: &DeviceClassification,
    p_d: &DVector<f64>,
) -> Result<f64, AnalysisError> {
    quasi_sync_frequency_at(graph, decomp, gains, class, p_d, None)
}

/// As [`quasi_sync_frequency`], measured in the area of `reference`.
pub fn quasi_sync_frequency_at(
    graph: &SystemGraph,
    decomp: &SubnetworkDecomposition,
    gains: &GainSet,
    class: &DeviceClassification,
    p_d: &DVector<f64>,
    reference: Option<&str>,
) -> Result<f64, AnalysisError> {
    let ledger = droop_ledger(graph, decomp, gains, class, reference)?;
    Ok(-p_d.sum() / ledger.d_total)
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct AnalysisOptions {
    pub allow_relaxations: bool,
    pub n_minus_one: bool,
}

/// Everything the `check` command reports.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub cond1: Cond1Report,
    pub cond2: Cond2Report,
    pub cond3: Cond3Report,
    pub cond5: Cond5Report,
    pub n_minus_one: Option<NMinusOneReport>,
    pub spectrum: SpectrumReport,
    /// Present only when strict consistent droop and the gain bounds hold.
    pub lasalle: Option<LasalleReport>,
    pub lasalle_note: Option<String>,
}

impl StabilityReport {
    pub fn all_pass(&self) -> bool {
        self.cond1.effective.passed()
            && self.cond2.verdict.passed()
            && self.cond3.verdict.passed()
            && self.cond5.verdict.passed()
            && self
                .n_minus_one
                .as_ref()
                .map(|r| r.verdict.passed())
                .unwrap_or(true)
    }
}

/// Run every condition plus spectrum and certificate against one system.
pub fn full_check(
    graph: &SystemGraph,
    devices: &DeviceSet,
    gains: &GainSet,
    ss: &StateSpace,
    opts: &AnalysisOptions,
) -> Result<StabilityReport, AnalysisError> {
    let decomp = crate::network::decompose_subnetworks(graph);
    let class = crate::devices::classify_nodes(devices);
    let cond1 = check_cond1(graph, &decomp, devices, gains, opts.allow_relaxations)?;
    let cond2 = check_cond2(graph, &decomp, devices, gains, opts.allow_relaxations)?;
    let cond3 = check_cond3(&class);
    let cond5 = check_cond5(graph, &decomp, devices, &class);
    let n_minus_one = if opts.n_minus_one {
        Some(check_cond5_n_minus_one(graph, devices, &class))
    } else {
        None
    };
    let spec = spectrum(ss)?;
    let (lasalle, lasalle_note) = if cond1.strict.passed() && cond2.verdict.passed() {
        match lasalle_certificate(ss, graph, &decomp, gains) {
            Ok(rep) => (Some(rep), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (
            None,
            Some(
                "certificate evaluated only under strict consistent droop and passing gain bounds"
                    .into(),
            ),
        )
    };
    Ok(StabilityReport {
        cond1,
        cond2,
        cond3,
        cond5,
        n_minus_one,
        spectrum: spec,
        lasalle,
        lasalle_note,
    })
}
