//! Scenario files: a single TOML document describing base quantities, the
//! network, devices, converter gains, disturbances, and run options.
//!
//! Loading validates every cross-reference and resolves derived quantities
//! (operating points, sensitivities, gains tuned to a droop target); the
//! normalized form can be dumped back out and reloads to the same system.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisOptions;
use crate::assembly::Terminal;
use crate::control::{ControlGains, GainSet};
use crate::devices::{
    self, CpCoeffs, DcBusDevice, DcBusParams, DcSource, DeviceSet, FirstOrderSource, MachineDevice,
    MachineParams, MachineSource, PvDevice, PvParams, WtDevice, WtParams,
};
use crate::network::{build_graph, NetworkDescription, NodeId, NodeKind, SystemGraph};
use crate::sim::DisturbanceEvent;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("validation error: {0}")]
    ValidationError(String),
    #[error("io error: {0}")]
    Io(String),
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BaseSpec {
    pub s_mva: f64,
    pub f_hz: f64,
}

impl Default for BaseSpec {
    fn default() -> Self {
        BaseSpec {
            s_mva: 100.0,
            f_hz: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

/// How a renewable's operating point is chosen.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum OperatingSpec {
    /// Sit at the maximum power point (zero sensitivity).
    Mpp,
    /// Curtail to `value` times the maximum power, on the stable branch.
    CurtailPower { value: f64 },
    /// Choose the setpoint so the sensitivity equals `value` (WT speed only).
    CurtailKw { value: f64 },
    /// Explicit setpoint: dc voltage for PV, rotor speed for WT.
    Explicit { value: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GovernorSpec {
    pub t_g: f64,
    pub k_g: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WindTurbineSpec {
    pub air_density: f64,
    pub radius: f64,
    pub v_wind: f64,
    pub rotor_speed_base: f64,
    /// Explicit power base, or
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub power_base: Option<f64>,
    /// calibrate it so the MPP at this wind speed equals the target.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub calibrate_p_mpp: Option<f64>,
    pub t_g: f64,
    pub k_bp: f64,
    #[serde(default)]
    pub beta_star: f64,
    pub operating: OperatingSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MachineSpec {
    pub node: String,
    pub inertia: f64,
    /// Fixed automatically to the turbine operating speed for WT machines.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub omega_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub governor: Option<GovernorSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wind_turbine: Option<WindTurbineSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PvSpec {
    pub i_l: f64,
    pub i_0: f64,
    pub v_t: f64,
    pub alpha: f64,
    pub r_s: f64,
    pub r_p: f64,
    #[serde(default = "one_u32")]
    pub n_series: u32,
    #[serde(default = "one_u32")]
    pub n_parallel: u32,
    pub operating: OperatingSpec,
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DcBusSpec {
    pub node: String,
    pub capacitance: f64,
    /// Defaults to 1 p.u., or to the PV operating voltage when a PV sits here.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub v_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub controllable: Option<GovernorSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pv: Option<PvSpec>,
    #[serde(default)]
    pub direct_feed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConverterSpec {
    pub node: String,
    pub k_p: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k_omega: Option<f64>,
    /// Tune k_omega so the attached device's effective droop equals this.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kappa_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub m_p: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DisturbanceSpec {
    pub time: f64,
    pub node: String,
    pub terminal: Terminal,
    pub delta_p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnalysisSpec {
    #[serde(default)]
    pub allow_relaxations: bool,
    #[serde(default)]
    pub n_minus_one: bool,
    #[serde(default = "one_f64")]
    pub gdc_scale: f64,
}

fn one_f64() -> f64 {
    1.0
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            allow_relaxations: false,
            n_minus_one: false,
            gdc_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulationSpec {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub monitor: Vec<String>,
    #[serde(default)]
    pub nonlinear: bool,
}

fn default_step() -> f64 {
    1e-3
}
fn default_t_end() -> f64 {
    30.0
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            step: default_step(),
            t_end: default_t_end(),
            monitor: vec![],
            nonlinear: false,
        }
    }
}

/// The full scenario document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub base: BaseSpec,
    #[serde(rename = "node")]
    pub nodes: Vec<NodeSpec>,
    #[serde(rename = "ac_edge", default)]
    pub ac_edges: Vec<EdgeSpec>,
    #[serde(rename = "dc_edge", default)]
    pub dc_edges: Vec<EdgeSpec>,
    #[serde(rename = "machine", default)]
    pub machines: Vec<MachineSpec>,
    #[serde(rename = "dc_bus", default)]
    pub dc_buses: Vec<DcBusSpec>,
    #[serde(rename = "converter", default)]
    pub converters: Vec<ConverterSpec>,
    #[serde(rename = "disturbance", default)]
    pub disturbances: Vec<DisturbanceSpec>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub step: f64,
    pub t_end: f64,
    pub monitor: Vec<NodeId>,
    pub nonlinear: bool,
}

/// A scenario resolved into model objects, ready for assembly and analysis.
#[derive(Debug, Clone)]
pub struct ResolvedSystem {
    pub name: String,
    pub graph: SystemGraph,
    pub devices: DeviceSet,
    pub gains: GainSet,
    pub events: Vec<DisturbanceEvent>,
    pub analysis: AnalysisOptions,
    pub sim: SimOptions,
}

fn verr(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::ValidationError(msg.into())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::ParseError(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Validate, resolve operating points and gains, and normalize the
    /// document in place (derived values become explicit, arrays sort).
    pub fn resolve(&mut self) -> Result<ResolvedSystem, ScenarioError> {
        self.nodes.sort_by(|a, b| a.id.cmp(&b.id));
        self.machines.sort_by(|a, b| a.node.cmp(&b.node));
        self.dc_buses.sort_by(|a, b| a.node.cmp(&b.node));
        self.converters.sort_by(|a, b| a.node.cmp(&b.node));
        self.disturbances.sort_by(|a, b| {
            a.time
                .partial_cmp(&b.time)
                .unwrap()
                .then(a.node.cmp(&b.node))
        });
        let sort_edges = |edges: &mut Vec<EdgeSpec>| {
            for e in edges.iter_mut() {
                if e.from > e.to {
                    std::mem::swap(&mut e.from, &mut e.to);
                }
            }
            edges.sort_by(|a, b| a.from.cmp(&b.from).then(a.to.cmp(&b.to)));
        };
        sort_edges(&mut self.ac_edges);
        sort_edges(&mut self.dc_edges);

        for (what, ids) in [
            (
                "machine",
                self.machines.iter().map(|m| &m.node).collect::<Vec<_>>(),
            ),
            ("dc bus", self.dc_buses.iter().map(|d| &d.node).collect()),
            (
                "converter",
                self.converters.iter().map(|c| &c.node).collect(),
            ),
        ] {
            for pair in ids.windows(2) {
                if pair[0] == pair[1] {
                    return Err(verr(format!("{what} `{}`: duplicate entry", pair[0])));
                }
            }
        }

        let desc = NetworkDescription {
            nodes: self.nodes.iter().map(|n| (n.id.clone(), n.kind)).collect(),
            ac_edges: self
                .ac_edges
                .iter()
                .map(|e| (e.from.clone(), e.to.clone(), e.weight))
                .collect(),
            dc_edges: self
                .dc_edges
                .iter()
                .map(|e| {
                    (
                        e.from.clone(),
                        e.to.clone(),
                        e.weight * self.analysis.gdc_scale,
                    )
                })
                .collect(),
        };
        let graph = build_graph(&desc).map_err(|e| verr(e.to_string()))?;

        // devices
        let mut devices = DeviceSet::default();
        for m in &mut self.machines {
            let idx = graph
                .node_index(&m.node)
                .ok_or_else(|| verr(format!("machine `{}`: no such node", m.node)))?;
            if graph.kind(idx) != NodeKind::Machine {
                return Err(verr(format!("machine `{}`: node is not a machine", m.node)));
            }
            if m.governor.is_some() && m.wind_turbine.is_some() {
                return Err(verr(format!(
                    "machine `{}`: governor and wind turbine are exclusive",
                    m.node
                )));
            }
            let source = if let Some(g) = &m.governor {
                if g.t_g <= 0.0 || g.k_g < 0.0 {
                    return Err(verr(format!(
                        "machine `{}`: governor needs t_g > 0, k_g >= 0",
                        m.node
                    )));
                }
                MachineSource::Governor(FirstOrderSource {
                    t_g: g.t_g,
                    k_g: g.k_g,
                })
            } else if let Some(w) = &mut m.wind_turbine {
                let wt = resolve_wt(&m.node, w)?;
                match m.omega_star {
                    Some(os) if (os - wt.omega_star).abs() > 1e-9 => {
                        return Err(verr(format!(
                            "machine `{}`: omega_star {} disagrees with the resolved turbine speed {}",
                            m.node, os, wt.omega_star
                        )));
                    }
                    _ => m.omega_star = Some(wt.omega_star),
                }
                MachineSource::WindTurbine(wt)
            } else {
                MachineSource::None
            };
            let omega_star = *m.omega_star.get_or_insert(1.0);
            if m.inertia <= 0.0 || omega_star <= 0.0 {
                return Err(verr(format!(
                    "machine `{}`: inertia and omega_star must be positive",
                    m.node
                )));
            }
            devices.machines.insert(
                m.node.clone(),
                MachineDevice {
                    params: MachineParams {
                        inertia: m.inertia,
                        omega_star,
                    },
                    source,
                },
            );
        }
        for d in &mut self.dc_buses {
            let idx = graph
                .node_index(&d.node)
                .ok_or_else(|| verr(format!("dc bus `{}`: no such node", d.node)))?;
            if !graph.kind(idx).has_dc_terminal() {
                return Err(verr(format!(
                    "dc bus `{}`: node has no dc terminal",
                    d.node
                )));
            }
            if d.controllable.is_some() && d.pv.is_some() {
                return Err(verr(format!("dc bus `{}`: at most one source", d.node)));
            }
            let source = if let Some(c) = &d.controllable {
                if c.t_g <= 0.0 || c.k_g < 0.0 {
                    return Err(verr(format!(
                        "dc bus `{}`: source needs t_g > 0, k_g >= 0",
                        d.node
                    )));
                }
                DcSource::Controllable(FirstOrderSource {
                    t_g: c.t_g,
                    k_g: c.k_g,
                })
            } else if let Some(p) = &mut d.pv {
                let pv = resolve_pv(&d.node, p)?;
                if d.v_star.is_none() {
                    d.v_star = Some(pv.v_op);
                }
                DcSource::Pv(pv)
            } else {
                DcSource::None
            };
            let v_star = *d.v_star.get_or_insert(1.0);
            if d.capacitance <= 0.0 || v_star <= 0.0 {
                return Err(verr(format!(
                    "dc bus `{}`: capacitance and v_star must be positive",
                    d.node
                )));
            }
            devices.dc_buses.insert(
                d.node.clone(),
                DcBusDevice {
                    params: DcBusParams {
                        capacitance: d.capacitance,
                        v_star,
                    },
                    source,
                    direct_feed: d.direct_feed,
                },
            );
        }

        // every graph node needs its device record
        for (id, kind) in graph.nodes() {
            match kind {
                NodeKind::Machine if devices.machine(id).is_none() => {
                    return Err(verr(format!("machine `{id}`: missing device parameters")));
                }
                NodeKind::Converter | NodeKind::DcNode if devices.dc_bus(id).is_none() => {
                    return Err(verr(format!("dc bus `{id}`: missing device parameters")));
                }
                _ => {}
            }
        }

        // gains, resolving droop targets against the dc subnetworks
        let decomp = crate::network::decompose_subnetworks(&graph);
        let mut gains = GainSet::default();
        let specs: BTreeMap<NodeId, &mut ConverterSpec> = self
            .converters
            .iter_mut()
            .map(|c| (c.node.clone(), c))
            .collect();
        for (id, spec) in specs {
            let idx = graph
                .node_index(&id)
                .ok_or_else(|| verr(format!("converter `{id}`: no such node")))?;
            if graph.kind(idx) != NodeKind::Converter {
                return Err(verr(format!("converter `{id}`: node is not a converter")));
            }
            let k_omega = match (spec.k_omega, spec.kappa_target) {
                (Some(k), None) => k,
                (None, Some(kappa)) => {
                    let k = resolve_kappa_gain(&graph, &decomp, &devices, idx, kappa)?;
                    spec.k_omega = Some(k);
                    spec.kappa_target = None;
                    k
                }
                (Some(_), Some(_)) => {
                    return Err(verr(format!(
                        "converter `{id}`: give either k_omega or kappa_target, not both"
                    )));
                }
                (None, None) => {
                    return Err(verr(format!("converter `{id}`: missing k_omega")));
                }
            };
            let g = ControlGains {
                k_p: spec.k_p,
                k_omega,
                m_p: spec.m_p,
            };
            g.validate()
                .map_err(|e| verr(format!("converter `{id}`: {e}")))?;
            gains.by_node.insert(id, g);
        }
        for &c in &graph.nodes_of_kind(NodeKind::Converter) {
            let id = graph.node_id(c);
            if gains.get(id).is_none() {
                return Err(verr(format!("converter `{id}`: missing k_omega")));
            }
        }

        // disturbances
        let mut events = Vec::new();
        for d in &self.disturbances {
            let idx = graph
                .node_index(&d.node)
                .ok_or_else(|| verr(format!("disturbance at `{}`: no such node", d.node)))?;
            if d.time < 0.0 {
                return Err(verr(format!("disturbance at `{}`: negative time", d.node)));
            }
            if !crate::assembly::terminal_exists(&graph, idx, d.terminal) {
                return Err(verr(format!(
                    "disturbance at `{}`: node has no {:?} terminal",
                    d.node, d.terminal
                )));
            }
            events.push(DisturbanceEvent {
                time: d.time,
                node: d.node.clone(),
                terminal: d.terminal,
                delta_p: d.delta_p,
            });
        }

        if self.simulation.step <= 0.0 || self.simulation.t_end <= 0.0 {
            return Err(verr("simulation step and t_end must be positive"));
        }
        let monitor = if self.simulation.monitor.is_empty() {
            graph
                .nodes_of_kind(NodeKind::Machine)
                .into_iter()
                .map(|i| graph.node_id(i).to_string())
                .collect()
        } else {
            for m in &self.simulation.monitor {
                if graph.node_index(m).is_none() {
                    return Err(verr(format!("monitor `{m}`: no such node")));
                }
            }
            self.simulation.monitor.clone()
        };

        Ok(ResolvedSystem {
            name: self.name.clone(),
            graph,
            devices,
            gains,
            events,
            analysis: AnalysisOptions {
                allow_relaxations: self.analysis.allow_relaxations,
                n_minus_one: self.analysis.n_minus_one,
            },
            sim: SimOptions {
                step: self.simulation.step,
                t_end: self.simulation.t_end,
                monitor,
                nonlinear: self.simulation.nonlinear,
            },
        })
    }
}

fn resolve_wt(node: &str, w: &mut WindTurbineSpec) -> Result<WtDevice, ScenarioError> {
    let base = WtParams {
        air_density: w.air_density,
        radius: w.radius,
        v_wind: w.v_wind,
        cp: CpCoeffs::default(),
        rotor_speed_base: w.rotor_speed_base,
        power_base: w.power_base.unwrap_or(1.0),
    };
    let params = match (w.power_base, w.calibrate_p_mpp) {
        (_, Some(target)) => {
            let p = base
                .calibrated(target)
                .map_err(|e| verr(format!("wind turbine `{node}`: {e}")))?;
            w.power_base = Some(p.power_base);
            w.calibrate_p_mpp = None;
            p
        }
        (Some(_), None) => base,
        (None, None) => {
            return Err(verr(format!(
                "wind turbine `{node}`: give power_base or calibrate_p_mpp"
            )));
        }
    };
    if w.t_g <= 0.0 || w.k_bp < 0.0 || w.beta_star < 0.0 {
        return Err(verr(format!(
            "wind turbine `{node}`: needs t_g > 0, k_bp >= 0, beta_star >= 0"
        )));
    }
    let omega_star = match &w.operating {
        OperatingSpec::Mpp => {
            devices::wt_mpp(&params)
                .map_err(|e| verr(format!("wind turbine `{node}`: {e}")))?
                .0
        }
        OperatingSpec::CurtailPower { value } => {
            devices::wt_curtailed_speed(*value, w.beta_star, &params)
                .map_err(|e| verr(format!("wind turbine `{node}`: {e}")))?
        }
        OperatingSpec::CurtailKw { value } => {
            devices::wt_speed_for_kw(*value, w.beta_star, &params)
                .map_err(|e| verr(format!("wind turbine `{node}`: {e}")))?
        }
        OperatingSpec::Explicit { value } => *value,
    };
    w.operating = OperatingSpec::Explicit { value: omega_star };
    let (k_w, k_beta) = devices::wt_sensitivities(omega_star, w.beta_star, &params)
        .map_err(|e| verr(format!("wind turbine `{node}`: {e}")))?;
    let p_star = devices::wt_power(omega_star, w.beta_star, &params)
        .map_err(|e| verr(format!("wind turbine `{node}`: {e}")))?;
    Ok(WtDevice {
        params,
        omega_star,
        beta_star: w.beta_star,
        t_g: w.t_g,
        k_bp: w.k_bp,
        k_w,
        k_beta,
        p_star,
    })
}

fn resolve_pv(node: &str, p: &mut PvSpec) -> Result<PvDevice, ScenarioError> {
    let params = PvParams {
        i_l: p.i_l,
        i_0: p.i_0,
        v_t: p.v_t,
        alpha: p.alpha,
        r_s: p.r_s,
        r_p: p.r_p,
        n_series: p.n_series,
        n_parallel: p.n_parallel,
    };
    params
        .validate()
        .map_err(|e| verr(format!("pv `{node}`: {e}")))?;
    let v_op = match &p.operating {
        OperatingSpec::Mpp => {
            devices::pv_mpp(&params)
                .map_err(|e| verr(format!("pv `{node}`: {e}")))?
                .0
        }
        OperatingSpec::CurtailPower { value } => devices::pv_curtailed_voltage(*value, &params)
            .map_err(|e| verr(format!("pv `{node}`: {e}")))?,
        OperatingSpec::CurtailKw { .. } => {
            return Err(verr(format!(
                "pv `{node}`: curtail-kw applies to wind turbines only"
            )));
        }
        OperatingSpec::Explicit { value } => *value,
    };
    p.operating = OperatingSpec::Explicit { value: v_op };
    let k_pv =
        devices::pv_sensitivity(v_op, &params).map_err(|e| verr(format!("pv `{node}`: {e}")))?;
    // snap stencil noise at the maximum power point to an exact zero
    let k_pv = if k_pv.abs() < 1e-7 { 0.0 } else { k_pv };
    let p_star = devices::pv_power(v_op, &params).map_err(|e| verr(format!("pv `{node}`: {e}")))?;
    Ok(PvDevice {
        params,
        v_op,
        k_pv,
        p_star,
    })
}

/// Tune a converter gain to hit an effective droop target: requires exactly
/// one sensitivity-bearing device on the converter's dc subnetwork.
fn resolve_kappa_gain(
    graph: &SystemGraph,
    decomp: &crate::network::SubnetworkDecomposition,
    devices: &DeviceSet,
    conv: usize,
    kappa: f64,
) -> Result<f64, ScenarioError> {
    if kappa <= 0.0 {
        return Err(verr(format!(
            "converter `{}`: kappa_target must be positive",
            graph.node_id(conv)
        )));
    }
    let sub = decomp
        .dc_subnet_of(conv)
        .ok_or_else(|| verr(format!("converter `{}`: no dc subnet", graph.node_id(conv))))?;
    let mut sens = Vec::new();
    for &n in &decomp.dc_subnets[sub].nodes {
        if let Some(bus) = devices.dc_bus(graph.node_id(n)) {
            match &bus.source {
                DcSource::Controllable(s) if s.k_g > 0.0 => sens.push(s.k_g),
                DcSource::Pv(pv) if pv.k_pv > 0.0 => sens.push(pv.k_pv),
                _ => {}
            }
        }
    }
    match sens.as_slice() {
        [k] => Ok(kappa * k),
        [] => Err(verr(format!(
            "converter `{}`: kappa_target needs a curtailed source on its dc subnet",
            graph.node_id(conv)
        ))),
        _ => Err(verr(format!(
            "converter `{}`: kappa_target is ambiguous with multiple sources on the dc subnet",
            graph.node_id(conv)
        ))),
    }
}

// ---------------------------------------------------------------------------
// Loading & fixtures
// ---------------------------------------------------------------------------

/// Bundled example systems.
pub const FIXTURES: &[(&str, &str)] = &[
    ("fig8", include_str!("../fixtures/fig8.toml")),
    ("fig2", include_str!("../fixtures/fig2.toml")),
    ("fig7-left", include_str!("../fixtures/fig7-left.toml")),
    ("fig7-right", include_str!("../fixtures/fig7-right.toml")),
    ("hvdc-p2p", include_str!("../fixtures/hvdc-p2p.toml")),
];

pub fn fixture(name: &str) -> Option<&'static str> {
    FIXTURES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Load a scenario from a path, or from the bundled fixtures when the path
/// names one.
pub fn load_scenario(path: &str) -> Result<Scenario, ScenarioError> {
    let text = if Path::new(path).exists() {
        std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(e.to_string()))?
    } else if let Some(t) = fixture(path) {
        t.to_string()
    } else {
        return Err(ScenarioError::Io(format!(
            "no such file or bundled fixture: {path}"
        )));
    };
    Scenario::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_resolves() {
        let text = r#"
name = "mini"
[[node]]
id = "m1"
kind = "machine"
[[node]]
id = "m2"
kind = "machine"
[[ac_edge]]
from = "m2"
to = "m1"
weight = 1.0
[[machine]]
node = "m1"
inertia = 8.0
[machine.governor]
t_g = 1.0
k_g = 20.0
[[machine]]
node = "m2"
inertia = 4.0
"#;
        let mut sc = Scenario::from_toml(text).unwrap();
        let rs = sc.resolve().unwrap();
        assert_eq!(rs.graph.node_count(), 2);
        // edge got canonically ordered
        assert_eq!(sc.ac_edges[0].from, "m1");
    }

    #[test]
    fn missing_k_omega_names_the_converter() {
        let text = r#"
name = "bad"
[[node]]
id = "m1"
kind = "machine"
[[node]]
id = "c1"
kind = "converter"
[[ac_edge]]
from = "m1"
to = "c1"
weight = 2.0
[[machine]]
node = "m1"
inertia = 8.0
[machine.governor]
t_g = 1.0
k_g = 20.0
[[dc_bus]]
node = "c1"
capacitance = 0.2
direct_feed = true
"#;
        let mut sc = Scenario::from_toml(text).unwrap();
        let err = sc.resolve().unwrap_err();
        assert!(err.to_string().contains("converter `c1`"), "{err}");
        assert!(err.to_string().contains("missing k_omega"), "{err}");
    }

    #[test]
    fn duplicate_device_entries_are_rejected() {
        let text = r#"
name = "dup"
[[node]]
id = "m1"
kind = "machine"
[[node]]
id = "m2"
kind = "machine"
[[ac_edge]]
from = "m1"
to = "m2"
weight = 1.0
[[machine]]
node = "m1"
inertia = 8.0
[[machine]]
node = "m1"
inertia = 9.0
[[machine]]
node = "m2"
inertia = 4.0
"#;
        let mut sc = Scenario::from_toml(text).unwrap();
        let err = sc.resolve().unwrap_err();
        assert!(err.to_string().contains("duplicate entry"), "{err}");
    }

    #[test]
    fn parse_error_is_reported() {
        let err = Scenario::from_toml("name = ").unwrap_err();
        assert!(matches!(err, ScenarioError::ParseError(_)));
    }
}
