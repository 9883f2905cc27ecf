//! Fixed-step time simulation: the linear closed loop, a nonlinear
//! validation model, and frequency metrics.
//!
//! The nonlinear model composes sine ac flows, quadratic dc flows, the full
//! PV and wind-turbine curves, and the derivative-free PI realization of the
//! converter control, all in deviation coordinates so its linearization at
//! the origin is exactly the assembled (T, A, B).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::assembly::{disturbance_vector, StateSpace, Terminal};
use crate::control::GainSet;
use crate::devices::{pv_power, wt_power, DcSource, DeviceSet, MachineSource};
use crate::network::{NodeId, NodeKind, SystemGraph};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("state became non-finite at t = {0}")]
    NonFiniteState(f64),
    #[error("nonlinear initialization failed: {0}")]
    InitializationFailed(String),
    #[error("metrics window {window} s exceeds the trajectory span {span} s")]
    WindowTooLong { window: f64, span: f64 },
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("step size must be positive")]
    BadStep,
    #[error(transparent)]
    Assembly(#[from] crate::assembly::AssemblyError),
    #[error("device curve evaluation failed: {0}")]
    Device(String),
}

/// A load event: `delta_p` added at `node`'s `terminal` from `time` on.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceEvent {
    pub time: f64,
    pub node: NodeId,
    pub terminal: Terminal,
    pub delta_p: f64,
}

/// Piecewise-constant disturbance vector schedule.
#[derive(Debug, Clone, Default)]
pub struct Schedule {
    /// (time, cumulative P_d from that time on), times ascending.
    pub breakpoints: Vec<(f64, DVector<f64>)>,
    n_d: usize,
}

impl Schedule {
    pub fn from_events(ss: &StateSpace, events: &[DisturbanceEvent]) -> Result<Self, SimError> {
        let mut sorted = events.to_vec();
        sorted.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        let mut breakpoints = Vec::new();
        let mut acc: Vec<(NodeId, Terminal, f64)> = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let t = sorted[i].time;
            while i < sorted.len() && sorted[i].time == t {
                acc.push((
                    sorted[i].node.clone(),
                    sorted[i].terminal,
                    sorted[i].delta_p,
                ));
                i += 1;
            }
            breakpoints.push((t, disturbance_vector(ss, &acc)?));
        }
        Ok(Schedule {
            breakpoints,
            n_d: ss.dims.n_d,
        })
    }

    pub fn constant(p_d: DVector<f64>) -> Self {
        let n_d = p_d.len();
        Schedule {
            breakpoints: vec![(0.0, p_d)],
            n_d,
        }
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        let mut current = DVector::zeros(self.n_d);
        for (bt, p) in &self.breakpoints {
            if *bt <= t {
                current = p.clone();
            } else {
                break;
            }
        }
        current
    }
}

/// A simulated run: uniform-step samples of the state plus the converter
/// frequencies recovered from the control law.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub state_labels: Vec<String>,
    /// Row-major, `times.len() x state_labels.len()`.
    pub states: Vec<f64>,
    pub freq_labels: Vec<String>,
    /// Row-major, `times.len() x freq_labels.len()`.
    pub converter_freqs: Vec<f64>,
    pub step: f64,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, row: usize, col: usize) -> f64 {
        self.states[row * self.state_labels.len() + col]
    }

    pub fn freq(&self, row: usize, col: usize) -> f64 {
        self.converter_freqs[row * self.freq_labels.len() + col]
    }

    /// Column by label, searching states first and then frequency outputs.
    pub fn channel(&self, label: &str) -> Result<Vec<f64>, SimError> {
        if let Some(c) = self.state_labels.iter().position(|l| l == label) {
            return Ok((0..self.n_steps()).map(|r| self.state(r, c)).collect());
        }
        if let Some(c) = self.freq_labels.iter().position(|l| l == label) {
            return Ok((0..self.n_steps()).map(|r| self.freq(r, c)).collect());
        }
        Err(SimError::UnknownChannel(label.to_string()))
    }

    pub fn last_state(&self) -> DVector<f64> {
        let n = self.state_labels.len();
        let r = self.n_steps() - 1;
        DVector::from_iterator(n, (0..n).map(|c| self.state(r, c)))
    }

    /// Delimiter-separated export: time first, then states, then converter
    /// frequencies, with a header naming every column.
    pub fn to_dsv(&self) -> String {
        let mut out = String::new();
        out.push('t');
        for l in &self.state_labels {
            out.push(',');
            out.push_str(l);
        }
        for l in &self.freq_labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for r in 0..self.n_steps() {
            out.push_str(&format!("{:.6}", self.times[r]));
            for c in 0..self.state_labels.len() {
                out.push_str(&format!(",{:.12e}", self.state(r, c)));
            }
            for c in 0..self.freq_labels.len() {
                out.push_str(&format!(",{:.12e}", self.freq(r, c)));
            }
            out.push('\n');
        }
        out
    }
}

fn rk4_step<F>(x: &DVector<f64>, t: f64, h: f64, f: &F) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + 0.5 * h * &k1));
    let k3 = f(t + 0.5 * h, &(x + 0.5 * h * &k2));
    let k4 = f(t + h, &(x + h * &k3));
    x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Integrate the linear closed loop `T dx/dt = A x + B P_d(t)` with classical
/// fourth-order steps; disturbance switches align to step boundaries.
pub fn simulate_linear(
    ss: &StateSpace,
    schedule: &Schedule,
    x0: &DVector<f64>,
    h: f64,
    t_end: f64,
) -> Result<Trajectory, SimError> {
    if h <= 0.0 {
        return Err(SimError::BadStep);
    }
    let steps = (t_end / h).round() as usize;
    let n = ss.dims.n();
    let conv_labels: Vec<String> = ss
        .net
        .converter_order
        .iter()
        .enumerate()
        .map(|(k, _)| format!("fconv:{}", conv_id(ss, k)))
        .collect();

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * n);
    let mut freqs = Vec::with_capacity((steps + 1) * conv_labels.len());

    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * h;
        // disturbances are constant over each step and switch at boundaries
        let p = schedule.at(t);
        times.push(t);
        states.extend(x.iter());
        freqs.extend(ss.converter_frequencies(&x, &p).iter());
        if k < steps {
            let f = |_tau: f64, y: &DVector<f64>| ss.xdot(y, &p);
            x = rk4_step(&x, t, h, &f);
            if !x.iter().all(|v| v.is_finite()) {
                return Err(SimError::NonFiniteState((k + 1) as f64 * h));
            }
        }
    }

    Ok(Trajectory {
        times,
        state_labels: ss.ordering.state_labels(),
        states,
        freq_labels: conv_labels,
        converter_freqs: freqs,
        step: h,
    })
}

fn conv_id(ss: &StateSpace, k: usize) -> String {
    // converter order indexes into the dc-side ordering via i_cdc
    let row = ss.net.i_cdc.row(k);
    let col = (0..row.ncols())
        .find(|&j| row[j] == 1.0)
        .expect("selector has a 1");
    ss.ordering.v_nodes[col].clone()
}

// ---------------------------------------------------------------------------
// Nonlinear validation model
// ---------------------------------------------------------------------------

struct NlModel<'a> {
    graph: &'a SystemGraph,
    devices: &'a DeviceSet,
    /// machine node indices, ascending
    machines: Vec<usize>,
    converters: Vec<usize>,
    dc_side: Vec<usize>,
    /// per-machine swing coefficient J omega*
    swing: Vec<f64>,
    /// per dc-side bus scaled capacitance
    cap: Vec<f64>,
    /// per dc-side bus voltage setpoint
    v_star: Vec<f64>,
    /// per-converter gains
    k_p: Vec<f64>,
    k_omega: Vec<f64>,
    /// constant phase offsets absorbed by the PI integrator
    delta_theta: Vec<f64>,
    /// sources with a power state: (machine slot or dc slot, T_g, k_g, is_ac)
    gov_states: Vec<GovState>,
    /// wind turbines: (machine slot, device)
    wts: Vec<(usize, crate::devices::WtDevice)>,
    /// pitch state index per wt (into the beta block), usize::MAX when inactive
    wt_beta_slot: Vec<usize>,
    /// ac loads per ac-side node and dc loads per dc-side node, filled per step
    layout: NlLayout,
}

#[derive(Debug, Clone, Copy)]
struct GovState {
    /// index into machines (ac side) or dc_side (dc side)
    slot: usize,
    t_g: f64,
    k_g: f64,
    ac_side: bool,
}

#[derive(Debug, Clone, Copy)]
struct NlLayout {
    n_mach: usize,
    n_conv: usize,
    n_v: usize,
    n_gov: usize,
    n_beta: usize,
}

impl NlLayout {
    fn n(&self) -> usize {
        2 * self.n_mach + self.n_v + self.n_conv + self.n_gov + self.n_beta
    }
    fn theta(&self, i: usize) -> usize {
        i
    }
    fn omega(&self, i: usize) -> usize {
        self.n_mach + i
    }
    fn v(&self, i: usize) -> usize {
        2 * self.n_mach + i
    }
    fn gamma(&self, i: usize) -> usize {
        2 * self.n_mach + self.n_v + i
    }
    fn gov(&self, i: usize) -> usize {
        2 * self.n_mach + self.n_v + self.n_conv + i
    }
    fn beta(&self, i: usize) -> usize {
        2 * self.n_mach + self.n_v + self.n_conv + self.n_gov + i
    }
}

impl<'a> NlModel<'a> {
    fn new(
        graph: &'a SystemGraph,
        devices: &'a DeviceSet,
        gains: &GainSet,
        delta_theta: &HashMap<NodeId, f64>,
    ) -> Result<Self, SimError> {
        let machines = graph.nodes_of_kind(NodeKind::Machine);
        let converters = graph.nodes_of_kind(NodeKind::Converter);
        let dc_side = graph.dc_side_nodes();
        let mut swing = Vec::new();
        let mut gov_states = Vec::new();
        let mut wts = Vec::new();
        for (slot, &m) in machines.iter().enumerate() {
            let id = graph.node_id(m);
            let dev = devices.machine(id).ok_or_else(|| {
                SimError::InitializationFailed(format!("machine `{id}` has no device"))
            })?;
            swing.push(dev.params.swing_coefficient());
            match &dev.source {
                MachineSource::Governor(g) => gov_states.push(GovState {
                    slot,
                    t_g: g.t_g,
                    k_g: g.k_g,
                    ac_side: true,
                }),
                MachineSource::WindTurbine(wt) => wts.push((slot, wt.clone())),
                MachineSource::None => {}
            }
        }
        let mut cap = Vec::new();
        let mut v_star = Vec::new();
        for (slot, &d) in dc_side.iter().enumerate() {
            let id = graph.node_id(d);
            let dev = devices.dc_bus(id).ok_or_else(|| {
                SimError::InitializationFailed(format!("dc bus `{id}` has no device"))
            })?;
            cap.push(dev.params.scaled_capacitance());
            v_star.push(dev.params.v_star);
            if let DcSource::Controllable(g) = &dev.source {
                gov_states.push(GovState {
                    slot,
                    t_g: g.t_g,
                    k_g: g.k_g,
                    ac_side: false,
                });
            }
        }
        let mut k_p = Vec::new();
        let mut k_omega = Vec::new();
        let mut dth = Vec::new();
        for &c in &converters {
            let id = graph.node_id(c);
            let g = gains.get(id).ok_or_else(|| {
                SimError::InitializationFailed(format!("converter `{id}` has no gains"))
            })?;
            k_p.push(g.k_p);
            k_omega.push(g.k_omega);
            dth.push(delta_theta.get(id).copied().unwrap_or(0.0));
        }
        let mut wt_beta_slot = Vec::new();
        let mut n_beta = 0;
        for (_, wt) in &wts {
            if wt.k_bp > 0.0 {
                wt_beta_slot.push(n_beta);
                n_beta += 1;
            } else {
                wt_beta_slot.push(usize::MAX);
            }
        }
        let layout = NlLayout {
            n_mach: machines.len(),
            n_conv: converters.len(),
            n_v: dc_side.len(),
            n_gov: gov_states.len(),
            n_beta,
        };
        Ok(NlModel {
            graph,
            devices,
            machines,
            converters,
            dc_side,
            swing,
            cap,
            v_star,
            k_p,
            k_omega,
            delta_theta: dth,
            gov_states,
            wts,
            wt_beta_slot,
            layout,
        })
    }

    /// Phase-angle deviation of every node with an ac terminal.
    fn thetas(&self, x: &DVector<f64>) -> HashMap<usize, f64> {
        let l = &self.layout;
        let mut th = HashMap::new();
        for (i, &m) in self.machines.iter().enumerate() {
            th.insert(m, x[l.theta(i)]);
        }
        for (i, &c) in self.converters.iter().enumerate() {
            let vslot = self
                .dc_side
                .iter()
                .position(|&d| d == c)
                .expect("converter on dc side");
            let v_delta = x[l.v(vslot)];
            th.insert(
                c,
                self.delta_theta[i] + self.k_p[i] * v_delta + self.k_omega[i] * x[l.gamma(i)],
            );
        }
        th
    }

    /// Deviation ac power injection per ac-side node: sine flows.
    fn ac_flows(&self, th: &HashMap<usize, f64>) -> HashMap<usize, f64> {
        let mut p = HashMap::new();
        for e in self.graph.ac_edges() {
            let d = th[&e.a] - th[&e.b];
            let f = e.weight * d.sin();
            *p.entry(e.a).or_insert(0.0) += f;
            *p.entry(e.b).or_insert(0.0) -= f;
        }
        p
    }

    /// Deviation dc power injection per dc-side node: quadratic flows around
    /// the voltage setpoints.
    fn dc_flows(&self, x: &DVector<f64>) -> HashMap<usize, f64> {
        let l = &self.layout;
        let slot = |n: usize| self.dc_side.iter().position(|&d| d == n).unwrap();
        let mut p = HashMap::new();
        for e in self.graph.dc_edges() {
            let (sa, sb) = (slot(e.a), slot(e.b));
            let (va0, vb0) = (self.v_star[sa], self.v_star[sb]);
            let (va, vb) = (va0 + x[l.v(sa)], vb0 + x[l.v(sb)]);
            let fa = e.weight * (va * (va - vb) - va0 * (va0 - vb0));
            let fb = e.weight * (vb * (vb - va) - vb0 * (vb0 - va0));
            *p.entry(e.a).or_insert(0.0) += fa;
            *p.entry(e.b).or_insert(0.0) += fb;
        }
        p
    }

    /// Deviation power of the source on a dc bus evaluated on its curve.
    fn dc_source_power(&self, node: usize, v_delta: f64) -> Result<f64, SimError> {
        let id = self.graph.node_id(node);
        let dev = self.devices.dc_bus(id).unwrap();
        match &dev.source {
            DcSource::Pv(pv) => {
                let p1 = pv_power(pv.v_op + v_delta, &pv.params)
                    .map_err(|e| SimError::Device(e.to_string()))?;
                Ok(p1 - pv.p_star)
            }
            _ => Ok(0.0),
        }
    }

    fn rhs(
        &self,
        x: &DVector<f64>,
        p_ac_load: &HashMap<usize, f64>,
        p_dc_load: &HashMap<usize, f64>,
    ) -> Result<DVector<f64>, SimError> {
        let l = &self.layout;
        let th = self.thetas(x);
        let ac = self.ac_flows(&th);
        let dc = self.dc_flows(x);
        let mut dx = DVector::zeros(l.n());

        // machine power injections
        let mut p_mech = vec![0.0; l.n_mach];
        for (gi, gs) in self.gov_states.iter().enumerate() {
            if gs.ac_side {
                p_mech[gs.slot] += x[l.gov(gi)];
            }
        }
        for (wi, (slot, wt)) in self.wts.iter().enumerate() {
            let beta_delta = match self.wt_beta_slot[wi] {
                usize::MAX => 0.0,
                b => x[l.beta(b)],
            };
            let omega = wt.omega_star + x[l.omega(*slot)];
            let p = wt_power(omega, (wt.beta_star + beta_delta).max(0.0), &wt.params)
                .map_err(|e| SimError::Device(e.to_string()))?;
            p_mech[*slot] += p - wt.p_star;
        }

        for (i, &m) in self.machines.iter().enumerate() {
            dx[l.theta(i)] = x[l.omega(i)];
            let p_ac =
                ac.get(&m).copied().unwrap_or(0.0) + p_ac_load.get(&m).copied().unwrap_or(0.0);
            dx[l.omega(i)] = (p_mech[i] - p_ac) / self.swing[i];
        }

        // dc buses
        let mut p_src = vec![0.0; l.n_v];
        for (gi, gs) in self.gov_states.iter().enumerate() {
            if !gs.ac_side {
                p_src[gs.slot] += x[l.gov(gi)];
            }
        }
        for (slot, &d) in self.dc_side.iter().enumerate() {
            p_src[slot] += self.dc_source_power(d, x[l.v(slot)])?;
        }
        for (slot, &d) in self.dc_side.iter().enumerate() {
            let p_dc =
                dc.get(&d).copied().unwrap_or(0.0) + p_dc_load.get(&d).copied().unwrap_or(0.0);
            let p_ac = if self.graph.kind(d) == NodeKind::Converter {
                ac.get(&d).copied().unwrap_or(0.0) + p_ac_load.get(&d).copied().unwrap_or(0.0)
            } else {
                0.0
            };
            dx[l.v(slot)] = (p_src[slot] - p_ac - p_dc) / self.cap[slot];
        }

        // PI integrators
        for (i, &c) in self.converters.iter().enumerate() {
            let vslot = self.dc_side.iter().position(|&d| d == c).unwrap();
            dx[l.gamma(i)] = x[l.v(vslot)];
        }

        // governor / dc source states
        for (gi, gs) in self.gov_states.iter().enumerate() {
            let drive = if gs.ac_side {
                x[l.omega(gs.slot)]
            } else {
                x[l.v(gs.slot)]
            };
            dx[l.gov(gi)] = (-x[l.gov(gi)] - gs.k_g * drive) / gs.t_g;
        }

        // pitch dynamics driven by proportional speed control
        for (wi, (slot, wt)) in self.wts.iter().enumerate() {
            let b = self.wt_beta_slot[wi];
            if b != usize::MAX {
                dx[l.beta(b)] = (-x[l.beta(b)] - wt.k_bp * x[l.omega(*slot)]) / wt.t_g;
            }
        }
        Ok(dx)
    }

    fn labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for &m in &self.machines {
            out.push(format!("theta:{}", self.graph.node_id(m)));
        }
        for &m in &self.machines {
            out.push(format!("omega:{}", self.graph.node_id(m)));
        }
        for &d in &self.dc_side {
            out.push(format!("v:{}", self.graph.node_id(d)));
        }
        for &c in &self.converters {
            out.push(format!("gamma:{}", self.graph.node_id(c)));
        }
        for gs in &self.gov_states {
            let id = if gs.ac_side {
                self.graph.node_id(self.machines[gs.slot])
            } else {
                self.graph.node_id(self.dc_side[gs.slot])
            };
            out.push(format!("psrc:{id}"));
        }
        for (wi, (slot, _)) in self.wts.iter().enumerate() {
            if self.wt_beta_slot[wi] != usize::MAX {
                out.push(format!("beta:{}", self.graph.node_id(self.machines[*slot])));
            }
        }
        out
    }

    /// Converter frequencies: differentiate the PI phase along the dynamics.
    fn converter_freqs(&self, _x: &DVector<f64>, dx: &DVector<f64>) -> Vec<f64> {
        let l = &self.layout;
        self.converters
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let vslot = self.dc_side.iter().position(|&d| d == c).unwrap();
                self.k_p[i] * dx[l.v(vslot)] + self.k_omega[i] * dx[l.gamma(i)]
            })
            .collect()
    }
}

/// Solve the nonlinear steady equations near the origin by damped
/// Gauss-Newton (least-squares handles the per-area angle gauge freedom).
fn newton_equilibrium(
    model: &NlModel,
    events0: (&HashMap<usize, f64>, &HashMap<usize, f64>),
) -> Result<DVector<f64>, SimError> {
    let n = model.layout.n();
    let mut x = DVector::zeros(n);
    let f0 = model.rhs(&x, events0.0, events0.1)?;
    if f0.amax() < 1e-12 {
        return Ok(x);
    }
    for _ in 0..100 {
        let f = model.rhs(&x, events0.0, events0.1)?;
        if f.amax() < 1e-11 {
            return Ok(x);
        }
        // numeric Jacobian
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-7 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += h;
            let fp = model.rhs(&xp, events0.0, events0.1)?;
            for i in 0..n {
                jac[(i, j)] = (fp[i] - f[i]) / h;
            }
        }
        // Levenberg step
        let jt = jac.transpose();
        let lhs: DMatrix<f64> = &jt * &jac + DMatrix::identity(n, n) * 1e-9;
        let rhs: DVector<f64> = -(&jt * &f);
        let step = lhs.lu().solve(&rhs).ok_or_else(|| {
            SimError::InitializationFailed("singular normal equations".to_string())
        })?;
        let mut lambda = 1.0;
        let base = f.norm();
        loop {
            let cand = &x + &step * lambda;
            let fc = model.rhs(&cand, events0.0, events0.1)?;
            if fc.norm() < base || lambda < 1e-6 {
                x = cand;
                break;
            }
            lambda *= 0.5;
        }
    }
    let f = model.rhs(&x, events0.0, events0.1)?;
    if f.amax() < 1e-9 {
        Ok(x)
    } else {
        Err(SimError::InitializationFailed(format!(
            "residual {} after damped Newton",
            f.amax()
        )))
    }
}

/// Integrate the nonlinear closed loop with the derivative-free PI control.
/// Starts from the solved operating point, then applies the event schedule.
pub fn simulate_nonlinear(
    graph: &SystemGraph,
    devices: &DeviceSet,
    gains: &GainSet,
    events: &[DisturbanceEvent],
    h: f64,
    t_end: f64,
) -> Result<Trajectory, SimError> {
    simulate_nonlinear_with_offsets(graph, devices, gains, events, h, t_end, &HashMap::new())
}

/// As [`simulate_nonlinear`], with constant per-converter phase offsets
/// standing in for the missing global angle reference.
pub fn simulate_nonlinear_with_offsets(
    graph: &SystemGraph,
    devices: &DeviceSet,
    gains: &GainSet,
    events: &[DisturbanceEvent],
    h: f64,
    t_end: f64,
    delta_theta: &HashMap<NodeId, f64>,
) -> Result<Trajectory, SimError> {
    if h <= 0.0 {
        return Err(SimError::BadStep);
    }
    let model = NlModel::new(graph, devices, gains, delta_theta)?;

    // per-node load accumulators as a function of time
    let mut sorted = events.to_vec();
    sorted.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    type Loads = (HashMap<usize, f64>, HashMap<usize, f64>);
    let loads_at = |t: f64| -> Result<Loads, SimError> {
        let mut ac: HashMap<usize, f64> = HashMap::new();
        let mut dc: HashMap<usize, f64> = HashMap::new();
        for ev in &sorted {
            if ev.time > t {
                break;
            }
            let idx = graph.node_index(&ev.node).ok_or_else(|| {
                SimError::Assembly(crate::assembly::AssemblyError::NoSuchTerminal {
                    node: ev.node.clone(),
                    terminal: "unknown node",
                })
            })?;
            match ev.terminal {
                Terminal::Ac => *ac.entry(idx).or_insert(0.0) += ev.delta_p,
                Terminal::Dc => *dc.entry(idx).or_insert(0.0) += ev.delta_p,
            }
        }
        Ok((ac, dc))
    };

    let (ac0, dc0) = loads_at(-f64::EPSILON)?;
    let x0 = newton_equilibrium(&model, (&ac0, &dc0))?;

    let steps = (t_end / h).round() as usize;
    let n = model.layout.n();
    let freq_labels: Vec<String> = model
        .converters
        .iter()
        .map(|&c| format!("fconv:{}", graph.node_id(c)))
        .collect();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * n);
    let mut freqs = Vec::with_capacity((steps + 1) * freq_labels.len());

    let mut x = x0;
    for k in 0..=steps {
        let t = k as f64 * h;
        let (ac, dc) = loads_at(t)?;
        let dx = model.rhs(&x, &ac, &dc)?;
        times.push(t);
        states.extend(x.iter());
        freqs.extend(model.converter_freqs(&x, &dx));
        if k < steps {
            let k1 = dx;
            let k2 = model.rhs(&(&x + 0.5 * h * &k1), &ac, &dc)?;
            let k3 = model.rhs(&(&x + 0.5 * h * &k2), &ac, &dc)?;
            let k4 = model.rhs(&(&x + h * &k3), &ac, &dc)?;
            x = &x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !x.iter().all(|v| v.is_finite()) {
                return Err(SimError::NonFiniteState((k + 1) as f64 * h));
            }
        }
    }

    Ok(Trajectory {
        times,
        state_labels: model.labels(),
        states,
        freq_labels,
        converter_freqs: freqs,
        step: h,
    })
}

// ---------------------------------------------------------------------------
// Frequency metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMetrics {
    pub rocof: f64,
    pub nadir: f64,
    pub settling: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FreqMetrics {
    pub per_channel: Vec<(String, NodeMetrics)>,
}

/// Sliding-window rate of change of frequency, nadir, and the mean of the
/// final 5 % of samples, per monitored channel. The default window is 300 ms.
pub fn metrics(
    traj: &Trajectory,
    channels: &[String],
    window: f64,
) -> Result<FreqMetrics, SimError> {
    let span = traj.times.last().copied().unwrap_or(0.0);
    if window > span {
        return Err(SimError::WindowTooLong { window, span });
    }
    let w_steps = (window / traj.step).round() as usize;
    let mut per_channel = Vec::new();
    for ch in channels {
        let series = traj.channel(ch)?;
        let n = series.len();
        let mut rocof: f64 = 0.0;
        if w_steps >= 1 {
            for i in 0..n.saturating_sub(w_steps) {
                let rate = (series[i + w_steps] - series[i]).abs() / (w_steps as f64 * traj.step);
                rocof = rocof.max(rate);
            }
        }
        let nadir = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let tail = (n as f64 * 0.05).ceil().max(1.0) as usize;
        let settling = series[n - tail..].iter().sum::<f64>() / tail as f64;
        per_channel.push((
            ch.clone(),
            NodeMetrics {
                rocof,
                nadir,
                settling,
            },
        ));
    }
    Ok(FreqMetrics { per_channel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlGains;
    use crate::devices::{
        DcBusDevice, DcBusParams, FirstOrderSource, MachineDevice, MachineParams, MachineSource,
    };
    use crate::network::{build_graph, NetworkDescription};
    use approx::assert_abs_diff_eq;

    fn two_bus() -> (SystemGraph, DeviceSet, GainSet) {
        let graph = build_graph(&NetworkDescription {
            nodes: vec![
                ("sg".into(), NodeKind::Machine),
                ("vsc".into(), NodeKind::Converter),
                ("dcn".into(), NodeKind::DcNode),
            ],
            ac_edges: vec![("sg".into(), "vsc".into(), 8.0)],
            dc_edges: vec![("vsc".into(), "dcn".into(), 20.0)],
        })
        .unwrap();
        let mut devices = DeviceSet::default();
        devices.machines.insert(
            "sg".into(),
            MachineDevice {
                params: MachineParams {
                    inertia: 8.0,
                    omega_star: 1.0,
                },
                source: MachineSource::Governor(FirstOrderSource {
                    t_g: 1.0,
                    k_g: 20.0,
                }),
            },
        );
        devices.dc_buses.insert(
            "vsc".into(),
            DcBusDevice {
                params: DcBusParams {
                    capacitance: 0.2,
                    v_star: 1.0,
                },
                source: DcSource::None,
                direct_feed: false,
            },
        );
        devices.dc_buses.insert(
            "dcn".into(),
            DcBusDevice {
                params: DcBusParams {
                    capacitance: 0.1,
                    v_star: 1.0,
                },
                source: DcSource::Controllable(FirstOrderSource { t_g: 0.5, k_g: 4.0 }),
                direct_feed: false,
            },
        );
        let mut gains = GainSet::default();
        gains.by_node.insert(
            "vsc".into(),
            ControlGains {
                k_p: 0.002,
                k_omega: 0.2,
                m_p: None,
            },
        );
        (graph, devices, gains)
    }

    #[test]
    fn zero_input_stays_at_origin() {
        let (graph, devices, gains) = two_bus();
        let ss = crate::assembly::assemble_system(&graph, &devices, &gains).unwrap();
        let schedule = Schedule::constant(ss.zero_disturbance());
        let x0 = DVector::zeros(ss.dims.n());
        let traj = simulate_linear(&ss, &schedule, &x0, 1e-3, 1.0).unwrap();
        assert!(traj.states.iter().all(|&v| v == 0.0));
        assert!(traj.converter_freqs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_settles_to_the_algebraic_steady_state() {
        let (graph, devices, gains) = two_bus();
        let ss = crate::assembly::assemble_system(&graph, &devices, &gains).unwrap();
        let p_d =
            crate::assembly::disturbance_vector(&ss, &[("sg".into(), Terminal::Ac, 0.05)]).unwrap();
        let x_ss = crate::analysis::steady_state(&ss, &p_d).unwrap();
        let schedule = Schedule::constant(p_d);
        let x0 = DVector::zeros(ss.dims.n());
        let traj = simulate_linear(&ss, &schedule, &x0, 1e-3, 60.0).unwrap();
        let err = (traj.last_state() - x_ss).amax();
        assert!(err < 1e-6, "end-state error {err}");
    }

    #[test]
    fn step_halving_shows_fourth_order() {
        let (graph, devices, gains) = two_bus();
        let ss = crate::assembly::assemble_system(&graph, &devices, &gains).unwrap();
        let p_d =
            crate::assembly::disturbance_vector(&ss, &[("sg".into(), Terminal::Ac, 0.05)]).unwrap();
        let schedule = Schedule::constant(p_d.clone());
        let x0 = DVector::from_fn(ss.dims.n(), |i, _| 0.01 * (i as f64 + 1.0));
        // reference at a very small step
        let reference = simulate_linear(&ss, &schedule, &x0, 1.25e-4, 1.0)
            .unwrap()
            .last_state();
        let e1 = (simulate_linear(&ss, &schedule, &x0, 2e-3, 1.0)
            .unwrap()
            .last_state()
            - &reference)
            .amax();
        let e2 = (simulate_linear(&ss, &schedule, &x0, 1e-3, 1.0)
            .unwrap()
            .last_state()
            - &reference)
            .amax();
        let ratio = e1 / e2;
        assert!(
            (8.0..40.0).contains(&ratio),
            "halving the step should shrink the error ~16x, got {ratio} ({e1} -> {e2})"
        );
    }

    #[test]
    fn lasalle_function_decays_along_trajectories() {
        let (graph, devices, gains) = two_bus();
        let ss = crate::assembly::assemble_system(&graph, &devices, &gains).unwrap();
        let decomp = crate::network::decompose_subnetworks(&graph);
        let m_diag = crate::analysis::lasalle_weight(&ss, &graph, &decomp, &gains).unwrap();
        let n_res = ss.dims.n() - ss.dims.n_zs;
        let schedule = Schedule::constant(ss.zero_disturbance());
        let x0 = DVector::from_fn(ss.dims.n(), |i, _| {
            if i < n_res {
                0.02 * ((i * 7 + 3) as f64).sin()
            } else {
                0.0
            }
        });
        let traj = simulate_linear(&ss, &schedule, &x0, 1e-3, 5.0).unwrap();
        let mut prev = f64::INFINITY;
        for r in 0..traj.n_steps() {
            let v: f64 = (0..n_res)
                .map(|c| m_diag[c] * traj.state(r, c) * traj.state(r, c))
                .sum();
            assert!(v <= prev + 1e-12, "V increased at step {r}");
            prev = v;
        }
    }

    #[test]
    fn nonlinear_holds_equilibrium_without_disturbance() {
        let (graph, devices, gains) = two_bus();
        let traj = simulate_nonlinear(&graph, &devices, &gains, &[], 1e-3, 1.0).unwrap();
        for r in 0..traj.n_steps() {
            for c in 0..traj.state_labels.len() {
                assert!(traj.state(r, c).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn nonlinear_matches_linear_for_small_steps() {
        let (graph, devices, gains) = two_bus();
        let ss = crate::assembly::assemble_system(&graph, &devices, &gains).unwrap();
        let deviation = |eps: f64| -> f64 {
            let events = vec![DisturbanceEvent {
                time: 0.1,
                node: "sg".into(),
                terminal: Terminal::Ac,
                delta_p: eps,
            }];
            let nl = simulate_nonlinear(&graph, &devices, &gains, &events, 1e-3, 4.0).unwrap();
            let schedule = Schedule::from_events(&ss, &events).unwrap();
            let lin =
                simulate_linear(&ss, &schedule, &DVector::zeros(ss.dims.n()), 1e-3, 4.0).unwrap();
            let mut worst: f64 = 0.0;
            for ch in ["omega:sg", "v:vsc", "v:dcn"] {
                let a = nl.channel(ch).unwrap();
                let b = lin.channel(ch).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    worst = worst.max((x - y).abs());
                }
            }
            worst
        };
        let d1 = deviation(1e-2);
        let d2 = deviation(1e-3);
        let ratio = d1 / d2;
        assert!(
            (50.0..200.0).contains(&ratio),
            "quadratic scaling of the linearization error: ratio {ratio} ({d1} vs {d2})"
        );
    }

    #[test]
    fn metrics_on_constant_and_ramp() {
        let n = 1001;
        let h = 1e-3;
        let mk = |f: &dyn Fn(f64) -> f64| Trajectory {
            times: (0..n).map(|i| i as f64 * h).collect(),
            state_labels: vec!["omega:x".into()],
            states: (0..n).map(|i| f(i as f64 * h)).collect(),
            freq_labels: vec![],
            converter_freqs: vec![],
            step: h,
        };
        let flat = mk(&|_| 0.7);
        let m = metrics(&flat, &["omega:x".into()], 0.3).unwrap();
        assert_abs_diff_eq!(m.per_channel[0].1.rocof, 0.0);
        assert_abs_diff_eq!(m.per_channel[0].1.nadir, 0.7);
        assert_abs_diff_eq!(m.per_channel[0].1.settling, 0.7, epsilon = 1e-12);

        let a = 0.4;
        let ramp = mk(&|t| -a * t);
        let m = metrics(&ramp, &["omega:x".into()], 0.3).unwrap();
        assert_abs_diff_eq!(m.per_channel[0].1.rocof, a, epsilon = 1e-12);
        assert_abs_diff_eq!(
            m.per_channel[0].1.nadir,
            -a * (n - 1) as f64 * h,
            epsilon = 1e-12
        );

        assert!(matches!(
            metrics(&flat, &["omega:x".into()], 10.0),
            Err(SimError::WindowTooLong { .. })
        ));
    }

    #[test]
    fn nadir_matches_exhaustive_scan() {
        let (graph, devices, gains) = two_bus();
        let ss = crate::assembly::assemble_system(&graph, &devices, &gains).unwrap();
        let p_d =
            crate::assembly::disturbance_vector(&ss, &[("sg".into(), Terminal::Ac, 0.05)]).unwrap();
        let traj = simulate_linear(
            &ss,
            &Schedule::constant(p_d),
            &DVector::zeros(ss.dims.n()),
            1e-3,
            10.0,
        )
        .unwrap();
        let m = metrics(&traj, &["omega:sg".into()], 0.3).unwrap();
        let series = traj.channel("omega:sg").unwrap();
        let brute = series.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(m.per_channel[0].1.nadir, brute);
    }
}
