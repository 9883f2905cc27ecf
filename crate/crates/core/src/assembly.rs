//! Assembly of the linearized closed-loop system
//! `T dx/dt = A x + B P_d` over the state `x = (eta, omega, v, P_r, P_zs)`.
//!
//! `eta` are ac phase-angle differences per edge, `omega` machine speeds,
//! `v` converter and dc-bus voltages, `P_r`/`P_zs` powers of sources with and
//! without sensitivity. Converter frequencies are outputs of the control law,
//! not states; `converter_frequencies` recovers them from the state derivative.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::control::GainSet;
use crate::devices::{classify_nodes, DeviceSet};
use crate::network::{
    network_matrices, DeviceClassification, NetworkError, NetworkMatrices, NodeId, SystemGraph,
};

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error("converter `{0}` has no control gains")]
    MissingGains(NodeId),
    #[error("node `{0}` has no device parameters")]
    MissingDevice(NodeId),
    #[error("block `{0}` has inconsistent dimensions")]
    DimensionMismatch(&'static str),
    #[error("node `{node}` has no {terminal} terminal")]
    NoSuchTerminal {
        node: NodeId,
        terminal: &'static str,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Which terminal of a node a load disturbance acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    Ac,
    Dc,
}

/// Names backing every state and disturbance entry, in order.
#[derive(Debug, Clone, Default)]
pub struct StateOrdering {
    pub eta_edges: Vec<(NodeId, NodeId)>,
    pub omega_nodes: Vec<NodeId>,
    pub v_nodes: Vec<NodeId>,
    pub p_r_nodes: Vec<NodeId>,
    pub p_zs_nodes: Vec<NodeId>,
    /// ac-terminal disturbance slots (machines and converters).
    pub ac_terminals: Vec<NodeId>,
    /// dc-terminal disturbance slots (converters and dc buses).
    pub dc_terminals: Vec<NodeId>,
}

impl StateOrdering {
    pub fn state_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (a, b) in &self.eta_edges {
            out.push(format!("eta:{a}-{b}"));
        }
        for n in &self.omega_nodes {
            out.push(format!("omega:{n}"));
        }
        for n in &self.v_nodes {
            out.push(format!("v:{n}"));
        }
        for n in &self.p_r_nodes {
            out.push(format!("pr:{n}"));
        }
        for n in &self.p_zs_nodes {
            out.push(format!("pzs:{n}"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateDims {
    pub n_eta: usize,
    pub n_omega: usize,
    pub n_v: usize,
    pub n_r: usize,
    pub n_zs: usize,
    pub n_d: usize,
}

impl StateDims {
    pub fn n(&self) -> usize {
        self.n_eta + self.n_omega + self.n_v + self.n_r + self.n_zs
    }
    pub fn eta_range(&self) -> std::ops::Range<usize> {
        0..self.n_eta
    }
    pub fn omega_range(&self) -> std::ops::Range<usize> {
        self.n_eta..self.n_eta + self.n_omega
    }
    pub fn v_range(&self) -> std::ops::Range<usize> {
        let s = self.n_eta + self.n_omega;
        s..s + self.n_v
    }
    pub fn p_r_range(&self) -> std::ops::Range<usize> {
        let s = self.n_eta + self.n_omega + self.n_v;
        s..s + self.n_r
    }
    pub fn p_zs_range(&self) -> std::ops::Range<usize> {
        let s = self.n_eta + self.n_omega + self.n_v + self.n_r;
        s..s + self.n_zs
    }
}

/// The assembled closed-loop model plus everything needed to interpret it.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub t: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    t_inv_diag: DVector<f64>,
    pub dims: StateDims,
    pub ordering: StateOrdering,
    pub net: NetworkMatrices,
    pub class: DeviceClassification,
    /// Per-converter gains, converter order.
    pub k_p: DVector<f64>,
    pub k_omega: DVector<f64>,
    /// Diagonals of the T blocks, state order.
    pub w_ac_diag: DVector<f64>,
    pub j_diag: DVector<f64>,
    pub c_diag: DVector<f64>,
    pub t_r_diag: DVector<f64>,
    pub t_zs_diag: DVector<f64>,
    pub k_g_diag: DVector<f64>,
}

impl StateSpace {
    /// `dx/dt = T^-1 (A x + B P_d)`.
    pub fn xdot(&self, x: &DVector<f64>, p_d: &DVector<f64>) -> DVector<f64> {
        let mut rhs = &self.a * x;
        if !p_d.is_empty() {
            rhs += &self.b * p_d;
        }
        rhs.component_mul(&self.t_inv_diag)
    }

    /// Frequencies imposed by the converter controls, converter order:
    /// `omega_c = K_p dv_c/dt + K_omega v_c`.
    pub fn converter_frequencies(&self, x: &DVector<f64>, p_d: &DVector<f64>) -> DVector<f64> {
        let xdot = self.xdot(x, p_d);
        let vdot = xdot
            .rows(self.dims.v_range().start, self.dims.n_v)
            .into_owned();
        let v = x
            .rows(self.dims.v_range().start, self.dims.n_v)
            .into_owned();
        let vc_dot = &self.net.i_cdc * vdot;
        let vc = &self.net.i_cdc * v;
        DVector::from_fn(self.k_p.len(), |i, _| {
            self.k_p[i] * vc_dot[i] + self.k_omega[i] * vc[i]
        })
    }

    /// Zero-length disturbance vector of the right dimension.
    pub fn zero_disturbance(&self) -> DVector<f64> {
        DVector::zeros(self.dims.n_d)
    }

    /// Dense row-major text dump of T, A, B with the state ordering named in
    /// the header, for external verification.
    pub fn dump_matrices(&self) -> String {
        let mut out = String::new();
        out.push_str("# state ordering: ");
        out.push_str(&self.ordering.state_labels().join(" "));
        out.push('\n');
        out.push_str("# disturbance ordering: ");
        for n in &self.ordering.ac_terminals {
            out.push_str(&format!("ac:{n} "));
        }
        for n in &self.ordering.dc_terminals {
            out.push_str(&format!("dc:{n} "));
        }
        out.push('\n');
        for (name, m) in [("T", &self.t), ("A", &self.a), ("B", &self.b)] {
            out.push_str(&format!("# {name} {} {}\n", m.nrows(), m.ncols()));
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols())
                    .map(|j| format!("{:.17e}", m[(i, j)]))
                    .collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }
}

fn block_assign(dst: &mut DMatrix<f64>, r0: usize, c0: usize, src: &DMatrix<f64>) {
    for i in 0..src.nrows() {
        for j in 0..src.ncols() {
            dst[(r0 + i, c0 + j)] = src[(i, j)];
        }
    }
}

/// Build the closed-loop (T, A, B) from a validated graph, its devices, and
/// the converter gains.
pub fn assemble_system(
    graph: &SystemGraph,
    devices: &DeviceSet,
    gains: &GainSet,
) -> Result<StateSpace, AssemblyError> {
    let class = classify_nodes(devices);
    let net = network_matrices(graph, &class)?;

    let conv_ids: Vec<NodeId> = net
        .converter_order
        .iter()
        .map(|&i| graph.node_id(i).to_string())
        .collect();
    let mut k_p = DVector::zeros(conv_ids.len());
    let mut k_omega = DVector::zeros(conv_ids.len());
    for (i, id) in conv_ids.iter().enumerate() {
        let g = gains
            .get(id)
            .ok_or_else(|| AssemblyError::MissingGains(id.clone()))?;
        k_p[i] = g.k_p;
        k_omega[i] = g.k_omega;
    }

    let j_diag = DVector::from_iterator(
        net.machine_order.len(),
        net.machine_order
            .iter()
            .map(|&i| {
                let id = graph.node_id(i);
                devices
                    .machine(id)
                    .map(|m| m.params.swing_coefficient())
                    .ok_or_else(|| AssemblyError::MissingDevice(id.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?,
    );
    let c_diag = DVector::from_iterator(
        net.dc_side_order.len(),
        net.dc_side_order
            .iter()
            .map(|&i| {
                let id = graph.node_id(i);
                devices
                    .dc_bus(id)
                    .map(|d| d.params.scaled_capacitance())
                    .ok_or_else(|| AssemblyError::MissingDevice(id.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?,
    );
    for &i in &net.dc_node_order {
        // converters may be fed directly; dc buses always carry their device
        let id = graph.node_id(i);
        if devices.dc_bus(id).is_none() {
            return Err(AssemblyError::MissingDevice(id.to_string()));
        }
    }
    let t_r_diag = DVector::from_iterator(
        class.r_sources.len(),
        class.r_sources.iter().map(|(_, _, t_g)| *t_g),
    );
    let t_zs_diag = DVector::from_iterator(
        class.zs_sources.len(),
        class.zs_sources.iter().map(|(_, t)| *t),
    );
    let k_g_diag = DVector::from_iterator(
        class.r_sources.len(),
        class.r_sources.iter().map(|(_, k_g, _)| *k_g),
    );
    let k_w_diag = DVector::from_iterator(
        class.wt_machines.len(),
        class.wt_machines.iter().map(|(_, k)| *k),
    );
    let k_pv_diag =
        DVector::from_iterator(class.pv_nodes.len(), class.pv_nodes.iter().map(|(_, k)| *k));

    let dims = StateDims {
        n_eta: graph.ac_edges().len(),
        n_omega: net.machine_order.len(),
        n_v: net.dc_side_order.len(),
        n_r: class.r_sources.len(),
        n_zs: class.zs_sources.len(),
        n_d: net.ac_side_order.len() + net.dc_side_order.len(),
    };
    let n = dims.n();

    // T = blkdiag{ I, J, C, T_r, T_zs }; the first block spans the edge
    // coordinate, which is what the eta rows act on.
    let mut t_diag = DVector::zeros(n);
    let w_ac_diag = net.w_ac.diagonal();
    for i in dims.eta_range() {
        t_diag[i] = 1.0;
    }
    for (k, i) in dims.omega_range().enumerate() {
        t_diag[i] = j_diag[k];
    }
    for (k, i) in dims.v_range().enumerate() {
        t_diag[i] = c_diag[k];
    }
    for (k, i) in dims.p_r_range().enumerate() {
        t_diag[i] = t_r_diag[k];
    }
    for (k, i) in dims.p_zs_range().enumerate() {
        t_diag[i] = t_zs_diag[k];
    }
    if t_diag.iter().any(|&d| d <= 0.0 || !d.is_finite()) {
        return Err(AssemblyError::DimensionMismatch(
            "T diagonal must be positive",
        ));
    }

    // building blocks
    let cac_b = &net.i_cac * &net.b_ac; // |Nc| x |E_ac|
    let ac_b = &net.i_ac * &net.b_ac; // |Nac| x |E_ac|
    let kp_m = DMatrix::from_diagonal(&k_p);
    let komega_m = DMatrix::from_diagonal(&k_omega);
    let c_inv = DMatrix::from_diagonal(&c_diag.map(|c| 1.0 / c));
    // B_eta = -(I_cac B_ac)^T K_p I_cdc C^-1, |E_ac| x |Nv|
    let b_eta = -(cac_b.transpose() * &kp_m * &net.i_cdc * &c_inv);

    if b_eta.nrows() != dims.n_eta || b_eta.ncols() != dims.n_v {
        return Err(AssemblyError::DimensionMismatch("B_eta"));
    }

    let mut a = DMatrix::zeros(n, n);
    let e0 = dims.eta_range().start;
    let o0 = dims.omega_range().start;
    let v0 = dims.v_range().start;
    let r0 = dims.p_r_range().start;
    let z0 = dims.p_zs_range().start;

    // omega rows: swing equations with speed-curtailed turbines damping them.
    block_assign(&mut a, o0, e0, &(-(&ac_b * &net.w_ac)));
    block_assign(
        &mut a,
        o0,
        o0,
        &(-(net.i_w.transpose() * DMatrix::from_diagonal(&k_w_diag) * &net.i_w)),
    );
    block_assign(&mut a, o0, r0, &net.i_r_ac.transpose());
    block_assign(&mut a, o0, z0, &net.i_zs_ac.transpose());

    // v rows: dc charge dynamics; curtailed PV acts as a shunt conductance.
    block_assign(
        &mut a,
        v0,
        e0,
        &(-(net.i_cdc.transpose() * &cac_b * &net.w_ac)),
    );
    block_assign(
        &mut a,
        v0,
        v0,
        &(-&net.l_dc - net.i_pv.transpose() * DMatrix::from_diagonal(&k_pv_diag) * &net.i_pv),
    );
    block_assign(&mut a, v0, r0, &net.i_r_dc.transpose());
    block_assign(&mut a, v0, z0, &net.i_zs_dc.transpose());

    // P_r rows: first-order sources reacting to speed or dc voltage.
    let kg_m = DMatrix::from_diagonal(&k_g_diag);
    block_assign(&mut a, r0, o0, &(-(&kg_m * &net.i_r_ac)));
    block_assign(&mut a, r0, v0, &(-(&kg_m * &net.i_r_dc)));
    for k in 0..dims.n_r {
        a[(r0 + k, r0 + k)] = -1.0;
    }
    // P_zs rows: decoupled decay.
    for k in 0..dims.n_zs {
        a[(z0 + k, z0 + k)] = -1.0;
    }

    // disturbance map, columns (ac terminals | dc terminals)
    let n_ac_t = net.ac_side_order.len();
    let mut b = DMatrix::zeros(n, dims.n_d);
    block_assign(&mut b, o0, 0, &(-net.i_ac.clone()));
    block_assign(&mut b, v0, 0, &(-(net.i_cdc.transpose() * &net.i_cac)));
    for k in 0..dims.n_v {
        b[(v0 + k, n_ac_t + k)] = -1.0;
    }

    // eta rows, synthesized from the finished v rows: the edge coordinate
    // differentiates machine angles (speed states) and converter angles,
    // whose derivative feedback K_p dv/dt pulls in the entire converter
    // charge dynamics -- network flows, shunts, direct-fed sources, and the
    // loads hitting the converter. With sources confined to dc buses this
    // collapses to the usual B_eta blocks.
    let chain = cac_b.transpose() * &kp_m * &net.i_cdc * &c_inv; // = -B_eta
    let a_eta = &chain * a.rows(v0, dims.n_v) + {
        let mut base = DMatrix::zeros(dims.n_eta, n);
        block_assign(&mut base, 0, o0, &ac_b.transpose());
        block_assign(
            &mut base,
            0,
            v0,
            &(cac_b.transpose() * &komega_m * &net.i_cdc),
        );
        base
    };
    block_assign(&mut a, e0, 0, &a_eta);
    let b_eta_rows = &chain * b.rows(v0, dims.n_v);
    block_assign(&mut b, e0, 0, &b_eta_rows);

    let ordering = StateOrdering {
        eta_edges: graph
            .ac_edges()
            .iter()
            .map(|e| {
                (
                    graph.node_id(e.a).to_string(),
                    graph.node_id(e.b).to_string(),
                )
            })
            .collect(),
        omega_nodes: net
            .machine_order
            .iter()
            .map(|&i| graph.node_id(i).to_string())
            .collect(),
        v_nodes: net
            .dc_side_order
            .iter()
            .map(|&i| graph.node_id(i).to_string())
            .collect(),
        p_r_nodes: class
            .r_sources
            .iter()
            .map(|(id, _, _)| id.clone())
            .collect(),
        p_zs_nodes: class.zs_sources.iter().map(|(id, _)| id.clone()).collect(),
        ac_terminals: net
            .ac_side_order
            .iter()
            .map(|&i| graph.node_id(i).to_string())
            .collect(),
        dc_terminals: net
            .dc_side_order
            .iter()
            .map(|&i| graph.node_id(i).to_string())
            .collect(),
    };

    Ok(StateSpace {
        t: DMatrix::from_diagonal(&t_diag),
        a,
        b,
        t_inv_diag: t_diag.map(|d| 1.0 / d),
        dims,
        ordering,
        net,
        class,
        k_p,
        k_omega,
        w_ac_diag: w_ac_diag.clone_owned(),
        j_diag,
        c_diag,
        t_r_diag,
        t_zs_diag,
        k_g_diag,
    })
}

/// Stack load deviations into the disturbance vector `P_d`, ordered ac
/// terminals then dc terminals.
pub fn disturbance_vector(
    ss: &StateSpace,
    loads: &[(NodeId, Terminal, f64)],
) -> Result<DVector<f64>, AssemblyError> {
    let mut p_d = ss.zero_disturbance();
    let n_ac = ss.ordering.ac_terminals.len();
    for (node, terminal, dp) in loads {
        let slot = match terminal {
            Terminal::Ac => ss.ordering.ac_terminals.iter().position(|n| n == node),
            Terminal::Dc => ss
                .ordering
                .dc_terminals
                .iter()
                .position(|n| n == node)
                .map(|k| n_ac + k),
        };
        let idx = slot.ok_or_else(|| AssemblyError::NoSuchTerminal {
            node: node.clone(),
            terminal: match terminal {
                Terminal::Ac => "ac",
                Terminal::Dc => "dc",
            },
        })?;
        p_d[idx] += dp;
    }
    Ok(p_d)
}

/// Node kind helper used by scenario validation.
pub fn terminal_exists(graph: &SystemGraph, node: usize, terminal: Terminal) -> bool {
    match terminal {
        Terminal::Ac => graph.kind(node).has_ac_terminal(),
        Terminal::Dc => graph.kind(node).has_dc_terminal(),
    }
}
