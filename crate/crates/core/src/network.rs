//! Hybrid ac/dc network graphs and the matrices derived from them.
//!
//! A system is an undirected graph with three node kinds: synchronous
//! machines, dc/ac converters, and dc buses. AC edges (susceptances) may
//! only touch machines and converters; dc edges (conductances) may only
//! touch dc buses and converters. Converters sit on both sides and stitch
//! the ac and dc subnetworks together.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::DMatrix;
use thiserror::Error;

pub type NodeId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Machine,
    Converter,
    DcNode,
}

impl NodeKind {
    pub fn has_ac_terminal(self) -> bool {
        matches!(self, NodeKind::Machine | NodeKind::Converter)
    }
    pub fn has_dc_terminal(self) -> bool {
        matches!(self, NodeKind::Converter | NodeKind::DcNode)
    }
}

/// Raw node/edge records before validation, as read from a scenario file.
#[derive(Debug, Clone, Default)]
pub struct NetworkDescription {
    pub nodes: Vec<(NodeId, NodeKind)>,
    /// (from, to, susceptance p.u.)
    pub ac_edges: Vec<(NodeId, NodeId, f64)>,
    /// (from, to, conductance p.u.)
    pub dc_edges: Vec<(NodeId, NodeId, f64)>,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("duplicate node id `{0}`")]
    DuplicateId(NodeId),
    #[error("edge endpoint `{0}` does not name a node")]
    DanglingEdge(NodeId),
    #[error("{kind} edge ({a}, {b}) touches a node without a {kind} terminal")]
    KindMismatch {
        kind: &'static str,
        a: NodeId,
        b: NodeId,
    },
    #[error("edge ({0}, {0}) is a self-loop")]
    SelfLoop(NodeId),
    #[error("edge ({a}, {b}) must have a strictly positive weight, got {w}")]
    NonPositiveWeight { a: NodeId, b: NodeId, w: f64 },
    #[error("the union ac/dc graph is not connected")]
    Disconnected,
    #[error("interior block of the Laplacian is singular; cannot eliminate")]
    SingularInteriorBlock,
    #[error("classified node `{0}` is absent from the graph or has the wrong kind")]
    ClassificationMismatch(NodeId),
}

/// One undirected weighted edge, endpoints stored as node indices with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Validated hybrid ac/dc system graph. Node order is lexicographic by id,
/// edge order lexicographic by (min id, max id); both are fixed so that every
/// derived matrix is reproducible across runs.
#[derive(Debug, Clone)]
pub struct SystemGraph {
    nodes: Vec<(NodeId, NodeKind)>,
    ac_edges: Vec<Edge>,
    dc_edges: Vec<Edge>,
    index: HashMap<NodeId, usize>,
}

impl SystemGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[(NodeId, NodeKind)] {
        &self.nodes
    }

    pub fn ac_edges(&self) -> &[Edge] {
        &self.ac_edges
    }

    pub fn dc_edges(&self) -> &[Edge] {
        &self.dc_edges
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node_id(&self, idx: usize) -> &str {
        &self.nodes[idx].0
    }

    pub fn kind(&self, idx: usize) -> NodeKind {
        self.nodes[idx].1
    }

    /// Node indices of the given kind, ascending.
    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].1 == kind)
            .collect()
    }

    /// Machine and converter node indices, ascending: the ac-side node order.
    pub fn ac_side_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].1.has_ac_terminal())
            .collect()
    }

    /// Converter and dc-bus node indices, ascending: the dc voltage order.
    pub fn dc_side_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].1.has_dc_terminal())
            .collect()
    }

    /// Sum of conductances of dc edges incident to node `idx`.
    pub fn dc_degree_weight(&self, idx: usize) -> f64 {
        self.dc_edges
            .iter()
            .filter(|e| e.a == idx || e.b == idx)
            .map(|e| e.weight)
            .sum()
    }

    pub fn dc_edges_at(&self, idx: usize) -> Vec<&Edge> {
        self.dc_edges
            .iter()
            .filter(|e| e.a == idx || e.b == idx)
            .collect()
    }

    /// Rebuild this graph with one ac edge removed. Connectivity of the union
    /// graph is not re-enforced; the N-1 checks work on whatever remains.
    pub fn without_ac_edge(&self, edge_idx: usize) -> SystemGraph {
        let mut g = self.clone();
        g.ac_edges.remove(edge_idx);
        g
    }

    /// Rebuild this graph with a node (and all incident edges) removed.
    pub fn without_node(&self, idx: usize) -> SystemGraph {
        let keep = |e: &Edge| e.a != idx && e.b != idx;
        let remap = |j: usize| if j > idx { j - 1 } else { j };
        let mut nodes = self.nodes.clone();
        nodes.remove(idx);
        let ac_edges = self
            .ac_edges
            .iter()
            .filter(|e| keep(e))
            .map(|e| Edge {
                a: remap(e.a),
                b: remap(e.b),
                weight: e.weight,
            })
            .collect();
        let dc_edges = self
            .dc_edges
            .iter()
            .filter(|e| keep(e))
            .map(|e| Edge {
                a: remap(e.a),
                b: remap(e.b),
                weight: e.weight,
            })
            .collect();
        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), i))
            .collect();
        SystemGraph {
            nodes,
            ac_edges,
            dc_edges,
            index,
        }
    }

    /// Scale every dc conductance by `factor` (used for the stiff-link limit).
    pub fn with_dc_scaled(&self, factor: f64) -> SystemGraph {
        let mut g = self.clone();
        for e in &mut g.dc_edges {
            e.weight *= factor;
        }
        g
    }
}

/// Validate a description into a [`SystemGraph`].
///
/// Parallel edges of the same kind are merged by summing their weights;
/// linearized flows only ever see the sum.
pub fn build_graph(desc: &NetworkDescription) -> Result<SystemGraph, NetworkError> {
    let mut nodes = desc.nodes.clone();
    nodes.sort_by(|a, b| a.0.cmp(&b.0));
    let mut index = HashMap::new();
    for (i, (id, _)) in nodes.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(NetworkError::DuplicateId(id.clone()));
        }
    }

    let resolve = |id: &NodeId| -> Result<usize, NetworkError> {
        index
            .get(id)
            .copied()
            .ok_or_else(|| NetworkError::DanglingEdge(id.clone()))
    };

    let collect = |raw: &[(NodeId, NodeId, f64)],
                   kind_name: &'static str,
                   terminal: fn(NodeKind) -> bool|
     -> Result<Vec<Edge>, NetworkError> {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (ra, rb, w) in raw {
            let ia = resolve(ra)?;
            let ib = resolve(rb)?;
            if ia == ib {
                return Err(NetworkError::SelfLoop(ra.clone()));
            }
            if *w <= 0.0 || !w.is_finite() {
                return Err(NetworkError::NonPositiveWeight {
                    a: ra.clone(),
                    b: rb.clone(),
                    w: *w,
                });
            }
            if !terminal(nodes[ia].1) || !terminal(nodes[ib].1) {
                return Err(NetworkError::KindMismatch {
                    kind: kind_name,
                    a: ra.clone(),
                    b: rb.clone(),
                });
            }
            let key = (ia.min(ib), ia.max(ib));
            *merged.entry(key).or_insert(0.0) += w;
        }
        Ok(merged
            .into_iter()
            .map(|((a, b), weight)| Edge { a, b, weight })
            .collect())
    };

    let ac_edges = collect(&desc.ac_edges, "ac", NodeKind::has_ac_terminal)?;
    let dc_edges = collect(&desc.dc_edges, "dc", NodeKind::has_dc_terminal)?;

    let graph = SystemGraph {
        nodes,
        ac_edges,
        dc_edges,
        index,
    };
    if graph.node_count() > 0 && !union_connected(&graph) {
        return Err(NetworkError::Disconnected);
    }
    Ok(graph)
}

fn union_connected(g: &SystemGraph) -> bool {
    let n = g.node_count();
    let mut adj = vec![Vec::new(); n];
    for e in g.ac_edges.iter().chain(g.dc_edges.iter()) {
        adj[e.a].push(e.b);
        adj[e.b].push(e.a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// A maximal connected component of one network kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Subnet {
    /// Node indices, ascending.
    pub nodes: Vec<usize>,
    /// Indices into the graph's edge list of this kind, ascending.
    pub edges: Vec<usize>,
}

impl Subnet {
    pub fn contains(&self, idx: usize) -> bool {
        self.nodes.binary_search(&idx).is_ok()
    }
}

/// The ac and dc subnetworks of a system.
///
/// Converter nodes belong to exactly one ac and one dc subnet; isolated
/// terminals form singleton subnets.
#[derive(Debug, Clone)]
pub struct SubnetworkDecomposition {
    pub ac_subnets: Vec<Subnet>,
    pub dc_subnets: Vec<Subnet>,
}

impl SubnetworkDecomposition {
    pub fn ac_subnet_of(&self, node: usize) -> Option<usize> {
        self.ac_subnets.iter().position(|s| s.contains(node))
    }
    pub fn dc_subnet_of(&self, node: usize) -> Option<usize> {
        self.dc_subnets.iter().position(|s| s.contains(node))
    }
}

/// Split the graph into maximal connected ac components (over machines,
/// converters, and ac edges) and dc components (over dc buses, converters,
/// and dc edges).
pub fn decompose_subnetworks(graph: &SystemGraph) -> SubnetworkDecomposition {
    let ac_subnets = components(graph, graph.ac_side_nodes(), graph.ac_edges());
    let dc_subnets = components(graph, graph.dc_side_nodes(), graph.dc_edges());
    SubnetworkDecomposition {
        ac_subnets,
        dc_subnets,
    }
}

fn components(_g: &SystemGraph, members: Vec<usize>, edges: &[Edge]) -> Vec<Subnet> {
    let member_set: HashSet<usize> = members.iter().copied().collect();
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for m in &members {
        adj.entry(*m).or_default();
    }
    for e in edges {
        adj.get_mut(&e.a).unwrap().push(e.b);
        adj.get_mut(&e.b).unwrap().push(e.a);
    }
    let mut seen: HashSet<usize> = HashSet::new();
    let mut subnets = Vec::new();
    for &start in &members {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = vec![start];
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(v) = stack.pop() {
            for &w in &adj[&v] {
                if member_set.contains(&w) && seen.insert(w) {
                    comp.push(w);
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        let comp_set: HashSet<usize> = comp.iter().copied().collect();
        let edge_idx = edges
            .iter()
            .enumerate()
            .filter(|(_, e)| comp_set.contains(&e.a))
            .map(|(i, _)| i)
            .collect();
        subnets.push(Subnet {
            nodes: comp,
            edges: edge_idx,
        });
    }
    subnets
}

/// Oriented incidence matrix of an edge list over `rows` (node index order).
/// The +1 sits at the lexicographically smaller endpoint.
pub fn incidence(rows: &[usize], edges: &[Edge]) -> DMatrix<f64> {
    let pos: HashMap<usize, usize> = rows.iter().enumerate().map(|(r, &n)| (n, r)).collect();
    let mut b = DMatrix::zeros(rows.len(), edges.len());
    for (m, e) in edges.iter().enumerate() {
        b[(pos[&e.a], m)] = 1.0;
        b[(pos[&e.b], m)] = -1.0;
    }
    b
}

/// Weighted Laplacian of an edge list over `rows`.
pub fn laplacian(rows: &[usize], edges: &[Edge]) -> DMatrix<f64> {
    let pos: HashMap<usize, usize> = rows.iter().enumerate().map(|(r, &n)| (n, r)).collect();
    let mut l = DMatrix::zeros(rows.len(), rows.len());
    for e in edges {
        let (ra, rb) = (pos[&e.a], pos[&e.b]);
        l[(ra, ra)] += e.weight;
        l[(rb, rb)] += e.weight;
        l[(ra, rb)] -= e.weight;
        l[(rb, ra)] -= e.weight;
    }
    l
}

/// Kron reduction: Schur complement of a weighted Laplacian onto `retained`,
/// plus the map sending interior injections to equivalent retained injections.
///
/// For any voltage solve `L v = p` with `p` split into retained and interior
/// parts, the retained voltages satisfy `L_red v_r = p_r + d_map p_i`.
pub fn kron_reduce(
    laplacian: &DMatrix<f64>,
    retained: &[usize],
) -> Result<(DMatrix<f64>, DMatrix<f64>), NetworkError> {
    let n = laplacian.nrows();
    assert_eq!(n, laplacian.ncols(), "laplacian must be square");
    let retained_set: HashSet<usize> = retained.iter().copied().collect();
    let interior: Vec<usize> = (0..n).filter(|i| !retained_set.contains(i)).collect();
    let nr = retained.len();
    let ni = interior.len();

    if ni == 0 {
        return Ok((pick(laplacian, retained, retained), DMatrix::zeros(nr, 0)));
    }

    let l_rr = pick(laplacian, retained, retained);
    let l_ri = pick(laplacian, retained, &interior);
    let l_ir = pick(laplacian, &interior, retained);
    let l_ii = pick(laplacian, &interior, &interior);

    let lu = l_ii.lu();
    let inv_ir = lu.solve(&l_ir).ok_or(NetworkError::SingularInteriorBlock)?;
    let inv_ii = lu
        .try_inverse()
        .ok_or(NetworkError::SingularInteriorBlock)?;
    let reduced = &l_rr - &l_ri * &inv_ir;
    let d_map = -&l_ri * inv_ii;
    Ok((reduced, d_map))
}

fn pick(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Sources and sensitivity-bearing devices resolved to node ids.
/// Produced by the devices module; consumed here to shape selector matrices.
#[derive(Debug, Clone, Default)]
pub struct DeviceClassification {
    /// (host node, k_g, T_g) of sources with k_g > 0, host sorted. The host is
    /// a machine (governor), dc bus, or a converter fed directly.
    pub r_sources: Vec<(NodeId, f64, f64)>,
    /// (host node, T_g) of sources with k_g = 0, host sorted.
    pub zs_sources: Vec<(NodeId, f64)>,
    /// (host bus, k_pv) of curtailed PV, sorted.
    pub pv_nodes: Vec<(NodeId, f64)>,
    /// (machine node, k_w) of speed-curtailed wind turbines, sorted.
    pub wt_machines: Vec<(NodeId, f64)>,
}

/// Incidence, Laplacian, and selector matrices for one system.
///
/// Shapes follow the block structure of the closed-loop model: `b_ac` is
/// |ac-side nodes| x |ac edges|, `l_dc` spans converter and dc-bus voltages,
/// and each selector has exactly one 1 per row.
#[derive(Debug, Clone)]
pub struct NetworkMatrices {
    pub b_ac: DMatrix<f64>,
    pub w_ac: DMatrix<f64>,
    pub l_dc: DMatrix<f64>,
    pub i_ac: DMatrix<f64>,
    pub i_cac: DMatrix<f64>,
    pub i_cdc: DMatrix<f64>,
    pub i_dc: DMatrix<f64>,
    pub i_r_ac: DMatrix<f64>,
    /// Sources with k_g > 0 on the dc side, columns over the full
    /// converter+dc-node voltage order (the composed selector).
    pub i_r_dc: DMatrix<f64>,
    pub i_zs_ac: DMatrix<f64>,
    pub i_zs_dc: DMatrix<f64>,
    pub i_w: DMatrix<f64>,
    /// Curtailed PV hosts, columns over the full voltage order.
    pub i_pv: DMatrix<f64>,
    /// Node index order backing the theta/omega-side rows.
    pub ac_side_order: Vec<usize>,
    /// Node index order backing the dc-voltage rows.
    pub dc_side_order: Vec<usize>,
    pub machine_order: Vec<usize>,
    pub converter_order: Vec<usize>,
    pub dc_node_order: Vec<usize>,
}

fn selector(rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    let pos: HashMap<usize, usize> = cols.iter().enumerate().map(|(c, &n)| (n, c)).collect();
    let mut s = DMatrix::zeros(rows.len(), cols.len());
    for (r, n) in rows.iter().enumerate() {
        s[(r, pos[n])] = 1.0;
    }
    s
}

/// Build every matrix the closed-loop assembly needs.
pub fn network_matrices(
    graph: &SystemGraph,
    class: &DeviceClassification,
) -> Result<NetworkMatrices, NetworkError> {
    let ac_side = graph.ac_side_nodes();
    let dc_side = graph.dc_side_nodes();
    let machines = graph.nodes_of_kind(NodeKind::Machine);
    let converters = graph.nodes_of_kind(NodeKind::Converter);
    let dc_nodes = graph.nodes_of_kind(NodeKind::DcNode);

    let lookup = |id: &NodeId, want_kind: fn(NodeKind) -> bool| -> Result<usize, NetworkError> {
        match graph.node_index(id) {
            Some(i) if want_kind(graph.kind(i)) => Ok(i),
            _ => Err(NetworkError::ClassificationMismatch(id.clone())),
        }
    };

    // Selector rows for sources pick either the machine hosting them (ac side)
    // or the dc bus hosting them (the full converter+dc-node voltage order,
    // so a source feeding a converter dc link directly is representable).
    // The off-side row stays zero.
    let host_split = |hosts: &[NodeId]| -> Result<(DMatrix<f64>, DMatrix<f64>), NetworkError> {
        let mpos: HashMap<usize, usize> =
            machines.iter().enumerate().map(|(c, &n)| (n, c)).collect();
        let dpos: HashMap<usize, usize> =
            dc_side.iter().enumerate().map(|(c, &n)| (n, c)).collect();
        let mut on_ac = DMatrix::zeros(hosts.len(), machines.len());
        let mut on_dc = DMatrix::zeros(hosts.len(), dc_side.len());
        for (r, id) in hosts.iter().enumerate() {
            let idx = lookup(id, |_| true)?;
            match graph.kind(idx) {
                NodeKind::Machine => on_ac[(r, mpos[&idx])] = 1.0,
                NodeKind::DcNode | NodeKind::Converter => on_dc[(r, dpos[&idx])] = 1.0,
            }
        }
        Ok((on_ac, on_dc))
    };

    let r_hosts: Vec<NodeId> = class
        .r_sources
        .iter()
        .map(|(id, _, _)| id.clone())
        .collect();
    let zs_hosts: Vec<NodeId> = class.zs_sources.iter().map(|(id, _)| id.clone()).collect();
    let (i_r_ac, i_r_dc) = host_split(&r_hosts)?;
    let (i_zs_ac, i_zs_dc) = host_split(&zs_hosts)?;

    let pv_rows = class
        .pv_nodes
        .iter()
        .map(|(id, _)| lookup(id, NodeKind::has_dc_terminal))
        .collect::<Result<Vec<_>, _>>()?;
    let wt_rows = class
        .wt_machines
        .iter()
        .map(|(id, _)| lookup(id, |k| k == NodeKind::Machine))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(NetworkMatrices {
        b_ac: incidence(&ac_side, graph.ac_edges()),
        w_ac: DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            graph.ac_edges().len(),
            graph.ac_edges().iter().map(|e| e.weight),
        )),
        l_dc: laplacian(&dc_side, graph.dc_edges()),
        i_ac: selector(&machines, &ac_side),
        i_cac: selector(&converters, &ac_side),
        i_cdc: selector(&converters, &dc_side),
        i_dc: selector(&dc_nodes, &dc_side),
        i_r_ac,
        i_r_dc,
        i_zs_ac,
        i_zs_dc,
        i_w: selector(&wt_rows, &machines),
        i_pv: selector(&pv_rows, &dc_side),
        ac_side_order: ac_side,
        dc_side_order: dc_side,
        machine_order: machines,
        converter_order: converters,
        dc_node_order: dc_nodes,
    })
}
