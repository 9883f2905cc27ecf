//! Command dispatch: turn a scenario plus flags into reports, spectra,
//! steady states, and trajectory files, with a deterministic text rendering.

use nalgebra::DVector;

use crate::analysis::{
    self, quasi_sync_frequency, spectrum, steady_state, AnalysisError, StabilityReport,
    SyncOutcome, Verdict,
};
use crate::assembly::{assemble_system, disturbance_vector, StateSpace};
use crate::network::NodeKind;
use crate::scenario::{ResolvedSystem, Scenario, ScenarioError};
use crate::sim::{self, metrics, simulate_linear, simulate_nonlinear, Schedule, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Eig,
    Steady,
    Simulate,
    Report,
}

impl std::str::FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "check" => Ok(Command::Check),
            "eig" => Ok(Command::Eig),
            "steady" => Ok(Command::Steady),
            "simulate" => Ok(Command::Simulate),
            "report" => Ok(Command::Report),
            other => Err(format!("unknown command `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Machine,
}

#[derive(Debug, Clone, Default)]
pub struct RunFlags {
    pub gdc_scale: Option<f64>,
    pub step: Option<f64>,
    pub t_end: Option<f64>,
    pub n_minus_one: bool,
    pub format: OutputFormat,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub exit_code: i32,
    pub stdout: String,
    /// (file name, content) pairs for the caller to write out.
    pub artifacts: Vec<(String, String)>,
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Execute one command against a scenario. The scenario is normalized in
/// place; its dump is always emitted as an artifact.
pub fn run(command: Command, scenario: &mut Scenario, flags: &RunFlags) -> RunOutput {
    match run_inner(command, scenario, flags) {
        Ok(out) => out,
        Err(e) => RunOutput {
            exit_code: 2,
            stdout: match flags.format {
                OutputFormat::Text => format!("error: {e}\n"),
                OutputFormat::Machine => format!("error={e}\n"),
            },
            artifacts: vec![],
        },
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Assembly(#[from] crate::assembly::AssemblyError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn run_inner(
    command: Command,
    scenario: &mut Scenario,
    flags: &RunFlags,
) -> Result<RunOutput, RunError> {
    if let Some(s) = flags.gdc_scale {
        scenario.analysis.gdc_scale = s;
    }
    if let Some(h) = flags.step {
        scenario.simulation.step = h;
    }
    if let Some(t) = flags.t_end {
        scenario.simulation.t_end = t;
    }
    if flags.n_minus_one {
        scenario.analysis.n_minus_one = true;
    }
    let rs = scenario.resolve()?;
    let ss = assemble_system(&rs.graph, &rs.devices, &rs.gains)?;

    let mut artifacts = vec![("normalized.toml".to_string(), scenario.to_toml())];
    let mut stdout = String::new();
    let mut exit_code = 0;

    let want_check = matches!(command, Command::Check | Command::Report);
    let want_eig = matches!(command, Command::Eig | Command::Report);
    let want_steady = matches!(command, Command::Steady | Command::Report);
    let want_sim = matches!(command, Command::Simulate | Command::Report);

    if want_check {
        let report = analysis::full_check(&rs.graph, &rs.devices, &rs.gains, &ss, &rs.analysis)?;
        let text = match flags.format {
            OutputFormat::Text => render_report_text(&rs, &report),
            OutputFormat::Machine => render_report_machine(&rs, &report),
        };
        stdout.push_str(&text);
        artifacts.push(("report.txt".to_string(), text));
        if !report.all_pass() {
            exit_code = 1;
        }
    }
    if matches!(command, Command::Report) {
        artifacts.push(("matrices.txt".to_string(), ss.dump_matrices()));
    }
    if want_eig {
        let spec = spectrum(&ss)?;
        let mut text = String::new();
        text.push_str(&format!(
            "# spectrum of {} ({} states)\n",
            rs.name,
            ss.dims.n()
        ));
        for ev in &spec.eigenvalues {
            text.push_str(&format!("{} {}\n", fmt(ev.re), fmt(ev.im)));
        }
        text.push_str(&format!(
            "# restricted max Re = {} -> {}\n",
            fmt(spec.max_re_restricted),
            if spec.stable {
                "stable"
            } else {
                "not certified stable"
            }
        ));
        stdout.push_str(&text);
        artifacts.push(("spectrum.txt".to_string(), text));
    }
    if want_steady {
        let text = render_steady(&rs, &ss)?;
        stdout.push_str(&text);
        artifacts.push(("steady.txt".to_string(), text));
    }
    if want_sim {
        let (traj, channels) = simulate_per_scenario(&rs, &ss)?;
        let m = metrics(&traj, &channels, 0.3_f64.min(rs.sim.t_end / 2.0))?;
        let mut text = String::new();
        text.push_str(&format!(
            "# metrics over {} s, window 300 ms\n",
            rs.sim.t_end
        ));
        for (ch, nm) in &m.per_channel {
            text.push_str(&format!(
                "{ch}: rocof={} nadir={} settling={}\n",
                fmt(nm.rocof),
                fmt(nm.nadir),
                fmt(nm.settling)
            ));
        }
        stdout.push_str(&text);
        artifacts.push(("metrics.txt".to_string(), text));
        artifacts.push(("trajectory.csv".to_string(), traj.to_dsv()));
    }

    Ok(RunOutput {
        exit_code,
        stdout,
        artifacts,
    })
}

/// Run the scenario's configured simulation; returns the trajectory and the
/// monitored channel labels.
pub fn simulate_per_scenario(
    rs: &ResolvedSystem,
    ss: &StateSpace,
) -> Result<(sim::Trajectory, Vec<String>), RunError> {
    let channels: Vec<String> = rs
        .sim
        .monitor
        .iter()
        .map(|id| {
            let idx = rs.graph.node_index(id).expect("validated monitor node");
            match rs.graph.kind(idx) {
                NodeKind::Machine => format!("omega:{id}"),
                NodeKind::Converter => format!("fconv:{id}"),
                NodeKind::DcNode => format!("v:{id}"),
            }
        })
        .collect();
    let traj = if rs.sim.nonlinear {
        simulate_nonlinear(
            &rs.graph,
            &rs.devices,
            &rs.gains,
            &rs.events,
            rs.sim.step,
            rs.sim.t_end,
        )?
    } else {
        let schedule = Schedule::from_events(ss, &rs.events)?;
        simulate_linear(
            ss,
            &schedule,
            &DVector::zeros(ss.dims.n()),
            rs.sim.step,
            rs.sim.t_end,
        )?
    };
    Ok((traj, channels))
}

fn render_steady(rs: &ResolvedSystem, ss: &StateSpace) -> Result<String, RunError> {
    // total standing disturbance: every event summed
    let loads: Vec<_> = rs
        .events
        .iter()
        .map(|e| (e.node.clone(), e.terminal, e.delta_p))
        .collect();
    let p_d = disturbance_vector(ss, &loads)?;
    let x_ss = steady_state(ss, &p_d)?;
    let decomp = crate::network::decompose_subnetworks(&rs.graph);
    let class = crate::devices::classify_nodes(&rs.devices);
    let mut text = String::new();
    text.push_str(&format!(
        "# steady state of {} under the total disturbance\n",
        rs.name
    ));
    for (label, value) in ss.ordering.state_labels().iter().zip(x_ss.iter()) {
        text.push_str(&format!("{label} = {}\n", fmt(*value)));
    }
    let freqs = ss.converter_frequencies(&x_ss, &p_d);
    for (k, f) in freqs.iter().enumerate() {
        let row = ss.net.i_cdc.row(k);
        let col = (0..row.ncols()).find(|&j| row[j] == 1.0).unwrap();
        text.push_str(&format!(
            "fconv:{} = {}\n",
            ss.ordering.v_nodes[col],
            fmt(*f)
        ));
    }
    match quasi_sync_frequency(&rs.graph, &decomp, &rs.gains, &class, &p_d) {
        Ok(w) => text.push_str(&format!("quasi_sync_omega = {}\n", fmt(w))),
        Err(e) => text.push_str(&format!("quasi_sync_omega = undefined ({e})\n")),
    }
    Ok(text)
}

fn render_report_text(rs: &ResolvedSystem, r: &StabilityReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("stability report: {}\n", rs.name));
    s.push_str(&format!(
        "condition 1 (consistent droop): {} (strict {})\n",
        r.cond1.effective, r.cond1.strict
    ));
    for sub in &r.cond1.subnets {
        if sub.strict == Verdict::Fail {
            let status = if sub.relaxed { "relaxed" } else { "violated" };
            let kind = sub
                .relax_eligible
                .map(|k| k.to_string())
                .unwrap_or_else(|| "no relaxation applies".to_string());
            s.push_str(&format!(
                "  dc subnet {}: gains {:?} on {:?} -> {status} ({kind})\n",
                sub.subnet, sub.k_omegas, sub.converters
            ));
        }
    }
    s.push_str(&format!(
        "condition 2 (stabilizing gains): {}\n",
        r.cond2.verdict
    ));
    for e in &r.cond2.entries {
        s.push_str(&format!(
            "  {}: k_p={} bound={} margin={} [{}]\n",
            e.node,
            fmt(e.k_p),
            if e.bound.is_finite() {
                fmt(e.bound)
            } else {
                "inf".to_string()
            },
            if e.margin.is_finite() {
                fmt(e.margin)
            } else {
                "inf".to_string()
            },
            e.verdict
        ));
    }
    s.push_str(&format!(
        "condition 3 (responsive device): {} {:?}\n",
        r.cond3.verdict, r.cond3.responsive
    ));
    s.push_str(&format!(
        "condition 5 (synchronizing topology): {}\n",
        r.cond5.verdict
    ));
    for sub in &r.cond5.subnets {
        let desc = match &sub.outcome {
            SyncOutcome::Shortcut(case) => format!("shortcut case {case}"),
            SyncOutcome::CaseI => "full check, responsive anchors".to_string(),
            SyncOutcome::CaseII => "full check, converter anchors".to_string(),
            SyncOutcome::Fail { witness } => format!("FAIL, witness node {witness}"),
        };
        s.push_str(&format!("  ac subnet {}: {desc}\n", sub.subnet));
    }
    if let Some(n1) = &r.n_minus_one {
        s.push_str(&format!("n-1 synchronizing topology: {}\n", n1.verdict));
        for (what, v, wit) in &n1.cases {
            if !v.passed() {
                s.push_str(&format!("  {what}: FAIL {wit:?}\n"));
            }
        }
    }
    s.push_str(&format!(
        "spectrum: max Re (restricted) = {} -> {}\n",
        fmt(r.spectrum.max_re_restricted),
        if r.spectrum.stable {
            "stable"
        } else {
            "not certified stable"
        }
    ));
    match (&r.lasalle, &r.lasalle_note) {
        (Some(l), _) => s.push_str(&format!(
            "lasalle certificate: min eig M = {}, max eig sym = {}, max sampled dV/dt = {}\n",
            fmt(l.min_eig_m),
            fmt(l.max_eig_sym),
            fmt(l.max_sampled_dvdt)
        )),
        (None, Some(note)) => s.push_str(&format!("lasalle certificate: skipped ({note})\n")),
        (None, None) => {}
    }
    s.push_str(&format!(
        "verdict: {}\n",
        if r.all_pass() { "PASS" } else { "FAIL" }
    ));
    s
}

fn render_report_machine(rs: &ResolvedSystem, r: &StabilityReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("system={}\n", rs.name));
    s.push_str(&format!("cond1.strict={}\n", r.cond1.strict));
    s.push_str(&format!("cond1.effective={}\n", r.cond1.effective));
    for sub in &r.cond1.subnets {
        if sub.strict == Verdict::Fail {
            s.push_str(&format!(
                "cond1.subnet.{}.relaxed={}\n",
                sub.subnet,
                if sub.relaxed { "yes" } else { "no" }
            ));
        }
    }
    s.push_str(&format!("cond2={}\n", r.cond2.verdict));
    for e in &r.cond2.entries {
        s.push_str(&format!("cond2.margin.{}={}\n", e.node, fmt(e.margin)));
    }
    s.push_str(&format!("cond3={}\n", r.cond3.verdict));
    s.push_str(&format!("cond5={}\n", r.cond5.verdict));
    for sub in &r.cond5.subnets {
        let out = match &sub.outcome {
            SyncOutcome::Shortcut(c) => format!("shortcut:{c}"),
            SyncOutcome::CaseI => "case-i".to_string(),
            SyncOutcome::CaseII => "case-ii".to_string(),
            SyncOutcome::Fail { witness } => format!("fail:{witness}"),
        };
        s.push_str(&format!("cond5.subnet.{}={out}\n", sub.subnet));
    }
    if let Some(n1) = &r.n_minus_one {
        s.push_str(&format!("n_minus_one={}\n", n1.verdict));
    }
    s.push_str(&format!(
        "spectrum.max_re_restricted={}\n",
        fmt(r.spectrum.max_re_restricted)
    ));
    s.push_str(&format!("spectrum.stable={}\n", r.spectrum.stable));
    if let Some(l) = &r.lasalle {
        s.push_str(&format!("lasalle.max_eig_sym={}\n", fmt(l.max_eig_sym)));
    }
    s.push_str(&format!(
        "verdict={}\n",
        if r.all_pass() { "PASS" } else { "FAIL" }
    ));
    s
}
