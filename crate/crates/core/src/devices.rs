//! Physical device models: synchronous machines, governors, controllable dc
//! sources, single-diode PV, and pitch-controlled wind turbines.
//!
//! Sensitivities are obtained by central finite differences on the nonlinear
//! curves so the same code path serves every device; maximum power points are
//! located by a coarse scan refined with golden-section search.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use thiserror::Error;

use crate::network::{DeviceClassification, NodeId, NodeKind, SystemGraph};

const GOLDEN: f64 = 0.618_033_988_749_894_9;
/// Relative step for central differences.
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DeviceError {
    #[error("iteration cap exceeded while solving {0}")]
    NoConvergence(&'static str),
    #[error("{0}")]
    DomainError(&'static str),
    #[error("operating point {op} is below the maximum power point {mpp}; the region is unstable")]
    UnstableRegion { op: f64, mpp: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

// ---------------------------------------------------------------------------
// Parameter records
// ---------------------------------------------------------------------------

/// Swing-equation machine. The state coefficient is the product `J * omega_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineParams {
    pub inertia: f64,
    pub omega_star: f64,
}

impl MachineParams {
    pub fn swing_coefficient(&self) -> f64 {
        self.inertia * self.omega_star
    }
}

/// First-order turbine/governor or controllable dc source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderSource {
    pub t_g: f64,
    pub k_g: f64,
}

/// DC bus: scaled capacitance `c = C * v_star` feeds both the charge dynamics
/// and the gain condition on the converter controls.
#[derive(Debug, Clone, PartialEq)]
pub struct DcBusParams {
    pub capacitance: f64,
    pub v_star: f64,
}

impl DcBusParams {
    pub fn scaled_capacitance(&self) -> f64 {
        self.capacitance * self.v_star
    }
}

/// Single-diode PV aggregate: `n_series x n_parallel` copies of a unit cell
/// described in per-unit quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct PvParams {
    pub i_l: f64,
    pub i_0: f64,
    pub v_t: f64,
    pub alpha: f64,
    pub r_s: f64,
    pub r_p: f64,
    pub n_series: u32,
    pub n_parallel: u32,
}

impl PvParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.i_l < 0.0 || self.i_0 <= 0.0 || self.v_t <= 0.0 || self.alpha <= 0.0 {
            return Err(DeviceError::InvalidParameter(
                "pv currents/thermal voltage must be positive",
            ));
        }
        if self.r_s <= 0.0 || self.r_p <= 0.0 {
            return Err(DeviceError::InvalidParameter(
                "pv resistances must be positive",
            ));
        }
        if self.n_series == 0 || self.n_parallel == 0 {
            return Err(DeviceError::InvalidParameter(
                "pv aggregation counts must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Coefficients of the exponential power-coefficient surrogate
/// `Cp = c1 (c2/li - c3 b - c4) exp(-c5/li) + c6 l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpCoeffs {
    pub c: [f64; 6],
}

impl Default for CpCoeffs {
    fn default() -> Self {
        CpCoeffs {
            c: [0.5176, 116.0, 0.4, 5.0, 21.0, 0.0068],
        }
    }
}

/// Wind turbine aerodynamics. Geometry and wind speed are SI; rotor speed is
/// per-unit on `rotor_speed_base`, power per-unit on `power_base`.
#[derive(Debug, Clone, PartialEq)]
pub struct WtParams {
    pub air_density: f64,
    pub radius: f64,
    pub v_wind: f64,
    pub cp: CpCoeffs,
    pub rotor_speed_base: f64,
    pub power_base: f64,
}

impl WtParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.air_density <= 0.0 || self.radius <= 0.0 || self.v_wind <= 0.0 {
            return Err(DeviceError::InvalidParameter(
                "wt geometry and wind speed must be positive",
            ));
        }
        if self.rotor_speed_base <= 0.0 || self.power_base <= 0.0 {
            return Err(DeviceError::InvalidParameter("wt bases must be positive"));
        }
        Ok(())
    }

    /// Rescale `power_base` so that the maximum power at the current wind
    /// speed and zero pitch equals `p_mpp_target` p.u.
    pub fn calibrated(mut self, p_mpp_target: f64) -> Result<Self, DeviceError> {
        self.power_base = 1.0;
        self.validate()?;
        let (_, p_raw) = wt_mpp(&self)?;
        self.power_base = p_raw / p_mpp_target;
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// PV curve
// ---------------------------------------------------------------------------

fn pv_unit_current(v: f64, p: &PvParams) -> Result<f64, DeviceError> {
    // implicit single-diode equation, residual in i:
    //   f(i) = i_L - i_0 (exp((v + R_s i)/(v_t a)) - 1) - (v + R_s i)/R_p - i
    // f is strictly decreasing in i, so a bracketed Newton always lands.
    let f = |i: f64| -> f64 {
        let x = (v + p.r_s * i) / (p.v_t * p.alpha);
        p.i_l - p.i_0 * x.exp_m1() - (v + p.r_s * i) / p.r_p - i
    };
    let fp = |i: f64| -> f64 {
        let x = (v + p.r_s * i) / (p.v_t * p.alpha);
        -p.i_0 * x.exp() * p.r_s / (p.v_t * p.alpha) - p.r_s / p.r_p - 1.0
    };

    let mut lo = -p.i_l - 1.0;
    let mut hi = p.i_l + v.abs() / p.r_p + 1.0;
    let mut expand = 0;
    while f(lo) < 0.0 {
        lo = lo * 2.0 - 1.0;
        expand += 1;
        if expand > 60 {
            return Err(DeviceError::NoConvergence("pv implicit current (bracket)"));
        }
    }
    let mut i = 0.0_f64.clamp(lo, hi);
    for _ in 0..200 {
        let r = f(i);
        if r.abs() < 1e-13 {
            return Ok(i);
        }
        if r > 0.0 {
            lo = i;
        } else {
            hi = i;
        }
        let d = fp(i);
        let newton = i - r / d;
        i = if d.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    if f(i).abs() < 1e-10 {
        Ok(i)
    } else {
        Err(DeviceError::NoConvergence("pv implicit current"))
    }
}

/// Terminal current of the PV aggregate at dc voltage `v`.
pub fn pv_current(v: f64, p: &PvParams) -> Result<f64, DeviceError> {
    p.validate()?;
    if v < 0.0 {
        return Err(DeviceError::DomainError("pv voltage must be non-negative"));
    }
    let unit = pv_unit_current(v / p.n_series as f64, p)?;
    Ok(unit * p.n_parallel as f64)
}

/// Terminal power of the PV aggregate at dc voltage `v`.
pub fn pv_power(v: f64, p: &PvParams) -> Result<f64, DeviceError> {
    Ok(v * pv_current(v, p)?)
}

/// Open-circuit voltage: the positive root of the current.
pub fn pv_open_circuit(p: &PvParams) -> Result<f64, DeviceError> {
    p.validate()?;
    if p.i_l == 0.0 {
        return Ok(0.0);
    }
    let ns = p.n_series as f64;
    let mut hi = ns * p.v_t * p.alpha * (p.i_l / p.i_0 + 1.0).ln() + 1.0;
    let mut lo = 0.0;
    let mut tries = 0;
    while pv_current(hi, p)? > 0.0 {
        lo = hi;
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(DeviceError::NoConvergence("pv open-circuit voltage"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-13 * hi.max(1.0) {
            return Ok(mid);
        }
        if pv_current(mid, p)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn golden_max(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut f: impl FnMut(f64) -> Result<f64, DeviceError>,
) -> Result<(f64, f64), DeviceError> {
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..300 {
        if hi - lo < tol {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1)?;
        }
    }
    let x = 0.5 * (lo + hi);
    Ok((x, f(x)?))
}

/// Maximum power point of the PV aggregate: coarse 1000-point scan over
/// `[0, v_oc]` refined by golden-section search.
pub fn pv_mpp(p: &PvParams) -> Result<(f64, f64), DeviceError> {
    let v_oc = pv_open_circuit(p)?;
    if v_oc == 0.0 {
        return Ok((0.0, 0.0));
    }
    let n = 1000;
    let mut best = (0usize, f64::NEG_INFINITY);
    for k in 0..=n {
        let v = v_oc * k as f64 / n as f64;
        let pw = pv_power(v, p)?;
        if pw > best.1 {
            best = (k, pw);
        }
    }
    let lo = v_oc * (best.0.saturating_sub(1)) as f64 / n as f64;
    let hi = v_oc * ((best.0 + 1).min(n)) as f64 / n as f64;
    golden_max(lo, hi, 1e-12 * v_oc, |v| pv_power(v, p))
}

/// PV power sensitivity `k_pv = -dP/dv` at an operating voltage on the
/// stable branch (`v_op >= v_mpp`).
pub fn pv_sensitivity(v_op: f64, p: &PvParams) -> Result<f64, DeviceError> {
    let (v_mpp, _) = pv_mpp(p)?;
    if v_op < v_mpp * (1.0 - 1e-9) {
        return Err(DeviceError::UnstableRegion {
            op: v_op,
            mpp: v_mpp,
        });
    }
    let h = FD_STEP * pv_open_circuit(p)?;
    let plus = pv_power(v_op + h, p)?;
    let minus = pv_power(v_op - h, p)?;
    Ok(-(plus - minus) / (2.0 * h))
}

/// Voltage on the stable branch at which the PV delivers `frac * P_mpp`.
pub fn pv_curtailed_voltage(frac: f64, p: &PvParams) -> Result<f64, DeviceError> {
    if !(0.0 < frac && frac <= 1.0) {
        return Err(DeviceError::DomainError(
            "curtailment fraction must be in (0, 1]",
        ));
    }
    let (v_mpp, p_mpp) = pv_mpp(p)?;
    if frac == 1.0 {
        return Ok(v_mpp);
    }
    let target = frac * p_mpp;
    let mut lo = v_mpp;
    let mut hi = pv_open_circuit(p)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-13 * hi.max(1.0) {
            return Ok(mid);
        }
        if pv_power(mid, p)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Wind turbine curve
// ---------------------------------------------------------------------------

/// Power coefficient surrogate, clamped at zero outside its productive region.
///
/// Monotone decreasing in pitch at `beta = 0` and for `beta >= 2` degrees;
/// between those a narrow non-monotone sliver exists at high tip-speed
/// ratios, so operating points should avoid standing pitch angles in (0, 2).
pub fn wt_cp(lambda: f64, beta: f64, c: &CpCoeffs) -> f64 {
    let [c1, c2, c3, c4, c5, c6] = c.c;
    let inv_li = 1.0 / (lambda + 0.08 * beta) - 0.035 / (beta.powi(3) + 1.0);
    let cp = c1 * (c2 * inv_li - c3 * beta - c4) * (-c5 * inv_li).exp() + c6 * lambda;
    cp.max(0.0)
}

/// Mechanical power of the turbine at rotor speed `omega` (p.u.) and pitch
/// angle `beta` (degrees).
pub fn wt_power(omega: f64, beta: f64, p: &WtParams) -> Result<f64, DeviceError> {
    p.validate()?;
    if omega <= 0.0 {
        return Err(DeviceError::DomainError("rotor speed must be positive"));
    }
    let lambda = p.radius * omega * p.rotor_speed_base / p.v_wind;
    let cp = wt_cp(lambda, beta, &p.cp);
    Ok(0.5 * p.air_density * PI * p.radius * p.radius * cp * p.v_wind.powi(3) / p.power_base)
}

fn wt_omega_at_lambda(lambda: f64, p: &WtParams) -> f64 {
    lambda * p.v_wind / (p.radius * p.rotor_speed_base)
}

/// Maximum power point over rotor speed at zero pitch.
pub fn wt_mpp(p: &WtParams) -> Result<(f64, f64), DeviceError> {
    p.validate()?;
    // scan the productive tip-speed-ratio range, then refine
    let lo = wt_omega_at_lambda(0.5, p);
    let hi = wt_omega_at_lambda(14.0, p);
    let n = 1000;
    let mut best = (0usize, f64::NEG_INFINITY);
    for k in 0..=n {
        let w = lo + (hi - lo) * k as f64 / n as f64;
        let pw = wt_power(w, 0.0, p)?;
        if pw > best.1 {
            best = (k, pw);
        }
    }
    if best.1 <= 0.0 {
        return Err(DeviceError::NoConvergence("wt maximum power point"));
    }
    let blo = lo + (hi - lo) * (best.0.saturating_sub(1)) as f64 / n as f64;
    let bhi = lo + (hi - lo) * ((best.0 + 1).min(n)) as f64 / n as f64;
    golden_max(blo, bhi, 1e-12 * hi, |w| wt_power(w, 0.0, p))
}

/// Sensitivities `k_w = -dP/domega` and `k_beta = -dP/dbeta` at an operating
/// point on the stable branch (`omega >= omega_mpp`).
pub fn wt_sensitivities(omega: f64, beta: f64, p: &WtParams) -> Result<(f64, f64), DeviceError> {
    let (w_mpp, _) = wt_mpp(p)?;
    if omega < w_mpp * (1.0 - 1e-9) {
        return Err(DeviceError::UnstableRegion {
            op: omega,
            mpp: w_mpp,
        });
    }
    let hw = FD_STEP * omega.max(1.0);
    let hb = FD_STEP * beta.max(1.0);
    let k_w = -(wt_power(omega + hw, beta, p)? - wt_power(omega - hw, beta, p)?) / (2.0 * hw);
    let k_b = -(wt_power(omega, beta + hb, p)? - wt_power(omega, beta - hb, p)?) / (2.0 * hb);
    Ok((k_w, k_b))
}

/// Rotor speed above the MPP at which the speed sensitivity reaches
/// `k_w_target` (monotone on the stable branch near the MPP).
pub fn wt_speed_for_kw(k_w_target: f64, beta: f64, p: &WtParams) -> Result<f64, DeviceError> {
    if k_w_target < 0.0 {
        return Err(DeviceError::DomainError("target k_w must be non-negative"));
    }
    let (w_mpp, _) = wt_mpp(p)?;
    if k_w_target == 0.0 {
        return Ok(w_mpp);
    }
    let mut lo = w_mpp;
    let mut hi = w_mpp;
    let mut tries = 0;
    loop {
        hi *= 1.05;
        let (kw, _) = wt_sensitivities(hi, beta, p)?;
        if kw >= k_w_target {
            break;
        }
        lo = hi;
        tries += 1;
        if tries > 200 {
            return Err(DeviceError::NoConvergence("wt speed for target k_w"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-13 * hi {
            return Ok(mid);
        }
        let (kw, _) = wt_sensitivities(mid, beta, p)?;
        if kw < k_w_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Rotor speed on the stable branch delivering `frac * P_mpp` at the given pitch.
pub fn wt_curtailed_speed(frac: f64, beta: f64, p: &WtParams) -> Result<f64, DeviceError> {
    if !(0.0 < frac && frac <= 1.0) {
        return Err(DeviceError::DomainError(
            "curtailment fraction must be in (0, 1]",
        ));
    }
    let (w_mpp, p_mpp) = wt_mpp(p)?;
    if frac == 1.0 {
        return Ok(w_mpp);
    }
    let target = frac * p_mpp;
    let mut lo = w_mpp;
    let mut hi = wt_omega_at_lambda(14.0, p);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-13 * hi {
            return Ok(mid);
        }
        if wt_power(mid, beta, p)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Device set & classification
// ---------------------------------------------------------------------------

/// What sits behind a machine node.
#[derive(Debug, Clone, PartialEq)]
pub enum MachineSource {
    /// Synchronous condenser / flywheel: inertia only.
    None,
    /// Turbine/governor responding to speed deviations.
    Governor(FirstOrderSource),
    /// Wind turbine with resolved operating point.
    WindTurbine(WtDevice),
}

/// A wind turbine resolved at its operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct WtDevice {
    pub params: WtParams,
    pub omega_star: f64,
    pub beta_star: f64,
    /// Pitch servo time constant.
    pub t_g: f64,
    /// Proportional pitch gain acting on speed deviations.
    pub k_bp: f64,
    pub k_w: f64,
    pub k_beta: f64,
    pub p_star: f64,
}

impl WtDevice {
    /// Effective governor gain of the pitch channel.
    pub fn pitch_k_g(&self) -> f64 {
        self.k_beta * self.k_bp
    }
}

/// What sits behind a dc bus (dc nodes only; converters carry no source).
#[derive(Debug, Clone, PartialEq)]
pub enum DcSource {
    None,
    Controllable(FirstOrderSource),
    Pv(PvDevice),
}

/// A PV plant resolved at its operating voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct PvDevice {
    pub params: PvParams,
    pub v_op: f64,
    pub k_pv: f64,
    pub p_star: f64,
}

#[derive(Debug, Clone)]
pub struct MachineDevice {
    pub params: MachineParams,
    pub source: MachineSource,
}

#[derive(Debug, Clone)]
pub struct DcBusDevice {
    pub params: DcBusParams,
    pub source: DcSource,
    /// Marks a converter whose dc side is a bare or source-fed capacitor with
    /// no dc network attached, so the equivalent-resistance gain bound does
    /// not apply. Carrying a source implies it.
    pub direct_feed: bool,
}

/// All per-node physical data for one system, keyed by node id.
#[derive(Debug, Clone, Default)]
pub struct DeviceSet {
    pub machines: BTreeMap<NodeId, MachineDevice>,
    pub dc_buses: BTreeMap<NodeId, DcBusDevice>,
}

impl DeviceSet {
    pub fn machine(&self, id: &str) -> Option<&MachineDevice> {
        self.machines.get(id)
    }
    pub fn dc_bus(&self, id: &str) -> Option<&DcBusDevice> {
        self.dc_buses.get(id)
    }
}

/// Sort nodes into the five behavioural sets: responsive sources (k_g > 0),
/// zero-sensitivity sources, curtailed PV, speed-curtailed WTs, and the rest.
pub fn classify_nodes(devices: &DeviceSet) -> DeviceClassification {
    let mut class = DeviceClassification::default();
    for (id, m) in &devices.machines {
        match &m.source {
            MachineSource::Governor(g) => {
                if g.k_g > 0.0 {
                    class.r_sources.push((id.clone(), g.k_g, g.t_g));
                } else {
                    class.zs_sources.push((id.clone(), g.t_g));
                }
            }
            MachineSource::WindTurbine(wt) => {
                if wt.k_w > 0.0 {
                    class.wt_machines.push((id.clone(), wt.k_w));
                }
                let k_g = wt.pitch_k_g();
                if wt.k_bp > 0.0 {
                    if k_g > 0.0 {
                        class.r_sources.push((id.clone(), k_g, wt.t_g));
                    } else {
                        class.zs_sources.push((id.clone(), wt.t_g));
                    }
                }
            }
            MachineSource::None => {}
        }
    }
    for (id, d) in &devices.dc_buses {
        match &d.source {
            DcSource::Controllable(s) => {
                if s.k_g > 0.0 {
                    class.r_sources.push((id.clone(), s.k_g, s.t_g));
                } else {
                    class.zs_sources.push((id.clone(), s.t_g));
                }
            }
            DcSource::Pv(pv) => {
                if pv.k_pv > 0.0 {
                    class.pv_nodes.push((id.clone(), pv.k_pv));
                }
            }
            DcSource::None => {}
        }
    }
    class
}

/// Machine nodes not attached to any responding or stored-power source:
/// synchronous condensers and flywheels.
pub fn passive_machines(graph: &SystemGraph, devices: &DeviceSet) -> Vec<NodeId> {
    graph
        .nodes()
        .iter()
        .filter(|(id, kind)| {
            *kind == NodeKind::Machine
                && devices
                    .machine(id)
                    .map(|m| matches!(m.source, MachineSource::None))
                    .unwrap_or(true)
        })
        .map(|(id, _)| id.clone())
        .collect()
}

/// Representative 60-cell-module PV aggregate in per-unit quantities.
/// Scaled so the unit block peaks near one per-unit volt and power.
pub fn default_pv_params() -> PvParams {
    PvParams {
        i_l: 1.0,
        i_0: 1e-9,
        v_t: 0.045,
        alpha: 1.3,
        r_s: 0.01,
        r_p: 12.0,
        n_series: 1,
        n_parallel: 1,
    }
}

/// A multi-megawatt PMSG turbine aggregate; calibrate `power_base` against a
/// target MPP before use.
pub fn default_wt_params() -> WtParams {
    WtParams {
        air_density: 1.225,
        radius: 63.0,
        v_wind: 12.0,
        cp: CpCoeffs::default(),
        rotor_speed_base: 1.267,
        power_base: 1.0e8,
    }
}
