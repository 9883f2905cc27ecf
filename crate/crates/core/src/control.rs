//! Dual-port grid-forming control: the PD v-f droop law, its derivative-free
//! PI realization, the power-balancing comparison law, and tuning helpers.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::network::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("converter `{0}` has no control gains")]
    MissingGains(NodeId),
    #[error("power-balancing law requested but no droop m_p is configured")]
    MissingDroop,
    #[error("device has zero sensitivity and cannot provide a sustained response")]
    ZeroSensitivity,
    #[error("gain {0} must be strictly positive")]
    NonPositiveGain(&'static str),
}

/// Per-converter dual-port GFM gains.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ControlGains {
    /// Derivative gain on the dc voltage (rad per p.u.).
    pub k_p: f64,
    /// Proportional gain on the dc voltage (rad/s per p.u.).
    pub k_omega: f64,
    /// Optional active-power droop for the comparison law.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub m_p: Option<f64>,
}

impl ControlGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.k_p <= 0.0 {
            return Err(ControlError::NonPositiveGain("k_p"));
        }
        if self.k_omega <= 0.0 {
            return Err(ControlError::NonPositiveGain("k_omega"));
        }
        if let Some(m) = self.m_p {
            if m <= 0.0 {
                return Err(ControlError::NonPositiveGain("m_p"));
            }
        }
        Ok(())
    }
}

/// Gains for every converter in a system, keyed by node id.
#[derive(Debug, Clone, Default)]
pub struct GainSet {
    pub by_node: BTreeMap<NodeId, ControlGains>,
}

impl GainSet {
    pub fn get(&self, id: &str) -> Option<&ControlGains> {
        self.by_node.get(id)
    }
    pub fn require(&self, id: &str) -> Result<&ControlGains, ControlError> {
        self.by_node
            .get(id)
            .ok_or_else(|| ControlError::MissingGains(id.to_string()))
    }
}

/// PD form: frequency deviation commanded from the dc voltage deviation and
/// its derivative.
pub fn pd_frequency(dv_dt: f64, v_delta: f64, gains: &ControlGains) -> f64 {
    gains.k_p * dv_dt + gains.k_omega * v_delta
}

/// Power-balancing comparison law: droop on ac power instead of the
/// derivative term. Not part of the certificate path.
pub fn power_balancing_frequency(
    p_ac_delta: f64,
    v_delta: f64,
    gains: &ControlGains,
) -> Result<f64, ControlError> {
    let m_p = gains.m_p.ok_or(ControlError::MissingDroop)?;
    Ok(-m_p * p_ac_delta + gains.k_omega * v_delta)
}

/// Derivative-free realization: a PI controller on the dc voltage produces
/// the phase reference directly, so no dv/dt measurement is needed.
///
/// The integrator advances by the trapezoidal rule, which keeps the phase
/// trajectory within O(h^2) of the ideal PD law.
#[derive(Debug, Clone, Copy)]
pub struct PiPhase {
    pub gamma: f64,
    /// Constant phase offset standing in for the absent global angle reference.
    pub delta_theta: f64,
    last_v: f64,
}

impl PiPhase {
    pub fn new(delta_theta: f64) -> Self {
        PiPhase {
            gamma: 0.0,
            delta_theta,
            last_v: 0.0,
        }
    }

    /// Phase reference for the current voltage deviation.
    pub fn phase(&self, theta_star: f64, v_delta: f64, gains: &ControlGains) -> f64 {
        theta_star + self.delta_theta + gains.k_p * v_delta + gains.k_omega * self.gamma
    }

    /// Advance the integrator over one step of length `h`.
    pub fn step(&mut self, v_delta: f64, h: f64) {
        self.gamma += 0.5 * h * (self.last_v + v_delta);
        self.last_v = v_delta;
    }
}

/// Effective droop of a device seen from the grid: steady frequency deviation
/// per unit of sustained power response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DroopDevice {
    /// Synchronous generator with governor gain `k_g`.
    Governor { k_g: f64 },
    /// Controllable dc source behind a converter with gain `k_omega`.
    DcSource { k_g: f64, k_omega: f64 },
    /// Curtailed PV behind a converter with gain `k_omega`.
    Pv { k_pv: f64, k_omega: f64 },
    /// PMSG wind turbine: machine-side and grid-side converter gains with the
    /// combined speed/pitch sensitivity.
    PmsgWt {
        k_omega_grid: f64,
        k_omega_machine: f64,
        k_g: f64,
        k_w: f64,
    },
}

/// Steady-state droop coefficient of one device.
pub fn effective_droop(device: DroopDevice) -> Result<f64, ControlError> {
    let kappa = match device {
        DroopDevice::Governor { k_g } => {
            if k_g <= 0.0 {
                return Err(ControlError::ZeroSensitivity);
            }
            1.0 / k_g
        }
        DroopDevice::DcSource { k_g, k_omega } => {
            if k_g <= 0.0 {
                return Err(ControlError::ZeroSensitivity);
            }
            k_omega / k_g
        }
        DroopDevice::Pv { k_pv, k_omega } => {
            if k_pv <= 0.0 {
                return Err(ControlError::ZeroSensitivity);
            }
            k_omega / k_pv
        }
        DroopDevice::PmsgWt {
            k_omega_grid,
            k_omega_machine,
            k_g,
            k_w,
        } => {
            let total = k_g + k_w;
            if total <= 0.0 {
                return Err(ControlError::ZeroSensitivity);
            }
            k_omega_grid / (k_omega_machine * total)
        }
    };
    Ok(kappa)
}

/// Upper proportional gain bound for converters whose sources offer no
/// sustained response (MPP tracking, interlinking, HVDC): the largest
/// tolerated frequency deviation over the largest acceptable dc voltage
/// deviation.
pub fn k_omega_max(delta_omega_max: f64, delta_v_max: f64) -> f64 {
    delta_omega_max / delta_v_max
}
