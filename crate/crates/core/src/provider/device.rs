use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ProviderError;
use crate::qsim::{NoiseModel, MAX_QUBITS};

/// Static description of a device as it appears in the fleet file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeviceSpec {
    pub name: String,
    pub num_qubits: usize,
    #[serde(default)]
    pub is_simulator: bool,
    /// Time the device spends on each job. Ignored for simulators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_time_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_profile: Option<NoiseModel>,
}

impl DeviceSpec {
    pub fn real(name: &str, num_qubits: usize, service_time: Duration, flip: f64) -> Self {
        Self {
            name: name.to_string(),
            num_qubits,
            is_simulator: false,
            service_time_ms: Some(service_time.as_millis() as u64),
            noise_profile: Some(NoiseModel::new(flip).expect("flip probability in range")),
        }
    }

    pub fn simulator(name: &str, num_qubits: usize) -> Self {
        Self {
            name: name.to_string(),
            num_qubits,
            is_simulator: true,
            service_time_ms: None,
            noise_profile: None,
        }
    }

    pub fn service_time(&self) -> Duration {
        if self.is_simulator {
            Duration::ZERO
        } else {
            Duration::from_millis(self.service_time_ms.unwrap_or(0))
        }
    }
}

/// Live view of a device, including its current load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Device {
    pub name: String,
    pub num_qubits: usize,
    pub is_simulator: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_time_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_profile: Option<NoiseModel>,
    pub pending_jobs: usize,
}

impl Device {
    pub fn from_spec(spec: &DeviceSpec, pending_jobs: usize) -> Self {
        Self {
            name: spec.name.clone(),
            num_qubits: spec.num_qubits,
            is_simulator: spec.is_simulator,
            service_time_ms: spec.service_time_ms.filter(|_| !spec.is_simulator),
            noise_profile: spec.noise_profile,
            pending_jobs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub devices: Vec<DeviceSpec>,
}

impl Default for FleetConfig {
    /// Two noisy real devices and one simulator.
    fn default() -> Self {
        Self {
            devices: vec![
                DeviceSpec::real("mock_lima", 5, Duration::from_millis(100), 0.02),
                DeviceSpec::real("mock_guadalupe", 16, Duration::from_millis(250), 0.02),
                DeviceSpec::simulator("qasm_simulator", 20),
            ],
        }
    }
}

impl FleetConfig {
    pub fn new(devices: Vec<DeviceSpec>) -> Result<Self, ProviderError> {
        let fleet = Self { devices };
        fleet.validate()?;
        Ok(fleet)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidFleet(format!("{}: {e}", path.display())))?;
        let fleet: FleetConfig =
            serde_json::from_str(&text).map_err(|e| ProviderError::InvalidFleet(e.to_string()))?;
        fleet.validate()?;
        Ok(fleet)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.devices.is_empty() {
            return Err(ProviderError::InvalidFleet("fleet has no devices".into()));
        }
        let mut names = BTreeSet::new();
        for d in &self.devices {
            if !names.insert(d.name.as_str()) {
                return Err(ProviderError::InvalidFleet(format!(
                    "duplicate device `{}`",
                    d.name
                )));
            }
            if d.num_qubits == 0 || d.num_qubits > MAX_QUBITS {
                return Err(ProviderError::InvalidFleet(format!(
                    "device `{}` has {} qubits, expected 1..={MAX_QUBITS}",
                    d.name, d.num_qubits
                )));
            }
            if !d.is_simulator && d.service_time_ms.is_none() {
                return Err(ProviderError::InvalidFleet(format!(
                    "real device `{}` needs serviceTimeMs",
                    d.name
                )));
            }
        }
        Ok(())
    }
}

/// Eligible device with the fewest pending jobs; ties go to the
/// lexicographically smallest name.
pub fn least_busy(
    devices: &[Device],
    min_qubits: usize,
    real_only: bool,
) -> Result<&Device, ProviderError> {
    devices
        .iter()
        .filter(|d| d.num_qubits >= min_qubits && !(real_only && d.is_simulator))
        .min_by(|a, b| {
            a.pending_jobs
                .cmp(&b.pending_jobs)
                .then_with(|| a.name.cmp(&b.name))
        })
        .ok_or(ProviderError::NoEligibleDevice {
            min_qubits,
            real_only,
        })
}
