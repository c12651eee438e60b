//! TOML run configuration.
//!
//! ```toml
//! [params]      # m, m_b, m_l, k, l0, I_b, g (alpha is derived; may be given only if consistent)
//! [raibert]     # controller gains
//! [sim]         # dt, hops, max_duration, sigma_process, sigma_measurement, seed, controller
//! [references]  # apex_height, x_dot_d, psi_d
//! [planner]     # g_gamma, ldot_magnitude, height_over_offset_angle, intervals
//! ```
//!
//! Every section and key is optional; missing values take the defaults.
//! Errors name the offending key as `section.key`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{HopperError, Result};
use crate::model::HopperParams;
use crate::planner::PlannerConfig;
use crate::raibert::RaibertGains;
use crate::sim::{ControllerKind, References, SimConfig};

const SECTIONS: [&str; 5] = ["params", "raibert", "sim", "references", "planner"];

/// Relative tolerance for an explicit `alpha` against `m / I_b`.
const ALPHA_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunConfig {
    pub params: HopperParams,
    pub gains: RaibertGains,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ParamsSection {
    m: f64,
    m_b: f64,
    m_l: f64,
    k: f64,
    l0: f64,
    #[serde(rename = "I_b")]
    i_b: f64,
    g: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
}

impl Default for ParamsSection {
    fn default() -> Self {
        let p = HopperParams::default();
        Self { m: p.m, m_b: p.m_b, m_l: p.m_l, k: p.k, l0: p.l0, i_b: p.i_b, g: p.g, alpha: None }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimSection {
    dt: f64,
    hops: usize,
    max_duration: f64,
    sigma_process: f64,
    sigma_measurement: f64,
    seed: u64,
    controller: ControllerKind,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            dt: s.dt,
            hops: s.hops,
            max_duration: s.max_duration,
            sigma_process: s.sigma_process,
            sigma_measurement: s.sigma_measurement,
            seed: s.seed,
            controller: s.controller,
        }
    }
}

fn config_error(key: impl Into<String>, message: impl Into<String>) -> HopperError {
    HopperError::Config { key: key.into(), message: message.into() }
}

/// Deserializes one section. On failure the keys are retried one at a time
/// so the error can name the key responsible.
fn section<T: DeserializeOwned + Default>(doc: &Table, name: &str) -> Result<T> {
    let Some(value) = doc.get(name) else {
        return Ok(T::default());
    };
    let Value::Table(table) = value else {
        return Err(config_error(name, "expected a table"));
    };
    match Value::Table(table.clone()).try_into::<T>() {
        Ok(v) => Ok(v),
        Err(whole) => {
            for (key, v) in table {
                let mut single = Table::new();
                single.insert(key.clone(), v.clone());
                if let Err(e) = Value::Table(single).try_into::<T>() {
                    return Err(config_error(format!("{name}.{key}"), e.to_string().trim()));
                }
            }
            Err(config_error(name, whole.to_string().trim()))
        }
    }
}

fn explicit_f64(doc: &Table, section: &str, key: &str) -> Option<f64> {
    doc.get(section)?.as_table()?.get(key).and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
}

fn qualify(section: &str, e: HopperError) -> HopperError {
    match e {
        HopperError::InvalidParameter { name, value, reason } => {
            config_error(format!("{section}.{name}"), format!("{value}: {reason}"))
        }
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: Table = text.parse().map_err(|e: toml::de::Error| config_error("<document>", e.to_string().trim()))?;
        if let Some(unknown) = doc.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(config_error(unknown.as_str(), format!("unknown section; expected one of {}", SECTIONS.join(", "))));
        }

        let ps: ParamsSection = section(&doc, "params")?;
        let params = HopperParams { m: ps.m, m_b: ps.m_b, m_l: ps.m_l, k: ps.k, l0: ps.l0, i_b: ps.i_b, g: ps.g };
        params.validate().map_err(|e| qualify("params", e))?;
        if let Some(alpha) = ps.alpha {
            let derived = params.alpha();
            if !((alpha - derived).abs() <= ALPHA_RTOL * derived.abs()) {
                return Err(config_error("params.alpha", format!("{alpha} is inconsistent with m / I_b = {derived}")));
            }
        }

        let mut gains: RaibertGains = section(&doc, "raibert")?;
        let ss: SimSection = section(&doc, "sim")?;
        let mut references: References = section(&doc, "references")?;
        let planner: PlannerConfig = section(&doc, "planner")?;

        // references are authoritative; a gain-section value is accepted only if it agrees
        for key in ["x_dot_d", "psi_d"] {
            let in_gains = explicit_f64(&doc, "raibert", key);
            let in_refs = explicit_f64(&doc, "references", key);
            match (in_gains, in_refs) {
                (Some(a), Some(b)) if a != b => {
                    return Err(config_error(format!("raibert.{key}"), format!("{a} conflicts with references.{key} = {b}")));
                }
                (Some(a), None) => match key {
                    "x_dot_d" => references.x_dot_d = a,
                    _ => references.psi_d = a,
                },
                _ => {}
            }
        }
        gains.x_dot_d = references.x_dot_d;
        gains.psi_d = references.psi_d;
        gains.validate().map_err(|e| qualify("raibert", e))?;

        let sim = SimConfig {
            dt: ss.dt,
            hops: ss.hops,
            max_duration: ss.max_duration,
            sigma_process: ss.sigma_process,
            sigma_measurement: ss.sigma_measurement,
            seed: ss.seed,
            controller: ss.controller,
            references,
            planner,
        };
        sim.validate().map_err(|e| {
            let owner = match &e {
                HopperError::InvalidParameter { name: "apex_height" | "x_dot_d" | "psi_d", .. } => "references",
                HopperError::InvalidParameter { name: "g_gamma" | "ldot_magnitude" | "intervals", .. } => "planner",
                _ => "sim",
            };
            qualify(owner, e)
        })?;
        Ok(Self { params, gains, sim })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(path.display().to_string(), format!("cannot read config: {e}")))?;
        Self::from_toml_str(&text)
    }

    /// The configuration as TOML; parses back to an equal value.
    pub fn to_toml_string(&self) -> String {
        let p = &self.params;
        let s = &self.sim;
        let mut doc = Table::new();
        let mut put = |name: &str, v: Value| {
            doc.insert(name.to_string(), v);
        };
        let params = ParamsSection { m: p.m, m_b: p.m_b, m_l: p.m_l, k: p.k, l0: p.l0, i_b: p.i_b, g: p.g, alpha: None };
        put("params", Value::try_from(params).expect("plain numeric section"));
        put("raibert", Value::try_from(self.gains).expect("plain numeric section"));
        let sim = SimSection {
            dt: s.dt,
            hops: s.hops,
            max_duration: s.max_duration,
            sigma_process: s.sigma_process,
            sigma_measurement: s.sigma_measurement,
            seed: s.seed,
            controller: s.controller,
        };
        put("sim", Value::try_from(sim).expect("plain section"));
        put("references", Value::try_from(s.references).expect("plain numeric section"));
        put("planner", Value::try_from(s.planner).expect("plain section"));
        toml::to_string(&doc).expect("tables serialize")
    }
}
