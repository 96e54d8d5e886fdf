//! One-parameter sweeps over a shared trained model.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::config::{ExperimentConfig, Method};
use super::runner::{run_stream, Prepared};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    Lambda,
    KArrays,
    LBits,
    Tau,
    Gamma,
    Sigma,
}

impl SweepParam {
    pub const ALL: [SweepParam; 6] = [
        SweepParam::Lambda,
        SweepParam::KArrays,
        SweepParam::LBits,
        SweepParam::Tau,
        SweepParam::Gamma,
        SweepParam::Sigma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::KArrays => "K_arrays",
            SweepParam::LBits => "L_bits",
            SweepParam::Tau => "tau",
            SweepParam::Gamma => "gamma",
            SweepParam::Sigma => "sigma",
        }
    }

    /// A copy of `config` with this parameter set to `value`.
    pub fn apply(self, config: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = config.clone();
        let integer = |v: f64| -> Result<u64> {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u64)
            } else {
                Err(Error::InvalidParameter(format!(
                    "{} needs a positive integer, got {v}",
                    self.name()
                )))
            }
        };
        match self {
            SweepParam::Lambda => c.compensation.lambda = value,
            SweepParam::Gamma => c.compensation.gamma = value,
            SweepParam::Tau => c.compensation.tau = value,
            SweepParam::Sigma => c.memory.sigma = Some(value),
            SweepParam::KArrays => c.memory.num_arrays = integer(value)? as usize,
            SweepParam::LBits => c.memory.bits_per_hash = integer(value)? as u32,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown sweep parameter '{s}'")))
    }
}

/// Slot-mean metrics of one method at one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub method: Method,
    pub gauc: f64,
    pub auc: f64,
}

/// Runs the stream once per value, with every other setting (including all
/// seeds) shared. Only the compensating methods of the config are swept.
pub fn sweep(
    prepared: &Prepared,
    config: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("sweep values"));
    }
    let methods: Vec<Method> = config
        .methods
        .run
        .iter()
        .copied()
        .filter(|m| m.compensates())
        .collect();
    if methods.is_empty() {
        return Err(Error::Config(
            "a sweep needs reloop2 or incremental+reloop2 in [methods] run".into(),
        ));
    }
    let n_slots = prepared.slots.len();
    let mut points = Vec::with_capacity(values.len() * methods.len());
    for &value in values {
        let mut c = param.apply(config, value)?;
        c.methods.run = methods.clone();
        let results = run_stream(prepared, &c, None)?;
        log::info!("{param} = {value} done");
        for &method in &methods {
            points.push(SweepPoint {
                value,
                method,
                gauc: results.mean(method, 0..n_slots, |m| m.gauc),
                auc: results.mean(method, 0..n_slots, |m| m.auc),
            });
        }
    }
    Ok(points)
}

/// `param,value,method,gauc,auc`.
pub fn sweep_csv(param: SweepParam, points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["param", "value", "method", "gauc", "auc"])?;
    for p in points {
        w.write_record([
            param.name().to_string(),
            p.value.to_string(),
            p.method.to_string(),
            p.gauc.to_string(),
            p.auc.to_string(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<sweep csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
