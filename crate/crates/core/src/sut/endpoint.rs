//! SUT endpoint grammar.
//!
//! ```text
//! sim:fixed:<dur>
//! sim:uniform:<lo>:<hi>
//! sim:lognormal:<mu>:<sigma>          (ln-nanoseconds)
//! sim:bimodal:<fast>:<slow>:<fast_weight>
//!     options, appended as further `:` fields:
//!     echo | truncate | cache=<window> | speedup=<f> | seed=<n>
//! tcp:<host>:<port>
//! ```
//!
//! Durations take a `ns`, `us`, `ms` or `s` suffix; bare numbers are ns.

use super::sim::{LatencyModel, SimulatedSut, SimulatedSutConfig};
use super::{SutContract, SutError};
use crate::ipc::RemoteSut;

#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    Sim {
        config: SimulatedSutConfig,
        /// Whether `seed=` was given; otherwise the run seed is used.
        seeded: bool,
    },
    Tcp(String),
}

pub fn parse_duration_ns(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (num, scale) = if let Some(n) = s.strip_suffix("ns") {
        (n, 1.0)
    } else if let Some(n) = s.strip_suffix("us") {
        (n, 1e3)
    } else if let Some(n) = s.strip_suffix("ms") {
        (n, 1e6)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1e9)
    } else {
        (s, 1.0)
    };
    let v: f64 = num
        .parse()
        .map_err(|_| format!("bad duration `{s}`"))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(format!("bad duration `{s}`"));
    }
    Ok((v * scale).round() as u64)
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse().map_err(|_| format!("bad number `{s}`"))
}

pub fn parse_endpoint(s: &str) -> Result<Endpoint, String> {
    let mut parts = s.split(':');
    match parts.next() {
        Some("tcp") => {
            let rest = &s[4..];
            if rest.rsplit_once(':').is_none_or(|(h, p)| h.is_empty() || p.parse::<u16>().is_err()) {
                return Err(format!("expected tcp:<host>:<port>, got `{s}`"));
            }
            Ok(Endpoint::Tcp(rest.to_string()))
        }
        Some("sim") => {
            let dist = parts.next().ok_or("missing distribution")?;
            let fields: Vec<&str> = parts.collect();
            let positional = match dist {
                "fixed" => 1,
                "uniform" | "lognormal" => 2,
                "bimodal" => 3,
                other => return Err(format!("unknown distribution `{other}`")),
            };
            if fields.len() < positional {
                return Err(format!("`{dist}` needs {positional} parameter(s)"));
            }
            let (params, options) = fields.split_at(positional);
            let latency = match dist {
                "fixed" => LatencyModel::Fixed(parse_duration_ns(params[0])?),
                "uniform" => LatencyModel::Uniform {
                    lo_ns: parse_duration_ns(params[0])?,
                    hi_ns: parse_duration_ns(params[1])?,
                },
                "lognormal" => LatencyModel::LogNormal {
                    mu: parse_f64(params[0])?,
                    sigma: parse_f64(params[1])?,
                },
                _ => LatencyModel::Bimodal {
                    fast_ns: parse_duration_ns(params[0])?,
                    slow_ns: parse_duration_ns(params[1])?,
                    fast_weight: parse_f64(params[2])?,
                },
            };
            let mut config = SimulatedSutConfig::new(latency);
            let mut seeded = false;
            let mut window_set = false;
            for opt in options {
                match opt.split_once('=') {
                    None if *opt == "echo" => config.echo_responses = true,
                    None if *opt == "truncate" => config.truncate_in_performance = true,
                    Some(("cache", w)) => {
                        config.cache_window = w.parse().map_err(|_| format!("bad window `{w}`"))?;
                        window_set = true;
                    }
                    Some(("speedup", f)) => config.cache_speedup = parse_f64(f)?,
                    Some(("seed", n)) => {
                        config.seed = n.parse().map_err(|_| format!("bad seed `{n}`"))?;
                        seeded = true;
                    }
                    _ => return Err(format!("unknown option `{opt}`")),
                }
            }
            if config.cache_speedup < 1.0 && !window_set {
                config.cache_window = 8;
            }
            config.validate()?;
            Ok(Endpoint::Sim { config, seeded })
        }
        _ => Err(format!("endpoint `{s}` must start with sim: or tcp:")),
    }
}

/// Opens the SUT an endpoint names. Simulated SUTs without an explicit seed
/// draw from `run_seed`.
pub fn open_sut(endpoint: &str, run_seed: u64) -> Result<Box<dyn SutContract>, SutError> {
    match parse_endpoint(endpoint).map_err(SutError::Config)? {
        Endpoint::Sim { mut config, seeded } => {
            if !seeded {
                config.seed = run_seed;
            }
            Ok(Box::new(SimulatedSut::new(endpoint, config)?))
        }
        Endpoint::Tcp(addr) => Ok(Box::new(RemoteSut::new(addr))),
    }
}
