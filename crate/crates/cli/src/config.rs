use std::collections::BTreeSet;
use std::path::PathBuf;

use qubus::chain::ChainParams;
use qubus::link::LinkParams;
use qubus::num_complex::Complex;
use qubus::optics::DetectorParams;
use qubus::parity::BellState;
use qubus::qnd::{default_delta, QndParams, SourceState};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McMode {
    Link,
    Chain,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputState {
    Hh,
    Bell(BellState),
}

/// Flat run configuration. Every key is optional.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // link
    pub alpha_theta_sq: f64,
    pub theta: f64,
    pub l0_km: f64,
    pub atten_km: f64,
    pub f_hz: f64,
    pub c_km_s: f64,
    pub eta_d: f64,
    pub lambda: f64,
    /// Port-discrimination probe; `None` picks the default for `theta`.
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub link_input: InputState,
    // chain
    pub l_km: f64,
    pub p_g: f64,
    pub p_c: f64,
    pub tau0_s: f64,
    pub tau_d_s: Option<f64>,
    pub eta_m: f64,
    pub link_fidelity: f64,
    pub memory_modes: Option<u64>,
    // source purification
    pub p_s: f64,
    pub qnd_alpha_theta: f64,
    pub qnd_theta: f64,
    pub lambda_sweep: Vec<f64>,
    // sweeps
    pub fig4_distances_km: Vec<f64>,
    pub fig4_curves: Vec<(f64, f64)>,
    // run control
    pub seed: u64,
    pub trials: u64,
    pub attempts: u64,
    pub mc_mode: McMode,
    pub output_path: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha_theta_sq: 1e-3,
            theta: 1e-3,
            l0_km: 75.0,
            atten_km: 25.0,
            f_hz: 40e3,
            c_km_s: 2e5,
            eta_d: 1.0,
            lambda: 0.0,
            delta: None,
            gamma: None,
            link_input: InputState::Hh,
            l_km: 1200.0,
            p_g: 5e-5,
            p_c: 0.5,
            tau0_s: 0.0,
            tau_d_s: None,
            eta_m: 1.0,
            link_fidelity: 0.9995,
            memory_modes: None,
            p_s: 0.5,
            qnd_alpha_theta: 2.0 * 5f64.sqrt(),
            qnd_theta: 1e-6,
            lambda_sweep: Vec::new(),
            fig4_distances_km: vec![150.0, 300.0, 600.0, 1200.0, 2400.0],
            fig4_curves: vec![(1.33e3, 0.5), (40e3, 0.5), (40e3, 0.25), (1e6, 0.5), (100e6, 0.5)],
            seed: 1,
            trials: 200,
            attempts: 1_000_000,
            mc_mode: McMode::Both,
            output_path: PathBuf::from("out"),
        }
    }
}

fn bad(line: usize, key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: `{key}`: {msg}"))
}

fn num(line: usize, key: &str, v: &str) -> Result<f64, CliError> {
    let x: f64 = v
        .parse()
        .map_err(|_| bad(line, key, format!("`{v}` is not a number")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(bad(line, key, "must be finite"))
    }
}

fn int(line: usize, key: &str, v: &str) -> Result<u64, CliError> {
    // accept 1e7 style integers
    if let Ok(n) = v.parse::<u64>() {
        return Ok(n);
    }
    let x = num(line, key, v)?;
    if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(bad(line, key, format!("`{v}` is not a non-negative integer")))
    }
}

fn optional<T>(v: &str, parse: impl FnOnce(&str) -> Result<T, CliError>) -> Result<Option<T>, CliError> {
    match v {
        "auto" | "none" => Ok(None),
        _ => parse(v).map(Some),
    }
}

fn list(line: usize, key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(line, key, s))
        .collect()
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {line}: expected `key = value`")))?;
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(bad(line, key, "duplicate key"));
            }
            cfg.set(line, key, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), CliError> {
        let n = |v: &str| num(line, key, v);
        match key {
            "alpha_theta_sq" => self.alpha_theta_sq = n(v)?,
            "theta" => self.theta = n(v)?,
            "l0_km" => self.l0_km = n(v)?,
            "atten_km" => self.atten_km = n(v)?,
            "f_hz" => self.f_hz = n(v)?,
            "c_km_s" => self.c_km_s = n(v)?,
            "eta_d" => self.eta_d = n(v)?,
            "lambda" => self.lambda = n(v)?,
            "delta" => self.delta = optional(v, n)?,
            "gamma" => self.gamma = optional(v, n)?,
            "link_input" => {
                self.link_input = match v {
                    "hh" => InputState::Hh,
                    _ => InputState::Bell(
                        BellState::ALL
                            .into_iter()
                            .find(|b| b.name().eq_ignore_ascii_case(v))
                            .ok_or_else(|| bad(line, key, "expected hh, phi+, phi-, psi+ or psi-"))?,
                    ),
                }
            }
            "l_km" => self.l_km = n(v)?,
            "p_g" => self.p_g = n(v)?,
            "p_c" => self.p_c = n(v)?,
            "tau0_s" => self.tau0_s = n(v)?,
            "tau_d_s" => self.tau_d_s = optional(v, n)?,
            "eta_m" => self.eta_m = n(v)?,
            "link_fidelity" => self.link_fidelity = n(v)?,
            "memory_modes" => self.memory_modes = optional(v, |v| int(line, key, v))?,
            "p_s" => self.p_s = n(v)?,
            "qnd_alpha_theta" => self.qnd_alpha_theta = n(v)?,
            "qnd_theta" => self.qnd_theta = n(v)?,
            "lambda_sweep" => self.lambda_sweep = list(line, key, v)?,
            "fig4_distances_km" => self.fig4_distances_km = list(line, key, v)?,
            "fig4_curves" => {
                self.fig4_curves = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|pair| {
                        let (f, pc) = pair
                            .split_once(':')
                            .ok_or_else(|| bad(line, key, "expected f_hz:p_c pairs"))?;
                        Ok((n(f.trim())?, n(pc.trim())?))
                    })
                    .collect::<Result<_, CliError>>()?
            }
            "seed" => self.seed = int(line, key, v)?,
            "trials" => self.trials = int(line, key, v)?,
            "attempts" => self.attempts = int(line, key, v)?,
            "mc_mode" => {
                self.mc_mode = match v {
                    "link" => McMode::Link,
                    "chain" => McMode::Chain,
                    "both" => McMode::Both,
                    _ => return Err(bad(line, key, "expected link, chain or both")),
                }
            }
            "output_path" => self.output_path = PathBuf::from(v),
            _ => return Err(bad(line, key, "unknown key")),
        }
        Ok(())
    }

    /// Revalidates every physical constraint.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: qubus::Error| CliError::Config(e.to_string());
        self.link_params().map_err(cfg)?;
        self.chain_params().validate().map_err(cfg)?;
        for &(f, pc) in &self.fig4_curves {
            ChainParams {
                f_hz: f,
                p_c: pc,
                ..self.chain_params()
            }
            .validate()
            .map_err(cfg)?;
        }
        self.chain_params().levels().map_err(cfg)?;
        self.qnd_params().map_err(cfg)?;
        SourceState::new(self.p_s).map_err(cfg)?;
        for &l in &self.lambda_sweep {
            DetectorParams::new(self.eta_d, l).map_err(cfg)?;
        }
        if self.trials == 0 || self.attempts == 0 {
            return Err(CliError::Config("trials and attempts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn detector(&self) -> Result<DetectorParams<f64>, qubus::Error> {
        DetectorParams::new(self.eta_d, self.lambda)
    }

    pub fn link_params(&self) -> Result<LinkParams<f64>, qubus::Error> {
        let base = LinkParams::with_strength(self.alpha_theta_sq, self.theta);
        let p = LinkParams {
            l0_km: self.l0_km,
            atten_km: self.atten_km,
            f_hz: self.f_hz,
            c_km_s: self.c_km_s,
            det: self.detector()?,
            delta: match self.delta {
                Some(d) => d,
                None => default_delta(self.theta)?,
            },
            gamma: self.gamma.unwrap_or(base.gamma),
            ..base
        };
        p.validate()?;
        Ok(p)
    }

    pub fn chain_params(&self) -> ChainParams<f64> {
        ChainParams {
            l0_km: self.l0_km,
            l_km: self.l_km,
            f_hz: self.f_hz,
            p_g: self.p_g,
            p_c: self.p_c,
            tau0_s: self.tau0_s,
            tau_d_s: self.tau_d_s,
            c_km_s: self.c_km_s,
            eta_d: self.eta_d,
            eta_m: self.eta_m,
            link_fidelity: self.link_fidelity,
            memory_modes: self.memory_modes,
        }
    }

    pub fn qnd_params(&self) -> Result<QndParams<f64>, qubus::Error> {
        QndParams::new(
            Complex::new(self.qnd_alpha_theta / self.qnd_theta, 0.0),
            self.qnd_theta,
            self.detector()?,
        )
    }
}
