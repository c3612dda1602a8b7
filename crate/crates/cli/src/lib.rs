//! Command implementations behind the `qubus` binary. Each command returns
//! its outputs in memory; the binary only writes them to disk.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use qubus::chain::{format_sig17, mc_distribute, schedule, t_tot, ChainParams, TABLE_FREQUENCIES_HZ};
use qubus::link::{default_fidelity_grid, fig3_sweep, p_g_exact, LinkInput, LinkSimulator, FIG3_DISTANCES_KM};
use qubus::num_complex::Complex;
use qubus::optics::DetectorParams;
use qubus::parity::{build_unitaries, verify_circuit, LocalUnitary, PortPair};
use qubus::qnd::{comparison_error, comparison_success, purify_source, QndParams, SourceState};

pub mod config;

pub use config::{InputState, McMode, RunConfig};

/// Residual threshold of `verify-circuit`.
pub const CIRCUIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn runtime(e: qubus::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn fmt(x: f64) -> String {
    format_sig17(x)
}

/// Named output files plus a text report for stdout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
    pub report: String,
}

impl Artifacts {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, s)| s.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        for (name, body) in &self.files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

struct Csv(String);

impl Csv {
    fn new(header: &[&str]) -> Self {
        Csv(header.join(",") + "\n")
    }

    fn row(&mut self, cells: &[String]) {
        self.0 += &cells.join(",");
        self.0.push('\n');
    }
}

pub fn cmd_purify(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let src = SourceState::new(cfg.p_s).map_err(runtime)?;
    let lambdas = if cfg.lambda_sweep.is_empty() {
        vec![cfg.lambda]
    } else {
        cfg.lambda_sweep.clone()
    };
    let mut csv = Csv::new(&[
        "lambda",
        "p_s",
        "p_success",
        "p_error",
        "click_prob",
        "conditional_fidelity",
    ]);
    let mut report = String::from("source purification\n");
    for lambda in lambdas {
        let q = QndParams {
            det: DetectorParams::new(cfg.eta_d, lambda).map_err(runtime)?,
            ..cfg.qnd_params().map_err(runtime)?
        };
        let r = purify_source(&src, &q).map_err(runtime)?;
        let (ps, pe) = (comparison_success(&q), comparison_error(&q));
        csv.row(&[
            fmt(lambda),
            fmt(cfg.p_s),
            fmt(ps),
            fmt(pe),
            fmt(r.click_prob),
            fmt(r.conditional_fidelity),
        ]);
        let _ = writeln!(
            report,
            "lambda={lambda:e} P_S={ps:.10} P_E={pe:.6e} click={:.6e} fidelity={:.10}",
            r.click_prob, r.conditional_fidelity
        );
    }
    Ok(Artifacts {
        files: vec![("purify.csv".into(), csv.0)],
        report,
    })
}

pub fn cmd_fig3(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let rows = fig3_sweep(&FIG3_DISTANCES_KM, &default_fidelity_grid(), cfg.atten_km).map_err(runtime)?;
    let mut csv = Csv::new(&["l0_km", "fidelity", "p_g"]);
    for r in &rows {
        csv.row(&[fmt(r.l0_km), fmt(r.fidelity), fmt(r.p_g)]);
    }
    Ok(Artifacts {
        files: vec![("fig3.csv".into(), csv.0)],
        report: format!("fig3: {} rows\n", rows.len()),
    })
}

fn human_time(t: f64) -> String {
    if t >= 1.0 {
        format!("{t:.3} s")
    } else {
        format!("{:.3} ms", t * 1e3)
    }
}

pub fn cmd_table(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let mut csv = Csv::new(&["f_hz", "t_tot_s", "m_e", "m_e_formula"]);
    let mut text = format!(
        "L = {} km, L0 = {} km, P_g = {}, P_c = {}\n{:>12}  {:>12}  {:>8}  {:>8}\n",
        cfg.l_km, cfg.l0_km, cfg.p_g, cfg.p_c, "f", "T_tot", "M_E", "formula"
    );
    for f in TABLE_FREQUENCIES_HZ {
        let p = ChainParams {
            f_hz: f,
            ..cfg.chain_params()
        };
        let s = schedule(&p).map_err(runtime)?;
        csv.row(&[fmt(f), fmt(s.t_tot_s), s.m_e.to_string(), s.m_e_formula.to_string()]);
        let _ = writeln!(
            text,
            "{:>12}  {:>12}  {:>8}  {:>8}",
            format!("{f:e} Hz"),
            human_time(s.t_tot_s),
            s.m_e,
            s.m_e_formula
        );
    }
    Ok(Artifacts {
        files: vec![("table.csv".into(), csv.0), ("table.txt".into(), text.clone())],
        report: text,
    })
}

pub fn cmd_fig4(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let mut csv = Csv::new(&["l_km", "f_hz", "p_c", "t_tot_s", "classical_s"]);
    let mut rows = 0;
    for &(f, pc) in &cfg.fig4_curves {
        for &l in &cfg.fig4_distances_km {
            let p = ChainParams {
                f_hz: f,
                p_c: pc,
                l_km: l,
                ..cfg.chain_params()
            };
            let t = t_tot(&p).map_err(|e| CliError::Config(e.to_string()))?;
            csv.row(&[fmt(l), fmt(f), fmt(pc), fmt(t), fmt(l / cfg.c_km_s)]);
            rows += 1;
        }
    }
    Ok(Artifacts {
        files: vec![("fig4.csv".into(), csv.0)],
        report: format!("fig4: {rows} rows\n"),
    })
}

/// Circuit unitaries with one sign of `U2` flipped.
pub fn faulty_unitaries() -> [LocalUnitary<f64>; 4] {
    let mut u = build_unitaries::<f64>();
    u[1].matrix[(2, 0)] = -u[1].matrix[(2, 0)];
    u
}

pub fn cmd_verify_circuit() -> Result<Artifacts, CliError> {
    cmd_verify_circuit_with(&build_unitaries())
}

/// Report on the given unitaries; the report is returned inside the error
/// on failure.
pub fn cmd_verify_circuit_with(unitaries: &[LocalUnitary<f64>; 4]) -> Result<Artifacts, CliError> {
    let r = verify_circuit(unitaries).map_err(runtime)?;
    let mut text = String::from("checks\n");
    for c in &r.checks {
        let mark = if c.passed(CIRCUIT_TOL) { "ok  " } else { "FAIL" };
        let _ = writeln!(text, "  {mark} {:<40} residual={:.3e}", c.name, c.residual);
    }
    text += "blocks\n";
    let z = |a: Complex<f64>| format!("{:+.4}{:+.4}i", a.re, a.im);
    for b in &r.blocks {
        let _ = writeln!(
            text,
            "  {:<5} {}  p={:.6} rank={} even={:.6} odd={:.6}  HH={} HV={} VH={} VV={}",
            b.input.name(),
            b.pair.label(),
            b.probability,
            b.schmidt_rank,
            b.even_weight,
            b.odd_weight,
            z(b.amplitudes[0]),
            z(b.amplitudes[1]),
            z(b.amplitudes[2]),
            z(b.amplitudes[3])
        );
    }
    let failures = r.failures(CIRCUIT_TOL);
    if failures.is_empty() {
        text += "PASS\n";
        Ok(Artifacts {
            files: vec![("circuit_report.txt".into(), text.clone())],
            report: text,
        })
    } else {
        text += "FAIL\n";
        Err(CliError::Verification(format!(
            "{} checks failed, first `{}`\n{text}",
            failures.len(),
            failures[0].name
        )))
    }
}

fn link_input(cfg: &RunConfig) -> LinkInput<f64> {
    match cfg.link_input {
        InputState::Hh => LinkInput::hh(),
        InputState::Bell(b) => LinkInput::bell(b),
    }
}

pub fn cmd_mc(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let mut out = Artifacts::default();
    if matches!(cfg.mc_mode, McMode::Link | McMode::Both) {
        let p = cfg.link_params().map_err(runtime)?;
        let sim = LinkSimulator::new(&link_input(cfg), p).map_err(runtime)?;
        let run = sim.run(cfg.attempts, cfg.seed);
        let exact = sim.success_probability();
        let sigma = run.sigma(exact);
        let mut header = vec![
            "attempts",
            "successes",
            "success_rate",
            "p_exact",
            "p_g_closed_form",
            "sigma",
            "z",
        ];
        let labels: Vec<String> = PortPair::ALL
            .iter()
            .map(|p| format!("successes_{}", p.label().to_lowercase()))
            .collect();
        header.extend(labels.iter().map(String::as_str));
        header.push("mean_fidelity");
        let mut csv = Csv::new(&header);
        let z = (run.success_rate() - exact) / sigma;
        let mut row = vec![
            run.attempts.to_string(),
            run.successes.to_string(),
            fmt(run.success_rate()),
            fmt(exact),
            fmt(p_g_exact(&p)),
            fmt(sigma),
            fmt(z),
        ];
        row.extend(run.port_successes.iter().map(u64::to_string));
        row.push(fmt(run.mean_fidelity));
        csv.row(&row);
        out.files.push(("mc_link.csv".into(), csv.0));
        let _ = writeln!(
            out.report,
            "link: {} / {} successes, rate {:.6e}, exact {:.6e}, z = {z:.3}",
            run.successes,
            run.attempts,
            run.success_rate(),
            exact
        );
    }
    if matches!(cfg.mc_mode, McMode::Chain | McMode::Both) {
        let p = cfg.chain_params();
        let r = mc_distribute(&p, cfg.seed, cfg.trials).map_err(runtime)?;
        let bound = t_tot(&p).map_err(runtime)?;
        let mut trials = Csv::new(&["trial", "t_tot_s", "failed_level"]);
        let failed: Vec<u32> = per_trial_failure(&r);
        for (i, (t, f)) in r.times_s.iter().zip(&failed).enumerate() {
            trials.row(&[i.to_string(), fmt(*t), f.to_string()]);
        }
        let mut summary = Csv::new(&[
            "trials",
            "mean_t_tot_s",
            "std_error_s",
            "t_tot_bound_s",
            "classical_s",
            "failed_trials",
            "blocked_attempts",
            "link_time_mean_s",
            "link_time_sem_s",
            "link_time_expected_s",
            "level_failures",
        ]);
        let levels: Vec<String> = r.level_failures.iter().map(u64::to_string).collect();
        summary.row(&[
            r.trials.to_string(),
            fmt(r.mean_time_s),
            fmt(r.std_error_s),
            fmt(bound),
            fmt(p.l_km / p.c_km_s),
            r.failed_trials.to_string(),
            r.blocked_attempts.to_string(),
            fmt(r.link_time_mean_s),
            fmt(r.link_time_sem_s),
            fmt(p.t0()),
            levels.join(";"),
        ]);
        let mut hist = Csv::new(&["bin_lo_s", "bin_hi_s", "count"]);
        for (k, c) in r.histogram.counts.iter().enumerate() {
            hist.row(&[fmt(r.histogram.edges[k]), fmt(r.histogram.edges[k + 1]), c.to_string()]);
        }
        out.files.push(("mc_chain.csv".into(), trials.0));
        out.files.push(("mc_chain_summary.csv".into(), summary.0));
        out.files.push(("mc_histogram.csv".into(), hist.0));
        out.files.push(("mc_events.log".into(), r.events.render()));
        let _ = writeln!(
            out.report,
            "chain: mean {:.6} s +- {:.2e} over {} trials (closed form {:.6} s), {} failed, {} blocked attempts",
            r.mean_time_s, r.std_error_s, r.trials, bound, r.failed_trials, r.blocked_attempts
        );
    }
    Ok(out)
}

fn per_trial_failure(r: &qubus::chain::McResult) -> Vec<u32> {
    r.failed_levels.iter().map(|l| l.unwrap_or(0)).collect()
}
