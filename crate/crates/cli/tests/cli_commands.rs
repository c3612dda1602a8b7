use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use qubus_cli::{cmd_fig3, cmd_fig4, cmd_mc, cmd_purify, cmd_table, cmd_verify_circuit, RunConfig};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qubus-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn qubus(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_qubus")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn table_rows() {
    let out = cmd_table(&RunConfig::default()).unwrap();
    let csv = out.file("table.csv").unwrap();
    assert!(csv.starts_with("f_hz,t_tot_s,m_e,m_e_formula\n"));
    let r = rows(csv);
    let expected = [
        (240.0, 2.0),
        (8.0, 60.0),
        (0.33, 1500.0),
        (0.044, 1.5e4),
        (0.0152, 1.5e5),
    ];
    for (row, (t, m)) in r.iter().zip(expected) {
        let sig2 = |x: f64| {
            let e = 10f64.powf(x.abs().log10().floor() - 1.0);
            (x / e).round() * e
        };
        assert!((sig2(row[1]) - sig2(t)).abs() < 1e-12 * t, "{} vs {t}", row[1]);
        assert_eq!(row[2], m);
    }
    assert_eq!(r[0][3], 4.0);
    assert!(out.report.contains("M_E"));
}

#[test]
fn table_custom_row_matches_closed_form() {
    let cfg = RunConfig::parse("p_c = 1\ntau0_s = 1e-6").unwrap();
    let r = rows(cmd_table(&cfg).unwrap().file("table.csv").unwrap());
    for row in r {
        let p = qubus::chain::ChainParams {
            f_hz: row[0],
            ..cfg.chain_params()
        };
        assert_eq!(row[1], qubus::chain::t_tot(&p).unwrap());
    }
}

#[test]
fn fig3_rows() {
    let r = rows(cmd_fig3(&RunConfig::default()).unwrap().file("fig3.csv").unwrap());
    let at = |l0: f64| r.iter().find(|x| x[0] == l0 && x[1] == 0.9995).unwrap()[2];
    assert!((at(75.0) / 5e-5 - 1.0).abs() < 0.06);
    assert!((at(15.0) / 1.2e-3 - 1.0).abs() < 0.05, "{}", at(15.0));
    for l0 in [15.0, 27.0, 50.0, 75.0, 100.0] {
        let curve: Vec<&Vec<f64>> = r.iter().filter(|x| x[0] == l0).collect();
        assert!(curve.windows(2).all(|w| w[1][2] < w[0][2]), "P_g falls as F rises");
    }
    assert!(at(15.0) > at(27.0) && at(27.0) > at(50.0) && at(50.0) > at(75.0) && at(75.0) > at(100.0));
}

#[test]
fn fig4_rows() {
    let r = rows(cmd_fig4(&RunConfig::default()).unwrap().file("fig4.csv").unwrap());
    assert_eq!(r.len(), 25);
    for row in &r {
        assert!(row[3] >= row[4], "T_tot below L/c: {row:?}");
    }
    let point = r
        .iter()
        .find(|x| x[0] == 1200.0 && x[1] == 40e3 && x[2] == 0.5)
        .unwrap();
    assert!((point[3] - 8.0).abs() < 0.05);
    // linear in L for P_c >= 1/2
    let curve: Vec<&Vec<f64>> = r.iter().filter(|x| x[1] == 40e3 && x[2] == 0.5).collect();
    let slope = |i: usize| (curve[i + 1][3] - curve[i][3]) / (curve[i + 1][0] - curve[i][0]);
    for i in 0..curve.len() - 2 {
        assert!((slope(i) / slope(i + 1) - 1.0).abs() < 1e-9);
    }
    let steep: Vec<&Vec<f64>> = r.iter().filter(|x| x[1] == 40e3 && x[2] == 0.25).collect();
    assert!(steep[4][3] / steep[3][3] > 3.0);
}

#[test]
fn purify_examples() {
    let out = cmd_purify(&RunConfig::default()).unwrap();
    let r = rows(out.file("purify.csv").unwrap());
    assert!((r[0][3] / (-10f64).exp() - 1.0).abs() < 1e-9);
    let ideal = cmd_purify(&RunConfig::parse("p_s = 1").unwrap()).unwrap();
    assert_eq!(rows(ideal.file("purify.csv").unwrap())[0][5], 1.0);
    let sweep = cmd_purify(&RunConfig::parse("eta_d = 0.8\nlambda_sweep = 0, 1e-6, 1e-4, 1e-2").unwrap()).unwrap();
    let f: Vec<f64> = rows(sweep.file("purify.csv").unwrap()).iter().map(|x| x[5]).collect();
    assert_eq!(f.len(), 4);
    assert!(f.windows(2).all(|w| w[1] < w[0]), "{f:?}");
}

#[test]
fn verify_circuit_passes_and_fault_is_named() {
    let out = cmd_verify_circuit().unwrap();
    assert!(out.report.contains("PASS"));
    assert!(out.report.contains("unitarity U2"));
    let err = qubus_cli::cmd_verify_circuit_with(&qubus_cli::faulty_unitaries()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("block matches table"));
}

#[test]
fn mc_outputs_are_consistent() {
    let cfg = RunConfig::parse("attempts = 200000\ntrials = 20\np_g = 1e-3\nalpha_theta_sq = 0.05").unwrap();
    let out = cmd_mc(&cfg).unwrap();
    let link = rows(out.file("mc_link.csv").unwrap());
    assert!(link[0][6].abs() < 4.0, "z = {}", link[0][6]);
    let chain = rows(out.file("mc_chain.csv").unwrap());
    assert_eq!(chain.len(), 20);
    let hist = rows(out.file("mc_histogram.csv").unwrap());
    assert_eq!(hist.iter().map(|h| h[2]).sum::<f64>(), 20.0);
    let log = out.file("mc_events.log").unwrap();
    assert!(log.lines().all(|l| l.starts_with("event_") && l.contains(" = kind=")));
}

#[test]
fn binary_exit_codes_and_outputs() {
    let dir = scratch("exit");
    let out = dir.to_str().unwrap();
    assert_eq!(qubus(&["--out", out, "table"]).0, 0);
    assert!(read(&dir, "table.csv").starts_with("f_hz,"));
    assert_eq!(qubus(&["--out", out, "verify-circuit"]).0, 0);
    let (code, _, err) = qubus(&["--out", out, "verify-circuit", "--inject-fault"]);
    assert_eq!(code, 1);
    assert!(err.contains("block matches table"));

    let bad = dir.join("bad.cfg");
    fs::write(&bad, "f_hz = 1e6\nwhat = 3\n").unwrap();
    let (code, _, err) = qubus(&["--config", bad.to_str().unwrap(), "table"]);
    assert_eq!(code, 2);
    assert!(err.contains("what"));
    let (code, _, _) = qubus(&["--config", dir.join("missing.cfg").to_str().unwrap(), "table"]);
    assert_eq!(code, 2);
}

#[test]
fn binary_mc_is_byte_identical_per_seed() {
    let cfg_dir = scratch("det");
    let cfg = cfg_dir.join("run.cfg");
    fs::write(&cfg, "# small run\nattempts = 100000\np_g = 2e-3\n").unwrap();
    let run = |name: &str, seed: &str| {
        let dir = cfg_dir.join(name);
        let (code, _, err) = qubus(&[
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--trials",
            "50",
            "--out",
            dir.to_str().unwrap(),
            "mc",
        ]);
        assert_eq!(code, 0, "{err}");
        dir
    };
    let (a, b, c) = (run("a", "5"), run("b", "5"), run("c", "6"));
    for name in [
        "mc_link.csv",
        "mc_chain.csv",
        "mc_chain_summary.csv",
        "mc_histogram.csv",
        "mc_events.log",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    assert_ne!(read(&a, "mc_chain.csv"), read(&c, "mc_chain.csv"));
}
