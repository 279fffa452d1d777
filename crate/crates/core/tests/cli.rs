//! End-to-end runs of the `ppr` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pp_reparam::cli::output::verify_manifest;
use pp_reparam::cli::pipeline::FitSummary;

fn ppr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppr")).args(args).current_dir(cwd).env_remove("PPR_OUTPUT_DIR").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|c| c.parse::<f64>().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

fn summary(dir: &Path) -> FitSummary {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

const STATIONARY: &str = r#"mu = 80.0
sigma = 15.0
xi = 0.05
m = 1.0
u = 30.0
count = { kind = "fixed", r = 300 }
seed = 11
"#;

/// Simulate the stationary study data into `dir/sim`.
fn simulated(dir: &Path) -> PathBuf {
    write(dir, "sim.toml", STATIONARY);
    ok(ppr(&["simulate", "--config", "sim.toml", "--out", "sim"], dir));
    dir.join("sim")
}

#[test]
fn fit_writes_complete_verified_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated(tmp.path());
    assert_eq!(verify_manifest(&sim).unwrap(), vec!["data.csv", "fit.toml", "simulation.toml"]);
    ok(ppr(&["fit", "--config", "sim/fit.toml", "--iterations", "8000", "--out", "fit"], tmp.path()));
    let out = tmp.path().join("fit");
    let listed = verify_manifest(&out).unwrap();
    let manifest = std::fs::read_to_string(out.join("MANIFEST")).unwrap();
    assert!(manifest.starts_with("status: complete\n"));
    for name in files(&out).keys().filter(|n| *n != "MANIFEST") {
        assert!(listed.contains(name), "{name} missing from manifest");
    }

    let s = summary(&out);
    assert_eq!(s.r, 300);
    let sel = s.selection.as_ref().unwrap();
    let (m1, m2) = (sel.m1.unwrap(), sel.m2.unwrap());
    assert!(m1 <= s.m_chosen && s.m_chosen <= m2, "{m1} {} {m2}", s.m_chosen);
    assert_eq!(s.k, 1.0);

    let (header, rows) = read_csv(&out.join("return_levels.csv"));
    assert_eq!(header, ["N", "mean", "lo", "hi"]);
    for w in rows.windows(2) {
        assert!(w[1][0] > w[0][0] && w[1][1] > w[0][1]);
    }
    for r in &rows {
        assert!(r[2] < r[3]);
    }

    for name in &s.parameters {
        let (header, rows) = read_csv(&out.join(format!("density_{name}.csv")));
        assert_eq!(header, ["value", "density"]);
        let area: f64 = rows.windows(2).map(|w| 0.5 * (w[1][1] + w[0][1]) * (w[1][0] - w[0][0])).sum();
        assert!((area - 1.0).abs() < 1e-3, "{name}: {area}");
    }

    let (header, trace) = read_csv(&out.join("trace_k.csv"));
    assert_eq!(header, ["chain", "iteration", "mu", "sigma", "xi"]);
    assert_eq!(s.rows, 300);
    assert_eq!(trace.len(), s.chains * (s.iterations - s.burn_in));
    let text = std::fs::read_to_string(out.join("trace_m.csv")).unwrap();
    assert!(!text.contains('\r') && text.ends_with('\n'));
}

#[test]
fn outputs_are_byte_identical_under_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    simulated(tmp.path());
    let args = ["fit", "--config", "sim/fit.toml", "--iterations", "3000", "--chains", "2", "--out", "fit"];
    ok(ppr(&args, tmp.path()));
    let first = files(&tmp.path().join("fit"));
    ok(ppr(&args, tmp.path()));
    assert_eq!(first, files(&tmp.path().join("fit")));
    ok(ppr(&["fit", "--config", "sim/fit.toml", "--iterations", "3000", "--chains", "2", "--seed", "5", "--out", "other"], tmp.path()));
    assert_ne!(first["trace_m.csv"], std::fs::read(tmp.path().join("other/trace_m.csv")).unwrap());
}

#[test]
fn effective_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    simulated(tmp.path());
    ok(ppr(&["fit", "--config", "sim/fit.toml", "--iterations", "3000", "--out", "a"], tmp.path()));
    ok(ppr(&["fit", "--config", "a/effective_config.toml", "--out", "b"], tmp.path()));
    let (a, b) = (files(&tmp.path().join("a")), files(&tmp.path().join("b")));
    for name in ["trace_m.csv", "trace_k.csv", "return_levels.csv", "summary.json"] {
        assert_eq!(a[name], b[name], "{name}");
    }
}

#[test]
fn predict_reuses_a_saved_fit() {
    let tmp = tempfile::tempdir().unwrap();
    simulated(tmp.path());
    ok(ppr(&["fit", "--config", "sim/fit.toml", "--iterations", "3000", "--out", "fit"], tmp.path()));
    ok(ppr(&["predict", "--run", "fit"], tmp.path()));
    let rl = |p: &str| std::fs::read(tmp.path().join(p)).unwrap();
    assert_eq!(rl("fit/return_levels.csv"), rl("fit/predict/return_levels.csv"));
    verify_manifest(&tmp.path().join("fit/predict")).unwrap();

    let cfg = std::fs::read_to_string(tmp.path().join("fit/effective_config.toml")).unwrap();
    let cfg = cfg.replace("predictive_levels = []", "predictive_levels = [100.0, 150.0, 200.0]");
    write(tmp.path(), "levels.toml", &cfg);
    ok(ppr(&["predict", "--run", "fit", "--config", "levels.toml", "--out", "levels"], tmp.path()));
    let (header, rows) = read_csv(&tmp.path().join("levels/predictive.csv"));
    assert_eq!(header[..3], ["scenario", "level", "probability"]);
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[1][2] > w[0][2]);
    }
    for r in &rows {
        assert!((r[6] - 1.0 / (1.0 - r[2])).abs() <= 1e-9 * r[6]);
    }
}

#[test]
fn quantile_threshold_and_timestamps() {
    use rand::{Rng, SeedableRng};
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
    let mut text = String::from("date,rain\n");
    for year in 1950..2005 {
        for day in 1..=365 {
            // Exponential daily totals with a heavier upper tail.
            let e: f64 = -rng.gen::<f64>().ln();
            let v = 4.0 * ((0.09 * e).exp_m1() / 0.09);
            text.push_str(&format!("{year}-{:03},{v}\n", day));
        }
    }
    write(tmp.path(), "daily.csv", &text);
    write(
        tmp.path(),
        "fit.toml",
        "[data]\npath = \"daily.csv\"\nvalue = \"rain\"\ntimestamp = \"date\"\nthreshold_quantile = 0.956\n[mcmc]\niterations = 3000\n",
    );
    ok(ppr(&["fit", "--config", "fit.toml"], tmp.path()));
    let s = summary(&tmp.path().join("ppr_out"));
    assert_eq!(s.rows, 55 * 365);
    assert_eq!(s.n_years, 55.0);
    assert_eq!(s.k, 55.0);
    let frac = s.r as f64 / s.rows as f64;
    assert!((frac - 0.044).abs() < 0.001, "{frac}");
    assert!((s.r as f64 - 880.0).abs() < 10.0);
}

#[test]
fn covariate_fit_recovers_slope_sign() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "sim.toml",
        "mu = 90.0\nmu1 = 30.0\nsigma = 15.0\nxi = -0.05\nm = 1.0\nu = 15.0\ncount = { kind = \"fixed\", r = 233 }\ncovariate = { kind = \"exponential\", rate = 2.0 }\nseed = 4\n",
    );
    ok(ppr(&["simulate", "--config", "sim.toml", "--out", "sim"], tmp.path()));
    ok(ppr(&["fit", "--config", "sim/fit.toml", "--iterations", "6000", "--out", "fit"], tmp.path()));
    let s = summary(&tmp.path().join("fit"));
    assert_eq!(s.parameters, ["mu0", "mu1", "sigma", "xi"]);
    assert!(s.selection.as_ref().unwrap().m_star.is_some());
    let slope = s.posterior_k.iter().find(|p| p.name == "mu1").unwrap();
    assert!(slope.q025 > 0.0, "{slope:?}");
    assert!(s.covariate_centre.is_some());
    let (_, rows) = read_csv(&tmp.path().join("fit/density_mu1.csv"));
    let positive: f64 = rows.windows(2).filter(|w| w[0][0] >= 0.0).map(|w| 0.5 * (w[1][1] + w[0][1]) * (w[1][0] - w[0][0])).sum();
    assert!(positive > 0.99, "{positive}");
}

#[test]
fn sweep_efficiency_peaks_near_upper_root() {
    let tmp = tempfile::tempdir().unwrap();
    simulated(tmp.path());
    ok(ppr(&["fit", "--config", "sim/fit.toml", "--iterations", "2000", "--out", "fit"], tmp.path()));
    let m2 = summary(&tmp.path().join("fit")).selection.unwrap().m2.unwrap();
    ok(ppr(
        &["sweep", "--config", "sim/fit.toml", "--iterations", "30000", "--m-values", "1,10,30,100,200,310,600,1500,5000", "--out", "sweep"],
        tmp.path(),
    ));
    let (header, rows) = read_csv(&tmp.path().join("sweep/sweep.csv"));
    let col = header.iter().position(|h| h == "ess_mu").unwrap();
    let best = rows.iter().max_by(|a, b| a[col].total_cmp(&b[col])).unwrap();
    assert!(best[0] >= 0.5 * m2 && best[0] <= 2.0 * m2, "peak at m = {} with m2 = {m2}", best[0]);
    assert!(best[col] > 50.0 * rows[0][col]);
    let tc = header.iter().position(|h| h == "total_correlation").unwrap();
    assert!(rows[0][tc] > best[tc]);
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    simulated(tmp.path());
    let target = tmp.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_ppr"))
        .args(["fit", "--config", "sim/fit.toml", "--iterations", "2000"])
        .current_dir(tmp.path())
        .env("PPR_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    ok(o);
    verify_manifest(&target).unwrap();
    assert!(!tmp.path().join("sim/fit").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&ppr(&["fit", "--config", "missing.toml"], dir)), 2);
    assert_eq!(code(&ppr(&["fit"], dir)), 2);
    assert_eq!(code(&ppr(&["--help"], dir)), 0);
    write(dir, "d.csv", "value,z\n31,0.2\n12,\n45,\n8,0.1\n");
    write(dir, "unknown.toml", "[data]\npath = \"d.csv\"\nthreshold = 30\nn_years = 1\nbogus = 1\n");
    assert_eq!(code(&ppr(&["fit", "--config", "unknown.toml"], dir)), 2);
    write(dir, "m.toml", "[data]\npath = \"d.csv\"\nthreshold = 30\nn_years = 1\n");
    assert_eq!(code(&ppr(&["fit", "--config", "m.toml", "--m", "many"], dir)), 2);

    write(dir, "high.toml", "[data]\npath = \"d.csv\"\nthreshold = 100\nn_years = 1\n");
    let o = ppr(&["fit", "--config", "high.toml", "--out", "high"], dir);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("100") && err.contains("45"), "{err}");
    let manifest = std::fs::read_to_string(dir.join("high/MANIFEST")).unwrap();
    assert!(manifest.starts_with("status: incomplete (stage ingest)"), "{manifest}");

    write(dir, "cov.toml", "[data]\npath = \"d.csv\"\ncovariate = \"z\"\nthreshold = 30\nn_years = 1\n");
    let o = ppr(&["fit", "--config", "cov.toml"], dir);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lines 4"));

    write(dir, "bad.csv", "value\n31\nabc\n");
    write(dir, "bad.toml", "[data]\npath = \"bad.csv\"\nthreshold = 30\nn_years = 1\n");
    let o = ppr(&["fit", "--config", "bad.toml"], dir);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    // Tied exceedances leave the shape estimate far below the range with finite information.
    write(dir, "tied.csv", "value\n31\n31\n31\n5\n");
    write(dir, "tied.toml", "[data]\npath = \"tied.csv\"\nthreshold = 30\nn_years = 1\n[mcmc]\niterations = 2000\n");
    let o = ppr(&["fit", "--config", "tied.toml", "--out", "tied"], dir);
    assert_eq!(code(&o), 4);
    let manifest = std::fs::read_to_string(dir.join("tied/MANIFEST")).unwrap();
    assert!(manifest.starts_with("status: incomplete (stage select)"), "{manifest}");
    verify_manifest(&dir.join("tied")).unwrap();

    write(dir, "unsupported.toml", "mu = 0.0\nsigma = 1.0\nxi = -0.5\nm = 1.0\nu = 5.0\ncount = { kind = \"poisson\" }\nseed = 1\n");
    assert_eq!(code(&ppr(&["simulate", "--config", "unsupported.toml", "--out", "s"], dir)), 2);
}

#[test]
fn chosen_block_count_mixes_better_than_one() {
    let tmp = tempfile::tempdir().unwrap();
    simulated(tmp.path());
    ok(ppr(&["fit", "--config", "sim/fit.toml", "--iterations", "20000", "--out", "auto"], tmp.path()));
    ok(ppr(&["fit", "--config", "sim/fit.toml", "--iterations", "20000", "--m", "1", "--out", "one"], tmp.path()));
    let (auto, one) = (summary(&tmp.path().join("auto")), summary(&tmp.path().join("one")));
    assert_eq!(one.m_chosen, 1.0);
    for (j, name) in auto.parameters.iter().enumerate() {
        let (a, b) = (auto.ess_m[j].unwrap(), one.ess_m[j].unwrap());
        assert!(a > b, "{name}: {a} vs {b}");
    }
}

#[test]
fn fixed_block_count_run_equals_library_composition() {
    use pp_reparam::cli::config::RunConfig;
    use pp_reparam::cli::ingest::ingest;
    use pp_reparam::cli::pipeline::{compute_products, merge_chains, mode_at, sample_at, ModelContext};
    use pp_reparam::mcmc::back_transform_chain;

    let tmp = tempfile::tempdir().unwrap();
    simulated(tmp.path());
    ok(ppr(&["fit", "--config", "sim/fit.toml", "--iterations", "4000", "--m", "300", "--out", "fit"], tmp.path()));
    let s = summary(&tmp.path().join("fit"));

    let cfg = RunConfig::load(&tmp.path().join("fit/effective_config.toml")).unwrap();
    let ing = ingest(&cfg.data, None).unwrap();
    let ctx = ModelContext::new(&ing.data, None, cfg.model.prior(ing.n_years));
    let mode = mode_at(&ctx, 300.0, None).unwrap();
    assert_eq!(mode, s.mode_m);
    let chains = sample_at(&ctx, 300.0, &mode, &cfg.mcmc).unwrap();
    let annual: Vec<_> = chains.iter().map(|c| back_transform_chain(c, ing.n_years).unwrap()).collect();
    let (curve, _) = compute_products(&cfg, &ing, &merge_chains(&annual).unwrap()).unwrap();
    assert_eq!(curve, s.return_levels);
    let accept: Vec<Vec<f64>> = chains.iter().map(|c| c.acceptance_rates()).collect();
    assert_eq!(accept, s.acceptance);
}
