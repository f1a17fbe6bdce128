use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn slr(dir: &Path, sub: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{sub}.toml"));
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_slr"))
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .args(extra)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_dir(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn unknown_key_is_a_config_error() {
    let t = TempDir::new().unwrap();
    let o = slr(t.path(), "bo-scan", "alpha = [1.0]\nalpah = 2\n", &["--out", "o"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("alpah"));
    assert!(!out_dir(&t, "o").exists(), "nothing is written on a config error");
}

#[test]
fn empty_alpha_grid_is_a_config_error() {
    let t = TempDir::new().unwrap();
    let o = slr(t.path(), "bo-scan", "alpha = []\n", &["--out", "o"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!out_dir(&t, "o").exists());
}

#[test]
fn decreasing_alpha_grid_is_a_config_error() {
    let t = TempDir::new().unwrap();
    let o = slr(t.path(), "erm-curve", "alpha = [2.0, 1.0]\n", &["--out", "o"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn zero_runs_is_a_config_error() {
    let t = TempDir::new().unwrap();
    let o = slr(t.path(), "flow-stability", "runs = 0\n", &["--out", "o"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn length_law_not_summing_to_one_is_a_config_error() {
    let t = TempDir::new().unwrap();
    let o = slr(t.path(), "gen-data", "length_law = \"1:0.5,2:0.4\"\n", &["--out", "o"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn missing_config_flag_is_a_config_error() {
    let t = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_slr")).arg("mismatch").current_dir(t.path()).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn unconverged_points_exit_3_and_are_still_written() {
    let t = TempDir::new().unwrap();
    let o = slr(t.path(), "bo-scan", "alpha = [1.2, 1.5]\nn_mc = 2000\nmax_iter = 1\n", &["--out", "o"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let csv = fs::read_to_string(out_dir(&t, "o").join("bo_scan.csv")).unwrap();
    assert!(csv.lines().skip(2).any(|l| l.ends_with(",false")));
}

#[test]
fn csv_carries_version_config_and_header() {
    let t = TempDir::new().unwrap();
    let o = slr(t.path(), "pop-figure", "task = \"spiked\"\nnu = 1.0\nlength_law = \"2\"\nn_mc = 2000\n", &["--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out_dir(&t, "o").join("pop_figure.csv")).unwrap();
    let mut lines = csv.lines();
    let comment = lines.next().unwrap();
    assert!(comment.starts_with(&format!("# slr {}", env!("CARGO_PKG_VERSION"))));
    assert!(comment.contains("n_mc=2000") && comment.contains("seed=0"));
    assert_eq!(lines.next().unwrap(), "task,nu,L_law_id,activation,m_kk,m_vv,R_kk,R_vv,risk,std_err,n_mc,seed");
    assert_eq!(lines.count(), 5, "four activations and the Bayes row");
    assert!(out_dir(&t, "o").join("pop_figure_spiked_L2.svg").exists());
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let t = TempDir::new().unwrap();
    let cfg = "task = [\"spiked\", \"max\"]\nnu = [0.5, 2.0]\nlength_law = \"2\"\nactivation = [\"softmax\", \"linear\"]\nn_mc = 2000\n";
    let a = slr(t.path(), "pop-figure", cfg, &["--out", "a", "--workers", "1"]);
    let b = slr(t.path(), "pop-figure", cfg, &["--out", "b", "--workers", "3"]);
    let c = slr(t.path(), "pop-figure", cfg, &["--out", "c", "--workers", "1", "--seed", "5"]);
    for o in [&a, &b, &c] {
        assert_eq!(code(o), 0, "{}", stderr(o));
    }
    let read = |d: &str| fs::read_to_string(out_dir(&t, d).join("pop_figure.csv")).unwrap();
    let body = |s: String| s.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(read("a").lines().skip(1).collect::<Vec<_>>(), read("b").lines().skip(1).collect::<Vec<_>>());
    assert_ne!(body(read("a")), body(read("c")), "the seed reaches the Monte Carlo banks");

    let first = read("a");
    let again = slr(t.path(), "pop-figure", cfg, &["--out", "a", "--workers", "1"]);
    assert_eq!(code(&again), 0);
    assert_eq!(first, read("a"));
}

#[test]
fn gen_data_round_trip() {
    let t = TempDir::new().unwrap();
    let o = slr(t.path(), "gen-data", "task = \"max\"\nnu = 2.0\nlength_law = \"uniform:1-4\"\ndim = 20\nn_samples = 300\n", &["--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let path = out_dir(&t, "o").join("dataset.csv");
    let ds = slr::dataset::import(&path).unwrap();
    assert_eq!((ds.dim(), ds.len()), (20, 300));
    let copy = t.path().join("copy.csv");
    slr::dataset::export(&ds, &copy).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&copy).unwrap());

    let back = slr::dataset::import(&copy).unwrap();
    assert_eq!(back.dirs.k_star, ds.dirs.k_star);
    assert_eq!(back.dirs.v_star, ds.dirs.v_star);
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.y, b.y);
        assert_eq!(a.eps_star, b.eps_star);
        assert_eq!(a.x, b.x);
    }
}

#[test]
fn corrupted_dataset_is_rejected() {
    let t = TempDir::new().unwrap();
    let o = slr(t.path(), "gen-data", "dim = 5\nn_samples = 10\n", &["--out", "o"]);
    assert_eq!(code(&o), 0);
    let path = out_dir(&t, "o").join("dataset.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(slr::dataset::import(&path).is_err(), "sample count no longer matches N");
}

#[test]
fn gen_data_variance_matches_signal_plus_noise() {
    // Var(y) ≈ ‖v*‖²/D + Δ² with ‖v*‖²/D → 1; averaged over seeds to tame the direction draw.
    let t = TempDir::new().unwrap();
    let seeds = 8;
    let mut total = 0.0;
    for s in 0..seeds {
        let o = slr(
            t.path(),
            "gen-data",
            "task = \"spiked\"\nnu = 1.0\ndelta = 0.5\nlength_law = \"3\"\ndim = 1000\nn_samples = 4000\n",
            &["--out", &format!("o{s}"), "--seed", &s.to_string()],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let ds = slr::dataset::import(&out_dir(&t, &format!("o{s}")).join("dataset.csv")).unwrap();
        let (var, hist) = slr::dataset::summary(&ds);
        assert_eq!(hist, vec![(3, 4000)]);
        total += var;
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("Var(y)"));
    }
    let mean = total / seeds as f64;
    assert!((mean - 1.25).abs() < 0.05, "mean Var(y) = {mean}");
}

#[test]
fn erm_curve_asymptotes_match_pop_figure() {
    let t = TempDir::new().unwrap();
    let shared = "task = \"spiked\"\nnu = 4.0\nlength_law = \"3\"\nactivation = [\"linear\"]\n";
    let e = slr(t.path(), "erm-curve", &format!("{shared}alpha = [4.0]\nr_k = 1.0\nr_v = 1.0\nn_mc = 2000\n"), &["--out", "e"]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let p = slr(t.path(), "pop-figure", &format!("{shared}n_mc = 100000\n"), &["--out", "p"]);
    assert_eq!(code(&p), 0, "{}", stderr(&p));
    let risk = |path: PathBuf| -> f64 {
        let text = fs::read_to_string(path).unwrap();
        let row: Vec<String> = text.lines().nth(2).unwrap().split(',').map(String::from).collect();
        row[8].parse().unwrap()
    };
    let a = risk(out_dir(&t, "e").join("erm_population.csv"));
    let b = risk(out_dir(&t, "p").join("pop_figure.csv"));
    assert_eq!(a, b);
    assert!((a - 6.0 / 17.0).abs() < 5e-3, "linear spiked ν=4 L=3 minimum {a}");
}

#[test]
fn erm_sim_picks_the_lowest_cell() {
    let t = TempDir::new().unwrap();
    let o = slr(
        t.path(),
        "erm-sim",
        "alpha = [2.0]\nsqrt_nd = 150\nn_seeds = 2\nr_k = [0.1, 1.0, 10.0]\nr_v = [1.0]\nn_test = 2000\n",
        &["--out", "o"],
    );
    assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
    let grid = fs::read_to_string(out_dir(&t, "o").join("erm_sim_grid.csv")).unwrap();
    let rows: Vec<Vec<&str>> = grid.lines().skip(2).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let best = rows.iter().find(|r| r[9] == "true").unwrap();
    let min = rows.iter().map(|r| r[7].parse::<f64>().unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(best[7].parse::<f64>().unwrap(), min);
    let sims = fs::read_to_string(out_dir(&t, "o").join("erm_sim.csv")).unwrap();
    assert_eq!(sims.lines().count(), 2 + 3 * 2);
}
