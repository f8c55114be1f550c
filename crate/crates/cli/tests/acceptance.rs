//! Acceptance suite. Runs every subcommand on the bundled configs through the
//! real binary and prints one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use serde_json::Value;

const IDENTITY_TOL: f64 = 1e-10;
const POINTWISE_TOL: f64 = 1e-9;
const CLOSED_FORM_TOL: f64 = 1e-9;
const STEP_TOL: f64 = 1e-9;
const FEASIBILITY_TOL: f64 = 1e-8;
const FD_TOL: f64 = 1e-6;
const CROSS_CHECK_TOL: f64 = 1e-10;
const CLOSURE_TOL: f64 = 1e-9;
const Z: f64 = 3.0;

type Row = HashMap<String, String>;
type Criterion = (&'static str, &'static str, fn(&mut Check, &Run));

struct Run {
    dir: PathBuf,
    code: i32,
    elapsed: Duration,
}

impl Run {
    fn csv(&self, name: &str) -> Vec<Row> {
        let mut rdr =
            csv::Reader::from_path(self.dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        rdr.deserialize().map(|r| r.expect("csv row")).collect()
    }

    fn report(&self) -> Value {
        let text = std::fs::read_to_string(self.dir.join("report.json")).expect("report.json");
        serde_json::from_str(&text).expect("report json")
    }

    /// `(instances, failures)` for one bound in report.json.
    fn bound(&self, id: &str) -> (u64, u64) {
        let report = self.report();
        let row = report["reports"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["bound"] == id);
        row.map_or((0, 0), |r| {
            (
                r["instances"].as_u64().unwrap(),
                r["failures"].as_u64().unwrap(),
            )
        })
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn dlab(sub: &str, config: &str, out: &Path, jobs: usize) -> Run {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_dlab"))
        .arg(sub)
        .arg("--config")
        .arg(root().join("configs").join(config))
        .arg("--out")
        .arg(out)
        .arg("--jobs")
        .arg(jobs.to_string())
        .env_remove("DLAB_SEED")
        .output()
        .expect("spawn dlab");
    Run {
        dir: out.to_path_buf(),
        code: status.status.code().unwrap_or(-1),
        elapsed: start.elapsed(),
    }
}

fn num(r: &Row, k: &str) -> f64 {
    r.get(k)
        .unwrap_or_else(|| panic!("missing column {k}"))
        .parse()
        .unwrap_or_else(|_| panic!("column {k}: {:?}", r[k]))
}

fn int(r: &Row, k: &str) -> usize {
    r[k].parse()
        .unwrap_or_else(|_| panic!("column {k}: {:?}", r[k]))
}

struct Check {
    failures: Vec<String>,
}

impl Check {
    fn new() -> Check {
        Check {
            failures: Vec::new(),
        }
    }

    fn that(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn exit(&mut self, run: &Run, sub: &str) {
        self.that(run.code == 0, format!("{sub} exited with {}", run.code));
    }

    fn runtime(&mut self, run: &Run, limit_s: u64) {
        self.that(
            run.elapsed < Duration::from_secs(limit_s),
            format!("runtime {:.1?} over {limit_s}s", run.elapsed),
        );
    }

    fn bound_clean(&mut self, run: &Run, id: &str, min_instances: u64) {
        let (n, f) = run.bound(id);
        self.that(
            n >= min_instances && f == 0,
            format!("{id}: {n} instances, {f} failures"),
        );
    }
}

fn identity(c: &mut Check, run: &Run) {
    let rows = run.csv("selftest.csv");
    c.that(rows.len() == 1000, format!("{} instances", rows.len()));
    for r in &rows {
        let (d, res) = (num(r, "disagreement"), num(r, "identity_residual"));
        c.that(
            res.abs() <= IDENTITY_TOL * (1.0 + d),
            format!("instance {}: residual {res:e}", r["instance"]),
        );
    }
    c.bound_clean(run, "midpoint-identity", 1000);
    c.exit(run, "selftest");
    c.runtime(run, 5);
}

fn stacking(c: &mut Check, run: &Run) {
    let rows = run.csv("stacking.csv");
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &rows {
        *seen.entry(int(r, "k")).or_default() += 1;
        c.that(int(r, "trials") == 500, "trials per k");
        let slack = num(r, "min_pointwise_slack");
        c.that(
            slack >= -POINTWISE_TOL,
            format!(
                "source {} k {}: pointwise slack {slack:e}",
                r["source"], r["k"]
            ),
        );
        let (d, four_gap, se) = (num(r, "d_mean"), num(r, "four_gap"), num(r, "margin_se"));
        c.that(
            d <= four_gap + Z * se,
            format!(
                "source {} k {}: E[D] {d} > {four_gap} + 3se",
                r["source"], r["k"]
            ),
        );
    }
    c.that(
        seen == BTreeMap::from([(1, 20), (2, 20), (4, 20), (8, 20)]),
        format!("k coverage {seen:?}"),
    );
    let trials = run.csv("stacking_trials.csv");
    c.that(
        trials.len() == 20 * 4 * 500,
        format!("{} trial rows", trials.len()),
    );
    for r in &trials {
        let slack = num(r, "slack");
        c.that(
            slack >= -POINTWISE_TOL,
            format!(
                "source {} k {} trial {}: slack {slack:e}",
                r["source"], r["k"], r["trial"]
            ),
        );
    }
    c.exit(run, "stacking");
    c.runtime(run, 120);
}

fn tightness(c: &mut Check, run: &Run) {
    let rows = run.csv("tightness.csv");
    let ks: Vec<usize> = rows.iter().map(|r| int(r, "k")).collect();
    c.that(ks == [1, 3], format!("cases {ks:?}"));
    for r in &rows {
        let (k, eps) = (int(r, "k") as f64, num(r, "eps"));
        c.that(eps == 0.5, "eps");
        c.that(int(r, "trials") >= 2000, "trials");
        c.that(
            (num(r, "sigma2") - eps * k / 8.0).abs() <= 1e-15,
            "sigma2 = eps k / 8",
        );
        c.that(
            int(r, "m") == (96.0 * k.powi(3) / eps).ceil() as usize,
            "m = ceil(96 k^3 / eps)",
        );
        let (ratio, se) = (num(r, "ratio"), num(r, "ratio_se"));
        c.that(
            ratio >= 4.0 - eps - Z * se,
            format!("k={k}: ratio {ratio} below window"),
        );
        c.that(
            ratio <= 4.0 + Z * se,
            format!("k={k}: ratio {ratio} above window"),
        );
        c.that(
            int(r, "collision_free_trials") > 0,
            "no collision-free trials",
        );
        let cf = num(r, "max_closed_form_error");
        c.that(
            cf <= CLOSED_FORM_TOL,
            format!("k={k}: closed-form error {cf:e}"),
        );
    }
    c.exit(run, "tightness");
    c.runtime(run, 300);
}

fn boost(c: &mut Check, run: &Run) {
    let pairs = run.csv("boost_pairs.csv");
    let tau: HashMap<usize, f64> = pairs
        .iter()
        .map(|r| (int(r, "class"), num(r, "tau_star")))
        .collect();
    let rates = run.csv("boost_rates.csv");
    let classes: std::collections::BTreeSet<usize> =
        rates.iter().map(|r| int(r, "class")).collect();
    c.that(classes.len() == 10, format!("{} classes", classes.len()));
    c.that(tau.len() == 10, "every class appears in a pair");
    let max_t = rates.iter().map(|r| int(r, "t")).max().unwrap_or(0);
    c.that(max_t == 64, format!("runs stop at t={max_t}"));
    for r in &rates {
        let atoms = int(r, "atoms");
        c.that(
            (8..=32).contains(&atoms),
            format!("class with {atoms} atoms"),
        );
        let (t, class) = (int(r, "t") as f64, int(r, "class"));
        let Some(&ts) = tau.get(&class) else { continue };
        let eps2 = if r["mode"] == "exact" {
            0.0
        } else {
            t * 0.01 * 0.01
        };
        let rhs = 8.0 * ts * ts / t + eps2;
        let e = num(r, "excess");
        c.that(
            e <= rhs + STEP_TOL,
            format!("class {class} {} t={t}: E_t {e} > {rhs}", r["mode"]),
        );
        c.that(
            num(r, "dual_lhs") >= num(r, "dual_rhs") - STEP_TOL,
            format!("class {class} t={t}: dual bound"),
        );
    }
    c.bound_clean(run, "gb-single-step", 30);
    c.bound_clean(run, "gb-correlation-lower-bound", 30);
    c.bound_clean(run, "gb-gap-recurrence", 30);
    c.bound_clean(run, "gb-rate", 30);
    c.that(pairs.len() == 50, format!("{} pairs", pairs.len()));
    for r in &pairs {
        let s = num(r, "rate_slack");
        c.that(
            s >= -STEP_TOL,
            format!("pair {}: two-run slack {s:e}", r["pair"]),
        );
    }
    c.exit(run, "boost");
    c.runtime(run, 180);
}

fn fw(c: &mut Check, run: &Run) {
    let losses = run.csv("fw_losses.csv");
    let names: std::collections::BTreeSet<&str> =
        losses.iter().map(|r| r["name"].as_str()).collect();
    c.that(names.len() == 2, format!("losses {names:?}"));
    for r in &losses {
        c.that(int(r, "probes") == 1000, "probes per certificate");
        c.that(
            r["passed"] == "pass",
            format!("{} d={}: certificate failed", r["name"], r["dim"]),
        );
        let fd = num(r, "finite_difference_error");
        c.that(
            fd <= FD_TOL,
            format!(
                "{} d={}: finite-difference error {fd:e}",
                r["name"], r["dim"]
            ),
        );
    }
    let rates = run.csv("fw_rates.csv");
    let instances: std::collections::BTreeSet<usize> =
        rates.iter().map(|r| int(r, "instance")).collect();
    c.that(
        instances.len() == 20,
        format!("{} instances", instances.len()),
    );
    c.that(
        rates.iter().map(|r| int(r, "t")).max() == Some(64),
        "runs reach t=64",
    );
    for r in &rates {
        let tag = format!("instance {} {} t={}", r["instance"], r["mode"], r["t"]);
        c.that(
            num(r, "progress") >= num(r, "step_rhs") - STEP_TOL,
            format!("{tag}: single-step progress"),
        );
        c.that(
            num(r, "excess") <= num(r, "rate_rhs") + 1e-8,
            format!("{tag}: rate"),
        );
        let norm = num(r, "atomic_norm");
        c.that(
            norm <= num(r, "tau") + FEASIBILITY_TOL,
            format!("{tag}: atomic norm {norm} exceeds tau"),
        );
    }
    for id in [
        "fw-single-step",
        "fw-correlation-lower-bound",
        "fw-gap-recurrence",
        "fw-rate",
        "sc-midpoint-anchor",
    ] {
        c.bound_clean(run, id, 40);
    }
    let pairs = run.csv("fw_pairs.csv");
    c.that(pairs.len() == 50, format!("{} pairs", pairs.len()));
    let mut squared = 0;
    for r in &pairs {
        c.that(
            r["passed"] == "pass",
            format!("pair {}: agreement bound", r["pair"]),
        );
        if !r["squared_cross_check"].is_empty() {
            squared += 1;
            let x = num(r, "squared_cross_check");
            c.that(
                x.abs() <= CROSS_CHECK_TOL,
                format!("pair {}: squared cross-check {x:e}", r["pair"]),
            );
        }
    }
    c.that(squared > 0, "no squared-loss pairs");
    c.exit(run, "fw");
    c.runtime(run, 180);
}

fn trees(c: &mut Check, run: &Run) {
    let curve = run.csv("trees_curve.csv");
    let mut last: HashMap<&str, f64> = HashMap::new();
    for r in &curve {
        let risk = num(r, "risk");
        if let Some(prev) = last.insert(r["fixture"].as_str(), risk) {
            c.that(
                risk <= prev,
                format!("{} depth {}: DP risk increased", r["fixture"], r["depth"]),
            );
        }
    }
    c.that(last.len() == 10, format!("{} fixtures", last.len()));
    let rows = run.csv("trees_agreement.csv");
    c.that(rows.len() == 30, format!("{} agreement rows", rows.len()));
    c.that(
        rows.iter().any(|r| r["fixture"] == "grid2d"),
        "bundled fixture missing",
    );
    for r in &rows {
        let tag = format!("{} depth {}", r["fixture"], r["depth"]);
        c.that(
            r["verdict"] == "pass",
            format!("{tag}: verdict {}", r["verdict"]),
        );
        c.that(
            int(r, "depth_mid") <= 2 * int(r, "depth"),
            format!("{tag}: midpoint depth"),
        );
        c.that(
            num(r, "closure_max_error") <= CLOSURE_TOL,
            format!("{tag}: midpoint evaluation"),
        );
        let (d, res) = (num(r, "disagreement"), num(r, "identity_residual"));
        c.that(
            res.abs() <= IDENTITY_TOL * (1.0 + d),
            format!("{tag}: identity residual {res:e}"),
        );
    }
    c.exit(run, "trees");
    c.runtime(run, 120);
}

fn nn(c: &mut Check, run: &Run) {
    let rows = run.csv("nn_midpoint.csv");
    c.that(rows.len() == 200, format!("{} random pairs", rows.len()));
    for r in &rows {
        let e = num(r, "max_error");
        c.that(e <= CLOSURE_TOL, format!("pair {}: error {e:e}", r["pair"]));
        c.that(
            int(r, "size_mid") == int(r, "size1") + int(r, "size2"),
            format!("pair {}: midpoint size", r["pair"]),
        );
    }
    let trained = run.csv("nn_agreement.csv");
    c.that(!trained.is_empty(), "no trained-pair certificates");
    for r in &trained {
        let tag = format!("{} size {}", r["fixture"], r["size"]);
        c.that(
            ["consistent", "inconsistent"].contains(&r["verdict"].as_str()),
            format!("{tag}: verdict {}", r["verdict"]),
        );
        let (d, res) = (num(r, "disagreement"), num(r, "identity_residual"));
        c.that(
            res.abs() <= IDENTITY_TOL * (1.0 + d),
            format!("{tag}: identity residual {res:e}"),
        );
        c.that(
            int(r, "size_mid") == 2 * int(r, "size"),
            format!("{tag}: midpoint size"),
        );
    }
    c.exit(run, "nn");
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("tempdir");
    let subs = [
        ("selftest", "selftest.json"),
        ("stacking", "stacking.json"),
        ("tightness", "tightness.json"),
        ("boost", "boost.json"),
        ("fw", "fw.json"),
        ("trees", "trees.json"),
        ("nn", "nn.json"),
    ];
    let runs: HashMap<&str, Run> = subs
        .iter()
        .map(|(s, cfg)| (*s, dlab(s, cfg, &tmp.path().join("j8").join(s), 8)))
        .collect();

    let criteria: [Criterion; 7] = [
        ("1", "selftest", identity),
        ("2", "stacking", stacking),
        ("3", "tightness", tightness),
        ("4", "boost", boost),
        ("5", "fw", fw),
        ("6", "trees", trees),
        ("7", "nn", nn),
    ];
    let names = [
        "midpoint identity on 1000 random instances",
        "stacking upper bound on 20 mixture sources",
        "near-tightness of the factor 4",
        "gradient boosting step, dual, rate and two-run bounds",
        "Frank-Wolfe losses, feasibility, rates and agreement",
        "trees: DP monotonicity and exact-tag agreement",
        "networks: midpoint closure and trained-pair certificates",
    ];
    let mut all = true;
    let mut line = |id: &str, name: &str, c: &Check| {
        let ok = c.failures.is_empty();
        all &= ok;
        let detail = if ok {
            String::new()
        } else {
            format!(" ({} issues; first: {})", c.failures.len(), c.failures[0])
        };
        println!(
            "criterion {id} {:<58} {}{detail}",
            name,
            if ok { "PASS" } else { "FAIL" }
        );
    };
    for ((id, sub, check), name) in criteria.iter().zip(names) {
        let mut c = Check::new();
        check(&mut c, &runs[sub]);
        line(id, name, &c);
    }

    let mut c = Check::new();
    for (s, cfg) in &subs {
        let serial = dlab(s, cfg, &tmp.path().join("j1").join(s), 1);
        c.exit(&serial, s);
        let (a, b) = (csv_files(&runs[s].dir), csv_files(&serial.dir));
        c.that(!a.is_empty(), format!("{s}: no CSV output"));
        c.that(a == b, format!("{s}: CSV differs between 1 and 8 threads"));
    }
    line("8", "byte-identical CSV at 1 and 8 threads", &c);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
