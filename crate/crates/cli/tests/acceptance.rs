//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use samrank_core::diagnostics::feature_rank;
use samrank_core::experiments::{run_bottleneck_ablation, run_prop1_battery, AblationSpec, AblationVariant, BatteryOptions, RunSettings, TeacherStudentSpec};
use samrank_core::nets::{loss, Layer, LayerWeights};
use samrank_core::optim::{decompose_sam_step, gradreg_step, sam_step};
use samrank_core::{ActivationKind, Dataset, DenseMatrix, Mlp, Model, OptimConfig, SamConfig, TwoLayerNet};

type Verdict = Result<(bool, String), String>;

const SAM_CONFIG: &str = "sam.method=sam\nsweep.rho_grid=0,0.1,0.3,0.6\nsweep.seeds=0,1,2,3,4\n";
const GRADREG_CONFIG: &str = "sam.method=gradreg\nsweep.rho_grid=0,0.2,0.6\nsweep.seeds=0,1,2,3,4\n";
const TRAIN_CONFIG: &str = "sam.method=sam\nsam.rho=0.6\n";

fn samrank(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_samrank"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| format!("spawn samrank: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("samrank {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

/// CSV with a header row, as column name -> values.
fn read_table(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().ok_or("empty table")?.split(',').collect();
    Ok(lines
        .map(|l| header.iter().zip(l.split(',')).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect())
}

fn num(row: &BTreeMap<String, String>, col: &str) -> f64 {
    row.get(col).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

struct Sweep {
    medians: Vec<BTreeMap<String, String>>,
}

impl Sweep {
    fn load(dir: &Path) -> Result<Self, String> {
        Ok(Self {
            medians: read_table(&dir.join("sweep_medians.csv"))?,
        })
    }

    fn at(&self, rho: f64, col: &str) -> f64 {
        self.medians
            .iter()
            .find(|r| num(r, "rho") == rho)
            .map_or(f64::NAN, |r| num(r, col))
    }
}

/// Every file under `root`, relative path -> bytes.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).unwrap_or_default();
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    out
}

struct Workspace {
    root: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Result<Self, String> {
        let root = tempfile::tempdir().map_err(|e| e.to_string())?;
        for (name, body) in [("sam.cfg", SAM_CONFIG), ("gradreg.cfg", GRADREG_CONFIG), ("train.cfg", TRAIN_CONFIG)] {
            fs::write(root.path().join(name), body).map_err(|e| e.to_string())?;
        }
        for run in ["first", "second"] {
            fs::create_dir_all(root.path().join(run)).map_err(|e| e.to_string())?;
        }
        Ok(Self { root })
    }

    fn run_dir(&self, run: &str) -> PathBuf {
        self.root.path().join(run)
    }

    /// Runs the sweep and train commands from `run/` with identical
    /// arguments and relative output paths.
    fn run_all(&self, run: &str) -> Result<(), String> {
        let dir = self.run_dir(run);
        samrank(&["sweep", "--config", "../sam.cfg", "--out", "sam"], &dir)?;
        samrank(&["sweep", "--config", "../gradreg.cfg", "--out", "gradreg"], &dir)?;
        samrank(&["train", "--config", "../train.cfg", "--out", "train", "--seed", "0"], &dir)
    }
}

fn criterion_1(sam: &Sweep) -> Verdict {
    let (r0, r6) = (sam.at(0.0, "rank@0.9999"), sam.at(0.6, "rank@0.9999"));
    let ok = r6 <= 8.0 && r0 >= 12.0 && r6 <= 0.5 * r0;
    Ok((ok, format!("median rank@99.99%: rho=0 {r0}, rho=0.6 {r6} (need <= 8, >= 12, ratio <= 1/2)")))
}

fn criterion_2(sam: &Sweep) -> Verdict {
    let (a0, a6) = (sam.at(0.0, "active_units"), sam.at(0.6, "active_units"));
    Ok((a6 <= 25.0 && a0 >= 60.0, format!("median active units: rho=0 {a0}, rho=0.6 {a6} (need >= 60, <= 25)")))
}

fn criterion_3(sam: &Sweep) -> Verdict {
    let grid = [0.0, 0.1, 0.3, 0.6];
    let norms: Vec<f64> = grid.iter().map(|&r| sam.at(r, "weight_norm")).collect();
    let inversions = norms.windows(2).filter(|w| !(w[1] >= w[0])).count();
    let shown: Vec<String> = grid.iter().zip(&norms).map(|(r, n)| format!("{r}:{n:.2}")).collect();
    Ok((inversions <= 1, format!("median weight norm {} ({inversions} inversions, need <= 1)", shown.join(" "))))
}

/// `‖∇_θ f(x)‖` of a bias-free two-layer net, from the closed form
/// `Σ_j σ(z_j)² + a_j² σ'(z_j)² ‖x‖²`.
fn model_grad_norm(net: &TwoLayerNet, x: &[f64]) -> f64 {
    let x_sq: f64 = x.iter().map(|v| v * v).sum();
    let w = net.weights();
    (0..net.neurons())
        .map(|j| {
            let z: f64 = w.row(j).iter().zip(x).map(|(a, b)| a * b).sum();
            let act = net.activation();
            let (s, ds) = (act.apply(z), act.derivative(z));
            let a = net.output_weights()[j];
            s * s + a * a * ds * ds * x_sq
        })
        .sum::<f64>()
        .sqrt()
}

fn random_bias_free(rng: &mut ChaCha8Rng, act: ActivationKind) -> (TwoLayerNet, Vec<f64>, f64) {
    let m = rng.random_range(1..=20);
    let d = rng.random_range(1..=5);
    let w = DenseMatrix::from_fn(m, d, |_, _| StandardNormal.sample(rng));
    let a = (0..m).map(|_| StandardNormal.sample(rng)).collect();
    let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let y: f64 = StandardNormal.sample(rng);
    (TwoLayerNet::new(w, a, act).unwrap(), x, y)
}

fn criterion_4() -> Verdict {
    let battery = run_prop1_battery(&BatteryOptions {
        training_steps: 0,
        ..BatteryOptions::default()
    })
    .map_err(|e| e.to_string())?;
    let check = battery.check("reg_component_sign").ok_or("battery has no sign check")?;

    let cfg = OptimConfig {
        learning_rate: 0.01,
        ..OptimConfig::default()
    };
    let sam = SamConfig::with_rho(0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut cases, mut sign_failures, mut worst_gap) = (0, 0, 0.0f64);
    while cases < 1000 {
        let (net, x, y) = random_bias_free(&mut rng, ActivationKind::Relu);
        let r = net.output(&x).unwrap() - y;
        if r == 0.0 {
            continue;
        }
        cases += 1;
        let report = decompose_sam_step(&net, &x, y, &cfg, &sam).map_err(|e| e.to_string())?;
        let x_sq: f64 = x.iter().map(|v| v * v).sum();
        let scale = cfg.learning_rate * sam.rho * r.abs() / model_grad_norm(&net, &x);
        for (j, &c) in report.per_neuron_reg_component.iter().enumerate() {
            let z: f64 = net.weights().row(j).iter().zip(&x).map(|(a, b)| a * b).sum();
            let expected = scale * z.max(0.0) * x_sq;
            if c < 0.0 || (c > 0.0) != (expected > 0.0) {
                sign_failures += 1;
            }
            worst_gap = worst_gap.max((c - expected).abs() / expected.abs().max(1e-300));
        }
    }
    let ok = check.passed() && check.cases == 1000 && sign_failures == 0 && worst_gap <= 1e-10;
    Ok((
        ok,
        format!(
            "battery {}/{} clean; oracle: {cases} cases, {sign_failures} sign failures, max rel gap {worst_gap:.1e}",
            check.cases - check.failures,
            check.cases
        ),
    ))
}

fn criterion_5() -> Verdict {
    let cfg = OptimConfig {
        learning_rate: 0.1,
        ..OptimConfig::default()
    };
    let gap = |net: &TwoLayerNet, data: &Dataset, rho: f64| -> Result<f64, String> {
        let sam = SamConfig::with_rho(rho);
        let (full, _) = sam_step(net, data, &[0], &cfg, &sam).map_err(|e| e.to_string())?;
        let first = gradreg_step(net, data, &[0], &cfg, &sam).map_err(|e| e.to_string())?;
        Ok(full.params().distance(&first.params()))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut lo, mut hi, mut bad) = (f64::INFINITY, f64::NEG_INFINITY, 0);
    for _ in 0..100 {
        let (net, x, y) = random_bias_free(&mut rng, ActivationKind::Tanh);
        let data = Dataset::new(DenseMatrix::new(1, x.len(), x).unwrap(), DenseMatrix::new(1, 1, vec![y]).unwrap()).unwrap();
        let ratio = gap(&net, &data, 0.1)? / gap(&net, &data, 0.05)?;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        if !(3.0..=5.0).contains(&ratio) {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("100 tanh nets, gap(0.1)/gap(0.05) in [{lo:.3}, {hi:.3}], {bad} outside [3, 5]")))
}

fn criterion_6(gradreg: &Sweep) -> Verdict {
    let col = "rank@0.9999";
    let (r0, r6) = (gradreg.at(0.0, col), gradreg.at(0.6, col));
    let (a0, a6) = (gradreg.at(0.0, "active_units"), gradreg.at(0.6, "active_units"));
    let (n0, n6) = (gradreg.at(0.0, "weight_norm"), gradreg.at(0.6, "weight_norm"));
    let (d6, runs) = (gradreg.at(0.6, "diverged"), gradreg.at(0.6, "runs"));
    let ok = r6 < r0 && a6 < a0 && n6 >= n0;
    let mut detail = format!(
        "rho 0 -> 0.6: rank {r0} -> {r6}, active {a0} -> {a6}, weight norm {n0:.2} -> {n6:.2}; diverged {d6}/{runs} at 0.6"
    );
    if r6 == 0.0 && a6 == 0.0 {
        detail.push_str(" (survivors are all-dead networks)");
    }
    detail.push_str(&format!(
        "; rho=0.2: rank {}, active {}, weight norm {:.2}",
        gradreg.at(0.2, col),
        gradreg.at(0.2, "active_units"),
        gradreg.at(0.2, "weight_norm")
    ));
    Ok((ok, detail))
}

/// Loss of the network evaluated from its raw weights.
fn oracle_two_layer_loss(net: &TwoLayerNet, x: &[f64], y: f64) -> f64 {
    let w = net.weights();
    let mut f = net.output_bias().unwrap_or(0.0);
    for j in 0..net.neurons() {
        let b = net.hidden_bias().map_or(0.0, |b| b[j]);
        let z: f64 = w.row(j).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
        f += net.output_weights()[j] * net.activation().apply(z);
    }
    0.5 * (f - y) * (f - y)
}

fn oracle_layer(layer: &Layer, input: &[f64]) -> Vec<f64> {
    let dense = match &layer.weights {
        LayerWeights::Dense(w) => w.clone(),
        LayerWeights::Factorized(b) => b.u().matmul(b.v()).unwrap().transpose(),
    };
    (0..dense.rows())
        .map(|i| dense.row(i).iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + layer.bias[i])
        .collect()
}

/// Pre-activations of every layer and the squared-error loss.
fn oracle_mlp(net: &Mlp, x: &[f64], y: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let mut h = x.to_vec();
    let mut pre = Vec::new();
    for layer in net.layers() {
        let z = oracle_layer(layer, &h);
        h = z.iter().map(|&v| layer.act.apply(v)).collect();
        pre.push(z);
    }
    let l = 0.5 * h.iter().zip(y).map(|(f, t)| (f - t) * (f - t)).sum::<f64>();
    (pre, l)
}

fn fd_relative_error<M: Model>(net: &M, analytic: &[f64], oracle: impl Fn(&M) -> f64) -> f64 {
    let p = net.params().into_inner();
    let h = 1e-5;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..p.len() {
        let mut q = p.clone();
        q[i] = p[i] + h;
        let plus = oracle(&net.with_params(&q).unwrap());
        q[i] = p[i] - h;
        let minus = oracle(&net.with_params(&q).unwrap());
        let fd = (plus - minus) / (2.0 * h);
        num += (fd - analytic[i]).powi(2);
        den += analytic[i].powi(2);
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

fn random_mlp(rng: &mut ChaCha8Rng, act: ActivationKind) -> Mlp {
    let depth = rng.random_range(2..=3);
    let mut dims = vec![rng.random_range(1..=5)];
    for _ in 0..depth {
        dims.push(rng.random_range(1..=8));
    }
    let mut acts = vec![act; depth];
    if rng.random_bool(0.5) {
        acts[depth - 1] = ActivationKind::Identity;
    }
    let bottleneck = rng.random_bool(0.5).then(|| rng.random_range(1..=3));
    let mut net = Mlp::random(&dims, &acts, &vec![0.7; depth], bottleneck, rng).unwrap();
    let p: Vec<f64> = (0..net.num_params()).map(|_| 0.7 * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
    net.set_params(&p).unwrap();
    net
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut cases = 0;
    let mut check = |err: f64| {
        cases += 1;
        worst = worst.max(err);
        if !(err <= 1e-5) {
            failures += 1;
        }
    };
    let smooth = [ActivationKind::Tanh, ActivationKind::Gelu];
    for i in 0..100 {
        let act = smooth[i % 2];
        let d = rng.random_range(1..=5);
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        if i < 50 {
            let m = rng.random_range(1..=10);
            let mut net = TwoLayerNet::random(d, m, 1.0, true, act, &mut rng).unwrap();
            let p: Vec<f64> = (0..net.num_params()).map(|_| StandardNormal.sample(&mut rng)).collect();
            net.set_params(&p).unwrap();
            let y: f64 = StandardNormal.sample(&mut rng);
            let g = samrank_core::nets::grad(&net, &x, &[y]).unwrap();
            check(fd_relative_error(&net, &g.0, |n| oracle_two_layer_loss(n, &x, y)));
        } else {
            let net = random_mlp(&mut rng, act);
            let x: Vec<f64> = (0..net.input_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: Vec<f64> = (0..net.output_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let g = samrank_core::nets::grad(&net, &x, &y).unwrap();
            check(fd_relative_error(&net, &g.0, |n| oracle_mlp(n, &x, &y).1));
        }
    }
    // relu nets, resampled until every pre-activation is >= 1e-3 from the kink
    let mut relu = 0;
    while relu < 100 {
        let net = random_mlp(&mut rng, ActivationKind::Relu);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..net.output_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (pre, _) = oracle_mlp(&net, &x, &y);
        if pre.iter().flatten().any(|z| z.abs() < 1e-3) {
            continue;
        }
        relu += 1;
        let g = samrank_core::nets::grad(&net, &x, &y).unwrap();
        check(fd_relative_error(&net, &g.0, |n| oracle_mlp(n, &x, &y).1));
        // the library loss agrees with the oracle evaluator
        let gap = (loss(&net, &x, &y).unwrap() - oracle_mlp(&net, &x, &y).1).abs();
        check(gap);
    }
    Ok((failures == 0, format!("{cases} comparisons (100 smooth nets, 100 relu nets), max relative error {worst:.2e}, {failures} above 1e-5")))
}

/// Gram-Schmidt on the columns of `m`.
fn orthonormal_columns(mut m: DenseMatrix) -> DenseMatrix {
    let (rows, cols) = m.shape();
    for j in 0..cols {
        for k in 0..j {
            let d: f64 = (0..rows).map(|i| m.get(i, j) * m.get(i, k)).sum();
            for i in 0..rows {
                m.set(i, j, m.get(i, j) - d * m.get(i, k));
            }
        }
        let n = (0..rows).map(|i| m.get(i, j).powi(2)).sum::<f64>().sqrt();
        for i in 0..rows {
            m.set(i, j, m.get(i, j) / n);
        }
    }
    m
}

fn criterion_8(sam_dir: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, d) = (40, 25);
    let mut wrong = Vec::new();
    for case in 0..50 {
        let r = 1 + case % 10;
        // mean-zero left factor so centering keeps the rank
        let mut left = DenseMatrix::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng));
        let means = left.column_means();
        for i in 0..n {
            for j in 0..r {
                left.set(i, j, left.get(i, j) - means[j]);
            }
        }
        let left = orthonormal_columns(left);
        let right = orthonormal_columns(DenseMatrix::from_fn(d, r, |_, _| StandardNormal.sample(&mut rng)));
        let sv: Vec<f64> = (0..r).map(|_| rng.random_range(1.0..2.0)).collect();
        let m = DenseMatrix::from_fn(n, d, |i, j| {
            let signal: f64 = (0..r).map(|k| left.get(i, k) * sv[k] * right.get(j, k)).sum();
            signal + 1e-8 * Distribution::<f64>::sample(&StandardNormal, &mut rng)
        });
        let got = feature_rank(&m, &[0.99], true).map_err(|e| e.to_string())?.ranks[0];
        if got != r {
            wrong.push(format!("case {case}: rank {r} measured {got}"));
        }
    }

    let cells = read_table(&sam_dir.join("sweep_results.csv"))?;
    let thresholds = ["rank@0.95", "rank@0.99", "rank@0.999"];
    let mut conflicts = 0;
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            let signs: Vec<f64> = thresholds.iter().map(|t| (num(&cells[i], t) - num(&cells[j], t)).signum() * f64::from(u8::from(num(&cells[i], t) != num(&cells[j], t)))).collect();
            if signs.iter().any(|&s| s > 0.0) && signs.iter().any(|&s| s < 0.0) {
                conflicts += 1;
            }
        }
    }
    let sam = Sweep::load(sam_dir)?;
    let medians_agree = {
        let grid = [0.0, 0.1, 0.3, 0.6];
        let order = |t: &str| -> Vec<f64> { grid.iter().map(|&r| sam.at(r, t)).collect() };
        let series: Vec<Vec<f64>> = thresholds.iter().map(|t| order(t)).collect();
        (0..grid.len()).all(|a| {
            (0..grid.len()).all(|b| {
                let s: Vec<f64> = series.iter().map(|v| (v[a] - v[b]).signum() * f64::from(u8::from(v[a] != v[b]))).collect();
                !(s.iter().any(|&x| x > 0.0) && s.iter().any(|&x| x < 0.0))
            })
        })
    };
    let pairs = cells.len() * (cells.len() - 1) / 2;
    let ok = wrong.is_empty() && medians_agree;
    Ok((
        ok,
        format!(
            "{} of 50 constructed matrices ranked exactly{}; per-rho median ordering {} across 0.95/0.99/0.999; per-net pairs with conflicting order: {conflicts} of {pairs}",
            50 - wrong.len(),
            if wrong.is_empty() { String::new() } else { format!(" ({})", wrong.join(", ")) },
            if medians_agree { "agrees" } else { "disagrees" }
        ),
    ))
}

fn criterion_9() -> Verdict {
    let spec = AblationSpec::default();
    let summary = run_bottleneck_ablation(&spec, &TeacherStudentSpec::default(), &RunSettings::default(), 1).map_err(|e| e.to_string())?;
    let base = summary.median_for(AblationVariant::Baseline).unwrap_or(f64::NAN);
    let h1 = summary.median_for(AblationVariant::Bottleneck(1)).unwrap_or(f64::NAN);
    let sam = summary.median_for(AblationVariant::Sam(spec.sam_rho)).unwrap_or(f64::NAN);
    let bound = summary.rank_bound_holds();
    let diverged = summary.rows.iter().filter(|r| r.diverged).count();
    let ok = bound && h1 > base && sam < base;
    Ok((
        ok,
        format!(
            "rank <= h for every run: {bound}; median test loss baseline {base:.4}, h=1 {h1:.4}, sam_rho={} {sam:.4}; diverged runs {diverged}",
            spec.sam_rho
        ),
    ))
}

fn criterion_10(ws: &Workspace) -> Verdict {
    ws.run_all("second")?;
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["sam", "gradreg", "train"] {
        let a = tree(&ws.run_dir("first").join(sub));
        let b = tree(&ws.run_dir("second").join(sub));
        if a.keys().ne(b.keys()) {
            differing.push(format!("{sub}: different file sets"));
        }
        for (path, bytes) in &a {
            compared += 1;
            if b.get(path) != Some(bytes) {
                differing.push(format!("{sub}/{}", path.display()));
            }
        }
    }
    Ok((
        differing.is_empty() && compared > 0,
        format!("{compared} files from sweep, gradreg sweep and train reruns; differing: {}", if differing.is_empty() { "none".to_string() } else { differing.join(", ") }),
    ))
}

fn report(id: usize, name: &str, started: Instant, verdict: Verdict, failed: &mut usize) {
    let secs = started.elapsed().as_secs_f64();
    let (ok, detail) = verdict.unwrap_or_else(|e| (false, format!("error: {e}")));
    if !ok {
        *failed += 1;
    }
    println!("{} criterion {id:>2} {name:<28} {detail} [{secs:.1}s]", if ok { "PASS" } else { "FAIL" });
}

fn main() {
    // `cargo test -- <filter>` and `--list` pass arguments; this suite has
    // no sub-tests to filter.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failed = 0;
    let t = Instant::now();
    let ws = Workspace::new().expect("temporary workspace");
    let first = ws.run_all("first");
    let sweeps = first.and_then(|()| {
        Ok((
            Sweep::load(&ws.run_dir("first").join("sam"))?,
            Sweep::load(&ws.run_dir("first").join("gradreg"))?,
        ))
    });
    println!("sweeps finished in {:.1}s", t.elapsed().as_secs_f64());

    let with_sweep = |f: &dyn Fn(&Sweep) -> Verdict, which: usize| -> Verdict {
        match &sweeps {
            Ok((sam, gradreg)) => f(if which == 0 { sam } else { gradreg }),
            Err(e) => Err(e.clone()),
        }
    };

    let now = Instant::now();
    report(1, "rank reduction", now, with_sweep(&criterion_1, 0), &mut failed);
    report(2, "active relu pruning", now, with_sweep(&criterion_2, 0), &mut failed);
    report(3, "weight norm trend", now, with_sweep(&criterion_3, 0), &mut failed);
    let now = Instant::now();
    report(4, "reg component sign", now, criterion_4(), &mut failed);
    let now = Instant::now();
    report(5, "first-order equivalence", now, criterion_5(), &mut failed);
    let now = Instant::now();
    report(6, "gradreg low-rank effect", now, with_sweep(&criterion_6, 1), &mut failed);
    let now = Instant::now();
    report(7, "gradient correctness", now, criterion_7(), &mut failed);
    let now = Instant::now();
    report(8, "rank measure", now, criterion_8(&ws.run_dir("first").join("sam")), &mut failed);
    let now = Instant::now();
    report(9, "bottleneck ablation", now, criterion_9(), &mut failed);
    let now = Instant::now();
    report(10, "determinism", now, criterion_10(&ws), &mut failed);

    println!("{} of 10 criteria passed in {:.1}s", 10 - failed, t.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
