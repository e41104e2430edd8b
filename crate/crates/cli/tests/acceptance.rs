//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! for each, and exits nonzero if any failed.
//!
//! ```text
//! cargo test -p layersplice-cli --test acceptance
//! ```

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use layersplice::checkpoint::LLAMA_BLOCK_SUFFIXES;
use layersplice::diagnostics::{kl_divergence, layerwise_kl_report_with, FitMode, FittedNormal};
use layersplice::interp::{bcerp, lerp, slerp};
use layersplice::schedule::{schedule_alpha, ScheduleParams};
use layersplice::splice::{renumbered_index, Scope};
use layersplice::toy::{generate_toy_checkpoint_as, ToyModel, ToyModelConfig};
use layersplice::{
    build_plan, read_checkpoint, splice_checkpoint, write_checkpoint, Dtype,
    InterpolationMethod, LayerNameTemplate, MethodChoice, SplicePlan,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

// NaN comparisons are false, so they fail the check
macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if let false = $cond {
            return Err(format!($($msg)*));
        }
    };
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("interpolation boundaries and unit norm", interpolation_boundaries),
        ("bcerp collapses to lerp", bcerp_collapse),
        ("schedule conformance", schedule_conformance),
        ("container round trip", container_round_trip),
        ("splice structure", splice_structure),
        ("forward semantics", forward_semantics),
        ("kl correctness", kl_correctness),
        ("early-exit consistency", early_exit_consistency),
        ("overhead trend", overhead_trend),
        ("end-to-end diagnostics", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail} ({secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn interpolation_boundaries() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(1);
    let mut worst_norm = 0.0f64;
    let mut antipodal = 0;
    for _ in 0..1000 {
        let dim = rng.random_range(1..=4096);
        let p = random_vector(&mut rng, dim);
        let q = random_vector(&mut rng, dim);
        for m in InterpolationMethod::ALL {
            ensure!(m.apply(&p, &q, 0.0).unwrap() == p, "{m} at alpha 0 differs from p (dim {dim})");
            ensure!(m.apply(&p, &q, 1.0).unwrap() == q, "{m} at alpha 1 differs from q (dim {dim})");
        }
        let (u, v) = (unit(p), unit(q));
        let alpha = rng.random_range(0.0..1.0);
        match slerp(&u, &v, alpha) {
            Ok(r) => worst_norm = worst_norm.max((norm(&r) - 1.0).abs()),
            // only reachable in one dimension, where opposite signs are exactly opposite
            Err(layersplice::Error::AntipodalVectors { .. }) if dim == 1 => antipodal += 1,
            Err(e) => return Err(format!("slerp failed on dim {dim}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst_norm <= 1e-9, "unit norm drifted by {worst_norm:e}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "1000 pairs x 3 methods exact at 0/1, max |norm-1| {worst_norm:.1e}, {antipodal} antipodal 1-d pairs excluded from the norm check"
    ))
}

fn bcerp_collapse() -> Outcome {
    let mut rng = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let dim = rng.random_range(1..=4096);
        let p = random_vector(&mut rng, dim);
        let q = random_vector(&mut rng, dim);
        for i in 0..=10 {
            let alpha = i as f64 / 10.0;
            let d = rel_diff(&bcerp(&p, &q, alpha).unwrap(), &lerp(&p, &q, alpha).unwrap());
            worst = worst.max(d);
        }
    }
    ensure!(worst <= 1e-12, "max relative deviation {worst:e}");
    Ok(format!("max relative deviation {worst:.2e} over 11000 evaluations"))
}

fn schedule_conformance() -> Outcome {
    let params = ScheduleParams::new(4.0, 0.375, 32).unwrap();
    // logistic written as 0.5 * (1 + tanh(x / 2))
    let oracle = |l: usize| 0.5 * (1.0 + (2.0 * (l as f64 / 32.0 - 0.375)).tanh());
    let a12 = schedule_alpha(12, &params).unwrap();
    ensure!((a12 - 0.5).abs() <= 1e-12, "alpha(12) = {a12}");
    for (l, approx) in [(24, 0.81757), (28, 0.88080)] {
        let a = schedule_alpha(l, &params).unwrap();
        ensure!((a - oracle(l)).abs() <= 1e-5, "alpha({l}) = {a}, oracle {}", oracle(l));
        ensure!((a - approx).abs() <= 1e-5, "alpha({l}) = {a}, expected about {approx}");
    }
    let alphas: Vec<f64> = (0..32).map(|l| schedule_alpha(l, &params).unwrap()).collect();
    ensure!(alphas.windows(2).all(|w| w[0] < w[1]), "not strictly increasing");
    let worst = (0..32).map(|l| (alphas[l] - oracle(l)).abs()).fold(0.0, f64::max);
    Ok(format!(
        "alpha(12) = {a12}, alpha(24) = {:.5}, alpha(28) = {:.5}, max oracle gap {worst:.1e}, monotone on 0..31",
        alphas[24], alphas[28]
    ))
}

fn random_toy(rng: &mut ChaCha8Rng) -> (ToyModelConfig, Dtype, u64) {
    let heads = rng.random_range(1..=4);
    let head_dim = 2 * rng.random_range(1..=4);
    let cfg = ToyModelConfig {
        num_layers: rng.random_range(1..=6),
        hidden_size: heads * head_dim,
        num_heads: heads,
        intermediate_size: rng.random_range(4..=48),
        vocab_size: rng.random_range(2..=64),
        rope_theta: rng.random_range(100.0..1e6),
        ..Default::default()
    };
    let dtypes = [Dtype::F64, Dtype::F32, Dtype::F16, Dtype::BF16];
    (cfg, dtypes[rng.random_range(0..4)], rng.random())
}

fn container_round_trip() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng(4);
    for i in 0..50 {
        let (cfg, dtype, seed) = random_toy(&mut rng);
        let ckpt = generate_toy_checkpoint_as(&cfg, seed, dtype).unwrap();
        let paths: Vec<_> = (0..3).map(|k| dir.path().join(format!("{i}-{k}.safetensors"))).collect();
        write_checkpoint(&ckpt, &paths[0]).unwrap();
        let once = read_checkpoint(&paths[0]).unwrap();
        ensure!(once == ckpt, "checkpoint {i} changed on read");
        write_checkpoint(&once, &paths[1]).unwrap();
        write_checkpoint(&read_checkpoint(&paths[1]).unwrap(), &paths[2]).unwrap();
        let bytes: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        ensure!(bytes[0] == bytes[1] && bytes[1] == bytes[2], "checkpoint {i} ({dtype}) bytes differ");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok("50 randomized checkpoints byte-identical across write/read/write/read/write".into())
}

fn small(num_layers: usize) -> ToyModelConfig {
    ToyModelConfig {
        num_layers,
        hidden_size: 8,
        num_heads: 2,
        intermediate_size: 16,
        vocab_size: 16,
        ..Default::default()
    }
}

fn plan(n: usize, positions: &[usize], methods: MethodChoice, overrides: &BTreeMap<usize, f64>) -> SplicePlan {
    let schedule = ScheduleParams::with_defaults(n).unwrap();
    build_plan(positions, &methods, overrides, schedule, Scope::PerTensor).unwrap()
}

fn splice_structure() -> Outcome {
    let t = LayerNameTemplate::default();
    let mut plans = 0;
    let mut identity_checks = 0;
    for n in 2..=8usize {
        let base = generate_toy_checkpoint_as(&small(n), 100 + n as u64, Dtype::F32).unwrap();
        for mask in 1u32..(1 << (n - 1)) {
            let positions: Vec<usize> = (0..n - 1).filter(|p| mask & (1 << p) != 0).collect();
            let methods: Vec<InterpolationMethod> =
                positions.iter().map(|p| InterpolationMethod::ALL[(p + mask as usize) % 3]).collect();
            let boundary = mask % 3;
            let overrides: BTreeMap<usize, f64> = match boundary {
                0 => BTreeMap::new(),
                b => positions.iter().map(|&p| (p, if b == 1 { 0.0 } else { 1.0 })).collect(),
            };
            let plan = plan(n, &positions, MethodChoice::PerPosition(methods), &overrides);
            let out = splice_checkpoint(&base, &plan, &t).map_err(|e| e.to_string())?;
            let spliced = &out.checkpoint;
            let m = positions.len();

            ensure!(spliced.validate_layer_count(&t).ok() == Some(n + m), "N={n} {positions:?}: wrong block count");
            ensure!(
                spliced.config.as_ref().map(|c| c.num_hidden_layers) == Some(n + m),
                "N={n} {positions:?}: config not updated"
            );
            for (name, tensor) in &base.tensors {
                let moved = match t.parse(name) {
                    Some((i, suffix)) => t.render(renumbered_index(i, &positions), &suffix),
                    None => name.clone(),
                };
                ensure!(
                    spliced.get(&moved).map(|x| x.data()) == Some(tensor.data()),
                    "N={n} {positions:?}: {name} not preserved at {moved}"
                );
            }
            for (k, block) in out.report.inserted.iter().enumerate() {
                ensure!(block.new_index == positions[k] + k + 1, "N={n} {positions:?}: misplaced insert");
                if boundary != 0 {
                    let source = block.position + usize::from(boundary == 2);
                    for suffix in LLAMA_BLOCK_SUFFIXES {
                        ensure!(
                            spliced.get(&t.render(block.new_index, suffix)) == base.get(&t.render(source, suffix)),
                            "N={n} {positions:?}: boundary insert differs from block {source}"
                        );
                    }
                    identity_checks += 1;
                }
            }
            plans += 1;
        }
    }
    Ok(format!("{plans} plans over N=2..8, {identity_checks} alpha-0/1 inserts matched their flanks exactly"))
}

fn forward_semantics() -> Outcome {
    let t = LayerNameTemplate::default();
    let cfg = ToyModelConfig { num_layers: 4, ..Default::default() };
    let base_ckpt = generate_toy_checkpoint_as(&cfg, 6, Dtype::F32).unwrap();
    let overrides = BTreeMap::from([(1, 0.0)]);
    let plan = plan(4, &[1], MethodChoice::default(), &overrides);
    let spliced_ckpt = splice_checkpoint(&base_ckpt, &plan, &t).unwrap().checkpoint;
    let base = ToyModel::from_checkpoint(&base_ckpt, &t).unwrap();
    let spliced = ToyModel::from_checkpoint(&spliced_ckpt, &t).unwrap();

    let tokens: Vec<u32> = vec![5, 17, 42, 3, 63, 0, 8, 29, 11, 50];
    let a = base.forward(&tokens).unwrap();
    let b = spliced.forward(&tokens).unwrap();
    let twice = base.apply_block(1, a.block_output(1)).unwrap();
    let gap = rel_diff(&b.block_output(2).data, &twice.data);
    ensure!(gap <= 1e-12, "inserted block output differs from block 1 applied twice by {gap:e}");
    ensure!(a.hidden[0] == b.hidden[0], "embeddings differ");
    for block in 0..=1 {
        ensure!(a.block_output(block) == b.block_output(block), "prefix block {block} differs");
    }
    Ok(format!("relative gap {gap:.1e}; embedding and blocks 0..=1 identical"))
}

fn gaussian_log_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Composite Simpson over mu_a +- 12 sigma_a.
fn kl_by_quadrature(a: (f64, f64), b: (f64, f64)) -> f64 {
    let intervals = 20_000;
    let (lo, hi) = (a.0 - 12.0 * a.1, a.0 + 12.0 * a.1);
    let h = (hi - lo) / intervals as f64;
    let f = |x: f64| {
        let la = gaussian_log_pdf(x, a.0, a.1);
        la.exp() * (la - gaussian_log_pdf(x, b.0, b.1))
    };
    let mut sum = f(lo) + f(hi);
    for i in 1..intervals {
        sum += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

fn kl_correctness() -> Outcome {
    let mut rng = rng(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = (rng.random_range(-3.0..3.0), rng.random_range(0.5..3.0));
        let b = (rng.random_range(-3.0..3.0), rng.random_range(0.5..3.0));
        let closed = kl_divergence(&FittedNormal::new(a.0, a.1).unwrap(), &FittedNormal::new(b.0, b.1).unwrap())
            .unwrap();
        let numeric = kl_by_quadrature(a, b);
        worst = worst.max((closed - numeric).abs());
    }
    ensure!(worst <= 1e-6, "closed form differs from quadrature by {worst:e}");

    let t = LayerNameTemplate::default();
    let probe: Vec<Vec<u32>> = vec![vec![1, 2, 3, 4, 5, 6, 7, 8], vec![9, 10, 11], vec![12]];
    let mut checked = 0;
    for (n, seed) in [(3, 1), (5, 2), (8, 3)] {
        let cfg = ToyModelConfig { num_layers: n, ..Default::default() };
        let ckpt = generate_toy_checkpoint_as(&cfg, seed, Dtype::F32).unwrap();
        let model = ToyModel::from_checkpoint(&ckpt, &t).unwrap();
        for mode in [FitMode::Scalar, FitMode::PerDimension] {
            let report = layerwise_kl_report_with(&model, "m", &probe, mode).unwrap();
            for pair in &report.pairs {
                ensure!(pair.kl >= 0.0 && pair.kl.is_finite(), "negative or non-finite kl {}", pair.kl);
                for fit in pair.lower_fit.iter().chain(&pair.upper_fit) {
                    let zero = kl_divergence(fit, fit).unwrap();
                    ensure!(zero == 0.0, "kl of a fit with itself is {zero:e}");
                }
                checked += 1;
            }
        }
    }
    Ok(format!("max |closed - quadrature| {worst:.1e} over 100 pairs; {checked} report pairs nonnegative, self-kl zero"))
}

fn early_exit_consistency() -> Outcome {
    let t = LayerNameTemplate::default();
    let mut compared = 0;
    for (n, positions) in [(4usize, vec![1usize]), (6, vec![2, 4]), (8, vec![0, 5, 6])] {
        let cfg = ToyModelConfig { num_layers: n, ..Default::default() };
        let base_ckpt = generate_toy_checkpoint_as(&cfg, n as u64, Dtype::F32).unwrap();
        let plan = plan(n, &positions, MethodChoice::default(), &BTreeMap::new());
        let spliced_ckpt = splice_checkpoint(&base_ckpt, &plan, &t).unwrap().checkpoint;
        let base = ToyModel::from_checkpoint(&base_ckpt, &t).unwrap();
        let spliced = ToyModel::from_checkpoint(&spliced_ckpt, &t).unwrap();
        let tokens: Vec<u32> = (0..12).map(|i| (i * 7 + n as u32) % 64).collect();

        for model in [&base, &spliced] {
            let top = model.block_count() - 1;
            let exit = model.early_exit_logits(&tokens, top).unwrap();
            ensure!(exit == model.forward(&tokens).unwrap().logits, "top early exit differs from forward logits");
        }
        for b in 0..=positions[0] {
            ensure!(
                base.early_exit_logits(&tokens, b).unwrap() == spliced.early_exit_logits(&tokens, b).unwrap(),
                "N={n}: early exit at block {b} differs before the first insertion"
            );
            compared += 1;
        }
    }
    Ok(format!("top-block exits bitwise equal; {compared} pre-insertion blocks identical"))
}

fn overhead_trend() -> Outcome {
    let t = LayerNameTemplate::default();
    let n = 4;
    let cfg = ToyModelConfig {
        num_layers: n,
        hidden_size: 64,
        num_heads: 4,
        intermediate_size: 172,
        vocab_size: 16,
        ..Default::default()
    };
    let base_ckpt = generate_toy_checkpoint_as(&cfg, 9, Dtype::F32).unwrap();
    let plan = plan(n, &[0, 1, 2], MethodChoice::default(), &BTreeMap::new());
    let spliced_ckpt = splice_checkpoint(&base_ckpt, &plan, &t).unwrap().checkpoint;
    let base = ToyModel::from_checkpoint(&base_ckpt, &t).unwrap();
    let spliced = ToyModel::from_checkpoint(&spliced_ckpt, &t).unwrap();
    let tokens: Vec<u32> = (0..24).map(|i| (i * 5) % 16).collect();

    for _ in 0..10 {
        std::hint::black_box(base.forward(&tokens).unwrap());
        std::hint::black_box(spliced.forward(&tokens).unwrap());
    }
    let time = |m: &ToyModel| {
        let start = Instant::now();
        std::hint::black_box(m.forward(std::hint::black_box(&tokens)).unwrap());
        start.elapsed()
    };
    let (mut tb, mut ts) = (Duration::ZERO, Duration::ZERO);
    for _ in 0..100 {
        tb += time(&base);
        ts += time(&spliced);
    }
    let ratio = ts.as_secs_f64() / tb.as_secs_f64();
    let expected = (n + 3) as f64 / n as f64;
    let detail = format!(
        "mean base {:.3} ms, spliced {:.3} ms, ratio {ratio:.3} vs expected {expected:.2} (band {:.2}..{:.2})",
        tb.as_secs_f64() * 10.0,
        ts.as_secs_f64() * 10.0,
        expected * 0.8,
        expected * 1.2
    );
    ensure!((ratio - expected).abs() <= 0.2 * expected, "{detail}");
    Ok(detail)
}

fn cli(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_layersplice"))
        .args(args)
        .current_dir(dir)
        .env_remove("LAYERSPLICE_LOG")
        .output()
        .unwrap()
}

fn pipeline(dir: &Path) -> Result<(String, Vec<u8>, Vec<u8>), String> {
    std::fs::write(dir.join("probe.jsonl"), "[3, 14, 15, 9, 26, 5, 35]\n[8, 9, 7, 9]\n[32, 38, 46, 26, 43, 38]\n")
        .unwrap();
    let steps: [&[&str]; 3] = [
        &["genmodel", "-o", "base.safetensors", "--layers", "16", "--seed", "2024"],
        // 24 and 28 of 32 blocks, scaled to 16
        &["splice", "base.safetensors", "-o", "spliced.safetensors", "--positions", "12,14"],
        &[
            "diagnose", "--compare", "base.safetensors", "spliced.safetensors", "--probe", "probe.jsonl",
            "--report-out", "report.json",
        ],
    ];
    let mut last = String::new();
    for args in steps {
        let out = cli(args, dir);
        ensure!(
            out.status.code() == Some(0),
            "`{}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        last = String::from_utf8(out.stdout).unwrap();
    }
    let spliced = std::fs::read(dir.join("spliced.safetensors")).unwrap();
    let report = std::fs::read(dir.join("report.json")).unwrap();
    Ok((last, spliced, report))
}

fn end_to_end() -> Outcome {
    let (first, second) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = pipeline(first.path())?;
    let b = pipeline(second.path())?;
    ensure!(a == b, "two runs with the same seed differ");

    let report: serde_json::Value = serde_json::from_slice(&a.2).unwrap();
    let base_pairs = report[0]["base"]["pairs"].as_array().map_or(0, Vec::len);
    let spliced_pairs = report[0]["spliced"]["pairs"].as_array().map_or(0, Vec::len);
    ensure!(spliced_pairs == base_pairs + 2, "pairs: base {base_pairs}, spliced {spliced_pairs}");
    let row = a.0.lines().nth(1).ok_or("no comparison row")?;
    let delta = row.split_whitespace().last().unwrap_or_default();
    ensure!(delta.starts_with('+') || delta.starts_with('-'), "unsigned delta in `{row}`");
    ensure!(delta.parse::<f64>().is_ok(), "unparsable delta `{delta}`");
    Ok(format!("{base_pairs} -> {spliced_pairs} kl pairs, last-pair delta {delta}, two runs bit-identical"))
}
