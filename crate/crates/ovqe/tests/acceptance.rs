//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per
//! criterion and fails if any criterion fails.

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ovqe::io::write_yuv420;
use ovqe_core::codec::mock_encode_decode;
use ovqe_core::metrics::{bd_rate, fit_log_rate, psnr, Cubic, RdPoint, PSNR_INFINITE};
use ovqe_core::nn::{deformable_sample, enhance_luma, enhance_sequence, frequency_decompose, DeformShape, FeatureMap, ModelConfig, Weights};
use ovqe_core::synthetic::moving_texture;
use ovqe_core::train::{charbonnier_loss, gradient_check, make_patches, train_from, GroupCheck, TrainConfig, TrainingSample};
use ovqe_core::frame::Plane;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
    FeatureMap::from_values(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn c1_charbonnier() -> Check {
    let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let same = charbonnier_loss(&x, &x, 1e-6).map_err(|e| e.to_string())?;
    ensure((same - 1e-3).abs() < 1e-12, || format!("loss(x, x) = {same:e}"))?;
    let three = charbonnier_loss(&[3.0f64], &[0.0], 1e-6).map_err(|e| e.to_string())?;
    let want = (9.0f64 + 1e-6).sqrt();
    ensure((three - want).abs() < 1e-12, || format!("loss(3) = {three} want {want}"))?;
    Ok(format!("loss(x,x) = {same:.15}, loss(d=3) = {three:.15}"))
}

fn tiny_samples() -> Vec<TrainingSample<f64>> {
    let raw = moving_texture(3, 16, 16, 11);
    let dec = mock_encode_decode(&raw, 42).unwrap().decoded;
    let mut s = make_patches::<f64>(&raw, &dec, 8, 8, 1, 1).unwrap();
    s.truncate(2);
    s
}

fn run_gradcheck() -> Vec<GroupCheck> {
    let w = Weights::<f64>::random(&ModelConfig::tiny(), 21).unwrap();
    gradient_check(&w, &tiny_samples()[..1], 1e-6, 1e-6, 0).unwrap()
}

fn c2_gradients(keep: &mut Vec<GroupCheck>) -> Check {
    let t = Instant::now();
    let groups = run_gradcheck();
    let elapsed = t.elapsed();
    keep.clone_from(&groups);
    let worst = groups.iter().map(|g| g.rel_error).fold(0.0, f64::max);
    for g in &groups {
        ensure(g.entries > 0 && g.analytic_norm > 0.0, || format!("group {} has no gradient signal", g.group))?;
        ensure(g.rel_error < 1e-4, || format!("group {} relative error {:e}", g.group, g.rel_error))?;
    }
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    let entries: usize = groups.iter().map(|g| g.entries).sum();
    Ok(format!("{} groups, {entries} entries, worst relative error {worst:.2e}, {:.1}s", groups.len(), elapsed.as_secs_f64()))
}

fn c3_bands() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (c, h, w) = (rng.random_range(1..5), rng.random_range(4..25), rng.random_range(4..25));
        let x = random_map(&mut rng, c, h, w);
        let b = frequency_decompose(&x).map_err(|e| e.to_string())?;
        for i in 0..x.values.len() {
            worst = worst.max((b.low.values[i] + b.mid.values[i] + b.high.values[i] - x.values[i]).abs());
        }
        let x32: FeatureMap<f32> = x.cast();
        let b = frequency_decompose(&x32).map_err(|e| e.to_string())?;
        for i in 0..x32.values.len() {
            worst = worst.max((b.low.values[i] + b.mid.values[i] + b.high.values[i] - x32.values[i]).abs() as f64);
        }
    }
    ensure(worst < 1e-6, || format!("reconstruction error {worst:e}"))?;
    let k = FeatureMap::<f64>::filled(3, 9, 13, 0.731);
    let b = frequency_decompose(&k).map_err(|e| e.to_string())?;
    let mh = b.mid.values.iter().chain(&b.high.values).fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(mh < 1e-6, || format!("constant input leaves {mh:e} in mid/high"))?;
    Ok(format!("max reconstruction error {worst:.2e}, constant-input mid/high {mh:.2e}"))
}

fn c4_deform() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w) = (9, 11);
    let x = random_map(&mut rng, 1, h, w);
    // 3x3 kernel with only the centre tap active, so the output is one sample.
    let s = DeformShape { channels: 1, cout: 1, k: 3, groups: 1 };
    let mut weight = vec![0.0; 9];
    weight[4] = 1.0;
    let mut off = FeatureMap::zeros(18, h, w);
    let mask = FeatureMap::filled(9, h, w, 1.0);
    let mut shifts = Vec::new();
    for p in 0..h * w {
        let (dy, dx) = (rng.random_range(-2i32..=2), rng.random_range(-2i32..=2));
        off.values[8 * h * w + p] = dy as f64;
        off.values[9 * h * w + p] = dx as f64;
        shifts.push((dy, dx));
    }
    let out = deformable_sample(&x, &off, &mask, &weight, s).map_err(|e| e.to_string())?;
    for p in 0..h * w {
        let (y, xx) = ((p / w) as i32, (p % w) as i32);
        let (sy, sx) = (y + shifts[p].0, xx + shifts[p].1);
        let want = if sy >= 0 && sx >= 0 && sy < h as i32 && sx < w as i32 { x.at(0, sy as usize, sx as usize) } else { 0.0 };
        ensure(out.values[p] == want, || format!("integer shift mismatch at {p}: {} vs {want}", out.values[p]))?;
    }
    let (a, b, c) = (0.37, -0.81, 0.25);
    let ramp = FeatureMap::from_values(1, h, w, (0..h * w).map(|i| a * (i / w) as f64 + b * (i % w) as f64 + c).collect()).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..20 {
        let mut off = FeatureMap::zeros(18, h, w);
        for p in 0..h * w {
            off.values[8 * h * w + p] = rng.random_range(-1.5..1.5);
            off.values[9 * h * w + p] = rng.random_range(-1.5..1.5);
        }
        let out = deformable_sample(&ramp, &off, &mask, &weight, s).map_err(|e| e.to_string())?;
        for p in 0..h * w {
            let py = (p / w) as f64 + off.values[8 * h * w + p];
            let px = (p % w) as f64 + off.values[9 * h * w + p];
            if py >= 0.0 && px >= 0.0 && py <= (h - 1) as f64 && px <= (w - 1) as f64 {
                worst = worst.max((out.values[p] - (a * py + b * px + c)).abs());
                checked += 1;
            }
        }
    }
    ensure(worst < 1e-6, || format!("ramp error {worst:e}"))?;
    Ok(format!("{} integer shifts exact, {checked} fractional ramp samples max error {worst:.2e}", h * w))
}

fn c5_psnr() -> Check {
    let a = Plane::new(16, 8, 8, (0..128).map(|i| (i * 7 % 250) as u16).collect()).map_err(|e| e.to_string())?;
    let b = Plane::new(16, 8, 8, a.samples().iter().map(|&s| s + 1).collect()).map_err(|e| e.to_string())?;
    let v = psnr(&a, &b).map_err(|e| e.to_string())?;
    ensure((v - 48.1308).abs() < 1e-4, || format!("MSE=1 gives {v}"))?;
    let inf = psnr(&a, &a).map_err(|e| e.to_string())?;
    ensure(inf == PSNR_INFINITE, || format!("identical planes give {inf}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let p = Plane::new(12, 6, 10, (0..72).map(|_| rng.random_range(0..1024)).collect()).unwrap();
        let q = Plane::new(12, 6, 10, (0..72).map(|_| rng.random_range(0..1024)).collect()).unwrap();
        ensure(psnr(&p, &q).unwrap() == psnr(&q, &p).unwrap(), || "asymmetric PSNR".into())?;
    }
    Ok(format!("MSE=1 -> {v:.6} dB, identical -> inf, symmetric on 50 random pairs"))
}

fn simpson(f: &Cubic, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f.eval(a) + f.eval(b);
    for i in 1..n {
        s += f.eval(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn dense_bd(anchor: &[RdPoint], test: &[RdPoint]) -> f64 {
    let fa = fit_log_rate(anchor).unwrap();
    let ft = fit_log_rate(test).unwrap();
    let range = |c: &[RdPoint]| c.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.psnr_db), h.max(p.psnr_db)));
    let ((al, ah), (tl, th)) = (range(anchor), range(test));
    let (lo, hi) = (al.max(tl), ah.min(th));
    let n = 20_000;
    let avg = (simpson(&ft, lo, hi, n) - simpson(&fa, lo, hi, n)) / (hi - lo);
    (10f64.powf(avg) - 1.0) * 100.0
}

fn c6_bdrate() -> Check {
    let anchor = [(95.0, 29.4), (180.0, 32.1), (370.0, 35.3), (800.0, 38.0)].map(|(r, p)| RdPoint::new(r, p));
    let same = bd_rate(&anchor, &anchor).map_err(|e| e.to_string())?;
    ensure(same.abs() < 1e-9, || format!("identical curves give {same}"))?;
    let scaled = anchor.map(|p| RdPoint::new(0.8 * p.bitrate_kbps, p.psnr_db));
    let bd = bd_rate(&anchor, &scaled).map_err(|e| e.to_string())?;
    ensure((bd + 20.0).abs() < 1e-3, || format!("0.8x scaling gives {bd}"))?;
    let oracle = dense_bd(&anchor, &scaled);
    ensure((bd - oracle).abs() < 1e-6, || format!("analytic {bd} vs dense {oracle}"))?;
    let other = [(90.0, 29.9), (170.0, 32.4), (360.0, 35.9), (700.0, 38.3)].map(|(r, p)| RdPoint::new(r, p));
    let bd2 = bd_rate(&anchor, &other).map_err(|e| e.to_string())?;
    let oracle2 = dense_bd(&anchor, &other);
    ensure((bd2 - oracle2).abs() < 1e-6, || format!("analytic {bd2} vs dense {oracle2}"))?;
    Ok(format!("identical {same:e}, 0.8x -> {bd:.9} % (dense {oracle:.9}), generic pair {bd2:.6} % (dense {oracle2:.6})"))
}

fn c7_bidirectional() -> Check {
    let cfg = ModelConfig::default();
    let w = Weights::<f64>::random(&cfg, 7).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let frames: Vec<FeatureMap<f64>> = (0..3).map(|_| random_map(&mut rng, 1, 16, 16)).collect();
    let base = enhance_luma(&frames, &w, &cfg).map_err(|e| e.to_string())?;
    let diff = |which: usize, rng: &mut ChaCha8Rng| -> Result<f64, String> {
        let mut f = frames.clone();
        f[which].values.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        let out = enhance_luma(&f, &w, &cfg).map_err(|e| e.to_string())?;
        Ok(out[1].values.iter().zip(&base[1].values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    };
    let later = diff(2, &mut rng)?;
    let earlier = diff(0, &mut rng)?;
    ensure(later > 0.0 && earlier > 0.0, || format!("frame 3 -> {later:e}, frame 1 -> {earlier:e}"))?;
    Ok(format!("|d out2| from frame 3: {later:.3e}, from frame 1: {earlier:.3e}"))
}

fn c8_identity() -> Check {
    let cfg = ModelConfig::default();
    let mut w = Weights::<f32>::random(&cfg, 8).map_err(|e| e.to_string())?;
    w.zero_prefix("head");
    let raw = moving_texture(5, 32, 32, 8);
    let dec = mock_encode_decode(&raw, 37).unwrap().decoded;
    let out = enhance_sequence(&dec, &w, &cfg).map_err(|e| e.to_string())?;
    ensure(out.to_i420_bytes() == dec.to_i420_bytes(), || "output differs from input".into())?;
    Ok(format!("{} frames byte-identical", out.len()))
}

const TOY_STEPS: usize = 400;

fn toy_config() -> String {
    format!(
        r#"out = "out"
weights = "out/weights.ovqe"
qps = [32, 37, 42, 47]

[[sequence]]
name = "toy"
path = "toy.yuv"
width = 64
height = 64

[model]
channels = 32
temporal_radius = 1
propagation_rounds = 1
ofae_blocks = 2
offset_groups = 4
seed = 1

[train]
qp = 37
steps = {TOY_STEPS}
batch_size = 2
patch_size = 16
stride = 8
learning_rate = 0.0005
seed = 1
"#
    )
}

fn ovqe(dir: &Path, args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_ovqe"))
        .args(args)
        .arg("--config")
        .arg(dir.join("run.toml"))
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("ovqe {args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn column(path: &Path, idx: usize) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines().skip(1).map(|l| l.split(',').nth(idx).unwrap_or("").parse::<f64>().map_err(|e| e.to_string())).collect()
}

fn c9_toy(dir: &Path) -> Check {
    let raw = moving_texture(16, 64, 64, 2024);
    write_yuv420(&raw, &dir.join("toy.yuv")).map_err(|e| e.to_string())?;
    fs::write(dir.join("run.toml"), toy_config()).map_err(|e| e.to_string())?;
    let t = Instant::now();
    ovqe(dir, &["train"])?;
    let train_time = t.elapsed();
    let loss = column(&dir.join("out/loss.csv"), 1)?;
    ensure(loss.len() == TOY_STEPS, || format!("loss trace has {} rows", loss.len()))?;
    let n = loss.len() / 10;
    let first = loss[..n].iter().sum::<f64>() / n as f64;
    let last = loss[loss.len() - n..].iter().sum::<f64>() / n as f64;
    ensure(last < first, || format!("loss did not decrease: {first} -> {last}"))?;

    let eval_dir = dir.join("eval");
    ovqe(dir, &["evaluate", "--out", eval_dir.to_str().unwrap()])?;
    let delta = column(&eval_dir.join("toy/qp37/psnr.csv"), 3)?;
    let dpsnr = delta.iter().sum::<f64>() / delta.len() as f64;
    ensure(eval_dir.join("toy/qp37/psnr.svg").is_file(), || "missing PSNR plot".into())?;

    let bd_dir = dir.join("bd");
    ovqe(dir, &["bdrate", "--out", bd_dir.to_str().unwrap()])?;
    let bd = column(&bd_dir.join("bdrate.csv"), 3)?;
    ensure(bd.len() == 1, || "bdrate.csv should hold one row".into())?;
    ensure(bd_dir.join("toy/rd.svg").is_file(), || "missing RD plot".into())?;
    let detail = format!(
        "train {:.0}s, loss {first:.5} -> {last:.5}, delta PSNR @QP37 {dpsnr:+.3} dB, BD-rate {:+.2} %",
        train_time.as_secs_f64(),
        bd[0]
    );
    ensure(dpsnr >= 0.3, || format!("delta PSNR too small; {detail}"))?;
    ensure(bd[0] < 0.0, || format!("BD-rate not negative; {detail}"))?;
    Ok(detail)
}

fn tiny_trace() -> Vec<f64> {
    let w = Weights::<f64>::random(&ModelConfig::tiny(), 5).unwrap();
    let tc = TrainConfig { learning_rate: 1e-3, steps: 6, batch_size: 2, patch_size: 8, stride: 8, seed: 3, ..TrainConfig::default() };
    train_from(w, &tiny_samples(), &tc, |_, _| Ok(())).unwrap().losses.iter().map(|r| r.loss).collect()
}

fn c10_determinism(dir: &Path, first_checks: &[GroupCheck]) -> Check {
    let again = run_gradcheck();
    ensure(again == first_checks, || "gradient audit differs between runs".into())?;
    let (a, b) = (tiny_trace(), tiny_trace());
    ensure(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), || "tiny training traces differ".into())?;
    let rerun = dir.join("rerun");
    // The config pins the weights path, so the rerun overwrites it.
    let wa = fs::read(dir.join("out/weights.ovqe")).map_err(|e| e.to_string())?;
    ovqe(dir, &["train", "--out", rerun.to_str().unwrap()])?;
    let x = fs::read(dir.join("out/loss.csv")).map_err(|e| e.to_string())?;
    let y = fs::read(rerun.join("loss.csv")).map_err(|e| e.to_string())?;
    ensure(x == y, || "toy loss.csv differs between runs".into())?;
    let wb = fs::read(dir.join("out/weights.ovqe")).map_err(|e| e.to_string())?;
    ensure(wa == wb, || "toy weights differ between runs".into())?;
    Ok(format!("gradient audit, tiny f64 trace and {TOY_STEPS}-step toy loss.csv/weights identical on rerun"))
}

fn c11_external(dir: &Path) -> Outcome {
    let (Some(enc), Some(dec)) = (std::env::var_os("OVQE_ENCODER"), std::env::var_os("OVQE_DECODER")) else {
        return Outcome::Skip("OVQE_ENCODER / OVQE_DECODER not set".into());
    };
    if which::which(&enc).is_err() || which::which(&dec).is_err() {
        return Outcome::Skip("configured encoder or decoder not executable".into());
    }
    let run = || -> Check {
        let raw = moving_texture(8, 416, 240, 11);
        write_yuv420(&raw, &dir.join("classd.yuv")).map_err(|e| e.to_string())?;
        let cfg = r#"out = "out"
weights = "out/weights.ovqe"
qps = [32, 37, 42, 47]

[[sequence]]
name = "classd"
path = "classd.yuv"
width = 416
height = 240

[codec]
kind = "external"

[model]
channels = 8
offset_groups = 2

[train]
qp = 37
steps = 5
patch_size = 32
stride = 64
"#;
        fs::write(dir.join("run.toml"), cfg).map_err(|e| e.to_string())?;
        ovqe(dir, &["train"])?;
        let qp37 = dir.join("qp37");
        fs::write(dir.join("run.toml"), cfg.replace("qps = [32, 37, 42, 47]", "qps = [37]")).map_err(|e| e.to_string())?;
        ovqe(dir, &["enhance", "--out", qp37.to_str().unwrap()])?;
        ovqe(dir, &["evaluate", "--out", qp37.to_str().unwrap()])?;
        fs::write(dir.join("run.toml"), cfg).map_err(|e| e.to_string())?;
        ovqe(dir, &["bdrate"])?;
        for f in ["out/loss.csv", "out/loss.svg", "qp37/classd/qp37/psnr.csv", "qp37/classd/qp37/psnr.svg", "qp37/summary.csv", "out/bdrate.csv", "out/classd/rd.csv", "out/classd/rd.svg"] {
            ensure(dir.join(f).is_file(), || format!("missing {f}"))?;
        }
        Ok("external codec pipeline produced all artifacts".into())
    };
    match run() {
        Ok(s) => Outcome::Pass(s),
        Err(e) => Outcome::Fail(e),
    }
}

fn guarded(f: impl FnOnce() -> Check) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => Outcome::Pass(s),
        Ok(Err(e)) => Outcome::Fail(e),
        Err(p) => Outcome::Fail(
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()),
        ),
    }
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().unwrap();
    let toy = work.path().join("toy");
    let ext = work.path().join("external");
    fs::create_dir_all(&toy).unwrap();
    fs::create_dir_all(&ext).unwrap();
    let mut first_checks = Vec::new();

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        let line = match &o {
            Outcome::Pass(d) => format!("criterion {n:>2} PASS {name}: {d}"),
            Outcome::Fail(d) => format!("criterion {n:>2} FAIL {name}: {d}"),
            Outcome::Skip(d) => format!("criterion {n:>2} SKIP {name}: {d}"),
        };
        report(&line);
        results.push((n, name, o));
    };
    record(1, "Charbonnier analytics", guarded(c1_charbonnier));
    record(
        2,
        "gradient audit",
        guarded(|| c2_gradients(&mut first_checks)),
    );
    record(3, "band completeness", guarded(c3_bands));
    record(4, "deformable sampling oracle", guarded(c4_deform));
    record(5, "PSNR closed form", guarded(c5_psnr));
    record(6, "BD-rate oracle", guarded(c6_bdrate));
    record(7, "bidirectional information flow", guarded(c7_bidirectional));
    record(8, "residual identity", guarded(c8_identity));
    record(9, "toy overfit", guarded(|| c9_toy(&toy)));
    record(10, "determinism", guarded(|| c10_determinism(&toy, &first_checks)));
    record(11, "external codec integration", c11_external(&ext));

    let failed: Vec<usize> = results.iter().filter(|r| matches!(r.2, Outcome::Fail(_))).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
