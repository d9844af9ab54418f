//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dip_core::autograd::{grad_check, GradCheckConfig, Tape, Var};
use dip_core::cli::{
    ablate, build_instance, impedance, main_with_args, restore_seed, HarnessConfig, RunConfig, TaskConfig,
    ABLATION_ARCHS,
};
use dip_core::imaging::{
    center_crop, load, load_tensor, make_mask, psnr, save, save_tensor, ImageBuffer, MaskSpec,
};
use dip_core::network::{ArchitectureSpec, Generator, ParamVars};
use dip_core::tasks::{inpainting_energy, reconstruction_energy, sr_energy, TaskEnergy};
use dip_core::tensor::ResampleMode;
use dip_core::{Rng, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use serde_json::Value;

/// Pinned tolerances and margins.
const GRAD_TOL: f64 = 1e-4;
const GRAD_MIN_COORDS: usize = 100;
const GRAD_STEP: f64 = 1e-5;
/// Required gain of the EMA output over the noisy input: half the +4.40 dB
/// of a pilot run with seed 1001, rounded down to 0.5 dB.
const DENOISE_MARGIN_DB: f64 = 2.0;
const SR_DATA_TERM_MAX: f64 = 1e-3;
const SR_BICUBIC_SLACK_DB: f64 = 0.5;
const HOURGLASS_PARAMS: (usize, usize) = (1_000_000, 3_000_000);

type Outcome = Result<String, String>;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::rand_uniform(rng, shape, lo, hi).unwrap()
}

fn grad_cfg(seed: u64) -> GradCheckConfig {
    GradCheckConfig {
        step: GRAD_STEP,
        samples: 150,
        seed,
        ..Default::default()
    }
}

/// Reduces a non-scalar output with fixed random weights so every output
/// entry contributes a distinct amount to the checked scalar.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> dip_core::Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(random(&mut Rng::new(seed), &shape, -1.0, 1.0));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

type OpCase = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> dip_core::Result<Var>>);

fn op_cases() -> Vec<OpCase> {
    let mut rng = Rng::new(11);
    let mut r = |shape: &[usize]| random(&mut rng, shape, -1.0, 1.0);
    let plane = [3, 6, 6];
    let mask = make_mask(&MaskSpec::Bernoulli { drop: 0.4 }, 3, 6, 6, &mut Rng::new(12)).unwrap();
    let mask2 = mask.clone();
    let ws = weighted_sum;
    vec![
        ("add", vec![r(&plane), r(&plane)], Box::new(move |t, v| {
            let o = t.add(v[0], v[1])?;
            ws(t, o, 1)
        })),
        ("sub", vec![r(&plane), r(&plane)], Box::new(move |t, v| {
            let o = t.sub(v[0], v[1])?;
            ws(t, o, 2)
        })),
        ("mul", vec![r(&plane), r(&plane)], Box::new(move |t, v| {
            let o = t.mul(v[0], v[1])?;
            ws(t, o, 3)
        })),
        ("scale", vec![r(&plane)], Box::new(move |t, v| {
            let o = t.scale(v[0], -2.5);
            ws(t, o, 4)
        })),
        ("channel_bias", vec![r(&plane), r(&[3])], Box::new(move |t, v| {
            let o = t.channel_bias(v[0], v[1])?;
            ws(t, o, 5)
        })),
        ("channel_affine", vec![r(&plane), r(&[3]), r(&[3])], Box::new(move |t, v| {
            let o = t.channel_affine(v[0], v[1], v[2])?;
            ws(t, o, 6)
        })),
        ("conv2d 3x3 stride 1", vec![r(&[3, 7, 7]), r(&[4, 3, 3, 3])], Box::new(move |t, v| {
            let o = t.conv2d(v[0], v[1], 1, 1)?;
            ws(t, o, 7)
        })),
        ("conv2d 3x3 stride 2", vec![r(&[3, 8, 8]), r(&[4, 3, 3, 3])], Box::new(move |t, v| {
            let o = t.conv2d(v[0], v[1], 2, 1)?;
            ws(t, o, 8)
        })),
        ("conv2d 1x1", vec![r(&[4, 6, 6]), r(&[5, 4, 1, 1])], Box::new(move |t, v| {
            let o = t.conv2d(v[0], v[1], 1, 0)?;
            ws(t, o, 9)
        })),
        ("nearest upsample", vec![r(&[3, 6, 6])], Box::new(move |t, v| {
            let o = t.nearest_up(v[0], 2)?;
            ws(t, o, 10)
        })),
        ("bilinear upsample", vec![r(&[3, 6, 6])], Box::new(move |t, v| {
            let o = t.bilinear_up(v[0], 2)?;
            ws(t, o, 11)
        })),
        ("lanczos downsample", vec![r(&[2, 8, 8])], Box::new(move |t, v| {
            let o = t.resample(v[0], ResampleMode::LanczosDown(2))?;
            ws(t, o, 12)
        })),
        ("concat_channels", vec![r(&[2, 6, 6]), r(&[1, 6, 6])], Box::new(move |t, v| {
            let o = t.concat_channels(&[v[0], v[1]])?;
            ws(t, o, 13)
        })),
        ("crop", vec![r(&[3, 8, 8])], Box::new(move |t, v| {
            let o = t.crop(v[0], 1, 2, 6, 5)?;
            ws(t, o, 14)
        })),
        ("leaky_relu", vec![r(&plane)], Box::new(move |t, v| {
            let o = t.leaky_relu(v[0], 0.2);
            ws(t, o, 15)
        })),
        ("sigmoid", vec![r(&plane)], Box::new(move |t, v| {
            let o = t.sigmoid(v[0]);
            ws(t, o, 16)
        })),
        ("instance_norm", vec![r(&plane), r(&[3]), r(&[3])], Box::new(move |t, v| {
            let o = t.instance_norm(v[0], v[1], v[2], 1e-5)?;
            ws(t, o, 17)
        })),
        ("mse", vec![r(&plane), r(&plane)], Box::new(|t, v| t.mse(v[0], v[1]))),
        ("masked_sse", vec![r(&plane), r(&plane)], Box::new(move |t, v| t.masked_sse(v[0], v[1], &mask))),
        ("masked_mse", vec![r(&plane), r(&plane)], Box::new(move |t, v| t.masked_mse(v[0], v[1], &mask2))),
        ("sum", vec![r(&plane)], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("mean", vec![r(&plane)], Box::new(|t, v| Ok(t.mean(v[0])))),
    ]
}

/// Depth-3 hourglass small enough for exhaustive finite differences.
fn tiny_hourglass() -> ArchitectureSpec {
    ArchitectureSpec {
        depth: 3,
        channels: vec![4, 6, 8],
        skip_channels: vec![2; 3],
        input_channels: 4,
        ..ArchitectureSpec::hourglass()
    }
}

fn criterion_gradients() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (i, (name, inputs, f)) in op_cases().into_iter().enumerate() {
        let report = grad_check(f, &inputs, &grad_cfg(i as u64)).map_err(|e| format!("{name}: {e}"))?;
        worst = worst.max(report.max_rel_error);
        if !(report.passes(GRAD_TOL) && report.checked >= GRAD_MIN_COORDS) {
            ok = false;
            lines.push(format!("{name}: rel {:.2e} over {}", report.max_rel_error, report.checked));
        }
    }

    let spec = tiny_hourglass();
    let generator = Generator::new(spec.clone()).unwrap();
    let params = generator.init(21);
    let names: Vec<String> = params.names().to_vec();
    let mut rng = Rng::new(22);
    let z = random(&mut rng, &[4, 16, 16], 0.0, 0.1);
    let target = random(&mut rng, &[3, 16, 16], 0.0, 1.0);
    let mask = make_mask(&MaskSpec::Bernoulli { drop: 0.5 }, 3, 16, 16, &mut rng).unwrap();
    let energies: Vec<(&str, TaskEnergy)> = vec![
        ("reconstruction", reconstruction_energy(target.clone()).unwrap()),
        ("super-resolution", sr_energy(random(&mut rng, &[3, 8, 8], 0.0, 1.0), 2).unwrap()),
        ("inpainting", inpainting_energy(target.mul(&mask).unwrap(), mask).unwrap()),
    ];
    for (i, (name, energy)) in energies.iter().enumerate() {
        let f = |tape: &mut Tape, vars: &[Var]| {
            let pv = ParamVars::new(names.clone(), vars.to_vec());
            let zv = tape.constant(z.clone());
            let x = generator.forward(tape, &pv, zv)?;
            energy.evaluate(tape, x)
        };
        let report = grad_check(f, params.tensors(), &grad_cfg(100 + i as u64)).map_err(|e| format!("{name}: {e}"))?;
        worst = worst.max(report.max_rel_error);
        if !(report.passes(GRAD_TOL) && report.checked >= GRAD_MIN_COORDS) {
            ok = false;
        }
        lines.push(format!(
            "hourglass+{name}: rel {:.2e} over {} ({} kinks skipped)",
            report.max_rel_error, report.checked, report.skipped_kinks
        ));
    }
    let n_ops = op_cases().len();
    check(
        ok,
        format!("{n_ops} ops + 3 network energies, worst rel {worst:.2e}; {}", lines.join("; ")),
    )
}

fn criterion_impedance() -> Outcome {
    let image = load_tensor(data("astronaut_64.png")).unwrap();
    let cfg = HarnessConfig::new(500, 0.01, 0);
    let (s, _) = impedance(&image, 25.0, &cfg, None).map_err(|e| e.to_string())?;
    check(
        s.holds(),
        format!(
            "final loss natural {:.5} noisy {:.5} shuffled {:.5} white {:.5}",
            s.natural, s.noisy, s.shuffled, s.white_noise
        ),
    )
}

fn criterion_denoise() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::for_task(TaskConfig::Denoise {
        input: data("astronaut_128.png"),
        gt: None,
        sigma_synth: Some(25.0),
    });
    cfg.out = dir.path().to_path_buf();
    let summary = dip_core::cli::execute(&cfg).map_err(|e| e.to_string())?;
    let noisy = summary["reference"]["psnr"].as_f64().unwrap();
    let ema = summary["runs"][0]["psnr_ema"].as_f64().unwrap();
    let last = summary["runs"][0]["psnr_final"].as_f64().unwrap();
    check(
        ema - noisy >= DENOISE_MARGIN_DB,
        format!(
            "noisy {noisy:.2} dB, ema {ema:.2} dB (final {last:.2}), gain {:+.2} dB vs required {DENOISE_MARGIN_DB:+.1}",
            ema - noisy
        ),
    )
}

fn criterion_inpaint_invariance() -> Outcome {
    let spec = tiny_hourglass();
    let generator = Generator::new(spec).unwrap();
    let params = generator.init(31);
    let mut rng = Rng::new(32);
    let z = random(&mut rng, &[4, 16, 16], 0.0, 0.1);
    let clean = random(&mut rng, &[3, 16, 16], 0.0, 1.0);
    let mask = make_mask(&MaskSpec::Bernoulli { drop: 0.5 }, 3, 16, 16, &mut rng).unwrap();
    let scrambled = {
        let junk = random(&mut rng, &[3, 16, 16], -50.0, 50.0);
        let data = clean
            .data()
            .iter()
            .zip(junk.data())
            .zip(mask.data())
            .map(|((&c, &j), &m)| if m == 0.0 { j } else { c })
            .collect();
        Tensor::new(&[3, 16, 16], data).unwrap()
    };
    let run = |obs: &Tensor| {
        let energy = inpainting_energy(obs.clone(), mask.clone()).unwrap();
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let zv = tape.constant(z.clone());
        let x = generator.forward(&mut tape, &pv, zv).unwrap();
        let e = energy.evaluate(&mut tape, x).unwrap();
        let grads = tape.backward(e).unwrap();
        let g: Vec<u64> = pv
            .vars()
            .iter()
            .flat_map(|&v| grads.get(v).unwrap().data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect();
        (tape.scalar(e).to_bits(), g)
    };
    let (e1, g1) = run(&clean);
    let (e2, g2) = run(&scrambled);
    let invariant = e1 == e2 && g1 == g2;

    let x = random(&mut rng, &[3, 16, 16], 0.0, 1.0);
    let full = inpainting_energy(clean.clone(), clean.full_like(1.0)).unwrap();
    let sse: f64 = x.data().iter().zip(clean.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let value = full.value(&x).unwrap();
    let exact = value == sse;
    check(
        invariant && exact,
        format!(
            "energy and {} gradient coordinates bitwise equal: {invariant}; m≡1 energy {value} vs Σ(x−y)² {sse}",
            g1.len()
        ),
    )
}

fn criterion_sr() -> Outcome {
    let images = ["astronaut_128.png", "coffee_128.png", "chelsea_128.png"];
    let mut lines = Vec::new();
    let (mut dip, mut bic, mut worst_data) = (0.0, 0.0, 0.0f64);
    for name in images {
        let cfg = RunConfig::for_task(TaskConfig::SuperResolve {
            input: data(name),
            gt: None,
            factor: 4,
            synthesize: true,
        });
        let inst = build_instance(&cfg).map_err(|e| e.to_string())?;
        let (_, h, w) = inst.energy.observation().chw().unwrap();
        if (h, w) != (32, 32) {
            return Err(format!("{name}: observation {h}x{w}"));
        }
        let r = restore_seed(&cfg, &inst, cfg.seeds[0]).map_err(|e| e.to_string())?;
        let data_term = inst.energy.value(&r.image).map_err(|e| e.to_string())?;
        let gt = inst.ground_truth.as_ref().unwrap();
        let p = psnr(&r.image, gt, 4).unwrap();
        let b = inst.reference.unwrap().1;
        worst_data = worst_data.max(data_term);
        dip += p / 3.0;
        bic += b / 3.0;
        lines.push(format!(
            "{name}: data {data_term:.2e}, dip {p:.2} dB (ema {:.2}), bicubic {b:.2} dB",
            r.psnr_ema.unwrap()
        ));
    }
    check(
        worst_data < SR_DATA_TERM_MAX && dip >= bic - SR_BICUBIC_SLACK_DB,
        format!("mean dip {dip:.2} dB vs bicubic {bic:.2} dB; {}", lines.join("; ")),
    )
}

/// Drops timing fields so reruns compare equal.
fn without_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_time_s");
            map.values_mut().for_each(without_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(without_timing),
        _ => {}
    }
}

fn csv_without_timing(text: &str) -> String {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let keep: Vec<bool> = header.split(',').map(|h| h != "wall_time_s").collect();
    std::iter::once(header)
        .chain(lines)
        .map(|l| {
            l.split(',')
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(c, _)| c)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            let bytes = std::fs::read(&path).unwrap();
            let bytes = match path.extension().and_then(|e| e.to_str()) {
                Some("json") => {
                    let mut v: Value = serde_json::from_slice(&bytes).unwrap();
                    without_timing(&mut v);
                    v.to_string().into_bytes()
                }
                Some("csv") => csv_without_timing(&String::from_utf8(bytes).unwrap()).into_bytes(),
                _ => bytes,
            };
            files.insert(rel, bytes);
        }
    }
    files
}

fn criterion_determinism() -> Outcome {
    let work = tempfile::tempdir().unwrap();
    let img = data("astronaut_64.png");
    let small = work.path().join("small.png");
    save_tensor(&small, &center_crop(&load_tensor(&img).unwrap(), 32, 32).unwrap()).unwrap();
    let dim = work.path().join("dim.png");
    save_tensor(&dim, &load_tensor(&small).unwrap().scale(0.4)).unwrap();
    let dataset = work.path().join("set");
    std::fs::create_dir_all(&dataset).unwrap();
    std::fs::copy(&small, dataset.join("a.png")).unwrap();
    std::fs::write(
        dataset.join("manifest.json"),
        r#"{"images": [{"name": "a", "ground_truth": "a.png"}], "factor": 2}"#,
    )
    .unwrap();
    let p = |x: &Path| x.to_string_lossy().into_owned();
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("denoise", vec!["denoise".into(), "--input".into(), p(&small), "--sigma-synth".into(), "25".into(), "--seeds".into(), "2".into(), "--average".into()]),
        ("sr", vec!["sr".into(), "--input".into(), p(&small), "--synth".into(), "--factor".into(), "2".into()]),
        ("inpaint", vec!["inpaint".into(), "--input".into(), p(&small), "--mask".into(), "bernoulli:0.5".into(), "--snapshot-at".into(), "2".into()]),
        ("flash", vec!["flash".into(), "--flash".into(), p(&small), "--noflash".into(), p(&dim)]),
        ("restore", vec!["restore".into(), "--input".into(), p(&small), "--gt".into(), p(&small)]),
        ("impedance", vec!["impedance".into(), "--input".into(), p(&small), "--iters".into(), "3".into()]),
        ("ablate", vec!["ablate".into(), "--input".into(), p(&small), "--iters".into(), "2".into()]),
        ("bench-denoise", vec!["bench".into(), "--dataset".into(), p(&dataset), "--task".into(), "denoise".into(), "--iters".into(), "3".into()]),
        ("bench-sr", vec!["bench".into(), "--dataset".into(), p(&dataset), "--task".into(), "sr".into(), "--iters".into(), "3".into()]),
    ];
    let mut failures = Vec::new();
    let mut compared = 0;
    for (name, args) in &commands {
        let harness = matches!(*name, "impedance" | "ablate") || name.starts_with("bench");
        let mut trees = Vec::new();
        for rep in 0..2 {
            let out = work.path().join(format!("{name}_{rep}"));
            let mut full = vec!["dip".to_string()];
            full.extend(args.iter().cloned());
            full.extend(["--out".to_string(), p(&out)]);
            if !harness {
                full.extend(["--iters".to_string(), "3".to_string(), "--trace-every".to_string(), "1".to_string()]);
            }
            let code = main_with_args(full);
            if code != 0 {
                failures.push(format!("{name} exited {code}"));
            }
            trees.push(snapshot(&out));
        }
        compared += trees[0].len();
        if trees[0].is_empty() || trees[0] != trees[1] {
            let differing: Vec<&String> = trees[0]
                .iter()
                .filter(|(k, v)| trees[1].get(*k) != Some(v))
                .map(|(k, _)| k)
                .collect();
            failures.push(format!("{name} differs in {differing:?}"));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} subcommand runs repeated, {compared} files identical", commands.len())
        } else {
            failures.join("; ")
        },
    )
}

fn round_trip(img: &ImageBuffer, dir: &Path) -> Result<(), String> {
    let pnm = if img.channels() == 1 { "pgm" } else { "ppm" };
    for ext in ["png", pnm] {
        let path = dir.join(format!("img.{ext}"));
        save(&path, img).map_err(|e| format!("{ext}: {e}"))?;
        let back = load(&path).map_err(|e| format!("{ext}: {e}"))?;
        if &back != img {
            return Err(format!("{ext}: {}x{}x{} changed", img.width(), img.height(), img.channels()));
        }
    }
    Ok(())
}

fn criterion_formats() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut edge = Vec::new();
    for c in [1, 3] {
        for (w, h) in [(1, 1), (1, 9), (9, 1), (7, 5), (33, 17)] {
            for fill in [0u8, 255] {
                edge.push(ImageBuffer::new(w, h, c, vec![fill; w * h * c]).unwrap());
            }
            let ramp = (0..w * h * c).map(|i| (i * 37 % 256) as u8).collect();
            edge.push(ImageBuffer::new(w, h, c, ramp).unwrap());
        }
    }
    for img in &edge {
        round_trip(img, dir.path())?;
    }

    let strategy = (1usize..=24, 1usize..=24, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
        let sample = prop_oneof![Just(0u8), Just(255u8), Just(1u8), Just(254u8), any::<u8>()];
        proptest::collection::vec(sample, w * h * c).prop_map(move |s| ImageBuffer::new(w, h, c, s).unwrap())
    });
    let cases = 256;
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&strategy, |img| {
            round_trip(&img, dir.path()).map_err(proptest::test_runner::TestCaseError::fail)
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{} edge images and {cases} random images identical after PNG and PNM round trips", edge.len()))
}

fn criterion_ablation() -> Outcome {
    let image = load_tensor(data("astronaut_64.png")).unwrap();
    let archs: Vec<String> = ABLATION_ARCHS.iter().map(|s| s.to_string()).collect();
    let cfg = HarnessConfig::new(200, 0.01, 0);
    let rows = ablate(&image, &MaskSpec::Bernoulli { drop: 0.5 }, &archs, &cfg, None).map_err(|e| e.to_string())?;
    let hourglass = rows.iter().find(|r| r.arch == "hourglass").map(|r| r.parameters).unwrap_or(0);
    let finite = rows.iter().all(|r| r.final_energy.is_finite() && r.psnr_final.is_finite());
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {} params {:.2} dB", r.arch, r.parameters, r.psnr_final))
        .collect();
    check(
        rows.len() == 6 && finite && (HOURGLASS_PARAMS.0..=HOURGLASS_PARAMS.1).contains(&hourglass),
        table.join("; "),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "gradient oracles", criterion_gradients),
        (2, "noise impedance ordering", criterion_impedance),
        (3, "desk-scale denoising", criterion_denoise),
        (4, "inpainting invariance", criterion_inpaint_invariance),
        (5, "desk-scale super-resolution", criterion_sr),
        (6, "determinism", criterion_determinism),
        (7, "format round trips", criterion_formats),
        (8, "architecture ablation", criterion_ablation),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS in {secs:.1}s — {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL in {secs:.1}s — {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
