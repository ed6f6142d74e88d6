//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so every line reaches the terminal.
//!
//! Exits non-zero if any criterion fails, except that a failing criterion 6
//! (the calibrated experiment) is reported but only fails the process under
//! `AMVC_ACCEPTANCE_STRICT=1`. `AMVC_ACCEPTANCE=1,4` runs a subset.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use amvc_core::data::{
    decode_clip, encode_clip, generate_dataset, read_clip, render_clip, write_clip, class_specs, DatasetSpec,
    DomainSpec,
};
use amvc_core::models::checkpoint::{bundle_records, encode_records};
use amvc_core::models::{load_checkpoint, save_checkpoint, ModelBundle, Net};
use amvc_core::objectives::{domain_loss, masked_domain_loss, DomainNets, SOURCE, TARGET};
use amvc_core::tensor::{AdamWConfig, Tape, Tensor};
use amvc_core::testing::suites::{loss_cases, micro_config, primitive_cases, rand_tensor};
use amvc_core::train::{
    read_metrics, run, run_seed, summarize, ExperimentConfig, ExperimentData, Phase, TrainConfig, Trainer,
    CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, RUN_STATE_FILE,
};
use amvc_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn bundle64(seed: u64) -> ModelBundle<f64> {
    ModelBundle::new(micro_config(), AdamWConfig::default(), seed).unwrap()
}

fn micro_batch(rng: &mut ChaCha8Rng, b: usize) -> Tensor<f64> {
    let [t, c, h, w] = micro_config().encoder.clip_shape();
    rand_tensor(rng, &[b, t, c, h, w]).map(|v| 0.5 + 0.5 * v)
}

/// 1. Every primitive and composite loss against central differences.
fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let mut cases = primitive_cases(2024, 10);
    cases.extend(loss_cases(77, 10));
    let mut per_name = std::collections::BTreeMap::<&str, usize>::new();
    let mut worst = (0.0f64, "");
    for case in &cases {
        let r = case.run().map_err(fail)?;
        *per_name.entry(case.name).or_default() += 1;
        if r.max_rel_err > worst.0 {
            worst = (r.max_rel_err, case.name);
        }
        ensure(r.passes(1e-4), || format!("{} relative error {:.2e}", case.name, r.max_rel_err))?;
    }
    let few = per_name.iter().find(|(_, &n)| n < 10);
    ensure(few.is_none(), || format!("{:?} has fewer than 10 instances", few))?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs <= 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} checks over {} ops/losses, worst rel err {:.2e} ({}), {secs:.1}s",
        cases.len(),
        per_name.len(),
        worst.0,
        worst.1
    ))
}

fn encoder_phase_grads(bd: &ModelBundle<f64>, x: &Tensor<f64>, m: &Tensor<f64>, lambda: f64, reverse: bool) -> Result<(Vec<Tensor<f64>>, Vec<Tensor<f64>>, f64), String> {
    let tape = Tape::new();
    let p = bd.bind(&tape, &[Net::Encoder, Net::Domain]);
    let nets = DomainNets {
        encoder: &bd.encoder,
        encoder_params: &p.encoder,
        head: &bd.domain,
        head_params: &p.domain,
    };
    let n = x.shape()[0];
    let d: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { SOURCE } else { TARGET }).collect();
    let l = masked_domain_loss(&nets, tape.constant(x.clone()), tape.constant(m.clone()), &d, lambda, reverse)
        .map_err(fail)?;
    let value = l.item();
    let mut g = tape.backward(l).map_err(fail)?;
    let f = p.encoder.grads(&mut g).into_iter().map(|t| t.unwrap()).collect();
    let dg = p.domain.grads(&mut g).into_iter().map(|t| t.unwrap()).collect();
    Ok((f, dg, value))
}

/// 2. GRL: identity forward, exact −λ flip of encoder gradients.
fn grl_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // forward identity, bit for bit, in both precisions
    let x = rand_tensor(&mut rng, &[6, 7]);
    for lambda in [0.5, 1.0, 2.0, 0.3] {
        let tape = Tape::<f64>::new();
        let y = tape.constant(x.clone()).grl(lambda).to_tensor();
        ensure(y == x, || format!("f64 forward changed values at λ={lambda}"))?;
        let x32 = x.cast::<f32>();
        let tape = Tape::<f32>::new();
        let y = tape.constant(x32.clone()).grl(lambda as f32).to_tensor();
        ensure(y == x32, || format!("f32 forward changed values at λ={lambda}"))?;
    }
    let mut checked = 0;
    for seed in 0..3 {
        let bd = bundle64(100 + seed);
        let x = micro_batch(&mut rng, 4);
        let m = rand_tensor(&mut rng, &[4, 2, 1, 4, 4]).map(|v| 0.5 + 0.5 * v);
        let (f_plain, d_plain, l_plain) = encoder_phase_grads(&bd, &x, &m, 1.0, false)?;
        for lambda in [0.5, 1.0, 2.0] {
            let (f_rev, d_rev, l_rev) = encoder_phase_grads(&bd, &x, &m, lambda, true)?;
            ensure(l_rev.to_bits() == l_plain.to_bits(), || "loss value changed under reversal".into())?;
            for (a, b) in f_rev.iter().zip(&f_plain) {
                for (ga, gb) in a.data().iter().zip(b.data()) {
                    ensure(*ga == -(lambda * gb), || {
                        format!("encoder grad {ga} != -{lambda}·{gb}")
                    })?;
                    checked += 1;
                }
            }
            ensure(d_rev == d_plain, || format!("domain-head grads differ at λ={lambda}"))?;
        }
    }
    Ok(format!("{checked} encoder gradient entries exact for λ ∈ {{0.5, 1, 2}}; head grads identical"))
}

/// 3. All-ones masks reduce the masked domain loss to the plain one.
fn ones_mask_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let bd = bundle64(i);
        let b = 2 + (i as usize % 4);
        let x = micro_batch(&mut rng, b);
        let d: Vec<f64> = (0..b).map(|_| if rng.random_bool(0.5) { SOURCE } else { TARGET }).collect();
        let tape = Tape::new();
        let p = bd.bind(&tape, &[]);
        let xv = tape.constant(x);
        let nets = DomainNets {
            encoder: &bd.encoder,
            encoder_params: &p.encoder,
            head: &bd.domain,
            head_params: &p.domain,
        };
        let ones = tape.constant(Tensor::ones(&[b, 2, 1, 4, 4]));
        let masked = masked_domain_loss(&nets, xv, ones, &d, 1.0, false).map_err(fail)?.item();
        let feats = bd.encoder.forward(&p.encoder, xv).map_err(fail)?;
        let plain = domain_loss(&bd.domain, &p.domain, feats, &d).map_err(fail)?.item();
        worst = worst.max((masked - plain).abs());
    }
    ensure(worst <= 1e-6, || format!("max difference {worst:.2e}"))?;
    Ok(format!("20 batches, max |difference| {worst:.2e}"))
}

/// 4. Mask values, softmax normalization and the uniform-logit case. Checked
/// in f64: an f32 softmax over 16k positions cannot sum to 1 within 1e-6.
fn mask_contract() -> Outcome {
    let config = amvc_core::models::ModelConfig::default();
    let [t, c, h, w] = config.encoder.clip_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst_sum = 0.0f64;
    for i in 0..100 {
        let bd = ModelBundle::<f64>::new(config.clone(), AdamWConfig::default(), 1000 + i).map_err(fail)?;
        let clip = rand_tensor(&mut rng, &[t, c, h, w]).map(|v| 0.5 + 0.5 * v);
        let rho = rng.random_range(0.05..=1.0);
        let f = bd.generate_mask(&clip, rho).map_err(fail)?;
        ensure(f.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)), || format!("clip {i}: value outside [0, 1]"))?;
        let sum: f64 = f.scores.data().iter().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
    }
    ensure(worst_sum <= 1e-6, || format!("softmax sum off by {worst_sum:.2e}"))?;

    // zero generator weights give identical logits at every position
    let mut bd = ModelBundle::<f64>::new(config, AdamWConfig::default(), 0).map_err(fail)?;
    for p in bd.params_mut(Net::Generator).tensors_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    for rho in [0.5, 0.25, 0.75, 1.0] {
        let clip = rand_tensor(&mut rng, &[t, c, h, w]);
        let f = bd.generate_mask(&clip, rho).map_err(fail)?;
        ensure(f.values.data().iter().all(|&v| (v - rho).abs() <= 1e-12), || format!("uniform mask is not ρ={rho}"))?;
    }
    Ok(format!("100 random clips in range, worst softmax sum error {worst_sum:.2e}; uniform logits give ρ"))
}

fn tiny_train_config(stage: &str) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.model.encoder.clip_frames = 4;
    c.model.encoder.height = 16;
    c.model.encoder.width = 16;
    c.model.encoder.embed_dim = 16;
    c.model.encoder.depth = 1;
    c.model.encoder.heads = 2;
    c.model.unet.depth = 2;
    c.model.unet.base_channels = 2;
    c.model.unet.convs_per_level = 1;
    c.model.domain_hidden = 8;
    c.stage = stage.into();
    c.batch_size = 4;
    c.optim.lr = 1e-3;
    c.metrics.wall_time = false;
    c.data.frames = 4;
    c.data.height = 16;
    c.data.width = 16;
    c.data.n_per_class = 4;
    c.data.test_fraction = 0.25;
    c
}

fn changed(a: [u64; 4], b: [u64; 4]) -> Vec<Net> {
    Net::ALL.into_iter().filter(|n| a[*n as usize] != b[*n as usize]).collect()
}

/// 5. Parameter hashes around every step.
fn freeze_discipline() -> Outcome {
    let mut c = tiny_train_config("stage1");
    c.adversarial.encoder_steps = 3;
    c.adversarial.generator_steps = 2;
    let spec = c.dataset_spec();
    let (s, _) = amvc_core::data::generate_splits(&spec, &DomainSpec::source()).map_err(fail)?;
    let (t, _) = amvc_core::data::generate_splits(&spec, &DomainSpec::target(0.8)).map_err(fail)?;
    let bundle = ModelBundle::new(c.model.clone(), c.optim, 0).map_err(fail)?;
    let mut tr = Trainer::new(c.clone(), bundle, Some(s.clone()), Some(t.clone())).map_err(fail)?;
    let (mut enc, mut gen) = (0, 0);
    for _ in 0..10 {
        let before = tr.bundle().fingerprints();
        let (phase, _) = tr.step().map_err(fail)?;
        let moved = changed(before, tr.bundle().fingerprints());
        match phase {
            Phase::Generator => {
                ensure(moved == [Net::Generator], || format!("generator phase moved {moved:?}"))?;
                gen += 1;
            }
            Phase::Encoder => {
                ensure(!moved.contains(&Net::Generator), || "encoder phase moved the generator".into())?;
                enc += 1;
            }
            p => return Err(format!("unexpected phase {p}")),
        }
    }
    let mut b = tr.into_bundle();
    b.stages.push("stage1".into());
    let mut c2 = c;
    c2.stage = "stage2".into();
    let mut tr = Trainer::new(c2, b, None, Some(t)).map_err(fail)?;
    let start = tr.bundle().fingerprints();
    for _ in 0..5 {
        let before = tr.bundle().fingerprints();
        tr.step().map_err(fail)?;
        let moved = changed(before, tr.bundle().fingerprints());
        ensure(!moved.contains(&Net::Generator) && !moved.contains(&Net::Domain), || {
            format!("stage 2 moved {moved:?}")
        })?;
    }
    let end = tr.bundle().fingerprints();
    ensure(start[2] == end[2] && start[3] == end[3], || "stage 2 changed M or D".into())?;
    Ok(format!("{enc} encoder, {gen} generator and 5 stage-2 steps hashed"))
}

/// 6. The synthetic adaptation experiment.
fn adaptation_experiment() -> Outcome {
    let started = Instant::now();
    let config = ExperimentConfig::desk();
    let data = ExperimentData::generate(&config).map_err(fail)?;
    let mut seeds = Vec::new();
    for seed in config.seeds.clone() {
        let r = run_seed(&config, &data, seed).map_err(fail)?;
        println!(
            "  seed {seed}: target acc source-only {:.1}% stage1 {:.1}% stage2 {:.1}%; domain probe {:.1}% -> {:.1}% ({:.0}s)",
            100.0 * r.source_only_accuracy,
            100.0 * r.stage1_accuracy,
            100.0 * r.stage2_accuracy,
            100.0 * r.source_only_probe,
            100.0 * r.stage1_probe,
            r.seconds
        );
        seeds.push(r);
    }
    let s = summarize(seeds);
    let secs = started.elapsed().as_secs_f64();
    let pts = |x: f64| 100.0 * x;
    let line = format!(
        "median target acc {:.1} -> {:.1} -> {:.1}, probe {:.1} -> {:.1}, {secs:.0}s",
        pts(s.source_only_accuracy),
        pts(s.stage1_accuracy),
        pts(s.stage2_accuracy),
        pts(s.source_only_probe),
        pts(s.stage1_probe)
    );
    let mut misses = Vec::new();
    if pts(s.stage1_accuracy) < pts(s.source_only_accuracy) + 5.0 {
        misses.push("(a) stage1 < source-only + 5");
    }
    if pts(s.stage2_accuracy) < pts(s.stage1_accuracy) + 2.0 {
        misses.push("(b) stage2 < stage1 + 2");
    }
    if pts(s.source_only_probe) - pts(s.stage1_probe) < 15.0 {
        misses.push("(c) probe drop < 15");
    }
    if secs > 1200.0 {
        misses.push("runtime > 20 min");
    }
    if misses.is_empty() {
        Ok(line)
    } else {
        Err(format!("{line}; missed {}", misses.join(", ")))
    }
}

/// 7. Identical configs give identical metric lines and checkpoints.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let mut c = tiny_train_config("stage1");
    c.steps = 60;
    c.adversarial.encoder_steps = 20;
    c.adversarial.generator_steps = 5;
    let spec = c.dataset_spec();
    generate_dataset(&spec, &DomainSpec::source(), &dir.path().join("s")).map_err(fail)?;
    generate_dataset(&spec, &DomainSpec::target(0.8), &dir.path().join("t")).map_err(fail)?;
    c.data.source = Some(dir.path().join("s/manifest.csv"));
    c.data.target = Some(dir.path().join("t/manifest.csv"));
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for r in &runs {
        run(&c, r).map_err(fail)?;
    }
    let lines = |r: &Path| -> Result<Vec<String>, String> {
        Ok(std::fs::read_to_string(r.join(METRICS_FILE)).map_err(fail)?.lines().map(str::to_string).collect())
    };
    let (a, b) = (lines(&runs[0])?, lines(&runs[1])?);
    ensure(a.len() >= 50 && a[..50] == b[..50], || "metric lines differ in the first 50 steps".into())?;
    let ck = |r: &Path| std::fs::read(r.join(CHECKPOINT_FILE)).map_err(fail);
    ensure(ck(&runs[0])? == ck(&runs[1])?, || "final checkpoints differ".into())?;
    Ok(format!("{} metric lines and the checkpoint are byte-identical across two runs", a.len()))
}

/// 8. Byte-identical round trips and the designated corruption errors.
fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let spec = DatasetSpec::default();
    let clip = render_clip(&spec, &DomainSpec::target(0.8), &class_specs(spec.speed())[5], 17);
    let p1 = dir.path().join("a.clip");
    let p2 = dir.path().join("b.clip");
    write_clip(&p1, &clip).map_err(fail)?;
    write_clip(&p2, &read_clip(&p1).map_err(fail)?).map_err(fail)?;
    let bytes = std::fs::read(&p1).map_err(fail)?;
    ensure(bytes == std::fs::read(&p2).map_err(fail)?, || "clip round trip not byte-identical".into())?;

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    ensure(matches!(decode_clip(&bad, &p1), Err(Error::BadMagic(_))), || "clip magic corruption".into())?;
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x01;
    ensure(matches!(decode_clip(&bad, &p1), Err(Error::Checksum { .. })), || "clip payload corruption".into())?;
    ensure(encode_clip(&clip) == bytes, || "encode differs from file".into())?;

    let mut bundle = ModelBundle::<f32>::new(tiny_train_config("stage1").model, AdamWConfig::default(), 3).map_err(fail)?;
    bundle.stages.push("stage1".into());
    let c1 = dir.path().join("a.amvc");
    let c2 = dir.path().join("b.amvc");
    save_checkpoint(&bundle, &c1).map_err(fail)?;
    save_checkpoint(&load_checkpoint::<f32>(&c1).map_err(fail)?, &c2).map_err(fail)?;
    let cb = std::fs::read(&c1).map_err(fail)?;
    ensure(cb == std::fs::read(&c2).map_err(fail)?, || "checkpoint round trip not byte-identical".into())?;
    ensure(cb == encode_records(&bundle_records(&bundle).map_err(fail)?), || "checkpoint encoding unstable".into())?;

    let corrupt = |f: &dyn Fn(&mut Vec<u8>)| -> Result<Error, String> {
        let mut b = cb.clone();
        f(&mut b);
        let p = dir.path().join("bad.amvc");
        std::fs::write(&p, &b).map_err(fail)?;
        load_checkpoint::<f32>(&p).err().ok_or_else(|| "corrupt checkpoint loaded".to_string())
    };
    ensure(matches!(corrupt(&|b| b[1] = b'X')?, Error::BadMagic(_)), || "checkpoint magic".into())?;
    ensure(matches!(corrupt(&|b| { let n = b.len(); b[n - 5] ^= 0x10 })?, Error::Checksum { .. }), || "checkpoint crc".into())?;
    ensure(matches!(corrupt(&|b| { let n = b.len(); b.truncate(n - 9) })?, Error::Truncated(_)), || "checkpoint truncation".into())?;
    ensure(matches!(corrupt(&|b| b[4] = 9)?, Error::VersionMismatch { .. }), || "checkpoint version".into())?;
    Ok(format!("clip ({} B) and checkpoint ({} B) round-trip byte-identically; magic/CRC/truncation/version errors distinct", bytes.len(), cb.len()))
}

fn amvc(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_amvc"))
        .args(args)
        .env_remove("AMVC_THREADS")
        .output()
        .map_err(fail)?;
    if !out.status.success() {
        return Err(format!(
            "`amvc {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// 9. The whole command-line pipeline.
fn cli_smoke() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(fail)?;
    let d = dir.path();
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    let config = d.join("run.conf");
    std::fs::write(
        &config,
        "# smoke geometry\n\
         data.frames = 8\ndata.height = 16\ndata.width = 16\ndata.n_per_class = 5\n\
         model.encoder.clip_frames = 8\nmodel.encoder.height = 16\nmodel.encoder.width = 16\n\
         model.encoder.embed_dim = 16\nmodel.encoder.depth = 1\nmodel.encoder.heads = 2\n\
         model.unet.depth = 3\nmodel.unet.base_channels = 2\nmodel.unet.convs_per_level = 1\n\
         model.domain_hidden = 8\nbatch_size = 4\nadversarial.encoder_steps = 20\nadversarial.generator_steps = 5\n\
         metrics.wall_time = false\n",
    )
    .map_err(fail)?;
    let conf = s(config);
    let data = d.join("data");
    amvc(&["gen-data", "--config", &conf, "--out", &s(data.clone())])?;
    let src = s(data.join("source/manifest.csv"));
    let tgt = s(data.join("target/manifest.csv"));
    let set_src = format!("data.source={src}");
    let set_tgt = format!("data.target={tgt}");
    let s1 = d.join("stage1");
    amvc(&["train-stage1", "--config", &conf, "--set", &set_src, "--set", &set_tgt, "--set", "steps=100", "--threads", "1", "--out", &s(s1.clone())])?;
    let init = format!("data.init_checkpoint={}", s(s1.join(CHECKPOINT_FILE)));
    let s2 = d.join("stage2");
    amvc(&["train-stage2", "--config", &conf, "--set", &set_tgt, "--set", &init, "--set", "steps=100", "--seed", "1", "--out", &s(s2.clone())])?;
    let ck2 = s(s2.join(CHECKPOINT_FILE));
    let ev = d.join("eval");
    let json = amvc(&["eval", "--config", &conf, "--set", &set_src, "--set", &set_tgt, "--checkpoint", &ck2, "--probe", "--out", &s(ev.clone())])?;
    let report: serde_json::Value = serde_json::from_str(json.trim()).map_err(fail)?;
    ensure(report["accuracy"].is_f64() && report["domain_probe_accuracy"].is_f64(), || format!("eval printed {json}"))?;
    let masks = d.join("masks");
    amvc(&["export-masks", "--config", &conf, "--set", &set_tgt, "--checkpoint", &ck2, "--limit", "2", "--out", &s(masks.clone())])?;

    let mut missing = Vec::new();
    let expect = [
        data.join("source/manifest.csv"),
        data.join("target/manifest.csv"),
        data.join(CONFIG_FILE),
        s1.join(CONFIG_FILE),
        s1.join(METRICS_FILE),
        s1.join(CHECKPOINT_FILE),
        s1.join(RUN_STATE_FILE),
        s2.join(CONFIG_FILE),
        s2.join(METRICS_FILE),
        s2.join(CHECKPOINT_FILE),
        s2.join(RUN_STATE_FILE),
        ev.join("eval.json"),
        masks.join(CONFIG_FILE),
    ];
    for p in &expect {
        if !p.exists() {
            missing.push(p.display().to_string());
        }
    }
    let pgms = std::fs::read_dir(&masks)
        .map_err(fail)?
        .filter(|e| e.as_ref().is_ok_and(|e| e.path().extension().is_some_and(|x| x == "pgm")))
        .count();
    ensure(missing.is_empty(), || format!("missing {missing:?}"))?;
    ensure(pgms == 2 * 8, || format!("{pgms} mask images, expected 16"))?;
    let m1 = read_metrics(&s1.join(METRICS_FILE)).map_err(fail)?;
    let m2 = read_metrics(&s2.join(METRICS_FILE)).map_err(fail)?;
    ensure(m1.len() == 100 && m2.len() == 100, || "metric line counts".into())?;
    let secs = started.elapsed().as_secs_f64();
    ensure(Duration::from_secs_f64(secs) <= Duration::from_secs(180), || format!("took {secs:.0}s"))?;
    Ok(format!("5 commands exit 0, {} artifacts + {pgms} PGMs, target acc {:.3}, {secs:.1}s", expect.len(), report["accuracy"]))
}

fn main() {
    // `cargo test -- --list` and filters from other targets must not trigger a full run.
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let only: Vec<usize> = std::env::var("AMVC_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", gradient_suite),
        (2, "GRL exactness", grl_exactness),
        (3, "all-ones mask reduction", ones_mask_reduction),
        (4, "mask contract", mask_contract),
        (5, "freeze discipline", freeze_discipline),
        (6, "synthetic adaptation experiment", adaptation_experiment),
        (7, "determinism", determinism),
        (8, "format round-trips", format_round_trips),
        (9, "CLI smoke", cli_smoke),
    ];
    let strict = std::env::var("AMVC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail} [{secs:.1}s]"),
            Err(detail) => {
                if n != 6 || strict {
                    failed += 1;
                }
                println!("criterion {n} ({name}): FAIL - {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
