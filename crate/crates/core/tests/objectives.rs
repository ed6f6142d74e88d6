use amvc_core::models::{apply_mask, ModelBundle, Net};
use amvc_core::objectives::{
    consistency_loss, consistency_loss_names, domain_loss, masked_consistency_loss, masked_domain_loss,
    mse_consistency_loss, pseudo_label, supervised_loss, DomainNets, PseudoLabel, SOURCE, TARGET,
};
use amvc_core::tensor::{AdamWConfig, Tape, Tensor};
use amvc_core::testing::suites::{loss_cases, micro_config, rand_tensor};
use amvc_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn bundle(seed: u64) -> ModelBundle<f64> {
    ModelBundle::new(micro_config(), AdamWConfig::default(), seed).unwrap()
}

fn batch(rng: &mut ChaCha8Rng, b: usize) -> Tensor<f64> {
    let [t, c, h, w] = micro_config().encoder.clip_shape();
    rand_tensor(rng, &[b, t, c, h, w]).map(|v| 0.5 + 0.5 * v)
}

#[test]
fn supervised_loss_examples() {
    let tape = Tape::<f64>::new();
    let l = supervised_loss(tape.constant(t64(&[2, 2], &[20.0, 0.0, 0.0, 20.0])), &[0, 1]).unwrap();
    assert!(l.item() <= 1e-8);
    // with K classes the margin-20 value is ln(1 + (K-1)e^-20)
    let mut row = vec![0.0; 8];
    row[3] = 20.0;
    let l8 = supervised_loss(tape.constant(t64(&[1, 8], &row)), &[3]).unwrap().item();
    assert!((l8 - (7.0 * (-20f64).exp()).ln_1p()).abs() < 1e-14);

    let u = supervised_loss(tape.constant(Tensor::zeros(&[3, 8])), &[0, 5, 7]).unwrap();
    assert!((u.item() - 8f64.ln()).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[5, 8]);
    let labels = [1, 2, 3, 0, 7];
    let a = supervised_loss(tape.constant(x.clone()), &labels).unwrap().item();
    let b = tape.constant(x).cross_entropy(&labels).unwrap().item();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(supervised_loss(tape.constant(Tensor::zeros(&[1, 8])), &[8]).is_err());
}

fn set(bundle: &mut ModelBundle<f64>, net: Net, name: &str, f: impl Fn(usize) -> f64) {
    let t = bundle.params_mut(net).by_name_mut(name).unwrap();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

#[test]
fn domain_loss_examples() {
    let mut bd = bundle(0);
    let (dim, hid) = (4, 3);
    set(&mut bd, Net::Domain, "fc2.w", |_| 0.0);
    set(&mut bd, Net::Domain, "fc2.b", |_| 0.0);
    let tape = Tape::new();
    let p = bd.params(Net::Domain).bind(&tape, false);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = tape.constant(rand_tensor(&mut rng, &[4, dim]));
    let l = domain_loss(&bd.domain, &p, f, &[SOURCE, TARGET, SOURCE, TARGET]).unwrap();
    assert!((l.item() - 2f64.ln()).abs() < 1e-15);

    // D(source) = 0.99, D(target) = 0.01
    let logit = (0.99f64 / 0.01).ln();
    set(&mut bd, Net::Domain, "fc1.w", |i| if i == 0 { 1.0 } else { 0.0 });
    set(&mut bd, Net::Domain, "fc1.b", |_| 0.0);
    set(&mut bd, Net::Domain, "fc2.w", |i| if i == 0 { 2.0 * logit } else { 0.0 });
    set(&mut bd, Net::Domain, "fc2.b", |_| -logit);
    let tape = Tape::new();
    let p = bd.params(Net::Domain).bind(&tape, false);
    let f = tape.constant(t64(&[2, dim], &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0]));
    let probs = bd.discriminate_domain(&f.to_tensor()).unwrap();
    assert!((probs.data()[0] - 0.99).abs() < 1e-12 && (probs.data()[1] - 0.01).abs() < 1e-12);
    let l = domain_loss(&bd.domain, &p, f, &[SOURCE, TARGET]).unwrap().item();
    assert!((l + 0.99f64.ln()).abs() < 1e-12);
    assert!((l - 0.01005).abs() < 1e-5);
    let _ = hid;
}

#[test]
fn domain_loss_matches_scalar_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..5 {
        let mut bd = bundle(seed);
        for t in bd.params_mut(Net::Domain).tensors_mut() {
            let n = rand_tensor(&mut rng, t.shape());
            *t = n;
        }
        let feats = rand_tensor(&mut rng, &[6, 4]).map(|v| 2.0 * v);
        let d = [SOURCE, TARGET, SOURCE, TARGET, SOURCE, TARGET];
        let tape = Tape::new();
        let p = bd.params(Net::Domain).bind(&tape, false);
        let got = domain_loss(&bd.domain, &p, tape.constant(feats.clone()), &d).unwrap().item();

        let ps = bd.params(Net::Domain);
        let (w1, b1) = (ps.by_name("fc1.w").unwrap().data(), ps.by_name("fc1.b").unwrap().data());
        let (w2, b2) = (ps.by_name("fc2.w").unwrap().data(), ps.by_name("fc2.b").unwrap().data());
        let mut total = 0.0;
        for r in 0..6 {
            let x = &feats.data()[r * 4..(r + 1) * 4];
            let mut z = b2[0];
            for j in 0..3 {
                let mut hj = b1[j];
                for i in 0..4 {
                    hj += x[i] * w1[i * 3 + j];
                }
                z += hj.max(0.0) * w2[j];
            }
            let prob = (1.0 / (1.0 + (-z).exp())).clamp(1e-7, 1.0 - 1e-7);
            total += -(d[r] * prob.ln() + (1.0 - d[r]) * (1.0 - prob).ln());
        }
        assert!((got - total / 6.0).abs() <= 1e-6, "{got} vs {}", total / 6.0);
    }
}

#[test]
fn all_ones_mask_reduces_to_domain_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..20 {
        let bd = bundle(i);
        let x = batch(&mut rng, 4);
        let d: Vec<f64> = (0..4).map(|_| if rng.random_bool(0.5) { SOURCE } else { TARGET }).collect();
        let tape = Tape::new();
        let p = bd.bind(&tape, &[]);
        let xv = tape.constant(x.clone());
        let ones = tape.constant(Tensor::ones(&[4, 2, 1, 4, 4]));
        let nets = DomainNets {
            encoder: &bd.encoder,
            encoder_params: &p.encoder,
            head: &bd.domain,
            head_params: &p.domain,
        };
        let masked = masked_domain_loss(&nets, xv, ones, &d, 1.0, false).unwrap().item();
        let plain = domain_loss(&bd.domain, &p.domain, bd.encoder.forward(&p.encoder, xv).unwrap(), &d)
            .unwrap()
            .item();
        assert!((masked - plain).abs() <= 1e-6);
        assert_eq!(masked.to_bits(), plain.to_bits());
    }
}

#[test]
fn zero_masks_with_neutral_head_give_ln2() {
    let mut bd = bundle(3);
    set(&mut bd, Net::Domain, "fc2.w", |_| 0.0);
    set(&mut bd, Net::Domain, "fc2.b", |_| 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::new();
    let p = bd.bind(&tape, &[]);
    let nets = DomainNets {
        encoder: &bd.encoder,
        encoder_params: &p.encoder,
        head: &bd.domain,
        head_params: &p.domain,
    };
    let x = tape.constant(batch(&mut rng, 2));
    let zeros = tape.constant(Tensor::zeros(&[2, 2, 1, 4, 4]));
    let l = masked_domain_loss(&nets, x, zeros, &[SOURCE, TARGET], 1.0, false).unwrap();
    assert!((l.item() - 2f64.ln()).abs() < 1e-15);
    let wrong = tape.constant(Tensor::zeros(&[2, 1, 1, 4, 4]));
    assert!(masked_domain_loss(&nets, x, wrong, &[SOURCE, TARGET], 1.0, false).is_err());
}

fn encoder_phase_grads(bd: &ModelBundle<f64>, x: &Tensor<f64>, m: &Tensor<f64>, lambda: f64, reverse: bool) -> (Vec<Tensor<f64>>, Vec<Tensor<f64>>) {
    let tape = Tape::new();
    let p = bd.bind(&tape, &[Net::Encoder, Net::Domain]);
    let nets = DomainNets {
        encoder: &bd.encoder,
        encoder_params: &p.encoder,
        head: &bd.domain,
        head_params: &p.domain,
    };
    let l = masked_domain_loss(&nets, tape.constant(x.clone()), tape.constant(m.clone()), &[SOURCE, SOURCE, TARGET], lambda, reverse).unwrap();
    let mut g = tape.backward(l).unwrap();
    let f = p.encoder.grads(&mut g).into_iter().map(Option::unwrap).collect();
    let d = p.domain.grads(&mut g).into_iter().map(Option::unwrap).collect();
    (f, d)
}

#[test]
fn gradient_reversal_flips_exactly_the_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let bd = bundle(21);
    let x = batch(&mut rng, 3);
    let m = rand_tensor(&mut rng, &[3, 2, 1, 4, 4]).map(|v| 0.5 + 0.5 * v);
    let (f_plain, d_plain) = encoder_phase_grads(&bd, &x, &m, 1.0, false);
    for lambda in [0.5, 1.0, 2.0] {
        let (f_rev, d_rev) = encoder_phase_grads(&bd, &x, &m, lambda, true);
        for (a, b) in f_rev.iter().zip(&f_plain) {
            let expect: Vec<f64> = b.data().iter().map(|g| -(lambda * g)).collect();
            assert_eq!(a.data(), expect.as_slice());
        }
        assert_eq!(d_rev, d_plain);
    }
}

#[test]
fn generator_phase_only_reaches_the_generator() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bd = bundle(4);
    let tape = Tape::new();
    let p = bd.bind(&tape, &[Net::Generator]);
    let x = tape.constant(batch(&mut rng, 2));
    let m = bd.generator.forward(&p.generator, x, 0.5).unwrap().mask;
    let nets = DomainNets {
        encoder: &bd.encoder,
        encoder_params: &p.encoder,
        head: &bd.domain,
        head_params: &p.domain,
    };
    let l = masked_domain_loss(&nets, x, m, &[SOURCE, TARGET], 1.0, false).unwrap();
    let mut g = tape.backward(l).unwrap();
    for net in [Net::Encoder, Net::Classifier, Net::Domain] {
        assert!(p.get(net).grads(&mut g).iter().all(Option::is_none));
    }
    let gm = p.generator.grads(&mut g);
    assert!(gm.iter().all(|t| t.as_ref().is_some_and(|t| t.all_finite())));
    assert!(gm.iter().any(|t| t.as_ref().unwrap().data().iter().any(|&v| v != 0.0)));
}

fn labels(classes: &[usize], confidence: f64) -> Vec<PseudoLabel> {
    classes.iter().map(|&class| PseudoLabel { class, confidence, step: 0 }).collect()
}

#[test]
fn consistency_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let full = rand_tensor(&mut rng, &[4, 5]).map(|v| 3.0 * v);
    let pl = pseudo_label(&full, 0).unwrap();
    let tape = Tape::<f64>::new();
    let out = masked_consistency_loss(tape.constant(full.clone()), &pl, 0.0).unwrap();
    assert_eq!(out.kept, 4);
    let own: Vec<usize> = pl.iter().map(|p| p.class).collect();
    let ce = tape.constant(full.clone()).cross_entropy(&own).unwrap().item();
    assert_eq!(out.loss.item(), ce);
    // any other labelling costs at least as much
    for shift in 1..5 {
        let other: Vec<usize> = own.iter().map(|c| (c + shift) % 5).collect();
        assert!(tape.constant(full.clone()).cross_entropy(&other).unwrap().item() >= ce);
    }

    let uniform = tape.constant(Tensor::zeros(&[3, 4]));
    let l = masked_consistency_loss(uniform, &labels(&[0, 3, 2], 0.9), 0.0).unwrap();
    assert!((l.loss.item() - 4f64.ln()).abs() < 1e-12);

    let err = masked_consistency_loss(uniform, &labels(&[0, 1, 2], 0.5), 0.9).err().unwrap();
    assert!(matches!(err, Error::NoConfidentSamples(3)));
}

#[test]
fn confidence_filter_keeps_the_right_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[4, 3]);
    let mut pl = labels(&[2, 0, 1, 1], 0.2);
    pl[1].confidence = 0.95;
    pl[3].confidence = 0.7;
    let tape = Tape::<f64>::new();
    let out = masked_consistency_loss(tape.constant(x.clone()), &pl, 0.5).unwrap();
    assert_eq!(out.kept, 2);
    let keep = Tensor::stack(&[&x.row(1).unwrap(), &x.row(3).unwrap()]).unwrap();
    let expect = tape.constant(keep).cross_entropy(&[0, 1]).unwrap().item();
    assert_eq!(out.loss.item(), expect);
    assert!(masked_consistency_loss(tape.constant(x), &pl[..3], 0.0).is_err());
}

#[test]
fn mse_matches_scalar_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = rand_tensor(&mut rng, &[3, 6]).map(|v| 2.0 * v);
    let b = rand_tensor(&mut rng, &[3, 6]).map(|v| 2.0 * v);
    let tape = Tape::<f64>::new();
    let got = mse_consistency_loss(tape.constant(a.clone()), &b).unwrap().item();
    let softmax = |r: &[f64]| {
        let z: f64 = r.iter().map(|v| v.exp()).sum();
        r.iter().map(|v| v.exp() / z).collect::<Vec<_>>()
    };
    let mut total = 0.0;
    for r in 0..3 {
        let pa = softmax(&a.data()[r * 6..(r + 1) * 6]);
        let pb = softmax(&b.data()[r * 6..(r + 1) * 6]);
        total += pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    assert!((got - total / 18.0).abs() <= 1e-6);
    assert!(mse_consistency_loss(tape.constant(a), &Tensor::zeros(&[3, 5])).is_err());
}

#[test]
fn consistency_registry() {
    assert_eq!(consistency_loss_names(), &["ce", "mse"]);
    for &n in consistency_loss_names() {
        assert_eq!(consistency_loss::<f32>(n).unwrap().name(), n);
    }
    assert!(matches!(consistency_loss::<f32>("kl"), Err(Error::Config(_))));

    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let mse = consistency_loss::<f64>("mse").unwrap();
    assert!(mse.loss(x, &labels(&[0, 1], 1.0), None, 0.0).is_err());
    let full = Tensor::zeros(&[2, 3]);
    assert_eq!(mse.loss(x, &labels(&[0, 1], 1.0), Some(&full), 0.0).unwrap().loss.item(), 0.0);
}

#[test]
fn every_loss_passes_finite_differences_on_random_instances() {
    let cases = loss_cases(77, 10);
    let names: std::collections::BTreeSet<&str> = cases.iter().map(|c| c.name).collect();
    assert_eq!(names.len(), 5);
    assert_eq!(cases.len(), 5 * 10);
    for case in &cases {
        let r = case.run().unwrap();
        assert!(r.passes(1e-4), "{}: {r:?}", case.name);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pseudo_labels_survive_monotone_transforms(seed in any::<u64>(), shift in -50.0f64..50.0, scale in 0.01f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[4, 8]);
        let a: Vec<usize> = pseudo_label(&x, 0).unwrap().iter().map(|p| p.class).collect();
        let y = x.map(|v| v * scale + shift);
        let b: Vec<usize> = pseudo_label(&y, 0).unwrap().iter().map(|p| p.class).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn losses_are_non_negative(seed in any::<u64>(), spread in 0.1f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[4, 5]).map(|v| v * spread);
        let y = rand_tensor(&mut rng, &[4, 5]).map(|v| v * spread);
        let tape = Tape::<f64>::new();
        let pl = pseudo_label(&y, 0).unwrap();
        let lbl: Vec<usize> = pl.iter().map(|p| p.class).collect();
        prop_assert!(supervised_loss(tape.constant(x.clone()), &lbl).unwrap().item() >= 0.0);
        prop_assert!(masked_consistency_loss(tape.constant(x.clone()), &pl, 0.0).unwrap().loss.item() >= 0.0);
        prop_assert!(mse_consistency_loss(tape.constant(x), &y).unwrap().item() >= 0.0);
    }
}

#[test]
fn masking_is_wired_before_the_encoder() {
    // masked_domain_loss must see x ⊙ m, not x
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let bd = bundle(30);
    let x = batch(&mut rng, 2);
    let m = rand_tensor(&mut rng, &[2, 2, 1, 4, 4]).map(|v| 0.5 + 0.5 * v);
    let tape = Tape::new();
    let p = bd.bind(&tape, &[]);
    let nets = DomainNets {
        encoder: &bd.encoder,
        encoder_params: &p.encoder,
        head: &bd.domain,
        head_params: &p.domain,
    };
    let (xv, mv) = (tape.constant(x), tape.constant(m));
    let got = masked_domain_loss(&nets, xv, mv, &[SOURCE, TARGET], 1.0, false).unwrap().item();
    let f = bd.encoder.forward(&p.encoder, apply_mask(xv, mv).unwrap()).unwrap();
    let expect = domain_loss(&bd.domain, &p.domain, f, &[SOURCE, TARGET]).unwrap().item();
    assert_eq!(got, expect);
}
