//! Randomized finite-difference suites over every differentiable primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, GradCheck};
use crate::error::{Error, Result};
use crate::models::{apply_mask, Bound, EncoderConfig, ModelBundle, ModelConfig, Net, UNetConfig};
use crate::objectives::{
    consistency_loss, domain_loss, masked_domain_loss, pseudo_label, supervised_loss, DomainNets, SOURCE, TARGET,
};
use crate::tensor::{AdamWConfig, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub type Builder = Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>>;

/// One randomized gradient-check instance.
pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Builder,
}

impl Case {
    pub fn run(&self) -> Result<GradCheck> {
        check(&self.inputs, FD_STEP, &self.build)
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| {
                let m = rng.random_range(0.05..1.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

/// Reduces an arbitrary tensor to a scalar with fixed random weights so the
/// whole Jacobian is exercised, not just its column sums.
pub fn weighted_sum<'t>(tape: &'t Tape<f64>, x: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_tensor(&mut rng, &x.shape()));
    Ok(x.mul(w)?.sum())
}

fn dims(rng: &mut ChaCha8Rng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=max)).collect()
}

/// Builds `instances` random cases for each primitive.
pub fn primitive_cases(seed: u64, instances: usize) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for inst in 0..instances {
        let ws = seed.wrapping_mul(1000).wrapping_add(inst as u64);

        // broadcasting binary ops
        let rank = rng.random_range(1..=4);
        let full = dims(&mut rng, rank, 4);
        let part: Vec<usize> = full
            .iter()
            .map(|&d| if rng.random_bool(0.4) { 1 } else { d })
            .collect();
        for (name, op) in [("add", 0u8), ("sub", 1), ("mul", 2)] {
            let (a, b) = if rng.random_bool(0.5) {
                (full.clone(), part.clone())
            } else {
                (part.clone(), full.clone())
            };
            cases.push(Case {
                name,
                inputs: vec![rand_tensor(&mut rng, &a), rand_tensor(&mut rng, &b)],
                build: Box::new(move |t, v| {
                    let y = match op {
                        0 => v[0].add(v[1])?,
                        1 => v[0].sub(v[1])?,
                        _ => v[0].mul(v[1])?,
                    };
                    weighted_sum(t, y, ws)
                }),
            });
        }

        let s = dims(&mut rng, 2, 5);
        let c = rng.random_range(-2.0..2.0);
        cases.push(Case {
            name: "scale_add_scalar",
            inputs: vec![rand_tensor(&mut rng, &s)],
            build: Box::new(move |t, v| weighted_sum(t, v[0].scale(c).add_scalar(0.3), ws)),
        });

        let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..5));
        cases.push(Case {
            name: "matmul",
            inputs: vec![rand_tensor(&mut rng, &[m, k]), rand_tensor(&mut rng, &[k, n])],
            build: Box::new(move |t, v| weighted_sum(t, v[0].matmul(v[1])?, ws)),
        });
        let bsz = rng.random_range(1..4);
        cases.push(Case {
            name: "batched_matmul",
            inputs: vec![rand_tensor(&mut rng, &[bsz, m, k]), rand_tensor(&mut rng, &[bsz, k, n])],
            build: Box::new(move |t, v| weighted_sum(t, v[0].matmul(v[1])?, ws)),
        });
        cases.push(Case {
            name: "matmul_transposed",
            inputs: vec![rand_tensor(&mut rng, &[bsz, m, k]), rand_tensor(&mut rng, &[bsz, n, k])],
            build: Box::new(move |t, v| weighted_sum(t, v[0].matmul_t(v[1])?, ws)),
        });

        let s = dims(&mut rng, 4, 3);
        let mut perm: Vec<usize> = (0..4).collect();
        for i in (1..4).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        cases.push(Case {
            name: "permute_reshape_transpose",
            inputs: vec![rand_tensor(&mut rng, &s)],
            build: Box::new(move |t, v| {
                let y = v[0].permute(&perm)?.transpose()?;
                let n = y.numel();
                weighted_sum(t, y.reshape(&[n])?, ws)
            }),
        });

        let s = dims(&mut rng, 3, 4);
        let axis = rng.random_range(0..3);
        let len = rng.random_range(1..=s[axis]);
        let start = rng.random_range(0..=s[axis] - len);
        let mut s2 = s.clone();
        s2[axis] = rng.random_range(1..4);
        cases.push(Case {
            name: "narrow_concat",
            inputs: vec![rand_tensor(&mut rng, &s), rand_tensor(&mut rng, &s2)],
            build: Box::new(move |t, v| {
                let a = v[0].narrow(axis, start, len)?;
                let y = Var::concat(&[v[1], a, v[0]], axis)?;
                weighted_sum(t, y, ws)
            }),
        });
        let rows: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..s[0])).collect();
        cases.push(Case {
            name: "index_rows",
            inputs: vec![rand_tensor(&mut rng, &s)],
            build: Box::new(move |t, v| weighted_sum(t, v[0].index_rows(&rows)?, ws)),
        });

        let s = dims(&mut rng, 3, 4);
        let axis = rng.random_range(0..3);
        cases.push(Case {
            name: "softmax",
            inputs: vec![rand_tensor(&mut rng, &s).map(|x| 3.0 * x)],
            build: Box::new(move |t, v| weighted_sum(t, v[0].softmax(axis)?, ws)),
        });

        let (b, kc) = (rng.random_range(1..6), rng.random_range(2..8));
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..kc)).collect();
        cases.push(Case {
            name: "cross_entropy",
            inputs: vec![rand_tensor(&mut rng, &[b, kc]).map(|x| 4.0 * x)],
            build: Box::new(move |_, v| v[0].cross_entropy(&labels)),
        });
        let targets: Vec<f64> = (0..b).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        cases.push(Case {
            name: "bce_with_logits",
            inputs: vec![rand_tensor(&mut rng, &[b, 1]).map(|x| 5.0 * x)],
            build: Box::new(move |_, v| v[0].bce_with_logits(&targets, -16.0, 16.0)),
        });

        let s = dims(&mut rng, 2, 6);
        cases.push(Case {
            name: "gelu",
            inputs: vec![rand_tensor(&mut rng, &s).map(|x| 3.0 * x)],
            build: Box::new(move |t, v| weighted_sum(t, v[0].gelu(), ws)),
        });
        cases.push(Case {
            name: "relu",
            inputs: vec![rand_away_from_zero(&mut rng, &s)],
            build: Box::new(move |t, v| weighted_sum(t, v[0].relu(), ws)),
        });
        cases.push(Case {
            name: "sigmoid",
            inputs: vec![rand_tensor(&mut rng, &s).map(|x| 4.0 * x)],
            build: Box::new(move |t, v| weighted_sum(t, v[0].sigmoid(), ws)),
        });
        // values in [-1,-0.05]∪[0.05,1] scaled to avoid the clamp bounds at ±0.5
        cases.push(Case {
            name: "clamp",
            inputs: vec![rand_away_from_zero(&mut rng, &s).map(|x| if x.abs() > 0.45 && x.abs() < 0.55 { x * 1.5 } else { x })],
            build: Box::new(move |t, v| weighted_sum(t, v[0].clamp(-0.5, 0.5), ws)),
        });
        let lambda = rng.random_range(0.1..2.0);
        cases.push(Case {
            name: "grl",
            inputs: vec![rand_tensor(&mut rng, &s)],
            build: Box::new(move |t, v| {
                // GRL is deliberately not the gradient of its forward map, so
                // check its composition with a second reversal.
                weighted_sum(t, v[0].grl(lambda).grl(1.0 / lambda), ws)
            }),
        });

        let (rows, cols) = (rng.random_range(1..5), rng.random_range(2..7));
        cases.push(Case {
            name: "layer_norm",
            inputs: vec![
                rand_tensor(&mut rng, &[rows, cols]),
                rand_tensor(&mut rng, &[cols]),
                rand_tensor(&mut rng, &[cols]),
            ],
            build: Box::new(move |t, v| weighted_sum(t, v[0].layer_norm(v[1], v[2], 1e-5)?, ws)),
        });

        let s = dims(&mut rng, 3, 4);
        cases.push(Case {
            name: "sum_mean",
            inputs: vec![rand_tensor(&mut rng, &s)],
            build: Box::new(move |t, v| {
                let a = v[0].mul(v[0])?.sum();
                let b = weighted_sum(t, v[0], ws)?.mean();
                a.add(b)
            }),
        });

        let (n, ci, co) = (rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..3));
        let k: usize = [1, 3][rng.random_range(0..2)];
        let stride = rng.random_range(1..3);
        let pad = if k == 3 { rng.random_range(0..2) } else { 0 };
        let out = rng.random_range(1..4);
        let h = ((out - 1) * stride + k).saturating_sub(2 * pad).max(1);
        let h = if (h + 2 * pad - k) % stride == 0 { h } else { h + 1 };
        let w = h;
        let with_bias = rng.random_bool(0.5);
        let mut inputs = vec![rand_tensor(&mut rng, &[n, ci, h, w]), rand_tensor(&mut rng, &[co, ci, k, k])];
        if with_bias {
            inputs.push(rand_tensor(&mut rng, &[co]));
        }
        cases.push(Case {
            name: "conv2d",
            inputs,
            build: Box::new(move |t, v| {
                let y = v[0].conv2d(v[1], v.get(2).copied(), stride, pad)?;
                weighted_sum(t, y, ws)
            }),
        });

        let (n, c, h2, w2) = (rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..3));
        cases.push(Case {
            name: "max_pool2",
            inputs: vec![rand_tensor(&mut rng, &[n, c, 2 * h2, 2 * w2])],
            build: Box::new(move |t, v| weighted_sum(t, v[0].max_pool2()?, ws)),
        });
        cases.push(Case {
            name: "upsample2",
            inputs: vec![rand_tensor(&mut rng, &[n, c, h2, w2])],
            build: Box::new(move |t, v| weighted_sum(t, v[0].upsample2()?, ws)),
        });
    }
    cases
}

/// Smallest geometry that still exercises every layer type.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            clip_frames: 2,
            channels: 1,
            height: 4,
            width: 4,
            tubelet_frames: 2,
            tubelet_height: 2,
            tubelet_width: 2,
            embed_dim: 4,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
            class_token: true,
        },
        unet: UNetConfig {
            depth: 1,
            base_channels: 2,
            in_channels: 1,
            convs_per_level: 1,
        },
        classes: 3,
        domain_hidden: 3,
    }
}

/// Parameters of `nets`, jittered so zero-initialized entries are generic.
fn jittered(bundle: &ModelBundle<f64>, nets: &[Net], rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Vec<usize>) {
    let mut out = Vec::new();
    let mut counts = Vec::new();
    for &n in nets {
        let ts = bundle.params(n).tensors();
        counts.push(ts.len());
        for t in ts {
            let noise = rand_tensor(rng, t.shape());
            let data = t.data().iter().zip(noise.data()).map(|(a, e)| a + 0.3 * e).collect();
            out.push(Tensor::new(t.shape(), data).unwrap());
        }
    }
    (out, counts)
}

fn split<'t>(vars: &[Var<'t, f64>], counts: &[usize]) -> Vec<Bound<'t, f64>> {
    let mut at = 0;
    counts
        .iter()
        .map(|&c| {
            let b = Bound::from_vars(vars[at..at + c].to_vec());
            at += c;
            b
        })
        .collect()
}

/// Random cases for every composite loss, differentiated with respect to the
/// parameters of the networks that loss trains.
pub fn loss_cases(seed: u64, instances: usize) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut cases = Vec::new();
    for inst in 0..instances {
        let bundle = std::rc::Rc::new(
            ModelBundle::<f64>::new(micro_config(), AdamWConfig::default(), seed.wrapping_add(inst as u64)).unwrap(),
        );
        let b = 4;
        let [t, c, h, w] = bundle.config().encoder.clip_shape();
        let clips = rand_tensor(&mut rng, &[b, t, c, h, w]).map(|v| 0.5 + 0.5 * v);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
        let indicators = vec![SOURCE, SOURCE, TARGET, TARGET];
        let masks = rand_tensor(&mut rng, &[b, t, 1, h, w]).map(|v| 0.5 + 0.45 * v);

        let (inputs, counts) = jittered(&bundle, &[Net::Encoder, Net::Classifier], &mut rng);
        let (bd, x, y) = (bundle.clone(), clips.clone(), labels.clone());
        cases.push(Case {
            name: "supervised_loss",
            inputs,
            build: Box::new(move |tape, v| {
                let p = split(v, &counts);
                let f = bd.encoder.forward(&p[0], tape.constant(x.clone()))?;
                supervised_loss(bd.classifier.forward(&p[1], f)?, &y)
            }),
        });

        let (inputs, counts) = jittered(&bundle, &[Net::Encoder, Net::Domain], &mut rng);
        let (bd, x, d) = (bundle.clone(), clips.clone(), indicators.clone());
        cases.push(Case {
            name: "domain_loss",
            inputs,
            build: Box::new(move |tape, v| {
                let p = split(v, &counts);
                let f = bd.encoder.forward(&p[0], tape.constant(x.clone()))?;
                domain_loss(&bd.domain, &p[1], f, &d)
            }),
        });

        let (inputs, counts) = jittered(&bundle, &[Net::Encoder, Net::Domain, Net::Generator], &mut rng);
        let (bd, x, d) = (bundle.clone(), clips.clone(), indicators.clone());
        cases.push(Case {
            name: "masked_domain_loss",
            inputs,
            build: Box::new(move |tape, v| {
                let p = split(v, &counts);
                let xv = tape.constant(x.clone());
                let m = bd.generator.forward(&p[2], xv, 0.5)?.mask;
                let nets = DomainNets {
                    encoder: &bd.encoder,
                    encoder_params: &p[0],
                    head: &bd.domain,
                    head_params: &p[1],
                };
                masked_domain_loss(&nets, xv, m, &d, 1.0, false)
            }),
        });

        let (inputs, counts) = jittered(&bundle, &[Net::Encoder, Net::Classifier], &mut rng);
        // targets come from the unperturbed model, as a frozen full view would
        let full = bundle.classify(&bundle.encode(&clips).unwrap()).unwrap();
        let pseudo = pseudo_label(&full, 0).unwrap();
        for (name, loss) in [("masked_consistency_ce", "ce"), ("masked_consistency_mse", "mse")] {
            let (bd, x, m, pl, fl) = (bundle.clone(), clips.clone(), masks.clone(), pseudo.clone(), full.clone());
            let counts = counts.clone();
            let tau = if loss == "ce" { 0.0 } else { 0.3 };
            cases.push(Case {
                name,
                inputs: inputs.clone(),
                build: Box::new(move |tape, v| {
                    let p = split(v, &counts);
                    let masked = apply_mask(tape.constant(x.clone()), tape.constant(m.clone()))?;
                    let logits = bd.classifier.forward(&p[1], bd.encoder.forward(&p[0], masked)?)?;
                    let out = match consistency_loss::<f64>(loss)?.loss(logits, &pl, Some(&fl), tau) {
                        Ok(o) => o,
                        Err(Error::NoConfidentSamples(_)) => consistency_loss::<f64>(loss)?.loss(logits, &pl, Some(&fl), 0.0)?,
                        Err(e) => return Err(e),
                    };
                    Ok(out.loss)
                }),
            });
        }
    }
    cases
}
