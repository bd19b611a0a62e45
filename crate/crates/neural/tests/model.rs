use holorec_neural::gradcheck::{gradcheck, GradcheckOptions};
use holorec_neural::loss::{discriminator_loss, generator_loss, LossWeights};
use holorec_neural::model::{conv_gru_step, disc_forward, init_discriminator, init_generator, rhm_forward};
use holorec_neural::params::{BlockTag, Bound, Parameter};
use holorec_neural::{count_parameters, Graph, ModelConfig, ParameterSet, Tensor, Var};
use ndarray::{Array3, Array4, Ix3, Ix4, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_shape_simple_fn(IxDyn(shape), || scale * rng.random_range(-1.0..1.0))
}

/// GRU gate parameters named `gru.conv_{z,r,h}` for `c` input and hidden channels.
fn gru_params(c: usize, fill: impl Fn(&str, &[usize]) -> Tensor) -> ParameterSet {
    let mut ps = ParameterSet::new();
    for gate in ["z", "r", "h"] {
        for (suffix, shape) in [("weight", vec![c, 2 * c, 3, 3]), ("bias", vec![c])] {
            let name = format!("gru.conv_{gate}.{suffix}");
            let value = fill(&name, &shape);
            ps.push(Parameter {
                name,
                value,
                tag: BlockTag::Rnn(1),
                frozen: false,
            })
            .unwrap();
        }
    }
    ps
}

fn gru_eval(ps: &ParameterSet, x: &Tensor, h: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let p = ps.bind_constant(&mut g);
    let (xv, hv) = (g.constant(x.clone()), g.constant(h.clone()));
    let out = conv_gru_step(&mut g, &p, "gru", xv, hv).unwrap();
    g.value(out).unwrap().clone()
}

/// Direct zero-padded 3×3 correlation, written out loop by loop.
fn conv_ref(x: &Array3<f64>, w: &Array4<f64>, b: &[f64]) -> Array3<f64> {
    let (c, h, wd) = x.dim();
    let o = w.dim().0;
    let mut out = Array3::zeros((o, h, wd));
    for oc in 0..o {
        for i in 0..h {
            for j in 0..wd {
                let mut s = b[oc];
                for ic in 0..c {
                    for di in 0..3 {
                        for dj in 0..3 {
                            let (y, xx) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                            if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                s += w[[oc, ic, di, dj]] * x[[ic, y as usize, xx as usize]];
                            }
                        }
                    }
                }
                out[[oc, i, j]] = s;
            }
        }
    }
    out
}

fn gru_ref(ps: &ParameterSet, x: &Tensor, h: &Tensor) -> Array3<f64> {
    let x = x.view().into_dimensionality::<Ix3>().unwrap().to_owned();
    let h = h.view().into_dimensionality::<Ix3>().unwrap().to_owned();
    let gate = |gate: &str, input: &Array3<f64>| {
        let w = ps.get(&format!("gru.conv_{gate}.weight")).unwrap().value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
        let b: Vec<f64> = ps.get(&format!("gru.conv_{gate}.bias")).unwrap().value.iter().copied().collect();
        conv_ref(input, &w, &b)
    };
    let xh = ndarray::concatenate![ndarray::Axis(0), x, h];
    let z = gate("z", &xh).mapv(|v| 1.0 / (1.0 + (-v).exp()));
    let r = gate("r", &xh).mapv(|v| 1.0 / (1.0 + (-v).exp()));
    let rh = &r * &h;
    let xrh = ndarray::concatenate![ndarray::Axis(0), x, rh];
    let cand = gate("h", &xrh).mapv(f64::tanh);
    (1.0 - &z) * &h + &z * &cand
}

#[test]
fn gru_zero_weights_zero_state() {
    let ps = gru_params(3, |_, s| Tensor::zeros(IxDyn(s)));
    let x = rand_tensor(&[3, 5, 4], 1, 1.0);
    let out = gru_eval(&ps, &x, &Tensor::zeros(IxDyn(&[3, 5, 4])));
    assert!(out.iter().all(|&v| v == 0.0));
    // z = ½ and h̃ = 0 halve any nonzero state.
    let h = rand_tensor(&[3, 5, 4], 2, 1.0);
    let out = gru_eval(&ps, &x, &h);
    assert!(out.iter().zip(h.iter()).all(|(o, h)| (o - 0.5 * h).abs() < 1e-15));
}

#[test]
fn gru_matches_direct_reference() {
    let ps = gru_params(2, |n, s| rand_tensor(s, n.len() as u64 * 31 + s.len() as u64, 0.5));
    let x = rand_tensor(&[2, 6, 5], 3, 1.0);
    let h = rand_tensor(&[2, 6, 5], 4, 1.0);
    let got = gru_eval(&ps, &x, &h);
    let want = gru_ref(&ps, &x, &h);
    let err = got.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-12, "{err}");
}

#[test]
fn saturated_update_gate_takes_candidate() {
    let ps = gru_params(2, |n, s| {
        if n == "gru.conv_z.bias" {
            Tensor::from_elem(IxDyn(s), 20.0)
        } else {
            rand_tensor(s, n.len() as u64, 0.3)
        }
    });
    let x = rand_tensor(&[2, 4, 4], 5, 1.0);
    let h = rand_tensor(&[2, 4, 4], 6, 1.0);
    let out = gru_eval(&ps, &x, &h);
    // Candidate alone: same gates with z forced to exactly 1.
    let mut forced = ps.clone();
    forced.get_mut("gru.conv_z.weight").unwrap().value.fill(0.0);
    forced.get_mut("gru.conv_z.bias").unwrap().value.fill(f64::INFINITY);
    let cand = gru_eval(&forced, &x, &h);
    let err = out.iter().zip(cand.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn gradcheck_three_chained_gru_steps() {
    let c = 2;
    let template = gru_params(c, |n, s| rand_tensor(s, 100 + n.len() as u64, 0.4));
    let names: Vec<String> = template.iter().map(|p| p.name.clone()).collect();
    let mut inputs: Vec<Tensor> = template.iter().map(|p| p.value.clone()).collect();
    for s in 0..3 {
        inputs.push(rand_tensor(&[c, 5, 5], 200 + s, 1.0));
    }
    inputs.push(rand_tensor(&[c, 5, 5], 300, 1.0));
    let err = gradcheck(
        &inputs,
        |g, v| {
            let p = Bound::from_vars(names.iter().cloned().zip(v.iter().copied()));
            let k = names.len();
            let mut h = v[k + 3];
            for t in 0..3 {
                h = conv_gru_step(g, &p, "gru", v[k + t], h)?;
            }
            let r = g.constant(rand_tensor(&[c, 5, 5], 400, 1.0));
            let hr = g.mul(h, r)?;
            g.sum(hr)
        },
        &GradcheckOptions::default(),
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

fn cfg(c: usize, m: usize) -> ModelConfig {
    ModelConfig {
        base_channels: c,
        sequence_len: m,
        seed: 7,
    }
}

fn forward(gen: &ParameterSet, inputs: &[Tensor]) -> Tensor {
    let mut g = Graph::new();
    let p = gen.bind_constant(&mut g);
    let xs: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let y = rhm_forward(&mut g, &p, &xs).unwrap();
    g.value(y).unwrap().clone()
}

#[test]
fn generator_output_shape_and_order_sensitivity() {
    let gen = init_generator(&cfg(4, 2)).unwrap();
    let a = rand_tensor(&[2, 64, 64], 10, 1.0);
    let b = rand_tensor(&[2, 64, 64], 11, 1.0);
    let ab = forward(&gen, &[a.clone(), b.clone()]);
    assert_eq!(ab.shape(), &[2, 64, 64]);
    assert!(ab.iter().all(|v| v.is_finite()));
    let ba = forward(&gen, &[b, a.clone()]);
    let diff = ab.iter().zip(ba.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-9, "sequence order ignored");
    assert_eq!(forward(&gen, &[a]).shape(), &[2, 64, 64]);
}

#[test]
fn bad_inputs_are_errors() {
    let gen = init_generator(&cfg(2, 2)).unwrap();
    let mut g = Graph::new();
    let p = gen.bind_constant(&mut g);
    assert!(rhm_forward(&mut g, &p, &[]).is_err());
    let odd = g.constant(Tensor::zeros(IxDyn(&[2, 40, 32])));
    assert!(rhm_forward(&mut g, &p, &[odd]).is_err());
    let chans = g.constant(Tensor::zeros(IxDyn(&[3, 32, 32])));
    assert!(rhm_forward(&mut g, &p, &[chans]).is_err());
}

/// Parameter count of the generator, from the architecture alone.
fn analytic_counts(c: usize) -> (usize, usize) {
    let ch = |k: usize| c << (k - 1);
    let conv = |cin: usize, cout: usize, k: usize| k * k * cin * cout + cout;
    let mut total = 0;
    for k in 1..=4 {
        let cin = if k == 1 { 2 } else { ch(k - 1) };
        total += conv(cin, ch(k), 3) + conv(ch(k), ch(k), 3);
    }
    let rnn: usize = (1..=4).map(|k| 6 * conv(2 * ch(k), ch(k), 3) + conv(ch(k), ch(k), 1)).sum();
    total += rnn;
    for k in 2..=4 {
        total += conv(ch(k), ch(k - 1), 2) + conv(2 * ch(k - 1), ch(k - 1), 3);
    }
    total += conv(c, c, 2) + conv(c, c, 3) + conv(c, 2, 1);
    (total, rnn)
}

#[test]
fn desk_config_counts_match_oracle() {
    let mut gen = init_generator(&cfg(8, 5)).unwrap();
    let (total, rnn) = analytic_counts(8);
    assert_eq!((total, rnn), (703_258, 593_800));
    let full = count_parameters(&gen);
    assert_eq!(full.total, total);
    assert_eq!(full.trainable, total);
    assert_eq!(full.per_block.values().sum::<usize>(), total);
    gen.set_rnn_frozen(true);
    let frozen = count_parameters(&gen);
    assert_eq!(frozen.trainable, total - rnn);
    assert_eq!(frozen.frozen, rnn);
    let rnn_blocks: usize = frozen.per_block.iter().filter(|(k, _)| k.starts_with("rnn_")).map(|(_, v)| v).sum();
    assert_eq!(rnn_blocks, rnn);
    println!("trainable fraction with frozen backbone: {:.4}", frozen.trainable_fraction());
}

#[test]
fn single_conv_counts_76() {
    let mut ps = ParameterSet::new();
    for (name, shape) in [("conv.weight", vec![4, 2, 3, 3]), ("conv.bias", vec![4])] {
        ps.push(Parameter {
            name: name.into(),
            value: Tensor::zeros(IxDyn(&shape)),
            tag: BlockTag::Head,
            frozen: false,
        })
        .unwrap();
    }
    assert_eq!(count_parameters(&ps).total, 76);
}

/// One generator tensor per block, plus the head; the rest are constants.
const PROBED: [&str; 8] = [
    "down_conv_1.conv_a.weight",
    "down_conv_3.conv_b.bias",
    "rnn_1.gru_1.conv_z.weight",
    "rnn_2.gru_2.conv_h.weight",
    "rnn_4.proj.weight",
    "up_conv_3.up.weight",
    "up_conv_1.conv.weight",
    "head.bias",
];

fn micro_batch(m: usize, n: usize, side: usize) -> Vec<(Vec<Tensor>, Tensor)> {
    (0..n as u64)
        .map(|s| {
            let inputs = (0..m as u64).map(|t| rand_tensor(&[2, side, side], 50 + 10 * s + t, 1.0)).collect();
            let mut target = rand_tensor(&[2, side, side], 90 + s, 1.0);
            target.mapv_inplace(|v| 0.5 + 0.4 * v);
            (inputs, target)
        })
        .collect()
}

#[test]
fn gradcheck_full_generator_loss() {
    let c = cfg(2, 2);
    let gen = init_generator(&c).unwrap();
    let disc = init_discriminator(&c).unwrap();
    let batch = micro_batch(2, 2, 32);
    let inputs: Vec<Tensor> = PROBED.iter().map(|n| gen.get(n).unwrap().value.clone()).collect();
    let weights = LossWeights::default();
    assert_eq!((weights.alpha, weights.beta, weights.gamma), (3.0, 1.0, 0.3));
    let opts = GradcheckOptions {
        max_coords: 24,
        ..GradcheckOptions::default()
    };
    let err = gradcheck(
        &inputs,
        |g, v| {
            let mut vars: Vec<(String, Var)> = Vec::new();
            for p in gen.iter() {
                let var = match PROBED.iter().position(|n| *n == p.name) {
                    Some(i) => v[i],
                    None => g.constant(p.value.clone()),
                };
                vars.push((p.name.clone(), var));
            }
            let gp = Bound::from_vars(vars);
            let dp = disc.bind_constant(g);
            let mut total: Option<Var> = None;
            for (xs, y) in &batch {
                let xs: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
                let out = rhm_forward(g, &gp, &xs)?;
                let target = g.constant(y.clone());
                let d = disc_forward(g, &dp, out)?;
                let l = generator_loss(g, out, target, d, &weights, 3)?.total;
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l)?,
                });
            }
            Ok(total.unwrap())
        },
        &opts,
    )
    .unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn gradcheck_discriminator_loss() {
    let c = cfg(2, 1);
    let disc = init_discriminator(&c).unwrap();
    let names: Vec<String> = disc.iter().map(|p| p.name.clone()).collect();
    let inputs: Vec<Tensor> = disc.iter().map(|p| p.value.clone()).collect();
    let fake = rand_tensor(&[2, 32, 32], 1, 1.0);
    let real = rand_tensor(&[2, 32, 32], 2, 1.0);
    let err = gradcheck(
        &inputs,
        |g, v| {
            let p = Bound::from_vars(names.iter().cloned().zip(v.iter().copied()));
            let (f, r) = (g.constant(fake.clone()), g.constant(real.clone()));
            let df = disc_forward(g, &p, f)?;
            let dr = disc_forward(g, &p, r)?;
            discriminator_loss(g, df, dr)
        },
        &GradcheckOptions::default(),
    )
    .unwrap();
    assert!(err < 1e-3, "{err}");
}
