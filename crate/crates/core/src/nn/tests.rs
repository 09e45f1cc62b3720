use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_net(input: usize, hidden: usize, out: usize, head: Head, seed: u64) -> Network<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::zeros(input, hidden, out, head);
    for p in &mut net.params {
        *p = rng.gen_range(-0.8..0.8);
    }
    net
}

/// Independent recomputation of one cell step with explicit per-gate loops.
fn oracle_cell(net: &Network<f64>, x: f64, c: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = net.hidden;
    let lay = net.layout();
    let concat: Vec<f64> = std::iter::once(x).chain(h.iter().copied()).collect();
    let pre = |gate: usize, j: usize| {
        let mut z = net.params[lay.b_gates + gate * hd + j];
        for (r, v) in concat.iter().enumerate() {
            z += net.params[lay.w_gates + r * 4 * hd + gate * hd + j] * v;
        }
        z
    };
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut c2 = vec![0.0; hd];
    let mut h2 = vec![0.0; hd];
    for j in 0..hd {
        let f = sig(pre(0, j));
        let i = sig(pre(1, j));
        let o = sig(pre(2, j));
        let g = pre(3, j).tanh();
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (c2, h2)
}

#[test]
fn zero_weights_give_zero_state() {
    let net = Network::<f64>::zeros(1, 4, 3, Head::Exponential);
    let next = net.cell_forward(&[0.7], &CellState::zeros(4)).unwrap();
    assert!(next.c.iter().chain(&next.h).all(|v| *v == 0.0));
}

#[test]
fn closed_forget_gate_drops_memory() {
    let mut net = Network::<f64>::zeros(1, 3, 1, Head::Exponential);
    let lay = net.layout();
    for j in 0..3 {
        net.params[lay.b_gates + j] = -10.0;
    }
    let prev = CellState { c: vec![5.0, -3.0, 1.0], h: vec![0.0; 3] };
    let next = net.cell_forward(&[0.2], &prev).unwrap();
    for (cn, cp) in next.c.iter().zip(&prev.c) {
        // candidate is tanh(0) = 0, so only the forget term remains
        assert!(cn.abs() < 1e-4 * cp.abs());
    }
}

#[test]
fn cell_matches_scalar_oracle() {
    let net = random_net(1, 3, 2, Head::Exponential, 11);
    let mut st = CellState { c: vec![0.3, -0.2, 0.5], h: vec![0.1, 0.4, -0.3] };
    for &x in &[0.9, 0.5, -0.1, 0.25] {
        let (c, h) = oracle_cell(&net, x, &st.c, &st.h);
        st = net.cell_forward(&[x], &st).unwrap();
        for k in 0..3 {
            assert!((st.c[k] - c[k]).abs() < 1e-12);
            assert!((st.h[k] - h[k]).abs() < 1e-12);
            assert!(st.h[k].abs() <= 1.0);
        }
    }
}

#[test]
fn cell_rejects_bad_shapes() {
    let net = Network::<f64>::zeros(1, 3, 1, Head::Exponential);
    assert!(matches!(net.cell_forward(&[0.0, 1.0], &CellState::zeros(3)), Err(Error::Config(_))));
    assert!(matches!(net.cell_forward(&[0.0], &CellState::zeros(2)), Err(Error::Config(_))));
}

#[test]
fn batched_forward_matches_oracle_loop() {
    let net = random_net(1, 3, 4, Head::Exponential, 5);
    let curves = [[1.0, 0.8, 0.5, 0.2, 0.05], [1.0, 0.95, 0.9, 0.7, 0.6]];
    let flat: Vec<f64> = curves.iter().flatten().copied().collect();
    let mut ws = Workspace::default();
    let out = net.forward_batch(&flat, 2, 5, &mut ws).unwrap();
    let lay = net.layout();
    for (b, curve) in curves.iter().enumerate() {
        let (mut c, mut h) = (vec![0.0; 3], vec![0.0; 3]);
        for &x in curve {
            (c, h) = oracle_cell(&net, x, &c, &h);
        }
        for j in 0..4 {
            let mut y = net.params[lay.b_dense + j];
            for k in 0..3 {
                y += h[k] * net.params[lay.w_dense + k * 4 + j];
            }
            assert!((out[b * 4 + j] - y.exp()).abs() < 1e-12 * y.exp());
        }
    }
}

#[test]
fn zero_params_output_one() {
    let net = Network::<f64>::zeros(1, 8, 151, Head::Exponential);
    let out = net.forward(&vec![0.5; 151]).unwrap();
    assert_eq!(out.len(), 151);
    assert!(out.iter().all(|v| *v == 1.0));
}

#[test]
fn linear_head_clamps() {
    let mut net = Network::<f64>::zeros(1, 2, 3, Head::LinearClamped);
    let lay = net.layout();
    net.params[lay.b_dense] = -4.0;
    net.params[lay.b_dense + 1] = 0.5;
    net.params[lay.b_dense + 2] = 7.0;
    let out = net.forward(&[0.3; 6]).unwrap();
    assert_eq!(out, vec![CLAMP_LO, 0.5, CLAMP_HI]);
}

#[test]
fn overflow_reports_divergence_step() {
    let mut net = Network::<f64>::zeros(1, 2, 1, Head::Exponential);
    let lay = net.layout();
    net.params[lay.b_dense] = 1000.0;
    let err = net.forward(&[0.3; 4]).unwrap_err();
    assert!(matches!(err, Error::Divergence { ref context } if context.contains("step")), "{err}");
}

#[test]
fn mape_examples() {
    let t = [1.0, 2.0, 4.0];
    assert_eq!(mape_loss(&t, &t).unwrap(), 0.0);
    let p: Vec<f64> = t.iter().map(|v| 1.1 * v).collect();
    assert!((mape_loss(&p, &t).unwrap() - 10.0).abs() < 1e-12);
    assert!(matches!(mape_loss(&[1.0], &[0.0]), Err(Error::DegenerateTarget(_))));
    assert!(mape_loss(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn mape_matches_scalar_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..3.0)).collect();
    let t: Vec<f64> = (0..40).map(|i| if i == 7 { 0.0 } else { rng.gen_range(-2.0..5.0) }).collect();
    let max = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut s = 0.0;
    for i in 0..40 {
        s += (p[i] - t[i]).abs() / t[i].abs().max(1e-12 * max);
    }
    assert!((mape_loss(&p, &t).unwrap() - 100.0 * s / 40.0).abs() < 1e-9 * s);
}

/// Per-tensor relative error between backprop and central differences.
fn gradient_check(head: Head, seed: u64) -> Vec<(String, f64)> {
    let (hidden, steps, out, batch) = (2, 5, 3, 2);
    let mut net = random_net(1, hidden, out, head, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let inputs: Vec<f64> = (0..batch * steps).map(|_| rng.gen_range(0.0..1.0)).collect();
    let targets: Vec<f64> = match head {
        Head::Exponential => (0..batch * out).map(|_| rng.gen_range(0.2..3.0)).collect(),
        Head::LinearClamped => (0..batch * out).map(|_| rng.gen_range(0.05..0.3)).collect(),
    };
    if head == Head::LinearClamped {
        // keep the affine output inside the clamp window
        let lay = net.layout();
        for j in 0..out {
            net.params[lay.b_dense + j] = 0.5;
        }
        for p in &mut net.params[lay.w_dense..lay.b_dense] {
            *p *= 0.2;
        }
    }
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; net.params.len()];
    net.loss_and_grad(&inputs, &targets, batch, steps, &mut ws, &mut grad).unwrap();

    let step = 1e-6;
    let mut fd = vec![0.0; net.params.len()];
    let mut scratch = vec![0.0; net.params.len()];
    for i in 0..net.params.len() {
        let orig = net.params[i];
        net.params[i] = orig + step;
        let up = net.loss_and_grad(&inputs, &targets, batch, steps, &mut ws, &mut scratch).unwrap();
        net.params[i] = orig - step;
        let dn = net.loss_and_grad(&inputs, &targets, batch, steps, &mut ws, &mut scratch).unwrap();
        net.params[i] = orig;
        fd[i] = (up - dn) / (2.0 * step);
    }

    let h = hidden;
    let lay = net.layout();
    let mut report = Vec::new();
    let mut tensor = |name: String, idx: Vec<usize>| {
        let num: f64 = idx.iter().map(|&i| (grad[i] - fd[i]).powi(2)).sum::<f64>().sqrt();
        let den: f64 = idx.iter().map(|&i| fd[i].powi(2)).sum::<f64>().sqrt();
        report.push((name, num / den.max(1e-10)));
    };
    for (g, name) in ["f", "i", "o", "c"].iter().enumerate() {
        let w: Vec<usize> = (0..1 + h).flat_map(|r| (0..h).map(move |j| lay.w_gates + r * 4 * h + g * h + j)).collect();
        tensor(format!("W_{name}"), w);
        tensor(format!("b_{name}"), (0..h).map(|j| lay.b_gates + g * h + j).collect());
    }
    tensor("W_d".into(), (lay.w_dense..lay.b_dense).collect());
    tensor("b_d".into(), (lay.b_dense..lay.len).collect());
    report
}

#[test]
fn gradients_match_finite_differences_exponential() {
    for (name, err) in gradient_check(Head::Exponential, 21) {
        assert!(err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn gradients_match_finite_differences_linear() {
    for (name, err) in gradient_check(Head::LinearClamped, 8) {
        assert!(err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn dense_bias_gradient_by_hand() {
    // two outputs, one record
    let net = random_net(1, 2, 2, Head::Exponential, 2);
    let inputs = [0.9, 0.4, 0.1];
    let pred = net.forward(&inputs).unwrap();
    let targets = [pred[0] * 0.5, pred[1] * 2.0];
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; net.params.len()];
    net.loss_and_grad(&inputs, &targets, 1, 3, &mut ws, &mut grad).unwrap();
    let lay = net.layout();
    let want0 = 100.0 / 2.0 * pred[0] / targets[0];
    let want1 = -100.0 / 2.0 * pred[1] / targets[1];
    assert!((grad[lay.b_dense] - want0).abs() < 1e-12 * want0.abs());
    assert!((grad[lay.b_dense + 1] - want1).abs() < 1e-12 * want1.abs());
}

#[test]
fn exact_fit_has_zero_gradient() {
    let mut net = random_net(1, 2, 2, Head::LinearClamped, 4);
    let lay = net.layout();
    net.params[lay.b_dense] = 0.5;
    net.params[lay.b_dense + 1] = 0.6;
    for p in &mut net.params[lay.w_dense..lay.b_dense] {
        *p *= 0.1;
    }
    let inputs = [0.3, 0.2, 0.1];
    let targets = net.forward(&inputs).unwrap();
    let mut ws = Workspace::default();
    let mut grad = vec![1.0; net.params.len()];
    let loss = net.loss_and_grad(&inputs, &targets, 1, 3, &mut ws, &mut grad).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn f32_forward_tracks_f64() {
    let net = random_net(1, 6, 5, Head::Exponential, 9);
    let net32: Network<f32> = net.cast();
    let xs: Vec<f64> = (0..30).map(|i| (-(i as f64) / 10.0).exp()).collect();
    let a = net.forward(&xs).unwrap();
    let xs32: Vec<f32> = xs.iter().map(|&v| v as f32).collect();
    let b = net32.forward(&xs32).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - *y as f64).abs() < 1e-5 * x);
    }
}

#[test]
fn forward_is_deterministic() {
    let net: Network<f32> = random_net(1, 16, 151, Head::Exponential, 1).cast();
    let xs: Vec<f32> = (0..151).map(|i| 1.0 - i as f32 / 151.0).collect();
    let a = net.forward(&xs).unwrap();
    let b = net.forward(&xs).unwrap();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

fn toy_data(n: usize, seed: u64) -> TrainingData {
    // decays exp(-(t/T)^2) mapped to a 4-point "spectrum" that depends on T
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = TrainingData::new(20, 4);
    for _ in 0..n {
        let t2: f64 = rng.gen_range(0.3..1.5);
        let curve: Vec<f64> = (1..=20).map(|i| (-(i as f64 / 20.0 / t2).powi(2)).exp()).collect();
        let target: Vec<f64> = (0..4).map(|k| 1e4 * (k as f64 + 1.0) / t2.powi(k + 1)).collect();
        d.push(&curve, &target, InputEncoding::Raw).unwrap();
    }
    d
}

#[test]
fn overfits_fifty_samples() {
    let data = toy_data(50, 1);
    let cfg = TrainingConfig { epochs: 400, batch_size: 10, max_lr: 1e-2, hidden: 16, seed: 3, ..Default::default() };
    let trained = train(&data, &data, Head::Exponential, &cfg).unwrap();
    let final_mape = evaluate(&trained.network, &data).unwrap();
    assert!(final_mape < 1.0, "training MAPE {final_mape}");
    assert!(trained.best_validation <= trained.history.last().unwrap().validation_mape);
}

#[test]
fn training_is_reproducible() {
    let data = toy_data(30, 2);
    let val = toy_data(10, 3);
    let cfg = TrainingConfig { epochs: 3, batch_size: 8, hidden: 8, seed: 5, ..Default::default() };
    let a = train(&data, &val, Head::Exponential, &cfg).unwrap();
    let b = train(&data, &val, Head::Exponential, &cfg).unwrap();
    let strip = |t: &TrainedNetwork| t.history.iter().map(|h| (h.train_mape, h.validation_mape)).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.network.params, b.network.params);
}

#[test]
fn checkpoint_round_trip() {
    let data = toy_data(20, 4);
    let cfg = TrainingConfig { epochs: 2, batch_size: 8, hidden: 5, ..Default::default() };
    let trained = train(&data, &data, Head::Exponential, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let manifest = save_checkpoint(&trained, &path).unwrap();
    assert_eq!(manifest.tensors[0].name, "W_f");
    assert_eq!(manifest.tensors[0].shape, vec![6, 5]);
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.network, trained.network);
    assert_eq!(back.config, trained.config);

    let blob = dir.path().join("net.json.bin");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&blob, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Corruption(_))));
}

#[test]
fn checkpoint_version_is_checked() {
    let data = toy_data(10, 4);
    let cfg = TrainingConfig { epochs: 1, batch_size: 8, hidden: 3, ..Default::default() };
    let trained = train(&data, &data, Head::LinearClamped, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    save_checkpoint(&trained, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 9");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Version { found: 9, .. })));
}
