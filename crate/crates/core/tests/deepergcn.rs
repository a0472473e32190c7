use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgdcn_core::deepergcn::{
    adam_step, forward, graph_conv, loss_and_gradients, message, powermean_agg, predict, read_checkpoint, resplus_block, softmax_agg, train,
    write_checkpoint, AdamState, Adjacency, Aggregator, Checkpoint, GcnModel, GraphSample, Mode, ModelConfig, TrainConfig, MESSAGE_EPS,
};

#[test]
fn message_clamps_and_offsets() {
    assert_eq!(message(&[-1.0, 2.0], None), vec![MESSAGE_EPS, 2.0 + MESSAGE_EPS]);
    assert_eq!(message(&[-1.0, 2.0], Some(&[3.0, -5.0])), vec![2.0 + MESSAGE_EPS, MESSAGE_EPS]);
}

#[test]
fn softmax_aggregator_limits() {
    let msgs = vec![vec![1.0], vec![3.0]];
    assert!((softmax_agg(&msgs, 0.0)[0] - 2.0).abs() < 1e-12);
    assert!((softmax_agg(&msgs, 100.0)[0] - 3.0).abs() < 1e-9);
    assert!((softmax_agg(&msgs, -100.0)[0] - 1.0).abs() < 1e-9);
    assert!(softmax_agg(&[], 1.0).is_empty());
}

#[test]
fn powermean_aggregator_limits() {
    let msgs = vec![vec![2.0], vec![4.0]];
    assert!((powermean_agg(&msgs, 1.0).unwrap()[0] - 3.0).abs() < 1e-12);
    assert!((powermean_agg(&msgs, 64.0).unwrap()[0] - 4.0).abs() < 0.05);
    assert!(powermean_agg(&msgs, 0.0).is_err());
}

fn random_graph(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Adjacency {
    // A spanning path plus random chords; node n-1 is left isolated when
    // n > 3 to exercise the empty-neighborhood branch.
    let linked = if n > 3 { n - 1 } else { n };
    let mut edges: Vec<(usize, usize)> = (1..linked).map(|i| (i - 1, i)).collect();
    for _ in 0..extra {
        let a = rng.random_range(0..linked);
        let b = rng.random_range(0..linked);
        if a != b {
            edges.push((a.min(b), a.max(b)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Adjacency::from_edges(n, &edges).unwrap()
}

fn perturbed_model(cfg: ModelConfig, seed: u64) -> GcnModel {
    let mut m = GcnModel::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    // Move every parameter off its initial value so no gradient is
    // trivially zero by symmetry.
    for p in m.params.iter_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    for l in m.layout.layers.clone() {
        m.params[l.s] = rng.random_range(0.5..1.5);
        m.params[l.y_deg] = rng.random_range(-0.5..0.5);
        m.params[l.agg] = match cfg.aggregator {
            Aggregator::PowerMean => rng.random_range(1.0..3.0),
            _ => rng.random_range(0.2..2.0),
        };
    }
    m
}

fn gradient_check(aggregator: Aggregator, seeds: std::ops::Range<u64>) {
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 5;
        let adj = random_graph(n, 3, &mut rng);
        let mut cfg = ModelConfig::new(3, 4, 2);
        cfg.aggregator = aggregator;
        let mut model = perturbed_model(cfg, seed);
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let w = [0.7, 1.6];
        let (_, grad) = loss_and_gradients(&model, &adj, &x, &labels, w, None).unwrap();
        let h = 1e-5;
        for (name, range) in model.layout.tensors() {
            for i in range {
                let orig = model.params[i];
                model.params[i] = orig + h;
                let up = loss_and_gradients(&model, &adj, &x, &labels, w, None).unwrap().0;
                model.params[i] = orig - h;
                let down = loss_and_gradients(&model, &adj, &x, &labels, w, None).unwrap().0;
                model.params[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
                assert!(rel <= 1e-4, "seed {seed} {name}[{i}]: analytic {} numeric {numeric}", grad[i]);
            }
        }
    }
}

#[test]
fn softmax_gradients_match_finite_differences() {
    gradient_check(Aggregator::SoftMax, 0..10);
}

#[test]
fn powermean_and_sum_gradients_match_finite_differences() {
    gradient_check(Aggregator::PowerMean, 0..3);
    gradient_check(Aggregator::Sum, 0..3);
}

#[test]
fn uniform_logits_give_ln2() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let adj = random_graph(6, 4, &mut rng);
    let mut m = GcnModel::new(ModelConfig::new(2, 4, 1), 3).unwrap();
    let dec = m.layout.dec_w.start..m.layout.dec_b.end;
    m.params[dec].fill(0.0);
    let x: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
    let (loss, _) = loss_and_gradients(&m, &adj, &x, &[0, 1, 1, 0, 1, 0], [1.3, 0.4], None).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let mut p = vec![1.0, -2.0, 0.5];
    let g = [0.3, -4.0, 0.0];
    let mut s = AdamState::new(3);
    adam_step(&mut p, &g, &mut s, 0.01);
    // With bias correction the first step is lr·g/(|g| + eps).
    for (i, (&after, &before)) in p.iter().zip(&[1.0, -2.0, 0.5]).enumerate() {
        let expect = before - 0.01 * g[i] / (g[i].abs() + 1e-8);
        assert!((after - expect).abs() < 1e-15, "{i}");
    }
    let mut q = vec![0.25; 4];
    let mut s = AdamState::new(4);
    for _ in 0..5 {
        adam_step(&mut q, &[0.0; 4], &mut s, 0.1);
    }
    assert_eq!(q, vec![0.25; 4]);
}

#[test]
fn node_permutation_permutes_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 12;
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(0.25) {
                edges.push((a, b));
            }
        }
    }
    let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let perm: Vec<usize> = {
        let mut p: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut rng);
        p
    };
    let mut pe: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b]))).collect();
    pe.sort_unstable();
    let mut px = vec![0.0; n * 3];
    for v in 0..n {
        px[perm[v] * 3..perm[v] * 3 + 3].copy_from_slice(&x[v * 3..v * 3 + 3]);
    }
    let model = perturbed_model(ModelConfig::new(3, 6, 3), 9);
    let a = forward(&model, &Adjacency::from_edges(n, &edges).unwrap(), &x, Mode::Eval, None).unwrap();
    let b = forward(&model, &Adjacency::from_edges(n, &pe).unwrap(), &px, Mode::Eval, None).unwrap();
    for v in 0..n {
        for c in 0..2 {
            assert!((a[v * 2 + c] - b[perm[v] * 2 + c]).abs() < 1e-10);
        }
    }
}

#[test]
fn graph_conv_matches_straight_line_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let adj = random_graph(7, 5, &mut rng);
    let h = 5;
    let model = perturbed_model(ModelConfig::new(2, h, 1), 4);
    let l = model.layout.layers[0].clone();
    let p = &model.params;
    let z: Vec<f64> = (0..7 * h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let got = graph_conv(&model, 0, &z, &adj);
    for v in 0..7 {
        let zv = &z[v * h..(v + 1) * h];
        let nb = adj.neighbors(v);
        let mut u = zv.to_vec();
        if !nb.is_empty() {
            let mut agg = vec![0.0; h];
            for c in 0..h {
                let ms: Vec<f64> = nb.iter().map(|&w| z[w * h + c].max(0.0) + 1e-7).collect();
                let ws: Vec<f64> = ms.iter().map(|m| (p[l.agg] * m).exp()).collect();
                let tot: f64 = ws.iter().sum();
                agg[c] = ms.iter().zip(&ws).map(|(m, w)| m * w / tot).sum::<f64>() * (nb.len() as f64).powf(p[l.y_deg]);
            }
            let an = agg.iter().map(|a| a * a).sum::<f64>().sqrt();
            let zn = zv.iter().map(|a| a * a).sum::<f64>().sqrt();
            for c in 0..h {
                u[c] += p[l.s] * zn * agg[c] / an;
            }
        }
        let hid: Vec<f64> = (0..h)
            .map(|j| (p[l.b1.start + j] + (0..h).map(|i| u[i] * p[l.w1.start + i * h + j]).sum::<f64>()).max(0.0))
            .collect();
        for j in 0..h {
            let out = p[l.b2.start + j] + (0..h).map(|i| hid[i] * p[l.w2.start + i * h + j]).sum::<f64>();
            assert!((got[v * h + j] - out).abs() < 1e-12, "node {v} channel {j}");
        }
    }
    // The residual block adds its input back.
    let x: Vec<f64> = (0..7 * h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = resplus_block(&model, 0, &x, &adj, None);
    assert_eq!(out.len(), x.len());
}

/// Graphs where the positive class sits in a low-feature cluster.
fn planted_samples(count: usize, seed: u64) -> Vec<GraphSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(20..40);
            let adj = random_graph(n, n, &mut rng);
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
            let features = labels
                .iter()
                .flat_map(|&y| {
                    let shift = if y == 1 { -0.6 } else { 0.6 };
                    let a = shift + rng.random_range(-0.8..0.8);
                    let b = rng.random_range(-1.0..1.0);
                    [a, b, a * b]
                })
                .collect();
            let areas = (0..n).map(|_| rng.random_range(1..30)).collect();
            GraphSample {
                adjacency: adj,
                features,
                labels,
                areas,
            }
        })
        .collect()
}

#[test]
fn training_reduces_loss_and_resumes_exactly() {
    let train_set = planted_samples(10, 1);
    let val_set = planted_samples(4, 2);
    let model = GcnModel::new(ModelConfig::new(3, 8, 2), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 4,
        learning_rate: 0.01,
        seed: 3,
    };
    let out = train(Checkpoint::fresh(model.clone()), &train_set, &val_set, &cfg).unwrap();
    let first = out.history[0].train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last <= 0.8 * first, "loss {first} -> {last}");
    assert_eq!(out.history.len(), 30);

    // 4 epochs straight versus 2 + save/load + 2.
    let four = TrainConfig { epochs: 4, ..cfg };
    let two = TrainConfig { epochs: 2, ..cfg };
    let straight = train(Checkpoint::fresh(model.clone()), &train_set, &val_set, &four).unwrap();
    let half = train(Checkpoint::fresh(model), &train_set, &val_set, &two).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last.ckpt");
    write_checkpoint(&half.last, &path).unwrap();
    let loaded = read_checkpoint(&path).unwrap();
    assert_eq!(loaded, half.last);
    let resumed = train(loaded, &train_set, &val_set, &four).unwrap();
    assert_eq!(resumed.last.model.params, straight.last.model.params);
    assert_eq!(resumed.history, straight.history[2..]);
}

#[test]
fn training_is_independent_of_thread_count() {
    let train_set = planted_samples(6, 8);
    let model = GcnModel::new(ModelConfig::new(3, 6, 2), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 3,
        learning_rate: 0.01,
        seed: 5,
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(Checkpoint::fresh(model.clone()), &train_set, &[], &cfg).unwrap())
    };
    assert_eq!(run(1).last.model.params, run(4).last.model.params);
}

#[test]
fn checkpoint_rejects_corruption() {
    let model = GcnModel::new(ModelConfig::new(3, 4, 2), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&Checkpoint::fresh(model.clone()), &path).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back.model, model);
    assert!(back.optimizer.is_none());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(read_checkpoint(&path).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(read_checkpoint(&path).is_err());
    let mut longer = bytes;
    longer.push(0);
    std::fs::write(&path, &longer).unwrap();
    assert!(read_checkpoint(&path).is_err());
}

#[test]
fn predict_breaks_ties_toward_sea() {
    let mut m = GcnModel::new(ModelConfig::new(2, 3, 1), 0).unwrap();
    let dec = m.layout.dec_w.start..m.layout.dec_b.end;
    m.params[dec].fill(0.0);
    let adj = Adjacency::from_edges(3, &[(0, 1)]).unwrap();
    assert_eq!(predict(&m, &adj, &[0.1; 6]).unwrap(), vec![0, 0, 0]);
}

#[test]
fn confident_correct_logits_have_tiny_loss_and_gradient() {
    let mut m = GcnModel::new(ModelConfig::new(2, 4, 2), 0).unwrap();
    let (w, b) = (m.layout.dec_w.clone(), m.layout.dec_b.clone());
    m.params[w].fill(0.0);
    m.params[b.start] = 20.0;
    m.params[b.start + 1] = -20.0;
    let adj = Adjacency::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
    let (loss, grad) = loss_and_gradients(&m, &adj, &[0.3; 8], &[0; 4], [1.0, 1.0], None).unwrap();
    assert!(loss < 1e-3);
    assert!(grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-2);
}

#[test]
fn powermean_of_single_message_is_identity() {
    let msg = vec![vec![0.5, 2.0, 7.0]];
    for p in [1.0, 2.5, -1.5, 10.0] {
        let out = powermean_agg(&msg, p).unwrap();
        for (a, b) in out.iter().zip(&msg[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_scale_reduces_conv_to_node_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let adj = random_graph(6, 6, &mut rng);
    let mut model = perturbed_model(ModelConfig::new(2, 5, 1), 6);
    let s = model.layout.layers[0].s;
    model.params[s] = 0.0;
    let z: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
    let isolated = Adjacency::from_edges(6, &[]).unwrap();
    assert_eq!(graph_conv(&model, 0, &z, &adj), graph_conv(&model, 0, &z, &isolated));
}

#[test]
fn zero_mlp_output_makes_block_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let adj = random_graph(5, 3, &mut rng);
    let mut model = perturbed_model(ModelConfig::new(2, 4, 1), 1);
    let l = model.layout.layers[0].clone();
    model.params[l.w2.start..l.b2.end].fill(0.0);
    let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    assert_eq!(resplus_block(&model, 0, &x, &adj, None), x);
}

#[test]
fn single_node_graph_gives_one_logit_pair() {
    let model = perturbed_model(ModelConfig::new(3, 4, 2), 0);
    let adj = Adjacency::from_edges(1, &[]).unwrap();
    let out = forward(&model, &adj, &[0.1, -0.2, 0.3], Mode::Eval, None).unwrap();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn one_epoch_gives_one_history_row() {
    let train_set = planted_samples(3, 4);
    let model = GcnModel::new(ModelConfig::new(3, 4, 1), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        learning_rate: 0.01,
        seed: 0,
    };
    let out = train(Checkpoint::fresh(model), &train_set, &planted_samples(2, 5), &cfg).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.last.epoch, 1);
}

#[test]
fn predict_is_argmax_of_forward() {
    let sample = &planted_samples(1, 9)[0];
    let model = perturbed_model(ModelConfig::new(3, 6, 2), 2);
    let logits = forward(&model, &sample.adjacency, &sample.features, Mode::Eval, None).unwrap();
    let expect: Vec<u8> = logits.chunks(2).map(|c| u8::from(c[1] > c[0])).collect();
    assert_eq!(predict(&model, &sample.adjacency, &sample.features).unwrap(), expect);
}

mod aggregator_props {
    use super::*;
    use proptest::prelude::*;

    fn messages() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..4).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(0.0f64..5.0, d), 1..8))
    }

    proptest! {
        #[test]
        fn softmax_is_permutation_invariant_and_bounded(msgs in messages(), beta in -5.0f64..5.0, rot in 0usize..8) {
            let a = softmax_agg(&msgs, beta);
            let mut shuffled = msgs.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let b = softmax_agg(&shuffled, beta);
            for c in 0..a.len() {
                prop_assert!((a[c] - b[c]).abs() < 1e-12);
                let lo = msgs.iter().map(|m| m[c]).fold(f64::INFINITY, f64::min);
                let hi = msgs.iter().map(|m| m[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(a[c] >= lo - 1e-12 && a[c] <= hi + 1e-12);
            }
        }

        #[test]
        fn powermean_is_permutation_invariant_and_bounded(msgs in messages(), p in 1.0f64..6.0) {
            let msgs: Vec<Vec<f64>> = msgs.into_iter().map(|m| m.into_iter().map(|v| v + MESSAGE_EPS).collect()).collect();
            let a = powermean_agg(&msgs, p).unwrap();
            let mut rev = msgs.clone();
            rev.reverse();
            let b = powermean_agg(&rev, p).unwrap();
            for c in 0..a.len() {
                prop_assert!((a[c] - b[c]).abs() < 1e-9 * (1.0 + a[c].abs()));
                let lo = msgs.iter().map(|m| m[c]).fold(f64::INFINITY, f64::min);
                let hi = msgs.iter().map(|m| m[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(a[c] >= lo * (1.0 - 1e-9) && a[c] <= hi * (1.0 + 1e-9));
            }
        }
    }
}
