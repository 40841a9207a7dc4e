use super::*;
use crate::molgraph::{parse_smiles, random_smiles, MolecularGraph};
use crate::tensor::{CosineRestarts, Mode};
use proptest::prelude::*;

const MOLECULES: &[&str] = &[
    "CCO",
    "c1ccccc1O",
    "CC(=O)OC",
    "N#CC(C)C",
    "OC(=O)c1ccccc1N",
    "C1CCC(CC1)Cl",
    "CSC",
    "C=CC=O",
    "CC(C)(C)c1ccc(O)cc1",
    "O=C1CCCCC1",
];

fn graph(s: &str) -> MolecularGraph {
    parse_smiles(s).unwrap()
}

fn small(variant: Variant, n_tasks: usize) -> GnnConfig {
    let mut cfg = match variant {
        Variant::Gcn => GnnConfig {
            message_dims: vec![3, 4],
            readout_dim: 5,
            head_dims: vec![4],
            ..GnnConfig::gcn(n_tasks)
        },
        Variant::Mpnn => GnnConfig {
            message_dims: vec![3, 3],
            readout_dim: 4,
            head_dims: vec![6, 5],
            ..GnnConfig::mpnn(n_tasks)
        },
    };
    cfg.train.seed = 17;
    cfg
}

fn dense(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (k, n) = w.dims2();
    assert_eq!(x.len(), k);
    (0..n)
        .map(|j| b.data()[j] + (0..k).map(|i| x[i] * w.get(i, j)).sum::<f64>())
        .collect()
}

fn param<'a>(m: &'a GnnModel, name: &str) -> &'a Tensor {
    m.store().get(m.store().id_of(name).unwrap_or_else(|| panic!("{name}")))
}

fn selu(x: f64) -> f64 {
    let (alpha, lambda) = (1.673_263_242_354_377_3, 1.050_700_987_355_480_5);
    if x > 0.0 {
        lambda * x
    } else {
        lambda * alpha * (x.exp() - 1.0)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn default_gcn_shapes() {
    let m = GnnModel::new(GnnConfig::gcn(138)).unwrap();
    let out = m.forward(&m.featurize(&graph("CCO")).unwrap(), Mode::Infer).unwrap();
    assert_eq!(out.embedding.len(), 63);
    assert_eq!(out.logits.len(), 138);
    assert_eq!(m.config().embedding_dim(), 63);
}

#[test]
fn default_mpnn_shapes() {
    let m = GnnModel::new(GnnConfig::mpnn(138)).unwrap();
    let out = m.forward(&m.featurize(&graph("c1ccccc1O")).unwrap(), Mode::Infer).unwrap();
    assert_eq!(out.embedding.len(), 392);
    assert_eq!(out.logits.len(), 138);
}

#[test]
fn config_validation() {
    let mut c = GnnConfig::gcn(3);
    c.dropout = 1.0;
    assert!(GnnModel::new(c).is_err());
    let mut c = GnnConfig::mpnn(3);
    c.message_dims = vec![4, 5];
    assert!(GnnModel::new(c).is_err());
    assert!(GnnModel::new(GnnConfig::gcn(0)).is_err());
}

#[test]
fn zeroed_output_gives_half_probabilities() {
    for cfg in [GnnConfig::gcn(138), GnnConfig::mpnn(138)] {
        let mut m = GnnModel::new(cfg).unwrap();
        m.zero_output_layer();
        let inputs: Vec<GraphInput> = MOLECULES.iter().map(|s| m.featurize(&graph(s)).unwrap()).collect();
        for row in m.predict_proba(&inputs).unwrap() {
            assert!(row.iter().all(|&p| p == 0.5));
        }
    }
}

#[test]
fn readout_sums_to_atom_count() {
    for variant in [Variant::Gcn, Variant::Mpnn] {
        let mut cfg = small(variant, 2);
        cfg.message_dims.truncate(1);
        let m = GnnModel::new(cfg).unwrap();
        for (s, n) in [("C", 1.0), ("CCO", 3.0), ("c1ccccc1", 6.0)] {
            let r = m.readout(&m.featurize(&graph(s)).unwrap()).unwrap();
            assert!((r.iter().sum::<f64>() - n).abs() < 1e-12, "{s}");
        }
    }
}

#[test]
fn gcn_layer_matches_manual_forward_on_path() {
    let mut cfg = small(Variant::Gcn, 1);
    cfg.message_dims = vec![2];
    let mut m = GnnModel::new(cfg).unwrap();
    let w_msg = Tensor::from_rows(&[vec![0.5, -0.3], vec![0.2, 0.8], vec![-0.7, 0.1], vec![0.4, 0.6]]).unwrap();
    let id = m.store().id_of("message0.weight").unwrap();
    *m.store_mut().get_mut(id) = w_msg.clone();
    let id = m.store().id_of("message0.bias").unwrap();
    *m.store_mut().get_mut(id) = Tensor::row(vec![0.05, -0.1]);

    let g = graph("CCO");
    let gi = m.featurize(&g).unwrap();
    let h0: Vec<Vec<f64>> = (0..3)
        .map(|v| dense(gi.atoms.row_slice(v), param(&m, "input.weight"), param(&m, "input.bias")))
        .collect();
    let nbrs = [vec![1], vec![0, 2], vec![1]];
    let states = m.node_states(&gi).unwrap();
    for v in 0..3 {
        let agg: Vec<f64> = (0..2)
            .map(|j| nbrs[v].iter().map(|&u| h0[u][j]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let cat = [h0[v].clone(), agg].concat();
        let expected: Vec<f64> = dense(&cat, &w_msg, param(&m, "message0.bias")).into_iter().map(selu).collect();
        assert!(max_abs_diff(states[0].row_slice(v), &expected) < 1e-14);
    }
}

#[test]
fn isolated_atom_uses_zero_aggregate() {
    let m = GnnModel::new(small(Variant::Gcn, 1)).unwrap();
    let gi = m.featurize(&graph("C")).unwrap();
    let h0 = dense(gi.atoms.row_slice(0), param(&m, "input.weight"), param(&m, "input.bias"));
    let cat = [h0.clone(), vec![0.0; h0.len()]].concat();
    let expected: Vec<f64> = dense(&cat, param(&m, "message0.weight"), param(&m, "message0.bias"))
        .into_iter()
        .map(selu)
        .collect();
    assert!(max_abs_diff(m.node_states(&gi).unwrap()[0].row_slice(0), &expected) < 1e-14);
}

/// h' = (1−z)⊙n + z⊙h with gates computed from the stored GRU weights.
fn manual_gru(m: &GnnModel, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let gate = |g: &str| {
        let a = dense(x, param(m, &format!("{prefix}.{g}_x.weight")), param(m, &format!("{prefix}.{g}_x.bias")));
        let b = dense(h, param(m, &format!("{prefix}.{g}_h.weight")), param(m, &format!("{prefix}.{g}_h.bias")));
        (a, b)
    };
    let (rx, rh) = gate("reset");
    let (zx, zh) = gate("update");
    let (nx, nh) = gate("candidate");
    (0..h.len())
        .map(|i| {
            let r = sigmoid(rx[i] + rh[i]);
            let z = sigmoid(zx[i] + zh[i]);
            let n = (nx[i] + r * nh[i]).tanh();
            (1.0 - z) * n + z * h[i]
        })
        .collect()
}

#[test]
fn mpnn_layer_matches_manual_forward_on_two_atoms() {
    let mut cfg = small(Variant::Mpnn, 1);
    cfg.message_dims = vec![2];
    let mut m = GnnModel::new(cfg).unwrap();
    // single-bond one-hot is feature 0, so row 0 of the edge net is A for C–O
    let a = [0.3, -0.5, 0.9, 0.2];
    let mut w = Tensor::zeros(&[5, 4]);
    w.data_mut()[..4].copy_from_slice(&a);
    let id = m.store().id_of("message0.edge.weight").unwrap();
    *m.store_mut().get_mut(id) = w;

    let gi = m.featurize(&graph("CO")).unwrap();
    let h0: Vec<Vec<f64>> = (0..2)
        .map(|v| dense(gi.atoms.row_slice(v), param(&m, "input.weight"), param(&m, "input.bias")))
        .collect();
    let states = m.node_states(&gi).unwrap();
    for v in 0..2 {
        let u = 1 - v;
        let msg = [a[0] * h0[u][0] + a[1] * h0[u][1], a[2] * h0[u][0] + a[3] * h0[u][1]];
        let expected = manual_gru(&m, "message0.gru", &msg, &h0[v]);
        assert!(max_abs_diff(states[0].row_slice(v), &expected) < 1e-14);
    }
}

#[test]
fn zero_edge_network_reduces_to_gru_with_zero_input() {
    let mut m = GnnModel::new(small(Variant::Mpnn, 1)).unwrap();
    for name in ["message0.edge.weight", "message0.edge.bias"] {
        let id = m.store().id_of(name).unwrap();
        m.store_mut().get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let gi = m.featurize(&graph("CC(=O)O")).unwrap();
    let states = m.node_states(&gi).unwrap();
    for v in 0..gi.num_atoms() {
        let h0 = dense(gi.atoms.row_slice(v), param(&m, "input.weight"), param(&m, "input.bias"));
        let expected = manual_gru(&m, "message0.gru", &[0.0; 3], &h0);
        assert!(max_abs_diff(states[0].row_slice(v), &expected) < 1e-14);
    }
}

#[test]
fn logits_invariant_under_respelling() {
    use rand::SeedableRng;
    for cfg in [GnnConfig::gcn(138), GnnConfig::mpnn(138)] {
        let m = GnnModel::new(cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for s in MOLECULES {
            let g = graph(s);
            let base = m.forward(&m.featurize(&g).unwrap(), Mode::Infer).unwrap();
            for _ in 0..20 {
                let alt = graph(&random_smiles(&g, &mut rng));
                let out = m.forward(&m.featurize(&alt).unwrap(), Mode::Infer).unwrap();
                assert!(max_abs_diff(&base.logits, &out.logits) <= 1e-9, "{s}");
                assert!(max_abs_diff(&base.embedding, &out.embedding) <= 1e-9, "{s}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn node_states_are_equivariant(mol in 0usize..MOLECULES.len(), seed in any::<u64>(), mpnn in any::<bool>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let variant = if mpnn { Variant::Mpnn } else { Variant::Gcn };
        let m = GnnModel::new(small(variant, 2)).unwrap();
        let g = graph(MOLECULES[mol]);
        let mut perm: Vec<usize> = (0..g.num_atoms()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let p = g.permuted(&perm);
        let a = m.node_states(&m.featurize(&g).unwrap()).unwrap();
        let b = m.node_states(&m.featurize(&p).unwrap()).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            for (v, &pv) in perm.iter().enumerate() {
                prop_assert!(max_abs_diff(sa.row_slice(v), sb.row_slice(pv)) <= 1e-12);
            }
        }
        let ra = m.readout(&m.featurize(&g).unwrap()).unwrap();
        let rb = m.readout(&m.featurize(&p).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&ra, &rb) <= 1e-12);
    }
}

fn batch_of(m: &GnnModel, smiles: &[&str]) -> Vec<GraphInput> {
    smiles.iter().map(|s| m.featurize(&graph(s)).unwrap()).collect()
}

#[test]
fn full_parameter_gradient_check_small_models() {
    // A head layer whose relu units are all off for the whole batch puts the
    // next layer exactly on the relu kink; the small configs avoid that.
    for variant in [Variant::Gcn, Variant::Mpnn] {
        let mut cfg = small(variant, 3);
        cfg.dropout = 0.3;
        cfg.l1 = 1e-3;
        cfg.l2 = 1e-2;
        let m = GnnModel::new(cfg).unwrap();
        let inputs = batch_of(&m, &["CC(=O)O", "c1ccccc1N", "C=CCS"]);
        let refs: Vec<&GraphInput> = inputs.iter().collect();
        let labels: Vec<Vec<u8>> = vec![vec![1, 0, 1], vec![0, 1, 1], vec![0, 0, 1]];
        let targets: Vec<&[u8]> = labels.iter().map(|l| l.as_slice()).collect();
        let check = gradient_check(&m, &refs, &targets, &[2.0, 1.0, 1.5], 1.0, 3).unwrap();
        assert_eq!(check.checked, m.store().trainable_count());
        assert!(check.max_rel_err <= 1e-4, "{variant:?}: {} ({})", check.max_rel_err, check.worst);
    }
}

#[test]
fn modes_agree_without_dropout_and_with_frozen_batchnorm() {
    for variant in [Variant::Gcn, Variant::Mpnn] {
        let mut cfg = small(variant, 4);
        cfg.dropout = 0.0;
        cfg.train.freeze_batchnorm = true;
        let m = GnnModel::new(cfg).unwrap();
        for s in MOLECULES {
            let gi = m.featurize(&graph(s)).unwrap();
            let a = m.forward(&gi, Mode::Train).unwrap();
            let b = m.forward(&gi, Mode::Infer).unwrap();
            assert!(max_abs_diff(&a.logits, &b.logits) <= 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trip_reproduces_logits() {
    let dir = tempfile::tempdir().unwrap();
    for (k, cfg) in [small(Variant::Gcn, 3), small(Variant::Mpnn, 3)].into_iter().enumerate() {
        let mut m = GnnModel::new(cfg).unwrap();
        let inputs = batch_of(&m, MOLECULES);
        let labels: Vec<Vec<u8>> = (0..inputs.len()).map(|i| vec![(i % 2) as u8, (i % 3 == 0) as u8, 1]).collect();
        m.config.train.epochs = 2;
        m.config.train.batch_size = 4;
        let idx: Vec<usize> = (0..inputs.len()).collect();
        train(&mut m, TrainData { inputs: &inputs, labels: &labels }, &idx, &[]).unwrap();
        let path = dir.path().join(format!("m{k}.json"));
        m.save(&path).unwrap();
        let back = GnnModel::load(&path).unwrap();
        assert_eq!(back.epochs_trained(), 2);
        let bits = |rows: Vec<Vec<f64>>| rows.into_iter().flatten().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(m.predict_logits(&inputs).unwrap()), bits(back.predict_logits(&inputs).unwrap()));
    }
}

fn toy_data(m: &GnnModel) -> (Vec<GraphInput>, Vec<Vec<u8>>) {
    let inputs = batch_of(m, MOLECULES);
    let labels = MOLECULES
        .iter()
        .map(|s| vec![u8::from(s.contains('O')), u8::from(s.contains('c')), u8::from(s.contains('N'))])
        .collect();
    (inputs, labels)
}

#[test]
fn initial_loss_with_zero_output_is_weighted_ln2() {
    let mut m = GnnModel::new(small(Variant::Gcn, 3)).unwrap();
    m.zero_output_layer();
    let (inputs, labels) = toy_data(&m);
    let weights = [1.5, 3.0, 2.5];
    let refs: Vec<&GraphInput> = inputs.iter().collect();
    let targets: Vec<&[u8]> = labels.iter().map(|l| l.as_slice()).collect();
    let loss = m.batch_loss(&refs, &targets, &weights, &mut ForwardCtx::train(0)).unwrap();
    let expected: f64 = labels
        .iter()
        .flat_map(|row| row.iter().zip(&weights).map(|(&t, w)| if t == 1 { *w } else { 1.0 }))
        .sum::<f64>()
        * std::f64::consts::LN_2
        / (labels.len() * 3) as f64;
    assert!((loss - expected).abs() < 1e-12);
}

#[test]
fn duplicated_full_batch_matches_single_copy() {
    let mut cfg = small(Variant::Gcn, 3);
    cfg.dropout = 0.0;
    cfg.train.epochs = 5;
    cfg.train.schedule = CosineRestarts {
        base_lr: 1e-2,
        ..CosineRestarts::default()
    };
    let mut a = GnnModel::new(cfg.clone()).unwrap();
    let (inputs, labels) = toy_data(&a);
    let n = inputs.len();
    a.config.train.batch_size = n;
    let idx: Vec<usize> = (0..n).collect();
    train(&mut a, TrainData { inputs: &inputs, labels: &labels }, &idx, &[]).unwrap();

    let mut b = GnnModel::new(cfg).unwrap();
    b.config.train.batch_size = 2 * n;
    let inputs2 = [inputs.clone(), inputs].concat();
    let labels2 = [labels.clone(), labels].concat();
    let idx2: Vec<usize> = (0..2 * n).collect();
    train(&mut b, TrainData { inputs: &inputs2, labels: &labels2 }, &idx2, &[]).unwrap();

    for (ea, eb) in a.store().entries().iter().zip(b.store().entries()) {
        assert!(max_abs_diff(ea.tensor.data(), eb.tensor.data()) <= 1e-9, "{}", ea.name);
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let mut cfg = small(Variant::Mpnn, 3);
    cfg.train.epochs = 30;
    cfg.train.batch_size = 5;
    cfg.train.schedule.base_lr = 1e-2;
    let run = || {
        let mut m = GnnModel::new(cfg.clone()).unwrap();
        let (inputs, labels) = toy_data(&m);
        let idx: Vec<usize> = (0..inputs.len()).collect();
        let h = train(&mut m, TrainData { inputs: &inputs, labels: &labels }, &idx, &idx[..5]).unwrap();
        (m, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1.store(), m2.store());
    assert!(h1.last().unwrap().train_loss < h1[0].train_loss);
    assert!(h1[0].val_mean_auroc.is_some());
}

#[test]
fn training_errors() {
    let mut m = GnnModel::new(small(Variant::Gcn, 3)).unwrap();
    let (inputs, labels) = toy_data(&m);
    let data = TrainData { inputs: &inputs, labels: &labels };
    assert!(matches!(train(&mut m, data, &[], &[]), Err(GnnError::EmptyTrainSplit)));
    let short: Vec<Vec<u8>> = labels.iter().map(|l| l[..2].to_vec()).collect();
    let bad = TrainData { inputs: &inputs, labels: &short };
    assert!(matches!(train(&mut m, bad, &[0, 1], &[]), Err(GnnError::LabelMismatch { .. })));
    let id = m.store().id_of("output.bias").unwrap();
    m.store_mut().get_mut(id).data_mut()[0] = f64::NAN;
    let idx: Vec<usize> = (0..inputs.len()).collect();
    assert!(matches!(train(&mut m, data, &idx, &[]), Err(GnnError::NonFiniteLoss { .. })));
}

#[test]
fn history_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    let h = vec![
        EpochRecord {
            epoch: 0,
            lr: 1e-3,
            train_loss: 0.7,
            val_loss: Some(0.69),
            val_mean_auroc: None,
        },
        EpochRecord {
            epoch: 1,
            lr: 9e-4,
            train_loss: 0.6,
            val_loss: None,
            val_mean_auroc: Some(0.8),
        },
    ];
    write_history_csv(&path, &h).unwrap();
    assert_eq!(read_history_csv(&path).unwrap(), h);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("epoch,lr,train_loss,val_loss,val_mean_auroc"));
}

