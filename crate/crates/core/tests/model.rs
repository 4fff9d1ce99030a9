use feanet::model::{argmax_labels, BlockA, BlockB, Ctx, Mode, Model, ModelConfig, ParamStore, ResidualBlock, Variant};
use feanet::{ConvSpec, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        num_classes: 4,
        stage_widths: vec![4, 8, 16],
        input_h: 16,
        input_w: 16,
        feam_reduction: 2,
        feam_kernel: 3,
        ..ModelConfig::default()
    }
}

fn inputs(seed: u64, n: usize, h: usize, w: usize) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rgb = Tensor::uniform([n, 3, h, w], 1.0, &mut rng).map(f64::abs);
    let thermal = Tensor::uniform([n, 1, h, w], 1.0, &mut rng).map(f64::abs);
    (rgb, thermal)
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Runs `f` on a fresh graph with the store frozen.
fn eval_with<T>(store: &ParamStore, mode: Mode, f: impl FnOnce(&mut Ctx) -> T) -> T {
    let mut g = Graph::new();
    let vars = store.register_frozen(&mut g);
    let mut ctx = Ctx::new(&mut g, store, &vars, mode);
    f(&mut ctx)
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::build(small_config(), Variant::Frts, 5).unwrap();
    let b = Model::build(small_config(), Variant::Frts, 5).unwrap();
    let c = Model::build(small_config(), Variant::Frts, 6).unwrap();
    let flat = |m: &Model| m.store().iter().flat_map(|(_, t)| bits(t)).collect::<Vec<_>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

fn feam_count(c: usize, r: usize, ks: usize) -> usize {
    let h = c / r;
    h * c + h + c * h + c + 2 * ks * ks + 1
}

/// Shape accounting straight from the block definitions.
fn expected_params(cfg: &ModelConfig) -> usize {
    let w = &cfg.stage_widths;
    let bn = |c: usize| 2 * c;
    let feam = |c: usize| feam_count(c, cfg.feam_reduction, cfg.feam_kernel);
    let encoder = |cin: usize| {
        let mut total = cin * w[0] * 9 + bn(w[0]) + feam(w[0]);
        for i in 1..w.len() {
            let (a, b) = (w[i - 1], w[i]);
            total += a * b * 9 + bn(b) + b * b * 9 + bn(b) + a * b + bn(b) + feam(b);
        }
        total
    };
    let deepest = *w.last().unwrap();
    let mut decoder = 2 * (deepest * deepest * 9 + bn(deepest));
    let mut outs: Vec<usize> = w.iter().rev().skip(1).copied().collect();
    outs.push(cfg.num_classes);
    let mut cin = deepest;
    for cout in outs {
        decoder += cin * cout * 9 + bn(cout) + cout * cout * 4 + cin * cout * 4 + bn(cout);
        cin = cout;
    }
    encoder(3) + encoder(1) + decoder
}

#[test]
fn parameter_count_matches_layer_shapes() {
    for cfg in [ModelConfig::default(), small_config()] {
        let m = Model::build(cfg.clone(), Variant::Frts, 0).unwrap();
        assert_eq!(m.store().scalar_count(), expected_params(&cfg));
    }
}

#[test]
fn default_shapes() {
    let m = Model::build(ModelConfig::default(), Variant::Frts, 0).unwrap();
    let (rgb, thermal) = inputs(1, 1, 64, 64);
    let fused = eval_with(m.store(), Mode::Eval, |ctx| {
        let (r, t) = (ctx.g.constant(rgb.clone()), ctx.g.constant(thermal.clone()));
        let y = m.encode_fuse(ctx, r, t, Variant::Frts.mask()).unwrap();
        ctx.g.shape(y)
    });
    assert_eq!(fused.dims(), [1, 256, 2, 2]);
    assert_eq!(m.infer(&rgb, &thermal).unwrap().shape().dims(), [1, 9, 64, 64]);
}

#[test]
fn rejects_bad_inputs() {
    let m = Model::build(small_config(), Variant::Frts, 0).unwrap();
    let (rgb, thermal) = inputs(1, 1, 16, 16);
    let (_, small_t) = inputs(1, 1, 8, 8);
    assert!(m.infer(&rgb, &small_t).is_err());
    assert!(m.infer(&thermal, &thermal).is_err());
    let (r12, t12) = inputs(1, 1, 12, 12);
    assert!(m.infer(&r12, &t12).is_err());
    let mut bad = small_config();
    bad.input_h = 20;
    assert!(Model::build(bad, Variant::Frts, 0).is_err());
}

fn zero_params(store: &mut ParamStore, keep: impl Fn(&str) -> bool) {
    for (name, t) in store.iter_mut() {
        if !keep(name) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn residual_block_with_zero_weights_is_relu() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = ResidualBlock::new(&mut store, &mut rng, "b", 3, 3, 1);
    assert!(block.projection.is_none());
    zero_params(&mut store, |n| n.ends_with("gamma"));
    let x = Tensor::uniform([2, 3, 4, 4], 1.0, &mut rng);
    let y = eval_with(&store, Mode::Train, |ctx| {
        let xv = ctx.g.constant(x.clone());
        let y = block.forward(ctx, xv).unwrap();
        ctx.g.value(y).clone()
    });
    assert_eq!(bits(&y), bits(&x.map(|v| v.max(0.0))));
}

#[test]
fn residual_stride_two_halves() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = ResidualBlock::new(&mut store, &mut rng, "b", 3, 5, 2);
    let x = Tensor::uniform([1, 3, 8, 6], 1.0, &mut rng);
    let shape = eval_with(&store, Mode::Eval, |ctx| {
        let xv = ctx.g.constant(x);
        let y = block.forward(ctx, xv).unwrap();
        ctx.g.shape(y)
    });
    assert_eq!(shape.dims(), [1, 5, 4, 3]);
}

#[test]
fn block_a_with_zero_weights_is_identity() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let block = BlockA::new(&mut store, &mut rng, "a", 4);
    zero_params(&mut store, |n| n.ends_with("gamma"));
    let x = Tensor::uniform([2, 4, 3, 3], 1.0, &mut rng);
    let y = eval_with(&store, Mode::Train, |ctx| {
        let xv = ctx.g.constant(x.clone());
        let y = block.forward(ctx, xv).unwrap();
        ctx.g.value(y).clone()
    });
    assert_eq!(bits(&y), bits(&x));
}

fn conv(g: &mut Graph, store: &ParamStore, name: &str, x: Var, spec: ConvSpec, transposed: bool) -> Var {
    let w = g.constant(store.get(&format!("{name}.weight")).unwrap().clone());
    if transposed {
        g.conv_transpose2d(x, w, None, spec).unwrap()
    } else {
        g.conv2d(x, w, None, spec).unwrap()
    }
}

fn bn(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Var {
    let gamma = g.constant(store.get(&format!("{name}.gamma")).unwrap().clone());
    let beta = g.constant(store.get(&format!("{name}.beta")).unwrap().clone());
    g.batch_norm_train(x, gamma, beta, 1e-5).unwrap().0
}

/// Main path 3x3 conv, BN, ReLU, 2x2 up; branch 2x2 up; sum, BN, ReLU.
fn block_b_oracle(store: &ParamStore, x: &Tensor, cin: usize, cout: usize) -> Tensor {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let m = conv(&mut g, store, "b.conv1.conv", xv, ConvSpec::new(cin, cout, 3).padding(1), false);
    let m = bn(&mut g, store, "b.conv1.bn", m);
    let m = g.relu(m);
    let m = conv(&mut g, store, "b.trans1", m, ConvSpec::new(cout, cout, 2).stride(2), true);
    let b = conv(&mut g, store, "b.trans2", xv, ConvSpec::new(cin, cout, 2).stride(2), true);
    let s = g.add(m, b).unwrap();
    let s = bn(&mut g, store, "b.bn", s);
    let y = g.relu(s);
    g.value(y).clone()
}

#[test]
fn block_b_matches_two_path_composition() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let block = BlockB::halving(&mut store, &mut rng, "b", 8).unwrap();
    for (name, t) in store.iter_mut() {
        if name.ends_with("gamma") || name.ends_with("beta") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        }
    }
    let x = Tensor::uniform([1, 8, 4, 4], 1.0, &mut rng);
    let y = eval_with(&store, Mode::Train, |ctx| {
        let xv = ctx.g.constant(x.clone());
        let y = block.forward(ctx, xv).unwrap();
        ctx.g.value(y).clone()
    });
    assert_eq!(y.shape().dims(), [1, 4, 8, 8]);
    assert_eq!(bits(&y), bits(&block_b_oracle(&store, &x, 8, 4)));
    assert!(BlockB::halving(&mut store, &mut rng, "odd", 5).is_err());
}

#[test]
fn block_b_with_zero_main_path_is_branch_only() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let block = BlockB::halving(&mut store, &mut rng, "b", 4).unwrap();
    zero_params(&mut store, |n| !(n.starts_with("b.conv1.conv") || n.starts_with("b.trans1")));
    let x = Tensor::uniform([2, 4, 3, 3], 1.0, &mut rng);
    let y = eval_with(&store, Mode::Train, |ctx| {
        let xv = ctx.g.constant(x.clone());
        let y = block.forward(ctx, xv).unwrap();
        ctx.g.value(y).clone()
    });
    let mut g = Graph::new();
    let xv = g.constant(x);
    let b = conv(&mut g, &store, "b.trans2", xv, ConvSpec::new(4, 2, 2).stride(2), true);
    let s = bn(&mut g, &store, "b.bn", b);
    let want = g.relu(s);
    assert_eq!(bits(&y), bits(g.value(want)));
}

/// With a silent thermal stream and zero-initialized attention, fusion
/// reduces to the RGB backbone with every attention module scaling by 1/4.
#[test]
fn fusion_with_silent_thermal_stream() {
    let mut m = Model::build(small_config(), Variant::Frts, 4).unwrap();
    zero_params(m.store_mut(), |n| !(n.starts_with("thermal") || n.contains("feam")));
    let (rgb, thermal) = inputs(9, 2, 16, 16);
    let (fused, oracle) = eval_with(m.store(), Mode::Eval, |ctx| {
        let (r, t) = (ctx.g.constant(rgb.clone()), ctx.g.constant(thermal.clone()));
        let fused = m.encode_fuse(ctx, r, t, Variant::Frts.mask()).unwrap();
        let mut x = r;
        for i in 0..3 {
            x = m.rgb.block(ctx, i, x).unwrap();
            x = ctx.g.scale(x, 0.25);
        }
        (ctx.g.value(fused).clone(), ctx.g.value(x).clone())
    });
    assert!(oracle.data().iter().any(|&v| v != 0.0));
    assert_eq!(bits(&fused), bits(&oracle));
}

#[test]
fn eval_mode_is_batch_permutation_equivariant() {
    let m = Model::build(small_config(), Variant::Frts, 3).unwrap();
    let (rgb, thermal) = inputs(4, 3, 16, 16);
    let y = m.infer(&rgb, &thermal).unwrap();
    let order = [2usize, 0, 1];
    let permute = |t: &Tensor| {
        let items: Vec<Tensor> = order.iter().map(|&i| Tensor::from_vec([1, t.shape().c, 16, 16], t.item(i).to_vec()).unwrap()).collect();
        Tensor::stack(&items.iter().collect::<Vec<_>>()).unwrap()
    };
    let yp = m.infer(&permute(&rgb), &permute(&thermal)).unwrap();
    assert_eq!(bits(&yp), bits(&permute(&y)));
}

#[test]
fn swapping_modalities_changes_output() {
    let m = Model::build(small_config(), Variant::Frts, 3).unwrap();
    let (rgb, thermal) = inputs(5, 1, 16, 16);
    let gray = Tensor::from_vec([1, 1, 16, 16], rgb.data()[..256].to_vec()).unwrap();
    let as_rgb = |t: &Tensor| Tensor::from_vec([1, 3, 16, 16], t.data().repeat(3)).unwrap();
    let a = m.infer(&as_rgb(&gray), &thermal).unwrap();
    let b = m.infer(&as_rgb(&thermal), &gray).unwrap();
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn attention_changes_output() {
    let frts = Model::build(small_config(), Variant::Frts, 3).unwrap();
    let mut nfrts = frts.clone();
    nfrts.set_variant(Variant::Nfrts);
    let (rgb, thermal) = inputs(6, 2, 16, 16);
    let a = frts.infer(&rgb, &thermal).unwrap();
    let b = nfrts.infer(&rgb, &thermal).unwrap();
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn argmax_matches_brute_force_and_breaks_ties_low() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = Tensor::uniform([2, 5, 3, 4], 2.0, &mut rng);
    let maps = argmax_labels(&logits);
    for n in 0..2 {
        for y in 0..3 {
            for x in 0..4 {
                let mut best = 0;
                for c in 1..5 {
                    if logits.at(n, c, y, x) > logits.at(n, best, y, x) {
                        best = c;
                    }
                }
                assert_eq!(maps[n].get(y, x) as usize, best);
            }
        }
    }
    let tie = Tensor::from_vec([1, 3, 1, 1], vec![0.2, 0.7, 0.7]).unwrap();
    assert_eq!(argmax_labels(&tie)[0].get(0, 0), 1);
    let dominant = Tensor::from_vec([1, 4, 1, 2], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 9.0, 9.0]).unwrap();
    assert_eq!(argmax_labels(&dominant)[0].as_slice(), &[3, 3]);
}

#[test]
fn argmax_ignores_per_pixel_offsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = Tensor::uniform([1, 4, 5, 5], 3.0, &mut rng);
    let offsets: Vec<f64> = (0..25).map(|_| rng.random_range(-100.0..100.0)).collect();
    let mut shifted = logits.clone();
    for (i, v) in shifted.data_mut().iter_mut().enumerate() {
        *v += offsets[i % 25];
    }
    assert_eq!(argmax_labels(&logits), argmax_labels(&shifted));
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fean");
    let m = Model::build(small_config(), Variant::Nfts, 11).unwrap();
    m.save(&path).unwrap();
    let back = Model::load(small_config(), Variant::Nfts, &path).unwrap();
    let (rgb, thermal) = inputs(12, 1, 16, 16);
    assert_eq!(bits(&m.infer(&rgb, &thermal).unwrap()), bits(&back.infer(&rgb, &thermal).unwrap()));
    let mut other = small_config();
    other.stage_widths = vec![4, 8];
    assert!(Model::load(other, Variant::Nfts, &path).is_err());
}
