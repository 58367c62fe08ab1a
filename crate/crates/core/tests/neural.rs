use adaptnet::neural::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Compare tape gradients of a scalar program against central differences.
/// Returns the worst error relative to `max(1, |grad|)`.
fn fd_check(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&mut g, &vs);
        g.value(y).item()
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let y = f(&mut g, &vs);
    let grads = g.grad(y, &vs).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads[i].map(|v| g.value(v).clone()).unwrap_or_else(|| Tensor::zeros(t.shape()));
        for k in 0..t.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[k] += h;
            let up = eval(&xs);
            xs[i].data_mut()[k] -= 2.0 * h;
            let down = eval(&xs);
            let num = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            worst = worst.max((a - num).abs() / a.abs().max(1.0));
        }
    }
    worst
}

/// Same check over every entry of a parameter tree.
fn fd_tree(tree: &ParamTree, f: &dyn Fn(&mut Graph, &Bound) -> Var) -> f64 {
    let eval = |t: &ParamTree| {
        let mut g = Graph::new();
        let b = t.bind_constant(&mut g);
        let y = f(&mut g, &b);
        g.value(y).item()
    };
    let names: Vec<String> = tree.names().cloned().collect();
    let mut g = Graph::new();
    let b = tree.bind(&mut g);
    let vars: Vec<Var> = names.iter().map(|n| b.get(n).unwrap()).collect();
    let y = f(&mut g, &b);
    let grads = g.grad(y, &vars).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, n) in names.iter().enumerate() {
        let t = tree.get(n).unwrap();
        let analytic = grads[i].map(|v| g.value(v).clone()).unwrap_or_else(|| Tensor::zeros(t.shape()));
        for k in 0..t.len() {
            let mut p = tree.clone();
            p.get_mut(n).unwrap().data_mut()[k] += h;
            let up = eval(&p);
            p.get_mut(n).unwrap().data_mut()[k] -= 2.0 * h;
            let down = eval(&p);
            let num = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            worst = worst.max((a - num).abs() / a.abs().max(1.0));
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| scale * rng.random_range(-1.0..1.0)).collect())
}

/// A random composition of smooth ops over a `[3,4]` input and a `[4,5]` weight.
fn program(ops: &[u8]) -> impl Fn(&mut Graph, &[Var]) -> Var + '_ {
    move |g: &mut Graph, v: &[Var]| {
        let (x, w, row) = (v[0], v[1], v[2]);
        let mut z = g.matmul(x, w).unwrap(); // [3,5]
        for &op in ops {
            z = match op % 12 {
                0 => g.tanh(z),
                1 => g.sigmoid(z),
                2 => {
                    let s = g.scale(z, 0.3);
                    g.exp(s)
                }
                3 => g.add_row(z, row).unwrap(),
                4 => g.mul_row(z, row).unwrap(),
                5 => g.mul(z, z).unwrap(),
                6 => {
                    let a = g.slice(z, 0, 2).unwrap();
                    let b = g.slice(z, 2, 3).unwrap();
                    g.concat(&[b, a]).unwrap()
                }
                7 => {
                    let r = g.reshape(z, 5, 3).unwrap();
                    let t = g.sigmoid(r);
                    g.reshape(t, 3, 5).unwrap()
                }
                8 => {
                    let s = g.sum_rows(z);
                    let b = g.broadcast_rows(s, 3).unwrap();
                    let b = g.scale(b, 0.2);
                    g.sub(z, b).unwrap()
                }
                9 => {
                    let s = g.sum_cols(z);
                    let s = g.scale(s, 0.1);
                    let b = g.broadcast_cols(s, 5).unwrap();
                    g.add(z, b).unwrap()
                }
                10 => {
                    // log of a strictly positive quantity
                    let sq = g.mul(z, z).unwrap();
                    let p = g.add_scalar(sq, 1.0);
                    g.log(p)
                }
                _ => {
                    let n = g.row_norm(z);
                    let n = g.add_scalar(n, 0.5);
                    let b = g.broadcast_cols(n, 5).unwrap();
                    g.mul(z, b).unwrap()
                }
            };
        }
        let zt = g.matmul_t(z, w, false, true).unwrap(); // [3,4]
        let m = g.mean_all(zt);
        let s = g.sum_all(z);
        let s = g.scale(s, 0.1);
        g.add(m, s).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn composed_ops_match_finite_differences(
        seed in 0u64..10_000,
        ops in proptest::collection::vec(0u8..12, 1..5),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [rand_tensor(&mut rng, 3, 4, 1.0), rand_tensor(&mut rng, 4, 5, 0.5), rand_tensor(&mut rng, 1, 5, 1.0)];
        let err = fd_check(&inputs, &program(&ops));
        prop_assert!(err < 1e-6, "ops {:?}: {}", ops, err);
    }
}

fn gru_params(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> ParamTree {
    let mut t = ParamTree::new();
    t.insert("gru.w_ih", rand_tensor(rng, input, 3 * hidden, 0.5));
    t.insert("gru.w_hh", rand_tensor(rng, hidden, 3 * hidden, 0.5));
    t.insert("gru.b_ih", rand_tensor(rng, 1, 3 * hidden, 0.2));
    t.insert("gru.b_hh", rand_tensor(rng, 1, 3 * hidden, 0.2));
    t
}

#[test]
fn gru_sequence_gradients() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tree = gru_params(&mut rng, 3, 4);
        tree.insert("h0", rand_tensor(&mut rng, 2, 4, 0.8));
        // three frames of width 3
        tree.insert("x", rand_tensor(&mut rng, 2, 9, 1.0));
        let f = |g: &mut Graph, b: &Bound| {
            let mut h = b.get("h0").unwrap();
            let xs = b.get("x").unwrap();
            for k in 0..3 {
                let x = g.slice(xs, 3 * k, 3).unwrap();
                h = gru_step(g, b, "gru", h, x).unwrap();
            }
            let sq = g.mul(h, h).unwrap();
            let s = g.sum_all(sq);
            let l = g.sum_all(h);
            g.add(s, l).unwrap()
        };
        let err = fd_tree(&tree, &f);
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn gaussian_logprob_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [rand_tensor(&mut rng, 4, 3, 1.0), rand_tensor(&mut rng, 1, 3, 0.5), rand_tensor(&mut rng, 4, 3, 1.5)];
    let f = |g: &mut Graph, v: &[Var]| {
        let lp = gaussian_logprob(g, v[0], v[1], v[2]).unwrap();
        g.mean_all(lp)
    };
    assert!(fd_check(&inputs, &f) < 1e-6);
}

#[test]
fn terrain_encoder_gradients() {
    let dims = TerrainEncoderDims::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tree = ParamTree::new();
    init_terrain_encoder(&mut tree, "t.", &dims, &mut rng);
    tree.insert("window", rand_tensor(&mut rng, 2, dims.window, 1.0));
    // ReLU kinks: a fixed seed whose units all sit well away from zero
    let f = |g: &mut Graph, b: &Bound| {
        let w = b.get("window").unwrap();
        let y = terrain_encoder_forward(g, b, "t.", &dims, w).unwrap();
        let sq = g.mul(y, y).unwrap();
        g.sum_all(sq)
    };
    let err = fd_tree(&tree, &f);
    assert!(err < 1e-6, "{err}");
}

/// Gradient-penalty style loss `mean ‖∇ₓ D(x)‖²` differentiated again with
/// respect to the discriminator parameters.
#[test]
fn double_backprop_through_input_gradient() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let disc = DiscriminatorEnsemble::new(
            5,
            DiscConfig {
                hidden: vec![6, 4],
                heads: 2,
                activation: Activation::Tanh,
            },
            &mut rng,
        );
        let x = rand_tensor(&mut rng, 3, 5, 1.0);
        let f = |g: &mut Graph, b: &Bound| {
            let xv = g.variable(x.clone());
            let mut total = None;
            for head in 0..2 {
                let gx = input_gradient(&disc, g, b, head, xv).unwrap();
                let sq = g.mul(gx, gx).unwrap();
                let m = g.mean_all(sq);
                total = Some(match total {
                    None => m,
                    Some(t) => g.add(t, m).unwrap(),
                });
            }
            total.unwrap()
        };
        let err = fd_tree(&disc.params, &f);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn adam_minimizes_quadratic() {
    let mut tree = ParamTree::new();
    tree.insert("x", Tensor::row(vec![3.0, -2.0]));
    let mut opt = Adam::new(AdamConfig {
        lr: 0.1,
        ..Default::default()
    });
    for _ in 0..500 {
        let mut g = Graph::new();
        let b = tree.bind(&mut g);
        let x = b.get("x").unwrap();
        let sq = g.mul(x, x).unwrap();
        let y = g.sum_all(sq);
        let gr = g.grad(y, &[x]).unwrap()[0].unwrap();
        let grads = [("x".to_string(), g.value(gr).clone())].into_iter().collect();
        opt.step(&mut tree, &grads);
    }
    assert!(tree.get("x").unwrap().max_abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trip(seed in 0u64..1000, n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tree = ParamTree::new();
        for i in 0..n {
            let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
            // values exactly representable in 32 bits survive unchanged
            let t = rand_tensor(&mut rng, r, c, 1.0).map(|v| v as f32 as f64);
            tree.insert(format!("p{i}"), t);
        }
        tree.freeze("p0");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&tree, &serde_json::json!({"seed": seed}), &path).unwrap();
        let ck = read_checkpoint(&path).unwrap();
        prop_assert_eq!(ck.params.content_hash(), tree.content_hash());
        prop_assert!(ck.params.is_frozen("p0"));
        prop_assert_eq!(ck.manifest["seed"].as_u64(), Some(seed));
    }
}
