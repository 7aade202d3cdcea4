use mfsurrogate::bench::{
    gen_linear_pair, gen_nonlinear_pair, BaseField, LinearPairSpec, NonlinearPairSpec,
};
use mfsurrogate::diffmath::{
    init_params, mlp_batch_forward, mlp_forward, Activation, MlpParams, MlpSpec,
};
use mfsurrogate::gridalign::{build_index, interpolate, InterpMethod, Neighbor};
use mfsurrogate::mpinn::{Network, OutputScale};
use mfsurrogate::train::{total_loss, Adam, TrainConfig};
use mfsurrogate::{
    CompositionMode, FidelityPair, FieldDataset, MpinnConfig, MpinnModel, Node, NormalizationMeta,
};
use proptest::prelude::*;

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Relu),
        Just(Activation::Tanh),
        Just(Activation::Identity)
    ]
}

fn small_spec(input_dim: usize) -> impl Strategy<Value = MlpSpec> {
    (prop::collection::vec(1usize..6, 0..3), activation())
        .prop_map(move |(h, a)| MlpSpec::new(input_dim, h, 1, a).unwrap())
}

fn norm() -> impl Strategy<Value = NormalizationMeta> {
    (
        -5.0..5.0f64,
        -5.0..5.0f64,
        0.1..3.0f64,
        0.1..3.0f64,
        -100.0..100.0f64,
        0.1..50.0f64,
    )
        .prop_map(|(mx, my, sx, sy, mo, so)| NormalizationMeta {
            input_mean: [mx, my],
            input_std: [sx, sy],
            output_mean: mo,
            output_std: so,
        })
}

fn model() -> impl Strategy<Value = MpinnModel> {
    (
        small_spec(2),
        small_spec(3),
        any::<u64>(),
        norm(),
        -3.0..3.0f64,
        -10.0..10.0f64,
        0.2..4.0f64,
        prop_oneof![
            Just(CompositionMode::ConvexBlend),
            Just(CompositionMode::Additive)
        ],
    )
        .prop_map(|(nnl, nnh2, seed, n, raw, hm, hs, mode)| {
            let cfg = MpinnConfig {
                nnl,
                nnh2,
                composition_mode: mode,
                ..MpinnConfig::default()
            };
            MpinnModel::init(cfg, n, seed)
                .unwrap()
                .with_raw_alpha(raw)
                .unwrap()
                .with_hf_scale(OutputScale { mean: hm, std: hs })
                .unwrap()
        })
}

fn node() -> impl Strategy<Value = Node> {
    (-10.0..10.0f64, -10.0..10.0f64).prop_map(|(a, b)| [a, b])
}

fn unique_nodes(max: usize) -> impl Strategy<Value = Vec<Node>> {
    prop::collection::vec((0u32..2000, 0u32..2000), 1..max).prop_map(|pts| {
        let mut seen = std::collections::BTreeSet::new();
        pts.into_iter()
            .filter(|p| seen.insert(*p))
            .map(|(a, b)| [a as f64 * 0.01, b as f64 * 0.01])
            .collect()
    })
}

fn brute_force(nodes: &[Node], q: &Node, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = nodes
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            Neighbor {
                index,
                dist_sq: dx * dx + dy * dy,
            }
        })
        .collect();
    all.sort_by(|a, b| a.dist_sq.total_cmp(&b.dist_sq).then(a.index.cmp(&b.index)));
    all.truncate(k);
    all
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_net_is_affine(seed in any::<u64>(), x1 in prop::array::uniform3(-5.0..5.0f64),
                            x2 in prop::array::uniform3(-5.0..5.0f64), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let spec = MlpSpec::new(3, vec![], 1, Activation::Identity).unwrap();
        let p = init_params(&spec, seed);
        let mut v = p.clone().into_vec();
        v[3] = 0.7;
        let p = MlpParams::from_vec(&spec, v).unwrap();
        let f = |x: &[f64]| mlp_forward(&spec, &p, x).unwrap()[0];
        let mix: Vec<f64> = (0..3).map(|i| a * x1[i] + b * x2[i]).collect();
        let want = a * f(&x1) + b * f(&x2) - (a + b - 1.0) * 0.7;
        prop_assert!((f(&mix) - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn batch_equals_rowwise(spec in small_spec(2), seed in any::<u64>(),
                            rows in prop::collection::vec(prop::array::uniform2(-4.0..4.0f64), 0..20)) {
        let p = init_params(&spec, seed);
        let batch = mlp_batch_forward(&spec, &p, &rows).unwrap();
        prop_assert_eq!(batch.len(), rows.len());
        for (r, out) in rows.iter().zip(&batch) {
            prop_assert_eq!(out, &mlp_forward(&spec, &p, r).unwrap());
        }
    }

    #[test]
    fn blend_limits_select_a_branch(m in model(), x in node()) {
        prop_assume!(m.config().composition_mode == CompositionMode::ConvexBlend);
        let b = m.branches_normalized(&m.normalization().normalize_node(&x)).unwrap();
        let s = m.hf_scale();
        for (raw, branch) in [(40.0, b.linear), (-40.0, b.nonlinear)] {
            let want = s.denormalize(branch);
            let got = m.clone().with_raw_alpha(raw).unwrap().compose_high(&x).unwrap();
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-300) || (got - want).abs() < 1e-12,
                "{} vs {}", got, want);
        }
    }

    #[test]
    fn additive_zero_corrections_reduce_to_low(m in model(), x in node()) {
        let cfg = MpinnConfig { composition_mode: CompositionMode::Additive, ..m.config().clone() };
        let n = NormalizationMeta::identity();
        let z = MpinnModel::from_parts(
            cfg.clone(),
            m.params(Network::Low).clone(),
            MlpParams::zeros(&cfg.nnh1),
            MlpParams::zeros(&cfg.nnh2),
            m.raw_alpha(),
            n,
            OutputScale::of(&n),
        ).unwrap();
        prop_assert_eq!(z.compose_high(&x).unwrap(), z.predict_low(&x).unwrap());
    }

    #[test]
    fn predict_field_is_permutation_equivariant(m in model(), nodes in unique_nodes(30), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..nodes.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let f = m.predict_field(&nodes).unwrap();
        let permuted: Vec<Node> = perm.iter().map(|&i| nodes[i]).collect();
        let g = m.predict_field(&permuted).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(g.values()[k].to_bits(), f.values()[i].to_bits());
        }
    }

    #[test]
    fn model_json_roundtrip_is_exact(m in model()) {
        let back = MpinnModel::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), m.to_json());
        prop_assert_eq!(back, m);
    }

    #[test]
    fn index_matches_brute_force(nodes in unique_nodes(400), qs in prop::collection::vec((-1.0..21.0f64, -1.0..21.0f64), 1..10), k in 1usize..6) {
        let idx = build_index(&nodes).unwrap();
        for (a, b) in qs {
            let q = [a, b];
            prop_assert_eq!(idx.k_nearest(&q, k), brute_force(&nodes, &q, k));
        }
    }

    #[test]
    fn idw_stays_within_neighbor_range(nodes in unique_nodes(200), seed in any::<u64>(),
                                       targets in prop::collection::vec((-1.0..21.0f64, -1.0..21.0f64), 1..20),
                                       power in 0.5..4.0f64, k in 1usize..10) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = nodes.iter().map(|_| rng.gen_range(-1e3..1e3)).collect();
        let k = k.min(nodes.len());
        let src = FieldDataset::new("s", nodes.clone(), values.clone()).unwrap();
        let targets: Vec<Node> = targets.into_iter().map(|(a, b)| [a, b]).collect();
        let got = interpolate(&src, &targets, InterpMethod::Idw { power, k }).unwrap();
        let idx = build_index(&nodes).unwrap();
        for (t, v) in targets.iter().zip(&got) {
            let used = idx.k_nearest(t, k);
            let lo = used.iter().map(|n| values[n.index]).fold(f64::INFINITY, f64::min);
            let hi = used.iter().map(|n| values[n.index]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= *v && *v <= hi);
        }
        // coincident targets reproduce the source exactly, for both methods
        for method in [InterpMethod::Nearest, InterpMethod::Idw { power, k }] {
            prop_assert_eq!(interpolate(&src, &nodes, method).unwrap(), values.clone());
        }
    }

    #[test]
    fn lambda_never_shrinks_the_penalty(m in model(), l1 in 0.0..5.0f64, dl in 0.0..5.0f64) {
        let nodes: Vec<Node> = (0..6).map(|i| [i as f64, (i * i) as f64 * 0.3]).collect();
        let lf = FieldDataset::new("lf", nodes.clone(), nodes.iter().map(|x| x[0] - x[1]).collect()).unwrap();
        let hf = lf.with_values("hf", nodes.iter().map(|x| 2.0 * x[0] + x[1]).collect()).unwrap();
        let pair = FidelityPair::new(lf, hf).unwrap();
        let cfg = |l: f64| TrainConfig { lambda_l2: l, ..TrainConfig::default() };
        let mode = m.config().composition_mode;
        let a = total_loss(&m, &pair, &TrainConfig { composition_mode: Some(mode), ..cfg(l1) }).unwrap();
        let b = total_loss(&m, &pair, &cfg(l1 + dl)).unwrap();
        prop_assert!(b.l2 >= a.l2);
        prop_assert_eq!(a.lf_mse, b.lf_mse);
        prop_assert_eq!(a.hf_mse, b.hf_mse);
    }

    #[test]
    fn adam_first_step_on_quadratic(theta in -10.0..10.0f64, c in -10.0..10.0f64, lr in 1e-6..1.0f64) {
        // f = (theta - c)^2, g = 2 (theta - c); first bias-corrected step is lr * g / (|g| + eps)
        let g = 2.0 * (theta - c);
        let mut p = [theta];
        Adam::new(1, lr).step(&mut p, &[g], None);
        let want = theta - lr * g / (g.abs() + Adam::EPS);
        prop_assert!((p[0] - want).abs() <= 1e-12);
    }

    #[test]
    fn linear_generator_is_exact(rho in -5.0..5.0f64, delta in prop::array::uniform3(-5.0..5.0f64),
                                 seed in any::<u64>(), poly in any::<bool>()) {
        let spec = LinearPairSpec {
            rho, delta,
            base_field: if poly { BaseField::Polynomial } else { BaseField::Sinusoidal },
            n_lf: 50, n_test: 10, seed,
        };
        let (pair, truth) = gen_linear_pair(&spec).unwrap();
        for ((x, l), h) in pair.lf.nodes().iter().zip(pair.lf.values()).zip(pair.hf_on_lf_nodes.values()) {
            let want = rho * l + delta[0] + delta[1] * x[0] + delta[2] * x[1];
            prop_assert!((h - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
        for (x, h) in truth.nodes().iter().zip(truth.values()) {
            prop_assert!((h - spec.hf(x)).abs() == 0.0);
        }
        prop_assert_eq!(gen_linear_pair(&spec).unwrap(), (pair, truth));
    }

    #[test]
    fn nonlinear_generator_is_seeded(seed in any::<u64>()) {
        let spec = NonlinearPairSpec { n_lf: 30, n_test: 5, seed, degenerate: false };
        prop_assert_eq!(gen_nonlinear_pair(&spec).unwrap(), gen_nonlinear_pair(&spec).unwrap());
    }
}
