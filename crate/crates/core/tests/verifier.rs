mod common;

use common::{fixture, phase_enumeration_margin, random_image, random_mlp, unstable_count};
use deformcert::relaxation::{BoundingPlanes, InputRelaxation};
use deformcert::verifier::{
    analyze, certify_image, deeppoly, verify, CertStatus, CertificationReport, CertifyOptions, DeepPolyOptions,
    LayerSpec, Method, Network, NetworkSpec, PlaneSource, VerifyOptions,
};
use deformcert::{bounds_map, AttackBudget, Error, Norm, VectorField};
use deformcert::imaging::load_tensor_json;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_relaxation(gamma: Option<f64>) -> InputRelaxation {
    let text = std::fs::read_to_string(fixture("toy_relaxation.json")).unwrap();
    let mut r: InputRelaxation = serde_json::from_str(&text).unwrap();
    match gamma {
        Some(g) => r.spatial.as_mut().unwrap().gamma = g,
        None => r.spatial = None,
    }
    r
}

fn margin_of(net: &Network, relaxation: &InputRelaxation, method: Method) -> f64 {
    let opts = VerifyOptions {
        method,
        ..VerifyOptions::default()
    };
    verify(net, relaxation, 1, &[0], &opts, |_| false).unwrap().margins[&0]
}

#[test]
fn toy_forward_and_intervals() {
    let net = Network::load(fixture("toy_network.json")).unwrap();
    assert_eq!(net.forward(&[0.0, 0.5]).unwrap(), vec![0.0, 0.625]);
    let b = net.interval_bounds(&[0.0, 0.25], &[0.25, 0.75]).unwrap();
    let want = [
        (1, [(-0.5, 0.5), (0.125, 0.875)]),
        (2, [(0.0, 0.5), (0.125, 0.875)]),
        (3, [(-1.0, 0.0), (-0.375, 0.875)]),
    ];
    for (node, pairs) in want {
        for (r, (l, u)) in pairs.into_iter().enumerate() {
            assert!((b[node].0[r] - l).abs() <= 1e-9 && (b[node].1[r] - u).abs() <= 1e-9, "node {node} row {r}");
        }
    }
}

#[test]
fn toy_relu_relaxation_matches_worked_example() {
    let net = Network::load(fixture("toy_network.json")).unwrap();
    let an = analyze(&net, &toy_relaxation(None), DeepPolyOptions::default()).unwrap();
    let x4 = an.relus[2][0];
    assert_eq!((x4.lambda, x4.slope, x4.intercept), (0.0, 0.5, 0.25));
    // x5 is stable (l3 = 0.125 > 0): identity.
    assert_eq!((an.relus[2][1].lambda, an.relus[2][1].slope), (1.0, 1.0));
}

#[test]
fn toy_backsubstitution_margins() {
    let net = Network::load(fixture("toy_network.json")).unwrap();
    assert!((margin_of(&net, &toy_relaxation(None), Method::DeepPoly) - 0.125).abs() <= 1e-9);
    assert!(margin_of(&net, &toy_relaxation(None), Method::Interval) < 0.0);

    let modified = Network::load(fixture("toy_network_modified.json")).unwrap();
    let no_flow = toy_relaxation(Some(f64::INFINITY));
    assert!((margin_of(&modified, &no_flow, Method::DeepPoly) + 0.125).abs() <= 1e-9);
    let flow = toy_relaxation(Some(0.25));
    assert!((margin_of(&modified, &flow, Method::DeepPoly) - 0.0625).abs() <= 1e-9);
}

#[test]
fn toy_milp_matches_phase_enumeration() {
    for (name, gamma) in [
        ("toy_network.json", None),
        ("toy_network_modified.json", None),
        ("toy_network_modified.json", Some(f64::INFINITY)),
        ("toy_network_modified.json", Some(0.25)),
    ] {
        let net = Network::load(fixture(name)).unwrap();
        let r = toy_relaxation(gamma);
        let milp = margin_of(&net, &r, Method::Milp);
        let exact = phase_enumeration_margin(net.spec(), &r, 1, 0);
        assert!((milp - exact).abs() <= 1e-7, "{name} {gamma:?}: {milp} vs {exact}");
        assert!(milp >= margin_of(&net, &r, Method::DeepPoly) - 1e-9);
    }
    let modified = Network::load(fixture("toy_network_modified.json")).unwrap();
    assert!(margin_of(&modified, &toy_relaxation(Some(0.25)), Method::Milp) >= 0.0625 - 1e-9);
}

#[test]
fn toy_image_certification() {
    let image = load_tensor_json(fixture("toy_image.json")).unwrap();
    let net = Network::load(fixture("toy_network16_modified.json")).unwrap();
    let planes = BoundingPlanes::load(fixture("toy_planes.json")).unwrap();
    let bounds = bounds_map(&image, &AttackBudget::unconstrained(Norm::Linf, 0.5).unwrap());
    assert_eq!(bounds.get(2, 2, 0), (0.0, 0.25));
    assert_eq!(bounds.get(3, 2, 0), (0.25, 0.75));

    let budget = AttackBudget::new(Norm::Linf, 0.5, 0.25).unwrap();
    for method in [Method::DeepPoly, Method::Milp] {
        let opts = CertifyOptions {
            verify: VerifyOptions {
                method,
                ..VerifyOptions::default()
            },
            planes: PlaneSource::Given(&planes),
            ..CertifyOptions::default()
        };
        let report = certify_image(&net, &image, "toy", &budget, &opts).unwrap();
        assert_eq!(report.status, CertStatus::Certified, "{method}");
        assert_eq!(report.method, format!("{method}+flow"));
        assert!(report.margins[&0] >= 0.0625 - 1e-9);
        // Fitted planes are at least as tight on the referenced pixels.
        let fitted = certify_image(
            &net,
            &image,
            "toy",
            &budget,
            &CertifyOptions {
                planes: PlaneSource::Fit,
                ..opts.clone()
            },
        )
        .unwrap();
        assert_eq!(fitted.status, CertStatus::Certified);
    }
    let interval = certify_image(
        &net,
        &image,
        "toy",
        &budget,
        &CertifyOptions {
            verify: VerifyOptions {
                method: Method::Interval,
                ..VerifyOptions::default()
            },
            ..CertifyOptions::default()
        },
    )
    .unwrap();
    assert_ne!(interval.status, CertStatus::Certified);
}

#[test]
fn flow_without_planes_is_a_contract_error() {
    let image = load_tensor_json(fixture("toy_image.json")).unwrap();
    let net = Network::load(fixture("toy_network16.json")).unwrap();
    let budget = AttackBudget::new(Norm::Linf, 0.5, 0.25).unwrap();
    let opts = CertifyOptions {
        planes: PlaneSource::None,
        ..CertifyOptions::default()
    };
    assert!(matches!(certify_image(&net, &image, "toy", &budget, &opts), Err(Error::Contract(_))));
}

#[test]
fn zero_delta_certifies_the_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Network::from_spec(random_mlp(&mut rng, 16, &[8], 3)).unwrap();
    let image = random_image(&mut rng, 4);
    let budget = AttackBudget::unconstrained(Norm::L2, 0.0).unwrap();
    for method in [Method::Interval, Method::DeepPoly, Method::Milp] {
        let opts = CertifyOptions {
            verify: VerifyOptions {
                method,
                ..VerifyOptions::default()
            },
            ..CertifyOptions::default()
        };
        let r = certify_image(&net, &image, "x", &budget, &opts).unwrap();
        assert_eq!(r.status, CertStatus::Certified, "{method}");
        let wrong = CertifyOptions {
            label: Some((r.predicted + 1) % 3),
            ..opts
        };
        let r = certify_image(&net, &image, "x", &budget, &wrong).unwrap();
        assert_eq!(r.status, CertStatus::Unknown);
        assert!(!r.notes.is_empty());
    }
}

#[test]
fn report_json_round_trip() {
    let image = load_tensor_json(fixture("toy_image.json")).unwrap();
    let net = Network::load(fixture("toy_network16.json")).unwrap();
    let budget = AttackBudget::unconstrained(Norm::Linf, 0.5).unwrap();
    let r = certify_image(&net, &image, "toy-0", &budget, &CertifyOptions::default()).unwrap();
    let text = serde_json::to_string(&r).unwrap();
    assert!(text.contains("\"gamma\":\"inf\""), "{text}");
    assert!(text.contains("\"norm\":\"inf\""), "{text}");
    let back: CertificationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
}

#[test]
fn naive_forward_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let spec = random_mlp(&mut rng, 12, &[9, 7], 4);
        let net = Network::from_spec(spec.clone()).unwrap();
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cur = x.clone();
        for layer in &spec.layers {
            cur = match layer {
                LayerSpec::Dense { weights, bias } => weights
                    .iter()
                    .zip(bias)
                    .map(|(row, b)| {
                        let mut s = *b;
                        for (w, v) in row.iter().zip(&cur) {
                            s += w * v;
                        }
                        s
                    })
                    .collect(),
                LayerSpec::Relu => cur.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect(),
                _ => unreachable!(),
            };
        }
        let got = net.forward(&x).unwrap();
        for (a, b) in got.iter().zip(&cur) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn interval_bounds_contain_sampled_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let net = Network::from_spec(random_mlp(&mut rng, 10, &[12, 12], 5)).unwrap();
        let lo: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..0.5)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.0..0.5)).collect();
        let b = net.interval_bounds(&lo, &hi).unwrap();
        let (l, u) = b.last().unwrap();
        let r = InputRelaxation::intervals(lo.clone(), hi.clone()).unwrap();
        let an = analyze(&net, &r, DeepPolyOptions::default()).unwrap();
        let out = net.output_node();
        for _ in 0..1000 {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..=*b)).collect();
            for (k, y) in net.forward(&x).unwrap().into_iter().enumerate() {
                assert!(l[k] <= y && y <= u[k]);
                assert!(an.lower[out][k] - 1e-12 <= y && y <= an.upper[out][k] + 1e-12);
            }
        }
        let zero = net.interval_bounds(&lo, &lo).unwrap();
        assert_eq!(zero.last().unwrap().0, net.forward(&lo).unwrap());
    }
}

#[test]
fn deformed_images_stay_inside_deeppoly_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net = Network::from_spec(random_mlp(&mut rng, 25, &[10, 10], 4)).unwrap();
    let image = random_image(&mut rng, 5);
    let budget = AttackBudget::new(Norm::L2, 0.6, 0.2).unwrap();
    let bounds = bounds_map(&image, &budget);
    let planes = deformcert::relaxation::fit_all_planes(&image, budget.delta).unwrap();
    let r = InputRelaxation::from_image_bounds(&bounds, Some(&planes), &budget).unwrap();
    let an = analyze(&net, &r, DeepPolyOptions { tighten_every_layer: true }).unwrap();
    let out = net.output_node();
    let cfg = deformcert::oracle::SamplerConfig::new(budget, 300, 1).unwrap();
    for k in 0..300 {
        let field = deformcert::oracle::sample_indexed(5, &cfg, k);
        let y = net.forward(&deformcert::verifier::network_input(&image.deform(&field).unwrap())).unwrap();
        for (c, v) in y.into_iter().enumerate() {
            assert!(an.lower[out][c] - 1e-9 <= v && v <= an.upper[out][c] + 1e-9);
        }
    }
}

#[test]
fn margin_dominance_on_random_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut checked = 0;
    while checked < 6 {
        let spec = random_mlp(&mut rng, 9, &[6, 5], 3);
        let net = Network::from_spec(spec.clone()).unwrap();
        let image = random_image(&mut rng, 3);
        let budget = AttackBudget::new(Norm::Linf, 0.3, 0.1).unwrap();
        let bounds = bounds_map(&image, &budget);
        let planes = deformcert::relaxation::fit_all_planes(&image, budget.delta).unwrap();
        let r = InputRelaxation::from_image_bounds(&bounds, Some(&planes), &budget).unwrap();
        if unstable_count(&spec, &r) > 10 {
            continue;
        }
        checked += 1;
        let label = deformcert::verifier::argmax(&net.forward(&deformcert::verifier::network_input(&image)).unwrap());
        let others: Vec<usize> = (0..3).filter(|&k| k != label).collect();
        let run = |method| {
            verify(
                &net,
                &r,
                label,
                &others,
                &VerifyOptions {
                    method,
                    ..VerifyOptions::default()
                },
                |_| false,
            )
            .unwrap()
        };
        let (iv, dp, mi) = (run(Method::Interval), run(Method::DeepPoly), run(Method::Milp));
        for &o in &others {
            assert!(mi.margins[&o] >= dp.margins[&o] - 1e-9);
            assert!(dp.margins[&o] >= iv.margins[&o] - 1e-9);
            let exact = phase_enumeration_margin(&spec, &r, label, o);
            assert!((mi.margins[&o] - exact).abs() <= 1e-7, "{} vs {exact}", mi.margins[&o]);
        }
        for cex in &mi.counterexamples {
            assert!(cex.forward_margin < 0.0);
        }
    }
}

#[test]
fn conv_and_residual_network_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let kernel = |rng: &mut ChaCha8Rng| -> Vec<Vec<Vec<f64>>> {
        vec![(0..3).map(|_| (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect()]
    };
    let spec = NetworkSpec {
        input_shape: Some([1, 5, 5]),
        layers: vec![
            LayerSpec::Conv2d {
                weights: vec![kernel(&mut rng), kernel(&mut rng)],
                bias: vec![0.1, -0.1],
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Conv2d {
                weights: vec![
                    vec![kernel(&mut rng)[0].clone(), kernel(&mut rng)[0].clone()],
                    vec![kernel(&mut rng)[0].clone(), kernel(&mut rng)[0].clone()],
                ],
                bias: vec![0.0, 0.0],
                stride: 1,
                padding: 1,
            },
            LayerSpec::ResidualAdd { from: 2 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                weights: (0..3).map(|_| (0..50).map(|_| rng.gen_range(-0.3..0.3)).collect()).collect(),
                bias: vec![0.0; 3],
            },
        ],
    };
    let net = Network::from_spec(spec).unwrap();
    let image = random_image(&mut rng, 5);
    let budget = AttackBudget::new(Norm::L1, 0.4, 0.1).unwrap();
    let bounds = bounds_map(&image, &budget);
    let planes = deformcert::relaxation::fit_all_planes(&image, budget.delta).unwrap();
    let r = InputRelaxation::from_image_bounds(&bounds, Some(&planes), &budget).unwrap();
    let an = analyze(&net, &r, DeepPolyOptions::default()).unwrap();
    let label = 0;
    for o in 1..3 {
        let m = deeppoly::margin(&net, &an, &r, label, o).unwrap();
        let cfg = deformcert::oracle::SamplerConfig::new(budget, 200, 2).unwrap();
        for k in 0..200 {
            let field = deformcert::oracle::sample_indexed(5, &cfg, k);
            let y = net.forward(&deformcert::verifier::network_input(&image.deform(&field).unwrap())).unwrap();
            assert!(y[label] - y[o] >= m - 1e-9);
        }
    }
}

#[test]
fn zero_field_is_no_counterexample() {
    // Sanity: the undeformed image is inside every relaxation.
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let image = random_image(&mut rng, 4);
    let budget = AttackBudget::new(Norm::L2, 0.7, 0.3).unwrap();
    let same = image.deform(&VectorField::zeros(4)).unwrap();
    assert!(bounds_map(&image, &budget).contains(&same));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn network_json_round_trip(seed in any::<u64>(), inputs in 1usize..6, hidden in 1usize..6, outputs in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_mlp(&mut rng, inputs, &[hidden], outputs);
        let net = Network::from_spec(spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        let back = Network::load(&path).unwrap();
        prop_assert_eq!(back.spec(), net.spec());
        let x: Vec<f64> = (0..inputs).map(|k| k as f64 * 0.1).collect();
        prop_assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
    }
}
