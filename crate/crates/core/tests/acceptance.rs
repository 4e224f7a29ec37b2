//! Acceptance run: one pass/fail line per criterion, nonzero exit on failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{fixture, phase_enumeration_margin, random_image, random_mlp, unstable_count};
use deformcert::geometry::{extremal_witness, quartic_real_roots, Extremum};
use deformcert::imaging::{load_idx, load_tensor_json};
use deformcert::oracle::{estimate_coverage, random_attack, SamplerConfig};
use deformcert::relaxation::{fit_all_planes, BoundingPlanes, InputRelaxation};
use deformcert::verifier::{
    argmax, network_input, verify, CertStatus, LayerSpec, Method, Network, NetworkSpec, Verdict, VerifyOptions,
};
use deformcert::{bounds_map, AttackBudget, Image, Norm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn toy_relaxation(gamma: Option<f64>) -> InputRelaxation {
    let text = std::fs::read_to_string(fixture("toy_relaxation.json")).unwrap();
    let mut r: InputRelaxation = serde_json::from_str(&text).unwrap();
    match gamma {
        Some(g) => r.spatial.as_mut().unwrap().gamma = g,
        None => r.spatial = None,
    }
    r
}

fn run_verify(net: &Network, r: &InputRelaxation, label: usize, others: &[usize], method: Method) -> Verdict {
    let opts = VerifyOptions {
        method,
        ..VerifyOptions::default()
    };
    verify(net, r, label, others, &opts, |_| false).unwrap()
}

fn criterion_1() -> Outcome {
    let net = Network::load(fixture("toy_network.json")).unwrap();
    let image = load_tensor_json(fixture("toy_image.json")).unwrap();
    let bounds = bounds_map(&image, &AttackBudget::unconstrained(Norm::Linf, 0.5).unwrap());
    ensure(bounds.get(2, 2, 0) == (0.0, 0.25) && bounds.get(3, 2, 0) == (0.25, 0.75), || {
        format!("input intervals {:?} {:?}", bounds.get(2, 2, 0), bounds.get(3, 2, 0))
    })?;
    let b = net.interval_bounds(&[0.0, 0.25], &[0.25, 0.75]).unwrap();
    let want = [
        ("x2", 1, 0, -0.5, 0.5),
        ("x3", 1, 1, 0.125, 0.875),
        ("x4", 2, 0, 0.0, 0.5),
        ("x6", 3, 0, -1.0, 0.0),
        ("x7", 3, 1, -0.375, 0.875),
    ];
    let mut worst: f64 = 0.0;
    for (name, node, row, l, u) in want {
        let (gl, gu) = (b[node].0[row], b[node].1[row]);
        let err = (gl - l).abs().max((gu - u).abs());
        worst = worst.max(err);
        ensure(err <= 1e-9, || format!("{name}: [{gl}, {gu}] vs [{l}, {u}]"))?;
    }
    Ok(format!("10 bounds, max error {worst:.1e}"))
}

fn criterion_2() -> Outcome {
    let net = Network::load(fixture("toy_network.json")).unwrap();
    let modified = Network::load(fixture("toy_network_modified.json")).unwrap();
    let cases = [
        ("bias +0.125, no flow", &net, toy_relaxation(None), 0.125),
        ("bias -0.125, planes", &modified, toy_relaxation(Some(f64::INFINITY)), -0.125),
        ("bias -0.125, flow 0.25", &modified, toy_relaxation(Some(0.25)), 0.0625),
    ];
    let mut got = Vec::new();
    for (name, n, r, want) in cases {
        let m = run_verify(n, &r, 1, &[0], Method::DeepPoly).margins[&0];
        ensure((m - want).abs() <= 1e-9, || format!("{name}: {m} vs {want}"))?;
        got.push(format!("{m}"));
    }
    Ok(format!("margins {}", got.join(", ")))
}

/// Bilinear interpolation written out from the grid values.
fn bilinear(image: &Image, y: f64, x: f64) -> f64 {
    let w = image.width();
    let m = (y.floor() as usize).clamp(1, w - 1);
    let n = (x.floor() as usize).clamp(1, w - 1);
    let (a, b) = (y - m as f64, x - n as f64);
    let p = |i, j| image.get(i, j, 0);
    (1.0 - a) * (1.0 - b) * p(m, n) + a * (1.0 - b) * p(m + 1, n) + (1.0 - a) * b * p(m, n + 1) + a * b * p(m + 1, n + 1)
}

/// Min and max of the interpolant over a 61×61 grid of the ball plus 800
/// points on its boundary, restricted to the image.
fn grid_extrema(image: &Image, i: usize, j: usize, norm: Norm, delta: f64) -> (f64, f64) {
    let w = image.width() as f64;
    let (ci, cj) = (i as f64, j as f64);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut visit = |dy: f64, dx: f64| {
        let (y, x) = (ci + dy, cj + dx);
        if norm.length([dy, dx]) <= delta && (1.0..=w).contains(&y) && (1.0..=w).contains(&x) {
            let v = bilinear(image, y, x);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    };
    let steps = 60;
    for a in 0..=steps {
        for b in 0..=steps {
            visit(delta * (2.0 * a as f64 / steps as f64 - 1.0), delta * (2.0 * b as f64 / steps as f64 - 1.0));
        }
    }
    let k = 800;
    for t in 0..k {
        let th = t as f64 / k as f64 * std::f64::consts::TAU;
        let (c, s) = (th.cos(), th.sin());
        let r = match norm {
            Norm::L2 => delta,
            Norm::L1 => delta / (c.abs() + s.abs()),
            Norm::Linf => delta / c.abs().max(s.abs()),
        };
        visit(r * c * (1.0 - 1e-15), r * s * (1.0 - 1e-15));
    }
    (lo, hi)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut slack: f64 = f64::INFINITY;
    let mut worst_witness: f64 = 0.0;
    let mut checks = 0;
    for _ in 0..100 {
        let image = random_image(&mut rng, 6);
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            for delta in [0.3, 0.7, 1.2] {
                let budget = AttackBudget::unconstrained(norm, delta).unwrap();
                let bounds = bounds_map(&image, &budget);
                for i in 1..=6 {
                    for j in 1..=6 {
                        let (l, u) = bounds.get(i, j, 0);
                        let (lo, hi) = grid_extrema(&image, i, j, norm, delta);
                        ensure(lo >= l - 1e-12 && hi <= u + 1e-12, || {
                            format!("{norm} δ={delta} ({i},{j}): grid [{lo}, {hi}] outside [{l}, {u}]")
                        })?;
                        slack = slack.min(lo - l).min(u - hi);
                        for (sense, target) in [(Extremum::Min, l), (Extremum::Max, u)] {
                            let d = extremal_witness(&image, i, j, &budget, sense).unwrap();
                            ensure(norm.length(d) <= delta, || format!("witness {d:?} outside the ball"))?;
                            let v = bilinear(&image, i as f64 + d[0], j as f64 + d[1]);
                            let err = (v - target).abs();
                            worst_witness = worst_witness.max(err);
                            ensure(err <= 1e-9, || {
                                format!("{norm} δ={delta} ({i},{j}) {sense:?}: witness {v} vs {target}")
                            })?;
                        }
                        checks += 1;
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs <= 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{checks} pixel intervals, min grid slack {slack:.1e}, max witness error {worst_witness:.1e}, {secs:.1} s"
    ))
}

fn planted(roots: &[f64], pairs: &[(f64, f64)], lead: f64) -> [f64; 5] {
    let mut c = vec![lead];
    let mul = |c: &Vec<f64>, f: &[f64]| {
        let mut out = vec![0.0; c.len() + f.len() - 1];
        for (a, &x) in c.iter().enumerate() {
            for (b, &y) in f.iter().enumerate() {
                out[a + b] += x * y;
            }
        }
        out
    };
    for &r in roots {
        c = mul(&c, &[-r, 1.0]);
    }
    for &(re, im) in pairs {
        c = mul(&c, &[re * re + im * im, -2.0 * re, 1.0]);
    }
    [c[0], c[1], c[2], c[3], c[4]]
}

fn separated(roots: &[f64]) -> bool {
    let mut s = roots.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[1] - w[0] >= 1e-2)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_err: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    for k in 0..1000 {
        let lead = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let (roots, pairs) = loop {
            if k % 2 == 0 {
                let r: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
                if separated(&r) {
                    break (r, vec![]);
                }
            } else {
                let r: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let pair = (rng.gen_range(-3.0..3.0), rng.gen_range(0.05..2.0));
                if separated(&r) {
                    break (r, vec![pair]);
                }
            }
        };
        let c = planted(&roots, &pairs, lead);
        let found = quartic_real_roots(c[0], c[1], c[2], c[3], c[4]).map_err(|e| format!("quartic {k}: {e}"))?;
        let mut want = roots.clone();
        want.sort_by(f64::total_cmp);
        ensure(found.len() == want.len(), || format!("quartic {k}: found {found:?}, planted {want:?}"))?;
        for (g, w) in found.iter().zip(&want) {
            worst_err = worst_err.max((g - w).abs());
            ensure((g - w).abs() <= 1e-7, || format!("quartic {k}: root {g} vs {w}"))?;
        }
        for &x in &found {
            let p = c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck) / lead;
            worst_res = worst_res.max(p.abs());
            ensure(p.abs() <= 1e-8, || format!("quartic {k}: residual {p:e} at {x}"))?;
        }
    }
    Ok(format!("1000 quartics, max root error {worst_err:.1e}, max residual {worst_res:.1e}"))
}

/// One verification instance of the property suites.
struct Instance {
    net: Network,
    image: Image,
    label: usize,
    norm: Norm,
    delta: f64,
}

fn instance_nets() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..10)
        .map(|k| {
            let net = Network::from_spec(random_mlp(&mut rng, 36, &[8, 8], 5)).unwrap();
            let image = random_image(&mut rng, 6);
            let label = argmax(&net.forward(&network_input(&image)).unwrap());
            let norm = [Norm::L1, Norm::L2, Norm::Linf][k % 3];
            Instance {
                net,
                image,
                label,
                norm,
                delta: [0.15, 0.3, 0.5][k % 3],
            }
        })
        .collect()
}

fn relaxation_for(inst: &Instance, planes: &BoundingPlanes, gamma: f64) -> (AttackBudget, InputRelaxation) {
    let budget = AttackBudget::new(inst.norm, inst.delta, gamma).unwrap();
    let bounds = bounds_map(&inst.image, &budget);
    let planes = budget.has_flow().then_some(planes);
    (budget, InputRelaxation::from_image_bounds(&bounds, planes, &budget).unwrap())
}

/// Dense forward pass computed directly from the `NetworkSpec` layers.
fn naive_forward(spec: &NetworkSpec, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for layer in &spec.layers {
        x = match layer {
            LayerSpec::Dense { weights, bias } => weights
                .iter()
                .zip(bias)
                .map(|(row, b)| b + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>())
                .collect(),
            LayerSpec::Relu => x.iter().map(|v| v.max(0.0)).collect(),
            other => panic!("unexpected layer {other:?}"),
        };
    }
    x
}

struct SuiteResult {
    /// (instance, γ) pairs certified by MILP.
    certified: Vec<(usize, AttackBudget)>,
    falsifications: usize,
    rejected: usize,
    bad_witnesses: Vec<String>,
}

const GAMMAS: [f64; 3] = [f64::INFINITY, 0.25, 0.05];

fn criterion_5(insts: &[Instance], out: &mut Option<SuiteResult>) -> Outcome {
    let mut result = SuiteResult {
        certified: Vec::new(),
        falsifications: 0,
        rejected: 0,
        bad_witnesses: Vec::new(),
    };
    let mut counts = [[0usize; 3]; 3];
    for (k, inst) in insts.iter().enumerate() {
        let planes = fit_all_planes(&inst.image, inst.delta).unwrap();
        let others: Vec<usize> = (0..inst.net.output_len()).filter(|&o| o != inst.label).collect();
        let mut previous = [false; 3];
        for (g, &gamma) in GAMMAS.iter().enumerate() {
            let (budget, r) = relaxation_for(inst, &planes, gamma);
            let iv = run_verify(&inst.net, &r, inst.label, &others, Method::Interval);
            let dp = run_verify(&inst.net, &r, inst.label, &others, Method::DeepPoly);
            let milp = run_verify(&inst.net, &r, inst.label, &others, Method::Milp);
            for &o in &others {
                let (a, b, c) = (iv.margins[&o], dp.margins[&o], milp.margins[&o]);
                ensure(c >= b - 1e-9 && b >= a - 1e-9, || {
                    format!("net {k} γ={gamma} label {o}: interval {a}, deeppoly {b}, milp {c}")
                })?;
            }
            let now = [iv.status, dp.status, milp.status].map(|s| s == CertStatus::Certified);
            for m in 0..3 {
                ensure(!previous[m] || now[m], || format!("net {k}: method {m} lost certification at γ={gamma}"))?;
                counts[m][g] += now[m] as usize;
            }
            ensure(!now[1] || now[2], || format!("net {k} γ={gamma}: DeepPoly certified but MILP did not"))?;
            previous = now;

            if now[2] {
                result.certified.push((k, budget));
            }
            result.rejected += milp.rejected_witnesses;
            for cex in &milp.counterexamples {
                result.falsifications += 1;
                let y = naive_forward(inst.net.spec(), &cex.input);
                let m = y[inst.label] - y[cex.other];
                if m >= 0.0 {
                    result.bad_witnesses.push(format!("net {k} γ={gamma} label {}: forward margin {m}", cex.other));
                }
            }
        }
    }
    *out = Some(result);
    let fmt = |c: [usize; 3]| format!("{}/{}/{}", c[0], c[1], c[2]);
    Ok(format!(
        "certified at γ=inf/0.25/0.05: interval {}, deeppoly {}, milp {}",
        fmt(counts[0]),
        fmt(counts[1]),
        fmt(counts[2])
    ))
}

fn criterion_6(insts: &[Instance], suite: Option<&SuiteResult>) -> Outcome {
    let suite = suite.ok_or("criterion 5 did not complete")?;
    for &(k, budget) in &suite.certified {
        let inst = &insts[k];
        let cfg = SamplerConfig::new(budget, 1000, 600 + k as u64).unwrap();
        if let Some(hit) = random_attack(&inst.net, &inst.image, inst.label, &cfg).unwrap() {
            return Err(format!("net {k} γ={}: sample {} flips to {}", budget.gamma, hit.index, hit.label));
        }
    }
    ensure(suite.rejected == 0, || format!("{} MILP witnesses had a non-negative forward margin", suite.rejected))?;
    ensure(suite.bad_witnesses.is_empty(), || suite.bad_witnesses.join("; "))?;
    Ok(format!(
        "{} certified instances x 1000 attacks, no flips; {} MILP falsification witnesses all negative",
        suite.certified.len(),
        suite.falsifications
    ))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut instances = 0;
    let mut labels = 0;
    let mut worst: f64 = 0.0;
    let mut unstable_hist = [0usize; 11];
    let mut tries = 0;
    while instances < 20 {
        tries += 1;
        ensure(tries < 2000, || format!("only {instances} instances with at most 10 unstable ReLUs"))?;
        let spec = random_mlp(&mut rng, 36, &[8, 8], 4);
        let net = Network::from_spec(spec.clone()).unwrap();
        let image = random_image(&mut rng, 6);
        let norm = [Norm::L1, Norm::L2, Norm::Linf][rng.gen_range(0..3)];
        let delta = rng.gen_range(0.1..0.8);
        let gamma = [f64::INFINITY, 0.2][rng.gen_range(0..2)];
        let budget = AttackBudget::new(norm, delta, gamma).unwrap();
        let planes = fit_all_planes(&image, delta).unwrap();
        let r = InputRelaxation::from_image_bounds(
            &bounds_map(&image, &budget),
            budget.has_flow().then_some(&planes),
            &budget,
        )
        .unwrap();
        let k = unstable_count(&spec, &r);
        if k == 0 || k > 10 {
            continue;
        }
        unstable_hist[k] += 1;
        instances += 1;
        let label = argmax(&net.forward(&network_input(&image)).unwrap());
        let others: Vec<usize> = (0..4).filter(|&o| o != label).collect();
        let milp = run_verify(&net, &r, label, &others, Method::Milp);
        for &o in &others {
            let exact = phase_enumeration_margin(&spec, &r, label, o);
            let got = milp.margins[&o];
            let err = (got - exact).abs();
            worst = worst.max(err);
            ensure(err <= 1e-7, || format!("instance {instances} label {o}: MILP {got} vs enumeration {exact}"))?;
            labels += 1;
        }
    }
    let hist: Vec<String> = (1..=10).filter(|&k| unstable_hist[k] > 0).map(|k| format!("{k}:{}", unstable_hist[k])).collect();
    Ok(format!(
        "{instances} nets, {labels} margins, max difference {worst:.1e}, unstable counts {}",
        hist.join(" ")
    ))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let images = load_idx(fixture("mnist10-images.idx")).unwrap();
    ensure(images.len() == 10, || format!("{} images", images.len()))?;
    let budget = AttackBudget::unconstrained(Norm::L2, 1.0).unwrap();
    let mut per_image = Vec::new();
    for (k, image) in images.iter().enumerate() {
        let cfg = SamplerConfig::new(budget, 10_000, 800 + k as u64).unwrap();
        per_image.push(estimate_coverage(image, &cfg).map_err(|e| e.to_string())?.coverage);
    }
    let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
    let min = per_image.iter().copied().fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    ensure(mean >= 0.95, || format!("aggregate coverage {mean:.4}"))?;
    ensure(secs <= 600.0, || format!("took {secs:.1} s"))?;
    Ok(format!("aggregate coverage {:.2}% (lowest image {:.2}%), {secs:.1} s", 100.0 * mean, 100.0 * min))
}

fn criterion_9() -> Outcome {
    let image = load_idx(fixture("mnist10-images.idx")).unwrap().remove(0);
    let budget = AttackBudget::unconstrained(Norm::Linf, 0.5).unwrap();
    let mut times = Vec::new();
    for _ in 0..5 {
        let start = Instant::now();
        std::hint::black_box(bounds_map(std::hint::black_box(&image), &budget));
        times.push(start.elapsed().as_secs_f64());
    }
    let slowest = times.iter().copied().fold(0.0, f64::max);
    ensure(slowest < 0.1, || format!("slowest of 5 runs {slowest:.3} s"))?;
    Ok(format!("28x28 in {:.1} ms (slowest of 5 runs)", 1e3 * slowest))
}

fn report(n: usize, outcome: std::thread::Result<Outcome>, failed: &mut bool) {
    match outcome {
        Ok(Ok(detail)) => println!("criterion {n}: PASS ({detail})"),
        Ok(Err(detail)) => {
            *failed = true;
            println!("criterion {n}: FAIL ({detail})");
        }
        Err(panic) => {
            *failed = true;
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("criterion {n}: FAIL (panicked: {msg})");
        }
    }
}

fn main() {
    let mut failed = false;
    let simple: [(usize, fn() -> Outcome); 4] = [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4)];
    for (n, f) in simple {
        report(n, catch_unwind(f), &mut failed);
    }
    let insts = instance_nets();
    let mut suite = None;
    report(5, catch_unwind(AssertUnwindSafe(|| criterion_5(&insts, &mut suite))), &mut failed);
    report(6, catch_unwind(AssertUnwindSafe(|| criterion_6(&insts, suite.as_ref()))), &mut failed);
    report(7, catch_unwind(criterion_7), &mut failed);
    report(8, catch_unwind(criterion_8), &mut failed);
    report(9, catch_unwind(criterion_9), &mut failed);
    println!(
        "criterion 10: NOT REPRODUCED (certification rates of trained ConvSmall/ConvBig/ResNet models need the \
         original weights and multi-minute MILP budgets; covered by criteria 3 to 7)"
    );
    if failed {
        std::process::exit(1);
    }
}
