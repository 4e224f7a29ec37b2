//! Certification of ReLU networks over an input relaxation, and of images
//! against vector-field deformations.
//!
//! Three methods share one driver: interval propagation, DeepPoly-style
//! back-substitution (optionally finished with the tightening LP), and an
//! exact MILP. Margins are lower bounds on `logit[label] − logit[other]`.

pub mod deeppoly;
pub mod milp;
pub mod network;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounds_map, extremal_witness, AttackBudget, Extremum, Norm, PixelBounds};
use crate::imaging::{Image, VectorField};
use crate::linsolve::Status;
use crate::relaxation::{fit_all_planes, input_index, BoundingPlanes, InputRelaxation};

pub use deeppoly::{analyze, Analysis, DeepPolyOptions, ReluRelax};
pub use milp::{Encoding, MarginQuery};
pub use network::{LayerSpec, Network, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Interval,
    DeepPoly,
    Milp,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Interval => "interval",
            Method::DeepPoly => "deeppoly",
            Method::Milp => "milp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "interval" | "box" => Ok(Method::Interval),
            "deeppoly" => Ok(Method::DeepPoly),
            "milp" => Ok(Method::Milp),
            other => Err(Error::Argument(format!("unknown method {other:?} (interval, deeppoly, milp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertStatus {
    /// Every margin is positive.
    Certified,
    /// An admissible deformation changes the prediction.
    Falsified,
    Unknown,
    /// A solver ran out of time before the question was settled.
    Timeout,
}

impl fmt::Display for CertStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertStatus::Certified => "certified",
            CertStatus::Falsified => "falsified",
            CertStatus::Unknown => "unknown",
            CertStatus::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub method: Method,
    /// Wall-clock budget for the MILP queries of one verification, split
    /// evenly over the labels still to be solved.
    pub timeout: Option<Duration>,
    pub deeppoly: DeepPolyOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            method: Method::DeepPoly,
            timeout: None,
            deeppoly: DeepPolyOptions::default(),
        }
    }
}

/// An input in the relaxation on which the network misranks `label` and
/// `other`.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub other: usize,
    pub input: Vec<f64>,
    /// Displacement variable values by pixel id (empty without planes).
    pub displacement: BTreeMap<usize, [f64; 2]>,
    /// `logit[label] − logit[other]` from a forward pass on `input`.
    pub forward_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub label: usize,
    pub status: CertStatus,
    pub margins: BTreeMap<usize, f64>,
    pub counterexamples: Vec<Counterexample>,
    /// MILP points with a negative objective whose forward margin was not
    /// negative (zero unless the solver is inaccurate).
    pub rejected_witnesses: usize,
    /// Branch-and-bound nodes over all MILP queries.
    pub milp_nodes: usize,
}

/// Verifies that `label` beats each of `others` (in the given order) on
/// every input of `relaxation`. MILP counterexamples with a genuinely
/// negative forward margin are passed to `on_counterexample`; returning
/// `true` stops the run with status [`CertStatus::Falsified`].
pub fn verify(
    net: &Network,
    relaxation: &InputRelaxation,
    label: usize,
    others: &[usize],
    options: &VerifyOptions,
    mut on_counterexample: impl FnMut(&Counterexample) -> bool,
) -> Result<Verdict> {
    let n_out = net.output_len();
    if label >= n_out || others.iter().any(|&o| o >= n_out || o == label) {
        return Err(Error::Argument(format!("labels must be distinct and below {n_out}")));
    }
    let mut verdict = Verdict {
        label,
        status: CertStatus::Unknown,
        margins: BTreeMap::new(),
        counterexamples: Vec::new(),
        rejected_witnesses: 0,
        milp_nodes: 0,
    };
    let mut timed_out = false;
    match options.method {
        Method::Interval => {
            let b = net.interval_bounds(&relaxation.lower, &relaxation.upper)?;
            let (l, u) = b.last().unwrap();
            for &o in others {
                verdict.margins.insert(o, l[label] - u[o]);
            }
        }
        Method::DeepPoly => {
            let an = analyze(net, relaxation, options.deeppoly)?;
            for &o in others {
                verdict.margins.insert(o, deeppoly::margin(net, &an, relaxation, label, o)?);
            }
        }
        Method::Milp => {
            let an = analyze(net, relaxation, options.deeppoly)?;
            let enc = Encoding::new(net, &an, relaxation)?;
            log::debug!("MILP encoding with {} binaries", enc.num_binaries());
            let deadline = options.timeout.map(|t| Instant::now() + t);
            for (done, &o) in others.iter().enumerate() {
                let dp = deeppoly::margin(net, &an, relaxation, label, o)?;
                let per_label = deadline.map(|d| d.saturating_duration_since(Instant::now()) / (others.len() - done) as u32);
                let q = enc.minimize_margin(relaxation, label, o, per_label)?;
                verdict.milp_nodes += q.nodes;
                let margin = match q.status {
                    Status::Optimal => q.bound,
                    _ => {
                        timed_out = true;
                        q.bound.max(dp)
                    }
                };
                verdict.margins.insert(o, margin);
                if let Some((value, input)) = q.witness {
                    if value < 0.0 {
                        let logits = net.forward(&input)?;
                        let forward_margin = logits[label] - logits[o];
                        if forward_margin < 0.0 {
                            let cex = Counterexample {
                                other: o,
                                input,
                                displacement: q.displacement,
                                forward_margin,
                            };
                            let stop = on_counterexample(&cex);
                            verdict.counterexamples.push(cex);
                            if stop {
                                verdict.status = CertStatus::Falsified;
                                return Ok(verdict);
                            }
                        } else if value < -1e-9 {
                            verdict.rejected_witnesses += 1;
                            log::warn!("MILP witness for label {o} has forward margin {forward_margin}");
                        }
                    }
                }
            }
        }
    }
    verdict.status = if verdict.margins.values().all(|&m| m > 0.0) {
        CertStatus::Certified
    } else if timed_out {
        CertStatus::Timeout
    } else {
        CertStatus::Unknown
    };
    Ok(verdict)
}

/// Network input for an image, channel-major.
pub fn network_input(image: &Image) -> Vec<f64> {
    let (w, ch) = (image.width(), image.channels());
    let mut x = vec![0.0; w * w * ch];
    for i in 1..=w {
        for j in 1..=w {
            for c in 0..ch {
                x[input_index(w, i, j, c)] = image.get(i, j, c);
            }
        }
    }
    x
}

/// Index of the largest logit (first on ties).
pub fn argmax(logits: &[f64]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v > logits[best] { k } else { best })
}

/// Where the bounding planes of a certification come from.
#[derive(Debug, Clone, Copy, Default)]
pub enum PlaneSource<'a> {
    /// Fit planes when the budget has a finite flow bound.
    #[default]
    Auto,
    Fit,
    Given(&'a BoundingPlanes),
    None,
}

#[derive(Debug, Clone, Default)]
pub struct CertifyOptions<'a> {
    pub verify: VerifyOptions,
    pub planes: PlaneSource<'a>,
    /// Expected class; defaults to the network's prediction.
    pub label: Option<usize>,
    /// Precomputed pixel bounds for this image and budget.
    pub bounds: Option<&'a PixelBounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub image: String,
    pub norm: Norm,
    pub delta: f64,
    #[serde(with = "crate::gamma_serde")]
    pub gamma: f64,
    /// Method name, with `+flow` when flow constraints were used.
    pub method: String,
    pub label: usize,
    pub predicted: usize,
    pub status: CertStatus,
    pub margins: BTreeMap<usize, f64>,
    pub time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<VectorField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Certifies `image` against every deformation within `budget`.
pub fn certify_image(
    net: &Network,
    image: &Image,
    image_id: &str,
    budget: &AttackBudget,
    options: &CertifyOptions<'_>,
) -> Result<CertificationReport> {
    let start = Instant::now();
    let logits = net.forward(&network_input(image))?;
    let predicted = argmax(&logits);
    let label = options.label.unwrap_or(predicted);
    let flow = budget.has_flow() && options.verify.method != Method::Interval;
    let mut report = CertificationReport {
        image: image_id.to_string(),
        norm: budget.norm,
        delta: budget.delta,
        gamma: budget.gamma,
        method: format!("{}{}", options.verify.method, if flow { "+flow" } else { "" }),
        label,
        predicted,
        status: CertStatus::Unknown,
        margins: BTreeMap::new(),
        time_s: 0.0,
        witness: None,
        adversarial_label: None,
        notes: Vec::new(),
    };
    if label >= logits.len() {
        return Err(Error::Argument(format!("label {label} but the network has {} outputs", logits.len())));
    }
    if predicted != label {
        report.notes.push(format!("misclassified: predicted {predicted}, expected {label}"));
        report.time_s = start.elapsed().as_secs_f64();
        return Ok(report);
    }

    let owned_bounds;
    let bounds = match options.bounds {
        Some(b) => b,
        None => {
            owned_bounds = bounds_map(image, budget);
            &owned_bounds
        }
    };
    let owned_planes;
    let planes = match (options.planes, options.verify.method) {
        (_, Method::Interval) => None,
        (PlaneSource::Given(p), _) => Some(p),
        (PlaneSource::Fit, _) | (PlaneSource::Auto, _) if options.planes_fit(budget) => {
            owned_planes = fit_all_planes(image, budget.delta)?;
            Some(&owned_planes)
        }
        _ => None,
    };
    if flow && planes.is_none() {
        return Err(Error::Contract(
            "a finite flow bound needs bounding planes to constrain the displacements".into(),
        ));
    }
    let relaxation = InputRelaxation::from_image_bounds(bounds, planes, budget)?;

    let mut others: Vec<usize> = (0..logits.len()).filter(|&k| k != label).collect();
    others.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));

    let mut realized: Option<(VectorField, usize)> = None;
    let verdict = verify(net, &relaxation, label, &others, &options.verify, |cex| {
        realized = realize(net, image, budget, label, cex);
        realized.is_some()
    })?;
    report.margins = verdict.margins;
    report.status = verdict.status;
    if let Some((field, adv)) = realized {
        report.witness = Some(field);
        report.adversarial_label = Some(adv);
    } else if !verdict.counterexamples.is_empty() {
        report.notes.push(format!(
            "{} relaxation counterexample(s) not realized as a deformation",
            verdict.counterexamples.len()
        ));
    }
    report.time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

impl CertifyOptions<'_> {
    fn planes_fit(&self, budget: &AttackBudget) -> bool {
        match self.planes {
            PlaneSource::Fit => true,
            PlaneSource::Auto => budget.has_flow(),
            _ => false,
        }
    }
}

/// Tries to turn a relaxation counterexample into an admissible field that
/// changes the prediction.
fn realize(
    net: &Network,
    image: &Image,
    budget: &AttackBudget,
    label: usize,
    cex: &Counterexample,
) -> Option<(VectorField, usize)> {
    let w = image.width();
    let check = |field: VectorField| -> Option<(VectorField, usize)> {
        if !crate::oracle::is_admissible(&field, budget) {
            return None;
        }
        let deformed = image.deform(&field).ok()?;
        let pred = argmax(&net.forward(&network_input(&deformed)).ok()?);
        (pred != label).then_some((field, pred))
    };
    // Decoded displacements first: they already satisfy the flow rows.
    if !cex.displacement.is_empty() {
        let mut field = VectorField::zeros(w);
        for (&px, &d) in &cex.displacement {
            field.set(px / w + 1, px % w + 1, d);
        }
        if let Some(hit) = check(field) {
            return Some(hit);
        }
    }
    if image.channels() != 1 {
        return None;
    }
    // Per pixel, move along the segment between the minimizing and the
    // maximizing displacement until the interpolated value matches.
    let mut field = VectorField::zeros(w);
    for i in 1..=w {
        for j in 1..=w {
            let target = cex.input[input_index(w, i, j, 0)];
            let lo = extremal_witness(image, i, j, budget, Extremum::Min).ok()?;
            let hi = extremal_witness(image, i, j, budget, Extremum::Max).ok()?;
            let at = |t: f64| {
                let d = [lo[0] + t * (hi[0] - lo[0]), lo[1] + t * (hi[1] - lo[1])];
                (d, image.interpolate([i as f64 + d[0], j as f64 + d[1]]).map(|v| v[0]).unwrap_or(f64::NAN))
            };
            let (mut a, mut b) = (0.0, 1.0);
            let (_, va) = at(a);
            let (_, vb) = at(b);
            let d = if target <= va {
                at(0.0).0
            } else if target >= vb {
                at(1.0).0
            } else {
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if at(m).1 < target {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                at(0.5 * (a + b)).0
            };
            field.set(i, j, d);
        }
    }
    check(field)
}
