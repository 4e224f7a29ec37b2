use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use deformcert::imaging::{load_idx, load_idx_labels, tensor_from_json};
use deformcert::oracle::{estimate_coverage, random_attack, SamplerConfig};
use deformcert::relaxation::BoundingPlanes;
use deformcert::verifier::{
    argmax, certify_image, network_input, CertStatus, CertifyOptions, Network, PlaneSource, VerifyOptions,
};
use deformcert::{bounds_map, Error, Image};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{AttackArgs, BoundsArgs, CertifyArgs, Common, CoverageArgs, Format};

/// Failure that stops a whole run (as opposed to a per-image error).
pub type RunError = String;

/// Outcome of one command: per-image error count decides the exit code.
pub struct RunSummary {
    pub errors: usize,
}

struct Dataset {
    name: String,
    /// Selected images with their dataset indices.
    images: Vec<(usize, Image)>,
}

fn load_dataset(common: &Common) -> Result<Dataset, RunError> {
    let path = &common.dataset;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let all = match common.format() {
        Format::Idx => load_idx(path).map_err(|e| e.to_string())?,
        Format::TensorJson => {
            let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let value: Value =
                serde_json::from_str(&text).map_err(|e| format!("format error in {}: {e}", path.display()))?;
            match &value {
                Value::Array(items) => items
                    .iter()
                    .map(|v| tensor_from_json(v, &name))
                    .collect::<Result<_, _>>()
                    .map_err(|e| e.to_string())?,
                _ => vec![tensor_from_json(&value, &name).map_err(|e| e.to_string())?],
            }
        }
    };
    let range = common.images.clone().unwrap_or(0..=all.len().saturating_sub(1));
    if all.is_empty() || *range.end() >= all.len() {
        return Err(format!(
            "image range {}..{} is outside a dataset of {} images",
            range.start(),
            range.end(),
            all.len()
        ));
    }
    let images = all.into_iter().enumerate().filter(|(k, _)| range.contains(k)).collect();
    Ok(Dataset { name, images })
}

fn thread_pool(common: &Common) -> Result<rayon::ThreadPool, RunError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err("thread count must be at least 1".into());
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| e.to_string())
}

/// JSON-lines sink: the output file, or standard output.
fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, RunError> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            fs::File::create(p).map_err(|e| format!("cannot create {}: {e}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_line(out: &mut dyn Write, value: &Value) -> Result<(), RunError> {
    writeln!(out, "{value}").map_err(|e| format!("write failed: {e}"))
}

/// Runs `work` on every selected image in the pool and returns the results
/// in dataset order.
fn per_image<T: Send>(
    pool: &rayon::ThreadPool,
    data: &Dataset,
    work: impl Fn(usize, &Image) -> T + Sync,
) -> Vec<(usize, T)> {
    pool.install(|| data.images.par_iter().map(|(k, image)| (*k, work(*k, image))).collect())
}

fn image_id(data: &Dataset, index: usize) -> String {
    format!("{}#{index}", data.name)
}

pub fn bounds(args: &BoundsArgs) -> Result<RunSummary, RunError> {
    let common = &args.common;
    let budget = common.budget()?;
    let data = load_dataset(common)?;
    let pool = thread_pool(common)?;
    let dir = common.output.clone().unwrap_or_else(|| ".".into());
    fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let results = per_image(&pool, &data, |_, image| {
        let start = Instant::now();
        let map = bounds_map(image, &budget);
        (map, start.elapsed().as_secs_f64())
    });
    let mut errors = 0;
    for (k, (map, secs)) in results {
        let path = dir.join(format!("bounds-{k}.json"));
        let written = serde_json::to_string(&map)
            .map_err(|e| e.to_string())
            .and_then(|text| fs::write(&path, text).map_err(|e| e.to_string()));
        match written {
            Ok(()) => log::info!("image {k}: bounds in {secs:.4} s -> {}", path.display()),
            Err(e) => {
                errors += 1;
                log::error!("image {k}: cannot write {}: {e}", path.display());
            }
        }
    }
    Ok(RunSummary { errors })
}

pub fn certify(args: &CertifyArgs) -> Result<RunSummary, RunError> {
    let common = &args.common;
    let budget = common.budget()?;
    let timeout = args.timeout()?;
    let data = load_dataset(common)?;
    let net = Network::load(&args.network).map_err(|e| e.to_string())?;
    let planes = args
        .planes
        .as_ref()
        .map(BoundingPlanes::load)
        .transpose()
        .map_err(|e| e.to_string())?;
    let labels = args
        .labels
        .as_ref()
        .map(load_idx_labels)
        .transpose()
        .map_err(|e| e.to_string())?;
    let pool = thread_pool(common)?;

    let results = per_image(&pool, &data, |k, image| {
        let label = match &labels {
            Some(l) => Some(*l.get(k).ok_or_else(|| Error::Argument(format!("no label for image {k}")))? as usize),
            None => None,
        };
        let options = CertifyOptions {
            verify: VerifyOptions {
                method: args.method,
                timeout,
                ..VerifyOptions::default()
            },
            planes: planes.as_ref().map_or(PlaneSource::Auto, PlaneSource::Given),
            label,
            bounds: None,
        };
        certify_image(&net, image, &image_id(&data, k), &budget, &options)
    });

    let mut out = open_output(common.output.as_deref())?;
    let (mut counts, mut errors, mut time) = ([0usize; 4], 0usize, 0.0);
    for (k, result) in &results {
        let line = match result {
            Ok(report) => {
                log::info!("image {k}: {} in {:.3} s", report.status, report.time_s);
                counts[status_slot(report.status)] += 1;
                time += report.time_s;
                serde_json::to_value(report).map_err(|e| e.to_string())?
            }
            Err(e) => {
                log::error!("image {k}: {e}");
                errors += 1;
                json!({"image": image_id(&data, *k), "error": e.to_string()})
            }
        };
        write_line(&mut *out, &line)?;
    }
    let attempted = results.len();
    let summary = json!({"summary": {
        "attempted": attempted,
        "certified": counts[0],
        "falsified": counts[1],
        "unknown": counts[2],
        "timeout": counts[3],
        "errors": errors,
        "certified_pct": 100.0 * counts[0] as f64 / attempted as f64,
        "mean_time_s": if attempted > errors { time / (attempted - errors) as f64 } else { 0.0 },
    }});
    finish(out, common, &summary)?;
    Ok(RunSummary { errors })
}

fn status_slot(status: CertStatus) -> usize {
    match status {
        CertStatus::Certified => 0,
        CertStatus::Falsified => 1,
        CertStatus::Unknown => 2,
        CertStatus::Timeout => 3,
    }
}

/// Flushes the report stream and prints the summary after it (on standard
/// output, so it also ends the stream when no output file is given).
fn finish(mut out: Box<dyn Write>, common: &Common, summary: &Value) -> Result<(), RunError> {
    if common.output.is_some() {
        out.flush().map_err(|e| format!("write failed: {e}"))?;
        drop(out);
        println!("{summary}");
    } else {
        write_line(&mut *out, summary)?;
        out.flush().map_err(|e| format!("write failed: {e}"))?;
    }
    Ok(())
}

pub fn attack(args: &AttackArgs) -> Result<RunSummary, RunError> {
    let common = &args.common;
    let budget = common.budget()?;
    let config = SamplerConfig::new(budget, args.samples, args.seed).map_err(|e| e.to_string())?;
    let data = load_dataset(common)?;
    let net = Network::load(&args.network).map_err(|e| e.to_string())?;
    let pool = thread_pool(common)?;

    let results = per_image(&pool, &data, |_, image| {
        let label = argmax(&net.forward(&network_input(image))?);
        Ok::<_, Error>((label, random_attack(&net, image, label, &config)?))
    });

    let mut out = open_output(common.output.as_deref())?;
    let (mut found, mut errors) = (0usize, 0usize);
    for (k, result) in &results {
        let mut line = json!({"image": image_id(&data, *k), "samples": args.samples, "seed": args.seed});
        match result {
            Ok((label, hit)) => {
                line["label"] = json!(label);
                match hit {
                    Some(hit) => {
                        found += 1;
                        log::info!("image {k}: sample {} changes {label} to {}", hit.index, hit.label);
                        line["found"] = json!(true);
                        line["sample"] = json!(hit.index);
                        line["adversarial_label"] = json!(hit.label);
                        line["field"] = serde_json::to_value(&hit.field).map_err(|e| e.to_string())?;
                    }
                    None => {
                        log::info!("image {k}: none found");
                        line["found"] = json!(false);
                    }
                }
            }
            Err(e) => {
                log::error!("image {k}: {e}");
                errors += 1;
                line["error"] = json!(e.to_string());
            }
        }
        write_line(&mut *out, &line)?;
    }
    let summary = json!({"summary": {"attempted": results.len(), "found": found, "errors": errors}});
    finish(out, common, &summary)?;
    Ok(RunSummary { errors })
}

pub fn coverage(args: &CoverageArgs) -> Result<RunSummary, RunError> {
    let common = &args.common;
    let budget = common.budget()?;
    let config = SamplerConfig::new(budget, args.samples, args.seed).map_err(|e| e.to_string())?;
    let data = load_dataset(common)?;
    let pool = thread_pool(common)?;

    let results = per_image(&pool, &data, |_, image| estimate_coverage(image, &config));

    let mut out = open_output(common.output.as_deref())?;
    let (mut total, mut errors) = (0.0, 0usize);
    for (k, result) in &results {
        let mut line = json!({"image": image_id(&data, *k), "samples": args.samples, "seed": args.seed});
        match result {
            Ok(report) => {
                log::info!("image {k}: coverage {:.4}", report.coverage);
                total += report.coverage;
                line["coverage"] = json!(report.coverage);
                line["sampled_lower"] = json!(report.sampled_lower);
                line["sampled_upper"] = json!(report.sampled_upper);
            }
            Err(e) => {
                log::error!("image {k}: {e}");
                errors += 1;
                line["error"] = json!(e.to_string());
            }
        }
        write_line(&mut *out, &line)?;
    }
    let ok = results.len() - errors;
    let mean = if ok > 0 { total / ok as f64 } else { 0.0 };
    let summary = json!({"summary": {"attempted": results.len(), "mean_coverage": mean, "errors": errors}});
    finish(out, common, &summary)?;
    Ok(RunSummary { errors })
}
