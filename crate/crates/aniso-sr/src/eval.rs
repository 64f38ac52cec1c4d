//! The slice-drop evaluation protocol: remove every other slice, recover
//! the held-out ones with the autoencoder and each classical baseline,
//! score against ground truth, aggregate, and test significance.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::autoencoder::Autoencoder;
use crate::baselines::{upsample_through_plane, InterpKind};
use crate::error::{Error, Result};
use crate::metrics::{all_metrics, wilcoxon_one_sided_greater};
use crate::volume::{percentile_of_sorted, Slice, Volume};

/// Aggregate statistics cap for infinite PSNR values, in dB.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Ae,
    Linear,
    Bspline3,
    Lanczos3,
}

pub const ALL_METHODS: [Method; 4] = [Method::Ae, Method::Linear, Method::Bspline3, Method::Lanczos3];

impl Method {
    fn baseline_kind(&self) -> Option<InterpKind> {
        match self {
            Method::Ae => None,
            Method::Linear => Some(InterpKind::Linear),
            Method::Bspline3 => Some(InterpKind::Bspline3),
            Method::Lanczos3 => Some(InterpKind::Lanczos3),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Ae => "ae",
            Method::Linear => "linear",
            Method::Bspline3 => "bspline3",
            Method::Lanczos3 => "lanczos3",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "ae" => Ok(Method::Ae),
            "linear" => Ok(Method::Linear),
            "bspline3" => Ok(Method::Bspline3),
            "lanczos3" => Ok(Method::Lanczos3),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// One held-out slice scored for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub volume_id: String,
    pub slice_index: usize,
    pub method: Method,
    pub psnr_db: f64,
    pub ssim: f64,
    pub vif: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    pub psnr: MetricStats,
    pub ssim: MetricStats,
    pub vif: MetricStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricKind {
    Psnr,
    Ssim,
    Vif,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MetricKind::Psnr => "psnr",
            MetricKind::Ssim => "ssim",
            MetricKind::Vif => "vif",
        };
        write!(f, "{s}")
    }
}

/// One-sided Wilcoxon comparison of the autoencoder against a baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct Significance {
    pub baseline: Method,
    pub metric: MetricKind,
    pub n_pairs: usize,
    /// Absent when fewer than 5 nonzero paired differences exist.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSummary {
    pub methods: Vec<MethodSummary>,
    pub significance: Vec<Significance>,
}

/// Keep even-index slices (doubling through-plane spacing), return the odd
/// ones that have acquired neighbors on both sides as held-out ground truth.
/// With an even slice count the trailing odd slice is unpaired and dropped.
pub fn drop_alternate_slices(v: &Volume) -> Result<(Volume, BTreeMap<usize, Slice>)> {
    let (n, rows, cols) = v.dims();
    if n < 3 {
        return Err(Error::Size(format!(
            "slice-drop protocol needs at least 3 slices, got {n}"
        )));
    }
    let plane = rows * cols;
    let kept: Vec<usize> = (0..n).step_by(2).collect();
    let mut data = Vec::with_capacity(kept.len() * plane);
    for &k in &kept {
        data.extend_from_slice(v.slice_data(k));
    }
    let spacing = v.spacing();
    let low_res = Volume::new(
        data,
        (kept.len(), rows, cols),
        (spacing.through_mm * 2.0, spacing.row_mm, spacing.col_mm),
        v.provenance().to_string(),
    )?;
    let mut held_out = BTreeMap::new();
    for k in (1..n).step_by(2) {
        if k + 1 < n {
            held_out.insert(k, v.slice_at(k));
        }
    }
    Ok((low_res, held_out))
}

/// Recover every held-out slice of `v` with each method and score it.
/// The volume must be preprocessed (normalized, in-plane resampled, dims
/// divisible by 16 when the autoencoder is among the methods).
pub fn evaluate_volume(
    model: &Autoencoder,
    v: &Volume,
    methods: &[Method],
) -> Result<Vec<EvalRecord>> {
    let (low_res, held_out) = drop_alternate_slices(v)?;
    let mut records = Vec::with_capacity(methods.len() * held_out.len());
    for &method in methods {
        match method.baseline_kind() {
            None => {
                for (&idx, truth) in &held_out {
                    let j = (idx - 1) / 2;
                    let synth = model.synthesize_between(
                        &low_res.slice_at(j),
                        &low_res.slice_at(j + 1),
                        &[0.5],
                    )?;
                    records.push(score(v, idx, method, truth, &synth[0])?);
                }
            }
            Some(kind) => {
                let up = upsample_through_plane(&low_res, 2, kind)?;
                for (&idx, truth) in &held_out {
                    let recovered = up.slice_at(idx);
                    records.push(score(v, idx, method, truth, &recovered)?);
                }
            }
        }
    }
    Ok(records)
}

/// Evaluate many volumes, optionally across worker threads. Records come
/// back grouped per volume in input order; exports sort them anyway.
pub fn evaluate_volumes(
    model: &Autoencoder,
    volumes: &[Volume],
    methods: &[Method],
    threads: usize,
) -> Result<Vec<EvalRecord>> {
    let threads = threads.max(1).min(volumes.len().max(1));
    if threads <= 1 {
        let mut records = Vec::new();
        for v in volumes {
            records.extend(evaluate_volume(model, v, methods)?);
        }
        return Ok(records);
    }
    let chunk = volumes.len().div_ceil(threads);
    let results: Vec<Result<Vec<EvalRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = volumes
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || -> Result<Vec<EvalRecord>> {
                    let mut out = Vec::new();
                    for v in part {
                        out.extend(evaluate_volume(model, v, methods)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    Ok(records)
}

fn score(
    v: &Volume,
    idx: usize,
    method: Method,
    truth: &Slice,
    recovered: &Slice,
) -> Result<EvalRecord> {
    let m = all_metrics(truth, recovered)?;
    Ok(EvalRecord {
        volume_id: v.provenance().to_string(),
        slice_index: idx,
        method,
        psnr_db: m.psnr_db,
        ssim: m.ssim,
        vif: m.vif,
    })
}

fn stats_of(values: &mut [f64]) -> MetricStats {
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    MetricStats {
        mean,
        median: percentile_of_sorted(values, 50.0),
        q1: percentile_of_sorted(values, 25.0),
        q3: percentile_of_sorted(values, 75.0),
    }
}

fn capped_psnr(p: f64) -> f64 {
    p.min(PSNR_CAP_DB)
}

/// Per-method quartile statistics and AE-vs-baseline one-sided Wilcoxon
/// p-values on pairs matched by (volume, slice). Infinite PSNR enters the
/// statistics capped at 100 dB.
pub fn summarize(records: &[EvalRecord]) -> EvalSummary {
    let mut by_method: BTreeMap<Method, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r);
    }

    let mut methods = Vec::new();
    for (&method, rs) in &by_method {
        let mut psnr: Vec<f64> = rs.iter().map(|r| capped_psnr(r.psnr_db)).collect();
        let mut ssim: Vec<f64> = rs.iter().map(|r| r.ssim).collect();
        let mut vif: Vec<f64> = rs.iter().map(|r| r.vif).collect();
        methods.push(MethodSummary {
            method,
            n: rs.len(),
            psnr: stats_of(&mut psnr),
            ssim: stats_of(&mut ssim),
            vif: stats_of(&mut vif),
        });
    }

    let mut significance = Vec::new();
    if let Some(ae_records) = by_method.get(&Method::Ae) {
        let ae_by_key: BTreeMap<(&str, usize), &EvalRecord> = ae_records
            .iter()
            .map(|r| ((r.volume_id.as_str(), r.slice_index), *r))
            .collect();
        for (&method, rs) in &by_method {
            if method == Method::Ae {
                continue;
            }
            let mut pairs: Vec<(&EvalRecord, &EvalRecord)> = Vec::new();
            for r in rs {
                if let Some(ae) = ae_by_key.get(&(r.volume_id.as_str(), r.slice_index)) {
                    pairs.push((ae, r));
                }
            }
            for metric in [MetricKind::Psnr, MetricKind::Ssim, MetricKind::Vif] {
                let pick = |r: &EvalRecord| match metric {
                    MetricKind::Psnr => capped_psnr(r.psnr_db),
                    MetricKind::Ssim => r.ssim,
                    MetricKind::Vif => r.vif,
                };
                let a: Vec<f64> = pairs.iter().map(|(ae, _)| pick(ae)).collect();
                let b: Vec<f64> = pairs.iter().map(|(_, base)| pick(base)).collect();
                let p_value = wilcoxon_one_sided_greater(&a, &b).ok();
                significance.push(Significance {
                    baseline: method,
                    metric,
                    n_pairs: pairs.len(),
                    p_value,
                });
            }
        }
    }

    EvalSummary {
        methods,
        significance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    StructuredText,
}

/// Serialize records (CSV) or the summary (structured text) to `path`.
/// CSV rows are sorted by (volume_id, slice_index, method) and encode an
/// infinite PSNR as the literal `inf`.
pub fn export_report(
    summary: &EvalSummary,
    records: &[EvalRecord],
    path: &Path,
    format: ReportFormat,
) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => render_records_csv(records),
        ReportFormat::StructuredText => render_summary(summary),
    };
    crate::io::write_atomic(path, text.as_bytes())
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn render_records_csv(records: &[EvalRecord]) -> String {
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.volume_id, a.slice_index, a.method).cmp(&(&b.volume_id, b.slice_index, b.method))
    });
    let mut out = String::from("volume_id,slice_index,method,psnr_db,ssim,vif\n");
    for r in sorted {
        let id = r.volume_id.replace([',', '\n', '\r'], "_");
        out.push_str(&format!(
            "{id},{},{},{},{},{}\n",
            r.slice_index,
            r.method,
            fmt_metric(r.psnr_db),
            fmt_metric(r.ssim),
            fmt_metric(r.vif)
        ));
    }
    out
}

pub fn parse_records_csv(text: &str) -> Result<Vec<EvalRecord>> {
    let bad = |line: &str, what: &str| {
        Error::Format {
            path: "report.csv".into(),
            detail: format!("{what} in line {line:?}"),
        }
    };
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "volume_id,slice_index,method,psnr_db,ssim,vif" {
        return Err(bad(header, "unexpected header"));
    }
    let mut records = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(bad(line, "expected 6 fields"));
        }
        let parse_f = |s: &str| -> Result<f64> {
            if s == "inf" {
                Ok(f64::INFINITY)
            } else {
                s.parse::<f64>().map_err(|_| bad(line, "unparsable number"))
            }
        };
        records.push(EvalRecord {
            volume_id: parts[0].to_string(),
            slice_index: parts[1].parse().map_err(|_| bad(line, "bad slice index"))?,
            method: parts[2].parse()?,
            psnr_db: parse_f(parts[3])?,
            ssim: parse_f(parts[4])?,
            vif: parse_f(parts[5])?,
        });
    }
    Ok(records)
}

pub fn render_summary(summary: &EvalSummary) -> String {
    let mut out = String::from("aniso-sr evaluation summary\n");
    out.push_str("metric_variants: psnr=PSNR(peak=1.0, inf capped at 100 dB in statistics) ");
    out.push_str("ssim=SSIM(gaussian 11x11, sigma 1.5) vif=VIFp(pixel domain, 4 scales, sigma_nsq=2)\n");
    out.push_str("quartiles: linear interpolation between closest ranks\n");
    for m in &summary.methods {
        out.push_str(&format!("method {}: n={}", m.method, m.n));
        for (name, s) in [("psnr", &m.psnr), ("ssim", &m.ssim), ("vif", &m.vif)] {
            out.push_str(&format!(
                " | {name} mean={} median={} q1={} q3={}",
                fmt_metric(s.mean),
                fmt_metric(s.median),
                fmt_metric(s.q1),
                fmt_metric(s.q3)
            ));
        }
        out.push('\n');
    }
    if !summary.significance.is_empty() {
        out.push_str("wilcoxon one-sided (ae > baseline):\n");
        for s in &summary.significance {
            match s.p_value {
                Some(p) => out.push_str(&format!(
                    "  {} {}: p={} n={}\n",
                    s.baseline, s.metric, p, s.n_pairs
                )),
                None => out.push_str(&format!(
                    "  {} {}: p=absent (degenerate or <5 nonzero differences) n={}\n",
                    s.baseline, s.metric, s.n_pairs
                )),
            }
        }
    }
    out
}

/// Per-slice metric lines plus a mean, as printed by the metrics command.
pub fn render_metrics_text(rows: &[(usize, crate::metrics::MetricResult)]) -> String {
    let mut out = String::new();
    let mut mean = (0.0f64, 0.0f64, 0.0f64);
    for (idx, m) in rows {
        out.push_str(&format!(
            "slice {idx}: psnr_db={} ssim={} vif={}\n",
            fmt_metric(m.psnr_db),
            fmt_metric(m.ssim),
            fmt_metric(m.vif)
        ));
        mean.0 += capped_psnr(m.psnr_db);
        mean.1 += m.ssim;
        mean.2 += m.vif;
    }
    let n = rows.len().max(1) as f64;
    out.push_str(&format!(
        "mean: psnr_db={} ssim={} vif={}\n",
        fmt_metric(mean.0 / n),
        fmt_metric(mean.1 / n),
        fmt_metric(mean.2 / n)
    ));
    out
}

/// Parse the metrics command output back into rows; the mean line is
/// returned separately.
pub fn parse_metrics_text(
    text: &str,
) -> Result<(Vec<(usize, crate::metrics::MetricResult)>, crate::metrics::MetricResult)> {
    let bad = |line: &str| Error::Format {
        path: "metrics.txt".into(),
        detail: format!("unparsable line {line:?}"),
    };
    let parse_triple = |line: &str| -> Result<crate::metrics::MetricResult> {
        let mut psnr = None;
        let mut ssim = None;
        let mut vif = None;
        for tok in line.split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                let value = if v == "inf" {
                    f64::INFINITY
                } else {
                    v.parse().map_err(|_| bad(line))?
                };
                match k {
                    "psnr_db" => psnr = Some(value),
                    "ssim" => ssim = Some(value),
                    "vif" => vif = Some(value),
                    _ => return Err(bad(line)),
                }
            }
        }
        match (psnr, ssim, vif) {
            (Some(p), Some(s), Some(v)) => Ok(crate::metrics::MetricResult {
                psnr_db: p,
                ssim: s,
                vif: v,
            }),
            _ => Err(bad(line)),
        }
    };
    let mut rows = Vec::new();
    let mut mean = None;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("slice ") {
            let (idx_str, _) = rest.split_once(':').ok_or_else(|| bad(line))?;
            let idx: usize = idx_str.trim().parse().map_err(|_| bad(line))?;
            rows.push((idx, parse_triple(line)?));
        } else if line.starts_with("mean:") {
            mean = Some(parse_triple(line)?);
        }
    }
    let mean = mean.ok_or_else(|| bad("missing mean line"))?;
    Ok((rows, mean))
}

/// Normalize, resample in-plane, and center-crop to dimensions divisible by
/// `crop_multiple` (the model's downsampling factor).
pub fn preprocess_for_model(
    v: &Volume,
    target_inplane: (f32, f32),
    crop_multiple: usize,
) -> Result<Volume> {
    let normalized = v.percentile_normalize(1.0, 99.0)?;
    let resampled = normalized.resample_inplane(target_inplane)?;
    crop_to_multiple(&resampled, crop_multiple)
}

/// Center-crop in-plane dims down to the nearest multiple of `multiple`.
pub fn crop_to_multiple(v: &Volume, multiple: usize) -> Result<Volume> {
    let (_, rows, cols) = v.dims();
    let new_rows = rows - rows % multiple;
    let new_cols = cols - cols % multiple;
    if new_rows == 0 || new_cols == 0 {
        return Err(Error::Size(format!(
            "volume {rows}x{cols} smaller than the required multiple of {multiple}"
        )));
    }
    v.center_crop(new_rows, new_cols)
}
