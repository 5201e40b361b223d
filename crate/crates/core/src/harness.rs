//! Evaluation harness: metric tables, best-of-N benchmarks, validity sweeps
//! and timing fits. Tables are TSV, curves CSV, summaries JSON. Timing
//! columns are kept out of the deterministic outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::gen_random_sequences;
use crate::decode::{half_decade_grid, best_of_n, sample_range, DecodeRequest, DesignSampler, Metric};
use crate::error::{Error, Result};
use crate::fold;
use crate::policy::PolicyCheckpoint;
use crate::sequence::Sequence;
use crate::structure::{Structure, StructureSet};
use crate::thermo::EnergyParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub id: usize,
    pub structure: String,
    pub length: usize,
    pub sequence: Option<String>,
    pub p: f64,
    pub ned: f64,
    pub is_mfe: bool,
    pub is_umfe: bool,
    pub samples: usize,
    pub failures: usize,
    /// Excluded from every deterministic output.
    #[serde(skip)]
    pub wall_time: f64,
    pub error: Option<String>,
}

impl BenchRow {
    fn failed(id: usize, y: &Structure, samples: usize, err: &Error) -> Self {
        BenchRow {
            id,
            structure: y.text().to_owned(),
            length: y.len(),
            sequence: None,
            p: 0.0,
            ned: 1.0,
            is_mfe: false,
            is_umfe: false,
            samples,
            failures: samples,
            wall_time: 0.0,
            error: Some(err.code().to_owned()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub structures: usize,
    pub mean_p: f64,
    pub mean_ned: f64,
    pub mfe_count: usize,
    pub umfe_count: usize,
}

impl Aggregate {
    pub fn of(rows: &[BenchRow]) -> Self {
        let n = rows.len().max(1) as f64;
        Aggregate {
            structures: rows.len(),
            mean_p: rows.iter().map(|r| r.p).sum::<f64>() / n,
            mean_ned: rows.iter().map(|r| r.ned).sum::<f64>() / n,
            mfe_count: rows.iter().filter(|r| r.is_mfe).count(),
            umfe_count: rows.iter().filter(|r| r.is_umfe).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub aggregate: Aggregate,
}

impl BenchReport {
    pub fn from_rows(rows: Vec<BenchRow>) -> Self {
        let aggregate = Aggregate::of(&rows);
        BenchReport { rows, aggregate }
    }

    /// Per-structure table followed by a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tstructure\tlength\tsequence\tp\tned\tis_mfe\tis_umfe\tsamples\tfailures\terror\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.id,
                r.structure,
                r.length,
                r.sequence.as_deref().unwrap_or("-"),
                r.p,
                r.ned,
                u8::from(r.is_mfe),
                u8::from(r.is_umfe),
                r.samples,
                r.failures,
                r.error.as_deref().unwrap_or("-"),
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "mean\t-\t-\t-\t{}\t{}\t{}\t{}\t-\t-\t-",
            a.mean_p, a.mean_ned, a.mfe_count, a.umfe_count
        );
        out
    }
}

fn row_for(id: usize, y: &Structure, x: &Sequence, params: &EnergyParams, samples: usize, failures: usize) -> Result<BenchRow> {
    let ev = fold::fold_summary(x, y, params)?;
    Ok(BenchRow {
        id,
        structure: y.text().to_owned(),
        length: y.len(),
        sequence: Some(x.to_string()),
        p: ev.probability,
        ned: ev.ned,
        is_mfe: ev.is_mfe,
        is_umfe: ev.is_umfe,
        samples,
        failures,
        wall_time: 0.0,
        error: None,
    })
}

/// Score given designs. An invalid design fails the whole call, naming its
/// row (0-based).
pub fn evaluate_designs(pairs: &[(Structure, Sequence)], params: &EnergyParams) -> Result<BenchReport> {
    for (row, (y, x)) in pairs.iter().enumerate() {
        fold::validate_design(x, y).map_err(|e| Error::Row {
            row,
            source: Box::new(e),
        })?;
    }
    let rows: Vec<Result<BenchRow>> = pairs
        .par_iter()
        .enumerate()
        .map(|(row, (y, x))| {
            row_for(row, y, x, params, 1, 0).map_err(|e| Error::Row {
                row,
                source: Box::new(e),
            })
        })
        .collect();
    Ok(BenchReport::from_rows(rows.into_iter().collect::<Result<_>>()?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub report: BenchReport,
    /// Per structure: `(N, running best)` on the half-decade grid.
    pub curves: Vec<Vec<(usize, f64)>>,
    pub metric: Metric,
    pub n: usize,
    pub seed: u64,
}

impl BenchOutput {
    /// `structure_id,n,value` for every curve point.
    pub fn curves_csv(&self) -> String {
        let mut out = format!("structure_id,n,{}\n", self.metric);
        for (id, curve) in self.curves.iter().enumerate() {
            for (n, v) in curve {
                let _ = writeln!(out, "{id},{n},{v}");
            }
        }
        out
    }

    /// Mean over structures at each checkpoint.
    pub fn mean_curve(&self) -> Vec<(usize, f64)> {
        let grid = half_decade_grid(self.n);
        grid.iter()
            .enumerate()
            .map(|(g, &n)| {
                let vals: Vec<f64> = self.curves.iter().filter_map(|c| c.get(g).map(|p| p.1)).collect();
                (n, vals.iter().sum::<f64>() / vals.len().max(1) as f64)
            })
            .collect()
    }

    pub fn summary(&self, sampler: &str) -> BenchSummary {
        BenchSummary {
            schema_version: SCHEMA_VERSION,
            kind: "bench",
            sampler: sampler.to_owned(),
            metric: self.metric.name(),
            n: self.n,
            seed: self.seed,
            aggregate: self.report.aggregate.clone(),
            mean_curve: self.mean_curve(),
            failed_structures: self.report.rows.iter().filter(|r| r.error.is_some()).count(),
        }
    }

    pub fn timings(&self) -> Vec<TimingEntry> {
        self.report
            .rows
            .iter()
            .map(|r| TimingEntry {
                phase: "design".into(),
                length: r.length,
                seconds: r.wall_time,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub schema_version: u32,
    pub kind: &'static str,
    pub sampler: String,
    pub metric: &'static str,
    pub n: usize,
    pub seed: u64,
    pub aggregate: Aggregate,
    pub mean_curve: Vec<(usize, f64)>,
    pub failed_structures: usize,
}

impl BenchSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

/// Best-of-N per structure. The reported design is the best one under
/// `metric`; its probability, NED and MFE flags fill the row. A structure
/// whose sampling or scoring fails is marked and the run continues.
pub fn benchmark(
    sampler: &dyn DesignSampler,
    structures: &StructureSet,
    n: usize,
    metric: Metric,
    seed: u64,
    params: &EnergyParams,
) -> Result<BenchOutput> {
    if n == 0 {
        return Err(Error::Usage("best-of-N requires N >= 1".into()));
    }
    let grid = half_decade_grid(n);
    let results: Vec<(BenchRow, Vec<(usize, f64)>)> = structures
        .items
        .par_iter()
        .enumerate()
        .map(|(id, y)| {
            let start = Instant::now();
            let outcome = best_of_n(sampler, y, n, metric, params, seed, &grid).and_then(|b| {
                let row = match &b.best {
                    Some(x) => row_for(id, y, x, params, n, b.failures)?,
                    None => BenchRow::failed(id, y, n, &Error::EvaluationFailed("no sample could be scored".into())),
                };
                Ok((row, b.curve))
            });
            let (mut row, curve) = outcome.unwrap_or_else(|e| (BenchRow::failed(id, y, n, &e), Vec::new()));
            row.wall_time = start.elapsed().as_secs_f64();
            (row, curve)
        })
        .collect();
    let (rows, curves): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(BenchOutput {
        report: BenchReport::from_rows(rows),
        curves,
        metric,
        n,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub structure: String,
    pub length: usize,
    pub pairs: usize,
    pub unconstrained_invalidity: f64,
    pub constrained_invalidity: f64,
    /// Milliseconds per generated token.
    pub unconstrained_ms_per_token: f64,
    pub constrained_ms_per_token: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepBucket {
    pub bucket: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub structures: usize,
    pub unconstrained_invalidity: f64,
    pub constrained_invalidity: f64,
    pub unconstrained_ms_per_token: f64,
    pub constrained_ms_per_token: f64,
}

impl SweepBucket {
    /// Relative slowdown of constrained decoding.
    pub fn overhead(&self) -> f64 {
        self.constrained_ms_per_token / self.unconstrained_ms_per_token - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValiditySweep {
    pub rows: Vec<SweepRow>,
    /// Length quartiles, shortest first.
    pub buckets: Vec<SweepBucket>,
}

impl ValiditySweep {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "bucket\tlen_min\tlen_max\tstructures\tunconstrained_invalidity\tconstrained_invalidity\tunconstrained_ms_per_token\tconstrained_ms_per_token\toverhead\n",
        );
        for b in &self.buckets {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.3}",
                b.bucket,
                b.len_min,
                b.len_max,
                b.structures,
                b.unconstrained_invalidity,
                b.constrained_invalidity,
                b.unconstrained_ms_per_token,
                b.constrained_ms_per_token,
                b.overhead()
            );
        }
        out
    }
}

/// Split `0..n` (already in length order) into four near-equal quartiles.
fn quartiles(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..4)
        .map(|q| (q * n / 4)..((q + 1) * n / 4))
        .filter(|r| !r.is_empty())
        .collect()
}

/// Invalidity of unconstrained and constrained decoding per structure and
/// per length quartile, with per-token decode latency of both modes.
pub fn validity_sweep(ckpt: &PolicyCheckpoint, structures: &StructureSet, samples: usize, seed: u64) -> Result<ValiditySweep> {
    if samples == 0 {
        return Err(Error::Usage("samples_per_structure must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(structures.len());
    for y in structures {
        let tokens = (samples * y.len()) as f64;
        let run = |constrained: bool| -> Result<(f64, f64)> {
            let req = DecodeRequest::new(y.clone(), samples, seed, constrained);
            let start = Instant::now();
            let batch = sample_range(ckpt, &req, 0..samples)?;
            let ms = start.elapsed().as_secs_f64() * 1e3 / tokens;
            Ok((1.0 - batch.validity_rate(), ms))
        };
        let (u_inv, u_ms) = run(false)?;
        let (c_inv, c_ms) = run(true)?;
        rows.push(SweepRow {
            structure: y.text().to_owned(),
            length: y.len(),
            pairs: y.pairs().len(),
            unconstrained_invalidity: u_inv,
            constrained_invalidity: c_inv,
            unconstrained_ms_per_token: u_ms,
            constrained_ms_per_token: c_ms,
        });
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| (rows[i].length, i));
    let buckets = quartiles(order.len())
        .into_iter()
        .enumerate()
        .map(|(q, range)| {
            let members: Vec<&SweepRow> = order[range].iter().map(|&i| &rows[i]).collect();
            let k = members.len() as f64;
            let mean = |f: fn(&SweepRow) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / k;
            SweepBucket {
                bucket: q + 1,
                len_min: members.first().map_or(0, |r| r.length),
                len_max: members.last().map_or(0, |r| r.length),
                structures: members.len(),
                unconstrained_invalidity: mean(|r| r.unconstrained_invalidity),
                constrained_invalidity: mean(|r| r.constrained_invalidity),
                unconstrained_ms_per_token: mean(|r| r.unconstrained_ms_per_token),
                constrained_ms_per_token: mean(|r| r.constrained_ms_per_token),
            }
        })
        .collect();
    Ok(ValiditySweep { rows, buckets })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingEntry {
    pub phase: String,
    pub length: usize,
    pub seconds: f64,
}

/// Least-squares slope of `ln t` against `ln n`; `None` without two
/// distinct positive lengths.
pub fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(n, t)| n > 0 && t > 0.0)
        .map(|&(n, t)| ((n as f64).ln(), t.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 2 || sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub entries: Vec<TimingEntry>,
    pub slopes: BTreeMap<String, f64>,
}

impl TimingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,length,wall_time_s\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.phase, e.length, e.seconds);
        }
        out
    }

    pub fn slopes_csv(&self) -> String {
        let mut out = String::from("phase,loglog_slope\n");
        for (phase, s) in &self.slopes {
            let _ = writeln!(out, "{phase},{s}");
        }
        out
    }
}

/// Group timings by phase and fit an empirical complexity exponent to each.
pub fn timing_report(entries: Vec<TimingEntry>) -> TimingReport {
    let mut by_phase: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for e in &entries {
        by_phase.entry(e.phase.clone()).or_default().push((e.length, e.seconds));
    }
    let slopes = by_phase
        .into_iter()
        .filter_map(|(phase, pts)| loglog_slope(&pts).map(|s| (phase, s)))
        .collect();
    TimingReport { entries, slopes }
}

/// Time the full fold (MFE, partition function and pair probabilities) of a
/// random sequence at each length; the fastest of `reps` runs is recorded.
pub fn fold_timings(lengths: &[usize], reps: usize, seed: u64, params: &EnergyParams) -> Result<Vec<TimingEntry>> {
    let mut out = Vec::new();
    for (i, &n) in lengths.iter().enumerate() {
        let x = gen_random_sequences(1, n, n, seed.wrapping_add(i as u64))?.remove(0);
        let mut best = f64::INFINITY;
        for _ in 0..reps.max(1) {
            let start = Instant::now();
            fold::summarize(&x, params)?;
            best = best.min(start.elapsed().as_secs_f64());
        }
        out.push(TimingEntry {
            phase: "fold".into(),
            length: n,
            seconds: best,
        });
    }
    Ok(out)
}
