//! Objective metrics and aggregation.
//!
//! WER here is computed over symbol ids: the synthetic world has no
//! orthography, so word-level error rate becomes phoneme-symbol error rate.
//! Rates are kept as ratios internally and only formatted as percentages in
//! reports.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Ingested signal-quality scores for one utterance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub si_sdr_db: f64,
    pub pesq: f64,
    pub stoi: f64,
}

pub const MIN_SI_SDR_DB: f64 = 10.0;
pub const MIN_PESQ: f64 = 2.5;
pub const MIN_STOI: f64 = 0.8;

/// Corpus quality gate; all thresholds inclusive.
pub fn quality_pass(q: &QualityMetrics) -> bool {
    q.si_sdr_db >= MIN_SI_SDR_DB && q.pesq >= MIN_PESQ && q.stoi >= MIN_STOI
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<S: PartialEq>(reference: &[S], hypothesis: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Edit distance over reference length. May exceed 1.
pub fn wer<S: PartialEq>(reference: &[S], hypothesis: &[S]) -> Result<f64> {
    ensure!(!reference.is_empty(), Contract, "WER needs a non-empty reference");
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    ensure!(u.len() == v.len(), Dimension, "vectors of length {} and {}", u.len(), v.len());
    let (nu, nv) = (norm(u), norm(v));
    ensure!(nu > 0.0 && nv > 0.0, Contract, "cosine similarity of a zero vector");
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Scale-invariant SDR in dB, clamped to ±60 dB.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    ensure!(
        !reference.is_empty() && estimate.len() == reference.len(),
        Dimension,
        "signals of length {} and {}",
        estimate.len(),
        reference.len()
    );
    let ref_power: f64 = reference.iter().map(|x| x * x).sum();
    ensure!(ref_power > 0.0, Contract, "SI-SDR against a zero reference");
    let alpha = estimate.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / ref_power;
    let target_power = alpha * alpha * ref_power;
    let residual: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    if residual <= 1e-12 * target_power {
        return Ok(SI_SDR_CAP_DB);
    }
    if target_power == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target_power / residual).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Real-time factor: codec token rate over generation token rate.
pub fn rtf(gen_tokens_per_sec: f64, codec_tokens_per_sec: f64) -> Result<f64> {
    ensure!(
        gen_tokens_per_sec > 0.0 && codec_tokens_per_sec > 0.0,
        Contract,
        "rates must be positive"
    );
    Ok(codec_tokens_per_sec / gen_tokens_per_sec)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiSummary {
    pub n: usize,
    pub mean: f64,
    pub ci95_halfwidth: f64,
}

/// Two-sided 97.5% Student-t quantiles for df = 1..=30.
const T_975: [f64; 30] = [
    12.706_204_7, 4.302_652_7, 3.182_446_3, 2.776_445_1, 2.570_581_8, 2.446_911_9, 2.364_624_3,
    2.306_004_1, 2.262_157_2, 2.228_138_9, 2.200_985_2, 2.178_812_8, 2.160_368_7, 2.144_786_7,
    2.131_449_5, 2.119_905_3, 2.109_815_5, 2.100_922_0, 2.093_024_1, 2.085_963_4, 2.079_613_8,
    2.073_873_1, 2.068_657_6, 2.063_898_6, 2.059_538_6, 2.055_529_4, 2.051_830_5, 2.048_407_1,
    2.045_229_6, 2.042_272_5,
];

pub fn t_quantile_975(df: usize) -> f64 {
    match df {
        0 => f64::INFINITY,
        1..=30 => T_975[df - 1],
        _ => 1.96,
    }
}

/// Mean with a t-based 95% confidence half-width.
pub fn mean_ci95(samples: &[f64]) -> Result<CiSummary> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Contract(format!("mean_ci95 needs at least 2 samples, got {n}")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let halfwidth = t_quantile_975(n - 1) * var.sqrt() / (n as f64).sqrt();
    Ok(CiSummary { n, mean, ci95_halfwidth: halfwidth })
}
