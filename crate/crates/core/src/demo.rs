//! Small deterministic artifacts for smoke tests, benches and the README:
//! a three-matrix BF16 bundle with matching calibration inputs, observation
//! records with a planted linear-in-γ target, and records whose accuracy is
//! an exact affine function of log-perplexity.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;

use crate::bundle::{save_bundle, ModelBundle, Role, Scope, WeightMatrix};
use crate::error::Result;
use crate::formula::{save_records, ObservationRecord};
use crate::rng;

pub const BUNDLE_DIR: &str = "demo_bundle";
pub const CALIB_DIR: &str = "demo_calib";
pub const PLANTED_CSV: &str = "planted_f1.csv";
pub const PPL_ACC_CSV: &str = "ppl_acc.csv";

/// Intercept and slope of the planted relative degradation `a + b·γ`.
pub const PLANTED: (f64, f64) = (0.7, -0.6);

const SHAPES: [(&str, Role, usize, usize); 3] = [
    ("layers.0.attn.v", Role::AttnV, 64, 64),
    ("layers.0.mlp.up", Role::MlpUp, 96, 64),
    ("layers.0.mlp.down", Role::MlpDown, 64, 96),
];

/// Gaussian weights with column j scaled by (j+1)^-0.6, giving a decaying
/// spectrum, rounded to BF16.
pub fn demo_bundle(seed: u64) -> Result<ModelBundle> {
    let mut r = rng::stream(seed);
    let matrices = SHAPES
        .iter()
        .map(|&(name, role, rows, cols)| {
            let mut w = rng::gaussian_matrix(&mut r, rows, cols) * 0.05;
            for (j, mut c) in w.column_iter_mut().enumerate() {
                c *= ((j + 1) as f64).powf(-0.6);
            }
            WeightMatrix::bf16_from_dmatrix(name, role, 0, &w)
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata = BTreeMap::from([("source".to_string(), "demo".to_string())]);
    ModelBundle::new(matrices, metadata)
}

/// Calibration inputs (samples×cols) named after the demo weights, with
/// log-normal per-channel scales so activation-aware methods differ from
/// plain truncation.
pub fn demo_calibration(samples: usize, seed: u64) -> Result<ModelBundle> {
    let mut r = rng::substream(seed, 1);
    let matrices = SHAPES
        .iter()
        .map(|&(name, role, _, cols)| {
            let scales: Vec<f64> = rng::gaussian_vec(&mut r, cols).iter().map(|z| (0.7 * z).exp()).collect();
            let x = rng::gaussian_matrix(&mut r, samples, cols) * DMatrix::from_diagonal(&scales.into());
            WeightMatrix::f32_from_dmatrix(name, role, 0, &x)
        })
        .collect::<Result<Vec<_>>>()?;
    ModelBundle::new(matrices, BTreeMap::new())
}

fn base_record<R: Rng>(r: &mut R, method: &str, task: &str, gamma: f64) -> ObservationRecord {
    let log_n = r.random_range(18.0..22.0);
    let rho_s = r.random_range(5.0..40.0);
    let rho_eff = rho_s * r.random_range(2.0..6.0);
    let k95 = rho_eff * r.random_range(1.0..1.5);
    ObservationRecord {
        method: method.into(),
        task: task.into(),
        layer: Scope::Both,
        gamma,
        log_n,
        log_n_comp: log_n + gamma.ln(),
        bits: r.random_range(9.0..13.0),
        rho_s_bar: rho_s,
        rho_eff_bar: rho_eff,
        svd_rank: r.random_range(50.0..400.0),
        entropy: Some(r.random_range(2.0..6.0)),
        k95_bar: Some(k95),
        k99_bar: Some(k95 * r.random_range(1.1..1.4)),
        gamma_attn: Some(gamma),
        gamma_mlp: Some(gamma),
        ppl: None,
        ppl0: None,
        acc: None,
        acc0: None,
    }
}

/// `n` records whose relative accuracy degradation is exactly
/// `PLANTED.0 + PLANTED.1·γ`; every other predictor is random.
pub fn planted_records(n: usize, seed: u64) -> Vec<ObservationRecord> {
    let mut r = rng::substream(seed, 2);
    let methods = ["vanilla", "asvd", "svdllm"];
    (0..n)
        .map(|i| {
            let gamma = r.random_range(0.2..0.95);
            let mut rec = base_record(&mut r, methods[i % methods.len()], "demo", gamma);
            let y = PLANTED.0 + PLANTED.1 * gamma;
            let acc0 = 0.8;
            let ppl0 = 12.0;
            rec.acc0 = Some(acc0);
            rec.acc = Some(acc0 * (1.0 - y));
            rec.ppl0 = Some(ppl0);
            rec.ppl = Some(ppl0 * (2.0 * y).exp());
            rec
        })
        .collect()
}

/// Per task, accuracy = a − b·ln P exactly, so −ln P correlates with
/// accuracy at r = 1.
pub fn ppl_acc_records(seed: u64) -> Vec<ObservationRecord> {
    let mut r = rng::substream(seed, 3);
    let tasks = [("hellaswag", 0.95, 0.12), ("piqa", 0.99, 0.1), ("arc_easy", 0.9, 0.15)];
    let mut out = Vec::new();
    for (task, a, b) in tasks {
        for _ in 0..12 {
            let gamma = r.random_range(0.2..0.95);
            let mut rec = base_record(&mut r, "vanilla", task, gamma);
            let ppl = r.random_range(8.0..40.0);
            rec.ppl0 = Some(8.0);
            rec.ppl = Some(ppl);
            rec.acc0 = Some(a - b * 8f64.ln());
            rec.acc = Some(a - b * f64::ln(ppl));
            out.push(rec);
        }
    }
    out
}

/// Writes every demo artifact into `dir`.
pub fn write_demo_data(dir: impl AsRef<Path>, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    save_bundle(&demo_bundle(seed)?, dir.join(BUNDLE_DIR))?;
    save_bundle(&demo_calibration(128, seed)?, dir.join(CALIB_DIR))?;
    save_records(dir.join(PLANTED_CSV), &planted_records(50, seed))?;
    save_records(dir.join(PPL_ACC_CSV), &ppl_acc_records(seed))?;
    Ok(())
}
