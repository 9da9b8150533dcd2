//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes plain numbers or strings and returns a JSON string, so
//! the page needs no bindings beyond `JSON.parse`. The `*_json` functions are
//! the native entry points the exports wrap.

use std::f64::consts::PI;

use gridless_doa::certificate::{autocorr, FilterSpec};
use gridless_doa::estimator::EstimateSettings;
use gridless_doa::geometry::{build_covering, build_design, difference_set, quality_params, DesignSpec};
use gridless_doa::harness::{checked_estimate, natural_r};
use gridless_doa::measurement::{add_matrix_noise, forward, sigma_for_snr, SpikeMeasure};
use gridless_doa::sdp::dual_polynomial;
use gridless_doa::trig::{build_gamma, ApproxMode};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

const CURVE_SAMPLES: usize = 720;

fn design_spec(kind: &str, size: usize, extent: f64) -> Result<DesignSpec, String> {
    Ok(match kind {
        "circular" => DesignSpec::Circular { m: size, radius: extent },
        "ula1d" => DesignSpec::Ula1d { m: size, extent },
        "lattice2d" => DesignSpec::Lattice2d { side: size, extent },
        other => return Err(format!("unknown design kind `{other}`")),
    })
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: `{t}`")))
        .collect()
}

#[derive(Serialize)]
struct Spike {
    theta_deg: f64,
    amp: f64,
}

fn spikes(mu: &SpikeMeasure) -> Vec<Spike> {
    mu.spikes
        .iter()
        .map(|s| Spike { theta_deg: s.theta.to_degrees(), amp: s.amp.re })
        .collect()
}

/// Simulate `b = M mu + noise` and run the gridless estimator.
///
/// `thetas_deg` and `amps` are comma-separated; `snr_db = inf` means no noise.
/// Returns the truth, the estimate and `|q|` of the dual polynomial.
#[allow(clippy::too_many_arguments)]
pub fn estimate_json(
    kind: &str,
    size: usize,
    extent: f64,
    thetas_deg: &str,
    amps: &str,
    snr_db: f64,
    relative_lambda: f64,
    l: usize,
    seed: u64,
) -> Result<String, String> {
    let design = build_design(&design_spec(kind, size, extent)?).map_err(|e| e.to_string())?;
    let thetas: Vec<f64> = parse_list(thetas_deg)?.into_iter().map(f64::to_radians).collect();
    let amps = parse_list(amps)?;
    let mu = SpikeMeasure::from_real(&thetas, &amps).map_err(|e| e.to_string())?;
    let clean = forward(&design, &mu);
    let b = if snr_db.is_finite() {
        add_matrix_noise(&clean, sigma_for_snr(&clean, snr_db), seed).map_err(|e| e.to_string())?
    } else {
        clean
    };
    let gamma = build_gamma(&design, l, ApproxMode::Truncated);
    let lambda = relative_lambda * b.frobenius();
    let rep = checked_estimate(&design, &gamma, &b, lambda, &EstimateSettings::default()).map_err(|e| e.to_string())?;
    let q = dual_polynomial(&rep.dual, &gamma);
    let curve: Vec<[f64; 2]> = (0..CURVE_SAMPLES)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / CURVE_SAMPLES as f64;
            [t.to_degrees(), q.eval(t).norm()]
        })
        .collect();
    Ok(json!({
        "positions": design.positions,
        "truth": spikes(&mu),
        "estimate": spikes(&rep.measure),
        "lambda": lambda,
        "iterations": rep.dual.iterations,
        "dual_curve": curve,
    })
    .to_string())
}

/// Difference set, covering cells and quality parameters at the natural radius.
pub fn covering_json(kind: &str, size: usize, extent: f64) -> Result<String, String> {
    let spec = design_spec(kind, size, extent)?;
    let design = build_design(&spec).map_err(|e| e.to_string())?;
    let diffs = difference_set(&design);
    let cov = build_covering(&design, spec.extent()).map_err(|e| e.to_string())?;
    let r = natural_r(&spec, &cov);
    let q = quality_params(&cov, r);
    Ok(json!({
        "positions": design.positions,
        "lags": diffs.points,
        "cells": cov.cells.iter().map(|c| &c.shape).collect::<Vec<_>>(),
        "r_cov": cov.r_cov,
        "R": r,
        "beta": q.beta,
        "gamma": q.gamma,
        "theta_hat": cov.theta_hat,
    })
    .to_string())
}

/// Normalized filter autocorrelation `a(omega)` on `[-pi, pi]`.
pub fn autocorr_json(big_m: usize, k: u32) -> Result<String, String> {
    let a = autocorr(&FilterSpec::new(big_m, k)).map_err(|e| e.to_string())?;
    let curve: Vec<[f64; 2]> = (0..=CURVE_SAMPLES)
        .map(|i| {
            let w = -PI + 2.0 * PI * i as f64 / CURVE_SAMPLES as f64;
            [w.to_degrees(), a.eval(w)]
        })
        .collect();
    Ok(json!({ "z": a.z, "truncation": a.coeffs.n_max, "curve": curve }).to_string())
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    kind: &str,
    size: usize,
    extent: f64,
    thetas_deg: &str,
    amps: &str,
    snr_db: f64,
    relative_lambda: f64,
    l: usize,
    seed: u32,
) -> Result<String, JsError> {
    estimate_json(kind, size, extent, thetas_deg, amps, snr_db, relative_lambda, l, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn covering(kind: &str, size: usize, extent: f64) -> Result<String, JsError> {
    covering_json(kind, size, extent).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn autocorrelation(big_m: usize, k: u32) -> Result<String, JsError> {
    autocorr_json(big_m, k).map_err(|e| JsError::new(&e))
}
