//! Browser front end for `scd-core`.
//!
//! Three operations are exported to JavaScript, each returning a JSON string:
//! the fused-information curve over α for two hand-entered channels, the mean
//! leakage signature of one instruction, and the per-instruction cycle budget
//! of the real-time datapath. The plain-Rust functions underneath are what the
//! native tests exercise.

use scd_core::fuse::{fused_mi, solve_alpha, AlphaBranch};
use scd_core::harness::cycle_budget;
use scd_core::infomath::ClassStats;
use scd_core::leaksim::{GroupTable, LeakModel, LeakParams, EM, POWER};
use scd_core::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct AlphaCurve {
    pub alpha: Vec<f64>,
    pub mi: Vec<f64>,
    pub alpha_star: f64,
    pub mi_star: f64,
    pub branch: AlphaBranch,
    pub mi_power: f64,
    pub mi_em: f64,
}

#[derive(Debug, Serialize)]
pub struct Signature {
    pub name: String,
    pub group: usize,
    pub power: Vec<f64>,
    pub em: Vec<f64>,
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split([',', ' ', ';'])
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("not a number: {s:?}")))
        })
        .collect()
}

fn channel(means: &str, sigmas: &str) -> Result<ClassStats> {
    let m = parse_list(means)?;
    let s = parse_list(sigmas)?;
    if m.is_empty() {
        return Err(Error::InvalidArgument("at least one class is needed".into()));
    }
    let n = m.len();
    ClassStats::from_moments(m, s, vec![1.0 / n as f64; n])
}

/// Fused information on an even grid of `steps + 1` weights, plus the optimum.
/// Means and sigmas are comma separated, one entry per class.
pub fn alpha_curve(
    power_means: &str,
    power_sigmas: &str,
    em_means: &str,
    em_sigmas: &str,
    steps: usize,
) -> Result<AlphaCurve> {
    let p = channel(power_means, power_sigmas)?;
    let e = channel(em_means, em_sigmas)?;
    if p.n_classes() != e.n_classes() {
        return Err(Error::LengthMismatch {
            left: p.n_classes(),
            right: e.n_classes(),
        });
    }
    let steps = steps.clamp(2, 2000);
    let alpha: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    let mi = alpha.iter().map(|&a| fused_mi(&p, &e, a)).collect::<Result<Vec<_>>>()?;
    let best = solve_alpha(&p, &e)?;
    Ok(AlphaCurve {
        mi_power: mi[steps],
        mi_em: mi[0],
        alpha,
        mi,
        alpha_star: best.alpha,
        mi_star: best.fused_mi,
        branch: best.branch,
    })
}

pub fn instruction_names() -> Vec<String> {
    GroupTable::avr().names().to_vec()
}

/// Noiseless power and EM waveform of `instr` under the default simulator.
pub fn signature(instr: usize, points_per_cycle: usize, seed: u64) -> Result<Signature> {
    let params = LeakParams {
        seed,
        ..LeakParams::default().with_points_per_cycle(points_per_cycle)
    };
    let model = LeakModel::new(params, GroupTable::avr())?;
    let table = model.table();
    table.check(instr)?;
    Ok(Signature {
        name: table.name(instr).to_string(),
        group: table.group_of(instr),
        power: model.signature(instr, POWER),
        em: model.signature(instr, EM),
    })
}

fn json<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = alphaCurve)]
pub fn alpha_curve_js(
    power_means: &str,
    power_sigmas: &str,
    em_means: &str,
    em_sigmas: &str,
    steps: usize,
) -> std::result::Result<String, JsError> {
    json(alpha_curve(power_means, power_sigmas, em_means, em_sigmas, steps))
}

#[wasm_bindgen(js_name = instructionNames)]
pub fn instruction_names_js() -> std::result::Result<String, JsError> {
    json(Ok(instruction_names()))
}

#[wasm_bindgen(js_name = signature)]
pub fn signature_js(instr: usize, points_per_cycle: usize, seed: u64) -> std::result::Result<String, JsError> {
    json(signature(instr, points_per_cycle, seed))
}

#[wasm_bindgen(js_name = cycleBudget)]
pub fn cycle_budget_js(w_star: usize, sampling_ratio: u32) -> std::result::Result<String, JsError> {
    let table = GroupTable::avr();
    let max_group = table.group_sizes().into_iter().max().unwrap_or(0);
    json(Ok(cycle_budget(w_star, table.n_groups(), max_group, sampling_ratio)))
}
