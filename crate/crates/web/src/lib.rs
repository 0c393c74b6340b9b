//! WebAssembly bindings for the browser demo in `www/`.

use nex_core::nexmodel::{mgp_moments, MgpHyper};
use nex_core::oracle::nex_representation;
use nex_core::simulate::{simulate, SimSpec};
use nex_core::Tensor3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

/// True edge probabilities of a bipartite NEX network, `i + n (j + m t)`.
pub fn simulate_probabilities(seed: u32, n: usize, m: usize, t: usize, length_scale: f64) -> Result<Vec<f64>, String> {
    let spec = SimSpec {
        n,
        m,
        t,
        length_scale,
        seed: seed as u64,
        holdout: Some(Vec::new()),
        ..SimSpec::default()
    };
    let sim = simulate(&spec).map_err(|e| e.to_string())?;
    Ok(sim.truth_pi.into_vec())
}

/// Prior `[mean, variance]` of the k-th weight of a multiplicative gamma process.
pub fn weight_moments(a1: f64, b1: f64, a2: f64, b2: f64, k: usize) -> Result<Vec<f64>, String> {
    let h = MgpHyper { a1, b1, a2, b2 };
    h.validate().map_err(|e| e.to_string())?;
    let (mean, var) = mgp_moments(&h, k).map_err(|e| e.to_string())?;
    Ok(vec![mean, var])
}

/// `[H0, H, K, factorization error, NEX error]` for a standard normal
/// log-odds tensor of the given shape.
pub fn representation_check(n: usize, m: usize, t: usize, seed: u32) -> Result<Vec<f64>, String> {
    if n * m * t == 0 || n * m * t > 20_000 {
        return Err("choose 1 <= N*M*T <= 20000".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let s = Tensor3::from_fn((n, m, t), |_, _, _| StandardNormal.sample(&mut rng));
    let (_, _, c) = nex_representation(&s, None).map_err(|e| e.to_string())?;
    Ok(vec![c.h0 as f64, c.h as f64, c.k as f64, c.factorization_error, c.nex_error])
}

#[wasm_bindgen(js_name = simulateProbabilities)]
pub fn simulate_probabilities_js(seed: u32, n: usize, m: usize, t: usize, length_scale: f64) -> Result<Vec<f64>, JsError> {
    simulate_probabilities(seed, n, m, t, length_scale).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = weightMoments)]
pub fn weight_moments_js(a1: f64, b1: f64, a2: f64, b2: f64, k: usize) -> Result<Vec<f64>, JsError> {
    weight_moments(a1, b1, a2, b2, k).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = representationCheck)]
pub fn representation_check_js(n: usize, m: usize, t: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    representation_check(n, m, t, seed).map_err(|e| JsError::new(&e))
}
