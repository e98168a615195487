#![allow(dead_code)]

use imgnav::tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed)).with_requires_grad(true)
}

/// Analytic gradients of `f` with respect to every input.
pub fn analytic<F>(inputs: &[Tensor], f: &F) -> Vec<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).expect("backward");
    vars.iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect()
}

fn eval<F>(inputs: &[Tensor], f: &F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t)).collect();
    f(&tape, &vars).item()
}

/// Central finite differences with step `h`, independent of the tape's
/// backward rules: only forward values are used.
pub fn finite_difference<F>(inputs: &[Tensor], f: &F, h: f64) -> Vec<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let mut out = Vec::new();
    #[allow(clippy::needless_range_loop)]
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].numel()];
        if inputs[i].requires_grad() {
            for j in 0..inputs[i].numel() {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[j] -= h;
                g[j] = (eval(&plus, f) - eval(&minus, f)) / (2.0 * h);
            }
        }
        out.push(g);
    }
    out
}

/// `||a - b|| / max(||a|| + ||b||, tiny)` over all inputs jointly.
pub fn relative_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut diff = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            diff += (p - q) * (p - q);
            norm_a += p * p;
            norm_b += q * q;
        }
    }
    diff.sqrt() / (norm_a.sqrt() + norm_b.sqrt()).max(1e-12)
}

pub fn gradcheck<F>(inputs: &[Tensor], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let a = analytic(inputs, &f);
    let n = finite_difference(inputs, &f, 1e-5);
    relative_error(&a, &n)
}

/// Reduces any tensor to a scalar through fixed random weights so that every
/// output entry carries a distinct sensitivity.
pub fn weighted_sum<'t>(tape: &'t Tape, x: Var<'t>, seed: u64) -> Var<'t> {
    let w = Tensor::randn(&x.shape(), 1.0, &mut rng(seed));
    x.mul(&tape.constant(&w)).unwrap().sum()
}
