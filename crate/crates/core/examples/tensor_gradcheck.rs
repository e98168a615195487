//! Builds a small network on the tape, backpropagates, and compares every
//! gradient entry with a central finite difference.

use imgnav::tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn net<'t>(tape: &'t Tape, p: &[Var<'t>]) -> Var<'t> {
    let h = p[0].matmul(&p[1]).unwrap().add_bias(&p[2]).unwrap().gelu();
    let g = tape.constant(&Tensor::full(&[4], 1.0));
    let b = tape.constant(&Tensor::zeros(&[4]));
    let h = h.layer_norm(&g, &b, 1e-5).unwrap();
    h.softmax(1)
        .unwrap()
        .scale(3.0)
        .cross_entropy(&[0, 3, 1], usize::MAX)
        .unwrap()
}

fn loss(params: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.constant(t)).collect();
    net(&tape, &vars).item()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = vec![
        Tensor::randn(&[3, 5], 1.0, &mut rng).with_requires_grad(true),
        Tensor::randn(&[5, 4], 1.0, &mut rng).with_requires_grad(true),
        Tensor::randn(&[4], 1.0, &mut rng).with_requires_grad(true),
    ];

    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t)).collect();
    let out = net(&tape, &vars);
    let grads = tape.backward(out).unwrap();
    println!("loss {:.6}, {} tape nodes", out.item(), tape.len());

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).unwrap();
        #[allow(clippy::needless_range_loop)]
        for j in 0..params[i].numel() {
            let mut plus = params.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = params.clone();
            minus[i].data_mut()[j] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel =
                (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    println!("max relative error {worst:.2e}");
}
