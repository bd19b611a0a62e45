//! Central finite-difference check of graph gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub eps: f64,
    /// Coordinates probed per input; all of them when the input is smaller.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_coords: 64,
            seed: 0,
        }
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.scalar(out)
}

/// Largest relative error `‖a − n‖ / max(‖a‖, ‖n‖)` over the inputs, where
/// `a` and `n` are the analytic and numeric gradients on the probed coordinates.
pub fn gradcheck<F>(inputs: &[Tensor], f: F, opts: &GradcheckOptions) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|t| t.as_standard_layout().into_owned())
            .unwrap_or_else(|| Tensor::zeros(input.raw_dim()));
        let n = input.len();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.max_coords).into_vec()
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for c in coords {
            let mut probe = inputs.to_vec();
            let flat = probe[k].as_slice_mut().expect("standard layout");
            let orig = flat[c];
            flat[c] = orig + opts.eps;
            let plus = evaluate(&f, &probe)?;
            probe[k].as_slice_mut().unwrap()[c] = orig - opts.eps;
            let minus = evaluate(&f, &probe)?;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.as_slice().expect("standard layout")[c];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        if scale > 0.0 {
            worst = worst.max(diff2.sqrt() / scale);
        }
    }
    Ok(worst)
}
