//! Central finite-difference gradient checks.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of every registered backward rule.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Padding, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    /// Worst `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)` over inputs.
    pub rel_error: f64,
    pub checked_entries: usize,
}

impl CheckResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.rel_error < tol
    }
}

/// Compares backprop gradients of the scalar `f(inputs)` against central
/// differences with step `h`. At most `max_entries` coordinates per input
/// are probed (chosen at random), or all of them when `None`.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor],
    h: f64,
    max_entries: Option<usize>,
    rng: &mut impl Rng,
    f: F,
) -> Result<CheckResult>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.leaf(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().data()[0])
    };

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let picks: Vec<usize> = match max_entries {
            Some(m) if m < n => (0..m).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &j in &picks {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].data()[j];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        checked += picks.len();
        let denom = na.sqrt() + nn.sqrt();
        if denom > 1e-12 {
            worst = worst.max(diff.sqrt() / denom);
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        rel_error: worst,
        checked_entries: checked,
    })
}

pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Contracts an arbitrary-shaped output to a scalar with fixed random
/// weights so every output coordinate contributes to the gradient.
pub fn weighted_sum<'t>(x: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_5CA1E);
    let w = randn(&x.shape(), &mut rng);
    Ok(x.mul(x.tape().constant(w))?.sum())
}

/// Gradient checks for every differentiable tensor op, each on three
/// random shapes.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut out = Vec::new();
    let shapes: [(usize, usize, usize); 3] = [(2, 3, 4), (1, 5, 3), (3, 2, 6)];
    for (si, &(a, b, c)) in shapes.iter().enumerate() {
        let s = seed.wrapping_add(si as u64 * 1000);
        let x3 = randn(&[a, b, c], &mut rng);
        let m2 = randn(&[b, c], &mut rng);
        let bias = randn(&[c], &mut rng);
        macro_rules! run {
            ($name:expr, $inputs:expr, $f:expr) => {
                out.push(check(&format!("{}[{a}x{b}x{c}]", $name), $inputs, h, None, &mut rng, $f)?);
            };
        }
        run!("add", &[x3.clone(), bias.clone()], |_, v| weighted_sum(v[0].add(v[1])?, s));
        run!("mul", &[x3.clone(), m2.clone()], |_, v| weighted_sum(v[0].mul(v[1])?, s));
        run!("scale", std::slice::from_ref(&x3), |_, v| weighted_sum(v[0].scale(-1.7), s));
        let wmat = randn(&[c, a + 1], &mut rng);
        run!("matmul", &[m2.clone(), wmat.clone()], |_, v| weighted_sum(v[0].matmul(v[1])?, s));
        let bvec = randn(&[a + 1], &mut rng);
        run!("dense", &[x3.clone(), wmat.clone(), bvec], |_, v| {
            weighted_sum(v[0].dense(v[1], Some(v[2]))?, s)
        });
        let y3 = randn(&[a, b + 1, c], &mut rng);
        run!("batch_matmul_t", &[x3.clone(), y3.clone()], |_, v| {
            weighted_sum(v[0].batch_matmul(v[1], true)?, s)
        });
        run!("transpose", std::slice::from_ref(&x3), |_, v| weighted_sum(v[0].transpose()?, s));
        run!("permute", std::slice::from_ref(&x3), |_, v| weighted_sum(v[0].permute(&[2, 0, 1])?, s));
        run!("concat", &[x3.clone(), y3.clone()], |_, v| {
            weighted_sum(Var::concat(&[v[0], v[1]], 1)?, s)
        });
        run!("sigmoid", std::slice::from_ref(&x3), |_, v| weighted_sum(v[0].sigmoid(), s));
        run!("relu", std::slice::from_ref(&x3), |_, v| weighted_sum(v[0].relu(), s));
        run!("softmax", std::slice::from_ref(&x3), |_, v| weighted_sum(v[0].softmax(1)?, s));
        let gain = randn(&[c], &mut rng);
        run!("layer_norm", &[x3.clone(), gain, bias.clone()], |_, v| {
            weighted_sum(v[0].layer_norm(v[1], v[2], 1e-6)?, s)
        });
        let kern = randn(&[2, b, 3], &mut rng);
        let kb = randn(&[2], &mut rng);
        run!("conv1d_same", &[x3.clone(), kern.clone(), kb.clone()], |_, v| {
            weighted_sum(v[0].conv1d(v[1], Some(v[2]), Padding::Same)?, s)
        });
        run!("conv1d_causal", &[x3.clone(), kern, kb], |_, v| {
            weighted_sum(v[0].conv1d(v[1], Some(v[2]), Padding::Causal)?, s)
        });
        run!("global_maxpool", std::slice::from_ref(&x3), |_, v| weighted_sum(v[0].global_maxpool(2)?, s));
        run!("prefix_max", std::slice::from_ref(&x3), |_, v| weighted_sum(v[0].prefix_max(2)?, s));
        let table = randn(&[5, c], &mut rng);
        let ids: Vec<usize> = (0..a * b).map(|i| (i * 3 + 1) % 5).collect();
        run!("embedding_lookup", &[table], |_, v| {
            weighted_sum(v[0].embedding_lookup(&ids, &[a, b])?, s)
        });
        let targets: Vec<usize> = (0..a * b).map(|i| i % c).collect();
        let active: Vec<bool> = (0..a * b).map(|i| i % 4 != 3).collect();
        run!("cross_entropy", std::slice::from_ref(&x3), |_, v| {
            v[0].cross_entropy_with_logits(&targets, &active)
        });
        let mask: Vec<f64> = (0..a * b * c).map(|i| if i % 5 == 4 { 0.0 } else { 1.0 }).collect();
        run!("normalize_power", std::slice::from_ref(&x3), |_, v| {
            weighted_sum(v[0].normalize_power(Some(&mask), 1.0)?, s)
        });
    }
    // one value consumed on two paths
    let x = randn(&[3, 4], &mut rng);
    out.push(check("diamond", &[x], h, None, &mut rng, |_, v| {
        let left = v[0].sigmoid();
        let right = v[0].scale(2.0).relu();
        weighted_sum(left.mul(right)?.add(v[0])?, seed)
    })?);
    Ok(out)
}
