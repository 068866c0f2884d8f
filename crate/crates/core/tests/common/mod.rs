//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use lxtts::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Builds a scalar loss from leaf inputs.
pub type LossFn<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

fn eval(inputs: &[Tensor<f64>], f: &LossFn) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    g.value(out).item().unwrap()
}

/// Norm-wise relative error between the tape gradient and central finite
/// differences, per input. `coords` limits how many entries per input are
/// probed (all when `None`).
pub fn gradient_errors(
    inputs: &[Tensor<f64>],
    f: &LossFn,
    coords: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars).unwrap();
    g.backward(loss).unwrap();

    let mut errors = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[i]).unwrap().data().to_vec();
        let probe: Vec<usize> = match coords {
            Some(k) if k < input.numel() => (0..k).map(|_| rng.random_range(0..input.numel())).collect(),
            _ => (0..input.numel()).collect(),
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &j in &probe {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus, f) - eval(&minus, f)) / (2.0 * FD_STEP);
            diff += (analytic[j] - numeric).powi(2);
            na += analytic[j].powi(2);
            nn += numeric.powi(2);
        }
        let denom = na.sqrt().max(nn.sqrt()).max(1e-12);
        errors.push(if na == 0.0 && nn == 0.0 { 0.0 } else { diff.sqrt() / denom });
    }
    errors
}

/// Reduces any tensor to a scalar through a fixed random weighting so every
/// output entry contributes a distinct gradient.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let mut r = rng(seed ^ 0x5eed);
    let w = random_tensor(&mut r, shape, 1.0);
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

/// Textbook Levenshtein recursion with memo table, independent of the
/// two-row implementation under test.
pub fn dp_edit_distance<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub loss: Box<LossFn<'static>>,
}

/// One randomized instance of every differentiable primitive.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut cases = Vec::new();
    let mut case = |name, inputs, loss: Box<LossFn<'static>>| cases.push(GradCase { name, inputs, loss });

    case(
        "matmul",
        vec![random_tensor(&mut r, vec![3, 4], 1.0), random_tensor(&mut r, vec![4, 2], 1.0)],
        Box::new(move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, seed)
        }),
    );
    for (name, which) in [("add", 0), ("sub", 1), ("mul", 2)] {
        case(
            name,
            vec![random_tensor(&mut r, vec![2, 3], 1.0), random_tensor(&mut r, vec![2, 3], 1.0)],
            Box::new(move |g, v| {
                let y = match which {
                    0 => g.add(v[0], v[1])?,
                    1 => g.sub(v[0], v[1])?,
                    _ => g.mul(v[0], v[1])?,
                };
                weighted_sum(g, y, seed)
            }),
        );
    }
    case(
        "add_row",
        vec![random_tensor(&mut r, vec![3, 4], 1.0), random_tensor(&mut r, vec![4], 1.0)],
        Box::new(move |g, v| {
            let y = g.add_row(v[0], v[1])?;
            weighted_sum(g, y, seed)
        }),
    );
    case(
        "scale_sum_mean",
        vec![random_tensor(&mut r, vec![5], 1.0)],
        Box::new(move |g, v| {
            let s = g.scale(v[0], 1.7)?;
            let sq = g.mul(s, s)?;
            let a = g.sum(sq)?;
            let b = g.mean(v[0])?;
            g.add(a, b)
        }),
    );
    for (name, which) in [("silu", 0), ("log_sigmoid", 1), ("softmax_lastdim", 2)] {
        case(
            name,
            vec![random_tensor(&mut r, vec![3, 5], 3.0)],
            Box::new(move |g, v| {
                let y = match which {
                    0 => g.silu(v[0])?,
                    1 => g.log_sigmoid(v[0])?,
                    _ => g.softmax_lastdim(v[0])?,
                };
                weighted_sum(g, y, seed)
            }),
        );
    }
    case(
        "rms_norm",
        vec![random_tensor(&mut r, vec![3, 6], 2.0), random_tensor(&mut r, vec![6], 1.5)],
        Box::new(move |g, v| {
            let y = g.rms_norm(v[0], v[1], 1e-6)?;
            weighted_sum(g, y, seed)
        }),
    );
    let ids: Vec<usize> = (0..6).map(|_| r.random_range(0..5)).collect();
    case(
        "embedding",
        vec![random_tensor(&mut r, vec![5, 3], 1.0)],
        Box::new(move |g, v| {
            let y = g.embedding(v[0], &ids)?;
            weighted_sum(g, y, seed)
        }),
    );
    let positions: Vec<usize> = (0..4).map(|_| r.random_range(0..300)).collect();
    case(
        "rope",
        vec![random_tensor(&mut r, vec![4, 8], 1.0)],
        Box::new(move |g, v| {
            let y = g.rope(v[0], &positions, 4, 10_000.0)?;
            weighted_sum(g, y, seed)
        }),
    );
    case(
        "causal_attention",
        vec![
            random_tensor(&mut r, vec![5, 8], 1.5),
            random_tensor(&mut r, vec![5, 8], 1.5),
            random_tensor(&mut r, vec![5, 8], 1.0),
        ],
        Box::new(move |g, v| {
            let y = g.causal_attention(v[0], v[1], v[2], 2)?;
            weighted_sum(g, y, seed)
        }),
    );
    let targets: Vec<usize> = (0..4).map(|_| r.random_range(0..7)).collect();
    let picks: Vec<(usize, usize)> = targets.iter().enumerate().map(|(i, &t)| (i, t)).take(3).collect();
    case(
        "cross_entropy_mean",
        vec![random_tensor(&mut r, vec![4, 7], 3.0)],
        Box::new(move |g, v| g.cross_entropy_mean(v[0], &targets)),
    );
    case(
        "log_prob_sum",
        vec![random_tensor(&mut r, vec![4, 7], 3.0)],
        Box::new(move |g, v| g.log_prob_sum(v[0], &picks)),
    );
    case(
        "mlp_2layer",
        vec![
            random_tensor(&mut r, vec![4, 3], 1.0),
            random_tensor(&mut r, vec![3, 5], 1.0),
            random_tensor(&mut r, vec![5], 0.5),
            random_tensor(&mut r, vec![5, 2], 1.0),
            random_tensor(&mut r, vec![2], 0.5),
        ],
        Box::new(move |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.add_row(h, v[2])?;
            let h = g.silu(h)?;
            let o = g.matmul(h, v[3])?;
            let o = g.add_row(o, v[4])?;
            let sq = g.mul(o, o)?;
            g.mean(sq)
        }),
    );
    cases
}

/// Full toy transformer: all parameters as inputs, cross-entropy loss on a
/// random sequence.
pub fn transformer_case(seed: u64) -> GradCase {
    use lxtts::model::{Model, ModelConfig, Segment, TokenSeq};
    let cfg = ModelConfig::default();
    let model = Model::<f64>::init(cfg.clone(), seed).unwrap();
    let mut r = rng(seed);
    let v = cfg.vocab();
    let phon: Vec<u32> = (0..4).map(|_| r.random_range(0..cfg.vocab_phoneme as u32)).collect();
    let prompt: Vec<u32> = (0..3).map(|_| v.audio_id(r.random_range(0..cfg.vocab_audio))).collect();
    let mut seq = TokenSeq::context(&v, &phon, &prompt);
    for _ in 0..3 {
        seq.push(v.audio_id(r.random_range(0..cfg.vocab_audio)), Segment::Gen);
    }
    let targets: Vec<usize> = (0..seq.len()).map(|_| r.random_range(0..cfg.vocab_size())).collect();
    let inputs = model.params().to_vec();
    GradCase {
        name: "transformer",
        inputs,
        loss: Box::new(move |g, vars| {
            let logits = model.forward_graph(g, vars, &seq)?;
            g.cross_entropy_mean(logits, &targets)
        }),
    }
}
