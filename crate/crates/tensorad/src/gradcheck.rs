//! Central finite-difference gradient checks.
//!
//! [`registry`] holds one case per differentiable op (exhaustive over
//! [`OpKind::DIFFERENTIABLE`]) plus the composite layers the models use,
//! including the second-order gradient-penalty path.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, OpKind, Var};
use crate::kernels::Window;
use crate::nn;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

type CaseFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub f: CaseFn,
}

impl Case {
    fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor<f64>>,
        f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            inputs,
            f: Box::new(f),
        }
    }

    pub fn run(&self) -> Result<GradCheck> {
        check(&self.name, &self.inputs, &self.f)
    }
}

/// Fixed positive weights that turn a tensor output into a scalar.
fn probe(shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| 0.5 + ((i * 7919) % 101) as f64 / 100.0)
}

fn scalarize(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let p = g.constant(probe(g.shape(out)));
    let y = g.mul(out, p)?;
    Ok(g.sum(y))
}

fn evaluate(inputs: &[Tensor<f64>], f: &CaseFn) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let loss = scalarize(&mut g, out)?;
    Ok(g.value(loss).item())
}

/// Compares the tape gradient of `Σ probe ⊙ f(inputs)` with central
/// differences. The error is `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)` per input, and the
/// worst input is reported.
pub fn check(name: &str, inputs: &[Tensor<f64>], f: &CaseFn) -> Result<GradCheck> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let loss = scalarize(&mut g, out)?;
    let grads = g.grad(loss, &vars)?;

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads[i] {
            Some(v) => g.value(v).data().to_vec(),
            None => vec![0.0; input.numel()],
        };
        let mut numeric = vec![0.0; input.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut probe_inputs = inputs.to_vec();
            probe_inputs[i].data_mut()[j] = input.data()[j] + FD_STEP;
            let up = evaluate(&probe_inputs, f)?;
            probe_inputs[i].data_mut()[j] = input.data()[j] - FD_STEP;
            let down = evaluate(&probe_inputs, f)?;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        worst = worst.max(diff / scale);
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_err: worst,
        passed: worst < REL_TOL,
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

/// Values bounded away from zero with random sign, so kinks are not straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// The case exercising one primitive op.
pub fn op_case(kind: OpKind) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e35 + kind as u64);
    let r = &mut rng;
    let name = kind.name();
    match kind {
        OpKind::Leaf => Case::new(name, vec![uniform(r, &[3], -1.0, 1.0)], |_, v| Ok(v[0])),
        OpKind::Add => Case::new(
            name,
            vec![
                uniform(r, &[2, 3], -1.0, 1.0),
                uniform(r, &[2, 3], -1.0, 1.0),
            ],
            |g, v| g.add(v[0], v[1]),
        ),
        OpKind::Sub => Case::new(
            name,
            vec![
                uniform(r, &[2, 3], -1.0, 1.0),
                uniform(r, &[2, 3], -1.0, 1.0),
            ],
            |g, v| g.sub(v[0], v[1]),
        ),
        OpKind::Mul => Case::new(
            name,
            vec![
                uniform(r, &[2, 3], -1.0, 1.0),
                uniform(r, &[2, 3], -1.0, 1.0),
            ],
            |g, v| g.mul(v[0], v[1]),
        ),
        OpKind::Div => Case::new(
            name,
            vec![
                uniform(r, &[2, 3], -1.0, 1.0),
                uniform(r, &[2, 3], 0.5, 1.5),
            ],
            |g, v| g.div(v[0], v[1]),
        ),
        OpKind::Scale => Case::new(name, vec![uniform(r, &[4], -1.0, 1.0)], |g, v| {
            Ok(g.scale(v[0], 1.7))
        }),
        OpKind::AddScalar => Case::new(name, vec![uniform(r, &[4], -1.0, 1.0)], |g, v| {
            Ok(g.add_scalar(v[0], -0.3))
        }),
        OpKind::Abs => Case::new(name, vec![away_from_zero(r, &[2, 4])], |g, v| {
            Ok(g.abs(v[0]))
        }),
        OpKind::Relu => Case::new(name, vec![away_from_zero(r, &[2, 4])], |g, v| {
            Ok(g.relu(v[0]))
        }),
        OpKind::LeakyRelu => Case::new(name, vec![away_from_zero(r, &[2, 4])], |g, v| {
            Ok(g.leaky_relu(v[0], nn::LEAKY_SLOPE))
        }),
        OpKind::Sqrt => Case::new(name, vec![uniform(r, &[5], 0.5, 2.0)], |g, v| {
            Ok(g.sqrt(v[0]))
        }),
        OpKind::RecipSafe => Case::new(name, vec![uniform(r, &[5], 0.5, 2.0)], |g, v| {
            Ok(g.recip_safe(v[0]))
        }),
        OpKind::Sum => Case::new(name, vec![uniform(r, &[2, 3, 2], -1.0, 1.0)], |g, v| {
            Ok(g.sum(v[0]))
        }),
        OpKind::Expand => Case::new(name, vec![uniform(r, &[1], -1.0, 1.0)], |g, v| {
            g.expand(v[0], &[2, 3])
        }),
        OpKind::SumAxis => Case::new(name, vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], |g, v| {
            g.sum_axis(v[0], 1)
        }),
        OpKind::ExpandAxis => Case::new(name, vec![uniform(r, &[2, 1, 3], -1.0, 1.0)], |g, v| {
            g.expand_axis(v[0], 1, 4)
        }),
        OpKind::Reshape => Case::new(name, vec![uniform(r, &[2, 6], -1.0, 1.0)], |g, v| {
            g.reshape(v[0], &[3, 4])
        }),
        OpKind::SwapLeading => Case::new(name, vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], |g, v| {
            g.swap_leading(v[0])
        }),
        OpKind::MatMul => Case::new(
            name,
            vec![
                uniform(r, &[3, 4], -1.0, 1.0),
                uniform(r, &[4, 5], -1.0, 1.0),
                uniform(r, &[4, 3], -1.0, 1.0),
                uniform(r, &[5, 4], -1.0, 1.0),
            ],
            |g, v| {
                // All four transpose combinations.
                let nn_ = g.matmul_t(v[0], false, v[1], false)?;
                let tn = g.matmul_t(v[2], true, v[1], false)?;
                let nt = g.matmul_t(v[0], false, v[3], true)?;
                let tt = g.matmul_t(v[2], true, v[3], true)?;
                let s = g.add(nn_, tn)?;
                let s = g.add(s, nt)?;
                g.add(s, tt)
            },
        ),
        OpKind::Unfold => Case::new(name, vec![uniform(r, &[2, 2, 5, 4], -1.0, 1.0)], |g, v| {
            g.unfold(v[0], Window::new(3, 2, 1))
        }),
        OpKind::Fold => Case::new(name, vec![uniform(r, &[18, 12], -1.0, 1.0)], |g, v| {
            g.fold(v[0], Window::new(3, 2, 1), [2, 2, 5, 4])
        }),
        OpKind::Concat => Case::new(
            name,
            vec![
                uniform(r, &[2, 1, 3], -1.0, 1.0),
                uniform(r, &[2, 2, 3], -1.0, 1.0),
                uniform(r, &[2, 3, 3], -1.0, 1.0),
            ],
            |g, v| g.concat(v, 1),
        ),
        OpKind::Narrow => Case::new(name, vec![uniform(r, &[2, 5, 3], -1.0, 1.0)], |g, v| {
            g.narrow(v[0], 1, 1, 3)
        }),
        OpKind::PadAxis => Case::new(name, vec![uniform(r, &[2, 2, 3], -1.0, 1.0)], |g, v| {
            g.pad_axis(v[0], 2, 1, 6)
        }),
        OpKind::PixelShuffle => {
            Case::new(name, vec![uniform(r, &[1, 8, 2, 3], -1.0, 1.0)], |g, v| {
                g.pixel_shuffle(v[0], 2)
            })
        }
        OpKind::PixelUnshuffle => {
            Case::new(name, vec![uniform(r, &[1, 2, 4, 6], -1.0, 1.0)], |g, v| {
                g.pixel_unshuffle(v[0], 2)
            })
        }
        OpKind::GatherCols => Case::new(name, vec![uniform(r, &[3, 5], -1.0, 1.0)], |g, v| {
            g.gather_cols(v[0], Arc::from([4usize, 0, 4, 2]))
        }),
        OpKind::ScatterCols => Case::new(name, vec![uniform(r, &[3, 4], -1.0, 1.0)], |g, v| {
            g.scatter_cols(v[0], Arc::from([4usize, 0, 4, 2]), 5)
        }),
    }
}

/// Composite layers and the second-order penalty path.
pub fn composite_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0de);
    let r = &mut rng;
    vec![
        Case::new(
            "conv2d",
            vec![
                uniform(r, &[2, 3, 6, 5], -1.0, 1.0),
                uniform(r, &[4, 3, 3, 3], -0.5, 0.5),
                uniform(r, &[4], -0.5, 0.5),
            ],
            |g, v| nn::conv2d(g, v[0], v[1], Some(v[2]), 2, 1),
        ),
        Case::new(
            "normalize_cols",
            vec![uniform(r, &[4, 6], -1.0, 1.0)],
            |g, v| nn::normalize_cols(g, v[0], 1e-12),
        ),
        Case::new(
            "upsample_nearest",
            vec![uniform(r, &[1, 2, 2, 3], -1.0, 1.0)],
            |g, v| nn::upsample_nearest(g, v[0], 2),
        ),
        Case::new(
            "l1_mean",
            vec![
                uniform(r, &[2, 5], -1.0, 1.0),
                uniform(r, &[2, 5], 1.5, 2.0),
            ],
            |g, v| nn::l1_mean(g, v[0], v[1]),
        ),
        Case::new(
            "mse",
            vec![
                uniform(r, &[2, 5], -1.0, 1.0),
                uniform(r, &[2, 5], -1.0, 1.0),
            ],
            |g, v| nn::mse(g, v[0], v[1]),
        ),
        gradient_penalty_case(),
    ]
}

/// Penalty of a small strided conv critic at fixed interpolates, as a
/// function of the critic's weights. Differentiating it needs the gradient of
/// a gradient.
pub fn gradient_penalty_case() -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e7a);
    let xhat = uniform(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
    let inputs = vec![
        uniform(&mut rng, &[3, 2, 3, 3], -0.6, 0.6),
        uniform(&mut rng, &[3], -0.2, 0.2),
        uniform(&mut rng, &[27, 1], -0.6, 0.6),
    ];
    Case::new("gradient_penalty (double backward)", inputs, move |g, v| {
        let x = g.constant(xhat.clone());
        let (w1, b1, w2) = (v[0], v[1], v[2]);
        nn::gradient_penalty(g, x, |g, x| {
            let h = nn::conv2d(g, x, w1, Some(b1), 2, 1)?;
            let h = g.leaky_relu(h, nn::LEAKY_SLOPE);
            let h = g.reshape(h, &[2, 27])?;
            g.matmul(h, w2)
        })
    })
}

/// Every registered case: each primitive op, then the composites.
pub fn registry() -> Vec<Case> {
    let mut cases: Vec<Case> = OpKind::DIFFERENTIABLE.iter().map(|&k| op_case(k)).collect();
    cases.extend(composite_cases());
    cases
}

pub fn run_all() -> Result<Vec<GradCheck>> {
    registry().iter().map(Case::run).collect()
}
