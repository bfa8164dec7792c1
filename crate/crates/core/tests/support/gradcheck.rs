//! Central finite-difference checks of tape gradients, shared by the core
//! gradient tests and the acceptance suite.

#![allow(dead_code)]

use rand::Rng;
use uvrec_core::fusion::multi_head_attention;
use uvrec_core::imaging::DenseVisibilityGrid;
use uvrec_core::numerics::{seeded_rng, SeededRng, Tape, Tensor, Var};
use uvrec_core::reconstructor::{assemble_grid, film_modulate, spectral_loss, spectral_loss_on_tape, FieldGeometry};
use uvrec_core::skysim::{compute_uv_coverage, make_synthetic_sky, sample_visibility, ArrayConfig, SkyKind};
use uvrec_core::Result;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale of
/// `REL_TOL * MAGNITUDE_FLOOR`, below which central differences are noise.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;
/// Entries checked per input, spread evenly across the tensor.
const MAX_PROBES: usize = 48;

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
pub type Reference = Box<dyn Fn(&[Tensor]) -> f64>;

pub struct Case {
    pub op: &'static str,
    pub shape: String,
    pub inputs: Vec<Tensor>,
    build: Build,
    /// Scalar function differentiated numerically. When absent, the
    /// recorded output is contracted with a fixed random tensor.
    reference: Option<Reference>,
}

impl Case {
    /// A case checked against an explicit scalar `reference` instead of
    /// the tape's own forward pass.
    pub fn with_reference(op: &'static str, inputs: Vec<Tensor>, build: Build, reference: Reference) -> Self {
        Case {
            op,
            shape: "custom".into(),
            inputs,
            build,
            reference: Some(reference),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub op: &'static str,
    pub shape: String,
    pub max_rel_err: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= REL_TOL
    }
}

fn random(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    // Keep entries away from 0 so kinks such as ReLU never sit within a step.
    let data = (0..len)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Value of the checked scalar at `inputs`.
fn scalar(case: &Case, inputs: &[Tensor], projection: &Tensor) -> f64 {
    if let Some(r) = &case.reference {
        return r(inputs);
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars).unwrap();
    tape.value(out).data().iter().zip(projection.data()).map(|(a, b)| a * b).sum()
}

pub fn check(case: &Case, seed: u64) -> CaseResult {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars).unwrap();
    let shape = tape.value(out).shape().to_vec();
    let projection = if case.reference.is_some() {
        Tensor::full(&shape, 1.0)
    } else {
        random(&mut seeded_rng(seed), &shape)
    };
    let proj = tape.constant(projection.clone());
    let prod = tape.hadamard(out, proj).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).unwrap();
        let len = case.inputs[i].len();
        let stride = len.div_ceil(MAX_PROBES).max(1);
        for j in (0..len).step_by(stride) {
            let mut up = case.inputs.clone();
            up[i].data_mut()[j] += STEP;
            let mut dn = case.inputs.clone();
            dn[i].data_mut()[j] -= STEP;
            let fd = (scalar(case, &up, &projection) - scalar(case, &dn, &projection)) / (2.0 * STEP);
            let a = analytic[j];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(MAGNITUDE_FLOOR);
            worst = worst.max(err);
        }
    }
    CaseResult {
        op: case.op,
        shape: case.shape.clone(),
        max_rel_err: worst,
    }
}

fn case(op: &'static str, shape: String, inputs: Vec<Tensor>, build: Build) -> Case {
    Case {
        op,
        shape,
        inputs,
        build,
        reference: None,
    }
}

fn matmul_cases(rng: &mut SeededRng) -> Vec<Case> {
    [(1, 1, 1), (2, 3, 4), (4, 1, 3), (3, 5, 2), (6, 4, 5)]
        .into_iter()
        .map(|(m, k, n)| {
            case(
                "matmul",
                format!("{m}x{k} * {k}x{n}"),
                vec![random(rng, &[m, k]), random(rng, &[k, n])],
                Box::new(|t, v| t.matmul(v[0], v[1])),
            )
        })
        .collect()
}

fn conv1d_cases(rng: &mut SeededRng) -> Vec<Case> {
    [(1, 1, 5, 1, 0), (2, 3, 6, 3, 1), (3, 2, 4, 3, 0), (1, 4, 7, 5, 2), (4, 1, 3, 1, 0)]
        .into_iter()
        .map(|(cin, cout, l, k, pad)| {
            case(
                "conv1d",
                format!("x {cin}x{l}, w {cout}x{cin}x{k}, pad {pad}"),
                vec![random(rng, &[cin, l]), random(rng, &[cout, cin, k]), random(rng, &[cout])],
                Box::new(move |t, v| t.conv1d(v[0], v[1], v[2], pad)),
            )
        })
        .collect()
}

fn conv2d_cases(rng: &mut SeededRng) -> Vec<Case> {
    [(1, 1, 3, 1, 0), (2, 3, 4, 3, 1), (3, 2, 5, 3, 0), (1, 2, 4, 3, 1), (2, 1, 3, 1, 0)]
        .into_iter()
        .map(|(c, o, hw, k, pad)| {
            case(
                "conv2d",
                format!("x {c}x{hw}x{hw}, w {o}x{c}x{k}x{k}, pad {pad}"),
                vec![random(rng, &[c, hw, hw]), random(rng, &[o, c, k, k]), random(rng, &[o])],
                Box::new(move |t, v| t.conv2d(v[0], v[1], v[2], pad)),
            )
        })
        .collect()
}

fn softmax_cases(rng: &mut SeededRng) -> Vec<Case> {
    [(1, 1), (1, 4), (3, 2), (2, 7), (5, 5)]
        .into_iter()
        .map(|(m, n)| {
            case(
                "softmax",
                format!("{m}x{n}"),
                vec![random(rng, &[m, n])],
                Box::new(|t, v| t.softmax_rows(v[0])),
            )
        })
        .collect()
}

fn layer_norm_cases(rng: &mut SeededRng) -> Vec<Case> {
    [(1, 2), (2, 3), (3, 4), (1, 8), (4, 5)]
        .into_iter()
        .map(|(m, n)| {
            case(
                "layer_norm",
                format!("{m}x{n}"),
                vec![random(rng, &[m, n]), random(rng, &[n]), random(rng, &[n])],
                Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
            )
        })
        .collect()
}

fn attention_cases(rng: &mut SeededRng) -> Vec<Case> {
    [(2, 3, 4, 1), (3, 5, 4, 2), (1, 4, 6, 3), (4, 2, 8, 4), (3, 3, 6, 2)]
        .into_iter()
        .map(|(tq, tk, d, heads)| {
            case(
                "attention",
                format!("q {tq}x{d}, kv {tk}x{d}, {heads} heads"),
                vec![random(rng, &[tq, d]), random(rng, &[tk, d]), random(rng, &[tk, d])],
                Box::new(move |t, v| multi_head_attention(t, v[0], v[1], v[2], heads)),
            )
        })
        .collect()
}

fn film_cases(rng: &mut SeededRng) -> Vec<Case> {
    [(1, 3), (2, 5), (4, 4), (3, 8), (6, 2)]
        .into_iter()
        .map(|(m, n)| {
            case(
                "film",
                format!("{m}x{n}"),
                vec![random(rng, &[m, n]), random(rng, &[1, n]), random(rng, &[1, n])],
                Box::new(|t, v| film_modulate(t, v[0], v[1], v[2])),
            )
        })
        .collect()
}

/// Spectral loss of the grid assembled from free-cell predictions, with
/// the error weights held at their value for the base prediction.
fn spectral_cases(rng: &mut SeededRng) -> Vec<Case> {
    [(16, 3, SkyKind::Points), (16, 6, SkyKind::Ring), (16, 4, SkyKind::Blobs), (16, 8, SkyKind::Spiral), (32, 2, SkyKind::EdgeDisk)]
        .into_iter()
        .enumerate()
        .map(|(i, (n, hours, kind))| {
            let sky = make_synthetic_sky(kind, n, 40 + i as u64).unwrap();
            let cov = compute_uv_coverage(&ArrayConfig::eht_like(hours, 5.0), n).unwrap();
            let vs = sample_visibility(&sky, &cov, 0.05, 7 + i as u64).unwrap();
            let truth = DenseVisibilityGrid::from_sky(&sky);
            let geom = FieldGeometry::new(vs.mask(), n, 2).unwrap();
            let pred = random(rng, &[geom.cells.len(), 2]);
            let base = assemble_grid(&vs, &geom, pred.data()).unwrap();
            let omega = spectral_loss(&base, &truth).unwrap().omega;
            let (vs2, geom2, truth2) = (vs.clone(), geom.clone(), truth.clone());
            let reference: Reference = Box::new(move |x: &[Tensor]| {
                let g = assemble_grid(&vs2, &geom2, x[0].data()).unwrap();
                g.values
                    .iter()
                    .zip(&truth2.values)
                    .zip(&omega)
                    .map(|((a, b), w)| w * (a - b).norm_sqr())
                    .sum::<f64>()
                    / (n * n) as f64
            });
            Case {
                op: "spectral_loss",
                shape: format!("N={n}, {} free cells", geom.cells.len()),
                inputs: vec![pred],
                build: Box::new(move |t, v| Ok(spectral_loss_on_tape(t, v[0], &vs, &geom, &truth)?.0)),
                reference: Some(reference),
            }
        })
        .collect()
}

pub const OPS: [&str; 8] = [
    "matmul",
    "conv1d",
    "conv2d",
    "softmax",
    "layer_norm",
    "attention",
    "film",
    "spectral_loss",
];

/// Five or more random small shapes for each op in [`OPS`].
pub fn all_cases(seed: u64) -> Vec<Case> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();
    out.extend(matmul_cases(&mut rng));
    out.extend(conv1d_cases(&mut rng));
    out.extend(conv2d_cases(&mut rng));
    out.extend(softmax_cases(&mut rng));
    out.extend(layer_norm_cases(&mut rng));
    out.extend(attention_cases(&mut rng));
    out.extend(film_cases(&mut rng));
    out.extend(spectral_cases(&mut rng));
    out
}

pub fn run_all(seed: u64) -> Vec<CaseResult> {
    all_cases(seed)
        .iter()
        .enumerate()
        .map(|(i, c)| check(c, seed.wrapping_add(i as u64)))
        .collect()
}
