//! Independent reference computations shared by the integration tests and
//! the acceptance suite.

#![allow(dead_code)]

use std::collections::BTreeSet;

use mspnet::diffcore::*;
use mspnet::network::{ForwardCtx, Model, ModelConfig};
use mspnet::rng::{rng_from_seed, RngState};
use mspnet::shapedata::LabelVolume;
use mspnet::training::{total_loss, Targets};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Below this magnitude gradients are compared absolutely: central
/// differences of an O(10) loss carry about `ε·|L|/h ≈ 2e-10` of round-off.
pub const FD_FLOOR: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, FD_FLOOR)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

pub fn uniform(rng: &mut RngState, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    /// Largest relative error against central differences, over the
    /// coordinates where the function is smooth within `±h`.
    pub max_rel_err: f64,
    pub coordinates: usize,
    /// Coordinates where a ReLU or max switch lies within `±h`; there the
    /// analytic value is compared with the matching one-sided difference.
    pub kinks: usize,
}

impl GradCheck {
    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            coordinates: self.coordinates + other.coordinates,
            kinks: self.kinks + other.kinks,
        }
    }

    /// Within tolerance, with kinks at no more than one coordinate in 1000.
    pub fn passes(&self) -> bool {
        self.max_rel_err <= FD_TOLERANCE && self.kinks * 1000 <= self.coordinates
    }

    /// Records one coordinate given `f(x+h)`, `f(x−h)` and a closure for
    /// `f(x)`. If the central difference disagrees with `analytic` and the
    /// two one-sided slopes disagree with each other, the coordinate is a
    /// kink and `analytic` must match one side to first order in `h`.
    fn record(&mut self, analytic: f64, up: f64, down: f64, mid: impl FnOnce() -> f64) {
        self.coordinates += 1;
        let central = rel_err(analytic, (up - down) / (2.0 * FD_STEP));
        if central <= FD_TOLERANCE {
            self.max_rel_err = self.max_rel_err.max(central);
            return;
        }
        let mid = mid();
        let (fwd, bwd) = ((up - mid) / FD_STEP, (mid - down) / FD_STEP);
        let one_sided = rel_err(analytic, fwd).min(rel_err(analytic, bwd));
        if rel_err(fwd, bwd) > ONE_SIDED_TOLERANCE && one_sided <= ONE_SIDED_TOLERANCE {
            self.kinks += 1;
        } else {
            self.max_rel_err = self.max_rel_err.max(central);
        }
    }
}

/// One-sided differences are only first-order accurate.
const ONE_SIDED_TOLERANCE: f64 = 1e-3;

/// Reduces a tensor of any shape to a scalar through a fixed random
/// projection, so every output entry gets a distinct upstream gradient.
fn project(out: &Tensor) -> Tensor {
    if out.shape().is_empty() {
        return out.clone();
    }
    let mut rng = rng_from_seed(0x5eed ^ out.numel() as u64);
    let w = Tensor::new(out.shape(), uniform(&mut rng, out.numel(), -1.0, 1.0)).unwrap();
    sum(&mul(out, &w).unwrap())
}

/// Gradient check of `f` with respect to every entry of every input.
pub fn check_op(inputs: &[(Vec<usize>, Vec<f64>)], f: &dyn Fn(&[Tensor]) -> Tensor) -> GradCheck {
    let vars: Vec<Tensor> = inputs.iter().map(|(s, v)| Tensor::variable(s, v.clone()).unwrap()).collect();
    project(&f(&vars)).backward().unwrap();
    let eval = |which: usize, j: usize, delta: f64| -> f64 {
        let consts: Vec<Tensor> = inputs
            .iter()
            .enumerate()
            .map(|(i, (s, v))| {
                let mut v = v.clone();
                if i == which {
                    v[j] += delta;
                }
                Tensor::new(s, v).unwrap()
            })
            .collect();
        project(&f(&consts)).item()
    };
    let mut check = GradCheck::default();
    for (i, var) in vars.iter().enumerate() {
        let analytic = var.grad();
        for (j, a) in analytic.iter().enumerate() {
            let numeric = (eval(i, j, FD_STEP) - eval(i, j, -FD_STEP)) / (2.0 * FD_STEP);
            check.max_rel_err = check.max_rel_err.max(rel_err(*a, numeric));
            check.coordinates += 1;
        }
    }
    check
}

/// Values in ±[0.05, 1] so that no entry sits near a ReLU kink.
fn away_from_zero(rng: &mut RngState, len: usize) -> Vec<f64> {
    uniform(rng, len, 0.05, 1.0)
        .into_iter()
        .enumerate()
        .map(|(i, v)| if (i * 7 + 3) % 3 == 0 { -v } else { v })
        .collect()
}

/// Gradient checks of every differentiable operation on random inputs
/// drawn from `seed`, one entry per operation family.
pub fn op_checks(seed: u64) -> Vec<(&'static str, GradCheck)> {
    let rng = &mut rng_from_seed(seed);
    let mut out = Vec::new();
    let a = check_op(&[(vec![3, 4], uniform(rng, 12, -1.0, 1.0)), (vec![4, 2], uniform(rng, 8, -1.0, 1.0))], &|x| {
        matmul(&x[0], &x[1]).unwrap()
    });
    let b =
        check_op(&[(vec![2, 3, 4], uniform(rng, 24, -1.0, 1.0)), (vec![2, 4, 4], uniform(rng, 32, -1.0, 1.0))], &|x| {
            matmul(&x[0], &x[1]).unwrap()
        });
    out.push(("matmul", a.merge(b)));

    let a = check_op(&[(vec![2, 3], uniform(rng, 6, -1.0, 1.0)), (vec![2, 3], uniform(rng, 6, -1.0, 1.0))], &|x| {
        add(&x[0], &x[1]).unwrap()
    });
    let b = check_op(&[(vec![2, 4, 3], uniform(rng, 24, -1.0, 1.0)), (vec![3], uniform(rng, 3, -1.0, 1.0))], &|x| {
        add(&x[0], &x[1]).unwrap()
    });
    out.push(("add", a.merge(b)));

    let m = check_op(&[(vec![2, 3], uniform(rng, 6, -1.0, 1.0)), (vec![2, 3], uniform(rng, 6, -1.0, 1.0))], &|x| {
        mul(&x[0], &x[1]).unwrap()
    });
    let s = check_op(&[(vec![5], uniform(rng, 5, -1.0, 1.0))], &|x| scale(&x[0], -2.5));
    let t = check_op(&[(vec![2, 3], uniform(rng, 6, -1.0, 1.0))], &|x| sum(&x[0]));
    out.push(("mul/scale/sum", m.merge(s).merge(t)));

    let r = check_op(&[(vec![2, 6], uniform(rng, 12, -1.0, 1.0))], &|x| reshape(&x[0], &[3, 4]).unwrap());
    let f = check_op(&[(vec![2, 3, 2], uniform(rng, 12, -1.0, 1.0))], &|x| flatten(&x[0]).unwrap());
    out.push(("reshape/flatten", r.merge(f)));

    let mut concat_check = GradCheck::default();
    for (axis, extra) in [(0, vec![1, 3, 2]), (1, vec![2, 1, 2]), (2, vec![2, 3, 4])] {
        let len = extra.iter().product();
        let c =
            check_op(&[(vec![2, 3, 2], uniform(rng, 12, -1.0, 1.0)), (extra, uniform(rng, len, -1.0, 1.0))], &|x| {
                concat(x, axis).unwrap()
            });
        concat_check = concat_check.merge(c);
    }
    out.push(("concat", concat_check));

    out.push(("relu", check_op(&[(vec![4, 3], away_from_zero(rng, 12))], &|x| relu(&x[0]))));
    let m2 = check_op(&[(vec![5, 3], uniform(rng, 15, -1.0, 1.0))], &|x| max_over_points(&x[0]).unwrap());
    let m3 = check_op(&[(vec![2, 5, 3], uniform(rng, 30, -1.0, 1.0))], &|x| max_over_points(&x[0]).unwrap());
    out.push(("max_over_points", m2.merge(m3)));

    let mut bn = GradCheck::default();
    for shape in [vec![4, 3], vec![2, 3, 3]] {
        let len = shape.iter().product();
        let c = check_op(
            &[
                (shape, uniform(rng, len, -1.0, 1.0)),
                (vec![3], uniform(rng, 3, 0.5, 1.5)),
                (vec![3], uniform(rng, 3, -0.5, 0.5)),
            ],
            &|x| batch_norm(&x[0], &x[1], &x[2], &mut BatchNormStats::new(3), Mode::Train).unwrap(),
        );
        bn = bn.merge(c);
    }
    let (mean, var) = (uniform(rng, 3, -0.3, 0.3), uniform(rng, 3, 0.5, 2.0));
    let infer = check_op(
        &[
            (vec![4, 3], uniform(rng, 12, -1.0, 1.0)),
            (vec![3], uniform(rng, 3, 0.5, 1.5)),
            (vec![3], uniform(rng, 3, -0.5, 0.5)),
        ],
        &|x| {
            let mut stats = BatchNormStats { running_mean: mean.clone(), running_var: var.clone() };
            batch_norm(&x[0], &x[1], &x[2], &mut stats, Mode::Infer).unwrap()
        },
    );
    out.push(("batch_norm", bn.merge(infer)));

    let mask_seed = rng.gen::<u64>();
    out.push((
        "dropout",
        check_op(&[(vec![3, 4], uniform(rng, 12, -1.0, 1.0))], &|x| {
            dropout(&x[0], 0.7, Mode::Train, &mut rng_from_seed(mask_seed)).unwrap()
        }),
    ));

    let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..4)).collect();
    let ce =
        check_op(&[(vec![3, 4], uniform(rng, 12, -2.0, 2.0))], &|x| softmax_cross_entropy(&x[0], &labels).unwrap());
    let target = uniform(rng, 5, -1.0, 1.0);
    let se = check_op(&[(vec![5, 1], uniform(rng, 5, -1.0, 1.0))], &|x| mse(&x[0], &target).unwrap());
    out.push(("losses", ce.merge(se)));

    let single = check_op(&[(vec![4, 4], uniform(rng, 16, -1.0, 1.0))], &|x| ortho_regularizer(&x[0]).unwrap());
    let stacked = check_op(&[(vec![3, 3, 3], uniform(rng, 27, -1.0, 1.0))], &|x| ortho_regularizer(&x[0]).unwrap());
    out.push(("ortho_regularizer", single.merge(stacked)));

    out.push((
        "composed graph",
        check_op(&[(vec![3, 3], uniform(rng, 9, -1.0, 1.0)), (vec![3], uniform(rng, 3, -1.0, 1.0))], &|x| {
            let h = add(&matmul(&x[0], &x[0]).unwrap(), &x[1]).unwrap();
            let both = concat(&[h.clone(), scale(&h, 0.5)], 0).unwrap();
            mul(&both, &both).unwrap()
        }),
    ));
    out
}

/// Reorders the points of every subject in a `[B×n×d]` tensor.
pub fn permute_points(x: &Tensor, perm: &[usize]) -> Tensor {
    let &[b, n, d] = x.shape() else { panic!("expected rank 3") };
    let v = x.values();
    let mut out = Vec::with_capacity(v.len());
    for s in 0..b {
        for &p in perm {
            out.extend_from_slice(&v[(s * n + p) * d..(s * n + p + 1) * d]);
        }
    }
    Tensor::new(&[b, n, d], out).unwrap()
}

/// Toy multi-branch configuration: m = 2, n = 16, k = 8, feature MLP
/// [8, 8], post MLP [8, 16], head [32, 16, 2].
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        structures: 2,
        points: 16,
        tnet_mlp: vec![8, 8],
        tnet_fc: vec![8],
        feature_mlp: vec![8, 8],
        post_mlp: vec![8, 16],
        head: vec![32, 16],
        ..ModelConfig::default()
    }
}

/// Overwrites every parameter with random values (running variances stay
/// positive) so that no gradient path is trivially zero.
pub fn randomize_parameters(model: &mut Model, seed: u64) {
    let mut rng = rng_from_seed(seed);
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let e = model.store.entry(id);
        let (len, name) = (e.values.len(), e.name.clone());
        *model.store.values_mut(id) = if name.ends_with("running_var") {
            uniform(&mut rng, len, 0.5, 1.5)
        } else if name.ends_with("running_mean") {
            uniform(&mut rng, len, -0.2, 0.2)
        } else {
            uniform(&mut rng, len, -0.6, 0.6)
        };
    }
}

/// Composite loss of the toy model in inference mode (batch norm on running
/// statistics, dropout off), with the clouds given as tensors.
fn toy_loss(model: &Model, clouds: &[Tensor], labels: &[usize], reg: f64, ctx: &mut ForwardCtx) -> Tensor {
    let out = model.forward(clouds, ctx).unwrap();
    total_loss(&out, Targets::Classes(labels), reg).unwrap()
}

/// Gradient check of the full toy network: every trainable parameter and
/// every input coordinate of one subject.
pub fn check_toy_model(seed: u64) -> GradCheck {
    let cfg = toy_config();
    let mut model = Model::new(cfg.clone(), seed).unwrap();
    randomize_parameters(&mut model, seed ^ 0xabcdef);
    let mut rng = rng_from_seed(seed.wrapping_add(101));
    let batch = 1;
    let clouds: Vec<Vec<f64>> =
        (0..cfg.structures).map(|_| uniform(&mut rng, batch * cfg.points * 3, -1.0, 1.0)).collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % 2).collect();
    let reg = 0.001;
    let shape = [batch, cfg.points, 3];

    let vars: Vec<Tensor> = clouds.iter().map(|c| Tensor::variable(&shape, c.clone()).unwrap()).collect();
    // The context must not outlive this block: its leaves share parameter
    // buffers, which would make every perturbation below copy them.
    let grads = {
        let mut ctx = ForwardCtx::new(Mode::Infer, 0);
        toy_loss(&model, &vars, &labels, reg, &mut ctx).backward().unwrap();
        ctx.gradients(&model.store)
    };

    let consts = |clouds: &[Vec<f64>]| -> Vec<Tensor> {
        clouds.iter().map(|c| Tensor::new(&shape, c.clone()).unwrap()).collect()
    };
    let loss_at = |m: &Model, c: &[Vec<f64>]| toy_loss(m, &consts(c), &labels, reg, &mut ForwardCtx::evaluate()).item();

    let mut check = GradCheck::default();
    let ids: Vec<_> = model.store.trainable_ids().collect();
    for id in ids {
        let analytic = grads[id.0].clone().expect("every trainable parameter is used");
        for (j, a) in analytic.iter().enumerate() {
            let orig = model.store.values(id)[j];
            model.store.values_mut(id)[j] = orig + FD_STEP;
            let up = loss_at(&model, &clouds);
            model.store.values_mut(id)[j] = orig - FD_STEP;
            let down = loss_at(&model, &clouds);
            model.store.values_mut(id)[j] = orig;
            check.record(*a, up, down, || loss_at(&model, &clouds));
        }
    }
    for (s, var) in vars.iter().enumerate() {
        for (j, a) in var.grad().iter().enumerate() {
            let mut c = clouds.clone();
            c[s][j] += FD_STEP;
            let up = loss_at(&model, &c);
            c[s][j] -= 2.0 * FD_STEP;
            let down = loss_at(&model, &c);
            check.record(*a, up, down, || loss_at(&model, &clouds));
        }
    }
    check
}

/// Random `k×k` orthogonal matrix by Gram-Schmidt on Gaussian-like columns.
pub fn random_orthogonal(rng: &mut RngState, k: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v = uniform(rng, k, -1.0, 1.0);
        for r in &rows {
            let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 {
            rows.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    rows.concat()
}

/// Boundary voxels by direct enumeration of the six face neighbours.
pub fn boundary_bruteforce(vol: &LabelVolume, label: u16) -> BTreeSet<usize> {
    let [nx, ny, nz] = vol.dims;
    let mut out = BTreeSet::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if vol.get(x, y, z) != label {
                    continue;
                }
                let (xi, yi, zi) = (x as i64, y as i64, z as i64);
                let neighbours = [
                    (xi - 1, yi, zi),
                    (xi + 1, yi, zi),
                    (xi, yi - 1, zi),
                    (xi, yi + 1, zi),
                    (xi, yi, zi - 1),
                    (xi, yi, zi + 1),
                ];
                let exposed = neighbours.iter().any(|&(a, b, c)| {
                    let inside = a >= 0 && b >= 0 && c >= 0 && a < nx as i64 && b < ny as i64 && c < nz as i64;
                    !inside || vol.get(a as usize, b as usize, c as usize) != label
                });
                if exposed {
                    out.insert(vol.index(x, y, z));
                }
            }
        }
    }
    out
}

/// Random labels in `0..labels` on a `side³` grid with unit spacing.
pub fn random_volume(rng: &mut RngState, side: usize, labels: u16) -> LabelVolume {
    let data = (0..side * side * side).map(|_| rng.gen_range(0..labels)).collect();
    LabelVolume::new([side; 3], [1.0; 3], [0.0; 3], data).unwrap()
}

/// Linear index of a world-space voxel center on a unit-spacing,
/// zero-origin grid.
pub fn voxel_index(vol: &LabelVolume, p: [f64; 3]) -> usize {
    vol.index(p[0].round() as usize, p[1].round() as usize, p[2].round() as usize)
}
