//! Central finite-difference gradient checking.
//!
//! The checker never touches the reverse-mode machinery for its reference
//! values: it re-runs the forward computation at perturbed inputs, so it
//! stays an independent oracle for `Graph::grad`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, TensorData};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Relative error with an absolute floor so near-zero gradients compare
/// sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Forward-only central finite differences of `f` at `inputs`.
pub fn finite_diff<F>(inputs: &[TensorData], f: &F, step: f64) -> Result<Vec<TensorData>>
where
    F: Fn(&Graph, &[Tensor]) -> Result<Tensor>,
{
    let eval = |xs: &[TensorData]| -> Result<f64> {
        let g = Graph::new();
        let leaves: Vec<Tensor> = xs.iter().map(|x| g.constant(x)).collect();
        f(&g, &leaves)?.item()
    };
    let mut grads = Vec::with_capacity(inputs.len());
    for (ti, t) in inputs.iter().enumerate() {
        let mut grad = TensorData::zeros(t.shape.clone());
        for ei in 0..t.values.len() {
            let mut plus = inputs.to_vec();
            plus[ti].values[ei] += step;
            let mut minus = inputs.to_vec();
            minus[ti].values[ei] -= step;
            grad.values[ei] = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Compare analytic gradients of the scalar output of `f` against central
/// finite differences; returns the maximum relative error over all input
/// elements.
pub fn compare<F>(inputs: &[TensorData], f: &F, step: f64) -> Result<f64>
where
    F: Fn(&Graph, &[Tensor]) -> Result<Tensor>,
{
    let g = Graph::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|x| g.leaf(x)).collect();
    let loss = f(&g, &leaves)?;
    let analytic = g.grad(&loss, &leaves)?;
    let numeric = finite_diff(inputs, f, step)?;
    let mut max_err: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.values().iter().zip(&n.values) {
            max_err = max_err.max(rel_err(av, nv));
        }
    }
    Ok(max_err)
}

fn random_data(rng: &mut impl Rng, shape: Vec<usize>) -> TensorData {
    let n = shape.iter().product();
    TensorData {
        shape,
        values: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

/// Randomized finite-difference suite over every differentiable op of the
/// tensor engine. Each op is exercised `trials` times inside a scalar loss.
pub fn run_op_suite(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    type LossFn = fn(&Graph, &[Tensor]) -> Result<Tensor>;
    // Each case: name, input shapes, loss builder. Losses mix the op with
    // a smooth reduction so every input element matters.
    let cases: Vec<(&str, Vec<Vec<usize>>, LossFn)> = vec![
        ("add", vec![vec![3, 4], vec![3, 4]], |_, t| {
            sq_sum(&t[0].add(&t[1])?)
        }),
        ("sub", vec![vec![3, 4], vec![3, 4]], |_, t| {
            sq_sum(&t[0].sub(&t[1])?)
        }),
        ("mul", vec![vec![3, 4], vec![3, 4]], |_, t| {
            sq_sum(&t[0].mul(&t[1])?)
        }),
        ("neg", vec![vec![5]], |_, t| sq_sum(&t[0].neg())),
        ("recip", vec![vec![4]], |_, t| {
            sq_sum(&t[0].mul_scalar(0.25).add_scalar(2.0).recip())
        }),
        ("sqrt", vec![vec![4]], |_, t| {
            sq_sum(&t[0].mul_scalar(0.25).add_scalar(2.0).sqrt())
        }),
        ("relu", vec![vec![12]], |_, t| sq_sum(&t[0].relu())),
        ("sigmoid", vec![vec![6]], |_, t| sq_sum(&t[0].sigmoid())),
        ("sum_all", vec![vec![7]], |_, t| {
            let s = t[0].sum_all();
            s.mul(&s)
        }),
        ("mean_all", vec![vec![7]], |_, t| {
            let s = t[0].mean_all();
            s.mul(&s)
        }),
        ("channel_mean", vec![vec![3, 2, 2]], |_, t| {
            sq_sum(&t[0].channel_mean()?)
        }),
        ("broadcast_channel", vec![vec![3]], |_, t| {
            sq_sum(&t[0].broadcast_channel(2, 2)?)
        }),
        ("scale_by_scalar", vec![vec![5], vec![1]], |_, t| {
            sq_sum(&t[0].scale_by(&t[1])?)
        }),
        ("concat_slice", vec![vec![4], vec![3]], |_, t| {
            sq_sum(&t[0].concat(&t[1])?.slice(2, 4)?)
        }),
        ("avgpool2", vec![vec![2, 4, 4]], |_, t| {
            sq_sum(&t[0].avgpool2()?)
        }),
        ("conv2d", vec![vec![2, 5, 5], vec![3, 2, 3, 3]], |_, t| {
            sq_sum(&t[0].conv2d(&t[1])?)
        }),
        ("batchnorm_train", vec![vec![2, 3, 3], vec![2], vec![2]], |_, t| {
            let out = crate::tensor::nn::batchnorm_train(&t[0], &t[1], &t[2], 1e-5)?;
            sq_sum(&out.0)
        }),
        ("linear", vec![vec![3], vec![4, 3], vec![4]], |_, t| {
            sq_sum(&t[0].linear(&t[1], &t[2])?)
        }),
        ("matvec_t", vec![vec![4, 3], vec![4]], |_, t| {
            sq_sum(&t[0].matvec_t(&t[1])?)
        }),
        ("outer", vec![vec![3], vec![4]], |_, t| {
            sq_sum(&t[0].outer(&t[1])?)
        }),
        ("channel_scale", vec![vec![3, 2, 2], vec![3]], |_, t| {
            sq_sum(&t[0].channel_scale(&t[1])?)
        }),
        ("cross_correlate", vec![vec![2, 4, 4], vec![2, 3, 3]], |_, t| {
            sq_sum(&t[0].cross_correlate(&t[1])?)
        }),
        ("prpool_feat", vec![vec![2, 5, 5]], |g, t| {
            let x0 = g.scalar(0.7);
            let y0 = g.scalar(0.4);
            let x1 = g.scalar(3.3);
            let y1 = g.scalar(3.8);
            sq_sum(&t[0].prpool(&x0, &y0, &x1, &y1, (2, 2))?)
        }),
        ("prpool_coords", vec![vec![2, 6, 6], vec![4]], |g, t| {
            let c = &t[1];
            let x0 = c.slice(0, 1)?.mul_scalar(0.3).add_scalar(1.0);
            let y0 = c.slice(1, 1)?.mul_scalar(0.3).add_scalar(1.0);
            let x1 = c.slice(2, 1)?.mul_scalar(0.3).add_scalar(4.0);
            let y1 = c.slice(3, 1)?.mul_scalar(0.3).add_scalar(4.0);
            let _ = g;
            sq_sum(&t[0].prpool(&x0, &y0, &x1, &y1, (2, 3))?)
        }),
    ];

    let mut results = Vec::new();
    for (name, shapes, f) in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ hash_name(name));
        let mut max_err: f64 = 0.0;
        for _ in 0..trials {
            let inputs: Vec<TensorData> = shapes
                .iter()
                .map(|s| random_data(&mut rng, s.clone()))
                .collect();
            max_err = max_err.max(compare(&inputs, &f, DEFAULT_STEP)?);
        }
        results.push(CheckResult {
            name: name.to_string(),
            trials,
            max_rel_err: max_err,
            passed: max_err <= DEFAULT_REL_TOL,
        });
    }
    Ok(results)
}

pub const META_REL_TOL: f64 = 1e-3;

/// Unrolled meta-gradient objective on a tiny nonlinear network: `w`/`b`
/// are adapted by `k` inner steps on the support pairs (with per-step
/// scalar rates `alpha.{step}.{path}`), and the weighted test loss flows
/// through the outer-only scale `c`.
fn tiny_meta_objective(
    params: &crate::tensor::ParamSet,
    data: &[TensorData; 4],
    k: usize,
    v: &[f64],
) -> Result<(f64, crate::tensor::GradRecord)> {
    use crate::meta::{inner_loop, weighted_test_loss, AlphaMap};
    use crate::tensor::BoundParams;
    let [xs, ys, xt, yt] = data;
    let g = Graph::new();
    let bound = g.bind(params);
    let fit = |b: &BoundParams, x: &TensorData, y: &TensorData, with_c: bool| -> Result<Tensor> {
        let mut pred = b.get("w")?.matvec(&g.constant(x))?.add(&b.get("b")?)?.sigmoid();
        if with_c {
            pred = pred.mul(&b.get("c")?)?;
        }
        let e = pred.sub(&g.constant(y))?;
        Ok(e.mul(&e)?.sum_all())
    };
    let support = |b: &BoundParams| fit(b, xs, ys, false);
    let target = |b: &BoundParams| fit(b, xt, yt, true);
    let paths = ["w".to_string(), "b".to_string()];
    let alphas: Vec<AlphaMap> = (0..k)
        .map(|step| {
            paths
                .iter()
                .map(|p| Ok((p.clone(), bound.get(&format!("alpha.{step}.{p}"))?)))
                .collect::<Result<AlphaMap>>()
        })
        .collect::<Result<_>>()?;
    let traj = inner_loop(&bound, &paths, &alphas, support)?;
    let outer = weighted_test_loss(&bound, &traj, v, target)?;
    let value = outer.item()?;
    let rec = g.backward(&outer, &bound)?;
    Ok((value, rec))
}

/// Randomized finite-difference checks of the meta-gradient through the
/// unrolled inner loop, one suite entry per inner-loop depth.
pub fn run_meta_suite(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for k in 1..=3usize {
        let name = format!("meta_unroll_k{k}");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ hash_name(&name));
        let v: Vec<f64> = (0..=k).map(|i| 0.2 + 0.8 * i as f64 / k as f64).collect();
        let mut max_err: f64 = 0.0;
        for _ in 0..trials {
            let mut params = crate::tensor::ParamSet::new();
            params.insert("w", random_data(&mut rng, vec![3, 3]));
            params.insert("b", random_data(&mut rng, vec![3]));
            params.insert("c", random_data(&mut rng, vec![3]));
            for step in 0..k {
                for p in ["w", "b"] {
                    params.insert(format!("alpha.{step}.{p}"), TensorData::scalar(0.05));
                }
            }
            let data = [
                random_data(&mut rng, vec![3]),
                random_data(&mut rng, vec![3]),
                random_data(&mut rng, vec![3]),
                random_data(&mut rng, vec![3]),
            ];
            let (_, rec) = tiny_meta_objective(&params, &data, k, &v)?;
            for (path, tensor) in params.iter() {
                let analytic = rec.get(path)?;
                for i in 0..tensor.numel() {
                    let mut up = params.clone();
                    up.get_mut(path)?.values[i] += DEFAULT_STEP;
                    let mut dn = params.clone();
                    dn.get_mut(path)?.values[i] -= DEFAULT_STEP;
                    let (vu, _) = tiny_meta_objective(&up, &data, k, &v)?;
                    let (vd, _) = tiny_meta_objective(&dn, &data, k, &v)?;
                    let fd = (vu - vd) / (2.0 * DEFAULT_STEP);
                    max_err = max_err.max(rel_err(analytic.values[i], fd));
                }
            }
        }
        results.push(CheckResult {
            name,
            trials,
            max_rel_err: max_err,
            passed: max_err <= META_REL_TOL,
        });
    }
    Ok(results)
}

fn hash_name(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x1000_0000_01b3)
    })
}

fn sq_sum(t: &Tensor) -> Result<Tensor> {
    Ok(t.mul(t)?.sum_all())
}

/// Fail with a verification error if any suite entry failed.
pub fn require_all_passed(results: &[CheckResult]) -> Result<()> {
    let failed: Vec<&CheckResult> = results.iter().filter(|r| !r.passed).collect();
    if failed.is_empty() {
        return Ok(());
    }
    Err(Error::Verification(
        failed
            .iter()
            .map(|r| format!("{} (max rel err {:.3e})", r.name, r.max_rel_err))
            .collect::<Vec<_>>()
            .join(", "),
    ))
}
