use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffcore::{CustomOp, Tape, Var};
use crate::error::{Error, Result};

/// Bandwidths of the inverse multiquadratic kernel mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSpec {
    pub bandwidths: Vec<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { bandwidths: vec![0.05, 0.20, 0.90] }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() || self.bandwidths.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Config(format!("bandwidths must be positive: {:?}", self.bandwidths)));
        }
        Ok(())
    }

    fn value_d2(&self, d2: f64) -> f64 {
        self.bandwidths.iter().map(|a| a * a / (a * a + d2)).sum()
    }

    /// Derivative of the kernel with respect to the squared distance.
    fn slope_d2(&self, d2: f64) -> f64 {
        self.bandwidths
            .iter()
            .map(|a| {
                let den = a * a + d2;
                -a * a / (den * den)
            })
            .sum()
    }
}

fn d2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// `Σ_a a² / (a² + ‖s − t‖²)`.
pub fn imq_kernel(s: [f64; 2], t: [f64; 2], spec: &KernelSpec) -> f64 {
    spec.value_d2(d2(s, t))
}

/// Unbiased within-set terms minus the biased cross term (diagonal kept).
pub fn mmd(s: &[[f64; 2]], t: &[[f64; 2]], spec: &KernelSpec) -> Result<f64> {
    let n = s.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("mmd needs at least 2 samples, got {n}")));
    }
    if t.len() != n {
        return Err(Error::shape("mmd target set", n, t.len()));
    }
    let within = |x: &[[f64; 2]]| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                acc += 2.0 * spec.value_d2(d2(x[i], x[j]));
            }
        }
        acc / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for a in s {
        for b in t {
            cross += spec.value_d2(d2(*a, *b));
        }
    }
    Ok(within(s) + within(t) - 2.0 * cross / (n * n) as f64)
}

/// Gradient of [`mmd`] with respect to the first set.
fn mmd_grad(s: &[[f64; 2]], t: &[[f64; 2]], spec: &KernelSpec, scale: f64, out: &mut [[f64; 2]]) {
    let n = s.len();
    let w_in = 2.0 * scale / (n * (n - 1)) as f64;
    let w_x = 2.0 * scale / (n * n) as f64;
    for i in 0..n {
        let mut g = [0.0; 2];
        for j in 0..n {
            if j != i {
                let k = 2.0 * w_in * spec.slope_d2(d2(s[i], s[j]));
                g[0] += k * (s[i][0] - s[j][0]);
                g[1] += k * (s[i][1] - s[j][1]);
            }
            let k = -2.0 * w_x * spec.slope_d2(d2(s[i], t[j]));
            g[0] += k * (s[i][0] - t[j][0]);
            g[1] += k * (s[i][1] - t[j][1]);
        }
        out[i][0] += g[0];
        out[i][1] += g[1];
    }
}

/// Target set for one joint of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTargets {
    pub joint: usize,
    pub targets: Vec<[f64; 2]>,
}

struct MmdOp {
    targets: Vec<Vec<JointTargets>>,
    n: usize,
    spec: KernelSpec,
}

impl MmdOp {
    fn samples(&self, proj: &Array2<f64>, b: usize, k: usize) -> Vec<[f64; 2]> {
        (0..self.n).map(|i| [proj[[b * self.n + i, 2 * k]], proj[[b * self.n + i, 2 * k + 1]]]).collect()
    }

    fn per_example_weight(&self, b: usize) -> f64 {
        1.0 / (self.targets.len() * self.targets[b].len()) as f64
    }
}

/// Batch mean of per-example joint-averaged MMD.
///
/// `proj` holds `B·n` rows of crop-normalized projections, `n` consecutive
/// rows per example. Examples with no included joint contribute zero.
pub fn mmd_tape(
    tape: &mut Tape,
    proj: Var,
    targets: Vec<Vec<JointTargets>>,
    n: usize,
    spec: &KernelSpec,
) -> Result<Var> {
    let (rows, cols) = tape.shape(proj);
    if n < 2 {
        return Err(Error::InvalidArgument(format!("mmd needs at least 2 samples, got {n}")));
    }
    if rows != targets.len() * n {
        return Err(Error::shape("mmd_tape rows", targets.len() * n, rows));
    }
    let op = MmdOp { targets, n, spec: spec.clone() };
    let pv = tape.value(proj);
    let mut total = 0.0;
    for (b, joints) in op.targets.iter().enumerate() {
        for jt in joints {
            if 2 * jt.joint + 1 >= cols {
                return Err(Error::shape("mmd_tape joint", cols / 2, jt.joint));
            }
            total += mmd(&op.samples(pv, b, jt.joint), &jt.targets, &op.spec)? * op.per_example_weight(b);
        }
    }
    Ok(tape.custom(&[proj], Array2::from_elem((1, 1), total), Box::new(op)))
}

impl CustomOp for MmdOp {
    fn name(&self) -> &'static str {
        "mmd"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, g: &Array2<f64>) -> Vec<Array2<f64>> {
        let proj = inputs[0];
        let mut gp = Array2::zeros(proj.dim());
        let mut buf = vec![[0.0; 2]; self.n];
        for (b, joints) in self.targets.iter().enumerate() {
            for jt in joints {
                let s = self.samples(proj, b, jt.joint);
                buf.iter_mut().for_each(|v| *v = [0.0; 2]);
                mmd_grad(&s, &jt.targets, &self.spec, g[[0, 0]] * self.per_example_weight(b), &mut buf);
                for (i, v) in buf.iter().enumerate() {
                    gp[[b * self.n + i, 2 * jt.joint]] += v[0];
                    gp[[b * self.n + i, 2 * jt.joint + 1]] += v[1];
                }
            }
        }
        vec![gp]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, unit_seed, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_values() {
        let spec = KernelSpec::default();
        assert_eq!(imq_kernel([0.3, 0.1], [0.3, 0.1], &spec), 3.0);
        let expect = 0.05f64.powi(2) / 1.0025 + 0.04 / 1.04 + 0.81 / 1.81;
        assert!((imq_kernel([0.0, 0.0], [1.0, 0.0], &spec) - expect).abs() < 1e-15);
        assert!((expect - 0.48847).abs() < 1e-5);
        assert_eq!(imq_kernel([0.1, 0.7], [-0.4, 0.2], &spec), imq_kernel([-0.4, 0.2], [0.1, 0.7], &spec));
    }

    #[test]
    fn degenerate_pairs() {
        let spec = KernelSpec::default();
        let z = [[0.0, 0.0]; 2];
        assert_eq!(mmd(&z, &z, &spec).unwrap(), 0.0);
        let v = mmd(&z, &[[1.0, 0.0]; 2], &spec).unwrap();
        assert!((v - 5.02306).abs() < 1e-4, "{v}");
        assert!(mmd(&z[..1], &z[..1], &spec).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = KernelSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5;
        let targets: Vec<Vec<JointTargets>> = (0..2)
            .map(|_| {
                vec![JointTargets {
                    joint: 1,
                    targets: (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect(),
                }]
            })
            .collect();
        let x: Vec<f64> = (0..2 * n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |v: &[f64]| {
            let mut tape = Tape::new();
            let mut store = ParamStore::new();
            let p = tape.leaf(Array2::from_shape_vec((2 * n, 4), v.to_vec()).unwrap());
            let y = mmd_tape(&mut tape, p, targets.clone(), n, &spec)?;
            let val = tape.scalar(y);
            let g = tape.backward(y, unit_seed(), &mut store)?;
            Ok((val, g.get(p).into_raw_vec_and_offset().0))
        };
        assert!(grad_check(f, &x, 1e-6).unwrap() < 1e-6);
    }
}
