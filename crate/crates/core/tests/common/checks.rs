//! Oracle checks shared by the gradient tests and the acceptance run. Each returns
//! `Err` with a description of the first violation.

use kfmc::masked::{InitStrategy, MaskedMatrix};
use kfmc::offline::{self, gradients, newton_step_d, OfflineHyperparams};
use kfmc::online::dictionary_step;
use kfmc::synth;
use kfmc::{DMatrix, DVector, KernelSpec};
use rand::Rng;

use super::{non_increasing, numeric_gradient, rel_diff, rng, uniform};

pub type Check = Result<(), String>;

/// Analytic gradients of the objective in `D` and `X` against central differences
/// on random instances with m, n, r <= 5.
pub fn gradients_match_finite_differences(rbf: bool, instances: u64) -> Check {
    for seed in 0..instances {
        let mut g = rng(if rbf { seed } else { 100 + seed });
        let (m, n, r) = (
            g.random_range(1..=5),
            g.random_range(1..=5),
            g.random_range(1..=5),
        );
        let x = uniform(m, n, -1.0, 1.0, &mut g);
        let d = uniform(m, r, -1.0, 1.0, &mut g);
        let z = uniform(r, n, -1.0, 1.0, &mut g);
        let spec = if rbf {
            KernelSpec::rbf(g.random_range(0.7..2.0)).unwrap()
        } else {
            KernelSpec::polynomial(g.random_range(0.5..1.5), g.random_range(1..=3)).unwrap()
        };
        let alpha = g.random_range(0.0..0.5);
        let f =
            |x: &DMatrix<f64>, d: &DMatrix<f64>| offline::objective(&spec, x, d, &z, alpha, 0.1);
        let (gd, gx) = gradients(&spec, &x, &d, &z, alpha).map_err(|e| e.to_string())?;
        let nd = numeric_gradient(&d, 1e-5, |dd| f(&x, dd));
        let nx = numeric_gradient(&x, 1e-5, |xx| f(xx, &d));
        if rel_diff(&gd, &nd) >= 1e-5 || rel_diff(&gx, &nx) >= 1e-5 {
            return Err(format!(
                "{spec:?} instance {seed}: D off by {:.2e}, X off by {:.2e}",
                rel_diff(&gd, &nd),
                rel_diff(&gx, &nx)
            ));
        }
    }
    Ok(())
}

pub struct PolyInstance {
    pub c: f64,
    pub q: u32,
    pub x: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub alpha: f64,
    pub tau: f64,
}

impl PolyInstance {
    pub fn random(seed: u64) -> Self {
        let mut g = rng(seed);
        let m = g.random_range(1..=4);
        let r = g.random_range(1..=4);
        let n = g.random_range(r..=6);
        PolyInstance {
            c: g.random_range(0.5..1.5),
            q: g.random_range(2..=3),
            x: uniform(m, n, -1.0, 1.0, &mut g),
            d: uniform(m, r, -1.0, 1.0, &mut g),
            z: uniform(r, n, -1.0, 1.0, &mut g),
            alpha: g.random_range(0.0..0.5),
            tau: g.random_range(1.01..4.0),
        }
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec::polynomial(self.c, self.q).unwrap()
    }

    pub fn pow(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.map(|v| (v + self.c).powi(self.q as i32 - 1))
    }

    /// Objective terms in D with the power weights frozen at the current D.
    pub fn d_surrogate(&self) -> impl Fn(&DMatrix<f64>) -> f64 + '_ {
        let w1 = self.pow(&(self.x.transpose() * &self.d));
        let w2 = self.pow(&(self.d.transpose() * &self.d));
        move |dd: &DMatrix<f64>| {
            let a = (self.x.transpose() * dd).add_scalar(self.c);
            let b = (dd.transpose() * dd).add_scalar(self.c);
            let t1 = -(w1.component_mul(&a) * &self.z).trace();
            let t2 = 0.5 * (self.z.transpose() * w2.component_mul(&b) * &self.z).trace();
            let t3 = 0.5 * self.alpha * w2.component_mul(&b).trace();
            t1 + t2 + t3
        }
    }

    pub fn h_d(&self) -> DMatrix<f64> {
        let w2 = self.pow(&(self.d.transpose() * &self.d));
        let mut h = (&self.z * self.z.transpose()).component_mul(&w2);
        for i in 0..h.nrows() {
            h[(i, i)] += self.alpha * w2[(i, i)];
        }
        h
    }
}

/// Batch dictionary step: the frozen-weight surrogate drops by at least
/// `Tr(g H^-1 g') / (2 tau)`.
pub fn batch_sufficient_decrease(instances: u64) -> Check {
    for seed in 0..instances {
        let inst = PolyInstance::random(1000 + seed);
        let s = inst.d_surrogate();
        let step = newton_step_d(
            &inst.spec(),
            &inst.x,
            &inst.d,
            &inst.z,
            inst.alpha,
            inst.tau,
        )
        .map_err(|e| e.to_string())?;
        let hinv_gt = inst
            .h_d()
            .lu()
            .solve(&step.grad.transpose())
            .ok_or("H_D singular")?;
        let bound = (&step.grad * hinv_gt).trace() / (2.0 * inst.tau);
        let change = s(&(&inst.d - &step.delta)) - s(&inst.d);
        if change > -bound + 1e-8 {
            return Err(format!(
                "instance {seed}: change {change:.3e} above {:.3e}",
                -bound
            ));
        }
    }
    Ok(())
}

/// Online dictionary step: gradient matches the single-sample surrogate and the
/// surrogate drops by at least `|g|^2 / (2 tau tau0)`.
pub fn online_sufficient_decrease(instances: u64) -> Check {
    for seed in 0..instances {
        let mut g = rng(5000 + seed);
        let (m, r) = (g.random_range(1..=5), g.random_range(1..=5));
        let (c, q) = (g.random_range(0.5..1.5), g.random_range(2..=3u32));
        let x = DVector::from_fn(m, |_, _| g.random_range(-1.0..1.0));
        let z = DVector::from_fn(r, |_, _| g.random_range(-1.0..1.0));
        let d = uniform(m, r, -1.0, 1.0, &mut g);
        let (alpha, tau) = (g.random_range(0.0..0.5), g.random_range(1.01..4.0));
        let w1 = (d.transpose() * &x).map(|v| (v + c).powi(q as i32 - 1));
        let w2 = (d.transpose() * &d).map(|v| (v + c).powi(q as i32 - 1));
        let surrogate = |dd: &DMatrix<f64>| -> f64 {
            let a = (dd.transpose() * &x).add_scalar(c);
            let b = (dd.transpose() * dd).add_scalar(c);
            -w1.component_mul(&a).dot(&z)
                + 0.5 * (w2.component_mul(&b) * &z).dot(&z)
                + 0.5 * alpha * w2.component_mul(&b).trace()
        };
        let spec = KernelSpec::polynomial(c, q).unwrap();
        let step = dictionary_step(&spec, &d, &x, &z, alpha, tau).map_err(|e| e.to_string())?;
        let numeric = numeric_gradient(&d, 1e-6, surrogate);
        if rel_diff(&step.grad, &numeric) >= 1e-5 && step.grad.norm() >= 1e-12 {
            return Err(format!(
                "instance {seed}: gradient off by {:.2e}",
                rel_diff(&step.grad, &numeric)
            ));
        }
        let change = surrogate(&(&d - &step.delta)) - surrogate(&d);
        let bound = step.grad.norm_squared() / (2.0 * tau * step.tau0);
        if change > -bound + 1e-10 {
            return Err(format!(
                "instance {seed}: change {change:.3e} above {:.3e}",
                -bound
            ));
        }
    }
    Ok(())
}

/// Without momentum the batch objective never increases.
pub fn momentum_free_traces_are_monotone(instances: u64) -> Check {
    for seed in 0..instances {
        let mut g = rng(seed);
        let x = uniform(4, 8, -1.0, 1.0, &mut g);
        let mask = synth::random_mask(4, 8, 0.3, seed, None).map_err(|e| e.to_string())?;
        let mm =
            MaskedMatrix::impute_init(&x, &mask, InitStrategy::Zero).map_err(|e| e.to_string())?;
        let spec = if seed % 2 == 0 {
            KernelSpec::polynomial(1.0, 3).unwrap()
        } else {
            KernelSpec::rbf(1.0).unwrap()
        };
        let mut hp = OfflineHyperparams::new(3);
        hp.eta = 0.0;
        hp.t_max = 100;
        hp.seed = seed;
        let model = offline::fit(&mm, &spec, &hp).map_err(|e| e.to_string())?;
        if !non_increasing(&model.trace, 1e-9) {
            return Err(format!("instance {seed}: trace increases"));
        }
    }
    Ok(())
}
