use super::model::{MlpModel, Trace};
use crate::pair::Point;

/// Floor on the denominator of the relative error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// max over checked parameters of `|a - f| / max(|a|, |f|, 1e-6)`.
    pub max_relative_error: f64,
    /// Parameter holding the maximum.
    pub worst_param: usize,
    pub checked: usize,
    /// Parameters whose `±step` perturbation moved some unit across a
    /// kink of its activation, where the finite difference is meaningless.
    pub skipped: usize,
}

pub fn relative_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(REL_FLOOR)
}

fn patterns(model: &MlpModel, batch: &[Point]) -> Vec<u32> {
    let mut tr = Trace::new(model.layout());
    let mut out = Vec::new();
    for &x in batch {
        model.forward_traced(x, &mut tr);
        out.extend(tr.pattern(model.layout()));
    }
    out
}

/// Central differences of the mean loss. Entries whose perturbation
/// crosses an activation kink are `None`.
pub fn finite_difference_gradient(
    model: &MlpModel,
    batch: &[Point],
    labels: &[usize],
    step: f64,
) -> Vec<Option<f64>> {
    let base = patterns(model, batch);
    let mut probe = model.clone();
    (0..model.params().len())
        .map(|i| {
            let orig = model.params()[i];
            probe.params_mut()[i] = orig + step;
            let up = probe.loss(batch, labels);
            let smooth_up = patterns(&probe, batch) == base;
            probe.params_mut()[i] = orig - step;
            let down = probe.loss(batch, labels);
            let smooth_down = patterns(&probe, batch) == base;
            probe.params_mut()[i] = orig;
            (smooth_up && smooth_down).then(|| (up - down) / (2.0 * step))
        })
        .collect()
}

/// Compare an analytic gradient against central finite differences.
pub fn compare(analytic: &[f64], numeric: &[Option<f64>]) -> GradCheck {
    let mut out = GradCheck {
        max_relative_error: 0.0,
        worst_param: 0,
        checked: 0,
        skipped: 0,
    };
    for (i, (&a, f)) in analytic.iter().zip(numeric).enumerate() {
        match f {
            Some(f) => {
                out.checked += 1;
                let e = relative_error(a, *f);
                if e > out.max_relative_error {
                    out.max_relative_error = e;
                    out.worst_param = i;
                }
            }
            None => out.skipped += 1,
        }
    }
    out
}

/// Backpropagation against central finite differences with step `1e-5`.
pub fn gradient_check(model: &MlpModel, batch: &[Point], labels: &[usize]) -> GradCheck {
    let (_, g) = model.loss_and_gradient(batch, labels);
    let fd = finite_difference_gradient(model, batch, labels, 1e-5);
    compare(&g.0, &fd)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::nn::{HiddenActivation, MlpConfig, OutputActivation, Topology};
    use crate::rng::rng;

    fn batch(seed: u64, n: usize, classes: usize) -> (Vec<Point>, Vec<usize>) {
        let mut r = rng(seed);
        let x = (0..n)
            .map(|_| [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)])
            .collect();
        let y = (0..n).map(|_| r.random_range(0..classes)).collect();
        (x, y)
    }

    #[test]
    fn zero_model_head_bias_gradient() {
        let cfg = MlpConfig {
            output_activation: OutputActivation::Identity,
            ..MlpConfig::fully_connected(2, 4)
        };
        let m = MlpModel::zeros(&cfg, 3).unwrap();
        let (x, y) = batch(1, 5, 3);
        let (_, g) = m.loss_and_gradient(&x, &y);
        let fd = finite_difference_gradient(&m, &x, &y, 1e-5);
        let ((_, _), (hb, n)) = *m.layer_blocks().last().unwrap();
        for i in hb..hb + n {
            let f = fd[i].expect("head biases are smooth");
            assert!((g.0[i] - f).abs() < 1e-6, "{} vs {}", g.0[i], f);
        }
    }

    #[test]
    fn random_maxout_model_passes() {
        let cfg = MlpConfig {
            output_activation: OutputActivation::Maxout,
            ..MlpConfig::fully_connected(3, 6)
        };
        let m = MlpModel::init(&cfg, 4, &mut rng(2)).unwrap();
        let (x, y) = batch(3, 4, 4);
        let gc = gradient_check(&m, &x, &y);
        assert!(gc.max_relative_error < 1e-4, "{gc:?}");
        assert!(gc.checked > 0);
    }

    #[test]
    fn every_activation_and_topology_passes() {
        let mut seed = 100;
        for topology in [Topology::FullyConnected, Topology::Structural] {
            for hidden in [HiddenActivation::Maxout, HiddenActivation::LeakyRelu] {
                for out in [OutputActivation::Abs, OutputActivation::Maxout, OutputActivation::Identity] {
                    seed += 1;
                    let cfg = MlpConfig {
                        depth: 2,
                        hidden_width: 6,
                        topology,
                        hidden_activation: hidden,
                        output_activation: out,
                        ..MlpConfig::default()
                    };
                    let m = MlpModel::init(&cfg, 3, &mut rng(seed)).unwrap();
                    let (x, y) = batch(seed, 3, 3);
                    let gc = gradient_check(&m, &x, &y);
                    assert!(gc.max_relative_error < 1e-4, "{cfg:?}: {gc:?}");
                }
            }
        }
    }

    #[test]
    fn sign_flipped_layer_is_caught() {
        let cfg = MlpConfig::fully_connected(3, 6);
        let m = MlpModel::init(&cfg, 4, &mut rng(4)).unwrap();
        let (x, y) = batch(5, 4, 4);
        let (_, mut g) = m.loss_and_gradient(&x, &y);
        let ((w, n), _) = m.layer_blocks()[1];
        for v in &mut g.0[w..w + n] {
            *v = -*v;
        }
        let fd = finite_difference_gradient(&m, &x, &y, 1e-5);
        assert!(compare(&g.0, &fd).max_relative_error > 1e-2);
    }
}
