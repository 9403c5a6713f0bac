//! Finite-difference validation of the backward pass.

use rand::seq::index::sample;

use crate::error::Result;
use crate::numeric::graph::{Graph, NodeId};
use crate::rng;

/// Sampling and step-size controls for [`check_gradients`].
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub delta: f64,
    /// Coordinates sampled per leaf (all of them when the leaf is smaller).
    pub coords_per_leaf: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            delta: 1e-5,
            coords_per_leaf: 24,
            seed: 0,
        }
    }
}

/// One compared coordinate.
#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Coordinate excluded because the probe stepped across a ReLU kink, where
/// the central difference does not estimate the one-sided derivative.
#[derive(Debug, Clone)]
pub struct SkippedCoord {
    pub param: String,
    pub coord: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
    pub skipped: Vec<SkippedCoord>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// ReLU derivative branch per input coordinate; a branch flip between the
/// two probe points marks a kink crossing.
fn branches(g: &Graph) -> Vec<bool> {
    g.relu_input_signs().iter().map(|&s| s > 0).collect()
}

/// Compare analytic gradients of `loss` against central differences on a
/// random sample of leaf coordinates. The graph is left refreshed at its
/// original leaf values.
pub fn check_gradients(g: &mut Graph, loss: NodeId, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    g.refresh_forward()?;
    g.backward(loss)?;

    let leaves = g.differentiable_leaves();
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|(id, _)| g.grad(*id).map(|t| t.data().to_vec()).unwrap_or_default())
        .collect();

    let mut report = GradCheckReport::default();
    for (leaf_idx, (id, name)) in leaves.iter().enumerate() {
        let n = g.value(*id).numel();
        let mut rng = rng::stream(cfg.seed, "gradcheck", leaf_idx as u64);
        let picks = if n <= cfg.coords_per_leaf {
            (0..n).collect::<Vec<_>>()
        } else {
            sample(&mut rng, n, cfg.coords_per_leaf).into_vec()
        };
        for coord in picks {
            let orig = g.value(*id).data()[coord];

            g.leaf_value_mut(*id).data_mut()[coord] = orig + cfg.delta;
            g.refresh_forward()?;
            let plus = g.value(loss).item();
            let branch_plus = branches(g);

            g.leaf_value_mut(*id).data_mut()[coord] = orig - cfg.delta;
            g.refresh_forward()?;
            let minus = g.value(loss).item();
            let branch_minus = branches(g);

            g.leaf_value_mut(*id).data_mut()[coord] = orig;

            if branch_plus != branch_minus {
                report.skipped.push(SkippedCoord {
                    param: name.clone(),
                    coord,
                });
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.delta);
            let a = analytic[leaf_idx].get(coord).copied().unwrap_or(0.0);
            let err = rel_err(a, numeric);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checks.push(CoordCheck {
                param: name.clone(),
                coord,
                analytic: a,
                numeric,
                rel_err: err,
            });
        }
    }
    g.refresh_forward()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::optim::Parameter;
    use crate::numeric::tensor::Tensor;
    use crate::rng;
    use rand::Rng;

    fn rand_tensor(shape: &[usize], tag: &str, idx: u64) -> Tensor {
        let mut r = rng::stream(9, tag, idx);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn linear_conv_chain_matches_to_tight_tolerance() {
        let mut g = Graph::new();
        let x = g.input(rand_tensor(&[1, 2, 9], "x", 0));
        let w = Parameter::new("w", rand_tensor(&[3, 2, 4], "w", 0));
        let wid = g.param(&w);
        let b = Parameter::new("b", rand_tensor(&[3], "b", 0));
        let bid = g.param(&b);
        let y = g.conv1d(x, wid, bid, 2).unwrap();
        let loss = g.sum(y).unwrap();
        let report = check_gradients(&mut g, loss, &GradCheckConfig::default()).unwrap();
        assert!(report.skipped.is_empty());
        assert!(
            report.max_rel_err < 1e-6,
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn readout_chain_matches_to_tight_tolerance() {
        let mut g = Graph::new();
        let m_raw = Parameter::new("w_e", rand_tensor(&[4, 6], "m", 0));
        let mid = g.param(&m_raw);
        let m = g.normalize_columns(mid).unwrap();
        let x = g.input(rand_tensor(&[2, 4, 3], "xr", 0));
        let xn = g.normalize_columns(x).unwrap();
        let scores = g.cosine_scores(m, xn).unwrap();
        let logp = g.log_softmax(scores, 0.5).unwrap();
        let loss = g
            .nll_mean(logp, vec![vec![0, 2, 5], vec![1, 1, 4]], None)
            .unwrap();
        let report = check_gradients(&mut g, loss, &GradCheckConfig::default()).unwrap();
        assert!(report.skipped.is_empty());
        assert!(
            report.max_rel_err < 1e-6,
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn nonlinear_composite_stays_under_loose_tolerance() {
        let mut g = Graph::new();
        let x = g.input(rand_tensor(&[1, 3, 12], "xc", 1));
        let w1 = Parameter::new("w1", rand_tensor(&[4, 3, 5], "w1", 1));
        let w1id = g.param(&w1);
        let b1 = Parameter::new("b1", rand_tensor(&[4], "b1", 1));
        let b1id = g.param(&b1);
        let h = g.conv1d(x, w1id, b1id, 2).unwrap();
        let a = g.relu(h).unwrap();
        let w2 = Parameter::new("w2", rand_tensor(&[4, 3, 5], "w2", 1));
        let w2id = g.param(&w2);
        let b2 = Parameter::new("b2", rand_tensor(&[3], "b2", 1));
        let b2id = g.param(&b2);
        let y = g.deconv1d(a, w2id, b2id, 2).unwrap();
        let loss = g.mean(y).unwrap();
        let report = check_gradients(&mut g, loss, &GradCheckConfig::default()).unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn relu_kink_coordinate_is_skipped_not_failed() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(&[1, 1, 2], vec![0.0, 1.0]).unwrap());
        let y = g.relu(x).unwrap();
        let loss = g.sum(y).unwrap();
        let report = check_gradients(&mut g, loss, &GradCheckConfig::default()).unwrap();
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].coord, 0);
        assert_eq!(report.checks.len(), 1);
        assert!(report.max_rel_err < 1e-9);
    }
}
