//! Per-layer leaky-integrator relaxation.
//!
//! Instead of reading each layer's activation adjoint off the layer above,
//! every hidden layer's state is relaxed toward a frozen top-down target by
//! explicit Euler steps `x <- x + tau * (target - x)`. The fixed point of
//! that dynamics is the exact adjoint, so at convergence the resulting
//! weight updates coincide with the loss gradients while each layer only
//! ever sees its own state and the target handed down from the layer above.

use crate::error::{Error, Result};
use crate::linalg::{outer, Matrix, Rng, Vector};
use crate::network::{FPropState, Network};

/// Relaxation settings.
///
/// `tau` is the Euler step (the inference learning rate, distinct from the
/// weight learning rate), `eps` the convergence threshold on the step norm,
/// `mu` an optional scale on the top-layer seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxConfig {
    pub tau: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub mu: f64,
}

impl RelaxConfig {
    pub fn new(tau: f64, eps: f64, max_iters: usize, mu: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config {
                detail: format!("tau must be in (0, 1], got {tau}"),
            });
        }
        if !(eps > 0.0) {
            return Err(Error::Config {
                detail: format!("eps must be positive, got {eps}"),
            });
        }
        if max_iters == 0 {
            return Err(Error::Config {
                detail: "max_iters must be >= 1".into(),
            });
        }
        if !(mu > 0.0) {
            return Err(Error::Config {
                detail: format!("mu must be positive, got {mu}"),
            });
        }
        Ok(RelaxConfig {
            tau,
            eps,
            max_iters,
            mu,
        })
    }
}

impl Default for RelaxConfig {
    fn default() -> Self {
        RelaxConfig {
            tau: 0.5,
            eps: 1e-8,
            max_iters: 200,
            mu: 1.0,
        }
    }
}

/// Fixed random feedback matrices replacing the weight transposes in the
/// backward targets. `matrix(l)` has the shape of layer l's bias-stripped
/// transpose and is never trained.
#[derive(Debug, Clone)]
pub struct FeedbackMatrices {
    mats: Vec<Matrix>,
}

impl FeedbackMatrices {
    /// Feedback matrix for layer `l`, 1-based.
    pub fn matrix(&self, l: usize) -> &Matrix {
        &self.mats[l - 1]
    }

    pub fn depth(&self) -> usize {
        self.mats.len()
    }
}

/// Random feedback matrices with entries uniform on [-scale, scale), one per
/// layer, shaped like the bias-stripped weight transposes. A zero scale
/// yields zero matrices (legal but kills the backward signal).
pub fn make_feedback_matrices(net: &Network, rng: &mut Rng, scale: f64) -> FeedbackMatrices {
    assert!(scale >= 0.0, "feedback scale must be non-negative");
    let arch = net.arch();
    let mats = (1..=arch.depth())
        .map(|l| {
            let (rows, cols) = (arch.size(l - 1), arch.size(l));
            let mut m = Matrix::zeros(rows, cols);
            if scale > 0.0 {
                for r in 0..rows {
                    for c in 0..cols {
                        m[(r, c)] = rng.uniform(-scale, scale);
                    }
                }
            }
            m
        })
        .collect();
    FeedbackMatrices { mats }
}

/// Equilibrium state set: per layer the relaxed activation adjoint, its
/// pre-activation counterpart, and how the relaxation went.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    xeq: Vec<Vector>, // index l-1 for layer l = 1..=L
    yeq: Vec<Vector>,
    iters: Vec<usize>,
    converged: Vec<bool>,
}

impl EquilibriumState {
    pub fn depth(&self) -> usize {
        self.yeq.len()
    }

    pub fn xeq(&self, l: usize) -> &Vector {
        &self.xeq[l - 1]
    }

    pub fn yeq(&self, l: usize) -> &Vector {
        &self.yeq[l - 1]
    }

    /// Relaxation iterations spent on layer `l` (0 for the seeded top layer).
    pub fn iters(&self, l: usize) -> usize {
        self.iters[l - 1]
    }

    pub fn converged(&self, l: usize) -> bool {
        self.converged[l - 1]
    }

    pub fn total_iters(&self) -> u64 {
        self.iters.iter().map(|&i| i as u64).sum()
    }

    pub fn nonconverged_layers(&self) -> u64 {
        self.converged.iter().filter(|&&c| !c).count() as u64
    }
}

/// Explicit Euler relaxation of `x` toward a frozen `target`.
///
/// Each iteration takes the step `x <- x + tau * (target - x)` and then
/// checks the remaining step norm against `eps`. Non-convergence within
/// `max_iters` is reported through the flag, never as an error. After `t`
/// steps the state is exactly `target + (1-tau)^t (x_init - target)` up to
/// rounding.
pub fn relax_layer(x_init: &Vector, target: &Vector, cfg: &RelaxConfig) -> (Vector, usize, bool) {
    assert_eq!(
        x_init.len(),
        target.len(),
        "relax_layer: state and target lengths differ"
    );
    let mut x: Vec<f64> = x_init.as_slice().to_vec();
    let ts = target.as_slice();
    for t in 1..=cfg.max_iters {
        for (xi, ti) in x.iter_mut().zip(ts) {
            *xi += cfg.tau * (ti - *xi);
        }
        // norm of the step a further iteration would take
        let mut acc = 0.0;
        for (xi, ti) in x.iter().zip(ts) {
            let d = ti - xi;
            acc += d * d;
        }
        if acc.sqrt() < cfg.eps {
            return (Vector::new(x), t, true);
        }
    }
    (Vector::new(x), cfg.max_iters, false)
}

/// Top-down equilibrium pass.
///
/// The top layer is seeded directly with `mu * xstar_top`; every layer below
/// relaxes from its forward activation toward the target formed from the
/// layer above's already-frozen equilibrium value (through the bias-stripped
/// weight transpose, or through the fixed feedback matrix when one is
/// supplied). Layers are processed strictly top-down, each relaxed to
/// convergence before the next target is formed.
pub fn equilibrium_f_adjoint(
    net: &Network,
    fstate: &FPropState,
    xstar_top: &Vector,
    cfg: &RelaxConfig,
    feedback: Option<&FeedbackMatrices>,
) -> Result<EquilibriumState> {
    let depth = net.arch().depth();
    if fstate.depth() != depth {
        return Err(Error::Shape {
            op: "equilibrium_f_adjoint",
            detail: format!("state depth {} vs network depth {}", fstate.depth(), depth),
        });
    }
    if xstar_top.len() != net.arch().output_size() {
        return Err(Error::Shape {
            op: "equilibrium_f_adjoint",
            detail: format!(
                "seed length {} vs output layer {}",
                xstar_top.len(),
                net.arch().output_size()
            ),
        });
    }
    let activation = net.activation();
    let mut xeq = vec![Vector::zeros(0); depth];
    let mut yeq = vec![Vector::zeros(0); depth];
    let mut iters = vec![0usize; depth];
    let mut converged = vec![true; depth];

    xeq[depth - 1] = xstar_top.scale(cfg.mu);
    yeq[depth - 1] = xeq[depth - 1].hadamard(&activation.derivative(fstate.y(depth)))?;

    for l in (2..=depth).rev() {
        let target = match feedback {
            Some(fb) => fb.matrix(l).mat_vec(&yeq[l - 1])?,
            None => net.weight(l).mat_t_vec_nobias(&yeq[l - 1])?,
        };
        let x_init = fstate.x(l - 1).without_last();
        let (x, it, conv) = relax_layer(&x_init, &target, cfg);
        yeq[l - 2] = x.hadamard(&activation.derivative(fstate.y(l - 1)))?;
        xeq[l - 2] = x;
        iters[l - 2] = it;
        converged[l - 2] = conv;
    }

    Ok(EquilibriumState {
        xeq,
        yeq,
        iters,
        converged,
    })
}

/// Per-layer weight gradients from the equilibrium state: the layer-`l`
/// gradient is the outer product of the relaxed pre-activation adjoint with
/// the previous forward activation (bias entry included).
pub fn local_weight_gradients(fstate: &FPropState, eq: &EquilibriumState) -> Vec<Matrix> {
    (1..=fstate.depth())
        .map(|l| outer(eq.yeq(l), fstate.x(l - 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ActivationKind, Architecture, LossKind};

    fn cfg(tau: f64, eps: f64, max_iters: usize, mu: f64) -> RelaxConfig {
        RelaxConfig::new(tau, eps, max_iters, mu).unwrap()
    }

    fn random_net(seed: u64, sizes: Vec<usize>) -> Network {
        let mut rng = Rng::seed_from(seed);
        Network::xavier(
            Architecture::new(sizes).unwrap(),
            ActivationKind::Sigmoid,
            LossKind::Bce,
            &mut rng,
        )
    }

    fn seeded_case(net: &Network, seed: u64) -> (Vector, Vector) {
        let mut rng = Rng::seed_from(seed.wrapping_mul(7919).wrapping_add(1));
        let input = Vector::new(
            (0..net.arch().input_size())
                .map(|_| rng.uniform(0.0, 1.0))
                .collect(),
        );
        let target = crate::data::one_hot(rng.below(net.arch().output_size()), net.arch().output_size()).unwrap();
        (input, target)
    }

    #[test]
    fn relax_one_step_jump_with_full_tau() {
        let x0 = Vector::new(vec![5.0, -3.0]);
        let c = Vector::new(vec![0.25, 0.75]);
        let (x, iters, conv) = relax_layer(&x0, &c, &cfg(1.0, 1e-8, 50, 1.0));
        assert_eq!(iters, 1);
        assert!(conv);
        for (a, b) in x.iter().zip(c.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn relax_geometric_count_matches_closed_form() {
        let (x, iters, conv) = relax_layer(
            &Vector::new(vec![1.0]),
            &Vector::new(vec![0.0]),
            &cfg(0.5, 1e-8, 200, 1.0),
        );
        assert!(conv);
        assert_eq!(iters, 27); // 0.5^27 < 1e-8 <= 0.5^26
        assert!((x[0] - 0.5f64.powi(27)).abs() <= 1e-20);
    }

    #[test]
    fn relax_already_at_fixed_point() {
        let v = Vector::new(vec![0.1, 0.2, 0.3]);
        let (x, iters, conv) = relax_layer(&v, &v, &cfg(0.5, 1e-8, 50, 1.0));
        assert_eq!(iters, 1);
        assert!(conv);
        assert_eq!(x.as_slice(), v.as_slice());
    }

    #[test]
    fn relax_reports_nonconvergence_via_flag() {
        let (_, iters, conv) = relax_layer(
            &Vector::new(vec![1.0]),
            &Vector::new(vec![0.0]),
            &cfg(0.5, 1e-12, 5, 1.0),
        );
        assert_eq!(iters, 5);
        assert!(!conv);
    }

    #[test]
    fn contraction_factor_per_step() {
        // distance to the target shrinks by exactly (1 - tau) each step
        for &tau in &[0.1, 0.5, 1.0] {
            let x0 = Vector::new(vec![0.9, -0.4, 0.3]);
            let c = Vector::new(vec![0.1, 0.2, -0.5]);
            let d0 = {
                let mut acc = 0.0;
                for (a, b) in x0.iter().zip(c.iter()) {
                    acc += (a - b) * (a - b);
                }
                acc.sqrt()
            };
            let mut prev = d0;
            for t in 1..=20 {
                let (x, _, _) = relax_layer(&x0, &c, &cfg(tau, 1e-300, t, 1.0));
                let mut acc = 0.0;
                for (a, b) in x.iter().zip(c.iter()) {
                    acc += (a - b) * (a - b);
                }
                let d = acc.sqrt();
                let expected = (1.0 - tau) * prev;
                assert!(
                    (d - expected).abs() <= 1e-13 * d0.max(expected),
                    "tau={tau} t={t}: {d} vs {expected}"
                );
                prev = d;
                if d == 0.0 {
                    break;
                }
            }
        }
    }

    #[test]
    fn equilibrium_matches_adjoint_at_tight_eps() {
        let net = random_net(17, vec![6, 5, 4, 3]);
        let (input, target) = seeded_case(&net, 17);
        let st = net.f_propagate(&input).unwrap();
        let (_, seed) = net.loss_and_output_adjoint(st.prediction(), &target).unwrap();
        let adj = net.f_adjoint(&st, &seed).unwrap();
        let eq = equilibrium_f_adjoint(&net, &st, &seed, &cfg(0.5, 1e-14, 2000, 1.0), None).unwrap();
        for l in 1..=3 {
            assert!(eq.converged(l));
            let num = diff_norm(eq.xeq(l), adj.xstar(l));
            let den = adj.xstar(l).l2_norm().max(1e-12);
            assert!(num / den <= 1e-9, "layer {l}: rel {}", num / den);
        }
    }

    #[test]
    fn equilibrium_seed_scale_is_linear() {
        let net = random_net(23, vec![5, 4, 3]);
        let (input, target) = seeded_case(&net, 23);
        let st = net.f_propagate(&input).unwrap();
        let (_, seed) = net.loss_and_output_adjoint(st.prediction(), &target).unwrap();
        let tight = cfg(0.5, 1e-14, 5000, 1.0);
        let doubled = cfg(0.5, 1e-14, 5000, 2.0);
        let eq1 = equilibrium_f_adjoint(&net, &st, &seed, &tight, None).unwrap();
        let eq2 = equilibrium_f_adjoint(&net, &st, &seed, &doubled, None).unwrap();
        // the seeded top layer doubles exactly; relaxed layers double to
        // within the convergence tolerance
        for (a, b) in eq2.xeq(2).iter().zip(eq1.xeq(2).iter()) {
            assert_eq!(*a, 2.0 * b);
        }
        for l in 1..=2 {
            for (a, b) in eq2.xeq(l).iter().zip(eq1.xeq(l).iter()) {
                assert!((a - 2.0 * b).abs() <= 1e-9 * (1.0 + b.abs()), "layer {l}");
            }
            for (a, b) in eq2.yeq(l).iter().zip(eq1.yeq(l).iter()) {
                assert!((a - 2.0 * b).abs() <= 1e-9 * (1.0 + b.abs()), "layer {l}");
            }
        }
    }

    #[test]
    fn feedback_equal_to_transpose_reproduces_standard_mode() {
        let net = random_net(31, vec![4, 3, 2]);
        let (input, target) = seeded_case(&net, 31);
        let st = net.f_propagate(&input).unwrap();
        let (_, seed) = net.loss_and_output_adjoint(st.prediction(), &target).unwrap();
        // copy the bias-stripped transposes into feedback matrices
        let arch = net.arch();
        let mats: Vec<Matrix> = (1..=arch.depth())
            .map(|l| {
                let w = net.weight(l);
                let mut b = Matrix::zeros(arch.size(l - 1), arch.size(l));
                for r in 0..w.rows() {
                    for c in 0..w.cols() - 1 {
                        b[(c, r)] = w[(r, c)];
                    }
                }
                b
            })
            .collect();
        let fb = FeedbackMatrices { mats };
        let relax = cfg(0.5, 1e-10, 500, 1.0);
        let plain = equilibrium_f_adjoint(&net, &st, &seed, &relax, None).unwrap();
        let aligned = equilibrium_f_adjoint(&net, &st, &seed, &relax, Some(&fb)).unwrap();
        for l in 1..=2 {
            assert_eq!(plain.xeq(l).as_slice(), aligned.xeq(l).as_slice());
            assert_eq!(plain.yeq(l).as_slice(), aligned.yeq(l).as_slice());
            assert_eq!(plain.iters(l), aligned.iters(l));
        }
    }

    #[test]
    fn feedback_matrix_shapes_and_determinism() {
        let net = random_net(1, vec![784, 128, 10]);
        let fb = make_feedback_matrices(&net, &mut Rng::seed_from(9), 0.05);
        assert_eq!((fb.matrix(2).rows(), fb.matrix(2).cols()), (128, 10));
        assert_eq!((fb.matrix(1).rows(), fb.matrix(1).cols()), (784, 128));

        let fb2 = make_feedback_matrices(&net, &mut Rng::seed_from(9), 0.05);
        assert_eq!(fb.matrix(1), fb2.matrix(1));
        assert_eq!(fb.matrix(2), fb2.matrix(2));

        let zero = make_feedback_matrices(&net, &mut Rng::seed_from(9), 0.0);
        assert!(zero.matrix(2).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn local_gradients_zero_when_equilibrium_zero() {
        let net = random_net(41, vec![3, 2]);
        let (input, _) = seeded_case(&net, 41);
        let st = net.f_propagate(&input).unwrap();
        let eq = equilibrium_f_adjoint(
            &net,
            &st,
            &Vector::new(vec![0.0, 0.0]),
            &RelaxConfig::default(),
            None,
        )
        .unwrap();
        for g in local_weight_gradients(&st, &eq) {
            assert!(g.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn local_gradients_match_exact_gradients_at_tight_eps() {
        let net = random_net(47, vec![6, 5, 4, 3]);
        let (input, target) = seeded_case(&net, 47);
        let st = net.f_propagate(&input).unwrap();
        let (_, seed) = net.loss_and_output_adjoint(st.prediction(), &target).unwrap();
        let adj = net.f_adjoint(&st, &seed).unwrap();
        let exact = crate::network::weight_gradients(&st, &adj);
        let eq = equilibrium_f_adjoint(&net, &st, &seed, &cfg(0.5, 1e-12, 200, 1.0), None).unwrap();
        let local = local_weight_gradients(&st, &eq);
        for l in 0..exact.len() {
            let mut num = 0.0;
            for (a, b) in local[l].as_slice().iter().zip(exact[l].as_slice()) {
                num += (a - b) * (a - b);
            }
            let rel = num.sqrt() / exact[l].frobenius_norm().max(1e-12);
            assert!(rel <= 1e-9, "layer {}: rel {rel}", l + 1);
        }
    }

    #[test]
    fn relaxation_reads_only_the_frozen_target() {
        // once the target for a layer is frozen, states of the layers above
        // are irrelevant: reconstructing the relaxation from (x_init, target)
        // alone reproduces the full pass bitwise
        let net = random_net(53, vec![5, 4, 3, 2]);
        let (input, target) = seeded_case(&net, 53);
        let st = net.f_propagate(&input).unwrap();
        let (_, seed) = net.loss_and_output_adjoint(st.prediction(), &target).unwrap();
        let relax = RelaxConfig::default();
        let eq = equilibrium_f_adjoint(&net, &st, &seed, &relax, None).unwrap();

        for l in (2..=3).rev() {
            let frozen_target = net.weight(l).mat_t_vec_nobias(eq.yeq(l)).unwrap();
            let x_init = st.x(l - 1).without_last();
            let (x, iters, conv) = relax_layer(&x_init, &frozen_target, &relax);
            assert_eq!(x.as_slice(), eq.xeq(l - 1).as_slice());
            assert_eq!(iters, eq.iters(l - 1));
            assert_eq!(conv, eq.converged(l - 1));
        }
    }

    #[test]
    fn config_validation() {
        assert!(RelaxConfig::new(0.0, 1e-8, 10, 1.0).is_err());
        assert!(RelaxConfig::new(1.5, 1e-8, 10, 1.0).is_err());
        assert!(RelaxConfig::new(0.5, 0.0, 10, 1.0).is_err());
        assert!(RelaxConfig::new(0.5, 1e-8, 0, 1.0).is_err());
        assert!(RelaxConfig::new(0.5, 1e-8, 10, 0.0).is_err());
    }

    fn diff_norm(a: &Vector, b: &Vector) -> f64 {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            acc += (x - y) * (x - y);
        }
        acc.sqrt()
    }
}
