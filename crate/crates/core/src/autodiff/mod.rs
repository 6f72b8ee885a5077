//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is rebuilt for every evaluation. Each op appends a node that
//! owns its output tensor, so node order is a topological order and
//! [`Graph::backward`] is a single reverse sweep. Every forward op rejects
//! non-finite results.
//!
//! ```
//! use stylelab_core::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[6.0]);
//! ```

mod check;
mod graph;
mod tensor;

pub use check::{grad_check, grad_check_coords, GradCheckReport};
pub use graph::{Gradients, Graph, Mask, NodeId};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::math;
    use rand::Rng;

    fn mat(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let i = g.constant(Tensor::identity(2));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let s = g.softmax(v).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn tanh_matches_analytic_value() {
        // (e - 1) / (e + 1) with e = exp(1) is tanh(0.5).
        let e = core::f64::consts::E;
        let expected = (e - 1.0) / (e + 1.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.5));
        let y = g.tanh(x).unwrap();
        let got = g.value(y).item().unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.462_117_157_260_009_8).abs() < 1e-15);
    }

    #[test]
    fn shape_and_domain_errors() {
        let mut g = Graph::new();
        let a = g.constant(mat(2, 3, &[1.0; 6]));
        let b = g.constant(mat(2, 3, &[1.0; 6]));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
        let z = g.constant(Tensor::vector(vec![0.0, 1.0]));
        assert!(matches!(g.log(z), Err(Error::Domain(_))));
        let zero = g.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!(matches!(g.l2norm(zero), Err(Error::Domain(_))));
    }

    #[test]
    fn overflow_is_reported_as_non_finite() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![50.0 / 0.02, 0.0, -50.0 / 0.02]));
        let s = g.softmax(x).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut g = Graph::new();
        let v = g.param(Tensor::vector(vec![0.3, -1.2, 2.5, 0.0]));
        let s = g.softmax(v).unwrap();
        let l = g.sum(s).unwrap();
        let grads = g.backward(l).unwrap();
        for x in grads.get(v).unwrap() {
            assert!(x.abs() < 1e-15, "{x}");
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let v = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn quadratic_bowl_grad_check() {
        let p = Tensor::vector(vec![0.5, -1.5, 2.0]);
        let report = grad_check(
            |g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                g.sum(sq)
            },
            &[p],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| scale * (rng.gen::<f64>() * 2.0 - 1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn three_layer_tanh_mlp_grad_check() {
        let mut rng = math::rng(11);
        let x = random_tensor(&mut rng, &[4, 5], 1.0);
        let params = [
            random_tensor(&mut rng, &[5, 6], 0.7),
            random_tensor(&mut rng, &[6], 0.3),
            random_tensor(&mut rng, &[6, 6], 0.7),
            random_tensor(&mut rng, &[6, 3], 0.7),
        ];
        let report = grad_check(
            |g, p| {
                let xi = g.constant(x.clone());
                let h = g.matmul(xi, p[0])?;
                let h = g.add(h, p[1])?;
                let h = g.tanh(h)?;
                let h = g.matmul(h, p[2])?;
                let h = g.tanh(h)?;
                let h = g.matmul(h, p[3])?;
                let h = g.tanh(h)?;
                let sq = g.mul(h, h)?;
                g.sum(sq)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let mut rng = math::rng(5);
        let mut g = Graph::new();
        let w = g.param(random_tensor(&mut rng, &[3, 3], 1.0));
        let x = g.constant(random_tensor(&mut rng, &[2, 3], 1.0));
        let h = g.matmul(x, w).unwrap();
        let s = g.log_softmax(h).unwrap();
        let l = g.sum(s).unwrap();
        let a = g.backward(l).unwrap();
        let b = g.backward(l).unwrap();
        assert_eq!(a.get(w).unwrap(), b.get(w).unwrap());
    }

    #[test]
    fn masked_softmax_zeroes_excluded_entries() {
        let mut g = Graph::new();
        let x = g.param(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let s = g.softmax_masked(x, Some(vec![true, false, true, true])).unwrap();
        assert_eq!(&g.value(s).data()[..2], &[1.0, 0.0]);
    }

    #[test]
    fn grad_reverse_negates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let r = g.grad_reverse(x, 1.0).unwrap();
        let y = g.mul(r, r).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(g.value(y).item().unwrap(), 4.0);
        assert_eq!(grads.get(x).unwrap(), &[-4.0]);
    }
}
