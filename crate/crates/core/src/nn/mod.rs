//! Small dense networks, losses and the AdamW optimizer.

pub mod checkpoint;
pub mod loss;
pub mod mlp;
pub mod optim;

pub use checkpoint::NetCheckpoint;
pub use loss::{cross_entropy, cross_entropy_grad, cross_entropy_rows, entropy_rows, mse, mse_grad};
pub use mlp::{softmax_in_place, Activation, Dense, Gradients, Mlp, Trace};
pub use optim::{AdamWConfig, AdamWState, LrSchedule};

#[cfg(test)]
mod gradcheck {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn numeric_grad(net: &Mlp, f: &dyn Fn(&Mlp) -> f64) -> Vec<f64> {
        let base = net.flat_params();
        let mut probe = net.clone();
        let h = 1e-6;
        (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] += h;
                probe.set_flat_params(&p).unwrap();
                let up = f(&probe);
                p[i] -= 2.0 * h;
                probe.set_flat_params(&p).unwrap();
                let down = f(&probe);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let tol = 1e-6 * (1.0 + a.abs().max(n.abs()));
            assert!((a - n).abs() < tol, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn tanh_mse_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = Mlp::new(&[3, 6, 5, 1], Activation::Tanh, Activation::Identity, &mut rng);
        let x: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |n: &Mlp| mse(n.forward(&x, 5).unwrap().output(), &t);
        let trace = net.forward(&x, 5).unwrap();
        let (g, _) = net.backward(&trace, &mse_grad(trace.output(), &t));
        assert_close(&g.flat(), &numeric_grad(&net, &loss));
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new(&[2, 8, 2], Activation::Relu, Activation::Softmax, &mut rng);
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
        let loss = |n: &Mlp| cross_entropy(n.forward(&x, 8).unwrap().output(), 2, &y);
        let trace = net.forward(&x, 8).unwrap();
        let (g, _) = net.backward(&trace, &cross_entropy_grad(trace.output(), 2, &y));
        assert_close(&g.flat(), &numeric_grad(&net, &loss));
    }

    #[test]
    fn softmax_ce_composite_is_p_minus_onehot() {
        // a single linear softmax layer: dL/dz = (p - y)/N, so dL/db is its row sum
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = Mlp::new(&[3, 2], Activation::Identity, Activation::Softmax, &mut rng);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = [0u8, 1, 1, 0];
        let trace = net.forward(&x, 4).unwrap();
        let (g, _) = net.backward(&trace, &cross_entropy_grad(trace.output(), 2, &y));
        let p = trace.output();
        for c in 0..2 {
            let expect: f64 = (0..4)
                .map(|r| p[r * 2 + c] - if y[r] as usize == c { 1.0 } else { 0.0 })
                .sum::<f64>()
                / 4.0;
            assert!((g.biases[0][c] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = Mlp::new(&[4, 5, 3], Activation::Tanh, Activation::Softmax, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = [0.3, -1.1, 0.7];
        let f = |x: &[f64]| net.predict(x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let trace = net.forward(&x, 1).unwrap();
        let (_, dx) = net.backward(&trace, &w);
        for i in 0..4 {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (f(&a) - f(&b)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-8);
        }
    }
}
