use satl_core::losses::*;
use satl_core::models::VaeVars;
use satl_tensor::{Graph, Prng, Tensor};

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

fn scalar(g: &Graph<f64>, v: satl_tensor::Var) -> f64 {
    g.value(v).item().unwrap()
}

#[test]
fn kl_at_prior_and_unit_mean() {
    let mut g = Graph::<f64>::new();
    let mu = g.constant(Tensor::zeros(&[2, 3, 2, 2]));
    let lv = g.constant(Tensor::zeros(&[2, 3, 2, 2]));
    let kl = kl_divergence(&mut g, mu, lv, Reduction::Mean).unwrap();
    assert_eq!(scalar(&g, kl), 0.0);

    let mu = g.constant(t(&[1], vec![1.0]));
    let lv = g.constant(t(&[1], vec![0.0]));
    let kl = kl_divergence(&mut g, mu, lv, Reduction::Sum).unwrap();
    assert_eq!(scalar(&g, kl), 0.5);
}

#[test]
fn kl_matches_monte_carlo() {
    let mut prng = Prng::new(21);
    let mu = [0.7, -0.3, 1.2];
    let lv: [f64; 3] = [-0.5, 0.4, 0.1];
    // KL(q || p) = E_q[log q(z) - log p(z)], summed over independent dimensions.
    let samples = 1_000_000;
    let mut mc = 0.0;
    for _ in 0..samples {
        for d in 0..3 {
            let s = (0.5 * lv[d]).exp();
            let e = prng.normal();
            let z = mu[d] + s * e;
            let log_q = -0.5 * e * e - s.ln();
            let log_p = -0.5 * z * z;
            mc += log_q - log_p;
        }
    }
    mc /= samples as f64;
    let mut g = Graph::<f64>::new();
    let m = g.constant(t(&[1, 3], mu.to_vec()));
    let l = g.constant(t(&[1, 3], lv.to_vec()));
    let kl = kl_divergence(&mut g, m, l, Reduction::Sum).unwrap();
    assert!((scalar(&g, kl) - mc).abs() < 1e-2, "{} vs {mc}", scalar(&g, kl));
}

#[test]
fn kl_is_nonnegative() {
    for seed in 0..20 {
        let mut prng = Prng::new(seed);
        let mut g = Graph::<f64>::new();
        let mu = g.constant(Tensor::randn(&[2, 5], 2.0, &mut prng));
        let lv = g.constant(Tensor::randn(&[2, 5], 2.0, &mut prng));
        let kl = kl_divergence(&mut g, mu, lv, Reduction::Mean).unwrap();
        assert!(scalar(&g, kl) >= 0.0);
    }
}

#[test]
fn cross_entropy_uniform_stable_and_naive() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(t(&[1, 2], vec![0.0, 0.0]));
    let ce = cross_entropy(&mut g, z, &[0]).unwrap();
    assert!((scalar(&g, ce) - std::f64::consts::LN_2).abs() < 1e-9);

    let z = g.constant(t(&[1, 2], vec![1000.0, -1000.0]));
    let ce = cross_entropy(&mut g, z, &[0]).unwrap();
    assert!(scalar(&g, ce).abs() < 1e-12);

    let z = g.constant(t(&[1, 2], vec![0.0, 0.0]));
    assert!(cross_entropy(&mut g, z, &[2]).is_err());

    let mut prng = Prng::new(5);
    for _ in 0..20 {
        let logits = Tensor::<f64>::randn(&[6, 2], 3.0, &mut prng);
        let labels: Vec<usize> = (0..6).map(|_| prng.below(2)).collect();
        let naive: f64 = logits
            .data()
            .chunks(2)
            .zip(&labels)
            .map(|(row, &l)| {
                let e: Vec<f64> = row.iter().map(|v| v.exp()).collect();
                -(e[l] / (e[0] + e[1])).ln()
            })
            .sum::<f64>()
            / 6.0;
        let mut g = Graph::<f64>::new();
        let z = g.constant(logits);
        let ce = cross_entropy(&mut g, z, &labels).unwrap();
        assert!((scalar(&g, ce) - naive).abs() < 1e-10);
    }
}

#[test]
fn gram_examples() {
    let mut g = Graph::<f64>::new();
    let ones = g.constant(Tensor::ones(&[1, 2, 2]));
    let gm = gram_matrix(&mut g, ones).unwrap();
    assert_eq!(g.value(gm).data(), &[1.0]);

    let b = g.constant(t(&[2, 1, 1], vec![1.0, 2.0]));
    let gm = gram_matrix(&mut g, b).unwrap();
    let expected = [0.5, 1.0, 1.0, 2.0];
    for (a, e) in g.value(gm).data().iter().zip(expected) {
        assert!((a - e).abs() < 1e-12);
    }
    assert!(gram_matrix(&mut g, ones).is_ok());
    let flat = g.constant(Tensor::ones(&[2, 2]));
    assert!(gram_matrix(&mut g, flat).is_err());
}

#[test]
fn gram_is_symmetric_psd() {
    let mut prng = Prng::new(2);
    for _ in 0..20 {
        let mut g = Graph::<f64>::new();
        let b = g.constant(Tensor::randn(&[4, 3, 3], 1.0, &mut prng));
        let gm = gram_matrix(&mut g, b).unwrap();
        let d = g.value(gm).data().to_vec();
        for i in 0..4 {
            assert!(d[i * 4 + i] >= 0.0);
            for j in 0..4 {
                assert!((d[i * 4 + j] - d[j * 4 + i]).abs() < 1e-12);
            }
        }
        for _ in 0..10 {
            let v: Vec<f64> = (0..4).map(|_| prng.normal()).collect();
            let q: f64 = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| v[i] * d[i * 4 + j] * v[j]).sum();
            assert!(q >= -1e-9);
        }
    }
}

#[test]
fn reconstruction_zero_and_constant_shift() {
    let mut prng = Prng::new(3);
    let x = Tensor::<f64>::rand_uniform(&[2, 3, 4, 4], 0.0, 1.0, &mut prng);
    let w = LossWeights::default();
    let mut g = Graph::<f64>::new();
    let a = g.constant(x.clone());
    let b = g.constant(x.clone());
    let r = reconstruction_loss(&mut g, a, b, &w).unwrap();
    assert_eq!(scalar(&g, r.total), 0.0);

    let c = 0.1;
    let shifted = g.constant(x.map(|v| v + c));
    let r = reconstruction_loss(&mut g, shifted, b, &w).unwrap();
    assert!((scalar(&g, r.pixel) - c * c).abs() < 1e-12);
    assert!(scalar(&g, r.gram) > 0.0);

    let small = g.constant(Tensor::zeros(&[2, 3, 2, 2]));
    assert!(reconstruction_loss(&mut g, small, b, &w).is_err());
}

#[test]
fn reconstruction_ignores_joint_pixel_permutation() {
    let mut prng = Prng::new(4);
    let x = Tensor::<f64>::rand_uniform(&[1, 2, 3, 3], 0.0, 1.0, &mut prng);
    let y = Tensor::<f64>::rand_uniform(&[1, 2, 3, 3], 0.0, 1.0, &mut prng);
    let mut perm: Vec<usize> = (0..9).collect();
    prng.shuffle(&mut perm);
    let permute = |t: &Tensor<f64>| {
        let d = t.data();
        let data = (0..2).flat_map(|c| perm.iter().map(move |&p| d[c * 9 + p])).collect();
        Tensor::new(&[1, 2, 3, 3], data).unwrap()
    };
    let loss = |a: Tensor<f64>, b: Tensor<f64>| {
        let mut g = Graph::<f64>::new();
        let (a, b) = (g.constant(a), g.constant(b));
        let r = reconstruction_loss(&mut g, a, b, &LossWeights::default()).unwrap();
        scalar(&g, r.total)
    };
    let base = loss(x.clone(), y.clone());
    assert!((loss(permute(&x), permute(&y)) - base).abs() < 1e-12);
}

fn vae_vars(g: &mut Graph<f64>, rec: Tensor<f64>, mu: Tensor<f64>, lv: Tensor<f64>) -> VaeVars {
    let mu = g.constant(mu);
    VaeVars {
        reconstruction: g.constant(rec),
        mu,
        logvar: g.constant(lv),
        z: mu,
    }
}

#[test]
fn alpha_zero_leaves_reconstruction_only() {
    let mut prng = Prng::new(8);
    let x = Tensor::<f64>::rand_uniform(&[2, 3, 4, 4], 0.0, 1.0, &mut prng);
    let rec = Tensor::<f64>::rand_uniform(&[2, 3, 4, 4], 0.0, 1.0, &mut prng);
    let mu = Tensor::<f64>::randn(&[2, 4, 1, 1], 1.0, &mut prng);
    let w = LossWeights {
        alpha: 0.0,
        ..LossWeights::default()
    };
    let mut g = Graph::<f64>::new();
    let v = vae_vars(&mut g, rec, mu.clone(), mu);
    let input = g.constant(x);
    let total = satl_loss(&mut g, &v, input, &w).unwrap().total;
    let r = reconstruction_loss(&mut g, v.reconstruction, input, &w).unwrap();
    assert_eq!(scalar(&g, total), scalar(&g, r.total));

    let mut g = Graph::<f64>::new();
    let x = Tensor::<f64>::rand_uniform(&[2, 3, 4, 4], 0.0, 1.0, &mut prng);
    let zeros = Tensor::zeros(&[2, 4, 1, 1]);
    let v = vae_vars(&mut g, x.clone(), zeros.clone(), zeros);
    let input = g.constant(x);
    let total = satl_loss(&mut g, &v, input, &LossWeights::default()).unwrap().total;
    assert_eq!(scalar(&g, total), 0.0);
}

/// Plain-loop recomputation of the default objective.
fn reference_loss(x: &[f64], r: &[f64], mu: &[f64], lv: &[f64], n: usize, c: usize, hw: usize) -> f64 {
    let kl: f64 = mu.iter().zip(lv).map(|(m, l)| 0.5 * (m * m + l.exp() - l - 1.0)).sum::<f64>() / mu.len() as f64;
    let pixel: f64 = x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    let mut gram = 0.0;
    for s in 0..n {
        let gm = |img: &[f64], i: usize, j: usize| -> f64 {
            let base = s * c * hw;
            (0..hw).map(|p| img[base + i * hw + p] * img[base + j * hw + p]).sum::<f64>() / (c * hw) as f64
        };
        let mut acc = 0.0;
        for i in 0..c {
            for j in 0..c {
                let d = gm(r, i, j) - gm(x, i, j);
                acc += d * d;
            }
        }
        gram += acc / (c * c) as f64;
    }
    gram /= n as f64;
    0.3 * kl + 0.2 * pixel + 0.5 * gram
}

#[test]
fn default_objective_matches_reference() {
    let mut prng = Prng::new(1234);
    let (n, c, h, w) = (3, 3, 5, 5);
    let x = Tensor::<f64>::rand_uniform(&[n, c, h, w], 0.0, 1.0, &mut prng);
    let rec = Tensor::<f64>::rand_uniform(&[n, c, h, w], 0.0, 1.0, &mut prng);
    let mu = Tensor::<f64>::randn(&[n, 4, 2, 2], 1.0, &mut prng);
    let lv = Tensor::<f64>::randn(&[n, 4, 2, 2], 0.5, &mut prng);
    let expected = reference_loss(x.data(), rec.data(), mu.data(), lv.data(), n, c, h * w);
    let mut g = Graph::<f64>::new();
    let v = vae_vars(&mut g, rec, mu, lv);
    let input = g.constant(x);
    let loss = satl_loss(&mut g, &v, input, &LossWeights::default()).unwrap();
    assert!((scalar(&g, loss.total) - expected).abs() < 1e-6);
}

#[test]
fn sum_reduction_is_per_sample_sum() {
    let mut g = Graph::<f64>::new();
    let mu = g.constant(t(&[2, 2], vec![1.0, 0.0, 1.0, 1.0]));
    let lv = g.constant(Tensor::zeros(&[2, 2]));
    let kl = kl_divergence(&mut g, mu, lv, Reduction::Sum).unwrap();
    // Sample sums 0.5 and 1.0, averaged over the batch.
    assert_eq!(scalar(&g, kl), 0.75);
}

#[test]
fn negative_weights_are_rejected() {
    let w = LossWeights {
        beta1: -0.1,
        ..LossWeights::default()
    };
    assert!(w.validate().is_err());
    assert!(LossWeights::default().validate().is_ok());
}
