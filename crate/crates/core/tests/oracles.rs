//! Independent re-derivations of the library's numerics.

use mixroute::embed::{
    inter_loss, inter_loss_grad, intra_loss, intra_loss_grad, objective, objective_grad, total_loss, ProjectionModel,
};
use mixroute::feedback::FeedbackNet;
use mixroute::predict::{PredictorConfig, RegressorState, Target, RegressorKind};
use mixroute::uncertainty::ArmUncertainty;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Straight-line evaluation: no log-sum-exp, explicit loops.
fn naive_intra(emb: &[Vec<f64>], labels: &[usize], centers: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (e, &y) in emb.iter().zip(labels) {
        let mut denom = 0.0;
        let mut own = 0.0;
        for (j, c) in centers.iter().enumerate() {
            let mut d = 0.0;
            for k in 0..e.len() {
                d += e[k] * c[k];
            }
            denom += d.exp();
            if j == y {
                own = d.exp();
            }
        }
        total += -(own / denom).ln();
    }
    total / emb.len() as f64
}

fn naive_inter(centers: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for j in 0..centers.len() {
        let mut s = 0.0;
        for k in 0..centers.len() {
            if k != j {
                let mut d = 0.0;
                for t in 0..centers[j].len() {
                    d += centers[j][t] * centers[k][t];
                }
                s += d.exp();
            }
        }
        total += s.ln();
    }
    total / centers.len() as f64
}

fn batch(seed: u64, n: usize, domains: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = (0..n).map(|_| unit(rand_vec(&mut rng, dim))).collect();
    let labels = (0..n).map(|_| rng.random_range(0..domains)).collect();
    let centers = (0..domains).map(|_| unit(rand_vec(&mut rng, dim))).collect();
    (emb, labels, centers)
}

#[test]
fn losses_match_scalar_reevaluation() {
    for seed in 0..20 {
        let (emb, labels, centers) = batch(seed, 4 + seed as usize, 3, 5);
        let intra = intra_loss(&emb, &labels, &centers).unwrap();
        let inter = inter_loss(&centers).unwrap();
        assert!((intra - naive_intra(&emb, &labels, &centers)).abs() < 1e-10);
        assert!((inter - naive_inter(&centers)).abs() < 1e-10);
        assert_eq!(total_loss(&emb, &labels, &centers).unwrap(), intra + inter);
    }
}

#[test]
fn loss_gradients_match_central_differences() {
    let h = 1e-5;
    for seed in 0..5 {
        let (emb, labels, centers) = batch(100 + seed, 10, 3, 4);
        let (_, g_emb, g_cen) = intra_loss_grad(&emb, &labels, &centers).unwrap();
        let (_, g_inter) = inter_loss_grad(&centers).unwrap();
        for i in 0..emb.len() {
            for k in 0..4 {
                let mut p = emb.clone();
                let mut m = emb.clone();
                p[i][k] += h;
                m[i][k] -= h;
                let fd = (naive_intra(&p, &labels, &centers) - naive_intra(&m, &labels, &centers)) / (2.0 * h);
                assert!(rel_err(fd, g_emb[i][k]) < 1e-4 || (fd - g_emb[i][k]).abs() < 1e-9);
            }
        }
        for j in 0..centers.len() {
            for k in 0..4 {
                let mut p = centers.clone();
                let mut m = centers.clone();
                p[j][k] += h;
                m[j][k] -= h;
                let fd_intra = (naive_intra(&emb, &labels, &p) - naive_intra(&emb, &labels, &m)) / (2.0 * h);
                let fd_inter = (naive_inter(&p) - naive_inter(&m)) / (2.0 * h);
                assert!(rel_err(fd_intra, g_cen[j][k]) < 1e-4 || (fd_intra - g_cen[j][k]).abs() < 1e-9);
                assert!(rel_err(fd_inter, g_inter[j][k]) < 1e-4 || (fd_inter - g_inter[j][k]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn objective_gradient_matches_central_differences() {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (d_route, d_base) = (3, 5);
    let mut model = ProjectionModel::from_weight(d_route, d_base, rand_vec(&mut rng, d_route * d_base)).unwrap();
    model.centers = (0..3).map(|_| rand_vec(&mut rng, d_route)).collect();
    let bases: Vec<Vec<f64>> = (0..10).map(|_| rand_vec(&mut rng, d_base)).collect();
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let g = objective_grad(&model, &bases, &labels).unwrap();
    for idx in 0..model.weight.len() {
        let mut p = model.clone();
        let mut m = model.clone();
        p.weight[idx] += h;
        m.weight[idx] -= h;
        let fd = (objective(&p, &bases, &labels).unwrap() - objective(&m, &bases, &labels).unwrap()) / (2.0 * h);
        assert!(rel_err(fd, g.weight[idx]) < 1e-4 || (fd - g.weight[idx]).abs() < 1e-9, "weight {idx}: {fd} vs {}", g.weight[idx]);
    }
    for j in 0..3 {
        for k in 0..d_route {
            let mut p = model.clone();
            let mut m = model.clone();
            p.centers[j][k] += h;
            m.centers[j][k] -= h;
            let fd = (objective(&p, &bases, &labels).unwrap() - objective(&m, &bases, &labels).unwrap()) / (2.0 * h);
            assert!(rel_err(fd, g.centers[j][k]) < 1e-4 || (fd - g.centers[j][k]).abs() < 1e-9);
        }
    }
}

#[test]
fn ridge_fit_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d, ridge) = (40, 6, 0.05);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| rand_vec(&mut rng, d)).collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let cfg = PredictorConfig::default();
    let mut st = RegressorState::new(Target::Quality, RegressorKind::LinearRidge, d, &cfg);
    st.fit(&xs, &ys, ridge).unwrap();

    // [X | 1] with the intercept left unpenalized, targets centred on the prior
    let z = DMatrix::from_fn(n, d + 1, |i, j| if j < d { xs[i][j] } else { 1.0 });
    let y = DVector::from_iterator(n, ys.iter().map(|v| v - cfg.quality_prior));
    let mut pen = DMatrix::<f64>::identity(d + 1, d + 1) * ridge;
    pen[(d, d)] = 0.0;
    let lhs = z.transpose() * &z + pen;
    let theta = lhs.lu().solve(&(z.transpose() * y)).unwrap();
    for x in &xs {
        let expect = cfg.quality_prior + theta[d] + (0..d).map(|j| theta[j] * x[j]).sum::<f64>();
        assert!((st.predict_raw(x).unwrap() - expect).abs() < 1e-8);
    }
}

#[test]
fn sherman_morrison_matches_direct_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = 8;
    let mut arm = ArmUncertainty::new(d);
    let mut a = DMatrix::<f64>::identity(d, d);
    for _ in 0..50 {
        let e = rand_vec(&mut rng, d);
        arm.update(&e).unwrap();
        let v = DVector::from_vec(e);
        a += &v * v.transpose();
        let direct = a.clone().try_inverse().unwrap();
        assert!((arm.a_inv() - &direct).norm() < 1e-9);
        let probe = rand_vec(&mut rng, d);
        let p = DVector::from_vec(probe.clone());
        let quad = (p.transpose() * &direct * &p)[(0, 0)];
        assert!((arm.score(&probe).unwrap() - quad).abs() < 1e-9);
    }
}

#[test]
fn repeated_unit_updates_give_one_over_n_plus_one() {
    let mut e = vec![0.0; 6];
    e[2] = 1.0;
    let mut arm = ArmUncertainty::new(6);
    for n in 0..=100u32 {
        assert!((arm.score(&e).unwrap() - 1.0 / (n as f64 + 1.0)).abs() < 1e-8);
        arm.update(&e).unwrap();
    }
}

#[test]
fn policy_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids: Vec<String> = (0..4).map(|i| format!("m{i}")).collect();
    let mut net = FeedbackNet::new(6, 8, ids, 10, 9);
    // non-zero output layer so every layer carries gradient
    let mut p = net.params();
    for v in p.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    net.set_params(&p);
    let e = unit(rand_vec(&mut rng, 6));
    let chosen = 2;
    let g = net.log_prob_grad(&e, chosen).unwrap().flat();
    assert_eq!(g.len(), p.len());
    let h = 1e-5;
    for i in 0..p.len() {
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus[i] += h;
        minus[i] -= h;
        let mut np = net.clone();
        np.set_params(&plus);
        let mut nm = net.clone();
        nm.set_params(&minus);
        let fd = (np.log_prob(&e, chosen).unwrap() - nm.log_prob(&e, chosen).unwrap()) / (2.0 * h);
        assert!(rel_err(fd, g[i]) < 1e-4 || (fd - g[i]).abs() < 1e-9, "param {i}: {fd} vs {}", g[i]);
    }
}
