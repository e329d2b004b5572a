use rand::Rng;
use sourcedr_core::dgp::{discrete_ground_truth, DgpSpec, DiscreteDgp, DiscreteFunctional};
use sourcedr_core::harness::random_discrete_dgp;
use sourcedr_core::inference::population_theta;
use sourcedr_core::random::seeded;

fn rank_deficient() -> DiscreteDgp {
    let pz = vec![0.4, 0.6];
    let cond_xz = vec![vec![0.5, 0.2], vec![0.3, 0.3], vec![0.2, 0.5]];
    let px: Vec<f64> = cond_xz.iter().map(|r: &Vec<f64>| r[0] * pz[0] + r[1] * pz[1]).collect();
    let q = [1.0, -1.0];
    let omega = (0..3).map(|x| (cond_xz[x][0] * pz[0] * q[0] + cond_xz[x][1] * pz[1] * q[1]) / px[x]).collect();
    DiscreteDgp {
        pz,
        cond_xz,
        outcome_mean: vec![1.0, 0.0, -1.0],
        reduced_form: None,
        noise_half_width: 0.3,
        x_codes: None,
        z_codes: None,
        functional: DiscreteFunctional::WeightedAverage { omega },
    }
}

#[test]
fn moment_restrictions_hold_on_a_test_dictionary() {
    let mut rng = seeded(1);
    for seed in 0..5 {
        let dgp = random_discrete_dgp(100 + seed, 4, 5);
        let g = discrete_ground_truth(&dgp).unwrap();
        let t = g.as_discrete().unwrap();
        let omega = match &dgp.functional {
            DiscreteFunctional::WeightedAverage { omega } => omega.clone(),
            _ => unreachable!(),
        };
        for _ in 0..20 {
            let q: Vec<f64> = (0..dgp.kz()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let h: Vec<f64> = (0..dgp.kx()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let mut primal = 0.0;
            let mut dual = 0.0;
            for x in 0..dgp.kx() {
                dual += t.px[x] * omega[x] * h[x];
                for z in 0..dgp.kz() {
                    let j = t.joint(x, z);
                    primal += j * (dgp.outcome_mean[x] - t.h0[x]) * q[z];
                    dual -= j * t.q0[z] * h[x];
                }
            }
            assert!(primal.abs() < 1e-12 && dual.abs() < 1e-12, "{primal} {dual}");
        }
    }
}

#[test]
fn exact_norms_agree_with_monte_carlo() {
    let sim = DgpSpec::Discrete(random_discrete_dgp(7, 4, 4)).build().unwrap();
    let t = sim.truth.as_discrete().unwrap();
    let data = sim.sample(1_000_000, 8).unwrap();
    let xs: Vec<usize> = data.x.rows().map(|p| t.x_state(p).unwrap()).collect();
    let mut rng = seeded(9);
    for _ in 0..10 {
        let h: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| h[x] * h[x]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let exact = t.norm_sq_x(&h);
        assert!((mean - exact).abs() <= 3.0 * sd / n.sqrt(), "{mean} vs {exact}");
    }
}

#[test]
fn minimum_norm_solution_and_theta_invariance() {
    let dgp = rank_deficient();
    let g = discrete_ground_truth(&dgp).unwrap();
    let t = g.as_discrete().unwrap();
    let null = [3.0, -7.0, 3.0];
    for eps in [0.01, -0.2, 1.0] {
        let h2: Vec<f64> = t.h0.iter().zip(&null).map(|(a, b)| a + eps * b).collect();
        let (r1, r2) = (t.apply_t(&t.h0), t.apply_t(&h2));
        assert!(r1.iter().zip(&r2).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(t.norm_sq_x(&h2) > t.norm_sq_x(&t.h0));
        let (a, b) = (population_theta(t, &t.h0, &t.q0), population_theta(t, &h2, &t.q0));
        assert!((a - b).abs() < 1e-12);
        assert!((a - g.theta0).abs() < 1e-12);
    }
}
