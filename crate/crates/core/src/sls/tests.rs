use super::compiled::{eval_terms, vjp_terms};
use super::*;
use crate::poly::{AlphaFactor, AlphaId, Monomial, PolyDynamics, VarId};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quad() -> SlsController<f64> {
    synthesize(&PolyDynamics::scalar(&[0.0, 0.5], 1.0).unwrap(), 1).unwrap()
}

fn alphas(ctl: &SlsController<f64>, a: f64) -> AlphaTrace<f64> {
    AlphaTrace::constant(ctl.num_alphas(), ctl.horizon() + 1, a).unwrap()
}

fn mono(c: f64, e: &[(usize, u32)], f: Vec<AlphaFactor>) -> Monomial<f64> {
    Monomial::new(c, e.iter().map(|&(a, p)| (VarId::new(a, 0), p)).collect(), f)
}

#[test]
fn scalar_quadratic_term_table() {
    let ctl = quad();
    assert_eq!(ctl.c_m(), &[1, 2]);
    let t = ctl.terms();
    assert_eq!(t[0].monomial, mono(0.5, &[(0, 2)], vec![]));
    assert_eq!(t[0].alpha_id, Some(AlphaId(0)));
    let one_minus = AlphaFactor::one_minus(AlphaId(0), 1);
    assert_eq!(t[1].monomial, mono(0.5, &[(0, 1), (1, 2)], vec![one_minus]));
    assert_eq!(t[2].monomial, mono(0.125, &[(1, 4)], vec![one_minus, one_minus]));
    assert!(t[1].alpha_id.is_none() && t[2].alpha_id.is_none());
    assert_eq!((t[1].m, t[1].j, t[2].j), (1, 0, 1));
}

#[test]
fn control_input_examples() {
    let ctl = quad();
    let u = ctl.control_input(&[vec![1.0], vec![0.0]], &alphas(&ctl, 1.0)).unwrap();
    assert!((u[0] + 0.5).abs() < 1e-15);
    let u = ctl.control_input(&[vec![0.0], vec![0.0]], &alphas(&ctl, 0.4)).unwrap();
    assert_eq!(u[0], 0.0);
    let u = ctl.control_input(&[vec![0.0], vec![1.0]], &alphas(&ctl, 0.3)).unwrap();
    assert!((u[0] + 0.06125).abs() < 1e-15);
}

#[test]
fn predict_state_examples() {
    let ctl = quad();
    let x = ctl.predict_state(&[vec![0.0], vec![1.0]], &alphas(&ctl, 0.3)).unwrap();
    assert!((x[0] - 0.35).abs() < 1e-15);
    let x = ctl.predict_state(&[vec![0.7], vec![-0.9]], &alphas(&ctl, 1.0)).unwrap();
    assert_eq!(x[0], 0.7);
    let x = ctl.predict_state(&[vec![0.0], vec![0.0]], &alphas(&ctl, 0.6)).unwrap();
    assert_eq!(x[0], 0.0);
}

#[test]
fn evaluation_errors() {
    let ctl = quad();
    let a = alphas(&ctl, 1.0);
    assert!(matches!(ctl.control_input(&[vec![1.0]], &a), Err(crate::Error::ShortHistory { need: 2, got: 1 })));
    let padded = pad_cold_start(&[vec![1.0]], 2, 1);
    assert!((ctl.control_input(&padded, &a).unwrap()[0] + 0.5).abs() < 1e-15);
    let empty = AlphaTrace::new(0, 2);
    assert!(matches!(ctl.control_input(&padded, &empty), Err(crate::Error::MissingAlpha(_))));
    assert!(AlphaTrace::constant(1, 2, 0.0).is_err());
    assert!(AlphaTrace::constant(1, 2, 1.2).is_err());
}

#[test]
fn linear_dynamics_one_term_per_level() {
    let a: f64 = 0.8;
    let ctl: SlsController<f64> = synthesize(&PolyDynamics::scalar(&[a], 1.0).unwrap(), 3).unwrap();
    assert_eq!(ctl.c_m(), &[1, 1, 1, 1]);
    for t in ctl.terms() {
        assert_eq!(t.monomial.exponents(), &[(VarId::new(t.m, 0), 1)]);
        assert!((t.monomial.coeff - a.powi(t.m as i32 + 1)).abs() < 1e-15);
        assert_eq!(t.monomial.alpha_factors().len(), t.m);
    }
    // deadbeat with all alphas at one: u = -a w_t
    let hist = vec![vec![0.3], vec![-0.2], vec![0.9], vec![0.1]];
    let u = ctl.control_input(&hist, &alphas(&ctl, 1.0)).unwrap();
    assert!((u[0] + a * 0.3).abs() < 1e-15);
    let (l, c) = compute_l_c(&ctl, 2.0);
    assert_eq!(c, 1);
    assert!((l - a).abs() < 1e-15);
}

#[test]
fn zero_dynamics_has_no_terms() {
    let ctl: SlsController<f64> = synthesize(&PolyDynamics::scalar(&[0.0, 0.0], 1.0).unwrap(), 2).unwrap();
    assert!(ctl.terms().is_empty());
    assert_eq!(ctl.num_alphas(), 0);
    let hist = vec![vec![0.4], vec![0.1], vec![-0.3]];
    let tr = AlphaTrace::new(0, 3);
    assert_eq!(ctl.control_input(&hist, &tr).unwrap(), vec![0.0]);
    assert_eq!(ctl.predict_state(&hist, &tr).unwrap(), vec![0.4]);
    assert_eq!(compute_l_c(&ctl, 1.0), (0.0, 0));
}

#[test]
fn zero_horizon_rejected() {
    assert!(synthesize(&PolyDynamics::<f64>::scalar(&[1.0], 1.0).unwrap(), 0).is_err());
}

#[test]
fn term_cap_reports_growth() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = (1..=3).map(|j| DMatrix::from_fn(2, 2usize.pow(j), |_, _| rng.gen_range(-1.0..1.0))).collect();
    let d = PolyDynamics::new(h, vec![0.0; 2], 1.0).unwrap();
    match synthesize_with(&d, 4, &SynthOptions { term_cap: 50 }) {
        Err(crate::Error::TermExplosion { cap: 50, counts }) => assert!(!counts.is_empty()),
        other => panic!("expected explosion, got {other:?}"),
    }
}

#[test]
fn alpha_factors_refer_to_lower_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = (1..=2).map(|j| DMatrix::from_fn(2, 2usize.pow(j), |_, _| rng.gen_range(-0.5..0.5))).collect();
    let ctl = synthesize(&PolyDynamics::new(h, vec![0.0; 2], 1.0).unwrap(), 2).unwrap();
    let levels = ctl.alpha_levels();
    for t in ctl.terms() {
        assert_eq!(t.monomial.max_age(), Some(t.m));
        for f in t.monomial.alpha_factors() {
            assert!(levels[f.id.index()] < t.m);
            assert!(f.lag >= 1 && f.lag <= t.m);
        }
    }
}

/// Steps `x⁺ = p(x) + u + w` with the controller fed the true disturbances.
fn closed_loop(ctl: &SlsController<f64>, d: &PolyDynamics<f64>, ws: &[Vec<f64>], alpha: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = d.n();
    let tr = alphas(ctl, alpha);
    let depth = ctl.horizon() + 1;
    let mut x = vec![0.0; n];
    let mut hist: Vec<Vec<f64>> = vec![vec![0.0; n]; depth];
    let (mut xs, mut preds) = (Vec::new(), Vec::new());
    for w in ws {
        let u = ctl.control_input(&hist, &tr).unwrap();
        let fx = d.eval(&x).unwrap();
        x = (0..n).map(|i| fx[i] + u[i] + w[i]).collect();
        hist.insert(0, w.clone());
        hist.truncate(depth);
        preds.push(ctl.predict_state(&hist, &tr).unwrap());
        xs.push(x.clone());
    }
    (xs, preds)
}

#[test]
fn impulse_response_is_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = (1..=3).map(|j| DMatrix::from_fn(2, 2usize.pow(j), |_, _| rng.gen_range(-0.6..0.6))).collect();
    let d = PolyDynamics::new(h, vec![0.0; 2], 1.0).unwrap();
    let t_h = 1;
    let ctl = synthesize(&d, t_h).unwrap();
    let mut ws = vec![vec![0.0; 2]; 10];
    ws[0] = vec![0.7, -0.4];
    for alpha in [0.5, 0.8, 1.0] {
        let (xs, _) = closed_loop(&ctl, &d, &ws, alpha);
        // xs[s] is the state s steps after the impulse arrived
        for (s, x) in xs.iter().enumerate() {
            if s > t_h || (alpha == 1.0 && s >= 1) {
                assert!(x.iter().all(|v| v.abs() <= 1e-12), "alpha {alpha}, step {s}: {x:?}");
            }
        }
        assert!(xs[0].iter().any(|v| v.abs() > 0.1));
    }
}

#[test]
fn predicted_states_match_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = (1..=2).map(|j| DMatrix::from_fn(2, 2usize.pow(j), |_, _| rng.gen_range(-0.5..0.5))).collect();
    let d = PolyDynamics::new(h, vec![0.0; 2], 1.0).unwrap();
    let ctl = synthesize(&d, 2).unwrap();
    let ws: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]).collect();
    let (xs, preds) = closed_loop(&ctl, &d, &ws, 0.7);
    for (x, p) in xs.iter().zip(&preds) {
        for (a, b) in x.iter().zip(p) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn reconstruction_inverts_prediction() {
    let ctl = quad();
    let tr = alphas(&ctl, 0.4);
    let hist = vec![vec![0.25], vec![-0.6]];
    let x = ctl.predict_state(&hist, &tr).unwrap();
    let w = ctl.reconstruct_disturbance(&x, &hist[1..], &tr).unwrap();
    assert!((w[0] - 0.25).abs() < 1e-15);
    let w = ctl.reconstruct_disturbance(&[0.0], &[vec![0.0]], &tr).unwrap();
    assert_eq!(w, vec![0.0]);
}

#[test]
fn time_varying_alphas_use_their_own_step() {
    // residual of w_{t-1}^2 must use alpha from step t-1, not step t
    let ctl = quad();
    let mut tr = AlphaTrace::new(1, 2);
    tr.push(vec![0.2]).unwrap(); // step t-1
    tr.push(vec![0.9]).unwrap(); // step t
    let x = ctl.predict_state(&[vec![0.0], vec![1.0]], &tr).unwrap();
    assert!((x[0] - 0.8 * 0.5).abs() < 1e-15);
}

#[test]
fn controller_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = (1..=2).map(|j| DMatrix::from_fn(2, 2usize.pow(j), |_, _| rng.gen_range(-0.5..0.5))).collect();
    let ctl = synthesize(&PolyDynamics::new(h, vec![0.0; 2], 1.0).unwrap(), 2).unwrap();
    let back = SlsController::<f64>::from_json(&ctl.to_json().unwrap()).unwrap();
    assert_eq!(back, ctl);
    assert_eq!(back.state_response(), ctl.state_response());
    assert_eq!(back.c_m(), ctl.c_m());
}

#[test]
fn vjp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = (1..=3).map(|j| DMatrix::from_fn(2, 2usize.pow(j), |_, _| rng.gen_range(-0.5..0.5))).collect();
    let ctl = synthesize(&PolyDynamics::new(h, vec![0.0; 2], 1.0).unwrap(), 1).unwrap();
    let na = ctl.num_alphas();
    let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let al: Vec<Vec<f64>> = (0..2).map(|_| (0..na).map(|_| rng.gen_range(0.3..1.0)).collect()).collect();
    let adj = [0.7, -1.3];
    let f = |w: &[f64], al: &Vec<Vec<f64>>| {
        let mut out = [0.0; 2];
        eval_terms(ctl.flat_terms(), w, &|l, i| al[l][i], &mut out);
        out[0] * adj[0] + out[1] * adj[1]
    };
    let mut w_adj = vec![0.0; 4];
    let mut a_adj = vec![vec![0.0; na]; 2];
    vjp_terms(ctl.flat_terms(), &w, &|l, i| al[l][i], &adj, &mut w_adj, &mut |l, i, g| a_adj[l][i] += g);
    let eps = 1e-6;
    for i in 0..4 {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[i] += eps;
        wm[i] -= eps;
        let fd = (f(&wp, &al) - f(&wm, &al)) / (2.0 * eps);
        assert!((fd - w_adj[i]).abs() < 1e-7, "w[{i}]: {fd} vs {}", w_adj[i]);
    }
    for l in 0..2 {
        for i in 0..na {
            let (mut ap, mut am) = (al.clone(), al.clone());
            ap[l][i] += eps;
            am[l][i] -= eps;
            let fd = (f(&w, &ap) - f(&w, &am)) / (2.0 * eps);
            assert!((fd - a_adj[l][i]).abs() < 1e-7);
        }
    }
}

#[test]
fn l_and_c_for_scalar_quadratic() {
    let (l, c) = compute_l_c(&quad(), 1.0);
    assert!((l - 0.5).abs() < 1e-15);
    assert_eq!(c, 1);
}

#[test]
fn iss_certificate_examples() {
    let cert = check_iss(1.0, 0.5, 3, 1.0, 2, 0.9).unwrap();
    assert!((cert.b - (0.125 / 24.0 + 0.2)).abs() < 1e-12);
    assert!(cert.satisfied);
    assert!((cert.state_bound.unwrap() - 0.5 / (1.0 - cert.b)).abs() < 1e-12);
    let cert = check_iss(1.0, 0.5, 3, 1.0, 2, 0.4).unwrap();
    assert!((cert.b - (0.125 / 24.0 + 1.2)).abs() < 1e-12);
    assert!(!cert.satisfied && cert.state_bound.is_none());
    // all alphas at one: only the Taylor term remains
    let cert = check_iss(30.0, 1.5, 2, 5.0, 7, 1.0).unwrap();
    assert!((cert.b - 30.0 * 2.25 / 6.0).abs() < 1e-12);
    assert!(check_iss(1.0, 1.0, 3, 1.0, 1, 0.0).is_err());
}

#[test]
fn iss_factor_is_monotone() {
    let b = |w: f64, a: f64| check_iss(2.0, w, 3, 0.7, 3, a).unwrap().b;
    for i in 0..20 {
        let a = 0.05 + 0.045 * i as f64;
        assert!(b(0.5, a + 0.01) < b(0.5, a));
        let w = 0.1 + 0.1 * i as f64;
        assert!(b(w + 0.05, 0.6) > b(w, 0.6));
    }
}

/// `M Σ_j Σ_{i=1..j} C(j,i) W^(j-i) e^i`, the bound before the binomial sum is collapsed.
fn double_sum(m: f64, w: f64, k: usize, e: f64) -> f64 {
    let binom = |n: usize, r: usize| (0..r).fold(1.0, |a, i| a * (n - i) as f64 / (i + 1) as f64);
    (1..=k)
        .map(|j| (1..=j).map(|i| binom(j, i) * w.powi((j - i) as i32) * e.powi(i as i32)).sum::<f64>())
        .sum::<f64>()
        * m
}

#[test]
fn u1_fixture() {
    let cb = cost_bound_u1(1.0, 0.5, 2, 1, 1.0).unwrap();
    assert!((cb.e_x - 1.0 / 6.0).abs() < 1e-15);
    assert!((cb.d - 4.0 / 3.0).abs() < 1e-15);
    assert!((cb.u1 - 13.0 / 36.0).abs() < 1e-12);
    assert!((double_sum(1.0, 0.5, 2, 1.0 / 6.0) - 13.0 / 36.0).abs() < 1e-12);
    assert!((cb.u1_closed.unwrap() - 13.0 / 36.0).abs() < 1e-12);
}

#[test]
fn u1_series_is_finite_at_closed_form_pole() {
    // W d = 1 exactly: e_x = 1 - W
    let w = 0.6;
    let cb = cost_bound_with_error(1.3, w, 3, 1.0 - w);
    assert!(cb.u1_closed.is_none());
    assert!((cb.u1 - double_sum(1.3, w, 3, 1.0 - w)).abs() < 1e-12);
    let near = cost_bound_with_error(1.3, w, 3, 1.0 - w + 1e-6);
    assert!((near.u1_closed.unwrap() - cb.u1).abs() < 1e-4);
    let zero = cost_bound_with_error(1.3, w, 3, 0.0);
    assert_eq!(zero.u1, 0.0);
}

#[test]
fn cost_bound_total() {
    let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
    let cb = cost_bound_u1(1.0, 0.5, 2, 1, 1.0).unwrap().with_horizon(&r, 10).unwrap();
    assert!((cb.r - 3.0).abs() < 1e-12);
    assert!((cb.total - 30.0 * 13.0 / 36.0).abs() < 1e-10);
    assert!(cost_bound_u1(1.0, 0.5, 2, 1, 0.4).is_err());
}

fn random_dyn(seed: u64, n: usize, k: u32, scale: f64) -> PolyDynamics<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = (1..=k).map(|j| DMatrix::from_fn(n, n.pow(j), |_, _| rng.gen_range(-scale..scale))).collect();
    PolyDynamics::new(h, vec![0.0; n], 1.0).unwrap()
}

/// Closed loop driven through [`FeedbackLaw::step`]; returns (x, ŵ, u) per step.
fn law_loop<L: FeedbackLaw<f64>>(law: &L, d: &PolyDynamics<f64>, ws: &[Vec<f64>], alpha: &[f64]) -> Vec<[Vec<f64>; 3]> {
    let n = d.n();
    let mut x = vec![0.0; n];
    let mut mem = law.initial_memory();
    let mut out = Vec::new();
    for w in ws {
        let fx = d.eval(&x).unwrap();
        // x currently holds x_t; the step produces u_t
        let s = law.step(&x, &mem, alpha);
        out.push([x.clone(), s.w_hat.clone(), s.u.clone()]);
        x = (0..n).map(|i| fx[i] + s.u[i] + w[i]).collect();
        mem = s.mem;
    }
    out
}

#[test]
fn symbolic_step_reconstructs_true_disturbances() {
    let d = random_dyn(11, 2, 2, 0.5);
    let ctl = synthesize(&d, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ws: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]).collect();
    let rows = law_loop(&ctl, &d, &ws, &vec![0.6; ctl.num_alphas()]);
    // ŵ_t is the disturbance that produced x_t, i.e. ws[t-1]
    for (t, row) in rows.iter().enumerate().skip(1) {
        for i in 0..2 {
            assert!((row[1][i] - ws[t - 1][i]).abs() < 1e-12);
        }
    }
    // and u agrees with the history-based evaluation
    let tr = alphas(&ctl, 0.6);
    let mut hist = vec![vec![0.0; 2]; 3];
    for (t, row) in rows.iter().enumerate().skip(1) {
        hist.insert(0, ws[t - 1].clone());
        hist.truncate(3);
        let u = ctl.control_input(&hist, &tr).unwrap();
        assert!((u[0] - row[2][0]).abs() < 1e-12 && (u[1] - row[2][1]).abs() < 1e-12);
    }
}

#[test]
fn grouped_matches_symbolic_under_constant_alpha() {
    let d = random_dyn(12, 2, 2, 0.5);
    let sym = synthesize(&d, 2).unwrap();
    let grp = GroupedController::from_dynamics(&d, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ws: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]).collect();
    for a in [0.5, 0.9, 1.0] {
        let r1 = law_loop(&sym, &d, &ws, &vec![a; sym.num_alphas()]);
        let r2 = law_loop(&grp, &d, &ws, &vec![a; grp.num_alphas()]);
        for (p, q) in r1.iter().zip(&r2) {
            for s in 0..3 {
                for i in 0..2 {
                    assert!((p[s][i] - q[s][i]).abs() < 1e-12, "alpha {a}");
                }
            }
        }
    }
}

#[test]
fn grouped_impulse_response_is_finite_at_long_horizons() {
    let d = random_dyn(13, 2, 3, 0.6);
    for t_h in [1, 3, 4, 6] {
        let grp = GroupedController::from_dynamics(&d, t_h).unwrap();
        let mut ws = vec![vec![0.0; 2]; 12];
        ws[0] = vec![0.7, -0.4];
        for a in [0.5, 0.8, 1.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(t_h as u64);
            // time-varying alphas must not break cancellation either
            let n_a = grp.num_alphas();
            let mut x = vec![0.0; 2];
            let mut mem = grp.initial_memory();
            let mut xs = Vec::new();
            for w in &ws {
                let al: Vec<f64> = (0..n_a).map(|_| if a == 1.0 { 1.0 } else { a + rng.gen_range(0.0..(1.0 - a)) }).collect();
                let s = grp.step(&x, &mem, &al);
                let fx = d.eval(&x).unwrap();
                x = (0..2).map(|i| fx[i] + s.u[i] + w[i]).collect();
                mem = s.mem;
                xs.push(x.clone());
            }
            for (s, x) in xs.iter().enumerate() {
                if s > t_h || (a == 1.0 && s >= 1) {
                    assert!(x.iter().all(|v| v.abs() <= 1e-12), "T {t_h} alpha {a} step {s}: {x:?}");
                }
            }
        }
    }
}

#[test]
fn grouped_alpha_layout() {
    let d = random_dyn(14, 2, 3, 0.5);
    let grp = GroupedController::from_dynamics(&d, 4).unwrap();
    assert_eq!(grp.c(), 2 * (2 + 3 + 4));
    assert_eq!(grp.num_alphas(), 4 * grp.c());
    let lv = grp.alpha_levels();
    assert_eq!(lv[0], 0);
    assert_eq!(lv[grp.num_alphas() - 1], 3);
    let back = Controller::<f64>::from_json(&grp.to_json().unwrap()).unwrap();
    assert_eq!(back, Controller::Grouped(grp));
}

fn check_step_vjp<L: FeedbackLaw<f64>>(law: &L, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, na, ml) = (law.n(), law.num_alphas(), law.memory_len());
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let mut mem: Vec<f64> = (0..ml).map(|_| rng.gen_range(-0.5..0.5)).collect();
    // alpha entries of the memory stay in a sensible range
    let probe = law.step(&x, &mem, &vec![0.5; na]);
    assert_eq!(probe.mem.len(), ml);
    let al: Vec<f64> = (0..na).map(|_| rng.gen_range(0.3..1.0)).collect();
    for v in mem.iter_mut() {
        *v = v.abs() + 0.2;
    }
    let aw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let au: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let am: Vec<f64> = (0..ml).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |x: &[f64], mem: &[f64], al: &[f64]| {
        let s = law.step(x, mem, al);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        dot(&s.w_hat, &aw) + dot(&s.u, &au) + dot(&s.mem, &am)
    };
    let g = law.step_vjp(&x, &mem, &al, &aw, &au, &am);
    let eps = 1e-6;
    let fd = |v: &[f64], i: usize, which: u8| {
        let (mut p, mut m) = (v.to_vec(), v.to_vec());
        p[i] += eps;
        m[i] -= eps;
        let (fp, fm) = match which {
            0 => (f(&p, &mem, &al), f(&m, &mem, &al)),
            1 => (f(&x, &p, &al), f(&x, &m, &al)),
            _ => (f(&x, &mem, &p), f(&x, &mem, &m)),
        };
        (fp - fm) / (2.0 * eps)
    };
    for i in 0..n {
        assert!((fd(&x, i, 0) - g.x[i]).abs() < 1e-6, "x[{i}]");
    }
    for i in 0..ml {
        assert!((fd(&mem, i, 1) - g.mem[i]).abs() < 1e-6, "mem[{i}]: {} vs {}", fd(&mem, i, 1), g.mem[i]);
    }
    for i in 0..na {
        assert!((fd(&al, i, 2) - g.alpha[i]).abs() < 1e-6, "alpha[{i}]");
    }
}

#[test]
fn step_vjp_matches_finite_differences() {
    check_step_vjp(&quad(), 1);
    check_step_vjp(&synthesize(&random_dyn(15, 2, 2, 0.5), 2).unwrap(), 2);
    check_step_vjp(&synthesize(&random_dyn(16, 2, 3, 0.5), 1).unwrap(), 3);
    check_step_vjp(&GroupedController::from_dynamics(&random_dyn(17, 2, 3, 0.5), 3).unwrap(), 4);
    check_step_vjp(&GroupedController::from_dynamics(&random_dyn(18, 3, 2, 0.5), 2).unwrap(), 5);
}
