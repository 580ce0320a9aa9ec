use polyelast_core::grid::{self, Grid, ScalarField, VectorField};
use polyelast_core::relative_entropy::{eta_rel_point, term_d_point};
use polyelast_core::stepper::{run_trajectory, State, StepOptions};
use polyelast_core::tensor::{cof, det, dphi, phi, Matrix3, Xi19};
use polyelast_core::{EnergyModel, StoredEnergy};
use proptest::prelude::*;

fn model() -> EnergyModel {
    EnergyModel::new(6.0, 1.0, 1.0).unwrap()
}

fn xi_strategy(r: f64) -> impl Strategy<Value = Xi19> {
    prop::array::uniform19(-r..r).prop_map(Xi19)
}

fn vec3(r: f64) -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-r..r)
}

fn matrix(r: f64) -> impl Strategy<Value = Matrix3> {
    prop::array::uniform9(-r..r).prop_map(|a| Matrix3::from_flat(&a))
}

fn scalar_field(n: usize, seed: u64) -> ScalarField {
    let g = Grid::new(n).unwrap();
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    ScalarField::from_fn(g, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn summation_by_parts(n in 2usize..7, seed in any::<u64>(), axis in 0usize..3) {
        let a = scalar_field(n, seed);
        let b = scalar_field(n, seed ^ 0xabcdef);
        let lhs = grid::inner_l2(&a, &grid::diff(&b, axis));
        let rhs = -grid::inner_l2(&grid::diff(&a, axis), &b);
        prop_assert!((lhs - rhs).abs() <= 1e-14);
    }

    #[test]
    fn divergence_has_zero_mean(n in 2usize..7, seed in any::<u64>()) {
        let g = Grid::new(n).unwrap();
        let c = [scalar_field(n, seed), scalar_field(n, seed + 1), scalar_field(n, seed + 2)];
        let q = VectorField::from_vec(g, (0..g.len()).map(|i| [c[0][i], c[1][i], c[2][i]]).collect()).unwrap();
        prop_assert!(grid::integrate(&grid::divergence_vector(&q)).abs() <= 1e-14);
    }

    #[test]
    fn relative_entropy_is_nonnegative(
        v in vec3(3.0), xi in xi_strategy(2.0), vb in vec3(3.0), xb in xi_strategy(2.0)
    ) {
        let m = model();
        let e = eta_rel_point(&m, &v, &xi, &vb, &xb);
        prop_assert!(e >= -1e-12 * (1.0 + m.value(&xi).abs() + m.value(&xb).abs()));
        prop_assert_eq!(eta_rel_point(&m, &v, &xi, &v, &xi), 0.0);
    }

    #[test]
    fn dissipation_term_is_nonnegative(
        v0 in vec3(2.0), x0 in xi_strategy(1.5), v1 in vec3(2.0), x1 in xi_strategy(1.5), s in 0.0f64..=1.0
    ) {
        let m = model();
        let dv = [v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]];
        let dx = x1 - x0;
        let vl = [v0[0] + s * dv[0], v0[1] + s * dv[1], v0[2] + s * dv[2]];
        let xl = x0 + dx * s;
        let d = term_d_point(&m, &v1, &x1, &vl, &xl, &dv, &dx);
        prop_assert!(d >= -1e-10 * (1.0 + m.gradient(&x1).norm() * dx.norm()));
    }

    #[test]
    fn cofactor_identities(f in matrix(2.0)) {
        let c = cof(&f);
        let prod = f.matmul(&c.transpose());
        let expect = Matrix3::IDENTITY * det(&f);
        prop_assert!((prod - expect).max_abs() <= 1e-12 * (1.0 + f.norm().powi(3)));
        let x = phi(&f);
        prop_assert_eq!(x.f_block(), f);
        prop_assert_eq!(x.z_block(), c);
    }

    #[test]
    fn phi_is_polynomial_of_degree_three(f in matrix(1.0), u in matrix(1.0)) {
        // Fourth differences of a cubic vanish.
        let p = |t: f64| phi(&(f + u * t));
        let d4 = p(2.0) - p(1.0) * 4.0 + p(0.0) * 6.0 - p(-1.0) * 4.0 + p(-2.0);
        prop_assert!(d4.max_abs() <= 1e-11);
        let lin = dphi(&f).apply(&u);
        let fd = (p(1e-6) - p(-1e-6)) * (0.5e6);
        prop_assert!((lin - fd).max_abs() <= 1e-6);
    }
}

#[test]
fn interpolants_are_continuous_and_match_knots() {
    let g = Grid::new(4).unwrap();
    let u = VectorField::from_fn(g, |x| [0.0, 0.05 * (2.0 * std::f64::consts::PI * x[0]).sin(), 0.0]);
    let v = VectorField::from_fn(g, |x| [0.0, 0.0, 0.1 * (2.0 * std::f64::consts::PI * x[1]).cos()]);
    let h = 0.05;
    let traj = run_trajectory(&model(), State::from_displacement(v, u, 0.0), h, 0.2, &StepOptions::default()).unwrap();
    for (j, s) in traj.states().iter().enumerate() {
        let at = traj.eval_linear(j as f64 * h).unwrap();
        assert_eq!(at.v, s.v);
        assert_eq!(at.xi, s.xi);
        if j > 0 {
            let t = j as f64 * h;
            let left = traj.eval_linear(t - 1e-7).unwrap();
            let right = traj.eval_linear((t + 1e-7).min(traj.end_time())).unwrap();
            assert!(left.distance_sq(&right).sqrt() < 1e-4);
        }
    }
    // The constant interpolant on I_j holds the right endpoint.
    let mid = traj.eval_constant(1.5 * h).unwrap();
    assert_eq!(mid.v, traj.states()[2].v);
}
