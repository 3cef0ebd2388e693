use burgers_lab::picard::{Extrapolation, FieldRole, GridField, GridSpec};
use burgers_lab::scalar_flows::{fixed_point_bound, phi_flow, FlowParams};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fixed_point_bound_dominates_iterates(
        lc1 in -3.0f64..3.0,
        lc2 in -3.0f64..3.0,
        alpha in 0.05f64..0.95,
        la0 in -3.0f64..3.0,
    ) {
        let (c1, c2, a0) = (10f64.powf(lc1), 10f64.powf(lc2), 10f64.powf(la0));
        let bound = fixed_point_bound(c1, c2, alpha, a0).unwrap();
        let mut b = a0;
        for _ in 0..200 {
            prop_assert!(b <= bound, "B = {b} > bound {bound}");
            b = c1 + c2 * b.powf(alpha);
        }
        prop_assert!(b <= bound);
    }

    #[test]
    fn flow_is_monotone(
        kappa in 1.2f64..6.0,
        u in 1.0f64..4.0,
        x in 0.0f64..50.0,
        t in 0.01f64..4.0,
        dt in 0.01f64..2.0,
    ) {
        let p = FlowParams::new(kappa, u, 0.0).unwrap();
        let a = phi_flow(&p, t, x).unwrap();
        prop_assert!(a >= x);
        prop_assert!(phi_flow(&p, t + dt, x).unwrap() >= a);
        prop_assert!(phi_flow(&p, t, x + 1.0).unwrap() >= a);
    }

    #[test]
    fn grid_field_binary_roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 11 * 3)) {
        let spec = GridSpec { dim: 1, half_width: 2.0, nodes: 11, slices: vec![0.0, 0.5, 1.0] };
        let mut f = GridField::zeros(spec, FieldRole::Value, 2, Extrapolation::Clamp);
        for j in 0..3 {
            f.slice_mut(j).copy_from_slice(&values[j * 11..(j + 1) * 11]);
        }
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let back = GridField::read_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(back, f);
    }
}
