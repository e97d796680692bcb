//! Network-level oracles: frozen silu values, composition checks of edge and
//! layer evaluation against the public basis API, jet propagation against
//! finite differences of the plain forward pass, and the analytic backward
//! pass against finite differences over the flat parameter vector.

use conformal_kan::model::Model;
use conformal_kan::network::{
    edge_eval, layer_forward, silu, silu_jet, EdgeFunction, KanLayer, KanNetwork,
};
use conformal_kan::jet::JetAdjoint;
use conformal_kan::spline::{build_grid, eval_basis};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Deterministic pseudo-random stream for test fixtures; unrelated to the
/// library's seeding so fixtures cannot accidentally mirror implementation
/// behavior.
struct Lcg(u64);
impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
    }
    fn centered(&mut self) -> f64 {
        2.0 * self.next() - 1.0
    }
}

#[test]
fn silu_frozen_values_and_saturation() {
    assert_eq!(silu(0.0f64), 0.0);
    assert!((silu(1.0f64) - 0.731058578630005).abs() < 1e-12);
    let (v, d1, d2) = silu_jet(0.0f64);
    assert_eq!(v, 0.0);
    assert!((d1 - 0.5).abs() < 1e-15);
    // silu''(0) = 2 sigma'(0) = 1/2 (silu - x/2 is even, so only odd
    // derivatives vanish at the origin)
    assert!((d2 - 0.5).abs() < 1e-12);
    // smooth saturation without NaN
    assert!(silu(-800.0f64).abs() < 1e-10);
    assert!((silu(800.0f64) - 800.0).abs() < 1e-10);
    let (v, d1, d2) = silu_jet(-800.0f64);
    assert!(v.is_finite() && d1.is_finite() && d2.is_finite());
}

#[test]
fn silu_jet_matches_finite_differences() {
    let h = 1e-6;
    for i in 0..60 {
        let x = -6.0 + 12.0 * i as f64 / 59.0;
        let (_, d1, d2) = silu_jet(x);
        let fd1 = (silu(x + h) - silu(x - h)) / (2.0 * h);
        let (_, d1p, _) = silu_jet(x + h);
        let (_, d1m, _) = silu_jet(x - h);
        let fd2 = (d1p - d1m) / (2.0 * h);
        assert!(close(d1, fd1, 1e-8), "d1 at {x}: {d1} vs {fd1}");
        assert!(close(d2, fd2, 1e-8), "d2 at {x}: {d2} vs {fd2}");
    }
}

#[test]
fn edge_eval_composes_basis_and_silu() {
    let grid = build_grid(-1.0f64, 1.0, 5, 3).unwrap();
    let mut rng = Lcg(7);
    let coeffs: Vec<f64> = (0..grid.basis_count()).map(|_| rng.centered()).collect();

    // pure partition-of-unity spline branch: constant coefficients give w_s * c
    let unit = EdgeFunction {
        w_b: 0.0,
        w_s: 2.0,
        coeffs: vec![0.5; grid.basis_count()],
    };
    for &x in &[-0.9, -0.2, 0.0, 0.7] {
        assert!((edge_eval(&unit, &grid, x) - 1.0).abs() < 1e-12);
    }

    // pure silu branch
    let pure_silu = EdgeFunction {
        w_b: 1.0,
        w_s: 0.0,
        coeffs: vec![0.0; grid.basis_count()],
    };
    assert_eq!(edge_eval(&pure_silu, &grid, 0.37), silu(0.37));

    // general case against an explicit basis dot product
    let edge = EdgeFunction {
        w_b: 0.8,
        w_s: 1.3,
        coeffs: coeffs.clone(),
    };
    for i in 0..50 {
        let x = -1.0 + 2.0 * i as f64 / 49.0;
        let spline: f64 = eval_basis(&grid, x)
            .unwrap()
            .iter()
            .zip(&coeffs)
            .map(|(b, c)| b * c)
            .sum();
        let expected = 0.8 * silu(x) + 1.3 * spline;
        assert!(
            (edge_eval(&edge, &grid, x) - expected).abs() < 1e-13,
            "at {x}"
        );
    }
}

#[test]
fn layer_forward_is_the_edge_sum() {
    let grid = build_grid(-1.0f64, 1.0, 5, 3).unwrap();
    let mut rng = Lcg(99);
    let nb = grid.basis_count();
    let edges: Vec<EdgeFunction<f64>> = (0..6)
        .map(|_| EdgeFunction {
            w_b: rng.centered(),
            w_s: rng.centered(),
            coeffs: (0..nb).map(|_| rng.centered()).collect(),
        })
        .collect();
    let layer = KanLayer {
        in_width: 2,
        out_width: 3,
        grid: grid.clone(),
        edges: edges.clone(),
    };
    let x = [0.3, -0.6];
    let y = layer_forward(&layer, &x);
    assert_eq!(y.len(), 3);
    for q in 0..3 {
        let expected: f64 = (0..2)
            .map(|p| edge_eval(&edges[q * 2 + p], &grid, x[p]))
            .sum();
        assert!((y[q] - expected).abs() < 1e-13, "output {q}");
    }

    // all-zero parameters produce exactly zero
    let zero_layer = KanLayer {
        in_width: 2,
        out_width: 3,
        grid,
        edges: (0..6)
            .map(|_| EdgeFunction {
                w_b: 0.0,
                w_s: 0.0,
                coeffs: vec![0.0; nb],
            })
            .collect(),
    };
    assert_eq!(layer_forward(&zero_layer, &x), vec![0.0, 0.0, 0.0]);
}

#[test]
fn init_is_deterministic_and_counts_parameters() {
    let a = KanNetwork::<f64>::init(&[1, 5, 1], 5, 3, 42).unwrap();
    let b = KanNetwork::<f64>::init(&[1, 5, 1], 5, 3, 42).unwrap();
    let c = KanNetwork::<f64>::init(&[1, 5, 1], 5, 3, 43).unwrap();
    assert_eq!(a.param_count(), 100);
    assert_eq!(a.flatten_params(), b.flatten_params());
    assert_ne!(a.flatten_params(), c.flatten_params());
    for layer in &a.layers {
        assert_eq!(layer.grid.domain_lo(), -1.0);
        assert_eq!(layer.grid.domain_hi(), 1.0);
        for e in &layer.edges {
            assert_eq!(e.w_b, 1.0);
            assert_eq!(e.w_s, 1.0);
        }
    }
    // spline coefficients follow a small centered distribution
    let big = KanNetwork::<f64>::init(&[4, 16, 4], 5, 3, 7).unwrap();
    let coeffs: Vec<f64> = big
        .layers
        .iter()
        .flat_map(|l| l.edges.iter().flat_map(|e| e.coeffs.iter().copied()))
        .collect();
    let mean = coeffs.iter().sum::<f64>() / coeffs.len() as f64;
    let var = coeffs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / coeffs.len() as f64;
    assert!(mean.abs() < 0.02, "coefficient mean {mean}");
    assert!((0.05..0.2).contains(&var.sqrt()), "coefficient std {}", var.sqrt());

    assert!(KanNetwork::<f64>::init(&[3], 5, 3, 0).is_err());
    assert!(KanNetwork::<f64>::init(&[1, 0, 1], 5, 3, 0).is_err());
}

#[test]
fn forward_composes_layers() {
    let net = KanNetwork::<f64>::init(&[1, 2, 1], 4, 3, 11).unwrap();
    let x = [0.42];
    let hidden = layer_forward(&net.layers[0], &x);
    let out = layer_forward(&net.layers[1], &hidden);
    assert_eq!(net.forward(&x), out);

    // bitwise repeatability
    assert_eq!(net.forward(&x), net.forward(&x));
}

#[test]
fn flatten_round_trips_and_indexes_single_parameters() {
    let net = KanNetwork::<f64>::init(&[2, 3, 1], 5, 3, 5).unwrap();
    let flat = net.flatten_params();
    assert_eq!(flat.len(), net.param_count());
    let mut copy = net.clone();
    copy.set_flat_params(&flat).unwrap();
    assert_eq!(copy.flatten_params(), flat);
    assert_eq!(copy.forward(&[0.1, -0.2]), net.forward(&[0.1, -0.2]));

    // perturbing one flat slot changes exactly one parameter
    for &idx in &[0usize, 9, 10, 11, 25, flat.len() - 1] {
        let mut perturbed = flat.clone();
        perturbed[idx] += 0.125;
        let mut net2 = net.clone();
        net2.set_flat_params(&perturbed).unwrap();
        let back = net2.flatten_params();
        let diffs: Vec<usize> = (0..flat.len()).filter(|&i| back[i] != flat[i]).collect();
        assert_eq!(diffs, vec![idx]);
    }

    // zero vector produces the zero function
    let mut zeroed = net.clone();
    zeroed.set_flat_params(&vec![0.0; flat.len()]).unwrap();
    assert_eq!(zeroed.forward(&[0.3, 0.9]), vec![0.0]);

    assert!(net.clone().set_flat_params(&flat[..10]).is_err());
}

#[test]
fn jets_match_finite_differences_of_forward() {
    let net = KanNetwork::<f64>::init(&[2, 3, 1], 5, 3, 21).unwrap();
    let mut rng = Lcg(4242);
    let h = 1e-5;
    for _ in 0..20 {
        let x = [rng.centered() * 0.9, rng.centered() * 0.9];
        let jets = net.forward_jet(&x, &[0, 1]);
        assert_eq!(jets.len(), 1);
        let jet = &jets[0];
        // value channel is bitwise the plain forward value
        assert_eq!(jet.value, net.forward(&x)[0]);
        for d in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let fd1 = (net.forward(&xp)[0] - net.forward(&xm)[0]) / (2.0 * h);
            assert!(
                close(jet.d1[d], fd1, 1e-6),
                "d1[{d}] at {x:?}: {} vs {fd1}",
                jet.d1[d]
            );
            let jp = net.forward_jet(&xp, &[0, 1]);
            let jm = net.forward_jet(&xm, &[0, 1]);
            let fd2 = (jp[0].d1[d] - jm[0].d1[d]) / (2.0 * h);
            assert!(
                close(jet.d2[d], fd2, 1e-4),
                "d2[{d}] at {x:?}: {} vs {fd2}",
                jet.d2[d]
            );
        }
        // a single active dimension gives the same channels as the pair
        let only1 = net.forward_jet(&x, &[1]);
        assert_eq!(only1[0].d1[0], jet.d1[1]);
        assert_eq!(only1[0].d2[0], jet.d2[1]);
    }

    // constant (all-zero) networks carry zero derivatives
    let mut zero = net.clone();
    zero.set_flat_params(&vec![0.0; net.param_count()]).unwrap();
    let jet = zero.forward_jet(&[0.2, 0.4], &[0, 1]);
    assert_eq!(jet[0].value, 0.0);
    assert_eq!(jet[0].d1, vec![0.0, 0.0]);
    assert_eq!(jet[0].d2, vec![0.0, 0.0]);
}

#[test]
fn deeper_jets_match_finite_differences() {
    let net = KanNetwork::<f64>::init(&[1, 4, 4, 1], 5, 3, 33).unwrap();
    let h = 1e-5;
    for i in 0..10 {
        let x = [-0.85 + 1.7 * i as f64 / 9.0];
        let jet = &net.forward_jet(&x, &[0])[0];
        let fd1 = (net.forward(&[x[0] + h])[0] - net.forward(&[x[0] - h])[0]) / (2.0 * h);
        let jp = net.forward_jet(&[x[0] + h], &[0]);
        let jm = net.forward_jet(&[x[0] - h], &[0]);
        let fd2 = (jp[0].d1[0] - jm[0].d1[0]) / (2.0 * h);
        assert!(close(jet.d1[0], fd1, 1e-6), "{} vs {fd1}", jet.d1[0]);
        assert!(close(jet.d2[0], fd2, 1e-4), "{} vs {fd2}", jet.d2[0]);
    }
}

/// The backward pass against finite differences of a fixed linear functional
/// of the jet channels, over every flat parameter. This exercises the
/// third-derivative chain that the jet backward needs internally.
#[test]
fn backward_matches_finite_differences_over_parameters() {
    let net = KanNetwork::<f64>::init(&[2, 3, 1], 4, 3, 55).unwrap();
    let mut rng = Lcg(31337);
    let points: Vec<[f64; 2]> = (0..4)
        .map(|_| [rng.centered() * 0.8, rng.centered() * 0.8])
        .collect();
    let adj = JetAdjoint {
        value: 0.7,
        d1: vec![-1.1, 0.4],
        d2: vec![0.9, -0.3],
    };

    let functional = |net: &KanNetwork<f64>| -> f64 {
        points
            .iter()
            .map(|x| {
                let j = &net.forward_jet(&x[..], &[0, 1])[0];
                adj.value * j.value
                    + adj.d1[0] * j.d1[0]
                    + adj.d1[1] * j.d1[1]
                    + adj.d2[0] * j.d2[0]
                    + adj.d2[1] * j.d2[1]
            })
            .sum()
    };

    let mut grad = vec![0.0; net.param_count()];
    for x in &points {
        net.backward_jet(&x[..], &[0, 1], std::slice::from_ref(&adj), &mut grad);
    }

    let flat = net.flatten_params();
    for i in 0..flat.len() {
        let h = 1e-6 * flat[i].abs().max(1.0);
        let mut plus = net.clone();
        let mut minus = net.clone();
        let mut fp = flat.clone();
        fp[i] += h;
        plus.set_flat_params(&fp).unwrap();
        let mut fm = flat.clone();
        fm[i] -= h;
        minus.set_flat_params(&fm).unwrap();
        let fd = (functional(&plus) - functional(&minus)) / (2.0 * h);
        assert!(
            close(grad[i], fd, 1e-5),
            "param {i}: analytic {} vs fd {fd}",
            grad[i]
        );
    }
}

/// Same check without jet channels: the plain data-gradient path.
#[test]
fn value_only_backward_matches_finite_differences() {
    let net = KanNetwork::<f64>::init(&[2, 4, 1], 5, 3, 91).unwrap();
    let x = [0.25, -0.55];
    let adj = JetAdjoint {
        value: 1.0,
        d1: vec![],
        d2: vec![],
    };
    let mut grad = vec![0.0; net.param_count()];
    net.backward_jet(&x, &[], std::slice::from_ref(&adj), &mut grad);
    let flat = net.flatten_params();
    for i in 0..flat.len() {
        let h = 1e-6 * flat[i].abs().max(1.0);
        let mut fp = flat.clone();
        fp[i] += h;
        let mut fm = flat.clone();
        fm[i] -= h;
        let mut plus = net.clone();
        plus.set_flat_params(&fp).unwrap();
        let mut minus = net.clone();
        minus.set_flat_params(&fm).unwrap();
        let fd = (plus.forward(&x)[0] - minus.forward(&x)[0]) / (2.0 * h);
        assert!(close(grad[i], fd, 1e-6), "param {i}: {} vs {fd}", grad[i]);
    }
}
