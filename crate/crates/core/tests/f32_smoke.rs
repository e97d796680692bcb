//! Single-precision exercises of the generic core: the full train loop, the
//! spline basis, and jet propagation all instantiated at `f32`.

use conformal_kan::model::DomainBox;
use conformal_kan::network::{KanNetwork, ScaledKan};
use conformal_kan::spline::{build_grid, eval_basis};
use conformal_kan::train::{DataMse, Dataset, TrainConfig};

fn sine_dataset(n: usize) -> Dataset<f32> {
    let xs: Vec<Vec<f32>> = (0..n).map(|i| vec![i as f32 / (n - 1) as f32]).collect();
    let ys: Vec<f32> = xs
        .iter()
        .map(|x| (std::f32::consts::PI * x[0]).sin())
        .collect();
    Dataset::new(xs, ys).unwrap()
}

#[test]
fn f32_network_trains_down_on_sine_data() {
    let domain = DomainBox::new(vec![0.0f32], vec![1.0f32]).unwrap();
    let net = KanNetwork::<f32>::init(&[1, 3, 1], 5, 3, 7).unwrap();
    let mut model = ScaledKan {
        scaler: domain.scaler(),
        net,
    };
    let loss = DataMse::new(sine_dataset(64)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 150,
        seed: 7,
        full_batch: true,
    };
    let history = conformal_kan::train::train(&mut model, &loss, &cfg).unwrap();
    let totals = history.totals();
    assert_eq!(totals.len(), 151);
    assert!(
        history.final_loss() < 0.2 * totals[0],
        "loss went {} -> {}",
        totals[0],
        history.final_loss()
    );
    assert!(history.final_loss() < 1e-2);
}

#[test]
fn f32_spline_basis_partitions_unity() {
    let grid = build_grid(-1.0f32, 1.0f32, 7, 3).unwrap();
    for i in 0..=200 {
        let x = -1.0 + 2.0 * i as f32 / 200.0;
        let sum: f32 = eval_basis(&grid, x).unwrap().iter().sum();
        assert!((sum - 1.0).abs() < 1e-4, "sum at {x} = {sum}");
    }
}

#[test]
fn f32_jet_values_match_forward_exactly() {
    let net = KanNetwork::<f32>::init(&[2, 4, 1], 5, 3, 21).unwrap();
    for &(a, b) in &[(0.1f32, -0.4), (-0.9, 0.9), (0.0, 0.0), (0.33, 0.77)] {
        let jets = net.forward_jet(&[a, b], &[0, 1]);
        let values = net.forward(&[a, b]);
        assert_eq!(jets[0].value, values[0]);
        assert!(jets[0].d1.iter().all(|d| d.is_finite()));
        assert!(jets[0].d2.iter().all(|d| d.is_finite()));
    }
}
