use lwbc_core::classifier::Reduction;
use lwbc_core::datagen::{generate, minibatches, BiasedSpec};
use lwbc_core::{ClassifierState, Dataset, Matrix, RngStream};

fn block(data: &Dataset, cols: std::ops::Range<usize>) -> Matrix {
    let rows: Vec<Vec<f64>> = data.samples().iter().map(|s| s.features[cols.clone()].to_vec()).collect();
    Matrix::from_rows(&rows).unwrap()
}

fn accuracy_after(x: &Matrix, labels: &[usize], classes: usize, steps: usize, seed: u64) -> f64 {
    let mut state = ClassifierState::init(x.cols(), 16, classes, &mut RngStream::new(seed, 1)).unwrap();
    let batches = RngStream::new(seed, 2);
    let mut done = 0;
    'outer: for epoch in 0.. {
        for idx in minibatches(x.rows(), 64, &batches, epoch).unwrap() {
            if done == steps {
                break 'outer;
            }
            let xb = x.select_rows(&idx).unwrap();
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (g, _) = state.weighted_ce_backward(&xb, &yb, &vec![1.0; yb.len()], Reduction::Mean).unwrap();
            state.adam_step(&g, 1e-3).unwrap();
            done += 1;
        }
    }
    let preds = state.predict(x).unwrap();
    preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

#[test]
fn bias_block_is_learned_faster_than_core_block() {
    for (rho, seed) in [(0.0, 0), (0.01, 1), (0.05, 2), (0.1, 3)] {
        let spec = BiasedSpec {
            rho,
            ..BiasedSpec::default()
        };
        let data = generate(&spec, &mut RngStream::new(seed, 0)).unwrap();
        let labels = data.labels();
        let core = block(&data, 0..spec.d_core);
        let bias = block(&data, spec.d_core..spec.dim());
        let core_acc = accuracy_after(&core, &labels, spec.classes, 50, seed);
        let bias_acc = accuracy_after(&bias, &labels, spec.classes, 50, seed);
        assert!(bias_acc > core_acc, "rho={rho}: bias {bias_acc} vs core {core_acc}");
    }
}
