//! Trains both classifiers on a two-class XOR problem and three Gaussian
//! blobs and reports training accuracy.

use cm_automl::classifiers::{ClassifierKind, TrainedClassifier};
use cm_automl::validation::accuracy;
use cm_automl::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cm_automl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xor: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let y_xor: Vec<usize> = xor.iter().map(|p| usize::from(p[0] * p[1] > 0.0)).collect();

    let centres = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
    let blobs: Vec<Vec<f64>> = (0..150).map(|i| centres[i % 3].iter().map(|c| c + rng.random_range(-1.0..1.0)).collect()).collect();
    let y_blobs: Vec<usize> = (0..150).map(|i| i % 3).collect();

    for (name, rows, y, c) in [("xor", &xor, &y_xor, 2), ("blobs", &blobs, &y_blobs, 3)] {
        let x = Matrix::from_rows(rows)?;
        for kind in ClassifierKind::ALL {
            let model = TrainedClassifier::fit(kind, &x, y, c)?;
            println!("{name:<6} {:<9} training accuracy {:.3}", kind.id(), accuracy(y, &model.predict(&x)?));
        }
    }
    Ok(())
}
