//! Task metrics on a toy prediction set and Fréchet distance between two
//! Gaussian samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use reuselab::metrics::{accuracy, fid, gain_summary, macro_recall, quadratic_kappa, roc_auc, PredictionSet};

fn main() -> reuselab::Result<()> {
    let labels = vec![0, 1, 2, 2, 1, 0, 2, 1];
    let preds = vec![0, 1, 2, 1, 1, 0, 2, 2];
    let scores: Vec<f64> = preds.iter().flat_map(|&p| (0..3).map(move |c| if c == p { 0.8 } else { 0.1 })).collect();
    let set = PredictionSet::new(labels, preds, scores, 3)?;
    println!("accuracy {:.3}", accuracy(&set)?);
    println!("quadratic kappa {:.3}", quadratic_kappa(&set)?);
    println!("macro recall {:.3}", macro_recall(&set)?);
    println!("one-vs-rest AUC {:.3}", roc_auc(&set)?);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 20_000;
    let a: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(n).collect();
    let b: Vec<f64> = Normal::new(1.0, 2.0).unwrap().sample_iter(&mut rng).take(n).collect();
    println!("FID N(0,1) vs N(1,4): {:.3} (closed form 2.0)", fid(&a, n, &b, n, 1)?.value);

    let g = gain_summary(&[0.894], &[0.8], &[0.684])?;
    println!("WT/RI gain {:.3}, reuse share {:.3}", g.gain_ratio, g.reuse_share);
    Ok(())
}
