use mixroute::embed::{intra_loss, normalize, train_projection, EmbedTrainConfig, ProjectionModel};
use mixroute::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Three Gaussian blobs around orthogonal directions, `per` points each.
fn blobs(per: usize, dim: usize, spread: f64, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).unwrap();
    let mut out = Vec::new();
    for d in 0..3 {
        for _ in 0..per {
            let v: Vec<f64> = (0..dim)
                .map(|k| if k == d { 1.0 } else { 0.0 } + noise.sample(&mut rng))
                .collect();
            out.push((v, d));
        }
    }
    out
}

fn intra_of(model: &ProjectionModel, data: &[(Vec<f64>, usize)]) -> f64 {
    let emb: Vec<Vec<f64>> = data.iter().map(|(b, _)| model.project(b).unwrap()).collect();
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    intra_loss(&emb, &labels, &model.unit_centers().unwrap()).unwrap()
}

#[test]
fn training_reduces_intra_loss_on_separable_domains() {
    let data = blobs(50, 6, 0.3, 1);
    let (model, report) = train_projection(&data, &EmbedTrainConfig::default()).unwrap();
    assert!(report.final_intra < report.initial_intra);
    assert!(report.final_loss <= report.initial_loss);
    assert!((intra_of(&model, &data) - report.final_intra).abs() < 1e-9);
    assert_eq!(model.centers.len(), 3);
}

#[test]
fn seeds_give_similar_losses() {
    let data = blobs(50, 6, 0.3, 2);
    let run = |seed| {
        let cfg = EmbedTrainConfig { seed, ..Default::default() };
        train_projection(&data, &cfg).unwrap().1.final_loss
    };
    let (a, b) = (run(1), run(2));
    assert!((a - b).abs() <= 0.1 * a.max(b), "{a} vs {b}");
}

#[test]
fn training_is_deterministic() {
    let data = blobs(20, 4, 0.3, 3);
    let cfg = EmbedTrainConfig { epochs: 10, ..Default::default() };
    assert_eq!(train_projection(&data, &cfg).unwrap().0, train_projection(&data, &cfg).unwrap().0);
}

#[test]
fn small_learning_rate_descends_almost_monotonically() {
    let data = blobs(50, 6, 0.3, 4);
    let cfg = EmbedTrainConfig { learning_rate: 1e-3, epochs: 60, ..Default::default() };
    let (_, report) = train_projection(&data, &cfg).unwrap();
    let pairs = report.epoch_losses.windows(2).count();
    let down = report.epoch_losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down as f64 >= 0.9 * pairs as f64, "{down}/{pairs}");
}

#[test]
fn one_domain_is_rejected() {
    let data: Vec<(Vec<f64>, usize)> = blobs(5, 3, 0.1, 5).into_iter().map(|(v, _)| (v, 0)).collect();
    assert!(matches!(train_projection(&data, &EmbedTrainConfig::default()), Err(Error::TooFewDomains(1))));
    assert!(matches!(train_projection(&[], &EmbedTrainConfig::default()), Err(Error::EmptyBatch)));
}

#[test]
fn projection_examples() {
    let id = ProjectionModel::identity(3);
    assert_eq!(id.project(&[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    assert!(matches!(id.project(&[0.0; 3]), Err(Error::ZeroVector)));
    let double = ProjectionModel::from_weight(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap();
    let v = normalize(&[0.6, 0.8]).unwrap();
    let p = double.project(&v).unwrap();
    assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    assert!(matches!(id.project(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn model_file_round_trip() {
    let data = blobs(10, 4, 0.3, 6);
    let cfg = EmbedTrainConfig { epochs: 5, d_route: Some(3), ..Default::default() };
    let (model, _) = train_projection(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    model.save(&path).unwrap();
    assert_eq!(ProjectionModel::load(&path).unwrap(), model);
    assert_eq!((model.d_route, model.d_base), (3, 4));
}
