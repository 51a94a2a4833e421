mod oracles;

use mspnet::network::{ForwardCtx, Model, ModelConfig};
use mspnet::occlusion::*;
use mspnet::rng::rng_from_seed;
use mspnet::shapedata::*;
use mspnet::training::argmax;
use mspnet::Error;
use oracles::{randomize_parameters, toy_config, uniform};

fn subject(seed: u64) -> MultiStructureSample {
    let spec = SynthSpec { subjects: 2, structures: 2, points: 16, seed, ..SynthSpec::default() };
    synth_dataset(&spec).unwrap().samples.remove(1)
}

fn trained_like(seed: u64) -> Model {
    let mut model = Model::new(toy_config(), seed).unwrap();
    randomize_parameters(&mut model, seed + 1);
    model
}

/// Indices of the `k` nearest other points by full sort on (distance², index).
fn knn_bruteforce(points: &[Point], i: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| ((0..3).map(|c| (points[i][c] - points[j][c]).powi(2)).sum(), j))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, j)| j).collect()
}

fn single_logits(model: &Model, sample: &MultiStructureSample) -> Vec<f64> {
    let inputs = model.batch_inputs(&[sample]).unwrap();
    model.forward(&inputs, &mut ForwardCtx::evaluate()).unwrap().prediction.values().to_vec()
}

#[test]
fn matches_naive_per_point_recomputation() {
    for seed in 0..4 {
        let model = trained_like(seed);
        let raw = subject(seed + 10);
        let (prepared, _) = normalize_subject(&raw).unwrap();
        for structure in 0..2 {
            for k in [0, 3, 15] {
                let map = importance_map(&model, &raw, structure, k, None).unwrap();
                let full = single_logits(&model, &prepared);
                let class = argmax(&full);
                assert_eq!(map.reference_class, class);
                let points = &prepared.clouds[structure].points;
                for i in 0..points.len() {
                    let mut occluded = prepared.clone();
                    occluded.clouds[structure].points[i] = [0.0; 3];
                    for j in knn_bruteforce(points, i, k) {
                        occluded.clouds[structure].points[j] = [0.0; 3];
                    }
                    let expected = single_logits(&model, &occluded)[class] - full[class];
                    assert_eq!(map.importance[i], expected, "seed {seed}, structure {structure}, K {k}, point {i}");
                }
            }
        }
    }
}

#[test]
fn occluding_points_already_at_the_origin_changes_nothing() {
    let cfg = ModelConfig { normalize: false, ..toy_config() };
    let mut model = Model::new(cfg, 3).unwrap();
    randomize_parameters(&mut model, 4);
    let mut sample = subject(5);
    sample.clouds[0] = PointCloud::new(vec![[0.0; 3]; 16], 0).unwrap();
    for class in [0, 1] {
        let map = importance_map(&model, &sample, 0, 4, Some(class)).unwrap();
        assert_eq!(map.reference_class, class);
        assert!(map.importance.iter().all(|&v| v == 0.0), "{:?}", map.importance);
    }
}

#[test]
fn occluded_input_differs_only_on_the_neighbourhood() {
    let mut rng = rng_from_seed(6);
    let points: Vec<Point> = (0..64)
        .map(|_| {
            let v = uniform(&mut rng, 3, -1.0, 1.0);
            [v[0], v[1], v[2]]
        })
        .collect();
    let cloud = PointCloud::new(points, 0).unwrap();
    for i in [0, 17, 63] {
        let mut hidden = knn(&cloud, i, 8).unwrap();
        hidden.push(i);
        let occluded = occlude(&cloud, &hidden).unwrap();
        for j in 0..64 {
            if hidden.contains(&j) {
                assert_eq!(occluded.points[j], [0.0; 3]);
            } else {
                assert_eq!(occluded.points[j], cloud.points[j]);
            }
        }
    }
}

#[test]
fn knn_matches_bruteforce_on_512_points() {
    let mut rng = rng_from_seed(7);
    // Coarse grid values create many exact distance ties.
    let points: Vec<Point> = (0..512)
        .map(|_| {
            let v = uniform(&mut rng, 3, -4.0, 4.0);
            [v[0].round(), v[1].round(), v[2].round()]
        })
        .collect();
    let cloud = PointCloud::new(points.clone(), 0).unwrap();
    for i in (0..512).step_by(37) {
        for k in [1, 8, 32, 100, 511] {
            assert_eq!(knn(&cloud, i, k).unwrap(), knn_bruteforce(&points, i, k), "i {i}, K {k}");
        }
    }
}

#[test]
fn importance_is_deterministic() {
    let model = trained_like(8);
    let raw = subject(9);
    let a = importance_map(&model, &raw, 0, 5, None).unwrap();
    let b = importance_map(&model, &raw, 0, 5, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn export_writes_one_row_per_point() {
    let model = trained_like(11);
    let raw = subject(12);
    let map = importance_map(&model, &raw, 1, 4, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("subject");
    export_importance(&map, &raw.clouds[1], &prefix).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("subject.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    let ply = std::fs::read_to_string(dir.path().join("subject.ply")).unwrap();
    let body: Vec<&str> = ply.split("end_header\n").nth(1).unwrap().lines().collect();
    assert_eq!(body.len(), 16);
    let scale = map.max_abs();
    for (line, v) in body.iter().zip(&map.importance) {
        let rgb: Vec<u8> = line.split(' ').skip(3).map(|c| c.parse().unwrap()).collect();
        assert_eq!(rgb, diverging_color(v / scale).to_vec());
    }
}

#[test]
fn regression_models_are_rejected() {
    let cfg = ModelConfig { task: Task::Regression, outputs: 1, ..toy_config() };
    let model = Model::new(cfg, 0).unwrap();
    let err = importance_map(&model, &subject(1), 0, 4, None).unwrap_err();
    assert!(matches!(err, Error::UnsupportedTask(_)), "{err:?}");
    assert!(importance_map(&trained_like(0), &subject(1), 0, 4, Some(2)).is_err());
    assert!(importance_map(&trained_like(0), &subject(1), 2, 4, None).is_err());
    assert!(importance_map(&trained_like(0), &subject(1), 0, 16, None).is_err());
}

/// One structure of 8 points whose class-0 logit is `−Σₖ (x_{i,k} + 10)`
/// for point `i` and independent of every other point. Every ReLU input
/// stays above 9, so the network is affine on the unit cube.
fn linear_probe_model(i: usize) -> Model {
    let cfg = ModelConfig {
        structures: 1,
        points: 8,
        feature_mlp: vec![3],
        post_mlp: vec![3],
        head: vec![],
        normalize: false,
        ..toy_config()
    };
    let mut model = Model::new(cfg, 0).unwrap();
    let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let unit_gain = vec![(1.0 + mspnet::diffcore::BATCH_NORM_EPS).sqrt(); 3];
    for id in model.store.ids().collect::<Vec<_>>() {
        let name = model.store.entry(id).name.clone();
        let value = match name.as_str() {
            "branch0.feature_mlp.0.weight" | "branch0.post_mlp.0.weight" => eye.clone(),
            "branch0.feature_mlp.0.bias" | "branch0.post_mlp.0.bias" | "branch0.post_mlp.0.bn.beta" => vec![0.0; 3],
            "branch0.feature_mlp.0.bn.gamma" | "branch0.post_mlp.0.bn.gamma" => unit_gain.clone(),
            "branch0.feature_mlp.0.bn.beta" => vec![10.0; 3],
            "head.out.bias" => vec![0.0; 2],
            "head.out.weight" => {
                let mut w = vec![0.0; 8 * 3 * 2];
                for k in 0..3 {
                    w[(i * 3 + k) * 2] = -1.0;
                }
                w
            }
            _ => continue,
        };
        *model.store.values_mut(id) = value;
    }
    model
}

#[test]
fn sign_convention_on_a_linear_model() {
    let i = 5;
    let model = linear_probe_model(i);
    let mut rng = rng_from_seed(30);
    let mut points: Vec<Point> = (0..8)
        .map(|_| {
            let v = uniform(&mut rng, 3, 0.0, 1.0);
            [v[0], v[1], v[2]]
        })
        .collect();
    points[i] = [0.1, 0.2, 0.3];
    let sample = MultiStructureSample {
        subject_id: "probe".into(),
        clouds: vec![PointCloud::new(points, 0).unwrap()],
        target: Target::Class(0),
    };
    // Zeroing point i lowers the sum inside the negated logit by 0.6.
    let map = importance_map(&model, &sample, 0, 0, Some(0)).unwrap();
    assert!((map.importance[i] - 0.6).abs() < 1e-9, "{}", map.importance[i]);
    for (j, v) in map.importance.iter().enumerate() {
        if j != i {
            assert!(v.abs() < 1e-12, "point {j}: {v}");
        }
    }
}
