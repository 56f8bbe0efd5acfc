use super::train::DiscriminatorTrainer;
use super::*;
use crate::autodiff::gradcheck::{check_gradient, numerical_gradient};
use crate::autoencoder::{AeConfig, Autoencoder};
use crate::mapping::{Mapping, MappingConfig, MappingKind};
use crate::nn::Bind;
use crate::text::{ParallelCorpus, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::LN_2;

fn rows(r: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(r).unwrap()
}

fn eval(f: impl FnOnce(&mut Graph) -> Var) -> f64 {
    let mut g = Graph::new();
    let v = f(&mut g);
    g.value(v).item()
}

fn cos_oracle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

#[test]
fn supervised_loss_fixed_points_and_oracle() {
    let z = rows(&[vec![1.0, 2.0, -1.0], vec![0.5, 0.0, 3.0]]);
    let neg = z.map(|x| -x);
    let same = eval(|g| {
        let (a, b) = (g.constant(z.clone()), g.constant(z.clone()));
        supervised_task_loss(g, a, b).unwrap()
    });
    assert!(same.abs() < 1e-15);
    let opposite = eval(|g| {
        let (a, b) = (g.constant(z.clone()), g.constant(neg.clone()));
        supervised_task_loss(g, a, b).unwrap()
    });
    assert!((opposite - 2.0).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::uniform(&[4, 5], 1.0, &mut rng);
    let b = Tensor::uniform(&[4, 5], 1.0, &mut rng);
    let got = eval(|g| {
        let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
        supervised_task_loss(g, x, y).unwrap()
    });
    let oracle = (0..4).map(|i| cos_oracle(a.row(i), b.row(i))).sum::<f64>() / 4.0;
    assert!((got - oracle).abs() < 1e-12);
}

#[test]
fn content_loss_identity_and_orthogonal() {
    let z = rows(&[vec![1.0, 0.0]]);
    let o = rows(&[vec![0.0, 3.0]]);
    let id = eval(|g| {
        let (a, b) = (g.constant(z.clone()), g.constant(z.clone()));
        content_loss(g, a, b).unwrap()
    });
    assert_eq!(id, 0.0);
    let orth = eval(|g| {
        let (a, b) = (g.constant(z.clone()), g.constant(o.clone()));
        content_loss(g, a, b).unwrap()
    });
    assert_eq!(orth, 1.0);
}

#[test]
fn style_loss_fixed_points() {
    let z = rows(&[vec![1.0, 1.0], vec![-1.0, 2.0]]);
    let certain = LogisticClassifier::new(vec![0.0, 0.0], 50.0);
    let coin = LogisticClassifier::new(vec![0.0, 0.0], 0.0);
    let l1 = eval(|g| {
        let a = g.constant(z.clone());
        style_loss(g, a, &certain).unwrap()
    });
    assert!(l1.abs() < 1e-15);
    let l2 = eval(|g| {
        let a = g.constant(z.clone());
        style_loss(g, a, &coin).unwrap()
    });
    assert!((l2 - LN_2).abs() < 1e-15);
}

fn frozen_classifier(d: usize) -> StyleClassifier {
    let mut c = StyleClassifier::init(d, 8, &mut ChaCha8Rng::seed_from_u64(4));
    c.freeze();
    c
}

#[test]
fn style_gradient_reaches_input_not_classifier() {
    let clf = frozen_classifier(3);
    let before = clf.parameter_hash();
    let z = Tensor::uniform(&[2, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let mut g = Graph::new();
    let zv = g.param(&z);
    let l = style_loss(&mut g, zv, &clf).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.wrt(zv).norm() > 0.0);
    let numeric = numerical_gradient(&z, 1e-5, |t| {
        eval(|g| {
            let a = g.constant(t.clone());
            style_loss(g, a, &clf).unwrap()
        })
    });
    check_gradient(&grads.wrt(zv), &numeric, 1e-4).unwrap();
    assert_eq!(clf.parameter_hash(), before);
}

#[test]
fn interpolation_endpoints_are_exact() {
    let clf = frozen_classifier(3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pred = Tensor::uniform(&[3, 3], 1.0, &mut rng);
    let input = Tensor::uniform(&[3, 3], 1.0, &mut rng);
    let run = |f: &dyn Fn(&mut Graph, Var, Var) -> Var| {
        eval(|g| {
            let (p, x) = (g.constant(pred.clone()), g.constant(input.clone()));
            f(g, p, x)
        })
    };
    let content = run(&|g, p, x| content_loss(g, p, x).unwrap());
    let style = run(&|g, p, _| style_loss(g, p, &clf).unwrap());
    let at = |l: f64| run(&|g, p, x| unsupervised_task_loss(g, p, x, l, &clf).unwrap());
    assert_eq!(at(0.0), content);
    assert_eq!(at(1.0), style);
    assert!((at(0.5) - (content + style) / 2.0).abs() < 1e-12);
    assert!(LossWeights::new(0.0, 1.5).is_err());
    assert!(LossWeights::new(-0.1, 0.5).is_err());
}

#[test]
fn adversarial_losses_at_balanced_discriminator() {
    let half = Tensor::full(&[4, 1], 0.5);
    let d = eval(|g| {
        let (r, f) = (g.constant(half.clone()), g.constant(half.clone()));
        discriminator_loss(g, r, f).unwrap()
    });
    assert!((d - 2.0 * LN_2).abs() < 1e-9);
    let gl = eval(|g| {
        let p = g.constant(half.clone());
        generator_loss(g, p)
    });
    assert!((gl - LN_2).abs() < 1e-9);
    let one = eval(|g| {
        let p = g.constant(Tensor::full(&[2, 1], 1.0));
        generator_loss(g, p)
    });
    assert_eq!(one, 0.0);
}

/// Discriminator whose output layer is zero, so `D ≡ 0.5`.
fn balanced_discriminator(d: usize) -> Discriminator {
    let mut disc = Discriminator::init(d, &DiscriminatorConfig::default(), &mut ChaCha8Rng::seed_from_u64(2));
    let last = disc.net.layers.last_mut().unwrap();
    *last = crate::nn::Linear::zeros(last.inputs(), 1);
    disc
}

#[test]
fn real_discriminator_at_half_is_calibrated() {
    let disc = balanced_discriminator(4);
    let z = Tensor::uniform(&[5, 4], 2.0, &mut ChaCha8Rng::seed_from_u64(3));
    let mut g = Graph::new();
    let b = disc.net.bind(&mut g, Bind::Frozen);
    let zv = g.constant(z);
    let p = disc.net.prob(&mut g, &b, zv).unwrap();
    let gen = generator_loss(&mut g, p);
    let dl = discriminator_loss(&mut g, p, p).unwrap();
    assert!((g.value(gen).item() - LN_2).abs() < 1e-9);
    assert!((g.value(dl).item() - 2.0 * LN_2).abs() < 1e-9);
}

#[test]
fn gradient_separation_between_players() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mapping = Mapping::init(
        MappingConfig {
            zero_init_offsets: false,
            ..MappingConfig::new(MappingKind::OffsetNet, 4)
        },
        &mut rng,
    )
    .unwrap();
    let disc = Discriminator::init(
        4,
        &DiscriminatorConfig {
            hidden: 6,
            ..Default::default()
        },
        &mut rng,
    );
    let z = Tensor::uniform(&[3, 4], 1.0, &mut rng);

    // generator pass: D bound frozen, so only Φ receives gradient
    let mut g = Graph::new();
    let bm = mapping.bind(&mut g, Bind::Trainable);
    let bd = disc.net.bind(&mut g, Bind::Frozen);
    let zv = g.constant(z.clone());
    let pred = mapping.forward(&mut g, &bm, zv).unwrap();
    let p = disc.net.prob(&mut g, &bd, pred).unwrap();
    let l = generator_loss(&mut g, p);
    let grads = g.backward(l).unwrap();
    assert!(bd.vars().iter().all(|&v| grads.get(v).is_none()));
    assert!(bm.vars().iter().any(|&v| grads.wrt(v).norm() > 0.0));

    // discriminator pass on a detached prediction: Φ receives nothing
    let mut g = Graph::new();
    let bm = mapping.bind(&mut g, Bind::Trainable);
    let bd = disc.net.bind(&mut g, Bind::Trainable);
    let zv = g.constant(z.clone());
    let pred = mapping.forward(&mut g, &bm, zv).unwrap();
    let fake = g.detach(pred);
    let real = g.constant(z);
    let pr = disc.net.prob(&mut g, &bd, real).unwrap();
    let pf = disc.net.prob(&mut g, &bd, fake).unwrap();
    let l = discriminator_loss(&mut g, pr, pf).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(bm.vars().iter().all(|&v| grads.wrt(v).norm() == 0.0));
    assert!(bd.vars().iter().any(|&v| grads.wrt(v).norm() > 0.0));
}

#[test]
fn total_loss_arithmetic_and_gradient() {
    let t = eval(|g| {
        let task = g.constant(Tensor::scalar(0.5));
        let adv = g.constant(Tensor::scalar(1.0));
        total_loss(g, task, Some(adv), 0.032).unwrap()
    });
    assert!((t - 0.532).abs() < 1e-15);
    let zero = eval(|g| {
        let task = g.constant(Tensor::scalar(0.7));
        let adv = g.constant(Tensor::scalar(123.0));
        total_loss(g, task, Some(adv), 0.0).unwrap()
    });
    assert_eq!(zero, 0.7);

    let clf = frozen_classifier(3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let target = Tensor::uniform(&[2, 3], 1.0, &mut rng);
    let z = Tensor::uniform(&[2, 3], 1.0, &mut rng);
    let f = |g: &mut Graph, zv: Var| {
        let tv = g.constant(target.clone());
        let task = supervised_task_loss(g, zv, tv).unwrap();
        let adv = style_loss(g, zv, &clf).unwrap();
        total_loss(g, task, Some(adv), 0.3).unwrap()
    };
    let mut g = Graph::new();
    let zv = g.param(&z);
    let l = f(&mut g, zv);
    let grads = g.backward(l).unwrap();
    let numeric = numerical_gradient(&z, 1e-5, |t| {
        eval(|g| {
            let v = g.constant(t.clone());
            f(g, v)
        })
    });
    check_gradient(&grads.wrt(zv), &numeric, 1e-4).unwrap();
}

#[test]
fn supervised_negatives_are_batch_targets() {
    let pool = rows(&[vec![1.0], vec![2.0], vec![3.0]]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = sample_negatives(Mode::Supervised, &[2, 0], &pool, &mut rng).unwrap();
    assert_eq!(n.data(), &[3.0, 1.0]);
}

#[test]
fn unsupervised_negatives_are_seeded_and_uniform() {
    let pool = Tensor::matrix(10, 1, (0..10).map(f64::from).collect()).unwrap();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_negatives(Mode::Unsupervised, &[0; 10_000], &pool, &mut rng).unwrap()
    };
    assert_eq!(draw(3), draw(3));
    let mut counts = [0usize; 10];
    for &x in draw(4).data() {
        counts[x as usize] += 1;
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
    // χ²(9) upper 1% point
    assert!(chi2 < 21.666, "chi2 {chi2}");
}

fn clusters(n: usize, d: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Tensor::normal(&[2 * n, d], 0.3, &mut rng);
    let shift = |i: usize| if i < n { 1.5 } else { -1.5 };
    let mut data = noise.into_data();
    for (k, x) in data.iter_mut().enumerate() {
        *x += shift(k / d);
    }
    let all = Tensor::matrix(2 * n, d, data).unwrap();
    let a = all.select_rows(&(0..n).collect::<Vec<_>>()).unwrap();
    let b = all.select_rows(&(n..2 * n).collect::<Vec<_>>()).unwrap();
    (a, b)
}

#[test]
fn discriminator_separates_toy_clusters() {
    let (real, fake) = clusters(64, 8, 10);
    let cfg = DiscriminatorConfig::default();
    let disc = Discriminator::init(8, &cfg, &mut ChaCha8Rng::seed_from_u64(11));
    let mut t = DiscriminatorTrainer::new(disc, cfg.lr).unwrap();
    for _ in 0..500 {
        t.step(&real, &fake).unwrap();
    }
    let acc = t.accuracy(&real, &fake).unwrap();
    assert!(acc > 0.95, "accuracy {acc}");
}

#[test]
fn classifier_learns_separable_clusters() {
    let (pos, neg) = clusters(200, 6, 12);
    let mut data = pos.into_data();
    data.extend(neg.into_data());
    let z = Tensor::matrix(400, 6, data).unwrap();
    let labels: Vec<u8> = (0..400).map(|i| u8::from(i < 200)).collect();
    let cfg = ClassifierConfig {
        epochs: 10,
        ..ClassifierConfig::default()
    };
    let clf = train_classifier_on_embeddings(&z, &labels, &cfg).unwrap();
    assert!(clf.is_frozen());
    assert!(clf.heldout_accuracy.unwrap() >= 0.99);
    assert_eq!(clf.probs(&z).unwrap(), clf.probs(&z).unwrap());
}

#[test]
fn single_class_data_is_rejected() {
    let z = Tensor::zeros(&[3, 2]);
    assert!(matches!(
        train_classifier_on_embeddings(&z, &[1, 1, 1], &ClassifierConfig::default()),
        Err(Error::SingleClass(1))
    ));
}

fn toy_ae() -> Autoencoder {
    let vocab = Vocab::build(["a b c d e f g h"], 50).unwrap();
    let cfg = AeConfig {
        emb_dim: 4,
        hidden: 6,
        shared_embeddings: true,
    };
    let mut ae = Autoencoder::init(cfg, vocab, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    ae.freeze();
    ae
}

fn toy_pairs() -> ParallelCorpus {
    ParallelCorpus::new(
        vec!["a b c".into(), "d e".into(), "f g h a".into(), "b b".into()],
        vec!["a b d".into(), "d f".into(), "f g h b".into(), "c b".into()],
    )
    .unwrap()
}

fn small_cfg(lambda_adv: f64) -> Emb2EmbConfig {
    Emb2EmbConfig {
        weights: LossWeights::new(lambda_adv, 0.5).unwrap(),
        epochs: 3,
        batch_size: 2,
        lr: 1e-3,
        discriminator: DiscriminatorConfig {
            hidden: 5,
            ..Default::default()
        },
        seed: 21,
    }
}

fn offsetnet(d: usize) -> Mapping {
    Mapping::init(
        MappingConfig::new(MappingKind::OffsetNet, d),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap()
}

#[test]
fn without_adversary_discriminator_is_untouched() {
    let ae = toy_ae();
    let data = toy_pairs();
    let task = Task::Supervised {
        train: &data,
        valid: &data,
    };
    let cfg = small_cfg(0.0);
    let out = train_emb2emb(&ae, offsetnet(6), task, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let fresh = Discriminator::init(6, &cfg.discriminator, &mut rng);
    assert_eq!(out.discriminator.parameter_hash(), fresh.parameter_hash());
    assert!(out.log.iter().all(|r| r.disc_loss == 0.0 && r.adv_loss == 0.0));
}

#[test]
fn seeded_training_replays_bitwise() {
    let ae = toy_ae();
    let data = toy_pairs();
    let run = || {
        let task = Task::Supervised {
            train: &data,
            valid: &data,
        };
        train_emb2emb(&ae, offsetnet(6), task, &small_cfg(0.05)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.last, b.last);
}

#[test]
fn frozen_components_survive_training() {
    let ae = toy_ae();
    let clf = {
        let mut c = StyleClassifier::init(6, 4, &mut ChaCha8Rng::seed_from_u64(2));
        c.freeze();
        c
    };
    let (ae_hash, clf_hash) = (ae.parameter_hash(), clf.parameter_hash());
    let texts: Vec<String> = ["a b", "c d e", "f g", "h a b"].iter().map(|s| s.to_string()).collect();
    let task = Task::Unsupervised {
        train: &texts,
        pool: &texts,
        valid: &texts,
        classifier: &clf,
    };
    let out = train_emb2emb(&ae, offsetnet(6), task, &small_cfg(0.1)).unwrap();
    assert_eq!(out.log.len(), 3);
    assert_eq!(ae.parameter_hash(), ae_hash);
    assert_eq!(clf.parameter_hash(), clf_hash);
}

#[test]
fn unfrozen_inputs_are_refused() {
    let ae = toy_ae();
    let data = toy_pairs();
    let clf = StyleClassifier::init(6, 4, &mut ChaCha8Rng::seed_from_u64(2));
    let texts = vec!["a b".to_string()];
    let task = Task::Unsupervised {
        train: &texts,
        pool: &texts,
        valid: &texts,
        classifier: &clf,
    };
    assert!(train_emb2emb(&ae, offsetnet(6), task, &small_cfg(0.0)).is_err());
    let live = Autoencoder::init(ae.config.clone(), ae.vocab.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let task = Task::Supervised {
        train: &data,
        valid: &data,
    };
    assert!(train_emb2emb(&live, offsetnet(6), task, &small_cfg(0.0)).is_err());
}

#[test]
fn epoch_log_csv_has_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let row = EpochLog {
        epoch: 0,
        task_loss: 0.5,
        adv_loss: 0.1,
        disc_loss: 1.3,
        valid_metric: 0.25,
    };
    write_epoch_log(&path, &[row.clone(), EpochLog { epoch: 1, ..row }]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,task_loss,adv_loss,disc_loss,valid_metric");
    assert_eq!(lines.len(), 3);
}
