use mttdsc::datasets::{synth_corpus, Dataset, VocabSpec};
use mttdsc::evaluation::{evaluate, Estimate};
use mttdsc::models::{aux_forward, ModelBundle, MttdscModel, TdgruModel, Variant};
use mttdsc::numerics::{Parameterized, ProbabilityTriple};
use mttdsc::training::{
    aux_batch_step, ensemble_train, load_checkpoint, prepare_passages, prepare_targeted, rngs,
    save_checkpoint, train_single, train_variant, TrainConfig, TrainData,
};

fn no_dropout() -> TrainConfig {
    TrainConfig {
        recurrent_dropout: 0.0,
        head_dropout: 0.0,
        ..Default::default()
    }
}

#[test]
fn aux_loss_mostly_decreases_within_an_epoch() {
    let corpus = synth_corpus(11, 4, 16, &VocabSpec::default()).unwrap();
    let aux = prepare_passages(&corpus.aux, &corpus.embeddings).unwrap();
    let cfg = TrainConfig {
        hidden: 16,
        batch: 2,
        ..no_dropout()
    };
    let (mut init, mut rng) = rngs(0);
    let mut m = MttdscModel::init(16, 16, false, &mut init);
    let loss = |m: &MttdscModel| -> f64 {
        aux.iter()
            .map(|p| {
                aux_forward(&m.aux, &p.tokens, None)
                    .unwrap()
                    .1
                    .head
                    .loss(p.label)
            })
            .sum()
    };
    let mut losses = vec![loss(&m)];
    for b in (0..16).collect::<Vec<_>>().chunks(2) {
        aux_batch_step(&mut m.aux, &aux, b, &cfg, &mut rng).unwrap();
        losses.push(loss(&m));
    }
    let decreasing = losses.windows(2).filter(|w| w[1] < w[0]).count();
    println!("aux toy losses {losses:?}");
    assert!(
        decreasing * 10 >= 8 * (losses.len() - 1),
        "{decreasing} of {}",
        losses.len() - 1
    );
}

#[test]
fn tdgru_overfits_eight_instances() {
    let corpus = synth_corpus(12, 8, 1, &VocabSpec::default()).unwrap();
    let main = prepare_targeted(&corpus.main, &corpus.embeddings).unwrap();
    let cfg = TrainConfig {
        hidden: 16,
        batch: 8,
        epochs: 300,
        ..no_dropout()
    };
    let (mut init, mut rng) = rngs(0);
    let mut m = TdgruModel::init(16, 16, &mut init);
    let history = train_single(&mut m, &main, &cfg, &mut rng, None, false).unwrap();
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.main_loss).collect();
    let non_increasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(
        non_increasing * 10 >= 9 * (losses.len() - 1),
        "{non_increasing} of {}",
        losses.len() - 1
    );
    let bundle = ModelBundle::Tdgru {
        model: m,
        fine_tuned: false,
    };
    let r = evaluate(
        &bundle,
        &Dataset::Targeted(corpus.main.clone()),
        &corpus.embeddings,
        Estimate::Discrete,
    )
    .unwrap();
    assert_eq!(r.accuracy, 1.0);
}

fn small_data(seed: u64) -> mttdsc::datasets::SynthCorpus {
    synth_corpus(seed, 16, 24, &VocabSpec::default()).unwrap()
}

fn tiny() -> TrainConfig {
    TrainConfig {
        hidden: 5,
        batch: 4,
        epochs: 3,
        ensemble_size: 3,
        ..Default::default()
    }
}

#[test]
fn identical_seeds_give_identical_histories_and_objective_is_recomputable() {
    let c = small_data(1);
    let data = TrainData {
        table: &c.embeddings,
        aux: Some(&c.aux),
        main: Some(&c.main),
        validation: Some(&Dataset::Targeted(c.main.clone())),
    };
    let cfg = TrainConfig {
        alpha: 0.7,
        ..tiny()
    };
    let a = train_variant(Variant::Mttdsc, &data, &cfg).unwrap();
    let b = train_variant(Variant::Mttdsc, &data, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    for (k, e) in a.history.epochs.iter().enumerate() {
        assert_eq!(e.epoch, k + 1);
        assert!((e.objective - (e.aux_loss + 0.7 * e.main_loss)).abs() <= 1e-9);
        assert!(e.validation.is_some());
    }
    assert!(a.history.best_epoch.is_some());
}

#[test]
fn ensemble_members_are_independent_of_order_and_parallelism() {
    let c = small_data(2);
    let data = TrainData {
        table: &c.embeddings,
        aux: Some(&c.aux),
        main: Some(&c.main),
        validation: None,
    };
    let serial = ensemble_train(Variant::Tdgru, &data, &tiny()).unwrap();
    let parallel = ensemble_train(
        Variant::Tdgru,
        &data,
        &TrainConfig {
            workers: 3,
            ..tiny()
        },
    )
    .unwrap();
    for k in (0..3).rev() {
        let alone = train_variant(
            Variant::Tdgru,
            &data,
            &TrainConfig {
                seed: k as u64,
                ..tiny()
            },
        )
        .unwrap();
        assert_eq!(alone.model, serial[k].model);
        assert_eq!(parallel[k].model, serial[k].model);
    }
    let first = |m: &ModelBundle| match m {
        ModelBundle::Tdgru { model, .. } => model.head.w.value.clone(),
        _ => unreachable!(),
    };
    let inits: Vec<_> = (0..3)
        .map(|k| {
            first(&mttdsc::training::init_model(
                Variant::Tdgru,
                16,
                &TrainConfig { seed: k, ..tiny() },
            ))
        })
        .collect();
    assert_ne!(inits[0], inits[1]);
    assert_ne!(inits[1], inits[2]);
}

#[test]
fn checkpoint_files_round_trip_and_evaluate_identically() {
    let c = small_data(3);
    let data = TrainData {
        table: &c.embeddings,
        aux: Some(&c.aux),
        main: Some(&c.main),
        validation: None,
    };
    let ck = train_variant(Variant::Tdft, &data, &tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tdft.json");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.model.checksum(), ck.model.checksum());
    let set = Dataset::Targeted(c.main.clone());
    let a = evaluate(&ck.model, &set, &c.embeddings, Estimate::Discrete).unwrap();
    let b = evaluate(&back.model, &set, &c.embeddings, Estimate::Discrete).unwrap();
    assert_eq!(a, b);
    save_checkpoint(&back, &dir.path().join("again.json")).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(dir.path().join("again.json")).unwrap()
    );
}

#[test]
fn ensemble_mean_examples() {
    let a = ProbabilityTriple::new(0.2, 0.3, 0.5).unwrap();
    let b = ProbabilityTriple::new(0.4, 0.3, 0.3).unwrap();
    let m = ProbabilityTriple::mean(&[a, b]).unwrap();
    for (x, y) in m.as_array().iter().zip([0.3, 0.3, 0.4]) {
        assert!((x - y).abs() < 1e-15);
    }
    assert_eq!(ProbabilityTriple::mean(&[a]).unwrap(), a);
}
