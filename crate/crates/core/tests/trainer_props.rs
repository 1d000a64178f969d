use firecl::config::RunConfig;
use firecl::model::ContrastiveKind;
use firecl::prepared::{prepare, Prepared};
use firecl::samplers::Strategy;
use firecl::synth::{generate_cube, SynthConfig};
use firecl::trainer::{evaluate, train, Protocol, TrainConfig, Trainer};

fn small_prepared() -> Prepared {
    let mut cfg = RunConfig::default();
    cfg.synth = SynthConfig {
        t_len: 24,
        height: 10,
        width: 10,
        n_dyn: 3,
        n_stat: 2,
        threshold: 2.0,
        ..Default::default()
    };
    cfg.patch.hist_len = 3;
    let cube = generate_cube(&cfg.synth).unwrap();
    prepare(&cube, &cfg, &Strategy::ALL).unwrap()
}

fn quick(protocol: Protocol, strategy: Strategy) -> TrainConfig {
    TrainConfig {
        protocol,
        strategy,
        epochs_pre: 3,
        epochs_cl: 3,
        batch_size: 16,
        seed: 4,
        ..Default::default()
    }
}

#[test]
fn identical_inputs_give_identical_runs() {
    std::env::set_var(firecl::TEST_MODE_ENV, "1");
    let p = small_prepared();
    let m = Default::default();
    for (proto, strat) in [(Protocol::Full, Strategy::Curriculum), (Protocol::Finetune, Strategy::Historical)] {
        let a = train(&p.train, Some(&p.val), &m, &quick(proto, strat)).unwrap();
        let b = train(&p.train, Some(&p.val), &m, &quick(proto, strat)).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(
            a.params.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.params.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn finetune_switches_on_the_contrastive_term_at_epochs_pre() {
    let p = small_prepared();
    for (strategy, loss) in [
        (Strategy::Historical, ContrastiveKind::Triplet),
        (Strategy::Label, ContrastiveKind::Scl),
        (Strategy::Curriculum, ContrastiveKind::Triplet),
    ] {
        let cfg = TrainConfig {
            loss,
            ..quick(Protocol::Finetune, strategy)
        };
        let out = train(&p.train, None, &Default::default(), &cfg).unwrap();
        let first = out.history.iter().position(|r| r.cl != 0.0);
        assert_eq!(first, Some(cfg.epochs_pre), "{strategy:?}");
        assert!(out.history[..cfg.epochs_pre].iter().all(|r| r.phase == "ce"));
    }
}

#[test]
fn curriculum_percentile_never_decreases() {
    let p = small_prepared();
    let out = train(&p.train, None, &Default::default(), &quick(Protocol::Full, Strategy::Curriculum)).unwrap();
    let qs: Vec<f64> = out.history.iter().map(|r| r.window_q.unwrap()).collect();
    assert!(qs.windows(2).all(|w| w[1] >= w[0]));
    assert!((qs[0] - 0.1).abs() < 1e-12);
    assert!((qs.last().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn resuming_reproduces_the_remaining_epochs() {
    let p = small_prepared();
    let cfg = quick(Protocol::Finetune, Strategy::Curriculum);
    let trainer = Trainer::new(&p.train, Some(&p.val), &cfg, Some(p.maps.clone())).unwrap();
    let mut whole = trainer.init(&Default::default()).unwrap();
    let all = trainer.run(&mut whole, 0, 6, |_, _| Ok(())).unwrap();
    let mut part = trainer.init(&Default::default()).unwrap();
    let mut rows = trainer.run(&mut part, 0, 4, |_, _| Ok(())).unwrap();
    let mut resumed = part.clone();
    rows.extend(trainer.run(&mut resumed, 4, 6, |_, _| Ok(())).unwrap());
    assert_eq!(rows, all);
    assert_eq!(resumed.data, whole.data);
}

#[test]
fn full_protocol_with_historical_is_rejected() {
    let p = small_prepared();
    let err = train(&p.train, None, &Default::default(), &quick(Protocol::Full, Strategy::Historical)).unwrap_err();
    assert!(err.to_string().contains("protocol=full with strategy=historical"));
}

#[test]
fn evaluation_rejects_empty_sets() {
    let p = small_prepared();
    let out = train(&p.train, None, &Default::default(), &quick(Protocol::CeOnly, Strategy::Label)).unwrap();
    let mut empty = p.test.clone();
    empty.patches.clear();
    assert!(evaluate(&out.params, &empty).is_err());
    assert!(evaluate(&out.params, &p.test).unwrap().auroc.is_some());
}
