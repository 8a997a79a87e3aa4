mod common;

use fssl_core::augment::AugmentConfig;
use fssl_core::federation::{
    aggregate_average, csfssl_round, csfssl_run, cssl_run, ppfssl_run, Client, FederationConfig, Topology,
};
use fssl_core::model::build_encoder;
use fssl_core::ssl::{ssl_train, SslConfig, SslLearner};
use fssl_core::Execution;

const SIZE: usize = 16;

fn ssl(seed: u64) -> SslConfig {
    SslConfig {
        batch_half: 4,
        max_epochs: 5,
        patience: 5,
        seed,
        ..SslConfig::default()
    }
}

fn fed(seed: u64, topology: Topology, rounds: usize) -> FederationConfig {
    FederationConfig {
        rounds: Some(rounds),
        topology,
        seed,
        ..FederationConfig::default()
    }
}

#[test]
fn single_client_round_is_one_centralized_epoch() {
    let train = common::images(16, SIZE, 1);
    let valid = common::images(8, SIZE, 2);
    let model = build_encoder(&common::backbone(SIZE, 3)).unwrap();
    let aug = AugmentConfig::default();
    let cfg = ssl(4);

    let mut learner = SslLearner::new(model.clone(), &cfg);
    learner.train_epoch(&train, &cfg, &aug, 0, 0).unwrap();

    let mut clients = vec![Client::new(0, train, valid).unwrap()];
    let (server, losses) = csfssl_round(&model, &mut clients, &fed(4, Topology::ClientServer, 1), &cfg, &aug).unwrap();
    assert_eq!(losses.len(), 1);
    assert!(server.bit_eq(&learner.model));
}

#[test]
fn single_client_schedules_match_centralized_training() {
    let train = common::images(16, SIZE, 5);
    let valid = common::images(8, SIZE, 6);
    let model = build_encoder(&common::backbone(SIZE, 7)).unwrap();
    let aug = AugmentConfig::default();
    let cfg = ssl(8);
    let central = ssl_train(model.clone(), &train, &valid, &cfg, &aug).unwrap();

    let mut clients = vec![Client::new(0, train.clone(), valid.clone()).unwrap()];
    let cs = csfssl_run(model.clone(), &mut clients, &fed(8, Topology::ClientServer, 5), &cfg, &aug).unwrap();
    assert!(cs.last.bit_eq(&central.last));
    assert!(cs.model.bit_eq(&central.best));
    assert_eq!(cs.best_round, Some(central.best_epoch));
    for (rec, hist) in cs.log[1..].iter().zip(&central.history) {
        assert_eq!(rec.server_valid_loss, hist.valid_loss);
        assert_eq!(rec.local_loss, Some(hist.train_loss));
    }

    let mut clients = vec![Client::new(0, train, valid).unwrap()];
    let pp = ppfssl_run(model, &mut clients, &fed(8, Topology::PeerToPeer, 5), &cfg, &aug).unwrap();
    assert!(pp.model.bit_eq(&central.last));
    assert_eq!(pp.rounds_ran, 5);
}

#[test]
fn identical_clients_aggregate_to_either_update() {
    let train = common::images(16, SIZE, 9);
    let valid = common::images(8, SIZE, 10);
    let model = build_encoder(&common::backbone(SIZE, 11)).unwrap();
    let aug = AugmentConfig::default();
    let cfg = ssl(12);
    let mut clients = vec![
        Client::new(0, train.clone(), valid.clone()).unwrap(),
        Client::new(0, train.clone(), valid.clone()).unwrap(),
    ];
    let (server, _) = csfssl_round(&model, &mut clients, &fed(12, Topology::ClientServer, 1), &cfg, &aug).unwrap();
    let mut alone = Client::new(0, train, valid).unwrap();
    let (single, _) = alone.local_train(model, 1, &cfg, &aug, 12).unwrap();
    assert!(server.max_abs_diff(&single).unwrap() <= 1e-15);
}

#[test]
fn zero_learning_rate_keeps_server_model() {
    let model = build_encoder(&common::backbone(SIZE, 13)).unwrap();
    let cfg = SslConfig { lr: 0.0, ..ssl(14) };
    let mut clients = vec![
        Client::new(0, common::images(8, SIZE, 15), common::images(4, SIZE, 16)).unwrap(),
        Client::new(1, common::images(8, SIZE, 17), common::images(4, SIZE, 18)).unwrap(),
    ];
    let aug = AugmentConfig::default();
    let (server, _) = csfssl_round(&model, &mut clients, &fed(14, Topology::ClientServer, 1), &cfg, &aug).unwrap();
    assert!(server.max_abs_diff(&model).unwrap() <= 1e-15);
}

#[test]
fn ring_order_matters() {
    let model = build_encoder(&common::backbone(SIZE, 19)).unwrap();
    let cfg = ssl(20);
    let aug = AugmentConfig::default();
    let make = || {
        vec![
            Client::new(0, common::images(8, SIZE, 21), common::images(4, SIZE, 22)).unwrap(),
            Client::new(1, common::images(8, SIZE, 23), common::images(4, SIZE, 24)).unwrap(),
        ]
    };
    let mut from0 = fed(20, Topology::PeerToPeer, 2);
    let a = ppfssl_run(model.clone(), &mut make(), &from0, &cfg, &aug).unwrap();
    from0.start_client = 1;
    let b = ppfssl_run(model.clone(), &mut make(), &from0, &cfg, &aug).unwrap();
    assert!(a.model.max_abs_diff(&b.model).unwrap() > 0.0);
    assert_eq!(a.log.iter().map(|r| r.client_id).collect::<Vec<_>>(), [Some(0), Some(1), Some(0), Some(1)]);
    assert_eq!(b.log[0].client_id, Some(1));

    let again = ppfssl_run(model, &mut make(), &from0, &cfg, &aug).unwrap();
    assert!(again.model.bit_eq(&b.model));
}

#[test]
fn client_server_improves_validation_loss() {
    let aug = AugmentConfig::default();
    let mut wins = 0;
    for seed in 0..5 {
        let model = build_encoder(&common::backbone(SIZE, seed)).unwrap();
        let cfg = SslConfig {
            batch_half: 8,
            ..ssl(seed)
        };
        let mut clients = vec![
            Client::new(0, common::images(32, SIZE, 100 + seed), common::images(16, SIZE, 200 + seed)).unwrap(),
            Client::new(1, common::images(32, SIZE, 300 + seed), common::images(16, SIZE, 400 + seed)).unwrap(),
        ];
        let out = csfssl_run(model, &mut clients, &fed(seed, Topology::ClientServer, 10), &cfg, &aug).unwrap();
        let initial = out.log[0].server_valid_loss;
        let best = out.log[1..].iter().map(|r| r.server_valid_loss).fold(f64::INFINITY, f64::min);
        wins += (best < initial) as usize;
    }
    assert!(wins >= 3, "{wins}/5");
}

#[test]
fn parallel_clients_match_sequential() {
    let model = build_encoder(&common::backbone(SIZE, 30)).unwrap();
    let cfg = ssl(31);
    let aug = AugmentConfig::default();
    let make = || {
        vec![
            Client::new(0, common::images(8, SIZE, 32), common::images(4, SIZE, 33)).unwrap(),
            Client::new(1, common::images(12, SIZE, 34), common::images(4, SIZE, 35)).unwrap(),
        ]
    };
    let mut f = fed(31, Topology::ClientServer, 2);
    f.execution = Execution::Sequential;
    let a = csfssl_run(model.clone(), &mut make(), &f, &cfg, &aug).unwrap();
    f.execution = Execution::Parallel;
    let b = csfssl_run(model, &mut make(), &f, &cfg, &aug).unwrap();
    assert!(a.model.bit_eq(&b.model));
    assert_eq!(a.log, b.log);
}

#[test]
fn cssl_single_site_is_plain_training() {
    let train = common::images(16, SIZE, 40);
    let valid = common::images(8, SIZE, 41);
    let model = build_encoder(&common::backbone(SIZE, 42)).unwrap();
    let cfg = SslConfig { max_epochs: 2, ..ssl(43) };
    let aug = AugmentConfig::default();
    let pooled = cssl_run(model.clone(), &[(&train, &valid)], &cfg, &aug).unwrap();
    let plain = ssl_train(model, &train, &valid, &cfg, &aug).unwrap();
    assert!(pooled.best.bit_eq(&plain.best));
}

#[test]
fn aggregation_is_linear_in_each_input() {
    let a = build_encoder(&common::backbone(SIZE, 50)).unwrap();
    let b = build_encoder(&common::backbone(SIZE, 51)).unwrap();
    let c = build_encoder(&common::backbone(SIZE, 52)).unwrap();
    // avg(a, (b + c)/2) == (avg(a, b) + avg(a, c)) / 2
    let bc = aggregate_average(&[b.clone(), c.clone()], None).unwrap();
    let lhs = aggregate_average(&[a.clone(), bc], None).unwrap();
    let ab = aggregate_average(&[a.clone(), b], None).unwrap();
    let ac = aggregate_average(&[a.clone(), c], None).unwrap();
    let rhs = aggregate_average(&[ab, ac], None).unwrap();
    assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-15);
    let same = aggregate_average(&[a.clone(), a.clone(), a.clone()], None).unwrap();
    assert!(same.max_abs_diff(&a).unwrap() <= 1e-15);
}
