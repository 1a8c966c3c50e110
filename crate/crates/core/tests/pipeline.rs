use distvote::attacks::AttackKind;
use distvote::data::{gen_dataset, ground_truth_abstract, partition_noniid};
use distvote::ddig::{infer_update, inference_accuracy};
use distvote::model::local_train;
use distvote::sim::{build_environment, run_experiment, write_outputs, AggregatorKind, SimConfig, TRUST_HEADER};
use distvote::{BetaMode, DdigConfig, ModelParams, ModelUpdate, TrainSpec};

fn small(extra: &str) -> SimConfig {
    SimConfig::from_text(&format!(
        "clients=10\nmalicious=0,1\nshards=50\nsamples_per_class=100\ntest_per_class=30\nrounds=4\nselection_ratio=0.5\npoison_pool=60\npoison_count=30\nasr_base=50\n{extra}"
    ))
    .unwrap()
}

#[test]
fn two_class_clients_are_inferred_exactly() {
    // Fully skewed partition: every client holds two classes.
    let data = gen_dataset(10, 32, 40, 3).unwrap();
    let clients = partition_noniid(&data, 10, 1.0, 20, 3).unwrap();
    let truth = ground_truth_abstract(&clients, 0).unwrap();
    let model = ModelParams::init(&[32, 64, 10], 3).unwrap();
    let spec = TrainSpec {
        epochs: 5,
        lr: 0.05,
        batch_size: 10,
    };
    let cfg = DdigConfig {
        beta: BetaMode::Mean,
        lr: spec.lr,
    };
    let mut cols = Vec::new();
    for (j, c) in clients.iter().enumerate() {
        let delta = local_train(&model, c, &spec, j as u64).unwrap();
        let u = ModelUpdate::new(j, 0, delta, model.dim()).unwrap();
        let (ind, col) = infer_update(&u, model.shapes(), &cfg).unwrap();
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| ind.u[b].total_cmp(&ind.u[a]));
        let mut top: Vec<usize> = order[..truth.matrix.col_sum(j)].to_vec();
        top.sort();
        let held: Vec<usize> = (0..10).filter(|&i| truth.matrix.get(i, j)).collect();
        assert_eq!(top, held, "client {j}");
        cols.push(col);
    }
    let inferred = distvote::BinaryMatrix::from_columns(10, &cols).unwrap();
    assert!(inference_accuracy(&truth.matrix, &inferred).unwrap() >= 0.9);
}

#[test]
fn every_aggregator_and_attack_runs() {
    for agg in AggregatorKind::ALL {
        for atk in ["none", "basic", "alternate", "dba", "sybil", "adaptive"] {
            let mut cfg = small(&format!("attack={atk}\nbyzantine_f=1\n"));
            cfg.aggregator = agg;
            let run = run_experiment(&cfg).unwrap_or_else(|e| panic!("{} / {atk}: {e}", agg.name()));
            assert_eq!(run.records.len(), 4);
            assert!(run.records.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
            let voting = agg == AggregatorKind::ClusteredVote;
            assert_eq!(run.records.iter().all(|r| !r.trust.is_empty()), voting);
            assert_eq!(run.summary.attack, atk);
        }
    }
}

#[test]
fn environment_matches_the_configuration() {
    let cfg = small("");
    let env = build_environment(&cfg).unwrap();
    assert_eq!(env.clients.len(), 10);
    assert!(env.clients.iter().all(|c| c.len() == 100));
    assert_eq!(env.aux.len(), cfg.aux_size);
    let aux_classes: std::collections::BTreeSet<usize> = env.aux.labels().iter().copied().collect();
    assert_eq!(aux_classes.len(), 3);
    assert!(env.pool.labels().iter().all(|&l| l != cfg.target_label));
    assert!(env.asr_base.iter().all(|&i| env.test.labels()[i] != cfg.target_label));
}

#[test]
fn malicious_clients_lose_trust_under_a_basic_attack() {
    let cfg = small("attack=basic\nrounds=12\n");
    assert_eq!(cfg.attack, Some(AttackKind::Basic));
    let run = run_experiment(&cfg).unwrap();
    let s = &run.summary;
    assert!(s.mean_malicious_trust.unwrap() < s.mean_honest_trust.unwrap());
}

#[test]
fn trust_trace_has_one_row_per_selected_client() {
    let run = run_experiment(&small("attack=dba\n")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_outputs(&run, dir.path()).unwrap();
    let trust = std::fs::read_to_string(paths.trust).unwrap();
    let mut lines = trust.lines();
    assert_eq!(lines.next(), Some(TRUST_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4 * 5);
    for round in 0..4 {
        let sum: f64 = rows
            .iter()
            .filter(|r| r[0] == round.to_string())
            .map(|r| r[4].parse::<f64>().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}
