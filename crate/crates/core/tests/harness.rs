use std::collections::BTreeSet;

use carve_core::carve::{carve_with, Selection};
use carve_core::harness::{
    ablation_grid, run_sweep, write_sweep_csv, AblationAxis, Strategy, SweepSpec,
};
use carve_core::ipgs::{argsort_desc, combined_score};
use carve_core::{make_synthetic_input, CarveConfig, InputSpec, ModelSpec, ToyModel};

fn spec(strategies: Vec<Strategy>, budgets: Vec<usize>, seeds: Vec<u64>) -> SweepSpec {
    SweepSpec {
        model: ModelSpec::default(),
        input: InputSpec {
            visual: 32,
            ..InputSpec::default()
        },
        carve: CarveConfig::default(),
        strategies,
        budgets,
        seeds,
        metric_rank_rel_tol: 1e-2,
    }
}

#[test]
fn none_is_constant_across_budgets() {
    let r = run_sweep(&spec(vec![Strategy::None], vec![4, 8, 16], vec![0, 1])).unwrap();
    for seed in [0, 1] {
        let rows: Vec<_> = r.records.iter().filter(|x| x.seed == seed).collect();
        assert_eq!(rows.len(), 3);
        for x in &rows {
            assert_eq!(x.rank_final, rows[0].rank_final);
            assert_eq!(x.surrogate, 1.0);
            assert_eq!(x.kv_fraction, 1.0);
        }
    }
}

#[test]
fn full_budget_matches_none() {
    let strategies = vec![
        Strategy::Ipgs {
            lambda: 0.5,
            rho: 0.0,
        },
        Strategy::AttentionOnly,
        Strategy::IcsOnly,
        Strategy::Random { seed: 3 },
        Strategy::None,
    ];
    let r = run_sweep(&spec(strategies, vec![32], vec![0, 1, 2])).unwrap();
    let none: Vec<_> = r.records.iter().filter(|x| x.strategy == "none").collect();
    for x in &r.records {
        let base = none.iter().find(|n| n.seed == x.seed).unwrap();
        assert!(
            (x.surrogate - base.surrogate).abs() <= 1e-9,
            "{}",
            x.strategy
        );
        assert_eq!(x.rank_final, base.rank_final, "{}", x.strategy);
    }
}

#[test]
fn infeasible_budgets_are_reported_not_run() {
    let r = run_sweep(&spec(
        vec![Strategy::Ipgs {
            lambda: 0.5,
            rho: 0.5,
        }],
        vec![8, 30],
        vec![0],
    ))
    .unwrap();
    assert_eq!(r.records.len(), 1);
    assert_eq!(r.skipped.len(), 1);
    assert_eq!(r.skipped[0].budget, 30);
}

#[test]
fn sweep_is_deterministic_apart_from_wall_time() {
    let s = spec(
        vec![
            Strategy::Ipgs {
                lambda: 0.5,
                rho: 0.5,
            },
            Strategy::Random { seed: 1 },
        ],
        vec![8, 12],
        vec![0, 1, 2, 3],
    );
    let csv = |r| {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, r, false).unwrap();
        buf
    };
    let a = run_sweep(&s).unwrap();
    let b = run_sweep(&s).unwrap();
    assert_eq!(csv(&a), csv(&b));
    let strip = |r: &carve_core::SweepResult| {
        r.records
            .iter()
            .map(|x| {
                (
                    x.strategy.clone(),
                    x.budget,
                    x.seed,
                    x.rank_final,
                    x.surrogate.to_bits(),
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn lambda_endpoints_reproduce_single_score_strategies() {
    let model = ToyModel::new(ModelSpec::default()).unwrap();
    let base = CarveConfig::default();
    for seed in 0..5 {
        let seq = make_synthetic_input(&InputSpec {
            seed,
            ..InputSpec::default()
        })
        .unwrap();
        let kept = |s: Strategy| {
            let (cfg, sel) = s.carve_config(&base, 16).unwrap();
            carve_with(&seq, &model, &cfg, sel, &BTreeSet::new())
                .unwrap()
                .result
                .kept_visual_indices
        };
        assert_eq!(
            kept(Strategy::Ipgs {
                lambda: 0.0,
                rho: 0.0
            }),
            kept(Strategy::IcsOnly)
        );
        assert_eq!(
            kept(Strategy::Ipgs {
                lambda: 1.0,
                rho: 0.0
            }),
            kept(Strategy::AttentionOnly)
        );
    }
}

#[test]
fn rho_zero_is_pure_pruning() {
    let input = InputSpec::default();
    let carve = CarveConfig::default();
    let rows = ablation_grid(
        &ModelSpec::default(),
        &input,
        &carve,
        AblationAxis::Rho,
        &[0.0],
        &[0, 1],
        1e-2,
    )
    .unwrap();
    let pruned = run_sweep(&SweepSpec {
        model: ModelSpec::default(),
        input,
        carve: carve.clone(),
        strategies: vec![Strategy::Ipgs {
            lambda: carve.lambda,
            rho: 0.0,
        }],
        budgets: vec![carve.target_count],
        seeds: vec![0, 1],
        metric_rank_rel_tol: 1e-2,
    })
    .unwrap();
    for (a, p) in rows.iter().zip(&pruned.records) {
        assert_eq!(a.surrogate, p.surrogate);
        assert_eq!(a.rank_final, p.rank_final);
    }
    assert!(ablation_grid(
        &ModelSpec::default(),
        &InputSpec::default(),
        &carve,
        AblationAxis::Rho,
        &[1.0],
        &[0],
        1e-2
    )
    .is_err());
}

#[test]
fn lambda_grid_agrees_with_recomputed_scores() {
    let model = ToyModel::new(ModelSpec::default()).unwrap();
    let seq = make_synthetic_input(&InputSpec {
        seed: 12,
        ..InputSpec::default()
    })
    .unwrap();
    let base = CarveConfig {
        merge_proportion: 0.0,
        ..CarveConfig::default()
    };
    let reference = carve_with(&seq, &model, &base, Selection::Scored, &BTreeSet::new()).unwrap();
    let report = reference.result.score_report.as_ref().unwrap();
    for step in 0..=10 {
        let lambda = step as f64 / 10.0;
        let cfg = CarveConfig {
            lambda,
            ..base.clone()
        };
        let out = carve_with(&seq, &model, &cfg, Selection::Scored, &BTreeSet::new()).unwrap();
        let recomputed = combined_score(&report.ics, &report.attn_score, lambda).unwrap();
        let mut expected: Vec<usize> = argsort_desc(&recomputed.combined)[..16].to_vec();
        expected.sort_unstable();
        assert_eq!(out.result.kept_visual_indices, expected, "lambda {lambda}");
    }
}
