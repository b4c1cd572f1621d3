mod common;

use std::net::Ipv4Addr;

use log2ns_core::formal::{compile_rules, parse_config, FirewallModel, DEFAULT_RULE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn compile(cfg: &common::OracleConfig) -> FirewallModel {
    compile_rules(
        &parse_config(cfg.to_json().to_string().as_bytes()).expect("generated config parses"),
    )
}

fn rule_name(cfg: &common::OracleConfig, rule: Option<usize>) -> String {
    rule.map_or(DEFAULT_RULE.to_string(), |i| cfg.rules[i].name.clone())
}

fn random_cell(rng: &mut impl Rng) -> common::Cell {
    [
        rng.random_range(0..4),
        rng.random_range(0..4),
        rng.random_range(0..common::NBLOCKS),
        rng.random_range(0..common::NBLOCKS),
        rng.random_range(0..4),
        rng.random_range(0..4),
    ]
}

/// A uniformly drawn packet inside `cell`.
fn interior_packet(rng: &mut impl Rng, cell: &common::Cell) -> log2ns_core::formal::Packet {
    let mut p = common::cell_min_packet(cell);
    let ip = |rng: &mut dyn rand::RngCore, b: usize| {
        let (lo, hi) = common::block_range(b);
        Ipv4Addr::from(rng.random_range(lo..=hi) as u32)
    };
    p.src_ip = ip(rng, cell[2]);
    p.dst_ip = ip(rng, cell[3]);
    let (plo, phi, qlo, qhi) = common::SERVICE_CELLS[cell[5]];
    p.protocol = rng.random_range(plo..=phi) as u8;
    p.dst_port = rng.random_range(qlo..=qhi) as u16;
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn concrete_evaluation_matches_first_match(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = common::random_config(&mut rng);
        let model = compile(&cfg);
        for _ in 0..200 {
            let cell = random_cell(&mut rng);
            let p = interior_packet(&mut rng, &cell);
            prop_assert_eq!(common::cell_of(&p), cell);
            let (rule, action) = cfg.evaluate(&cell);
            let v = model.evaluate_packet(&p).unwrap();
            prop_assert_eq!(v.action, action);
            prop_assert_eq!(v.matched_rule, rule_name(&cfg, rule));
        }
    }

    #[test]
    fn effective_regions_are_disjoint_and_agree_with_the_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = common::random_config(&mut rng);
        let model = compile(&cfg);
        for _ in 0..100 {
            let cell = random_cell(&mut rng);
            let point = model.point(&interior_packet(&mut rng, &cell)).unwrap();
            let owners: Vec<usize> = model
                .rules()
                .iter()
                .enumerate()
                .filter(|(_, r)| r.region().iter().any(|b| b.contains(&point)))
                .map(|(i, _)| i)
                .collect();
            let in_default = model.default_region().iter().any(|b| b.contains(&point));
            let (rule, _) = cfg.evaluate(&cell);
            match rule {
                Some(i) => prop_assert!(owners == vec![i] && !in_default, "owners {:?}", owners),
                None => prop_assert!(owners.is_empty() && in_default, "owners {:?}", owners),
            }
        }
    }
}
