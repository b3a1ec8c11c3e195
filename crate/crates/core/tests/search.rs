mod common;

use common::*;
use omnisparse::io::Dataset;
use omnisparse::search::{
    brute_force_front, brute_force_front_with, evolutionary_search, evolutionary_search_with, select_for_constraint,
    ParetoFront, SearchParams,
};
use omnisparse::sparsity::{ArchSizes, LayerSize, SearchSpace};
use omnisparse::tensor::AdamConfig;
use omnisparse::trainer::{train, ModelArch, PruneCriterion, SupernetModel, TrainMode};
use omnisparse::Error;

fn trained(layers: usize, steps: u64) -> (SupernetModel, Dataset, SearchSpace) {
    let arch = ModelArch {
        layers,
        ..SMALL_ARCH
    };
    let (data, val) = small_data(11);
    let space = SearchSpace::with_default_ratios(layers).unwrap();
    let model = SupernetModel::new(arch, AdamConfig::with_lr(5e-3), PruneCriterion::Adam, 1).unwrap();
    let (model, _) = train(model, &data, &space, &small_cfg(TrainMode::Supernet, steps), None).unwrap();
    (model, val, space)
}

fn same_front(a: &ParetoFront, b: &ParetoFront) -> bool {
    a.members() == b.members()
}

#[test]
fn exhaustive_budget_matches_brute_force() {
    let (model, val, space) = trained(3, 150);
    let truth = brute_force_front(&model, &space, &val).unwrap();
    let params = SearchParams {
        exhaustive_init: true,
        ..SearchParams::default()
    };
    let got = evolutionary_search(&model, &space, &val, 64, &params).unwrap();
    assert!(same_front(&got, &truth));
    assert_eq!(got.log().len(), 64);
}

#[test]
fn large_budget_over_four_layers_matches_brute_force() {
    let (model, val, space) = trained(4, 150);
    let truth = brute_force_front(&model, &space, &val).unwrap();
    let got = evolutionary_search(&model, &space, &val, 600, &SearchParams::default()).unwrap();
    assert_eq!(got.log().len(), 256);
    assert!(same_front(&got, &truth));
}

#[test]
fn front_is_a_staircase() {
    let (model, val, space) = trained(3, 150);
    let front = evolutionary_search(&model, &space, &val, 50, &SearchParams::default()).unwrap();
    for w in front.members().windows(2) {
        assert!(w[0].size_bytes < w[1].size_bytes);
        assert!(w[0].val_loss > w[1].val_loss);
    }
}

fn toy_arch(layers: usize) -> ArchSizes {
    ArchSizes::new(
        vec![
            LayerSize {
                rows: 8,
                cols: 10,
                prunable: true
            };
            layers
        ],
        0,
        1,
    )
    .unwrap()
}

#[test]
fn one_layer_front_by_hand() {
    // Loss falls with density, so every config is on the front.
    let space = SearchSpace::with_default_ratios(1).unwrap();
    let arch = toy_arch(1);
    let front = brute_force_front_with(|c| Ok(c.ratios()[0]), &space, &arch).unwrap();
    let sizes: Vec<u64> = front.members().iter().map(|c| c.size_bytes).collect();
    assert_eq!(sizes, [16, 24, 32, 40]);

    // A loss that rises with density leaves only the sparsest.
    let front = brute_force_front_with(|c| Ok(1.0 - c.ratios()[0]), &space, &arch).unwrap();
    assert_eq!(front.len(), 1);
    assert_eq!(front.members()[0].config.ratios(), &[0.8]);
}

#[test]
fn two_layer_front_by_hand() {
    let space = SearchSpace::new(2, vec![0.0, 0.5, 0.8]).unwrap();
    let arch = toy_arch(2);
    // Layer 1 matters, layer 0 does not: [0.8, 0.5] beats [0.5, 0.5] at a
    // smaller size; [0.8, 0.8] is the smallest.
    let loss = |c: &omnisparse::sparsity::SparsityConfig| Ok(c.ratios()[1] + 0.001 * c.ratios()[0]);
    let front = brute_force_front_with(loss, &space, &arch).unwrap();
    let configs: Vec<String> = front.members().iter().map(|c| c.config.to_string()).collect();
    assert_eq!(configs, ["0.8;0.8", "0.8;0.5", "0.5;0.5"]);
}

#[test]
fn hypervolume_grows_with_budget() {
    let space = SearchSpace::with_default_ratios(6).unwrap();
    let arch = toy_arch(6);
    let loss = |c: &omnisparse::sparsity::SparsityConfig| {
        let r = c.ratios();
        Ok(r.iter().enumerate().map(|(i, s)| (i as f64 + 1.0) * s * s).sum::<f64>())
    };
    let full = evolutionary_search_with(loss, &space, &arch, 2000, &SearchParams::default()).unwrap();
    let (rl, rs) = full.log_reference();
    let mut last = 0.0;
    let mut prev_log = Vec::new();
    for budget in [40, 80, 200, 600, 2000] {
        let f = evolutionary_search_with(loss, &space, &arch, budget, &SearchParams::default()).unwrap();
        assert_eq!(f.log().len(), budget);
        assert_eq!(&f.log()[..prev_log.len()], &prev_log[..]);
        let hv = f.hypervolume(rl, rs);
        assert!(hv >= last, "budget {budget}: {hv} < {last}");
        last = hv;
        prev_log = f.log().to_vec();
    }
}

#[test]
fn search_does_not_touch_the_model() {
    let (model, val, space) = trained(3, 100);
    let digest = model.state_digest();
    evolutionary_search(&model, &space, &val, 40, &SearchParams::default()).unwrap();
    brute_force_front(&model, &space, &val).unwrap();
    assert_eq!(model.state_digest(), digest);
}

#[test]
fn search_is_deterministic_per_seed() {
    let (model, val, space) = trained(3, 100);
    let run = |seed| {
        let p = SearchParams {
            seed,
            ..SearchParams::default()
        };
        evolutionary_search(&model, &space, &val, 45, &p).unwrap()
    };
    let (a, b) = (run(4), run(4));
    assert_eq!(a.log(), b.log());
    assert!(same_front(&a, &b));
}

#[test]
fn constraint_selection_on_a_real_front() {
    let (model, val, space) = trained(3, 100);
    let front = brute_force_front(&model, &space, &val).unwrap();
    let smallest = front.members()[0].size_bytes;
    let largest = front.members().last().unwrap().size_bytes;
    assert_eq!(select_for_constraint(&front, largest).unwrap(), front.members().last().unwrap());
    assert_eq!(select_for_constraint(&front, smallest).unwrap().size_bytes, smallest);
    assert!(matches!(
        select_for_constraint(&front, smallest - 1),
        Err(Error::Infeasible { min_size, .. }) if min_size == smallest
    ));
}

#[test]
fn brute_force_refuses_huge_spaces() {
    let space = SearchSpace::with_default_ratios(9).unwrap();
    let r = brute_force_front_with(|_| Ok(0.0), &space, &toy_arch(9));
    assert!(matches!(r, Err(Error::SpaceTooLarge { .. })));
}
