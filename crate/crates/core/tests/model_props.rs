mod common;

use firecl::cube::PatchSet;
use firecl::losses::combined_objective;
use firecl::model::{
    init_params, objective_parts, sgd_step, BatchItem, ContrastiveKind, Gradients, ModelConfig, Objective,
};
use rand::Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        latent_dim: 3,
        dyn_hidden: 4,
        stat_hidden: 3,
        head_hidden: 3,
        modulation: true,
    }
}

/// Triplet batch over a random set: item k uses (k+1, k+2) as its pair.
fn batch_of(set: &PatchSet, n: usize) -> Vec<BatchItem<'_>> {
    (0..n)
        .map(|k| BatchItem {
            anchor: &set.patches[k],
            triplet: Some((&set.patches[(k + 1) % set.len()], &set.patches[(k + 2) % set.len()])),
        })
        .collect()
}

fn check(kind: Option<ContrastiveKind>, instances: usize, seed0: u64) {
    let mut done = 0;
    let mut seed = seed0;
    while done < instances {
        seed += 1;
        let labels: Vec<u8> = (0..6).map(|k| u8::from((seed >> k) & 1 == 1)).collect();
        let set = common::random_patch_set(seed, &labels, 2, 2, 2);
        let params = init_params(&tiny(), common::geometry_of(&set), seed).unwrap();
        let obj = Objective {
            contrastive: kind,
            loss: common::loss_cfg(0.5, 2.0, 0.5),
        };
        let batch = batch_of(&set, 4);
        // inputs too close to a rectifier kink or the hinge are redrawn
        if common::kink_margin(&params, &batch, &obj) < 1e-3 {
            continue;
        }
        let worst = common::gradcheck(&params, &batch, &obj, 1e-5);
        assert!(worst < 1e-4, "seed {seed}: relative error {worst}");
        done += 1;
    }
}

#[test]
fn gradcheck_cross_entropy() {
    check(None, 20, 0);
}

#[test]
fn gradcheck_with_triplet_term() {
    check(Some(ContrastiveKind::Triplet), 20, 1000);
}

#[test]
fn gradcheck_with_scl_term() {
    check(Some(ContrastiveKind::Scl), 20, 2000);
}

#[test]
fn contrastive_gradient_never_reaches_the_head() {
    for seed in 0..10 {
        let labels = [1u8, 0, 1, 0, 1, 0];
        let set = common::random_patch_set(seed, &labels, 2, 2, 2);
        let params = init_params(&tiny(), common::geometry_of(&set), seed).unwrap();
        for kind in [ContrastiveKind::Triplet, ContrastiveKind::Scl] {
            let obj = Objective {
                contrastive: Some(kind),
                loss: common::loss_cfg(5.0, 2.0, 0.1),
            };
            let parts = objective_parts(&params, &batch_of(&set, 6), &obj).unwrap();
            for r in params.layout.head_ranges() {
                assert!(parts.grad_cl.data[r].iter().all(|&g| g == 0.0));
            }
        }
    }
}

#[test]
fn sgd_smoke_loss_decreases() {
    let mut good = 0;
    for seed in 0..5u64 {
        let mut r = common::rng(seed);
        let labels: Vec<u8> = (0..32).map(|_| u8::from(r.random::<bool>())).collect();
        let mut set = common::random_patch_set(seed + 100, &labels, 3, 2, 2);
        // make the label learnable from the first dynamic feature
        for p in set.patches.iter_mut() {
            let s = if p.label == 1 { 1.0 } else { -1.0 };
            p.dyn_data[0] = s + 0.1 * p.dyn_data[0];
        }
        let mut params = init_params(&ModelConfig::default(), common::geometry_of(&set), seed).unwrap();
        let obj = Objective {
            contrastive: Some(ContrastiveKind::Triplet),
            loss: common::loss_cfg(5.0, 2.0, 0.1),
        };
        let batch = batch_of(&set, 32);
        let mut losses = Vec::new();
        for _ in 0..=10 {
            let parts = objective_parts(&params, &batch, &obj).unwrap();
            let c = combined_objective(parts.ce, &parts.grad_ce.data, parts.cl, &parts.grad_cl.data).unwrap();
            losses.push(parts.ce);
            sgd_step(&mut params, &Gradients { data: c.grads }, 1e-2).unwrap();
        }
        if losses.windows(2).all(|w| w[1] < w[0]) {
            good += 1;
        }
    }
    assert!(good >= 4, "loss decreased strictly in only {good} of 5 seeds");
}
