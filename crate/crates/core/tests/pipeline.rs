//! End-to-end behaviour through the public API.

use mafgan::constraints::{ConstraintKind, ConstraintSpec};
use mafgan::data::{SyntheticKind, SyntheticSpec};
use mafgan::nn::{DiscriminatorConfig, GeneratorConfig, Module};
use mafgan::objectives::ObjectiveKind;
use mafgan::trainer::{train, RowKind, Schedule, TrainConfig};

fn small(objective: ObjectiveKind, constraint: ConstraintKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        seed: 5,
        epochs,
        batch_size: 32,
        lr: 1e-3,
        objective,
        constraint: ConstraintSpec::of(constraint),
        generator: GeneratorConfig { hidden: 16, ..GeneratorConfig::default() },
        discriminator: DiscriminatorConfig {
            hidden: 16,
            embed_dim: if objective.requires_scalar() { 1 } else { 8 },
            ..DiscriminatorConfig::default()
        },
        schedule: Schedule { metrics_every: 5, eval_samples: 200, confmap_epochs: vec![], ..Schedule::default() },
        ..TrainConfig::default()
    }
}

fn data(kind: SyntheticKind) -> SyntheticSpec {
    SyntheticSpec { count: 512, ..SyntheticSpec::of(kind) }
}

#[test]
fn every_recipe_family_trains_on_both_datasets() {
    for kind in SyntheticKind::ALL {
        for (obj, c) in [
            (ObjectiveKind::Std, ConstraintKind::None),
            (ObjectiveKind::Wgan, ConstraintKind::Clip),
            (ObjectiveKind::Wgan, ConstraintKind::Gp),
            (ObjectiveKind::MafC, ConstraintKind::Tc),
            (ObjectiveKind::MafD, ConstraintKind::Tc),
            (ObjectiveKind::MafE, ConstraintKind::None),
        ] {
            let out = train(&small(obj, c, 3), &data(kind)).unwrap();
            assert!(out.summary.is_complete(), "{obj}/{c} on {kind}: {:?}", out.summary.status);
            let last = out.record.of_kind(RowKind::Metrics).last().unwrap();
            assert!(last.frechet.unwrap().is_finite());
            assert_eq!(last.modes_covered.is_some(), kind == SyntheticKind::GaussianGrid);
        }
    }
}

#[test]
fn clipped_critic_stays_in_the_box() {
    let cfg = small(ObjectiveKind::Wgan, ConstraintKind::Clip, 5);
    let out = train(&cfg, &data(SyntheticKind::Circles)).unwrap();
    let c = cfg.constraint.c;
    assert!(out.discriminator.params().iter().all(|t| t.data().iter().all(|w| w.abs() <= c)));
    for h in &out.histograms {
        assert!(h.lo >= -c && h.hi <= c, "{h:?}");
    }
}

#[test]
fn without_a_constraint_k_is_absorbed_by_adam() {
    // Adam normalizes gradient scale, so K alone (no competing constraint
    // term) barely moves the trajectory: only the eps term feels it.
    let critic_losses = |k: f64| -> Vec<f64> {
        let mut cfg = small(ObjectiveKind::MafE, ConstraintKind::None, 1);
        cfg.constraint.k = k;
        let out = train(&cfg, &data(SyntheticKind::GaussianGrid)).unwrap();
        out.record.of_kind(RowKind::Critic).take(4).map(|r| r.d_loss.unwrap()).collect()
    };
    let (a, b) = (critic_losses(1.0), critic_losses(10.0));
    assert_eq!(a[0], b[0]);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-4 * x.abs().max(1.0), "{a:?} vs {b:?}");
    }
}
