//! Hot kernels at the main experiment's sizes.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hpo_core::diagnostics::{eig_sym, lambda_off, lambda_tilde};
use hpo_core::objective::dpo_grad;
use hpo_core::{
    gen_offline_dataset, run_hpo, seeded_rng, EvalSet, HpoConfig, LogLinearPolicy, Preset,
};

fn kernels(c: &mut Criterion) {
    let inst = Preset::Main.build_instance(0).unwrap();
    let mut rng = seeded_rng(1);
    let reference = LogLinearPolicy::random_reference(&mut rng, inst.feat_dim());
    let data = gen_offline_dataset(&inst, &reference, Preset::Main.n_off(), &mut rng).unwrap();
    let x = inst.sample_context(&mut rng);

    c.bench_function("features/500x100", |b| {
        b.iter(|| inst.features(black_box(&x)))
    });

    let theta: Vec<f64> = reference.theta.iter().map(|v| v + 0.1).collect();
    let batch = &data.records[..5];
    c.bench_function("dpo_grad/minibatch5", |b| {
        b.iter(|| dpo_grad(black_box(&theta), &reference.theta, &inst, batch, 1.0).unwrap())
    });

    let cfg = HpoConfig {
        t_rounds: 1,
        eval_contexts: 128,
        ..HpoConfig::preset(Preset::Main)
    };
    let eval = EvalSet::new(&inst, &reference, cfg.beta, cfg.eval_contexts, cfg.seed).unwrap();
    let mut seed = 0;
    c.bench_function("hpo/one_round", |b| {
        b.iter_batched(
            || {
                seed += 1;
                seeded_rng(seed)
            },
            |mut r| run_hpo(&inst, &reference, &data, &cfg, &eval, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });

    let lam = lambda_tilde(&lambda_off(&data.records, &inst).unwrap(), 1.0, 500).unwrap();
    c.bench_function("eig_sym/100", |b| {
        b.iter(|| eig_sym(black_box(&lam)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = kernels
}
criterion_main!(benches);
