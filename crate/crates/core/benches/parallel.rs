use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mrl3d_core::data::synthetic::synthetic_dataset;
use mrl3d_core::data::{generate_conformer, Molecule2D, MoleculePair};
use mrl3d_core::encoders::Model;
use mrl3d_core::pretrain::{pretrain_step, PretrainConfig};
use mrl3d_core::selfcheck::tiny_encoder;
use mrl3d_core::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn conformers(c: &mut Criterion) {
    let mols: Vec<Molecule2D> = ["c1ccccc1CCO", "CC(=O)Nc1ccccc1", "OC(=O)CCCN", "CCCCCCO", "NCCc1ccccc1", "OCC1CCCCC1", "c1ccc2ccccc2c1", "CC(C)Cc1ccccc1"]
        .iter()
        .map(|s| Molecule2D::from_smiles(s).unwrap())
        .collect();
    let mut group = c.benchmark_group("conformers");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| exec.map(&mols, |i, m| generate_conformer(black_box(m), i as u64).unwrap()))
        });
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let pairs = synthetic_dataset(16, 8, 32, 1, Exec::default()).unwrap();
    let model = Model::new(tiny_encoder(), 1).unwrap();
    let cfg = PretrainConfig::default();
    let mut group = c.benchmark_group("pretrain_step");
    group.sample_size(10);
    for size in [8usize, 32] {
        let batch: Vec<(usize, &MoleculePair)> = pairs.iter().take(size).enumerate().collect();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, size), &batch, |b, batch| {
                b.iter(|| pretrain_step(&model, black_box(batch), &cfg, 0, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, conformers, step);
criterion_main!(benches);
